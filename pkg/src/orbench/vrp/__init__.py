"""Pickup-and-delivery environment and its exact-routing baseline."""

from .env import (
    ACCEPTED,
    DELIVERED,
    EXPIRED,
    HOT_ZONE_PROBS,
    OPEN,
    PICKED_UP,
    PRESETS,
    CityConfig,
    Order,
    VrpEnv,
    VrpState,
    manhattan,
    preset,
    sample_order_value,
    with_hot_zones,
)
from .mip import (
    MipControllerPolicy,
    MipInstance,
    MipSolution,
    build_instance,
    dump_instance,
    exhaustive_oracle,
    load_instance,
    objective_of,
    solve,
)

__all__ = [
    "ACCEPTED",
    "DELIVERED",
    "EXPIRED",
    "HOT_ZONE_PROBS",
    "OPEN",
    "PICKED_UP",
    "PRESETS",
    "CityConfig",
    "Order",
    "VrpEnv",
    "VrpState",
    "manhattan",
    "preset",
    "sample_order_value",
    "with_hot_zones",
    "MipControllerPolicy",
    "MipInstance",
    "MipSolution",
    "build_instance",
    "dump_instance",
    "exhaustive_oracle",
    "load_instance",
    "objective_of",
    "solve",
]
