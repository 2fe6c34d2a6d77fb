"""Single-driver pickup-and-delivery environment on a grid.

Orders arrive stochastically at restaurant locations and must be
accepted, picked up, and delivered within a time window. The driver
moves one Manhattan cell per step, pays a per-step time cost plus a
per-cell movement cost, earns each order's value in three equal parts
(accept, pickup, delivery), and is fined when an order it committed to
expires. Open orders the driver ignores can time out on their own, at
no cost.

The action space is flat and fixed-size so learned policies see a
static interface: per order slot one Accept, one Pickup, and one
Deliver action, then one GoTo action per restaurant, then Wait.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import ConfigError, EnvStep, Environment, InfeasibleActionError

__all__ = [
    "CityConfig",
    "Order",
    "VrpState",
    "VrpEnv",
    "PRESETS",
    "preset",
    "with_hot_zones",
    "sample_order_value",
    "manhattan",
]

OPEN, ACCEPTED, PICKED_UP, DELIVERED, EXPIRED = (
    "open", "accepted", "picked_up", "delivered", "expired")


@dataclass(frozen=True)
class CityConfig:
    map_size: tuple[int, int] = (5, 5)
    n_pickup: int = 2
    max_orders: int = 5
    zone_probs: tuple[float, ...] = (0.5, 0.3, 0.1, 0.1)
    zone_value_ranges: tuple[tuple[float, float], ...] = (
        (8.0, 12.0), (5.0, 8.0), (2.0, 5.0), (1.0, 3.0))
    order_prob: float = 0.9
    timeout_prob: float = 0.15
    time_window: int = 60
    capacity: int = 4
    time_cost: float = 0.1
    move_cost: float = 0.1
    failure_penalty: float = 50.0
    episode_len: int = 1000
    name: str = "custom"

    def __post_init__(self):
        x, y = self.map_size
        if x < 1 or y < 1:
            raise ConfigError("map_size must be positive in both dimensions")
        if self.n_pickup < 1:
            raise ConfigError("need at least one pickup location")
        if self.n_pickup + 1 > x * y:
            raise ConfigError("grid too small for the pickup locations plus the driver")
        if self.max_orders < 1:
            raise ConfigError("max_orders must be at least 1")
        if len(self.zone_probs) != len(self.zone_value_ranges) or not self.zone_probs:
            raise ConfigError("zone_probs and zone_value_ranges must align and be non-empty")
        if any(p < 0 for p in self.zone_probs) or abs(sum(self.zone_probs) - 1.0) > 1e-9:
            raise ConfigError("zone_probs must be non-negative and sum to 1")
        if any(lo >= hi for lo, hi in self.zone_value_ranges):
            raise ConfigError("zone value ranges must have min < max")
        if not 0.0 <= self.order_prob <= 1.0 or not 0.0 <= self.timeout_prob <= 1.0:
            raise ConfigError("order_prob and timeout_prob must be probabilities")
        if self.time_window < 1 or self.capacity < 1 or self.episode_len < 1:
            raise ConfigError("time_window, capacity, and episode_len must be positive")
        if min(self.time_cost, self.move_cost, self.failure_penalty) < 0:
            raise ConfigError("costs must be non-negative")

    def build(self) -> "VrpEnv":
        return VrpEnv(self)


def _scenarios() -> dict[str, CityConfig]:
    out = {}
    for size in (5, 8):
        for n_pickup in (2, 3):
            for max_orders in (5, 10):
                name = f"{size}x{size}-{n_pickup}p-{max_orders}o"
                out[name] = CityConfig(map_size=(size, size), n_pickup=n_pickup,
                                       max_orders=max_orders, name=name)
    return out


PRESETS: dict[str, CityConfig] = _scenarios()

HOT_ZONE_PROBS = (0.1, 0.5, 0.3, 0.1)


def preset(name: str) -> CityConfig:
    try:
        return PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown delivery scenario '{name}'; "
                          f"choose from {sorted(PRESETS)}") from None


def with_hot_zones(config: CityConfig) -> CityConfig:
    """The same city with the shifted order-zone mix used for
    generalization runs."""
    import dataclasses
    return dataclasses.replace(config, zone_probs=HOT_ZONE_PROBS,
                               name=config.name + "-hot")


@dataclass
class Order:
    id: int
    pickup: tuple[int, int]
    delivery: tuple[int, int]
    value: float
    status: str
    elapsed: int


@dataclass
class VrpState:
    pickups: list[tuple[int, int]]
    driver: tuple[int, int]
    capacity: int
    orders: list[Order | None]
    t: int


def manhattan(a: tuple[int, int], b: tuple[int, int]) -> int:
    return abs(a[0] - b[0]) + abs(a[1] - b[1])


def _step_toward(pos: tuple[int, int], target: tuple[int, int]) -> tuple[int, int]:
    # one cell along a shortest path, x axis first
    x, y = pos
    tx, ty = target
    if x != tx:
        return (x + 1 if tx > x else x - 1, y)
    if y != ty:
        return (x, y + 1 if ty > y else y - 1)
    return pos


def sample_order_value(zone_range: tuple[float, float], rng: np.random.Generator) -> float:
    """Normal draw centered on the range midpoint with sigma a quarter of
    the span, redrawn until it lands inside the range."""
    lo, hi = zone_range
    mean = (lo + hi) / 2.0
    sigma = (hi - lo) / 4.0
    while True:
        v = rng.normal(mean, sigma)
        if lo <= v <= hi:
            return float(v)


class VrpEnv(Environment):
    """See the module docstring for dynamics; per-step event order is
    action, open-order timeouts, clock advance for pre-existing orders,
    window-breach penalties, then a possible new arrival."""

    def __init__(self, config: CityConfig):
        self.config = config
        self.env_id = f"vrp:{config.name}"
        p = np.asarray(config.zone_probs, dtype=np.float64)
        self._zone_p = p / p.sum()
        self._state: VrpState | None = None
        self._rng: np.random.Generator | None = None
        self._next_id = 0
        self.total_breaches = 0

    @property
    def action_size(self) -> int:
        return 3 * self.config.max_orders + self.config.n_pickup + 1

    @property
    def observation_size(self) -> int:
        return 4 + 2 * self.config.n_pickup + 9 * self.config.max_orders

    @property
    def state(self) -> VrpState:
        return self._state

    def reset(self, rng: np.random.Generator) -> EnvStep:
        cfg = self.config
        self._rng = rng
        x, y = cfg.map_size
        cells = rng.choice(x * y, size=cfg.n_pickup + 1, replace=False)
        spots = [(int(c) % x, int(c) // x) for c in cells]
        self._state = VrpState(pickups=spots[:-1], driver=spots[-1],
                               capacity=cfg.capacity,
                               orders=[None] * cfg.max_orders, t=0)
        self._next_id = 0
        self.total_breaches = 0
        return EnvStep(0.0, False, self._mask(), self.observe)

    def _mask(self) -> list[bool]:
        cfg = self.config
        st = self._state
        m = cfg.max_orders
        mask = [False] * self.action_size
        for i, order in enumerate(st.orders):
            if order is None:
                continue
            if order.status == OPEN:
                mask[i] = True
            elif order.status == ACCEPTED and st.capacity > 0:
                mask[m + i] = True
            elif order.status == PICKED_UP:
                mask[2 * m + i] = True
        for j in range(cfg.n_pickup):
            mask[3 * m + j] = True
        mask[3 * m + cfg.n_pickup] = True
        return mask

    def step(self, action) -> EnvStep:
        cfg = self.config
        st = self._state
        rng = self._rng
        a = int(action)
        m = cfg.max_orders
        credits = 0.0
        moved = 0

        if not 0 <= a < self.action_size:
            raise InfeasibleActionError(f"action {a} out of range")
        if a < 3 * m:
            slot = a % m
            order = st.orders[slot]
            kind = a // m
            if order is None:
                raise InfeasibleActionError(f"action {a} targets an empty order slot")
            if kind == 0:
                if order.status != OPEN:
                    raise InfeasibleActionError(f"order {order.id} is not open")
                order.status = ACCEPTED
                credits += order.value / 3.0
            elif kind == 1:
                if order.status != ACCEPTED:
                    raise InfeasibleActionError(f"order {order.id} is not accepted")
                if st.capacity <= 0:
                    raise InfeasibleActionError("no remaining capacity to pick up")
                if st.driver != order.pickup:
                    st.driver = _step_toward(st.driver, order.pickup)
                    moved = 1
                if st.driver == order.pickup:
                    order.status = PICKED_UP
                    st.capacity -= 1
                    credits += order.value / 3.0
            elif kind == 2:
                if order.status != PICKED_UP:
                    raise InfeasibleActionError(f"order {order.id} is not in transit")
                if st.driver != order.delivery:
                    st.driver = _step_toward(st.driver, order.delivery)
                    moved = 1
                if st.driver == order.delivery:
                    order.status = DELIVERED
                    st.capacity += 1
                    # the closing credit tops the total up to the exact value
                    credits += order.value - 2.0 * (order.value / 3.0)
                    st.orders[slot] = None
        elif a < 3 * m + cfg.n_pickup:
            target = st.pickups[a - 3 * m]
            if st.driver != target:
                st.driver = _step_toward(st.driver, target)
                moved = 1
        # else: wait, nothing to do

        # ignored open orders may silently time out
        for i, order in enumerate(st.orders):
            if order is not None and order.status == OPEN:
                if rng.random() < cfg.timeout_prob:
                    st.orders[i] = None

        breaches = 0
        for i, order in enumerate(st.orders):
            if order is None:
                continue
            order.elapsed += 1
            if order.elapsed > cfg.time_window and order.status in (ACCEPTED, PICKED_UP):
                if order.status == PICKED_UP:
                    st.capacity += 1
                breaches += 1
                st.orders[i] = None
        self.total_breaches += breaches

        if rng.random() < cfg.order_prob:
            slot = next((i for i, o in enumerate(st.orders) if o is None), None)
            if slot is not None:
                zone = int(rng.choice(len(cfg.zone_probs), p=self._zone_p))
                pickup = st.pickups[int(rng.integers(cfg.n_pickup))]
                x, y = cfg.map_size
                delivery = (int(rng.integers(x)), int(rng.integers(y)))
                value = sample_order_value(cfg.zone_value_ranges[zone], rng)
                st.orders[slot] = Order(self._next_id, pickup, delivery, value, OPEN, 0)
                self._next_id += 1

        reward = (credits - cfg.time_cost - cfg.move_cost * moved
                  - cfg.failure_penalty * breaches)
        st.t += 1
        return EnvStep(float(reward), st.t >= cfg.episode_len, self._mask(), self.observe)

    def observe(self) -> np.ndarray:
        cfg = self.config
        st = self._state
        x, y = cfg.map_size
        vmax = max(hi for _, hi in cfg.zone_value_ranges)
        obs = np.zeros(self.observation_size, dtype=np.float64)
        obs[0] = st.driver[0] / x
        obs[1] = st.driver[1] / y
        obs[2] = st.capacity / cfg.capacity
        obs[3] = st.t / cfg.episode_len
        base = 4
        for j, (px, py) in enumerate(st.pickups):
            obs[base + 2 * j] = px / x
            obs[base + 2 * j + 1] = py / y
        base += 2 * cfg.n_pickup
        for i, order in enumerate(st.orders):
            if order is None:
                continue
            off = base + 9 * i
            status_idx = {OPEN: 0, ACCEPTED: 1, PICKED_UP: 2}[order.status]
            obs[off + status_idx] = 1.0
            obs[off + 3] = order.pickup[0] / x
            obs[off + 4] = order.pickup[1] / y
            obs[off + 5] = order.delivery[0] / x
            obs[off + 6] = order.delivery[1] / y
            obs[off + 7] = order.value / vmax
            obs[off + 8] = order.elapsed / cfg.time_window
        return obs
