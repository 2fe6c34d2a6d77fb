"""Delivery environment: masks, credit shaping, capacity, movement, and
the per-step event order."""

from __future__ import annotations

import numpy as np
import pytest

from orbench.core import ConfigError, InfeasibleActionError, RngStream
from orbench.vrp import (
    ACCEPTED,
    HOT_ZONE_PROBS,
    OPEN,
    PICKED_UP,
    PRESETS,
    CityConfig,
    Order,
    VrpEnv,
    preset,
    sample_order_value,
    with_hot_zones,
)


def quiet_env(**overrides):
    """Deterministic 5x5 city: no arrivals, no timeouts, driver pinned
    at the origin."""
    kw = dict(map_size=(5, 5), n_pickup=2, max_orders=3, order_prob=0.0,
              timeout_prob=0.0, episode_len=500, name="quiet")
    kw.update(overrides)
    env = VrpEnv(CityConfig(**kw))
    env.reset(RngStream(0, 0).generator)
    st = env.state
    st.driver = (0, 0)
    st.pickups = [(2, 0), (4, 4)][:kw["n_pickup"]]
    return env


def put(env, slot, status, pickup=(2, 0), delivery=(2, 2), value=7.7, elapsed=0):
    order = Order(900 + slot, pickup, delivery, value, status, elapsed)
    env.state.orders[slot] = order
    return order


def test_config_validation():
    with pytest.raises(ConfigError):
        CityConfig(map_size=(1, 1), n_pickup=2)
    with pytest.raises(ConfigError):
        CityConfig(zone_probs=(0.5, 0.5, 0.5, 0.5))
    with pytest.raises(ConfigError):
        CityConfig(order_prob=1.5)
    with pytest.raises(ConfigError):
        CityConfig(capacity=0)


def test_presets_and_hot_variant():
    assert "5x5-2p-5o" in PRESETS and len(PRESETS) == 8
    cfg = with_hot_zones(preset("8x8-3p-10o"))
    assert cfg.name == "8x8-3p-10o-hot"
    assert cfg.zone_probs == HOT_ZONE_PROBS
    with pytest.raises(ConfigError):
        preset("6x6-1p-1o")


def test_sample_order_value_stays_in_range():
    rng = np.random.default_rng(3)
    for _ in range(200):
        assert 5.0 <= sample_order_value((5.0, 8.0), rng) <= 8.0


def test_mask_follows_order_status_and_capacity():
    env = quiet_env()
    m = env.config.max_orders
    put(env, 0, OPEN)
    put(env, 1, ACCEPTED)
    put(env, 2, PICKED_UP)
    mask = env._mask()
    assert mask[0] and not mask[1] and not mask[2]          # accept
    assert mask[m + 1] and not mask[m] and not mask[m + 2]  # pickup
    assert mask[2 * m + 2] and not mask[2 * m]              # deliver
    assert all(mask[3 * m:])                                # goto + wait

    env.state.capacity = 0
    assert not env._mask()[m + 1]  # full vehicle cannot pick up


def test_accept_pickup_deliver_credits_value_exactly():
    env = quiet_env()
    m = env.config.max_orders
    v = 7.7
    put(env, 0, OPEN, value=v)

    step = env.step(0)  # accept
    assert step.reward == pytest.approx(v / 3.0 - 0.1, abs=1e-12)
    assert env.state.orders[0].status == ACCEPTED

    step = env.step(m + 0)  # move toward (2, 0)
    assert env.state.driver == (1, 0)
    assert step.reward == pytest.approx(-0.2, abs=1e-12)
    step = env.step(m + 0)  # arrive and pick up
    assert env.state.driver == (2, 0)
    assert env.state.orders[0].status == PICKED_UP
    assert env.state.capacity == env.config.capacity - 1
    assert step.reward == pytest.approx(v / 3.0 - 0.2, abs=1e-12)

    env.step(2 * m + 0)  # (2, 1)
    step = env.step(2 * m + 0)  # (2, 2): delivered
    assert env.state.orders[0] is None
    assert env.state.capacity == env.config.capacity
    assert step.reward == pytest.approx(v - 2.0 * (v / 3.0) - 0.2, abs=1e-12)

    # the three credited increments reconstruct the value bit for bit
    assert (v / 3.0) + (v / 3.0) + (v - 2.0 * (v / 3.0)) == v


def test_goto_moves_one_cell_x_axis_first():
    env = quiet_env()
    m = env.config.max_orders
    env.step(3 * m + 1)  # toward pickup (4, 4)
    assert env.state.driver == (1, 0)
    env.state.driver = (4, 0)
    env.step(3 * m + 1)
    assert env.state.driver == (4, 1)


def test_wait_only_costs_time():
    env = quiet_env()
    m = env.config.max_orders
    step = env.step(3 * m + env.config.n_pickup)
    assert step.reward == -0.1
    assert env.state.driver == (0, 0)


def test_open_orders_can_vanish_silently():
    env = quiet_env(timeout_prob=1.0)
    put(env, 0, OPEN)
    step = env.step(3 * env.config.max_orders + 2)  # wait
    assert env.state.orders[0] is None
    assert step.reward == pytest.approx(-0.1)  # no fine: never committed to


def test_committed_orders_breach_after_the_window():
    env = quiet_env()
    wait = 3 * env.config.max_orders + 2
    put(env, 0, ACCEPTED, elapsed=env.config.time_window)
    step = env.step(wait)
    assert env.state.orders[0] is None
    assert step.reward == pytest.approx(-0.1 - env.config.failure_penalty)
    assert env.total_breaches == 1

    put(env, 1, PICKED_UP, elapsed=env.config.time_window)
    env.state.capacity -= 1
    step = env.step(wait)
    assert env.state.capacity == env.config.capacity  # seat freed
    assert step.reward == pytest.approx(-0.1 - env.config.failure_penalty)


def test_arrivals_fill_a_free_slot():
    env = quiet_env(order_prob=1.0)
    env.step(3 * env.config.max_orders + 2)
    live = [o for o in env.state.orders if o is not None]
    assert len(live) == 1
    order = live[0]
    assert order.status == OPEN and order.elapsed == 0
    assert order.pickup in env.state.pickups
    assert any(lo <= order.value <= hi
               for lo, hi in env.config.zone_value_ranges)


def test_status_mismatch_raises():
    env = quiet_env()
    m = env.config.max_orders
    put(env, 0, OPEN)
    with pytest.raises(InfeasibleActionError):
        env.step(2 * m + 0)  # cannot deliver an open order
    with pytest.raises(InfeasibleActionError):
        env.step(m + 1)      # empty slot
    with pytest.raises(InfeasibleActionError):
        env.step(env.action_size)


def test_observation_encodes_driver_and_orders():
    env = quiet_env()
    put(env, 1, ACCEPTED, value=5.0)
    obs = env.observe()
    assert obs.shape == (env.observation_size,)
    base = 4 + 2 * env.config.n_pickup
    assert obs[base + 9 + 1] == 1.0  # slot 1, status one-hot: accepted
    assert obs[2] == 1.0             # full capacity available
