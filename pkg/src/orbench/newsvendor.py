"""Multi-period newsvendor environment with vendor lead time, and the
order-up-to baseline built on the critical ratio.

Each period the agent orders a quantity that joins the back of a
length-``l`` pipeline; the front slot is on-hand stock. Demand is
Poisson, unmet demand is lost (not backlogged), and the reward nets
sales revenue against purchase, holding, and lost-sales costs. Episode
parameters (price, cost, holding, penalty, mean demand) are drawn
uniformly per episode unless a fixed parameter tuple is configured.

The baseline orders up to ``z* = F^{-1}(CR)`` where F is the Poisson
distribution of lead-time demand and CR the critical ratio; the quantile
is computed by direct cumulative summation in log space so that large
means do not underflow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core import ConfigError, EnvStep, Environment, Policy

__all__ = [
    "NewsvendorConfig",
    "NewsvendorState",
    "NewsvendorEnv",
    "FIXED_SLICE",
    "critical_ratio",
    "poisson_inv_cdf",
    "base_stock_action",
    "BaseStockPolicy",
]

# The parameter slice used for policy-structure studies:
# price 50, cost 25, holding 0.5, lost-sales penalty 5, mean demand 100.
FIXED_SLICE = (50.0, 25.0, 0.5, 5.0, 100.0)


@dataclass(frozen=True)
class NewsvendorConfig:
    """Episode shape, discounting, and the parameter sampling ranges.

    ``fixed_params`` pins (price, cost, holding, penalty, mean demand)
    instead of sampling them; ``max_order`` is the scale applied to the
    learner's normalized [0, 1] action head.
    """

    lead_time: int = 5
    horizon: int = 40
    discount: float = 1.0
    max_order: float = 800.0
    price_cap: float = 100.0
    holding_cap: float = 5.0
    penalty_cap: float = 10.0
    demand_cap: float = 200.0
    fixed_params: tuple[float, float, float, float, float] | None = None
    name: str = "newsvendor"

    def __post_init__(self):
        if self.lead_time < 1:
            raise ConfigError("lead_time must be at least 1")
        if self.horizon < 1:
            raise ConfigError("horizon must be at least 1")
        if not 0.0 < self.discount <= 1.0:
            raise ConfigError("discount must be in (0, 1]")
        if self.max_order <= 0:
            raise ConfigError("max_order must be positive")
        for cap in (self.price_cap, self.holding_cap, self.penalty_cap, self.demand_cap):
            if cap < 0:
                raise ConfigError("sampling caps must be non-negative")
        if self.fixed_params is not None:
            if len(self.fixed_params) != 5:
                raise ConfigError("fixed_params must be (price, cost, holding, penalty, mean_demand)")
            if any(v < 0 for v in self.fixed_params):
                raise ConfigError("fixed_params must be non-negative")

    def build(self) -> "NewsvendorEnv":
        return NewsvendorEnv(self)


@dataclass
class NewsvendorState:
    """Episode parameters plus the order pipeline.

    ``pipeline[0]`` is on-hand inventory; ``pipeline[i]`` arrives ``i``
    periods from now. The newest order joins at the back.
    """

    price: float
    cost: float
    holding: float
    penalty: float
    mean_demand: float
    pipeline: list[int]
    t: int
    horizon: int
    discount: float


class NewsvendorEnv(Environment):
    """One ordering decision per period against Poisson demand.

    The action is a non-negative scalar order quantity; it is rounded
    half-to-even to an integer unit count on application. Negative
    actions are clamped to zero and counted in ``negative_actions``
    rather than rejected, since the action space is unmasked.
    """

    continuous_actions = True

    def __init__(self, config: NewsvendorConfig):
        self.config = config
        self.env_id = f"newsvendor:{config.name}"
        self.action_high = config.max_order
        self._state: NewsvendorState | None = None
        self._rng: np.random.Generator | None = None
        self.negative_actions = 0
        self.last_demand: int | None = None

    @property
    def action_size(self) -> int:
        return 1

    @property
    def observation_size(self) -> int:
        return 6 + self.config.lead_time

    @property
    def state(self) -> NewsvendorState:
        return self._state

    def reset(self, rng: np.random.Generator) -> EnvStep:
        cfg = self.config
        self._rng = rng
        if cfg.fixed_params is not None:
            p, c, h, k, mu = (float(v) for v in cfg.fixed_params)
        else:
            p = rng.uniform(0.0, cfg.price_cap)
            c = rng.uniform(0.0, p)
            h = rng.uniform(0.0, min(c, cfg.holding_cap))
            k = rng.uniform(0.0, cfg.penalty_cap)
            mu = rng.uniform(0.0, cfg.demand_cap)
        self._state = NewsvendorState(p, c, h, k, mu, [0] * cfg.lead_time,
                                      0, cfg.horizon, cfg.discount)
        self.negative_actions = 0
        self.last_demand = None
        return EnvStep(0.0, False, None, self.observe)

    def step(self, action) -> EnvStep:
        st = self._state
        q = float(action)
        if q < 0.0:
            self.negative_actions += 1
            q = 0.0
        a = int(round(q))
        d = int(self._rng.poisson(st.mean_demand))
        self.last_demand = d
        x0 = st.pipeline[0]
        leftover = x0 - d if x0 > d else 0
        reward = (st.price * min(x0, d)
                  - st.cost * a
                  - st.holding * leftover
                  - st.penalty * max(d - x0, 0))
        pipeline = st.pipeline[1:] + [a]
        pipeline[0] += leftover
        st.pipeline = pipeline
        st.t += 1
        return EnvStep(float(reward), st.t >= st.horizon, None, self.observe)

    def observe(self) -> np.ndarray:
        st = self._state
        cfg = self.config
        obs = np.empty(self.observation_size, dtype=np.float64)
        obs[0] = st.price / max(cfg.price_cap, 1.0)
        obs[1] = st.cost / max(cfg.price_cap, 1.0)
        obs[2] = st.holding / max(cfg.holding_cap, 1.0)
        obs[3] = st.penalty / max(cfg.penalty_cap, 1.0)
        obs[4] = st.mean_demand / max(cfg.demand_cap, 1.0)
        obs[5] = (st.horizon - st.t) / st.horizon
        obs[6:] = np.asarray(st.pipeline, dtype=np.float64) / cfg.max_order
        return obs


def critical_ratio(price: float, cost: float, holding: float, penalty: float,
                   discount: float = 1.0) -> float:
    """(p - gamma*c + k) / (p - gamma*c + k + h)."""
    num = price - discount * cost + penalty
    den = num + holding
    if den <= 0.0:
        raise ValueError("critical ratio undefined: non-positive denominator")
    return num / den


def poisson_inv_cdf(mean: float, q: float) -> int:
    """Smallest integer z with P(Poisson(mean) <= z) >= q.

    Terms are evaluated one at a time as exp(z*log(mean) - mean -
    lgamma(z+1)) and accumulated with compensated summation, so the
    result stays exact-to-rounding even for means large enough that
    exp(-mean) underflows.
    """
    if not (mean >= 0.0 and math.isfinite(mean)):
        raise ValueError("mean must be a finite non-negative number")
    if not (0.0 <= q < 1.0):
        raise ValueError("q must lie in [0, 1)")
    if mean == 0.0:
        return 0
    log_mean = math.log(mean)
    cum = 0.0
    comp = 0.0
    z = 0
    while True:
        term = math.exp(z * log_mean - mean - math.lgamma(z + 1))
        y = term - comp
        t = cum + y
        comp = (t - cum) - y
        cum = t
        if cum >= q:
            return z
        if z > mean and term == 0.0:
            raise ValueError(f"quantile {q} not reachable at float precision")
        z += 1


def base_stock_action(state: NewsvendorState) -> float:
    """Order up to the critical-ratio quantile of lead-time demand."""
    cr = critical_ratio(state.price, state.cost, state.holding, state.penalty,
                        state.discount)
    z_star = poisson_inv_cdf(len(state.pipeline) * state.mean_demand, cr)
    gap = z_star - sum(state.pipeline)
    return float(gap) if gap > 0 else 0.0


class BaseStockPolicy(Policy):
    name = "base_stock"

    def act(self, env, step, rng):
        return base_stock_action(env.state)
