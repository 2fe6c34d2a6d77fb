"""Online stochastic bin packing: environment, item distributions, and
placement baselines.

An episode packs ``horizon`` integer-sized items, drawn i.i.d. from a
fixed item distribution, into bins of a common integer size. Open bins
are tracked as a per-level census: ``counts[h]`` is the number of open
bins whose contents sum to ``h``. Bins filled to exactly the bin size
close and leave the census. Each step's reward is the negative change in
total empty space across open bins, so an episode's return equals the
negative final waste.

Named presets cover the three classical distribution regimes at two bin
sizes: bounded-waste (BW), perfectly packable (PP), and linear-waste
(LW). Optimal policies have Theta(1), Theta(sqrt(t)), and Theta(t)
expected waste on them respectively, which is what the slope estimator
at the bottom of the module measures.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .core import ConfigError, EnvStep, Environment, InfeasibleActionError, Policy, run_benchmark

__all__ = [
    "ItemDistribution",
    "BinPackConfig",
    "BinPackState",
    "BinPackEnv",
    "best_fit",
    "sum_of_squares",
    "sum_of_squares_argmin",
    "census_square_argmin",
    "BestFitPolicy",
    "SumOfSquaresPolicy",
    "waste",
    "waste_growth_slope",
    "PRESETS",
    "preset",
]

_CLASS_TAGS = ("BW", "PP", "LW", "custom")


@dataclass(frozen=True)
class ItemDistribution:
    """Discrete item-size distribution.

    ``class_tag`` records which waste regime the distribution belongs to
    (bounded waste, perfectly packable, linear waste, or custom); it is
    bookkeeping only and does not change sampling.
    """

    sizes: tuple[int, ...]
    probs: tuple[float, ...]
    class_tag: str = "custom"

    def __post_init__(self):
        if len(self.sizes) == 0 or len(self.sizes) != len(self.probs):
            raise ConfigError("sizes and probs must be equal-length and non-empty")
        if any(int(s) != s or s < 1 for s in self.sizes):
            raise ConfigError("item sizes must be positive integers")
        if any(a >= b for a, b in zip(self.sizes, self.sizes[1:])):
            raise ConfigError("item sizes must be strictly increasing")
        if any(p < 0 for p in self.probs):
            raise ConfigError("item probabilities must be non-negative")
        if abs(sum(self.probs) - 1.0) > 1e-9:
            raise ConfigError("item probabilities must sum to 1")
        if self.class_tag not in _CLASS_TAGS:
            raise ConfigError(f"class_tag must be one of {_CLASS_TAGS}")

    @property
    def max_size(self) -> int:
        return self.sizes[-1]

    def mean_size(self) -> float:
        return float(np.dot(self.sizes, self.probs))

    def sample_indices(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Draw ``n`` item-type indices (positions into ``sizes``)."""
        p = np.asarray(self.probs, dtype=np.float64)
        return rng.choice(len(self.sizes), size=n, p=p / p.sum())


@dataclass(frozen=True)
class BinPackConfig:
    bin_size: int
    distribution: ItemDistribution
    horizon: int
    name: str = "custom"

    def __post_init__(self):
        if self.bin_size < 2:
            raise ConfigError("bin_size must be at least 2")
        if self.distribution.max_size >= self.bin_size:
            raise ConfigError("largest item size must be strictly below the bin size")
        if self.horizon < 1:
            raise ConfigError("horizon must be at least 1")

    def build(self) -> "BinPackEnv":
        return BinPackEnv(self)


# The two classical bin sizes studied throughout: size 9 with items {2, 3}
# and size 100 with items 1..9. Default horizons are 100 and 1000 items.
_B9_SIZES = (2, 3)
_B100_SIZES = (1, 2, 3, 4, 5, 6, 7, 8, 9)

PRESETS: dict[str, BinPackConfig] = {
    "bw9": BinPackConfig(9, ItemDistribution(_B9_SIZES, (0.5, 0.5), "BW"), 100, "bw9"),
    "pp9": BinPackConfig(9, ItemDistribution(_B9_SIZES, (0.75, 0.25), "PP"), 100, "pp9"),
    "lw9": BinPackConfig(9, ItemDistribution(_B9_SIZES, (0.8, 0.2), "LW"), 100, "lw9"),
    "bw100": BinPackConfig(
        100,
        ItemDistribution(_B100_SIZES,
                         (0.14, 0.10, 0.06, 0.13, 0.11, 0.13, 0.03, 0.11, 0.19), "BW"),
        1000, "bw100"),
    "pp100": BinPackConfig(
        100,
        ItemDistribution(_B100_SIZES,
                         (0.06, 0.11, 0.11, 0.22, 0.0, 0.11, 0.06, 0.0, 0.33), "PP"),
        1000, "pp100"),
    "lw100": BinPackConfig(
        100,
        ItemDistribution(_B100_SIZES,
                         (0.0, 0.0, 0.0, 1 / 3, 0.0, 0.0, 0.0, 0.0, 2 / 3), "LW"),
        1000, "lw100"),
}


def preset(name: str, horizon: int | None = None) -> BinPackConfig:
    """A named preset, optionally with an overridden episode length."""
    try:
        cfg = PRESETS[name]
    except KeyError:
        raise ConfigError(f"unknown bin packing preset '{name}'; "
                          f"choose from {sorted(PRESETS)}") from None
    if horizon is not None:
        cfg = dataclasses.replace(cfg, horizon=int(horizon))
    return cfg


@dataclass
class BinPackState:
    """Live packing state.

    ``counts`` has length ``bin_size + 1``; entries ``1 .. bin_size-1``
    are the open-bin census and the register at index ``bin_size`` stays
    zero because full bins close immediately (index 0 is likewise unused).
    A plain list keeps single-element reads cheap in the stepping loop.
    """

    bin_size: int
    current_item: int
    counts: list[int]
    t: int
    horizon: int


def waste(state: BinPackState) -> int:
    """Total empty space across open bins."""
    B = state.bin_size
    return sum(n * (B - h) for h, n in enumerate(state.counts[1:B], start=1))


class BinPackEnv(Environment):
    """Place one sampled item per step; action 0 opens a new bin, action
    ``h >= 1`` drops the item into an open bin at level ``h``."""

    def __init__(self, config: BinPackConfig):
        self.config = config
        self.env_id = f"binpack:{config.name}"
        self._B = config.bin_size
        self._sizes = config.distribution.sizes
        self._state: BinPackState | None = None
        self.closed_bins = 0

    @property
    def action_size(self) -> int:
        return self._B

    @property
    def observation_size(self) -> int:
        return len(self._sizes) + self._B - 1

    @property
    def state(self) -> BinPackState:
        return self._state

    def reset(self, rng: np.random.Generator) -> EnvStep:
        cfg = self.config
        self._item_types = cfg.distribution.sample_indices(rng, cfg.horizon).tolist()
        self._item_type = self._item_types[0]
        counts = [0] * (self._B + 1)
        self._state = BinPackState(self._B, self._sizes[self._item_type],
                                   counts, 0, cfg.horizon)
        self.closed_bins = 0
        return EnvStep(0.0, False, self._mask(), self.observe)

    def _mask(self) -> list[bool]:
        st = self._state
        counts = st.counts
        top = self._B - st.current_item
        mask = [False] * self._B
        mask[0] = True
        for h in range(1, top + 1):
            if counts[h] > 0:
                mask[h] = True
        return mask

    def step(self, action) -> EnvStep:
        st = self._state
        a = int(action)
        s = st.current_item
        B = self._B
        counts = st.counts
        if a == 0:
            counts[s] += 1
            reward = float(s - B)
        elif 0 < a < B and counts[a] > 0 and a + s <= B:
            counts[a] -= 1
            lvl = a + s
            if lvl < B:
                counts[lvl] += 1
            else:
                self.closed_bins += 1
            reward = float(s)
        else:
            raise InfeasibleActionError(
                f"action {a} is infeasible at step {st.t} (item {s}, bin size {B})")
        st.t += 1
        done = st.t >= st.horizon
        if not done:
            self._item_type = self._item_types[st.t]
            st.current_item = self._sizes[self._item_type]
        return EnvStep(reward, done, self._mask(), self.observe)

    def observe(self) -> np.ndarray:
        st = self._state
        n_types = len(self._sizes)
        obs = np.zeros(n_types + self._B - 1, dtype=np.float64)
        obs[self._item_type] = 1.0
        obs[n_types:] = np.asarray(st.counts[1:self._B], dtype=np.float64) / st.horizon
        return obs


def best_fit(state: BinPackState) -> int:
    """Highest open-bin level that still fits the current item; a new bin
    when none fits."""
    counts = state.counts
    for h in range(state.bin_size - state.current_item, 0, -1):
        if counts[h] > 0:
            return h
    return 0


def _ss_candidates(state: BinPackState) -> tuple[list[int], list[int]]:
    """Candidate levels and their census differences for the
    level-equalizing rule.

    A placement at level ``h`` moves one bin from level ``h`` to level
    ``h + s``; opening a new bin is the ``h = 0`` candidate. The score of
    a candidate is ``counts[h+s] - counts[h]`` where the registers at
    level 0 and at the bin size read zero.
    """
    s = state.current_item
    B = state.bin_size
    counts = state.counts
    cand = [0]
    vals = [counts[s]]
    for h in range(1, B - s + 1):
        if counts[h] > 0:
            cand.append(h)
            vals.append(counts[h + s] - counts[h])
    return cand, vals


def sum_of_squares(state: BinPackState, tie_break: str = "largest") -> int:
    """Level-equalizing placement: among feasible levels (including a new
    bin) minimize ``counts[h+s] - counts[h]``, which is equivalent to
    minimizing the squared open-bin census after the placement.

    ``tie_break`` picks the largest or the smallest minimizing level.
    """
    cand, vals = _ss_candidates(state)
    m = min(vals)
    if tie_break == "largest":
        for i in range(len(vals) - 1, -1, -1):
            if vals[i] == m:
                return cand[i]
    elif tie_break == "smallest":
        return cand[vals.index(m)]
    raise ValueError("tie_break must be 'largest' or 'smallest'")


def sum_of_squares_argmin(state: BinPackState) -> list[int]:
    """All minimizing levels of the census-difference rule, ascending."""
    cand, vals = _ss_candidates(state)
    m = min(vals)
    return [h for h, v in zip(cand, vals) if v == m]


def census_square_argmin(state: BinPackState) -> list[int]:
    """Brute-force reference for the level-equalizing rule.

    For every feasible placement, rebuild the census with the placement
    applied and sum its squared entries. The census here includes the
    virtual registers at level 0 (the supply of fresh bins) and at the
    bin size (just-closed bins), both pinned at zero beforehand; keeping
    their formally updated squares in the sum is what makes the two-term
    difference rule exact. Returns all minimizers, ascending.
    """
    s = state.current_item
    B = state.bin_size
    counts = state.counts
    candidates = [0] + [h for h in range(1, B - s + 1) if counts[h] > 0]
    scores = []
    for h in candidates:
        extended = list(counts)
        extended[h] -= 1
        extended[h + s] += 1
        scores.append(sum(n * n for n in extended))
    best = min(scores)
    return [h for h, v in zip(candidates, scores) if v == best]


class BestFitPolicy(Policy):
    name = "best_fit"

    def act(self, env, step, rng):
        return best_fit(env.state)


class SumOfSquaresPolicy(Policy):
    name = "sum_of_squares"

    def __init__(self, tie_break: str = "largest"):
        if tie_break not in ("largest", "smallest"):
            raise ConfigError("tie_break must be 'largest' or 'smallest'")
        self.tie_break = tie_break

    def act(self, env, step, rng):
        return sum_of_squares(env.state, self.tie_break)


def waste_growth_slope(policy: Policy, config: BinPackConfig,
                       horizons: tuple[int, ...],
                       episodes_per_horizon: int,
                       master_seed: int) -> float:
    """Least-squares slope of log mean final waste against log horizon.

    Distinguishes the waste regimes empirically: slopes near 0, 0.5, and
    1 correspond to bounded, square-root, and linear waste growth.
    """
    horizons = tuple(int(t) for t in horizons)
    if len(horizons) < 2 or any(a >= b for a, b in zip(horizons, horizons[1:])):
        raise ValueError("horizons must be at least two strictly increasing values")
    mean_waste = []
    for t in horizons:
        cfg = dataclasses.replace(config, horizon=t)
        report, _ = run_benchmark(cfg.build, policy, episodes_per_horizon, master_seed)
        w = -report.mean
        if w <= 0:
            raise ValueError(f"mean final waste is non-positive at horizon {t}")
        mean_waste.append(w)
    slope, _ = np.polyfit(np.log(horizons), np.log(mean_waste), 1)
    return float(slope)
