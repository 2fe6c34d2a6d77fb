"""Shared environment contract, seeded streams, episode runner, and
benchmark statistics.

Every environment in the suite is an exact episodic MDP simulator behind
the same small interface: ``reset(rng)`` and ``step(action)`` both return
an :class:`EnvStep` carrying reward, termination flag, a feasibility mask
over actions, and a lazily built observation vector. Policies map live
environment state to actions. The benchmark runner assigns one
independent random stream per episode, so results are reproducible and
identical for any worker count.
"""

from __future__ import annotations

from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np

__all__ = [
    "ConfigError",
    "InfeasibleActionError",
    "RngStream",
    "EnvStep",
    "Environment",
    "Policy",
    "RandomPolicy",
    "EpisodeResult",
    "BenchmarkReport",
    "run_episode",
    "run_benchmark",
    "summarize",
]

_U64 = (1 << 64) - 1


class ConfigError(ValueError):
    """Invalid environment, policy, or run configuration."""


class InfeasibleActionError(RuntimeError):
    """An action forbidden by the current action mask was submitted."""


class RngStream:
    """Deterministic random stream keyed by ``(master_seed, stream_index)``.

    Streams are backed by a counter-based bit generator whose key is the
    seed pair, so equal keys replay the same sample sequence and distinct
    stream indices give statistically independent streams. Episodes can
    therefore run in any order, or concurrently, without changing results.
    """

    __slots__ = ("master_seed", "stream_index", "_generator")

    def __init__(self, master_seed: int, stream_index: int = 0):
        if stream_index < 0:
            raise ValueError("stream_index must be non-negative")
        self.master_seed = int(master_seed)
        self.stream_index = int(stream_index)
        self._generator: np.random.Generator | None = None

    @property
    def generator(self) -> np.random.Generator:
        """The stream's generator; created on first use, then advances."""
        if self._generator is None:
            key = [self.master_seed & _U64, self.stream_index & _U64]
            self._generator = np.random.Generator(np.random.Philox(key=key))
        return self._generator

    def spawn(self, stream_index: int) -> "RngStream":
        """A sibling stream under the same master seed."""
        return RngStream(self.master_seed, stream_index)

    def __repr__(self) -> str:
        return f"RngStream(master_seed={self.master_seed}, stream_index={self.stream_index})"


class EnvStep:
    """One environment emission: reward, done flag, action mask, observation.

    The observation vector is materialized from live environment state on
    first access and cached, so policies that never look at it pay nothing.
    Read it before stepping the environment again.
    """

    __slots__ = ("reward", "done", "action_mask", "_observe", "_observation")

    def __init__(self, reward: float, done: bool, action_mask: np.ndarray,
                 observe: Callable[[], np.ndarray]):
        self.reward = reward
        self.done = done
        self.action_mask = action_mask
        self._observe = observe
        self._observation = None

    @property
    def observation(self) -> np.ndarray:
        if self._observation is None:
            self._observation = self._observe()
        return self._observation

    def __repr__(self) -> str:
        return f"EnvStep(reward={self.reward!r}, done={self.done!r})"


class Environment(ABC):
    """Episodic MDP contract shared by every environment in the suite.

    Discrete-action environments expose ``action_size`` actions indexed
    ``0 .. action_size-1`` and a boolean feasibility mask each step; a
    masked-out action raises :class:`InfeasibleActionError`. Continuous
    environments set ``continuous_actions`` and accept a float in
    ``[0, action_high]`` instead (their mask is a single always-true entry).
    """

    continuous_actions: bool = False
    action_high: float = 1.0
    env_id: str = "env"

    @property
    @abstractmethod
    def action_size(self) -> int: ...

    @property
    @abstractmethod
    def observation_size(self) -> int: ...

    @property
    @abstractmethod
    def state(self): ...

    @abstractmethod
    def reset(self, rng: np.random.Generator) -> EnvStep: ...

    @abstractmethod
    def step(self, action) -> EnvStep: ...

    @abstractmethod
    def observe(self) -> np.ndarray: ...


class Policy(ABC):
    """Maps live environment state to actions.

    Plain policies must be safe to share across concurrently running
    episodes (act from arguments only). Controllers that carry per-episode
    state are handed to the benchmark runner as zero-argument factories so
    each episode gets a fresh instance; ``reset`` is called once per
    episode right after the environment reset.
    """

    name: str = "policy"

    def reset(self, env: Environment) -> None:
        """Per-episode hook; default is a no-op."""

    @abstractmethod
    def act(self, env: Environment, step: EnvStep, rng: np.random.Generator): ...


class RandomPolicy(Policy):
    """Uniform over mask-feasible actions; uniform on ``[0, action_high]``
    for continuous action spaces."""

    name = "random"

    def act(self, env, step, rng):
        if env.continuous_actions:
            return float(rng.uniform(0.0, env.action_high))
        feasible = np.flatnonzero(step.action_mask)
        return int(feasible[rng.integers(len(feasible))])


@dataclass
class EpisodeResult:
    """Outcome of one episode under one random stream."""

    total_reward: float
    steps: int
    per_step_rewards: list[float] | None
    seed: tuple[int, int]


@dataclass
class BenchmarkReport:
    """Aggregate statistics over a batch of seeded episodes.

    ``std`` is the population standard deviation (divide by n).
    """

    policy: str
    env: str
    n: int
    mean: float
    std: float
    min: float
    max: float
    seed: int | None = None

    def to_dict(self) -> dict:
        return {
            "policy": self.policy,
            "env": self.env,
            "n": self.n,
            "mean": self.mean,
            "std": self.std,
            "min": self.min,
            "max": self.max,
            "seed": self.seed,
        }


def run_episode(env: Environment, policy: Policy, stream: RngStream,
                record_steps: bool = False) -> EpisodeResult:
    """Reset the environment and step it to termination under ``policy``.

    The same stream drives both environment sampling and any policy
    randomness, so an episode is a pure function of
    ``(environment config, policy, stream key)``. A policy that returns a
    masked-out action is a hard error.
    """
    rng = stream.generator
    step = env.reset(rng)
    policy.reset(env)
    total = 0.0
    rewards: list[float] | None = [] if record_steps else None
    n = 0
    while not step.done:
        action = policy.act(env, step, rng)
        if not env.continuous_actions:
            action = int(action)
            if action < 0 or action >= env.action_size or not step.action_mask[action]:
                raise InfeasibleActionError(
                    f"policy '{policy.name}' chose infeasible action {action} at step {n}")
        step = env.step(action)
        total += step.reward
        if rewards is not None:
            rewards.append(step.reward)
        n += 1
    return EpisodeResult(total, n, rewards, (stream.master_seed, stream.stream_index))


def summarize(results: list[EpisodeResult], policy_name: str = "",
              env_id: str = "", master_seed: int | None = None) -> BenchmarkReport:
    """Exact mean/std/min/max of episode totals (population std)."""
    if not results:
        raise ValueError("no episode results to summarize")
    totals = np.asarray([r.total_reward for r in results], dtype=np.float64)
    return BenchmarkReport(
        policy=policy_name,
        env=env_id,
        n=len(results),
        mean=float(totals.mean()),
        std=float(totals.std()),
        min=float(totals.min()),
        max=float(totals.max()),
        seed=master_seed,
    )


def run_benchmark(make_env: Callable[[], Environment],
                  policy: Policy | Callable[[], Policy],
                  n_episodes: int,
                  master_seed: int,
                  workers: int = 1,
                  record_steps: bool = False) -> tuple[BenchmarkReport, list[EpisodeResult]]:
    """Run ``n_episodes`` seeded episodes and aggregate them.

    Episode ``i`` always consumes stream index ``i``, and results are
    collected in stream order, so the report is byte-for-byte identical
    for any worker count. ``policy`` is either a shared stateless
    :class:`Policy` or a zero-argument factory called once per episode.
    """
    if n_episodes < 1:
        raise ConfigError("n_episodes must be at least 1")
    if workers < 1:
        raise ConfigError("workers must be at least 1")
    factory = policy if not isinstance(policy, Policy) else None
    if factory is not None and not callable(factory):
        raise ConfigError("policy must be a Policy or a zero-argument factory")
    # episode 0 reuses the instance that names the report, so a factory
    # is invoked exactly once per episode
    first = factory() if factory is not None else policy
    name = first.name

    def one(i: int) -> EpisodeResult:
        env = make_env()
        if factory is None:
            pol = policy
        else:
            pol = first if i == 0 else factory()
        try:
            return run_episode(env, pol, RngStream(master_seed, i), record_steps)
        except Exception as exc:
            raise RuntimeError(f"episode {i} (stream {i}) failed: {exc}") from exc

    if workers == 1:
        results = [one(i) for i in range(n_episodes)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, range(n_episodes)))

    report = summarize(results, name, make_env().env_id, master_seed)
    return report, results
