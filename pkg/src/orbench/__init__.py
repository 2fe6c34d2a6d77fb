"""Benchmark suite for online stochastic resource-allocation problems.

Three exact episodic MDP simulators (online bin packing, a multi-period
newsvendor with vendor lead time, and dynamic pickup-and-delivery
routing on a grid city), their classical baseline policies, an exact
desk-scale routing planner, a small policy-gradient learner, and a
seeded benchmark harness with a command-line front end.
"""

from . import binpack, learn, newsvendor, vrp
from .core import (
    BenchmarkReport,
    ConfigError,
    Environment,
    EnvStep,
    EpisodeResult,
    InfeasibleActionError,
    Policy,
    RandomPolicy,
    RngStream,
    run_benchmark,
    run_episode,
    summarize,
)

__version__ = "0.1.0"

__all__ = [
    "BenchmarkReport",
    "ConfigError",
    "Environment",
    "EnvStep",
    "EpisodeResult",
    "InfeasibleActionError",
    "Policy",
    "RandomPolicy",
    "RngStream",
    "run_benchmark",
    "run_episode",
    "summarize",
    "binpack",
    "newsvendor",
    "vrp",
    "learn",
    "__version__",
]
