"""Small policy-gradient learner shared by all three environments.

A two-hidden-layer tanh network maps observations to either masked
action logits (discrete environments) or the mean of a bounded scalar
action (the ordering environment). Training is plain clipped-surrogate
policy gradient on Monte Carlo returns with a batch-mean baseline --
deliberately the smallest correct estimator, sized for CPU sanity runs
rather than full-scale results.

All gradients are hand-written backprop over the dense layers; the
``gradient_check`` routine compares them against central finite
differences and is wired into the test suite and the oracle command.
"""

from __future__ import annotations

import math
import os
import time
from dataclasses import dataclass

import numpy as np

from .core import ConfigError, Environment, Policy, RngStream

__all__ = [
    "MlpPolicy",
    "TrainerConfig",
    "LearnedPolicy",
    "masked_forward",
    "policy_gradient_update",
    "gradient_check",
    "collect_batch",
    "train",
    "policy_for_env",
    "save_checkpoint",
    "load_checkpoint",
]


def _orthogonal(rng: np.random.Generator, rows: int, cols: int,
                scale: float) -> np.ndarray:
    a = rng.normal(size=(max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return scale * q[:rows, :cols]


class MlpPolicy:
    """input -> tanh -> tanh -> linear head.

    Discrete environments read the head as action logits; the continuous
    environment reads a single head unit through a sigmoid as the mean
    of a Gaussian in [0, 1], later scaled by ``action_high``.
    """

    def __init__(self, input_size: int, hidden: tuple[int, int],
                 output_size: int, continuous: bool = False,
                 action_high: float = 1.0, sigma: float = 0.1, seed: int = 0):
        if input_size < 1 or output_size < 1 or min(hidden) < 1:
            raise ConfigError("layer sizes must be positive")
        if continuous and output_size != 1:
            raise ConfigError("continuous head is a single unit")
        if sigma <= 0:
            raise ConfigError("sigma must be positive")
        self.sizes = (input_size, hidden[0], hidden[1], output_size)
        self.continuous = continuous
        self.action_high = float(action_high)
        self.sigma = float(sigma)
        rng = np.random.default_rng(seed)
        h1, h2 = hidden
        self.w1 = _orthogonal(rng, input_size, h1, 1.0)
        self.b1 = np.zeros(h1)
        self.w2 = _orthogonal(rng, h1, h2, 1.0)
        self.b2 = np.zeros(h2)
        # small head keeps the initial policy near uniform / mid-range
        self.w3 = _orthogonal(rng, h2, output_size, 0.01)
        self.b3 = np.zeros(output_size)

    # -- parameter vector interface (checkpoints, finite differences) --
    def _tensors(self):
        return [self.w1, self.b1, self.w2, self.b2, self.w3, self.b3]

    @property
    def n_params(self) -> int:
        return sum(t.size for t in self._tensors())

    def get_flat(self) -> np.ndarray:
        return np.concatenate([t.ravel() for t in self._tensors()])

    def set_flat(self, flat: np.ndarray) -> None:
        if flat.shape != (self.n_params,):
            raise ConfigError("parameter vector has the wrong length")
        i = 0
        for t in self._tensors():
            t[...] = flat[i:i + t.size].reshape(t.shape)
            i += t.size

    def forward(self, obs: np.ndarray):
        """Batched head outputs plus the cached activations backprop needs."""
        x = np.atleast_2d(np.asarray(obs, dtype=np.float64))
        a1 = np.tanh(x @ self.w1 + self.b1)
        a2 = np.tanh(a1 @ self.w2 + self.b2)
        out = a2 @ self.w3 + self.b3
        return out, (x, a1, a2)

    def logits(self, obs: np.ndarray) -> np.ndarray:
        return self.forward(obs)[0]

    def backward(self, cache, d_out: np.ndarray) -> np.ndarray:
        """Flat-parameter gradient of sum(out * d_out)."""
        x, a1, a2 = cache
        g_w3 = a2.T @ d_out
        g_b3 = d_out.sum(axis=0)
        d_a2 = (d_out @ self.w3.T) * (1.0 - a2 * a2)
        g_w2 = a1.T @ d_a2
        g_b2 = d_a2.sum(axis=0)
        d_a1 = (d_a2 @ self.w2.T) * (1.0 - a1 * a1)
        g_w1 = x.T @ d_a1
        g_b1 = d_a1.sum(axis=0)
        return np.concatenate([g.ravel() for g in
                               (g_w1, g_b1, g_w2, g_b2, g_w3, g_b3)])


@dataclass(frozen=True)
class TrainerConfig:
    learning_rate: float = 0.05
    discount: float = 0.995
    batch_size: int = 16
    clip_eps: float = 0.3
    epochs: int = 4
    entropy_coef: float = 0.0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if not 0.0 < self.discount <= 1.0:
            raise ConfigError("discount must be in (0, 1]")
        if self.clip_eps <= 0:
            raise ConfigError("clip_eps must be positive")
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("batch_size and epochs must be at least 1")
        if self.entropy_coef < 0:
            raise ConfigError("entropy_coef must be non-negative")


def masked_forward(policy: MlpPolicy, observation: np.ndarray,
                   mask) -> np.ndarray:
    """Action probabilities: softmax over the feasible logits, exact
    zeros elsewhere. Falls back to uniform-over-feasible if every
    feasible probability underflows."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise ValueError("mask has no feasible action")
    logits = policy.logits(observation)[0]
    shifted = logits - logits[mask].max()
    expd = np.where(mask, np.exp(np.where(mask, shifted, 0.0)), 0.0)
    total = expd.sum()
    if not np.isfinite(total) or total <= 0.0:
        return mask / mask.sum()
    return expd / total


def _masked_probs_batch(policy, obs, masks):
    logits, cache = policy.forward(obs)
    shifted = logits - np.where(masks, logits, -np.inf).max(axis=1, keepdims=True)
    expd = np.where(masks, np.exp(np.where(masks, shifted, 0.0)), 0.0)
    totals = expd.sum(axis=1, keepdims=True)
    bad = ~np.isfinite(totals[:, 0]) | (totals[:, 0] <= 0.0)
    if bad.any():
        uniform = masks[bad] / masks[bad].sum(axis=1, keepdims=True)
        expd[bad] = uniform
        totals[bad] = 1.0
    return expd / totals, cache


@dataclass
class Batch:
    """Flattened trajectories: one row per visited state."""

    obs: np.ndarray            # (N, obs_size)
    actions: np.ndarray        # (N,) int indices, or raw pre-clip floats
    masks: np.ndarray | None   # (N, action_size) for discrete policies
    logp: np.ndarray           # (N,) log-probabilities at collection time
    returns: np.ndarray        # (N,) discounted reward-to-go
    episode_rewards: np.ndarray  # (batch,) undiscounted totals


def _surrogate(policy: MlpPolicy, batch: Batch, config: TrainerConfig,
               advantages: np.ndarray):
    """Clipped-surrogate objective and its flat analytic gradient."""
    n = batch.obs.shape[0]
    lo, hi = 1.0 - config.clip_eps, 1.0 + config.clip_eps
    if policy.continuous:
        out, cache = policy.forward(batch.obs)
        z = out[:, 0]
        mean = 1.0 / (1.0 + np.exp(-z))
        sig = policy.sigma
        logp = (-0.5 * ((batch.actions - mean) / sig) ** 2
                - math.log(sig * math.sqrt(2.0 * math.pi)))
        ratio = np.exp(logp - batch.logp)
        unclipped = ratio * advantages
        use_raw = (advantages >= 0) & (ratio <= hi) | (advantages < 0) & (ratio >= lo)
        objective = np.minimum(unclipped, np.clip(ratio, lo, hi) * advantages)
        d_logp = np.where(use_raw, ratio * advantages, 0.0) / n
        d_mean = d_logp * (batch.actions - mean) / (sig * sig)
        d_z = d_mean * mean * (1.0 - mean)
        grad = policy.backward(cache, d_z[:, None])
        return float(objective.mean()), grad
    probs, cache = _masked_probs_batch(policy, batch.obs, batch.masks)
    idx = np.arange(n)
    acts = batch.actions.astype(int)
    p_a = probs[idx, acts]
    logp = np.log(p_a)
    ratio = np.exp(logp - batch.logp)
    unclipped = ratio * advantages
    use_raw = (advantages >= 0) & (ratio <= hi) | (advantages < 0) & (ratio >= lo)
    objective = np.minimum(unclipped, np.clip(ratio, lo, hi) * advantages)
    coeff = np.where(use_raw, ratio * advantages, 0.0) / n
    d_logits = -probs * coeff[:, None]
    d_logits[idx, acts] += coeff
    value = float(objective.mean())
    if config.entropy_coef > 0.0:
        safe_log = np.where(probs > 0.0, np.log(np.where(probs > 0.0, probs, 1.0)), 0.0)
        entropy = -(probs * safe_log).sum(axis=1)
        value += config.entropy_coef * float(entropy.mean())
        # dH/dlogit_j = -p_j (log p_j + H)
        d_ent = -probs * (safe_log + entropy[:, None])
        d_logits += config.entropy_coef * d_ent / n
    grad = policy.backward(cache, d_logits)
    return value, grad


def _advantages(batch: Batch) -> np.ndarray:
    adv = batch.returns - batch.returns.mean()
    std = adv.std()
    if std > 0.0:
        adv = adv / std
    return adv


def policy_gradient_update(policy: MlpPolicy, batch: Batch,
                           config: TrainerConfig) -> dict:
    """In-place clipped-surrogate ascent; returns diagnostics. A
    non-finite gradient aborts the update and restores the parameters."""
    adv = _advantages(batch)
    before = policy.get_flat()
    objective = 0.0
    for _ in range(config.epochs):
        objective, grad = _surrogate(policy, batch, config, adv)
        if not np.isfinite(grad).all():
            policy.set_flat(before)
            return {"mean_reward": float(batch.episode_rewards.mean()),
                    "objective": float(objective), "aborted": True}
        policy.set_flat(policy.get_flat() + config.learning_rate * grad)
    return {"mean_reward": float(batch.episode_rewards.mean()),
            "min_reward": float(batch.episode_rewards.min()),
            "max_reward": float(batch.episode_rewards.max()),
            "objective": float(objective), "aborted": False}


def gradient_check(policy: MlpPolicy, loss, n_checks: int = 40,
                   seed: int = 0, step: float = 1e-5) -> float:
    """Max relative error between ``loss``'s analytic gradient and
    central finite differences over a random parameter subset.

    ``loss`` maps the policy to ``(value, flat_gradient)``.
    """
    _, grad = loss(policy)
    flat = policy.get_flat()
    rng = np.random.default_rng(seed)
    picks = rng.choice(flat.size, size=min(n_checks, flat.size), replace=False)
    worst = 0.0
    for i in picks:
        orig = flat[i]
        flat[i] = orig + step
        policy.set_flat(flat)
        up, _ = loss(policy)
        flat[i] = orig - step
        policy.set_flat(flat)
        down, _ = loss(policy)
        flat[i] = orig
        fd = (up - down) / (2.0 * step)
        denom = max(abs(fd), abs(grad[i]), 1e-8)
        worst = max(worst, abs(fd - grad[i]) / denom)
    policy.set_flat(flat)
    return worst


def surrogate_loss(batch: Batch, config: TrainerConfig):
    """The exact loss used by updates, packaged for gradient_check."""
    adv = _advantages(batch)

    def loss(policy: MlpPolicy):
        return _surrogate(policy, batch, config, adv)

    return loss


class LearnedPolicy(Policy):
    """Adapter that runs an MlpPolicy under the benchmark contract."""

    name = "learned"

    def __init__(self, mlp: MlpPolicy, deterministic: bool = False):
        self.mlp = mlp
        self.deterministic = deterministic

    def act(self, env, step, rng):
        if self.mlp.continuous:
            z = float(self.mlp.logits(step.observation)[0, 0])
            mean = 1.0 / (1.0 + math.exp(-z))
            raw = mean if self.deterministic else rng.normal(mean, self.mlp.sigma)
            return float(min(max(raw, 0.0), 1.0) * self.mlp.action_high)
        probs = masked_forward(self.mlp, step.observation, step.action_mask)
        if self.deterministic:
            return int(np.argmax(probs))
        return int(rng.choice(probs.size, p=probs))


def collect_batch(make_env, policy: MlpPolicy, config: TrainerConfig,
                  master_seed: int, iteration: int) -> Batch:
    """Roll ``batch_size`` episodes with per-episode streams keyed by
    (iteration, episode) so any scheduling yields identical data."""
    obs_rows, act_rows, mask_rows, logp_rows, ret_rows = [], [], [], [], []
    totals = []
    for j in range(config.batch_size):
        env = make_env()
        stream = RngStream(master_seed, iteration * config.batch_size + j)
        gen = stream.generator
        step = env.reset(gen)
        rewards, t_obs, t_act, t_mask, t_logp = [], [], [], [], []
        while not step.done:
            obs = step.observation
            if policy.continuous:
                z = float(policy.logits(obs)[0, 0])
                mean = 1.0 / (1.0 + math.exp(-z))
                raw = float(gen.normal(mean, policy.sigma))
                logp = (-0.5 * ((raw - mean) / policy.sigma) ** 2
                        - math.log(policy.sigma * math.sqrt(2.0 * math.pi)))
                action = float(min(max(raw, 0.0), 1.0) * policy.action_high)
                t_act.append(raw)
            else:
                probs = masked_forward(policy, obs, step.action_mask)
                action = int(gen.choice(probs.size, p=probs))
                logp = float(np.log(probs[action]))
                t_act.append(action)
                t_mask.append(np.asarray(step.action_mask, dtype=bool))
            t_obs.append(obs)
            t_logp.append(logp)
            step = env.step(action)
            rewards.append(step.reward)
        rets = np.empty(len(rewards))
        acc = 0.0
        for t in range(len(rewards) - 1, -1, -1):
            acc = rewards[t] + config.discount * acc
            rets[t] = acc
        obs_rows.append(np.asarray(t_obs, dtype=np.float64))
        act_rows.append(np.asarray(t_act))
        if not policy.continuous:
            mask_rows.append(np.asarray(t_mask))
        logp_rows.append(np.asarray(t_logp))
        ret_rows.append(rets)
        totals.append(float(np.sum(rewards)))
    return Batch(
        obs=np.concatenate(obs_rows),
        actions=np.concatenate(act_rows),
        masks=None if policy.continuous else np.concatenate(mask_rows),
        logp=np.concatenate(logp_rows),
        returns=np.concatenate(ret_rows),
        episode_rewards=np.asarray(totals),
    )


def policy_for_env(env: Environment, hidden: tuple[int, int] = (64, 32),
                   seed: int = 0, sigma: float = 0.1) -> MlpPolicy:
    return MlpPolicy(env.observation_size, hidden, env.action_size,
                     continuous=env.continuous_actions,
                     action_high=env.action_high, sigma=sigma, seed=seed)


def train(make_env, config: TrainerConfig, iterations: int,
          master_seed: int = 0, policy: MlpPolicy | None = None,
          hidden: tuple[int, int] = (64, 32),
          checkpoint_dir: str | None = None, checkpoint_every: int = 50,
          max_seconds: float | None = None, start_iteration: int = 0,
          log=None):
    """collect -> update loop.

    Returns (policy, curve) where curve rows are (iteration,
    mean_reward, min_reward, max_reward). The optional wall-clock budget
    stops after the iteration that crosses it. ``start_iteration`` keys
    the episode streams, so training resumed from a checkpoint replays
    exactly the iterations a longer run would have produced.
    """
    if iterations < 1:
        raise ConfigError("need at least one iteration")
    if policy is None:
        policy = policy_for_env(make_env(), hidden=hidden, seed=master_seed)
    curve = []
    t0 = time.monotonic()
    for it in range(start_iteration, start_iteration + iterations):
        batch = collect_batch(make_env, policy, config, master_seed, it)
        diag = policy_gradient_update(policy, batch, config)
        row = (it, diag["mean_reward"],
               float(batch.episode_rewards.min()),
               float(batch.episode_rewards.max()))
        curve.append(row)
        if log is not None:
            log(it, diag)
        if checkpoint_dir is not None and (
                (it + 1) % checkpoint_every == 0
                or it + 1 == start_iteration + iterations):
            path = os.path.join(checkpoint_dir, f"checkpoint_{it + 1:05d}.txt")
            save_checkpoint(policy, path)
        if max_seconds is not None and time.monotonic() - t0 > max_seconds:
            break
    return policy, curve


# -- checkpoints -----------------------------------------------------------

def save_checkpoint(policy: MlpPolicy, path: str) -> None:
    """Versioned text dump: layer sizes, head kind, then one parameter
    per line in row-major order (float repr round-trips exactly)."""
    lines = [
        "mlp-checkpoint v1",
        f"sizes {' '.join(str(s) for s in policy.sizes)}",
        f"head {'continuous' if policy.continuous else 'discrete'}",
        f"action_high {policy.action_high!r}",
        f"sigma {policy.sigma!r}",
        "params",
    ]
    lines.extend(repr(float(v)) for v in policy.get_flat())
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    os.replace(tmp, path)


def load_checkpoint(path: str) -> MlpPolicy:
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != "mlp-checkpoint v1":
        raise ConfigError(f"{path}: not a v1 checkpoint")
    header = {}
    split = lines.index("params")
    for ln in lines[1:split]:
        key, _, val = ln.partition(" ")
        header[key] = val
    sizes = tuple(int(s) for s in header["sizes"].split())
    policy = MlpPolicy(sizes[0], (sizes[1], sizes[2]), sizes[3],
                       continuous=header["head"] == "continuous",
                       action_high=float(header["action_high"]),
                       sigma=float(header["sigma"]))
    flat = np.array([float(v) for v in lines[split + 1:] if v], dtype=np.float64)
    policy.set_flat(flat)
    return policy
