"""Command-line front end.

Subcommands: ``bench`` (seeded benchmark -> JSON report + per-episode
CSV), ``train`` (policy-gradient runs -> checkpoints + learning-curve
CSV), ``eval`` (benchmark a saved checkpoint), ``oracle`` (independent
cross-check suites), and ``presets`` (list built-in environments).

Exit codes are a stable contract: 0 success, 1 runtime failure,
2 usage error. ORL_SEED supplies the default master seed. A config file
(flat ``key value`` lines under ``[section]`` headers, where sections
are subcommand names) provides defaults that flags override.

CSV schemas:
  bench episodes: episode,master_seed,stream,steps,total_reward
  train curve:    iteration,mean_reward,min_reward,max_reward[,baseline_mean]
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import binpack
from . import newsvendor
from .core import ConfigError, Policy, RandomPolicy, run_benchmark
from .learn import (
    LearnedPolicy,
    MlpPolicy,
    TrainerConfig,
    collect_batch,
    gradient_check,
    load_checkpoint,
    policy_for_env,
    surrogate_loss,
    train,
)
from .vrp import env as vrp_env
from .vrp import mip as vrp_mip

__all__ = ["main", "entry", "parse_env", "parse_policy", "read_config"]


class UsageError(Exception):
    pass


# -- environment / policy resolution ---------------------------------------

def parse_env(ident: str, horizon: int | None = None):
    """'binpack:bw100', 'newsvendor', 'newsvendor:fixed',
    'vrp:5x5-2p-5o' (optionally '-hot') -> (make_env, label)."""
    family, _, variant = ident.partition(":")
    if family == "binpack":
        if not variant:
            raise UsageError("binpack needs a preset, e.g. binpack:bw100")
        try:
            cfg = binpack.preset(variant, horizon=horizon)
        except ConfigError as exc:
            raise UsageError(str(exc))
        return (lambda: binpack.BinPackEnv(cfg)), f"binpack-{variant}"
    if family == "newsvendor":
        if variant not in ("", "fixed"):
            raise UsageError("newsvendor variants: newsvendor | newsvendor:fixed")
        fixed = newsvendor.FIXED_SLICE if variant == "fixed" else None
        name = "newsvendor-fixed" if fixed else "newsvendor"
        cfg = newsvendor.NewsvendorConfig(fixed_params=fixed, name=name)
        return (lambda: newsvendor.NewsvendorEnv(cfg)), name
    if family == "vrp":
        if not variant:
            raise UsageError("vrp needs a preset, e.g. vrp:5x5-2p-5o")
        base, hot = (variant[:-4], True) if variant.endswith("-hot") else (variant, False)
        try:
            cfg = vrp_env.preset(base)
        except ConfigError as exc:
            raise UsageError(str(exc))
        if hot:
            cfg = vrp_env.with_hot_zones(cfg)
        return (lambda: vrp_env.VrpEnv(cfg)), f"vrp-{variant}"
    raise UsageError(f"unknown environment family '{family}' "
                     f"(choices: binpack, newsvendor, vrp)")


def parse_policy(ident: str, make_env):
    """Policy id -> Policy instance or per-episode factory."""
    probe = make_env()
    family = probe.env_id.split(":")[0]
    if ident == "random":
        return RandomPolicy()
    if ident == "best_fit":
        if family != "binpack":
            raise UsageError("best_fit only applies to binpack environments")
        return binpack.BestFitPolicy()
    if ident == "sum_of_squares":
        if family != "binpack":
            raise UsageError("sum_of_squares only applies to binpack environments")
        return binpack.SumOfSquaresPolicy()
    if ident == "base_stock":
        if family != "newsvendor":
            raise UsageError("base_stock only applies to the newsvendor environment")
        return newsvendor.BaseStockPolicy()
    if ident == "mip":
        if family != "vrp":
            raise UsageError("mip only applies to vrp environments")
        return lambda: vrp_mip.MipControllerPolicy()
    if ident.startswith("learned:"):
        path = ident[len("learned:"):]
        if not os.path.exists(path):
            raise UsageError(f"checkpoint not found: {path}")
        mlp = load_checkpoint(path)
        if (mlp.sizes[0] != probe.observation_size
                or mlp.sizes[-1] != probe.action_size
                or mlp.continuous != probe.continuous_actions):
            raise UsageError(
                f"checkpoint shape {mlp.sizes} does not fit environment "
                f"{probe.env_id} (obs {probe.observation_size}, "
                f"actions {probe.action_size})")
        return LearnedPolicy(mlp)
    raise UsageError(
        f"unknown policy '{ident}' (choices: best_fit, sum_of_squares, "
        f"base_stock, mip, learned:<checkpoint>, random)")


# -- config file -------------------------------------------------------------

def read_config(path: str) -> dict[str, dict[str, str]]:
    """Flat ``key value`` (or ``key = value``) lines under [section]
    headers; '#' starts a comment line."""
    sections: dict[str, dict[str, str]] = {}
    current = ""
    with open(path) as fh:
        for raw in fh:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if line.startswith("[") and line.endswith("]"):
                current = line[1:-1].strip()
                sections.setdefault(current, {})
                continue
            if "=" in line:
                key, _, val = line.partition("=")
            else:
                key, _, val = line.partition(" ")
            sections.setdefault(current, {})[key.strip()] = val.strip()
    return sections


def _resolve(args, section: dict[str, str], key: str, default, cast):
    flag = getattr(args, key.replace("-", "_"), None)
    if flag is not None:
        return flag
    if key in section:
        try:
            return cast(section[key])
        except ValueError:
            raise UsageError(f"config value for '{key}' is not a valid "
                             f"{cast.__name__}: {section[key]!r}")
    return default


def _default_seed() -> int:
    raw = os.environ.get("ORL_SEED", "")
    if raw:
        try:
            return int(raw)
        except ValueError:
            raise UsageError(f"ORL_SEED must be an integer, got {raw!r}")
    return 0


def _write_atomic(path: str, text: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


# -- subcommands -------------------------------------------------------------

def cmd_bench(args) -> int:
    section = args.config_data.get("bench", {})
    env_spec = _resolve(args, section, "env", None, str)
    policy_spec = _resolve(args, section, "policy", None, str)
    episodes = _resolve(args, section, "episodes", None, int)
    seed = _resolve(args, section, "seed", _default_seed(), int)
    workers = _resolve(args, section, "workers", 1, int)
    horizon = _resolve(args, section, "horizon", None, int)
    if env_spec is None or policy_spec is None:
        raise UsageError("bench requires --env and --policy")
    if episodes is None or episodes < 1:
        raise UsageError("--episodes must be at least 1")
    make_env, label = parse_env(env_spec, horizon=horizon)
    policy = parse_policy(policy_spec, make_env)
    pname = policy.name if isinstance(policy, Policy) else policy().name

    report, results = run_benchmark(make_env, policy, episodes, seed,
                                    workers=workers)
    out = args.out or f"bench_{label}_{pname}_s{seed}"
    json_text = json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"
    csv_lines = ["episode,master_seed,stream,steps,total_reward"]
    for i, r in enumerate(results):
        csv_lines.append(f"{i},{r.seed[0]},{r.seed[1]},{r.steps},{r.total_reward!r}")
    _write_atomic(out + ".json", json_text)
    _write_atomic(out + ".csv", "\n".join(csv_lines) + "\n")
    print(f"{report.env}  {report.policy}  n={report.n}  "
          f"mean={report.mean:.4f}  std={report.std:.4f}  "
          f"min={report.min:.4f}  max={report.max:.4f}  seed={seed}")
    print(f"wrote {out}.json and {out}.csv")
    return 0


def cmd_eval(args) -> int:
    section = args.config_data.get("eval", {})
    env_spec = _resolve(args, section, "env", None, str)
    checkpoint = _resolve(args, section, "checkpoint", None, str)
    episodes = _resolve(args, section, "episodes", 100, int)
    seed = _resolve(args, section, "seed", _default_seed(), int)
    workers = _resolve(args, section, "workers", 1, int)
    if env_spec is None or checkpoint is None:
        raise UsageError("eval requires --env and --checkpoint")
    if episodes < 1:
        raise UsageError("--episodes must be at least 1")
    make_env, label = parse_env(env_spec)
    policy = parse_policy(f"learned:{checkpoint}", make_env)
    policy.deterministic = bool(args.deterministic)
    report, _ = run_benchmark(make_env, policy, episodes, seed, workers=workers)
    print(f"{report.env}  learned({os.path.basename(checkpoint)})  "
          f"n={report.n}  mean={report.mean:.4f}  std={report.std:.4f}  "
          f"min={report.min:.4f}  max={report.max:.4f}  seed={seed}")
    if args.out:
        _write_atomic(args.out,
                      json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
        print(f"wrote {args.out}")
    return 0


def _parse_hidden(text: str) -> tuple[int, int]:
    try:
        parts = tuple(int(p) for p in text.split(","))
    except ValueError:
        raise UsageError(f"--hidden expects 'H1,H2', got {text!r}")
    if len(parts) != 2 or min(parts) < 1:
        raise UsageError(f"--hidden expects two positive sizes, got {text!r}")
    return parts


def cmd_train(args) -> int:
    section = args.config_data.get("train", {})
    env_spec = _resolve(args, section, "env", None, str)
    iterations = _resolve(args, section, "iterations", 200, int)
    seed = _resolve(args, section, "seed", _default_seed(), int)
    out_dir = _resolve(args, section, "out-dir", None, str)
    hidden = _parse_hidden(_resolve(args, section, "hidden", "64,32", str))
    horizon = _resolve(args, section, "horizon", None, int)
    checkpoint_every = _resolve(args, section, "checkpoint-every", 50, int)
    baseline_spec = _resolve(args, section, "baseline", None, str)
    config = TrainerConfig(
        learning_rate=_resolve(args, section, "lr", 0.05, float),
        discount=_resolve(args, section, "discount", 0.995, float),
        batch_size=_resolve(args, section, "batch", 16, int),
        clip_eps=_resolve(args, section, "clip", 0.3, float),
        epochs=_resolve(args, section, "epochs", 4, int),
        entropy_coef=_resolve(args, section, "entropy", 0.0, float),
    )
    if env_spec is None or out_dir is None:
        raise UsageError("train requires --env and --out-dir")
    if iterations < 1:
        raise UsageError("--iterations must be at least 1")
    make_env, label = parse_env(env_spec, horizon=horizon)

    os.makedirs(out_dir, exist_ok=True)
    if not os.access(out_dir, os.W_OK):
        raise OSError(f"output directory is not writable: {out_dir}")

    policy = None
    start_iteration = 0
    if args.resume:
        policy = load_checkpoint(args.resume)
        stem = os.path.splitext(os.path.basename(args.resume))[0]
        digits = stem.rsplit("_", 1)[-1]
        if args.start_iteration is not None:
            start_iteration = args.start_iteration
        elif digits.isdigit():
            start_iteration = int(digits)
    baseline_mean = None
    if baseline_spec:
        baseline = parse_policy(baseline_spec, make_env)
        base_report, _ = run_benchmark(make_env, baseline,
                                       max(config.batch_size, 20), seed)
        baseline_mean = base_report.mean

    policy, curve = train(
        make_env, config, iterations, master_seed=seed, policy=policy,
        hidden=hidden, checkpoint_dir=out_dir,
        checkpoint_every=checkpoint_every, start_iteration=start_iteration,
        max_seconds=args.max_seconds)

    header = "iteration,mean_reward,min_reward,max_reward"
    if baseline_mean is not None:
        header += ",baseline_mean"
    rows = [header]
    for it, mean, lo, hi in curve:
        row = f"{it},{mean!r},{lo!r},{hi!r}"
        if baseline_mean is not None:
            row += f",{baseline_mean!r}"
        rows.append(row)
    curve_path = os.path.join(out_dir, "curve.csv")
    _write_atomic(curve_path, "\n".join(rows) + "\n")
    final = curve[-1]
    print(f"{label}: {len(curve)} iterations, final mean reward {final[1]:.4f}")
    print(f"wrote {curve_path} and checkpoints in {out_dir}")
    return 0


# -- oracle suites -----------------------------------------------------------

def _oracle_ss_equivalence() -> int:
    rng = np.random.default_rng(20240817)
    cases = 0
    for _ in range(500):
        B = int(rng.choice((9, 100)))
        sizes = (2, 3) if B == 9 else tuple(range(1, 10))
        counts = [0] * (B + 1)
        for h in rng.integers(1, B, size=rng.integers(0, 12)):
            counts[int(h)] += 1
        item = int(sizes[rng.integers(len(sizes))])
        state = binpack.BinPackState(B, item, counts, 0, 1000)
        lhs = binpack.sum_of_squares_argmin(state)
        rhs = binpack.census_square_argmin(state)
        if lhs != rhs:
            print("ss-equivalence MISMATCH")
            print(f"  bin_size={B} item={item}")
            print(f"  counts={ {h: c for h, c in enumerate(counts) if c} }")
            print(f"  score-based argmin {lhs} != census argmin {rhs}")
            return 1
        cases += 1
    print(f"ss-equivalence: {cases} random censuses agree")
    return 0


def _oracle_mip_exhaustive() -> int:
    rng = np.random.default_rng(7)
    for trial in range(100):
        n = int(rng.integers(0, 3))
        n_transit = int(rng.integers(0, min(2, 4 - n) + 1))
        n_rest = int(rng.integers(1, 4))
        n_nodes = 1 + 2 * n + n_transit + n_rest
        coords = tuple((int(rng.integers(6)), int(rng.integers(6)))
                       for _ in range(n_nodes))
        inst = vrp_mip.MipInstance(
            coords=coords, n=n, n_transit=n_transit,
            accepted=frozenset(k for k in range(n) if rng.random() < 0.4),
            revenues=tuple(float(np.round(rng.uniform(0.5, 12.0), 3))
                           for _ in range(n)),
            deadlines=tuple(float(rng.integers(2, 30))
                            for _ in range(n + n_transit)),
            move_cost=0.1, time_per_cell=1.0, service_time=1.0,
            capacity=int(rng.integers(max(n_transit, 1), 5)), big_m=500.0)
        got = vrp_mip.solve(inst)
        want = vrp_mip.exhaustive_oracle(inst)
        if abs(got.objective - want.objective) > 1e-9:
            print(f"mip-exhaustive MISMATCH on instance {trial}: "
                  f"solver {got.objective!r} oracle {want.objective!r}")
            print(vrp_mip.dump_instance(inst))
            return 1
    print("mip-exhaustive: 100 random instances agree")
    return 0


# (mean, quantile) -> order-up-to level, cross-checked below with an
# extended-precision recomputation
_POISSON_PINS = [
    (0.0, 0.5, 0),
    (0.5, 0.999, 4),
    (2.0, 0.5, 2),
    (3.7, 0.25, 2),
    (100.0, 30.0 / 30.5, 122),
    (200.0, 0.99, 234),
    (500.0, 0.5, 500),
    (500.0, 30.0 / 30.5, 548),
    (745.0, 0.5, 745),
    (1000.0, 0.9, 1041),
]


def _oracle_poisson_quantile() -> int:
    import mpmath

    failures = 0
    print(f"{'mean':>8}  {'quantile':>18}  {'z':>5}  check")
    for mean, q, expected in _POISSON_PINS:
        got = newsvendor.poisson_inv_cdf(mean, q)
        with mpmath.workdps(60):
            mu = mpmath.mpf(mean)
            cum = mpmath.mpf(0)
            z = 0
            ref = None
            while True:
                cum += mpmath.exp(-mu) * mu ** z / mpmath.factorial(z)
                if cum >= q:
                    ref = z
                    break
                z += 1
                if z > 10 * (mean + 20):
                    break
        ok = got == expected == ref
        print(f"{mean:8.1f}  {q:18.12f}  {got:5d}  "
              f"{'ok' if ok else f'MISMATCH (pinned {expected}, mp {ref})'}")
        if not ok:
            failures += 1
    if failures:
        print(f"poisson-quantile: {failures} mismatches")
        return 1
    print("poisson-quantile: all pins agree with the extended-precision sum")
    return 0


def _oracle_gradient_check() -> int:
    def quad_loss(policy):
        flat = policy.get_flat()
        return 0.5 * float(flat @ flat), flat.copy()

    failures = []
    err = gradient_check(MlpPolicy(4, (8, 8), 5, seed=2), quad_loss, n_checks=60)
    print(f"quadratic loss: max relative error {err:.3e} (limit 1e-06)")
    if err >= 1e-6:
        failures.append("quadratic")

    cfg = binpack.preset("bw9", horizon=30)
    make_env = lambda: binpack.BinPackEnv(cfg)
    tc = TrainerConfig(batch_size=4, entropy_coef=0.01)
    pol = policy_for_env(make_env(), hidden=(16, 8), seed=5)
    batch = collect_batch(make_env, pol, tc, master_seed=11, iteration=0)
    err = gradient_check(pol, surrogate_loss(batch, tc), n_checks=80)
    print(f"masked discrete surrogate: max relative error {err:.3e} (limit 1e-04)")
    if err >= 1e-4:
        failures.append("discrete-surrogate")

    nv_cfg = newsvendor.NewsvendorConfig(fixed_params=newsvendor.FIXED_SLICE,
                                         horizon=10, name="nv-check")
    make_nv = lambda: newsvendor.NewsvendorEnv(nv_cfg)
    pol = policy_for_env(make_nv(), hidden=(16, 8), seed=6)
    batch = collect_batch(make_nv, pol, tc, master_seed=12, iteration=0)
    err = gradient_check(pol, surrogate_loss(batch, tc), n_checks=80)
    print(f"continuous surrogate: max relative error {err:.3e} (limit 1e-04)")
    if err >= 1e-4:
        failures.append("continuous-surrogate")

    if failures:
        print("gradient-check failed:", ", ".join(failures))
        return 1
    print("gradient-check: analytic gradients match finite differences")
    return 0


_ORACLE_SUITES = {
    "ss-equivalence": _oracle_ss_equivalence,
    "mip-exhaustive": _oracle_mip_exhaustive,
    "poisson-quantile": _oracle_poisson_quantile,
    "gradient-check": _oracle_gradient_check,
}


def cmd_oracle(args) -> int:
    suite = _ORACLE_SUITES.get(args.suite)
    if suite is None:
        raise UsageError(f"unknown oracle suite '{args.suite}' "
                         f"(choices: {', '.join(sorted(_ORACLE_SUITES))})")
    return suite()


def cmd_presets(args) -> int:
    print("binpack:")
    for name in sorted(binpack.PRESETS):
        cfg = binpack.PRESETS[name]
        sizes = ",".join(str(s) for s in cfg.distribution.sizes)
        print(f"  binpack:{name:<8} bin_size={cfg.bin_size:<4} "
              f"horizon={cfg.horizon:<5} sizes={sizes}")
    print("newsvendor:")
    print("  newsvendor        per-episode sampled (price, cost, holding, penalty, demand)")
    print("  newsvendor:fixed  fixed slice "
          f"{newsvendor.FIXED_SLICE}")
    print("vrp:")
    for name in sorted(vrp_env.PRESETS):
        cfg = vrp_env.PRESETS[name]
        print(f"  vrp:{name:<12} grid={cfg.map_size[0]}x{cfg.map_size[1]} "
              f"pickups={cfg.n_pickup} slots={cfg.max_orders} "
              f"episode={cfg.episode_len}")
    print("  (append -hot to any vrp preset for the shifted value mix)")
    return 0


# -- entry point -------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="orbench",
        description="Benchmarks, training, and oracle cross-checks for the "
                    "three sequential-decision environments.")
    parser.add_argument("--config", help="flat key-value config file with "
                                         "[bench]/[train]/[eval] sections")
    sub = parser.add_subparsers(dest="command", required=True)

    b = sub.add_parser("bench", help="run a seeded benchmark")
    b.add_argument("--env", help="binpack:<preset> | newsvendor[:fixed] | vrp:<preset>")
    b.add_argument("--policy", help="best_fit | sum_of_squares | base_stock | "
                                    "mip | learned:<checkpoint> | random")
    b.add_argument("--episodes", type=int)
    b.add_argument("--seed", type=int, help="master seed (default ORL_SEED or 0)")
    b.add_argument("--workers", type=int)
    b.add_argument("--horizon", type=int, help="override binpack episode length")
    b.add_argument("--out", help="output prefix for .json/.csv "
                                 "(default derived from env/policy/seed)")
    b.set_defaults(func=cmd_bench)

    t = sub.add_parser("train", help="train the policy-gradient learner")
    t.add_argument("--env")
    t.add_argument("--iterations", type=int)
    t.add_argument("--seed", type=int)
    t.add_argument("--out-dir", dest="out_dir")
    t.add_argument("--lr", type=float)
    t.add_argument("--discount", type=float)
    t.add_argument("--batch", type=int)
    t.add_argument("--clip", type=float)
    t.add_argument("--epochs", type=int)
    t.add_argument("--entropy", type=float)
    t.add_argument("--hidden", help="hidden layer sizes, e.g. 64,32")
    t.add_argument("--horizon", type=int)
    t.add_argument("--checkpoint-every", dest="checkpoint_every", type=int)
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--start-iteration", dest="start_iteration", type=int,
                   help="stream offset when resuming (default: from filename)")
    t.add_argument("--baseline", help="policy id for a curve reference column")
    t.add_argument("--max-seconds", dest="max_seconds", type=float)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="benchmark a saved checkpoint")
    e.add_argument("--env")
    e.add_argument("--checkpoint")
    e.add_argument("--episodes", type=int)
    e.add_argument("--seed", type=int)
    e.add_argument("--workers", type=int)
    e.add_argument("--deterministic", action="store_true",
                   help="act greedily instead of sampling")
    e.add_argument("--out", help="optional JSON report path")
    e.set_defaults(func=cmd_eval)

    o = sub.add_parser("oracle", help="run an independent cross-check suite")
    o.add_argument("suite", help=" | ".join(sorted(_ORACLE_SUITES)))
    o.set_defaults(func=cmd_oracle)

    p = sub.add_parser("presets", help="list built-in environment presets")
    p.set_defaults(func=cmd_presets)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse reports its own usage errors
        return int(exc.code or 0)
    args.config_data = read_config(args.config) if args.config else {}
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"failure: {exc}", file=sys.stderr)
        return 1


def entry() -> None:
    sys.exit(main())
