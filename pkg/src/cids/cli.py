"""Batch experiment driver.

Subcommands: ``validate`` (model invariants), ``train`` (policy optimization
under a fixed prior), ``cids`` (the episodic loop), ``eval`` (policy blob
metrics), ``plot`` (SVG charts from run CSVs).  Configuration resolves as
flag > config file > profile > built-in default; every run directory gets a
manifest written before any compute starts, and re-running from a manifest
reproduces the CSV outputs byte for byte.

Exit codes: 0 success, 1 validation failure, 2 usage/IO error, 3 numerical
divergence.  Environment: CIDS_THREADS caps seed-level parallelism,
CIDS_OUT sets the default output root.
"""

from __future__ import annotations

import argparse
import copy
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import __version__
from .envs import DiscreteEnv, LightDarkEnv, LineGridConfig, linegrid_env, rollout, write_trajectory_csv
from .loop import CIDSConfig, run_cids
from .model import (
    ContextPosterior,
    LightDarkParams,
    model_from_json,
    posterior_entropy_bits,
    posterior_update,
    validate_model,
)
from .plots import MalformedCsvError, plot_csvs
from .policy import load_policy, save_policy
from .solver import SolverDivergenceError, VPGConfig, derive_seed, train

EXIT_OK, EXIT_INVALID, EXIT_USAGE, EXIT_DIVERGED = 0, 1, 2, 3

DEFAULTS = {
    "env": {
        "kind": "lightdark",
        # light-dark keys
        "sigma_p2": 0.1,
        "sigma_l2": 1.0,
        "sigma_d2": 8.0,
        "sigma_u2": 0.09,
        "step": 1.0,
        "horizon": 20,
        "discount": 0.95,
        "r_plus": 1.0,
        "r_minus": -1.0,
        # line-grid keys (horizon/discount shared above)
        "num_cells": 7,
        "high_reward": 50.0,
        "low_reward": 10.0,
        "detector_penalty": -50.0,
        "sense_accuracy": 1.0,
        "start_cell": 3,
        "grid_horizon": 8,
        # model-file key
        "model_path": "",
        "prior": [],
    },
    "vpg": {
        "tau": 0.2,
        "batch_size": 64,
        "learning_rate": 0.002,
        "iterations": 1500,
        "grad_clip": 50.0,
        "variance_baseline": True,
        "hidden_dim": 64,
    },
    "cids": {
        "episodes": 300,
        "inner_iterations": 20,
        "mc_samples": 32,
        "oracle_budget": 400,
    },
    "output": {"dir": ""},
    "seeds": [0, 1, 2, 3],
}

PROFILES = {
    # desk: calibrated for the small-batch budget (variance baseline on)
    "desk": {
        "vpg": {
            "tau": 0.2,
            "batch_size": 64,
            "learning_rate": 0.002,
            "iterations": 1500,
            "grad_clip": 50.0,
            "variance_baseline": True,
            "hidden_dim": 64,
        }
    },
    # paper: the raw estimator at full scale (no clip, no baseline)
    "paper": {
        "vpg": {
            "tau": 0.2,
            "batch_size": 200,
            "learning_rate": 0.001,
            "iterations": 10000,
            "grad_clip": None,
            "variance_baseline": False,
            "hidden_dim": 64,
        }
    },
}

CONFIG_KEY_HELP = """\
config keys (TOML sections; every key can also be set via --set SECTION.KEY=VALUE):
  [env]    kind (lightdark|linegrid|model-file), prior,
           sigma_p2 sigma_l2 sigma_d2 sigma_u2 step horizon discount r_plus r_minus,
           num_cells high_reward low_reward detector_penalty sense_accuracy
           start_cell grid_horizon, model_path
  [vpg]    tau batch_size learning_rate iterations grad_clip variance_baseline hidden_dim
  [cids]   episodes inner_iterations mc_samples oracle_budget
  [output] dir
  seeds = [0, 1, 2, 3]
environment: CIDS_THREADS (seed-level parallelism), CIDS_OUT (output root)
"""


class UsageError(ValueError):
    pass


def _deep_update(dst: dict, src: dict) -> dict:
    for k, v in src.items():
        if isinstance(v, dict) and isinstance(dst.get(k), dict):
            _deep_update(dst[k], v)
        else:
            dst[k] = v
    return dst


def _parse_set(value: str):
    if "=" not in value or "." not in value.split("=", 1)[0]:
        raise UsageError(f"--set expects SECTION.KEY=VALUE, got {value!r}")
    key, raw = value.split("=", 1)
    section, name = key.split(".", 1)
    try:
        parsed = json.loads(raw)
    except json.JSONDecodeError:
        parsed = raw
    return section, name, parsed


def resolve_config(args) -> dict:
    cfg = copy.deepcopy(DEFAULTS)
    if getattr(args, "replay", None):
        manifest = json.loads(Path(args.replay).read_text())
        _deep_update(cfg, manifest["resolved"])
    profile = getattr(args, "profile", None)
    if profile:
        if profile not in PROFILES:
            raise UsageError(f"unknown profile {profile!r}")
        _deep_update(cfg, copy.deepcopy(PROFILES[profile]))
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise UsageError(f"config file not found: {path}")
        _deep_update(cfg, tomllib.loads(path.read_text()))
    for item in getattr(args, "set", None) or []:
        section, name, value = _parse_set(item)
        if section == "seeds":
            raise UsageError("use --seeds to override seeds")
        cfg.setdefault(section, {})[name] = value
    # explicit flag overrides
    flag_map = {
        "env_kind": ("env", "kind"),
        "horizon": ("env", "horizon"),
        "tau": ("vpg", "tau"),
        "batch_size": ("vpg", "batch_size"),
        "learning_rate": ("vpg", "learning_rate"),
        "iterations": ("vpg", "iterations"),
        "hidden_dim": ("vpg", "hidden_dim"),
        "episodes": ("cids", "episodes"),
        "inner_iterations": ("cids", "inner_iterations"),
        "mc_samples": ("cids", "mc_samples"),
        "oracle_budget": ("cids", "oracle_budget"),
        "out": ("output", "dir"),
    }
    for attr, (section, name) in flag_map.items():
        value = getattr(args, attr, None)
        if value is not None:
            cfg[section][name] = value
    if getattr(args, "prior", None):
        cfg["env"]["prior"] = [float(x) for x in args.prior.split(",")]
    if getattr(args, "baseline", False):
        cfg["vpg"]["tau"] = 0.0
    if getattr(args, "seeds", None):
        cfg["seeds"] = [int(s) for s in args.seeds.split(",")]
    return cfg


def build_env(cfg: dict):
    env_cfg = cfg["env"]
    kind = env_cfg["kind"]
    if kind == "lightdark":
        params = LightDarkParams(
            sigma_p2=float(env_cfg["sigma_p2"]),
            sigma_l2=float(env_cfg["sigma_l2"]),
            sigma_d2=float(env_cfg["sigma_d2"]),
            sigma_u2=float(env_cfg["sigma_u2"]),
            step=float(env_cfg["step"]),
            horizon=int(env_cfg["horizon"]),
            discount=float(env_cfg["discount"]),
            r_plus=float(env_cfg["r_plus"]),
            r_minus=float(env_cfg["r_minus"]),
        )
        return LightDarkEnv(params)
    if kind == "linegrid":
        grid = LineGridConfig(
            num_cells=int(env_cfg["num_cells"]),
            high_reward=float(env_cfg["high_reward"]),
            low_reward=float(env_cfg["low_reward"]),
            detector_penalty=float(env_cfg["detector_penalty"]),
            sense_accuracy=float(env_cfg["sense_accuracy"]),
            horizon=int(env_cfg["grid_horizon"]),
            start_cell=int(env_cfg["start_cell"]),
            discount=float(env_cfg["discount"]),
        )
        return linegrid_env(grid)
    if kind == "model-file":
        path = Path(env_cfg["model_path"])
        if not path.exists():
            raise UsageError(f"model file not found: {path}")
        model = model_from_json(path.read_text())
        return DiscreteEnv(model, discount=float(env_cfg["discount"]))
    raise UsageError(f"unknown env kind {kind!r}")


def get_prior(cfg: dict, env) -> ContextPosterior:
    weights = cfg["env"].get("prior") or []
    if not weights:
        return ContextPosterior.uniform(env.num_contexts)
    w = np.asarray(weights, dtype=np.float64)
    if len(w) != env.num_contexts:
        raise UsageError("prior length does not match environment contexts")
    return ContextPosterior(w / w.sum())


def vpg_config(cfg: dict, seed: int) -> VPGConfig:
    v = cfg["vpg"]
    clip = v["grad_clip"]
    return VPGConfig(
        tau=float(v["tau"]),
        batch_size=int(v["batch_size"]),
        learning_rate=float(v["learning_rate"]),
        iterations=int(v["iterations"]),
        seed=seed,
        baseline_enabled=bool(v["variance_baseline"]),
        grad_clip=None if clip in (None, "none", -1) else float(clip),
        hidden_dim=int(v["hidden_dim"]),
    )


def make_run_dir(cfg: dict, name: str, run_dir_flag) -> Path:
    if run_dir_flag:
        root = Path(run_dir_flag)
    else:
        base = cfg["output"]["dir"] or os.environ.get("CIDS_OUT", "runs")
        stamp = time.strftime("%Y%m%d-%H%M%S")
        root = Path(base) / f"{name}-{stamp}"
        n = 1
        while root.exists():
            root = Path(base) / f"{name}-{stamp}-{n}"
            n += 1
    root.mkdir(parents=True, exist_ok=True)
    return root


def write_manifest(run_dir: Path, cfg: dict, command: str) -> Path:
    manifest = {
        "tool_version": __version__,
        "command": command,
        "resolved": {k: cfg[k] for k in ("env", "vpg", "cids", "output")},
        "seeds": cfg["seeds"],
    }
    path = run_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=1) + "\n")
    return path


def thread_count() -> int:
    raw = os.environ.get("CIDS_THREADS", "")
    if raw.strip():
        return max(1, int(raw))
    return os.cpu_count() or 1


def map_seeds(fn, seeds):
    """Run one job per seed; outputs depend only on each seed's own streams,
    so the worker count never changes results."""
    workers = min(thread_count(), len(seeds))
    if workers <= 1:
        return [fn(s) for s in seeds]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, seeds))


# ----------------------------------------------------------------- commands


def cmd_validate(args) -> int:
    path = Path(args.model)
    try:
        model = model_from_json(path.read_text())
    except (OSError, ValueError, KeyError) as e:
        print(f"error: cannot load model: {e}", file=sys.stderr)
        return EXIT_USAGE
    violations = validate_model(model)
    for v in violations:
        print(v)
    if violations:
        print(f"{len(violations)} violation(s)")
        return EXIT_INVALID
    print("model ok")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = resolve_config(args)
    env = build_env(cfg)
    prior = get_prior(cfg, env)
    run_dir = make_run_dir(cfg, "train", args.run_dir)
    write_manifest(run_dir, cfg, "train")

    def one_seed(seed: int):
        t0 = time.perf_counter()
        params, curve = train(env, prior, vpg_config(cfg, seed))
        seed_dir = run_dir / f"seed{seed}"
        seed_dir.mkdir(exist_ok=True)
        curve.write_csv(seed_dir / "curve.csv")
        save_policy(seed_dir / "policy.bin", params, env.env_tag)
        return seed, time.perf_counter() - t0, float(curve.mean_return[-1]) if len(curve.mean_return) else 0.0

    try:
        results = map_seeds(one_seed, cfg["seeds"])
    except SolverDivergenceError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DIVERGED
    for seed, dt, last in results:
        print(f"seed {seed}: trained in {dt:.1f}s, final batch return {last:.3f}")
    print(f"artifacts in {run_dir}")
    return EXIT_OK


def cmd_cids(args) -> int:
    cfg = resolve_config(args)
    env = build_env(cfg)
    prior = get_prior(cfg, env)
    run_dir = make_run_dir(cfg, "cids", args.run_dir)
    write_manifest(run_dir, cfg, "cids")
    c = cfg["cids"]

    def one_seed(seed: int):
        inner = vpg_config(cfg, seed)
        from dataclasses import replace

        inner = replace(inner, iterations=int(c["inner_iterations"]))
        cids_cfg = CIDSConfig(
            num_episodes=int(c["episodes"]),
            vpg=inner,
            mc_samples=int(c["mc_samples"]),
            seed=seed,
            oracle_policy_budget=int(c["oracle_budget"]),
        )
        c_star = int(
            np.random.default_rng([seed, 7001]).choice(env.num_contexts, p=prior.probs)
        )
        report = run_cids(env, c_star, cids_cfg, prior=prior)
        seed_dir = run_dir / f"seed{seed}"
        seed_dir.mkdir(exist_ok=True)
        report.write_csv(seed_dir / "report.csv")
        (seed_dir / "summary.json").write_text(json.dumps(report.summary(), indent=1) + "\n")
        return seed, report

    try:
        results = map_seeds(one_seed, cfg["seeds"])
    except SolverDivergenceError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DIVERGED

    summaries = {str(seed): report.summary() for seed, report in results}
    aggregate = {
        "seeds": cfg["seeds"],
        "mean_final_entropy_bits": float(
            np.mean([s["final_entropy_bits"] for s in summaries.values()])
        ),
        "mean_return_last_10pct": float(
            np.mean([s["mean_return_last_10pct"] for s in summaries.values()])
        ),
        "total_info_gain_bits": float(
            np.mean([s["total_info_gain_bits"] for s in summaries.values()])
        ),
        "tau_bound_violations": int(
            sum(s["tau_bound_violations"] for s in summaries.values())
        ),
        "per_seed": summaries,
    }
    (run_dir / "aggregate.json").write_text(json.dumps(aggregate, indent=1) + "\n")
    for seed, report in results:
        s = summaries[str(seed)]
        print(
            f"seed {seed}: c*={s['c_star']} final entropy {s['final_entropy_bits']:.4f} bits, "
            f"late return {s['mean_return_last_10pct']:.3f}, BR {s['final_br']:.2f}"
        )
    print(f"artifacts in {run_dir}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = resolve_config(args)
    env = build_env(cfg)
    prior = get_prior(cfg, env)
    if args.episodes < 1:
        print("error: need at least one evaluation episode", file=sys.stderr)
        return EXIT_USAGE
    try:
        params, tag = load_policy(args.policy)
    except (OSError, ValueError) as e:
        print(f"error: cannot load policy: {e}", file=sys.stderr)
        return EXIT_USAGE
    if params.input_dim != env.input_dim or params.num_actions != env.num_actions:
        print(
            f"error: policy dims (in={params.input_dim}, act={params.num_actions}) do not "
            f"match env (in={env.input_dim}, act={env.num_actions})",
            file=sys.stderr,
        )
        return EXIT_USAGE
    seed = cfg["seeds"][0]
    ctx_rng = np.random.default_rng([seed, 8001])
    contexts = ctx_rng.choice(env.num_contexts, size=args.episodes, p=prior.probs)
    results = [
        rollout(env, params, int(contexts[j]), np.random.default_rng([seed, 8002, j]))
        for j in range(args.episodes)
    ]
    returns = np.array([r.discounted_return for r in results])
    entropies = np.array(
        [
            posterior_entropy_bits(posterior_update(prior, env.obs_logliks(r.trajectory)))
            for r in results
        ]
    )
    metrics = {
        "episodes": args.episodes,
        "policy_env_tag": tag,
        "return_mean": float(returns.mean()),
        "return_std": float(returns.std(ddof=1)) if len(returns) > 1 else 0.0,
        "entropy_bits_mean": float(entropies.mean()),
        "entropy_bits_std": float(entropies.std(ddof=1)) if len(entropies) > 1 else 0.0,
    }
    text = json.dumps(metrics, indent=1)
    if args.out_json:
        Path(args.out_json).write_text(text + "\n")
    if args.dump_trajectories:
        write_trajectory_csv(args.dump_trajectories, results, debug=args.debug)
    print(text)
    return EXIT_OK


def cmd_plot(args) -> int:
    try:
        written = plot_csvs(args.csvs, args.out)
    except (OSError, MalformedCsvError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    for w in written:
        print(w)
    return EXIT_OK


# --------------------------------------------------------------------- main


def _add_config_flags(p: argparse.ArgumentParser, cids_flags: bool = False):
    p.add_argument("--config", help="TOML config file")
    p.add_argument("--profile", choices=sorted(PROFILES), help="preset defaults (desk|paper)")
    p.add_argument("--replay", help="manifest.json from a previous run to reproduce")
    p.add_argument(
        "--set",
        action="append",
        metavar="SECTION.KEY=VALUE",
        help="override any config key (repeatable)",
    )
    p.add_argument("--env", dest="env_kind", help="lightdark | linegrid | model-file")
    p.add_argument("--horizon", type=int, help="episode length")
    p.add_argument("--tau", type=float, help="information temperature")
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--learning-rate", type=float, dest="learning_rate")
    p.add_argument("--iterations", type=int, help="training iterations")
    p.add_argument("--hidden-dim", type=int, dest="hidden_dim")
    p.add_argument(
        "--baseline",
        action="store_true",
        help="train the reward-only ablation (sets tau = 0)",
    )
    p.add_argument("--prior", help="comma-separated context prior weights")
    p.add_argument("--seeds", help="comma-separated seed list")
    p.add_argument("--out", help="output root directory")
    p.add_argument("--run-dir", dest="run_dir", help="exact run directory (no timestamp)")
    if cids_flags:
        p.add_argument("--episodes", type=int, help="outer-loop episodes")
        p.add_argument("--inner-iterations", type=int, dest="inner_iterations")
        p.add_argument("--mc-samples", type=int, dest="mc_samples")
        p.add_argument("--oracle-budget", type=int, dest="oracle_budget")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cids",
        description="Contextual-POMDP planning with an information-directed objective",
        epilog=CONFIG_KEY_HELP,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check a model file's invariants")
    p.add_argument("model", help="cpomdp-v1 JSON file")
    p.set_defaults(fn=cmd_validate)

    p = sub.add_parser(
        "train",
        help="train a policy under a fixed prior",
        epilog=CONFIG_KEY_HELP,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    _add_config_flags(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser(
        "cids",
        help="run the episodic loop against a hidden context",
        epilog=CONFIG_KEY_HELP,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    _add_config_flags(p, cids_flags=True)
    p.set_defaults(fn=cmd_cids)

    p = sub.add_parser(
        "eval",
        help="evaluate a policy blob",
        epilog=CONFIG_KEY_HELP,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    p.add_argument("policy", help="policy-v1 blob")
    p.add_argument("--episodes", type=int, default=200)
    p.add_argument("--out-json", dest="out_json", help="write metrics JSON here")
    p.add_argument(
        "--dump-trajectories", dest="dump_trajectories", help="write per-step CSV here"
    )
    p.add_argument("--debug", action="store_true", help="include ground truth in dumps")
    _add_config_flags(p)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("plot", help="render SVG charts from run CSVs")
    p.add_argument("csvs", nargs="+", help="input CSV files")
    p.add_argument("--out", default="plots", help="output directory")
    p.set_defaults(fn=cmd_plot)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except UsageError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except SolverDivergenceError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
