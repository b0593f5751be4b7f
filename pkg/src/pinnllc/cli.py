"""Command-line front end.

Subcommands: train (grid training only), llc (estimate on a run's
checkpoints or a single checkpoint file), sweep (train + LLC over the full
grid), extrapolate (two-seed extended-horizon study), validate (toy-loss
oracle suite).  Flags mirror config fields and override the config file;
exit code is nonzero when any run or check fails.
"""

from __future__ import annotations

import argparse
import json
import sys

from .experiment import (
    ConfigError,
    _llc_config,
    _problem_from,
    config_hash,
    extrapolation_report,
    parse_config,
    run_experiment,
)
from .llc import cross_validate_estimator, estimate_llc
from .network import load_checkpoint
from .sampler import NutsConfig, SamplerFailure

__all__ = ["main", "build_parser"]


def _csv_ints(text):
    return [int(tok) for tok in text.split(",") if tok.strip()]


def _csv_floats(text):
    return [float(tok) for tok in text.split(",") if tok.strip()]


def build_parser():
    parser = argparse.ArgumentParser(
        prog="pinnllc",
        description="Constrained-network training and learning-coefficient "
                    "estimation for the forced heat problem.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(sp):
        sp.add_argument("--config", help="JSON config file (versioned schema)")
        sp.add_argument("--out-dir", help="output directory")
        sp.add_argument("--mask", choices=["domain", "unit"])
        sp.add_argument("--hidden", help="comma-separated hidden widths")
        sp.add_argument("--workers", type=int)

    def add_grid(sp, singular):
        if singular:
            sp.add_argument("--batch-size", type=int)
            sp.add_argument("--learning-rate", type=float)
            sp.add_argument("--seed", type=int)
        sp.add_argument("--batch-sizes", help="comma-separated batch sizes")
        sp.add_argument("--learning-rates", help="comma-separated rates")
        sp.add_argument("--seeds", help="comma-separated seeds")
        sp.add_argument("--iterations", type=int)
        sp.add_argument("--log-every", type=int)
        sp.add_argument("--checkpoint-every", type=int)

    def add_llc(sp):
        sp.add_argument("--llc-n", type=int)
        sp.add_argument("--llc-gamma", type=float)
        sp.add_argument("--llc-sigma", type=float)
        sp.add_argument("--llc-chains", type=int)
        sp.add_argument("--llc-warmup", type=int)
        sp.add_argument("--llc-draws", type=int)
        sp.add_argument("--llc-target-accept", type=float)
        sp.add_argument("--llc-max-tree-depth", type=int)
        sp.add_argument("--llc-mass-matrix",
                        choices=["identity", "adapted-diagonal"])
        sp.add_argument("--llc-seed", type=int)
        sp.add_argument("--llc-points-seed", type=int)

    sp = sub.add_parser("train", help="train the configured grid cells")
    add_common(sp)
    add_grid(sp, singular=True)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("llc", help="estimate the learning coefficient")
    add_common(sp)
    add_grid(sp, singular=True)
    add_llc(sp)
    sp.add_argument("--checkpoint", help="estimate at one checkpoint file")
    sp.add_argument("--out", help="write the single estimate as JSON here")
    sp.set_defaults(func=cmd_llc)

    sp = sub.add_parser("sweep", help="train + LLC sweep over the full grid")
    add_common(sp)
    add_grid(sp, singular=False)
    add_llc(sp)
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("extrapolate",
                        help="two-seed extended-horizon error study")
    add_common(sp)
    sp.add_argument("--extrap-seeds", help="comma-separated seeds")
    sp.add_argument("--extrap-iterations", type=int)
    sp.add_argument("--extrap-horizon", type=float)
    sp.add_argument("--extrap-grid-nx", type=int)
    sp.add_argument("--extrap-grid-nt", type=int)
    sp.add_argument("--extrap-batch-size", type=int)
    sp.add_argument("--extrap-learning-rate", type=float)
    sp.set_defaults(func=cmd_extrapolate)

    sp = sub.add_parser("validate", help="run the toy-loss oracle suite")
    add_common(sp)
    add_llc(sp)
    sp.add_argument("--mc-samples", type=int, default=200_000)
    sp.set_defaults(func=cmd_validate)

    return parser


def _raw_config(args):
    if getattr(args, "config", None):
        with open(args.config, "r", encoding="utf-8") as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(
                    f"config parse error at line {exc.lineno}, column "
                    f"{exc.colno}: {exc.msg}") from exc
        if not isinstance(data, dict):
            raise ConfigError("config root must be a JSON object")
        return data
    return {"schema_version": 1}


def _set(data, section, key, value):
    if value is not None:
        if section is None:
            data[key] = value
        else:
            data.setdefault(section, {})[key] = value


def _effective_config(args, single_cell=False):
    """Config file merged with flag overrides, then schema-validated."""
    data = _raw_config(args)
    _set(data, None, "out_dir", getattr(args, "out_dir", None))
    _set(data, None, "workers", getattr(args, "workers", None))
    hidden = getattr(args, "hidden", None)
    _set(data, "network", "hidden", _csv_ints(hidden) if hidden else None)
    _set(data, "network", "mask", getattr(args, "mask", None))

    if single_cell:
        for flag, key in (("batch_size", "batch_sizes"),
                          ("learning_rate", "learning_rates"),
                          ("seed", "seeds")):
            value = getattr(args, flag, None)
            if value is not None:
                _set(data, "grid", key, [value])
    for flag, key, conv in (("batch_sizes", "batch_sizes", _csv_ints),
                            ("learning_rates", "learning_rates", _csv_floats),
                            ("seeds", "seeds", _csv_ints)):
        value = getattr(args, flag, None)
        if value is not None:
            _set(data, "grid", key, conv(value))
    for flag in ("iterations", "log_every", "checkpoint_every"):
        _set(data, "train", flag, getattr(args, flag, None))

    llc_map = (("llc_n", "n"), ("llc_gamma", "gamma"), ("llc_sigma", "sigma"),
               ("llc_chains", "chains"), ("llc_warmup", "warmup_draws"),
               ("llc_draws", "main_draws"),
               ("llc_target_accept", "target_accept"),
               ("llc_max_tree_depth", "max_tree_depth"),
               ("llc_mass_matrix", "mass_matrix"), ("llc_seed", "seed"),
               ("llc_points_seed", "points_seed"))
    for flag, key in llc_map:
        _set(data, "llc", key, getattr(args, flag, None))

    ext_map = (("extrap_seeds", "seeds", _csv_ints),
               ("extrap_iterations", "iterations", None),
               ("extrap_horizon", "horizon", None),
               ("extrap_grid_nx", "grid_nx", None),
               ("extrap_grid_nt", "grid_nt", None),
               ("extrap_batch_size", "batch_size", None),
               ("extrap_learning_rate", "learning_rate", None))
    for flag, key, conv in ext_map:
        value = getattr(args, flag, None)
        if value is not None:
            _set(data, "extrapolation", key, conv(value) if conv else value)
    return parse_config(data)


def _report_runs(report):
    failed = 0
    for rec in report.runs:
        line = f"{rec['run_id']}: {rec['status']}"
        if "final_lambda_hat" in rec:
            lo, hi = rec["final_lambda_ci"]
            line += (f"  lambda_hat={rec['final_lambda_hat']:.4g} "
                     f"ci=[{lo:.4g}, {hi:.4g}]")
        elif "final_train_loss" in rec:
            line += f"  train_loss={rec['final_train_loss']:.4g}"
        if rec["status"] != "complete":
            failed += 1
            line += f"  error: {rec.get('error', 'unknown')}"
        print(line)
    print(f"summary: {report.summary_path}")
    return failed


def cmd_train(args):
    cfg = _effective_config(args, single_cell=True)
    report = run_experiment(cfg, stages=("train",))
    return 1 if _report_runs(report) else 0


def cmd_llc(args):
    cfg = _effective_config(args, single_cell=True)
    if args.checkpoint:
        ck = load_checkpoint(args.checkpoint)
        problem = _problem_from(cfg)
        try:
            est = estimate_llc(problem, ck.arch, ck.params, _llc_config(cfg),
                               cfg.mask)
        except (SamplerFailure, ValueError) as exc:
            print(f"estimation failed: {exc}", file=sys.stderr)
            return 1
        print(f"iteration={ck.iteration} lambda_hat={est.lambda_hat:.6g} "
              f"ci=[{est.ci_low:.6g}, {est.ci_high:.6g}] ess={est.ess:.1f} "
              f"divergences={est.divergences} negative={est.negative_flag}")
        if args.out:
            payload = {
                "config_hash": config_hash(cfg),
                "checkpoint": args.checkpoint,
                "iteration": ck.iteration,
                "lambda_hat": est.lambda_hat,
                "ci": [est.ci_low, est.ci_high],
                "ess": est.ess,
                "divergences": est.divergences,
                "negative_flag": est.negative_flag,
            }
            with open(args.out, "w", encoding="utf-8") as fh:
                json.dump(payload, fh, sort_keys=True, indent=1)
                fh.write("\n")
        return 0
    report = run_experiment(cfg, stages=("train", "llc"))
    return 1 if _report_runs(report) else 0


def cmd_sweep(args):
    cfg = _effective_config(args)
    report = run_experiment(cfg, stages=("train", "llc"))
    return 1 if _report_runs(report) else 0


def cmd_extrapolate(args):
    cfg = _effective_config(args)
    payload = extrapolation_report(cfg)
    for row in payload["seeds"]:
        print(f"seed {row['seed']}: eval_loss={row['eval_loss']:.4g} "
              f"interior_mse={row['interior_mse']:.4g} "
              f"extrapolation_mse={row['extrapolation_mse']:.4g} "
              f"(x{row['extrapolation_over_interior']:.1f})")
    print(f"extrapolation MSE ratio between seeds: "
          f"{payload['extrapolation_mse_ratio']:.3f} "
          f"(relative difference "
          f"{payload['extrapolation_mse_relative_difference']:.3f})")
    return 0


def cmd_validate(args):
    cfg = _effective_config(args)
    sampler = NutsConfig(
        warmup_draws=cfg.llc_warmup, main_draws=cfg.llc_draws,
        target_accept=cfg.llc_target_accept,
        max_tree_depth=cfg.llc_max_tree_depth,
        mass_matrix=cfg.llc_mass_matrix, seed=cfg.llc_seed)
    rows = cross_validate_estimator(n=cfg.llc_n, gamma=cfg.llc_gamma,
                                    sampler=sampler, chains=cfg.llc_chains,
                                    mc_samples=args.mc_samples)
    volume_bands = {"quadratic-1d": (0.45, 0.55), "isotropic-2d": (0.95, 1.05),
                    "monomial-2d": (0.4, 0.6), "constant": (-0.05, 0.05)}
    failures = 0
    for row in rows:
        checks = []
        if row["closed_form"] is not None:
            half = row["ci_high"] - row["mcmc_lambda"]
            ok = row["mcmc_vs_closed"] <= 3.0 * max(half, 1e-12)
            checks.append(("mcmc vs closed", ok))
        if row["volume_lambda"] is not None:
            lo, hi = volume_bands[row["name"]]
            checks.append(("volume slope", lo <= row["volume_lambda"] <= hi))
        else:
            checks.append(("volume slope", False))
        ok_all = all(ok for _, ok in checks)
        failures += 0 if ok_all else 1
        closed = ("-" if row["closed_form"] is None
                  else f"{row['closed_form']:.4g}")
        vol = ("-" if row["volume_lambda"] is None
               else f"{row['volume_lambda']:.4g}")
        print(f"{row['name']:<14} mcmc={row['mcmc_lambda']:.4g} "
              f"ci=[{row['ci_low']:.4g}, {row['ci_high']:.4g}] "
              f"closed={closed} volume={vol} "
              f"{'ok' if ok_all else 'FAIL'}")
    return 1 if failures else 0


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
