"""Experiment orchestration: config files, the training/LLC grid, the
extrapolation study, and plot-ready data emission.

Every output file carries the config hash, the summary file contains no
wall-clock data (timings go to their own CSV), and completed runs are skipped
on rerun by artifact presence plus hash match, so a rerun with the same
config reproduces the summary byte for byte.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .llc import LlcConfig, llc_sweep, save_llc_csv
from .network import MlpArchitecture, hard_constrained_u, load_checkpoint
from .problem import HeatIbvp, default_heat_problem, pinn_loss, sample_inputs
from .sampler import NutsConfig
from .train import TrainConfig, load_train_log, train

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "ExperimentReport",
    "load_config",
    "parse_config",
    "config_hash",
    "run_id",
    "expand_cells",
    "run_experiment",
    "extrapolation_report",
    "emit_plot_data",
]

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Config file rejected: parse failure, unknown field, or bad value."""


@dataclass(frozen=True)
class ExperimentConfig:
    out_dir: str = "runs"
    hidden: tuple = (100, 100, 100)
    activation: str = "tanh"
    mask: str = "domain"
    x_lo: float = 0.0
    x_hi: float = 2.0
    t_max: float = 2.0
    batch_sizes: tuple = (8, 16, 32)
    learning_rates: tuple = (1e-3, 1e-4)
    seeds: tuple = (0,)
    iterations: int = 50_000
    log_every: int = 100
    checkpoint_every: int = 10_000
    eval_points: int = 4096
    eval_seed: int = 424242
    llc_n: int = 256
    llc_gamma: float = 1.0
    llc_sigma: float = 1.0
    llc_chains: int = 2
    llc_warmup: int = 1000
    llc_draws: int = 1000
    llc_target_accept: float = 0.8
    llc_max_tree_depth: int = 10
    llc_mass_matrix: str = "identity"
    llc_seed: int = 0
    llc_points_seed: int = 0
    extrap_seeds: tuple = (0, 1)
    extrap_iterations: int = 100_000
    extrap_batch_size: int = 32
    extrap_learning_rate: float = 1e-4
    extrap_horizon: float = 2.0
    extrap_grid_nx: int = 101
    extrap_grid_nt: int = 101
    workers: int = 1


def _expect(cond, message):
    if not cond:
        raise ConfigError(message)


def _pop_scalar(section, key, default, path, kind):
    value = section.pop(key, default)
    if kind is float and isinstance(value, int) and not isinstance(value, bool):
        value = float(value)
    _expect(isinstance(value, kind) and not isinstance(value, bool),
            f"{path}.{key} must be {kind.__name__}")
    return value


def _pop_tuple(section, key, default, path, kind):
    value = section.pop(key, list(default))
    _expect(isinstance(value, (list, tuple)) and len(value) >= 1,
            f"{path}.{key} must be a nonempty list")
    out = []
    for v in value:
        if kind is float and isinstance(v, int) and not isinstance(v, bool):
            v = float(v)
        _expect(isinstance(v, kind) and not isinstance(v, bool),
                f"{path}.{key} entries must be {kind.__name__}")
        out.append(v)
    return tuple(out)


def _close_section(section, path):
    if section:
        raise ConfigError(f"unknown field {path}.{sorted(section)[0]}")


def parse_config(data):
    """Validate a config dict against the versioned schema."""
    _expect(isinstance(data, dict), "config root must be a JSON object")
    data = dict(data)
    version = data.pop("schema_version", None)
    _expect(version == SCHEMA_VERSION,
            f"schema_version must be {SCHEMA_VERSION}, got {version!r}")
    out_dir = _pop_scalar(data, "out_dir", "runs", "config", str)
    workers = _pop_scalar(data, "workers", 1, "config", int)
    _expect(workers >= 1, "config.workers must be >= 1")

    net = data.pop("network", {})
    _expect(isinstance(net, dict), "config.network must be an object")
    hidden = _pop_tuple(net, "hidden", (100, 100, 100), "network", int)
    activation = _pop_scalar(net, "activation", "tanh", "network", str)
    mask = _pop_scalar(net, "mask", "domain", "network", str)
    _expect(mask in ("domain", "unit"), "network.mask must be 'domain' or 'unit'")
    _close_section(net, "network")

    prob = data.pop("problem", {})
    _expect(isinstance(prob, dict), "config.problem must be an object")
    x_lo = _pop_scalar(prob, "x_lo", 0.0, "problem", float)
    x_hi = _pop_scalar(prob, "x_hi", 2.0, "problem", float)
    t_max = _pop_scalar(prob, "t_max", 2.0, "problem", float)
    _expect(x_lo < x_hi, "problem.x_lo must be below problem.x_hi")
    _expect(t_max > 0, "problem.t_max must be > 0")
    _close_section(prob, "problem")

    grid = data.pop("grid", {})
    _expect(isinstance(grid, dict), "config.grid must be an object")
    batch_sizes = _pop_tuple(grid, "batch_sizes", (8, 16, 32), "grid", int)
    learning_rates = _pop_tuple(grid, "learning_rates", (1e-3, 1e-4), "grid", float)
    seeds = _pop_tuple(grid, "seeds", (0,), "grid", int)
    _close_section(grid, "grid")

    tr = data.pop("train", {})
    _expect(isinstance(tr, dict), "config.train must be an object")
    iterations = _pop_scalar(tr, "iterations", 50_000, "train", int)
    log_every = _pop_scalar(tr, "log_every", 100, "train", int)
    checkpoint_every = _pop_scalar(tr, "checkpoint_every", 10_000, "train", int)
    eval_points = _pop_scalar(tr, "eval_points", 4096, "train", int)
    eval_seed = _pop_scalar(tr, "eval_seed", 424242, "train", int)
    _close_section(tr, "train")

    llc = data.pop("llc", {})
    _expect(isinstance(llc, dict), "config.llc must be an object")
    llc_n = _pop_scalar(llc, "n", 256, "llc", int)
    llc_gamma = _pop_scalar(llc, "gamma", 1.0, "llc", float)
    llc_sigma = _pop_scalar(llc, "sigma", 1.0, "llc", float)
    llc_chains = _pop_scalar(llc, "chains", 2, "llc", int)
    llc_warmup = _pop_scalar(llc, "warmup_draws", 1000, "llc", int)
    llc_draws = _pop_scalar(llc, "main_draws", 1000, "llc", int)
    llc_target_accept = _pop_scalar(llc, "target_accept", 0.8, "llc", float)
    llc_max_tree_depth = _pop_scalar(llc, "max_tree_depth", 10, "llc", int)
    llc_mass_matrix = _pop_scalar(llc, "mass_matrix", "identity", "llc", str)
    llc_seed = _pop_scalar(llc, "seed", 0, "llc", int)
    llc_points_seed = _pop_scalar(llc, "points_seed", 0, "llc", int)
    _close_section(llc, "llc")

    ext = data.pop("extrapolation", {})
    _expect(isinstance(ext, dict), "config.extrapolation must be an object")
    extrap_seeds = _pop_tuple(ext, "seeds", (0, 1), "extrapolation", int)
    extrap_iterations = _pop_scalar(ext, "iterations", 100_000, "extrapolation", int)
    extrap_batch_size = _pop_scalar(ext, "batch_size", 32, "extrapolation", int)
    extrap_learning_rate = _pop_scalar(ext, "learning_rate", 1e-4,
                                       "extrapolation", float)
    extrap_horizon = _pop_scalar(ext, "horizon", 2.0, "extrapolation", float)
    extrap_grid_nx = _pop_scalar(ext, "grid_nx", 101, "extrapolation", int)
    extrap_grid_nt = _pop_scalar(ext, "grid_nt", 101, "extrapolation", int)
    _expect(extrap_horizon > 1.0, "extrapolation.horizon must be > 1")
    _expect(len(extrap_seeds) >= 2, "extrapolation.seeds needs two seeds")
    _close_section(ext, "extrapolation")

    _close_section(data, "config")

    cfg = ExperimentConfig(
        out_dir=out_dir, hidden=hidden, activation=activation, mask=mask,
        x_lo=x_lo, x_hi=x_hi, t_max=t_max,
        batch_sizes=batch_sizes, learning_rates=learning_rates, seeds=seeds,
        iterations=iterations, log_every=log_every,
        checkpoint_every=checkpoint_every,
        eval_points=eval_points, eval_seed=eval_seed,
        llc_n=llc_n, llc_gamma=llc_gamma, llc_sigma=llc_sigma,
        llc_chains=llc_chains, llc_warmup=llc_warmup, llc_draws=llc_draws,
        llc_target_accept=llc_target_accept,
        llc_max_tree_depth=llc_max_tree_depth,
        llc_mass_matrix=llc_mass_matrix, llc_seed=llc_seed,
        llc_points_seed=llc_points_seed,
        extrap_seeds=extrap_seeds, extrap_iterations=extrap_iterations,
        extrap_batch_size=extrap_batch_size,
        extrap_learning_rate=extrap_learning_rate,
        extrap_horizon=extrap_horizon, extrap_grid_nx=extrap_grid_nx,
        extrap_grid_nt=extrap_grid_nt, workers=workers,
    )
    ids = [run_id(c) for c in expand_cells(cfg)]
    _expect(len(ids) == len(set(ids)), "grid cells must be unique")
    return cfg


def load_config(path):
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"config parse error at line {exc.lineno}, column {exc.colno}: "
            f"{exc.msg}") from exc
    return parse_config(data)


def canonical_dict(cfg):
    """The nested, schema-shaped form used for hashing and the summary."""
    return {
        "schema_version": SCHEMA_VERSION,
        "out_dir": cfg.out_dir,
        "workers": cfg.workers,
        "network": {"hidden": list(cfg.hidden), "activation": cfg.activation,
                    "mask": cfg.mask},
        "problem": {"x_lo": cfg.x_lo, "x_hi": cfg.x_hi, "t_max": cfg.t_max},
        "grid": {"batch_sizes": list(cfg.batch_sizes),
                 "learning_rates": list(cfg.learning_rates),
                 "seeds": list(cfg.seeds)},
        "train": {"iterations": cfg.iterations, "log_every": cfg.log_every,
                  "checkpoint_every": cfg.checkpoint_every,
                  "eval_points": cfg.eval_points, "eval_seed": cfg.eval_seed},
        "llc": {"n": cfg.llc_n, "gamma": cfg.llc_gamma, "sigma": cfg.llc_sigma,
                "chains": cfg.llc_chains, "warmup_draws": cfg.llc_warmup,
                "main_draws": cfg.llc_draws,
                "target_accept": cfg.llc_target_accept,
                "max_tree_depth": cfg.llc_max_tree_depth,
                "mass_matrix": cfg.llc_mass_matrix, "seed": cfg.llc_seed,
                "points_seed": cfg.llc_points_seed},
        "extrapolation": {"seeds": list(cfg.extrap_seeds),
                          "iterations": cfg.extrap_iterations,
                          "batch_size": cfg.extrap_batch_size,
                          "learning_rate": cfg.extrap_learning_rate,
                          "horizon": cfg.extrap_horizon,
                          "grid_nx": cfg.extrap_grid_nx,
                          "grid_nt": cfg.extrap_grid_nt},
    }


def config_hash(cfg):
    blob = json.dumps(canonical_dict(cfg), sort_keys=True,
                      separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def expand_cells(cfg):
    return [(bs, lr, seed)
            for bs in cfg.batch_sizes
            for lr in cfg.learning_rates
            for seed in cfg.seeds]


def run_id(cell):
    bs, lr, seed = cell
    return f"bs{bs}_lr{lr:g}_seed{seed}"


def _problem_from(cfg):
    base = default_heat_problem()
    if (cfg.x_lo, cfg.x_hi, cfg.t_max) == (base.x_lo, base.x_hi, base.t_max):
        return base
    return HeatIbvp(x_lo=cfg.x_lo, x_hi=cfg.x_hi, t_max=cfg.t_max,
                    forcing=base.forcing, exact=base.exact)


def _arch_from(cfg):
    return MlpArchitecture(2, tuple(cfg.hidden), 1, cfg.activation)


def _llc_config(cfg):
    sampler = NutsConfig(
        warmup_draws=cfg.llc_warmup, main_draws=cfg.llc_draws,
        target_accept=cfg.llc_target_accept,
        max_tree_depth=cfg.llc_max_tree_depth,
        mass_matrix=cfg.llc_mass_matrix, seed=cfg.llc_seed)
    return LlcConfig(n=cfg.llc_n, gamma=cfg.llc_gamma, sigma=cfg.llc_sigma,
                     chains=cfg.llc_chains, sampler=sampler,
                     points_seed=cfg.llc_points_seed)


def _read_json(path):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _write_json(path, payload):
    blob = json.dumps(payload, sort_keys=True, indent=1)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(blob)
        fh.write("\n")


def _llc_entry_dicts(entries):
    rows = []
    for e in entries:
        if e.estimate is None:
            rows.append({"iteration": e.iteration, "error": e.error})
            continue
        s = e.estimate
        rows.append({
            "iteration": e.iteration,
            "lambda_hat": s.lambda_hat,
            "ci_low": s.ci_low,
            "ci_high": s.ci_high,
            "ess": s.ess,
            "divergences": s.divergences,
            "negative_flag": s.negative_flag,
        })
    return rows


def _run_cell(cfg, cell, out_root, cfg_hash, stages):
    """Train and LLC-sweep one grid cell, resuming completed stages.

    Returns (record, timing_rows); failures are recorded, not raised.
    """
    rid = run_id(cell)
    bs, lr, seed = cell
    rdir = os.path.join(out_root, rid)
    os.makedirs(rdir, exist_ok=True)
    meta_path = os.path.join(rdir, "run.json")
    meta = _read_json(meta_path) if os.path.exists(meta_path) else {}
    timing_rows = []
    record = {"run_id": rid, "batch_size": bs, "learning_rate": lr,
              "seed": seed}

    if meta and meta.get("config_hash") != cfg_hash:
        record["status"] = "failed"
        record["error"] = ("run directory was produced by a different config "
                           f"(hash {meta.get('config_hash')!r})")
        return record, timing_rows
    meta.setdefault("config_hash", cfg_hash)
    meta.setdefault("run_id", rid)

    problem = _problem_from(cfg)
    arch = _arch_from(cfg)
    try:
        ckpt_iters = meta.get("checkpoint_iterations", [])
        have_train = (meta.get("train_complete")
                      and os.path.exists(os.path.join(rdir, "train_log.csv"))
                      and all(os.path.exists(os.path.join(rdir, f"ckpt_{i}.bin"))
                              for i in ckpt_iters))
        if have_train:
            checkpoints = [load_checkpoint(os.path.join(rdir, f"ckpt_{i}.bin"))
                           for i in ckpt_iters]
        else:
            tc = TrainConfig(batch_size=bs, learning_rate=lr,
                             iterations=cfg.iterations, seed=seed,
                             log_every=cfg.log_every,
                             checkpoint_every=cfg.checkpoint_every,
                             mask=cfg.mask)
            t0 = time.monotonic()
            result = train(problem, arch, tc, out_dir=rdir, config_hash=cfg_hash)
            timing_rows.append((rid, "train", time.monotonic() - t0))
            eval_set = sample_inputs(problem, cfg.eval_points, cfg.eval_seed)
            checkpoints = result.checkpoints
            meta["train_complete"] = True
            meta["checkpoint_iterations"] = [c.iteration for c in checkpoints]
            meta["final_train_loss"] = result.log[-1][1]
            meta["final_test_mse"] = result.log[-1][2]
            meta["eval_loss"] = pinn_loss(problem, arch, result.params,
                                          eval_set, cfg.mask)
            _write_json(meta_path, meta)

        record["final_train_loss"] = meta["final_train_loss"]
        record["final_test_mse"] = meta["final_test_mse"]
        record["eval_loss"] = meta["eval_loss"]

        if "llc" in stages:
            if not meta.get("llc_complete"):
                t0 = time.monotonic()
                entries = llc_sweep(problem, arch, checkpoints,
                                    _llc_config(cfg), cfg.mask)
                timing_rows.append((rid, "llc", time.monotonic() - t0))
                save_llc_csv(entries, os.path.join(rdir, "llc_history.csv"),
                             cfg_hash)
                meta["llc"] = _llc_entry_dicts(entries)
                meta["llc_complete"] = True
                _write_json(meta_path, meta)
            record["llc"] = meta["llc"]
            final_rows = [r for r in meta["llc"] if "lambda_hat" in r]
            if final_rows:
                record["final_lambda_hat"] = final_rows[-1]["lambda_hat"]
                record["final_lambda_ci"] = [final_rows[-1]["ci_low"],
                                             final_rows[-1]["ci_high"]]
        record["status"] = "complete"
    except Exception as exc:  # per-run isolation: other cells must proceed
        record["status"] = "failed"
        record["error"] = f"{type(exc).__name__}: {exc}"
        _write_json(meta_path, meta)
    return record, timing_rows


def _run_cell_worker(args):
    cfg, cell, out_root, cfg_hash, stages = args
    return _run_cell(cfg, cell, out_root, cfg_hash, stages)


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    config_hash: str
    out_dir: str
    runs: list
    summary_path: str
    plot_paths: list = field(default_factory=list)


def _write_timings(path, rows, cfg_hash):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# config_hash={cfg_hash}\n")
        fh.write("run_id,stage,seconds\n")
        for rid, stage, secs in rows:
            fh.write(f"{rid},{stage},{secs:.3f}\n")


def _summary_payload(cfg, cfg_hash, records):
    records = sorted(records, key=lambda r: r["run_id"])
    table = []
    lams = []
    for r in records:
        row = {"run_id": r["run_id"], "status": r["status"]}
        if "final_lambda_hat" in r:
            row["lambda_hat"] = r["final_lambda_hat"]
            row["ci"] = r["final_lambda_ci"]
            lams.append(r["final_lambda_hat"])
        table.append(row)
    payload = {
        "schema_version": SCHEMA_VERSION,
        "config_hash": cfg_hash,
        "config": canonical_dict(cfg),
        "runs": records,
        "llc_table": table,
    }
    if lams:
        payload["lambda_spread"] = max(lams) - min(lams)
        payload["lambda_min"] = min(lams)
        payload["lambda_max"] = max(lams)
    return payload


def run_experiment(config, out_root=None, stages=("train", "llc")):
    """Execute the full grid; returns the report after writing all artifacts.

    ``config`` is a path or a parsed :class:`ExperimentConfig`.  Completed
    stages are detected from prior artifacts and skipped, so reruns are
    idempotent and the summary is bit-stable.
    """
    cfg = config if isinstance(config, ExperimentConfig) else load_config(config)
    out = out_root if out_root is not None else cfg.out_dir
    os.makedirs(out, exist_ok=True)
    h = config_hash(cfg)
    cells = expand_cells(cfg)

    results = []
    if cfg.workers > 1 and len(cells) > 1:
        jobs = [(cfg, cell, out, h, stages) for cell in cells]
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            results = list(pool.map(_run_cell_worker, jobs))
    else:
        results = [_run_cell(cfg, cell, out, h, stages) for cell in cells]

    records = [rec for rec, _ in results]
    timing_rows = [row for _, rows in results for row in rows]
    _write_timings(os.path.join(out, "timings.csv"), timing_rows, h)

    summary_path = os.path.join(out, "summary.json")
    _write_json(summary_path, _summary_payload(cfg, h, records))

    report = ExperimentReport(config=cfg, config_hash=h, out_dir=out,
                              runs=sorted(records, key=lambda r: r["run_id"]),
                              summary_path=summary_path)
    report.plot_paths = emit_plot_data(report)
    return report


def emit_plot_data(report):
    """One CSV per figure panel: a loss history and an LLC history per run."""
    plot_dir = os.path.join(report.out_dir, "plots")
    os.makedirs(plot_dir, exist_ok=True)
    paths = []
    for rec in report.runs:
        rid = rec["run_id"]
        rdir = os.path.join(report.out_dir, rid)
        log_path = os.path.join(rdir, "train_log.csv")
        if os.path.exists(log_path):
            rows = load_train_log(log_path)
            path = os.path.join(plot_dir, f"{rid}_loss.csv")
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(f"# config_hash={report.config_hash}\n")
                fh.write("iteration,train,test\n")
                for it, loss, mse in rows:
                    fh.write(f"{it},{loss:.17g},{mse:.17g}\n")
            paths.append(path)
        if "llc" in rec:
            path = os.path.join(plot_dir, f"{rid}_llc.csv")
            with open(path, "w", encoding="utf-8") as fh:
                fh.write(f"# config_hash={report.config_hash}\n")
                fh.write("iteration,lambda_hat,ci_low,ci_high\n")
                for row in rec["llc"]:
                    if "lambda_hat" not in row:
                        continue
                    fh.write(f"{row['iteration']},{row['lambda_hat']:.17g},"
                             f"{row['ci_low']:.17g},{row['ci_high']:.17g}\n")
            paths.append(path)
    return paths


# -- extrapolation study --------------------------------------------------------


def _evaluate_error_grid(problem, arch, params, cfg):
    xs = np.linspace(cfg.x_lo, cfg.x_hi, cfg.extrap_grid_nx)
    ts = np.linspace(0.0, cfg.extrap_horizon * cfg.t_max, cfg.extrap_grid_nt)
    xg, tg = np.meshgrid(xs, ts, indexing="ij")
    xf, tf = xg.ravel(), tg.ravel()
    u = hard_constrained_u(problem, arch, params, xf, tf, cfg.mask)
    exact = np.asarray(problem.exact(xf, tf), dtype=np.float64)
    sq = (u - exact) ** 2
    interior = tf <= cfg.t_max
    return xf, tf, u, exact, sq, interior


def _save_error_grid(path, xf, tf, u, exact, sq, cfg_hash):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# config_hash={cfg_hash}\n")
        fh.write("x,t,u,u_exact,sq_err\n")
        for i in range(xf.size):
            fh.write(f"{xf[i]:.17g},{tf[i]:.17g},{u[i]:.17g},"
                     f"{exact[i]:.17g},{sq[i]:.17g}\n")


def extrapolation_report(config, out_root=None):
    """Train two seeds, evaluate on the extended-horizon grid, and compare.

    Writes one error-grid CSV per seed plus a divergence summary recording
    interior and extrapolation MSEs, their per-seed ratio, and the relative
    difference between the seeds' extrapolation MSEs.
    """
    cfg = config if isinstance(config, ExperimentConfig) else load_config(config)
    out = out_root if out_root is not None else cfg.out_dir
    ext_dir = os.path.join(out, "extrapolation")
    os.makedirs(ext_dir, exist_ok=True)
    h = config_hash(cfg)
    problem = _problem_from(cfg)
    arch = _arch_from(cfg)

    timing_rows = []
    per_seed = []
    for seed in cfg.extrap_seeds:
        rdir = os.path.join(ext_dir, f"seed{seed}")
        os.makedirs(rdir, exist_ok=True)
        meta_path = os.path.join(rdir, "run.json")
        meta = _read_json(meta_path) if os.path.exists(meta_path) else {}
        if meta and meta.get("config_hash") != h:
            raise ConfigError(
                f"{rdir} was produced by a different config; "
                "choose a fresh output directory")
        final_ckpt = os.path.join(rdir, f"ckpt_{cfg.extrap_iterations}.bin")
        if not (meta.get("train_complete") and os.path.exists(final_ckpt)):
            tc = TrainConfig(batch_size=cfg.extrap_batch_size,
                             learning_rate=cfg.extrap_learning_rate,
                             iterations=cfg.extrap_iterations, seed=seed,
                             log_every=cfg.log_every,
                             checkpoint_every=cfg.checkpoint_every,
                             mask=cfg.mask)
            t0 = time.monotonic()
            result = train(problem, arch, tc, out_dir=rdir, config_hash=h)
            timing_rows.append((f"seed{seed}", "train", time.monotonic() - t0))
            eval_set = sample_inputs(problem, cfg.eval_points, cfg.eval_seed)
            meta.update({
                "config_hash": h,
                "train_complete": True,
                "final_train_loss": result.log[-1][1],
                "final_test_mse": result.log[-1][2],
                "eval_loss": pinn_loss(problem, arch, result.params,
                                       eval_set, cfg.mask),
            })
            _write_json(meta_path, meta)
        params = load_checkpoint(final_ckpt).params

        xf, tf, u, exact, sq, interior = _evaluate_error_grid(
            problem, arch, params, cfg)
        _save_error_grid(os.path.join(ext_dir, f"errors_seed{seed}.csv"),
                         xf, tf, u, exact, sq, h)
        per_seed.append({
            "seed": seed,
            "final_train_loss": meta["final_train_loss"],
            "eval_loss": meta["eval_loss"],
            "interior_mse": float(np.mean(sq[interior])),
            "extrapolation_mse": float(np.mean(sq[~interior])),
        })
        per_seed[-1]["extrapolation_over_interior"] = (
            per_seed[-1]["extrapolation_mse"] / per_seed[-1]["interior_mse"])

    e = sorted(s["extrapolation_mse"] for s in per_seed[:2])
    payload = {
        "schema_version": SCHEMA_VERSION,
        "config_hash": h,
        "seeds": per_seed,
        "extrapolation_mse_ratio": e[1] / e[0],
        "extrapolation_mse_relative_difference": (e[1] - e[0]) / e[0],
    }
    _write_json(os.path.join(ext_dir, "extrapolation.json"), payload)
    _write_timings(os.path.join(ext_dir, "timings.csv"), timing_rows, h)
    return payload
