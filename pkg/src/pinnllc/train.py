"""Adam training of the constrained network on streamed residual batches.

Each iteration draws its own batch from a seed stream keyed by (seed,
iteration), so the sequence of batches is a pure function of the config and
reruns are bit-identical.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

from .autodiff import grad
from .network import Checkpoint, init_params, save_checkpoint
from .problem import pinn_loss, pinn_loss_expr, sample_inputs, test_mse

__all__ = [
    "TrainConfig",
    "AdamState",
    "TrainResult",
    "adam_step",
    "batch_points",
    "train",
    "save_train_log",
    "load_train_log",
]


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    learning_rate: float = 1e-4
    iterations: int = 50_000
    seed: int = 0
    log_every: int = 100
    checkpoint_every: int = 10_000
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    mask: str = "domain"
    test_grid_nx: int = 33
    test_grid_nt: int = 33

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.log_every < 1 or self.checkpoint_every < 1:
            raise ValueError("log_every and checkpoint_every must be >= 1")
        if not 0.0 <= self.beta1 < 1.0 or not 0.0 <= self.beta2 < 1.0:
            raise ValueError("Adam betas must lie in [0, 1)")
        if self.adam_eps <= 0:
            raise ValueError("adam_eps must be > 0")
        if self.test_grid_nx < 2 or self.test_grid_nt < 2:
            raise ValueError("test grid sizes must be >= 2")


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, d):
        return cls(m=np.zeros(d), v=np.zeros(d), t=0)


def adam_step(params, g, state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update; mutates ``state``, returns new params."""
    state.t += 1
    state.m = beta1 * state.m + (1.0 - beta1) * g
    state.v = beta2 * state.v + (1.0 - beta2) * (g * g)
    m_hat = state.m / (1.0 - beta1 ** state.t)
    v_hat = state.v / (1.0 - beta2 ** state.t)
    return params - lr * m_hat / (np.sqrt(v_hat) + eps)


def batch_points(problem, config, iteration):
    """The batch for one iteration, a pure function of (seed, iteration)."""
    return sample_inputs(problem, config.batch_size, (config.seed, iteration))


@dataclass
class TrainResult:
    params: np.ndarray
    checkpoints: list
    log: list                     # (iteration, train_loss, test_mse) rows
    config: TrainConfig
    checkpoint_paths: dict = field(default_factory=dict)


def _emit_checkpoint(result, arch, params, config, iteration, out_dir):
    ck = Checkpoint(arch=arch, params=params.copy(), seed=config.seed,
                    iteration=iteration)
    result.checkpoints.append(ck)
    if out_dir is not None:
        path = os.path.join(out_dir, f"ckpt_{iteration}.bin")
        save_checkpoint(path, arch, params, config.seed, iteration)
        result.checkpoint_paths[iteration] = path


def train(problem, arch, config, out_dir=None, config_hash=None):
    """Run the full Adam loop; returns final params, checkpoints, and the log.

    Checkpoints are taken at iteration 0, every ``checkpoint_every`` updates,
    and at the final iteration.  The log records the pre-update batch loss and
    the grid test error every ``log_every`` iterations and at the end.
    """
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
    params = init_params(arch, seed=config.seed)
    state = AdamState.zeros(params.size)
    result = TrainResult(params=params, checkpoints=[], log=[], config=config)
    _emit_checkpoint(result, arch, params, config, 0, out_dir)

    for i in range(config.iterations):
        pts = batch_points(problem, config, i)
        loss, g = grad(
            lambda wv: pinn_loss_expr(problem, arch, wv, pts, config.mask),
            params)
        if i % config.log_every == 0:
            mse = test_mse(problem, arch, params, config.test_grid_nx,
                           config.test_grid_nt, config.mask)
            result.log.append((i, loss, mse))
        params = adam_step(params, g, state, config.learning_rate,
                           config.beta1, config.beta2, config.adam_eps)
        if not np.isfinite(params).all():
            raise FloatingPointError(
                f"parameters became non-finite at iteration {i + 1}")
        it = i + 1
        if it % config.checkpoint_every == 0 or it == config.iterations:
            _emit_checkpoint(result, arch, params, config, it, out_dir)

    final_loss = pinn_loss(problem, arch, params,
                           batch_points(problem, config, config.iterations),
                           config.mask)
    final_mse = test_mse(problem, arch, params, config.test_grid_nx,
                         config.test_grid_nt, config.mask)
    result.log.append((config.iterations, final_loss, final_mse))
    result.params = params
    if out_dir is not None:
        save_train_log(result.log, os.path.join(out_dir, "train_log.csv"),
                       config_hash)
    return result


def save_train_log(rows, path, config_hash=None):
    with open(path, "w", encoding="utf-8") as fh:
        if config_hash is not None:
            fh.write(f"# config_hash={config_hash}\n")
        fh.write("iteration,train_loss,test_mse\n")
        for it, loss, mse in rows:
            fh.write(f"{it},{loss:.17g},{mse:.17g}\n")


def load_train_log(path):
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#") or line.startswith("iteration"):
                continue
            it, loss, mse = line.split(",")
            rows.append((int(it), float(loss), float(mse)))
    return rows
