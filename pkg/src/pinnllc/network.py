"""MLP definition, initialization, and the hard-constrained solution ansatz.

The ansatz u(x,t,w) = sin(pi x) + t * m(x) * NN_w(x,t) satisfies the initial
condition at t=0 and the zero Dirichlet boundary conditions through the mask
m, for every parameter vector w.  Forward evaluation is generic over plain
numbers, batched arrays, taped variables, and forward jets, so the same code
path serves prediction, PDE residuals, and gradients.
"""

from __future__ import annotations

import functools
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import Dual1, Dual2, Var

__all__ = [
    "MlpArchitecture",
    "Checkpoint",
    "default_architecture",
    "param_count",
    "init_params",
    "mlp_forward",
    "boundary_mask",
    "hard_constrained_u",
    "save_checkpoint",
    "load_checkpoint",
    "check_params",
    "as_columns",
]

_ACTIVATIONS = ("tanh",)

CHECKPOINT_MAGIC = b"PINNLLC1"


@dataclass(frozen=True)
class MlpArchitecture:
    """Layer widths of a fully connected network, input (x, t) to scalar."""

    input_dim: int = 2
    hidden: tuple = (100, 100, 100)
    output_dim: int = 1
    activation: str = "tanh"

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        widths = (self.input_dim, *self.hidden, self.output_dim)
        if any(int(w) < 1 for w in widths):
            raise ValueError("all layer widths must be >= 1")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unsupported activation {self.activation!r}")

    def layer_dims(self):
        dims = (self.input_dim, *self.hidden, self.output_dim)
        return tuple(zip(dims[:-1], dims[1:]))


def default_architecture():
    """Three tanh layers of 100 units: 20,601 parameters for (x, t) input."""
    return MlpArchitecture(2, (100, 100, 100), 1, "tanh")


def param_count(arch):
    return sum((fi + 1) * fo for fi, fo in arch.layer_dims())


@functools.lru_cache(maxsize=64)
def _segments(arch):
    """Per layer: (weights start, weights stop, bias stop) in the flat vector.

    Weights are stored row-major as (fan_in, fan_out), followed by the bias.
    """
    segs = []
    pos = 0
    for fi, fo in arch.layer_dims():
        w_stop = pos + fi * fo
        segs.append((pos, w_stop, w_stop + fo))
        pos = w_stop + fo
    return tuple(segs)


def init_params(arch, seed):
    """Glorot-uniform weights, zero biases; deterministic in (arch, seed)."""
    rng = np.random.default_rng(seed)
    out = np.zeros(param_count(arch))
    for (fi, fo), (a, b, _) in zip(arch.layer_dims(), _segments(arch)):
        limit = math.sqrt(6.0 / (fi + fo))
        out[a:b] = rng.uniform(-limit, limit, size=fi * fo)
    return out


def _tanh_any(z):
    if isinstance(z, (Var, Dual1, Dual2)):
        return z.tanh()
    return np.tanh(z) if isinstance(z, np.ndarray) else math.tanh(z)


def _sin_any(z):
    if isinstance(z, (Var, Dual1, Dual2)):
        return z.sin()
    return np.sin(z) if isinstance(z, np.ndarray) else math.sin(z)


def forward_core(arch, params, x, t):
    """Network output for pre-shaped inputs.

    ``params`` is a flat vector (array or taped ``Var``); ``x`` and ``t`` are
    scalars, (n, 1) columns, or jets over those.  Returns the raw final-layer
    value without reshaping.
    """
    if arch.input_dim != 2:
        raise ValueError("forward expects input_dim == 2 (x and t)")
    layers = arch.layer_dims()
    segs = _segments(arch)
    h = None
    last = len(layers) - 1
    for k, ((fi, fo), (a, b, c)) in enumerate(zip(layers, segs)):
        bias = params[b:c]
        if k == 0:
            wx = params[a:a + fo]
            wt = params[a + fo:b]
            z = x * wx + t * wt + bias
        else:
            z = h @ _matrix_segment(params, a, b, fi, fo) + bias
        h = _tanh_any(z) if k < last else z
    return h


def _matrix_segment(params, a, b, fi, fo):
    if isinstance(params, Var):
        return params[a:b].reshape((fi, fo))
    return params[a:b].reshape(fi, fo)


def check_params(arch, params):
    if isinstance(params, Var):
        n = np.shape(params.value)[0]
    else:
        params = np.asarray(params, dtype=np.float64)
        if params.ndim != 1:
            raise ValueError("params must be a flat vector")
        n = params.shape[0]
    expect = param_count(arch)
    if n != expect:
        raise ValueError(f"params length {n} does not match architecture ({expect})")
    return params


def as_columns(x, t):
    """Normalize numeric inputs to matched scalars or (n, 1) columns."""
    xa = np.asarray(x, dtype=np.float64)
    ta = np.asarray(t, dtype=np.float64)
    if xa.ndim == 0 and ta.ndim == 0:
        return float(xa), float(ta), True
    xa, ta = np.broadcast_arrays(np.atleast_1d(xa), np.atleast_1d(ta))
    return xa.reshape(-1, 1), ta.reshape(-1, 1), False


def mlp_forward(arch, params, x, t):
    """Evaluate the bare network at (x, t); scalars in, scalar out."""
    params = check_params(arch, params)
    xc, tc, scalar = as_columns(x, t)
    out = forward_core(arch, params, xc, tc)
    out = np.asarray(out, dtype=np.float64)
    return float(out.reshape(())) if scalar else out[:, 0].copy()


def boundary_mask(x, x_lo, x_hi, kind="domain"):
    """Spatial factor multiplying the network in the ansatz.

    ``domain``: (x - x_lo)(x - x_hi) / L^2, vanishing on both boundaries of
    the actual domain.  ``unit``: x(x - 1), the unit-interval form, kept for
    comparison runs; it does not vanish at x_hi unless x_hi = 1.
    """
    if kind == "domain":
        L = x_hi - x_lo
        return (x - x_lo) * (x - x_hi) * (1.0 / (L * L))
    if kind == "unit":
        return x * (x - 1.0)
    raise ValueError(f"unknown mask kind {kind!r}")


def ansatz_core(arch, params, x, t, x_lo, x_hi, mask="domain"):
    """sin(pi x) + t * m(x) * NN(x, t) for pre-shaped inputs or jets."""
    nn = forward_core(arch, params, x, t)
    m = boundary_mask(x, x_lo, x_hi, mask)
    return _sin_any(math.pi * x) + t * (m * nn)


def hard_constrained_u(problem, arch, params, x, t, mask="domain"):
    """Constrained solution surface; exact at t=0 and on the boundary."""
    params = check_params(arch, params)
    xc, tc, scalar = as_columns(x, t)
    out = ansatz_core(arch, params, xc, tc, problem.x_lo, problem.x_hi, mask)
    out = np.asarray(out, dtype=np.float64)
    return float(out.reshape(())) if scalar else out[:, 0].copy()


@dataclass(frozen=True)
class Checkpoint:
    """A parameter vector plus the metadata needed to reproduce it."""

    arch: MlpArchitecture
    params: np.ndarray
    seed: int | None
    iteration: int
    extra: dict = field(default_factory=dict)


def save_checkpoint(path, arch, params, seed, iteration, extra=None):
    """Write magic, one JSON header line, then little-endian float64 params."""
    params = check_params(arch, params)
    if not np.isfinite(params).all():
        raise ValueError("refusing to save non-finite parameters")
    header = {
        "input_dim": arch.input_dim,
        "hidden": list(arch.hidden),
        "output_dim": arch.output_dim,
        "activation": arch.activation,
        "seed": None if seed is None else int(seed),
        "iteration": int(iteration),
        "extra": dict(extra or {}),
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(blob)
        fh.write(b"\n")
        fh.write(np.ascontiguousarray(params, dtype="<f8").tobytes())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file (bad magic)")
        header_line = fh.readline()
        if not header_line.endswith(b"\n"):
            raise ValueError(f"{path}: truncated checkpoint header")
        header = json.loads(header_line.decode("utf-8"))
        arch = MlpArchitecture(
            header["input_dim"],
            tuple(header["hidden"]),
            header["output_dim"],
            header["activation"],
        )
        raw = fh.read()
    expect = param_count(arch)
    params = np.frombuffer(raw, dtype="<f8")
    if params.shape[0] != expect:
        raise ValueError(f"{path}: expected {expect} parameters, found {params.shape[0]}")
    params = params.astype(np.float64, copy=True)
    if not np.isfinite(params).all():
        raise ValueError(f"{path}: checkpoint contains non-finite parameters")
    return Checkpoint(
        arch=arch,
        params=params,
        seed=header.get("seed"),
        iteration=int(header.get("iteration", 0)),
        extra=dict(header.get("extra", {})),
    )
