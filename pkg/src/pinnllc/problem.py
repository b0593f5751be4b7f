"""Heat-equation IBVP: domain, forcing, residual operator, and losses.

The governing equation is du/dt - d2u/dx2 = f on (x_lo, x_hi) x (0, T] with
zero Dirichlet boundaries and initial condition sin(pi x).  The default
instance manufactures f from the exact solution e^{-t} sin(pi x), which keeps
a zero-residual oracle available at all times.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .autodiff import Var, input_derivatives
from .network import ansatz_core, as_columns, check_params, hard_constrained_u

__all__ = [
    "HeatIbvp",
    "ResidualModel",
    "ResidualPointSet",
    "default_heat_problem",
    "sample_inputs",
    "residual",
    "residual_core",
    "pinn_loss",
    "pinn_loss_expr",
    "nll",
    "nll_expr",
    "gauss_norm_const",
    "test_mse",
    "save_points",
    "load_points",
]


@dataclass(frozen=True)
class HeatIbvp:
    """Problem data: spatial interval, horizon, forcing, exact solution."""

    x_lo: float
    x_hi: float
    t_max: float
    forcing: object  # (x, t) -> real, vectorized
    exact: object    # (x, t) -> real, vectorized

    def __post_init__(self):
        if not self.x_lo < self.x_hi:
            raise ValueError("need x_lo < x_hi")
        if not self.t_max > 0:
            raise ValueError("need t_max > 0")


def _default_exact(x, t):
    return np.exp(-t) * np.sin(np.pi * x)


def _default_forcing(x, t):
    # f = (d/dt - d2/dx2) of e^{-t} sin(pi x) = (pi^2 - 1) e^{-t} sin(pi x)
    return (np.pi ** 2 - 1.0) * np.exp(-t) * np.sin(np.pi * x)


def default_heat_problem():
    """Interval (0, 2), horizon 2, manufactured from e^{-t} sin(pi x)."""
    return HeatIbvp(0.0, 2.0, 2.0, _default_forcing, _default_exact)


@dataclass(frozen=True)
class ResidualModel:
    """Gaussian residual error model with standard deviation sigma."""

    sigma: float = 1.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError("sigma must be positive")


@dataclass(frozen=True)
class ResidualPointSet:
    """A fixed batch of collocation points in Omega x (0, T]."""

    xs: np.ndarray
    ts: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        xs = np.asarray(self.xs, dtype=np.float64).ravel()
        ts = np.asarray(self.ts, dtype=np.float64).ravel()
        if xs.shape != ts.shape or xs.size == 0:
            raise ValueError("xs and ts must be nonempty and aligned")
        xs.setflags(write=False)
        ts.setflags(write=False)
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "ts", ts)

    @property
    def n(self):
        return self.xs.size

    @property
    def points(self):
        return list(zip(self.xs.tolist(), self.ts.tolist()))


def sample_inputs(problem, n, seed):
    """Draw n i.i.d. points, x uniform on (x_lo, x_hi), t uniform on (0, T]."""
    if n < 1:
        raise ValueError("need n >= 1")
    rng = np.random.default_rng(seed)
    u = rng.random(n)
    v = rng.random(n)
    xs = problem.x_lo + (problem.x_hi - problem.x_lo) * u
    ts = problem.t_max * (1.0 - v)  # maps [0,1) onto (0, T]
    return ResidualPointSet(xs, ts, seed=seed)


def residual_core(problem, arch, params, xs, ts, mask="domain", forcing_values=None):
    """du/dt - d2u/dx2 - f through the constrained ansatz.

    ``params`` may be a taped Var, in which case the result is a taped
    expression differentiable with respect to the parameters.  ``xs`` and
    ``ts`` are pre-shaped scalars or (n, 1) columns.
    """

    def u_fn(xj, tj):
        return ansatz_core(arch, params, xj, tj, problem.x_lo, problem.x_hi, mask)

    _, du_dt, _, d2u_dx2 = input_derivatives(u_fn, xs, ts)
    f = problem.forcing(xs, ts) if forcing_values is None else forcing_values
    return du_dt - d2u_dx2 - f


def residual(problem, arch, params, x, t, mask="domain"):
    """Pointwise PDE residual of the constrained network at (x, t)."""
    params = check_params(arch, params)
    xc, tc, scalar = as_columns(x, t)
    r = np.asarray(residual_core(problem, arch, params, xc, tc, mask))
    return float(r.reshape(())) if scalar else r[:, 0].copy()


def pinn_loss(problem, arch, params, points, mask="domain"):
    """Mean squared residual over the point set.

    Summation is exact (compensated), so the value is independent of the
    order of the points to the last bit.
    """
    params = check_params(arch, params)
    xc = points.xs.reshape(-1, 1)
    tc = points.ts.reshape(-1, 1)
    r = np.asarray(residual_core(problem, arch, params, xc, tc, mask)).ravel()
    return math.fsum(float(v) * float(v) for v in r) / r.size


def pinn_loss_expr(problem, arch, w, points, mask="domain", forcing_values=None):
    """Taped mean squared residual; ``w`` is a Var over the flat parameters."""
    if not isinstance(w, Var):
        raise TypeError("w must be a taped Var")
    xc = points.xs.reshape(-1, 1)
    tc = points.ts.reshape(-1, 1)
    r = residual_core(problem, arch, w, xc, tc, mask, forcing_values)
    return (r ** 2).mean()


def gauss_norm_const(sigma):
    """log(sigma sqrt(2 pi)), the additive Gaussian normalizer."""
    return math.log(sigma) + 0.5 * math.log(2.0 * math.pi)


def nll(problem, arch, params, points, model, mask="domain"):
    """Sample negative log-likelihood: pinn_loss / (2 sigma^2) + normalizer."""
    s2 = model.sigma * model.sigma
    return pinn_loss(problem, arch, params, points, mask) / (2.0 * s2) + gauss_norm_const(model.sigma)


def nll_expr(problem, arch, w, points, model, mask="domain", forcing_values=None):
    """Taped counterpart of :func:`nll`."""
    s2 = model.sigma * model.sigma
    loss = pinn_loss_expr(problem, arch, w, points, mask, forcing_values)
    return loss * (1.0 / (2.0 * s2)) + gauss_norm_const(model.sigma)


def test_mse(problem, arch, params, grid_nx=51, grid_nt=51, mask="domain"):
    """Mean squared error against the exact solution on a uniform grid.

    The grid covers [x_lo, x_hi] x [0, t_max] endpoints included.
    """
    if grid_nx < 2 or grid_nt < 2:
        raise ValueError("grid sizes must be >= 2")
    xs = np.linspace(problem.x_lo, problem.x_hi, grid_nx)
    ts = np.linspace(0.0, problem.t_max, grid_nt)
    xg, tg = np.meshgrid(xs, ts, indexing="ij")
    u = hard_constrained_u(problem, arch, params, xg.ravel(), tg.ravel(), mask)
    err = u - np.asarray(problem.exact(xg.ravel(), tg.ravel()), dtype=np.float64)
    return float(np.mean(err * err))


def save_points(points, path, config_hash=None):
    """Write the point set as CSV with 17-significant-digit floats."""
    with open(path, "w", encoding="utf-8") as fh:
        if config_hash is not None:
            fh.write(f"# config_hash={config_hash}\n")
        if points.seed is not None:
            fh.write(f"# seed={points.seed}\n")
        fh.write("x,t\n")
        for x, t in zip(points.xs, points.ts):
            fh.write(f"{x:.17g},{t:.17g}\n")


def load_points(path):
    xs = []
    ts = []
    seed = None
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                if line.startswith("# seed="):
                    seed = int(line.split("=", 1)[1])
                continue
            if line == "x,t":
                continue
            a, b = line.split(",")
            xs.append(float(a))
            ts.append(float(b))
    return ResidualPointSet(np.array(xs), np.array(ts), seed=seed)
