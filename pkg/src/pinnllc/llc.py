"""Local learning coefficient estimation around a trained parameter vector.

The estimator is lambda_hat = n * beta * (E[L_n] - L_n(w*)), with the
expectation taken under the tempered, localized density sampled by NUTS and
beta = 1 / ln n.  A Monte Carlo volume-scaling oracle on low-dimensional toy
losses provides an independent check of the same quantity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .network import check_params
from .problem import ResidualModel, sample_inputs
from .sampler import NutsConfig, SamplerFailure, make_tempered_target, nuts_sample

__all__ = [
    "LlcConfig",
    "LlcEstimate",
    "SweepEntry",
    "ResolutionFailure",
    "beta_of",
    "estimate_llc",
    "llc_sweep",
    "effective_sample_size",
    "volume_estimates",
    "volume_scaling_lambda",
    "toy_suite",
    "cross_validate_estimator",
    "save_llc_csv",
]


def beta_of(n):
    """Inverse temperature 1 / ln n (natural log)."""
    if n < 2:
        raise ValueError("need n >= 2 so that ln n > 0")
    return 1.0 / math.log(n)


@dataclass(frozen=True)
class LlcConfig:
    n: int = 256
    gamma: float = 1.0
    sigma: float = 1.0
    chains: int = 2
    sampler: NutsConfig = field(default_factory=NutsConfig)
    points_seed: int = 0

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("need n >= 2 (beta = 1/ln n)")
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0")
        if self.sigma <= 0:
            raise ValueError("sigma must be > 0")
        if self.chains < 1:
            raise ValueError("need at least one chain")

    @property
    def beta(self):
        return beta_of(self.n)


@dataclass(frozen=True)
class LlcEstimate:
    lambda_hat: float
    ci_low: float
    ci_high: float
    per_chain_means: tuple
    ess: float
    divergences: int
    negative_flag: bool
    details: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.ci_low <= self.lambda_hat <= self.ci_high:
            raise ValueError("confidence interval must bracket the estimate")


@dataclass(frozen=True)
class SweepEntry:
    iteration: int
    estimate: LlcEstimate | None
    error: str | None = None


def effective_sample_size(x):
    """ESS from the integrated autocorrelation time.

    Pair-sum truncation: successive autocorrelation pairs are summed, forced
    nonincreasing, and the sum stops at the first nonpositive pair.  Capped
    at the chain length, which can only widen the resulting interval.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    n = x.size
    if n < 4 or np.ptp(x) == 0.0:
        return float(n)
    x = x - x.mean()
    var0 = float(np.dot(x, x)) / n
    if var0 == 0.0:
        return float(n)
    m = 1 << (2 * n - 1).bit_length()
    f = np.fft.rfft(x, m)
    acov = np.fft.irfft(f * np.conj(f), m)[:n] / n
    rho = acov / acov[0]

    tau = 0.0
    prev = math.inf
    k = 0
    while 2 * k + 1 < n:
        pair = rho[2 * k] + rho[2 * k + 1]
        if pair <= 0.0:
            break
        pair = min(pair, prev)
        tau += 2.0 * pair
        prev = pair
        k += 1
    tau = max(tau - 1.0, 1e-12)
    return float(min(n, n / tau))


def _chain_seeds(base_seed, chains):
    return [int(s) for s in np.random.SeedSequence(base_seed).generate_state(chains)]


def _estimate_from_target(target, aux_fn, aux_star, nbeta, sampler_cfg, chains,
                          init, details=None):
    """Run chains on a tempered target and assemble the estimate.

    ``aux_fn`` evaluates the loss whose tempered expectation defines the
    estimate; chains start exactly at the anchor.
    """
    seeds = _chain_seeds(sampler_cfg.seed, chains)
    all_draws = []
    per_chain = []
    per_chain_ess = []
    divergences = 0
    chain_details = []
    for seed in seeds:
        cfg = replace(sampler_cfg, seed=seed)
        draws = nuts_sample(target, init, cfg, aux_fn=aux_fn)
        all_draws.append(draws.aux)
        per_chain.append(nbeta * (float(np.mean(draws.aux)) - aux_star))
        per_chain_ess.append(effective_sample_size(draws.aux))
        divergences += draws.divergences
        chain_details.append({
            "seed": seed,
            "step_size": draws.step_size,
            "warmup_divergences": draws.warmup_divergences,
            "divergences": draws.divergences,
            "mean_tree_depth": float(np.mean(draws.tree_depths)),
            "mean_accept": float(np.mean(draws.accept_stats)),
        })

    pooled = np.concatenate(all_draws)
    lambda_hat = nbeta * (float(np.mean(pooled)) - aux_star)
    total_ess = float(sum(per_chain_ess))
    sd = float(np.std(pooled, ddof=1)) if pooled.size > 1 else 0.0
    half = 1.96 * nbeta * sd / math.sqrt(max(total_ess, 1.0))
    info = {"chains": chain_details, "aux_star": aux_star, "nbeta": nbeta}
    if details:
        info.update(details)
    return LlcEstimate(
        lambda_hat=lambda_hat,
        ci_low=lambda_hat - half,
        ci_high=lambda_hat + half,
        per_chain_means=tuple(per_chain),
        ess=total_ess,
        divergences=divergences,
        negative_flag=lambda_hat < 0.0,
        details=info,
    )


def estimate_llc(problem, arch, w_star, config, mask="domain", points=None):
    """Estimate the local learning coefficient at ``w_star``.

    Draws the fixed point set from (points_seed, n) unless one is supplied,
    then samples the tempered density anchored at ``w_star`` with ``chains``
    NUTS chains initialized exactly there.
    """
    w_star = check_params(arch, np.asarray(w_star, dtype=np.float64))
    if not np.isfinite(w_star).all():
        raise ValueError("w_star must be finite")
    if points is None:
        points = sample_inputs(problem, config.n, config.points_seed)
    if points.n != config.n:
        raise ValueError("point set size does not match config.n")
    model = ResidualModel(config.sigma)
    beta = config.beta
    target, nll_of, info = make_tempered_target(
        problem, arch, w_star, beta, config.gamma, model, points, mask)
    return _estimate_from_target(
        target, nll_of, info["nll_star"], config.n * beta,
        config.sampler, config.chains, w_star,
        details={"n": config.n, "beta": beta, "gamma": config.gamma,
                 "sigma": config.sigma, "points_seed": points.seed},
    )


def llc_sweep(problem, arch, checkpoints, config, mask="domain"):
    """One estimate per checkpoint over a shared fixed point set.

    Failures are recorded per entry and the sweep continues; estimates are
    reported as-is, negative values included.
    """
    if not checkpoints:
        raise ValueError("need at least one checkpoint")
    points = sample_inputs(problem, config.n, config.points_seed)
    entries = []
    for ck in checkpoints:
        try:
            est = estimate_llc(problem, arch, ck.params, config, mask, points=points)
            entries.append(SweepEntry(ck.iteration, est))
        except (SamplerFailure, ValueError) as exc:
            entries.append(SweepEntry(ck.iteration, None, error=str(exc)))
    return entries


# -- volume-scaling oracle -----------------------------------------------------


class ResolutionFailure(RuntimeError):
    """No Monte Carlo hits at the smallest epsilon; increase mc_samples."""


def _ball_volume(d, radius):
    return math.pi ** (d / 2.0) / math.gamma(d / 2.0 + 1.0) * radius ** d


def volume_estimates(loss_fn, w_star, epsilons, mc_samples, radius, seed):
    """Monte Carlo volumes of sublevel sets within a ball around w_star.

    All epsilons share one sample cloud, so the volumes are nondecreasing in
    epsilon by construction.
    """
    w_star = np.atleast_1d(np.asarray(w_star, dtype=np.float64))
    d = w_star.size
    if d > 4:
        raise ValueError("volume oracle is for dimension <= 4")
    eps = np.asarray(sorted(float(e) for e in epsilons))
    if eps.size < 2 or eps[0] <= 0:
        raise ValueError("need at least two positive epsilons")
    rng = np.random.default_rng(seed)
    u = rng.standard_normal((mc_samples, d))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    radii = radius * rng.random(mc_samples) ** (1.0 / d)
    pts = w_star + u * radii[:, None]
    base = loss_fn(w_star)
    deltas = np.array([loss_fn(p) for p in pts]) - base
    total = _ball_volume(d, radius)
    hits = np.array([np.count_nonzero(deltas < e) for e in eps], dtype=np.int64)
    if hits[0] == 0:
        raise ResolutionFailure(
            f"no hits below epsilon={eps[0]:g} out of {mc_samples} samples; "
            "increase mc_samples or raise the smallest epsilon")
    return eps, total * hits / mc_samples


def volume_scaling_lambda(loss_fn, w_star, epsilons, mc_samples=200_000,
                          radius=1.0, seed=0):
    """Least-squares slope of log V(eps) against log eps."""
    eps, vols = volume_estimates(loss_fn, w_star, epsilons, mc_samples, radius, seed)
    keep = vols > 0
    slope = np.polyfit(np.log(eps[keep]), np.log(vols[keep]), 1)[0]
    return float(slope)


# -- toy losses for cross-validation -------------------------------------------


@dataclass(frozen=True)
class ToyLoss:
    """A low-dimensional loss with analytic gradient for estimator checks."""

    name: str
    dim: int
    loss: object            # w -> float
    grad_loss: object       # w -> ndarray
    closed_form: object     # (nbeta, gamma) -> float, or None
    epsilons: tuple
    radius: float = 1.0


def _quadratic_toy(name, h):
    h = np.asarray(h, dtype=np.float64)

    def loss(w):
        w = np.asarray(w, dtype=np.float64)
        return 0.5 * float(np.dot(h, w * w))

    def grad_loss(w):
        return h * np.asarray(w, dtype=np.float64)

    def closed(nbeta, gamma):
        return float(np.sum(nbeta * h / (2.0 * (nbeta * h + gamma))))

    eps = tuple(np.logspace(-4, -1, 7)) if h.size == 1 else tuple(np.logspace(-3, -1, 7))
    return ToyLoss(name, h.size, loss, grad_loss, closed, eps)


def _monomial_toy():
    def loss(w):
        return float(w[0] ** 2 * w[1] ** 2)

    def grad_loss(w):
        return np.array([2.0 * w[0] * w[1] ** 2, 2.0 * w[0] ** 2 * w[1]])

    # a wide ball and small epsilons keep the log-factor bias of the slope
    # inside the +-0.1 band around the exact value 1/2
    return ToyLoss("monomial-2d", 2, loss, grad_loss, None,
                   tuple(np.logspace(-6, -3, 7)), radius=4.0)


def _constant_toy():
    def loss(w):
        return 0.25

    def grad_loss(w):
        return np.zeros_like(np.asarray(w, dtype=np.float64))

    def closed(nbeta, gamma):
        return 0.0

    return ToyLoss("constant", 2, loss, grad_loss, closed,
                   tuple(np.logspace(-4, -1, 5)))


def toy_suite():
    """The fixed validation losses: quadratics, a monomial, a constant."""
    return (
        _quadratic_toy("quadratic-1d", [2.0]),      # loss w^2
        _quadratic_toy("isotropic-2d", [2.0, 2.0]),  # loss w1^2 + w2^2
        _monomial_toy(),
        _constant_toy(),
    )


def toy_estimate(toy, n=256, gamma=1.0, sampler=None, chains=2):
    """MCMC estimate on a toy loss with the nbeta scaling applied directly."""
    beta = beta_of(n)
    nbeta = n * beta
    w_star = np.zeros(toy.dim)
    loss_star = toy.loss(w_star)

    def target(w):
        diff = w - w_star
        val = -nbeta * (toy.loss(w) - loss_star) - 0.5 * gamma * float(np.dot(diff, diff))
        g = -nbeta * toy.grad_loss(w) - gamma * diff
        return val, g

    cfg = sampler if sampler is not None else NutsConfig(warmup_draws=500, main_draws=1500)
    return _estimate_from_target(
        target, toy.loss, loss_star, nbeta, cfg, chains, w_star,
        details={"toy": toy.name, "n": n, "gamma": gamma})


def cross_validate_estimator(n=256, gamma=1.0, sampler=None, chains=2,
                             mc_samples=200_000, seed=0):
    """Compare the MCMC estimator against volume scaling on the toy suite.

    Returns one report row per toy: both estimates, the closed form where one
    exists, and the discrepancies.
    """
    rows = []
    for toy in toy_suite():
        est = toy_estimate(toy, n=n, gamma=gamma, sampler=sampler, chains=chains)
        w_star = np.zeros(toy.dim)
        try:
            vol = volume_scaling_lambda(toy.loss, w_star, toy.epsilons,
                                        mc_samples=mc_samples,
                                        radius=toy.radius, seed=seed)
            vol_err = None
        except ResolutionFailure as exc:
            vol, vol_err = None, str(exc)
        closed = toy.closed_form(n * beta_of(n), gamma) if toy.closed_form else None
        row = {
            "name": toy.name,
            "dim": toy.dim,
            "mcmc_lambda": est.lambda_hat,
            "ci_low": est.ci_low,
            "ci_high": est.ci_high,
            "ess": est.ess,
            "volume_lambda": vol,
            "volume_error": vol_err,
            "closed_form": closed,
        }
        if closed is not None:
            row["mcmc_vs_closed"] = abs(est.lambda_hat - closed)
        if vol is not None and closed is not None:
            row["volume_vs_closed"] = abs(vol - closed)
        rows.append(row)
    return rows


def save_llc_csv(entries, path, config_hash=None):
    """Sweep results as CSV: one row per checkpoint."""
    with open(path, "w", encoding="utf-8") as fh:
        if config_hash is not None:
            fh.write(f"# config_hash={config_hash}\n")
        fh.write("iteration,lambda_hat,ci_low,ci_high,ess,divergences,negative_flag,error\n")
        for e in entries:
            if e.estimate is None:
                fh.write(f"{e.iteration},nan,nan,nan,nan,0,0,{e.error!r}\n")
                continue
            s = e.estimate
            fh.write(
                f"{e.iteration},{s.lambda_hat:.17g},{s.ci_low:.17g},{s.ci_high:.17g},"
                f"{s.ess:.17g},{s.divergences},{int(s.negative_flag)},\n"
            )
