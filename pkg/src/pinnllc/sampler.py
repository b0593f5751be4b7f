"""No-U-Turn sampler with dual-averaging step-size adaptation.

Multinomial NUTS: trajectories are built by doubling, states inside a
trajectory are weighted by exp(H0 - H), and the proposal is drawn from those
weights (biased toward the newer half at the top level).  The U-turn check
uses accumulated momentum sums across subtrees, and an energy-error threshold
flags divergent transitions.  Also defines the tempered, localized target
density whose expectation yields the learning-coefficient estimate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import NumericalFailure, grad
from .problem import gauss_norm_const, nll, nll_expr

__all__ = [
    "NutsConfig",
    "ChainDraws",
    "SamplerFailure",
    "nuts_sample",
    "leapfrog",
    "kinetic_energy",
    "find_reasonable_epsilon",
    "tempered_log_density",
    "make_tempered_target",
    "save_chain_csv",
]

DIVERGENCE_THRESHOLD = 1000.0


class SamplerFailure(RuntimeError):
    """Raised when a chain cannot produce usable draws."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


@dataclass(frozen=True)
class NutsConfig:
    warmup_draws: int = 1000
    main_draws: int = 1000
    target_accept: float = 0.8
    max_tree_depth: int = 10
    mass_matrix: str = "identity"  # or "adapted-diagonal"
    seed: int = 0
    store_positions: bool = False
    divergence_threshold: float = DIVERGENCE_THRESHOLD

    def __post_init__(self):
        if self.warmup_draws < 1 or self.main_draws < 1:
            raise ValueError("draw counts must be >= 1")
        if not 0.0 < self.target_accept < 1.0:
            raise ValueError("target_accept must be in (0, 1)")
        if self.max_tree_depth < 1:
            raise ValueError("max_tree_depth must be >= 1")
        if self.mass_matrix not in ("identity", "adapted-diagonal"):
            raise ValueError(f"unknown mass_matrix {self.mass_matrix!r}")


@dataclass
class ChainDraws:
    """Post-warmup record of one chain.

    Positions are dropped by default; ``aux`` holds the per-draw value of the
    auxiliary statistic (the sample NLL in the estimator's use).
    """

    aux: np.ndarray | None
    log_densities: np.ndarray
    accept_stats: np.ndarray
    tree_depths: np.ndarray
    leapfrog_counts: np.ndarray
    divergent: np.ndarray
    positions: np.ndarray | None
    divergences: int
    warmup_divergences: int
    step_size: float
    inv_mass: np.ndarray


def kinetic_energy(r, inv_mass):
    return 0.5 * float(np.dot(r, inv_mass * r))


def leapfrog(target, pos, mom, grad_logp, eps, inv_mass):
    """One leapfrog step; returns (pos, mom, logp, grad) after the step."""
    mom_half = mom + 0.5 * eps * grad_logp
    pos_new = pos + eps * (inv_mass * mom_half)
    logp_new, grad_new = target(pos_new)
    mom_new = mom_half + 0.5 * eps * grad_new
    return pos_new, mom_new, logp_new, grad_new


def find_reasonable_epsilon(target, pos, logp, grad_logp, inv_mass, rng):
    """Double or halve the step until the one-step accept ratio crosses 1/2."""
    eps = 1.0
    r = rng.standard_normal(pos.shape[0]) / np.sqrt(inv_mass)
    h0 = logp - kinetic_energy(r, inv_mass)

    def one_step(eps):
        _, r_new, logp_new, _ = leapfrog(target, pos, r, grad_logp, eps, inv_mass)
        h = logp_new - kinetic_energy(r_new, inv_mass)
        return -math.inf if math.isnan(h) else h - h0

    comparison = one_step(eps)
    direction = 1 if comparison > math.log(0.5) else -1
    for _ in range(100):
        if direction * comparison <= -direction * math.log(2.0):
            break
        eps *= 2.0 ** direction
        if not 1e-12 < eps < 1e12:
            break
        comparison = one_step(eps)
    return eps


class _DualAveraging:
    """Nesterov dual averaging of log step size toward a target accept rate."""

    GAMMA = 0.05
    T0 = 10.0
    KAPPA = 0.75

    def __init__(self, eps0, target_accept):
        self.target = target_accept
        self.reset(eps0)

    def reset(self, eps0):
        self.mu = math.log(10.0 * eps0)
        self.log_eps = math.log(eps0)
        self.log_eps_bar = 0.0
        self.h_bar = 0.0
        self.m = 0

    def update(self, accept_stat):
        self.m += 1
        frac = 1.0 / (self.m + self.T0)
        self.h_bar = (1.0 - frac) * self.h_bar + frac * (self.target - accept_stat)
        self.log_eps = self.mu - math.sqrt(self.m) / self.GAMMA * self.h_bar
        w = self.m ** (-self.KAPPA)
        self.log_eps_bar = w * self.log_eps + (1.0 - w) * self.log_eps_bar

    @property
    def eps(self):
        return math.exp(self.log_eps)

    @property
    def eps_final(self):
        return math.exp(self.log_eps_bar)


class _Tree:
    """A trajectory segment: edge states, momentum sum, and the proposal."""

    __slots__ = (
        "pos_minus", "mom_minus", "grad_minus",
        "pos_plus", "mom_plus", "grad_plus",
        "logp_minus", "logp_plus",
        "r_sum", "pos", "logp", "grad",
        "log_weight", "alive", "accept_sum", "n_leapfrog", "divergent",
    )

    def __init__(self, pos, mom, logp, grad_logp, log_weight, alive,
                 accept_sum, n_leapfrog, divergent):
        self.pos_minus = pos
        self.pos_plus = pos
        self.mom_minus = mom
        self.mom_plus = mom
        self.grad_minus = grad_logp
        self.grad_plus = grad_logp
        self.logp_minus = logp
        self.logp_plus = logp
        self.r_sum = np.copy(mom)
        self.pos = pos
        self.logp = logp
        self.grad = grad_logp
        self.log_weight = log_weight
        self.alive = alive
        self.accept_sum = accept_sum
        self.n_leapfrog = n_leapfrog
        self.divergent = divergent

    def merge(self, other, direction, inv_mass, rng, root):
        """Absorb a same-depth (or top-level) subtree built in ``direction``."""
        # boundary momenta where the two segments meet, read before the edge
        # of the combined tree is overwritten
        if direction == -1:
            inner_left_plus = other.mom_plus
            inner_right_minus = self.mom_minus
            rho_left, rho_right = other.r_sum, self.r_sum
            self.pos_minus = other.pos_minus
            self.mom_minus = other.mom_minus
            self.grad_minus = other.grad_minus
            self.logp_minus = other.logp_minus
        else:
            inner_left_plus = self.mom_plus
            inner_right_minus = other.mom_minus
            rho_left, rho_right = self.r_sum, other.r_sum
            self.pos_plus = other.pos_plus
            self.mom_plus = other.mom_plus
            self.grad_plus = other.grad_plus
            self.logp_plus = other.logp_plus

        self.accept_sum += other.accept_sum
        self.n_leapfrog += other.n_leapfrog
        self.divergent |= other.divergent
        self.alive &= other.alive
        if not self.alive:
            return

        if not root:
            self.log_weight = np.logaddexp(self.log_weight, other.log_weight)

        # multinomial swap toward the other tree; top-level merges bias
        # toward the newer half by comparing against the pre-merge weight
        p = min(1.0, math.exp(min(other.log_weight - self.log_weight, 0.0)))
        if rng.random() < p:
            self.pos = other.pos
            self.logp = other.logp
            self.grad = other.grad

        if root:
            self.log_weight = np.logaddexp(self.log_weight, other.log_weight)

        self.r_sum = self.r_sum + other.r_sum

        def ok(rho, mom):
            return float(np.dot(rho, inv_mass * mom)) > 0.0

        alive = ok(self.r_sum, self.mom_minus) and ok(self.r_sum, self.mom_plus)
        # across-subtree checks catch U-turns the combined test misses
        ext_left = rho_left + inner_right_minus
        ext_right = rho_right + inner_left_plus
        alive = alive and ok(ext_left, self.mom_minus)
        alive = alive and ok(ext_left, inner_right_minus)
        alive = alive and ok(ext_right, inner_left_plus)
        alive = alive and ok(ext_right, self.mom_plus)
        self.alive = alive


def _build_tree(target, tree, direction, depth, eps, inv_mass, h0, threshold, rng):
    if depth == 0:
        if direction == -1:
            pos, mom, grad_logp = tree.pos_minus, tree.mom_minus, tree.grad_minus
        else:
            pos, mom, grad_logp = tree.pos_plus, tree.mom_plus, tree.grad_plus
        pos_new, mom_new, logp_new, grad_new = leapfrog(
            target, pos, mom, grad_logp, direction * eps, inv_mass)
        h = logp_new - kinetic_energy(mom_new, inv_mass)
        comparison = -math.inf if math.isnan(h) else h - h0
        divergent = -comparison > threshold
        return _Tree(
            pos_new, mom_new, logp_new, grad_new,
            log_weight=comparison,
            alive=not divergent,
            accept_sum=min(1.0, math.exp(min(comparison, 0.0))),
            n_leapfrog=1,
            divergent=divergent,
        )
    inner = _build_tree(target, tree, direction, depth - 1, eps, inv_mass, h0,
                        threshold, rng)
    if inner.alive:
        outer = _build_tree(target, inner, direction, depth - 1, eps, inv_mass,
                            h0, threshold, rng)
        inner.merge(outer, direction, inv_mass, rng, root=False)
    return inner


def _transition(target, pos, logp, grad_logp, eps, inv_mass, max_depth,
                threshold, rng):
    """One NUTS draw; returns (tree, depth_reached)."""
    d = pos.shape[0]
    mom0 = rng.standard_normal(d) / np.sqrt(inv_mass)
    h0 = logp - kinetic_energy(mom0, inv_mass)
    tree = _Tree(pos, mom0, logp, grad_logp, log_weight=0.0, alive=True,
                 accept_sum=1.0, n_leapfrog=1, divergent=False)
    depth = 0
    while depth < max_depth and tree.alive:
        direction = 1 if rng.random() < 0.5 else -1
        sub = _build_tree(target, tree, direction, depth, eps, inv_mass, h0,
                          threshold, rng)
        tree.merge(sub, direction, inv_mass, rng, root=True)
        depth += 1
    return tree, depth


def nuts_sample(target, init, config, aux_fn=None):
    """Run one NUTS chain and return its post-warmup draws.

    ``target`` maps a position to (log density, gradient).  Warmup adapts the
    step size by dual averaging (and optionally a diagonal mass matrix);
    ``aux_fn`` is evaluated at every stored draw.
    """
    pos = np.array(init, dtype=np.float64).ravel()
    d = pos.shape[0]
    rng = np.random.default_rng(np.random.SeedSequence(config.seed))

    logp, grad_logp = target(pos)
    if not math.isfinite(logp):
        raise ValueError("initial position has non-finite log density")

    inv_mass = np.ones(d)
    eps = find_reasonable_epsilon(target, pos, logp, grad_logp, inv_mass, rng)
    da = _DualAveraging(eps, config.target_accept)

    adapt_mass = config.mass_matrix == "adapted-diagonal"
    if adapt_mass:
        head = max(1, int(0.15 * config.warmup_draws))
        tail = max(1, int(0.10 * config.warmup_draws))
        window_end = max(head + 1, config.warmup_draws - tail)
    else:
        head, window_end = 0, 0
    welford_n = 0
    welford_mean = np.zeros(d)
    welford_m2 = np.zeros(d)

    warmup_divergences = 0
    for m in range(1, config.warmup_draws + 1):
        tree, _ = _transition(target, pos, logp, grad_logp, da.eps, inv_mass,
                              config.max_tree_depth,
                              config.divergence_threshold, rng)
        pos, logp, grad_logp = tree.pos, tree.logp, tree.grad
        warmup_divergences += int(tree.divergent)
        da.update(tree.accept_sum / tree.n_leapfrog)

        if adapt_mass and head < m <= window_end:
            welford_n += 1
            delta = pos - welford_mean
            welford_mean += delta / welford_n
            welford_m2 += delta * (pos - welford_mean)
            if m == window_end and welford_n >= 2:
                var = welford_m2 / (welford_n - 1)
                shrink = welford_n / (welford_n + 5.0)
                inv_mass = shrink * var + (1.0 - shrink) * 1e-3
                inv_mass = np.maximum(inv_mass, 1e-12)
                eps = find_reasonable_epsilon(target, pos, logp, grad_logp,
                                              inv_mass, rng)
                da.reset(eps)

    if warmup_divergences == config.warmup_draws and config.warmup_draws >= 10:
        raise SamplerFailure(
            "every warmup transition diverged",
            {"warmup_divergences": warmup_divergences, "step_size": da.eps},
        )

    eps = da.eps_final
    aux = np.empty(config.main_draws) if aux_fn is not None else None
    log_densities = np.empty(config.main_draws)
    accept_stats = np.empty(config.main_draws)
    tree_depths = np.empty(config.main_draws, dtype=np.int64)
    leapfrog_counts = np.empty(config.main_draws, dtype=np.int64)
    divergent = np.zeros(config.main_draws, dtype=bool)
    positions = np.empty((config.main_draws, d)) if config.store_positions else None

    divergences = 0
    for i in range(config.main_draws):
        tree, depth = _transition(target, pos, logp, grad_logp, eps, inv_mass,
                                  config.max_tree_depth,
                                  config.divergence_threshold, rng)
        pos, logp, grad_logp = tree.pos, tree.logp, tree.grad
        divergences += int(tree.divergent)
        divergent[i] = tree.divergent
        log_densities[i] = logp
        accept_stats[i] = tree.accept_sum / tree.n_leapfrog
        tree_depths[i] = depth
        leapfrog_counts[i] = tree.n_leapfrog
        if aux is not None:
            aux[i] = aux_fn(pos)
        if positions is not None:
            positions[i] = pos

    return ChainDraws(
        aux=aux,
        log_densities=log_densities,
        accept_stats=accept_stats,
        tree_depths=tree_depths,
        leapfrog_counts=leapfrog_counts,
        divergent=divergent,
        positions=positions,
        divergences=divergences,
        warmup_divergences=warmup_divergences,
        step_size=eps,
        inv_mass=inv_mass,
    )


# -- the tempered, localized target -------------------------------------------


def make_tempered_target(problem, arch, w_star, beta, gamma, model, points,
                         mask="domain"):
    """Closure computing the anchored tempered log density and its gradient.

    log p(w) = -n beta (L_n(w) - L_n(w*)) - (gamma/2) ||w - w*||^2, zero at
    the anchor by construction.  Returns (target, info) where info carries the
    anchor values needed by the estimator.
    """
    w_star = np.array(w_star, dtype=np.float64)
    n = points.n
    xc = points.xs.reshape(-1, 1)
    tc = points.ts.reshape(-1, 1)
    forcing_values = problem.forcing(xc, tc)
    nbeta = n * beta

    def raw_nll(wv):
        return nll_expr(problem, arch, wv, points, model, mask, forcing_values)

    # anchor through the identical taped arithmetic so the log density is
    # exactly zero at w_star, not merely close
    nll_star, _ = grad(raw_nll, w_star)

    def expr(wv):
        ln = raw_nll(wv)
        diff = wv - w_star
        return (ln - nll_star) * (-nbeta) - (gamma / 2.0) * (diff ** 2).sum()

    def target(w):
        try:
            return grad(expr, w)
        except NumericalFailure:
            return -math.inf, np.zeros_like(w)

    def nll_of(w):
        return nll(problem, arch, w, points, model, mask)

    info = {
        "n": n,
        "beta": beta,
        "gamma": gamma,
        "sigma": model.sigma,
        "nll_star": nll_star,
        "norm_const": gauss_norm_const(model.sigma),
    }
    return target, nll_of, info


def tempered_log_density(problem, arch, w, w_star, beta, gamma, model, points,
                         mask="domain"):
    """Anchored tempered log density at ``w`` with its gradient."""
    target, _, _ = make_tempered_target(problem, arch, w_star, beta, gamma,
                                        model, points, mask)
    return target(np.asarray(w, dtype=np.float64))


def save_chain_csv(draws, path, config_hash=None):
    """Per-draw summaries: aux statistic, log density, divergence, depth."""
    with open(path, "w", encoding="utf-8") as fh:
        if config_hash is not None:
            fh.write(f"# config_hash={config_hash}\n")
        fh.write(f"# step_size={draws.step_size:.17g}\n")
        fh.write("draw,aux,log_density,divergent,tree_depth,leapfrogs,accept\n")
        for i in range(draws.log_densities.shape[0]):
            a = draws.aux[i] if draws.aux is not None else math.nan
            fh.write(
                f"{i},{a:.17g},{draws.log_densities[i]:.17g},"
                f"{int(draws.divergent[i])},{draws.tree_depths[i]},"
                f"{draws.leapfrog_counts[i]},{draws.accept_stats[i]:.17g}\n"
            )
