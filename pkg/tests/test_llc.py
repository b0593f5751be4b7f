"""Learning-coefficient estimator checks against closed forms and the
volume-scaling oracle."""

import math
import os

import numpy as np
import pytest

from pinnllc.llc import (
    LlcConfig,
    LlcEstimate,
    ResolutionFailure,
    SweepEntry,
    ToyLoss,
    beta_of,
    cross_validate_estimator,
    effective_sample_size,
    estimate_llc,
    llc_sweep,
    save_llc_csv,
    toy_estimate,
    toy_suite,
    volume_estimates,
    volume_scaling_lambda,
)
from pinnllc.network import Checkpoint, MlpArchitecture, init_params
from pinnllc.problem import (
    ResidualModel,
    default_heat_problem,
    nll,
    pinn_loss,
    sample_inputs,
)
from pinnllc.sampler import NutsConfig, make_tempered_target, nuts_sample

N_REF = 256
NBETA = N_REF * beta_of(N_REF)


def test_beta_of():
    assert beta_of(256) == pytest.approx(1.0 / math.log(256.0), rel=1e-15)
    assert beta_of(math.e) == pytest.approx(1.0, rel=1e-12)
    with pytest.raises(ValueError):
        beta_of(1)


def test_config_validation():
    with pytest.raises(ValueError):
        LlcConfig(n=1)
    with pytest.raises(ValueError):
        LlcConfig(gamma=-0.5)
    with pytest.raises(ValueError):
        LlcConfig(sigma=0.0)
    with pytest.raises(ValueError):
        LlcConfig(chains=0)
    assert LlcConfig().beta == pytest.approx(beta_of(256))


def test_estimate_interval_must_bracket():
    with pytest.raises(ValueError):
        LlcEstimate(lambda_hat=1.0, ci_low=1.1, ci_high=2.0,
                    per_chain_means=(1.0,), ess=10.0, divergences=0,
                    negative_flag=False)


def test_ess_iid_and_constant():
    rng = np.random.default_rng(0)
    x = rng.standard_normal(4000)
    ess = effective_sample_size(x)
    assert 2000.0 < ess <= 4000.0
    assert effective_sample_size(np.full(500, 3.7)) == 500.0
    assert effective_sample_size(np.array([1.0, 2.0])) == 2.0


def test_ess_ar1_matches_autocorrelation_time():
    # AR(1) with phi = 0.9 has integrated autocorrelation time 19
    rng = np.random.default_rng(1)
    n = 20000
    x = np.empty(n)
    x[0] = 0.0
    eps = rng.standard_normal(n)
    for i in range(1, n):
        x[i] = 0.9 * x[i - 1] + eps[i]
    ess = effective_sample_size(x)
    assert n / 19.0 / 2.0 < ess < n / 19.0 * 2.0


def quadratic_toy(h):
    h = np.asarray(h, dtype=np.float64)

    def loss(w):
        return 0.5 * float(np.dot(h, np.asarray(w) ** 2))

    def grad_loss(w):
        return h * np.asarray(w, dtype=np.float64)

    def closed(nbeta, gamma):
        return float(np.sum(nbeta * h / (2.0 * (nbeta * h + gamma))))

    return ToyLoss("quad", h.size, loss, grad_loss, closed,
                   tuple(np.logspace(-3, -1, 5)))


@pytest.mark.parametrize("h", [[2.0], [2.0, 2.0], list(np.linspace(0.5, 5.0, 10))])
def test_quadratic_matches_closed_form(h):
    toy = quadratic_toy(h)
    gamma = 1.0
    est = toy_estimate(toy, n=N_REF, gamma=gamma,
                       sampler=NutsConfig(warmup_draws=500, main_draws=1500, seed=21))
    closed = toy.closed_form(NBETA, gamma)
    half = est.ci_high - est.lambda_hat
    assert abs(est.lambda_hat - closed) < 3.0 * half
    assert est.ess > 100.0
    assert len(est.per_chain_means) == 2


def test_small_gamma_recovers_half_per_direction():
    # gamma -> 0 turns the correction off: the 2-d isotropic quadratic gives 1
    toy = quadratic_toy([2.0, 2.0])
    est = toy_estimate(toy, n=N_REF, gamma=1e-6,
                       sampler=NutsConfig(warmup_draws=500, main_draws=2000, seed=4))
    assert abs(est.lambda_hat - 1.0) < 0.05


def test_constant_loss_gives_exactly_zero():
    toys = {t.name: t for t in toy_suite()}
    est = toy_estimate(toys["constant"], n=N_REF, gamma=1.0,
                       sampler=NutsConfig(warmup_draws=200, main_draws=400, seed=1))
    assert est.lambda_hat == 0.0
    assert est.ci_low <= 0.0 <= est.ci_high
    assert not est.negative_flag


def test_negative_estimate_reported_unclamped():
    # anchor at a local maximum: the tempered mean loss drops below the
    # anchor value and the estimate must stay negative
    toy = ToyLoss(
        "concave", 1,
        lambda w: -float(w[0] ** 2),
        lambda w: np.array([-2.0 * w[0]]),
        None, (1e-3, 1e-2))
    est = toy_estimate(toy, n=N_REF, gamma=200.0,
                       sampler=NutsConfig(warmup_draws=300, main_draws=1000, seed=2))
    assert est.lambda_hat < 0.0
    assert est.negative_flag
    assert est.ci_low < 0.0


def test_volume_slope_one_dim_quadratic():
    lam = volume_scaling_lambda(lambda w: float(w[0] ** 2), np.zeros(1),
                                np.logspace(-4, -1, 7), mc_samples=200_000, seed=0)
    assert abs(lam - 0.5) < 0.05


def test_volume_slope_two_dim_isotropic():
    lam = volume_scaling_lambda(lambda w: float(w[0] ** 2 + w[1] ** 2), np.zeros(2),
                                np.logspace(-3, -1, 7), mc_samples=200_000, seed=0)
    assert abs(lam - 1.0) < 0.05


def test_volume_slope_monomial_within_log_bias():
    # w1^2 w2^2 has lambda 1/2; the finite-epsilon slope carries a log-factor
    # bias, so the band is wider
    lam = volume_scaling_lambda(lambda w: float(w[0] ** 2 * w[1] ** 2), np.zeros(2),
                                np.logspace(-6, -3, 7), mc_samples=600_000,
                                radius=4.0, seed=0)
    assert 0.4 < lam < 0.6


def test_volumes_monotone_and_shifted_anchor():
    eps, vols = volume_estimates(lambda w: float((w[0] - 1.0) ** 2), np.ones(1),
                                 np.logspace(-4, -1, 7), 100_000, 1.0, 3)
    assert np.all(np.diff(vols) >= 0.0)
    assert np.all(vols > 0.0)
    assert np.all(np.diff(eps) > 0.0)


def test_volume_resolution_failure():
    with pytest.raises(ResolutionFailure):
        volume_estimates(lambda w: float(w[0] ** 2), np.zeros(1),
                         (1e-10, 1e-2), 1000, 1.0, 0)


def test_volume_input_validation():
    with pytest.raises(ValueError):
        volume_estimates(lambda w: 0.0, np.zeros(5), (1e-3, 1e-2), 100, 1.0, 0)
    with pytest.raises(ValueError):
        volume_estimates(lambda w: 0.0, np.zeros(1), (1e-3,), 100, 1.0, 0)


@pytest.fixture(scope="module")
def tiny_pinn():
    problem = default_heat_problem()
    arch = MlpArchitecture(2, (4,), 1)
    w_star = init_params(arch, seed=5)
    return problem, arch, w_star


def test_estimate_llc_structure_and_determinism(tiny_pinn):
    problem, arch, w_star = tiny_pinn
    cfg = LlcConfig(n=16, chains=2,
                    sampler=NutsConfig(warmup_draws=100, main_draws=150, seed=7))
    a = estimate_llc(problem, arch, w_star, cfg)
    b = estimate_llc(problem, arch, w_star, cfg)
    assert a.lambda_hat == b.lambda_hat
    assert a.ci_low == b.ci_low and a.ci_high == b.ci_high
    assert a.ci_low <= a.lambda_hat <= a.ci_high
    assert len(a.per_chain_means) == 2
    assert a.ess > 0.0
    assert a.details["n"] == 16
    assert a.negative_flag == (a.lambda_hat < 0.0)


def test_estimate_llc_rejects_bad_w_star(tiny_pinn):
    problem, arch, w_star = tiny_pinn
    cfg = LlcConfig(n=16, sampler=NutsConfig(warmup_draws=10, main_draws=10))
    with pytest.raises(ValueError):
        estimate_llc(problem, arch, np.full_like(w_star, math.nan), cfg)
    with pytest.raises(ValueError):
        estimate_llc(problem, arch, w_star[:-1], cfg)


def test_scale_identity_between_nll_and_pinn_routes(tiny_pinn):
    # lambda via the NLL route equals (n beta / 2 sigma^2) * mean pinn-loss
    # excess up to roundoff, because the two losses differ by an affine map
    problem, arch, w_star = tiny_pinn
    sigma = 0.7
    model = ResidualModel(sigma)
    points = sample_inputs(problem, 16, seed=2)
    beta = beta_of(16)
    nbeta = 16 * beta
    target, nll_of, info = make_tempered_target(
        problem, arch, w_star, beta, 1.0, model, points)
    draws = nuts_sample(target, w_star,
                        NutsConfig(warmup_draws=100, main_draws=200, seed=3,
                                   store_positions=True),
                        aux_fn=nll_of)
    lam_nll = nbeta * (float(np.mean(draws.aux)) - info["nll_star"])
    pinn_vals = np.array([pinn_loss(problem, arch, w, points)
                          for w in draws.positions])
    pinn_star = pinn_loss(problem, arch, w_star, points)
    lam_pinn = nbeta / (2.0 * sigma ** 2) * (float(np.mean(pinn_vals)) - pinn_star)
    scale = max(abs(lam_nll), abs(lam_pinn), 1e-12)
    assert abs(lam_nll - lam_pinn) / scale < 1e-10


def test_sweep_records_failures_and_continues(tiny_pinn, tmp_path):
    problem, arch, w_star = tiny_pinn
    cfg = LlcConfig(n=16, chains=1,
                    sampler=NutsConfig(warmup_draws=60, main_draws=80, seed=9))
    good = Checkpoint(arch=arch, params=w_star, seed=5, iteration=0)
    bad = Checkpoint(arch=arch, params=np.full_like(w_star, math.nan),
                     seed=5, iteration=100)
    entries = llc_sweep(problem, arch, [good, bad], cfg)
    assert isinstance(entries[0], SweepEntry)
    assert entries[0].estimate is not None and entries[0].error is None
    assert entries[1].estimate is None and entries[1].error

    path = os.path.join(tmp_path, "llc.csv")
    save_llc_csv(entries, path, config_hash="deadbeef")
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    assert lines[0] == "# config_hash=deadbeef"
    assert lines[1].startswith("iteration,lambda_hat")
    assert len(lines) == 4

    with pytest.raises(ValueError):
        llc_sweep(problem, arch, [], cfg)


def test_cross_validation_report():
    rows = cross_validate_estimator(
        sampler=NutsConfig(warmup_draws=300, main_draws=800, seed=13),
        mc_samples=120_000)
    by_name = {r["name"]: r for r in rows}
    assert set(by_name) == {"quadratic-1d", "isotropic-2d", "monomial-2d", "constant"}

    quad = by_name["quadratic-1d"]
    assert quad["closed_form"] == pytest.approx(NBETA * 2.0 / (2.0 * (NBETA * 2.0 + 1.0)))
    assert quad["mcmc_vs_closed"] < 3.0 * (quad["ci_high"] - quad["mcmc_lambda"])
    assert abs(quad["volume_lambda"] - 0.5) < 0.05

    iso = by_name["isotropic-2d"]
    assert abs(iso["volume_lambda"] - 1.0) < 0.05
    assert iso["mcmc_vs_closed"] < 3.0 * (iso["ci_high"] - iso["mcmc_lambda"])

    mono = by_name["monomial-2d"]
    assert mono["closed_form"] is None
    assert 0.4 < mono["volume_lambda"] < 0.6

    const = by_name["constant"]
    assert const["mcmc_lambda"] == 0.0
    assert const["closed_form"] == 0.0
