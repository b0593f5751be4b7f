"""Estimator-style front end: a trainable constrained network and a
learning-coefficient estimator, both usable with clone/get_params."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin

from .llc import LlcConfig, estimate_llc
from .network import MlpArchitecture, hard_constrained_u
from .problem import HeatIbvp, default_heat_problem, residual, test_mse
from .sampler import NutsConfig
from .train import TrainConfig, train
from .validation import check_fitted, check_xt

__all__ = ["HeatPinn", "LocalLearningCoefficient"]


def _default_problem(x_lo, x_hi, t_max):
    base = default_heat_problem()
    if (x_lo, x_hi, t_max) == (base.x_lo, base.x_hi, base.t_max):
        return base
    return HeatIbvp(x_lo=x_lo, x_hi=x_hi, t_max=t_max,
                    forcing=base.forcing, exact=base.exact)


class HeatPinn(BaseEstimator, RegressorMixin):
    """Hard-constrained network for the heat problem, trained by Adam.

    fit ignores ``X`` and ``y``: training data is the streamed residual point
    cloud determined by ``seed``.  predict evaluates the constrained solution
    at (x, t) rows.
    """

    def __init__(self, hidden=(100, 100, 100), activation="tanh",
                 batch_size=32, learning_rate=1e-4, iterations=50_000,
                 seed=0, log_every=100, checkpoint_every=10_000,
                 mask="domain", x_lo=0.0, x_hi=2.0, t_max=2.0):
        self.hidden = hidden
        self.activation = activation
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.iterations = iterations
        self.seed = seed
        self.log_every = log_every
        self.checkpoint_every = checkpoint_every
        self.mask = mask
        self.x_lo = x_lo
        self.x_hi = x_hi
        self.t_max = t_max

    def _architecture(self):
        return MlpArchitecture(2, tuple(self.hidden), 1, self.activation)

    def fit(self, X=None, y=None, out_dir=None):
        self.problem_ = _default_problem(self.x_lo, self.x_hi, self.t_max)
        self.arch_ = self._architecture()
        cfg = TrainConfig(
            batch_size=self.batch_size, learning_rate=self.learning_rate,
            iterations=self.iterations, seed=self.seed,
            log_every=self.log_every, checkpoint_every=self.checkpoint_every,
            mask=self.mask)
        result = train(self.problem_, self.arch_, cfg, out_dir=out_dir)
        self.params_ = result.params
        self.checkpoints_ = result.checkpoints
        self.loss_log_ = result.log
        self.train_result_ = result
        return self

    def predict(self, X):
        check_fitted(self, "params_")
        x, t = check_xt(X)
        return hard_constrained_u(self.problem_, self.arch_, self.params_,
                                  x, t, self.mask)

    def residuals(self, X):
        check_fitted(self, "params_")
        x, t = check_xt(X)
        return residual(self.problem_, self.arch_, self.params_, x, t, self.mask)

    def grid_mse(self, grid_nx=51, grid_nt=51):
        check_fitted(self, "params_")
        return test_mse(self.problem_, self.arch_, self.params_,
                        grid_nx, grid_nt, self.mask)


class LocalLearningCoefficient(BaseEstimator):
    """Tempered-posterior estimate of the local learning coefficient.

    fit accepts either a fitted :class:`HeatPinn` or a raw parameter vector
    (then ``arch`` and ``problem`` must be supplied) and exposes the estimate
    through ``lambda_hat_`` and its uncertainty through ``ci_``.
    """

    def __init__(self, n=256, gamma=1.0, sigma=1.0, chains=2,
                 warmup_draws=1000, main_draws=1000, target_accept=0.8,
                 max_tree_depth=10, mass_matrix="identity", seed=0,
                 points_seed=0):
        self.n = n
        self.gamma = gamma
        self.sigma = sigma
        self.chains = chains
        self.warmup_draws = warmup_draws
        self.main_draws = main_draws
        self.target_accept = target_accept
        self.max_tree_depth = max_tree_depth
        self.mass_matrix = mass_matrix
        self.seed = seed
        self.points_seed = points_seed

    def _config(self):
        sampler = NutsConfig(
            warmup_draws=self.warmup_draws, main_draws=self.main_draws,
            target_accept=self.target_accept,
            max_tree_depth=self.max_tree_depth,
            mass_matrix=self.mass_matrix, seed=self.seed)
        return LlcConfig(n=self.n, gamma=self.gamma, sigma=self.sigma,
                         chains=self.chains, sampler=sampler,
                         points_seed=self.points_seed)

    def fit(self, anchor, y=None, arch=None, problem=None, mask="domain"):
        if isinstance(anchor, HeatPinn):
            check_fitted(anchor, "params_")
            problem = anchor.problem_
            arch = anchor.arch_
            mask = anchor.mask
            w_star = anchor.params_
        else:
            if arch is None or problem is None:
                raise ValueError(
                    "fitting from a raw parameter vector requires arch and problem")
            w_star = np.asarray(anchor, dtype=np.float64)
        estimate = estimate_llc(problem, arch, w_star, self._config(), mask)
        self.estimate_ = estimate
        self.lambda_hat_ = estimate.lambda_hat
        self.ci_ = (estimate.ci_low, estimate.ci_high)
        self.per_chain_means_ = estimate.per_chain_means
        self.ess_ = estimate.ess
        self.divergences_ = estimate.divergences
        self.negative_flag_ = estimate.negative_flag
        return self
