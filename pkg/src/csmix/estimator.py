"""Scikit-learn style estimators wrapping the posterior sampler."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .distributions import DEFAULT_TRAVEL_TIME
from .exceptions import DomainError, UnsupportedOperationError
from .model import Dataset, PriorConfig
from .sampler import ModelKind, SamplerConfig, run_chain
from .simulation import edge_detection, outlier_probabilities

__all__ = ["CSMRegressor", "CSMGraphicalModel"]


class _ChainEstimator(BaseEstimator):
    """Shared hyperparameters and chain plumbing."""

    def _sampler_config(self):
        return SamplerConfig(
            n_iter=self.n_iter,
            burn_in=self.burn_in,
            thin=self.thin,
            seed=self.random_state,
            c0=self.c0,
            delta=self.delta,
            hmc_travel_time=self.hmc_travel_time,
            hmc_events=self.hmc_events,
            model_kind=self.model_kind,
        )

    def _prior(self, p, q):
        base = PriorConfig.default(p, q, gamma=self.gamma)
        nu0 = base.nu0 if self.prior_nu0 is None else float(self.prior_nu0)
        S0 = (np.eye(p) / (nu0 + p + 1.0) if self.prior_S0 is None
              else np.asarray(self.prior_S0, dtype=float))
        return PriorConfig(
            b0=np.zeros(q),
            B0=self.prior_beta_var * np.eye(q),
            nu0=nu0,
            S0=S0,
            a0=self.a0,
            b0_beta=self.b0_beta,
            gamma=self.gamma,
        )

    def _store_chain(self, chain, p):
        self.chain_ = chain
        self.covariance_ = chain.sigma.mean(axis=0)
        self.precision_ = chain.precision.mean(axis=0)
        self.n_features_in_ = p
        if chain.z_freq is not None:
            self.outlier_proba_ = outlier_probabilities(chain)
        if chain.phi is not None:
            self.phi_ = float(chain.phi.mean())
        if chain.nu is not None:
            self.nu_ = float(chain.nu.mean())

    def outlier_mask(self, threshold=0.5):
        """Cells whose posterior outlier probability exceeds ``threshold``."""
        check_is_fitted(self, "chain_")
        if not hasattr(self, "outlier_proba_"):
            raise UnsupportedOperationError(
                f"{ModelKind.parse(self.model_kind).value} fits carry no outlier indicators")
        return self.outlier_proba_ > threshold


_COMMON_DOC = """
    model_kind : {"CSM", "PCS", "Gaussian", "ClassicalT"}
    gamma : float
        Tail index of the log-Pareto scale prior.
    n_iter, burn_in, thin : int
    random_state : int
    c0, delta, hmc_travel_time, hmc_events
        Sampler tuning; see :class:`csmix.SamplerConfig`.
    a0, b0_beta : float
        Beta prior on the outlier rate.
    prior_nu0 : float, optional
        Inverse-Wishart degrees of freedom; defaults to ``p``.
    prior_S0 : array_like, optional
        Moment matrix with ``E[inv(Sigma)] = nu0 * S0``; defaults to
        ``I / (nu0 + p + 1)``.
"""


class CSMRegressor(RegressorMixin, _ChainEstimator):
    """Outlier-robust multivariate linear regression.

    ``fit`` accepts either a 2-D covariate matrix ``X`` of shape ``(n, q)``,
    in which case every response coordinate gets its own coefficients, or a
    3-D stack of design matrices of shape ``(n, p, q)`` with coefficients
    shared across coordinates.

    Parameters
    ----------
    prior_beta_var : float
        Prior variance of each coefficient.
    """ + _COMMON_DOC + """
    Attributes
    ----------
    coef_ : ndarray
        Posterior mean, shape ``(p, q)`` for 2-D inputs and ``(q,)`` for 3-D.
    covariance_, precision_ : ndarray, shape (p, p)
        Posterior means of ``Sigma`` and ``inv(Sigma)``.
    outlier_proba_ : ndarray, shape (n, p)
        Only for models with outlier indicators.
    chain_ : ChainOutput
    """

    def __init__(self, model_kind="CSM", gamma=1.0, n_iter=2000, burn_in=1000, thin=1,
                 random_state=0, c0=1e-8, delta=1.0, hmc_travel_time=DEFAULT_TRAVEL_TIME,
                 hmc_events=1, a0=0.05, b0_beta=1.0, prior_nu0=None, prior_S0=None,
                 prior_beta_var=100.0):
        self.model_kind = model_kind
        self.gamma = gamma
        self.n_iter = n_iter
        self.burn_in = burn_in
        self.thin = thin
        self.random_state = random_state
        self.c0 = c0
        self.delta = delta
        self.hmc_travel_time = hmc_travel_time
        self.hmc_events = hmc_events
        self.a0 = a0
        self.b0_beta = b0_beta
        self.prior_nu0 = prior_nu0
        self.prior_S0 = prior_S0
        self.prior_beta_var = prior_beta_var

    @staticmethod
    def _designs(X, p):
        X = np.asarray(X, dtype=float)
        if X.ndim == 3:
            return X, False
        X = check_array(X)
        n, q = X.shape
        # block design: coordinate k uses columns k*q .. (k+1)*q - 1
        D = np.zeros((n, p, p * q))
        for k in range(p):
            D[:, k, k * q:(k + 1) * q] = X
        return D, True

    def fit(self, X, y):
        """Run the sampler on responses ``y`` of shape ``(n, p)`` (or ``(n,)``)."""
        y = check_array(y, ensure_2d=False)
        Y = y.reshape(-1, 1) if y.ndim == 1 else y
        n, p = Y.shape
        D, blocked = self._designs(X, p)
        if D.shape[0] != n or D.shape[1] != p:
            raise DomainError(f"designs of shape {D.shape} do not match y of shape {Y.shape}")
        q = D.shape[2]
        chain = run_chain(Dataset(Y, D), self._prior(p, q), self._sampler_config())
        self._store_chain(chain, p)
        self._blocked = blocked
        self._y_1d = y.ndim == 1
        beta = chain.beta.mean(axis=0)
        self.coef_ = beta.reshape(p, -1) if blocked else beta
        return self

    def predict(self, X):
        """Posterior mean of ``X beta``, shape ``(n, p)`` (or ``(n,)`` for 1-D fits)."""
        check_is_fitted(self, "coef_")
        X = np.asarray(X, dtype=float)
        if self._blocked:
            if X.ndim != 2:
                raise DomainError("this model was fitted on a 2-D covariate matrix")
            X = check_array(X)
            out = X @ self.coef_.T
        else:
            if X.ndim != 3:
                raise DomainError("this model was fitted on 3-D design stacks")
            out = X @ self.coef_
        return out.ravel() if self._y_1d else out

    def coef_interval(self, alpha=0.05):
        """Equal-tailed ``1 - alpha`` posterior intervals of the coefficients."""
        check_is_fitted(self, "coef_")
        lo, hi = np.quantile(self.chain_.beta, [alpha / 2, 1 - alpha / 2], axis=0)
        shape = self.coef_.shape
        return lo.reshape(shape), hi.reshape(shape)


class CSMGraphicalModel(_ChainEstimator):
    """Outlier-robust Gaussian graphical model (zero-mean).

    Parameters
    ----------
    level : float
        Credible level used by :meth:`edges`.
    """ + _COMMON_DOC + """
    Attributes
    ----------
    covariance_, precision_ : ndarray, shape (p, p)
    outlier_proba_ : ndarray, shape (n, p)
    chain_ : ChainOutput
    """

    def __init__(self, model_kind="CSM", gamma=1.0, n_iter=2000, burn_in=1000, thin=1,
                 random_state=0, c0=1e-8, delta=1.0, hmc_travel_time=DEFAULT_TRAVEL_TIME,
                 hmc_events=1, a0=0.05, b0_beta=1.0, prior_nu0=None, prior_S0=None,
                 level=0.95):
        self.model_kind = model_kind
        self.gamma = gamma
        self.n_iter = n_iter
        self.burn_in = burn_in
        self.thin = thin
        self.random_state = random_state
        self.c0 = c0
        self.delta = delta
        self.hmc_travel_time = hmc_travel_time
        self.hmc_events = hmc_events
        self.a0 = a0
        self.b0_beta = b0_beta
        self.prior_nu0 = prior_nu0
        self.prior_S0 = prior_S0
        self.level = level

    prior_beta_var = 1.0  # unused without designs; keeps _prior uniform

    def fit(self, X, y=None):
        X = check_array(X)
        p = X.shape[1]
        chain = run_chain(Dataset(X), self._prior(p, 0), self._sampler_config())
        self._store_chain(chain, p)
        return self

    def edges(self, level=None):
        """Signed edges whose precision-entry interval excludes zero."""
        check_is_fitted(self, "chain_")
        return edge_detection(self.chain_, self.level if level is None else level)
