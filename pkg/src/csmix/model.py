"""Data types and covariance algebra of the sandwich-mixture model.

An observation ``y_i`` is normal with mean ``X_i beta`` and covariance
``T_i Sigma T_i``, where ``T_i = diag(t_i)`` holds signed latent scales with
``|t_ik| >= 1``.  Multiplying by ``T_i`` on both sides inflates variances
while keeping the absolute correlations of ``Sigma``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import NamedTuple, Optional

import numpy as np
from scipy import stats

from ._validation import (
    as_float_array,
    check_open_unit,
    check_positive,
    check_spd,
)
from .exceptions import DegenerateCovarianceError, DomainError

logger = logging.getLogger(__name__)

__all__ = [
    "Dataset",
    "PriorConfig",
    "ModelState",
    "OutlierFrame",
    "Decomposition",
    "sandwich_covariance",
    "marginal_correlation",
    "conditional_loglik",
    "residual_quadratic",
    "precision_correlation_decomposition",
]

_COND_LIMIT = 1e12
_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class Dataset:
    """``n`` observations of dimension ``p`` with optional ``p x q`` designs.

    Parameters
    ----------
    y : array_like, shape (n, p)
    designs : array_like, shape (n, p, q), optional
        Per-observation design matrices.  Omit for graphical mode, where the
        mean is fixed at zero.
    """

    y: np.ndarray
    designs: Optional[np.ndarray] = None

    def __post_init__(self):
        y = as_float_array(self.y, "y", ndim=2)
        if self.designs is not None:
            X = as_float_array(self.designs, "designs", ndim=3)
            if X.shape[:2] != y.shape:
                raise DomainError(
                    f"designs of shape {X.shape} do not match y of shape {y.shape}")
            if X.shape[2] == 0:
                raise DomainError("designs need at least one column")
            if np.any(np.all(X == 0.0, axis=2)):
                raise DomainError("every row of every design matrix must be nonzero")
            object.__setattr__(self, "designs", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self):
        return self.y.shape[0]

    @property
    def p(self):
        return self.y.shape[1]

    @property
    def q(self):
        return 0 if self.designs is None else self.designs.shape[2]

    @property
    def graphical(self):
        return self.designs is None

    def mean(self, beta):
        """``X_i beta`` stacked into an ``(n, p)`` array (zeros in graphical mode)."""
        if self.designs is None:
            return np.zeros_like(self.y)
        return self.designs @ np.asarray(beta, dtype=float)

    def residuals(self, beta):
        return self.y - self.mean(beta)


@dataclass(frozen=True)
class PriorConfig:
    """Normal / inverse-Wishart / beta / log-Pareto hyperparameters.

    ``S0`` is the moment matrix with ``E[inv(Sigma)] = nu0 * S0``; the
    inverse-Wishart scale used internally is ``inv(S0)``.
    """

    b0: np.ndarray
    B0: np.ndarray
    nu0: float
    S0: np.ndarray
    a0: float = 0.05
    b0_beta: float = 1.0
    gamma: float = 1.0

    def __post_init__(self):
        b0 = as_float_array(self.b0, "b0", ndim=1)
        q = b0.shape[0]
        B0 = check_spd(self.B0, "B0") if q else np.zeros((0, 0))
        if B0.shape != (q, q):
            raise DomainError(f"B0 must be {q}x{q}")
        S0 = check_spd(self.S0, "S0")
        p = S0.shape[0]
        if not (np.isfinite(self.nu0) and self.nu0 > p - 1):
            raise DomainError(f"nu0 must exceed p - 1 = {p - 1}, got {self.nu0!r}")
        check_positive(self.a0, "a0")
        check_positive(self.b0_beta, "b0_beta")
        check_positive(self.gamma, "gamma")
        object.__setattr__(self, "b0", b0)
        object.__setattr__(self, "B0", B0)
        object.__setattr__(self, "S0", S0)
        object.__setattr__(self, "nu0", float(self.nu0))

    @classmethod
    def default(cls, p, q=0, gamma=1.0):
        """Weakly informative default: ``B0 = 100 I``, ``nu0 = p``, ``S0 = I/(2p+1)``."""
        nu0 = float(p)
        return cls(
            b0=np.zeros(q),
            B0=100.0 * np.eye(q),
            nu0=nu0,
            S0=np.eye(p) / (nu0 + p + 1.0),
            a0=0.05,
            b0_beta=1.0,
            gamma=gamma,
        )

    @property
    def p(self):
        return self.S0.shape[0]

    @property
    def q(self):
        return self.b0.shape[0]

    @property
    def iw_scale(self):
        return np.linalg.inv(self.S0)


@dataclass(frozen=True)
class ModelState:
    """One state of the Markov chain.

    ``r`` holds the latent magnitudes ``|t~|^-1`` for every cell, including
    inactive ones whose effective scale ``t`` is pinned at one; the sign
    and indicator step needs them for all cells.  ``zeta`` is stored as an
    ``(n, p)`` array that is zero on inactive cells.
    """

    beta: np.ndarray
    sigma: np.ndarray
    phi: float
    t: np.ndarray
    z: np.ndarray
    s: np.ndarray
    u: np.ndarray
    theta: np.ndarray
    r: np.ndarray
    zeta: Optional[np.ndarray] = None

    @classmethod
    def initial(cls, dataset, prior, flag_outliers=False, cutoff=4.0):
        """Starting state with ``beta = 0``, a robust diagonal ``Sigma`` and prior-mean ``phi``.

        The diagonal holds squared normalised MADs of each response
        coordinate.  A plain sample covariance absorbs gross cell-wise
        shifts, after which no cell looks outlying and the chain can stay
        in that mode for thousands of sweeps.

        Parameters
        ----------
        flag_outliers : bool
            Start cells whose robust z-score exceeds ``cutoff`` as active,
            with ``t`` equal to the signed score.  Otherwise every cell
            starts inactive with ``t = 1``.
        cutoff : float
        """
        n, p = dataset.n, dataset.p
        sigma = np.eye(p)
        ones = np.ones((n, p))
        t = ones.copy()
        z = np.zeros((n, p), dtype=np.int8)
        s = np.ones((n, p), dtype=np.int8)
        if n > p:
            center = np.median(dataset.y, axis=0)
            scale = stats.median_abs_deviation(dataset.y, axis=0, scale="normal")
            if np.all(np.isfinite(scale)) and np.all(scale > 0):
                sigma = np.diag(scale**2)
                if flag_outliers:
                    score = (dataset.y - center) / scale
                    big = np.abs(score) > cutoff
                    z[big] = 1
                    s[big] = np.where(score[big] > 0, 1, -1)
                    t[big] = score[big]
        return cls(
            beta=np.zeros(dataset.q),
            sigma=sigma,
            phi=prior.a0 / (prior.a0 + prior.b0_beta),
            t=t,
            z=z,
            s=s,
            u=ones.copy(),
            theta=np.zeros((n, p)),
            r=np.abs(t),
            zeta=np.zeros((n, p)),
        )

    def evolve(self, **changes):
        return replace(self, **changes)

    def check(self):
        """Raise ``DomainError`` if any state invariant is violated."""
        check_spd(self.sigma, "sigma")
        check_open_unit(self.phi, "phi")
        active = self.z == 1
        if np.any(self.t[~active] != 1.0):
            raise DomainError("t must equal one on inactive cells")
        if np.any(np.abs(self.t) < 1.0):
            raise DomainError("|t| must be at least one")
        if np.any(np.sign(self.t[active]) != self.s[active]):
            raise DomainError("sign of t disagrees with s on active cells")
        return self


@dataclass(frozen=True)
class OutlierFrame:
    """Observations ``y = c + d * omega`` that diverge along ``d`` as ``omega`` grows."""

    c: np.ndarray
    d: np.ndarray
    omega: float

    def __post_init__(self):
        c = as_float_array(self.c, "c")
        d = as_float_array(self.d, "d")
        if c.shape != d.shape:
            raise DomainError("c and d must share a shape")
        check_positive(self.omega, "omega")
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "d", d)

    @property
    def y(self):
        return self.c + self.d * self.omega

    @property
    def K(self):
        """Indices of the non-outlying coordinates (``d == 0``)."""
        return np.flatnonzero(np.atleast_1d(self.d) == 0)

    @property
    def L(self):
        """Indices of the outlying coordinates (``d != 0``)."""
        return np.flatnonzero(np.atleast_1d(self.d) != 0)


class Decomposition(NamedTuple):
    psi: np.ndarray
    Q: np.ndarray
    H: np.ndarray
    lam: np.ndarray


def _check_scales(t):
    t = as_float_array(t, "t", ndim=1)
    if np.any(t == 0.0):
        raise DegenerateCovarianceError("latent scales must be nonzero")
    return t


def sandwich_covariance(sigma, t):
    """``diag(t) @ sigma @ diag(t)``.

    Examples
    --------
    >>> sandwich_covariance(np.eye(2), [2.0, 3.0])
    array([[4., 0.],
           [0., 9.]])
    """
    sigma = check_spd(sigma, "sigma")
    t = _check_scales(t)
    if t.shape[0] != sigma.shape[0]:
        raise DomainError("t and sigma dimensions differ")
    return t[:, None] * sigma * t[None, :]


def marginal_correlation(sigma, t, k, k2):
    """Correlation of coordinates ``k`` and ``k2`` under the sandwich covariance."""
    if k == k2:
        raise DomainError("k and k2 must differ")
    sigma = check_spd(sigma, "sigma")
    t = _check_scales(t)
    rho = sigma[k, k2] / math.sqrt(sigma[k, k] * sigma[k2, k2])
    return float(np.sign(t[k] * t[k2]) * rho)


def _chol(sigma):
    try:
        return np.linalg.cholesky(sigma)
    except np.linalg.LinAlgError as exc:
        raise DegenerateCovarianceError("covariance is not positive definite") from exc


def conditional_loglik(y, X, beta, sigma, t):
    """Log density of ``N(X beta, T sigma T)`` at ``y``.

    ``X`` may be ``None`` for a zero mean.  Evaluated as the density of the
    standardized residual ``(y - X beta) / t`` under ``N(0, sigma)`` minus
    ``sum(log|t|)``.
    """
    y = as_float_array(y, "y", ndim=1)
    sigma = np.atleast_2d(as_float_array(sigma, "sigma"))
    t = _check_scales(t)
    mean = np.zeros_like(y) if X is None else np.asarray(X, float) @ np.asarray(beta, float)
    e = (y - mean) / t
    L = _chol(0.5 * (sigma + sigma.T))
    w = np.linalg.solve(L, e)
    p = y.shape[0]
    return float(-0.5 * (p * _LOG_2PI + w @ w) - np.sum(np.log(np.diag(L)))
                 - np.sum(np.log(np.abs(t))))


def residual_quadratic(y, X, beta, sigma):
    """``diag(e) inv(sigma) diag(e)`` with residual ``e = y - X beta``."""
    y = as_float_array(y, "y", ndim=1)
    sigma = check_spd(np.atleast_2d(sigma), "sigma")
    mean = np.zeros_like(y) if X is None else np.asarray(X, float) @ np.asarray(beta, float)
    e = y - mean
    prec = np.linalg.inv(sigma)
    return e[:, None] * prec * e[None, :]


def precision_correlation_decomposition(sigma):
    """Split ``inv(sigma)`` into scales and an eigendecomposed correlation.

    Returns
    -------
    Decomposition
        ``psi`` with ``psi_k = sqrt(inv(sigma)_kk)``, the unit-diagonal
        ``Q = diag(psi)^-1 inv(sigma) diag(psi)^-1`` and its eigenpairs
        ``Q = H diag(lam) H'`` with ``lam`` in decreasing order.

    Notes
    -----
    A ``sigma`` with condition number above 1e12 is jittered by
    ``1e-10 * trace(sigma) / p`` on the diagonal before inversion.
    """
    sigma = check_spd(np.atleast_2d(sigma), "sigma")
    p = sigma.shape[0]
    cond = np.linalg.cond(sigma)
    if not cond < _COND_LIMIT:
        jitter = 1e-10 * np.trace(sigma) / p
        logger.warning("sigma condition number %.3g exceeds %.0e; adding %.3g jitter",
                       cond, _COND_LIMIT, jitter)
        sigma = sigma + jitter * np.eye(p)
    prec = np.linalg.inv(sigma)
    prec = 0.5 * (prec + prec.T)
    psi = np.sqrt(np.diag(prec))
    Q = prec / np.outer(psi, psi)
    np.fill_diagonal(Q, 1.0)
    lam, H = np.linalg.eigh(Q)
    order = np.argsort(lam)[::-1]
    lam = lam[order]
    H = H[:, order]
    if not lam[-1] > 0:
        raise DegenerateCovarianceError("precision correlation is not positive definite")
    return Decomposition(psi=psi, Q=Q, H=H, lam=lam)
