"""Numerical checks of likelihood and posterior robustness.

Everything here is quadrature over the latent scales.  For an outlying
coordinate ``y_k = c_k + d_k * omega`` the scale is reparameterised as
``xi = |y_k| / t_k``; the Gaussian factor then stays ``O(1)`` in ``xi`` while
the support ``|xi| < |y_k|`` grows with ``omega``.  Non-outlying scales are
integrated in ``log|t|``.  In both coordinates ``|dt| = |t| dv``, which
cancels the ``1/|t|`` Jacobian of the Gaussian, so the integrand is

    N((y - m) / t | 0, Sigma) * prod_k w_k(t_k)

with ``w_k = pi(t_k)`` on non-outlying and ``pi(t_k) / C_k`` on outlying
coordinates.

Convergence in ``omega`` is slow: log-Pareto tails are log-regularly
varying, so corrections decay like ``1 / log(omega)``.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import integrate, special

from ._validation import check_positive, check_spd
from .distributions import (
    OneSidedLogPareto,
    SymmetricLogPareto,
    ThinTail,
    _Mixing,
)
from .exceptions import DomainError, QuadratureError
from .model import Dataset, OutlierFrame
from .sampler import SamplerConfig, run_chain

__all__ = [
    "LimitReport",
    "bias_term",
    "bias_term_limit",
    "bias_term_spread",
    "scaled_likelihood",
    "outlier_deleted_likelihood",
    "likelihood_limit_report",
    "scaled_variance_limit",
    "ProbeReport",
    "posterior_robustness_probe",
    "DEFAULT_OMEGA_GRID",
]

DEFAULT_OMEGA_GRID = (1e2, 1e3, 1e4, 1e5, 1e6)
_QUAD_RTOL = 1e-8
_XI_FLOOR = -60.0   # lower edge of log(xi); the weight is O(xi) below it
_GAUSS_SDS = 40.0
_MAX_DIM = 3
_LOG_T_MAX = 700.0


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

@dataclass
class LimitReport:
    """Values of a scaled quantity along an increasing ``omega`` grid.

    ``converged`` requires the last two values to agree to 1% and the last
    value to sit within 5% of ``reference``.
    """

    omega_grid: np.ndarray
    values: np.ndarray
    reference: Optional[float] = None
    converged: bool = field(init=False)
    max_rel_err_at_tail: float = field(init=False)

    step_tol = 1e-2
    ref_tol = 5e-2

    def __post_init__(self):
        grid = np.asarray(self.omega_grid, dtype=float)
        vals = np.asarray(self.values, dtype=float)
        if grid.ndim != 1 or grid.size == 0:
            raise DomainError("omega_grid must be a non-empty 1-D sequence")
        if np.any(np.diff(grid) <= 0) or np.any(grid <= 0):
            raise DomainError("omega_grid must be positive and strictly increasing")
        if vals.shape != grid.shape or not np.all(np.isfinite(vals)):
            raise DomainError("values must be finite and match omega_grid")
        self.omega_grid = grid
        self.values = vals
        if self.reference is None:
            self.max_rel_err_at_tail = float("nan")
            self.converged = False
            return
        rel = self.rel_errors
        self.max_rel_err_at_tail = float(rel[-1])
        step = abs(vals[-1] - vals[-2]) / abs(vals[-1]) if vals.size > 1 else 0.0
        self.converged = bool(step < self.step_tol and rel[-1] < self.ref_tol)

    @property
    def rel_errors(self):
        if self.reference is None:
            return np.full(self.values.shape, np.nan)
        return np.abs(self.values - self.reference) / abs(self.reference)

    def rows(self, family):
        """``(family, omega, value, reference, rel_err)`` tuples."""
        ref = float("nan") if self.reference is None else float(self.reference)
        return [(family, float(w), float(v), ref, float(e))
                for w, v, e in zip(self.omega_grid, self.values, self.rel_errors)]


# ---------------------------------------------------------------------------
# quadrature helpers
# ---------------------------------------------------------------------------

def _quad(f, a, b, rtol, points=None, what="integral"):
    pts = None
    if points is not None:
        pts = sorted(x for x in points if a < x < b) or None
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        val, err, info = integrate.quad(f, a, b, epsabs=0.0, epsrel=rtol, limit=400,
                                        points=pts, full_output=1)[:3]
    if not np.isfinite(val):
        raise QuadratureError(f"{what} is not finite", {"value": val, "range": (a, b)})
    if err > max(10.0 * rtol * abs(val), 1e-300):
        raise QuadratureError(
            f"{what} did not reach the requested accuracy",
            {"value": val, "abserr": err, "rtol": rtol, "range": (a, b),
             "neval": info.get("neval")},
        )
    return val, err


def _signs(spec):
    return (1.0,) if not spec.two_sided else (1.0, -1.0)


def _log_pos(spec, log_abs):
    return float(spec.log_density(1.0, log_abs))


def _check_spec(spec):
    if not isinstance(spec, _Mixing):
        raise DomainError(f"not a mixing specification: {spec!r}")


# ---------------------------------------------------------------------------
# bias term
# ---------------------------------------------------------------------------

def bias_term(t2, mean, sigma, y2, d_sign, omega, spec, rtol=_QUAD_RTOL):
    """Inner integral over the outlier's scale in the bivariate case.

    Computes ``A(t2) = int N((y1 - m1)/t1 | mu/t2, s2) pi(t1) / (pi(|y1|) |t1|) dt1``
    with ``y1 = d_sign * omega``, ``mu = S12/S22 (y2 - m2)`` and
    ``s2 = S11 - S12^2/S22``, after substituting ``xi = |y1| / t1`` and
    integrating in ``log|xi|`` on each sign branch.

    Parameters
    ----------
    t2 : float
        Latent scale of the non-outlying coordinate, ``|t2| >= 1``.
    mean : array_like, shape (2,)
        ``(x_1' beta, x_2' beta)``.
    sigma : array_like, shape (2, 2)
    y2 : float
    d_sign : {+1, -1}
    omega : float
    spec : mixing family for ``t1``
    rtol : float
        Relative quadrature tolerance.

    Returns
    -------
    float
    """
    _check_spec(spec)
    if not abs(t2) >= 1.0:
        raise DomainError("|t2| must be at least one")
    if d_sign not in (1, -1):
        raise DomainError("d_sign must be +1 or -1")
    check_positive(omega, "omega")
    sigma = check_spd(np.asarray(sigma, dtype=float).reshape(2, 2), "sigma")
    m1, m2 = (float(v) for v in np.asarray(mean, dtype=float).reshape(2))
    y1 = d_sign * float(omega)
    abs_y1 = abs(y1)
    if abs_y1 <= 1.0:
        raise DomainError("omega must exceed one so that |y1| is in the scale support")
    if y1 == m1:
        raise DomainError("y1 coincides with its mean")
    mu = sigma[0, 1] / sigma[1, 1] * (y2 - m2)
    s2 = sigma[0, 0] - sigma[0, 1] ** 2 / sigma[1, 1]
    s = math.sqrt(s2)
    a = (y1 - m1) / abs_y1
    centre = mu / t2
    L = math.log(abs_y1)
    log_norm = _log_pos(spec, L)
    log_gauss0 = -0.5 * math.log(2.0 * math.pi * s2)

    # beyond this |xi| the Gaussian factor is below exp(-800)
    hi = min(L, math.log((abs(centre) + _GAUSS_SDS * s) / abs(a)))
    total = 0.0
    for sg in _signs(spec):
        def f(v, sg=sg):
            x = a * sg * math.exp(v)
            log_w = float(spec.log_density(sg, L - v)) - log_norm
            return math.exp(log_gauss0 - 0.5 * ((x - centre) / s) ** 2 + log_w)
        # the Gaussian mode in xi sits at |centre / a|
        pts = [math.log(max(abs(centre / a), 1e-300))] if centre != 0 else None
        val, _ = _quad(f, _XI_FLOOR, hi, rtol, points=pts, what="bias term")
        total += val
    return total


def bias_term_limit(t2, mean, sigma, y2, d_sign, spec):
    """Closed-form ``omega -> infinity`` limit of :func:`bias_term`, where known.

    Symmetric log-Pareto gives 1; the one-sided family gives the normal mass
    of the positive half-line; the thin-tailed family gives the ``c_prime``-th
    absolute moment of the conditional normal.  Returns ``None`` for the
    asymmetric family, whose limit is only known up to a constant.
    """
    sigma = np.asarray(sigma, dtype=float).reshape(2, 2)
    m2 = float(np.asarray(mean, dtype=float).reshape(2)[1])
    mu = sigma[0, 1] / sigma[1, 1] * (y2 - m2)
    s = math.sqrt(sigma[0, 0] - sigma[0, 1] ** 2 / sigma[1, 1])
    centre = d_sign * mu / t2
    if isinstance(spec, SymmetricLogPareto):
        return 1.0 if spec.phi is None else None
    if isinstance(spec, OneSidedLogPareto):
        return float(special.ndtr(centre / s))
    if isinstance(spec, ThinTail):
        return _abs_normal_moment(centre, s, spec.c_prime)
    return None


def bias_term_spread(t2_values, mean, sigma, y2, d_sign, omega_grid, spec, rtol=_QUAD_RTOL):
    """Bias term on a ``t2 x omega`` grid and its spread over ``t2``.

    Returns
    -------
    table : ndarray, shape (len(t2_values), len(omega_grid))
    spread : float
        ``(max - min) / max`` over ``t2`` at the largest ``omega``.  A family
        whose limit is free of ``t2`` has spread tending to zero.
    """
    t2_values = np.asarray(t2_values, dtype=float)
    grid = np.asarray(omega_grid, dtype=float)
    if t2_values.size < 2:
        raise DomainError("need at least two t2 values")
    if grid.size == 0:
        raise DomainError("omega_grid is empty")
    table = np.array([[bias_term(t2, mean, sigma, y2, d_sign, w, spec, rtol) for w in grid]
                      for t2 in t2_values])
    last = table[:, -1]
    return table, float((last.max() - last.min()) / last.max())


def _abs_normal_moment(mu, s, power):
    # E|X|^power for X ~ N(mu, s^2)
    if power == 0:
        return 1.0
    if mu == 0:
        return float(s ** power * 2 ** (power / 2) * special.gamma((power + 1) / 2)
                     / math.sqrt(math.pi))
    f = lambda x: abs(x) ** power * math.exp(-0.5 * ((x - mu) / s) ** 2)
    lo, hi = mu - _GAUSS_SDS * s, mu + _GAUSS_SDS * s
    val, _ = _quad(f, lo, hi, 1e-10, points=[0.0], what="normal moment")
    return val / (s * math.sqrt(2.0 * math.pi))


# ---------------------------------------------------------------------------
# scaled likelihood
# ---------------------------------------------------------------------------

def _spike_log_constant(spec, abs_y):
    # log of (phi gamma / 2) |y|^-1 log(1 + |y|)^-(1 + gamma)
    return (math.log(spec.phi * spec.gamma / 2.0) - math.log(abs_y)
            - (1.0 + spec.gamma) * math.log(math.log1p(abs_y)))


def _log_scale_constant(spec, abs_y):
    if isinstance(spec, SymmetricLogPareto) and spec.phi is not None:
        return _spike_log_constant(spec, abs_y)
    return _log_pos(spec, math.log(abs_y))


def _mixture_likelihood(y, m, sigma, spec, outlying, rtol):
    """``p(y | m, Sigma) / prod_{k in outlying} C_k`` by nested quadrature."""
    p = y.shape[0]
    if p > _MAX_DIM:
        raise DomainError(f"quadrature is limited to p <= {_MAX_DIM}, got p={p}")
    prec = np.linalg.inv(sigma)
    log_det = float(np.linalg.slogdet(2.0 * math.pi * sigma)[1])
    resid = y - m
    abs_y = np.abs(y)
    log_abs_y = np.log(np.maximum(abs_y, 1e-300))
    log_c = np.zeros(p)
    for k in np.flatnonzero(outlying):
        if abs_y[k] <= 1.0:
            raise DomainError("outlying coordinates need |y| > 1")
        log_c[k] = _log_scale_constant(spec, abs_y[k])
    atom = spec.atom_weight
    log_atom = math.log(atom) if atom > 0 else -math.inf
    comps = [("atom", 1.0)] if atom > 0 else []
    comps += [("cont", sg) for sg in _signs(spec)]
    sd = np.sqrt(np.diag(sigma))

    def ranges_for(k):
        if outlying[k]:
            # u = log xi with t = sign * |y| e^-u
            gap = abs(resid[k]) / abs_y[k]
            if gap == 0:
                return (_XI_FLOOR, log_abs_y[k])
            return (_XI_FLOOR, min(log_abs_y[k], math.log(_GAUSS_SDS * sd[k] / gap)))
        return (0.0, np.inf)

    total = 0.0
    for combo in itertools.product(comps, repeat=p):
        cont = [k for k in range(p) if combo[k][0] == "cont"]
        base_t = np.ones(p)
        base_logw = -log_c.copy()
        for k in range(p):
            if combo[k][0] == "atom":
                base_logw[k] += log_atom

        def integrand(*vs, combo=combo, cont=cont, base_t=base_t, base_logw=base_logw):
            t = base_t.copy()
            logw = 0.0
            for k, v in zip(cont, vs):
                sg = combo[k][1]
                log_t = log_abs_y[k] - v if outlying[k] else v
                if log_t > _LOG_T_MAX:
                    # prior weight is below exp(-_LOG_T_MAX) out here
                    return 0.0
                t[k] = sg * math.exp(log_t)
                logw += float(spec.log_density(sg, log_t))
            x = resid / t
            # an atom at t = 1 on a huge residual overflows to +inf, i.e. zero mass
            with np.errstate(over="ignore", invalid="ignore"):
                q = float(x @ prec @ x)
            if not math.isfinite(q):
                return 0.0
            return math.exp(-0.5 * (q + log_det) + logw + float(np.sum(base_logw)))

        if not cont:
            total += integrand()
            continue
        total += _nested(integrand, [ranges_for(k) for k in cont], rtol)
    return total


def _nested(f, ranges, rtol):
    # f(*vs) over the product of ``ranges``; the last variable is innermost
    if len(ranges) == 1:
        a, b = ranges[0]
        return _quad(f, a, b, rtol, what="likelihood")[0]
    a, b = ranges[0]

    def outer(v):
        return _nested(lambda *rest: f(v, *rest), ranges[1:], rtol)

    return _quad(outer, a, b, rtol, what="likelihood")[0]


def _frame_inputs(frame, X, beta, sigma):
    y = np.atleast_1d(frame.y).astype(float)
    p = y.shape[0]
    sigma = check_spd(np.atleast_2d(np.asarray(sigma, dtype=float)), "sigma")
    if sigma.shape != (p, p):
        raise DomainError("sigma does not match the frame dimension")
    m = np.zeros(p) if X is None else np.asarray(X, float) @ np.asarray(beta, float)
    return y, m, sigma


def scaled_likelihood(frame, X, beta, sigma, spec, rtol=_QUAD_RTOL):
    """``p(y | beta, Sigma) / C(omega)`` for one observation.

    ``C`` is the product over outlying coordinates of ``pi(|y_k|)`` for
    continuous mixing laws, or of ``(phi gamma / 2) |y_k|^-1
    log(1 + |y_k|)^-(1 + gamma)`` for the spike mixture.  With no outlying
    coordinate this is the plain marginal likelihood.

    Parameters
    ----------
    frame : OutlierFrame
        One observation, ``c`` and ``d`` of length ``p <= 3``.
    X : array_like or None
        ``p x q`` design (``None`` for a zero mean).
    beta : array_like
    sigma : array_like
    spec : mixing family

    Returns
    -------
    float
    """
    _check_spec(spec)
    if not isinstance(frame, OutlierFrame):
        raise DomainError("frame must be an OutlierFrame")
    y, m, sigma = _frame_inputs(frame, X, beta, sigma)
    outlying = np.atleast_1d(frame.d) != 0
    return _mixture_likelihood(y, m, sigma, spec, outlying, rtol)


def outlier_deleted_likelihood(frame, X, beta, sigma, spec, rtol=_QUAD_RTOL):
    """Marginal likelihood of the non-outlying sub-vector ``y_K``."""
    _check_spec(spec)
    y, m, sigma = _frame_inputs(frame, X, beta, sigma)
    keep = np.atleast_1d(frame.d) == 0
    if not np.any(keep):
        return 1.0
    sub = sigma[np.ix_(keep, keep)]
    return _mixture_likelihood(y[keep], m[keep], sub, spec, np.zeros(keep.sum(), bool), rtol)


def likelihood_limit_report(c, d, X, beta, sigma, spec, omega_grid=DEFAULT_OMEGA_GRID,
                            rtol=_QUAD_RTOL):
    """Scaled likelihood along ``omega_grid`` against the outlier-deleted likelihood."""
    grid = np.asarray(omega_grid, dtype=float)
    if grid.size == 0:
        raise DomainError("omega_grid is empty")
    vals = [scaled_likelihood(OutlierFrame(c, d, w), X, beta, sigma, spec, rtol) for w in grid]
    ref = outlier_deleted_likelihood(OutlierFrame(c, d, grid[0]), X, beta, sigma, spec, rtol)
    return LimitReport(grid, np.array(vals), ref)


# ---------------------------------------------------------------------------
# scaled-variance counterexample
# ---------------------------------------------------------------------------

def scaled_variance_limit(sigma1, sigma2, gamma=1.0, omega=1e6, mean=(0.0, 0.0),
                          rtol=_QUAD_RTOL):
    """Scaled likelihood of ``y = (omega, omega)`` under ``V = v * diag(s1^2, s2^2)``.

    The common variance factor ``v`` has density proportional to
    ``(1 + v)^-1 (1 + log(1 + v))^-(1 + gamma)``.  After ``v~ = v / omega^2``
    the scaled likelihood tends to ``2 s1 s2 / (s1^2 + s2^2)``, which
    depends on ``Sigma``.

    Returns
    -------
    numeric, analytic : float
    """
    s1 = check_positive(sigma1, "sigma1")
    s2 = check_positive(sigma2, "sigma2")
    check_positive(gamma, "gamma")
    check_positive(omega, "omega")
    a1 = 1.0 - mean[0] / omega
    a2 = 1.0 - mean[1] / omega
    Q = a1 * a1 / (s1 * s1) + a2 * a2 / (s2 * s2)
    lw2 = 2.0 * math.log(omega)
    log_tail0 = math.log1p(math.exp(min(lw2, 700.0))) if lw2 < 700 else lw2
    head = (1.0 + gamma) * math.log1p(log_tail0)

    def f(w):
        # w = log(v~); integrand carries the dv~ = v~ dw Jacobian
        lv = np.logaddexp(0.0, lw2 + w)
        log_ratio = log_tail0 + w - lv + head - (1.0 + gamma) * math.log1p(lv)
        return math.exp(-w - 0.5 * Q * math.exp(-w) + log_ratio) / (s1 * s2)

    mode = math.log(0.5 * Q)
    val, _ = _quad(f, mode - 8.0, mode + 80.0, rtol, points=[mode], what="scaled variance")
    analytic = 2.0 * s1 * s2 / (s1 * s1 + s2 * s2)
    return val, analytic


# ---------------------------------------------------------------------------
# empirical posterior robustness
# ---------------------------------------------------------------------------

@dataclass
class ProbeReport:
    """Posterior summaries of one contaminated cell swept over magnitudes."""

    magnitudes: np.ndarray
    beta_mean: np.ndarray
    beta_sd: np.ndarray
    sigma_mean: np.ndarray
    sigma_sd: np.ndarray
    phi_mean: np.ndarray
    z_freq: np.ndarray

    def drift(self):
        """Largest standardized change of posterior means between neighbours.

        Returns an array of length ``len(magnitudes) - 1``; each entry is the
        maximum over ``beta`` and upper-triangular ``Sigma`` entries of
        ``|mean_j+1 - mean_j| / max(sd_j, sd_j+1)``.
        """
        p = self.sigma_mean.shape[1]
        iu = np.triu_indices(p)
        means = np.hstack([self.beta_mean, self.sigma_mean[:, iu[0], iu[1]]])
        sds = np.hstack([self.beta_sd, self.sigma_sd[:, iu[0], iu[1]]])
        step = np.abs(np.diff(means, axis=0))
        scale = np.maximum(sds[1:], sds[:-1])
        return np.max(step / scale, axis=1)

    def rows(self):
        out = []
        for j, m in enumerate(self.magnitudes):
            out.append({
                "magnitude": float(m),
                "beta_mean": self.beta_mean[j].tolist(),
                "sigma_mean": self.sigma_mean[j].tolist(),
                "phi_mean": float(self.phi_mean[j]),
                "z_freq": float(self.z_freq[j]),
            })
        return out


def posterior_robustness_probe(base_dataset, prior, config, outlier_magnitudes: Sequence[float],
                               cell=(0, 0)):
    """Refit the model with one cell set to each magnitude in turn.

    Every fit reuses ``config`` (so the same seed); only ``y[cell]`` changes.
    """
    if not isinstance(base_dataset, Dataset):
        raise DomainError("base_dataset must be a Dataset")
    if not isinstance(config, SamplerConfig):
        raise DomainError("config must be a SamplerConfig")
    if not config.model_kind.has_indicators:
        raise DomainError("the probe needs a model with outlier indicators")
    mags = np.asarray(outlier_magnitudes, dtype=float)
    if mags.ndim != 1 or mags.size == 0 or not np.all(np.isfinite(mags)):
        raise DomainError("outlier_magnitudes must be a non-empty list of finite reals")
    i, k = cell
    cols = {key: [] for key in ("bm", "bs", "sm", "ss", "phi", "zf")}
    for mag in mags:
        y = base_dataset.y.copy()
        y[i, k] = mag
        chain = run_chain(Dataset(y, base_dataset.designs), prior, config)
        cols["bm"].append(chain.beta.mean(axis=0))
        cols["bs"].append(chain.beta.std(axis=0, ddof=1) if chain.n_draws > 1
                          else np.zeros(chain.beta.shape[1]))
        cols["sm"].append(chain.sigma.mean(axis=0))
        cols["ss"].append(chain.sigma.std(axis=0, ddof=1) if chain.n_draws > 1
                          else np.zeros(chain.sigma.shape[1:]))
        cols["phi"].append(chain.phi.mean())
        cols["zf"].append(chain.z_freq[i, k])
    return ProbeReport(
        magnitudes=mags,
        beta_mean=np.array(cols["bm"]),
        beta_sd=np.array(cols["bs"]),
        sigma_mean=np.array(cols["sm"]),
        sigma_sd=np.array(cols["ss"]),
        phi_mean=np.array(cols["phi"]),
        z_freq=np.array(cols["zf"]),
    )
