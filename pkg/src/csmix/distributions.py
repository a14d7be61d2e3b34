"""Probability kernel for the sandwich-mixture model.

Densities and samplers for the unfolded log-Pareto family and its
one-sided, asymmetric and thin-tailed relatives, plus multivariate normal,
inverse-Wishart and box-truncated multivariate normal samplers.  The
truncated normal is sampled with exact Hamiltonian dynamics: in whitened
coordinates the trajectory is a sinusoid, so wall hits are solved in closed
form and the momentum is reflected at each one.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numba
import numpy as np
from scipy import integrate, stats

from .exceptions import DomainError, NumericalError, PreconditionError

__all__ = [
    "LogParetoParams",
    "SymmetricLogPareto",
    "OneSidedLogPareto",
    "AsymmetricLogPareto",
    "ThinTail",
    "MixingSpec",
    "BoxTruncatedMvn",
    "lp_density",
    "lp_tail_prob",
    "lp_cdf",
    "lp_sample",
    "mixing_density",
    "sample_mvn",
    "sample_inverse_wishart",
    "tmvn_sample",
    "tmvn_chain",
    "tmvn_move",
    "DEFAULT_TRAVEL_TIME",
]

DEFAULT_TRAVEL_TIME = 0.5 * math.pi


def _check_gamma(gamma):
    if not (np.isfinite(gamma) and gamma > 0):
        raise DomainError(f"tail parameter gamma must be positive and finite, got {gamma!r}")


@dataclass(frozen=True)
class LogParetoParams:
    gamma: float = 1.0

    def __post_init__(self):
        _check_gamma(self.gamma)


# ---------------------------------------------------------------------------
# unfolded log-Pareto
# ---------------------------------------------------------------------------

def lp_density(t, gamma=1.0):
    """Unfolded, shifted log-Pareto density.

    ``gamma / (2 |t| (1 + log|t|)^(1+gamma))`` on ``|t| > 1`` and zero
    elsewhere.  Accepts scalars or arrays.
    """
    _check_gamma(gamma)
    t = np.asarray(t, dtype=float)
    if not np.all(np.isfinite(t)):
        raise DomainError("lp_density requires finite t")
    a = np.abs(t)
    out = np.zeros_like(a)
    m = a > 1.0
    la = np.log(a[m])
    # log form: the product |t| (1 + log|t|)^(1+gamma) overflows near DBL_MAX
    out[m] = np.exp(math.log(0.5 * gamma) - la - (1.0 + gamma) * np.log1p(la))
    return out[()] if out.ndim == 0 else out


def lp_tail_prob(x, gamma=1.0):
    """``P(|T| > x) = (1 + log x)^(-gamma)`` for ``x >= 1``."""
    _check_gamma(gamma)
    x = np.asarray(x, dtype=float)
    if np.any(np.isnan(x)) or np.any(x < 1.0):
        raise DomainError("lp_tail_prob requires x >= 1")
    with np.errstate(over="ignore"):
        out = (1.0 + np.log(x)) ** (-gamma)
    return out[()] if out.ndim == 0 else out


def lp_cdf(t, gamma=1.0, one_sided=False):
    """Distribution function of the (unfolded or one-sided) log-Pareto law."""
    _check_gamma(gamma)
    t = np.asarray(t, dtype=float)
    a = np.maximum(np.abs(t), 1.0)
    with np.errstate(over="ignore", divide="ignore"):
        tail = (1.0 + np.log(a)) ** (-gamma)
    if one_sided:
        out = np.where(t <= 1.0, 0.0, 1.0 - tail)
    else:
        out = np.where(t <= -1.0, 0.5 * tail, np.where(t < 1.0, 0.5, 1.0 - 0.5 * tail))
    return out[()] if out.ndim == 0 else out


def lp_sample(gamma, rng, size=None, one_sided=False):
    """Draw from the unfolded log-Pareto law as a shape mixture of Paretos.

    ``w ~ Gamma(gamma, 1)``, ``v ~ U(0, 1)``, ``|t| = (1 - v)^(-1/w)``, and the
    sign is flipped with probability one half (never, if ``one_sided``).
    The tail is heavy enough that ``|t|`` overflows to ``inf`` with
    probability ``(1 + 709.78)^(-gamma)``; such draws are returned as
    ``inf``.
    """
    _check_gamma(gamma)
    w = rng.gamma(gamma, 1.0, size=size)
    v = rng.random(size=size)
    with np.errstate(over="ignore", divide="ignore"):
        t = np.exp(-np.log1p(-v) / w)
    t = np.maximum(t, 1.0)
    if not one_sided:
        flip = rng.random(size=size) < 0.5
        t = np.where(flip, -t, t)
    return t[()] if np.ndim(t) == 0 else t


# ---------------------------------------------------------------------------
# mixing families
# ---------------------------------------------------------------------------

def _log_lp_half(log_abs, gamma):
    # one-sided log-Pareto log density on (1, inf), in terms of log|t|
    return math.log(gamma) - log_abs - (1.0 + gamma) * np.log1p(log_abs)


class _Mixing:
    """Shared behaviour of the mixing families for the latent scale ``t``."""

    atom_weight = 0.0

    def log_density(self, sign, log_abs):
        raise NotImplementedError

    def logpdf(self, t):
        """Log of the continuous part of the density at ``t``."""
        t = np.asarray(t, dtype=float)
        a = np.abs(t)
        with np.errstate(divide="ignore"):
            la = np.log(a)
        out = np.full(a.shape, -np.inf)
        m = a > 1.0
        if np.any(m):
            out[m] = self.log_density(np.sign(t[m]), la[m])
        return out[()] if out.ndim == 0 else out

    def pdf(self, t):
        return np.exp(self.logpdf(t))

    @property
    def two_sided(self):
        return True


@dataclass(frozen=True)
class SymmetricLogPareto(_Mixing):
    """Symmetric unfolded log-Pareto mixing law.

    With ``phi`` set this is the two-component spike mixture
    ``(1 - phi) delta_1 + phi * pi_LP``.
    """

    gamma: float = 1.0
    phi: Optional[float] = None

    def __post_init__(self):
        _check_gamma(self.gamma)
        if self.phi is not None and not (0.0 < self.phi < 1.0):
            raise DomainError(f"phi must lie in (0, 1), got {self.phi!r}")

    @property
    def atom_weight(self):
        return 0.0 if self.phi is None else 1.0 - self.phi

    def log_density(self, sign, log_abs):
        scale = math.log(0.5) + (0.0 if self.phi is None else math.log(self.phi))
        return scale + _log_lp_half(log_abs, self.gamma)


@dataclass(frozen=True)
class OneSidedLogPareto(_Mixing):
    gamma: float = 1.0

    def __post_init__(self):
        _check_gamma(self.gamma)

    @property
    def two_sided(self):
        return False

    def log_density(self, sign, log_abs):
        out = _log_lp_half(log_abs, self.gamma)
        return np.where(np.asarray(sign) > 0, out, -np.inf)


@dataclass(frozen=True)
class AsymmetricLogPareto(_Mixing):
    """Weight ``w`` on ``t > 1`` with order ``gamma_pos``; ``1 - w`` on ``t < -1``."""

    w: float = 0.5
    gamma_pos: float = 1.0
    gamma_neg: float = 2.0

    def __post_init__(self):
        _check_gamma(self.gamma_pos)
        _check_gamma(self.gamma_neg)
        if not (0.0 < self.w < 1.0):
            raise DomainError(f"w must lie in (0, 1), got {self.w!r}")

    def log_density(self, sign, log_abs):
        pos = math.log(self.w) + _log_lp_half(log_abs, self.gamma_pos)
        neg = math.log1p(-self.w) + _log_lp_half(log_abs, self.gamma_neg)
        return np.where(np.asarray(sign) > 0, pos, neg)


@dataclass(frozen=True)
class ThinTail(_Mixing):
    """Symmetric density ``K |t|^-(1+c_prime) (1+log|t|)^-(1+c)`` on ``|t| > 1``.

    ``c_prime`` is the polynomial tail index; ``c_prime = 0`` is the
    log-Pareto case.
    """

    c: float = 0.0
    c_prime: float = 1.0
    log_norm: float = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not (np.isfinite(self.c) and np.isfinite(self.c_prime)):
            raise DomainError("ThinTail parameters must be finite")
        if self.c < 0 or self.c_prime < 0 or (self.c == 0 and self.c_prime == 0):
            raise DomainError("ThinTail needs c >= 0, c_prime >= 0 and not both zero")
        # integral over |t| > 1 on one side, with s = log t
        half, _ = integrate.quad(
            lambda s: math.exp(-self.c_prime * s) * (1.0 + s) ** (-(1.0 + self.c)),
            0.0, np.inf, epsabs=0.0, epsrel=1e-12, limit=200,
        )
        object.__setattr__(self, "log_norm", -math.log(2.0 * half))

    def log_density(self, sign, log_abs):
        return self.log_norm - (1.0 + self.c_prime) * log_abs - (1.0 + self.c) * np.log1p(log_abs)


MixingSpec = Union[SymmetricLogPareto, OneSidedLogPareto, AsymmetricLogPareto, ThinTail]


def mixing_density(spec, t):
    """Split the mixing law at ``t`` into ``(atom_weight, continuous_density)``.

    Only the spike mixture has an atom, located at ``t = 1``.
    """
    if not isinstance(spec, _Mixing):
        raise DomainError(f"not a mixing specification: {spec!r}")
    if not np.isfinite(t):
        raise DomainError("mixing_density requires finite t")
    atom = spec.atom_weight if t == 1.0 else 0.0
    return atom, float(spec.pdf(t))


# ---------------------------------------------------------------------------
# Gaussian family
# ---------------------------------------------------------------------------

def sample_mvn(mean, cov, rng, size=None):
    """Exact multivariate normal draw via the Cholesky factor of ``cov``.

    Raises ``numpy.linalg.LinAlgError`` when ``cov`` is not positive definite.
    """
    mean = np.asarray(mean, dtype=float)
    chol = np.linalg.cholesky(np.asarray(cov, dtype=float))
    shape = mean.shape if size is None else tuple(np.atleast_1d(size)) + mean.shape
    z = rng.standard_normal(shape)
    return mean + z @ chol.T


def sample_inverse_wishart(df, scale, rng):
    """Inverse-Wishart draw in the standard ``(df, scale)`` convention.

    ``E[Sigma^-1] = df * scale^-1``.  A model parameterised by the moment
    matrix ``S0`` with ``E[Sigma^-1] = nu0 S0`` passes ``scale = inv(S0)``.
    """
    scale = np.atleast_2d(np.asarray(scale, dtype=float))
    p = scale.shape[0]
    if not df > p - 1:
        raise DomainError(f"inverse-Wishart needs df > p - 1 = {p - 1}, got {df!r}")
    draw = stats.invwishart.rvs(df=df, scale=scale, random_state=rng)
    draw = np.atleast_2d(draw).reshape(p, p)
    return 0.5 * (draw + draw.T)


# ---------------------------------------------------------------------------
# box-truncated multivariate normal
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BoxTruncatedMvn:
    """Kernel ``exp(-x'Px/2 + x'l)`` restricted to ``lower <= x <= upper``."""

    precision: np.ndarray
    linear: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        P = np.atleast_2d(np.asarray(self.precision, dtype=float))
        lin = np.atleast_1d(np.asarray(self.linear, dtype=float))
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        p = lin.shape[0]
        if P.shape != (p, p) or lo.shape != (p,) or hi.shape != (p,):
            raise DomainError("inconsistent dimensions in BoxTruncatedMvn")
        if not np.allclose(P, P.T, rtol=1e-10, atol=0.0):
            raise DomainError("precision must be symmetric")
        if not np.all(lo < hi):
            raise DomainError("lower must be strictly below upper in every coordinate")
        for name, val in (("precision", P), ("linear", lin), ("lower", lo), ("upper", hi)):
            object.__setattr__(self, name, val)

    @property
    def dim(self):
        return self.linear.shape[0]


class _Whitened:
    """Constraint geometry of a box target after whitening.

    With ``P = L L'`` and ``x = mu + inv(L') w`` the target is ``N(0, I)`` in
    ``w`` restricted to ``F w + g >= 0``.
    """

    def __init__(self, target):
        P = 0.5 * (target.precision + target.precision.T)
        try:
            L = np.linalg.cholesky(P)
        except np.linalg.LinAlgError as exc:
            raise NumericalError("precision is not positive definite",
                                 {"precision": P.tolist()}) from exc
        Linv = np.linalg.inv(L)
        self.back = Linv.T
        self.mean = self.back @ (Linv @ target.linear)
        self.chol = L
        lo_ok = np.isfinite(target.lower)
        hi_ok = np.isfinite(target.upper)
        self.F = np.ascontiguousarray(np.vstack([self.back[lo_ok], -self.back[hi_ok]]))
        self.g = np.concatenate([self.mean[lo_ok] - target.lower[lo_ok],
                                 target.upper[hi_ok] - self.mean[hi_ok]])
        self.fnorm2 = np.einsum("ij,ij->i", self.F, self.F)

    def to_white(self, x):
        return self.chol.T @ (x - self.mean)

    def to_x(self, w):
        return self.mean + self.back @ w


@numba.njit(cache=True)
def _trajectory_kernel(F, g, fnorm2, w, v, travel_time, max_bounces, eps):
    # returns (position, bounces, failed_constraint); failed_constraint >= 0 on budget overrun
    m = F.shape[0]
    p = w.shape[0]
    w = w.copy()
    v = v.copy()
    remaining = travel_time
    bounces = 0
    two_pi = 2.0 * np.pi
    while True:
        best = np.inf
        j = -1
        for r in range(m):
            a = 0.0
            b = 0.0
            for k in range(p):
                a += F[r, k] * w[k]
                b += F[r, k] * v[k]
            amp = math.hypot(a, b)
            if amp > abs(g[r]):
                # downward crossing of a cos(s) + b sin(s) + g through zero
                s = (math.atan2(b, a) + math.acos(-g[r] / amp)) % two_pi
                if s < eps or s > two_pi - eps:
                    # sitting on this wall: bounce now if heading out, else ignore it
                    if b >= 0.0:
                        continue
                    s = 0.0
                if s < best:
                    best = s
                    j = r
        if best >= remaining:
            c = math.cos(remaining)
            sn = math.sin(remaining)
            for k in range(p):
                w[k] = w[k] * c + v[k] * sn
            return w, bounces, -1
        c = math.cos(best)
        sn = math.sin(best)
        fv = 0.0
        for k in range(p):
            wk = w[k]
            w[k] = wk * c + v[k] * sn
            v[k] = v[k] * c - wk * sn
            fv += F[j, k] * v[k]
        scale = 2.0 * fv / fnorm2[j]
        for k in range(p):
            v[k] -= scale * F[j, k]
        remaining -= best
        bounces += 1
        if bounces > max_bounces:
            return w, bounces, j


def _trajectory(geom, w, v, travel_time, max_bounces, eps=1e-12):
    """Follow ``w cos(s) + v sin(s)`` for ``travel_time``, reflecting at walls."""
    out, bounces, failed = _trajectory_kernel(
        geom.F, geom.g, geom.fnorm2, w, v, float(travel_time), int(max_bounces), eps)
    if failed >= 0:
        raise NumericalError(
            "exact HMC exceeded its bounce budget",
            {"bounces": int(bounces), "constraint": int(failed), "position": out.tolist()},
        )
    return out, bounces


def _check_start(target, start):
    start = np.atleast_1d(np.asarray(start, dtype=float))
    if start.shape != (target.dim,):
        raise PreconditionError("start has the wrong dimension")
    if not (np.all(start > target.lower) and np.all(start < target.upper)):
        raise PreconditionError("start must lie strictly inside the box")
    return start


def _hmc_step(target, geom, x, travel_time, rng, max_bounces):
    w0 = geom.to_white(x)
    v0 = rng.standard_normal(target.dim)
    w, bounces = _trajectory(geom, w0, v0, travel_time, max_bounces)
    out = geom.to_x(w)
    slack = 1e-8 * (1.0 + np.abs(out))
    if np.any(out < target.lower - slack) or np.any(out > target.upper + slack):
        raise NumericalError(
            "exact HMC left the box",
            {"x": out.tolist(), "lower": target.lower.tolist(), "upper": target.upper.tolist()},
        )
    return np.clip(out, target.lower, target.upper), bounces


def tmvn_sample(target, start, travel_time=DEFAULT_TRAVEL_TIME, rng=None,
                n_events=1, max_bounces=10_000):
    """One (or ``n_events``) exact-HMC moves for a box-truncated normal.

    Parameters
    ----------
    target : BoxTruncatedMvn
    start : array_like
        Current state, strictly inside the box.
    travel_time : float
        Integration horizon of each trajectory.
    rng : numpy.random.Generator
    n_events : int
        Number of consecutive trajectories, each with fresh momentum.

    Returns
    -------
    numpy.ndarray
        New state inside the closed box.
    """
    if rng is None:
        raise PreconditionError("an explicit numpy Generator is required")
    if not travel_time > 0:
        raise DomainError("travel_time must be positive")
    x = _check_start(target, start)
    geom = _Whitened(target)
    for _ in range(n_events):
        x, _ = _hmc_step(target, geom, x, travel_time, rng, max_bounces)
    return x


def tmvn_move(precision, linear, lower, upper, start, travel_time, rng, n_events=1,
              max_bounces=10_000):
    """Unchecked fast path of :func:`tmvn_sample` for use inside samplers.

    The caller guarantees a symmetric ``precision``, ``lower < upper`` and a
    start strictly inside the box.
    """
    momenta = rng.standard_normal((n_events, start.shape[0]))
    out, failed = _move_kernel(precision, linear, lower, upper, start, momenta,
                               float(travel_time), int(max_bounces))
    if failed == -2:
        raise NumericalError("precision is not positive definite",
                             {"precision": precision.tolist()})
    if failed >= 0:
        raise NumericalError("exact HMC exceeded its bounce budget",
                             {"event": int(failed), "bounce_limit": max_bounces})
    slack = 1e-8 * (1.0 + np.abs(out))
    if np.any(out < lower - slack) or np.any(out > upper + slack):
        raise NumericalError("exact HMC left the box",
                             {"x": out.tolist(), "lower": lower.tolist(),
                              "upper": upper.tolist()})
    return np.clip(out, lower, upper)


def tmvn_chain(target, start, n_steps, travel_time=DEFAULT_TRAVEL_TIME, rng=None,
               max_bounces=10_000):
    """Run ``n_steps`` exact-HMC moves and return the ``(n_steps, p)`` path."""
    if rng is None:
        raise PreconditionError("an explicit numpy Generator is required")
    x = _check_start(target, start)
    geom = _Whitened(target)
    momenta = rng.standard_normal((n_steps, target.dim))
    path, failed = _chain_kernel(geom.F, geom.g, geom.fnorm2, geom.to_white(x), momenta,
                                 float(travel_time), int(max_bounces), 1e-12)
    if failed >= 0:
        raise NumericalError("exact HMC exceeded its bounce budget",
                             {"step": int(failed), "bounce_limit": max_bounces})
    out = geom.mean + path @ geom.back.T
    return np.clip(out, target.lower, target.upper)


@numba.njit(cache=True)
def _chain_kernel(F, g, fnorm2, w, momenta, travel_time, max_bounces, eps):
    n, p = momenta.shape
    path = np.empty((n, p))
    for i in range(n):
        w, _, failed = _trajectory_kernel(F, g, fnorm2, w, momenta[i], travel_time,
                                          max_bounces, eps)
        if failed >= 0:
            return path, i
        path[i] = w
    return path, -1


@numba.njit(cache=True)
def _move_kernel(P, lin, lo, hi, x, momenta, travel_time, max_bounces):
    # whitening, trajectories and back-transform in one compiled call
    p = x.shape[0]
    L = np.zeros((p, p))
    for j in range(p):
        d = P[j, j]
        for k in range(j):
            d -= L[j, k] * L[j, k]
        if not d > 0.0:
            return x.copy(), -2
        L[j, j] = math.sqrt(d)
        for i in range(j + 1, p):
            acc = P[i, j]
            for k in range(j):
                acc -= L[i, k] * L[j, k]
            L[i, j] = acc / L[j, j]
    # Linv by forward substitution
    Linv = np.zeros((p, p))
    for c in range(p):
        for i in range(c, p):
            acc = 1.0 if i == c else 0.0
            for k in range(c, i):
                acc -= L[i, k] * Linv[k, c]
            Linv[i, c] = acc / L[i, i]
    back = Linv.T.copy()
    mean = back @ (Linv @ lin)
    F = np.empty((2 * p, p))
    g = np.empty(2 * p)
    fnorm2 = np.empty(2 * p)
    for r in range(p):
        nrm = 0.0
        for k in range(p):
            F[r, k] = back[r, k]
            F[p + r, k] = -back[r, k]
            nrm += back[r, k] * back[r, k]
        fnorm2[r] = nrm
        fnorm2[p + r] = nrm
        g[r] = mean[r] - lo[r]
        g[p + r] = hi[r] - mean[r]
    w = L.T @ (x - mean)
    for e in range(momenta.shape[0]):
        w, _, failed = _trajectory_kernel(F, g, fnorm2, w, momenta[e], travel_time,
                                          max_bounces, 1e-12)
        if failed >= 0:
            return x.copy(), e
    return mean + back @ w, -1
