"""Collapsed Gibbs sampler for the sandwich-mixture model and its baselines.

One sweep updates, in order, the normal augmentation ``theta``, the joint
sign and indicator pair ``(s, z)``, ``(beta, Sigma)``, the mixing weight
``phi``, the slice variables ``u`` and finally the latent scales ``t``.  The
active scales are moved in reciprocal form ``t~ = 1 / t`` by exact HMC on a
box-truncated normal; inactive scales are refreshed from their prior.

Baselines share the ``(beta, Sigma)`` step:

* ``Gaussian`` fixes ``t = 1``;
* ``PCS`` restricts the scales to be positive;
* ``ClassicalT`` uses one scale per observation, ``t_i^2 ~ IG(nu/2, nu/2)``,
  with ``nu`` updated by random-walk Metropolis on ``log nu``.
"""

from __future__ import annotations

import enum
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Optional

import numba
import numpy as np
from scipy import special

from ._validation import check_positive
from .distributions import DEFAULT_TRAVEL_TIME, _move_kernel, lp_sample, sample_inverse_wishart
from .exceptions import CSMError, DomainError, NumericalError, SamplerError
from .model import Dataset, ModelState, PriorConfig, precision_correlation_decomposition

__all__ = [
    "ModelKind",
    "SamplerConfig",
    "ChainOutput",
    "sample_theta",
    "sample_sign_and_z",
    "sample_beta_sigma",
    "sample_phi",
    "sample_u",
    "sample_t",
    "sample_classical_scales",
    "sample_nu",
    "sweep",
    "run_chain",
]

_PHI_FLOOR = 1e-300
_LO_FLOOR = 1e-300
_LO_CEIL = 1.0 - 1e-12
NU_BOUNDS = (1.0, 100.0)
_MAX_BOUNCES = 10_000


class ModelKind(str, enum.Enum):
    CSM = "CSM"
    PCS = "PCS"
    GAUSSIAN = "Gaussian"
    CLASSICAL_T = "ClassicalT"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        for kind in cls:
            if str(value).lower() == kind.value.lower():
                return kind
        raise DomainError(f"unknown model kind {value!r}; expected one of "
                          f"{[k.value for k in cls]}")

    @property
    def has_indicators(self):
        return self in (ModelKind.CSM, ModelKind.PCS)


@dataclass(frozen=True)
class SamplerConfig:
    """Run-length, seeding and tuning settings of one chain.

    Parameters
    ----------
    n_iter : int
        Total sweeps, burn-in included.
    burn_in : int
    thin : int
    seed : int
    c0 : float
        Offset added to the largest eigenvalue in the normal augmentation.
    delta : float
        Variance scale of the stabilising variable ``zeta``.
    hmc_travel_time : float
    hmc_events : int
        Exact-HMC trajectories per sweep and observation.
    model_kind : str or ModelKind
    nu_init : float
        Starting degrees of freedom for ``ClassicalT``.
    nu_step : float
        Random-walk standard deviation on ``log nu``.
    """

    n_iter: int = 2000
    burn_in: int = 1000
    thin: int = 1
    seed: int = 0
    c0: float = 1e-8
    delta: float = 1.0
    hmc_travel_time: float = DEFAULT_TRAVEL_TIME
    hmc_events: int = 1
    model_kind: ModelKind = ModelKind.CSM
    nu_init: float = 5.0
    nu_step: float = 0.3

    def __post_init__(self):
        object.__setattr__(self, "model_kind", ModelKind.parse(self.model_kind))
        for name in ("n_iter", "burn_in", "thin", "seed", "hmc_events"):
            val = getattr(self, name)
            if isinstance(val, bool) or int(val) != val:
                raise DomainError(f"{name} must be an integer, got {val!r}")
            object.__setattr__(self, name, int(val))
        if self.n_iter < 1:
            raise DomainError("n_iter must be positive")
        if not 0 <= self.burn_in < self.n_iter:
            raise DomainError("burn_in must satisfy 0 <= burn_in < n_iter")
        if self.thin < 1:
            raise DomainError("thin must be at least 1")
        if self.hmc_events < 1:
            raise DomainError("hmc_events must be at least 1")
        for name in ("c0", "delta", "hmc_travel_time", "nu_step"):
            object.__setattr__(self, name, check_positive(getattr(self, name), name))
        lo, hi = NU_BOUNDS
        if not lo <= self.nu_init <= hi:
            raise DomainError(f"nu_init must lie in [{lo}, {hi}]")

    @property
    def n_stored(self):
        return (self.n_iter - self.burn_in) // self.thin

    def as_dict(self):
        out = asdict(self)
        out["model_kind"] = self.model_kind.value
        return out


@dataclass
class ChainOutput:
    """Stored draws of one chain.

    ``beta`` has shape ``(m, q)``, ``sigma`` ``(m, p, p)``; ``phi`` and
    ``z_freq`` are ``None`` for models without indicators, ``nu`` is set
    only for ``ClassicalT``.  ``z_freq`` is the mean of ``z`` over stored
    sweeps.
    """

    beta: np.ndarray
    sigma: np.ndarray
    phi: Optional[np.ndarray]
    z_freq: Optional[np.ndarray]
    model_kind: ModelKind
    nu: Optional[np.ndarray] = None
    metadata: dict = field(default_factory=dict)

    @property
    def n_draws(self):
        return self.sigma.shape[0]

    @property
    def precision(self):
        """Per-draw ``inv(Sigma)``."""
        return np.linalg.inv(self.sigma)

    def flat_draws(self):
        """Draws flattened as ``beta``, upper-triangular ``Sigma``, then ``phi``.

        Returns
        -------
        names : list of str
        values : ndarray, shape (m, n_columns)
        """
        m = self.n_draws
        q = self.beta.shape[1]
        p = self.sigma.shape[1]
        iu = np.triu_indices(p)
        names = [f"beta{j + 1}" for j in range(q)]
        names += [f"sigma{a + 1}_{b + 1}" for a, b in zip(*iu)]
        cols = [self.beta.reshape(m, q), self.sigma[:, iu[0], iu[1]]]
        if self.phi is not None:
            names.append("phi")
            cols.append(self.phi.reshape(m, 1))
        if self.nu is not None:
            names.append("nu")
            cols.append(self.nu.reshape(m, 1))
        return names, np.hstack(cols)


# ---------------------------------------------------------------------------
# individual steps
# ---------------------------------------------------------------------------

def _aug_constant(decomposition, c0):
    return c0 + decomposition.lam[0]


def sample_theta(state, dataset, decomposition, c0, rng):
    """Draw the normal augmentation ``theta`` for every observation.

    In the eigenbasis of the precision correlation each coordinate is
    ``N((c - lam_k) (H' y~)_k, c - lam_k)`` with ``c = c0 + lam_1`` and
    ``y~ = psi * (y - X beta) / t``.  The stored ``theta`` is the image
    ``H theta~ / c`` in the original coordinates.
    """
    psi, _, H, lam = decomposition
    c = _aug_constant(decomposition, c0)
    var = c - lam
    if np.any(var <= 0.0):
        raise NumericalError("augmentation variance must be positive",
                             {"c": c, "lambda": lam.tolist()})
    ytil = psi * dataset.residuals(state.beta) / state.t
    rot = ytil @ H
    draw = var * rot + np.sqrt(var) * rng.standard_normal(rot.shape)
    return draw @ H.T / c


def _category_logmass(state, resid, decomposition, c0, one_sided):
    # columns: (s=+1, z=0), (s=-1, z=0), (s=+1, z=1), (s=-1, z=1)
    psi = decomposition.psi
    c = _aug_constant(decomposition, c0)
    a = c * state.theta * psi * resid
    b = 0.5 * c * (psi * resid) ** 2
    r = state.r
    log_phi = math.log(state.phi)
    log_1m = math.log1p(-state.phi)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        inv_r = 1.0 / r
        head = log_phi - np.log(r) - b * inv_r * inv_r
        off = np.where(np.isinf(r), 0.0, a * inv_r)
    base = log_1m + a - b
    logm = np.stack([base, base, head + off, head - off], axis=-1)
    if one_sided:
        logm[..., 1] = -np.inf
        logm[..., 3] = -np.inf
    return logm


def sample_sign_and_z(state, dataset, decomposition, c0, rng, one_sided=False):
    """Joint draw of the signs ``s`` and indicators ``z`` for every cell.

    Masses are normalised in log space so extreme residuals never underflow.

    Returns
    -------
    s, z, t : ndarray
        New signs, indicators and effective scales (``t = s r`` where
        ``z = 1`` and one elsewhere).
    """
    resid = dataset.residuals(state.beta)
    logm = _category_logmass(state, resid, decomposition, c0, one_sided)
    top = np.max(logm, axis=-1, keepdims=True)
    w = np.exp(logm - top)
    cum = np.cumsum(w, axis=-1)
    draw = rng.random(resid.shape)[..., None] * cum[..., -1:]
    cat = np.minimum(np.sum(cum <= draw, axis=-1), 3)
    s = np.where(cat % 2 == 0, 1, -1).astype(np.int8)
    z = (cat >= 2).astype(np.int8)
    t = np.where(z == 1, s * state.r, 1.0)
    return s, z, t


def _spd_cholesky(prec, what):
    try:
        return np.linalg.cholesky(prec)
    except np.linalg.LinAlgError:
        k = prec.shape[0]
        jitter = 1e-10 * max(np.trace(prec) / k, 1e-300)
        try:
            return np.linalg.cholesky(prec + jitter * np.eye(k))
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"{what} is not positive definite",
                                 {"matrix": prec.tolist()}) from exc


def sample_beta_sigma(state, dataset, prior, rng):
    """Draw ``beta | Sigma`` (normal) and then ``Sigma | beta`` (inverse-Wishart).

    Both conditionals treat ``y_i / t_i`` and ``X_i / t_i`` as Gaussian data.
    The ``beta`` step is skipped in graphical mode.
    """
    sigma = state.sigma
    t = state.t
    beta = state.beta
    if not dataset.graphical:
        prec_sigma = np.linalg.inv(sigma)
        Xt = dataset.designs / t[:, :, None]
        yt = dataset.y / t
        B0inv = np.linalg.inv(prior.B0)
        PX = np.einsum("kl,ilq->ikq", prec_sigma, Xt)
        post_prec = B0inv + np.einsum("ikq,ikr->qr", Xt, PX)
        post_prec = 0.5 * (post_prec + post_prec.T)
        rhs = B0inv @ prior.b0 + np.einsum("ikq,ik->q", PX, yt)
        L = _spd_cholesky(post_prec, "posterior precision of beta")
        mean = np.linalg.solve(L.T, np.linalg.solve(L, rhs))
        beta = mean + np.linalg.solve(L.T, rng.standard_normal(mean.shape[0]))
    resid = dataset.residuals(beta) / t
    scale = prior.iw_scale + resid.T @ resid
    sigma = sample_inverse_wishart(prior.nu0 + dataset.n, scale, rng)
    return beta, sigma


def sample_phi(state, prior, rng):
    """``phi ~ Beta(sum z + a0, sum (1 - z) + b0_beta)``."""
    hits = float(np.sum(state.z))
    misses = float(state.z.size) - hits
    phi = rng.beta(hits + prior.a0, misses + prior.b0_beta)
    return float(np.clip(phi, _PHI_FLOOR, np.nextafter(1.0, 0.0)))


def sample_u(state, gamma, rng):
    """Slice variables ``u ~ U(0, (1 - log|t~|)^-(1+gamma))`` with ``|t~| = 1/r``."""
    with np.errstate(divide="ignore", over="ignore"):
        bound = (1.0 + np.log(state.r)) ** (-(1.0 + gamma))
    return bound * (1.0 - rng.random(state.r.shape))


def slice_lower(u, gamma):
    """Lower edge ``exp(1 - u^(-1/(1+gamma)))`` of the slice on ``|t~|``."""
    with np.errstate(divide="ignore", over="ignore"):
        return np.exp(1.0 - u ** (-1.0 / (1.0 + gamma)))


def sample_t(state, dataset, config, rng, gamma=1.0):
    """Refresh the latent scales.

    Inactive cells get a fresh prior draw of their magnitude (and, in the
    two-sided model, sign).  For each observation with active cells ``Z``,
    ``zeta ~ N(delta t~_Z, delta I)`` is drawn and ``t~_Z`` moves by exact
    HMC under precision ``Psi_ZZ + delta I``, linear term
    ``zeta - Psi_{Z,Zc} 1`` and the slice box on the current orthant.

    Returns
    -------
    t, r, s, zeta : ndarray
        ``zeta`` is ``(n, p)`` with zeros on inactive cells.
    """
    one_sided = config.model_kind == ModelKind.PCS
    n, p = state.t.shape
    z = state.z.astype(bool)
    r = state.r.copy()
    s = state.s.copy()
    draws = lp_sample(gamma, rng, size=(n, p), one_sided=one_sided)
    r[~z] = np.abs(draws[~z])
    s[~z] = np.sign(draws[~z]).astype(np.int8)

    lo_all = np.clip(slice_lower(state.u, gamma), _LO_FLOOR, _LO_CEIL)
    resid = dataset.residuals(state.beta)
    prec = np.linalg.inv(state.sigma)
    prec = 0.5 * (prec + prec.T)
    noise = rng.standard_normal((n, p))
    momenta = rng.standard_normal((n, config.hmc_events, p))
    z8 = z.astype(np.int8)
    r_new, zeta_mat, status = _active_scale_kernel(
        resid, prec, z8, s, r, lo_all, config.delta, noise, momenta,
        config.hmc_travel_time, _MAX_BOUNCES)
    for i in np.flatnonzero(status != 0):
        # one retry with half the travel time, then give up
        momenta_i = rng.standard_normal((1, config.hmc_events, p))
        out_r, out_zeta, st = _active_scale_kernel(
            resid[i:i + 1], prec, z8[i:i + 1], s[i:i + 1], r[i:i + 1], lo_all[i:i + 1],
            config.delta, noise[i:i + 1], momenta_i, 0.5 * config.hmc_travel_time,
            _MAX_BOUNCES)
        if st[0] != 0:
            raise NumericalError("exact HMC failed for the latent scales",
                                 {"observation": int(i), "code": int(st[0])})
        r_new[i] = out_r[0]
        zeta_mat[i] = out_zeta[0]
    t = np.where(z, s * r_new, 1.0)
    return t, r_new, s, zeta_mat


@numba.njit(cache=True)
def _active_scale_kernel(resid, prec, z, s, r, lo_all, delta, noise, momenta, travel,
                         max_bounces):
    # status per observation: 0 ok, 1 bounce budget, 2 non-PD precision, 3 left the box
    n, p = resid.shape
    r_out = r.copy()
    zeta = np.zeros((n, p))
    status = np.zeros(n, dtype=np.int64)
    sd = math.sqrt(delta)
    for i in range(n):
        m = 0
        for k in range(p):
            if z[i, k] == 1:
                m += 1
        if m == 0:
            continue
        act = np.empty(m, dtype=np.int64)
        j = 0
        for k in range(p):
            if z[i, k] == 1:
                act[j] = k
                j += 1
        e = resid[i]
        P = np.empty((m, m))
        lin = np.empty(m)
        lower = np.empty(m)
        upper = np.empty(m)
        x = np.empty(m)
        for a in range(m):
            ka = act[a]
            for b in range(m):
                P[a, b] = e[ka] * prec[ka, act[b]] * e[act[b]]
            P[a, a] += delta
            cross = 0.0
            for k in range(p):
                if z[i, k] == 0:
                    cross += e[ka] * prec[ka, k] * e[k]
            lo = lo_all[i, ka]
            # current magnitude, nudged strictly inside the slice box
            mag = 1.0 / r[i, ka]
            mag = max(mag, np.nextafter(lo, 2.0))
            mag = min(mag, np.nextafter(1.0, 0.0))
            if s[i, ka] > 0:
                x[a] = mag
                lower[a] = lo
                upper[a] = 1.0
            else:
                x[a] = -mag
                lower[a] = -1.0
                upper[a] = -lo
            zt = delta * x[a] + sd * noise[i, ka]
            zeta[i, ka] = zt
            lin[a] = zt - cross
        out, code = _move_kernel(P, lin, lower, upper, x, momenta[i, :, :m].copy(),
                                 travel, max_bounces)
        if code == -2:
            status[i] = 2
            continue
        if code >= 0:
            status[i] = 1
            continue
        for a in range(m):
            v = out[a]
            slack = 1e-8 * (1.0 + abs(v))
            if v < lower[a] - slack or v > upper[a] + slack:
                status[i] = 3
            v = min(max(v, lower[a]), upper[a])
            r_out[i, act[a]] = 1.0 / max(abs(v), 1e-300)
    return r_out, zeta, status


def sample_classical_scales(state, dataset, nu, rng):
    """Per-observation ``tau_i ~ IG((nu + p)/2, (nu + e' inv(Sigma) e)/2)``.

    Returns the ``(n, p)`` scale matrix with ``t_ik = sqrt(tau_i)``.
    """
    resid = dataset.residuals(state.beta)
    prec = np.linalg.inv(state.sigma)
    quad = np.einsum("ik,kl,il->i", resid, prec, resid)
    shape = 0.5 * (nu + dataset.p)
    rate = 0.5 * (nu + quad)
    tau = rate / rng.gamma(shape, 1.0, size=dataset.n)
    return np.repeat(np.sqrt(tau)[:, None], dataset.p, axis=1)


def _nu_loglik(nu, tau):
    h = 0.5 * nu
    return float(tau.size * (h * math.log(h) - special.gammaln(h))
                 - (h + 1.0) * np.sum(np.log(tau)) - h * np.sum(1.0 / tau))


def sample_nu(nu, tau, step, rng):
    """Random-walk Metropolis on ``log nu`` under a uniform prior on [1, 100].

    Returns
    -------
    nu : float
    accepted : bool
    """
    prop = nu * math.exp(step * rng.standard_normal())
    lo, hi = NU_BOUNDS
    if not lo <= prop <= hi:
        return nu, False
    # the log-scale proposal contributes the Jacobian prop / nu
    log_ratio = _nu_loglik(prop, tau) - _nu_loglik(nu, tau) + math.log(prop / nu)
    if math.log(rng.random()) < log_ratio:
        return prop, True
    return nu, False


# ---------------------------------------------------------------------------
# sweeps and chains
# ---------------------------------------------------------------------------

def sweep(state, dataset, prior, config, rng, nu=None):
    """Advance ``state`` by one full sweep of the configured model.

    Returns
    -------
    state : ModelState
    nu : float or None
        Updated degrees of freedom for ``ClassicalT``.
    accepted : bool
        Whether the ``nu`` proposal was accepted.
    """
    kind = config.model_kind
    accepted = False
    if kind == ModelKind.GAUSSIAN:
        beta, sigma = sample_beta_sigma(state, dataset, prior, rng)
        return state.evolve(beta=beta, sigma=sigma), nu, accepted
    if kind == ModelKind.CLASSICAL_T:
        t = sample_classical_scales(state, dataset, nu, rng)
        state = state.evolve(t=t)
        beta, sigma = sample_beta_sigma(state, dataset, prior, rng)
        nu, accepted = sample_nu(nu, t[:, 0] ** 2, config.nu_step, rng)
        return state.evolve(beta=beta, sigma=sigma), nu, accepted

    dec = precision_correlation_decomposition(state.sigma)
    theta = sample_theta(state, dataset, dec, config.c0, rng)
    state = state.evolve(theta=theta)
    s, z, t = sample_sign_and_z(state, dataset, dec, config.c0, rng,
                                one_sided=kind == ModelKind.PCS)
    state = state.evolve(s=s, z=z, t=t)
    beta, sigma = sample_beta_sigma(state, dataset, prior, rng)
    state = state.evolve(beta=beta, sigma=sigma)
    state = state.evolve(phi=sample_phi(state, prior, rng))
    state = state.evolve(u=sample_u(state, prior.gamma, rng))
    t, r, s, zeta = sample_t(state, dataset, config, rng, gamma=prior.gamma)
    return state.evolve(t=t, r=r, s=s, zeta=zeta), nu, accepted


def _check_compatible(dataset, prior):
    if prior.p != dataset.p:
        raise DomainError(f"prior is for p={prior.p} but the data have p={dataset.p}")
    if prior.q != dataset.q:
        raise DomainError(f"prior is for q={prior.q} but the designs have q={dataset.q}")


def run_chain(dataset, prior, config, initial_state=None):
    """Run one chain and collect post-burn-in, thinned draws.

    Parameters
    ----------
    dataset : Dataset
    prior : PriorConfig
    config : SamplerConfig
    initial_state : ModelState, optional
        Defaults to :meth:`ModelState.initial`, pre-flagging gross cells for
        models with outlier indicators.

    Returns
    -------
    ChainOutput

    Raises
    ------
    SamplerError
        Wrapping any failure inside a sweep, with the sweep index attached.
    """
    if not isinstance(dataset, Dataset):
        raise DomainError("dataset must be a Dataset")
    if not isinstance(prior, PriorConfig):
        raise DomainError("prior must be a PriorConfig")
    _check_compatible(dataset, prior)
    kind = config.model_kind
    rng = np.random.default_rng(config.seed)
    if initial_state is None:
        initial_state = ModelState.initial(dataset, prior, flag_outliers=kind.has_indicators)
    state = initial_state
    nu = config.nu_init if kind == ModelKind.CLASSICAL_T else None

    m = config.n_stored
    n, p, q = dataset.n, dataset.p, dataset.q
    betas = np.empty((m, q))
    sigmas = np.empty((m, p, p))
    phis = np.empty(m) if kind.has_indicators else None
    nus = np.empty(m) if nu is not None else None
    zsum = np.zeros((n, p)) if kind.has_indicators else None
    n_accept = 0
    start = time.perf_counter()
    slot = 0
    for it in range(config.n_iter):
        try:
            state, nu, acc = sweep(state, dataset, prior, config, rng, nu=nu)
        except CSMError as exc:
            raise SamplerError(f"sweep {it} failed: {exc}", iteration=it) from exc
        except (np.linalg.LinAlgError, FloatingPointError) as exc:
            raise SamplerError(f"sweep {it} failed: {exc}", iteration=it) from exc
        n_accept += acc
        kept = it - config.burn_in
        if kept >= 0 and (kept + 1) % config.thin == 0 and slot < m:
            betas[slot] = state.beta
            sigmas[slot] = state.sigma
            if phis is not None:
                phis[slot] = state.phi
                zsum += state.z
            if nus is not None:
                nus[slot] = nu
            slot += 1
    elapsed = time.perf_counter() - start
    meta = {
        "config": config.as_dict(),
        "n": n,
        "p": p,
        "q": q,
        "n_stored": m,
        "wall_clock_s": elapsed,
    }
    if nu is not None:
        meta["nu_acceptance"] = n_accept / config.n_iter
    return ChainOutput(
        beta=betas,
        sigma=sigmas,
        phi=phis,
        z_freq=None if zsum is None else zsum / max(m, 1),
        model_kind=kind,
        nu=nus,
        metadata=meta,
    )
