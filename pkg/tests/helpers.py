"""Shared numerical oracles for the test suite."""

import math

import numpy as np
from scipy import integrate

from csmix.distributions import lp_cdf, lp_density, lp_tail_prob

DBL_MAX = np.finfo(float).max
# largest log|t| at which lp_density can still be evaluated in float64
LOG_T_EDGE = 600.0


def ks_real_line(samples, cdf):
    """Kolmogorov-Smirnov distance ``sup_x |F_n(x) - F(x)|`` over finite ``x``.

    Heavy-tailed draws can overflow to ``+-inf``; those count as lying
    beyond every finite ``x``, so the supremum is taken over the finite
    sample points and the two float64 extremes.
    """
    x = np.sort(np.asarray(samples, dtype=float))
    n = x.size
    fin = np.isfinite(x)
    n_neg = int(np.sum(x == -np.inf))
    xf = x[fin]
    idx = n_neg + np.arange(1, xf.size + 1)
    F = cdf(xf)
    d_plus = np.max(idx / n - F) if xf.size else 0.0
    d_minus = np.max(F - (idx - 1) / n) if xf.size else 0.0
    edge_lo = abs(n_neg / n - cdf(-DBL_MAX))
    edge_hi = abs((n_neg + xf.size) / n - cdf(DBL_MAX))
    return float(max(d_plus, d_minus, edge_lo, edge_hi))


def lp_total_mass(gamma):
    """Quadrature of the log-Pareto density over the real line.

    The density is integrated in ``s = log|t|`` on ``(0, LOG_T_EDGE)`` where
    ``t`` is representable; the remaining mass beyond ``exp(LOG_T_EDGE)`` is
    added from the closed-form tail.
    """
    half, _ = integrate.quad(lambda s: lp_density(math.exp(s), gamma) * math.exp(s),
                             0.0, LOG_T_EDGE, epsabs=0.0, epsrel=1e-12, limit=400,
                             points=[1.0, 10.0, 100.0])
    return 2.0 * half + lp_tail_prob(math.exp(LOG_T_EDGE), gamma)


def lp_cdf_gamma(gamma):
    return lambda x: lp_cdf(x, gamma)


def batch_means_se(x, n_batches=50):
    """Monte Carlo standard error of the mean of a correlated series."""
    x = np.asarray(x, dtype=float)
    m = x.size // n_batches
    b = x[: m * n_batches].reshape(n_batches, m).mean(axis=1)
    return float(b.std(ddof=1) / math.sqrt(n_batches))


GEWEKE_STATS = ("beta", "beta_sq", "sigma11", "sigma12", "sigma22", "phi", "z_mean")


def joint_distribution_test(kind="CSM", gamma=2.0, n_sweeps=10_000, seed=5):
    """Successive-conditional simulation against the known prior moments.

    Alternates one sampler sweep with a fresh draw of ``y`` given the
    current parameters and scales.  If the sweep leaves the posterior
    invariant, the parameter draws have the prior as their stationary law.

    Setting: ``p = 2``, ``q = 1``, ``n = 5``; ``beta ~ N(0, 1)``,
    ``Sigma ~ IW(8, 8 I)``, ``phi ~ Beta(2, 2)``.

    Returns
    -------
    dict
        ``name -> (mean, se, truth)``.
    """
    from csmix import Dataset, ModelState, PriorConfig, SamplerConfig
    from csmix.distributions import lp_sample, sample_inverse_wishart
    from csmix.sampler import ModelKind, sweep

    kind = ModelKind.parse(kind)
    rng = np.random.default_rng(seed)
    n, p = 5, 2
    X = rng.standard_normal((n, p, 1)) + 0.5
    prior = PriorConfig(b0=np.zeros(1), B0=np.eye(1), nu0=8.0, S0=np.eye(p) / 8.0,
                        a0=2.0, b0_beta=2.0, gamma=gamma)
    cfg = SamplerConfig(n_iter=10, burn_in=0, seed=0, model_kind=kind)

    beta = rng.standard_normal(1)
    sigma = sample_inverse_wishart(8.0, 8.0 * np.eye(p), rng)
    indicators = kind.has_indicators
    phi = rng.beta(2.0, 2.0)
    if indicators:
        z = (rng.random((n, p)) < phi).astype(np.int8)
        draw = lp_sample(gamma, rng, size=(n, p), one_sided=kind is ModelKind.PCS)
        r, s = np.abs(draw), np.sign(draw).astype(np.int8)
        t = np.where(z == 1, s * r, 1.0)
    else:
        z = np.zeros((n, p), dtype=np.int8)
        r, s, t = np.ones((n, p)), np.ones((n, p), dtype=np.int8), np.ones((n, p))

    def simulate(beta, sigma, t):
        e = rng.multivariate_normal(np.zeros(p), sigma, size=n)
        return X @ beta + t * e

    ds = Dataset(simulate(beta, sigma, t), X)
    state = ModelState.initial(ds, prior).evolve(beta=beta, sigma=sigma, phi=phi, z=z,
                                                 s=s, t=t, r=r)
    rec = np.empty((n_sweeps, len(GEWEKE_STATS)))
    for it in range(n_sweeps):
        state, _, _ = sweep(state, ds, prior, cfg, rng)
        ds = Dataset(simulate(state.beta, state.sigma, state.t), X)
        rec[it] = (state.beta[0], state.beta[0] ** 2, state.sigma[0, 0], state.sigma[0, 1],
                   state.sigma[1, 1], state.phi, state.z.mean())
    truth = {"beta": 0.0, "beta_sq": 1.0, "sigma11": 1.6, "sigma12": 0.0, "sigma22": 1.6,
             "phi": 0.5, "z_mean": 0.5}
    out = {}
    for j, name in enumerate(GEWEKE_STATS):
        if not indicators and name in ("phi", "z_mean"):
            continue
        out[name] = (float(rec[:, j].mean()), batch_means_se(rec[:, j]), truth[name])
    return out


def gaussian_conjugate_check(n_iter=6000, seed=3):
    """Gaussian graphical chain against the exact inverse-Wishart posterior.

    Returns ``(chain_mean, mc_se, exact_mean)`` for the upper-triangular
    entries of ``Sigma``.
    """
    from csmix import Dataset, PriorConfig, SamplerConfig, run_chain

    rng = np.random.default_rng(seed)
    p, n = 3, 40
    cov = np.array([[1.0, 0.4, 0.1], [0.4, 2.0, -0.3], [0.1, -0.3, 0.5]])
    y = rng.multivariate_normal(np.zeros(p), cov, size=n)
    prior = PriorConfig.default(p)
    chain = run_chain(Dataset(y), prior, SamplerConfig(n_iter=n_iter, burn_in=0, seed=seed,
                                                       model_kind="Gaussian"))
    df = prior.nu0 + n
    exact = (prior.iw_scale + y.T @ y) / (df - p - 1)
    iu = np.triu_indices(p)
    draws = chain.sigma[:, iu[0], iu[1]]
    se = np.array([batch_means_se(draws[:, j]) for j in range(draws.shape[1])])
    return draws.mean(axis=0), se, exact[iu]
