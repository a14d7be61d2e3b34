import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate, stats

from csmix.exceptions import DomainError, SamplerError
from csmix.model import Dataset, ModelState, PriorConfig, precision_correlation_decomposition
from csmix.sampler import (
    ChainOutput,
    ModelKind,
    SamplerConfig,
    _category_logmass,
    run_chain,
    sample_beta_sigma,
    sample_classical_scales,
    sample_nu,
    sample_phi,
    sample_sign_and_z,
    sample_t,
    sample_theta,
    sample_u,
    slice_lower,
    sweep,
)

from .helpers import batch_means_se, gaussian_conjugate_check, joint_distribution_test


def _setup(n=6, p=2, q=1, seed=0, sigma=None):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, p, q)) + 0.3 if q else None
    y = rng.normal(size=(n, p))
    ds = Dataset(y, X)
    prior = PriorConfig.default(p, q)
    state = ModelState.initial(ds, prior)
    if sigma is not None:
        state = state.evolve(sigma=np.asarray(sigma, float))
    return ds, prior, state


# --- theta ------------------------------------------------------------------

def test_theta_nearly_zero_for_identity_sigma():
    ds, _, state = _setup(sigma=np.eye(2))
    dec = precision_correlation_decomposition(state.sigma)
    theta = sample_theta(state, ds, dec, 1e-8, np.random.default_rng(1))
    # rotated draws are N(c0 y~, c0); mapped back with 1 / (1 + c0)
    assert np.max(np.abs(theta)) < 1e-3


def test_theta_moments_match_normal():
    S = np.array([[1.0, 0.7], [0.7, 2.0]])
    ds, _, state = _setup(n=3, sigma=S)
    dec = precision_correlation_decomposition(S)
    c0 = 0.5
    c = c0 + dec.lam[0]
    rng = np.random.default_rng(2)
    draws = np.array([sample_theta(state, ds, dec, c0, rng) for _ in range(20_000)])
    rot = c * draws @ dec.H           # back to the eigen-coordinates
    ytil = dec.psi * ds.residuals(state.beta) / state.t
    mean = (c - dec.lam) * (ytil @ dec.H)
    var = c - dec.lam
    n = draws.shape[0]
    assert np.all(np.abs(rot.mean(axis=0) - mean) < 4 * np.sqrt(var / n))
    # the leading coordinate has variance exactly c0
    assert var[0] == pytest.approx(c0)
    assert rot.var(axis=0) == pytest.approx(np.broadcast_to(var, rot.shape[1:]), rel=0.05)


# --- signs and indicators ---------------------------------------------------

def test_tiny_phi_forces_inactive():
    ds, _, state = _setup()
    state = state.evolve(phi=1e-300, r=np.full((6, 2), 5.0))
    dec = precision_correlation_decomposition(state.sigma)
    s, z, t = sample_sign_and_z(state, ds, dec, 1e-8, np.random.default_rng(0))
    assert np.all(z == 0) and np.all(t == 1.0)


def test_zero_residual_large_r_prefers_inactive():
    ds, _, state = _setup(q=0)
    ds = Dataset(np.zeros((6, 2)))
    state = state.evolve(phi=0.05, r=np.full((6, 2), 1e3))
    dec = precision_correlation_decomposition(state.sigma)
    logm = _category_logmass(state, ds.residuals(state.beta), dec, 1e-8, False)
    assert np.all(logm[..., 0] > logm[..., 2]) and np.all(logm[..., 1] > logm[..., 3])


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**31), phi=st.floats(1e-6, 1 - 1e-6))
def test_inactive_sign_categories_equal(seed, phi):
    rng = np.random.default_rng(seed)
    ds, _, state = _setup(seed=seed % 1000)
    state = state.evolve(phi=phi, r=1.0 + rng.exponential(5.0, size=(6, 2)),
                         theta=rng.normal(size=(6, 2)))
    dec = precision_correlation_decomposition(state.sigma)
    logm = _category_logmass(state, ds.residuals(state.beta), dec, 1e-8, False)
    assert np.array_equal(logm[..., 0], logm[..., 1])


def test_one_sided_kills_negative_signs():
    ds, _, state = _setup()
    state = state.evolve(phi=0.5)
    dec = precision_correlation_decomposition(state.sigma)
    s, z, _ = sample_sign_and_z(state, ds, dec, 1e-8, np.random.default_rng(0), one_sided=True)
    assert np.all(s == 1)


def test_extreme_residual_no_underflow():
    ds, _, state = _setup(q=0)
    y = ds.y.copy()
    y[0, 0] = 1e150
    ds = Dataset(y)
    state = state.evolve(phi=0.01, r=np.full((6, 2), 1e151))
    dec = precision_correlation_decomposition(state.sigma)
    s, z, t = sample_sign_and_z(state, ds, dec, 1e-8, np.random.default_rng(0))
    assert z[0, 0] == 1 and np.all(np.isfinite(t))


def test_category_frequencies_match_masses():
    ds, _, state = _setup(n=1)
    rng = np.random.default_rng(4)
    state = state.evolve(phi=0.4, r=np.array([[2.0, 3.0]]), theta=np.array([[0.3, -0.2]]))
    dec = precision_correlation_decomposition(state.sigma)
    logm = _category_logmass(state, ds.residuals(state.beta), dec, 1e-8, False)[0, 0]
    prob = np.exp(logm - logm.max())
    prob /= prob.sum()
    n = 40_000
    counts = np.zeros(4)
    for _ in range(n):
        s, z, _ = sample_sign_and_z(state, ds, dec, 1e-8, rng)
        counts[(0 if s[0, 0] == 1 else 1) + 2 * z[0, 0]] += 1
    assert np.all(np.abs(counts / n - prob) < 4 * np.sqrt(prob * (1 - prob) / n) + 1e-12)


# --- beta and Sigma ---------------------------------------------------------

def test_no_data_draws_from_prior():
    ds = Dataset(np.zeros((0, 2)), np.zeros((0, 2, 1)))
    prior = PriorConfig(np.array([1.0]), 4.0 * np.eye(1), nu0=6.0, S0=np.eye(2) / 6.0)
    state = ModelState.initial(ds, prior)
    rng = np.random.default_rng(0)
    draws = [sample_beta_sigma(state, ds, prior, rng) for _ in range(20_000)]
    betas = np.array([b[0] for b, _ in draws])
    precs = np.array([np.linalg.inv(s) for _, s in draws])
    assert abs(betas.mean() - 1.0) < 3 * 2.0 / math.sqrt(20_000)
    assert betas.std() == pytest.approx(2.0, rel=0.03)
    se = precs.std(axis=0) / math.sqrt(20_000)
    assert np.all(np.abs(precs.mean(axis=0) - np.eye(2)) < 3 * se + 1e-12)


def test_graphical_mode_skips_beta():
    ds, prior, state = _setup(q=0)
    beta, sigma = sample_beta_sigma(state, ds, prior, np.random.default_rng(0))
    assert beta.shape == (0,)
    assert np.all(np.linalg.eigvalsh(sigma) > 0)


def test_large_clean_regression_recovers_beta():
    rng = np.random.default_rng(8)
    n, p = 2000, 2
    X = rng.normal(size=(n, p, 1))
    S = np.array([[1.0, 0.3], [0.3, 1.0]])
    y = X @ np.array([0.7]) + rng.multivariate_normal(np.zeros(p), S, size=n)
    ds = Dataset(y, X)
    prior = PriorConfig.default(p, 1)
    state = ModelState.initial(ds, prior).evolve(sigma=S)
    draws = np.array([sample_beta_sigma(state, ds, prior, rng)[0][0] for _ in range(2000)])
    assert abs(draws.mean() - 0.7) < 3 * draws.std()


# --- phi ------------------------------------------------------------------

def test_phi_all_active():
    ds, prior, state = _setup(n=2)
    state = state.evolve(z=np.ones((2, 2), dtype=np.int8))
    rng = np.random.default_rng(0)
    draws = np.array([sample_phi(state, prior, rng) for _ in range(50_000)])
    a, b = 4 + prior.a0, prior.b0_beta
    assert abs(draws.mean() - a / (a + b)) < 3 * stats.beta(a, b).std() / math.sqrt(50_000)


def test_phi_all_inactive():
    ds, prior, state = _setup(n=2)
    rng = np.random.default_rng(1)
    draws = np.array([sample_phi(state, prior, rng) for _ in range(50_000)])
    a, b = prior.a0, 4 + prior.b0_beta
    assert stats.kstest(draws, stats.beta(a, b).cdf).statistic < 0.01
    assert np.all((draws > 0) & (draws < 1))


def test_phi_mean_matches_counts():
    ds, prior, state = _setup(n=5)
    z = np.zeros((5, 2), dtype=np.int8)
    z[:3, 0] = 1
    state = state.evolve(z=z)
    rng = np.random.default_rng(2)
    draws = np.array([sample_phi(state, prior, rng) for _ in range(50_000)])
    expect = (3 + prior.a0) / (10 + prior.a0 + prior.b0_beta)
    assert draws.mean() == pytest.approx(expect, abs=0.003)


# --- slice variables --------------------------------------------------------

def test_u_uniform_when_scale_is_one():
    ds, _, state = _setup()
    rng = np.random.default_rng(0)
    u = np.concatenate([sample_u(state, 1.0, rng).ravel() for _ in range(5000)])
    assert stats.kstest(u, "uniform").statistic < 0.01


def test_u_bound_at_inverse_e():
    ds, _, state = _setup()
    state = state.evolve(r=np.full((6, 2), math.e))
    rng = np.random.default_rng(1)
    u = np.concatenate([sample_u(state, 1.0, rng).ravel() for _ in range(5000)])
    assert u.max() <= 0.25
    assert stats.kstest(u / 0.25, "uniform").statistic < 0.01


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**31), gamma=st.floats(0.1, 10.0))
def test_slice_contains_current_value(seed, gamma):
    rng = np.random.default_rng(seed)
    ds, _, state = _setup()
    r = 1.0 + rng.exponential(100.0, size=(6, 2))
    state = state.evolve(r=r)
    u = sample_u(state, gamma, rng)
    assert np.all(slice_lower(u, gamma) < 1.0 / r)


# --- latent scales ----------------------------------------------------------

def test_all_inactive_scales_refreshed_from_prior():
    ds, prior, state = _setup()
    cfg = SamplerConfig()
    t, r, s, zeta = sample_t(state, ds, cfg, np.random.default_rng(0))
    assert np.all(t == 1.0) and np.all(r >= 1.0)
    assert not np.all(r == 1.0)
    assert np.all(zeta == 0.0)


def test_single_active_scale_matches_quadrature():
    # p = 1, Sigma = 1: given the slice, 1/|t| has density ~ N(0, 1/e^2) on (lo, 1)
    e = 2.5
    ds = Dataset(np.array([[e]]))
    prior = PriorConfig.default(1)
    state = ModelState.initial(ds, prior).evolve(
        sigma=np.eye(1), z=np.ones((1, 1), np.int8), r=np.full((1, 1), 2.0),
        t=np.full((1, 1), 2.0), u=np.full((1, 1), 0.3))
    lo = float(slice_lower(0.3, prior.gamma))
    cfg = SamplerConfig()
    rng = np.random.default_rng(3)
    vals = np.empty(40_000)
    for i in range(vals.size):
        t, r, s, _ = sample_t(state, ds, cfg, rng, gamma=prior.gamma)
        state = state.evolve(t=t, r=r, s=s)
        vals[i] = 1.0 / r[0, 0]
        assert lo < vals[i] <= 1.0
    dens = lambda x: math.exp(-0.5 * (e * x) ** 2)
    Z, _ = integrate.quad(dens, lo, 1.0)
    m1, _ = integrate.quad(lambda x: x * dens(x), lo, 1.0)
    m2, _ = integrate.quad(lambda x: x * x * dens(x), lo, 1.0)
    mean, var = m1 / Z, m2 / Z - (m1 / Z) ** 2
    assert abs(vals.mean() - mean) < 3 * batch_means_se(vals)
    assert vals.var() == pytest.approx(var, rel=0.05)


def test_scales_respect_slice_box_over_sweeps():
    rng = np.random.default_rng(12)
    y = rng.normal(size=(15, 3))
    y[0, 1] = 80.0
    y[3, 0] = -40.0
    ds = Dataset(y)
    prior = PriorConfig.default(3)
    cfg = SamplerConfig()
    state = ModelState.initial(ds, prior)
    for _ in range(200):
        state, _, _ = sweep(state, ds, prior, cfg, rng)
        state.check()
        lo = slice_lower(state.u, prior.gamma)
        active = state.z == 1
        assert np.all(1.0 / state.r[active] > np.minimum(lo[active], 1 - 1e-12) * (1 - 1e-9))
        assert np.all(1.0 / state.r <= 1.0)


# --- classical t ------------------------------------------------------------

def test_classical_scales_shape_and_support():
    ds, _, state = _setup()
    t = sample_classical_scales(state, ds, 5.0, np.random.default_rng(0))
    assert t.shape == (6, 2)
    assert np.all(t[:, 0] == t[:, 1]) and np.all(t > 0)


def test_nu_stays_in_bounds():
    rng = np.random.default_rng(0)
    tau = 1.0 / rng.gamma(2.5, 1 / 2.5, size=50)
    nu = 5.0
    for _ in range(2000):
        nu, _ = sample_nu(nu, tau, 0.3, rng)
        assert 1.0 <= nu <= 100.0


def test_nu_posterior_concentrates_near_truth():
    rng = np.random.default_rng(1)
    nu_true = 6.0
    tau = 1.0 / rng.gamma(nu_true / 2, 2 / nu_true, size=3000)
    nu, draws = 5.0, []
    for _ in range(4000):
        nu, _ = sample_nu(nu, tau, 0.3, rng)
        draws.append(nu)
    assert np.mean(draws[1000:]) == pytest.approx(nu_true, rel=0.2)


# --- chains -----------------------------------------------------------------

def test_config_validation():
    with pytest.raises(DomainError):
        SamplerConfig(n_iter=10, burn_in=10)
    with pytest.raises(DomainError):
        SamplerConfig(thin=0)
    with pytest.raises(DomainError):
        SamplerConfig(model_kind="student")
    with pytest.raises(DomainError):
        SamplerConfig(c0=0.0)
    assert SamplerConfig(model_kind="gaussian").model_kind is ModelKind.GAUSSIAN


@pytest.mark.parametrize("n_iter,burn_in,thin", [(10, 0, 1), (10, 3, 2), (25, 5, 7), (4, 3, 5)])
def test_number_of_stored_draws(n_iter, burn_in, thin):
    ds, prior, _ = _setup()
    chain = run_chain(ds, prior, SamplerConfig(n_iter=n_iter, burn_in=burn_in, thin=thin))
    assert chain.n_draws == (n_iter - burn_in) // thin
    assert np.all((chain.z_freq >= 0) & (chain.z_freq <= 1))


@pytest.mark.parametrize("kind", list(ModelKind))
def test_every_model_kind_runs(kind):
    ds, prior, _ = _setup(n=10)
    chain = run_chain(ds, prior, SamplerConfig(n_iter=30, burn_in=10, model_kind=kind))
    assert isinstance(chain, ChainOutput)
    assert (chain.phi is None) == (not kind.has_indicators)
    assert (chain.nu is None) == (kind is not ModelKind.CLASSICAL_T)
    names, vals = chain.flat_draws()
    assert vals.shape == (20, len(names))
    assert chain.metadata["n_stored"] == 20


def test_chain_is_deterministic():
    ds, prior, _ = _setup(n=10)
    cfg = SamplerConfig(n_iter=40, burn_in=10, seed=17)
    a = run_chain(ds, prior, cfg).flat_draws()[1]
    b = run_chain(ds, prior, cfg).flat_draws()[1]
    assert np.array_equal(a, b)


def test_incompatible_prior_rejected():
    ds, _, _ = _setup()
    with pytest.raises(DomainError):
        run_chain(ds, PriorConfig.default(3, 1), SamplerConfig(n_iter=2, burn_in=0))


def test_sweep_failure_is_wrapped():
    ds, prior, state = _setup()
    bad = state.evolve(sigma=np.array([[1.0, 2.0], [2.0, 1.0]]))
    with pytest.raises(SamplerError) as info:
        run_chain(ds, prior, SamplerConfig(n_iter=3, burn_in=0), initial_state=bad)
    assert info.value.iteration == 0


def test_planted_outlier_flagged():
    rng = np.random.default_rng(4)
    y = rng.normal(size=(60, 3))
    y[7, 2] = 1e4
    chain = run_chain(Dataset(y), PriorConfig.default(3), SamplerConfig(n_iter=600, burn_in=300))
    assert chain.z_freq[7, 2] > 0.5
    assert np.median(chain.z_freq) < 0.2


def test_gaussian_matches_conjugate_posterior():
    mean, se, exact = gaussian_conjugate_check(n_iter=4000)
    assert np.all(np.abs(mean - exact) < 3 * se)


@pytest.mark.parametrize("kind", ["CSM", "PCS"])
def test_joint_distribution_short(kind):
    res = joint_distribution_test(kind, gamma=2.0, n_sweeps=3000, seed=11)
    for name, (mean, se, truth) in res.items():
        assert abs(mean - truth) < 3 * se, name
