import numpy as np
import pytest
from scipy import linalg, stats

from _oracles import dense_ar_precision, dense_coefficient_posterior, proper_spec, small_instance
from conftest import batch_means_se
from gpbold import gibbs
from gpbold.ar import ArPrior
from gpbold.errors import NumericalError, ShapeError
from gpbold.gibbs import (ChainState, PosteriorDraws, SamplerSettings,
                          coef_conditional, default_spec, elliptical_slice, initialize_chain,
                          rho_conditional, run_chain, run_gibbs, sample_coefficients, sample_rho,
                          sample_sigma2, sigma2_conditional, whitened)
from gpbold.kernel import KernelHyper
from gpbold.simulation import SimulationConfig, generate_dataset, true_bold


# bookkeeping ---------------------------------------------------------------

@pytest.mark.parametrize("n_iter,burn,thin,expect", [(4000, 1000, 3, 1000), (9000, 3000, 6, 1000),
                                                    (10, 0, 1, 10), (11, 2, 4, 2)])
def test_retained_counts(n_iter, burn, thin, expect):
    s = SamplerSettings(n_iter, burn, thin)
    assert s.n_retained == expect
    assert sum(s.keep(i) for i in range(n_iter)) == expect


def test_sampler_settings_validation():
    with pytest.raises(ValueError):
        SamplerSettings(10, 10, 1)
    with pytest.raises(ValueError):
        SamplerSettings(10, 0, 0)


# rho -----------------------------------------------------------------------

def test_tight_prior_returns_prior_mean():
    data, state = small_instance(k=2, rho=(0.4, 0.1))
    prior = ArPrior([0.2, -0.1], 1e-14 * np.eye(2))
    mean, _ = rho_conditional(gibbs.residuals(data, state), state.sigma2, prior)
    np.testing.assert_allclose(mean, [0.2, -0.1], atol=1e-9)


def test_flat_prior_is_least_squares():
    data, state = small_instance(k=2, rho=(0.4, 0.1))
    state.sigma2 = np.array([0.7, 0.7])
    resid = gibbs.residuals(data, state)
    mean, _ = rho_conditional(resid, state.sigma2, ArPrior([0.0, 0.0], 1e12 * np.eye(2)))
    lagged = np.vstack([np.column_stack([resid[1:-1, j], resid[:-2, j]]) for j in range(2)])
    target = np.concatenate([resid[2:, j] for j in range(2)])
    ls, *_ = np.linalg.lstsq(lagged, target, rcond=None)
    np.testing.assert_allclose(mean, ls, atol=1e-9)


def test_rho_draws_follow_truncated_normal():
    data, state = small_instance(n_time=8, rho=(0.9,), sigma=(0.4, 0.4))
    spec = proper_spec(data, state, a0=0.5)
    mean, cov = rho_conditional(gibbs.residuals(data, state), state.sigma2, spec.ar_prior)
    sd = np.sqrt(cov[0, 0])
    rng = np.random.default_rng(1)
    draws = np.array([sample_rho(state, data, spec, rng)[0] for _ in range(20_000)])
    a, b = (-1 - mean[0]) / sd, (1 - mean[0]) / sd
    tn = stats.truncnorm(a, b, loc=mean[0], scale=sd)
    assert np.all(np.abs(draws) < 1)
    assert stats.kstest(draws, tn.cdf).pvalue > 0.01


def test_rho_posterior_covers_truth():
    cfg = SimulationConfig(n_voxels=100, n_active=0)
    data, truth = generate_dataset(cfg, np.random.default_rng(5))
    # conditional on the true coefficients the residuals are the AR noise itself
    resid = data.y - true_bold(cfg) @ truth.true_b - data.z @ truth.trend_coeffs
    prior = ArPrior.shrinkage(3)
    mean, cov = rho_conditional(resid, np.full(100, truth.sigma ** 2), prior)
    assert np.all(np.abs(mean - truth.true_rho) < 3 * np.sqrt(np.diag(cov)))


# sigma2 ----------------------------------------------------------------------

def test_sigma2_shape_is_c0_plus_half_t():
    y = np.random.default_rng(0).standard_normal((150, 3))
    x = np.ones((150, 1))
    spec = gibbs.ModelSpec(np.zeros((150, 1)), [KernelHyper(1, 1)], ArPrior([], np.zeros((0, 0))))
    shape, _ = sigma2_conditional(y, x, np.zeros((1, 3)), spec)
    np.testing.assert_array_equal(shape, [75.0, 75.0, 75.0])


def test_zero_residuals_leave_prior_scale():
    spec = gibbs.ModelSpec(np.zeros((5, 1)), [KernelHyper(1, 1)], ArPrior([], np.zeros((0, 0))),
                           d0=0.4)
    x = np.ones((5, 1))
    _, scale = sigma2_conditional(2 * x, x, np.array([[2.0]]), spec)
    assert scale[0] == 0.4


def test_flat_prior_zero_residual_is_reported():
    spec = gibbs.ModelSpec(np.zeros((5, 1)), [KernelHyper(1, 1)], ArPrior([], np.zeros((0, 0))))
    x = np.ones((5, 1))
    st = ChainState(np.zeros((5, 1)), x, np.array([[2.0]]), np.zeros((0, 1)), np.ones(1), np.zeros(0))
    with pytest.raises(NumericalError, match="voxels \\[0\\]"):
        sample_sigma2(st, 2 * x, x, spec, np.random.default_rng(0))


def test_sigma2_mean_matches_inverse_gamma():
    data, state = small_instance()
    spec = proper_spec(data, state, exact=False)
    y_t, x_t = whitened(data, state)
    shape, scale = sigma2_conditional(y_t, x_t, np.vstack([state.b, state.gamma]), spec)
    rng = np.random.default_rng(2)
    draws = np.array([sample_sigma2(state, y_t, x_t, spec, rng) for _ in range(100_000)])
    expect = scale / (shape - 1)
    se = draws.std(axis=0, ddof=1) / np.sqrt(draws.shape[0])
    assert np.all(np.abs(draws.mean(axis=0) - expect) < 3 * se)


# coefficients ------------------------------------------------------------------

def test_prewhitening_matches_dense_filter():
    data, state = small_instance(k=1)
    y_t, x_t = whitened(data, state)
    lmat = dense_ar_precision(state.rho, data.n_total)
    np.testing.assert_allclose(y_t, lmat @ data.y, atol=1e-13)
    np.testing.assert_allclose(x_t, lmat @ np.hstack([state.design, data.z]), atol=1e-13)


def test_coefficient_mean_and_covariance_match_kronecker_algebra():
    data, state = small_instance()
    spec = proper_spec(data, state)
    y_t, x_t = whitened(data, state)
    p_q = spec.coef_precision(1, 2)
    q0 = spec.coef_mean(1, 2, 2)
    qbar, chol = coef_conditional(y_t, x_t, p_q, q0)
    mean, cov = dense_coefficient_posterior(data, state, p_q, q0)
    np.testing.assert_allclose(qbar.T.reshape(-1), mean, atol=1e-10)
    lam_inv = linalg.cho_solve((chol, True), np.eye(3))
    np.testing.assert_allclose(np.kron(np.diag(state.sigma2), lam_inv), cov, atol=1e-10)


def test_strong_prior_concentrates_at_prior_mean():
    data, state = small_instance()
    spec = proper_spec(data, state, kappa=1e12, tau=1e12)
    b, g = sample_coefficients(state, data, spec, np.random.default_rng(0))
    np.testing.assert_allclose(b, 0.3, atol=1e-5)
    np.testing.assert_allclose(g, 0.1, atol=1e-5)


def test_flat_prior_mean_is_gls():
    data, state = small_instance()
    spec = proper_spec(data, state, kappa=1e-10, tau=0.0)
    y_t, x_t = whitened(data, state)
    qbar, _ = coef_conditional(y_t, x_t, spec.coef_precision(1, 2), spec.coef_mean(1, 2, 2))
    gls, *_ = np.linalg.lstsq(x_t, y_t, rcond=None)
    np.testing.assert_allclose(qbar, gls, atol=1e-7)


def test_singular_design_with_flat_prior_raises():
    with pytest.raises(NumericalError, match="singular"):
        coef_conditional(np.ones((4, 1)), np.ones((4, 2)), np.zeros((2, 2)), np.zeros((2, 1)))


# elliptical slice --------------------------------------------------------------

def test_accepted_points_clear_the_slice_level():
    rng = np.random.default_rng(0)
    chol = np.eye(2)
    seen = []

    def loglik(x):
        v = -10 * np.sum((x - 1.5) ** 2)
        seen.append(v)
        return v

    x, ll = np.zeros(2), None
    for _ in range(200):
        state = rng.bit_generator.state
        x_new, ll_new, shrinks = elliptical_slice(x, np.zeros(2), chol, loglik, rng, ll)
        # replay the level draw: cur_ll + log(u) after one normal vector
        replay = np.random.default_rng()
        replay.bit_generator.state = state
        replay.standard_normal(2)
        level = (loglik(x) if ll is None else ll) + np.log(replay.uniform())
        assert ll_new > level
        x, ll = x_new, ll_new


def test_ess_matches_gaussian_posterior():
    rng = np.random.default_rng(3)
    mu = np.array([0.5, -1.0, 0.0])
    a = rng.standard_normal((3, 3))
    sigma = a @ a.T + np.eye(3)
    chol = np.linalg.cholesky(sigma)
    y = np.array([1.0, 2.0, -1.0])
    r = np.diag([0.5, 1.0, 2.0])
    r_inv = np.linalg.inv(r)
    post_cov = np.linalg.inv(np.linalg.inv(sigma) + r_inv)
    post_mean = post_cov @ (np.linalg.solve(sigma, mu) + r_inv @ y)

    def loglik(x):
        d = y - x
        return -0.5 * d @ r_inv @ d

    x, ll = mu.copy(), None
    draws = []
    for _ in range(30_000):
        x, ll, _ = elliptical_slice(x, mu, chol, loglik, rng, ll)
        draws.append(x)
    draws = np.array(draws[1000:])
    se = batch_means_se(draws)
    assert np.all(np.abs(draws.mean(axis=0) - post_mean) < 4 * se)
    np.testing.assert_allclose(np.cov(draws.T), post_cov, atol=0.1 * np.abs(post_cov).max())


def test_degenerate_likelihood_raises():
    with pytest.raises(NumericalError):
        elliptical_slice(np.zeros(2), np.zeros(2), np.eye(2), lambda x: -np.inf,
                         np.random.default_rng(0), cur_ll=0.0)


# initialization --------------------------------------------------------------

def _noise_free():
    cfg = SimulationConfig(n_voxels=5, n_active=5)
    data, truth = generate_dataset(cfg, np.random.default_rng(2))
    design = true_bold(cfg)
    y = design @ truth.true_b + data.z @ truth.trend_coeffs
    return gibbs.ParcelData(y, data.z, 3), design, truth


def test_noise_free_data_recovered():
    data, design, truth = _noise_free()
    spec = default_spec(data, design, [KernelHyper(4, 0.1)])
    state, info = initialize_chain(data, spec)
    np.testing.assert_allclose(state.b, truth.true_b, atol=1e-6)


def test_huge_ridge_penalty_shrinks_to_zero():
    data, design, truth = _noise_free()
    spec = default_spec(data, design, [KernelHyper(4, 0.1)], ridge_penalty=1e14)
    state, _ = initialize_chain(data, spec)
    assert np.max(np.abs(state.b)) < 1e-6


def test_initialization_converges_quickly_on_study_data():
    cfg = SimulationConfig()
    data, _ = generate_dataset(cfg, np.random.default_rng(8))
    spec = default_spec(data, standardize(true_bold(cfg)), [KernelHyper(4, 0.1)])
    _, info = initialize_chain(data, spec)
    assert info["init_converged"] and info["init_iterations"] <= 20


def standardize(x):
    return (x - x.mean(axis=0)) / x.std(axis=0)


# full chain ----------------------------------------------------------------------

def _short_run(model="gp", seed=0, n_iter=40):
    cfg = SimulationConfig(n_voxels=6, n_active=3, n_time=60)
    data, _ = generate_dataset(cfg, np.random.default_rng(1))
    spec = default_spec(data, standardize(true_bold(cfg)), [KernelHyper(4, 0.1)],
                        sampler=SamplerSettings(n_iter, 10, 3, seed))
    lm = (gibbs.gp_latent_model(spec, data.n_total, 3) if model == "gp"
          else gibbs.fixed_latent_model(spec))
    return run_gibbs(data, spec, lm)[0], spec


def test_same_seed_same_draws():
    a, _ = _short_run(seed=4)
    b, _ = _short_run(seed=4)
    for name in gibbs.PARAM_GROUPS:
        np.testing.assert_array_equal(getattr(a, name), getattr(b, name))
    c, _ = _short_run(seed=5)
    assert not np.array_equal(a.b, c.b)


def test_draw_shapes_and_metadata():
    d, spec = _short_run()
    assert d.n_draws == 10
    assert d.f.shape == (10, 63, 1) and d.b.shape == (10, 1, 6) and d.rho.shape == (10, 3)
    assert d.metadata["steps"][-1] == "ess_F"
    assert d.metadata["n_retained"] == 10
    # every retained design column is identified
    np.testing.assert_allclose(np.max(np.abs(d.design), axis=1), 1.0)


def test_fixed_model_keeps_prior_mean():
    d, spec = _short_run("fixed")
    assert d.metadata["steps"][-1] == "F_fixed"
    for f in d.f:
        np.testing.assert_array_equal(f, spec.prior_mean)


def test_presample_must_equal_ar_order():
    data, state = small_instance(k=1)
    spec = default_spec(data, state.f, [KernelHyper(4, 0.1)], ar_order=2)
    with pytest.raises(ShapeError):
        run_chain(data, spec)


def test_draws_roundtrip(tmp_path):
    d, _ = _short_run(n_iter=25)
    d.save(tmp_path / "x", {"seconds": 1.0})
    e = PosteriorDraws.load(tmp_path / "x")
    for name in gibbs.PARAM_GROUPS:
        np.testing.assert_array_equal(getattr(d, name), getattr(e, name))
    assert e.metadata["seed"] == d.metadata["seed"]


def test_joint_distribution_geweke():
    """Alternating posterior sweeps and data regeneration must preserve the prior."""
    rng = np.random.default_rng(12)
    data, state = small_instance(n_time=12, n_vox=1, p=1, sigma=(1.0,))
    spec = proper_spec(data, state, kappa=1.0, tau=1.0, c0=4.0, d0=3.0, a0=0.1)
    design = state.design
    z = data.z
    y_pre = data.y[:1].copy()

    def regenerate(st):
        q = np.vstack([st.b, st.gamma])
        mean = np.hstack([design, z]) @ q
        u = np.empty((data.n_total, 1))
        u[0] = y_pre[0] - mean[0]
        e = np.sqrt(st.sigma2) * rng.standard_normal((data.n_total - 1, 1))
        for t in range(1, data.n_total):
            u[t] = st.rho[0] * u[t - 1] + e[t - 1]
        return gibbs.ParcelData(mean + u, z, 1)

    # start from a prior draw
    st = state.copy()
    st.rho = np.array([0.0])
    st.sigma2 = np.array([1.0])
    n = 30_000
    out = np.empty((n, 4))
    for i in range(n):
        d = regenerate(st)
        st.rho = sample_rho(st, d, spec, rng)
        y_t, x_t = whitened(d, st)
        st.sigma2 = sample_sigma2(st, y_t, x_t, spec, rng)
        st.b, st.gamma = sample_coefficients(st, d, spec, rng, y_t, x_t)
        out[i] = st.rho[0], st.sigma2[0], st.b[0, 0], st.gamma[0, 0]
    out = out[1000:]
    # prior: rho ~ N(0, 0.1) on (-1, 1), sigma2 ~ IG(4, 3), b | s2 ~ N(0.3, s2), gamma | s2 ~ N(0.1, s2)
    expect = np.array([0.0, 1.0, 0.3, 0.1])
    se = batch_means_se(out, 100)
    assert np.all(np.abs(out.mean(axis=0) - expect) < 4 * se), (out.mean(axis=0), se)
    tn_var = stats.truncnorm(-1 / np.sqrt(0.1), 1 / np.sqrt(0.1), scale=np.sqrt(0.1)).var()
    # Var(rho); E[s2^2] = d0^2 / ((c0-1)(c0-2)); Var(b) = Var(gamma) = E[s2] / precision
    second = np.array([tn_var, 9.0 / 6.0, 1.0, 1.0])
    got = np.array([out[:, 0].var(), np.mean(out[:, 1] ** 2), out[:, 2].var(), out[:, 3].var()])
    np.testing.assert_allclose(got, second, rtol=0.1)
