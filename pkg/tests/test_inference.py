"""Posterior evaluation, orthogonalization, the sampler and posterior files."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from scipy import optimize, stats

from firstarrival.basis import GpHyper, SiteGrid, gp_draw
from firstarrival.errors import DomainError, SamplerError
from firstarrival.inference import (
    ChainState,
    FitData,
    McmcConfig,
    Priors,
    adjust_coefficients,
    holdout_log_score,
    initial_state,
    knn_partition,
    log_posterior,
    orthogonalize_gp,
    read_posterior,
    run_chain,
    trimmed_mean,
    write_posterior,
)


def small_data(seed=0, S=6, T=3):
    rng = np.random.default_rng(seed)
    sites = SiteGrid(tuple(f"s{i}" for i in range(S)), rng.uniform(0, 200, (S, 2)))
    x_site = np.column_stack([np.ones(S), rng.normal(size=S)])
    x_year = rng.normal(size=(T, 1))
    z = 50 + 8 * rng.gumbel(size=(T, S))
    z[1, 2] = np.nan
    return FitData(sites, tuple(range(2000, 2000 + T)), z, x_site, x_year,
                   np.ones((S, 1)), np.zeros((T, 0)))


def small_state(data, L=3, seed=1):
    rng = np.random.default_rng(seed)
    S, T = len(data.sites), len(data.years)
    return ChainState(
        alpha=0.5, theta=1.3, xi=-0.15, A=rng.gamma(2.0, 1.0, (T, L)),
        latent=rng.normal(size=(L - 1, S)), hyper_K=GpHyper(1.2, 80.0),
        beta_mu=np.array([50.0, 1.5, 0.8]), eta_mu_star=rng.normal(size=S),
        hyper_mu=GpHyper(2.0, 60.0), beta_gamma=np.array([math.log(8.0)]))


def levy_hougaard_logpdf(x, delta, theta):
    # alpha = 1/2: X = (2 delta)^2 S with S Levy(1/2), tilted by exp(-theta x)
    c = (2.0 * delta) ** 2
    s = x / c
    base = -1.0 / (4 * s) - math.log(2 * math.sqrt(math.pi)) - 1.5 * math.log(s) - math.log(c)
    return base - theta * x + 2.0 * delta * math.sqrt(theta)


def oracle_log_posterior(state, data, priors):
    """Cell-by-cell evaluation with scipy, written without the package's kernels."""
    S, T = len(data.sites), len(data.years)
    a, th = state.alpha, state.theta
    full = np.vstack([state.latent, np.zeros(S)])
    K = np.exp(full) / np.exp(full).sum(0)
    k = K ** (1 / a)
    d = data.sites.distances()

    def corr(h):
        return np.exp(-d / h.range) + 1e-8 * np.eye(S)

    X = data.x_mu_site
    R = corr(state.hyper_mu)
    P = np.eye(S) - R @ X @ np.linalg.solve(X.T @ R @ X, X.T)
    eta = P @ state.eta_mu_star
    total = 0.0
    for t in range(T):
        for s in range(S):
            z = data.z[t, s]
            if not np.isfinite(z):
                continue
            mu = X[s] @ state.beta_mu[:2] + data.x_mu_year[t] @ state.beta_mu[2:] + eta[s]
            sigma = math.exp(state.beta_gamma[0])
            gev = stats.genextreme(-state.xi, loc=mu, scale=sigma)
            target = -gev.logcdf(z)

            def V(w):
                return sum((th + w * kl) ** a - th**a for kl in k[:, s])

            w = optimize.brentq(lambda w: V(w) - target, 1e-12, 1e12, xtol=1e-300, rtol=1e-15)
            dV = sum(a * kl * (th + w * kl) ** (a - 1) for kl in k[:, s])
            B = state.A[t] @ k[:, s]
            total += math.log(B) - B * w + gev.logpdf(z) - gev.logcdf(z) - math.log(dV)
    total += sum(levy_hougaard_logpdf(x, a, th) for x in state.A.ravel())
    rv = priors.range_var(data.sites)
    for field, h in ((state.latent, state.hyper_K), (state.eta_mu_star[None], state.hyper_mu)):
        mvn = stats.multivariate_normal(np.zeros(S), h.variance * corr(h))
        total += sum(mvn.logpdf(f) for f in field)
        total += stats.halfnorm(scale=math.sqrt(priors.gp_variance_var)).logpdf(h.variance)
        total += stats.halfnorm(scale=math.sqrt(rv)).logpdf(h.range)
    total += stats.halfnorm(scale=math.sqrt(priors.theta_var)).logpdf(th)
    total += stats.norm(scale=math.sqrt(priors.xi_var)).logpdf(state.xi)
    total += stats.norm(scale=math.sqrt(priors.beta_var)).logpdf(state.beta_mu).sum()
    total += stats.norm(scale=math.sqrt(priors.beta_var)).logpdf(state.beta_gamma).sum()
    return total


def test_log_posterior_matches_oracle():
    data = small_data()
    state = small_state(data)
    priors = Priors()
    got = log_posterior(state, data, priors)
    assert got == pytest.approx(oracle_log_posterior(state, data, priors), rel=1e-9, abs=1e-6)


def test_log_posterior_outside_support():
    data = small_data()
    state = small_state(data)
    state.alpha = 1.0
    assert log_posterior(state, data, Priors()) == -math.inf
    state = small_state(data)
    state.xi = -1.0  # upper endpoint mu + sigma falls below some observations
    assert log_posterior(state, data, Priors()) == -math.inf


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_orthogonalization(seed):
    rng = np.random.default_rng(seed)
    S, p = 15, 3
    sites = SiteGrid(tuple(range(S)), rng.uniform(0, 100, (S, 2)))
    hyper = GpHyper(rng.uniform(0.5, 3), rng.uniform(10, 80))
    X = np.column_stack([np.ones(S), rng.normal(size=(S, p - 1))])
    Sigma = hyper.variance * np.exp(-sites.distances() / hyper.range)
    eta_star = gp_draw(sites, 0.0, hyper, rng)
    eta = orthogonalize_gp(eta_star, Sigma, X)
    assert np.max(np.abs(X.T @ eta)) < 1e-8


def test_adjust_coefficients_fixed_point():
    rng = np.random.default_rng(0)
    X = np.column_stack([np.ones(10), rng.normal(size=10)])
    delta = rng.normal(size=(4, 2))
    np.testing.assert_array_equal(adjust_coefficients(delta, X, np.zeros((4, 10))), delta)
    eta = rng.normal(size=(4, 10))
    # beta~ + projection of eta* onto X reproduces delta
    back = adjust_coefficients(delta, X, eta) + np.linalg.lstsq(X, eta.T, rcond=None)[0].T
    np.testing.assert_allclose(back, delta, atol=1e-12)


def test_orthogonalize_rank_deficient():
    X = np.ones((5, 2))
    with pytest.raises(DomainError):
        orthogonalize_gp(np.zeros(5), np.eye(5), X)


def test_trimmed_mean():
    assert trimmed_mean(np.arange(1, 41), 0.05) == 20.5
    assert trimmed_mean(np.r_[np.arange(1, 40), 1e9], 0.05) == 20.5
    with pytest.raises(DomainError):
        trimmed_mean([], 0.05)


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, st.integers(1, 60), elements=st.floats(-1e6, 1e6)))
def test_trimmed_mean_within_range(x):
    m = trimmed_mean(x, 0.1)
    assert x.min() - 1e-6 <= m <= x.max() + 1e-6


def test_knn_partition_is_a_partition():
    rng = np.random.default_rng(4)
    sites = SiteGrid(tuple(range(37)), rng.uniform(0, 100, (37, 2)))
    clusters = knn_partition(sites, 10, seed=1)
    assert sorted(np.concatenate(clusters).tolist()) == list(range(37))
    assert max(len(c) for c in clusters) == 10
    assert [c.tolist() for c in clusters] == [c.tolist() for c in knn_partition(sites, 10, 1)]


def test_zero_iteration_run_returns_initial_state():
    data = small_data(S=12, T=4)
    cfg = McmcConfig(iterations=0, burn_in=0, n_basis=3, seed=2)
    s = run_chain(data, Priors(), cfg)
    assert s.n_draws == 1
    init = initial_state(data, cfg)
    assert s.draws["alpha"][0] == init.alpha
    np.testing.assert_array_equal(s.draws["beta_mu"][0], init.beta_mu)
    assert s.draws["log_post"][0] == pytest.approx(log_posterior(init, data, Priors(), cfg))


def test_chain_is_reproducible_and_orthogonal():
    data = small_data(S=12, T=4)
    cfg = McmcConfig(iterations=60, burn_in=20, thin=5, n_basis=3, seed=5, cluster_size=4)
    a = run_chain(data, Priors(), cfg)
    b = run_chain(data, Priors(), cfg)
    assert a.n_draws == 8
    for k in a.draws:
        np.testing.assert_array_equal(a.draws[k], b.draws[k])
    np.testing.assert_allclose(a.draws["eta_mu"] @ data.x_mu_site, 0.0, atol=1e-8)
    assert np.all(np.isfinite(a.draws["log_post"]))
    for name, rate in a.meta["acceptance"].items():
        assert 0.0 <= rate <= 1.0, name


def test_gp_scale_mode_and_fixed_blocks():
    data = small_data(S=10, T=4)
    cfg = McmcConfig(iterations=20, burn_in=10, thin=2, n_basis=2, seed=1, scale_mode="gp",
                     fixed=("alpha", "theta"))
    s = run_chain(data, Priors(), cfg)
    assert "eta_gamma" in s.draws
    assert np.all(s.draws["alpha"] == 0.5) and np.all(s.draws["theta"] == 1.0)
    np.testing.assert_allclose(s.draws["eta_gamma"] @ data.x_gamma_site, 0.0, atol=1e-8)


def test_unfittable_start_is_diagnosed():
    data = small_data()
    cfg = McmcConfig(iterations=5, burn_in=1, n_basis=3)
    init = small_state(data)
    init.xi = -1.0
    with pytest.raises(SamplerError, match="first bad cell"):
        run_chain(data, Priors(), cfg, init=init)


def test_config_validation():
    with pytest.raises(DomainError):
        McmcConfig(iterations=10, burn_in=10)
    with pytest.raises(DomainError):
        McmcConfig(fixed=("nope",))
    with pytest.raises(DomainError):
        Priors(xi_var=0.0)


def test_posterior_round_trip_and_holdout(tmp_path):
    full = small_data(S=14, T=4)
    idx_train, idx_hold = np.arange(10), np.arange(10, 14)

    def part(idx):
        return FitData(full.sites.subset(idx), full.years, full.z[:, idx], full.x_mu_site[idx],
                       full.x_mu_year, full.x_gamma_site[idx], full.x_gamma_year)

    train, hold = part(idx_train), part(idx_hold)
    s = run_chain(train, Priors(), McmcConfig(iterations=30, burn_in=10, thin=5, n_basis=2,
                                              seed=3))
    write_posterior(s, tmp_path / "p.csv", tmp_path / "p.json", header="# test")
    r = read_posterior(tmp_path / "p.csv", tmp_path / "p.json")
    for k in s.draws:
        np.testing.assert_array_equal(np.asarray(s.draws[k], dtype=float), r.draws[k])
    score = holdout_log_score(r, hold)
    assert np.isfinite(score)
    assert score == holdout_log_score(s, hold)
    with pytest.raises(DomainError):
        holdout_log_score(s, train)
