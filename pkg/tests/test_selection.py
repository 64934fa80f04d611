"""Marginal GEV fits, covariate search and the candidate grid."""

import numpy as np
import pytest
from scipy import stats

from firstarrival.basis import SiteGrid
from firstarrival.errors import DomainError
from firstarrival.inference import FitData, McmcConfig, Priors
from firstarrival.selection import (
    GridRow,
    candidate_grid_run,
    covariate_subsets,
    fit_gev_mle,
    select_covariates,
    write_scores,
)


def test_mle_at_least_as_good_as_scipy():
    x = stats.genextreme(0.2, loc=60, scale=7).rvs(400, random_state=1)
    fit = fit_gev_mle(x)
    c, loc, scale = stats.genextreme.fit(x)
    ref = stats.genextreme(c, loc=loc, scale=scale).logpdf(x).sum()
    assert fit.loglik >= ref - 1e-6
    assert fit.xi == pytest.approx(-c, abs=0.02)
    assert fit.converged


def test_mle_recovers_regression():
    rng = np.random.default_rng(2)
    n = 3000
    x1, x2 = rng.normal(size=n), rng.normal(size=n)
    mu, sigma = 40 + 3 * x1, np.exp(1.5 + 0.2 * x2)
    y = stats.genextreme(0.2, loc=mu, scale=sigma).rvs(random_state=rng)
    fit = fit_gev_mle(y, np.column_stack([np.ones(n), x1]), np.column_stack([np.ones(n), x2]))
    np.testing.assert_allclose(fit.beta_mu, [40, 3], atol=0.2)
    np.testing.assert_allclose(fit.beta_gamma, [1.5, 0.2], atol=0.05)
    assert fit.xi == pytest.approx(-0.2, abs=0.03)
    assert fit.n_params == 5
    assert fit.bic == pytest.approx(5 * np.log(n) - 2 * fit.loglik)


def test_mle_rejects_small_or_singular():
    with pytest.raises(DomainError):
        fit_gev_mle(np.arange(10.0))
    with pytest.raises(DomainError):
        fit_gev_mle(np.arange(40.0), np.ones((40, 2)))


def test_subsets():
    assert list(covariate_subsets(["a", "b"])) == [(), ("a",), ("b",), ("a", "b")]
    assert list(covariate_subsets(["a", "b", "c"], max_size=1)) == [(), ("a",), ("b",), ("c",)]


def test_select_covariates_finds_signal():
    rng = np.random.default_rng(3)
    n = 600
    cols = {"lat": rng.normal(size=n), "noise": rng.normal(size=n)}
    y = stats.gumbel_r(loc=50 - 4 * cols["lat"], scale=5).rvs(random_state=rng)
    mu_set, g_set, fit = select_covariates(y, cols, ["lat", "noise"], ["noise"])
    assert mu_set == ("lat",) and g_set == ()


def tiny_split(seed=0):
    rng = np.random.default_rng(seed)
    S, T = 14, 4
    sites = SiteGrid(tuple(f"s{i}" for i in range(S)), rng.uniform(0, 200, (S, 2)))
    z = 60 + 6 * rng.gumbel(size=(T, S))
    years = tuple(range(2000, 2000 + T))
    return (FitData.intercept_only(sites.subset(range(10)), years, z[:, :10]),
            FitData.intercept_only(sites.subset(range(10, 14)), years, z[:, 10:]))


def test_candidate_grid_ranks_and_isolates_failures():
    train, hold = tiny_split()
    cfg = McmcConfig(iterations=20, burn_in=10, thin=5, seed=1)
    rows = candidate_grid_run(train, hold, Priors(), cfg, L_values=(1, 2, 3),
                              scale_modes=("linear",))
    assert [r.L for r in rows] == [1, 2, 3]
    bad = rows[0]
    assert np.isnan(bad.log_score) and bad.rank is None and "DomainError" in bad.error
    good = [r for r in rows if r.rank is not None]
    assert sorted(r.rank for r in good) == [1, 2]
    best = min(good, key=lambda r: r.rank)
    assert best.log_score == max(r.log_score for r in good)
    with pytest.raises(DomainError):
        candidate_grid_run(train, train, Priors(), cfg, L_values=(2,))


def test_write_scores(tmp_path):
    rows = [GridRow(2, "gp", -10.5, 1), GridRow(4, "linear", float("nan"), None, "boom")]
    write_scores(rows, tmp_path / "s.csv", header="# h")
    assert (tmp_path / "s.csv").read_text() == (
        "# h\nL,scale_mode,log_score,rank\n2,gp,-10.5,1\n4,linear,,\n")
