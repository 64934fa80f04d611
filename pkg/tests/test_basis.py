"""Projection, Gaussian-process helpers and the softmax basis."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from firstarrival.basis import (
    EARTH_RADIUS_KM,
    BasisSet,
    GpHyper,
    SiteGrid,
    build_basis,
    cov_matrix,
    exp_cov,
    gp_draw,
    jittered_cholesky,
    krige,
    order_basis,
    project_equal_area,
)
from firstarrival.errors import DomainError, FactorizationError


def haversine(lon1, lat1, lon2, lat2):
    p1, p2 = math.radians(lat1), math.radians(lat2)
    dp, dl = p2 - p1, math.radians(lon2 - lon1)
    a = math.sin(dp / 2) ** 2 + math.cos(p1) * math.cos(p2) * math.sin(dl / 2) ** 2
    return 2 * EARTH_RADIUS_KM * math.asin(math.sqrt(a))


def test_projection_preserves_area():
    # a 1 x 1 degree cell at latitude 40 has area R^2 * dlon * (sin 41 - sin 40)
    lon = np.array([-80.0, -79.0, -79.0, -80.0])
    lat = np.array([40.0, 40.0, 41.0, 41.0])
    xy, _ = project_equal_area(lon, lat, standard_parallel=35.0)
    x, y = xy[:, 0], xy[:, 1]
    shoelace = 0.5 * abs(np.dot(x, np.roll(y, 1)) - np.dot(y, np.roll(x, 1)))
    exact = EARTH_RADIUS_KM**2 * math.radians(1.0) * (math.sin(math.radians(41))
                                                     - math.sin(math.radians(40)))
    assert shoelace == pytest.approx(exact, rel=1e-12)


def test_projection_distances_near_great_circle():
    rng = np.random.default_rng(0)
    lon = rng.uniform(-79, -75, 30)
    lat = rng.uniform(39, 43, 30)
    grid = SiteGrid.from_lonlat(range(30), lon, lat)
    d = grid.distances()
    for i, j in [(0, 1), (2, 9), (5, 20), (11, 29)]:
        assert d[i, j] == pytest.approx(haversine(lon[i], lat[i], lon[j], lat[j]), rel=0.02)


def test_projection_info_and_fixed_parameters():
    xy, info = project_equal_area([-77.0], [41.0])
    np.testing.assert_allclose(xy[0, 0], 0.0)
    assert info["standard_parallel_deg"] == 41.0
    assert info["central_meridian_deg"] == -77.0
    xy2, _ = project_equal_area([-76.0], [41.0], 41.0, -77.0)
    assert xy2[0, 0] > 0
    with pytest.raises(DomainError):
        project_equal_area([0.0], [95.0])


def test_site_grid_validation():
    with pytest.raises(DomainError):
        SiteGrid(("a", "a"), np.zeros((2, 2)))
    with pytest.raises(DomainError):
        SiteGrid(("a",), np.array([[np.nan, 0.0]]))
    g = SiteGrid(("a", "b", "c"), np.array([[0, 0], [3, 4], [6, 8]]))
    assert g.max_distance() == 10.0
    assert g.subset([2, 0]).site_ids == ("c", "a")
    assert g.index("b") == 1


def test_exp_cov():
    hyper = GpHyper(2.0, 50.0)
    assert exp_cov(0.0, hyper) == 2.0
    assert exp_cov(50.0, hyper) == pytest.approx(2.0 / math.e)
    with pytest.raises(DomainError):
        exp_cov(-1.0, hyper)
    with pytest.raises(DomainError):
        GpHyper(0.0, 1.0)


def test_jitter_rescues_duplicate_sites():
    g = SiteGrid(("a", "b", "c"), np.array([[0.0, 0.0], [0.0, 0.0], [1.0, 0.0]]))
    chol = jittered_cholesky(cov_matrix(g, GpHyper(1.0, 10.0)), 1.0)
    assert np.all(np.isfinite(chol))
    with pytest.raises(FactorizationError):
        jittered_cholesky(-np.eye(2), 1.0)


def test_gp_draw_covariance():
    g = SiteGrid(tuple(range(4)), np.array([[0, 0], [10, 0], [0, 30], [100, 100]]))
    hyper = GpHyper(1.5, 40.0)
    rng = np.random.default_rng(1)
    draws = np.array([gp_draw(g, 2.0, hyper, rng) for _ in range(20_000)])
    np.testing.assert_allclose(draws.mean(0), 2.0, atol=0.05)
    np.testing.assert_allclose(np.cov(draws.T), cov_matrix(g, hyper), atol=0.06)


def test_krige_interpolates_and_conditions():
    rng = np.random.default_rng(2)
    train = SiteGrid(tuple(range(6)), rng.uniform(0, 100, (6, 2)))
    hyper = GpHyper(1.0, 60.0)
    vals = gp_draw(train, 0.0, hyper, rng)
    np.testing.assert_allclose(krige(vals, train, train, hyper), vals, atol=1e-5)
    far = SiteGrid(("far",), np.array([[1e5, 1e5]]))
    assert abs(krige(vals, train, far, hyper)[0]) < 1e-12
    draws = np.array([krige(vals, train, far, hyper, rng)[0] for _ in range(5000)])
    assert draws.var() == pytest.approx(1.0, rel=0.1)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (3, 7), elements=st.floats(-30, 30)))
def test_basis_is_softmax_with_pinned_last_field(latent):
    b = build_basis(latent)
    full = np.vstack([latent, np.zeros(7)])
    ref = np.exp(full - full.max(0)) / np.exp(full - full.max(0)).sum(0)
    np.testing.assert_allclose(b.normalized, ref, rtol=1e-12, atol=1e-300)
    np.testing.assert_allclose(b.normalized.sum(0), 1.0, rtol=1e-12)
    assert b.n_basis == 4 and b.n_sites == 7


def test_basis_validation_and_single():
    with pytest.raises(DomainError):
        build_basis(np.array([[np.inf, 0.0]]))
    s = BasisSet.single(5)
    assert s.n_basis == 1 and np.all(s.normalized == 1.0)


def test_order_basis():
    b = build_basis(np.zeros((2, 3)))
    coeffs = np.array([[1.0, 5.0, 2.0], [1.1, 1.0, 2.0], [0.9, 9.0, 2.5]])
    order, share = order_basis(b, coeffs)
    assert list(order) == [1, 2, 0]
    assert share[-1] == pytest.approx(1.0)
    with pytest.raises(DomainError):
        order_basis(b, coeffs[:1])
