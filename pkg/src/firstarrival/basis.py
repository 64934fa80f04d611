"""Gaussian-process utilities and the sum-to-one log-Gaussian basis.

Each basis function is a softmax of latent Gaussian fields,

    K_l(s) = exp{Kt_l(s)} / sum_i exp{Kt_i(s)},   l = 1..L,

with the last latent field pinned at zero so the map from the L-1 free fields
to the basis is injective.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg
from scipy.spatial.distance import cdist, pdist, squareform
from scipy.special import softmax

from .errors import DomainError, FactorizationError

__all__ = [
    "EARTH_RADIUS_KM",
    "SiteGrid",
    "GpHyper",
    "BasisSet",
    "project_equal_area",
    "exp_cov",
    "cov_matrix",
    "cross_cov",
    "jittered_cholesky",
    "gp_draw",
    "krige",
    "build_basis",
    "order_basis",
]

EARTH_RADIUS_KM = 6371.0088

JITTER_LADDER = (1e-8, 1e-7, 1e-6, 1e-5, 1e-4)


def project_equal_area(lon, lat, standard_parallel=None, central_meridian=None):
    """Lambert cylindrical equal-area projection of degrees to kilometres.

    The standard parallel defaults to the mean latitude, where the projection
    is also conformal, so distances across a regional study area stay close
    to great-circle values; the central meridian defaults to the mean
    longitude.  Pass both explicitly to project new sites consistently.
    Returns ``(xy, info)`` with ``info`` suitable for run metadata.
    """
    lon = np.asarray(lon, dtype=float)
    lat = np.asarray(lat, dtype=float)
    if lon.shape != lat.shape:
        raise DomainError("lon and lat must have the same shape")
    if np.any(np.abs(lat) > 90.0) or not np.all(np.isfinite(lon)):
        raise DomainError("coordinates out of range")
    phi_s = float(np.mean(lat)) if standard_parallel is None else float(standard_parallel)
    if central_meridian is not None:
        lon0 = float(central_meridian)
    else:
        lon0 = float(np.mean(lon)) if lon.size else 0.0
    cs = math.cos(math.radians(phi_s))
    x = EARTH_RADIUS_KM * np.radians(lon - lon0) * cs
    y = EARTH_RADIUS_KM * np.sin(np.radians(lat)) / cs
    info = {"projection": "lambert_cylindrical_equal_area",
            "radius_km": EARTH_RADIUS_KM,
            "standard_parallel_deg": phi_s,
            "central_meridian_deg": lon0}
    return np.column_stack([x, y]), info


@dataclass(frozen=True)
class SiteGrid:
    """Sites with planar coordinates in kilometres."""

    site_ids: tuple
    coords: np.ndarray

    def __post_init__(self):
        ids = tuple(self.site_ids)
        xy = np.array(self.coords, dtype=float).reshape(len(ids), 2)
        if len(set(ids)) != len(ids):
            raise DomainError("site ids must be unique")
        if not np.all(np.isfinite(xy)):
            raise DomainError("site coordinates must be finite")
        xy.setflags(write=False)
        object.__setattr__(self, "site_ids", ids)
        object.__setattr__(self, "coords", xy)

    def __len__(self):
        return len(self.site_ids)

    @classmethod
    def from_lonlat(cls, site_ids, lon, lat, standard_parallel=None, central_meridian=None):
        xy, _ = project_equal_area(lon, lat, standard_parallel, central_meridian)
        return cls(tuple(site_ids), xy)

    def distances(self):
        return squareform(pdist(self.coords))

    def max_distance(self):
        if len(self) < 2:
            return 0.0
        return float(pdist(self.coords).max())

    def subset(self, idx):
        idx = np.asarray(idx, dtype=int)
        return SiteGrid(tuple(self.site_ids[i] for i in idx), self.coords[idx])

    def index(self, site_id):
        return self.site_ids.index(site_id)


@dataclass(frozen=True)
class GpHyper:
    variance: float
    range: float

    def __post_init__(self):
        if not (self.variance > 0.0 and math.isfinite(self.variance)):
            raise DomainError(f"GP variance must be positive, got {self.variance}")
        if not (self.range > 0.0 and math.isfinite(self.range)):
            raise DomainError(f"GP range must be positive, got {self.range}")


def exp_cov(h, hyper: GpHyper):
    """Exponential covariance ``variance * exp(-h / range)``."""
    h = np.asarray(h, dtype=float)
    if np.any(h < 0.0):
        raise DomainError("distance must be nonnegative")
    out = hyper.variance * np.exp(-h / hyper.range)
    return float(out) if out.ndim == 0 else out


def cov_matrix(sites: SiteGrid, hyper: GpHyper):
    return exp_cov(sites.distances(), hyper)


def cross_cov(a: SiteGrid, b: SiteGrid, hyper: GpHyper):
    return exp_cov(cdist(a.coords, b.coords), hyper)


def jittered_cholesky(cov, variance):
    """Lower Cholesky factor, escalating diagonal jitter from 1e-8 to 1e-4 of ``variance``."""
    cov = np.asarray(cov, dtype=float)
    eye = np.eye(cov.shape[0])
    for rel in JITTER_LADDER:
        try:
            return linalg.cholesky(cov + rel * variance * eye, lower=True)
        except linalg.LinAlgError:
            continue
    raise FactorizationError(
        f"covariance of size {cov.shape[0]} not positive definite even with jitter "
        f"{JITTER_LADDER[-1]:g} x variance")


def gp_draw(sites: SiteGrid, mean, hyper: GpHyper, seed=None):
    """One realization of the GP at ``sites``; deterministic for a given seed."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    mean = np.broadcast_to(np.asarray(mean, dtype=float), (len(sites),))
    chol = jittered_cholesky(cov_matrix(sites, hyper), hyper.variance)
    return mean + chol @ rng.standard_normal(len(sites))


def krige(values, train: SiteGrid, target: SiteGrid, hyper: GpHyper, rng=None):
    """Simple kriging of zero-mean GP ``values`` (train sites, trailing axis) onto ``target``.

    Returns the conditional mean, or a conditional draw when ``rng`` is given.
    ``values`` may be a vector or a stack of fields sharing ``hyper``.
    """
    values = np.asarray(values, dtype=float)
    c_tt = cov_matrix(train, hyper)
    chol = jittered_cholesky(c_tt, hyper.variance)
    c_nt = cross_cov(target, train, hyper)
    weights = linalg.cho_solve((chol, True), c_nt.T).T
    mean = values @ weights.T
    if rng is None:
        return mean
    cond = cov_matrix(target, hyper) - c_nt @ weights.T
    cond = 0.5 * (cond + cond.T)
    cl = jittered_cholesky(cond, hyper.variance)
    noise = rng.standard_normal(mean.shape)
    return mean + noise @ cl.T


@dataclass(frozen=True)
class BasisSet:
    """``latent`` is (L-1) x S; ``normalized`` is L x S with columns summing to one."""

    latent: np.ndarray
    normalized: np.ndarray

    @property
    def n_basis(self):
        return self.normalized.shape[0]

    @property
    def n_sites(self):
        return self.normalized.shape[1]

    @classmethod
    def single(cls, n_sites):
        """The degenerate one-function basis ``K_1 = 1``."""
        return cls(np.zeros((0, n_sites)), np.ones((1, n_sites)))


def build_basis(latent) -> BasisSet:
    latent = np.atleast_2d(np.asarray(latent, dtype=float))
    if latent.shape[0] < 1:
        raise DomainError("need at least one free latent field (L >= 2)")
    if not np.all(np.isfinite(latent)):
        raise DomainError("latent fields must be finite")
    full = np.vstack([latent, np.zeros((1, latent.shape[1]))])
    # scipy's softmax subtracts the per-site maximum before exponentiating
    norm = softmax(full, axis=0)
    latent = latent.copy()
    latent.setflags(write=False)
    norm.setflags(write=False)
    return BasisSet(latent, norm)


def order_basis(basis: BasisSet, coeffs):
    """Order basis functions by descending variance of their coefficients over time.

    ``coeffs`` is a T x L array or anything with a ``values`` attribute.
    Returns ``(order, cumulative_share)`` with 0-based indices; ties keep the
    original order.
    """
    values = np.asarray(getattr(coeffs, "values", coeffs), dtype=float)
    if values.ndim != 2 or values.shape[0] < 2:
        raise DomainError("ordering needs at least two time replicates")
    if values.shape[1] != basis.n_basis:
        raise DomainError("coefficient columns must match the number of basis functions")
    var = values.var(axis=0, ddof=1)
    order = np.argsort(-var, kind="stable")
    total = var.sum()
    share = np.cumsum(var[order]) / total if total > 0 else np.ones(var.size)
    return order, share
