"""The max-id process: basis mixture ``Y``, Frechet nugget, marginal law and GEV transform.

For one year,

    Y(s) = {sum_l A_l K_l(s)**(1/alpha)}**alpha,   Z(s) = eps(s) Y(s),

with ``A_l ~ H(alpha, alpha, theta)`` and ``eps(s)`` unit-scale Frechet with
shape ``1/alpha``.  Integrating the nugget and then the ``A_l`` gives the
closed form ``G_s(z) = exp(-sum_l [(theta + z**(-1/alpha) K_l(s)**(1/alpha))**alpha
- theta**alpha])``, and data are ``GEV^{-1}[G_s{Z(s)}]``.  The derivation is in
``docs/marginal.md``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from . import _cells
from .basis import BasisSet
from .distributions import (HougaardParams, frechet_sample, gev_quantile_from_neglog,
                            hougaard_sample)
from .errors import DomainError

__all__ = [
    "DEFAULT_NEGATION_CONSTANT",
    "LatentCoefficients",
    "MarginalSurfaces",
    "ProcessModel",
    "SimulatedField",
    "MaxIdCheck",
    "y_field",
    "simulate_field",
    "marginal_cdf",
    "marginal_neglog",
    "marginal_quantile",
    "bivariate_cdf",
    "maxid_root_check",
    "negate_transform",
    "negate_inverse",
]

# window length of 122 days plus one
DEFAULT_NEGATION_CONSTANT = 123.0


@dataclass(frozen=True)
class LatentCoefficients:
    values: np.ndarray

    def __post_init__(self):
        v = np.atleast_2d(np.array(self.values, dtype=float))
        if not np.all(v > 0.0) or not np.all(np.isfinite(v)):
            raise DomainError("latent coefficients must be positive and finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class MarginalSurfaces:
    """GEV location and log-scale per site, or per year and site (T x S); common shape."""

    mu: np.ndarray
    gamma: np.ndarray
    xi: float

    def __post_init__(self):
        mu = np.array(self.mu, dtype=float)
        gamma = np.array(self.gamma, dtype=float)
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(gamma))):
            raise DomainError("marginal surfaces must be finite")
        if not math.isfinite(self.xi):
            raise DomainError("xi must be finite")
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "gamma", gamma)
        object.__setattr__(self, "xi", float(self.xi))

    @property
    def sigma(self):
        return np.exp(self.gamma)

    @property
    def n_sites(self):
        return np.broadcast_shapes(self.mu.shape, self.gamma.shape)[-1]


@dataclass(frozen=True)
class ProcessModel:
    hougaard: HougaardParams
    basis: BasisSet
    margins: MarginalSurfaces

    def __post_init__(self):
        if self.basis.n_sites != self.margins.n_sites:
            raise DomainError(
                f"basis has {self.basis.n_sites} sites but margins have {self.margins.n_sites}")
        if self.hougaard.delta != self.hougaard.alpha:
            raise DomainError("the process uses the reparameterized family with delta == alpha")

    @property
    def alpha(self):
        return self.hougaard.alpha

    @property
    def theta(self):
        return self.hougaard.theta

    def k(self):
        """``K_l(s)**(1/alpha)`` as an L x S array."""
        return self.basis.normalized ** (1.0 / self.alpha)

    def logk(self):
        with np.errstate(divide="ignore"):
            return np.log(self.basis.normalized) / self.alpha


def _kmat(basis):
    return np.asarray(getattr(basis, "normalized", basis), dtype=float)


def y_field(A_row, basis, alpha):
    """``Y(s) = {sum_l A_l K_l(s)**(1/alpha)}**alpha``; ``alpha = 1`` is allowed."""
    a = np.asarray(A_row, dtype=float)
    if np.any(a <= 0.0) or not np.all(np.isfinite(a)):
        raise DomainError("basis coefficients must be positive")
    if not 0.0 < alpha <= 1.0:
        raise DomainError(f"alpha must lie in (0, 1], got {alpha}")
    kmat = _kmat(basis)
    if a.shape[-1] != kmat.shape[0]:
        raise DomainError("coefficient length must equal the number of basis functions")
    return (a @ kmat ** (1.0 / alpha)) ** alpha


@dataclass(frozen=True)
class SimulatedField:
    """Simulated years: ``data`` on the GEV scale, ``z`` on the process scale."""

    data: np.ndarray
    z: np.ndarray
    y: np.ndarray
    A: np.ndarray
    eps: np.ndarray
    prob: np.ndarray


def _year_rngs(seed, n):
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return [np.random.default_rng(child) for child in ss.spawn(n)]


def _broadcast_years(arr, n_years, n_sites):
    return np.broadcast_to(np.asarray(arr, dtype=float), (n_years, n_sites))


def simulate_field(model: ProcessModel, T, seed=None, nugget=None):
    """Simulate ``T`` independent years.

    Each year draws its coefficients and nugget from its own child of the seed
    sequence, so results do not depend on how years are scheduled.  ``nugget``
    may fix the Frechet noise (an S vector or T x S array) for diagnostics.
    """
    if T < 1:
        raise DomainError("need at least one year")
    alpha, theta = model.alpha, model.theta
    L, S = model.basis.n_basis, model.basis.n_sites
    logk = model.logk()
    A = np.empty((T, L))
    eps = np.empty((T, S))
    for t, rng in enumerate(_year_rngs(seed, T)):
        A[t] = hougaard_sample(L, model.hougaard, rng)
        eps[t] = frechet_sample(S, 1.0 / alpha, rng)
    if nugget is not None:
        eps = np.array(np.broadcast_to(np.asarray(nugget, dtype=float), (T, S)))
    logb = logsumexp(np.log(A)[:, :, None] + logk[None, :, :], axis=1)
    y = np.exp(alpha * logb)
    z = eps * y
    # w = Z**(-1/alpha) = eps**(-1/alpha) / B
    logw = -np.log(eps) / alpha - logb
    neglog = _cells.neglog_marginal(logw, logk, alpha, theta)
    mu = _broadcast_years(model.margins.mu, T, S)
    sigma = _broadcast_years(model.margins.sigma, T, S)
    data = gev_quantile_from_neglog(neglog, mu, sigma, model.margins.xi)
    return SimulatedField(data=data, z=z, y=y, A=A, eps=eps, prob=np.exp(-neglog))


def _site_k(model, site):
    if not 0 <= site < model.basis.n_sites:
        raise DomainError(f"site index {site} out of range")
    return model.logk()[:, [site]]


def marginal_neglog(z, site, model: ProcessModel):
    """``-log G_s(z)``."""
    z = np.asarray(z, dtype=float)
    if np.any(z <= 0.0):
        raise DomainError("z must be positive")
    logw = (-np.log(z) / model.alpha).reshape(-1, 1)
    out = _cells.neglog_marginal(logw, _site_k(model, site), model.alpha, model.theta)
    return out.reshape(z.shape) if z.ndim else float(out[0, 0])


def marginal_cdf(z, site, model: ProcessModel):
    """Closed-form marginal distribution function ``G_s(z)`` of ``Z(s)``."""
    out = np.exp(-np.asarray(marginal_neglog(z, site, model)))
    return out if out.ndim else float(out)


def marginal_quantile(p, site, model: ProcessModel):
    p = np.asarray(p, dtype=float)
    if np.any((p <= 0.0) | (p >= 1.0)):
        raise DomainError("probabilities must lie in (0, 1)")
    target = (-np.log(p)).reshape(-1, 1)
    logw, _ = _cells.solve_exponent(target, _site_k(model, site), model.alpha, model.theta)
    z = np.exp(-model.alpha * logw.reshape(p.shape))
    return z if p.ndim else float(z)


def bivariate_cdf(z1, z2, sites, model: ProcessModel, n=1, exponent_sign=1.0):
    """Joint distribution of ``(Z(s1), Z(s2))`` raised to the power ``1/n``.

    ``exponent_sign=-1`` corrupts the exponent and exists only as a negative
    control for :func:`maxid_root_check`.  ``z = inf`` marginalizes a site.
    """
    alpha, theta = model.alpha, model.theta
    k = model.k()[:, list(sites)]
    z1, z2 = np.broadcast_arrays(np.asarray(z1, dtype=float), np.asarray(z2, dtype=float))
    w = (z1[..., None] ** (-1.0 / alpha) * k[:, 0]
         + z2[..., None] ** (-1.0 / alpha) * k[:, 1])
    if theta > 0.0:
        v = theta**alpha * np.expm1(alpha * np.log1p(w / theta))
    else:
        v = w**alpha
    return np.exp(-exponent_sign * v.sum(axis=-1) / n)


@dataclass(frozen=True)
class MaxIdCheck:
    passed: bool
    worst_violation: float
    n: int


def maxid_root_check(model: ProcessModel, sites, n, grid=20, tol=1e-10, exponent_sign=1.0,
                     probs=None):
    """Check that ``H**(1/n)`` is 2-increasing for the pair ``sites`` on a grid.

    The grid uses marginal quantiles at each site, padded with the lower limit
    (where any distribution function is 0) and the upper limit (the marginal),
    so every rectangle volume, including the one-dimensional increments, must
    be nonnegative.
    """
    if n < 1:
        raise DomainError("n must be at least 1")
    if len(sites) != 2:
        raise DomainError("maxid_root_check needs exactly two sites")
    if probs is None:
        probs = np.linspace(0.02, 0.98, grid)
    g1 = np.append(marginal_quantile(probs, sites[0], model), np.inf)
    g2 = np.append(marginal_quantile(probs, sites[1], model), np.inf)
    F = bivariate_cdf(g1[:, None], g2[None, :], sites, model, n, exponent_sign)
    F = np.pad(F, ((1, 0), (1, 0)))
    vol = F[1:, 1:] - F[:-1, 1:] - F[1:, :-1] + F[:-1, :-1]
    worst = float(max(0.0, -np.min(vol)))
    return MaxIdCheck(passed=bool(worst < tol), worst_violation=worst, n=int(n))


def negate_transform(days, C=DEFAULT_NEGATION_CONSTANT):
    """Turn first-arrival days (minima) into positive maxima ``C - days``."""
    days = np.asarray(days, dtype=float)
    if days.size and np.nanmax(days) >= C:
        raise DomainError(f"negation constant {C} must exceed the largest day {np.nanmax(days)}")
    return C - days


def negate_inverse(values, C=DEFAULT_NEGATION_CONSTANT):
    return C - np.asarray(values, dtype=float)
