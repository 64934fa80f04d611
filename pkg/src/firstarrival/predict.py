"""Posterior predictive draws, climate projections, median maps and draw summaries.

Predictions are produced on the negated (maxima) scale and returned as days
since the window start, ``day = C - value``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from . import _cells
from .basis import SiteGrid, build_basis
from .distributions import (GUMBEL_EPS, HougaardParams, frechet_sample,
                            gev_quantile_from_neglog, hougaard_sample)
from .errors import DataError, DomainError
from .inference import PosteriorSamples, _extend_fields, _log_b, _log_k
from .process import DEFAULT_NEGATION_CONSTANT, negate_inverse

__all__ = [
    "PredictionDraws",
    "SummaryRow",
    "gev_median",
    "predict_conditional",
    "predict_future",
    "median_surface",
    "summarize_draws",
    "write_predictions",
    "write_summaries",
    "read_summaries",
]

LOG_LOG_2 = math.log(math.log(2.0))


@dataclass(frozen=True)
class PredictionDraws:
    """Arrival-day draws, ``draws[y, d, s]`` for year ``years[y]``, posterior draw ``d``, site ``s``."""

    site_ids: tuple
    years: tuple
    draws: np.ndarray
    mode: str
    seed: int
    window_len: int = 122

    def __post_init__(self):
        if self.mode not in ("conditional", "unconditional"):
            raise DomainError(f"unknown prediction mode {self.mode!r}")
        d = np.asarray(self.draws, dtype=float)
        if d.shape[0] != len(self.years) or d.shape[2] != len(self.site_ids):
            raise DomainError("draw array does not match years and sites")
        if not np.all(np.isfinite(d)):
            raise DomainError("prediction draws must be finite")
        d.setflags(write=False)
        object.__setattr__(self, "draws", d)

    @property
    def out_of_range(self):
        """Fraction of draws outside ``[0, window_len]`` per year and site.

        Such draws are kept; a large share points at model misfit.
        """
        return np.mean((self.draws < 0.0) | (self.draws > self.window_len), axis=1)


def gev_median(mu, sigma, xi):
    """``mu + sigma/xi {(log 2)**(-xi) - 1}``, or ``mu - sigma log log 2`` when ``|xi| < 1e-8``."""
    mu, sigma, xi = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (mu, sigma, xi)))
    if np.any(sigma <= 0.0):
        raise DomainError("sigma must be positive")
    gumbel = np.abs(xi) < GUMBEL_EPS
    xi_safe = np.where(gumbel, 1.0, xi)
    out = np.where(gumbel, mu - sigma * LOG_LOG_2,
                   mu + sigma * np.expm1(-xi_safe * LOG_LOG_2) / xi_safe)
    return out if out.ndim else float(out)


def _design(x, rows, name):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x.reshape(rows, -1)
    if x.shape[0] != rows:
        raise DomainError(f"{name} has {x.shape[0]} rows, expected {rows}")
    return x


def _surfaces(st, eta_mu, eta_gamma, x_mu_site, x_gamma_site, x_mu_year, x_gamma_year):
    """``mu`` and ``gamma`` as (years x sites) for one posterior state."""
    p, q = x_mu_site.shape[1], x_gamma_site.shape[1]
    if st.beta_mu.size != p + x_mu_year.shape[1] or st.beta_gamma.size != q + x_gamma_year.shape[1]:
        raise DomainError("covariate designs do not match the fitted coefficients")
    mu = ((x_mu_site @ st.beta_mu[:p])[None, :] + (x_mu_year @ st.beta_mu[p:])[:, None]
          + eta_mu[None, :])
    gamma = (x_gamma_site @ st.beta_gamma[:q])[None, :] + (x_gamma_year @ st.beta_gamma[q:])[:, None]
    if eta_gamma is not None:
        gamma = gamma + eta_gamma[None, :]
    return mu, gamma


def _field_draws(st, latent, A, mu, gamma, rng):
    """Data-scale values: ``A`` is (years x L), margins (years x sites)."""
    logk = _log_k(latent, st.alpha)
    logb = _log_b(A, logk)
    eps = frechet_sample(mu.size, 1.0 / st.alpha, rng).reshape(mu.shape)
    logw = -np.log(eps) / st.alpha - logb
    neglog = _cells.neglog_marginal(logw, logk, st.alpha, st.theta)
    return gev_quantile_from_neglog(neglog, mu, np.exp(gamma), st.xi)


def _draw_rngs(seed, n):
    return [np.random.default_rng(c) for c in np.random.SeedSequence(seed).spawn(n)]


def predict_conditional(samples: PosteriorSamples, target: SiteGrid, x_mu_site, x_gamma_site,
                        years, seed=0, C=DEFAULT_NEGATION_CONSTANT):
    """Predictive draws at ``target`` sites for fitted ``years``.

    Each posterior draw has its basis and surface fields simulated at the
    targets conditionally on its fitted values, reuses its own ``A`` for the
    year, and gets a fresh nugget.  ``x_*_site`` are the target site designs
    (with intercept), standardized like the training designs.
    """
    data = samples.data
    years = tuple(int(y) for y in years)
    idx = [data.year_index(y) for y in years]
    S = len(target)
    x_mu_site = _design(x_mu_site, S, "x_mu_site")
    x_gamma_site = _design(x_gamma_site, S, "x_gamma_site")
    x_mu_year = data.x_mu_year[idx]
    x_gamma_year = data.x_gamma_year[idx]
    out = np.empty((len(years), samples.n_draws, S))
    for d, rng in enumerate(_draw_rngs(seed, samples.n_draws)):
        st = samples.state(d)
        latent, eta_mu, eta_gamma = _extend_fields(samples, d, target, x_mu_site, x_gamma_site, rng)
        mu, gamma = _surfaces(st, eta_mu, eta_gamma, x_mu_site, x_gamma_site, x_mu_year,
                              x_gamma_year)
        with np.errstate(divide="ignore", over="ignore"):
            out[:, d, :] = _field_draws(st, latent, st.A[idx], mu, gamma, rng)
    return PredictionDraws(target.site_ids, years, negate_inverse(out, C), "conditional", seed)


def predict_future(samples: PosteriorSamples, target: SiteGrid, x_mu_site, x_gamma_site,
                   years, x_mu_year, x_gamma_year, seed=0, C=DEFAULT_NEGATION_CONSTANT):
    """Projection for new years with fresh ``A ~ H(alpha, alpha, theta)``.

    Spatial coefficients and fields come from each posterior draw; only
    the year designs (``len(years)`` rows, standardized with the training
    moments) change the margins.
    """
    years = tuple(int(y) for y in years)
    Y, S = len(years), len(target)
    if Y == 0:
        raise DomainError("no projection years requested")
    x_mu_site = _design(x_mu_site, S, "x_mu_site")
    x_gamma_site = _design(x_gamma_site, S, "x_gamma_site")
    x_mu_year = _design(x_mu_year, Y, "x_mu_year")
    x_gamma_year = _design(x_gamma_year, Y, "x_gamma_year")
    out = np.empty((Y, samples.n_draws, S))
    L = samples.n_basis
    for d, rng in enumerate(_draw_rngs(seed, samples.n_draws)):
        st = samples.state(d)
        latent, eta_mu, eta_gamma = _extend_fields(samples, d, target, x_mu_site, x_gamma_site, rng)
        mu, gamma = _surfaces(st, eta_mu, eta_gamma, x_mu_site, x_gamma_site, x_mu_year,
                              x_gamma_year)
        hp = HougaardParams.reparameterized(st.alpha, st.theta)
        A = np.vstack([hougaard_sample(L, hp, rng) for _ in range(Y)])
        with np.errstate(divide="ignore", over="ignore"):
            out[:, d, :] = _field_draws(st, latent, A, mu, gamma, rng)
    return PredictionDraws(target.site_ids, years, negate_inverse(out, C), "unconditional", seed)


def median_surface(samples: PosteriorSamples, x_mu_year=None, x_gamma_year=None, target=None,
                   x_mu_site=None, x_gamma_site=None, pooled=False, C=DEFAULT_NEGATION_CONSTANT):
    """Posterior mean of the per-site GEV median, in days.

    With ``pooled=False`` one climate setting is used: the year design rows
    ``x_mu_year``/``x_gamma_year`` (a single row each; zeros by default).
    With ``pooled=True`` the medians of every fitted year, with that year's
    own covariates, are averaged as well.  Sites default to the training
    sites; for ``target`` sites the fields are kriged (conditional mean).
    """
    data = samples.data
    if pooled:
        x_mu_year, x_gamma_year = data.x_mu_year, data.x_gamma_year
    else:
        qm, qg = data.x_mu_year.shape[1], data.x_gamma_year.shape[1]
        x_mu_year = np.zeros((1, qm)) if x_mu_year is None else _design(x_mu_year, 1, "x_mu_year")
        x_gamma_year = (np.zeros((1, qg)) if x_gamma_year is None
                        else _design(x_gamma_year, 1, "x_gamma_year"))
    if target is None:
        x_mu_site, x_gamma_site = data.x_mu_site, data.x_gamma_site
        n_sites = len(data.sites)
    else:
        n_sites = len(target)
        x_mu_site = _design(x_mu_site, n_sites, "x_mu_site")
        x_gamma_site = _design(x_gamma_site, n_sites, "x_gamma_site")
    total = np.zeros(n_sites)
    for d in range(samples.n_draws):
        st = samples.state(d)
        if target is None:
            eta_mu = samples.draws["eta_mu"][d]
            eta_gamma = samples.draws["eta_gamma"][d] if "eta_gamma" in samples.draws else None
        else:
            _, eta_mu, eta_gamma = _extend_fields(samples, d, target, x_mu_site, x_gamma_site)
        mu, gamma = _surfaces(st, eta_mu, eta_gamma, x_mu_site, x_gamma_site, x_mu_year,
                              x_gamma_year)
        total += gev_median(mu, np.exp(gamma), st.xi).mean(axis=0)
    return negate_inverse(total / samples.n_draws, C)


@dataclass(frozen=True)
class SummaryRow:
    site_id: str
    year: int
    mean: float
    sd: float
    diff_vs_base: float | None = None


def summarize_draws(pred: PredictionDraws, base: PredictionDraws | None = None):
    """Per site and year: mean, SD (``ddof=1``) and, with ``base``, the mean difference."""
    if base is not None:
        if tuple(base.site_ids) != tuple(pred.site_ids):
            raise DataError("prediction and base cover different sites")
        if len(base.years) not in (1, len(pred.years)):
            raise DataError("base must have one year or the same years as the prediction")
    mean = pred.draws.mean(axis=1)
    n = pred.draws.shape[1]
    sd = pred.draws.std(axis=1, ddof=1) if n > 1 else np.zeros_like(mean)
    diff = None
    if base is not None:
        diff = mean - base.draws.mean(axis=1)
    rows = []
    for j, s in enumerate(pred.site_ids):
        for i, y in enumerate(pred.years):
            rows.append(SummaryRow(s, y, float(mean[i, j]), float(sd[i, j]),
                                   None if diff is None else float(diff[i, j])))
    return rows


def write_predictions(pred: PredictionDraws, path, header=None):
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(header + "\n")
        fh.write("site_id,year,draw,arrival_day\n")
        for j, s in enumerate(pred.site_ids):
            for i, y in enumerate(pred.years):
                for d in range(pred.draws.shape[1]):
                    fh.write(f"{s},{y},{d},{float(pred.draws[i, d, j])!r}\n")


def write_summaries(rows, path, header=None):
    with_diff = any(r.diff_vs_base is not None for r in rows)
    with open(path, "w", newline="") as fh:
        if header:
            fh.write(header + "\n")
        fh.write("site_id,year,mean,sd" + (",diff_vs_base" if with_diff else "") + "\n")
        for r in rows:
            line = f"{r.site_id},{r.year},{r.mean!r},{r.sd!r}"
            if with_diff:
                line += f",{r.diff_vs_base!r}"
            fh.write(line + "\n")


def read_summaries(path):
    rows = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(line for line in fh if not line.startswith("#"))
        missing = {"site_id", "year", "mean", "sd"} - set(reader.fieldnames or ())
        if missing:
            raise DataError(f"{path}: missing columns {sorted(missing)}")
        for r in reader:
            diff = r.get("diff_vs_base")
            rows.append(SummaryRow(r["site_id"], int(r["year"]), float(r["mean"]), float(r["sd"]),
                                   float(diff) if diff not in (None, "") else None))
    return rows
