"""Bayesian fitting of the hierarchical max-id model by Metropolis-Hastings.

State, for T years, S sites and L basis functions:

* ``alpha``, ``theta`` (Hougaard ``H(alpha, alpha, theta)`` coefficients), ``xi``;
* ``A`` (T x L) basis coefficients;
* ``latent`` ((L-1) x S) log-Gaussian basis fields with shared GP hyperparameters;
* the location surface ``mu_t(s) = x_site(s) b_site + x_year(t) b_year + eta(s)``,
  where ``eta`` is an unconstrained GP draw ``eta*`` made orthogonal to the site
  design by conditioning by kriging;
* the log-scale surface, linear in covariates or linear plus an orthogonalized GP.

Missing cells are left out of the likelihood.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy import linalg, stats
from scipy.special import expit, logit

from . import _cells
from .basis import BasisSet, GpHyper, SiteGrid, build_basis, cross_cov, jittered_cholesky, krige
from .distributions import _gev_reduced, hougaard_logpdf
from .errors import DataError, DomainError, SamplerError
from .selection import fit_gev_mle

__all__ = [
    "FitData",
    "Priors",
    "McmcConfig",
    "ChainState",
    "PosteriorSamples",
    "knn_partition",
    "orthogonalize_gp",
    "adjust_coefficients",
    "trimmed_mean",
    "log_posterior",
    "initial_state",
    "run_chain",
    "holdout_log_score",
    "write_posterior",
    "read_posterior",
]

log = logging.getLogger(__name__)

SCALAR_TARGET = 0.44
VECTOR_TARGET = 0.23


# ---------------------------------------------------------------------------
# data and configuration records
# ---------------------------------------------------------------------------


def _frozen(a, ndim):
    a = np.array(a, dtype=float)
    if a.ndim == 1 and ndim == 2:
        a = a[:, None]
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class FitData:
    """Observations on the negated (maxima) scale with the designs that drive the margins.

    ``z`` is T x S with ``nan`` for missing cells.  Site designs are S x p and
    must include the intercept; year designs are T x q (q may be 0).
    """

    sites: SiteGrid
    years: tuple
    z: np.ndarray
    x_mu_site: np.ndarray
    x_mu_year: np.ndarray
    x_gamma_site: np.ndarray
    x_gamma_year: np.ndarray
    mu_names: tuple = ()
    gamma_names: tuple = ()

    def __post_init__(self):
        S, T = len(self.sites), len(self.years)
        z = _frozen(self.z, 2).reshape(T, S)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "years", tuple(int(y) for y in self.years))
        for name, rows in (("x_mu_site", S), ("x_gamma_site", S),
                           ("x_mu_year", T), ("x_gamma_year", T)):
            a = np.array(getattr(self, name), dtype=float)
            if a.ndim == 1:
                a = a.reshape(rows, -1)
            if a.shape[0] != rows:
                raise DomainError(f"{name} has {a.shape[0]} rows, expected {rows}")
            a.setflags(write=False)
            object.__setattr__(self, name, a)
        if self.x_mu_site.shape[1] < 1 or self.x_gamma_site.shape[1] < 1:
            raise DomainError("site designs need at least an intercept column")
        p = self.x_mu_site.shape[1] + self.x_mu_year.shape[1]
        q = self.x_gamma_site.shape[1] + self.x_gamma_year.shape[1]
        if not self.mu_names:
            object.__setattr__(self, "mu_names", tuple(f"mu{i}" for i in range(p)))
        if not self.gamma_names:
            object.__setattr__(self, "gamma_names", tuple(f"gamma{i}" for i in range(q)))
        if len(self.mu_names) != p or len(self.gamma_names) != q:
            raise DomainError("coefficient names do not match the design widths")

    @property
    def observed(self):
        return np.isfinite(self.z)

    @property
    def n_obs(self):
        return int(self.observed.sum())

    @classmethod
    def intercept_only(cls, sites, years, z):
        S, T = len(sites), len(years)
        return cls(sites, years, z, np.ones((S, 1)), np.zeros((T, 0)),
                   np.ones((S, 1)), np.zeros((T, 0)), ("intercept",), ("intercept",))

    def year_index(self, year):
        try:
            return self.years.index(int(year))
        except ValueError:
            raise DomainError(f"year {year} is not among the fitted years") from None

    def to_json(self):
        return {
            "site_ids": [str(s) for s in self.sites.site_ids],
            "coords": self.sites.coords.tolist(),
            "years": list(self.years),
            "z": [[None if not math.isfinite(v) else v for v in row] for row in self.z.tolist()],
            "x_mu_site": self.x_mu_site.tolist(),
            "x_mu_year": self.x_mu_year.tolist(),
            "x_gamma_site": self.x_gamma_site.tolist(),
            "x_gamma_year": self.x_gamma_year.tolist(),
            "mu_names": list(self.mu_names),
            "gamma_names": list(self.gamma_names),
        }

    @classmethod
    def from_json(cls, d):
        T, S = len(d["years"]), len(d["site_ids"])
        z = np.array([[np.nan if v is None else v for v in row] for row in d["z"]], dtype=float)

        def arr(key, rows):
            a = np.array(d[key], dtype=float)
            return a.reshape(rows, -1) if a.size else np.zeros((rows, 0))

        return cls(SiteGrid(tuple(d["site_ids"]), np.array(d["coords"], dtype=float)),
                   tuple(d["years"]), z.reshape(T, S),
                   arr("x_mu_site", S), arr("x_mu_year", T),
                   arr("x_gamma_site", S), arr("x_gamma_year", T),
                   tuple(d["mu_names"]), tuple(d["gamma_names"]))


@dataclass(frozen=True)
class Priors:
    """Prior settings; every normal's second argument is a variance.

    ``gp_range_var=None`` uses the squared maximum pairwise site distance.
    """

    xi_var: float = 100.0
    theta_var: float = 100.0
    beta_var: float = 100.0
    gp_variance_var: float = 100.0
    gp_range_var: float | None = None

    def __post_init__(self):
        for k, v in asdict(self).items():
            if v is not None and not v > 0.0:
                raise DomainError(f"prior setting {k} must be positive")

    def range_var(self, sites: SiteGrid):
        if self.gp_range_var is not None:
            return self.gp_range_var
        return max(sites.max_distance(), 1e-12) ** 2


BLOCKS = ("alpha", "theta", "xi", "beta_mu", "beta_gamma", "eta_mu", "hyper_mu",
          "eta_gamma", "hyper_gamma", "latent", "hyper_K", "A")


@dataclass(frozen=True)
class McmcConfig:
    iterations: int = 110_900
    burn_in: int = 45_000
    thin: int = 50
    cluster_size: int = 10
    n_basis: int = 8
    scale_mode: str = "linear"
    seed: int = 0
    adapt: bool = True
    step_sizes: dict = field(default_factory=dict)
    fixed: tuple = ()

    def __post_init__(self):
        if self.iterations < 0 or self.burn_in < 0:
            raise DomainError("iterations and burn_in must be nonnegative")
        if self.iterations > 0 and self.burn_in >= self.iterations:
            raise DomainError("burn_in must be smaller than iterations")
        if self.thin < 1 or self.cluster_size < 1:
            raise DomainError("thin and cluster_size must be at least 1")
        if self.n_basis < 2:
            raise DomainError("need at least two basis functions")
        if self.scale_mode not in ("gp", "linear"):
            raise DomainError("scale_mode must be 'gp' or 'linear'")
        unknown = set(self.fixed) - set(BLOCKS)
        if unknown:
            raise DomainError(f"unknown blocks to fix: {sorted(unknown)}")

    def replace(self, **kw):
        return replace(self, **kw)


@dataclass
class ChainState:
    alpha: float
    theta: float
    xi: float
    A: np.ndarray
    latent: np.ndarray
    hyper_K: GpHyper
    beta_mu: np.ndarray
    eta_mu_star: np.ndarray
    hyper_mu: GpHyper
    beta_gamma: np.ndarray
    eta_gamma_star: np.ndarray | None = None
    hyper_gamma: GpHyper | None = None
    log_post: float = float("nan")

    def copy(self):
        c = replace(self)
        for k in ("A", "latent", "beta_mu", "eta_mu_star", "beta_gamma", "eta_gamma_star"):
            v = getattr(c, k)
            if v is not None:
                setattr(c, k, v.copy())
        return c


# ---------------------------------------------------------------------------
# building blocks
# ---------------------------------------------------------------------------


def knn_partition(sites: SiteGrid, target_size, seed=None):
    """Disjoint, spatially compact clusters by greedy seed-and-grow.

    A random unassigned site seeds each cluster, which then absorbs its
    nearest unassigned neighbours until it holds ``target_size`` sites.
    """
    if target_size < 1:
        raise DomainError("target cluster size must be at least 1")
    rng = np.random.default_rng(seed)
    d = sites.distances()
    left = np.ones(len(sites), dtype=bool)
    clusters = []
    for start in rng.permutation(len(sites)):
        if not left[start]:
            continue
        cand = np.flatnonzero(left)
        near = cand[np.argsort(d[start, cand], kind="stable")][:target_size]
        left[near] = False
        clusters.append(np.sort(near))
    return clusters


def orthogonalize_gp(eta_star, Sigma, X):
    """``eta* - Sigma X (X' Sigma X)^{-1} X' eta*`` so that ``X' eta = 0``."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    Sigma = np.asarray(Sigma, dtype=float)
    eta_star = np.asarray(eta_star, dtype=float)
    SX = Sigma @ X
    M = X.T @ SX
    try:
        cf = linalg.cho_factor(M)
    except linalg.LinAlgError:
        raise DomainError("X' Sigma X is singular; the design is rank deficient") from None
    if np.linalg.cond(M) > 1e12:
        raise DomainError("X' Sigma X is numerically singular")
    return eta_star - (SX @ linalg.cho_solve(cf, X.T @ eta_star.T)).T


def adjust_coefficients(delta, X, eta_tilde):
    """``delta - (X'X)^{-1} X' eta~`` per draw (rows of ``delta`` and ``eta_tilde``)."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    XtX = X.T @ X
    if np.linalg.matrix_rank(XtX) < XtX.shape[0]:
        raise DomainError("X'X is singular")
    coef = np.linalg.solve(XtX, X.T @ np.asarray(eta_tilde, dtype=float).T)
    return np.asarray(delta, dtype=float) - coef.T


def trimmed_mean(values, trim=0.05):
    """Symmetric trimmed mean dropping ``trim/2`` of the values from each tail."""
    if not 0.0 <= trim < 1.0:
        raise DomainError("trim must lie in [0, 1)")
    values = np.asarray(values, dtype=float)
    if values.size == 0:
        raise DomainError("cannot average an empty set of scores")
    return float(stats.trim_mean(values, trim / 2.0))


class _Gp:
    """Zero-mean exponential GP at fixed sites, with orthogonalization and cluster conditionals."""

    def __init__(self, dist, hyper: GpHyper, X=None, clusters=()):
        self.dist = dist
        self.hyper = hyper
        n = dist.shape[0]
        R = np.exp(-dist / hyper.range)
        self.chol_R = jittered_cholesky(R, 1.0)
        Rj = self.chol_R @ self.chol_R.T
        self.logdet = 2.0 * np.log(np.diag(self.chol_R)).sum() + n * math.log(hyper.variance)
        Rinv = linalg.cho_solve((self.chol_R, True), np.eye(n))
        self.Q = Rinv / hyper.variance
        self.proj = None
        if X is not None:
            # eta = P eta*; the variance cancels, so P depends on the range only
            RX = Rj @ X
            self.proj = np.eye(n) - RX @ np.linalg.solve(X.T @ RX, X.T)
        self.cond_chol = [jittered_cholesky(np.linalg.inv(self.Q[np.ix_(c, c)]), hyper.variance)
                          for c in clusters]

    def logpdf(self, x):
        x = np.atleast_2d(x)
        quad = np.einsum("ij,jk,ik->", x, self.Q, x)
        return -0.5 * quad - 0.5 * x.shape[0] * (self.logdet + self.dist.shape[0] * math.log(2 * math.pi))

    def cov(self):
        return self.hyper.variance * (self.chol_R @ self.chol_R.T)


def _half_normal_logpdf(x, var):
    return -0.5 * x * x / var + 0.5 * math.log(2.0 / (math.pi * var))


def _normal_logpdf(x, var):
    x = np.asarray(x, dtype=float)
    return -0.5 * float(x @ x if x.ndim else x * x) / var - 0.5 * x.size * math.log(2.0 * math.pi * var)


class _Model:
    """Everything fixed for a run: data, designs, priors, clusters, distances."""

    def __init__(self, data: FitData, priors: Priors, config: McmcConfig):
        self.data = data
        self.priors = priors
        self.config = config
        self.dist = data.sites.distances()
        self.range_var = priors.range_var(data.sites)
        self.observed = data.observed
        self.zfill = np.where(self.observed, data.z, 0.0)
        self.clusters = knn_partition(data.sites, config.cluster_size, config.seed)
        self.n_mu_site = data.x_mu_site.shape[1]
        self.n_gamma_site = data.x_gamma_site.shape[1]
        self.gp_gamma = config.scale_mode == "gp"

    def gp(self, hyper, X=None):
        return _Gp(self.dist, hyper, X, self.clusters)

    def mu(self, beta, eta):
        d = self.data
        p = self.n_mu_site
        return (d.x_mu_site @ beta[:p])[None, :] + (d.x_mu_year @ beta[p:])[:, None] + eta[None, :]

    def gamma(self, beta, eta):
        d = self.data
        q = self.n_gamma_site
        g = (d.x_gamma_site @ beta[:q])[None, :] + (d.x_gamma_year @ beta[q:])[:, None]
        return g if eta is None else g + eta[None, :]


class _Eval:
    """Cached pieces of the log posterior for one state."""

    __slots__ = ("logk", "logb", "logw", "logdv", "mu", "gamma", "target", "ratio", "cells", "logH",
                 "gp_K", "gp_mu", "gp_gamma", "eta_mu", "eta_gamma", "prior_K",
                 "prior_mu", "prior_gamma")

    def copy(self):
        e = _Eval()
        for s in self.__slots__:
            setattr(e, s, getattr(self, s, None))
        return e


def _gev_terms(model, mu, gamma, xi):
    t, logf = _gev_reduced(model.zfill, mu, np.exp(gamma), xi)
    with np.errstate(invalid="ignore"):
        ratio = logf + t
    return t, ratio


def _log_k(latent, alpha):
    with np.errstate(divide="ignore"):
        return np.log(build_basis(latent).normalized) / alpha


def _log_b(A, logk):
    """``log sum_l A_l k_l`` per year and site, shifted per site against under/overflow."""
    m = logk.max(axis=0)
    la = np.log(A)
    ma = la.max(axis=1, keepdims=True)
    return m[None, :] + ma + np.log(np.exp(la - ma) @ np.exp(logk - m[None, :]))


def _solve_roots(model, ev, st, cols=None, warm=True):
    """Refresh the cached roots ``log w`` (all sites, or only ``cols``)."""
    obs = model.observed
    if cols is None:
        if warm and ev.logw is not None:
            ev.logw, ev.logdv = _cells.solve_observed_warm(ev.target, ev.logk, st.alpha, st.theta,
                                                           obs, ev.logw)
        else:
            ev.logw, ev.logdv = _cells.solve_observed(ev.target, ev.logk, st.alpha, st.theta, obs)
        return
    sub = np.ascontiguousarray
    lw, ld = _cells.solve_observed_warm(sub(ev.target[:, cols]), sub(ev.logk[:, cols]), st.alpha,
                                        st.theta, sub(obs[:, cols]), sub(ev.logw[:, cols]))
    ev.logw = ev.logw.copy()
    ev.logdv = ev.logdv.copy()
    ev.logw[:, cols] = lw
    ev.logdv[:, cols] = ld


def _cells_ll(model, ev, st, cols=None, warm=True):
    _solve_roots(model, ev, st, cols, warm)
    return _cells.cells_from_roots(ev.logb, ev.logw, ev.logdv, ev.ratio, ev.target,
                                   model.observed)


def _hyper_prior(model, hyper):
    return (_half_normal_logpdf(hyper.variance, model.priors.gp_variance_var)
            + _half_normal_logpdf(hyper.range, model.range_var))


def _evaluate(model: _Model, st: ChainState) -> _Eval:
    ev = _Eval()
    ev.logk = _log_k(st.latent, st.alpha)
    ev.logb = _log_b(st.A, ev.logk)
    ev.logw = ev.logdv = None
    ev.gp_K = model.gp(st.hyper_K)
    ev.gp_mu = model.gp(st.hyper_mu, model.data.x_mu_site)
    ev.eta_mu = ev.gp_mu.proj @ st.eta_mu_star
    if model.gp_gamma:
        ev.gp_gamma = model.gp(st.hyper_gamma, model.data.x_gamma_site)
        ev.eta_gamma = ev.gp_gamma.proj @ st.eta_gamma_star
        ev.prior_gamma = ev.gp_gamma.logpdf(st.eta_gamma_star) + _hyper_prior(model, st.hyper_gamma)
    else:
        ev.gp_gamma = ev.eta_gamma = None
        ev.prior_gamma = 0.0
    ev.mu = model.mu(st.beta_mu, ev.eta_mu)
    ev.gamma = model.gamma(st.beta_gamma, ev.eta_gamma)
    ev.target, ev.ratio = _gev_terms(model, ev.mu, ev.gamma, st.xi)
    ev.cells = _cells_ll(model, ev, st)
    ev.logH = hougaard_logpdf(st.A, st.alpha, st.theta)
    ev.prior_K = ev.gp_K.logpdf(st.latent) + _hyper_prior(model, st.hyper_K)
    ev.prior_mu = ev.gp_mu.logpdf(st.eta_mu_star) + _hyper_prior(model, st.hyper_mu)
    return ev


def _scalar_priors(model, st):
    p = model.priors
    if not (0.0 < st.alpha < 1.0 and st.theta > 0.0):
        return -np.inf
    return (_half_normal_logpdf(st.theta, p.theta_var) + _normal_logpdf(st.xi, p.xi_var)
            + _normal_logpdf(st.beta_mu, p.beta_var) + _normal_logpdf(st.beta_gamma, p.beta_var))


def _total(model, st, ev):
    return float(ev.cells.sum() + ev.logH.sum() + ev.prior_K + ev.prior_mu + ev.prior_gamma
                 + _scalar_priors(model, st))


def log_posterior(state: ChainState, data: FitData, priors: Priors, config: McmcConfig | None = None):
    """Unnormalized log posterior; ``-inf`` when the state or an observation leaves the support.

    ``config`` supplies the scale mode (GP or linear log-scale surface); it
    defaults to the mode implied by whether ``state`` carries a log-scale GP.
    """
    if config is None:
        config = McmcConfig(n_basis=state.A.shape[1],
                            scale_mode="gp" if state.eta_gamma_star is not None else "linear",
                            iterations=0, burn_in=0)
    if not (0.0 < state.alpha < 1.0) or not state.theta > 0.0 or np.any(state.A <= 0.0):
        return -np.inf
    model = _Model(data, priors, config)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        total = _total(model, state, _evaluate(model, state))
    return total if not math.isnan(total) else -np.inf


def initial_state(data: FitData, config: McmcConfig) -> ChainState:
    """Chain start: alpha 0.5, theta 1, unit coefficients, zero latent fields, margins from MLE."""
    T, S, L = len(data.years), len(data.sites), config.n_basis
    obs = data.observed
    tt, ss = np.nonzero(obs)
    X_mu = np.hstack([data.x_mu_site[ss], data.x_mu_year[tt]])
    X_g = np.hstack([data.x_gamma_site[ss], data.x_gamma_year[tt]])
    fit = fit_gev_mle(data.z[obs], X_mu, X_g, restarts=10, seed=config.seed)
    span = max(data.sites.max_distance(), 1.0)
    hyper = GpHyper(1.0, span / 4.0)
    return ChainState(
        alpha=0.5, theta=1.0, xi=fit.xi, A=np.ones((T, L)), latent=np.zeros((L - 1, S)),
        hyper_K=hyper, beta_mu=fit.beta_mu.copy(), eta_mu_star=np.zeros(S), hyper_mu=hyper,
        beta_gamma=fit.beta_gamma.copy(),
        eta_gamma_star=np.zeros(S) if config.scale_mode == "gp" else None,
        hyper_gamma=GpHyper(0.1, span / 4.0) if config.scale_mode == "gp" else None)


# ---------------------------------------------------------------------------
# the sampler
# ---------------------------------------------------------------------------


@dataclass
class _Block:
    name: str
    log_step: float
    target: float
    tries: int = 0
    accepts: float = 0.0
    post_tries: int = 0
    post_accepts: float = 0.0

    @property
    def step(self):
        return math.exp(self.log_step)


class _Sampler:
    def __init__(self, model: _Model, st: ChainState, rng):
        self.m = model
        self.st = st
        self.rng = rng
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            self.ev = _evaluate(model, st)
            self.lp = _total(model, st, self.ev)
        if not math.isfinite(self.lp):
            raise SamplerError(self._diagnose())
        self.blocks = {}
        self.burning = True
        self.n_adapt = 0

    def _diagnose(self):
        ev, st = self.ev, self.st
        bad = np.argwhere(~np.isfinite(ev.cells))
        parts = {"cells": float(ev.cells.sum()), "hougaard": float(ev.logH.sum()),
                 "gp_K": float(ev.prior_K), "gp_mu": float(ev.prior_mu),
                 "gp_gamma": float(ev.prior_gamma), "scalar": _scalar_priors(self.m, st)}
        msg = "initial log posterior is not finite: " + ", ".join(
            f"{k}={v:.6g}" for k, v in parts.items())
        if bad.size:
            t, s = bad[0]
            msg += (f"; first bad cell year={self.m.data.years[t]} "
                    f"site={self.m.data.sites.site_ids[s]} z={self.m.data.z[t, s]:.6g}")
        return msg

    def block(self, name, init, target):
        b = self.blocks.get(name)
        if b is None:
            step = self.m.config.step_sizes.get(name.split("[")[0], init)
            b = self.blocks[name] = _Block(name, math.log(step), target)
        return b

    def record(self, b, acc):
        b.tries += 1
        b.accepts += acc
        if self.burning:
            if self.m.config.adapt:
                gain = min(1.0, 10.0 / (b.tries + 10.0) ** 0.6)
                b.log_step += gain * (acc - b.target)
        else:
            b.post_tries += 1
            b.post_accepts += acc

    def mh(self, b, st_new, ev_new, log_jac=0.0):
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            lp_new = _total(self.m, st_new, ev_new)
        ok = math.isfinite(lp_new) and math.log(max(self.rng.random(), 1e-300)) < lp_new - self.lp + log_jac
        if ok:
            self.st, self.ev, self.lp = st_new, ev_new, lp_new
        self.record(b, float(ok))

    # individual updates -------------------------------------------------------

    def _refresh_cells(self, st, ev, cols=None):
        ev.cells = _cells_ll(self.m, ev, st, cols)

    def _refresh_margins(self, st, ev):
        ev.mu = self.m.mu(st.beta_mu, ev.eta_mu)
        ev.gamma = self.m.gamma(st.beta_gamma, ev.eta_gamma)
        ev.target, ev.ratio = _gev_terms(self.m, ev.mu, ev.gamma, st.xi)
        self._refresh_cells(st, ev)

    def update_alpha(self):
        b = self.block("alpha", 0.2, SCALAR_TARGET)
        st = self.st.copy()
        old = logit(st.alpha)
        new = old + b.step * self.rng.standard_normal()
        st.alpha = float(expit(new))
        if not 0.0 < st.alpha < 1.0:
            return self.record(b, 0.0)
        ev = self.ev.copy()
        ev.logk = ev.logk * (self.st.alpha / st.alpha)
        ev.logb = _log_b(st.A, ev.logk)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            self._refresh_cells(st, ev)
            ev.logH = hougaard_logpdf(st.A, st.alpha, st.theta)
        # uniform prior on alpha: Jacobian of the logit scale
        jac = (math.log(st.alpha * (1 - st.alpha))
               - math.log(self.st.alpha * (1 - self.st.alpha)))
        self.mh(b, st, ev, jac)

    def update_theta(self):
        b = self.block("theta", 0.5, SCALAR_TARGET)
        st = self.st.copy()
        st.theta = self.st.theta * math.exp(b.step * self.rng.standard_normal())
        ev = self.ev.copy()
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            self._refresh_cells(st, ev)
            ev.logH = hougaard_logpdf(st.A, st.alpha, st.theta)
        self.mh(b, st, ev, math.log(st.theta / self.st.theta))

    def update_xi(self):
        b = self.block("xi", 0.02, SCALAR_TARGET)
        st = self.st.copy()
        st.xi = self.st.xi + b.step * self.rng.standard_normal()
        ev = self.ev.copy()
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            self._refresh_margins(st, ev)
        self.mh(b, st, ev)

    def update_beta(self, which):
        vec = getattr(self.st, which)
        for j in range(vec.size):
            b = self.block(f"{which}[{j}]", 0.1, SCALAR_TARGET)
            st = self.st.copy()
            getattr(st, which)[j] += b.step * self.rng.standard_normal()
            ev = self.ev.copy()
            with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
                self._refresh_margins(st, ev)
            self.mh(b, st, ev)

    def update_eta(self, which):
        star = f"eta_{which}_star"
        for c_idx, c in enumerate(self.m.clusters):
            b = self.block(f"eta_{which}[{c_idx}]", 0.5, VECTOR_TARGET)
            st = self.st.copy()
            gp = getattr(self.ev, f"gp_{which}")
            x = getattr(st, star)
            x[c] += b.step * (gp.cond_chol[c_idx] @ self.rng.standard_normal(c.size))
            ev = self.ev.copy()
            setattr(ev, f"eta_{which}", gp.proj @ x)
            hyper = getattr(st, f"hyper_{which}")
            setattr(ev, f"prior_{which}", gp.logpdf(x) + _hyper_prior(self.m, hyper))
            with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
                self._refresh_margins(st, ev)
            self.mh(b, st, ev)

    def update_hyper(self, which):
        for part in ("variance", "range"):
            b = self.block(f"hyper_{which}[{part}]", 0.3, SCALAR_TARGET)
            st = self.st.copy()
            old = getattr(st, f"hyper_{which}")
            val = getattr(old, part) * math.exp(b.step * self.rng.standard_normal())
            new = replace(old, **{part: val})
            setattr(st, f"hyper_{which}", new)
            ev = self.ev.copy()
            jac = math.log(val / getattr(old, part))
            try:
                if which == "K":
                    ev.gp_K = self.m.gp(new)
                    ev.prior_K = ev.gp_K.logpdf(st.latent) + _hyper_prior(self.m, new)
                else:
                    X = self.m.data.x_mu_site if which == "mu" else self.m.data.x_gamma_site
                    gp = self.m.gp(new, X)
                    setattr(ev, f"gp_{which}", gp)
                    setattr(ev, f"prior_{which}",
                            gp.logpdf(getattr(st, f"eta_{which}_star")) + _hyper_prior(self.m, new))
                    if part == "range":
                        setattr(ev, f"eta_{which}", gp.proj @ getattr(st, f"eta_{which}_star"))
                        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
                            self._refresh_margins(st, ev)
            except (linalg.LinAlgError, np.linalg.LinAlgError, ArithmeticError):
                self.record(b, 0.0)
                continue
            self.mh(b, st, ev, jac)

    def update_latent(self):
        gp = self.ev.gp_K
        for l in range(self.st.latent.shape[0]):
            for c_idx, c in enumerate(self.m.clusters):
                b = self.block(f"latent[{l},{c_idx}]", 0.5, VECTOR_TARGET)
                st = self.st.copy()
                st.latent[l, c] += b.step * (gp.cond_chol[c_idx] @ self.rng.standard_normal(c.size))
                ev = self.ev.copy()
                ev.logk = self.ev.logk.copy()
                ev.logk[:, c] = _log_k(st.latent[:, c], st.alpha)
                ev.logb = self.ev.logb.copy()
                ev.logb[:, c] = _log_b(st.A, ev.logk[:, c])
                ev.prior_K = gp.logpdf(st.latent) + _hyper_prior(self.m, st.hyper_K)
                with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
                    self._refresh_cells(st, ev, c)
                self.mh(b, st, ev)

    def update_A(self):
        """Log-scale random walk on each A_{l,t}; years are conditionally independent.

        The spread of log A grows like 1/alpha, so the adapted step is divided
        by the current alpha and stays calibrated when alpha moves after burn-in.
        """
        T, L = self.st.A.shape
        for l in range(L):
            b = self.block(f"A[{l}]", 0.25, SCALAR_TARGET)
            step = (b.step / self.st.alpha) * self.rng.standard_normal(T)
            u = np.log(self.rng.random(T))
            A_new = self.st.A.copy()
            A_new[:, l] *= np.exp(step)
            ev = self.ev.copy()
            logb_new = _log_b(A_new, ev.logk)
            with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
                # the roots do not depend on A, so only the exponential term changes
                cells = _cells.cells_from_roots(logb_new, ev.logw, ev.logdv, ev.ratio,
                                                ev.target, self.m.observed)
                logH_col = hougaard_logpdf(A_new[:, l], self.st.alpha, self.st.theta)
                delta = (cells.sum(axis=1) - self.ev.cells.sum(axis=1)
                         + logH_col - self.ev.logH[:, l] + step)
            acc = np.isfinite(delta) & (u < delta)
            if acc.any():
                st = self.st.copy()
                st.A[acc, l] = A_new[acc, l]
                ev.logb = np.where(acc[:, None], logb_new, self.ev.logb)
                ev.cells = self.ev.cells.copy()
                ev.cells[acc] = cells[acc]
                ev.logH = self.ev.logH.copy()
                ev.logH[acc, l] = logH_col[acc]
                self.st, self.ev = st, ev
                self.lp = _total(self.m, st, ev)
            self.record(b, float(acc.mean()))

    def sweep(self):
        fixed = set(self.m.config.fixed)
        if "alpha" not in fixed:
            self.update_alpha()
        if "theta" not in fixed:
            self.update_theta()
        if "xi" not in fixed:
            self.update_xi()
        if "beta_mu" not in fixed:
            self.update_beta("beta_mu")
        if "beta_gamma" not in fixed:
            self.update_beta("beta_gamma")
        if "eta_mu" not in fixed:
            self.update_eta("mu")
        if "hyper_mu" not in fixed:
            self.update_hyper("mu")
        if self.m.gp_gamma:
            if "eta_gamma" not in fixed:
                self.update_eta("gamma")
            if "hyper_gamma" not in fixed:
                self.update_hyper("gamma")
        if "latent" not in fixed:
            self.update_latent()
        if "hyper_K" not in fixed:
            self.update_hyper("K")
        if "A" not in fixed:
            self.update_A()


# ---------------------------------------------------------------------------
# posterior samples
# ---------------------------------------------------------------------------


@dataclass
class PosteriorSamples:
    """Retained draws keyed by parameter name (leading axis = draw) plus run metadata."""

    draws: dict
    meta: dict
    data: FitData

    def __post_init__(self):
        sizes = {k: np.asarray(v).shape[0] for k, v in self.draws.items()}
        if len(set(sizes.values())) > 1:
            raise DomainError(f"draw arrays disagree in length: {sizes}")

    @property
    def n_draws(self):
        return next(iter(self.draws.values())).shape[0]

    @property
    def n_basis(self):
        return self.draws["A"].shape[2]

    @property
    def scale_mode(self):
        return self.meta.get("scale_mode", "linear")

    def state(self, i) -> ChainState:
        d = self.draws
        gp_gamma = "eta_gamma_star" in d
        return ChainState(
            alpha=float(d["alpha"][i]), theta=float(d["theta"][i]), xi=float(d["xi"][i]),
            A=d["A"][i].copy(), latent=d["latent"][i].copy(),
            hyper_K=GpHyper(float(d["hyper_K"][i, 0]), float(d["hyper_K"][i, 1])),
            beta_mu=d["beta_mu"][i].copy(), eta_mu_star=d["eta_mu_star"][i].copy(),
            hyper_mu=GpHyper(float(d["hyper_mu"][i, 0]), float(d["hyper_mu"][i, 1])),
            beta_gamma=d["beta_gamma"][i].copy(),
            eta_gamma_star=d["eta_gamma_star"][i].copy() if gp_gamma else None,
            hyper_gamma=(GpHyper(float(d["hyper_gamma"][i, 0]), float(d["hyper_gamma"][i, 1]))
                         if gp_gamma else None))


def _snapshot(st: ChainState, ev: _Eval):
    out = {
        "alpha": st.alpha, "theta": st.theta, "xi": st.xi, "A": st.A.copy(),
        "latent": st.latent.copy(),
        "hyper_K": np.array([st.hyper_K.variance, st.hyper_K.range]),
        "beta_mu": st.beta_mu.copy(), "eta_mu_star": st.eta_mu_star.copy(),
        "eta_mu": ev.eta_mu.copy(),
        "hyper_mu": np.array([st.hyper_mu.variance, st.hyper_mu.range]),
        "beta_gamma": st.beta_gamma.copy(), "log_post": st.log_post,
    }
    if st.eta_gamma_star is not None:
        out["eta_gamma_star"] = st.eta_gamma_star.copy()
        out["eta_gamma"] = ev.eta_gamma.copy()
        out["hyper_gamma"] = np.array([st.hyper_gamma.variance, st.hyper_gamma.range])
    return out


def run_chain(data: FitData, priors: Priors, config: McmcConfig, init: ChainState | None = None):
    """Run one Metropolis-within-Gibbs chain and return the thinned post-burn-in draws.

    Step sizes adapt by Robbins-Monro during burn-in only.  A zero-iteration
    run returns the initial state as the single draw.  The trace is a pure
    function of the inputs and ``config.seed``.
    """
    if data.n_obs == 0:
        raise DomainError("no observed cells to fit")
    if data.x_gamma_site.shape[0] != len(data.sites):
        raise DataError("design rows do not match sites")
    started = time.perf_counter()
    model = _Model(data, priors, config)
    st = init.copy() if init is not None else initial_state(data, config)
    if st.A.shape[1] != config.n_basis or st.latent.shape[0] != config.n_basis - 1:
        raise DomainError("initial state does not match the configured number of basis functions")
    rng = np.random.default_rng(np.random.SeedSequence([config.seed, 0x6d636d63]))
    sampler = _Sampler(model, st, rng)
    kept = []
    if config.iterations == 0:
        sampler.st.log_post = sampler.lp
        kept.append(_snapshot(sampler.st, sampler.ev))
    for it in range(config.iterations):
        sampler.burning = it < config.burn_in
        sampler.sweep()
        if not sampler.burning and (it + 1 - config.burn_in) % config.thin == 0:
            sampler.st.log_post = sampler.lp
            kept.append(_snapshot(sampler.st, sampler.ev))
    if not kept:
        # the thinning interval never fired; keep the final state
        sampler.st.log_post = sampler.lp
        kept.append(_snapshot(sampler.st, sampler.ev))
    draws = {k: np.array([d[k] for d in kept]) for k in kept[0]}
    # recovered coefficients for the site part of the location surface
    p = data.x_mu_site.shape[1]
    draws["beta_mu_adjusted"] = draws["beta_mu"].copy()
    draws["beta_mu_adjusted"][:, :p] = adjust_coefficients(
        draws["beta_mu"][:, :p], data.x_mu_site, draws["eta_mu_star"])
    acceptance = {b.name: (b.post_accepts / b.post_tries if b.post_tries else
                           (b.accepts / b.tries if b.tries else None))
                  for b in sampler.blocks.values()}
    meta = {
        "seed": config.seed,
        "config": {k: (list(v) if isinstance(v, tuple) else v)
                   for k, v in asdict(config).items()},
        "priors": asdict(priors),
        "scale_mode": config.scale_mode,
        "n_basis": config.n_basis,
        "clusters": [c.tolist() for c in model.clusters],
        "acceptance": acceptance,
        "step_sizes": {b.name: b.step for b in sampler.blocks.values()},
        "wall_time_s": time.perf_counter() - started,
    }
    return PosteriorSamples(draws, meta, data)


# ---------------------------------------------------------------------------
# holdout scoring
# ---------------------------------------------------------------------------


def _extend_fields(samples, i, target: SiteGrid, x_mu_site, x_gamma_site, rng=None):
    """Latent basis fields and surface GPs of draw ``i`` at ``target`` sites.

    Without ``rng`` this is the kriged conditional mean; with it, a
    conditional draw.  Returns ``(latent, eta_mu, eta_gamma)`` on target sites.
    """
    st = samples.state(i)
    train = samples.data.sites
    latent = krige(st.latent, train, target, st.hyper_K, rng)
    eta_mu = _extend_orthogonal(st.eta_mu_star, train, target, st.hyper_mu,
                                samples.data.x_mu_site, rng)
    eta_gamma = None
    if st.eta_gamma_star is not None:
        eta_gamma = _extend_orthogonal(st.eta_gamma_star, train, target, st.hyper_gamma,
                                       samples.data.x_gamma_site, rng)
    return latent, eta_mu, eta_gamma


def _extend_orthogonal(eta_star, train, target, hyper, X, rng):
    """Extend the orthogonalized field: ``eta*_new - Sigma_nt X (X' Sigma X)^{-1} X' eta*``."""
    from .basis import cov_matrix

    star_new = krige(eta_star, train, target, hyper, rng)
    sigma = cov_matrix(train, hyper)
    M = X.T @ sigma @ X
    corr = cross_cov(target, train, hyper) @ X @ np.linalg.solve(M, X.T @ eta_star)
    return star_new - corr


def _draw_loglik(samples, i, holdout: FitData, year_idx):
    st = samples.state(i)
    latent, eta_mu, eta_gamma = _extend_fields(samples, i, holdout.sites,
                                               holdout.x_mu_site, holdout.x_gamma_site)
    logk = _log_k(latent, st.alpha)
    logb = _log_b(st.A[year_idx], logk)
    p = holdout.x_mu_site.shape[1]
    q = holdout.x_gamma_site.shape[1]
    mu = ((holdout.x_mu_site @ st.beta_mu[:p])[None, :]
          + (holdout.x_mu_year @ st.beta_mu[p:])[:, None] + eta_mu[None, :])
    gamma = ((holdout.x_gamma_site @ st.beta_gamma[:q])[None, :]
             + (holdout.x_gamma_year @ st.beta_gamma[q:])[:, None])
    if eta_gamma is not None:
        gamma = gamma + eta_gamma[None, :]
    obs = holdout.observed
    zfill = np.where(obs, holdout.z, 0.0)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        t, logf = _gev_reduced(zfill, mu, np.exp(gamma), st.xi)
        cells = _cells.cell_loglik(t, logf + t, logb, logk, st.alpha, st.theta, obs)
    return float(cells.sum())


def holdout_log_score(samples: PosteriorSamples, holdout: FitData, trim=0.05):
    """Trimmed mean over retained draws of the holdout log likelihood (higher is better).

    Each draw's basis and surface fields are kriged to the holdout sites and
    that draw's yearly coefficients are reused.
    """
    if holdout.n_obs == 0:
        raise DomainError("holdout set has no observations")
    if set(holdout.sites.site_ids) & set(samples.data.sites.site_ids):
        raise DomainError("holdout sites must be disjoint from training sites")
    year_idx = [samples.data.year_index(y) for y in holdout.years]
    scores = np.array([_draw_loglik(samples, i, holdout, year_idx)
                       for i in range(samples.n_draws)])
    return trimmed_mean(scores, trim)


# ---------------------------------------------------------------------------
# posterior files
# ---------------------------------------------------------------------------


def _flat_names(name, shape):
    if not shape:
        return [name]
    return [f"{name}[{','.join(map(str, idx))}]" for idx in np.ndindex(*shape)]


def write_posterior(samples: PosteriorSamples, csv_path, meta_path, header=None):
    """Long-format draws ``draw_index,parameter,value`` plus a JSON metadata document."""
    with open(csv_path, "w", newline="") as fh:
        if header:
            fh.write(header + "\n")
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(["draw_index", "parameter", "value"])
        names = sorted(samples.draws)
        for i in range(samples.n_draws):
            for name in names:
                v = np.asarray(samples.draws[name][i], dtype=float)
                for label, x in zip(_flat_names(name, v.shape), v.ravel()):
                    out.writerow([i, label, repr(float(x))])
    shapes = {k: list(np.asarray(v).shape[1:]) for k, v in samples.draws.items()}
    doc = dict(samples.meta, shapes=shapes, data=samples.data.to_json())
    with open(meta_path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)


def read_posterior(csv_path, meta_path) -> PosteriorSamples:
    with open(meta_path) as fh:
        doc = json.load(fh)
    shapes = doc.pop("shapes")
    data = FitData.from_json(doc.pop("data"))
    values = {}
    n = 0
    with open(csv_path, newline="") as fh:
        rows = csv.reader(line for line in fh if not line.startswith("#"))
        header = next(rows)
        if header != ["draw_index", "parameter", "value"]:
            raise DataError(f"unexpected posterior header {header}")
        for i, label, v in rows:
            values[(int(i), label)] = float(v)
            n = max(n, int(i) + 1)
    draws = {}
    for name, shape in shapes.items():
        labels = _flat_names(name, tuple(shape))
        arr = np.array([[values[(i, lab)] for lab in labels] for i in range(n)])
        draws[name] = arr.reshape((n, *shape))
    return PosteriorSamples(draws, doc, data)
