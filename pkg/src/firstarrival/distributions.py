"""Positive-stable, exponentially tilted stable (Hougaard), GEV and Frechet laws.

Parameterization of the Hougaard family ``H(alpha, delta, theta)`` follows the
Laplace transform

    E exp(-s X) = exp[-(delta / alpha) {(theta + s)**alpha - theta**alpha}],

so ``H(alpha, delta, 0)`` is a positive-stable law scaled by
``(delta / alpha) ** (1 / alpha)``.  The model only ever uses ``delta == alpha``
(see :meth:`HougaardParams.reparameterized`); the general form is kept so the
``alpha -> 0`` Gamma limit can be exercised.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import integrate, optimize, special

from .errors import DomainError, QuadratureError, SamplerError

__all__ = [
    "HougaardParams",
    "GevParams",
    "FrechetShape",
    "tilt_kernel",
    "positive_stable_density",
    "positive_stable_logpdf",
    "positive_stable_sample",
    "hougaard_density",
    "hougaard_logpdf",
    "hougaard_sample",
    "hougaard_laplace",
    "gev_eval",
    "gev_cdf",
    "gev_quantile",
    "gev_quantile_from_neglog",
    "gev_logpdf",
    "gev_logcdf",
    "frechet_eval",
    "frechet_cdf",
    "frechet_sample",
]

GUMBEL_EPS = 1e-8

QUAD_LIMIT = 10_000

# below this acceptance rate the plain rejection tilt is replaced
# by the double-rejection sampler
MIN_ACCEPTANCE = 0.1
MAX_REJECTION_ROUNDS = 200


def _rng(seed):
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


# ---------------------------------------------------------------------------
# parameter records
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class HougaardParams:
    """Parameters of the exponentially tilted positive-stable law."""

    alpha: float
    delta: float
    theta: float

    def __post_init__(self):
        if not (0.0 < self.alpha < 1.0):
            raise DomainError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not self.delta > 0.0:
            raise DomainError(f"delta must be positive, got {self.delta}")
        if not self.theta >= 0.0 or not math.isfinite(self.theta):
            raise DomainError(f"theta must be finite and >= 0, got {self.theta}")

    @classmethod
    def reparameterized(cls, alpha, theta):
        """The ``H*(alpha, theta)`` member, i.e. ``delta = alpha``."""
        return cls(float(alpha), float(alpha), float(theta))

    @property
    def log_scale(self):
        return math.log(self.delta / self.alpha) / self.alpha

    @property
    def scale(self):
        """Multiplier taking ``PS(alpha)`` to ``H(alpha, delta, 0)``."""
        return math.exp(self.log_scale)

    @property
    def tilt(self):
        """Tilting rate of the standardized stable variable, ``scale * theta``."""
        return self.scale * self.theta

    @property
    def acceptance(self):
        """Acceptance probability of naive rejection tilting."""
        return math.exp(-(self.delta / self.alpha) * self.theta**self.alpha)

    def mean(self):
        if self.theta == 0.0:
            return math.inf
        return self.delta * self.theta ** (self.alpha - 1.0)

    def variance(self):
        if self.theta == 0.0:
            return math.inf
        return self.delta * (1.0 - self.alpha) * self.theta ** (self.alpha - 2.0)


@dataclass(frozen=True)
class GevParams:
    mu: float
    sigma: float
    xi: float

    def __post_init__(self):
        if not self.sigma > 0.0:
            raise DomainError(f"GEV scale must be positive, got {self.sigma}")
        if not (math.isfinite(self.mu) and math.isfinite(self.xi)):
            raise DomainError("GEV location and shape must be finite")

    @property
    def endpoint(self):
        """Finite support endpoint ``mu - sigma / xi`` (None for the Gumbel case)."""
        if abs(self.xi) < GUMBEL_EPS:
            return None
        return self.mu - self.sigma / self.xi


@dataclass(frozen=True)
class FrechetShape:
    shape: float

    def __post_init__(self):
        if not self.shape > 0.0:
            raise DomainError(f"Frechet shape must be positive, got {self.shape}")


# ---------------------------------------------------------------------------
# positive stable density
# ---------------------------------------------------------------------------


def _check_alpha(alpha):
    if not (0.0 < alpha < 1.0):
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")


def _log_kernel_u(u, alpha, one_minus_u=None):
    """``log a(pi u)``; ``one_minus_u`` keeps precision next to ``u = 1``."""
    u = np.asarray(u, dtype=float)
    if one_minus_u is None:
        one_minus_u = 1.0 - u
    v = np.pi * u
    sin_v = np.sin(np.pi * np.minimum(u, one_minus_u))
    log_sa = np.log(np.sin(alpha * v))
    return ((log_sa - np.log(sin_v)) / (1.0 - alpha)
            + np.log(np.sin((1.0 - alpha) * v)) - log_sa)


def tilt_kernel(v, alpha):
    """Zolotarev kernel ``a(v)`` on ``0 < v < pi``.

    ``a(v) = {sin(alpha v) / sin v}**(1/(1-alpha)) * sin((1-alpha) v) / sin(alpha v)``.
    Increases from ``alpha**(alpha/(1-alpha)) (1-alpha)`` at ``v = 0+`` to
    infinity at ``v = pi-``.
    """
    _check_alpha(alpha)
    arr = np.asarray(v, dtype=float)
    if np.any(~((arr > 0.0) & (arr < np.pi))):
        raise DomainError("tilt_kernel is defined on the open interval (0, pi)")
    out = np.exp(_log_kernel_u(arr / np.pi, alpha))
    return float(out) if np.ndim(out) == 0 else out


def _kernel_floor(alpha):
    """``a(0+)``: the infimum of the kernel."""
    return alpha ** (alpha / (1.0 - alpha)) * (1.0 - alpha)


def _ps_log_prefactor(log_x, alpha):
    return math.log(alpha / (1.0 - alpha)) - log_x / (1.0 - alpha)


def _ps_log_density_adaptive(x, alpha, log_x=None):
    """Log of the positive-stable density by adaptive quadrature over ``u``.

    ``log_x`` may be given instead of ``x`` when ``x`` itself would underflow.

    The integrand ``a exp(-c a)`` with ``c = x**(-alpha/(1-alpha))`` peaks where
    ``a = 1/c``.  The unit interval is split at 1/2 and each half is
    integrated in the logarithm of the distance to its endpoint, so peaks
    crowding either endpoint keep an O(1) width.  The peak is handed to
    QUADPACK as a breakpoint and the integrand is rescaled by its maximum so
    tiny densities keep full relative precision.
    """
    if log_x is None:
        log_x = math.log(x)
    log_c = -alpha / (1.0 - alpha) * log_x
    c = math.exp(log_c)
    floor = _kernel_floor(alpha)
    peak_left = peak_right = None
    if -log_c >= math.log(floor):
        shift = -log_c - 1.0
        target = -log_c
        mid = float(_log_kernel_u(0.5, alpha))
        if target <= mid:
            f = lambda u: float(_log_kernel_u(u, alpha, 1.0 - u)) - target  # noqa: E731
            if f(1e-300) < 0.0:
                peak_left = optimize.brentq(f, 1e-300, 0.5, xtol=1e-300, rtol=1e-14)
        else:
            g = lambda t: float(_log_kernel_u(1.0 - t, alpha, t)) - target  # noqa: E731
            if g(1e-300) > 0.0:
                peak_right = optimize.brentq(g, 1e-300, 0.5, xtol=1e-300, rtol=1e-14)
    else:
        shift = math.log(floor) - c * floor
        # the mass sits in a sliver of width ~ c**-1/2 next to u = 0
        peak_left = min(0.25, 1.0 / math.sqrt(c))

    # exponent written as d - cf * expm1(d) with d = log(a / floor) >= 0,
    # which avoids cancelling two huge terms when c is large
    log_floor = math.log(floor)
    cf = c * floor
    const = log_floor - shift - cf

    def exponent(la):
        d = max(la - log_floor, 0.0)
        return const + d - cf * math.expm1(min(d, 700.0))

    # each half is integrated in the log-distance to its endpoint
    def left(s):
        u = math.exp(s)
        return math.exp(exponent(float(_log_kernel_u(u, alpha, 1.0 - u))) + s)

    def right(s):
        t = math.exp(s)
        return math.exp(exponent(float(_log_kernel_u(1.0 - t, alpha, t))) + s)

    hi = math.log(0.5)
    # cancellation in c * (a - floor) bounds the attainable relative accuracy
    noise = 1e-14 * cf
    rel_tol = max(1e-10, noise)
    rel_fail = max(1e-6, 10.0 * noise)
    total = 0.0
    # below u = e**-60 the kernel equals its floor to machine precision
    left_lo = min(-60.0, math.log(peak_left) - 40.0) if peak_left else -60.0
    for fn, peak, lo in ((left, peak_left, left_lo), (right, peak_right, -700.0)):
        marks = [-300.0, -100.0, -40.0, -20.0, -10.0, -5.0, -2.5, -1.5]
        if peak is not None:
            lp = math.log(peak)
            marks += [lp - 3.0, lp, lp + 3.0]
        points = sorted(m for m in marks if lo < m < hi)
        res = integrate.quad(fn, lo, hi, epsabs=1e-15, epsrel=rel_tol,
                             limit=QUAD_LIMIT, points=points, full_output=1)
        value, abserr = res[0], res[1]
        if len(res) > 3 and abserr > rel_fail * abs(value) and abserr > 1e-15:
            log_pref = _ps_log_prefactor(log_x, alpha) + shift
            raise QuadratureError(
                f"quadrature did not converge at x={x}, alpha={alpha}: {res[3]}",
                estimate=value * math.exp(min(log_pref, 700.0)),
                abserr=abserr * math.exp(min(log_pref, 700.0)))
        total += value
    if total <= 0.0:
        return -math.inf
    return _ps_log_prefactor(log_x, alpha) + shift + math.log(total)


def positive_stable_density(x, alpha):
    """Density of ``PS(alpha)``, the law with Laplace transform ``exp(-s**alpha)``.

    Evaluated as ``int_0^1 alpha/(1-alpha) x**(-1/(1-alpha)) a(pi u)
    exp{-x**(-alpha/(1-alpha)) a(pi u)} du`` by adaptive quadrature.

    Raises
    ------
    DomainError
        If ``x <= 0`` or ``alpha`` is outside ``(0, 1)``.
    QuadratureError
        If QUADPACK reports non-convergence; the partial estimate is attached.
    """
    _check_alpha(alpha)
    xs = np.asarray(x, dtype=float)
    if np.any(~(xs > 0.0)):
        raise DomainError("positive_stable_density requires x > 0")
    if xs.ndim == 0:
        return math.exp(_ps_log_density_adaptive(float(xs), alpha))
    return np.array([math.exp(_ps_log_density_adaptive(float(v), alpha))
                     for v in xs.ravel()]).reshape(xs.shape)


@lru_cache(maxsize=1)
def _fixed_rule(order=32, decades=16):
    """Composite Gauss-Legendre nodes on [0, 1/2], graded toward 0.

    Returns ``(t, w)``; the rule is mirrored about 1/2 by the caller, with
    ``t`` giving the exact distance to the nearer endpoint.
    """
    edges = [0.0] + [10.0 ** (-k) for k in range(decades, 0, -1)] + [0.25, 0.5]
    gx, gw = np.polynomial.legendre.leggauss(order)
    ts, ws = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        half = 0.5 * (hi - lo)
        ts.append(lo + half * (gx + 1.0))
        ws.append(half * gw)
    return np.concatenate(ts), np.concatenate(ws)


def _log_kernel_nodes(alpha):
    t, w = _fixed_rule()
    left = _log_kernel_u(t, alpha, one_minus_u=1.0 - t)
    right = _log_kernel_u(1.0 - t, alpha, one_minus_u=t)
    return np.concatenate([left, right]), np.log(np.concatenate([w, w]))


def positive_stable_logpdf(x, alpha):
    """Vectorized log density of ``PS(alpha)`` on a fixed graded quadrature rule.

    Used in the sampler's inner loop where adaptive quadrature per point is
    too slow; agreement with :func:`positive_stable_density` is covered by
    the test-suite.
    """
    _check_alpha(alpha)
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore"):
        lx = np.log(x)
    return np.where(x > 0.0, _ps_logpdf_of_log(lx, alpha), -np.inf)


def _ps_logpdf_of_log(lx, alpha):
    """:func:`positive_stable_logpdf` as a function of ``log x``."""
    log_a, log_w = _log_kernel_nodes(alpha)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        c = np.exp(-alpha / (1.0 - alpha) * lx)
        terms = log_w + log_a - c[..., None] * np.exp(log_a)
        return (math.log(alpha / (1.0 - alpha)) - lx / (1.0 - alpha)
                + special.logsumexp(terms, axis=-1))


# ---------------------------------------------------------------------------
# Hougaard law
# ---------------------------------------------------------------------------


def hougaard_density(x, p: HougaardParams):
    """Density of ``H(alpha, delta, theta)``.

    ``f_H(x) = f_PS(x / scale) / scale * exp(-theta x) * exp(delta theta**alpha / alpha)``
    with ``scale = (delta/alpha)**(1/alpha)``; the last factor is the
    reciprocal of ``E exp(-theta X)`` for the untilted law.
    """
    xs = np.asarray(x, dtype=float)
    if np.any(~(xs > 0.0)):
        raise DomainError("hougaard_density requires x > 0")

    def one(v):
        lp = (_ps_log_density_adaptive(None, p.alpha, math.log(v) - p.log_scale)
              - p.log_scale - p.theta * v + p.delta / p.alpha * p.theta**p.alpha)
        return math.exp(lp)

    if xs.ndim == 0:
        return one(float(xs))
    return np.array([one(float(v)) for v in xs.ravel()]).reshape(xs.shape)


def hougaard_logpdf(x, alpha, theta, delta=None):
    """Vectorized log density of ``H(alpha, delta, theta)``; ``delta`` defaults to alpha.

    Broadcasts over ``x`` only; parameters are scalars.  Nonpositive ``x``
    maps to ``-inf``.
    """
    if delta is None:
        delta = alpha
    log_scale = math.log(delta / alpha) / alpha
    x = np.asarray(x, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        lx = np.log(x)
        out = (_ps_logpdf_of_log(lx - log_scale, alpha) - log_scale
               - theta * x + delta / alpha * theta**alpha)
    return np.where(x > 0.0, out, -np.inf)


def hougaard_laplace(s, p: HougaardParams):
    """Laplace transform ``exp[-(delta/alpha){(theta+s)**alpha - theta**alpha}]``."""
    s = np.asarray(s, dtype=float)
    if np.any(s < 0.0):
        raise DomainError("Laplace transform argument must be >= 0")
    out = np.exp(-(p.delta / p.alpha) * ((p.theta + s) ** p.alpha - p.theta**p.alpha))
    return float(out) if out.ndim == 0 else out


def positive_stable_sample(n, alpha, seed=None):
    """Draw ``n`` variates of ``PS(alpha)`` by the Chambers-Mallows-Stuck construction.

    With ``U ~ Uniform(0, pi)`` and ``E ~ Exp(1)``:
    ``S = sin(alpha U) / sin(U)**(1/alpha) * (sin((1-alpha) U) / E)**((1-alpha)/alpha)``.
    """
    _check_alpha(alpha)
    rng = _rng(seed)
    u = rng.random(n)
    e = rng.standard_exponential(n)
    # U = pi * u with u in (0, 1); u == 0 has probability 2**-53 and is nudged
    u = np.where(u > 0.0, u, np.finfo(float).tiny)
    v = np.pi * u
    log_s = (np.log(np.sin(alpha * v)) - np.log(np.sin(v)) / alpha
             + (1.0 - alpha) / alpha * (np.log(np.sin((1.0 - alpha) * v)) - np.log(e)))
    return np.exp(log_s)


def _tilted_by_rejection(n, alpha, lam, rng):
    """Standard tilted stable by naive rejection; returns (draws, n_unfilled)."""
    out = np.empty(n)
    filled = 0
    for _ in range(MAX_REJECTION_ROUNDS):
        need = n - filled
        if need == 0:
            break
        batch = max(16, int(1.2 * need * math.exp(lam**alpha)))
        s = positive_stable_sample(batch, alpha, rng)
        keep = s[rng.random(batch) < np.exp(-lam * s)][:need]
        out[filled:filled + keep.size] = keep
        filled += keep.size
    return out[:filled], n - filled


def _sinc(x):
    return np.sinc(x / np.pi)


def _zolotarev(x, alpha):
    return ((((1.0 - alpha) * _sinc((1.0 - alpha) * x)) ** (1.0 - alpha)
             * (alpha * _sinc(alpha * x)) ** alpha / _sinc(x)) ** (1.0 / (1.0 - alpha)))


def _tilted_by_double_rejection(n, alpha, lam, rng, max_rounds=10_000):
    """Devroye's double-rejection sampler for the exponentially tilted stable law.

    Produces ``S`` with Laplace transform ``exp(-((lam + s)**alpha - lam**alpha))``.
    The expected number of rounds is bounded uniformly in ``lam``.
    """
    b = (1.0 - alpha) / alpha
    log_lam = math.log(lam)
    lam_a = math.exp(alpha * log_lam)
    gamma = lam_a * alpha * (1.0 - alpha)
    sg = math.sqrt(gamma)
    c1 = math.sqrt(math.pi / 2.0)
    c3 = (2.0 + c1) * sg
    xi = (1.0 + math.sqrt(2.0) * c3) / math.pi
    psi = c3 * math.exp(-gamma * math.pi**2 / 8.0) / math.sqrt(math.pi)
    w1 = c1 * xi / sg
    w2 = 2.0 * math.sqrt(math.pi) * psi
    w3 = xi * math.pi

    def aux(m):
        us, zs, zetas = [], [], []
        got = 0
        for _ in range(max_rounds):
            if got >= m:
                break
            k = max(16, 2 * (m - got))
            pick = rng.random(k)
            w = rng.random(k)
            if gamma >= 1.0:
                u = np.where(pick < w1 / (w1 + w2),
                             np.abs(rng.standard_normal(k)) / sg,
                             np.pi * (1.0 - w * w))
            else:
                u = np.where(pick < w3 / (w2 + w3), np.pi * w, np.pi * (1.0 - w * w))
            inside = (u > 0.0) & (u < np.pi)
            u = np.where(inside, u, 0.5)
            zeta = np.sqrt(_sinc(u) / (_sinc(alpha * u) ** alpha
                                       * _sinc((1.0 - alpha) * u) ** (1.0 - alpha)))
            z = 1.0 / (1.0 - (1.0 + alpha * zeta / sg) ** (-1.0 / alpha))
            with np.errstate(over="ignore"):
                rho = (np.pi * np.exp(-lam_a * (1.0 - zeta**-2))
                       / ((1.0 + c1) * sg / zeta + z))
            d = psi / np.sqrt(np.pi - u)
            if gamma >= 1.0:
                d = d + xi * np.exp(-gamma * u * u / 2.0)
            else:
                d = d + xi
            zr = rng.random(k) * rho * d
            ok = inside & (zr <= 1.0)
            us.append(u[ok])
            zs.append(zr[ok])
            zetas.append(z[ok])
            got += int(ok.sum())
        if got < m:
            raise SamplerError("double-rejection auxiliary stage exceeded its round cap")
        return (np.concatenate(us)[:m], np.concatenate(zs)[:m],
                np.concatenate(zetas)[:m])

    out = np.empty(n)
    pending = np.arange(n)
    for _ in range(max_rounds):
        m = pending.size
        if m == 0:
            return out
        u, zr, z = aux(m)
        a = _zolotarev(u, alpha)
        mode = (b / a) ** alpha * lam_a
        dlt = np.sqrt(mode * alpha / a)
        a1 = dlt * c1
        a3 = z / a
        s = a1 + dlt + a3
        v2 = rng.random(m)
        nrm = rng.standard_normal(m)
        unif = rng.random(m)
        expo = rng.standard_exponential(m)
        left = v2 < a1 / s
        mid = ~left & (v2 < (a1 + dlt) / s)
        right = ~left & ~mid
        x = np.where(left, mode - dlt * np.abs(nrm),
                     np.where(mid, mode + dlt * unif, mode + dlt + expo * a3))
        nrm = np.where(left, nrm, 0.0)
        expo = np.where(right, expo, 0.0)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            xpos = np.where(x > 0.0, x, 1.0)
            c = (a * (xpos - mode)
                 + np.exp(log_lam - b * np.log(mode)) * ((mode / xpos) ** b - 1.0))
            c = c - np.where(x < mode, nrm * nrm / 2.0, 0.0)
            c = c - np.where(x > mode + dlt, expo, 0.0)
            accept = (x > 0.0) & (c <= -np.log(zr))
        out[pending[accept]] = xpos[accept] ** (-b)
        pending = pending[~accept]
    raise SamplerError("double-rejection sampler exceeded its round cap")


def hougaard_sample(n, p: HougaardParams, seed=None):
    """Draw ``n`` i.i.d. variates from ``H(alpha, delta, theta)``.

    A positive-stable draw is rescaled by ``(delta/alpha)**(1/alpha)`` and kept
    with probability ``exp(-theta x)``.  When the overall acceptance
    ``exp(-(delta/alpha) theta**alpha)`` is below 0.1, or the rejection
    rounds run out, the remainder comes from the double-rejection sampler.
    Deterministic for a given seed.
    """
    if n < 1:
        raise DomainError("sample size must be at least 1")
    rng = _rng(seed)
    alpha = p.alpha
    lam = p.tilt
    if lam == 0.0:
        std = positive_stable_sample(n, alpha, rng)
    elif p.acceptance >= MIN_ACCEPTANCE:
        std, missing = _tilted_by_rejection(n, alpha, lam, rng)
        if missing:
            std = np.concatenate([std, _tilted_by_double_rejection(missing, alpha, lam, rng)])
    else:
        std = _tilted_by_double_rejection(n, alpha, lam, rng)
    return std * p.scale


# ---------------------------------------------------------------------------
# GEV
# ---------------------------------------------------------------------------


def _gev_reduced(x, mu, sigma, xi):
    """``(-log F, log f)`` on the support; ``nan``-free outside of it."""
    x, mu, sigma, xi = np.broadcast_arrays(*(np.asarray(a, dtype=float)
                                              for a in (x, mu, sigma, xi)))
    z = (x - mu) / sigma
    gumbel = np.abs(xi) < GUMBEL_EPS
    xi_safe = np.where(gumbel, 1.0, xi)
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        arg = xi_safe * z
        inside = arg > -1.0
        lg = np.log1p(np.where(inside, arg, 0.0))
        t = np.where(gumbel, np.exp(-z), np.exp(-lg / xi_safe))
        logf = np.where(gumbel, -np.log(sigma) - z - np.exp(-z),
                        -np.log(sigma) - (1.0 + 1.0 / xi_safe) * lg - t)
    outside = ~gumbel & ~inside
    # below the lower endpoint (xi > 0): F = 0; above the upper (xi < 0): F = 1
    t = np.where(outside, np.where(xi > 0, np.inf, 0.0), t)
    logf = np.where(outside, -np.inf, logf)
    return t, logf


def gev_cdf(x, mu, sigma, xi):
    t, _ = _gev_reduced(x, mu, sigma, xi)
    return np.exp(-t)


def gev_logcdf(x, mu, sigma, xi):
    """``log F``; equals ``-t`` so it stays accurate where ``F`` is near 1."""
    t, _ = _gev_reduced(x, mu, sigma, xi)
    return -t


def gev_logpdf(x, mu, sigma, xi):
    _, logf = _gev_reduced(x, mu, sigma, xi)
    return logf


def gev_quantile_from_neglog(t, mu, sigma, xi):
    """GEV quantile at probability ``exp(-t)``, with ``t = -log p > 0``.

    Passing ``-log p`` directly avoids losing precision when ``p`` is close to 1.
    """
    t, mu, sigma, xi = np.broadcast_arrays(*(np.asarray(a, dtype=float)
                                              for a in (t, mu, sigma, xi)))
    gumbel = np.abs(xi) < GUMBEL_EPS
    xi_safe = np.where(gumbel, 1.0, xi)
    with np.errstate(divide="ignore", over="ignore"):
        lt = np.log(t)
        q = np.where(gumbel, mu - sigma * lt, mu + sigma * np.expm1(-xi_safe * lt) / xi_safe)
    return q


def gev_quantile(p, mu, sigma, xi):
    p = np.asarray(p, dtype=float)
    return gev_quantile_from_neglog(-np.log(p), mu, sigma, xi)


def gev_eval(kind, arg, p: GevParams):
    """Evaluate the GEV ``cdf``, ``quantile`` or ``logpdf`` at ``arg``.

    The Gumbel limit is used when ``|xi| < 1e-8``.  Probabilities passed to
    ``quantile`` must lie strictly inside ``(0, 1)``.
    """
    if not p.sigma > 0.0:
        raise DomainError("GEV scale must be positive")
    if kind == "quantile":
        a = np.asarray(arg, dtype=float)
        if np.any(~((a > 0.0) & (a < 1.0))):
            raise DomainError("quantile probabilities must lie in (0, 1)")
        out = gev_quantile(a, p.mu, p.sigma, p.xi)
    elif kind == "cdf":
        out = gev_cdf(arg, p.mu, p.sigma, p.xi)
    elif kind == "logpdf":
        out = gev_logpdf(arg, p.mu, p.sigma, p.xi)
    else:
        raise DomainError(f"unknown GEV evaluation kind {kind!r}")
    return float(out) if np.ndim(out) == 0 else out


# ---------------------------------------------------------------------------
# Frechet
# ---------------------------------------------------------------------------


def frechet_cdf(x, shape):
    x = np.asarray(x, dtype=float)
    if np.any(~(x > 0.0)):
        raise DomainError("Frechet cdf requires x > 0")
    with np.errstate(divide="ignore", over="ignore"):
        out = np.exp(-(x ** -float(shape)))
    return float(out) if out.ndim == 0 else out


def frechet_sample(n, shape, seed=None):
    """Unit-scale Frechet variates by inversion: ``(-log U)**(-1/shape)``."""
    rng = _rng(seed)
    u = rng.random(n)
    u = np.where(u > 0.0, u, np.finfo(float).tiny)
    return (-np.log(u)) ** (-1.0 / float(shape))


def frechet_eval(kind, arg, shape: FrechetShape, seed=None):
    """``cdf`` at ``arg``, or ``sample`` of size ``arg`` (deterministic under ``seed``)."""
    if kind == "cdf":
        return frechet_cdf(arg, shape.shape)
    if kind == "sample":
        return frechet_sample(int(arg), shape.shape, seed)
    raise DomainError(f"unknown Frechet evaluation kind {kind!r}")
