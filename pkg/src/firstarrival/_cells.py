"""Compiled per-cell kernels for the marginal exponent and the data likelihood.

With ``k_l(s) = K_l(s)**(1/alpha)`` the marginal law of ``Z(s)`` is

    G_s(z) = exp{-V_s(z**(-1/alpha))},   V_s(w) = sum_l (theta + w k_l)**alpha - theta**alpha.

Kernels take ``log w`` and ``log k = log K / alpha`` so that small ``alpha``
cannot underflow ``k`` or overflow ``w``.  ``V_s`` is increasing and concave
with elasticity ``w V_s'(w) / V_s(w)`` in ``[alpha, 1]`` and ``V_s(w) <= w**alpha``
(the ``k_l**alpha`` sum to one), which brackets the root of ``V_s(w) = t``.
"""

import math

import numpy as np
from numba import njit

NEWTON_MAX = 200


@njit(cache=True)
def _logaddexp(a, b):
    if a == -np.inf:
        return b
    if b == -np.inf:
        return a
    if a > b:
        return a + math.log1p(math.exp(b - a))
    return b + math.log1p(math.exp(a - b))


@njit(cache=True)
def _log_v_and_elasticity(u, logk, alpha, theta):
    """``log V(w)`` and ``log(w V'(w))`` at ``w = e**u``, accumulated in log space.

    Both sums use a streaming log-sum-exp (running maximum and rescaled sum).
    """
    la = math.log(alpha)
    lth = math.log(theta) if theta > 0.0 else 0.0
    if theta > 0.0:
        rmax = -np.inf
        for l in range(logk.shape[0]):
            rmax = max(rmax, u + logk[l] - lth)
        if -600.0 < rmax < 600.0:
            # fast path: every term is representable in linear scale, and terms
            # that underflow are below e**-600 relative to the largest
            sv = se = 0.0
            for l in range(logk.shape[0]):
                x = math.exp(u + logk[l] - lth)
                l1p = math.log1p(x)
                sv += math.expm1(alpha * l1p)
                se += x * math.exp((alpha - 1.0) * l1p)
            return alpha * lth + math.log(sv), la + alpha * lth + math.log(se)
    mv = me = -np.inf
    sv = se = 0.0
    for l in range(logk.shape[0]):
        if theta > 0.0:
            r = u + logk[l] - lth
            if r == -np.inf:
                continue
            if r > 0.0:
                l1p = r + math.log1p(math.exp(-r))
                term = alpha * (lth + l1p) + math.log(-math.expm1(-alpha * l1p))
            elif r > -30.0:
                l1p = math.log1p(math.exp(r))
                term = alpha * lth + math.log(math.expm1(alpha * l1p))
            else:
                # (1 + x)**alpha - 1 = alpha x to double precision
                l1p = 0.0
                term = la + alpha * lth + r
            dterm = la + alpha * lth + r + (alpha - 1.0) * l1p
        else:
            term = alpha * (u + logk[l])
            if term == -np.inf:
                continue
            dterm = la + term
        if term > mv:
            sv = sv * math.exp(mv - term) + 1.0
            mv = term
        else:
            sv += math.exp(term - mv)
        if dterm > me:
            se = se * math.exp(me - dterm) + 1.0
            me = dterm
        else:
            se += math.exp(dterm - me)
    if mv == -np.inf:
        return -np.inf, -np.inf
    return mv + math.log(sv), me + math.log(se)


@njit(cache=True)
def neglog_marginal(logw, logk, alpha, theta):
    """``V_s(w)`` for a T x S array of ``log w`` and an L x S array ``log k``."""
    out = np.empty_like(logw)
    for t in range(logw.shape[0]):
        for s in range(logw.shape[1]):
            lw = logw[t, s]
            if lw == -np.inf:
                out[t, s] = 0.0
            elif lw == np.inf:
                out[t, s] = np.inf
            else:
                out[t, s] = math.exp(_log_v_and_elasticity(lw, logk[:, s], alpha, theta)[0])
    return out


@njit(cache=True)
def _newton(u, lv, le, lo, hi, lt, logk, alpha, theta):
    for _ in range(NEWTON_MAX):
        g = lv - lt
        if g < 0.0:
            lo = u
        else:
            hi = u
        if abs(g) <= 1e-14 or hi - lo <= 1e-14 * max(1.0, abs(u)):
            break
        un = u - g / math.exp(le - lv)
        if not lo < un < hi:
            un = 0.5 * (lo + hi)
        elif abs(un - u) <= 1e-13 * max(1.0, abs(u)):
            # converged; the slope at the previous point is accurate to the step size
            return un, le - un
        u = un
        lv, le = _log_v_and_elasticity(u, logk, alpha, theta)
    return u, le - u


@njit(cache=True)
def _solve_one(target, logk, alpha, theta):
    """Safeguarded Newton on ``log V(e**u) = log target``; returns ``(u, log V'(e**u))``."""
    if target <= 0.0:
        return -np.inf, np.inf
    if not math.isfinite(target):
        return np.inf, -np.inf
    lt = math.log(target)
    lo = lt / alpha
    lv, le = _log_v_and_elasticity(lo, logk, alpha, theta)
    if lv >= lt:
        return lo, le - lo
    return _newton(lo, lv, le, lo, lo + (lt - lv) / alpha, lt, logk, alpha, theta)


@njit(cache=True)
def _solve_warm(target, logk, alpha, theta, u0):
    """As :func:`_solve_one`, started from a nearby guess ``u0``.

    With slope of ``log V`` in ``u`` between ``alpha`` and 1, a residual ``g``
    at ``u0`` puts the root in ``[u0 - g/alpha, u0 - g]`` (or the mirror
    interval when ``g < 0``).
    """
    if target <= 0.0 or not math.isfinite(target) or not math.isfinite(u0):
        return _solve_one(target, logk, alpha, theta)
    lt = math.log(target)
    lv, le = _log_v_and_elasticity(u0, logk, alpha, theta)
    g = lv - lt
    if g > 0.0:
        lo, hi = u0 - g / alpha, u0 - g
    else:
        lo, hi = u0 - g, u0 - g / alpha
    lo -= 1e-12 * max(1.0, abs(lo))
    hi += 1e-12 * max(1.0, abs(hi))
    return _newton(u0, lv, le, lo, hi, lt, logk, alpha, theta)


@njit(cache=True)
def solve_exponent(target, logk, alpha, theta):
    """Solve ``V_s(w) = target`` cellwise; returns ``(log w, log V_s'(w))``."""
    logw = np.empty_like(target)
    logdv = np.empty_like(target)
    for t in range(target.shape[0]):
        for s in range(target.shape[1]):
            logw[t, s], logdv[t, s] = _solve_one(target[t, s], logk[:, s], alpha, theta)
    return logw, logdv


@njit(cache=True)
def solve_observed(target, logk, alpha, theta, observed):
    """:func:`solve_exponent` restricted to observed cells (others are zero)."""
    logw = np.zeros_like(target)
    logdv = np.zeros_like(target)
    for t in range(target.shape[0]):
        for s in range(target.shape[1]):
            if observed[t, s]:
                logw[t, s], logdv[t, s] = _solve_one(target[t, s], logk[:, s], alpha, theta)
    return logw, logdv


@njit(cache=True)
def solve_observed_warm(target, logk, alpha, theta, observed, guess):
    """:func:`solve_observed` warm-started from ``guess`` (previous ``log w``)."""
    logw = np.zeros_like(target)
    logdv = np.zeros_like(target)
    for t in range(target.shape[0]):
        for s in range(target.shape[1]):
            if observed[t, s]:
                logw[t, s], logdv[t, s] = _solve_warm(target[t, s], logk[:, s], alpha, theta,
                                                      guess[t, s])
    return logw, logdv


def cells_from_roots(logb, logw, logdv, ratio, target, observed):
    """Per-cell log density from cached roots: ``log B - B w + ratio - log V'(w)``.

    Conditionally on ``B = Y**(1/alpha)`` the root ``w`` is exponential with
    rate ``B``; ``ratio = log f_GEV - log F_GEV`` and ``-log V'(w)`` come from
    the change of variables.  Cells outside the GEV support are ``-inf`` and
    unobserved cells are zero.
    """
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        out = logb - np.exp(logb + logw) + ratio - logdv
    good = (target > 0.0) & np.isfinite(target) & np.isfinite(ratio)
    out = np.where(good, out, -np.inf)
    return np.where(observed, out, 0.0)


def cell_loglik(target, ratio, logb, logk, alpha, theta, observed):
    """Per-cell log density of GEV-scale observations given ``log B`` (see :func:`cells_from_roots`)."""
    logw, logdv = solve_observed(target, logk, alpha, theta, observed)
    return cells_from_roots(logb, logw, logdv, ratio, target, observed)
