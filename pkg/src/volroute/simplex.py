"""Derivative-free simplex minimizer used by the variance-model fitters.

Jitted Nelder-Mead with the classic reflect/expand/contract/shrink moves.
The objective is selected by an integer tag so the whole search compiles to
one cacheable machine-code function; objectives live in `garch.py`.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

# objective tags
OBJ_GARCH_T = 0
OBJ_FIGARCH = 1


@njit(cache=True, fastmath=True)
def garch_t_nll_params(omega, alpha, beta, nu, e2, var0):
    """Negative standardized-Student-t log-likelihood of a GARCH(1,1) filter."""
    n = e2.shape[0]
    c = (
        math.lgamma(0.5 * (nu + 1.0))
        - math.lgamma(0.5 * nu)
        - 0.5 * math.log(math.pi * (nu - 2.0))
    )
    sig2 = var0
    ll = c - 0.5 * math.log(sig2) - 0.5 * (nu + 1.0) * math.log(
        1.0 + e2[0] / (sig2 * (nu - 2.0))
    )
    for t in range(1, n):
        sig2 = omega + alpha * e2[t - 1] + beta * sig2
        if sig2 < 1e-300:
            sig2 = 1e-300
        ll += c - 0.5 * math.log(sig2) - 0.5 * (nu + 1.0) * math.log(
            1.0 + e2[t] / (sig2 * (nu - 2.0))
        )
    if not math.isfinite(ll):
        return 1e300
    return -ll


@njit(cache=True, fastmath=True)
def _garch_t_nll(u, e2, var0, aux):
    """GARCH-t objective on unconstrained coordinates.

    u0 -> log omega; u1 -> logit of persistence (alpha+beta, capped at
    0.9999); u2 -> logit of the ARCH share of that persistence; u3 -> logit
    position of nu inside (2.05, 200].
    """
    omega = math.exp(u[0])
    pers = 0.9999 / (1.0 + math.exp(-u[1]))
    share = 1.0 / (1.0 + math.exp(-u[2]))
    nu = 2.05 + 197.95 / (1.0 + math.exp(-u[3]))
    return garch_t_nll_params(omega, pers * share, pers * (1.0 - share), nu, e2, var0)


@njit(cache=True, fastmath=True)
def _figarch_lambda(d, phi, beta, n_lags):
    """Truncated ARCH-infinity weights of FIGARCH(1,d,1), clamped at zero.

    lam[k] is the weight on eps^2 at lag k; lam[0] is unused and zero.
    Recursion: lam_1 = d + phi - beta; delta_k = delta_{k-1} (k-1-d)/k with
    delta_1 = d; lam_k = beta lam_{k-1} + delta_k - phi delta_{k-1}.
    """
    lam = np.zeros(n_lags + 1)
    if n_lags < 1:
        return lam
    lam[1] = d + phi - beta
    delta_prev = d
    for k in range(2, n_lags + 1):
        delta_k = delta_prev * (k - 1.0 - d) / k
        lam[k] = beta * lam[k - 1] + delta_k - phi * delta_prev
        delta_prev = delta_k
    for k in range(n_lags + 1):
        if lam[k] < 0.0:
            lam[k] = 0.0
    return lam


@njit(cache=True, fastmath=True)
def _figarch_nll(u, e2, var0, aux):
    """Negative Student-t log-likelihood of the truncated FIGARCH filter.

    aux = [truncation_lags, nu]. Pre-sample eps^2 terms are backcast with the
    window mean so early sigma^2 values stay on the data scale. Coordinates:
    u0 -> log omega; u1..u3 -> logits of d, phi, beta in (0, 1).
    """
    omega = math.exp(u[0])
    d = 1.0 / (1.0 + math.exp(-u[1]))
    phi = 1.0 / (1.0 + math.exp(-u[2]))
    beta = 1.0 / (1.0 + math.exp(-u[3]))
    n_lags = int(aux[0])
    nu = aux[1]

    n = e2.shape[0]
    lam = _figarch_lambda(d, phi, beta, n_lags)
    pref = np.empty(n_lags + 1)
    pref[0] = 0.0
    for k in range(1, n_lags + 1):
        pref[k] = pref[k - 1] + lam[k]
    base = omega / (1.0 - beta)
    c = (
        math.lgamma(0.5 * (nu + 1.0))
        - math.lgamma(0.5 * nu)
        - 0.5 * math.log(math.pi * (nu - 2.0))
    )
    ll = 0.0
    for t in range(n):
        m = t if t < n_lags else n_lags
        acc = 0.0
        for k in range(1, m + 1):
            acc += lam[k] * e2[t - k]
        sig2 = base + acc + var0 * (pref[n_lags] - pref[m])
        if sig2 < 1e-300:
            sig2 = 1e-300
        ll += c - 0.5 * math.log(sig2) - 0.5 * (nu + 1.0) * math.log(
            1.0 + e2[t] / (sig2 * (nu - 2.0))
        )
    if not math.isfinite(ll):
        return 1e300
    return -ll


@njit(cache=True, fastmath=True)
def _objective(kind, u, e2, var0, aux):
    if kind == OBJ_GARCH_T:
        return _garch_t_nll(u, e2, var0, aux)
    return _figarch_nll(u, e2, var0, aux)


@njit(cache=True)
def minimize_simplex(kind, x0, e2, var0, aux, max_evals, ftol, step=0.25):
    """Nelder-Mead from x0; returns (x_best, f_best, n_evals, converged).

    Converged means the simplex f-spread dropped below ftol within the
    evaluation budget. The best vertex only ever improves, so f_best is
    never worse than the objective at x0.
    """
    n = x0.shape[0]
    pts = np.empty((n + 1, n))
    vals = np.empty(n + 1)
    for i in range(n + 1):
        pts[i] = x0
        if i > 0:
            pts[i, i - 1] += step
        vals[i] = _objective(kind, pts[i], e2, var0, aux)
    nev = n + 1
    converged = False
    while nev < max_evals:
        order = np.argsort(vals)
        pts = pts[order]
        vals = vals[order]
        if vals[n] - vals[0] < ftol:
            converged = True
            break
        centroid = np.zeros(n)
        for i in range(n):
            centroid += pts[i]
        centroid /= n
        xr = centroid + (centroid - pts[n])
        fr = _objective(kind, xr, e2, var0, aux)
        nev += 1
        if fr < vals[0]:
            xe = centroid + 2.0 * (centroid - pts[n])
            fe = _objective(kind, xe, e2, var0, aux)
            nev += 1
            if fe < fr:
                pts[n] = xe
                vals[n] = fe
            else:
                pts[n] = xr
                vals[n] = fr
        elif fr < vals[n - 1]:
            pts[n] = xr
            vals[n] = fr
        else:
            xc = centroid + 0.5 * (pts[n] - centroid)
            fc = _objective(kind, xc, e2, var0, aux)
            nev += 1
            if fc < vals[n]:
                pts[n] = xc
                vals[n] = fc
            else:
                for i in range(1, n + 1):
                    pts[i] = pts[0] + 0.5 * (pts[i] - pts[0])
                    vals[i] = _objective(kind, pts[i], e2, var0, aux)
                nev += n
    best = int(np.argmin(vals))
    return pts[best].copy(), vals[best], nev, converged


@njit(cache=True, fastmath=True)
def garch_filter_last(omega, alpha, beta, e2, var0):
    """Run the GARCH(1,1) variance recursion; return sigma^2 at the last obs."""
    sig2 = var0
    for t in range(1, e2.shape[0]):
        sig2 = omega + alpha * e2[t - 1] + beta * sig2
    return sig2
