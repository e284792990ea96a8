"""GARCH(1,1)-t and FIGARCH(1,d,1) estimation via multi-start simplex MLE.

Both models are fitted on window-demeaned returns by maximizing the
standardized Student-t likelihood over unconstrained log/logit transforms
of the parameters (see `simplex.py` for the exact coordinates). Every fit
runs the same three fixed starts and returns the best vertex found; a fit
counts as failed only when no start converges within the budget.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import simplex
from .errors import FitError
from .market_data import VARIANCE_FLOOR

GARCH_MIN_OBS = 250
GARCH_STARTS = ((0.05, 0.90), (0.10, 0.85), (0.02, 0.95))  # (alpha, beta)
GARCH_START_NU = 8.0
FIGARCH_STARTS = ((0.40, 0.20, 0.50), (0.30, 0.10, 0.60), (0.50, 0.30, 0.40))  # (d, phi, beta)
FIGARCH_NU = 8.0  # innovation dof held fixed; only (omega, d, phi, beta) are estimated
MAX_EVALS = 2000
NLL_TOL = 1e-8

_EMPTY_AUX = np.empty(0)


def _logit(p: float) -> float:
    return math.log(p / (1.0 - p))


def _sigmoid(u: float) -> float:
    return 1.0 / (1.0 + math.exp(-u))


@dataclass(frozen=True)
class GarchTParams:
    omega: float
    alpha: float
    beta: float
    nu: float

    def validate(self) -> None:
        ok = (
            self.omega > 0.0
            and self.alpha >= 0.0
            and self.beta >= 0.0
            and self.alpha + self.beta <= 0.9999
            and 2.05 < self.nu <= 200.0
        )
        if not ok:
            raise FitError(f"invalid GARCH-t parameters {self}")


@dataclass(frozen=True)
class GarchTFit:
    params: GarchTParams
    mean: float
    last_eps2: float
    last_sig2: float
    loglik: float


def _garch_u0(alpha: float, beta: float, nu: float, var0: float) -> np.ndarray:
    pers = alpha + beta
    return np.array(
        [
            math.log(max(var0 * (1.0 - pers), 1e-16)),
            _logit(pers / 0.9999),
            _logit(alpha / pers),
            _logit((nu - 2.05) / 197.95),
        ]
    )


def _garch_params_from_u(u: np.ndarray) -> GarchTParams:
    pers = 0.9999 * _sigmoid(u[1])
    share = _sigmoid(u[2])
    return GarchTParams(
        omega=math.exp(u[0]),
        alpha=pers * share,
        beta=pers * (1.0 - share),
        nu=2.05 + 197.95 * _sigmoid(u[3]),
    )


def _demean(returns: np.ndarray) -> tuple[float, np.ndarray, float]:
    mu = float(np.mean(returns))
    e = returns - mu
    e2 = e * e
    return mu, e2, float(np.mean(e2))


def fit_garch_t(returns: np.ndarray) -> GarchTFit:
    """Fit GARCH(1,1) with Student-t innovations on a return window.

    sigma^2_1 is the window sample variance; returns are demeaned by the
    window mean. Raises FitError when the window is too short or no simplex
    start converges.
    """
    returns = np.asarray(returns, dtype=float)
    returns = returns[np.isfinite(returns)]
    if returns.size < GARCH_MIN_OBS:
        raise FitError(f"GARCH-t needs >= {GARCH_MIN_OBS} finite returns, got {returns.size}")
    mu, e2, var0 = _demean(returns)

    best_u, best_f = None, math.inf
    any_converged = False
    for alpha, beta in GARCH_STARTS:
        u0 = _garch_u0(alpha, beta, GARCH_START_NU, var0)
        u, f, _, conv = simplex.minimize_simplex(
            simplex.OBJ_GARCH_T, u0, e2, var0, _EMPTY_AUX, MAX_EVALS, NLL_TOL
        )
        any_converged = any_converged or conv
        if f < best_f:
            best_u, best_f = u, f
    if not any_converged:
        raise FitError("GARCH-t: no simplex start converged")

    params = _garch_params_from_u(best_u)
    params.validate()
    last_sig2 = simplex.garch_filter_last(params.omega, params.alpha, params.beta, e2, var0)
    return GarchTFit(
        params=params,
        mean=mu,
        last_eps2=float(e2[-1]),
        last_sig2=float(last_sig2),
        loglik=-best_f,
    )


def garch_t_state(params: GarchTParams, returns: np.ndarray) -> GarchTFit:
    """Re-filter a window under fixed parameters (fallback after a failed fit)."""
    returns = np.asarray(returns, dtype=float)
    mu, e2, var0 = _demean(returns)
    last_sig2 = simplex.garch_filter_last(params.omega, params.alpha, params.beta, e2, var0)
    nll = simplex.garch_t_nll_params(
        params.omega, params.alpha, params.beta, params.nu, e2, var0
    )
    return GarchTFit(params, mu, float(e2[-1]), float(last_sig2), -float(nll))


def garch_t_nll_at(params: GarchTParams, returns: np.ndarray) -> float:
    """Negative log-likelihood of a window at given parameters."""
    returns = np.asarray(returns, dtype=float)
    _, e2, var0 = _demean(returns)
    return float(
        simplex.garch_t_nll_params(params.omega, params.alpha, params.beta, params.nu, e2, var0)
    )


def forecast_garch_t(
    params: GarchTParams, last_eps2: float, last_sig2: float, floor: float = VARIANCE_FLOOR
) -> float:
    """One-step variance forecast omega + alpha*eps^2_t + beta*sigma^2_t."""
    return max(params.omega + params.alpha * last_eps2 + params.beta * last_sig2, floor)


@dataclass(frozen=True)
class FigarchParams:
    omega: float
    d: float
    phi: float
    beta: float
    truncation_lags: int = 1000

    def validate(self) -> None:
        ok = (
            self.omega > 0.0
            and 0.0 <= self.d < 1.0
            and 0.0 <= self.phi < 1.0
            and 0.0 <= self.beta < 1.0
            and self.truncation_lags >= 1
        )
        if not ok:
            raise FitError(f"invalid FIGARCH parameters {self}")


@dataclass(frozen=True)
class FigarchFit:
    params: FigarchParams
    mean: float
    loglik: float


def figarch_weights(d: float, phi: float, beta: float, n_lags: int) -> np.ndarray:
    """ARCH-infinity weights lam[1..n_lags] (lam[0] = 0), clamped at zero."""
    return simplex._figarch_lambda(d, phi, beta, n_lags)


def _figarch_u0(d: float, phi: float, beta: float, var0: float, n_lags: int) -> np.ndarray:
    lam_sum = float(np.sum(figarch_weights(d, phi, beta, n_lags)))
    omega0 = max(var0 * max(1.0 - lam_sum, 1e-4) * (1.0 - beta), 1e-16)
    return np.array([math.log(omega0), _logit(d), _logit(phi), _logit(beta)])


def fit_figarch(returns: np.ndarray, truncation_lags: int = 1000) -> FigarchFit:
    """Fit FIGARCH(1,d,1) by the same multi-start simplex MLE as GARCH-t.

    The innovation dof is held at FIGARCH_NU; free parameters are
    (omega, d, phi, beta). Pre-sample eps^2 values inside the likelihood are
    backcast with the window mean of eps^2.
    """
    returns = np.asarray(returns, dtype=float)
    returns = returns[np.isfinite(returns)]
    if returns.size < GARCH_MIN_OBS:
        raise FitError(f"FIGARCH needs >= {GARCH_MIN_OBS} finite returns, got {returns.size}")
    mu, e2, var0 = _demean(returns)
    aux = np.array([float(truncation_lags), FIGARCH_NU])

    best_u, best_f = None, math.inf
    any_converged = False
    for d, phi, beta in FIGARCH_STARTS:
        u0 = _figarch_u0(d, phi, beta, var0, truncation_lags)
        u, f, _, conv = simplex.minimize_simplex(
            simplex.OBJ_FIGARCH, u0, e2, var0, aux, MAX_EVALS, NLL_TOL
        )
        any_converged = any_converged or conv
        if f < best_f:
            best_u, best_f = u, f
    if not any_converged:
        raise FitError("FIGARCH: no simplex start converged")

    params = FigarchParams(
        omega=math.exp(best_u[0]),
        d=_sigmoid(best_u[1]),
        phi=_sigmoid(best_u[2]),
        beta=_sigmoid(best_u[3]),
        truncation_lags=truncation_lags,
    )
    params.validate()
    return FigarchFit(params=params, mean=mu, loglik=-best_f)


def forecast_figarch(
    params: FigarchParams, eps2_history: np.ndarray, floor: float = VARIANCE_FLOOR
) -> float:
    """One-step forecast omega/(1-beta) + sum_k lam_k eps^2_{t+1-k}.

    Uses whatever history is available up to the truncation horizon; the
    truncated sum is taken as-is (no renormalization, no backcast).
    """
    eps2 = np.asarray(eps2_history, dtype=float)
    m = min(eps2.size, params.truncation_lags)
    if m < 1:
        raise FitError("FIGARCH forecast needs at least one eps^2 observation")
    lam = figarch_weights(params.d, params.phi, params.beta, m)
    acc = float(np.dot(lam[1 : m + 1], eps2[::-1][:m]))
    return max(params.omega / (1.0 - params.beta) + acc, floor)
