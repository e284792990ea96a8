"""Risk-sensitive losses, per-date excess losses, and kernel-weighted scores.

Total loss is QLIKE plus a weighted squared relative-underprediction term;
excess loss (regret) is measured against the best active model on the same
date. Online scores are weighted means of regret over the trailing
evaluation window, with weights decaying in time and in market-state
distance from today.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ProtocolError
from .market_data import VARIANCE_FLOOR


@dataclass(frozen=True)
class LossParams:
    lambda_under: float = 1.0

    def validate(self) -> None:
        if not self.lambda_under >= 0.0:
            raise ProtocolError(f"lambda_under must be >= 0, got {self.lambda_under}")


@dataclass(frozen=True)
class KernelParams:
    gamma_time: float = 1.0 / 63.0
    gamma_reg: float = 2.0
    history_len: int = 252

    def validate(self) -> None:
        if self.gamma_time <= 0 or self.gamma_reg <= 0 or self.history_len <= 0:
            raise ProtocolError(f"kernel parameters must be positive: {self}")


@dataclass(frozen=True)
class LossRecord:
    date: str
    model: str
    qlike: float
    under: float
    total: float
    regret: float


def qlike(y: float, yhat: float, floor: float = VARIANCE_FLOOR) -> float:
    """QLIKE loss y/yhat - log(y/yhat) - 1; zero iff y == yhat.

    Both arguments are truncated below at the common variance floor before
    the ratio is formed.
    """
    y = max(y, floor)
    yhat = max(yhat, floor)
    r = y / yhat
    return r - math.log(r) - 1.0


def underprediction_loss(y: float, yhat: float, floor: float = VARIANCE_FLOOR) -> float:
    """Squared relative shortfall (max(y - yhat, 0)/y)^2, in [0, 1)."""
    y = max(y, floor)
    short = y - max(yhat, floor)
    if short <= 0.0:
        return 0.0
    frac = short / y
    return frac * frac


def total_loss(y: float, yhat: float, params: LossParams, floor: float = VARIANCE_FLOOR) -> tuple[float, float, float]:
    """(qlike, underprediction, total) for one forecast."""
    q = qlike(y, yhat, floor)
    u = underprediction_loss(y, yhat, floor)
    return q, u, q + params.lambda_under * u


def total_and_regret(
    date: str,
    y: float,
    forecasts: dict[str, float],
    params: LossParams,
    floor: float = VARIANCE_FLOOR,
) -> list[LossRecord]:
    """Losses for every active model on one date, with regret against the
    best active total. At least one record has regret exactly zero."""
    if not forecasts:
        raise ProtocolError(f"{date}: empty active set")
    rows = []
    for model, yhat in forecasts.items():
        q, u, tot = total_loss(y, yhat, params, floor)
        rows.append((model, q, u, tot))
    best = min(r[3] for r in rows)
    return [
        LossRecord(date=date, model=m, qlike=q, under=u, total=t, regret=t - best)
        for m, q, u, t in rows
    ]


def kernel_weights(
    lags: np.ndarray, z_now: np.ndarray, z_hist: np.ndarray, params: KernelParams
) -> np.ndarray:
    """Raw (unnormalized) weights exp(-g_time*lag) * exp(-|z_t - z_s|^2 / g_reg^2).

    ``lags`` holds t - s in trading days for each history row of ``z_hist``.
    Consumers normalize; scores and quantiles are invariant to a common
    positive rescaling of these weights.
    """
    lags = np.asarray(lags, dtype=float)
    d2 = np.sum((z_hist - z_now[None, :]) ** 2, axis=1)
    return np.exp(-params.gamma_time * lags) * np.exp(-d2 / (params.gamma_reg**2))


def regime_similarity_weights(
    z_now: np.ndarray, z_hist: np.ndarray, params: KernelParams
) -> np.ndarray:
    """The state-similarity factor alone (used for the effective sample size)."""
    d2 = np.sum((z_hist - z_now[None, :]) ** 2, axis=1)
    return np.exp(-d2 / (params.gamma_reg**2))


def model_scores(regrets: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Per-model weighted mean regret over the trailing window.

    ``regrets`` is (n_dates, n_models) with nan marking dates where a model
    was inactive; weights renormalize over each model's active dates. A
    model active on zero window dates comes back nan (unscored). Raises if
    nothing at all can be scored.
    """
    regrets = np.asarray(regrets, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if regrets.ndim != 2 or regrets.shape[0] != weights.shape[0]:
        raise ProtocolError("regret matrix and weights are misaligned")
    active = np.isfinite(regrets)
    wsum = active.T @ weights
    contrib = np.where(active, regrets, 0.0).T @ weights
    scores = np.full(regrets.shape[1], np.nan)
    live = wsum > 0.0
    scores[live] = contrib[live] / wsum[live]
    if not np.any(live):
        raise ProtocolError("no model has any scored history in the window")
    return scores
