"""Per-date routing: shrunk global/local quantile threshold and set selection.

The threshold shrinks a regime-local weighted quantile of recent scores
toward an unweighted global quantile, with the shrinkage weight growing in
the effective local sample size. Models at or below the threshold form the
routing set, truncated to a cardinality cap that widens under stress and
backed by a top-ranked fallback so the set is never empty.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InputError, ProtocolError


@dataclass(frozen=True)
class ThresholdParams:
    alpha: float = 0.10
    eta_cap: float = 0.80
    n0: float = 63.0
    window: int = 252
    min_observations: int = 20

    def validate(self) -> None:
        if not 0.0 < self.alpha < 1.0:
            raise ProtocolError(f"alpha must be in (0,1), got {self.alpha}")
        if not 0.0 <= self.eta_cap <= 1.0:
            raise ProtocolError(f"eta_cap must be in [0,1], got {self.eta_cap}")
        if self.n0 <= 0 or self.window <= 0:
            raise ProtocolError(f"n0 and window must be positive: {self}")


@dataclass(frozen=True)
class RoutingDecisionCore:
    date: str
    tau_global: float
    tau_local: float
    eta: float
    tau: float
    routing_set: tuple[str, ...]
    stressed: bool
    fallback_used: bool


def weighted_quantile(values, weights, q: float) -> float:
    """Left-continuous weighted empirical quantile.

    Smallest value whose normalized cumulative weight (values sorted
    ascending, ties keeping all entries) reaches q. Small inputs take a
    pure-python path (the driver calls this on handfuls of forecasts every
    date); both paths share the exact arithmetic.
    """
    if not 0.0 < q < 1.0:
        raise InputError(f"quantile level must be in (0,1), got {q}")
    n = len(values)
    if n == 0:
        raise InputError("weighted_quantile of empty values")
    if len(weights) != n:
        raise InputError("values and weights differ in length")
    if n <= 32:
        pairs = sorted(zip([float(x) for x in values], [float(x) for x in weights]),
                       key=lambda p: p[0])
        total = 0.0
        for _, w in pairs:
            if w < 0.0:
                raise InputError("negative weights")
            total += w
        if total <= 0.0:
            raise InputError("weights sum to zero")
        acc = 0.0
        for v, w in pairs:
            acc += w
            if acc / total >= q:
                return v
        return pairs[-1][0]
    v = np.asarray(values, dtype=float)
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0.0):
        raise InputError("negative weights")
    total = w.sum()
    if total <= 0.0:
        raise InputError("weights sum to zero")
    order = np.argsort(v, kind="stable")
    cum = np.cumsum(w[order]) / total
    idx = int(np.searchsorted(cum, q, side="left"))
    idx = min(idx, v.size - 1)
    return float(v[order][idx])


def quantile(values, q: float) -> float:
    """Equal-weight shorthand for the module's quantile convention."""
    n = len(values)
    if n <= 32:
        return weighted_quantile(values, [1.0] * n, q)
    return weighted_quantile(values, np.ones(n), q)


@dataclass(frozen=True)
class ThresholdResult:
    tau_global: float
    tau_local: float
    eta: float
    tau: float
    fallback: bool  # too little history: retain by rank only (tau = +inf)


def routing_threshold(
    score_pool: np.ndarray,
    pool_weights: np.ndarray,
    regime_weights: np.ndarray,
    params: ThresholdParams,
) -> ThresholdResult:
    """Shrunk threshold from the pooled score history of the trailing window.

    score_pool holds every model's score at every window date (pooled);
    pool_weights are the kernel weights of the dates those scores came from.
    regime_weights are per-date similarity weights used only for the
    effective sample size n_eff = (sum w)^2 / sum w^2.
    """
    score_pool = np.asarray(score_pool, dtype=float)
    if score_pool.size < params.min_observations:
        return ThresholdResult(math.inf, math.inf, 0.0, math.inf, True)
    q = 1.0 - params.alpha
    # one stable sort serves both the unweighted and the weighted quantile
    order = np.argsort(score_pool, kind="stable")
    v_sorted = score_pool[order]
    n = v_sorted.size
    idx_g = min(int(np.searchsorted(np.arange(1, n + 1) / n, q, side="left")), n - 1)
    tau_global = float(v_sorted[idx_g])
    w = np.asarray(pool_weights, dtype=float)[order]
    if np.any(w < 0.0):
        raise InputError("negative weights")
    total = w.sum()
    if total <= 0.0:
        raise InputError("weights sum to zero")
    cum = np.cumsum(w) / total
    idx_l = min(int(np.searchsorted(cum, q, side="left")), n - 1)
    tau_local = float(v_sorted[idx_l])
    rw = np.asarray(regime_weights, dtype=float)
    sw = rw.sum()
    n_eff = (sw * sw) / float(np.dot(rw, rw)) if sw > 0.0 else 0.0
    eta = min(params.eta_cap, n_eff / (n_eff + params.n0))
    tau = (1.0 - eta) * tau_global + eta * tau_local
    return ThresholdResult(tau_global, tau_local, eta, tau, False)


def rank_models(scores: dict[str, float], active: list[str]) -> list[str]:
    """Active models ordered by score then name; unscored ones go last, by name."""
    scored = sorted((m for m in active if m in scores), key=lambda m: (scores[m], m))
    unscored = sorted(m for m in active if m not in scores)
    return scored + unscored


def routing_set(
    scores: dict[str, float],
    active: list[str],
    tau: float,
    stressed: bool,
) -> tuple[list[str], bool]:
    """Models whose score clears tau, capped at 1 (calm) or 2 (stressed).

    Only scored models can clear the threshold; if none do, fall back to the
    single top-ranked available model. Returns (members, fallback_used).
    """
    if not active:
        raise ProtocolError("routing_set called with no active models")
    cap = 2 if stressed else 1
    candidates = sorted(
        (m for m in active if m in scores and scores[m] <= tau),
        key=lambda m: (scores[m], m),
    )
    if candidates:
        return candidates[:cap], False
    return [rank_models(scores, active)[0]], True
