"""Calm/stress branch forecasts, stress gating, and final forecast assembly.

The calm branch takes the median of the routed forecasts inside the calm
pool; the stress branch winsorizes the routed stress-pool forecasts at
their own 10th/90th percentiles and takes the 75th. A logistic stress score
of the standardized state vector drives two gates: a convex combination of
the branches and a second gate between a low-state blend (anchored on the
rolling-best benchmark) and a high-state blend (tilted further toward the
stress branch). A conditional floor replaces the result with the HAR-RV
forecast when stress or forecast disagreement is high and HAR is higher.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import BranchError, ConfigError
from .market_data import VARIANCE_FLOOR
from .routing import quantile, rank_models


@dataclass(frozen=True)
class GateParams:
    alpha_weights: tuple[float, ...] = ()   # signed per-feature weights, set from config
    c0: float = 0.0
    rho: float = 0.5
    kappa: float = 0.25
    c: float = 0.5
    b: float = 0.1
    p_floor: float = 0.65
    d_floor: float = 0.20
    epsilon: float = 1e-12
    winsor_low: float = 0.10
    winsor_high: float = 0.90
    stress_quantile: float = 0.75

    def validate(self) -> None:
        if not self.alpha_weights or not any(a != 0.0 for a in self.alpha_weights):
            raise ConfigError("gate feature weights are all zero")
        if self.b <= 0.0:
            raise ConfigError(f"gate smoothness b must be positive, got {self.b}")
        for name in ("rho", "kappa"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"gate {name} must be in [0,1], got {v}")


@dataclass(frozen=True)
class SpecialistPools:
    calm: tuple[str, ...] = ("GRU", "HAR-RV", "XGBoost")
    stress: tuple[str, ...] = ("GARCH-t", "FIGARCH", "HAR-RV")

    def validate(self) -> None:
        if not self.calm or not self.stress:
            raise ConfigError("specialist pools must be nonempty")


@dataclass
class CombinationTrace:
    date: str
    y_calm: float
    y_stress: float
    y_combo: float
    y_low: float
    y_high: float
    p: float
    omega: float
    disagreement: float
    floor_applied: bool
    y_final: float
    calm_fallback: bool = False
    stress_fallback: bool = False
    degraded: bool = field(default=False)  # both branches dead; y_final = rolling-best


def _branch_members(
    routed: list[str],
    pool: tuple[str, ...],
    scores: dict[str, float],
    active: list[str],
) -> tuple[list[str], bool]:
    """Routed-set intersection with the pool, or the top-ranked available
    pool model as fallback. Returns (members, fallback_used)."""
    members = [m for m in routed if m in pool]
    if members:
        return members, False
    available = [m for m in active if m in pool]
    if not available:
        raise BranchError(f"no active model in pool {pool}")
    return [rank_models(scores, available)[0]], True


def branch_forecast_calm(
    routed: list[str],
    forecasts: dict[str, float],
    pools: SpecialistPools,
    scores: dict[str, float],
    active: list[str],
) -> tuple[float, bool]:
    """Median of the retained calm-pool forecasts."""
    members, fb = _branch_members(routed, pools.calm, scores, active)
    vals = [forecasts[m] for m in members]
    return quantile(vals, 0.5), fb


def branch_forecast_stress(
    routed: list[str],
    forecasts: dict[str, float],
    pools: SpecialistPools,
    scores: dict[str, float],
    active: list[str],
    gate: GateParams,
) -> tuple[float, bool]:
    """75th percentile of the retained stress-pool forecasts after
    winsorizing them at their own empirical 10th/90th percentiles."""
    members, fb = _branch_members(routed, pools.stress, scores, active)
    vals = np.array([forecasts[m] for m in members])
    lo = quantile(vals, gate.winsor_low)
    hi = quantile(vals, gate.winsor_high)
    wins = np.clip(vals, lo, hi)
    return quantile(wins, gate.stress_quantile), fb


def stress_score(z: np.ndarray, gate: GateParams) -> float:
    """Logistic transform of the normalized signed linear state index."""
    a = np.asarray(gate.alpha_weights, dtype=float)
    if a.size != z.size:
        raise ConfigError(f"gate has {a.size} weights for a {z.size}-dim state vector")
    norm = math.sqrt(float(np.dot(a, a)))
    if norm == 0.0:
        raise ConfigError("gate feature weights are all zero")
    idx = float(np.dot(a, z)) / norm - gate.c0
    return 1.0 / (1.0 + math.exp(-idx))


def disagreement(forecasts: list[float], epsilon: float = 1e-12) -> float:
    """Interquartile range over absolute median, with an epsilon safeguard."""
    if not forecasts:
        raise BranchError("disagreement of an empty forecast set")
    p25 = quantile(forecasts, 0.25)
    p75 = quantile(forecasts, 0.75)
    med = quantile(forecasts, 0.5)
    return (p75 - p25) / max(abs(med), epsilon)


def final_forecast(
    date: str,
    y_calm: float,
    y_stress: float,
    y_roll: float,
    y_har: float,
    p: float,
    d: float,
    gate: GateParams,
    floor: float = VARIANCE_FLOOR,
    har_floor_enabled: bool = True,
) -> CombinationTrace:
    """Blend branches through both gates and apply the conditional HAR floor.

    All intermediate blends are convex, so the pre-floor forecast stays in
    the convex hull of {y_roll, y_calm, y_stress, y_combo}; the floor can
    only raise it.
    """
    y_combo = (1.0 - p) * y_calm + p * y_stress
    y_low = (1.0 - gate.rho) * y_roll + gate.rho * y_calm
    y_high = (1.0 - gate.kappa) * y_combo + gate.kappa * y_stress
    omega = 1.0 / (1.0 + math.exp(-(p - gate.c) / gate.b))
    y_final = (1.0 - omega) * y_low + omega * y_high
    floored = False
    if har_floor_enabled and (p >= gate.p_floor or d >= gate.d_floor):
        if y_har > y_final:
            y_final = y_har
        floored = True
    return CombinationTrace(
        date=date,
        y_calm=y_calm,
        y_stress=y_stress,
        y_combo=y_combo,
        y_low=y_low,
        y_high=y_high,
        p=p,
        omega=omega,
        disagreement=d,
        floor_applied=floored,
        y_final=max(y_final, floor),
    )
