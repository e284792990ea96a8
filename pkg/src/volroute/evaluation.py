"""Regime-conditioned report surfaces: loss tables, routing diagnostics,
Diebold-Mariano tests, tail metrics and relative-QLIKE tables.

Regime labels are terciles of the realized Garman-Klass proxy over the full
evaluation sample, per asset, used only for grouping. Cross-asset numbers
are medians of per-asset medians throughout. DM statistics use the
Newey-West long-run variance of the per-date loss differential with the
automatic Bartlett lag floor(4*(n/100)^(2/9)) and a two-sided normal
reference; the differential is proposed minus benchmark, so negative
statistics favor the proposed forecast.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .errors import InputError
from .market_data import VARIANCE_FLOOR
from .scoring import LossParams, qlike, underprediction_loss

REGIMES = ("overall", "low", "mid", "high")
BASELINE_METHODS = {
    "rolling_best": "Rolling-best",
    "static_best": "Static-best",
    "vix_switch": "VIX-switch",
}


@dataclass
class AssetRecords:
    """One asset's walk-forward record files, as frames."""

    asset: str
    forecasts: pd.DataFrame
    losses: pd.DataFrame
    routing: pd.DataFrame


def regime_labels(proxy: np.ndarray) -> tuple[np.ndarray, bool]:
    """Tercile labels ('low'/'mid'/'high') of the realized proxy.

    Boundaries follow the cumulative-mass quantile convention: the low cut
    is the smallest value reaching mass 1/3, the high cut the smallest value
    strictly exceeding mass 2/3; low wins ties. Returns (labels, degenerate)
    where degenerate flags an all-low labelling (constant proxy).
    """
    v = np.asarray(proxy, dtype=float)
    if v.size == 0:
        raise InputError("regime_labels of empty sample")
    vs = np.sort(v)
    cum = np.arange(1, v.size + 1) / v.size
    cut_low = vs[min(int(np.searchsorted(cum, 1.0 / 3.0, side="left")), v.size - 1)]
    cut_high = vs[min(int(np.searchsorted(cum, 2.0 / 3.0, side="right")), v.size - 1)]
    labels = np.where(v <= cut_low, "low", np.where(v >= cut_high, "high", "mid"))
    degenerate = bool(np.all(labels == "low"))
    return labels, degenerate


def nw_lag(n: int) -> int:
    """Automatic Bartlett bandwidth floor(4*(n/100)^(2/9))."""
    return int(math.floor(4.0 * (n / 100.0) ** (2.0 / 9.0)))


def newey_west_lrv(d: np.ndarray, lag: int) -> float:
    """Long-run variance with Bartlett weights 1 - j/(lag+1)."""
    d = np.asarray(d, dtype=float)
    n = d.size
    x = d - d.mean()
    gamma0 = float(np.dot(x, x)) / n
    acc = gamma0
    for j in range(1, min(lag, n - 1) + 1):
        gamma_j = float(np.dot(x[j:], x[:-j])) / n
        acc += 2.0 * (1.0 - j / (lag + 1.0)) * gamma_j
    return acc


@dataclass(frozen=True)
class DmResult:
    statistic: float
    p_value: float
    lag: int
    n: int
    degenerate: bool = False


def dm_test(loss_a: np.ndarray, loss_b: np.ndarray) -> DmResult:
    """Diebold-Mariano test on the differential d = loss_a - loss_b."""
    a = np.asarray(loss_a, dtype=float)
    b = np.asarray(loss_b, dtype=float)
    if a.shape != b.shape:
        raise InputError("loss series are misaligned")
    keep = np.isfinite(a) & np.isfinite(b)
    d = a[keep] - b[keep]
    n = d.size
    if n < 30:
        raise InputError(f"DM test needs >= 30 aligned observations, got {n}")
    lag = nw_lag(n)
    lrv = newey_west_lrv(d, lag)
    if lrv <= 0.0:
        return DmResult(0.0, 1.0, lag, n, degenerate=True)
    stat = float(d.mean()) / math.sqrt(lrv / n)
    p = math.erfc(abs(stat) / math.sqrt(2.0))
    return DmResult(stat, p, lag, n)


def method_loss_frame(
    forecasts: pd.DataFrame,
    methods: dict[str, str],
    loss_params: LossParams,
    floor: float = VARIANCE_FLOOR,
) -> dict[str, pd.DataFrame]:
    """Per-method per-date losses recomputed from the forecast records.

    methods maps display label -> forecast column. Returns, per label, a
    frame with qlike/under/total columns aligned to the forecast dates (nan
    where the stream was inactive)."""
    y = forecasts["y_true"].to_numpy(dtype=float)
    out = {}
    for label, col in methods.items():
        yhat = forecasts[col].to_numpy(dtype=float)
        q = np.full(y.size, np.nan)
        u = np.full(y.size, np.nan)
        live = np.isfinite(yhat)
        q[live] = [qlike(yi, fi, floor) for yi, fi in zip(y[live], yhat[live])]
        u[live] = [underprediction_loss(yi, fi, floor) for yi, fi in zip(y[live], yhat[live])]
        out[label] = pd.DataFrame(
            {"qlike": q, "under": u, "total": q + loss_params.lambda_under * u}
        )
    return out


def _regime_median(values: np.ndarray, labels: np.ndarray, regime: str) -> float:
    mask = np.ones(values.size, dtype=bool) if regime == "overall" else labels == regime
    vals = values[mask]
    vals = vals[np.isfinite(vals)]
    return float(np.median(vals)) if vals.size else math.nan


def summarize_losses(
    per_asset: list[tuple[AssetRecords, np.ndarray, dict[str, pd.DataFrame]]],
    method_order: list[str],
) -> pd.DataFrame:
    """Cross-asset median loss table by regime (one row per method x metric)."""
    rows = []
    for metric in ("qlike", "under"):
        for label in method_order:
            cells = {"method": label, "metric": metric}
            for regime in REGIMES:
                per = [
                    _regime_median(losses[label][metric].to_numpy(), labels, regime)
                    for _, labels, losses in per_asset
                ]
                per = [v for v in per if math.isfinite(v)]
                cells[regime] = float(np.median(per)) if per else math.nan
            rows.append(cells)
    return pd.DataFrame(rows, columns=["method", "metric", *REGIMES])


def routing_diagnostics(
    rec: AssetRecords,
    labels: np.ndarray,
    proposed_losses: pd.DataFrame,
    calm_pool: tuple[str, ...],
    stress_pool: tuple[str, ...],
) -> pd.DataFrame:
    """Per-regime calm/stress usage, selected regret and miss-best rate.

    Branch usage counts dates whose routing set intersects the pool (branch
    fallbacks do not count as usage). Selected regret is the loss gap of the
    proposed forecast to the best active model, floored at zero."""
    sets = [set(s.split("|")) if s else set() for s in rec.routing["set"].astype(str)]
    calm_use = np.array([len(s & set(calm_pool)) >= 1 for s in sets])
    stress_use = np.array([len(s & set(stress_pool)) >= 1 for s in sets])

    piv_total = rec.losses.pivot(index="date", columns="model", values="total")
    piv_total = piv_total.loc[rec.routing["date"]]
    min_total = piv_total.min(axis=1).to_numpy()
    prop_total = proposed_losses["total"].to_numpy()
    sel_regret = np.maximum(prop_total - min_total, 0.0)

    best_sets = [
        set(row.index[row == row.min()]) for _, row in piv_total.iterrows()
    ]
    miss = np.array([len(b & s) == 0 for b, s in zip(best_sets, sets)])

    rows = []
    for regime in REGIMES:
        mask = np.ones(len(sets), dtype=bool) if regime == "overall" else labels == regime
        if not mask.any():
            rows.append((regime, math.nan, math.nan, math.nan, math.nan))
            continue
        rows.append(
            (
                regime,
                float(np.mean(calm_use[mask])),
                float(np.mean(stress_use[mask])),
                float(np.mean(sel_regret[mask])),
                float(np.mean(miss[mask])),
            )
        )
    return pd.DataFrame(
        rows,
        columns=["regime", "calm_usage", "stress_usage", "selected_regret", "miss_best_rate"],
    )


def tail_mask(proxy: np.ndarray) -> np.ndarray:
    """Dates in the top decile of the realized proxy.

    High-side cut: the smallest value whose cumulative mass strictly exceeds
    0.9 (same convention as the high-regime tercile boundary), so on ten
    distinct values exactly the maximum survives."""
    v = np.asarray(proxy, dtype=float)
    vs = np.sort(v)
    cum = np.arange(1, v.size + 1) / v.size
    cut = vs[min(int(np.searchsorted(cum, 0.9, side="right")), v.size - 1)]
    return v >= cut


def tail_metrics(
    per_asset: list[tuple[AssetRecords, np.ndarray, dict[str, pd.DataFrame]]],
    label: str,
) -> dict[str, float]:
    """Cross-asset medians of overall/high/tail underprediction and tail QLIKE."""
    overall, high, tail_u, tail_q = [], [], [], []
    for rec, labels, losses in per_asset:
        y = rec.forecasts["y_true"].to_numpy(dtype=float)
        mask = tail_mask(y)
        frame = losses[label]
        overall.append(_regime_median(frame["under"].to_numpy(), labels, "overall"))
        high.append(_regime_median(frame["under"].to_numpy(), labels, "high"))
        tu = frame["under"].to_numpy()[mask]
        tq = frame["qlike"].to_numpy()[mask]
        tail_u.append(float(np.median(tu[np.isfinite(tu)])) if np.isfinite(tu).any() else math.nan)
        tail_q.append(float(np.median(tq[np.isfinite(tq)])) if np.isfinite(tq).any() else math.nan)

    def med(vals):
        vals = [v for v in vals if math.isfinite(v)]
        return float(np.median(vals)) if vals else math.nan

    return {
        "overall_underpred_loss": med(overall),
        "high_underpred_loss": med(high),
        "tail_underpred_loss": med(tail_u),
        "tail_qlike": med(tail_q),
    }


def delta_qlike(
    per_asset: list[tuple[AssetRecords, np.ndarray, dict[str, pd.DataFrame]]],
    proposed_label: str,
    baseline_labels: list[str],
) -> pd.DataFrame:
    """Cross-asset median QLIKE difference (proposed minus baseline) by regime."""
    rows = []
    for base in baseline_labels:
        cells = {"baseline": base}
        for regime in REGIMES:
            diffs = []
            for _, labels, losses in per_asset:
                p = _regime_median(losses[proposed_label]["qlike"].to_numpy(), labels, regime)
                b = _regime_median(losses[base]["qlike"].to_numpy(), labels, regime)
                if math.isfinite(p) and math.isfinite(b):
                    diffs.append(p - b)
            cells[regime] = float(np.median(diffs)) if diffs else math.nan
        rows.append(cells)
    return pd.DataFrame(rows, columns=["baseline", *REGIMES])


def winner_counts(
    per_asset: list[tuple[AssetRecords, np.ndarray, dict[str, pd.DataFrame]]],
    models: list[str],
) -> pd.DataFrame:
    """Per regime: number of assets on which each model wins most dates
    (lowest total loss among active models)."""
    rows = []
    for regime in REGIMES:
        counts = {m: 0 for m in models}
        for rec, labels, _ in per_asset:
            piv = rec.losses.pivot(index="date", columns="model", values="total")
            piv = piv.loc[rec.routing["date"]]
            mask = np.ones(len(piv), dtype=bool) if regime == "overall" else labels == regime
            sub = piv.loc[mask]
            if sub.empty:
                continue
            wins = sub.idxmin(axis=1).value_counts()
            best = sorted(wins.index[wins == wins.max()])[0]
            if best in counts:
                counts[best] += 1
        for m in models:
            rows.append((regime, m, counts[m]))
    return pd.DataFrame(rows, columns=["regime", "model", "assets_won"])
