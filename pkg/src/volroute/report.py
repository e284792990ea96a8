"""Assemble and persist the evaluation report and per-asset record files.

Every CSV starts with a `# config_hash=...` comment so outputs are
traceable to the exact configuration; readers in this package skip `#`
lines. summary.json carries the full config echo plus all tables.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pandas as pd

from .backtest import RunResult
from .errors import InputError
from .evaluation import (
    REGIMES,
    AssetRecords,
    delta_qlike,
    dm_test,
    method_loss_frame,
    regime_labels,
    routing_diagnostics,
    summarize_losses,
    tail_metrics,
    winner_counts,
)
from .scoring import LossParams

TABLE2_COLUMNS = ["method", "metric", "overall", "low", "mid", "high"]
TABLE3_COLUMNS = ["regime", "calm_usage", "stress_usage", "selected_regret", "miss_best_rate"]
TABLE4_COLUMNS = [
    "method",
    "overall_underpred_loss",
    "high_underpred_loss",
    "tail_underpred_loss",
    "tail_qlike",
]
DM_COLUMNS = [
    "asset",
    "dm_stat_vs_rolling_best",
    "p_value_vs_rolling_best",
    "dm_stat_vs_vix_switch",
    "p_value_vs_vix_switch",
]
DELTA_COLUMNS = ["baseline", "overall", "low", "mid", "high"]


@dataclass
class EvaluationReport:
    method_label: str
    assets: list[str]
    table2: pd.DataFrame
    table3: pd.DataFrame
    table4: pd.DataFrame
    dm: pd.DataFrame
    delta: pd.DataFrame
    winner: pd.DataFrame
    asset_qlike: pd.DataFrame
    flags: dict


def write_csv(df: pd.DataFrame, path: Path, config_hash: str) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        handle.write(f"# config_hash={config_hash}\n")
        df.to_csv(handle, index=False, lineterminator="\n")


def write_asset_records(result: RunResult, outdir: Path, config_hash: str) -> None:
    asset_dir = Path(outdir) / result.asset
    asset_dir.mkdir(parents=True, exist_ok=True)
    write_csv(result.forecasts_frame(), asset_dir / "forecasts.csv", config_hash)
    write_csv(result.losses_frame(), asset_dir / "losses.csv", config_hash)
    write_csv(result.routing_frame(), asset_dir / "routing_log.csv", config_hash)
    write_csv(result.refits_frame(), asset_dir / "refits.csv", config_hash)


def load_asset_records(outdir: Path, asset: str) -> AssetRecords:
    asset_dir = Path(outdir) / asset
    try:
        forecasts = pd.read_csv(asset_dir / "forecasts.csv", comment="#", dtype={"date": str})
        losses = pd.read_csv(asset_dir / "losses.csv", comment="#", dtype={"date": str})
        routing = pd.read_csv(
            asset_dir / "routing_log.csv", comment="#", dtype={"date": str}, keep_default_na=False,
            na_values=[""],
        )
        routing["set"] = routing["set"].fillna("").astype(str)
    except FileNotFoundError as exc:
        raise InputError(f"missing record files for asset {asset}: {exc}") from exc
    return AssetRecords(asset=asset, forecasts=forecasts, losses=losses, routing=routing)


def build_report(
    records: list[AssetRecords],
    loss_params: LossParams,
    calm_pool: tuple[str, ...],
    stress_pool: tuple[str, ...],
    model_names: list[str],
    method_label: str = "Proposed forecast",
    variance_floor: float = 1e-12,
) -> EvaluationReport:
    if not records:
        raise InputError("no asset records to evaluate")
    methods = {
        method_label: "proposed",
        "Rolling-best": "rolling_best",
        "Static-best": "static_best",
        "VIX-switch": "vix_switch",
    }
    for name in sorted(model_names):
        methods[name] = name

    per_asset = []
    flags: dict = {"degenerate_regimes": []}
    for rec in records:
        labels, degenerate = regime_labels(rec.forecasts["y_true"].to_numpy(dtype=float))
        if degenerate:
            flags["degenerate_regimes"].append(rec.asset)
        losses = method_loss_frame(rec.forecasts, methods, loss_params, variance_floor)
        per_asset.append((rec, labels, losses))

    method_order = [method_label, "Rolling-best", "Static-best", "VIX-switch"] + sorted(
        model_names
    )
    table2 = summarize_losses(per_asset, method_order)[TABLE2_COLUMNS]

    diag_frames = [
        routing_diagnostics(rec, labels, losses[method_label], calm_pool, stress_pool)
        for rec, labels, losses in per_asset
    ]
    rows = []
    for regime in REGIMES:
        cells = {"regime": regime}
        for col in TABLE3_COLUMNS[1:]:
            vals = [
                float(f.loc[f["regime"] == regime, col].iloc[0])
                for f in diag_frames
                if math.isfinite(float(f.loc[f["regime"] == regime, col].iloc[0]))
            ]
            cells[col] = float(np.median(vals)) if vals else math.nan
        rows.append(cells)
    table3 = pd.DataFrame(rows, columns=TABLE3_COLUMNS)

    table4 = pd.DataFrame(
        [{"method": method_label, **tail_metrics(per_asset, method_label)}],
        columns=TABLE4_COLUMNS,
    )

    dm_rows = []
    for rec, _, losses in per_asset:
        prop = losses[method_label]["qlike"].to_numpy()
        roll = losses["Rolling-best"]["qlike"].to_numpy()
        vix = losses["VIX-switch"]["qlike"].to_numpy()
        d_roll = dm_test(prop, roll)
        d_vix = dm_test(prop, vix)
        dm_rows.append(
            (rec.asset, d_roll.statistic, d_roll.p_value, d_vix.statistic, d_vix.p_value)
        )
    dm = pd.DataFrame(dm_rows, columns=DM_COLUMNS)

    delta = delta_qlike(per_asset, method_label, ["HAR-RV", "Rolling-best", "VIX-switch"])[
        DELTA_COLUMNS
    ]
    winner = winner_counts(per_asset, sorted(model_names))

    qlike_rows = []
    for rec, labels, losses in per_asset:
        row = {"asset": rec.asset}
        for label in (method_label, "HAR-RV", "Rolling-best"):
            vals = losses[label]["qlike"].to_numpy()
            vals = vals[np.isfinite(vals)]
            row[label] = float(np.median(vals)) if vals.size else math.nan
        qlike_rows.append(row)
    asset_qlike = pd.DataFrame(qlike_rows)

    return EvaluationReport(
        method_label=method_label,
        assets=[rec.asset for rec in records],
        table2=table2,
        table3=table3,
        table4=table4,
        dm=dm,
        delta=delta,
        winner=winner,
        asset_qlike=asset_qlike,
        flags=flags,
    )


def write_report(
    report: EvaluationReport,
    outdir: Path,
    config_entries: dict[str, str],
    config_hash: str,
    failed_assets: dict[str, str] | None = None,
) -> None:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    write_csv(report.table2, outdir / "table2.csv", config_hash)
    write_csv(report.table3, outdir / "table3.csv", config_hash)
    write_csv(report.table4, outdir / "table4.csv", config_hash)
    write_csv(report.dm, outdir / "dm.csv", config_hash)
    write_csv(report.delta, outdir / "delta_qlike.csv", config_hash)
    write_csv(report.winner, outdir / "plotdata_winner_heatmap.csv", config_hash)
    write_csv(report.asset_qlike, outdir / "plotdata_asset_qlike.csv", config_hash)
    write_csv(report.delta, outdir / "plotdata_delta_qlike.csv", config_hash)

    summary = {
        "config_hash": config_hash,
        "config": dict(sorted(config_entries.items())),
        "method": report.method_label,
        "assets": report.assets,
        "failed_assets": failed_assets or {},
        "flags": report.flags,
        "tables": {
            "table2": report.table2.to_dict(orient="records"),
            "table3": report.table3.to_dict(orient="records"),
            "table4": report.table4.to_dict(orient="records"),
            "dm": report.dm.to_dict(orient="records"),
            "delta_qlike": report.delta.to_dict(orient="records"),
        },
    }
    with open(outdir / "summary.json", "w", encoding="utf-8") as handle:
        json.dump(summary, handle, indent=2, sort_keys=True)
        handle.write("\n")
