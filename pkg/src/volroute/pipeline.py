"""Run orchestration: simulate panels, fan out per-asset walk-forwards,
aggregate the evaluation report.

Assets are independent; with runtime.workers > 1 they run in separate
processes. Each worker re-reads its own inputs and writes its own record
files, so outputs are byte-identical regardless of worker count.
"""

from __future__ import annotations

import logging
import traceback
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import report as report_mod
from .backtest import run_walk_forward
from .config import RunConfig, load_config
from .errors import ConfigError, InputError
from .market_data import PanelSettings, build_panel, read_macro_csv, read_ohlc_csv
from .report import build_report, load_asset_records, write_asset_records, write_report
from .specialists import read_external_forecasts
from .synthetic import generate_synthetic_market

log = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_RUNTIME = 2

CONFIG_ECHO_NAME = "config_echo.cfg"


def panel_settings(cfg: RunConfig) -> PanelSettings:
    return PanelSettings(
        variance_floor=cfg.variance_floor,
        standardize_window=cfg.get_int("walk.train_window"),
        vix_column=cfg.get("data.vix_column"),
        state_features=tuple(cfg.get_list("data.state_features")),
        log_features=tuple(cfg.get_list("data.log_features")),
    )


def _state_names(cfg: RunConfig, macro_columns: list[str]) -> list[str]:
    declared = cfg.get_list("data.state_features")
    return declared if declared else [c for c in macro_columns if c != "date"]


def _load_external_streams(cfg: RunConfig) -> dict:
    streams = {}
    for name, binding in cfg.bindings().items():
        if binding.kind == "external":
            streams[name] = read_external_forecasts(binding.external_path, name)
    return streams


def run_single_asset(entries: dict[str, str], asset: str, outdir: str) -> None:
    """Load inputs, run the walk-forward and write record files for one asset.

    Top-level so process pools can pickle it; deterministic in its inputs.
    """
    cfg = RunConfig(entries=dict(entries))
    settings = panel_settings(cfg)
    macro = read_macro_csv(cfg.get("data.macro_file"))
    bars = read_ohlc_csv(Path(cfg.get("data.ohlc_dir")) / f"{asset}.csv")
    panel = build_panel(asset, bars, macro, settings)
    params = cfg.pipeline_params(panel.state_names, _load_external_streams(cfg))
    result = run_walk_forward(panel, params)
    write_asset_records(result, Path(outdir), cfg.config_hash())


def run_pipeline(
    cfg: RunConfig, outdir: str | Path, assets: list[str] | None = None
) -> tuple[int, report_mod.EvaluationReport | None]:
    """Run every asset, then aggregate. Returns (exit_code, report)."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    asset_list = assets if assets else cfg.assets
    if not asset_list:
        raise ConfigError("no assets configured (set `assets` or pass --assets)")
    with open(outdir / CONFIG_ECHO_NAME, "w", encoding="utf-8") as handle:
        handle.write(cfg.canonical_echo() + "\n")

    failed: dict[str, str] = {}
    workers = cfg.workers
    if workers <= 0:
        workers = 1
    if workers > 1 and len(asset_list) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = {
                asset: pool.submit(run_single_asset, cfg.entries, asset, str(outdir))
                for asset in asset_list
            }
            for asset, fut in futures.items():
                try:
                    fut.result()
                except Exception as exc:  # noqa: BLE001 - per-asset isolation
                    failed[asset] = f"{type(exc).__name__}: {exc}"
                    log.error("asset %s failed: %s", asset, exc)
    else:
        for asset in asset_list:
            try:
                run_single_asset(cfg.entries, asset, str(outdir))
            except Exception as exc:  # noqa: BLE001
                failed[asset] = f"{type(exc).__name__}: {exc}"
                log.error("asset %s failed: %s\n%s", asset, exc, traceback.format_exc())

    ok_assets = [a for a in asset_list if a not in failed]
    rep = None
    if ok_assets:
        records = [load_asset_records(outdir, a) for a in sorted(ok_assets)]
        rep = build_report(
            records,
            loss_params=cfg.effective_loss_params(),
            calm_pool=cfg.pools().calm,
            stress_pool=cfg.pools().stress,
            model_names=cfg.models,
            method_label=cfg.ablation().label(),
            variance_floor=cfg.variance_floor,
        )
        write_report(rep, outdir, cfg.entries, cfg.config_hash(), failed)

    if failed:
        any_input = any(err.startswith(("InputError", "ConfigError", "AlignmentError",
                                        "FileNotFoundError")) for err in failed.values())
        return (EXIT_INPUT if any_input else EXIT_RUNTIME), rep
    return EXIT_OK, rep


def simulate_to_dir(cfg: RunConfig, outdir: str | Path) -> list[str]:
    """Generate a synthetic multi-asset market and write run-ready inputs."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    n_assets = cfg.get_int("sim.assets")
    assets = [f"SYN{i + 1}" for i in range(n_assets)]
    bars_by_asset, macro, truth_by_asset = generate_synthetic_market(
        cfg.seed, assets, cfg.synthetic_params()
    )
    for asset in assets:
        bars_by_asset[asset].to_csv(outdir / f"{asset}.csv", index=False, lineterminator="\n")
        truth_by_asset[asset].to_csv(
            outdir / f"{asset}_truth.csv", index=False, lineterminator="\n"
        )
    macro.to_csv(outdir / "macro.csv", index=False, lineterminator="\n")

    run_cfg = [
        f"assets = {','.join(assets)}",
        f"data.ohlc_dir = {outdir}",
        f"data.macro_file = {outdir / 'macro.csv'}",
        "data.vix_column = vix_like",
        "gate.weight.vix_like = 1.0",
        "gate.weight.yield_slope = -1.0",
        "gate.weight.credit_spread = 1.0",
        f"seed = {cfg.seed}",
    ]
    with open(outdir / "run.cfg", "w", encoding="utf-8") as handle:
        handle.write("\n".join(run_cfg) + "\n")
    return assets


def report_from_dir(indir: str | Path, config_path: str | None = None) -> report_mod.EvaluationReport:
    """Re-aggregate an existing record directory into the report files."""
    indir = Path(indir)
    cfg_file = Path(config_path) if config_path else indir / CONFIG_ECHO_NAME
    if not cfg_file.exists():
        raise InputError(f"no config available for report: {cfg_file}")
    cfg = load_config(cfg_file, env={})
    assets = sorted(p.parent.name for p in indir.glob("*/forecasts.csv"))
    if not assets:
        raise InputError(f"no per-asset record directories under {indir}")
    records = [load_asset_records(indir, a) for a in assets]
    rep = build_report(
        records,
        loss_params=cfg.effective_loss_params(),
        calm_pool=cfg.pools().calm,
        stress_pool=cfg.pools().stress,
        model_names=cfg.models,
        method_label=cfg.ablation().label(),
        variance_floor=cfg.variance_floor,
    )
    write_report(rep, indir, cfg.entries, cfg.config_hash(), {})
    return rep
