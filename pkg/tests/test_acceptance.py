"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

The synthetic-experiment criteria share expensive fixtures (walk-forward
runs over multi-asset panels); fixture wall time is charged to the first
criterion that needs it, and the printed line reports the measured runtime
against the budget.
"""

from __future__ import annotations

import functools
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
import pytest

from volroute.backtest import (
    AblationFlags,
    ForecastStreams,
    PipelineParams,
    WalkForwardConfig,
    compute_forecast_streams,
    run_walk_forward,
)
from volroute.combiner import GateParams, SpecialistPools
from volroute.evaluation import dm_test, nw_lag, regime_labels, tail_mask
from volroute.garch import (
    FigarchParams,
    GarchTParams,
    figarch_weights,
    fit_garch_t,
    forecast_figarch,
    forecast_garch_t,
)
from volroute.market_data import PanelSettings, build_panel
from volroute.routing import ThresholdParams, weighted_quantile
from volroute.scoring import KernelParams, LossParams, qlike, underprediction_loss
from volroute.specialists import ExternalStream, ewma_forecast_path, fit_har, parse_binding
from volroute.synthetic import SyntheticParams, generate_synthetic_market

WORKERS = 2


def report_line(num: int, name: str, ok: bool, detail: str = "") -> None:
    status = "PASS" if ok else "FAIL"
    suffix = f" ({detail})" if detail else ""
    print(f"\nACCEPTANCE {num} {name}: {status}{suffix}")


def criterion(num: int, name: str):
    """Print the one-line verdict whether the body passes or raises."""

    def wrap(fn):
        @functools.wraps(fn)
        def inner(*args, **kwargs):
            try:
                detail = fn(*args, **kwargs)
            except BaseException:
                report_line(num, name, ok=False)
                raise
            report_line(num, name, ok=True, detail=detail or "")

        return inner

    return wrap


# -- 1: loss-function suite ---------------------------------------------------


@criterion(1, "loss-function suite")
def test_acceptance_1_losses():
    t0 = time.time()
    rng = np.random.default_rng(0)
    # zero at truth / hand values
    assert qlike(3e-4, 3e-4) == 0.0
    assert qlike(2e-4, 1e-4) == pytest.approx(2.0 - math.log(2.0) - 1.0, abs=1e-12)
    assert underprediction_loss(4e-4, 1e-4) == pytest.approx(0.5625, abs=1e-12)
    assert underprediction_loss(1e-4, 2e-4) == 0.0
    # scale invariance
    for _ in range(200):
        y = 10.0 ** rng.uniform(-8, -2)
        f = y * 10.0 ** rng.uniform(-1, 1)
        c = 10.0 ** rng.uniform(-3, 3)
        assert qlike(c * y, c * f) == pytest.approx(qlike(y, f), abs=1e-12)
    # monotonicity on a 1,000-point grid around a fixed truth
    y = 2e-4
    below = np.linspace(1e-6, y, 500)
    above = np.linspace(y, 4e-3, 501)[1:]
    vb = [qlike(y, g) for g in below]
    va = [qlike(y, g) for g in above]
    assert all(a > b for a, b in zip(vb, vb[1:]))
    assert all(a < b for a, b in zip(va, va[1:]))
    elapsed = time.time() - t0
    assert elapsed < 1.0
    return f"{elapsed:.2f}s < 1s"


# -- 2: weighted-quantile oracle ---------------------------------------------


def _brute_quantile(values, weights, q):
    pairs = sorted(zip(values, weights), key=lambda p: p[0])
    total = sum(w for _, w in pairs)
    acc = 0.0
    for v, w in pairs:
        acc += w
        if acc / total >= q:
            return v
    return pairs[-1][0]


@criterion(2, "weighted-quantile oracle")
def test_acceptance_2_quantile():
    t0 = time.time()
    rng = np.random.default_rng(7)
    for _ in range(1000):
        n = int(rng.integers(1, 21))
        values = rng.normal(size=n)
        if rng.random() < 0.3:
            values = np.round(values, 1)
        weights = rng.random(n) + 1e-3
        q = float(rng.uniform(0.01, 0.99))
        assert weighted_quantile(values, weights, q) == _brute_quantile(values, weights, q)
    elapsed = time.time() - t0
    assert elapsed < 1.0
    return f"1000 cases exact, {elapsed:.2f}s < 1s"


# -- 3: estimator recovery ----------------------------------------------------


def _simulate_garch_t(omega, alpha, beta, nu, n, seed, burn=500):
    rng = np.random.default_rng(seed)
    z = rng.standard_t(nu, size=n + burn) * math.sqrt((nu - 2.0) / nu)
    sig2 = omega / (1.0 - alpha - beta)
    r = np.empty(n + burn)
    for t in range(n + burn):
        r[t] = math.sqrt(sig2) * z[t]
        sig2 = omega + alpha * r[t] ** 2 + beta * sig2
    return r[burn:]


@criterion(3, "estimator recovery")
def test_acceptance_3_estimators():
    t0 = time.time()
    # HAR: exact recovery on a noiseless relation seeded with random history
    rng = np.random.default_rng(11)
    rv = np.empty(504)
    rv[:22] = rng.uniform(0.5, 1.5, size=22)
    b = (1e-5, 0.1, 0.2, 0.3)
    for t in range(21, 503):
        rv[t + 1] = (
            b[0] + b[1] * rv[t] + b[2] * rv[t - 4 : t + 1].mean() + b[3] * rv[t - 21 : t + 1].mean()
        )
    coeffs = fit_har(rv)
    for got, want in zip((coeffs.beta0, coeffs.beta_d, coeffs.beta_w, coeffs.beta_m), b):
        assert got == pytest.approx(want, abs=1e-8)

    # GARCH-t: seeded simulation recovery at stated tolerances
    r = _simulate_garch_t(2e-6, 0.08, 0.90, 8.0, n=4000, seed=1234)
    fit = fit_garch_t(r)
    assert abs(fit.params.alpha - 0.08) <= 0.03
    assert abs(fit.params.beta - 0.90) <= 0.04
    assert 5.0 <= fit.params.nu <= 14.0

    # FIGARCH(d=0, phi, beta) == unrolled GARCH(alpha=phi-beta, beta)
    omega, phi, beta = 1e-6, 0.88, 0.80
    rng = np.random.default_rng(3)
    rr = rng.normal(0, 0.01, size=1500)
    e2 = (rr - rr.mean()) ** 2
    fig = FigarchParams(omega=omega, d=0.0, phi=phi, beta=beta, truncation_lags=1000)
    sig2 = e2.mean()
    for t in range(1, e2.size):
        sig2 = omega + (phi - beta) * e2[t - 1] + beta * sig2
    g = GarchTParams(omega=omega, alpha=phi - beta, beta=beta, nu=8.0)
    assert forecast_figarch(fig, e2) == pytest.approx(
        forecast_garch_t(g, float(e2[-1]), float(sig2)), abs=1e-8
    )
    elapsed = time.time() - t0
    assert elapsed < 60.0
    return f"{elapsed:.1f}s < 60s"


# -- 4: DM / HAC ---------------------------------------------------------------


def _brute_force_dm(d, lag):
    n = len(d)
    x = d - np.mean(d)
    lrv = 0.0
    for j in range(-lag, lag + 1):
        w = 1.0 - abs(j) / (lag + 1.0)
        cov = sum(x[t] * x[t - abs(j)] for t in range(abs(j), n)) / n
        lrv += w * cov
    return np.mean(d) / math.sqrt(lrv / n)


@criterion(4, "DM / Newey-West HAC")
def test_acceptance_4_dm():
    t0 = time.time()
    rng = np.random.default_rng(31)
    a, b = rng.random(50), rng.random(50)
    res = dm_test(a, b)
    assert res.statistic == pytest.approx(_brute_force_dm(a - b, nw_lag(50)), abs=1e-10)

    rng = np.random.default_rng(99)
    rejections = sum(
        dm_test(rng.standard_normal(200), np.zeros(200)).p_value < 0.05 for _ in range(1000)
    )
    rate = rejections / 1000.0
    assert 0.03 <= rate <= 0.07
    elapsed = time.time() - t0
    assert elapsed < 30.0
    return f"MC size {rate:.1%}, {elapsed:.1f}s < 30s"


# -- shared walk-forward configurations ----------------------------------------

REPLAY_SIM = SyntheticParams(days=700)
INVARIANT_SIM = SyntheticParams(days=860)
# realistic macro noise keeps the stress score away from saturation, so the
# tail sample mixes moderate- and high-stress dates
HEADLINE_SIM = SyntheticParams(days=2600, vix_noise=8.0, slope_noise=0.9, credit_noise=1.0)
HEADLINE_ASSETS = [f"SYN{i + 1}" for i in range(6)]
HEADLINE_SEEDS = list(range(10))
# the calm ML stand-in: an EWMA tracker scaled down whenever the observed
# VIX-like level is elevated - biased low in stress, competitive in calm
CALM_TRACK_LAMBDA = 0.92
CALM_STRESS_BIAS = 0.86
CALM_BIAS_VIX = 23.0


def full_pool_params(figarch_truncation=1000) -> PipelineParams:
    return PipelineParams(
        bindings={
            "GRU": parse_binding("GRU", "ewma"),
            "XGBoost": parse_binding("XGBoost", "ewma:0.97"),
            "HAR-RV": parse_binding("HAR-RV", "native"),
            "GARCH-t": parse_binding("GARCH-t", "native"),
            "FIGARCH": parse_binding("FIGARCH", "native"),
        },
        pools=SpecialistPools(),
        walk=WalkForwardConfig(),
        loss=LossParams(),
        kernel=KernelParams(),
        threshold=ThresholdParams(),
        gate=GateParams(alpha_weights=(1.0, -1.0, 1.0)),
        figarch_truncation=figarch_truncation,
    )


def _biased_calm_stream(panel) -> ExternalStream:
    """EWMA variance tracker scaled down when today's raw VIX-like level is
    elevated: the 'EWMA biased low in stress' calm specialist."""
    path = ewma_forecast_path(panel.returns[1:], CALM_TRACK_LAMBDA)
    forecasts = {}
    for idx in range(1, len(panel.dates)):
        v = path[idx - 1]
        if np.isfinite(v):
            scale = CALM_STRESS_BIAS if panel.vix[idx] > CALM_BIAS_VIX else 1.0
            forecasts[panel.dates[idx]] = max(float(v) * scale, 1e-12)
    return ExternalStream("GRU", forecasts)


def headline_params(panel, ablation: AblationFlags = AblationFlags()) -> PipelineParams:
    """Pool named by the criterion: calm specialists are EWMA-based (the GRU
    stand-in biased low under elevated VIX), stress specialist is GARCH-t."""
    return PipelineParams(
        bindings={
            "GRU": parse_binding("GRU", "external:biased-ewma"),
            "XGBoost": parse_binding("XGBoost", "ewma:0.97"),
            "HAR-RV": parse_binding("HAR-RV", "native"),
            "GARCH-t": parse_binding("GARCH-t", "native"),
        },
        pools=SpecialistPools(calm=("GRU", "HAR-RV", "XGBoost"), stress=("GARCH-t", "HAR-RV")),
        walk=WalkForwardConfig(),
        loss=LossParams(),
        kernel=KernelParams(),
        threshold=ThresholdParams(),
        gate=GateParams(alpha_weights=(1.0, -1.0, 1.0)),
        ablation=ablation,
        external_streams={"GRU": _biased_calm_stream(panel)},
    )


def _build_syn_panel(seed: int, asset: str, assets: list[str], sim: SyntheticParams):
    bars_by, macro, _ = generate_synthetic_market(seed, assets, sim)
    return build_panel(asset, bars_by[asset], macro, PanelSettings(vix_column="vix_like"))


# -- 5: no-lookahead replay ----------------------------------------------------


def _replay_records(cut: int | None):
    """CSV lines keyed by date for a (possibly truncated) replay run."""
    bars_by, macro, _ = generate_synthetic_market(404, ["SYN1"], REPLAY_SIM)
    bars, macro = bars_by["SYN1"], macro
    if cut is not None:
        bars, macro = bars.iloc[:cut], macro.iloc[:cut]
    panel = build_panel("SYN1", bars, macro, PanelSettings(vix_column="vix_like"))
    res = run_walk_forward(panel, full_pool_params())
    out = {}
    for name, frame in (
        ("forecasts", res.forecasts_frame()),
        ("losses", res.losses_frame()),
        ("routing", res.routing_frame()),
    ):
        lines = frame.to_csv(index=False, lineterminator="\n").splitlines()[1:]
        if name == "losses":
            per_date: dict[str, list[str]] = {}
            for line in lines:
                per_date.setdefault(line.split(",", 1)[0], []).append(line)
            out[name] = {d: "\n".join(v) for d, v in per_date.items()}
        else:
            out[name] = {line.split(",", 1)[0]: line for line in lines}
    return res.dates, out


@dataclass
class _TimedResult:
    elapsed: float
    payload: object


@pytest.fixture(scope="module")
def replay_runs():
    t0 = time.time()
    rng = np.random.default_rng(2024)
    lo = WalkForwardConfig().min_history + 30
    cuts = sorted(int(c) for c in rng.integers(lo, REPLAY_SIM.days, size=10))
    with ProcessPoolExecutor(max_workers=WORKERS) as pool:
        results = list(pool.map(_replay_records, [None, *cuts]))
    return _TimedResult(time.time() - t0, (results[0], results[1:], cuts))


@criterion(5, "no-lookahead replay")
def test_acceptance_5_replay(replay_runs):
    (full_dates, full_rec), truncated, cuts = replay_runs.payload
    checked = 0
    for (dates, rec), cut in zip(truncated, cuts):
        assert dates == full_dates[: len(dates)]
        for name in ("forecasts", "losses", "routing"):
            for d in dates:
                assert rec[name][d] == full_rec[name][d], f"{name} mismatch at {d} (cut {cut})"
                checked += 1
    assert replay_runs.elapsed < 300.0
    return f"{checked} record comparisons, {replay_runs.elapsed:.0f}s < 300s"


# -- 6: routing invariants on a full synthetic run ------------------------------


def _invariant_run(args):
    seed, asset, assets = args
    panel = _build_syn_panel(seed, asset, assets, INVARIANT_SIM)
    res = run_walk_forward(panel, full_pool_params())
    roll = res.roll
    return {
        "n": len(res.dates),
        "set_sizes": np.array([len(s) for s in res.routing_sets]),
        "stressed": res.stressed,
        "eta": res.eta,
        "tau": res.tau,
        "tau_global": res.tau_global,
        "tau_local": res.tau_local,
        "fallback": res.fallback_used,
        "y_calm": res.y_calm,
        "y_stress": res.y_stress,
        "y_combo": res.y_combo,
        "y_low": res.y_low,
        "y_high": res.y_high,
        "omega": res.omega,
        "proposed": res.proposed,
        "floor_applied": res.floor_applied,
        "degraded": res.degraded,
        "roll": roll,
        "active_counts": np.isfinite(res.forecasts).sum(axis=1),
    }


@pytest.fixture(scope="module")
def invariant_runs():
    t0 = time.time()
    assets = [f"SYN{i + 1}" for i in range(6)]
    tasks = [(777, a, assets) for a in assets]
    with ProcessPoolExecutor(max_workers=WORKERS) as pool:
        results = list(pool.map(_invariant_run, tasks))
    return _TimedResult(time.time() - t0, results)


@criterion(6, "routing invariants over >= 2000 forecast dates")
def test_acceptance_6_invariants(invariant_runs):
    runs = invariant_runs.payload
    total_dates = sum(r["n"] for r in runs)
    assert total_dates >= 2000
    violations = 0
    for r in runs:
        n = r["n"]
        caps = np.where(r["stressed"], 2, 1)
        violations += int((r["set_sizes"] < 1).sum())
        violations += int((r["set_sizes"] > caps).sum())
        violations += int(((r["eta"] < 0) | (r["eta"] > 0.8)).sum())
        finite_tau = np.isfinite(r["tau"])
        lo = np.minimum(r["tau_global"], r["tau_local"]) - 1e-12
        hi = np.maximum(r["tau_global"], r["tau_local"]) + 1e-12
        bad_tau = finite_tau & ((r["tau"] < lo) | (r["tau"] > hi))
        violations += int(bad_tau.sum())
        live = ~r["degraded"]
        pre_floor = (1 - r["omega"]) * r["y_low"] + r["omega"] * r["y_high"]
        hull_lo = np.minimum.reduce([r["roll"], r["y_calm"], r["y_stress"], r["y_combo"]])
        hull_hi = np.maximum.reduce([r["roll"], r["y_calm"], r["y_stress"], r["y_combo"]])
        bad_hull = live & ((pre_floor < hull_lo - 1e-15) | (pre_floor > hull_hi + 1e-15))
        violations += int(bad_hull.sum())
        below_prefloor = live & (r["proposed"] < pre_floor - 1e-15)
        violations += int(below_prefloor.sum())
        unfloored_changed = live & ~r["floor_applied"] & (
            np.abs(r["proposed"] - pre_floor) > 1e-15
        )
        violations += int(unfloored_changed.sum())
    assert violations == 0
    return f"{total_dates} dates, 0 violations, {invariant_runs.elapsed:.0f}s"


# -- 7 & 8: directional synthetic reproduction + ablation ordering --------------


def _headline_streams_and_full(args):
    seed, asset = args
    panel = _build_syn_panel(seed, asset, HEADLINE_ASSETS, HEADLINE_SIM)
    params = headline_params(panel)
    streams = compute_forecast_streams(panel, params)
    res = run_walk_forward(panel, params, streams)
    labels, _ = regime_labels(res.y)
    hi = labels == "high"
    tail = tail_mask(res.y)
    q_prop = np.array([qlike(y, f) for y, f in zip(res.y, res.proposed)])
    q_roll = np.array([qlike(y, f) for y, f in zip(res.y, res.roll)])
    u_prop = np.array([underprediction_loss(y, f) for y, f in zip(res.y, res.proposed)])
    u_roll = np.array([underprediction_loss(y, f) for y, f in zip(res.y, res.roll)])
    metrics = {
        "hi_q_prop": float(np.median(q_prop[hi])),
        "hi_q_roll": float(np.median(q_roll[hi])),
        "hi_u_prop": float(np.median(u_prop[hi])),
        "hi_u_roll": float(np.median(u_roll[hi])),
        "tail_u_full": float(np.median(u_prop[tail])),
    }
    return seed, asset, metrics, streams


def _headline_ablation(args):
    seed, asset, streams = args
    panel = _build_syn_panel(seed, asset, HEADLINE_ASSETS, HEADLINE_SIM)
    params = headline_params(panel, AblationFlags(no_risk_sensitive=True))
    res = run_walk_forward(panel, params, streams)
    tail = tail_mask(res.y)
    u = np.array([underprediction_loss(y, f) for y, f in zip(res.y, res.proposed)])
    return seed, asset, float(np.median(u[tail]))


@pytest.fixture(scope="module")
def headline_runs():
    t0 = time.time()
    tasks = [(s, a) for s in HEADLINE_SEEDS for a in HEADLINE_ASSETS]
    with ProcessPoolExecutor(max_workers=WORKERS) as pool:
        results = list(pool.map(_headline_streams_and_full, tasks))
    return _TimedResult(time.time() - t0, results)


@criterion(7, "high-regime improvement vs rolling-best (8/10 seeds)")
def test_acceptance_7_headline(headline_runs):
    results = headline_runs.payload
    wins = 0
    for seed in HEADLINE_SEEDS:
        rows = [m for s, _, m, _ in results if s == seed]
        med = lambda key: float(np.median([r[key] for r in rows]))  # noqa: E731
        q_ok = med("hi_q_prop") < med("hi_q_roll") and (
            med("hi_q_roll") - med("hi_q_prop")
        ) / med("hi_q_roll") >= 0.05
        u_ok = med("hi_u_prop") < med("hi_u_roll") and (
            med("hi_u_roll") - med("hi_u_prop")
        ) / med("hi_u_roll") >= 0.05
        if q_ok and u_ok:
            wins += 1
    assert wins >= 8, f"high-regime improvement in only {wins}/10 seeds"
    assert headline_runs.elapsed < 600.0
    return f"{wins}/10 seeds, {headline_runs.elapsed:.0f}s < 600s"


@pytest.fixture(scope="module")
def ablation_runs(headline_runs):
    t0 = time.time()
    tasks = [(s, a, streams) for s, a, _, streams in headline_runs.payload]
    with ProcessPoolExecutor(max_workers=WORKERS) as pool:
        results = list(pool.map(_headline_ablation, tasks))
    return _TimedResult(time.time() - t0, results)


@criterion(8, "ablation ordering: removing risk-sensitive scoring hurts the tail")
def test_acceptance_8_ablation(headline_runs, ablation_runs):
    full = {(s, a): m["tail_u_full"] for s, a, m, _ in headline_runs.payload}
    abl = {(s, a): u for s, a, u in ablation_runs.payload}
    wins = 0
    for seed in HEADLINE_SEEDS:
        tail_full = float(np.median([full[(seed, a)] for a in HEADLINE_ASSETS]))
        tail_abl = float(np.median([abl[(seed, a)] for a in HEADLINE_ASSETS]))
        if tail_abl >= tail_full:
            wins += 1
    assert wins >= 8, f"ablation ordering held in only {wins}/10 seeds"
    return f"{wins}/10 seeds, replays {ablation_runs.elapsed:.0f}s"


# -- 9: report-surface schemas ---------------------------------------------------


@criterion(9, "report CSV schemas")
def test_acceptance_9_report_schema(tmp_path):
    from volroute.config import load_config
    from volroute.pipeline import run_pipeline, simulate_to_dir

    overrides = {
        "models": "GRU,HAR-RV,XGBoost",
        "bindings.XGBoost": "ewma:0.97",
        "pool.calm": "GRU,XGBoost",
        "pool.stress": "HAR-RV",
        "walk.min_history": "160",
        "walk.train_window": "160",
        "sim.days": "400",
        "sim.assets": "2",
        "runtime.workers": "1",
        "seed": "3",
    }
    cfg = load_config(None, overrides, env={})
    simulate_to_dir(cfg, tmp_path / "data")
    run_cfg = load_config(tmp_path / "data" / "run.cfg", overrides, env={})
    code, _ = run_pipeline(run_cfg, tmp_path / "out")
    assert code == 0

    golden = {
        "table2.csv": "method,metric,overall,low,mid,high",
        "table3.csv": "regime,calm_usage,stress_usage,selected_regret,miss_best_rate",
        "table4.csv": (
            "method,overall_underpred_loss,high_underpred_loss,"
            "tail_underpred_loss,tail_qlike"
        ),
        "dm.csv": (
            "asset,dm_stat_vs_rolling_best,p_value_vs_rolling_best,"
            "dm_stat_vs_vix_switch,p_value_vs_vix_switch"
        ),
        "delta_qlike.csv": "baseline,overall,low,mid,high",
    }
    for name, header in golden.items():
        lines = (tmp_path / "out" / name).read_text().splitlines()
        assert lines[0].startswith("# config_hash=")
        assert lines[1] == header, f"{name} header drifted: {lines[1]}"
    return "table2/3/4, dm, delta_qlike headers match"
