"""Strict day-by-day walk-forward driver, retraining schedules and baselines.

Per forecast date t the driver refits models (slow pool every 21 forecast
dates, GARCH-t/FIGARCH every date), collects the active forecast set,
computes the stress score, online scores, routing threshold and set, branch
forecasts, adaptive baselines and the final combined forecast - all from
data through t. Only then is the next-day target revealed and the loss
records appended. Everything is deterministic given the panel and
parameters, and every computed quantity is a pure prefix function of the
panel, so truncating the panel replays identical records.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from . import combiner, garch, routing, scoring, specialists
from .combiner import GateParams, SpecialistPools
from .errors import BranchError, ConfigError, FitError, InputError, ProtocolError
from .market_data import VARIANCE_FLOOR, AlignedPanel
from .routing import ThresholdParams
from .scoring import KernelParams, LossParams
from .specialists import ModelBinding

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class WalkForwardConfig:
    min_history: int = 504
    train_window: int = 504
    slow_retrain_every: int = 21
    score_window: int = 252
    benchmark_window: int = 252
    static_selection_window: int = 252
    vix_threshold: float = 20.0
    vix_low_model: str = "GRU"

    def validate(self) -> None:
        for name in (
            "min_history",
            "train_window",
            "slow_retrain_every",
            "score_window",
            "benchmark_window",
            "static_selection_window",
        ):
            if getattr(self, name) <= 0:
                raise ConfigError(f"walk-forward {name} must be positive")
        if self.min_history < self.train_window:
            raise ConfigError("min_history must be >= train_window")


@dataclass(frozen=True)
class AblationFlags:
    no_risk_sensitive: bool = False
    no_high_tilt: bool = False
    no_har_floor: bool = False

    def label(self) -> str:
        names = []
        if self.no_risk_sensitive:
            names.append("No risk-sensitive scoring")
        if self.no_high_tilt:
            names.append("No high-state tilt")
        if self.no_har_floor:
            names.append("No HAR floor")
        return " + ".join(names) if names else "Proposed forecast"


@dataclass(frozen=True)
class PipelineParams:
    """Everything the driver needs beyond the panel itself."""

    bindings: dict[str, ModelBinding]
    pools: SpecialistPools
    walk: WalkForwardConfig
    loss: LossParams
    kernel: KernelParams
    threshold: ThresholdParams
    gate: GateParams
    ablation: AblationFlags = AblationFlags()
    variance_floor: float = VARIANCE_FLOOR
    figarch_truncation: int = 1000
    external_streams: dict[str, specialists.ExternalStream] = field(default_factory=dict)

    def validate(self) -> None:
        self.pools.validate()
        self.walk.validate()
        self.loss.validate()
        self.kernel.validate()
        self.threshold.validate()
        self.gate.validate()
        if "HAR-RV" not in self.bindings or self.bindings["HAR-RV"].kind != "har":
            raise ConfigError("the model set must include HAR-RV bound native")
        for pool in (self.pools.calm, self.pools.stress):
            for name in pool:
                if name not in self.bindings:
                    raise ConfigError(f"pool model {name!r} has no binding")
        if self.walk.vix_low_model not in self.bindings:
            raise ConfigError(f"VIX-switch low-state model {self.walk.vix_low_model!r} not bound")
        for name, binding in self.bindings.items():
            if binding.kind == "external" and name not in self.external_streams:
                raise ConfigError(f"external stream for {name!r} was not loaded")


@dataclass
class RunResult:
    """Per-forecast-date records of one asset's walk-forward run."""

    asset: str
    dates: list[str]
    models: list[str]
    y: np.ndarray
    forecasts: np.ndarray            # (n, m), nan = inactive
    qlike: np.ndarray                # (n, m)
    under: np.ndarray
    total: np.ndarray
    regret: np.ndarray
    scores: np.ndarray               # (n, m), nan = unscored
    proposed: np.ndarray
    roll: np.ndarray
    static: np.ndarray
    vix_switch: np.ndarray
    roll_model: list[str]
    static_model: list[str]
    vix_model: list[str]
    tau_global: np.ndarray
    tau_local: np.ndarray
    eta: np.ndarray
    tau: np.ndarray
    stressed: np.ndarray
    routing_sets: list[tuple[str, ...]]
    fallback_used: np.ndarray
    y_calm: np.ndarray
    y_stress: np.ndarray
    y_combo: np.ndarray
    y_low: np.ndarray
    y_high: np.ndarray
    p: np.ndarray
    omega: np.ndarray
    disagreement: np.ndarray
    floor_applied: np.ndarray
    degraded: np.ndarray
    calm_branch_fallback: np.ndarray
    stress_branch_fallback: np.ndarray
    refit_events: list[tuple[str, str, str]]  # (date, model, slow|fast)

    def forecasts_frame(self) -> pd.DataFrame:
        data = {"date": self.dates, "y_true": self.y}
        data["proposed"] = self.proposed
        data["rolling_best"] = self.roll
        data["static_best"] = self.static
        data["vix_switch"] = self.vix_switch
        for j, m in enumerate(self.models):
            data[m] = self.forecasts[:, j]
        data["rolling_model"] = self.roll_model
        data["static_model"] = self.static_model
        data["vix_model"] = self.vix_model
        return pd.DataFrame(data)

    def losses_frame(self) -> pd.DataFrame:
        rows = []
        for i, date in enumerate(self.dates):
            for j, m in enumerate(self.models):
                active = np.isfinite(self.forecasts[i, j])
                rows.append(
                    (
                        date,
                        m,
                        self.qlike[i, j] if active else math.nan,
                        self.under[i, j] if active else math.nan,
                        self.total[i, j] if active else math.nan,
                        self.regret[i, j] if active else math.nan,
                        int(active),
                    )
                )
        return pd.DataFrame(
            rows, columns=["date", "model", "qlike", "under", "total", "regret", "active"]
        )

    def routing_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "date": self.dates,
                "tau_global": self.tau_global,
                "tau_local": self.tau_local,
                "eta": self.eta,
                "tau": self.tau,
                "stressed": self.stressed.astype(int),
                "set": ["|".join(s) for s in self.routing_sets],
                "fallback_used": self.fallback_used.astype(int),
                "y_calm": self.y_calm,
                "y_stress": self.y_stress,
                "y_combo": self.y_combo,
                "y_low": self.y_low,
                "y_high": self.y_high,
                "p": self.p,
                "omega": self.omega,
                "D": self.disagreement,
                "floor_applied": self.floor_applied.astype(int),
                "y_final": self.proposed,
            }
        )

    def refits_frame(self) -> pd.DataFrame:
        return pd.DataFrame(self.refit_events, columns=["date", "model", "cadence"])


def benchmark_ranking(
    total: np.ndarray, models: list[str], window: int, upto: int
) -> list[str]:
    """Models ranked by mean total loss over the trailing window of rows
    [max(0, upto-window), upto). Models without any loss are excluded."""
    lo = max(0, upto - window)
    block = total[lo:upto]
    if block.size == 0:
        return []
    active = np.isfinite(block)
    counts = active.sum(axis=0)
    sums = np.where(active, block, 0.0).sum(axis=0)
    means = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
    order = sorted(
        (i for i in range(len(models)) if counts[i] > 0),
        key=lambda i: (means[i], models[i]),
    )
    return [models[i] for i in order]


def _first_active(ranking: list[str], active: set[str], default: str) -> str:
    for name in ranking:
        if name in active:
            return name
    return default


class _ModelRuntime:
    """Mutable per-model fitting state owned by the driver."""

    def __init__(self, params: PipelineParams, panel: AlignedPanel):
        self.params = params
        self.panel = panel
        self.har_coeffs: specialists.HarCoefficients | None = None
        self.garch_fit: garch.GarchTFit | None = None
        self.garch_prev: garch.GarchTParams | None = None
        self.figarch_fit: garch.FigarchFit | None = None
        self.figarch_prev: garch.FigarchParams | None = None
        # EWMA paths per distinct lambda, over panel returns[1:]
        self.ewma_paths: dict[float, np.ndarray] = {}
        for b in params.bindings.values():
            if b.kind == "ewma" and b.ewma_lambda not in self.ewma_paths:
                self.ewma_paths[b.ewma_lambda] = specialists.ewma_forecast_path(
                    panel.returns[1:], b.ewma_lambda
                )

    def refit_slow(self, t: int) -> None:
        window = self.panel.gk_var[t - self.params.walk.train_window + 1 : t + 1]
        try:
            self.har_coeffs = specialists.fit_har(window)
        except FitError as exc:
            log.warning("%s: HAR refit failed (%s); keeping previous coefficients",
                        self.panel.dates[t], exc)

    def refit_fast(self, t: int, names: set[str]) -> tuple[np.ndarray, float]:
        window = self.panel.returns[t - self.params.walk.train_window + 1 : t + 1]
        mu = float(np.mean(window))
        e = window - mu
        e2 = e * e
        if any(self.params.bindings[n].kind == "garch_t" for n in names):
            try:
                self.garch_fit = garch.fit_garch_t(window)
                self.garch_prev = self.garch_fit.params
            except FitError as exc:
                if self.garch_prev is not None:
                    log.debug("GARCH-t fit failed (%s); reusing previous parameters", exc)
                    self.garch_fit = garch.garch_t_state(self.garch_prev, window)
                else:
                    self.garch_fit = None
        if any(self.params.bindings[n].kind == "figarch" for n in names):
            try:
                self.figarch_fit = garch.fit_figarch(window, self.params.figarch_truncation)
                self.figarch_prev = self.figarch_fit.params
            except FitError as exc:
                if self.figarch_prev is not None:
                    log.debug("FIGARCH fit failed (%s); reusing previous parameters", exc)
                    self.figarch_fit = garch.FigarchFit(self.figarch_prev, mu, math.nan)
                else:
                    self.figarch_fit = None
        return e2, mu

    def forecast(self, name: str, t: int, e2_window: np.ndarray) -> float | None:
        """Next-day variance forecast of one model at panel index t, or None."""
        b = self.params.bindings[name]
        floor = self.params.variance_floor
        panel = self.panel
        if b.kind == "har":
            if self.har_coeffs is None:
                return None
            return specialists.forecast_har(self.har_coeffs, panel.gk_var[t - 21 : t + 1], floor)
        if b.kind == "garch_t":
            if self.garch_fit is None:
                return None
            f = self.garch_fit
            return garch.forecast_garch_t(f.params, f.last_eps2, f.last_sig2, floor)
        if b.kind == "figarch":
            if self.figarch_fit is None:
                return None
            return garch.forecast_figarch(self.figarch_fit.params, e2_window, floor)
        if b.kind == "ewma":
            val = self.ewma_paths[b.ewma_lambda][t - 1]
            return max(float(val), floor) if np.isfinite(val) else None
        if b.kind == "external":
            val = self.params.external_streams[name].forecast(panel.dates[t])
            return max(float(val), floor) if val is not None else None
        raise ProtocolError(f"unknown binding kind {b.kind}")


def vix_switch_model(vix: float, threshold: float, low_model: str) -> str:
    """GARCH-t when raw VIX strictly exceeds the threshold, else the
    configured low-state model."""
    return "GARCH-t" if vix > threshold else low_model


@dataclass
class ForecastStreams:
    """Per-date model forecasts generated under the walk-forward protocol.

    These depend only on the panel, bindings and retraining schedule, never
    on loss/routing/gate parameters, so one set of streams can replay under
    several scoring configurations (the ablation switches in particular).
    """

    asset: str
    dates: list[str]
    models: list[str]
    forecasts: np.ndarray  # (n_dates, n_models), nan = inactive
    refit_events: list[tuple[str, str, str]]


def _forecast_dates(panel: AlignedPanel, wf: WalkForwardConfig) -> list[int]:
    n_panel = len(panel)
    if n_panel <= wf.min_history + 1:
        raise InputError(
            f"{panel.asset}: panel of {n_panel} dates cannot cover min_history {wf.min_history}"
        )
    return list(range(wf.min_history, n_panel - 1))  # last panel date has no target


def compute_forecast_streams(panel: AlignedPanel, params: PipelineParams) -> ForecastStreams:
    """Refit on schedule and issue every model's forecast for every date."""
    params.validate()
    wf = params.walk
    fc_idx = _forecast_dates(panel, wf)
    n = len(fc_idx)
    models = sorted(params.bindings)
    midx = {name: j for j, name in enumerate(models)}
    floor = params.variance_floor

    runtime = _ModelRuntime(params, panel)
    fast_names = {name for name in models if not params.bindings[name].slow_refit}
    slow_names = [name for name in models if params.bindings[name].slow_refit]

    forecasts = np.full((n, len(models)), np.nan)
    refit_events: list[tuple[str, str, str]] = []
    for i, t in enumerate(fc_idx):
        date = panel.dates[t]
        if i % wf.slow_retrain_every == 0:
            runtime.refit_slow(t)
            for name in slow_names:
                refit_events.append((date, name, "slow"))
        e2_window, _ = runtime.refit_fast(t, fast_names)
        for name in sorted(fast_names):
            refit_events.append((date, name, "fast"))
        for name in models:
            try:
                val = runtime.forecast(name, t, e2_window)
            except FitError:
                val = None
            if val is not None and np.isfinite(val) and val >= floor:
                forecasts[i, midx[name]] = val
    return ForecastStreams(
        asset=panel.asset,
        dates=[panel.dates[t] for t in fc_idx],
        models=models,
        forecasts=forecasts,
        refit_events=refit_events,
    )


def run_walk_forward(
    panel: AlignedPanel, params: PipelineParams, streams: ForecastStreams | None = None
) -> RunResult:
    """Run the full day-by-day protocol on one asset panel.

    Pass precomputed streams to replay the routing layer under a different
    scoring configuration; they must come from the same panel and bindings.
    """
    params.validate()
    wf = params.walk
    fc_idx = _forecast_dates(panel, wf)
    n = len(fc_idx)
    models = sorted(params.bindings)
    m = len(models)
    midx = {name: j for j, name in enumerate(models)}
    floor = params.variance_floor

    if streams is None:
        streams = compute_forecast_streams(panel, params)
    if streams.models != models or streams.dates != [panel.dates[t] for t in fc_idx]:
        raise ProtocolError("forecast streams do not match this panel/configuration")

    loss_params = params.loss
    if params.ablation.no_risk_sensitive:
        loss_params = LossParams(lambda_under=0.0)
    gate = params.gate
    if params.ablation.no_high_tilt:
        gate = dataclasses.replace(gate, kappa=0.0)

    res = RunResult(
        asset=panel.asset,
        dates=[panel.dates[t] for t in fc_idx],
        models=models,
        y=np.full(n, np.nan),
        forecasts=np.full((n, m), np.nan),
        qlike=np.full((n, m), np.nan),
        under=np.full((n, m), np.nan),
        total=np.full((n, m), np.nan),
        regret=np.full((n, m), np.nan),
        scores=np.full((n, m), np.nan),
        proposed=np.full(n, np.nan),
        roll=np.full(n, np.nan),
        static=np.full(n, np.nan),
        vix_switch=np.full(n, np.nan),
        roll_model=[""] * n,
        static_model=[""] * n,
        vix_model=[""] * n,
        tau_global=np.full(n, np.nan),
        tau_local=np.full(n, np.nan),
        eta=np.full(n, np.nan),
        tau=np.full(n, np.nan),
        stressed=np.zeros(n, dtype=bool),
        routing_sets=[()] * n,
        fallback_used=np.zeros(n, dtype=bool),
        y_calm=np.full(n, np.nan),
        y_stress=np.full(n, np.nan),
        y_combo=np.full(n, np.nan),
        y_low=np.full(n, np.nan),
        y_high=np.full(n, np.nan),
        p=np.full(n, np.nan),
        omega=np.full(n, np.nan),
        disagreement=np.full(n, np.nan),
        floor_applied=np.zeros(n, dtype=bool),
        degraded=np.zeros(n, dtype=bool),
        calm_branch_fallback=np.zeros(n, dtype=bool),
        stress_branch_fallback=np.zeros(n, dtype=bool),
        refit_events=[],
    )

    res.forecasts[:] = streams.forecasts
    res.refit_events = list(streams.refit_events)

    z_hist = np.zeros((n, len(panel.state_names)))
    static_frozen: str | None = None
    static_frozen_ranking: list[str] = []
    last_vix = math.nan

    for i, t in enumerate(fc_idx):
        date = panel.dates[t]

        forecasts: dict[str, float] = {
            name: float(streams.forecasts[i, midx[name]])
            for name in models
            if np.isfinite(streams.forecasts[i, midx[name]])
        }
        active = list(forecasts)
        if not active:
            raise ProtocolError(f"{panel.asset} {date}: empty active set")
        active_set = set(active)

        z_now = panel.states_std[t]
        if not np.all(np.isfinite(z_now)):
            raise ProtocolError(f"{panel.asset} {date}: state vector not standardized")
        z_hist[i] = z_now
        p_t = combiner.stress_score(z_now, gate)

        # online scores over the trailing evaluation window
        scores: dict[str, float] = {}
        if i > 0:
            lo = max(0, i - params.kernel.history_len)
            lags = np.arange(lo, i, dtype=float)
            w = scoring.kernel_weights(i - lags, z_now, z_hist[lo:i], params.kernel)
            svec = scoring.model_scores(res.regret[lo:i], w)
            res.scores[i] = svec
            scores = {models[j]: float(svec[j]) for j in range(m) if np.isfinite(svec[j])}

        # shrunk quantile threshold from the pooled score history
        tlo = max(0, i - params.threshold.window)
        score_block = res.scores[tlo:i]
        mask = np.isfinite(score_block)
        pool_scores = score_block[mask]
        if pool_scores.size:
            tw = scoring.kernel_weights(
                i - np.arange(tlo, i, dtype=float), z_now, z_hist[tlo:i], params.kernel
            )
            pool_w = np.broadcast_to(tw[:, None], score_block.shape)[mask]
            rw = scoring.regime_similarity_weights(z_now, z_hist[tlo:i], params.kernel)
        else:
            pool_w = np.zeros(0)
            rw = np.zeros(0)
        th = routing.routing_threshold(pool_scores, pool_w, rw, params.threshold)

        stressed = p_t >= 0.5
        routed, fb = routing.routing_set(scores, active, th.tau, stressed)

        # adaptive baselines pick among the already issued streams
        if i == 0:
            roll_ranking = ["HAR-RV"]
        else:
            roll_ranking = benchmark_ranking(res.total, models, wf.benchmark_window, i)
        roll_name = _first_active(roll_ranking, active_set, "HAR-RV")

        if static_frozen is None and i >= wf.static_selection_window:
            static_frozen_ranking = benchmark_ranking(
                res.total, models, wf.static_selection_window, wf.static_selection_window
            )
            static_frozen = static_frozen_ranking[0] if static_frozen_ranking else roll_name
            log.info("%s: static-best frozen to %s at forecast date %s",
                     panel.asset, static_frozen, date)
        if static_frozen is None:
            static_ranking, static_name = roll_ranking, roll_name
        else:
            static_ranking, static_name = static_frozen_ranking, static_frozen
            if static_name not in active_set:
                static_name = _first_active(static_ranking, active_set, roll_name)

        vix_t = panel.vix[t]
        if np.isfinite(vix_t):
            last_vix = vix_t
        elif np.isfinite(last_vix):
            log.debug("%s %s: missing VIX, carrying forward %.2f", panel.asset, date, last_vix)
            vix_t = last_vix
        else:
            log.warning("%s %s: no VIX observed yet; using low-state branch", panel.asset, date)
            vix_t = -math.inf
        vix_name = "GARCH-t" if vix_t > wf.vix_threshold else wf.vix_low_model
        if vix_name not in active_set:
            vix_name = _first_active(roll_ranking, active_set, roll_name)

        y_roll = forecasts[roll_name]
        res.roll[i] = y_roll
        res.roll_model[i] = roll_name
        res.static[i] = forecasts[static_name]
        res.static_model[i] = static_name
        res.vix_switch[i] = forecasts[vix_name]
        res.vix_model[i] = vix_name

        d_t = combiner.disagreement([forecasts[name] for name in routed], gate.epsilon)
        y_har = forecasts.get("HAR-RV")

        try:
            y_calm, calm_fb = combiner.branch_forecast_calm(
                routed, forecasts, params.pools, scores, active
            )
            y_stress, stress_fb = combiner.branch_forecast_stress(
                routed, forecasts, params.pools, scores, active, gate
            )
            if y_har is None:
                raise BranchError("HAR-RV inactive; floor unavailable")
            trace = combiner.final_forecast(
                date, y_calm, y_stress, y_roll, y_har, p_t, d_t, gate,
                floor=floor, har_floor_enabled=not params.ablation.no_har_floor,
            )
            res.calm_branch_fallback[i] = calm_fb
            res.stress_branch_fallback[i] = stress_fb
        except BranchError as exc:
            log.warning("%s %s: branch degraded to rolling-best (%s)", panel.asset, date, exc)
            trace = combiner.CombinationTrace(
                date=date, y_calm=math.nan, y_stress=math.nan, y_combo=math.nan,
                y_low=math.nan, y_high=math.nan, p=p_t, omega=math.nan,
                disagreement=d_t, floor_applied=False, y_final=y_roll, degraded=True,
            )

        res.tau_global[i] = th.tau_global
        res.tau_local[i] = th.tau_local
        res.eta[i] = th.eta
        res.tau[i] = th.tau
        res.stressed[i] = stressed
        res.routing_sets[i] = tuple(routed)
        res.fallback_used[i] = fb
        res.y_calm[i] = trace.y_calm
        res.y_stress[i] = trace.y_stress
        res.y_combo[i] = trace.y_combo
        res.y_low[i] = trace.y_low
        res.y_high[i] = trace.y_high
        res.p[i] = p_t
        res.omega[i] = trace.omega
        res.disagreement[i] = d_t
        res.floor_applied[i] = trace.floor_applied
        res.degraded[i] = trace.degraded
        res.proposed[i] = trace.y_final

        # outcome revealed only now
        y = max(float(panel.target[t]), floor)
        res.y[i] = y
        records = scoring.total_and_regret(date, y, forecasts, loss_params, floor)
        for rec in records:
            j = midx[rec.model]
            res.qlike[i, j] = rec.qlike
            res.under[i, j] = rec.under
            res.total[i, j] = rec.total
            res.regret[i, j] = rec.regret

    return res
