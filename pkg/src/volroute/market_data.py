"""OHLC/macro ingestion and panel construction.

Alignment convention: the panel is the inner join of OHLC and macro dates.
The target stored at row t is next-day realized variance (the squared
Garman-Klass proxy of row t+1), so the last row never has a target and is
never a forecast date. Everything computed at row t reads rows <= t only:
returns are close-to-close log returns over consecutive panel rows, and
state standardization uses a trailing window ending at t inclusive.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from .errors import AlignmentError, InputError

log = logging.getLogger(__name__)

# Shared truncation floor for every variance in the pipeline (daily
# decimal-return scale). Garman-Klass values, forecasts and targets are
# all clamped here before any loss is computed.
VARIANCE_FLOOR = 1e-12

_GK_CO = 2.0 * math.log(2.0) - 1.0


@dataclass(frozen=True)
class OhlcvBar:
    """One daily bar. Prices must be positive with high/low bracketing open/close."""

    date: str
    open: float
    high: float
    low: float
    close: float

    def validate(self) -> None:
        p = (self.open, self.high, self.low, self.close)
        if not all(math.isfinite(x) and x > 0.0 for x in p):
            raise InputError(f"non-positive or non-finite price on {self.date}: {p}")
        if self.high < max(self.open, self.close) - 1e-12 * self.high:
            raise InputError(f"high below open/close on {self.date}")
        if self.low > min(self.open, self.close) + 1e-12 * self.low:
            raise InputError(f"low above open/close on {self.date}")


def gk_variance(bar: OhlcvBar, floor: float = VARIANCE_FLOOR) -> float:
    """Daily Garman-Klass variance of one bar, clamped below at ``floor``.

    0.5*ln(H/L)^2 - (2 ln 2 - 1)*ln(C/O)^2; the raw value can go negative on
    pathological bars, in which case the floor keeps the panel aligned
    instead of dropping the date.
    """
    bar.validate()
    hl = math.log(bar.high / bar.low)
    co = math.log(bar.close / bar.open)
    return max(0.5 * hl * hl - _GK_CO * co * co, floor)


def _gk_variance_arrays(o, h, lo, c, floor: float) -> np.ndarray:
    hl = np.log(h / lo)
    co = np.log(c / o)
    return np.maximum(0.5 * hl * hl - _GK_CO * co * co, floor)


@dataclass
class PanelSettings:
    """Knobs for panel construction."""

    variance_floor: float = VARIANCE_FLOOR
    standardize_window: int = 504
    vix_column: str = "vix"
    # state features used for z_t; empty means every macro column
    state_features: tuple[str, ...] = ()
    # features transformed with natural log before standardization
    log_features: tuple[str, ...] = ()


@dataclass
class AlignedPanel:
    """Per-asset aligned series; immutable after construction by convention."""

    asset: str
    dates: list[str]
    open: np.ndarray
    high: np.ndarray
    low: np.ndarray
    close: np.ndarray
    returns: np.ndarray          # log close-to-close, nan at row 0
    gk_var: np.ndarray           # daily GK variance, floored
    target: np.ndarray           # gk_var shifted by -1, nan at last row
    state_names: list[str]
    states_raw: np.ndarray       # transformed feature levels, shape (n, k)
    states_std: np.ndarray       # trailing z-scores, nan before the window fills
    vix: np.ndarray              # raw VIX column (may contain nan)
    settings: PanelSettings = field(repr=False, default_factory=PanelSettings)

    def __len__(self) -> int:
        return len(self.dates)

    def n_forecastable(self) -> int:
        return max(len(self.dates) - 1, 0)


def read_ohlc_csv(path) -> pd.DataFrame:
    """Read `date,open,high,low,close` with ISO dates; enforce order and validity."""
    df = pd.read_csv(path, dtype={"date": str}, comment="#")
    required = ["date", "open", "high", "low", "close"]
    missing = [c for c in required if c not in df.columns]
    if missing:
        raise InputError(f"{path}: missing OHLC columns {missing}")
    df = df[required]
    _check_dates_strictly_increasing(df["date"].tolist(), str(path))
    for col in ("open", "high", "low", "close"):
        vals = pd.to_numeric(df[col], errors="coerce")
        if not np.all(np.isfinite(vals)) or np.any(vals <= 0.0):
            bad = df["date"][~(np.isfinite(vals) & (vals > 0.0))].iloc[0]
            raise InputError(f"{path}: non-positive or non-finite {col} on {bad}")
        df[col] = vals.astype(float)
    return df


def read_macro_csv(path) -> pd.DataFrame:
    """Read `date,<feature...>` macro file; duplicate dates are rejected."""
    df = pd.read_csv(path, dtype={"date": str}, comment="#")
    if "date" not in df.columns or df.shape[1] < 2:
        raise InputError(f"{path}: macro file needs a date column and at least one feature")
    if df["date"].duplicated().any():
        dup = df["date"][df["date"].duplicated()].iloc[0]
        raise InputError(f"{path}: duplicate macro date {dup}")
    df = df.sort_values("date").reset_index(drop=True)
    for col in df.columns:
        if col != "date":
            df[col] = pd.to_numeric(df[col], errors="coerce").astype(float)
    return df


def _check_dates_strictly_increasing(dates: list[str], src: str) -> None:
    for a, b in zip(dates, dates[1:]):
        if b <= a:
            raise InputError(f"{src}: dates not strictly increasing near {a} -> {b}")


def rolling_standardize(x: np.ndarray, window: int, std_floor: float = 1e-12) -> np.ndarray:
    """Trailing-window z-scores, window ending at each row inclusive.

    Rows with fewer than ``window`` observations behind them are nan.
    A feature that is constant over the window standardizes to 0.
    """
    x = np.asarray(x, dtype=float)
    n, k = x.shape
    out = np.full((n, k), np.nan)
    if n < window:
        return out
    csum = np.cumsum(x, axis=0)
    csq = np.cumsum(x * x, axis=0)
    for t in range(window - 1, n):
        s = csum[t] - (csum[t - window] if t >= window else 0.0)
        sq = csq[t] - (csq[t - window] if t >= window else 0.0)
        mean = s / window
        # sample variance (ddof=1) of the trailing window
        var = (sq - window * mean * mean) / (window - 1)
        var = np.maximum(var, 0.0)
        std = np.sqrt(var)
        z = np.zeros(k)
        live = std > std_floor
        z[live] = (x[t, live] - mean[live]) / std[live]
        if not np.all(live):
            log.debug("constant state feature(s) in window ending row %d; z set to 0", t)
        out[t] = z
    return out


def build_panel(
    asset: str,
    bars: pd.DataFrame,
    macro: pd.DataFrame,
    settings: PanelSettings | None = None,
) -> AlignedPanel:
    """Inner-join bars and macro on date and derive returns, GK variance,
    next-day targets and standardized state vectors.

    Dates with any missing state feature are dropped (never imputed). Raises
    AlignmentError when fewer than two common dates survive, since no target
    can be constructed.
    """
    settings = settings or PanelSettings()
    if bars.empty or macro.empty:
        raise InputError("empty bars or macro input")
    _check_dates_strictly_increasing(bars["date"].tolist(), f"{asset} bars")

    feature_cols = [c for c in macro.columns if c != "date"]
    state_names = list(settings.state_features) if settings.state_features else feature_cols
    unknown = [c for c in state_names if c not in feature_cols]
    if unknown:
        raise InputError(f"state features not in macro file: {unknown}")
    if settings.vix_column not in feature_cols:
        raise InputError(f"macro file lacks raw VIX column {settings.vix_column!r}")

    macro_use = macro.dropna(subset=state_names)
    merged = bars.merge(macro_use, on="date", how="inner", validate="one_to_one")
    if len(merged) < 2:
        raise AlignmentError(
            f"{asset}: only {len(merged)} common date(s); no target constructible"
        )
    merged = merged.sort_values("date").reset_index(drop=True)

    o = merged["open"].to_numpy()
    h = merged["high"].to_numpy()
    lo = merged["low"].to_numpy()
    c = merged["close"].to_numpy()
    gk = _gk_variance_arrays(o, h, lo, c, settings.variance_floor)

    returns = np.full(len(merged), np.nan)
    returns[1:] = np.log(c[1:] / c[:-1])

    target = np.full(len(merged), np.nan)
    target[:-1] = gk[1:]

    raw = merged[state_names].to_numpy(dtype=float)
    for j, name in enumerate(state_names):
        if name in settings.log_features:
            if np.any(raw[:, j] <= 0.0):
                raise InputError(f"{asset}: log transform on non-positive feature {name}")
            raw[:, j] = np.log(raw[:, j])
    states_std = rolling_standardize(raw, settings.standardize_window)

    return AlignedPanel(
        asset=asset,
        dates=merged["date"].tolist(),
        open=o,
        high=h,
        low=lo,
        close=c,
        returns=returns,
        gk_var=gk,
        target=target,
        state_names=state_names,
        states_raw=raw,
        states_std=states_std,
        vix=merged[settings.vix_column].to_numpy(dtype=float),
        settings=settings,
    )
