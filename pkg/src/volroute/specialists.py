"""Candidate forecast streams: HAR-RV, EWMA and external forecast files.

GARCH-t and FIGARCH live in `garch.py`; this module hosts the remaining
specialists plus the binding logic that maps pool names (GRU, XGBoost, ...)
onto concrete forecasters. Model-pool names are free-form: any name may be
bound to a native model, an EWMA stand-in, or an externally supplied
forecast CSV.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from .errors import FitError, InputError
from .market_data import VARIANCE_FLOOR

HAR_MIN_WINDOW = 122  # 22 lags + 100 usable regression rows
HAR_RIDGE = 1e-12
EWMA_DEFAULT_LAMBDA = 0.94
EWMA_SEED_LEN = 30


@dataclass(frozen=True)
class HarCoefficients:
    """OLS coefficients of next-day RV on [1, daily, weekly, monthly] lags."""

    beta0: float
    beta_d: float
    beta_w: float
    beta_m: float


def _har_design(rv: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = rv.size
    rows = n - 22  # targets rv[22..n-1], features end at rv[21..n-2]
    X = np.empty((rows, 4))
    y = np.empty(rows)
    for i, t in enumerate(range(21, n - 1)):
        X[i, 0] = 1.0
        X[i, 1] = rv[t]
        X[i, 2] = np.mean(rv[t - 4 : t + 1])
        X[i, 3] = np.mean(rv[t - 21 : t + 1])
        y[i] = rv[t + 1]
    return X, y


def fit_har(rv_window: np.ndarray, ridge: float = HAR_RIDGE) -> HarCoefficients:
    """Fit the heterogeneous-AR regression with 1/5/22-day lags.

    Normal equations with a tiny ridge jitter on the Gram diagonal; raises
    FitError on short windows or a design that stays rank-deficient.
    """
    rv = np.asarray(rv_window, dtype=float)
    if rv.size < HAR_MIN_WINDOW:
        raise FitError(f"HAR window needs >= {HAR_MIN_WINDOW} observations, got {rv.size}")
    if not np.all(np.isfinite(rv)):
        raise FitError("HAR window contains non-finite values")
    X, y = _har_design(rv)
    gram = X.T @ X + ridge * np.eye(4)
    try:
        beta = np.linalg.solve(gram, X.T @ y)
    except np.linalg.LinAlgError as exc:
        raise FitError(f"HAR design rank-deficient: {exc}") from exc
    if not np.all(np.isfinite(beta)):
        raise FitError("HAR fit produced non-finite coefficients")
    return HarCoefficients(*(float(b) for b in beta))


def forecast_har(
    coeffs: HarCoefficients, rv_recent: np.ndarray, floor: float = VARIANCE_FLOOR
) -> float:
    """Linear prediction from the trailing 1/5/22-day RV means, clamped below."""
    rv = np.asarray(rv_recent, dtype=float)
    if rv.size < 22:
        raise FitError(f"HAR forecast needs >= 22 trailing RV values, got {rv.size}")
    pred = (
        coeffs.beta0
        + coeffs.beta_d * rv[-1]
        + coeffs.beta_w * np.mean(rv[-5:])
        + coeffs.beta_m * np.mean(rv[-22:])
    )
    return max(float(pred), floor)


def ewma_recursion(r2: np.ndarray, seed: float, lam: float) -> float:
    """Core update sigma2 <- lam*sigma2 + (1-lam)*r2, folded over r2."""
    sig2 = seed
    for v in r2:
        sig2 = lam * sig2 + (1.0 - lam) * v
    return sig2


def ewma_forecast_path(
    returns: np.ndarray, lam: float = EWMA_DEFAULT_LAMBDA, seed_len: int = EWMA_SEED_LEN
) -> np.ndarray:
    """Forecast path: entry i is the next-day variance given returns[0..i].

    Entries before the seed window fills are nan. The seed is the sample
    variance of the first ``seed_len`` returns, so the path is a pure prefix
    function of the input (truncation-safe).
    """
    r = np.asarray(returns, dtype=float)
    out = np.full(r.size, np.nan)
    if r.size < seed_len:
        return out
    sig2 = float(np.var(r[:seed_len]))
    out[seed_len - 1] = sig2
    for i in range(seed_len, r.size):
        sig2 = lam * sig2 + (1.0 - lam) * r[i] * r[i]
        out[i] = sig2
    return out


def forecast_ewma(
    returns: np.ndarray,
    lam: float = EWMA_DEFAULT_LAMBDA,
    floor: float = VARIANCE_FLOOR,
    seed_len: int = EWMA_SEED_LEN,
) -> float:
    """Exponentially weighted variance forecast from the full return history."""
    r = np.asarray(returns, dtype=float)
    if r.size < seed_len:
        raise FitError(f"EWMA needs >= {seed_len} returns, got {r.size}")
    path = ewma_forecast_path(r, lam, seed_len)
    return max(float(path[-1]), floor)


@dataclass(frozen=True)
class ExternalStream:
    """Dated variance forecasts supplied from outside the pipeline."""

    name: str
    forecasts: dict[str, float]

    def forecast(self, date: str) -> float | None:
        return self.forecasts.get(date)


def read_external_forecasts(path, name: str) -> ExternalStream:
    """Load a `date,forecast` CSV; any non-positive or non-finite forecast
    is rejected with the offending row named."""
    df = pd.read_csv(path, dtype={"date": str}, comment="#")
    if list(df.columns[:2]) != ["date", "forecast"]:
        raise InputError(f"{path}: external stream must have columns date,forecast")
    vals = pd.to_numeric(df["forecast"], errors="coerce")
    bad = ~(np.isfinite(vals) & (vals > 0.0))
    if bad.any():
        row = df.index[bad][0]
        raise InputError(
            f"{path}: non-positive or non-finite forecast at row {row + 2} "
            f"(date {df['date'].iloc[row]})"
        )
    if df["date"].duplicated().any():
        dup = df["date"][df["date"].duplicated()].iloc[0]
        raise InputError(f"{path}: duplicate date {dup}")
    return ExternalStream(name=name, forecasts=dict(zip(df["date"], vals.astype(float))))


# -- bindings ---------------------------------------------------------------

NATIVE_KINDS = {"HAR-RV": "har", "GARCH-t": "garch_t", "FIGARCH": "figarch", "EWMA": "ewma"}


@dataclass(frozen=True)
class ModelBinding:
    """How a pool name resolves to a forecaster.

    kind is one of har / garch_t / figarch / ewma / external. EWMA bindings
    carry their decay; external bindings carry the source path.
    """

    name: str
    kind: str
    ewma_lambda: float = EWMA_DEFAULT_LAMBDA
    external_path: str = ""

    @property
    def slow_refit(self) -> bool:
        """True for models re-estimated on the 21-day cadence."""
        return self.kind in ("har", "ewma", "external")


def parse_binding(name: str, value: str) -> ModelBinding:
    """Parse a binding spec: `native`, `ewma`, `ewma:<lambda>`, `external:<path>`."""
    value = value.strip()
    if value == "native":
        kind = NATIVE_KINDS.get(name)
        if kind is None:
            raise InputError(f"model {name!r} has no native implementation")
        return ModelBinding(name=name, kind=kind)
    if value == "ewma":
        return ModelBinding(name=name, kind="ewma")
    if value.startswith("ewma:"):
        lam = float(value.split(":", 1)[1])
        if not 0.0 <= lam < 1.0:
            raise InputError(f"binding {name}: EWMA lambda must be in [0,1), got {lam}")
        return ModelBinding(name=name, kind="ewma", ewma_lambda=lam)
    if value.startswith("external:"):
        return ModelBinding(name=name, kind="external", external_path=value.split(":", 1)[1])
    raise InputError(f"binding {name}: unknown spec {value!r}")
