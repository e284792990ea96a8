"""Synthetic OHLC + macro panel generator with a two-state volatility chain.

Returns follow per-state GARCH dynamics with Student-t innovations; the
latent calm/stress state switches by a first-order Markov chain. Bars are
built so the Garman-Klass estimator is an approximately unbiased proxy of
the true daily variance:

    open_t = close_{t-1},  ln(C/O) = r_t,  ln(H/L) = max(k * sigma_t * eta_t, |r_t|)

with eta_t lognormal normalized to E[eta^2] = 1. Unbiasedness requires
E[ln(H/L)^2] = 4 ln 2 * sigma^2 (the (2 ln 2 - 1) r^2 term then cancels in
expectation); because the max() with |r_t| fattens the squared range under
t(8) innovations, k is calibrated numerically to 1.5706 (solving
E[max(k*eta, |z|)^2] = 4 ln 2 for standardized-t(8) z and the default eta),
rather than the no-truncation value sqrt(4 ln 2) = 1.665. The high/low
placement splits the excess range uniformly around the open/close bracket.

Macro features are noisy monotone transforms of the latent state: a
VIX-like level affine in true annualized volatility, a yield-curve slope
decreasing in stress, and a credit spread increasing in stress. True states
and variances go to sidecar frames for oracle checks.

`generate_synthetic_market` drives several assets off one shared market
chain (one macro file for the whole panel, per-asset idiosyncratic
innovations); `generate_synthetic_panel` is the single-asset form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .errors import ConfigError

# calibrated against standardized-t(8) innovations and range_noise 0.25;
# see the module docstring
RANGE_K = 1.5706


@dataclass(frozen=True)
class SyntheticParams:
    days: int = 2600
    p_calm_stay: float = 0.99
    p_stress_stay: float = 0.97
    calm_ann_vol: float = 0.10
    stress_ann_vol: float = 0.40
    calm_arch: float = 0.05
    calm_garch: float = 0.90
    stress_arch: float = 0.15
    stress_garch: float = 0.45
    nu: float = 8.0
    range_noise: float = 0.25
    vix_slope: float = 1.0
    vix_intercept: float = 4.0
    vix_noise: float = 1.5
    slope_noise: float = 0.3
    credit_noise: float = 0.25
    start_price: float = 100.0
    start_date: str = "2015-01-02"

    def validate(self) -> None:
        for name in ("p_calm_stay", "p_stress_stay"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"transition probability {name}={v} outside [0,1]")
        if self.days < 10:
            raise ConfigError(f"synthetic panel needs at least 10 days, got {self.days}")
        for name in ("calm_ann_vol", "stress_ann_vol"):
            if getattr(self, name) <= 0.0:
                raise ConfigError(f"{name} must be positive")
        if self.calm_arch + self.calm_garch >= 1.0 or self.stress_arch + self.stress_garch >= 1.0:
            raise ConfigError("per-state GARCH persistence must be below 1")
        if self.nu <= 2.0:
            raise ConfigError("innovation dof must exceed 2")


def _dates(params: SyntheticParams) -> list[str]:
    return [d.strftime("%Y-%m-%d") for d in pd.bdate_range(params.start_date, periods=params.days)]


def _simulate_chain(rng: np.random.Generator, params: SyntheticParams) -> np.ndarray:
    stay = (params.p_calm_stay, params.p_stress_stay)
    u = rng.random(params.days)
    state = np.zeros(params.days, dtype=int)
    for t in range(1, params.days):
        state[t] = state[t - 1] if u[t] < stay[state[t - 1]] else 1 - state[t - 1]
    return state


def _simulate_returns(
    rng: np.random.Generator, params: SyntheticParams, state: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    n = params.days
    z = rng.standard_t(params.nu, size=n) * math.sqrt((params.nu - 2.0) / params.nu)
    uncond = np.array([params.calm_ann_vol**2 / 252.0, params.stress_ann_vol**2 / 252.0])
    arch = np.array([params.calm_arch, params.stress_arch])
    garch = np.array([params.calm_garch, params.stress_garch])
    omega = uncond * (1.0 - arch - garch)
    sig2 = np.empty(n)
    r = np.empty(n)
    sig2[0] = uncond[state[0]]
    r[0] = math.sqrt(sig2[0]) * z[0]
    for t in range(1, n):
        s = state[t]
        sig2[t] = omega[s] + arch[s] * r[t - 1] ** 2 + garch[s] * sig2[t - 1]
        r[t] = math.sqrt(sig2[t]) * z[t]
    return sig2, r


def _bars(
    rng: np.random.Generator,
    params: SyntheticParams,
    dates: list[str],
    sig2: np.ndarray,
    r: np.ndarray,
) -> pd.DataFrame:
    n = params.days
    eta = np.exp(params.range_noise * rng.standard_normal(n) - params.range_noise**2)
    u_split = rng.random(n)
    close = params.start_price * np.exp(np.cumsum(r))
    open_ = np.empty(n)
    open_[0] = params.start_price
    open_[1:] = close[:-1]
    span = np.maximum(RANGE_K * np.sqrt(sig2) * eta, np.abs(r) * (1.0 + 1e-9))
    gap = span - np.abs(r)
    up = u_split * gap
    high = np.maximum(open_, close) * np.exp(up)
    low = np.minimum(open_, close) * np.exp(-(gap - up))
    return pd.DataFrame({"date": dates, "open": open_, "high": high, "low": low, "close": close})


def _macro(
    rng: np.random.Generator,
    params: SyntheticParams,
    dates: list[str],
    state: np.ndarray,
    sig2: np.ndarray,
) -> pd.DataFrame:
    n = params.days
    ann_vol_pct = np.sqrt(sig2) * math.sqrt(252.0) * 100.0
    vix_like = (
        params.vix_slope * ann_vol_pct
        + params.vix_intercept
        + params.vix_noise * rng.standard_normal(n)
    )
    yield_slope = 1.5 - 2.0 * state + params.slope_noise * rng.standard_normal(n)
    credit_spread = 1.0 + 2.5 * state + params.credit_noise * rng.standard_normal(n)
    return pd.DataFrame(
        {
            "date": dates,
            "vix_like": vix_like,
            "yield_slope": yield_slope,
            "credit_spread": credit_spread,
        }
    )


def generate_synthetic_panel(
    seed: int, params: SyntheticParams | None = None
) -> tuple[pd.DataFrame, pd.DataFrame, pd.DataFrame]:
    """One asset with its own latent chain. Returns (bars, macro, truth)."""
    params = params or SyntheticParams()
    params.validate()
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    dates = _dates(params)
    state = _simulate_chain(rng, params)
    sig2, r = _simulate_returns(rng, params, state)
    bars = _bars(rng, params, dates, sig2, r)
    macro = _macro(rng, params, dates, state, sig2)
    truth = pd.DataFrame({"date": dates, "state": state, "true_var": sig2})
    return bars, macro, truth


def generate_synthetic_market(
    seed: int, assets: list[str], params: SyntheticParams | None = None
) -> tuple[dict[str, pd.DataFrame], pd.DataFrame, dict[str, pd.DataFrame]]:
    """Several assets sharing one market chain and one macro file.

    The macro features derive from a market-level variance path; each asset
    draws idiosyncratic innovations (and bar noise) under the shared state.
    Returns ({asset: bars}, macro, {asset: truth}).
    """
    params = params or SyntheticParams()
    params.validate()
    root = np.random.SeedSequence(seed)
    children = root.spawn(len(assets) + 1)
    market_rng = np.random.default_rng(children[0])
    dates = _dates(params)
    state = _simulate_chain(market_rng, params)
    market_sig2, _ = _simulate_returns(market_rng, params, state)
    macro = _macro(market_rng, params, dates, state, market_sig2)

    bars_by_asset: dict[str, pd.DataFrame] = {}
    truth_by_asset: dict[str, pd.DataFrame] = {}
    for child, asset in zip(children[1:], assets):
        rng = np.random.default_rng(child)
        sig2, r = _simulate_returns(rng, params, state)
        bars_by_asset[asset] = _bars(rng, params, dates, sig2, r)
        truth_by_asset[asset] = pd.DataFrame({"date": dates, "state": state, "true_var": sig2})
    return bars_by_asset, macro, truth_by_asset
