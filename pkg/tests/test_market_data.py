import math

import numpy as np
import pandas as pd
import pytest

from volroute.errors import AlignmentError, InputError
from volroute.market_data import (
    VARIANCE_FLOOR,
    OhlcvBar,
    PanelSettings,
    build_panel,
    gk_variance,
    rolling_standardize,
)


def bar(o, h, lo, c, date="2020-01-02"):
    return OhlcvBar(date=date, open=o, high=h, low=lo, close=c)


class TestGkVariance:
    def test_flat_bar_clamps_to_floor(self):
        assert gk_variance(bar(100.0, 100.0, 100.0, 100.0)) == VARIANCE_FLOOR

    def test_range_only_bar(self):
        # ln(H/L) = 0.02 with C = O
        b = bar(100.0, 100.0 * math.exp(0.01), 100.0 * math.exp(-0.01), 100.0)
        assert gk_variance(b) == pytest.approx(0.5 * 0.02**2, rel=1e-12)
        assert gk_variance(b) == pytest.approx(2.0e-4, rel=1e-12)

    def test_mixed_bar(self):
        # ln(H/L) = 0.01 and ln(C/O) = 0.01
        h = 100.0 * math.exp(0.01)
        b = bar(100.0, h, 100.0, h)
        expected = 0.5e-4 - (2.0 * math.log(2.0) - 1.0) * 1e-4
        assert gk_variance(b) == pytest.approx(expected, rel=1e-12)
        assert gk_variance(b) == pytest.approx(1.1371e-5, rel=1e-4)

    def test_scale_invariance(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            o = 50.0 + 100.0 * rng.random()
            c = o * math.exp(rng.normal(0, 0.02))
            h = max(o, c) * math.exp(abs(rng.normal(0, 0.01)))
            lo = min(o, c) * math.exp(-abs(rng.normal(0, 0.01)))
            k = 10.0 ** rng.uniform(-2, 2)
            v1 = gk_variance(bar(o, h, lo, c))
            v2 = gk_variance(bar(o * k, h * k, lo * k, c * k))
            assert v2 == pytest.approx(v1, rel=1e-9)
            assert v1 >= VARIANCE_FLOOR

    def test_nonpositive_price_rejected(self):
        with pytest.raises(InputError):
            gk_variance(bar(100.0, 101.0, -1.0, 100.0))
        with pytest.raises(InputError):
            gk_variance(bar(0.0, 101.0, 99.0, 100.0))


def make_bars(dates, price=100.0):
    rows = []
    p = price
    for i, d in enumerate(dates):
        o = p
        c = p * (1.0 + 0.001 * ((i % 5) - 2))
        rows.append((d, o, max(o, c) * 1.001, min(o, c) * 0.999, c))
        p = c
    return pd.DataFrame(rows, columns=["date", "open", "high", "low", "close"])


def make_macro(dates, k=2):
    data = {"date": list(dates), "vix_like": [15.0 + i * 0.1 for i in range(len(dates))]}
    for j in range(1, k):
        data[f"f{j}"] = [float(i + j) for i in range(len(dates))]
    return pd.DataFrame(data)


SETTINGS = PanelSettings(vix_column="vix_like", standardize_window=4)


class TestBuildPanel:
    def test_inner_join_and_targets(self):
        d = [f"2020-01-{i:02d}" for i in range(1, 7)]
        panel = build_panel("X", make_bars(d[:5]), make_macro(d[1:6]), SETTINGS)
        assert panel.dates == d[1:5]
        # forecastable dates are all but the last panel row
        assert np.isfinite(panel.target[:-1]).all()
        assert math.isnan(panel.target[-1])
        assert panel.target[0] == panel.gk_var[1]

    def test_single_common_date_is_alignment_error(self):
        d = [f"2020-01-{i:02d}" for i in range(1, 7)]
        with pytest.raises(AlignmentError):
            build_panel("X", make_bars(d[:3]), make_macro(d[2:5]), SETTINGS)

    def test_unsorted_bars_rejected(self):
        d = ["2020-01-03", "2020-01-02", "2020-01-04"]
        with pytest.raises(InputError):
            build_panel("X", make_bars(d), make_macro(sorted(d)), SETTINGS)

    def test_missing_macro_dates_dropped(self):
        d = [f"2020-01-{i:02d}" for i in range(1, 11)]
        macro = make_macro(d)
        macro.loc[4, "vix_like"] = np.nan  # state feature missing -> date dropped
        panel = build_panel("X", make_bars(d), macro, SETTINGS)
        assert d[4] not in panel.dates
        assert len(panel.dates) == 9

    def test_returns_are_close_to_close_logs(self):
        d = [f"2020-01-{i:02d}" for i in range(1, 8)]
        bars = make_bars(d)
        panel = build_panel("X", bars, make_macro(d), SETTINGS)
        c = bars["close"].to_numpy()
        assert math.isnan(panel.returns[0])
        np.testing.assert_allclose(panel.returns[1:], np.log(c[1:] / c[:-1]), rtol=1e-12)

    def test_no_lookahead_truncation(self):
        d = [f"2020-02-{i:02d}" for i in range(1, 21)]
        bars, macro = make_bars(d), make_macro(d, k=3)
        full = build_panel("X", bars, macro, SETTINGS)
        t = 12
        trunc = build_panel("X", bars.iloc[: t + 2], macro.iloc[: t + 2], SETTINGS)
        np.testing.assert_array_equal(full.states_std[: t + 1], trunc.states_std[: t + 1])
        np.testing.assert_array_equal(full.gk_var[: t + 1], trunc.gk_var[: t + 1])
        np.testing.assert_array_equal(full.returns[: t + 1], trunc.returns[: t + 1])


class TestRollingStandardize:
    def test_constant_feature_maps_to_zero(self):
        x = np.full((10, 1), 3.5)
        z = rolling_standardize(x, 4)
        assert np.all(z[3:] == 0.0)
        assert np.isnan(z[:3]).all()

    def test_value_at_trailing_mean_is_zero(self):
        x = np.array([[1.0], [3.0], [2.0]])  # last value == mean(1,3,2) = 2
        z = rolling_standardize(x, 3)
        assert z[2, 0] == pytest.approx(0.0, abs=1e-12)

    def test_linear_ramp_oracle(self):
        window = 504
        n = 700
        x = np.arange(n, dtype=float).reshape(-1, 1)
        z = rolling_standardize(x, window)
        t = 650
        w = x[t - window + 1 : t + 1, 0]
        expected = (x[t, 0] - w.mean()) / w.std(ddof=1)
        assert z[t, 0] == pytest.approx(expected, rel=1e-12)
        assert z[t, 0] == pytest.approx(1.727, abs=2e-3)

    def test_affine_invariance(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(60, 2))
        z1 = rolling_standardize(x, 20)
        z2 = rolling_standardize(2.5 * x + 7.0, 20)
        np.testing.assert_allclose(z1[19:], z2[19:], atol=1e-10)
