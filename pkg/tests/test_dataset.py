import numpy as np
import pandas as pd
import pytest
from hypothesis import given, strategies as st

from gar.dataset import (
    LAG_GROUP,
    PanelData,
    RawPanel,
    RollingWindowPlan,
    Standardization,
    apply_transforms,
    build_panel,
    load_fredmd_csv,
    transform_series,
    windows,
    write_fredmd_csv,
    write_groups,
)
from gar.errors import (
    DuplicateColumn,
    EmptyAfterAlignment,
    MalformedCsv,
    NonMonotoneDates,
    NonPositiveForLog,
    PlanOutOfRange,
    TargetMissing,
)
from gar.simlab import synthetic_raw_panel


def write(tmp_path, text, name="panel.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


GOOD = """sasdate,A,B,C
Transform:,1,5,2
1/1/2000,1.0,10,3
2/1/2000,2.0,11,5
3/1/2000,,12.1,4
4/1/2000,4.0,13,8
"""


class TestLoad:
    def test_reads_codes_and_missing(self, tmp_path):
        raw = load_fredmd_csv(write(tmp_path, GOOD))
        assert raw.column_names == ("A", "B", "C")
        assert raw.transform_codes == (1, 5, 2)
        assert raw.dates[0] == pd.Timestamp("2000-01-01")
        assert np.isnan(raw.values[2, 0])

    def test_groups_file(self, tmp_path):
        g = write(tmp_path, "name,group\nA,output\nB,prices\n", "groups.csv")
        raw = load_fredmd_csv(write(tmp_path, GOOD), g)
        assert raw.group_labels == ("output", "prices", "")

    @pytest.mark.parametrize("text,err", [
        ("sasdate,A,A\nTransform:,1,1\n2000-01-01,1,2\n", DuplicateColumn),
        ("sasdate,A\nTransform:,9\n2000-01-01,1\n", MalformedCsv),
        ("sasdate,A\nTransform:,x\n2000-01-01,1\n", MalformedCsv),
        ("sasdate,A\n", MalformedCsv),
        ("sasdate,A\nTransform:,1\n2000-02-01,1\n2000-01-01,2\n", NonMonotoneDates),
        ("sasdate,A\nTransform:,1\n2000-01-01,1\n2000-02-01,2\n2000-04-01,3\n", NonMonotoneDates),
        ("sasdate,A\nTransform:,1\nyesterday,1\n", MalformedCsv),
    ])
    def test_malformed(self, tmp_path, text, err):
        with pytest.raises(err):
            load_fredmd_csv(write(tmp_path, text))

    def test_round_trip(self, tmp_path):
        raw = synthetic_raw_panel(40, 6, s=2, seed=3)
        write_fredmd_csv(raw, tmp_path / "a.csv")
        write_groups(raw, tmp_path / "g.csv")
        back = load_fredmd_csv(tmp_path / "a.csv", tmp_path / "g.csv")
        assert back.column_names == raw.column_names
        assert back.group_labels == raw.group_labels
        assert np.array_equal(back.values, raw.values)
        assert back.dates.equals(raw.dates)


class TestTransforms:
    x = np.array([1.0, 2.0, 4.0, 8.0, 10.0])

    def test_level(self):
        assert np.array_equal(transform_series(self.x, 1), self.x)

    def test_differences(self):
        d1 = transform_series(self.x, 2)
        assert np.isnan(d1[0]) and np.allclose(d1[1:], [1, 2, 4, 2])
        d2 = transform_series(self.x, 3)
        assert np.isnan(d2[:2]).all() and np.allclose(d2[2:], [1, 2, -2])

    def test_logs(self):
        lx = np.log(self.x)
        assert np.allclose(transform_series(self.x, 4), lx)
        assert np.allclose(transform_series(self.x, 5)[1:], np.diff(lx))
        assert np.allclose(transform_series(self.x, 6)[2:], np.diff(lx, 2))

    def test_growth_change(self):
        # growth: 1, 1, 1, 0.25 -> changes 0, 0, -0.75
        out = transform_series(self.x, 7)
        assert np.isnan(out[:2]).all() and np.allclose(out[2:], [0, 0, -0.75])

    @pytest.mark.parametrize("code", [4, 5, 6])
    def test_log_needs_positive(self, code):
        with pytest.raises(NonPositiveForLog):
            transform_series([1.0, 0.0, 2.0], code)

    def test_missing_values_propagate(self):
        out = transform_series([1.0, np.nan, 3.0, 4.0], 2)
        assert np.isnan(out[:3]).all() and out[3] == 1.0

    def test_panel_level(self, tmp_path):
        raw = apply_transforms(load_fredmd_csv(write(tmp_path, GOOD)))
        assert raw.transformed
        assert np.allclose(raw.values[1:, 1], np.diff(np.log([10, 11, 12.1, 13])))


class TestBuildPanel:
    def test_alignment_and_listwise_deletion(self, tmp_path):
        raw = load_fredmd_csv(write(tmp_path, GOOD))
        pan = build_panel(raw, "C", standardize=False)
        # rows dated Jan and Feb survive; Mar has a missing predictor
        assert pan.T == 2
        assert np.array_equal(pan.Y, [5.0, 4.0])
        assert np.array_equal(pan.X[:, 2], [3.0, 5.0])
        assert pan.group_labels[2] == LAG_GROUP
        assert list(pan.target_dates) == [pd.Timestamp("2000-02-01"), pd.Timestamp("2000-03-01")]
        assert np.array_equal(pan.x_future, [4.0, 13.0, 8.0])

    def test_error_policy(self, tmp_path):
        raw = load_fredmd_csv(write(tmp_path, GOOD))
        with pytest.raises(EmptyAfterAlignment):
            build_panel(raw, "C", drop_missing_policy="error")

    def test_missing_target(self, tmp_path):
        with pytest.raises(TargetMissing):
            build_panel(load_fredmd_csv(write(tmp_path, GOOD)), "Z")

    def test_standardized_columns(self):
        pan = build_panel(synthetic_raw_panel(80, 5, s=2, seed=1), "Y")
        assert np.allclose(pan.X.mean(axis=0), 0, atol=1e-12)
        assert np.allclose(pan.X.std(axis=0), 1)
        assert np.allclose(pan.raw_X(), pan.standardization.invert(pan.X))

    def test_constant_column_is_centred_only(self):
        s = Standardization.fit(np.column_stack([np.full(5, 3.0), np.arange(5.0)]))
        assert s.std[0] == 1.0 and np.allclose(s.apply([[3.0, 2.0]])[0, 0], 0.0)


def _panel(T=60, p=4, seed=0, standardize=False):
    return build_panel(synthetic_raw_panel(T, p, s=2, seed=seed), "Y", standardize=standardize)


class TestWindows:
    def test_ranges(self):
        pan = _panel()
        ws = list(windows(pan, RollingWindowPlan(20, 5)))
        assert [w.train_range for w in ws] == [(i, 20 + i) for i in range(5)]
        for w in ws:
            assert np.array_equal(w.train.Y, pan.Y[w.train_range[0]:w.train_range[1]])
            assert w.y_next == pan.Y[w.forecast_row]
            assert np.array_equal(w.x_next, pan.X[w.forecast_row])
            assert w.date == pan.target_dates[w.forecast_row]

    def test_live_forecast_row(self):
        pan = _panel()
        last = list(windows(pan, RollingWindowPlan(20, 1, pan.T)))[0]
        assert np.isnan(last.y_next) and np.array_equal(last.x_next, pan.x_future)
        assert last.date == pan.future_date + pd.DateOffset(months=1)

    @pytest.mark.parametrize("plan", [RollingWindowPlan(0, 3), RollingWindowPlan(20, 100),
                                      RollingWindowPlan(20, 3, 10)])
    def test_plan_out_of_range(self, plan):
        with pytest.raises(PlanOutOfRange):
            list(windows(_panel(), plan))

    def test_training_standardization_uses_window_only(self):
        pan = _panel(standardize=True)
        w = list(windows(pan, RollingWindowPlan(25, 3)))[2]
        assert np.allclose(w.train.X.mean(axis=0), 0, atol=1e-12)
        raw = pan.raw_X()
        lo, hi = w.train_range
        mu, sd = raw[lo:hi].mean(axis=0), raw[lo:hi].std(axis=0)
        assert np.allclose(w.x_next, (raw[w.forecast_row] - mu) / sd)


def future_perturbation_holds(seed: int, standardize: bool) -> bool:
    """Changing raw rows after a window's target leaves that window untouched."""
    r = np.random.default_rng(seed)
    T, p = int(r.integers(40, 90)), int(r.integers(2, 7))
    raw = synthetic_raw_panel(T, p, s=min(2, p), seed=seed)
    L = int(r.integers(10, T // 2))
    plan = RollingWindowPlan(L, T - L - 1)
    base = list(windows(build_panel(raw, "Y", standardize=False), plan, standardize))
    k = int(r.integers(0, len(base)))
    # window k predicts Y at raw row forecast_row + 1; perturb everything after it
    cut = base[k].forecast_row + 2
    vals = raw.values.copy()
    vals[cut:] += r.normal(0, 50, vals[cut:].shape)
    bumped = RawPanel(raw.dates, vals, raw.column_names, raw.transform_codes, raw.group_labels)
    new = list(windows(build_panel(bumped, "Y", standardize=False), plan, standardize))
    a, b = base[k], new[k]
    return (np.array_equal(a.train.X, b.train.X) and np.array_equal(a.train.Y, b.train.Y)
            and np.array_equal(a.x_next, b.x_next) and a.y_next == b.y_next)


@given(st.integers(0, 2**31 - 1), st.booleans())
def test_no_look_ahead_property(seed, standardize):
    assert future_perturbation_holds(seed, standardize)


def test_panel_from_arrays_names():
    pan = PanelData.from_arrays(np.zeros(3), np.zeros((3, 2)))
    assert pan.column_names == ("x1", "x2") and pan.T == 3 and pan.p == 2
