import math

import numpy as np
import pandas as pd
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from gar.backtest import (
    ForecastRecord,
    default_lag,
    diebold_mariano,
    dm_from_diff,
    dm_matrix,
    mpe,
    newey_west,
    report,
    run_backtest,
)
from gar.dataset import RollingWindowPlan, build_panel
from gar.errors import EmptyRecords, MisalignedRecords, TooShort
from gar.estimators import Estimator, make
from gar.simlab import synthetic_raw_panel

from oracles import check_loss


def nw_loop(d, lag):
    n = len(d)
    m = sum(d) / n
    gam = [sum((d[t] - m) * (d[t - k] - m) for t in range(k, n)) / n for k in range(lag + 1)]
    return gam[0] + 2 * sum((1 - k / (lag + 1)) * gam[k] for k in range(1, lag + 1))


def recs(method, pred, real, tau=0.05, windows=None):
    idx = range(len(pred)) if windows is None else windows
    return [ForecastRecord(i, None, method, tau, float(p), float(r))
            for i, p, r in zip(idx, pred, real)]


@pytest.fixture(scope="module")
def panel():
    return build_panel(synthetic_raw_panel(90, 8, s=2, seed=4), "Y")


class TestStatistics:
    @given(arrays(float, st.integers(3, 40), elements=st.floats(-10, 10)), st.integers(0, 8))
    def test_newey_west_matches_loop(self, d, lag):
        if lag >= len(d):
            lag = len(d) - 1
        assert newey_west(d, lag) == pytest.approx(max(nw_loop(list(d), lag), 0.0), abs=1e-9)

    def test_default_lag(self):
        assert default_lag(225) == 6 and default_lag(8) == 2 and default_lag(27) == 3

    def test_dm_value(self, rng):
        d = rng.standard_normal(100) + 0.3
        res = dm_from_diff(d)
        ref = d.mean() / math.sqrt(nw_loop(list(d), 4) / 100)
        assert res.statistic == pytest.approx(ref) and res.lag == 4 and not res.degenerate

    def test_degenerate_differentials(self):
        assert dm_from_diff(np.zeros(10)).statistic == 0.0
        r = dm_from_diff(np.full(10, 0.5))
        assert r.degenerate and r.statistic == math.inf
        with pytest.raises(TooShort):
            dm_from_diff([1.0])

    def test_mpe(self):
        r = recs("a", [0.0, 1.0, 2.0], [1.0, 0.0, 2.0], tau=0.1)
        assert mpe(r) == pytest.approx(np.mean(check_loss(0.1, [1.0, -1.0, 0.0])))
        failed = [ForecastRecord(0, None, "a", 0.1, float("nan"), 1.0, "boom")]
        with pytest.raises(EmptyRecords):
            mpe(failed)

    def test_dm_sign_and_alignment(self, rng):
        y = rng.standard_normal(50)
        good = recs("good", y - 0.1, y)
        bad = recs("bad", y - 2.0 + 0.1 * rng.standard_normal(50), y)
        assert diebold_mariano(good, bad).statistic < -1.96
        # only windows present for both methods are compared
        partial = recs("p", (y - 2.0)[10:], y[10:], windows=range(10, 50))
        assert diebold_mariano(good, partial).n == 40
        wrong = recs("w", y, y + 1)
        with pytest.raises(MisalignedRecords):
            diebold_mariano(good, wrong)
        with pytest.raises(MisalignedRecords):
            diebold_mariano(good[:5], bad[:5])


class TestRun:
    methods = ["intercept", {"kind": "qpcr"}, {"kind": "l1", "lambda": 0.01},
               {"kind": "qrfm", "n_trees": 20}, {"kind": "garch", "n_boot": 2000}]

    def test_records_and_report(self, panel):
        res = run_backtest(panel, RollingWindowPlan(60, 12), self.methods, 0.1, seed=3)
        assert len(res.records) == 12 * 5 and res.methods == ["intercept", "qpcr", "l1",
                                                              "qrfm", "garch"]
        assert all(r.ok for r in res.records)
        tab = report(res, reference="qpcr", order=["qpcr", "l1", "qrfm", "garch", "intercept"])
        assert list(tab.columns) == ["method", "mpe_x1e3", "dm", "n_failed"]
        assert pd.isna(tab.loc[0, "dm"]) and tab["dm"][1:].notna().all()
        assert tab.loc[0, "mpe_x1e3"] == pytest.approx(1e3 * mpe(res.for_method("qpcr")))
        M = dm_matrix(res)
        assert np.allclose(M.to_numpy(), -M.to_numpy().T)
        # realized values are the panel targets
        r0 = res.for_method("intercept")[0]
        assert r0.realized == panel.Y[60] and r0.date == panel.target_dates[60]

    def test_deterministic_and_method_streams_independent(self, panel):
        plan = RollingWindowPlan(60, 5)
        a = run_backtest(panel, plan, ["intercept", {"kind": "qrfatw", "n_trees": 10}], 0.1, 7)
        b = run_backtest(panel, plan, [{"kind": "qrfatw", "n_trees": 10}, "garch"], 0.1, 7,
                         n_jobs=2)
        pa = [r.predicted for r in a.for_method("qrfatw")]
        pb = [r.predicted for r in b.for_method("qrfatw")]
        assert pa == pb

    def test_failures_are_recorded(self, panel):
        res = run_backtest(panel, RollingWindowPlan(20, 3), ["intercept", "garch"], 0.1)
        assert res.failures == {"intercept": 0, "garch": 3}
        assert all("TooShort" in r.error for r in res.for_method("garch"))
        assert res.frame().shape == (6, 7)

    def test_duplicate_names(self, panel):
        with pytest.raises(ValueError):
            run_backtest(panel, RollingWindowPlan(60, 2), ["intercept", "intercept"], 0.1)


class TestEstimators:
    def test_make(self):
        e = make({"kind": "l1", "name": "lasso", "lambda": 0.1})
        assert e.kind == "l1" and e.name == "lasso" and e.params == {"lambda": 0.1}
        assert make("qpcr").label == "QPCR"
        with pytest.raises(ValueError):
            Estimator("ols")

    def test_intercept_is_window_quantile(self, panel):
        w = panel.rows(range(37))  # T * tau not an integer
        pred = make("intercept").fit_predict(w, panel.X[37], 0.1)
        assert pred.value == np.quantile(w.Y, 0.1, method="inverted_cdf")
        assert pred.model.active_set == ()
