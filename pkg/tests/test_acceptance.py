"""End-to-end acceptance checks with pinned tolerances.

Each test prints one PASS/FAIL line. The selection studies, the synthetic
forecasting study and the GARCH recovery run at full scale, so this module
takes a few hours on a single core; ``-m "not slow"`` skips those parts.
"""
import math
import os

import numpy as np
import pytest

from gar.backtest import dm_from_diff, mpe, report, run_backtest
from gar.dataset import RollingWindowPlan
from gar.decomp import GroupPartition, additivity_error, decompose_series
from gar.garch import GarchParams, bootstrap_quantile, fit_garch, simulate
from gar.qr_core import fit_qr
from gar.simlab import DgpSpec, location_scale_panel, run_study, selector

from oracles import brute_force_qr
from test_dataset import future_perturbation_holds
from test_qrf import honesty_holds

JOBS = os.cpu_count() or 1
SEED = 2024
REPS = 200
TAU = 0.05


def fmt(v):
    return "[" + " ".join(f"{x:.3f}" for x in v) + "]"


@pytest.fixture(scope="module")
def studies():
    """QPCR and l1-QR on shared replications; computed once for criteria 1-4."""
    out = {}
    for key, setup, T, p, method in [
        ("qpcr_sparse", "fixed-sparse", 500, 110, "qpcr"),
        ("qpcr_small", "fixed-sparse", 100, 220, "qpcr"),
        ("qpcr_dense", "dense", 500, 110, "qpcr"),
        ("l1_sparse", "fixed-sparse", 500, 110, "l1"),
    ]:
        spec = DgpSpec(setup, T, p, 5, SEED)
        out[key] = run_study(spec, selector(method), TAU, REPS, n_jobs=JOBS)
    return out


@pytest.mark.slow
def test_selection_frequencies_large_sample(studies, criterion):
    rep = studies["qpcr_sparse"]
    freq, false = rep.per_relevant_frequency, rep.avg_false
    ok = (rep.n_failed == 0 and np.all((freq >= 0.82) & (freq <= 0.96))
          and 0.6 <= false <= 2.0)
    criterion(1, ok, f"QPCR T=500 p=110: freq {fmt(freq)} in [0.82, 0.96], "
                     f"avg false {false:.3f} in [0.6, 2.0]")
    assert ok


@pytest.mark.slow
def test_selection_collapses_in_small_sample(studies, criterion):
    freq = studies["qpcr_small"].per_relevant_frequency
    ok = bool(np.all(freq <= 0.25))
    criterion(2, ok, f"QPCR T=100 p=220: freq {fmt(freq)} all <= 0.25")
    assert ok


@pytest.mark.slow
def test_l1_over_selects(studies, criterion):
    l1, q = studies["l1_sparse"], studies["qpcr_sparse"]
    freq = l1.per_relevant_frequency
    ok = bool(np.all(freq >= 0.90) and l1.avg_false >= 8 and q.avg_false < l1.avg_false)
    criterion(3, ok, f"l1-QR CV: freq {fmt(freq)} >= 0.90, avg false {l1.avg_false:.2f} >= 8, "
                     f"QPCR avg false {q.avg_false:.2f} lower")
    assert ok


@pytest.mark.slow
def test_dense_design_lowers_frequencies(studies, criterion):
    dense = studies["qpcr_dense"].per_relevant_frequency
    sparse = studies["qpcr_sparse"].per_relevant_frequency
    ok = bool(np.all(dense <= sparse + 0.05))
    criterion(4, ok, f"dense {fmt(dense)} <= fixed-sparse {fmt(sparse)} + 0.05")
    assert ok


def test_solver_matches_enumeration(criterion):
    rng = np.random.default_rng(SEED)
    worst = 0.0
    for _ in range(200):
        T = int(rng.integers(4, 13))
        k = int(rng.integers(0, 3))
        X = rng.standard_normal((T, k))
        Y = X @ rng.standard_normal(k) + rng.standard_t(2, T)
        tau = float(rng.uniform(0.05, 0.95))
        f = fit_qr(Y, X, tau)
        ref = brute_force_qr(Y, np.column_stack([np.ones(T), X]), tau)
        worst = max(worst, abs(f.objective - ref))
    ok = worst <= 1e-6
    criterion(5, ok, f"200 problems T<=12 |S|<=2: max |objective - enumeration| = {worst:.2e}")
    assert ok


# --- synthetic forecasting study ------------------------------------------

PANELS = 50
T_PANEL, P_PANEL, WINDOW, N_FORECASTS = 645, 110, 420, 225


@pytest.fixture(scope="module")
def panel_runs():
    runs = []
    plan = RollingWindowPlan(WINDOW, N_FORECASTS)
    for k in range(PANELS):
        pan = location_scale_panel(T_PANEL, P_PANEL, seed=k)
        runs.append(run_backtest(pan, plan, ["qpcr", "intercept"], TAU, seed=k, n_jobs=JOBS))
    return runs


TABLE_METHODS = [
    {"kind": "qpcr", "name": "QPCR"},
    {"kind": "l1", "name": "l1-QR", "n_lambda": 10},
    {"kind": "scad", "name": "SCAD", "n_lambda": 10},
    {"kind": "mcp", "name": "MCP", "n_lambda": 10},
    {"kind": "qrfatw", "name": "QRFATW", "n_trees": 20},
    {"kind": "qrfm", "name": "QRFM", "n_trees": 20},
    {"kind": "garch", "name": "GARCH", "n_boot": 10_000},
]


@pytest.fixture(scope="module")
def table_run():
    pan = location_scale_panel(T_PANEL, P_PANEL, seed=PANELS)
    plan = RollingWindowPlan(WINDOW, 24)
    return run_backtest(pan, plan, TABLE_METHODS, TAU, seed=PANELS, n_jobs=JOBS)


def _linear_runs(runs):
    for res in runs:
        for name in res.methods:
            recs = [r for r in res.for_method(name) if r.model is not None]
            if recs and recs[0].model.p > 0:
                yield recs


@pytest.mark.slow
def test_contributions_add_up(panel_runs, table_run, criterion):
    rng = np.random.default_rng(SEED)
    worst, n_frames = 0.0, 0
    for recs in _linear_runs(panel_runs + [table_run]):
        p = recs[0].model.p
        models = [r.model for r in recs]
        X = np.array([r.x_next for r in recs])
        for _ in range(3):
            k = int(rng.integers(2, 8))
            labels = rng.integers(0, k, p)
            labels[:k] = np.arange(k)
            part = GroupPartition.from_labels([f"g{v}" for v in rng.permutation(labels)])
            frame = decompose_series(models, X, [r.window_index for r in recs], part)
            worst = max(worst, additivity_error(frame))
            n_frames += 1
    ok = n_frames > 0 and worst <= 1e-10
    criterion(6, ok, f"{n_frames} decompositions (3 random partitions per run): "
                     f"max relative error {worst:.1e} <= 1e-10")
    assert ok


def test_dm_size(criterion):
    rng = np.random.default_rng(0)
    d = rng.standard_normal((10_000, 225))
    stats = np.array([dm_from_diff(row).statistic for row in d])
    rate = float(np.mean(np.abs(stats) > 1.96))
    ok = 0.04 <= rate <= 0.06
    criterion(7, ok, f"DM size at n=225, 10000 reps: rejection rate {rate:.4f} in [0.04, 0.06]")
    assert ok


@pytest.mark.slow
def test_garch_recovery(criterion):
    truth = GarchParams(0.0, 0.0, 0.1, 0.1, 0.8)
    hits = 0
    for r in range(50):
        p = fit_garch(simulate(truth, 5000, rng=100 + r)).params
        hits += all(abs(a - b) <= 0.08 for a, b in
                    zip((p.omega, p.alpha, p.gamma), (truth.omega, truth.alpha, truth.gamma)))
    z = np.random.default_rng(SEED).standard_normal(5000)
    q = bootstrap_quantile(z, 0.05, 100_000, rng=SEED)
    ok = hits / 50 >= 0.90 and abs(q - (-1.645)) <= 0.05
    criterion(8, ok, f"GARCH (0.1, 0.1, 0.8), T=5000: {hits}/50 within 0.08 (need 45); "
                     f"bootstrap 5% quantile {q:.4f} within 0.05 of -1.645")
    assert ok


@pytest.mark.slow
def test_forecasting_study(panel_runs, table_run, criterion):
    wins = sum(mpe(res.for_method("qpcr")) < mpe(res.for_method("intercept"))
               for res in panel_runs)
    tab = report(table_run, reference="QPCR")[["method", "mpe_x1e3", "dm"]]
    labels = [m["name"] for m in TABLE_METHODS]
    shape_ok = (tab.shape == (7, 3) and list(tab["method"]) == labels
                and math.isnan(tab["dm"][0]) and tab["dm"][1:].notna().all()
                and np.isfinite(tab["mpe_x1e3"]).all())
    ok = wins / PANELS >= 0.90 and shape_ok
    criterion(9, ok, f"QPCR beats intercept MPE in {wins}/{PANELS} panels (need 45); "
                     f"report table {tab.shape[0]}x{tab.shape[1]} "
                     f"{'matches' if shape_ok else 'does not match'} the 7x3 layout")
    assert ok


def test_honesty_and_no_look_ahead(criterion):
    honest = sum(honesty_holds(SEED + i, v) for i in range(50) for v in ("m", "atw"))
    causal = sum(future_perturbation_holds(SEED + i, i % 2 == 0) for i in range(50))
    ok = honest == 100 and causal == 50
    criterion(10, ok, f"forest honesty {honest}/100 fixtures, "
                      f"future-row perturbation {causal}/50 fixtures")
    assert ok
