import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.stats import norm

from gar.errors import DataError
from gar.simlab import (
    DgpSpec,
    Setup,
    coefficients,
    generate,
    location_scale_panel,
    replication_rng,
    run_study,
    selector,
    synthetic_raw_panel,
    true_quantile,
)


class TestDesign:
    def test_coefficients(self):
        a, b = coefficients(DgpSpec("fixed-sparse", 10, 8, 3))
        assert np.all(a[:, :3] == -1) and np.all(b[:, :3] == 1) and not a[:, 3:].any()
        a, b = coefficients(DgpSpec("time-varying-sparse", 10, 8, 3))
        assert np.all(b[5:, :3] == 0.5) and np.all(b[:5, :3] == 1)
        a, b = coefficients(DgpSpec("dense", 10, 8, 3))
        assert np.allclose(a[:, 3:], 1 / 8) and np.allclose(b[:, 3:], 1 / 8)

    def test_invalid(self):
        with pytest.raises(DataError):
            DgpSpec("dense", 10, 3, 5)
        with pytest.raises(ValueError):
            DgpSpec("sparse", 10, 3, 1)

    def test_true_quantile_is_conditional_quantile(self):
        spec = DgpSpec("fixed-sparse", 2, 6, 2)
        x = np.array([[0.5, 1.5, 1, 1, 1, 1]] * 2)
        r = np.random.default_rng(0)
        eps = r.standard_normal(200_000)
        Y = -(0.5 + 1.5) + (0.5 + 1.5) * eps
        q = true_quantile(spec, x, 0.05)[0]
        assert q == pytest.approx(-2 + 2 * norm.ppf(0.05))
        assert np.mean(Y <= q) == pytest.approx(0.05, abs=0.003)

    @given(st.integers(0, 1000), st.sampled_from(list(Setup)))
    def test_generate_shapes_and_innovations(self, seed, setup):
        spec = DgpSpec(setup, 30, 7, 3, seed)
        Y, X, sup = generate(spec, eps=0.0)
        a, _ = coefficients(spec)
        assert np.all(X >= 0) and sup == (0, 1, 2)
        assert np.allclose(Y, np.sum(X * a, axis=1))

    def test_replication_streams(self):
        a = replication_rng(5, 3).standard_normal(3)
        b = replication_rng(5, 3).standard_normal(3)
        c = replication_rng(5, 4).standard_normal(3)
        assert np.array_equal(a, b) and not np.array_equal(a, c)


class TestStudy:
    def test_oracle_selector(self):
        spec = DgpSpec("fixed-sparse", 50, 10, 3, seed=1)
        rep = run_study(spec, lambda Y, X, tau: [0, 1, 5, 6], 0.05, n_reps=4)
        assert list(rep.per_relevant_frequency) == [1, 1, 0]
        assert rep.avg_false == 2 and rep.n_reps == 4
        row = rep.row()
        assert row["X1"] == 1 and row["avg_false"] == 2 and row["setup"] == "fixed-sparse"

    def test_failures_counted(self):
        from gar.errors import RankDeficient

        def flaky(Y, X, tau):
            if Y[0] > 0:
                raise RankDeficient("boom")
            return [0]
        rep = run_study(DgpSpec("dense", 20, 6, 2, seed=2), flaky, 0.5, n_reps=20)
        assert rep.n_failed + rep.n_reps == 20 and 0 < rep.n_failed < 20

    def test_reproducible_across_jobs(self):
        spec = DgpSpec("fixed-sparse", 120, 15, 3, seed=3)
        a = run_study(spec, selector("qpcr"), 0.1, n_reps=3)
        b = run_study(spec, selector("qpcr"), 0.1, n_reps=3, n_jobs=2)
        assert a.selections == b.selections

    def test_penalized_selector(self):
        spec = DgpSpec("fixed-sparse", 150, 10, 2, seed=4)
        rep = run_study(spec, selector("l1", n_lambda=6), 0.5, n_reps=2)
        assert rep.n_reps == 2
        with pytest.raises(ValueError):
            selector("ols")


def test_panels():
    pan = location_scale_panel(60, 9, seed=2)
    assert pan.T == 60 and pan.p == 9
    raw = synthetic_raw_panel(30, 6, s=2, seed=1, n_groups=3)
    assert raw.column_names[0] == "Y" and raw.values.shape == (31, 7)
    assert set(raw.group_labels[1:]) == {"group1", "group2", "group3"}
    assert np.array_equal(raw.values, synthetic_raw_panel(30, 6, s=2, seed=1, n_groups=3).values)
