import itertools

import numpy as np
import pytest

from lpsparse.attacks import MEASURES, AttackConfig
from lpsparse.sweep import (
    GridPoint,
    aggregate,
    assemble,
    beta_opt_and_set,
    default_grid,
    normalize_curve,
    representative_p,
    run_sweep,
)


def exhaustive_max_min(curves, grid):
    """Try every threshold beta in the union of curve values."""
    best, chosen = -np.inf, []
    for beta in sorted({v for c in curves for v in c}):
        ok = [p for i, p in enumerate(grid) if all(c[i] >= beta for c in curves)]
        if ok:
            best, chosen = beta, ok
    return best, chosen


def point(p, **means):
    full = {m: means.get(m, 0.5) for m in MEASURES}
    return GridPoint(p, 1.0, 1.0, 0.3, 0.7, full, 0)


class TestGrid:
    def test_default(self):
        g = default_grid()
        assert len(g) == 22
        assert g[:3] == [1.0, 1.01, 1.05] and g[-1] == 2.0
        assert np.allclose(np.diff(g[2:]), 0.05)


class TestNormalize:
    def test_affine(self):
        np.testing.assert_allclose(normalize_curve([2, 4, 6]), [0, 0.5, 1])

    def test_constant(self):
        np.testing.assert_array_equal(normalize_curve([5, 5, 5]), [1, 1, 1])

    def test_argmax_preserved(self, rng):
        for _ in range(20):
            raw = rng.normal(size=9)
            assert np.argmax(raw) == np.argmax(normalize_curve(raw))

    def test_nan_passthrough(self):
        out = normalize_curve([1.0, np.nan, 3.0])
        assert np.isnan(out[1]) and out[0] == 0 and out[2] == 1

    def test_all_nan(self):
        with pytest.raises(ValueError):
            normalize_curve([np.nan])


class TestBetaOpt:
    def test_worked_example(self):
        m1, m2 = [0.0, 0.5, 1.0], [1.0, 0.8, 0.2]
        beta, opt = beta_opt_and_set([m1, m2], [1.0, 1.5, 2.0])
        assert beta == 0.5 and opt == [1.5]
        assert (beta, opt) == exhaustive_max_min([m1, m2], [1.0, 1.5, 2.0])

    def test_single_measure(self):
        beta, opt = beta_opt_and_set([[0.2, 1.0, 0.3, 1.0]], [1, 2, 3, 4])
        assert beta == 1.0 and opt == [2, 4]

    def test_duplicate_measure_is_idempotent(self, rng):
        m = normalize_curve(rng.normal(size=7))
        grid = list(range(7))
        assert beta_opt_and_set([m, m], grid) == beta_opt_and_set([m], grid)

    def test_matches_exhaustive(self, rng):
        for n_meas, n_grid in itertools.product((1, 2, 5), (1, 3, 8)):
            curves = [normalize_curve(rng.normal(size=n_grid)) for _ in range(n_meas)]
            grid = list(np.linspace(1, 2, n_grid))
            beta, opt = beta_opt_and_set(curves, grid)
            ref_beta, ref_opt = exhaustive_max_min(curves, grid)
            assert beta == pytest.approx(ref_beta, abs=1e-15) and opt == ref_opt

    def test_nan_points_never_chosen(self):
        beta, opt = beta_opt_and_set([[1.0, np.nan, 0.2]], [1.0, 1.5, 2.0])
        assert opt == [1.0]


class TestAssemble:
    def test_singleton_grid(self):
        res = assemble([point(2.0)])
        assert res.beta_opt == 1.0 and res.optimal_p_set == [2.0]
        assert all(len(c.normalized) == 1 for c in res.curves.values())

    def test_sorted_and_l0_excluded(self):
        pts = [point(2.0, gini=0.1, l0_frac=0.0), point(1.0, gini=0.9, l0_frac=1.0), point(1.5, gini=0.5)]
        res = assemble(pts)
        assert res.grid == [1.0, 1.5, 2.0]
        # l0 is reported but does not enter the max-min
        assert res.per_measure_argmax["l0_frac"] == [1.0]
        assert res.optimal_p_set == [1.0]

    def test_flagged_points_excluded(self):
        pts = [point(1.0, gini=0.9), point(1.5, gini=0.5), point(2.0, gini=0.1)]
        pts[0].flagged = True
        res = assemble(pts)
        assert np.isnan(res.curves["gini"].normalized[0])
        assert res.curves["gini"].normalized[1] == 1.0
        assert 1.0 not in res.optimal_p_set


class TestAggregate:
    def test_single_run(self):
        (g,) = aggregate([assemble([point(1.3)], "m", "d")])
        assert g.mean == pytest.approx(1.3) and g.std == 0

    def test_two_runs(self):
        runs = [assemble([point(1.2)], "m", "d1"), assemble([point(1.4)], "m", "d2")]
        (g,) = aggregate(runs, "model")
        assert g.mean == pytest.approx(1.3) and g.std == pytest.approx(np.std([1.2, 1.4]))
        assert [x.group for x in aggregate(runs, "dataset")] == ["d1", "d2"]

    def test_midpoint(self):
        assert representative_p([1.25, 1.30, 1.35]) == pytest.approx(1.30)

    def test_bad_input(self):
        with pytest.raises(ValueError):
            aggregate([])
        with pytest.raises(ValueError):
            aggregate([assemble([point(1.3)])], "seed")


@pytest.fixture(scope="module")
def result(small_model, small_data):
    tmpl = AttackConfig(p=2.0, epsilon=0.0, iterations=15)
    return run_sweep(small_model, small_data[1], [2.0, 1.0, 1.5], tmpl, seed=0, model_id="m", dataset_id="d")


class TestRunSweep:
    def test_shape(self, result):
        assert result.grid == [1.0, 1.5, 2.0]
        assert set(result.curves) == set(MEASURES)
        assert result.points[0].attack == "l1-PGD" and result.points[1].attack == "FW-lp"
        for c in result.curves.values():
            assert np.nanmin(c.normalized) >= 0 and np.nanmax(c.normalized) <= 1

    def test_calibration_contract(self, result):
        for pt in result.points:
            assert pt.calibration is not None and not pt.flagged
            assert pt.adv_accuracy <= pt.calibration.target + 0.02

    def test_precomputed_calibration_skips_search(self, small_model, small_data, result):
        table = {round(pt.p, 6): pt.epsilon for pt in result.points}
        tmpl = AttackConfig(p=2.0, epsilon=0.0, iterations=15)
        again = run_sweep(small_model, small_data[1], [1.0, 1.5, 2.0], tmpl, calibration=table, seed=0)
        assert all(pt.calibration is None for pt in again.points)
        assert [pt.means for pt in again.points] == [pt.means for pt in result.points]

    def test_rejects_bad_grid(self, small_model, small_data):
        with pytest.raises(ValueError):
            run_sweep(small_model, small_data[1], [0.5, 1.0])
        with pytest.raises(ValueError):
            run_sweep(small_model, small_data[1], [])
