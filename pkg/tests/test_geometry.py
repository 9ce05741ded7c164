import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lpsparse.errors import NonFiniteGradientError
from lpsparse.geometry import (
    box_gamma,
    lmo_lp_box,
    lmo_lp_box_batch,
    lp_norm,
    project_l1_box,
    project_l1_box_batch,
)
from oracles import brute_force_lmo, brute_force_projection


class TestLpNorm:
    def test_pythagorean(self):
        assert lp_norm([3, 4], 2) == pytest.approx(5.0, abs=1e-15)

    def test_l1(self):
        assert lp_norm([1, 1, 1], 1) == 3.0

    def test_fractional_p(self):
        # (1 + 1)^(1/1.5)
        assert lp_norm([1, 1], 1.5) == pytest.approx(2 ** (2 / 3), rel=1e-14)
        assert lp_norm([1, 1], 1.5) == pytest.approx(1.5874, abs=1e-4)

    def test_rejects_p_below_one(self):
        with pytest.raises(ValueError):
            lp_norm([1.0], 0.5)

    @given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=8), st.floats(1.0, 2.0), st.floats(-5, 5))
    def test_absolute_homogeneity(self, v, p, lam):
        v = np.array(v)
        assert lp_norm(lam * v, p) == pytest.approx(abs(lam) * lp_norm(v, p), rel=1e-12, abs=1e-300)

    def test_zero_iff_zero(self):
        assert lp_norm(np.zeros(4), 1.3) == 0.0
        assert lp_norm([0, 0, 1e-200], 1.3) > 0

    def test_tiny_values_do_not_underflow(self):
        assert lp_norm([1e-200, 1e-200], 2) == pytest.approx(np.sqrt(2) * 1e-200, rel=1e-12)


class TestBoxGamma:
    @pytest.mark.parametrize("x,w,expected", [(0.3, 1.0, 0.7), (0.3, -1.0, 0.3), (1.0, 2.0, 0.0), (0.3, 0.0, 0.0)])
    def test_headroom(self, x, w, expected):
        assert box_gamma(np.array([x]), np.array([w]))[0] == pytest.approx(expected, abs=1e-15)


class TestLmo:
    def test_cauchy_schwarz_case(self):
        sol = lmo_lp_box([3.0, 4.0], [0.2, 0.1], 1.0, 2.0)
        np.testing.assert_allclose(sol.delta_star, [0.6, 0.8], atol=1e-12)
        assert sol.objective == pytest.approx(5.0, abs=1e-12)
        assert sol.mu_star > 0

    def test_zero_budget(self):
        sol = lmo_lp_box([3.0, -4.0], [0.2, 0.1], 0.0, 1.5)
        assert np.all(sol.delta_star == 0) and sol.objective == 0

    @pytest.mark.parametrize("p", [1.01, 1.3, 2.0])
    def test_box_only_regime(self, rng, p):
        n = 6
        w = rng.normal(size=n)
        w[2] = 0.0
        x = rng.uniform(size=n)
        sol = lmo_lp_box(w, x, n ** (1 / p), p)
        expected = box_gamma(x, w) * np.sign(w)
        np.testing.assert_array_equal(sol.delta_star, expected)
        assert sol.mu_star == 0.0

    def test_zero_gradient_coordinates_stay_zero(self, rng):
        w = np.array([0.0, 1.0, 0.0, -2.0])
        sol = lmo_lp_box(w, rng.uniform(size=4), 0.5, 1.4)
        assert sol.delta_star[0] == 0 and sol.delta_star[2] == 0

    def test_p2_matches_normalized_gradient(self, rng):
        w = rng.normal(size=50)
        x = np.full(50, 0.5)
        eps = 0.3  # far from the box, which is 0.5 away in every coordinate
        sol = lmo_lp_box(w, x, eps, 2.0)
        np.testing.assert_allclose(sol.delta_star, eps * w / np.linalg.norm(w), atol=1e-8)

    @pytest.mark.parametrize("p", [1.01, 1.05, 1.3, 1.5, 2.0])
    def test_matches_conic_solver(self, rng, p):
        for _ in range(20):
            n = int(rng.integers(2, 6))
            w, x, eps = rng.normal(size=n), rng.uniform(size=n), float(rng.uniform(0.01, 1.5))
            sol = lmo_lp_box(w, x, eps, p)
            ref, _ = brute_force_lmo(w, x, eps, p)
            assert sol.objective >= ref - 1e-4 * max(1.0, abs(ref))
            assert sol.objective <= ref + 1e-4 * max(1.0, abs(ref))

    @pytest.mark.parametrize("p", [1.01, 1.2, 1.7, 2.0])
    def test_select_and_bisect_agree(self, rng, p):
        w = rng.normal(size=(40, 30))
        w[:, 3] = 0
        w[:, 5] = w[:, 6]
        x = rng.uniform(size=(40, 30))
        x[:, 7] = 1.0
        eps = rng.uniform(0.01, 3.0, size=40)
        a, mu_a = lmo_lp_box_batch(w, x, eps, p, method="select")
        b, mu_b = lmo_lp_box_batch(w, x, eps, p, method="bisect")
        np.testing.assert_allclose(a, b, atol=1e-9)
        np.testing.assert_allclose(mu_a, mu_b, rtol=1e-8)

    @settings(max_examples=200, deadline=None)
    @given(
        st.integers(1, 40),
        st.floats(1.01, 2.0),
        st.floats(0.0, 10.0),
        st.integers(0, 2**31 - 1),
    )
    def test_feasibility_and_signs(self, n, p, eps, seed):
        rng = np.random.default_rng(seed)
        w = rng.normal(size=n) * 10.0 ** rng.uniform(-6, 3, size=n)
        x = rng.choice([0.0, 1.0, 0.5], size=n) if seed % 3 == 0 else rng.uniform(size=n)
        sol = lmo_lp_box(w, x, eps, p)
        d = sol.delta_star
        assert lp_norm(d, p) <= eps * (1 + 1e-9)
        assert np.all(x + d >= 0) and np.all(x + d <= 1)
        assert np.all(np.abs(d) <= box_gamma(x, w))
        nz = d != 0
        assert np.all(np.sign(d[nz]) == np.sign(w[nz]))
        assert sol.mu_star >= 0

    @pytest.mark.parametrize("p", [1.05, 1.5, 2.0])
    def test_norm_of_d_mu_is_non_increasing(self, rng, p):
        w = rng.normal(size=12)
        x = rng.uniform(size=12)
        gamma = box_gamma(x, w)
        mus = np.geomspace(1e-4, 1e2, 400)
        norms = [lp_norm(np.minimum(gamma, (np.abs(w) / (p * mu)) ** (1 / (p - 1))), p) for mu in mus]
        assert np.all(np.diff(norms) <= 1e-12)

    def test_rejects_bad_inputs(self):
        with pytest.raises(ValueError):
            lmo_lp_box([1.0], [0.5], 1.0, 1.0)
        with pytest.raises(NonFiniteGradientError):
            lmo_lp_box([np.nan, 1.0], [0.5, 0.5], 1.0, 1.5)


class TestProjection:
    def test_feasible_point_unchanged(self):
        v = np.array([0.1, -0.05, 0.0])
        x = np.array([0.5, 0.5, 0.5])
        np.testing.assert_array_equal(project_l1_box(v, x, 1.0), v)

    def test_single_coordinate(self):
        assert project_l1_box([0.9], [0.5], 0.2)[0] == pytest.approx(0.2, abs=1e-12)

    def test_matches_qp_solver(self, rng):
        for _ in range(40):
            n = int(rng.integers(1, 5))
            v, x, eps = rng.normal(size=n), rng.uniform(size=n), float(rng.uniform(0.01, 2.0))
            d = project_l1_box(v, x, eps)
            ref, _ = brute_force_projection(v, x, eps)
            assert np.sum((d - v) ** 2) == pytest.approx(ref, abs=1e-4)

    def test_nonexpansive(self, rng):
        x = rng.uniform(size=(1, 20))
        for _ in range(50):
            u, v = rng.normal(size=20), rng.normal(size=20)
            pu = project_l1_box_batch(u, x, 1.5)[0]
            pv = project_l1_box_batch(v, x, 1.5)[0]
            assert np.linalg.norm(pu - pv) <= np.linalg.norm(u - v) + 1e-12

    def test_zero_budget(self, rng):
        assert np.all(project_l1_box(rng.normal(size=5), rng.uniform(size=5), 0.0) == 0)

    @settings(max_examples=100, deadline=None)
    @given(st.integers(1, 30), st.floats(0.0, 5.0), st.integers(0, 2**31 - 1))
    def test_output_feasible(self, n, eps, seed):
        rng = np.random.default_rng(seed)
        v, x = rng.normal(size=n) * 3, rng.uniform(size=n)
        d = project_l1_box(v, x, eps)
        assert np.abs(d).sum() <= eps * (1 + 1e-9)
        assert np.all(x + d >= 0) and np.all(x + d <= 1)
