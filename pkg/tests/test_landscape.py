import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from genprior.exceptions import DomainError, ZeroVector
from genprior.landscape import (angle, basin_hypothesis_holds, g, h_field, h_field_rows, h_tilde, in_S_eps,
                                in_S_eps_rows, predicted_basins, rho, s_eps_dichotomy, theta_bar,
                                theta_check)

mpmath.mp.dps = 50


def g_mp(t):
    t = mpmath.mpf(t)
    return mpmath.acos(((mpmath.pi - t) * mpmath.cos(t) + mpmath.sin(t)) / mpmath.pi)


def rho_mp(d):
    """Extended-precision recurrence rho_{i+1} = (1 - t_i/pi) rho_i + sin(t_i)/pi, t_0 = pi."""
    r, t = mpmath.mpf(0), mpmath.pi
    for _ in range(d):
        r = (1 - t / mpmath.pi) * r + mpmath.sin(t) / mpmath.pi
        t = g_mp(t)
    return r


class TestAngle:
    def test_stable_near_extremes(self):
        x = np.array([1.0, 0.0])
        assert angle(x, [1.0, 1e-9]) == pytest.approx(1e-9, rel=1e-12)
        assert angle(x, [-1.0, 1e-9]) == pytest.approx(math.pi - 1e-9, rel=1e-15)
        assert angle(x, 3 * x) == 0.0

    def test_zero(self):
        with pytest.raises(ZeroVector):
            angle([0.0, 0.0], [1.0, 0.0])


class TestG:
    def test_endpoints(self):
        assert g(0.0) == 0.0
        assert abs(g(math.pi) - math.pi / 2) <= 1e-12

    def test_half_pi(self):
        # acos(1/pi) = 1.24685..., checked in 50-digit arithmetic
        assert g(math.pi / 2) == pytest.approx(math.acos(1 / math.pi), abs=1e-15)
        assert g(math.pi / 2) == pytest.approx(float(g_mp(mpmath.pi / 2)), abs=1e-15)

    def test_against_extended_precision(self):
        for t in np.linspace(0, math.pi, 97):
            assert g(t) == pytest.approx(float(g_mp(t)), abs=1e-12)

    def test_small_angles_keep_relative_precision(self):
        for t in np.logspace(-12, 0, 60):
            assert g(t) == pytest.approx(float(g_mp(t)), rel=1e-14)
            assert g(t) < t

    def test_domain(self):
        for bad in (-0.1, 3.2, float("nan")):
            with pytest.raises(DomainError):
                g(bad)

    def test_contraction_and_monotone(self):
        t = np.linspace(0, math.pi, 20001)
        gt = g(t)
        assert np.all(gt >= 0) and np.all(gt[1:] < t[1:]) and np.all(np.diff(gt) > 0)

    def test_vectorized_matches_scalar(self):
        t = np.linspace(0, math.pi, 11)
        assert np.array_equal(g(t), np.array([g(float(s)) for s in t]))


class TestSequences:
    def test_theta_bar_examples(self):
        assert theta_bar(0.0, 5).values == (0.0,) * 6
        vals = theta_bar(math.pi, 2).values
        assert vals[0] == math.pi
        assert vals[1] == pytest.approx(math.pi / 2, abs=1e-15)
        assert vals[2] == pytest.approx(math.acos(1 / math.pi), abs=1e-15)

    @settings(max_examples=200, deadline=None)
    @given(st.floats(0, math.pi), st.integers(1, 30))
    def test_theta_bar_nonincreasing(self, t0, d):
        vals = np.array(theta_bar(t0, d).values)
        assert len(vals) == d + 1
        assert np.all(np.diff(vals) <= 0) and np.all(vals[1:] <= math.pi / 2 + 1e-15)

    def test_check_bounds(self):
        vals = theta_check(501).values
        for i, t in enumerate(vals):
            assert math.pi / (i + 1) <= t <= 3 * math.pi / (i + 3)

    def test_check_against_extended_precision(self):
        t = mpmath.pi
        for v in theta_check(60).values:
            assert v == pytest.approx(float(t), rel=1e-13)
            t = g_mp(t)


class TestRho:
    def test_small_depths(self):
        assert rho(1) == 0.0
        assert abs(rho(2) - 1 / math.pi) <= 1e-12

    def test_recurrence_oracle(self):
        for d in (3, 10, 50, 200, 500):
            assert rho(d) == pytest.approx(float(rho_mp(d)), rel=1e-12)

    def test_increasing_and_tail_bound(self):
        vals = [rho(d) for d in range(1, 501)]
        assert all(0 <= v < 1 for v in vals)
        assert all(b > a for a, b in zip(vals, vals[1:]))
        chk = theta_check(501).values
        for d in (1, 2, 5, 50, 500):
            bound = sum(chk[i - 1] ** 3 / (6 * math.pi) * (i + 1) / (d + 1) for i in range(1, d + 1))
            assert 1 - vals[d - 1] <= bound

    def test_invalid_depth(self):
        with pytest.raises(ValueError):
            rho(0)


@pytest.mark.slow
@settings(max_examples=10_000, deadline=None)
@given(st.integers(1, 10), st.floats(0.01, 5), st.data())
def test_product_perturbation_inequality(d, r_max, data):
    r = data.draw(st.lists(st.floats(0, r_max), min_size=d, max_size=d))
    t = data.draw(st.lists(st.floats(-r_max, r_max), min_size=d, max_size=d))
    lhs = abs(math.prod(a + b for a, b in zip(r, t)) - math.prod(r))
    rhs = math.prod(r_max + abs(b) for b in t) - r_max**d
    assert lhs <= rhs + 1e-9 * max(1.0, rhs)


class TestField:
    def test_zero_at_truth(self):
        x0 = np.array([1.0, -2.0, 0.5])
        assert not h_field(x0, x0, 3).any()

    def test_single_layer_antipode(self):
        x0 = np.array([1.0, 2.0])
        np.testing.assert_allclose(h_field(-x0, x0, 1), -x0 / 2, atol=1e-16)

    @pytest.mark.parametrize("d", range(2, 9))
    def test_zero_at_negative_multiple(self, d):
        x0 = np.random.default_rng(d).standard_normal(5)
        h = h_field(-rho(d) * x0, x0, d)
        assert np.linalg.norm(h) * 2**d / np.linalg.norm(x0) <= 1e-9

    def test_h_tilde_examples(self):
        x = np.array([1.0, -0.5, 2.0])
        np.testing.assert_allclose(h_tilde(x, x, 4), x / 16, rtol=1e-15)
        x, y = np.array([2.0, 0.0]), np.array([0.0, 3.0])
        np.testing.assert_allclose(h_tilde(x, y, 1), y / 4 + 3 / (2 * math.pi * 2) * x, rtol=1e-15)

    def test_identity_between_fields(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            d = int(rng.integers(1, 8))
            x, x0 = rng.standard_normal(4), rng.standard_normal(4)
            lhs = h_field(x, x0, d)
            rhs = 2.0**-d * x - h_tilde(x, x0, d)
            assert np.linalg.norm(lhs - rhs) <= 1e-12 * max(np.linalg.norm(rhs), 2.0**-d * np.linalg.norm(x))

    def test_rows_match_single(self):
        rng = np.random.default_rng(1)
        X, x0 = rng.standard_normal((7, 3)), rng.standard_normal(3)
        H = h_field_rows(X, x0, 3)
        for x, h in zip(X, H):
            np.testing.assert_allclose(h, h_field(x, x0, 3), rtol=1e-14, atol=1e-17)


class TestBasins:
    def test_plug_in_radii(self):
        x0 = np.array([3.0, 4.0])
        b = predicted_basins(x0, 2, 1e-8)
        assert b.radius_pos == pytest.approx(56 * 2 * 1e-4 * 5, rel=1e-12)
        np.testing.assert_allclose(b.center_neg, -x0 / math.pi, rtol=1e-12)
        assert b.hypothesis_ok
        assert not basin_hypothesis_holds(2, 1e-2)
        tight = predicted_basins(x0, 2, 1e-20)
        assert tight.contains(x0) and tight.contains(-x0 / math.pi) and not tight.contains(10 * x0)
        # the negative-basin radius grows like d^11, so even eps = 1e-8 swallows 10 x0
        assert b.contains(10 * x0)

    def test_s_eps_examples(self):
        x0 = np.array([1.0, -1.0, 2.0])
        assert in_S_eps(x0, x0, 3, 1e-6)
        assert not in_S_eps(2 * x0, x0, 2, 1e-3)
        for d in (2, 3, 5):
            assert in_S_eps(-rho(d) * x0, x0, d, 1e-9)

    @pytest.mark.parametrize("d,eps", [(2, 1e-3), (3, 1e-4), (4, 1e-2)])
    def test_dichotomy_on_random_search(self, d, eps):
        rng = np.random.default_rng(d)
        x0 = rng.standard_normal(3)
        n0 = np.linalg.norm(x0)
        # uniform shell points plus clouds around both zeros of h at several scales
        scale = (10.0 ** rng.uniform(-4, 0, size=(100_000, 1))) * n0
        X = np.concatenate([
            rng.standard_normal((40_000, 3)) * rng.uniform(0, 3, size=(40_000, 1)),
            x0 + rng.standard_normal((30_000, 3)) * scale[:30_000],
            -rho(d) * x0 + rng.standard_normal((30_000, 3)) * scale[30_000:60_000],
        ])
        members = X[in_S_eps_rows(X, x0, d, eps)]
        assert len(members) > 100
        cases = {s_eps_dichotomy(x, x0, d, eps) for x in members}
        assert None not in cases and cases == {"small_angle", "large_angle"}
