import math

import numpy as np
import pytest

from genprior.exceptions import DimensionError, NondifferentiablePoint, ZeroVector
from genprior.measure import (MeasurementEnsemble, directional_derivative, load_instance, make_instance,
                              observe, risk, risk_and_subgradient, sample_ensemble, save_instance,
                              subgradient)
from genprior.netgen import GeneratorNetwork, sample_gaussian_network


def toy_instance():
    net = GeneratorNetwork.from_weights([np.array([[1.0], [-1.0]])])
    return make_instance(net, sample_ensemble("identity", 2, 2), [1.0])


def gaussian_instance(seed=0, dims=(4, 20, 80), m=40):
    net = sample_gaussian_network(dims, seed)
    x0 = np.random.default_rng(seed).standard_normal(dims[0])
    return make_instance(net, sample_ensemble("gaussian", m, dims[-1], seed), x0)


def central_fd(inst, x, h):
    g = np.empty_like(x)
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = h
        g[j] = (risk(inst, x + e) - risk(inst, x - e)) / (2 * h)
    return g


class TestEnsembles:
    def test_identity(self):
        ens = sample_ensemble("identity", 5, 5)
        v = np.arange(5.0)
        assert ens.matrix is None and np.array_equal(ens.apply(v), v)
        with pytest.raises(DimensionError):
            sample_ensemble("identity", 4, 5)

    def test_gaussian_moment(self):
        A = sample_ensemble("gaussian", 100, 400, 3).matrix
        assert abs(np.mean(A**2) * 100 - 1) <= 0.05

    def test_bernoulli_support(self):
        A = sample_ensemble("bernoulli", 10, 20, 1).matrix
        assert set(np.unique(A).tolist()) <= {1 / math.sqrt(10), -1 / math.sqrt(10)}

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            sample_ensemble("cauchy", 3, 3)

    def test_custom_matrix(self):
        ens = MeasurementEnsemble.from_matrix(np.eye(3)[:2])
        assert (ens.m, ens.n, ens.kind) == (2, 3, "custom")

    def test_dimension_mismatch(self):
        net = sample_gaussian_network([2, 6], 0)
        with pytest.raises(DimensionError):
            make_instance(net, sample_ensemble("gaussian", 3, 7), [1.0, 0.0])


class TestRisk:
    def test_examples(self):
        inst = toy_instance()
        assert risk(inst, [1.0]) == 0.0
        assert risk(inst, [2.0]) == 0.5
        assert risk(inst, [0.0]) == 0.5 * float(inst.y_obs @ inst.y_obs)

    def test_identity_risk_is_output_distance(self):
        net = sample_gaussian_network([3, 10, 30], 4)
        x0, x = np.ones(3), np.array([0.3, -1.0, 2.0])
        inst = make_instance(net, sample_ensemble("identity", 30, 30), x0)
        r = net(x) - net(x0)
        assert risk(inst, x) == 0.5 * float(r @ r)

    def test_nonnegative_zero_at_truth(self):
        inst = gaussian_instance()
        assert risk(inst, inst.x0) == 0.0
        rng = np.random.default_rng(1)
        assert all(risk(inst, rng.standard_normal(4)) >= 0 for _ in range(50))


class TestSubgradient:
    def test_examples(self):
        inst = toy_instance()
        assert subgradient(inst, [2.0]).tolist() == [1.0]
        assert not subgradient(inst, [1.0]).any()

    @pytest.mark.parametrize("dims", [(4, 30), (4, 20, 80), (3, 10, 30, 90)])
    def test_finite_differences(self, dims):
        rng = np.random.default_rng(len(dims))
        for s in range(35):
            inst = gaussian_instance(s, dims, m=25)
            x = rng.standard_normal(dims[0])
            v = subgradient(inst, x)
            fd = central_fd(inst, x, 1e-6 * np.linalg.norm(x))
            assert np.linalg.norm(v - fd) <= 1e-5 * np.linalg.norm(v)

    def test_kink_needs_direction(self):
        inst = toy_instance()
        with pytest.raises(NondifferentiablePoint):
            subgradient(inst, [0.0])
        f, v, used = risk_and_subgradient(inst, [0.0], tie_break=[1.0])
        assert used and v.tolist() == [-1.0]


class TestDirectionalDerivative:
    def test_matches_gradient_where_smooth(self):
        inst = gaussian_instance(2)
        rng = np.random.default_rng(2)
        for _ in range(20):
            x, v = rng.standard_normal(4), rng.standard_normal(4)
            g = subgradient(inst, x)
            dv = directional_derivative(inst, x, v)
            assert dv == pytest.approx(g @ v / np.linalg.norm(v), rel=1e-12, abs=1e-15)
            assert dv + directional_derivative(inst, x, -v) == pytest.approx(0.0, abs=1e-12 * abs(dv) + 1e-15)

    def test_at_zero_matches_one_sided_differences(self):
        inst = gaussian_instance(5, (4, 40, 200), m=100)
        rng = np.random.default_rng(5)
        for _ in range(10):
            v = rng.standard_normal(4)
            v /= np.linalg.norm(v)
            exact = directional_derivative(inst, np.zeros(4), v)
            f0 = risk(inst, np.zeros(4))
            # f is quadratic along the ray, so Richardson extrapolation is exact
            fd = [(risk(inst, t * v) - f0) / t for t in (1e-4, 1e-5, 1e-6)]
            rich = (10 * fd[1] - fd[0]) / 9
            assert rich == pytest.approx(exact, rel=1e-6)
            assert fd[2] == pytest.approx(exact, rel=1e-4)
            assert exact < 0

    def test_zero_direction(self):
        with pytest.raises(ZeroVector):
            directional_derivative(toy_instance(), [1.0], [0.0])


class TestInstanceIO:
    def test_round_trip(self, tmp_path):
        inst = gaussian_instance(9)
        save_instance(inst, tmp_path / "inst")
        back = load_instance(tmp_path / "inst")
        assert back.y_obs.tobytes() == inst.y_obs.tobytes()
        assert back.x0.tobytes() == inst.x0.tobytes()
        assert back.ensemble.matrix.tobytes() == inst.ensemble.matrix.tobytes()

    def test_tampered_observations(self, tmp_path):
        inst = gaussian_instance(9)
        save_instance(inst, tmp_path / "inst")
        y = np.fromfile(tmp_path / "inst" / "y_obs.f64", "<f8")
        y[0] += 1e-12
        y.tofile(tmp_path / "inst" / "y_obs.f64")
        with pytest.raises(ValueError):
            load_instance(tmp_path / "inst")

    def test_unserializable(self, tmp_path):
        net = sample_gaussian_network([2, 4], 0)
        inst = make_instance(net, MeasurementEnsemble.from_matrix(np.eye(4)), [1.0, 1.0])
        with pytest.raises(ValueError):
            save_instance(inst, tmp_path / "x")
        obs = observe(net, sample_ensemble("identity", 4, 4), np.ones(4))
        assert obs.x0 is None
        with pytest.raises(ValueError):
            save_instance(obs, tmp_path / "y")
