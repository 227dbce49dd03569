import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from genprior.estimators import LatentRecovery, ReLUGenerator
from genprior.measure import sample_ensemble
from genprior.netgen import forward_batch, sample_gaussian_network


def test_generator_params_and_clone():
    gen = ReLUGenerator(dims=(3, 20, 60), seed=4)
    assert gen.get_params() == {"dims": (3, 20, 60), "seed": 4, "variance_rule": "per_layer"}
    twin = clone(gen).set_params(seed=5)
    assert twin.seed == 5 and gen.seed == 4


def test_generator_transform():
    gen = ReLUGenerator(dims=(3, 20, 60), seed=4)
    with pytest.raises(NotFittedError):
        gen.transform(np.ones((1, 3)))
    X = np.random.default_rng(0).standard_normal((5, 3))
    out = gen.fit_transform(X)
    assert out.shape == (5, 60) and gen.n_features_in_ == 3
    np.testing.assert_array_equal(out, forward_batch(sample_gaussian_network((3, 20, 60), 4), X))
    with pytest.raises(ValueError):
        gen.transform(np.ones((2, 4)))


def test_recovery_needs_a_generator():
    with pytest.raises(TypeError):
        LatentRecovery().fit(np.ones((1, 3)))
    with pytest.raises(NotFittedError):
        LatentRecovery(generator=ReLUGenerator()).fit(np.ones((1, 3)))


@pytest.mark.parametrize("step", [None, "backtracking"])
def test_recovery_from_compressed_observations(step):
    gen = ReLUGenerator(dims=(4, 40, 200), seed=1).fit()
    ens = sample_ensemble("gaussian", 100, 200, 1)
    X0 = np.random.default_rng(3).standard_normal((3, 4))
    Y = gen.transform(X0) @ ens.matrix.T
    est = LatentRecovery(generator=gen, measurement=ens, step_size=step, random_state=7).fit(Y)
    rel = np.linalg.norm(est.latent_ - X0, axis=1) / np.linalg.norm(X0, axis=1)
    assert np.all(rel <= 1e-6)
    assert np.linalg.norm(est.inverse_transform(est.latent_) - Y) <= 1e-6 * np.linalg.norm(Y)
    assert est.n_features_in_ == 100 and est.n_iter_.shape == (3,)


def test_identity_measurement_and_predict():
    net = sample_gaussian_network((3, 30, 150), 2)
    X0 = np.random.default_rng(4).standard_normal((2, 3))
    Y = forward_batch(net, X0)
    est = LatentRecovery(generator=net, measurement=None)
    assert np.linalg.norm(est.predict(Y) - Y) <= 1e-6 * np.linalg.norm(Y)
    assert np.linalg.norm(est.transform(Y) - X0) <= 1e-6 * np.linalg.norm(X0)
    with pytest.raises(ValueError):
        est.fit(np.ones((1, 7)))


def test_recovery_is_deterministic():
    net = sample_gaussian_network((3, 30, 150), 2)
    Y = forward_batch(net, np.ones((1, 3)))
    a = LatentRecovery(generator=net, max_iter=5, random_state=3).fit(Y).latent_
    b = LatentRecovery(generator=net, max_iter=5, random_state=3).fit(Y).latent_
    assert np.array_equal(a, b)
