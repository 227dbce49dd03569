"""scikit-learn style wrappers around the functional core.

``ReLUGenerator`` is a transformer from latent codes to signals.
``LatentRecovery`` inverts a generator from compressive measurements: ``fit``
recovers one latent code per row of observations, ``transform`` returns
codes and ``predict`` returns the reconstructed signals.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import _rng
from .measure import MeasurementEnsemble, observe, sample_ensemble
from .netgen import GeneratorNetwork, forward_batch, sample_gaussian_network
from .solver import Backtracking, DescentConfig, descend


class ReLUGenerator(TransformerMixin, BaseEstimator):
    """Random expansive ReLU network ``G``.

    Parameters
    ----------
    dims : sequence of int
        Layer widths ``(k, n_1, ..., n_d)``.
    seed : int
    variance_rule : {"per_layer", "unit"}
    """

    def __init__(self, dims=(8, 160, 800), seed=0, variance_rule="per_layer"):
        self.dims = dims
        self.seed = seed
        self.variance_rule = variance_rule

    def fit(self, X=None, y=None):
        self.network_ = sample_gaussian_network(tuple(self.dims), self.seed, self.variance_rule)
        self.n_features_in_ = self.network_.latent_dim
        return self

    def transform(self, X):
        check_is_fitted(self, "network_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, generator expects {self.n_features_in_}")
        return forward_batch(self.network_, X)


class LatentRecovery(TransformerMixin, BaseEstimator):
    """Recover latent codes from ``y = A G(x0)`` by subgradient descent.

    Parameters
    ----------
    generator : GeneratorNetwork or fitted ReLUGenerator
    measurement : MeasurementEnsemble, array of shape (m, n) or None
        None means the identity (denoising without compression).
    step_size : float or None
        None picks ``0.25 * 2^d``; ``"backtracking"`` uses an Armijo search.
    max_iter : int
    restart_policy : {"negate_on_stall", "none"}
    random_state : int
        Seeds the start points and the tie-break directions.
    """

    def __init__(self, generator=None, measurement=None, step_size=None, max_iter=5000,
                 restart_policy="negate_on_stall", random_state=0):
        self.generator = generator
        self.measurement = measurement
        self.step_size = step_size
        self.max_iter = max_iter
        self.restart_policy = restart_policy
        self.random_state = random_state

    def _network(self) -> GeneratorNetwork:
        gen = self.generator
        if isinstance(gen, ReLUGenerator):
            check_is_fitted(gen, "network_")
            gen = gen.network_
        if not isinstance(gen, GeneratorNetwork):
            raise TypeError("generator must be a GeneratorNetwork or a fitted ReLUGenerator")
        return gen

    def _ensemble(self, net: GeneratorNetwork) -> MeasurementEnsemble:
        A = self.measurement
        if A is None:
            return sample_ensemble("identity", net.output_dim, net.output_dim)
        if isinstance(A, MeasurementEnsemble):
            return A
        return MeasurementEnsemble.from_matrix(A)

    def _config(self, i: int) -> DescentConfig:
        step = Backtracking() if self.step_size == "backtracking" else self.step_size
        return DescentConfig(step_size=step, max_iters=self.max_iter, restart_policy=self.restart_policy,
                             tie_break_seed=_rng.derive_seed(self.random_state, "tie", i))

    def fit(self, Y, y=None):
        net = self._network()
        ens = self._ensemble(net)
        Y = check_array(Y, dtype=np.float64)
        if Y.shape[1] != ens.m:
            raise ValueError(f"observations have {Y.shape[1]} entries, measurement produces {ens.m}")
        rng = _rng.make_rng(_rng.check_seed(self.random_state), _rng.INIT)
        codes, risks, iters = [], [], []
        for i, row in enumerate(Y):
            traj = descend(observe(net, ens, row), rng.standard_normal(net.latent_dim), self._config(i))
            codes.append(traj.x_final)
            risks.append(traj.risk_final)
            iters.append(traj.n_iters)
        self.network_ = net
        self.ensemble_ = ens
        self.latent_ = np.array(codes)
        self.risk_ = np.array(risks)
        self.n_iter_ = np.array(iters)
        self.n_features_in_ = ens.m
        return self

    def transform(self, Y):
        """Latent codes for ``Y`` (refits on ``Y``)."""
        return self.fit(Y).latent_

    def predict(self, Y):
        """Reconstructed signals ``G(x_hat)`` for ``Y``."""
        return forward_batch(self.fit(Y).network_, self.latent_)

    def inverse_transform(self, Z):
        """Measurements ``A G(z)`` of latent codes."""
        check_is_fitted(self, "network_")
        Z = check_array(Z, dtype=np.float64)
        G = forward_batch(self.network_, Z)
        return G if self.ensemble_.is_identity else G @ self.ensemble_.matrix.T
