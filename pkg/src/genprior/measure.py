"""Compressive measurements and the empirical risk ``f(x) = 1/2 ||A G(x) - A G(x0)||^2``."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _rng
from ._validation import as_matrix, as_vector, frozen, require_nonzero
from .exceptions import DimensionError
from .netgen import GeneratorNetwork, forward, linearization_with_output, load_network, save_network

KINDS = ("gaussian", "bernoulli", "identity")


@dataclass(frozen=True)
class MeasurementEnsemble:
    """An ``m x n`` sampling matrix, or the symbolic identity (``matrix is None``)."""

    kind: str
    m: int
    n: int
    seed: int | None = None
    matrix: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in KINDS and self.kind != "custom":
            raise ValueError(f"unknown ensemble kind {self.kind!r}")
        if self.kind == "identity":
            if self.m != self.n:
                raise DimensionError(f"identity ensemble needs m == n, got m={self.m}, n={self.n}")
            if self.matrix is not None:
                raise ValueError("identity ensemble stores no matrix")
        else:
            A = as_matrix(self.matrix, name="A")
            if A.shape != (self.m, self.n):
                raise DimensionError(f"A has shape {A.shape}, expected {(self.m, self.n)}")
            object.__setattr__(self, "matrix", frozen(A))

    @classmethod
    def from_matrix(cls, A) -> "MeasurementEnsemble":
        A = as_matrix(A, name="A")
        return cls("custom", A.shape[0], A.shape[1], None, A)

    @property
    def is_identity(self) -> bool:
        return self.matrix is None

    def apply(self, y: np.ndarray) -> np.ndarray:
        return y if self.matrix is None else self.matrix @ y

    def apply_t(self, u: np.ndarray) -> np.ndarray:
        return u if self.matrix is None else self.matrix.T @ u

    def dense(self) -> np.ndarray:
        return np.eye(self.n) if self.matrix is None else np.asarray(self.matrix)


def sample_ensemble(kind: str, m: int, n: int, seed: int = 0) -> MeasurementEnsemble:
    """Gaussian ``N(0, 1/m)`` entries, equiprobable ``+-1/sqrt(m)`` entries, or identity."""
    m, n = int(m), int(n)
    if m < 1 or n < 1:
        raise DimensionError(f"m and n must be >= 1, got m={m}, n={n}")
    seed = _rng.check_seed(seed)
    if kind == "identity":
        return MeasurementEnsemble("identity", m, n, seed)
    rng = _rng.make_rng(seed, _rng.ENSEMBLE)
    if kind == "gaussian":
        A = rng.standard_normal((m, n)) / math.sqrt(m)
    elif kind == "bernoulli":
        A = np.where(rng.integers(0, 2, size=(m, n)) == 1, 1.0, -1.0) / math.sqrt(m)
    else:
        raise ValueError(f"unknown ensemble kind {kind!r}; choose from {KINDS}")
    return MeasurementEnsemble(kind, m, n, seed, A)


@dataclass(frozen=True)
class Instance:
    """Network, measurements, ground-truth latent code and cached observations.

    ``x0`` is None for instances built from observations alone.
    """

    net: GeneratorNetwork
    ensemble: MeasurementEnsemble
    x0: np.ndarray | None
    y_obs: np.ndarray

    @property
    def depth(self) -> int:
        return self.net.depth

    @property
    def latent_dim(self) -> int:
        return self.net.latent_dim


def make_instance(net: GeneratorNetwork, ensemble: MeasurementEnsemble, x0) -> Instance:
    if ensemble.n != net.output_dim:
        raise DimensionError(f"ensemble acts on length {ensemble.n}, network outputs {net.output_dim}")
    x0 = as_vector(x0, net.latent_dim, name="x0")
    y_obs = ensemble.apply(forward(net, x0)[0])
    return Instance(net, ensemble, frozen(x0), frozen(y_obs))


def observe(net: GeneratorNetwork, ensemble: MeasurementEnsemble, y_obs) -> Instance:
    """Instance from measured data with unknown latent code."""
    if ensemble.n != net.output_dim:
        raise DimensionError(f"ensemble acts on length {ensemble.n}, network outputs {net.output_dim}")
    return Instance(net, ensemble, None, frozen(as_vector(y_obs, ensemble.m, name="y_obs")))


def _residual(inst: Instance, gx: np.ndarray) -> np.ndarray:
    return inst.ensemble.apply(gx) - inst.y_obs


def risk(inst: Instance, x) -> float:
    gx, _ = forward(inst.net, x)
    r = _residual(inst, gx)
    return 0.5 * float(r @ r)


def risk_and_subgradient(inst: Instance, x, tie_break=None):
    """``(f(x), v_x, tie_break_used)`` sharing one network pass."""
    x = as_vector(x, inst.latent_dim)
    gx, J, used = linearization_with_output(inst.net, x, tie_break)
    r = _residual(inst, gx)
    v = J.T @ inst.ensemble.apply_t(r)
    return 0.5 * float(r @ r), v, used


def subgradient(inst: Instance, x, tie_break=None) -> np.ndarray:
    """``J^T A^T (A G(x) - y_obs)`` with ``J`` the (tie-broken) linearization at ``x``.

    Equals the gradient wherever ``G`` is differentiable.  At a kink the
    one-sided limit ``lim_{delta->0+} grad f(x + delta * tie_break)`` is
    returned; without ``tie_break`` a :class:`NondifferentiablePoint` is raised.
    """
    return risk_and_subgradient(inst, x, tie_break)[1]


def directional_derivative(inst: Instance, x, v) -> float:
    """Normalized one-sided derivative ``lim_{t->0+} (f(x+tv) - f(x)) / (t ||v||)``.

    Exact: along a ray ``G`` is linear for small ``t`` with the linearization
    selected by tie-breaking toward ``v``.  Valid at ``x = 0``.
    """
    x = as_vector(x, inst.latent_dim)
    v = as_vector(v, inst.latent_dim, name="v")
    vnorm = require_nonzero(v, "v")
    _, g, _ = risk_and_subgradient(inst, x, tie_break=v)
    return float(g @ v) / vnorm


# ---------------------------------------------------------------------------
# serialization: <dir>/network.{bin,json}, instance.json, x0.f64, y_obs.f64
# the ensemble matrix is regenerated from (kind, m, n, seed)

def save_instance(inst: Instance, directory) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    ens = inst.ensemble
    if ens.kind == "custom":
        raise ValueError("only sampled ensembles can be serialized (custom matrices have no seed)")
    if inst.x0 is None:
        raise ValueError("instance has no ground-truth latent code to store")
    save_network(inst.net, directory / "network")
    np.asarray(inst.x0, dtype="<f8").tofile(directory / "x0.f64")
    np.asarray(inst.y_obs, dtype="<f8").tofile(directory / "y_obs.f64")
    meta = {"format": "genprior-instance", "version": 1, "ensemble": {
        "kind": ens.kind, "m": ens.m, "n": ens.n, "seed": ens.seed}}
    (directory / "instance.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return directory


def load_instance(directory, verify: bool = True) -> Instance:
    directory = Path(directory)
    meta = json.loads((directory / "instance.json").read_text())["ensemble"]
    net = load_network(directory / "network")
    ens = sample_ensemble(meta["kind"], meta["m"], meta["n"], meta["seed"])
    x0 = np.fromfile(directory / "x0.f64", dtype="<f8")
    inst = make_instance(net, ens, x0)
    if verify:
        stored = np.fromfile(directory / "y_obs.f64", dtype="<f8")
        if not np.array_equal(stored, inst.y_obs):
            raise ValueError("stored observations do not match the recomputed A G(x0)")
    return inst
