"""Expansive ReLU generator networks.

A generator ``G(x) = relu(W_d ... relu(W_1 x))`` has no biases, so it is
positively homogeneous and piecewise linear with every piece passing through
the origin.  A neuron is active when its pre-activation is *strictly*
positive; exact zeros count as inactive.
"""
from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import _rng
from ._validation import as_matrix, as_vector, frozen
from .exceptions import BudgetExceeded, DimensionError, NondifferentiablePoint

#: largest total number of weights ``sample_gaussian_network`` will allocate
MAX_PARAMETERS = 200_000_000

VARIANCE_RULES = ("per_layer", "unit", "custom")


@dataclass(frozen=True)
class NetworkShape:
    """Layer widths ``(n_0 = k, n_1, ..., n_d)``."""

    dims: tuple[int, ...]

    def __post_init__(self):
        dims = tuple(int(n) for n in self.dims)
        if len(dims) < 2:
            raise DimensionError("a network needs at least one layer (len(dims) >= 2)")
        if any(n < 1 for n in dims):
            raise DimensionError(f"every layer dimension must be >= 1, got {dims}")
        object.__setattr__(self, "dims", dims)

    @property
    def depth(self) -> int:
        return len(self.dims) - 1

    @property
    def latent_dim(self) -> int:
        return self.dims[0]

    @property
    def output_dim(self) -> int:
        return self.dims[-1]

    @property
    def n_parameters(self) -> int:
        return sum(a * b for a, b in zip(self.dims[1:], self.dims[:-1]))

    def is_expansive(self, c: float = 1.0) -> bool:
        """True when ``n_i >= c * n_{i-1} * log(n_{i-1})`` for every layer."""
        return all(n >= c * p * math.log(p) for p, n in zip(self.dims[:-1], self.dims[1:]))


@dataclass(frozen=True)
class Provenance:
    seed: int | None
    variance_rule: str = "per_layer"
    scales: tuple[float, ...] | None = None


@dataclass(frozen=True)
class GeneratorNetwork:
    shape: NetworkShape
    weights: tuple[np.ndarray, ...]
    provenance: Provenance = field(default_factory=lambda: Provenance(seed=None, variance_rule="custom"))

    def __post_init__(self):
        if len(self.weights) != self.shape.depth:
            raise DimensionError(f"expected {self.shape.depth} weight matrices, got {len(self.weights)}")
        ws = []
        for i, w in enumerate(self.weights):
            w = as_matrix(w, name=f"weights[{i}]")
            want = (self.shape.dims[i + 1], self.shape.dims[i])
            if w.shape != want:
                raise DimensionError(f"weights[{i}] has shape {w.shape}, expected {want}")
            ws.append(frozen(w))
        object.__setattr__(self, "weights", tuple(ws))

    @classmethod
    def from_weights(cls, weights: Sequence) -> "GeneratorNetwork":
        """Wrap explicit matrices, inferring the shape from them."""
        ws = [as_matrix(w, name=f"weights[{i}]") for i, w in enumerate(weights)]
        if not ws:
            raise DimensionError("need at least one weight matrix")
        dims = [ws[0].shape[1]] + [w.shape[0] for w in ws]
        return cls(NetworkShape(tuple(dims)), tuple(ws))

    @property
    def depth(self) -> int:
        return self.shape.depth

    @property
    def latent_dim(self) -> int:
        return self.shape.latent_dim

    @property
    def output_dim(self) -> int:
        return self.shape.output_dim

    def __call__(self, x) -> np.ndarray:
        return forward(self, x)[0]


@dataclass(frozen=True)
class ActivationPattern:
    """Per-layer boolean masks of strictly positive pre-activations."""

    masks: tuple[np.ndarray, ...]

    def key(self) -> bytes:
        return b"|".join(np.packbits(m).tobytes() + bytes([len(m) % 256]) for m in self.masks)

    def __eq__(self, other):
        if not isinstance(other, ActivationPattern) or len(other.masks) != len(self.masks):
            return NotImplemented
        return all(np.array_equal(a, b) for a, b in zip(self.masks, other.masks))

    def __hash__(self):
        return hash(self.key())


def _layer_scales(shape: NetworkShape, variance_rule: str, scales) -> tuple[float, ...]:
    if variance_rule == "per_layer":
        return tuple(1.0 / n for n in shape.dims[1:])
    if variance_rule == "unit":
        return (1.0,) * shape.depth
    if variance_rule == "custom":
        if scales is None or len(scales) != shape.depth:
            raise ValueError("custom variance rule needs one variance per layer")
        out = tuple(float(s) for s in scales)
        if any(s <= 0 or not math.isfinite(s) for s in out):
            raise ValueError("custom variances must be positive and finite")
        return out
    raise ValueError(f"unknown variance rule {variance_rule!r}; choose from {VARIANCE_RULES}")


def sample_gaussian_network(
    shape: NetworkShape | Sequence[int],
    seed: int,
    variance_rule: str = "per_layer",
    scales: Sequence[float] | None = None,
    max_parameters: int = MAX_PARAMETERS,
) -> GeneratorNetwork:
    """Draw i.i.d. Gaussian weights, layer ``i`` with variance ``1/n_i`` by default.

    Layer ``i`` uses its own random stream, so changing the depth does not
    change the weights of the earlier layers.
    """
    if not isinstance(shape, NetworkShape):
        shape = NetworkShape(tuple(shape))
    if shape.n_parameters > max_parameters:
        raise BudgetExceeded(f"{shape.n_parameters} weights exceeds budget of {max_parameters}")
    seed = _rng.check_seed(seed)
    variances = _layer_scales(shape, variance_rule, scales)
    weights = []
    for i, var in enumerate(variances):
        rng = _rng.make_rng(seed, _rng.NETWORK, i)
        n_out, n_in = shape.dims[i + 1], shape.dims[i]
        weights.append(rng.standard_normal((n_out, n_in)) * math.sqrt(var))
    prov = Provenance(seed=seed, variance_rule=variance_rule,
                      scales=tuple(variances) if variance_rule == "custom" else None)
    return GeneratorNetwork(shape, tuple(weights), prov)


def forward(net: GeneratorNetwork, x) -> tuple[np.ndarray, ActivationPattern]:
    """Evaluate ``G(x)`` and record which neurons fire."""
    h = as_vector(x, net.latent_dim)
    masks = []
    for w in net.weights:
        z = w @ h
        mask = z > 0
        h = np.where(mask, z, 0.0)
        mask.setflags(write=False)
        masks.append(mask)
    return h, ActivationPattern(tuple(masks))


def forward_batch(net: GeneratorNetwork, X) -> np.ndarray:
    """Row-wise ``G`` for a ``(p, k)`` array; returns ``(p, n_d)``."""
    H = np.asarray(X, dtype=np.float64)
    if H.ndim != 2 or H.shape[1] != net.latent_dim:
        raise DimensionError(f"expected shape (p, {net.latent_dim}), got {H.shape}")
    for w in net.weights:
        H = np.maximum(H @ w.T, 0.0)
    return H


def active_matrix(W, x) -> np.ndarray:
    """``diag(Wx > 0) W``: zero every row that does not fire strictly on ``x``."""
    W = as_matrix(W)
    x = as_vector(x, W.shape[1])
    return np.where((W @ x > 0)[:, None], W, 0.0)


def end_to_end_linearization(net: GeneratorNetwork, x, tie_break=None) -> np.ndarray:
    """Product ``W_{d,+,x} ... W_{1,+,x}`` of active matrices along the chain.

    At a kink (some pre-activation exactly zero while the neuron still depends
    on the input locally) the one-sided limit from ``x + delta * tie_break``,
    ``delta -> 0+``, decides the neuron: it is active iff its directional
    pre-activation along ``tie_break`` is strictly positive.

    Raises:
        NondifferentiablePoint: a kink is present and ``tie_break`` is None.
    """
    _, J, _ = _linearize(net, as_vector(x, net.latent_dim), tie_break)
    return J


def _linearize(net: GeneratorNetwork, x: np.ndarray, tie_break=None):
    """Return ``(G(x), J, tie_break_used)``."""
    w_dir = None if tie_break is None else as_vector(tie_break, net.latent_dim, name="tie_break")
    J = np.eye(net.latent_dim)
    h = x
    used = False
    for W in net.weights:
        z = W @ h
        WJ = W @ J
        mask = z > 0
        # zero rows of WJ: pre-activation is identically zero near x, no kink
        kink = (z == 0) & np.any(WJ != 0, axis=1)
        if kink.any():
            if w_dir is None:
                raise NondifferentiablePoint(
                    f"{int(kink.sum())} zero pre-activation(s) in layer of width {W.shape[0]}"
                )
            used = True
            mask = mask | (kink & (WJ @ w_dir > 0))
        h = np.where(mask, z, 0.0)
        J = np.where(mask[:, None], WJ, 0.0)
    return h, J, used


def linearization_with_output(net: GeneratorNetwork, x, tie_break=None):
    """``(G(x), J, tie_break_used)`` from a single pass."""
    return _linearize(net, as_vector(x, net.latent_dim), tie_break)


# ---------------------------------------------------------------------------
# serialization
#
# <stem>.bin  : b"GPNET001" | uint64 d | uint64 dims[d+1] | float64 W_1 ... W_d
#               everything little-endian, matrices row-major (C order)
# <stem>.json : {"format": "genprior-network", "version": 1, "dims": [...],
#                "seed": int|null, "variance_rule": str, "scales": [...]|null}

MAGIC = b"GPNET001"


def save_network(net: GeneratorNetwork, path) -> tuple[Path, Path]:
    path = Path(path)
    bin_path, json_path = path.with_suffix(".bin"), path.with_suffix(".json")
    dims = net.shape.dims
    with open(bin_path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<Q", net.depth))
        fh.write(struct.pack(f"<{len(dims)}Q", *dims))
        for w in net.weights:
            fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
    meta = {
        "format": "genprior-network",
        "version": 1,
        "dims": list(dims),
        "seed": net.provenance.seed,
        "variance_rule": net.provenance.variance_rule,
        "scales": None if net.provenance.scales is None else list(net.provenance.scales),
    }
    json_path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return bin_path, json_path


def load_network(path) -> GeneratorNetwork:
    path = Path(path)
    raw = path.with_suffix(".bin").read_bytes()
    if raw[:8] != MAGIC:
        raise ValueError(f"{path.with_suffix('.bin')} is not a genprior network container")
    (depth,) = struct.unpack_from("<Q", raw, 8)
    dims = struct.unpack_from(f"<{depth + 1}Q", raw, 16)
    offset = 16 + 8 * (depth + 1)
    weights = []
    for n_in, n_out in zip(dims[:-1], dims[1:]):
        count = n_in * n_out
        w = np.frombuffer(raw, dtype="<f8", count=count, offset=offset).reshape(n_out, n_in)
        weights.append(w.astype(np.float64))
        offset += 8 * count
    if offset != len(raw):
        raise ValueError("trailing bytes in network container")
    meta_path = path.with_suffix(".json")
    prov = Provenance(seed=None, variance_rule="custom")
    if meta_path.exists():
        meta = json.loads(meta_path.read_text())
        if list(meta["dims"]) != list(dims):
            raise ValueError("sidecar dims disagree with container header")
        scales = meta.get("scales")
        prov = Provenance(seed=meta.get("seed"), variance_rule=meta.get("variance_rule", "custom"),
                          scales=None if scales is None else tuple(scales))
    return GeneratorNetwork(NetworkShape(tuple(int(n) for n in dims)), tuple(weights), prov)
