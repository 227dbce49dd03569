"""Empirical certification of the weight and measurement conditions.

The conditions are suprema over all nonzero inputs.  Here they are estimated
by maximizing over seeded probe sets (uniform pairs plus near-parallel,
near-antipodal and coordinate-sparse pairs), so every reported
``epsilon_hat`` is a lower estimate of the true constant.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from . import _rng
from ._validation import as_matrix, as_vector, require_nonzero
from .exceptions import AllProbesDegenerate, BudgetExceeded, DimensionError, EmptyProbeSet, ZeroVector
from .landscape import angles_to, g
from .netgen import GeneratorNetwork, forward_batch

MAX_EXACT_ROWS = 24
MAX_EXACT_DIM = 3


@dataclass(frozen=True)
class ConditionReport:
    """Result of a probe sweep.

    ``per_probe`` holds the deviation of every probe (NaN for skipped ones),
    so the argmax in ``worst_probe`` can be re-evaluated independently.
    """

    condition: str
    epsilon_hat: float
    num_probes: int
    probe_seed: int | None
    worst_probe: Any
    per_probe: np.ndarray = field(repr=False)
    num_skipped: int = 0
    extra: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        worst = self.worst_probe
        if isinstance(worst, np.ndarray):
            worst = worst.tolist()
        return {
            "condition": self.condition,
            "epsilon_hat": self.epsilon_hat,
            "num_probes": self.num_probes,
            "num_skipped": self.num_skipped,
            "probe_seed": self.probe_seed,
            "worst_probe": worst,
            **self.extra,
        }


# ---------------------------------------------------------------------------
# Q matrices

def _swap_matrix(xh: np.ndarray, yh: np.ndarray, theta: float) -> np.ndarray:
    """Symmetric map with ``xh <-> yh`` and ``span{x, y}^perp -> 0``."""
    if theta == 0.0:
        return np.outer(xh, xh)
    if theta == math.pi:
        return -np.outer(xh, xh)
    e2 = yh - math.cos(theta) * xh
    e2 /= np.linalg.norm(e2)
    c, s = math.cos(theta), math.sin(theta)
    return (c * np.outer(xh, xh) + s * (np.outer(xh, e2) + np.outer(e2, xh))
            - c * np.outer(e2, e2))


def q_matrix(x, y) -> np.ndarray:
    """``E[sum_i 1{w_i.x>0} 1{w_i.y>0} w_i w_i^T]`` for rows ``w_i ~ N(0, I/n)``.

    ``(pi - theta)/(2 pi) I + sin(theta)/(2 pi) M`` where ``M`` swaps the unit
    vectors of ``x`` and ``y``.
    """
    x = as_vector(x)
    y = as_vector(y, x.shape[0], name="y")
    xh = x / require_nonzero(x, "x")
    yh = y / require_nonzero(y, "y")
    theta = 2.0 * math.atan2(float(np.linalg.norm(xh - yh)), float(np.linalg.norm(xh + yh)))
    if theta < 1e-14 or theta > math.pi - 1e-14:
        theta = 0.0 if theta < math.pi / 2 else math.pi
    k = x.shape[0]
    M = _swap_matrix(xh, yh, theta)
    return (math.pi - theta) / (2 * math.pi) * np.eye(k) + math.sin(theta) / (2 * math.pi) * M


def empirical_q(x, y, n_samples: int, seed: int = 0, chunk: int = 1 << 17) -> np.ndarray:
    """Monte-Carlo estimate of :func:`q_matrix`.

    Sums ``1{w.x>0} 1{w.y>0} w w^T`` over ``n_samples`` draws of
    ``w ~ N(0, I/n_samples)``.
    """
    x = as_vector(x)
    y = as_vector(y, x.shape[0], name="y")
    n_samples = int(n_samples)
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    k = x.shape[0]
    rng = _rng.make_rng(seed, _rng.PROBES, 1)
    acc = np.zeros((k, k))
    done = 0
    while done < n_samples:
        b = min(chunk, n_samples - done)
        w = rng.standard_normal((b, k))
        keep = (w @ x > 0) & (w @ y > 0)
        wk = w[keep]
        acc += wk.T @ wk
        done += b
    return acc / n_samples


# ---------------------------------------------------------------------------
# spectral norms

def spectral_norms(mats: np.ndarray, tol: float = 1e-8, max_iter: int = 20000) -> np.ndarray:
    """Spectral norms of a stack ``(p, k, k)`` by power iteration on ``B = M^T M``.

    Deterministic start vector.  A row stops once the eigen-residual
    ``|B v - lam v|`` is below ``tol * lam``; for symmetric ``B`` this bounds
    the error of the Rayleigh quotient ``lam`` by the same amount.
    """
    mats = np.asarray(mats, dtype=np.float64)
    if mats.ndim == 2:
        mats = mats[None]
    p, _, k = mats.shape
    B = np.einsum("pij,pil->pjl", mats, mats)
    v = np.tile(1.0 + np.arange(k) / (2.0 * k), (p, 1))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    lam = np.zeros(p)
    active = np.ones(p, dtype=bool)
    for _ in range(max_iter):
        idx = np.flatnonzero(active)
        if idx.size == 0:
            break
        Bv = np.einsum("pij,pj->pi", B[idx], v[idx])
        rq = np.einsum("pi,pi->p", v[idx], Bv)
        resid = np.linalg.norm(Bv - rq[:, None] * v[idx], axis=1)
        lam[idx] = rq
        nrm = np.linalg.norm(Bv, axis=1)
        done = (nrm == 0) | (resid <= tol * rq)
        move = ~done
        v[idx[move]] = Bv[move] / nrm[move, None]
        active[idx[done]] = False
    return np.sqrt(np.maximum(lam, 0.0))


def spectral_norm(M, tol: float = 1e-8) -> float:
    return float(spectral_norms(as_matrix(M, name="M"), tol=tol)[0])


# ---------------------------------------------------------------------------
# probes

def _unit_rows(a: np.ndarray) -> np.ndarray:
    return a / np.linalg.norm(a, axis=1, keepdims=True)


def sample_probe_pairs(k: int, n_probes: int, seed: int = 0, adversarial: bool = True) -> np.ndarray:
    """``(n_probes, 2, k)`` array of nonzero pairs.

    With ``adversarial`` the last 40% are split evenly into near-parallel,
    near-antipodal and coordinate-sparse pairs.
    """
    n_probes = int(n_probes)
    if n_probes < 1:
        raise EmptyProbeSet("need at least one probe")
    rng = _rng.make_rng(seed, _rng.PROBES, 2)
    X = _unit_rows(rng.standard_normal((n_probes, k)))
    Y = _unit_rows(rng.standard_normal((n_probes, k)))
    if adversarial and n_probes >= 5:
        n_adv = (2 * n_probes) // 5
        a, b, c = np.array_split(np.arange(n_probes - n_adv, n_probes), 3)
        tilt = 10.0 ** rng.uniform(-6, -1, size=(n_probes, 1))
        Y[a] = _unit_rows(X[a] + tilt[a] * Y[a])
        Y[b] = _unit_rows(-X[b] + tilt[b] * Y[b])
        for rows in (c,):
            for r in rows:
                i, j = rng.choice(k, size=2, replace=k < 2)
                X[r] = 0.0
                Y[r] = 0.0
                X[r, i] = rng.choice([-1.0, 1.0])
                Y[r, j] = rng.choice([-1.0, 1.0])
    return np.stack([X, Y], axis=1)


def _resolve_pairs(probes, k: int, seed: int) -> np.ndarray:
    if isinstance(probes, (int, np.integer)):
        return sample_probe_pairs(k, int(probes), seed)
    P = np.asarray(probes, dtype=np.float64)
    if P.ndim != 3 or P.shape[1] != 2 or P.shape[2] != k:
        raise DimensionError(f"probes must have shape (p, 2, {k}), got {P.shape}")
    if P.shape[0] == 0:
        raise EmptyProbeSet("probe set is empty")
    if np.any(np.linalg.norm(P, axis=2) == 0):
        raise ZeroVector("probe vectors must be nonzero")
    return P


def _q_rows(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    return np.stack([q_matrix(x, y) for x, y in zip(X, Y)])


def _report(condition, dev, seed, probes, skipped=0, **extra) -> ConditionReport:
    if np.all(np.isnan(dev)):
        raise AllProbesDegenerate(f"every {condition} probe was degenerate")
    worst = int(np.nanargmax(dev))
    return ConditionReport(condition, float(dev[worst]), int(dev.shape[0]), seed,
                           np.array(probes[worst]), dev, int(skipped), extra)


def wdc_deviation(W, probes=500, seed: int = 0, tol: float = 1e-8) -> ConditionReport:
    """Largest ``|| sum_i 1{w_i.x>0} 1{w_i.y>0} w_i w_i^T - Q_{x,y} ||`` over probe pairs.

    ``probes`` is an array ``(p, 2, k)`` or a probe count to sample with
    :func:`sample_probe_pairs` under ``seed``.
    """
    W = as_matrix(W)
    P = _resolve_pairs(probes, W.shape[1], seed)
    X, Y = P[:, 0], P[:, 1]
    both = ((X @ W.T) > 0) & ((Y @ W.T) > 0)
    S = np.einsum("pn,nj,nl->pjl", both.astype(np.float64), W, W)
    dev = spectral_norms(S - _q_rows(X, Y), tol=tol)
    return _report("WDC", dev, seed if isinstance(probes, (int, np.integer)) else None, P)


def _resolve_quadruples(probes, k: int, seed: int) -> np.ndarray:
    if isinstance(probes, (int, np.integer)):
        n = int(probes)
        if n < 1:
            raise EmptyProbeSet("need at least one probe")
        rng = _rng.make_rng(seed, _rng.PROBES, 3)
        Q = rng.standard_normal((n, 4, k))
        if n >= 4:
            a, b, c = np.array_split(np.arange(n - n // 4, n), 3)
            Q[a, 2], Q[a, 3] = Q[a, 0], Q[a, 1]          # same difference twice
            Q[b, 1] = 0.0                                 # range points themselves
            Q[b, 3] = 0.0
            Q[c, 1] = Q[c, 0] + 10.0 ** rng.uniform(-4, -1, size=(len(c), 1)) * Q[c, 1]
        return Q
    Q = np.asarray(probes, dtype=np.float64)
    if Q.ndim != 3 or Q.shape[1] != 4 or Q.shape[2] != k:
        raise DimensionError(f"quadruples must have shape (p, 4, {k}), got {Q.shape}")
    if Q.shape[0] == 0:
        raise EmptyProbeSet("probe set is empty")
    return Q


def rric_deviation(A, net: GeneratorNetwork, probes=500, seed: int = 0) -> ConditionReport:
    """Largest normalized inner-product distortion of ``A`` on differences of range points.

    ``A`` may be a matrix, a :class:`~genprior.measure.MeasurementEnsemble` or
    None for the identity.  Quadruples whose differences vanish are skipped
    and counted.
    """
    if A is not None and hasattr(A, "kind"):
        A = None if A.matrix is None else A.matrix
    Q = _resolve_quadruples(probes, net.latent_dim, seed)
    p = Q.shape[0]
    G = forward_batch(net, Q.reshape(p * 4, -1)).reshape(p, 4, -1)
    D1 = G[:, 0] - G[:, 1]
    D2 = G[:, 2] - G[:, 3]
    den = np.linalg.norm(D1, axis=1) * np.linalg.norm(D2, axis=1)
    plain = np.einsum("pi,pi->p", D1, D2)
    if A is None:
        measured = plain
    else:
        A = as_matrix(A, name="A")
        if A.shape[1] != net.output_dim:
            raise DimensionError(f"A has {A.shape[1]} columns, network outputs {net.output_dim}")
        measured = np.einsum("pi,pi->p", D1 @ A.T, D2 @ A.T)
    skip = den == 0
    dev = np.full(p, np.nan)
    dev[~skip] = np.abs(measured[~skip] - plain[~skip]) / den[~skip]
    return _report("RRIC", dev, seed if isinstance(probes, (int, np.integer)) else None, Q,
                   skipped=int(skip.sum()))


def angle_contraction_check(W, probes=500, eps: float | None = None, seed: int = 0) -> ConditionReport:
    """Largest ``|angle(relu(Wx), relu(Wy)) - g(angle(x, y))|`` over probe pairs.

    Pairs whose image vanishes are skipped and counted rather than raised.
    With ``eps`` the report also records whether the deviation stays below
    ``4 sqrt(eps)``.
    """
    W = as_matrix(W)
    if not np.any(W):
        raise ValueError("W must be nonzero")
    P = _resolve_pairs(probes, W.shape[1], seed)
    X, Y = P[:, 0], P[:, 1]
    IX = np.maximum(X @ W.T, 0.0)
    IY = np.maximum(Y @ W.T, 0.0)
    ok = (np.linalg.norm(IX, axis=1) > 0) & (np.linalg.norm(IY, axis=1) > 0)
    dev = np.full(P.shape[0], np.nan)
    if ok.any():
        t0 = np.array([2.0 * math.atan2(np.linalg.norm(a - b), np.linalg.norm(a + b))
                       for a, b in zip(_unit_rows(X[ok]), _unit_rows(Y[ok]))])
        t1 = np.array([2.0 * math.atan2(np.linalg.norm(a - b), np.linalg.norm(a + b))
                       for a, b in zip(_unit_rows(IX[ok]), _unit_rows(IY[ok]))])
        dev[ok] = np.abs(t1 - g(t0))
    extra = {}
    if eps is not None:
        bound = 4.0 * math.sqrt(eps)
        extra = {"eps": float(eps), "bound": bound, "within_bound": bool(np.nanmax(dev) <= bound)
                 if ok.any() else True}
    return _report("AngleContraction", dev, seed if isinstance(probes, (int, np.integer)) else None,
                   P, skipped=int((~ok).sum()), **extra)


# ---------------------------------------------------------------------------
# activation-pattern counting

def wendel_count(n: int, ell: int) -> int:
    """Regions cut by ``n`` generic central hyperplanes in dimension ``ell``."""
    return 2 * sum(math.comb(n - 1, i) for i in range(ell))


def _patterns_1d(u: np.ndarray) -> set[bytes]:
    return {np.packbits(u > 0).tobytes(), np.packbits(u < 0).tobytes()}


def _patterns_2d(U: np.ndarray) -> set[bytes]:
    """Sign patterns of ``U v > 0`` over directions ``v`` in the plane.

    Each nonzero row switches sign at the two directions perpendicular to it;
    one probe between every pair of consecutive switching angles sees every
    open sector.
    """
    nz = np.any(U != 0, axis=1)
    if not nz.any():
        return {np.packbits(np.zeros(U.shape[0], dtype=bool)).tobytes()}
    phi = np.arctan2(U[nz, 1], U[nz, 0])
    cuts = np.unique(np.mod(np.concatenate([phi + math.pi / 2, phi - math.pi / 2]), 2 * math.pi))
    nxt = np.append(cuts[1:], cuts[0] + 2 * math.pi)
    mids = 0.5 * (cuts + nxt)
    dirs = np.stack([np.cos(mids), np.sin(mids)], axis=1)
    signs = dirs @ U.T > 0
    return {np.packbits(row).tobytes() for row in signs}


def _patterns_3d(U: np.ndarray, tol: float = 1e-10) -> set[bytes]:
    """Sign patterns over directions in R^3.

    Every open cell of a central arrangement of rank >= 2 has an arrangement
    vertex on its boundary, so the cells are enumerated locally around the
    vertices ``+-(u_i x u_j)``: rows vanishing at a vertex are resolved by the
    planar walk in its tangent plane, the others keep their sign.
    """
    n = U.shape[0]
    nz = np.flatnonzero(np.any(U != 0, axis=1))
    if nz.size == 0:
        return {np.packbits(np.zeros(n, dtype=bool)).tobytes()}
    Un = U / np.maximum(np.linalg.norm(U, axis=1, keepdims=True), 1e-300)
    if np.linalg.matrix_rank(Un[nz], tol=tol) == 1:
        return _patterns_1d(U @ Un[nz[0]])
    out: set[bytes] = set()
    for a in range(nz.size):
        for b in range(a + 1, nz.size):
            c = np.cross(Un[nz[a]], Un[nz[b]])
            cn = np.linalg.norm(c)
            if cn <= tol:
                continue
            for p in (c / cn, -c / cn):
                dots = Un @ p
                local = (np.abs(dots) <= tol) & np.any(U != 0, axis=1)
                base = dots > tol
                e1 = np.cross(p, Un[nz[a]])
                e1 /= np.linalg.norm(e1)
                e2 = np.cross(p, e1)
                idx = np.flatnonzero(local)
                proj = np.stack([U[idx] @ e1, U[idx] @ e2], axis=1)
                for key in _patterns_2d(proj):
                    bits = np.unpackbits(np.frombuffer(key, dtype=np.uint8))[: idx.size].astype(bool)
                    full = base.copy()
                    full[idx] = bits
                    out.add(np.packbits(full).tobytes())
    return out


def count_activation_patterns(W, ell: int, basis=None, seed: int = 0) -> tuple[int, int, int]:
    """Exact number of patterns ``(1{w_i . v > 0})_i`` for ``v`` in an ``ell``-dim subspace.

    The subspace is ``range(basis)``; without a basis it is all of ``R^k``
    when ``ell == k`` and a seeded generic subspace otherwise.

    Returns:
        ``(exact_count, wendel_count, 10 * n**ell)``.

    Raises:
        BudgetExceeded: ``ell > 3`` or more than 24 rows.
    """
    W = as_matrix(W)
    n, k = W.shape
    ell = int(ell)
    if ell < 1 or ell > k:
        raise ValueError(f"subspace dimension must be in [1, {k}], got {ell}")
    if ell > MAX_EXACT_DIM or n > MAX_EXACT_ROWS:
        raise BudgetExceeded(f"exact enumeration limited to ell <= {MAX_EXACT_DIM}, n <= {MAX_EXACT_ROWS}")
    if basis is None:
        basis = np.eye(k) if ell == k else _rng.make_rng(seed, _rng.SUBSPACE).standard_normal((k, ell))
    basis = as_matrix(basis, name="basis")
    if basis.shape != (k, ell):
        raise DimensionError(f"basis must have shape {(k, ell)}, got {basis.shape}")
    U = W @ basis
    if ell == 1:
        pats = _patterns_1d(U[:, 0])
    elif ell == 2:
        pats = _patterns_2d(U)
    else:
        pats = _patterns_3d(U)
    return len(pats), wendel_count(n, ell), 10 * n**ell


def composed_pattern_bound(dims, layers: int | None = None) -> int:
    """``10^i n_1^k ... n_i^k`` for the first ``layers`` layers (default all)."""
    dims = list(dims)
    k = dims[0]
    i = len(dims) - 1 if layers is None else int(layers)
    out = 10**i
    for n in dims[1:i + 1]:
        out *= n**k
    return out


def circle_probes(n: int) -> np.ndarray:
    """``n`` equally spaced unit directions in the plane, offset half a step from the axes."""
    t = (np.arange(n) + 0.5) * (2 * math.pi / n)
    return np.stack([np.cos(t), np.sin(t)], axis=1)


def count_composed_patterns(net: GeneratorNetwork, probes=100_000) -> int:
    """Distinct tuples of per-layer activation patterns seen over the probes.

    ``probes`` is a ``(p, k)`` array or a count of directions (``+-1`` when
    ``k = 1``, an equispaced circle when ``k = 2``).  This is a lower bound on
    the number of linear pieces of the network.
    """
    k = net.latent_dim
    if k > 2 or net.depth > 2 or max(net.shape.dims[1:]) > 12:
        raise BudgetExceeded("composed counting limited to k <= 2, d <= 2, n_i <= 12")
    if isinstance(probes, (int, np.integer)):
        X = np.array([[1.0], [-1.0]]) if k == 1 else circle_probes(int(probes))
    else:
        X = np.asarray(probes, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != k:
            raise DimensionError(f"probes must have shape (p, {k})")
    masks = []
    H = X
    for W in net.weights:
        Z = H @ W.T
        masks.append(Z > 0)
        H = np.maximum(Z, 0.0)
    allm = np.concatenate(masks, axis=1)
    return int(np.unique(np.packbits(allm, axis=1), axis=0).shape[0])
