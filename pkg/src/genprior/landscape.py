"""Closed-form landscape quantities.

The subgradient of the risk concentrates around a deterministic field
``h(x, x0)`` built from the angle map

    g(theta) = arccos(((pi - theta) cos(theta) + sin(theta)) / pi),

which gives the angle between ``relu(W x)`` and ``relu(W y)`` for Gaussian
``W`` when ``x`` and ``y`` are separated by ``theta``.  ``h`` vanishes exactly
at ``x0`` and at the negative multiple ``-rho_d x0``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ._validation import as_vector, require_nonzero
from .exceptions import DomainError, ZeroVector

_ANGLE_SLACK = 1e-12


def angle(x, y) -> float:
    """Angle in ``[0, pi]`` between nonzero vectors.

    Uses ``2 atan2(|x^ - y^|, |x^ + y^|)``, accurate near 0 and pi where the
    arccos of a dot product loses half its digits.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    xh = x / require_nonzero(x, "x")
    yh = y / require_nonzero(y, "y")
    return 2.0 * math.atan2(float(np.linalg.norm(xh - yh)), float(np.linalg.norm(xh + yh)))


def angles_to(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Row-wise :func:`angle` between the rows of ``X`` and a fixed ``y``."""
    Xh = X / np.linalg.norm(X, axis=1, keepdims=True)
    yh = y / np.linalg.norm(y)
    return 2.0 * np.arctan2(np.linalg.norm(Xh - yh, axis=1), np.linalg.norm(Xh + yh, axis=1))


def _sin(t):
    # reflect into [0, pi/2] so that sin(pi) is exactly 0
    return np.sin(np.minimum(t, math.pi - t))


# sin(t) - t cos(t) = sum_k (-1)^(k+1) 2k t^(2k+1) / (2k+1)!
_SERIES = tuple((-1) ** (k + 1) * 2 * k / math.factorial(2 * k + 1) for k in range(1, 11))


def _sin_minus_tcos(t: np.ndarray) -> np.ndarray:
    direct = _sin(t) - t * np.cos(t)
    small = t < 1.0
    if small.any():
        ts = t[small]
        t2 = ts * ts
        acc = np.zeros_like(ts)
        for c in reversed(_SERIES):
            acc = acc * t2 + c
        direct[small] = acc * ts**3
    return direct


def g(theta):
    """Angle contraction map on ``[0, pi]``; accepts scalars or arrays.

    Evaluated as ``2 asin(sqrt((1 - c) / 2))`` with ``1 - c`` assembled from
    ``2 sin^2(t/2)`` and a series for ``sin t - t cos t``, so small angles keep
    full relative precision (``acos`` near 1 would lose half the digits).
    """
    t = np.asarray(theta, dtype=np.float64)
    if np.any(~np.isfinite(t)) or np.any(t < -_ANGLE_SLACK) or np.any(t > math.pi + _ANGLE_SLACK):
        raise DomainError(f"g is defined on [0, pi]; got {theta!r}")
    t = np.atleast_1d(np.clip(t, 0.0, math.pi))
    one_minus_c = (2.0 * math.pi * np.sin(t / 2) ** 2 - _sin_minus_tcos(t)) / math.pi
    out = 2.0 * np.arcsin(np.sqrt(np.clip(one_minus_c / 2.0, 0.0, 1.0)))
    out = np.minimum(out, t)  # g(t) < t; only rounding can break it below ~1e-16
    return float(out[0]) if np.ndim(theta) == 0 else out


@dataclass(frozen=True)
class AngleSequence:
    """``theta0`` followed by its iterates under ``g`` (length ``d + 1``)."""

    theta0: float
    values: tuple[float, ...]


@dataclass(frozen=True)
class CheckSequence:
    """Iterates of ``g`` started from ``pi``: ``values[i] = g^i(pi)``, ``i < d``."""

    values: tuple[float, ...]


def theta_bar(theta0: float, d: int) -> AngleSequence:
    t = g(theta0)  # domain check; g(theta0) is the first iterate
    theta0 = min(max(float(theta0), 0.0), math.pi)
    vals = [theta0]
    for _ in range(d):
        vals.append(t)
        t = g(t)
    return AngleSequence(theta0, tuple(vals))


_CHECK = [math.pi]  # g^i(pi), extended on demand


def theta_check(d: int) -> CheckSequence:
    while len(_CHECK) < d:
        _CHECK.append(g(_CHECK[-1]))
    return CheckSequence(tuple(_CHECK[:d]))


def _iterate_rows(theta0: np.ndarray, d: int) -> np.ndarray:
    """``(p, d)`` array of ``theta_bar_0 .. theta_bar_{d-1}`` for each start angle."""
    out = np.empty((theta0.shape[0], d))
    t = theta0
    for i in range(d):
        out[:, i] = t
        t = g(t)
    return out


def _chain_coefficients(thetas: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(xi, zeta)`` for rows of angle sequences ``theta_0..theta_{d-1}``.

    ``xi = prod_i (pi - theta_i)/pi`` and
    ``zeta = sum_i sin(theta_i)/pi * prod_{j>i} (pi - theta_j)/pi``.
    """
    thetas = np.atleast_2d(thetas)
    p, d = thetas.shape
    keep = (math.pi - thetas) / math.pi
    suffix = np.ones((p, d + 1))
    for i in range(d - 1, -1, -1):
        suffix[:, i] = suffix[:, i + 1] * keep[:, i]
    xi = suffix[:, 0]
    zeta = np.sum(_sin(thetas) / math.pi * suffix[:, 1:], axis=1)
    return xi, zeta


def rho(d: int) -> float:
    """Scale of the spurious critical point ``-rho_d x0``.

    ``rho_1 = 0``, ``rho_2 = 1/pi``, increasing to 1 with depth.
    """
    if int(d) < 1:
        raise ValueError("depth must be >= 1")
    chk = np.array(theta_check(int(d)).values)
    keep = (math.pi - chk) / math.pi
    # after[i] = prod_{j > i} keep[j]
    after = np.append(np.cumprod(keep[:0:-1])[::-1], 1.0)
    return float(np.sum(_sin(chk) / math.pi * after))


def h_field_rows(X, x0, d: int) -> np.ndarray:
    """:func:`h_field` for every row of ``X``."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    x0 = np.asarray(x0, dtype=np.float64)
    norms = np.linalg.norm(X, axis=1)
    n0 = require_nonzero(x0, "x0")
    if np.any(norms == 0):
        raise ZeroVector("x must be nonzero")
    xi, zeta = _chain_coefficients(_iterate_rows(angles_to(X, x0), d))
    scale = 2.0 ** (-d)
    return scale * (-xi[:, None] * x0[None, :] + (1.0 - zeta * n0 / norms)[:, None] * X)


def h_field(x, x0, d: int) -> np.ndarray:
    """Deterministic approximation of the risk subgradient for Gaussian networks and ``A = I``.

    ``h = -2^-d xi x0 + 2^-d (1 - zeta ||x0|| / ||x||) x`` with ``xi, zeta``
    from the iterates of ``g`` started at ``angle(x, x0)``.
    """
    x = as_vector(x)
    x0 = as_vector(x0, x.shape[0], name="x0")
    require_nonzero(x, "x")
    return h_field_rows(x[None, :], x0, d)[0]


def h_tilde(x, y, d: int) -> np.ndarray:
    """Limit of ``(prod W_{i,+,x})^T (prod W_{i,+,y}) y`` for Gaussian layers.

    ``2^-d [xi y + zeta (||y|| / ||x||) x]``; note ``h_field(x, x0) = 2^-d x - h_tilde(x, x0)``.
    """
    x = as_vector(x)
    y = as_vector(y, x.shape[0], name="y")
    nx = require_nonzero(x, "x")
    ny = require_nonzero(y, "y")
    xi, zeta = _chain_coefficients(_iterate_rows(np.array([angle(x, y)]), d))
    return 2.0 ** (-d) * (xi[0] * y + zeta[0] * ny / nx * x)


@dataclass(frozen=True)
class BasinPrediction:
    """Two balls outside which a strict descent direction is guaranteed.

    ``hypothesis_ok`` is False when ``8 pi d^6 sqrt(eps) > 1``; the radii are
    then advisory only.
    """

    center_pos: np.ndarray
    radius_pos: float
    center_neg: np.ndarray
    radius_neg: float
    rho_d: float
    eps: float
    depth: int
    hypothesis_ok: bool

    def contains(self, x) -> bool:
        x = np.asarray(x, dtype=np.float64)
        return bool(np.linalg.norm(x - self.center_pos) <= self.radius_pos
                    or np.linalg.norm(x - self.center_neg) <= self.radius_neg)


def basin_hypothesis_holds(d: int, eps: float) -> bool:
    return 8.0 * math.pi * d**6 * math.sqrt(eps) <= 1.0


def predicted_basins(x0, d: int, eps: float) -> BasinPrediction:
    x0 = as_vector(x0, name="x0")
    n0 = require_nonzero(x0, "x0")
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    r = rho(d)
    root = math.sqrt(eps)
    return BasinPrediction(
        center_pos=x0.copy(),
        radius_pos=56.0 * d * root * n0,
        center_neg=-r * x0,
        radius_neg=500.0 * d**11 * root * n0,
        rho_d=r,
        eps=float(eps),
        depth=int(d),
        hypothesis_ok=basin_hypothesis_holds(d, eps),
    )


def in_S_eps(x, x0, d: int, eps: float) -> bool:
    """Whether ``||h(x, x0)|| <= 2^-d eps max(||x||, ||x0||)``."""
    h = h_field(x, x0, d)
    bound = 2.0 ** (-d) * eps * max(float(np.linalg.norm(x)), float(np.linalg.norm(x0)))
    return bool(np.linalg.norm(h) <= bound)


def in_S_eps_rows(X, x0, d: int, eps: float) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    h = h_field_rows(X, x0, d)
    bound = 2.0 ** (-d) * eps * np.maximum(np.linalg.norm(X, axis=1), np.linalg.norm(x0))
    return np.linalg.norm(h, axis=1) <= bound


def s_eps_dichotomy(x, x0, d: int, eps: float) -> str | None:
    """Which case of the zero-localization statement ``x`` satisfies.

    Returns ``"small_angle"`` (near ``x0``), ``"large_angle"`` (near
    ``-rho_d x0``) or None if neither inequality pair holds.
    """
    x = np.asarray(x, dtype=np.float64)
    x0 = np.asarray(x0, dtype=np.float64)
    r, n0 = float(np.linalg.norm(x)), float(np.linalg.norm(x0))
    t0 = angle(x, x0)
    root = math.sqrt(eps)
    if t0 <= 2 * root and abs(r - n0) <= 18 * d * root * n0:
        return "small_angle"
    if abs(t0 - math.pi) <= 8 * math.pi * d**4 * root and abs(r - rho(d) * n0) <= 200 * d**7 * root * n0:
        return "large_angle"
    return None
