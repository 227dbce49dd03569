"""Subgradient descent on the empirical risk.

The risk is piecewise quadratic.  At generic points the subgradient is the
gradient; when an iterate lands on a kink a fresh random tie-break direction
picks one side.  Descent from a random start can settle near the spurious
critical point ``-rho_d x0``; ``restart_policy="negate_on_stall"`` then flips
the iterate and keeps whichever endpoint has the lower risk.  Exhausting
``max_iters`` while the risk is still above ``stall_risk_tol`` also counts as
a stall.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _rng
from ._validation import as_vector, require_nonzero
from .exceptions import NondifferentiablePoint, ZeroVector
from .landscape import BasinPrediction
from .measure import Instance, directional_derivative, risk, risk_and_subgradient

RESTART_POLICIES = ("none", "negate_on_stall")


@dataclass(frozen=True)
class Backtracking:
    """Armijo line search: shrink ``eta`` until ``f(x - eta v) <= f(x) - c eta |v|^2``.

    ``init=None`` starts from ``2^d``.
    """

    init: float | None = None
    shrink: float = 0.5
    c: float = 1e-4
    max_shrinks: int = 60

    def __post_init__(self):
        if self.init is not None and not self.init > 0:
            raise ValueError("initial step must be positive")
        if not 0 < self.shrink < 1:
            raise ValueError("shrink factor must lie in (0, 1)")
        if not 0 < self.c < 1:
            raise ValueError("sufficient-decrease constant must lie in (0, 1)")


@dataclass(frozen=True)
class DescentConfig:
    """Solver settings.

    Tolerances are relative.  ``risk_tol`` and ``stall_risk_tol`` scale
    ``1/2 |y_obs|^2``; ``grad_tol`` and ``stall_grad_tol`` scale ``2^-d s``
    where ``s = 2^(d/2) |y_obs|`` estimates ``|x0|`` (``|G(x)|`` is about
    ``2^(-d/2) |x|`` for Gaussian layers).  A stall is ``stall_patience``
    consecutive iterations with the gradient below ``stall_grad_tol`` while
    the risk stays above ``stall_risk_tol``.  ``step_size=None`` means the
    fixed step ``0.25 * 2^d``.
    """

    step_size: float | Backtracking | None = None
    max_iters: int = 5000
    grad_tol: float = 1e-12
    risk_tol: float = 1e-16
    stall_grad_tol: float = 1e-3
    stall_risk_tol: float = 1e-4
    stall_patience: int = 25
    tie_break_seed: int = 0
    restart_policy: str = "negate_on_stall"
    max_restarts: int = 1

    def __post_init__(self):
        if isinstance(self.step_size, (int, float)) and not self.step_size > 0:
            raise ValueError("step size must be positive")
        if self.restart_policy not in RESTART_POLICIES:
            raise ValueError(f"restart_policy must be one of {RESTART_POLICIES}")
        if self.max_iters < 0 or self.stall_patience < 1 or self.max_restarts < 0:
            raise ValueError("max_iters >= 0, stall_patience >= 1, max_restarts >= 0 required")
        _rng.check_seed(self.tie_break_seed)


@dataclass(frozen=True)
class Event:
    iteration: int
    kind: str  # tie_break_used | zero_init | restart | converged | stalled | max_iters | line_search_failed
    detail: str = ""


@dataclass
class Trajectory:
    """Iterates of one descent, restarts included.

    ``segments`` holds the starting index of every restart segment; risks are
    monotone within a segment under backtracking.  ``x_final`` is the better
    endpoint when a restart happened.
    """

    iterates: list = field(default_factory=list)
    risks: list = field(default_factory=list)
    grad_norms: list = field(default_factory=list)
    events: list = field(default_factory=list)
    segments: list = field(default_factory=lambda: [0])
    status: str = "running"
    x_final: np.ndarray | None = None
    risk_final: float = math.inf

    def __len__(self) -> int:
        return len(self.iterates)

    @property
    def n_iters(self) -> int:
        return len(self.iterates) - len(self.segments)

    def has_event(self, kind: str) -> bool:
        return any(e.kind == kind for e in self.events)

    def rows(self):
        """``(iter, risk, grad_norm, event)`` rows; events at an iteration are joined by ``;``."""
        tags: dict[int, list[str]] = {}
        for e in self.events:
            tags.setdefault(e.iteration, []).append(e.kind)
        for i, (f, gn) in enumerate(zip(self.risks, self.grad_norms)):
            yield i, f, gn, ";".join(tags.get(i, []))


def _scales(inst: Instance) -> tuple[float, float]:
    """``(risk_scale, grad_scale)`` used by the relative tolerances."""
    y = float(np.linalg.norm(inst.y_obs))
    d = inst.depth
    return 0.5 * y * y, 2.0 ** (-d) * 2.0 ** (d / 2) * y


def _random_unit(rng: np.random.Generator, k: int) -> np.ndarray:
    while True:
        u = rng.standard_normal(k)
        n = np.linalg.norm(u)
        if n > 0:
            return u / n


def _evaluate(inst: Instance, x: np.ndarray, rng, traj: Trajectory):
    try:
        f, v, _ = risk_and_subgradient(inst, x)
    except NondifferentiablePoint:
        f, v, _ = risk_and_subgradient(inst, x, tie_break=_random_unit(rng, x.shape[0]))
        traj.events.append(Event(len(traj.iterates), "tie_break_used"))
    return f, v


def _run_segment(inst: Instance, x: np.ndarray, cfg: DescentConfig, rng, traj: Trajectory) -> str:
    risk_scale, grad_scale = _scales(inst)
    step = cfg.step_size
    if step is None:
        step = 0.25 * 2.0 ** inst.depth
    line = step if isinstance(step, Backtracking) else None
    eta0 = (line.init if line.init is not None else 2.0 ** inst.depth) if line else float(step)
    eta = eta0
    f, v = _evaluate(inst, x, rng, traj)
    low_grad = 0
    for it in range(cfg.max_iters + 1):
        gn = float(np.linalg.norm(v))
        traj.iterates.append(x)
        traj.risks.append(f)
        traj.grad_norms.append(gn)
        idx = len(traj.iterates) - 1
        if f <= cfg.risk_tol * risk_scale or gn <= cfg.grad_tol * grad_scale:
            status = "converged" if f <= math.sqrt(cfg.risk_tol) * risk_scale else "stalled"
            traj.events.append(Event(idx, status))
            return status
        stuck = gn <= cfg.stall_grad_tol * grad_scale and f > cfg.stall_risk_tol * risk_scale
        low_grad = low_grad + 1 if stuck else 0
        if low_grad >= cfg.stall_patience:
            traj.events.append(Event(idx, "stalled"))
            return "stalled"
        if it == cfg.max_iters:
            break
        if line is None:
            x = x - eta * v
            f, v = _evaluate(inst, x, rng, traj)
            continue
        eta = min(eta0, eta / line.shrink)
        for _ in range(line.max_shrinks):
            x_new = x - eta * v
            f_new = risk(inst, x_new)
            if f_new <= f - line.c * eta * gn * gn and f_new < f:
                break
            eta *= line.shrink
        else:
            traj.events.append(Event(idx, "line_search_failed"))
            return "line_search_failed"
        x = x_new
        f, v = _evaluate(inst, x, rng, traj)
    traj.events.append(Event(len(traj.iterates) - 1, "max_iters"))
    return "max_iters"


def negation_restart(traj: Trajectory, inst: Instance, rng: np.random.Generator | None = None) -> np.ndarray:
    """Start point for a second run: ``-x`` at the stall point.

    Without a stall (or an exhausted iteration budget) the last iterate is
    returned unchanged.  A stall at
    (numerically) zero, which is where ``-rho_1 x0`` lies for one layer,
    restarts from a random unit vector instead.
    """
    x = np.asarray(traj.iterates[-1], dtype=np.float64)
    if not (traj.has_event("stalled") or traj.has_event("max_iters")):
        return x
    _, grad_scale = _scales(inst)
    if np.linalg.norm(x) <= 1e-8 * max(grad_scale * 2.0 ** inst.depth, 1e-300):
        rng = rng if rng is not None else np.random.default_rng(0)
        return _random_unit(rng, x.shape[0])
    return -x


def _should_restart(status: str, f: float, inst: Instance, cfg: DescentConfig) -> bool:
    # running out of iterations far from a zero of the risk counts as a stall
    if cfg.restart_policy != "negate_on_stall":
        return False
    return status == "stalled" or (status == "max_iters" and f > cfg.stall_risk_tol * _scales(inst)[0])


def descend(inst: Instance, x_init, cfg: DescentConfig | None = None) -> Trajectory:
    """Run subgradient descent from ``x_init``.

    A zero start is a local maximum of the risk, so it is replaced by a random
    unit vector (recorded as a ``zero_init`` event).
    """
    cfg = cfg or DescentConfig()
    x = as_vector(x_init, inst.latent_dim, name="x_init")
    rng = _rng.make_rng(cfg.tie_break_seed, _rng.TIE_BREAK)
    traj = Trajectory()
    if not np.any(x):
        x = _random_unit(rng, x.shape[0])
        traj.events.append(Event(0, "zero_init"))
    status = _run_segment(inst, x, cfg, rng, traj)
    best_x, best_f, best_status = traj.iterates[-1], traj.risks[-1], status
    restarts = 0
    while _should_restart(best_status, best_f, inst, cfg) and restarts < cfg.max_restarts:
        restarts += 1
        x = negation_restart(traj, inst, rng)
        traj.events.append(Event(len(traj.iterates), "restart"))
        traj.segments.append(len(traj.iterates))
        status = _run_segment(inst, x, cfg, rng, traj)
        if traj.risks[-1] < best_f:
            best_x, best_f, best_status = traj.iterates[-1], traj.risks[-1], status
    traj.status = best_status
    traj.x_final = np.array(best_x)
    traj.risk_final = float(best_f)
    return traj


@dataclass(frozen=True)
class DescentCheck:
    outside_basins: bool
    directional_value: float
    passes: bool


def verify_descent(inst: Instance, x, basins: BasinPrediction, tie_break_seed: int = 0) -> DescentCheck:
    """Check that ``-v_x`` is a strict descent direction at ``x``.

    Inside a predicted basin nothing is asserted and ``passes`` is True.
    """
    x = as_vector(x, inst.latent_dim)
    require_nonzero(x, "x")
    try:
        _, v, _ = risk_and_subgradient(inst, x)
    except NondifferentiablePoint:
        w = _random_unit(_rng.make_rng(tie_break_seed, _rng.TIE_BREAK), x.shape[0])
        _, v, _ = risk_and_subgradient(inst, x, tie_break=w)
    outside = not basins.contains(x)
    try:
        value = directional_derivative(inst, x, -v)
    except ZeroVector:
        value = 0.0
    return DescentCheck(outside, value, (value < 0) if outside else True)
