"""Seeded experiment runner.

An experiment is a ``kind`` plus a parameter grid.  Every cell of the grid
runs ``trials`` independent trials; trial ``t`` of cell ``c`` draws all of its
randomness from ``derive_seed(master_seed, kind, c, t)`` (blake2b, see
:mod:`genprior._rng`), and that seed is written on every row so a single cell
can be re-run in isolation with :func:`run_trial`.  Rows are written in
``(cell, trial)`` order regardless of how many workers computed them, so the
same spec always produces the same bytes.

Specs are plain ``key = value`` text; list values are comma separated::

    kind = recovery_phase
    m = 16, 32, 64, 128, 256
    trials = 50
    master_seed = 7
"""
from __future__ import annotations

import csv
import hashlib
import io
import itertools
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _rng
from ._version import __version__
from .conditions import angle_contraction_check, count_activation_patterns, rric_deviation, wdc_deviation
from .exceptions import InvalidSpec, IoFailure, NondifferentiablePoint, ZeroVector
from .landscape import g, h_field, predicted_basins
from .measure import (directional_derivative, make_instance, risk, risk_and_subgradient,
                      sample_ensemble, subgradient)
from .netgen import sample_gaussian_network
from .solver import DescentConfig, descend

SCHEMA_VERSION = 1
SUCCESS_REL_ERR = 1e-3
WORKERS_ENV = "GENPRIOR_WORKERS"

COLUMNS = {
    "g_table": ("theta", "g"),
    "wdc_sweep": ("k", "n", "trial", "seed", "wdc_epsilon_hat", "angle_epsilon_hat",
                  "angle_bound", "angle_within_bound", "num_probes"),
    "rric_sweep": ("k", "d", "n_out", "m", "trial", "seed", "net_seed", "epsilon_hat",
                   "num_skipped", "num_probes"),
    "concentration_sweep": ("k", "d", "n1", "n_out", "trial", "seed", "median_scaled_dev",
                            "max_scaled_dev", "num_points"),
    "landscape_grid": ("a", "b", "risk", "h_norm", "directional", "inside_basin", "eps", "seed"),
    "recovery_phase": ("k", "d", "n_out", "m", "trial", "seed", "net_seed", "rel_err", "iters",
                       "status", "restarted"),
    "region_count": ("ell", "n", "trial", "seed", "exact_count", "wendel_count", "paper_bound"),
}
PHASE_COLUMNS = ("k", "m", "d", "success_rate", "median_rel_err", "median_iters")
KINDS = tuple(COLUMNS)

# name -> (type, is_list, default)
_COMMON = {"trials": (int, False, 1), "master_seed": (int, False, 0), "output": (str, False, None)}
_PARAMS = {
    "g_table": {"points": (int, False, 1025)},
    "wdc_sweep": {"k": (int, True, (5,)), "n": (int, True, (50, 200, 800)), "probes": (int, False, 500)},
    "rric_sweep": {"k": (int, True, (6,)), "d": (int, True, (2,)), "n1": (int, True, (60,)),
                   "growth": (int, False, 5), "m": (int, True, (50, 200, 800)), "probes": (int, False, 500),
                   "ensemble": (str, False, "gaussian")},
    "concentration_sweep": {"k": (int, True, (6,)), "d": (int, True, (2,)),
                            "n1": (int, True, (60, 240, 960)), "growth": (int, False, 5),
                            "points": (int, False, 200)},
    "landscape_grid": {"k": (int, False, 6), "d": (int, False, 2), "n1": (int, False, 60),
                       "growth": (int, False, 5), "grid": (int, False, 201), "extent": (float, False, 2.0),
                       "m": (int, False, 0), "probes": (int, False, 500), "eps": (float, False, -1.0)},
    "recovery_phase": {"k": (int, True, (8,)), "d": (int, True, (2,)), "n1": (int, True, (160,)),
                       "growth": (int, False, 5), "m": (int, True, (16, 32, 64, 128, 256)),
                       "ensemble": (str, False, "gaussian"), "max_iters": (int, False, 5000),
                       "restart_policy": (str, False, "negate_on_stall")},
    "region_count": {"ell": (int, True, (2,)), "n": (int, True, tuple(range(3, 13)))},
}
_SINGLE_TRIAL = {"g_table"}


def dims_for(k: int, d: int, n1: int, growth: int) -> tuple[int, ...]:
    """``(k, n1, growth * n1, growth^2 * n1, ...)`` with ``d`` layers."""
    return (k,) + tuple(n1 * growth**i for i in range(d))


@dataclass(frozen=True)
class ExperimentSpec:
    kind: str
    params: dict = field(default_factory=dict)
    trials: int = 1
    master_seed: int = 0
    output: str | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidSpec(f"unknown kind {self.kind!r}; choose from {', '.join(KINDS)}")
        if int(self.trials) < 1:
            raise InvalidSpec("trials must be >= 1")
        try:
            _rng.check_seed(self.master_seed)
        except ValueError as exc:
            raise InvalidSpec(str(exc)) from None
        schema = _PARAMS[self.kind]
        merged = {}
        for name, (typ, is_list, default) in schema.items():
            value = self.params.get(name, default)
            if is_list:
                value = tuple(value) if isinstance(value, (list, tuple)) else (value,)
                if not value:
                    raise InvalidSpec(f"grid axis {name!r} is empty")
                value = tuple(typ(v) for v in value)
            merged[name] = value
        unknown = set(self.params) - set(schema)
        if unknown:
            raise InvalidSpec(f"unknown parameter(s) for {self.kind}: {', '.join(sorted(unknown))}")
        _check_values(self.kind, merged)
        object.__setattr__(self, "params", merged)
        object.__setattr__(self, "trials", 1 if self.kind in _SINGLE_TRIAL else int(self.trials))

    @classmethod
    def from_mapping(cls, mapping: dict) -> "ExperimentSpec":
        mapping = dict(mapping)
        if "kind" not in mapping:
            raise InvalidSpec("spec needs a 'kind'")
        kind = str(mapping.pop("kind"))
        if kind not in KINDS:
            raise InvalidSpec(f"unknown kind {kind!r}; choose from {', '.join(KINDS)}")
        common = {}
        for name, (typ, _, default) in _COMMON.items():
            raw = mapping.pop(name, default)
            common[name] = raw if raw is None else _convert(name, typ, raw)
        schema = _PARAMS[kind]
        params = {}
        for name, raw in mapping.items():
            if name not in schema:
                raise InvalidSpec(f"unknown parameter {name!r} for {kind}")
            typ, is_list, _ = schema[name]
            if is_list and isinstance(raw, str):
                raw = [p for p in (s.strip() for s in raw.split(",")) if p]
                if not raw:
                    raise InvalidSpec(f"grid axis {name!r} is empty")
            if is_list:
                raw = raw if isinstance(raw, (list, tuple)) else [raw]
                params[name] = tuple(_convert(name, typ, r) for r in raw)
            else:
                params[name] = _convert(name, typ, raw)
        return cls(kind, params, common["trials"], common["master_seed"], common["output"])

    def to_mapping(self) -> dict:
        out = {"kind": self.kind, "trials": self.trials, "master_seed": self.master_seed}
        out.update({k: list(v) if isinstance(v, tuple) else v for k, v in self.params.items()})
        return out

    def cells(self) -> list[dict]:
        """Cartesian product of the list-valued parameters, in schema order."""
        schema = _PARAMS[self.kind]
        axes = [n for n, (_, is_list, _) in schema.items() if is_list]
        fixed = {n: v for n, v in self.params.items() if n not in axes}
        out = []
        for combo in itertools.product(*(self.params[a] for a in axes)):
            cell = dict(fixed)
            cell.update(zip(axes, combo))
            out.append(cell)
        return out


def _convert(name, typ, raw):
    try:
        if typ is int:
            value = float(raw) if isinstance(raw, str) and ("e" in raw.lower() or "." in raw) else raw
            if isinstance(value, float) and not value.is_integer():
                raise ValueError
            return int(value)
        return typ(raw)
    except (TypeError, ValueError):
        raise InvalidSpec(f"parameter {name!r}: cannot read {raw!r} as {typ.__name__}") from None


def _check_values(kind: str, p: dict) -> None:
    def positive(name):
        vals = p[name] if isinstance(p[name], tuple) else (p[name],)
        if any(v < 1 for v in vals):
            raise InvalidSpec(f"{name} must be >= 1")

    for name in ("k", "n", "d", "n1", "m", "probes", "points", "grid", "growth", "ell", "max_iters"):
        if name in p and not (kind == "landscape_grid" and name == "m"):
            positive(name)
    if kind == "g_table" and p["points"] < 2:
        raise InvalidSpec("g_table needs at least 2 points")
    if "ensemble" in p and p["ensemble"] not in ("gaussian", "bernoulli", "identity"):
        raise InvalidSpec(f"unknown ensemble {p['ensemble']!r}")
    if "restart_policy" in p and p["restart_policy"] not in ("none", "negate_on_stall"):
        raise InvalidSpec(f"unknown restart policy {p['restart_policy']!r}")
    if kind == "region_count" and (max(p["ell"]) > 3 or max(p["n"]) > 24):
        raise InvalidSpec("region_count supports ell <= 3 and n <= 24")


def parse_spec(text: str, overrides: dict | None = None) -> ExperimentSpec:
    """Read ``key = value`` lines; ``#`` starts a comment."""
    mapping: dict = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidSpec(f"line {lineno}: expected key = value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise InvalidSpec(f"line {lineno}: empty key")
        mapping[key] = value
    mapping.update(overrides or {})
    return ExperimentSpec.from_mapping(mapping)


def load_spec(path, overrides: dict | None = None) -> ExperimentSpec:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InvalidSpec(f"cannot read spec file {path}: {exc}") from None
    return parse_spec(text, overrides)


# ---------------------------------------------------------------------------
# trials

def _scaled_unit(x: np.ndarray) -> np.ndarray:
    return x / np.linalg.norm(x)


def _trial_wdc(cell, seed, master, trial):
    W = sample_gaussian_network((cell["k"], cell["n"]), seed).weights[0]
    rep = wdc_deviation(W, cell["probes"], seed=seed)
    ang = angle_contraction_check(W, cell["probes"], eps=rep.epsilon_hat, seed=seed)
    return [(cell["k"], cell["n"], trial, seed, rep.epsilon_hat, ang.epsilon_hat,
             ang.extra["bound"], ang.extra["within_bound"], rep.num_probes)]


def _trial_rric(cell, seed, master, trial):
    dims = dims_for(cell["k"], cell["d"], cell["n1"], cell["growth"])
    net_seed = _rng.derive_seed(master, "rric_sweep", "net", *dims, trial)
    net = sample_gaussian_network(dims, net_seed)
    m = dims[-1] if cell["ensemble"] == "identity" else cell["m"]
    ens = sample_ensemble(cell["ensemble"], m, dims[-1], seed)
    rep = rric_deviation(ens, net, cell["probes"], seed=seed)
    return [(cell["k"], cell["d"], dims[-1], m, trial, seed, net_seed, rep.epsilon_hat,
             rep.num_skipped, rep.num_probes)]


def concentration_values(net, x0, X) -> np.ndarray:
    """``|v_x - h(x, x0)| 2^d / max(|x|, |x0|)`` for each row of ``X`` with ``A = I``."""
    d = net.depth
    inst = make_instance(net, sample_ensemble("identity", net.output_dim, net.output_dim), x0)
    n0 = float(np.linalg.norm(x0))
    out = np.empty(X.shape[0])
    for i, x in enumerate(X):
        v = subgradient(inst, x)
        out[i] = np.linalg.norm(v - h_field(x, x0, d)) * 2.0**d / max(float(np.linalg.norm(x)), n0)
    return out


def _trial_concentration(cell, seed, master, trial):
    dims = dims_for(cell["k"], cell["d"], cell["n1"], cell["growth"])
    net = sample_gaussian_network(dims, seed)
    rng = _rng.make_rng(seed, _rng.LATENT)
    x0 = rng.standard_normal(cell["k"])
    X = rng.standard_normal((cell["points"], cell["k"]))
    vals = concentration_values(net, x0, X)
    return [(cell["k"], cell["d"], cell["n1"], dims[-1], trial, seed, float(np.median(vals)),
             float(vals.max()), cell["points"])]


def estimate_eps(net, ensemble, probes: int, seed: int) -> float:
    """Largest observed WDC deviation over the layers, combined with the RRIC deviation."""
    eps = max(wdc_deviation(W, probes, seed=seed).epsilon_hat for W in net.weights)
    if not ensemble.is_identity:
        eps = max(eps, rric_deviation(ensemble, net, probes, seed=seed).epsilon_hat)
    return float(eps)


def _trial_landscape(cell, seed, master, trial):
    dims = dims_for(cell["k"], cell["d"], cell["n1"], cell["growth"])
    net = sample_gaussian_network(dims, seed)
    m = cell["m"] or dims[-1]
    ens = sample_ensemble("identity" if cell["m"] == 0 else "gaussian", m, dims[-1], seed)
    rng = _rng.make_rng(seed, _rng.LATENT)
    x0 = rng.standard_normal(cell["k"])
    perp = rng.standard_normal(cell["k"])
    perp -= (perp @ x0) / (x0 @ x0) * x0
    u, w = _scaled_unit(x0), _scaled_unit(perp)
    inst = make_instance(net, ens, x0)
    eps = cell["eps"] if cell["eps"] >= 0 else estimate_eps(net, ens, cell["probes"], seed)
    basins = predicted_basins(x0, cell["d"], eps)
    n0 = float(np.linalg.norm(x0))
    axis = np.linspace(-cell["extent"], cell["extent"], cell["grid"])
    rows = []
    for a in axis:
        for b in axis:
            x = n0 * (a * u + b * w)
            f = risk(inst, x)
            if not np.any(x):
                rows.append((float(a), float(b), f, math.nan, math.nan, True, eps, seed))
                continue
            try:
                _, v, _ = risk_and_subgradient(inst, x)
            except NondifferentiablePoint:
                _, v, _ = risk_and_subgradient(inst, x, tie_break=w)
            try:
                dv = directional_derivative(inst, x, -v)
            except ZeroVector:
                dv = 0.0
            hn = float(np.linalg.norm(h_field(x, x0, cell["d"])))
            rows.append((float(a), float(b), f, hn, dv, basins.contains(x), eps, seed))
    return rows


def recovery_trial(dims, m: int, ensemble: str, seed: int, net_seed: int,
                   max_iters: int = 5000, restart_policy: str = "negate_on_stall"):
    """One recovery run; returns ``(rel_err, trajectory)``.

    Network, ``x0`` and the start point come from ``net_seed``; the
    measurement matrix and tie-breaks from ``seed``.
    """
    net = sample_gaussian_network(dims, net_seed)
    k = dims[0]
    x0 = _rng.make_rng(net_seed, _rng.LATENT).standard_normal(k)
    x_init = _rng.make_rng(net_seed, _rng.INIT).standard_normal(k)
    inst = make_instance(net, sample_ensemble(ensemble, m, dims[-1], seed), x0)
    cfg = DescentConfig(max_iters=max_iters, restart_policy=restart_policy, tie_break_seed=seed)
    traj = descend(inst, x_init, cfg)
    return float(np.linalg.norm(traj.x_final - x0) / np.linalg.norm(x0)), traj


def _trial_recovery(cell, seed, master, trial):
    dims = dims_for(cell["k"], cell["d"], cell["n1"], cell["growth"])
    m = dims[-1] if cell["ensemble"] == "identity" else cell["m"]
    net_seed = _rng.derive_seed(master, "recovery_phase", "net", *dims, trial)
    err, traj = recovery_trial(dims, m, cell["ensemble"], seed, net_seed, cell["max_iters"],
                               cell["restart_policy"])
    return [(cell["k"], cell["d"], dims[-1], m, trial, seed, net_seed, err, traj.n_iters,
             traj.status, traj.has_event("restart"))]


def _trial_regions(cell, seed, master, trial):
    W = _rng.make_rng(seed, _rng.NETWORK).standard_normal((cell["n"], cell["ell"]))
    exact, wendel, bound = count_activation_patterns(W, cell["ell"])
    return [(cell["ell"], cell["n"], trial, seed, exact, wendel, bound)]


def _trial_g(cell, seed, master, trial):
    p = cell["points"]
    thetas = np.arange(p) * (math.pi / (p - 1))
    thetas[-1] = math.pi
    return [(float(t), float(gv)) for t, gv in zip(thetas, g(thetas))]


_TRIALS = {
    "g_table": _trial_g,
    "wdc_sweep": _trial_wdc,
    "rric_sweep": _trial_rric,
    "concentration_sweep": _trial_concentration,
    "landscape_grid": _trial_landscape,
    "recovery_phase": _trial_recovery,
    "region_count": _trial_regions,
}


def trial_seed(master_seed: int, kind: str, cell_index: int, trial: int) -> int:
    return _rng.derive_seed(master_seed, kind, cell_index, trial)


def run_trial(kind: str, cell: dict, trial: int, seed: int, master_seed: int = 0) -> list[tuple]:
    """Rows of one trial; re-runs any single row from its recorded seed."""
    return _TRIALS[kind](cell, seed, master_seed, trial)


def _task(args):
    kind, cell, trial, seed, master = args
    return run_trial(kind, cell, trial, seed, master)


def _resolve_workers(workers: int | None) -> int:
    if workers is None:
        raw = os.environ.get(WORKERS_ENV, "1")
        try:
            workers = int(raw)
        except ValueError:
            raise InvalidSpec(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    return max(1, int(workers))


def collect_rows(spec: ExperimentSpec, workers: int | None = None) -> list[tuple]:
    """Run every trial and return rows ordered by ``(cell, trial)``."""
    tasks = []
    for ci, cell in enumerate(spec.cells()):
        for t in range(spec.trials):
            tasks.append((spec.kind, cell, t, trial_seed(spec.master_seed, spec.kind, ci, t), spec.master_seed))
    workers = _resolve_workers(workers)
    if workers == 1 or len(tasks) == 1:
        results = [_task(a) for a in tasks]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_task, tasks, chunksize=max(1, len(tasks) // (4 * workers))))
    return [row for rows in results for row in rows]


# ---------------------------------------------------------------------------
# output

def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def format_csv(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def aggregate_phase(rows) -> list[tuple]:
    """Recovery rows to ``(k, m, d, success_rate, median_rel_err, median_iters)``."""
    idx = {c: i for i, c in enumerate(COLUMNS["recovery_phase"])}
    groups: dict[tuple, list] = {}
    for r in rows:
        groups.setdefault((r[idx["k"]], r[idx["m"]], r[idx["d"]]), []).append(r)
    out = []
    for key in sorted(groups):
        rs = groups[key]
        errs = np.array([r[idx["rel_err"]] for r in rs])
        iters = np.array([r[idx["iters"]] for r in rs])
        out.append(key + (float(np.mean(errs <= SUCCESS_REL_ERR)), float(np.median(errs)),
                          float(np.median(iters))))
    return out


def phase_table(spec: ExperimentSpec, workers: int | None = None) -> list[tuple]:
    """Success rate per ``(k, m, d)``; success means relative error <= 1e-3."""
    if spec.kind != "recovery_phase":
        raise InvalidSpec("phase_table needs a recovery_phase spec")
    return aggregate_phase(collect_rows(spec, workers))


@dataclass(frozen=True)
class RunResult:
    status: int
    files: tuple[Path, ...]
    manifest: Path


def _write(path: Path, text: str) -> None:
    try:
        path.write_text(text)
    except OSError as exc:
        raise IoFailure(f"cannot write {path}: {exc}") from exc


def run(spec: ExperimentSpec, output_dir=None, workers: int | None = None) -> RunResult:
    """Run an experiment and write ``<kind>.csv`` plus ``manifest.json``.

    ``recovery_phase`` also writes ``phase_table.csv``.
    """
    out = Path(output_dir or spec.output or f"genprior-{spec.kind}")
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise IoFailure(f"cannot create {out}: {exc}") from exc
    rows = collect_rows(spec, workers)
    outputs = {f"{spec.kind}.csv": (COLUMNS[spec.kind], rows)}
    if spec.kind == "recovery_phase":
        outputs["phase_table.csv"] = (PHASE_COLUMNS, aggregate_phase(rows))
    files, listing = [], {}
    for name, (cols, rs) in outputs.items():
        text = format_csv(cols, rs)
        _write(out / name, text)
        files.append(out / name)
        listing[name] = {"columns": list(cols), "rows": len(rs),
                         "sha256": hashlib.sha256(text.encode()).hexdigest()}
    manifest = {
        "format": "genprior-manifest",
        "schema_version": SCHEMA_VERSION,
        "genprior_version": __version__,
        "numpy_version": np.__version__,
        "spec": spec.to_mapping(),
        "seed_rule": "blake2b-64 of 'master_seed:kind:cell_index:trial'",
        "cells": [{"index": i, "params": {k: v for k, v in c.items()},
                   "trial_seeds": [trial_seed(spec.master_seed, spec.kind, i, t) for t in range(spec.trials)]}
                  for i, c in enumerate(spec.cells())],
        "files": listing,
    }
    mpath = out / "manifest.json"
    _write(mpath, json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return RunResult(0, tuple(files), mpath)


__all__ = [
    "COLUMNS", "KINDS", "PHASE_COLUMNS", "ExperimentSpec", "RunResult",
    "aggregate_phase", "collect_rows", "concentration_values", "dims_for", "estimate_eps",
    "format_csv", "load_spec", "parse_spec", "phase_table", "recovery_trial", "run", "run_trial",
    "trial_seed",
]
