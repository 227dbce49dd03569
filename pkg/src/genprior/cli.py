"""Command line entry point ``genprior``.

Exit codes: 0 success, 2 invalid spec or arguments, 3 runtime failure.
The worker count for ``run`` defaults to ``$GENPRIOR_WORKERS`` (else 1).
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import _rng, conditions, harness
from .exceptions import GenPriorError, InvalidSpec
from .landscape import g, rho, theta_check
from .measure import load_instance, make_instance, sample_ensemble, save_instance
from .netgen import load_network, sample_gaussian_network
from .solver import Backtracking, DescentConfig, descend

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise InvalidSpec(message)


def _int_list(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _emit_json(obj, path: Path | None) -> None:
    text = json.dumps(obj, indent=2, sort_keys=True, default=float) + "\n"
    sys.stdout.write(text)
    if path is not None:
        path.write_text(text)


def _cmd_run(args) -> int:
    items = list(args.overrides)
    if args.spec and "=" in args.spec:
        items.insert(0, args.spec)
        args.spec = None
    overrides = {}
    for item in items:
        if "=" not in item:
            raise InvalidSpec(f"expected key=value, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    if args.spec:
        spec = harness.load_spec(args.spec, overrides)
    else:
        spec = harness.ExperimentSpec.from_mapping(overrides)
    res = harness.run(spec, args.out, args.workers)
    for f in res.files + (res.manifest,):
        print(f)
    return EXIT_OK


def _cmd_certify(args) -> int:
    out = Path(args.out) if args.out else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    if args.network:
        net = load_network(args.network)
    else:
        net = sample_gaussian_network(args.dims, args.seed)
    if args.target == "count":
        W = net.weights[args.layer]
        exact, wendel, bound = conditions.count_activation_patterns(W, args.ell, seed=args.seed)
        _emit_json({"condition": "ActivationPatterns", "exact_count": exact, "wendel_count": wendel,
                    "paper_bound": bound, "n": W.shape[0], "ell": args.ell},
                   out / "report.json" if out else None)
        return EXIT_OK
    if args.target == "wdc":
        rep = conditions.wdc_deviation(net.weights[args.layer], args.probes, seed=args.seed)
    elif args.target == "angle":
        rep = conditions.angle_contraction_check(net.weights[args.layer], args.probes, eps=args.eps,
                                                 seed=args.seed)
    else:
        m = args.m or net.output_dim
        ens = sample_ensemble(args.ensemble, m, net.output_dim, args.seed)
        rep = conditions.rric_deviation(ens, net, args.probes, seed=args.seed)
    _emit_json(rep.as_dict(), out / "report.json" if out else None)
    if out is not None:
        rows = [(i, float(v)) for i, v in enumerate(rep.per_probe)]
        (out / "probes.csv").write_text(harness.format_csv(("probe", "deviation"), rows))
    return EXIT_OK


def _cmd_recover(args) -> int:
    if args.instance:
        inst = load_instance(args.instance)
    else:
        net = sample_gaussian_network(args.dims, args.seed)
        x0 = _rng.make_rng(args.seed, _rng.LATENT).standard_normal(net.latent_dim)
        m = net.output_dim if args.ensemble == "identity" else args.m
        inst = make_instance(net, sample_ensemble(args.ensemble, m, net.output_dim, args.seed), x0)
    if args.save_instance:
        save_instance(inst, args.save_instance)
    x_init = _rng.make_rng(args.seed, _rng.INIT).standard_normal(inst.latent_dim)
    step = Backtracking() if args.backtracking else args.step_size
    cfg = DescentConfig(step_size=step, max_iters=args.max_iters, tie_break_seed=args.tie_break_seed,
                        restart_policy=args.restart_policy)
    traj = descend(inst, x_init, cfg)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "trajectory.csv").write_text(
            harness.format_csv(("iter", "risk", "grad_norm", "event"), traj.rows()))
    rel = math.nan
    if inst.x0 is not None:
        rel = float(np.linalg.norm(traj.x_final - inst.x0) / np.linalg.norm(inst.x0))
    _emit_json({"status": traj.status, "iterations": traj.n_iters, "final_risk": traj.risk_final,
                "rel_err": rel, "restarted": traj.has_event("restart"),
                "tie_breaks": sum(e.kind == "tie_break_used" for e in traj.events),
                "x_final": traj.x_final.tolist()},
               Path(args.out) / "summary.json" if args.out else None)
    return EXIT_OK


def _cmd_landscape_table(args) -> int:
    p = args.points
    if p < 2:
        raise InvalidSpec("--points must be >= 2")
    thetas = np.arange(p) * (math.pi / (p - 1))
    thetas[-1] = math.pi
    g_text = harness.format_csv(("theta", "g"), zip(thetas.tolist(), np.atleast_1d(g(thetas)).tolist()))
    chk = theta_check(args.max_depth).values
    rho_rows = [(d, rho(d), chk[d - 1]) for d in range(1, args.max_depth + 1)]
    rho_text = harness.format_csv(("d", "rho", "theta_check_last"), rho_rows)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "g_table.csv").write_text(g_text)
        (out / "rho_table.csv").write_text(rho_text)
        print(out / "g_table.csv")
        print(out / "rho_table.csv")
    else:
        sys.stdout.write(g_text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="genprior", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="run an experiment spec and write CSV + manifest")
    r.add_argument("spec", nargs="?", help="key=value spec file")
    r.add_argument("overrides", nargs="*", help="key=value overrides (or the whole spec)")
    r.add_argument("--out", help="output directory")
    r.add_argument("--workers", type=int, default=None, help="worker processes")
    r.set_defaults(func=_cmd_run)

    c = sub.add_parser("certify", help="estimate a condition constant on one network")
    c.add_argument("--target", choices=("wdc", "rric", "angle", "count"), required=True)
    c.add_argument("--dims", type=_int_list, default=(5, 200), help="layer widths k,n1,...")
    c.add_argument("--network", help="load a saved network (path stem) instead of sampling")
    c.add_argument("--layer", type=int, default=0, help="layer index for wdc/angle/count")
    c.add_argument("--probes", type=int, default=500)
    c.add_argument("--seed", type=int, default=0)
    c.add_argument("--m", type=int, default=0, help="measurements for rric (default n_d)")
    c.add_argument("--ensemble", choices=("gaussian", "bernoulli", "identity"), default="gaussian")
    c.add_argument("--eps", type=float, default=None, help="report angle deviation against 4 sqrt(eps)")
    c.add_argument("--ell", type=int, default=2, help="subspace dimension for count")
    c.add_argument("--out", help="directory for report.json and probes.csv")
    c.set_defaults(func=_cmd_certify)

    v = sub.add_parser("recover", help="recover a latent code by subgradient descent")
    v.add_argument("--dims", type=_int_list, default=(8, 160, 800))
    v.add_argument("--m", type=int, default=200)
    v.add_argument("--ensemble", choices=("gaussian", "bernoulli", "identity"), default="gaussian")
    v.add_argument("--seed", type=int, default=0, help="instance and start-point seed")
    v.add_argument("--instance", help="load a saved instance directory instead of sampling")
    v.add_argument("--save-instance", help="write the instance to this directory")
    v.add_argument("--step-size", type=float, default=None)
    v.add_argument("--backtracking", action="store_true")
    v.add_argument("--max-iters", type=int, default=5000)
    v.add_argument("--tie-break-seed", type=int, default=0)
    v.add_argument("--restart-policy", choices=("negate_on_stall", "none"), default="negate_on_stall")
    v.add_argument("--out", help="directory for trajectory.csv and summary.json")
    v.set_defaults(func=_cmd_recover)

    t = sub.add_parser("landscape-table", help="tabulate g(theta) and rho_d")
    t.add_argument("--points", type=int, default=1025)
    t.add_argument("--max-depth", type=int, default=20)
    t.add_argument("--out", help="directory for g_table.csv and rho_table.csv")
    t.set_defaults(func=_cmd_landscape_table)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except InvalidSpec as exc:
        print(f"genprior: invalid spec: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (GenPriorError, OSError, ValueError) as exc:
        print(f"genprior: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
