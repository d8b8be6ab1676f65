"""Command-line front end.

Every subcommand writes its artifact into the output directory (``--out``,
defaulting to ``$GRONSTAB_OUT`` or the current directory) and prints the
artifact path.  Exit codes: 0 success, 1 domain error, 2 usage error.
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import report
from .assess import (ANALYTIC, NUMERICAL, NoMarginError, Study, certify, estimate_cct,
                     margin_index, sweep)
from .dynamics import DEFAULT_HORIZON, DEFAULT_STEP, NonFiniteStateError, write_trajectory_csv
from .envelope import EnvelopeInvalidError
from .gronwall import DEFAULT_EDGES
from .netmodel import (CaseFormatError, HeterogeneousDampingError, SingularNetworkError,
                       bundled_cases, load_case)
from .powerflow import PowerFlowError, solve_power_flow

OUT_ENV = "GRONSTAB_OUT"

DOMAIN_ERRORS = (CaseFormatError, SingularNetworkError, HeterogeneousDampingError, PowerFlowError,
                 EnvelopeInvalidError, NoMarginError, NonFiniteStateError, ValueError)


class UsageError(Exception):
    pass


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _positive(text: str) -> float:
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError("must be positive")
    return v


def _nonneg(text: str) -> float:
    v = float(text)
    if not v >= 0:
        raise argparse.ArgumentTypeError("must be non-negative")
    return v


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gronstab", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, fault=True):
        sp.add_argument("--case", required=True,
                        help=f"case file path or bundled name ({', '.join(bundled_cases())})")
        sp.add_argument("--out", default=None, help=f"output directory (default ${OUT_ENV} or .)")
        if fault:
            sp.add_argument("--fault-bus", type=int, required=True)
            sp.add_argument("--lambda", dest="lam", type=_nonneg, default=None,
                            help="uniform damping ratio D_i / M_i override")
            sp.add_argument("--step", type=_positive, default=DEFAULT_STEP)
            sp.add_argument("--horizon", type=_positive, default=DEFAULT_HORIZON)
            sp.add_argument("--edges", type=_float_list, default=list(DEFAULT_EDGES),
                            help="segment edges in g = D + Phi, comma separated")
            sp.add_argument("--zeta", type=_positive, default=math.pi,
                            help="instability threshold on the diameter (rad)")

    sp = sub.add_parser("pf", help="power flow (JSON)")
    common(sp, fault=False)

    for name, text in (("simulate", "fault-on / post-fault trajectory (CSV)"),
                       ("bound", "bound curve and numerical diameter (CSV) + envelope (JSON)"),
                       ("certify", "assessment for one clearing time (JSON)")):
        sp = sub.add_parser(name, help=text)
        common(sp)
        sp.add_argument("--tc", type=_nonneg, required=True, help="clearing time (s)")

    sp = sub.add_parser("cct", help="critical clearing time by bisection (JSON)")
    common(sp)
    sp.add_argument("--mode", choices=[ANALYTIC, NUMERICAL, "both"], default="both")
    sp.add_argument("--bracket", type=_float_list, default=[0.0, 2.0])
    sp.add_argument("--tol", type=_positive, default=0.005)

    sp = sub.add_parser("sweep", help="parameter sweep in the shape of a margin table (CSV)")
    common(sp)
    sp.add_argument("--param", required=True, help="'lambda' or 'branch:<from>-<to>:x'")
    sp.add_argument("--values", type=_float_list, required=True)
    sp.add_argument("--workers", type=int, default=1)
    return p


def _out_dir(args) -> Path:
    return Path(args.out or os.environ.get(OUT_ENV) or ".")


def _load(args):
    src = args.case
    path = Path(src)
    if not path.exists() and src not in bundled_cases():
        raise UsageError(f"case file not found: {src}")
    return load_case(src)


def _study(args, net) -> Study:
    return Study.prepare(net, args.fault_bus, lam=args.lam, horizon=args.horizon, h=args.step,
                         edges=tuple(args.edges), zeta=args.zeta)


def _emit(path: Path) -> None:
    print(path)


def cmd_pf(args) -> None:
    net = _load(args)
    pf = solve_power_flow(net)
    path = _out_dir(args) / "pf.json"
    report.write_json(path, pf.as_dict())
    _emit(path)


def cmd_simulate(args) -> None:
    st = _study(args, _load(args))
    traj = st.simulate(args.tc)
    path = _out_dir(args) / "trajectory.csv"
    write_trajectory_csv(path, traj)
    _emit(path)


def cmd_bound(args) -> None:
    st = _study(args, _load(args))
    a = certify(st, args.tc, numerical=True)
    out = _out_dir(args)
    s = a.series
    i_c = int(np.flatnonzero(s.t <= args.tc + 1e-12)[-1])
    t = s.t[i_c:]
    tau = t - args.tc
    bound = a.bound.d_value(tau) if a.bound is not None else np.full(tau.shape, np.nan)
    rows = np.column_stack([t, tau, s.d[i_c:], bound])
    report.write_csv(out / "bound.csv", ["t", "t_after_clearing", "D_numerical", "D_bound"], rows)
    report.write_json(out / "envelope.json", st.env.as_dict())
    _emit(out / "bound.csv")
    _emit(out / "envelope.json")


def cmd_certify(args) -> None:
    st = _study(args, _load(args))
    a = certify(st, args.tc)
    path = _out_dir(args) / "assessment.json"
    report.write_json(path, a.as_dict(st))
    _emit(path)


def cmd_cct(args) -> None:
    if len(args.bracket) != 2:
        raise UsageError("--bracket takes two values lo,hi")
    st = _study(args, _load(args))
    modes = [ANALYTIC, NUMERICAL] if args.mode == "both" else [args.mode]
    res = {m: estimate_cct(st, m, tuple(args.bracket), args.tol).as_dict() for m in modes}
    doc = {"inputs": {"fault_bus": args.fault_bus, "lambda": st.lam, "horizon": args.horizon,
                      "step": args.step, "edges": list(args.edges), "zeta": args.zeta},
           "mu": margin_index(st.env).mu if st.env is not None else None,
           "cct": res}
    path = _out_dir(args) / "cct.json"
    report.write_json(path, doc)
    _emit(path)


def cmd_sweep(args) -> None:
    net = _load(args)
    rows = sweep(net, args.fault_bus, args.param, args.values, lam=args.lam,
                 workers=max(1, args.workers), horizon=args.horizon, h=args.step,
                 edges=tuple(args.edges), zeta=args.zeta)
    path = _out_dir(args) / "sweep.csv"
    report.write_csv(path, ["value", "mu", "cct_analytic", "cct_numerical", "error"],
                     [r.as_row() for r in rows])
    _emit(path)


COMMANDS = {"pf": cmd_pf, "simulate": cmd_simulate, "bound": cmd_bound, "certify": cmd_certify,
            "cct": cmd_cct, "sweep": cmd_sweep}


def run(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"gronstab: error: {exc}", file=sys.stderr)
        return 2
    except DOMAIN_ERRORS as exc:
        print(f"gronstab: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
