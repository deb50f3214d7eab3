"""Command-line harness for the tableau inspector and the heat-equation
experiments (boundary-condition contrast, convergence sweeps, and the
preconditioner stage-count bench).  Each experiment writes CSV files whose
columns match the plotted data series.

Exit codes: 0 success, 2 configuration error, 3 solver failure.
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from . import problems, tableaux
from .bcs import BcMethod
from .precond import PreconditionerKind
from .sparsela import FactorizationError, KrylovSettings, NonConvergenceError, Splitting
from .stepper import (
    NonlinearDivergenceError,
    StageFormulation,
    StepFailure,
    TimeStepper,
    advance,
)


class ConfigError(ValueError):
    pass


_FORMULATIONS = {
    ("deriv", "ai"): StageFormulation.STAGE_DERIVATIVE_AI,
    ("deriv", "ia"): StageFormulation.STAGE_DERIVATIVE_IA,
    ("value", "ai"): StageFormulation.STAGE_VALUE,
    ("value", "ia"): StageFormulation.STAGE_VALUE,
    ("dirk", "ai"): StageFormulation.DIRK,
    ("dirk", "ia"): StageFormulation.DIRK,
}


def _formulation(args) -> StageFormulation:
    return _FORMULATIONS[(args.stage_type, args.splitting)]


def _pc_kind(name):
    if name == "none":
        return None
    try:
        return PreconditionerKind(name)
    except ValueError as exc:
        raise ConfigError(f"unknown preconditioner {name!r}") from exc


def _tableau(spec):
    try:
        return tableaux.from_spec(spec)
    except (tableaux.UnsupportedStageCountError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def _krylov(args) -> KrylovSettings:
    return KrylovSettings(rtol=args.rtol)


def _write_csv(path, header, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(",".join("" if v is None else str(v) for v in row) + "\n")
    print(f"wrote {path}")


# ---------------------------------------------------------------------------
# subcommands


def cmd_tableau(args) -> int:
    tab = _tableau(args.tableau)
    print(f"{tab.name}: s={tab.s}, formal order {tab.formal_order}, "
          f"stage order {tab.stage_order}"
          + (f" (weak stage order {tab.weak_stage_order})" if tab.weak_stage_order else ""))
    print(tableaux.format_butcher(tab))
    print(f"stiffly accurate : {tab.stiffly_accurate}")
    print(f"lower triangular : {tab.lower_triangular}")
    print(f"invertible       : {tab.invertible}")
    b_res, stage_res = tableaux.order_condition_residuals(
        tab, tab.formal_order, max(tab.stage_order, 1)
    )
    for k, r in enumerate(b_res, start=1):
        print(f"B({k}) residual   : {r:.3e}")
    for k in range(stage_res.shape[0]):
        print(f"C({k+1}) residual   : {stage_res[k].max():.3e}")
    rs = tableaux.row_sum_residuals(tab)
    note = "  (advisory: published digits)" if tab.name == "wsodirk433" else ""
    print(f"row-sum defect   : {rs.max():.3e}{note}")
    return 0


def _norm_series(problem, tab, bc_method, dt, t_final, krylov, pc_kind, formulation):
    stepper = TimeStepper(
        problem, tab, dt,
        formulation=formulation,
        bc_method=bc_method,
        krylov=krylov,
        pc_kind=pc_kind,
    )
    grid = problem.grid
    rows = [(0.0, problems.fe_l2_norm(grid, stepper.u))]
    nsteps = round(t_final / dt)
    for _ in range(nsteps):
        u, _ = stepper.step(problem)
        rows.append((stepper.t, problems.fe_l2_norm(grid, u)))
    return rows


def cmd_bc_compare(args) -> int:
    tab = _tableau(args.tableau)
    problem = problems.incompatible_heat_1d(args.nx)
    krylov = _krylov(args)
    outdir = Path(args.out)
    formulation = _formulation(args)
    for method, fname in ((BcMethod.DAE, "daenorm.csv"), (BcMethod.ODE, "odenorm.csv")):
        rows = _norm_series(
            problem, tab, method, args.dt, args.tfinal, krylov,
            _pc_kind(args.pc), formulation,
        )
        _write_csv(outdir / fname, "t,nrmu", [(f"{t:.17g}", f"{v:.17g}") for t, v in rows])
    return 0


def cmd_converge(args) -> int:
    tab = _tableau(args.tableau)
    krylov = _krylov(args)
    pc = _pc_kind(args.pc)
    formulation = _formulation(args)
    if args.mode == "spatial":
        mms = problems.heat_mms_2d()
        rows = []
        for n in args.n_list:
            try:
                grid = problems.StructuredGrid(2, n)
                problem = problems.mms_heat_problem(grid, mms)
                stepper = TimeStepper(
                    problem, tab, args.cfl / n,
                    formulation=formulation, krylov=krylov, pc_kind=pc,
                )
                u, _ = advance(stepper, problem, args.tfinal)
                l2 = problems.l2_error(grid, u, mms.u, args.tfinal)
                h1 = problems.h1_error(grid, u, mms.u, mms.grad, args.tfinal)
                rows.append((n, f"{l2:.17g}", f"{h1:.17g}"))
            except (NonConvergenceError, StepFailure) as exc:
                print(f"N={n} failed: {exc}", file=sys.stderr)
                rows.append((n, None, None))
        _write_csv(args.out, "N,L2err,H1err", rows)
        return 0
    # temporal sweep on a fixed problem
    ode = {
        "dahlquist": problems.dahlquist,
        "prothero-robinson": problems.prothero_robinson,
    }
    rows = []
    errs = []
    for dt in args.dt_list:
        try:
            if args.problem in ode:
                case = ode[args.problem]()
                stepper = TimeStepper(
                    case.problem, tab, dt, formulation=formulation,
                    krylov=KrylovSettings(rtol=1e-13, atol=1e-14), pc_kind=None,
                )
                u, _ = advance(stepper, case.problem, args.tfinal)
                err = abs(u[0] - case.exact(args.tfinal))
            elif args.problem == "heat1d":
                mms = problems.heat_mms_1d()
                grid = problems.StructuredGrid(1, args.nx)
                problem = problems.mms_heat_problem(grid, mms)
                stepper = TimeStepper(
                    problem, tab, dt, formulation=formulation,
                    krylov=krylov, pc_kind=pc,
                )
                u, _ = advance(stepper, problem, args.tfinal)
                err = problems.l2_error(grid, u, mms.u, args.tfinal)
            else:
                raise ConfigError(f"unknown temporal problem {args.problem!r}")
            errs.append(err)
            order = (
                f"{np.log2(errs[-2] / err):.5g}"
                if len(errs) > 1 and err > 0 and errs[-2] > 0
                else None
            )
            rows.append((f"{dt:.17g}", f"{err:.17g}", order))
        except (NonConvergenceError, StepFailure) as exc:
            print(f"dt={dt} failed: {exc}", file=sys.stderr)
            errs.append(np.nan)
            rows.append((f"{dt:.17g}", None, None))
    _write_csv(args.out, "dt,err,order", rows)
    return 0


def run_precond_bench(nx, dt, nsteps, pc_kind, formulation, rtol=1e-8, stages=(1, 2, 3, 4)):
    """Mean FGMRES iterations per linear solve for RadauIIA(s), s in stages.

    Returns rows (s, stepping seconds, mean iterations, setup seconds); a
    non-convergent configuration records -1 iterations.
    """
    mms = problems.heat_mms_2d()
    grid = problems.StructuredGrid(2, nx)
    problem = problems.mms_heat_problem(grid, mms)
    krylov = KrylovSettings(rtol=rtol)
    split = (
        Splitting.IA
        if formulation is StageFormulation.STAGE_DERIVATIVE_IA
        else Splitting.AI
    )
    rows = []
    for s in stages:
        tab = tableaux.radau_iia(s)
        t_setup = time.perf_counter()
        stepper = TimeStepper(
            problem, tab, dt, formulation=formulation,
            krylov=krylov, pc_kind=pc_kind,
        )
        # factorize the preconditioner blocks now so setup cost stays out of
        # the stepping-loop timing
        stepper._preconditioner(split, problem)
        setup = time.perf_counter() - t_setup
        t0 = time.perf_counter()
        try:
            total_its = 0
            for _ in range(nsteps):
                _, rep = stepper.step(problem)
                total_its += rep.krylov_iters
            elapsed = time.perf_counter() - t0
            rows.append((s, elapsed, total_its / nsteps, setup))
        except (NonConvergenceError, StepFailure):
            rows.append((s, time.perf_counter() - t0, -1.0, setup))
    return rows


def run_dirk_bench(nx, dt, nsteps, rtol=1e-8):
    """DIRK comparison rows: iterations averaged over stages and steps."""
    mms = problems.heat_mms_2d()
    grid = problems.StructuredGrid(2, nx)
    problem = problems.mms_heat_problem(grid, mms)
    krylov = KrylovSettings(rtol=rtol)
    rows = []
    for tab in (tableaux.radau_iia(1), tableaux.alexander_dirk(), tableaux.wsodirk433()):
        t_setup = time.perf_counter()
        stepper = TimeStepper(
            problem, tab, dt, formulation=StageFormulation.DIRK, krylov=krylov
        )
        for i in range(tab.s):
            stepper._dirk_factor(tab.A[i, i], problem)
        setup = time.perf_counter() - t_setup
        t0 = time.perf_counter()
        try:
            total_its = 0
            for _ in range(nsteps):
                _, rep = stepper.step(problem)
                total_its += rep.krylov_iters
            elapsed = time.perf_counter() - t0
            rows.append((tab.s, elapsed, total_its / (nsteps * tab.s), setup))
        except (NonConvergenceError, StepFailure):
            rows.append((tab.s, time.perf_counter() - t0, -1.0, setup))
    return rows


def cmd_precond_bench(args) -> int:
    dt = args.dt if args.dt is not None else 1.0 / args.nx
    if args.stage_type == "dirk":
        rows = run_dirk_bench(args.nx, dt, args.steps, rtol=args.rtol)
    else:
        pc = _pc_kind(args.pc)
        if pc is None:
            raise ConfigError("precond-bench needs a preconditioner kind")
        rows = run_precond_bench(
            args.nx, dt, args.steps, pc, _formulation(args), rtol=args.rtol
        )
    for s, elapsed, its, setup in rows:
        print(f"s={s}: setup {setup:.3f}s, stepping {elapsed:.3f}s, mean its {its:.3f}")
    _write_csv(
        args.out,
        "ns,time,Its",
        [(s, f"{elapsed:.6f}", f"{its:.6g}") for s, elapsed, its, _ in rows],
    )
    return 0


# ---------------------------------------------------------------------------
# parser


def _common_flags(p, tableau_default):
    p.add_argument("--tableau", default=tableau_default, help="FAMILY[:S], e.g. radau-iia:2")
    p.add_argument("--stage-type", choices=["deriv", "value", "dirk"], default="deriv")
    p.add_argument("--splitting", choices=["ai", "ia"], default="ai")
    p.add_argument("--bc-method", choices=["dae", "ode"], default="dae")
    p.add_argument("--pc", default="rana-ld",
                   choices=["jacobi", "gs-lower", "gs-upper", "rana-ld", "rana-du", "none"])
    p.add_argument("--rtol", type=float, default=1e-8)
    p.add_argument("--out", default="out.csv", help="output CSV path (bc-compare: directory)")


def build_parser():
    ap = argparse.ArgumentParser(prog="implicitrk", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("tableau", help="print and validate a Butcher tableau")
    p.add_argument("--tableau", required=True)
    p.set_defaults(fn=cmd_tableau)

    p = sub.add_parser("bc-compare", help="DAE vs ODE boundary enforcement norms")
    _common_flags(p, "lobatto-iiic:3")
    p.add_argument("--nx", type=int, default=10)
    p.add_argument("--dt", type=float, default=0.05)
    p.add_argument("--tfinal", type=float, default=0.5)
    p.set_defaults(fn=cmd_bc_compare, out="bc-compare")

    p = sub.add_parser("converge", help="spatial or temporal convergence sweep")
    _common_flags(p, "radau-iia:2")
    p.add_argument("--mode", choices=["spatial", "temporal"], default="spatial")
    p.add_argument("--cfl", type=float, default=4.0, help="spatial mode: dt = cfl/N")
    p.add_argument("--tfinal", type=float, default=1.0)
    p.add_argument("--nx", type=int, default=32, help="temporal heat1d mesh")
    p.add_argument("--n-list", type=int, nargs="+", default=[8, 16, 32, 64])
    p.add_argument("--dt-list", type=float, nargs="+", default=[0.2, 0.1, 0.05, 0.025])
    p.add_argument("--problem", default="dahlquist",
                   choices=["dahlquist", "prothero-robinson", "heat1d"])
    p.set_defaults(fn=cmd_converge)

    p = sub.add_parser("precond-bench", help="FGMRES iterations vs stage count")
    _common_flags(p, "radau-iia:2")
    p.set_defaults(splitting="ia")
    p.add_argument("--nx", type=int, default=64)
    p.add_argument("--dt", type=float, default=None, help="defaults to 1/nx")
    p.add_argument("--steps", type=int, default=16)
    p.set_defaults(fn=cmd_precond_bench)

    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (tableaux.UnsupportedStageCountError,) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (NonConvergenceError, NonlinearDivergenceError, StepFailure, FactorizationError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
