"""Command line interface.

Exit codes: 0 solution found, 1 no solution, 2 budget exhausted,
3 bad input, 4 coordinator failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
import tempfile
from pathlib import Path

from .coordinator import CoordinatorConfig, CoordinatorError, dist_solve, recover, run_worker
from .dominion import format_constraint, load_model, serialize_model
from .engine import Branching, Budget, BudgetExhausted, Exhausted, Mode, SolutionFound, solve_streaming
from .model import Assignment, Model, ModelError
from .nogoods import SplitUnavailable, split_model

EXIT_SAT, EXIT_UNSAT, EXIT_BUDGET, EXIT_INPUT, EXIT_COORDINATOR = 0, 1, 2, 3, 4


def format_solution(a: Assignment) -> str:
    return "; ".join(f"{name} = {values}" for name, values in a.by_array().items())


def _status_line(status: str, stats, **extra) -> str:
    fields = {"nodes": stats.nodes, "propagations": stats.propagations, "solutions": stats.solutions_emitted}
    fields.update(extra)
    return f"status: {status} " + " ".join(f"{k}={v}" for k, v in fields.items())


def _load(path: str) -> Model:
    try:
        return load_model(path)
    except OSError as exc:
        raise _InputError(f"{path}: {exc.strerror or exc}") from exc
    except ModelError as exc:
        raise _InputError(f"{path}: {exc}") from exc


class _InputError(Exception):
    pass


def _budget(args) -> Budget:
    return Budget(getattr(args, "budget_nodes", None), getattr(args, "budget_millis", None))


def _write_splits(model: Model, stop: BudgetExhausted, n: int, out: Path, branching: Branching, show: bool):
    out.mkdir(parents=True, exist_ok=True)
    try:
        split = split_model(model, stop, n, branching)
    except SplitUnavailable as exc:
        path = out / "base.dominion"
        path.write_text(serialize_model(exc.base), encoding="utf-8")
        if show:
            for c in exc.base.constraints[len(model.constraints):]:
                print(format_constraint(c, model))
        print("note: nothing left to partition, wrote the resumed model only")
        print(path)
        return
    if show:
        for c in split.nogood_constraints:
            print(format_constraint(c, model))
        for c in split.partition_constraints:
            if c is not None:
                print(format_constraint(c, model))
    base = out / "base.dominion"
    base.write_text(serialize_model(split.resumed_base), encoding="utf-8")
    print(base)
    if len(split.parts) > 1:
        for i, part in enumerate(split.parts, 1):
            path = out / f"part_{i}.dominion"
            path.write_text(serialize_model(part), encoding="utf-8")
            print(path)


def cmd_solve(args) -> int:
    model = _load(args.model)
    if args.split_factor < 1:
        raise _InputError("--split-factor must be at least 1")
    outcome = solve_streaming(
        model,
        lambda a: print(format_solution(a), flush=True),
        _budget(args),
        Mode(args.mode),
        Branching(args.branching),
    )
    stats = outcome.stats
    if isinstance(outcome, SolutionFound):
        print(_status_line("sat", stats))
        return EXIT_SAT
    if isinstance(outcome, Exhausted):
        print(_status_line("sat" if outcome.solutions else "unsat", stats))
        return EXIT_SAT if outcome.solutions else EXIT_UNSAT
    if isinstance(outcome, BudgetExhausted):
        print(_status_line("budget-exhausted", stats, frontier=outcome.frontier))
        if args.emit_splits:
            _write_splits(model, outcome, args.split_factor, Path(args.emit_splits), Branching(args.branching), show=False)
        return EXIT_BUDGET
    print(f"error: solution output failed: {outcome.error}", file=sys.stderr)
    return EXIT_COORDINATOR


def cmd_split(args) -> int:
    model = _load(args.model)
    if args.split_factor < 1:
        raise _InputError("--split-factor must be at least 1")
    branching = Branching(args.branching)
    outcome = solve_streaming(
        model,
        lambda a: print(format_solution(a), flush=True),
        Budget(max_nodes=args.at_nodes),
        Mode(args.mode),
        branching,
    )
    if isinstance(outcome, BudgetExhausted):
        print(_status_line("budget-exhausted", outcome.stats, frontier=outcome.frontier))
        _write_splits(model, outcome, args.split_factor, Path(args.out), branching, show=True)
        return EXIT_BUDGET
    if isinstance(outcome, SolutionFound) or (isinstance(outcome, Exhausted) and outcome.solutions):
        print(_status_line("sat", outcome.stats))
        return EXIT_SAT
    print(_status_line("exhausted", outcome.stats))
    return EXIT_UNSAT


def cmd_dist_solve(args) -> int:
    if args.resume:
        if not args.spool:
            raise _InputError("--resume needs --spool")
        result = recover(Path(args.spool), workers=args.workers)
    else:
        if not args.model:
            raise _InputError("a model file is required unless --resume is given")
        model = _load(args.model)
        spool = args.spool or tempfile.mkdtemp(prefix="domsplit-spool-")
        if not args.spool:
            print(f"spool: {spool}", file=sys.stderr)
        try:
            cfg = CoordinatorConfig(
                spool_dir=Path(spool),
                split_factor=args.split_factor,
                workers=args.workers or 1,
                initial_budget=Budget(args.initial_budget_nodes, args.initial_budget_millis),
                budget_growth=args.budget_growth,
                max_budget=Budget(args.max_budget_nodes) if args.max_budget_nodes else None,
                mode=Mode(args.mode),
                branching=Branching(args.branching),
                isolation="inline" if args.inline else "process",
                worker_delay_ms=args.worker_delay_ms,
            )
        except ValueError as exc:
            raise _InputError(str(exc)) from exc
        result = dist_solve(model, cfg)
    for a in result.solutions:
        print(format_solution(a))
    stats = " ".join(f"{k}={v}" for k, v in result.stats.items())
    print(f"status: {result.status} {stats}")
    return EXIT_SAT if result.satisfiable else EXIT_UNSAT


def cmd_oracle(args) -> int:
    from .oracle import OracleTooLarge, enumerate_all

    model = _load(args.model)
    try:
        solutions = enumerate_all(model)
    except OracleTooLarge as exc:
        raise _InputError(str(exc)) from exc
    for a in solutions:
        print(format_solution(a))
    print(f"count: {len(solutions)}")
    return EXIT_SAT if solutions else EXIT_UNSAT


def cmd_worker(args) -> int:
    run_worker(
        Path(args.model),
        Path(args.outbox),
        _budget(args),
        Mode(args.mode),
        Branching(args.branching),
        args.split_factor,
        args.delay_ms,
    )
    return EXIT_SAT


def _search_flags(p: argparse.ArgumentParser):
    p.add_argument("--mode", choices=[m.value for m in Mode], default="first")
    p.add_argument("--branching", choices=[b.value for b in Branching], default="nway")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="domsplit", description="Solve and split Dominion constraint models.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", metavar="{solve,split,dist-solve}")
    sub.required = True

    p = sub.add_parser("solve", help="solve a model, optionally writing split models on budget exhaustion")
    p.add_argument("model")
    budget = p.add_mutually_exclusive_group()
    budget.add_argument("--budget-nodes", type=int)
    budget.add_argument("--budget-millis", type=int)
    _search_flags(p)
    p.add_argument("--emit-splits", metavar="DIR")
    p.add_argument("--split-factor", type=int, default=2)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("split", help="stop after N search nodes and write resumed and split models")
    p.add_argument("model")
    p.add_argument("--at-nodes", type=int, required=True)
    p.add_argument("--split-factor", type=int, default=2)
    p.add_argument("--out", required=True)
    _search_flags(p)
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("dist-solve", help="solve through a spool of split models on worker processes")
    p.add_argument("model", nargs="?")
    p.add_argument("--workers", type=int)
    p.add_argument("--split-factor", type=int, default=2)
    p.add_argument("--initial-budget-nodes", type=int)
    p.add_argument("--initial-budget-millis", type=int)
    p.add_argument("--max-budget-nodes", type=int)
    p.add_argument("--budget-growth", type=float, default=2.0)
    p.add_argument("--spool")
    p.add_argument("--resume", action="store_true")
    _search_flags(p)
    p.add_argument("--inline", action="store_true", help=argparse.SUPPRESS)
    p.add_argument("--worker-delay-ms", type=int, default=0, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_dist_solve)

    p = sub.add_parser("oracle")
    p.add_argument("model")
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("worker")
    p.add_argument("model")
    p.add_argument("outbox")
    p.add_argument("--budget-nodes", type=int)
    p.add_argument("--budget-millis", type=int)
    p.add_argument("--split-factor", type=int, default=2)
    p.add_argument("--delay-ms", type=int, default=0)
    _search_flags(p)
    p.set_defaults(func=cmd_worker)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    if args.command == "dist-solve" and args.initial_budget_nodes is None and args.initial_budget_millis is None:
        args.initial_budget_nodes = 100
    try:
        return args.func(args)
    except _InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except CoordinatorError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_COORDINATOR


if __name__ == "__main__":
    sys.exit(main())
