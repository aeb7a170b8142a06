"""Command-line interface: synthesize, check, compare, and benchmark.

Exit codes: 0 all checks passed (or artifact produced), 1 a property check
failed (counterexample/report emitted), 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import multiprocessing as mp
import os
import sys
import time
from typing import Optional

from . import exchanges as exc
from . import failures as flr
from .epistemic import FormulaError, evaluate_formula, parse_formula
from .kbp import (
    BASELINES,
    DecisionTable,
    KbpError,
    TableDomainError,
    as_table,
    condition_report,
    kbp_by_name,
    render_action,
    synthesize,
)
from .model import InstanceParams, ParameterError, build_system
from .verify import (
    HypothesisError,
    VerifyError,
    check_suite,
    compare,
    decide_time_hypothesis,
    suite_by_name,
)

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_USAGE = 2

DEFAULT_BUDGET_SECONDS = 600.0


class UsageError(ValueError):
    pass


# ---------------------------------------------------------------------------
# Argument parsing


def _add_instance_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument(
        "--exchange",
        choices=exc.EXCHANGE_NAMES,
        help="information exchange (what agents observe and send)",
    )
    p.add_argument(
        "--failures",
        choices=flr.FAILURE_MODELS,
        default=flr.CRASH,
        help="failure model (default: crash)",
    )
    p.add_argument("--n", type=int, help="number of agents")
    p.add_argument("--t", type=int, help="failure budget")
    p.add_argument("--k", type=int, default=2, help="number of values (default 2)")
    p.add_argument(
        "--horizon",
        type=int,
        default=None,
        help="run length in rounds (default t+2)",
    )
    p.add_argument(
        "--impl",
        choices=("auto", "compiled", "python"),
        default="auto",
        help="layer-expansion kernel (default: compiled when built)",
    )


def _add_output_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out", help="write the report/artifact to this file")
    p.add_argument(
        "--format",
        choices=("text", "records", "csv"),
        default="text",
        help="output format (records = one JSON object per line)",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kbpforge",
        description=(
            "Synthesize and verify decision protocols for synchronous "
            "agreement under crash or sending-omission failures, from "
            "knowledge-based programs evaluated over exact finite models."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser(
        "synth",
        help="synthesize the decision table implementing a knowledge-based "
        "program (or materialize a named baseline rule)",
    )
    _add_instance_flags(p_synth)
    p_synth.add_argument(
        "--kbp",
        default="sba",
        help="knowledge-based program: sba, eba0 (alias eba)",
    )
    p_synth.add_argument(
        "--baseline",
        choices=sorted(BASELINES),
        help="materialize this concrete rule instead of synthesizing",
    )
    _add_output_flags(p_synth)

    p_check = sub.add_parser(
        "check",
        help="check a property suite, a decide-time hypothesis, or an "
        "epistemic formula",
    )
    _add_instance_flags(p_check)
    p_check.add_argument("--kbp", default="sba", help="program to synthesize when no --table is given")
    p_check.add_argument("--table", help="decision table file (from synth --out)")
    mode = p_check.add_mutually_exclusive_group(required=True)
    mode.add_argument(
        "--suite",
        help="agreement property suite: sba or eba",
    )
    mode.add_argument(
        "--hypothesis",
        help="decide-time predicate over observation fields and n/t/k/time, "
        "e.g. 'count <= 1 or time == t + 1'",
    )
    mode.add_argument(
        "--formula",
        help="epistemic formula, e.g. 'K[0] exists_vote(1)'",
    )
    p_check.add_argument(
        "--layer",
        type=int,
        default=None,
        help="restrict --formula to one time layer (default: all layers)",
    )
    _add_output_flags(p_check)

    p_cmp = sub.add_parser(
        "compare",
        help="order two decision tables by decision times over runs paired "
        "by a shared adversary schedule",
    )
    p_cmp.add_argument("--a", required=True, help="first table file")
    p_cmp.add_argument("--b", required=True, help="second table file")
    p_cmp.add_argument(
        "--expect",
        choices=("le", "strict_lt_somewhere", "gt_somewhere", "incomparable"),
        help="exit 1 unless the relation equals this",
    )
    p_cmp.add_argument(
        "--impl",
        choices=("auto", "compiled", "python"),
        default="auto",
    )
    _add_output_flags(p_cmp)

    p_bench = sub.add_parser(
        "bench",
        help="time system construction + verification and synthesis over a "
        "(n, t) grid; cells exceeding the budget are reported as TO",
    )
    p_bench.add_argument(
        "--exchange",
        choices=exc.EXCHANGE_NAMES,
        required=True,
    )
    p_bench.add_argument(
        "--failures", choices=flr.FAILURE_MODELS, default=flr.CRASH
    )
    p_bench.add_argument("--kbp", default="sba")
    p_bench.add_argument("--k", type=int, default=2)
    p_bench.add_argument(
        "--n-min", type=int, default=2, help="smallest agent count (default 2)"
    )
    p_bench.add_argument(
        "--n-max", type=int, default=4, help="largest agent count (default 4)"
    )
    p_bench.add_argument(
        "--t-max",
        type=int,
        default=None,
        help="cap on the failure budget (default: t ranges over 1..n)",
    )
    p_bench.add_argument(
        "--budget",
        "--timeout",
        type=float,
        default=DEFAULT_BUDGET_SECONDS,
        help="per-cell time budget in seconds; cells over budget are TO "
        f"(default {DEFAULT_BUDGET_SECONDS:.0f})",
    )
    p_bench.add_argument(
        "--workers",
        type=int,
        default=None,
        help="concurrent cells (default: KBPFORGE_WORKERS or 1)",
    )
    p_bench.add_argument(
        "--impl",
        choices=("auto", "compiled", "python"),
        default="auto",
    )
    _add_output_flags(p_bench)

    return parser


def _impl_of(args) -> Optional[str]:
    return None if args.impl == "auto" else args.impl


def _params_from(args) -> InstanceParams:
    if args.exchange is None or args.n is None or args.t is None:
        raise UsageError("--exchange, --n and --t are required")
    try:
        return InstanceParams(
            n=args.n,
            t=args.t,
            k=args.k,
            horizon=args.horizon,
            exchange=args.exchange,
            failure_model=args.failures,
        )
    except ParameterError as err:
        raise UsageError(str(err)) from None


def _emit(args, text: str) -> None:
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
        if not text.endswith("\n"):
            sys.stdout.write("\n")


def _csv_text(header: list[str], rows: list[list]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


# ---------------------------------------------------------------------------
# synth


def _table_text(args, table: DecisionTable) -> str:
    p = table.params
    if args.format == "text":
        return table.to_text()
    names = exc.obs_field_names(p.exchange, p.n, p.k)
    if args.format == "records":
        lines = [
            json.dumps(
                {
                    "record": "params",
                    "exchange": p.exchange,
                    "failures": p.failure_model,
                    "n": p.n,
                    "t": p.t,
                    "k": p.k,
                    "horizon": p.horizon,
                    "origin": table.origin,
                }
            )
        ]
        for (agent, m, obs) in sorted(table.entries):
            fields = dict(
                zip(names, exc.obs_field_values(p.exchange, obs, p.n, p.k))
            )
            lines.append(
                json.dumps(
                    {
                        "record": "entry",
                        "agent": agent,
                        "time": m,
                        "obs": fields,
                        "action": render_action(table.entries[(agent, m, obs)]),
                    }
                )
            )
        return "\n".join(lines) + "\n"
    rows = []
    for (agent, m, obs) in sorted(table.entries):
        values = exc.obs_field_values(p.exchange, obs, p.n, p.k)
        rows.append(
            [agent, m, *values, render_action(table.entries[(agent, m, obs)])]
        )
    return _csv_text(["agent", "time", *names, "action"], rows)


def cmd_synth(args) -> int:
    params = _params_from(args)
    started = time.perf_counter()
    if args.baseline:
        result = as_table(args.baseline, params, impl=_impl_of(args))
    else:
        result = synthesize(params, kbp_by_name(args.kbp), impl=_impl_of(args))
    elapsed = time.perf_counter() - started
    _emit(args, _table_text(args, result.table))
    report = condition_report(result.table)
    if report:
        sys.stderr.write(report + "\n")
    sys.stderr.write(
        f"timing: seconds={elapsed:.3f} states={result.system.total_states()} "
        f"peak_layer={result.system.peak_layer()}\n"
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# check


def _load_or_synthesize(args) -> DecisionTable:
    if args.table:
        with open(args.table) as fh:
            table = DecisionTable.from_text(fh.read())
        for flag, got, want in (
            ("--exchange", args.exchange, table.params.exchange),
            ("--n", args.n, table.params.n),
            ("--t", args.t, table.params.t),
        ):
            if got is not None and got != want:
                raise UsageError(
                    f"{flag}={got} conflicts with the table file ({want})"
                )
        return table
    params = _params_from(args)
    return synthesize(params, kbp_by_name(args.kbp), impl=_impl_of(args)).table


def cmd_check(args) -> int:
    table = _load_or_synthesize(args)
    params = table.params

    if args.hypothesis is not None:
        report = decide_time_hypothesis(table, args.hypothesis)
        if args.format == "records":
            lines = [
                json.dumps(
                    {
                        "record": "hypothesis",
                        "expr": report.expr,
                        "passed": report.passed,
                        "mismatches": len(report.mismatches),
                    }
                )
            ]
            for mm in report.mismatches:
                lines.append(
                    json.dumps(
                        {
                            "record": "mismatch",
                            "agent": mm.agent,
                            "time": mm.time,
                            "obs": list(mm.obs),
                            "fired": mm.fired,
                            "predicted": mm.predicted,
                        }
                    )
                )
            _emit(args, "\n".join(lines) + "\n")
        elif args.format == "csv":
            rows = [
                [mm.agent, mm.time, *mm.obs, mm.fired, mm.predicted]
                for mm in report.mismatches
            ]
            names = exc.obs_field_names(params.exchange, params.n, params.k)
            _emit(
                args,
                _csv_text(["agent", "time", *names, "fired", "predicted"], rows),
            )
        else:
            _emit(args, report.to_text(params) + "\n")
        return EXIT_OK if report.passed else EXIT_FAIL

    needs_actions = params.info.tracks_decisions
    system = build_system(
        params, table=table if needs_actions else None, impl=_impl_of(args)
    )

    if args.suite is not None:
        suite = suite_by_name(args.suite)
        report = check_suite(system, table, suite)
        if args.format == "records":
            lines = [json.dumps(r) for r in report.to_records()]
            _emit(args, "\n".join(lines) + "\n")
        elif args.format == "csv":
            rows = [
                [r["suite"], r["property"], r["passed"], r["detail"]]
                for r in report.to_records()
            ]
            _emit(args, _csv_text(["suite", "property", "passed", "detail"], rows))
        else:
            _emit(args, report.to_text() + "\n")
        return EXIT_OK if report.passed else EXIT_FAIL

    formula = parse_formula(args.formula)
    per_layer = evaluate_formula(system, formula, layer=args.layer)
    records = []
    all_hold = True
    for m in sorted(per_layer):
        vec = per_layer[m]
        holds = int(vec.sum())
        total = int(vec.size)
        all_hold = all_hold and holds == total
        records.append({"record": "layer", "layer": m, "holds": holds, "states": total})
    if args.format == "records":
        lines = [json.dumps(r) for r in records]
        lines.append(json.dumps({"record": "result", "valid": all_hold}))
        _emit(args, "\n".join(lines) + "\n")
    elif args.format == "csv":
        rows = [[r["layer"], r["holds"], r["states"]] for r in records]
        _emit(args, _csv_text(["layer", "holds", "states"], rows))
    else:
        lines = [
            f"layer {r['layer']}: holds at {r['holds']}/{r['states']} states"
            for r in records
        ]
        lines.append("valid everywhere" if all_hold else "NOT valid everywhere")
        _emit(args, "\n".join(lines) + "\n")
    return EXIT_OK if all_hold else EXIT_FAIL


# ---------------------------------------------------------------------------
# compare


def cmd_compare(args) -> int:
    with open(args.a) as fh:
        table_a = DecisionTable.from_text(fh.read())
    with open(args.b) as fh:
        table_b = DecisionTable.from_text(fh.read())
    result = compare(table_a, table_b, impl=_impl_of(args))
    if args.format == "records":
        recs = [json.dumps({"record": "order", "relation": result.relation})]
        for side, wit in (("A", result.a_first), ("B", result.b_first)):
            if wit is not None:
                recs.append(
                    json.dumps(
                        {
                            "record": "witness",
                            "earlier": side,
                            "agent": wit.agent,
                            "early_time": wit.early_time,
                            "late_time": wit.late_time,
                        }
                    )
                )
        _emit(args, "\n".join(recs) + "\n")
    elif args.format == "csv":
        _emit(args, _csv_text(["relation"], [[result.relation]]))
    else:
        _emit(args, result.to_text() + "\n")
    if args.expect is not None and result.relation != args.expect:
        sys.stderr.write(
            f"expected relation {args.expect}, got {result.relation}\n"
        )
        return EXIT_FAIL
    return EXIT_OK


# ---------------------------------------------------------------------------
# bench


def _bench_cell_worker(conn, cell: dict) -> None:
    try:
        params = InstanceParams(
            n=cell["n"],
            t=cell["t"],
            k=cell["k"],
            exchange=cell["exchange"],
            failure_model=cell["failures"],
        )
        kbp = kbp_by_name(cell["kbp"])
        started = time.perf_counter()
        result = synthesize(params, kbp, impl=cell["impl"])
        synth_s = time.perf_counter() - started
        started = time.perf_counter()
        suite = suite_by_name("eba" if kbp.kind == "eba0" else "sba")
        check_suite(result.system, result.table, suite)
        check_s = time.perf_counter() - started
        conn.send({"check": check_s, "synth": synth_s})
    except Exception as err:  # pragma: no cover - transported to parent
        conn.send({"error": f"{type(err).__name__}: {err}"})
    finally:
        conn.close()


class _CellRun:
    def __init__(self, cell: dict, budget: float):
        self.cell = cell
        ctx = mp.get_context("spawn" if sys.platform == "win32" else "fork")
        self.parent_conn, child_conn = ctx.Pipe(duplex=False)
        self.process = ctx.Process(
            target=_bench_cell_worker, args=(child_conn, cell)
        )
        self.deadline = time.monotonic() + budget
        self.process.start()
        child_conn.close()

    def poll(self) -> Optional[dict]:
        """None while running; a result dict once finished or timed out."""
        if self.parent_conn.poll(0):
            try:
                payload = self.parent_conn.recv()
            except EOFError:
                payload = {"error": "worker exited without a result"}
            self.process.join()
            return payload
        if time.monotonic() >= self.deadline:
            self.process.terminate()
            self.process.join()
            return {"timeout": True}
        if not self.process.is_alive():
            self.process.join()
            return {"error": "worker exited without a result"}
        return None


def _run_grid(cells: list[dict], budget: float, workers: int) -> list[dict]:
    results: dict[int, dict] = {}
    if budget <= 0:
        return [{"timeout": True} for _ in cells]
    pending = list(enumerate(cells))
    running: list[tuple[int, _CellRun]] = []
    while pending or running:
        while pending and len(running) < workers:
            idx, cell = pending.pop(0)
            running.append((idx, _CellRun(cell, budget)))
        time.sleep(0.02)
        still = []
        for idx, run in running:
            outcome = run.poll()
            if outcome is None:
                still.append((idx, run))
            else:
                results[idx] = outcome
        running = still
    return [results[i] for i in range(len(cells))]


def _fmt_cell(outcome: dict, phase: str) -> str:
    if outcome.get("timeout"):
        return "TO"
    if "error" in outcome:
        return "ERR"
    return f"{outcome[phase]:.3f}"


def cmd_bench(args) -> int:
    if args.n_min < 1 or args.n_max < args.n_min:
        raise UsageError("need 1 <= --n-min <= --n-max")
    workers = args.workers
    if workers is None:
        workers = int(os.environ.get("KBPFORGE_WORKERS", "1"))
    if workers < 1:
        raise UsageError("--workers must be >= 1")
    impl = _impl_of(args)
    cells = []
    for n in range(args.n_min, args.n_max + 1):
        t_top = n if args.t_max is None else min(args.t_max, n)
        for t in range(1, t_top + 1):
            cells.append(
                {
                    "n": n,
                    "t": t,
                    "k": args.k,
                    "exchange": args.exchange,
                    "failures": args.failures,
                    "kbp": args.kbp,
                    "impl": impl,
                }
            )
    outcomes = _run_grid(cells, args.budget, workers)

    header = ["n", "t", "check", "synth"]
    rows = [
        [c["n"], c["t"], _fmt_cell(o, "check"), _fmt_cell(o, "synth")]
        for c, o in zip(cells, outcomes)
    ]
    for o in outcomes:
        if "error" in o:
            sys.stderr.write(f"cell error: {o['error']}\n")
    if args.format == "records":
        lines = [
            json.dumps(
                {
                    "record": "cell",
                    "n": c["n"],
                    "t": c["t"],
                    "check": _fmt_cell(o, "check"),
                    "synth": _fmt_cell(o, "synth"),
                }
            )
            for c, o in zip(cells, outcomes)
        ]
        _emit(args, "\n".join(lines) + "\n")
    elif args.format == "csv":
        _emit(args, _csv_text(header, rows))
    else:
        widths = [max(len(str(r[i])) for r in [header] + rows) for i in range(4)]
        lines = ["  ".join(str(h).rjust(w) for h, w in zip(header, widths))]
        for r in rows:
            lines.append("  ".join(str(v).rjust(w) for v, w in zip(r, widths)))
        _emit(args, "\n".join(lines) + "\n")
    return EXIT_OK


# ---------------------------------------------------------------------------


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handler = {
        "synth": cmd_synth,
        "check": cmd_check,
        "compare": cmd_compare,
        "bench": cmd_bench,
    }[args.command]
    try:
        return handler(args)
    except (
        UsageError,
        ParameterError,
        KbpError,
        TableDomainError,
        VerifyError,
        FormulaError,
        HypothesisError,
        FileNotFoundError,
        ValueError,
    ) as err:
        sys.stderr.write(f"error: {err}\n")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
