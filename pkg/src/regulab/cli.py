"""Command line: ``regulab run``, ``regulab newton`` and ``regulab estimate``.

Exit codes: 0 on success, 1 when a task errored, 2 when the instance file
violates the schema. ``REGULAB_SEED`` overrides ``--seed``.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .geometry import ext_to_json
from .io import (
    SchemaError,
    _load,
    emit_convergence_table,
    newton_trace,
    parse_instance_file,
    run_batch,
    run_task,
)

log = logging.getLogger("regulab")


def _seed(arg: int) -> int:
    env = os.environ.get("REGULAB_SEED")
    return int(env) if env not in (None, "") else arg


def _floats(text: str) -> list[float]:
    return [float(t) for t in text.replace(";", ",").split(",") if t.strip()]


def cmd_run(args) -> int:
    with open(args.batch, encoding="utf-8") as fh:
        raw = _load(fh.read())

    def progress(row):
        log.info("%s %s: %s pass=%s %s", row["instance_id"], row["task"], row["status"],
                 row["pass"], row["error"])

    summary = run_batch(raw, args.parallel, args.out, _seed(args.seed), args.timing, progress)
    passed = sum(r["pass"] is True for r in summary.rows)
    print(f"{len(summary.rows)} instances, {passed} passed, {summary.failures} errored -> {args.out}")
    return summary.exit_code


def _pick(instances, iid):
    if iid is None:
        return instances
    chosen = [i for i in instances if i.id == iid]
    if not chosen:
        raise SchemaError(f"no instance with id '{iid}'")
    return chosen


def cmd_newton(args) -> int:
    instances = [i for i in _pick(parse_instance_file(args.instance), args.id) if i.task == "newton"]
    if not instances:
        raise SchemaError("file holds no newton instance")
    inst = instances[0]
    x0 = _floats(args.x0) if args.x0 else None
    trace = newton_trace(inst, x0, args.tol)
    if args.table:
        emit_convergence_table(trace, args.table)
    for k, (x, r) in enumerate(zip(trace.iterates, trace.residuals)):
        log.info("iter %d x=%s residual=%.3e", k, x.tolist(), r)
    summary = {
        "id": inst.id,
        "iterations": len(trace.iterates) - 1,
        "converged": trace.converged,
        "x": trace.x.tolist(),
        "residual": trace.residuals[-1],
        "failure": trace.failure,
        "rate": None if trace.rate is None else trace.rate.to_dict(),
        "rg_at_ref": trace.regularity,
    }
    print(json.dumps(ext_to_json(summary), indent=2, sort_keys=True))
    return 0 if trace.failure is None else 1


def cmd_estimate(args) -> int:
    code = 0
    for inst in _pick(parse_instance_file(args.instance), args.id):
        log.info("running %s (%s)", inst.id, inst.task)
        try:
            out, passed = run_task(inst, _seed(args.seed))
        except Exception as e:  # noqa: BLE001
            print(json.dumps({"id": inst.id, "task": inst.task, "error": f"{type(e).__name__}: {e}"}))
            code = 1
            continue
        row = {"id": inst.id, "task": inst.task, "pass": passed, **out}
        print(json.dumps(ext_to_json(row), sort_keys=True))
    return code


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="regulab", description=__doc__.splitlines()[0])
    p.add_argument("--verbose", "-v", action="store_true", help="stream per-instance progress")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a batch file and write report.csv / report.json")
    r.add_argument("batch")
    r.add_argument("--out", required=True)
    r.add_argument("--parallel", type=int, default=1)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("--timing", action="store_true", help="add wall_time_ms (reports stop being reproducible)")
    r.set_defaults(func=cmd_run)

    n = sub.add_parser("newton", help="solve one generalized equation instance")
    n.add_argument("instance")
    n.add_argument("--id")
    n.add_argument("--x0", help="comma-separated start point (defaults to the instance's)")
    n.add_argument("--tol", type=float)
    n.add_argument("--table", help="write the convergence table to this CSV path")
    n.set_defaults(func=cmd_newton)

    e = sub.add_parser("estimate", help="run the instances of a file and print one JSON line each")
    e.add_argument("instance")
    e.add_argument("--id")
    e.add_argument("--seed", type=int, default=0)
    e.set_defaults(func=cmd_estimate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except SchemaError as e:
        print(f"schema error: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
