"""Instance files, task dispatch and report writers.

An instance file is a JSON object ``{"schema": 1, "instances": [...]}``.
Each instance names a mapping, an optional perturbation, a base point, an
order ``q``, estimator settings, a task and task parameters. Parsing is
strict: unknown fields are rejected with the offending field and instance
id in the message.
"""
from __future__ import annotations

import csv
import json
import math
import os
import time
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np

from .conditions import (
    CoderivativeConditionQuery,
    as_polyhedral,
    check_coderivative_sufficiency,
    check_slope_sufficiency,
)
from .functions import Function, function_from_dict
from .geometry import ext_from_json, ext_to_json
from .mappings import (
    LinearMap,
    NormalConeOfBox,
    PolyhedralGraph,
    SampledGraph,
    SetValuedMap,
    Smooth,
    SumWithFunction,
    ZeroMap,
    sum_with_function,
)
from .moduli import ModulusQuery, check_inverse_duality, estimate_lip_q, estimate_rg_q
from .newton import GeneralizedEquation, NewtonConfig, NewtonTrace, josephy_newton
from .perturbation import PerturbationInstance, verify_lyusternik_graves

SCHEMA_VERSION = 1
TASKS = ("estimate-rg", "estimate-lip", "verify-lg", "check-slope", "check-coderivative",
         "newton", "duality")
INSTANCE_FIELDS = {"id", "task", "mapping", "perturbation", "base_point", "q", "estimator", "params"}
REQUIRED_FIELDS = {"id", "task", "mapping", "base_point", "q"}
ESTIMATOR_FIELDS = {"delta", "mu", "residual_cap", "resolution", "refinement_levels"}
ESTIMATOR_DEFAULTS = {"delta": 0.5, "mu": None, "residual_cap": None, "resolution": 21,
                      "refinement_levels": 3}
TASK_PARAMS = {
    "estimate-rg": ({"expected", "tolerance"}, set()),
    "estimate-lip": ({"expected", "tolerance"}, set()),
    "duality": (set(), set()),
    "verify-lg": ({"tol"}, set()),
    "check-slope": ({"tau", "gamma", "expect"}, {"tau"}),
    "check-coderivative": ({"tau", "eta", "alpha", "n_x", "n_y", "n_zstar", "n_ystar", "expect"},
                           {"tau"}),
    "newton": ({"x0", "tol", "max_iter"}, {"x0"}),
}
LEAD_COLUMNS = ["instance_id", "task", "status", "pass", "error"]


class SchemaError(ValueError):
    """Malformed instance file or instance."""


# -- mappings -----------------------------------------------------------------

def _vec(v) -> list:
    return [ext_to_json(float(t)) for t in np.atleast_1d(v)]


def _mat(M) -> list:
    return [_vec(row) for row in np.atleast_2d(M)]


def mapping_to_dict(F: SetValuedMap) -> dict:
    if isinstance(F, ZeroMap):
        return {"kind": "zero", "n": F.n, "m": F.m}
    if isinstance(F, LinearMap):
        return {"kind": "linear", "A": _mat(F.A)}
    if isinstance(F, PolyhedralGraph):
        return {"kind": "polyhedral_graph", "A": _mat(F.A), "B": _mat(F.B), "c": _vec(F.c)}
    if isinstance(F, NormalConeOfBox):
        return {"kind": "normal_cone_box", "lower": _vec(F.lower), "upper": _vec(F.upper)}
    if isinstance(F, Smooth):
        return {"kind": "smooth", "f": F.f.to_dict()}
    if isinstance(F, SampledGraph):
        return {"kind": "sampled_graph", "X": _mat(F.X), "Y": _mat(F.Y)}
    if isinstance(F, SumWithFunction):
        return {"kind": "sum", "base": mapping_to_dict(F.base), "f": F.f.to_dict()}
    raise TypeError(f"cannot serialize {type(F).__name__}")


def _fields(d: dict, allowed: set, required: set, where: str):
    if not isinstance(d, dict):
        raise SchemaError(f"{where}: expected an object")
    unknown = sorted(set(d) - allowed)
    if unknown:
        raise SchemaError(f"{where}: unknown field '{unknown[0]}'")
    missing = sorted(required - set(d))
    if missing:
        raise SchemaError(f"{where}: missing field '{missing[0]}'")


def _ext_array(v, where: str) -> np.ndarray:
    try:
        return np.array([ext_from_json(t) for t in v], dtype=float)
    except (TypeError, ValueError) as e:
        raise SchemaError(f"{where}: {e}") from e


def mapping_from_dict(d: dict, where: str = "mapping") -> SetValuedMap:
    if not isinstance(d, dict) or "kind" not in d:
        raise SchemaError(f"{where}: missing field 'kind'")
    kind = d["kind"]
    shapes = {
        "zero": {"n", "m"},
        "linear": {"A"},
        "polyhedral_graph": {"A", "B", "c"},
        "normal_cone_box": {"lower", "upper"},
        "smooth": {"f"},
        "sampled_graph": {"X", "Y"},
        "sum": {"base", "f"},
    }
    if kind not in shapes:
        raise SchemaError(f"{where}: unknown mapping kind '{kind}'")
    _fields(d, shapes[kind] | {"kind"}, shapes[kind] | {"kind"}, where)
    try:
        if kind == "zero":
            return ZeroMap(int(d["n"]), int(d["m"]))
        if kind == "linear":
            return LinearMap(np.array(d["A"], dtype=float))
        if kind == "polyhedral_graph":
            return PolyhedralGraph(np.array(d["A"], dtype=float), np.array(d["B"], dtype=float),
                                   np.array(d["c"], dtype=float))
        if kind == "normal_cone_box":
            return NormalConeOfBox(_ext_array(d["lower"], where), _ext_array(d["upper"], where))
        if kind == "smooth":
            return Smooth(function_from_dict(d["f"]))
        if kind == "sampled_graph":
            return SampledGraph(np.array(d["X"], dtype=float), np.array(d["Y"], dtype=float))
        return sum_with_function(mapping_from_dict(d["base"], where + ".base"),
                                 function_from_dict(d["f"]))
    except SchemaError:
        raise
    except (TypeError, ValueError, KeyError) as e:
        raise SchemaError(f"{where}: {e}") from e


# -- instances ----------------------------------------------------------------

@dataclass
class ExperimentInstance:
    id: str
    task: str
    mapping: SetValuedMap
    xbar: np.ndarray
    ybar: np.ndarray
    q: float
    perturbation: Optional[Function] = None
    estimator: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = {
            "id": self.id,
            "task": self.task,
            "mapping": mapping_to_dict(self.mapping),
            "base_point": {"xbar": _vec(self.xbar), "ybar": _vec(self.ybar)},
            "q": self.q,
            "estimator": dict(self.estimator),
            "params": dict(self.params),
        }
        if self.perturbation is not None:
            d["perturbation"] = self.perturbation.to_dict()
        return d

    def query(self) -> ModulusQuery:
        e = self.estimator
        return ModulusQuery(self.q, self.xbar, self.ybar, e["delta"], e["mu"], e["residual_cap"],
                            e["resolution"], e["refinement_levels"])

    def effective_map(self) -> SetValuedMap:
        if self.perturbation is None:
            return self.mapping
        return sum_with_function(self.mapping, self.perturbation)


def instance_from_dict(d: dict, index: int = 0) -> ExperimentInstance:
    iid = d.get("id", f"#{index}") if isinstance(d, dict) else f"#{index}"
    where = f"instance '{iid}'"
    _fields(d, INSTANCE_FIELDS, REQUIRED_FIELDS, where)
    if not isinstance(d["id"], str) or not d["id"]:
        raise SchemaError(f"{where}: field 'id' must be a non-empty string")
    if d["task"] not in TASKS:
        raise SchemaError(f"{where}: field 'task' must be one of {list(TASKS)}, got {d['task']!r}")
    F = mapping_from_dict(d["mapping"], f"{where} field 'mapping'")
    f = None
    if "perturbation" in d:
        try:
            f = function_from_dict(d["perturbation"])
        except (TypeError, ValueError, KeyError) as e:
            raise SchemaError(f"{where} field 'perturbation': {e}") from e
    bp = d["base_point"]
    _fields(bp, {"xbar", "ybar"}, {"xbar", "ybar"}, f"{where} field 'base_point'")
    xbar = np.array(bp["xbar"], dtype=float).ravel()
    ybar = np.array(bp["ybar"], dtype=float).ravel()
    if xbar.size != F.n or ybar.size != F.m:
        raise SchemaError(
            f"{where}: base point has dims ({xbar.size},{ybar.size}) but mapping is {F.n}->{F.m}"
        )
    if f is not None and (f.n, f.m) != (F.n, F.m):
        raise SchemaError(f"{where}: perturbation is {f.n}->{f.m} but mapping is {F.n}->{F.m}")
    q = d["q"]
    if isinstance(q, bool) or not isinstance(q, (int, float)) or not q > 0:
        raise SchemaError(f"{where}: field 'q' must be a positive number")
    est = d.get("estimator", {})
    _fields(est, ESTIMATOR_FIELDS, set(), f"{where} field 'estimator'")
    estimator = {**ESTIMATOR_DEFAULTS, **est}
    allowed, required = TASK_PARAMS[d["task"]]
    params = d.get("params", {})
    _fields(params, allowed, required, f"{where} field 'params'")
    if d["task"] in ("verify-lg", "newton") and f is None:
        raise SchemaError(f"{where}: task '{d['task']}' needs field 'perturbation'")
    if d["task"] == "newton" and len(params["x0"]) != F.n:
        raise SchemaError(f"{where} field 'params': x0 has the wrong dimension")
    return ExperimentInstance(d["id"], d["task"], F, xbar, ybar, float(q), f, estimator, dict(params))


def _load(text: str) -> list:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise SchemaError(f"not valid JSON: {e}") from e
    if not isinstance(doc, dict):
        raise SchemaError("top level must be an object")
    unknown = sorted(set(doc) - {"schema", "instances"})
    if unknown:
        raise SchemaError(f"top level: unknown field '{unknown[0]}'")
    if doc.get("schema") != SCHEMA_VERSION:
        raise SchemaError(f"field 'schema' must be {SCHEMA_VERSION}")
    raw = doc.get("instances")
    if not isinstance(raw, list):
        raise SchemaError("field 'instances' must be a list")
    seen = set()
    for d in raw:
        iid = d.get("id") if isinstance(d, dict) else None
        if iid in seen:
            raise SchemaError(f"duplicate instance id '{iid}'")
        seen.add(iid)
    return raw


def parse_instances(text: str) -> list[ExperimentInstance]:
    return [instance_from_dict(d, i) for i, d in enumerate(_load(text))]


def parse_instance_file(path) -> list[ExperimentInstance]:
    """Instances in file order; any schema violation raises :class:`SchemaError`."""
    with open(path, encoding="utf-8") as fh:
        return parse_instances(fh.read())


def serialize_instances(instances) -> str:
    """Canonical form: sorted keys, two-space indent, trailing newline."""
    doc = {"schema": SCHEMA_VERSION, "instances": [i.to_dict() for i in instances]}
    return json.dumps(doc, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


# -- tasks --------------------------------------------------------------------

def instance_seed(seed: int, instance_id: str) -> int:
    return (zlib.crc32(instance_id.encode("utf-8")) ^ int(seed)) & 0xFFFFFFFF


def _estimate(inst: ExperimentInstance, lip: bool) -> tuple[dict, Optional[bool]]:
    F = inst.effective_map()
    est = (estimate_lip_q if lip else estimate_rg_q)(F, inst.query())
    out = {
        "tau_hat": est.tau_hat,
        "capped": est.capped,
        "admissible_pairs": est.admissible_pairs,
        "witness_x": [] if est.witness is None else list(est.witness[0]),
        "witness_y": [] if est.witness is None else list(est.witness[1]),
        "trace": [v for _, v in est.trace],
    }
    p = inst.params
    if "expected" in p:
        return out, bool(abs(est.tau_hat - p["expected"]) <= p.get("tolerance", 0.05))
    return out, None


def run_task(inst: ExperimentInstance, seed: int = 0) -> tuple[dict, Optional[bool]]:
    """Outputs and pass verdict (``None`` when the task has no verdict)."""
    e, p, t = inst.estimator, inst.params, inst.task
    if t in ("estimate-rg", "estimate-lip"):
        return _estimate(inst, t == "estimate-lip")
    if t == "duality":
        rep = check_inverse_duality(inst.effective_map(), inst.query())
        out = rep.to_dict()
        out.pop("pass")
        return out, rep.passed
    if t == "verify-lg":
        pi = PerturbationInstance(inst.mapping, inst.perturbation, inst.xbar, inst.ybar, inst.q)
        rep = verify_lyusternik_graves(pi, inst.query(), p.get("tol", 0.05))
        out = rep.to_row(inst.id)
        out.pop("instance_id")
        out.pop("pass")
        return out, rep.passed
    if t == "check-slope":
        v = check_slope_sufficiency(inst.effective_map(), inst.xbar, inst.ybar, inst.q, p["tau"],
                                    e["delta"], e["mu"] or e["delta"], p.get("gamma", 1.0),
                                    min(e["resolution"], 41))
        return _verdict(v.to_dict(), p)
    if t == "check-coderivative":
        G = as_polyhedral(inst.effective_map())
        cq = CoderivativeConditionQuery(
            inst.q, p["tau"], e["delta"], e["mu"] or e["delta"],
            **{k: p[k] for k in ("eta", "alpha", "n_x", "n_y", "n_zstar", "n_ystar") if k in p},
            seed=instance_seed(seed, inst.id),
        )
        v = check_coderivative_sufficiency(G, inst.xbar, inst.ybar, cq)
        return _verdict(v.to_dict(), p)
    if t == "newton":
        trace = newton_trace(inst)
        out = {
            "iterations": len(trace.iterates) - 1,
            "converged": trace.converged,
            "x": list(trace.x),
            "residual": trace.residuals[-1],
            "error_to_ref": trace.errors_to_ref[-1],
            "exponent_hat": None if trace.rate is None else trace.rate.exponent_hat,
            "gamma_hat": None if trace.rate is None else trace.rate.gamma_hat,
            "rg_at_ref": trace.regularity["tau_hat"],
            "failure": trace.failure,
        }
        return out, trace.converged
    raise SchemaError(f"unknown task {t!r}")


def _verdict(d: dict, params: dict) -> tuple[dict, bool]:
    expect = params.get("expect", "holds")
    got = "holds" if d["verdict"] == "holds_on_samples" else "violated"
    out = {
        "verdict": d["verdict"],
        "samples": d["samples"],
        "min_value": d.get("min_estimate", d.get("min_value")),
        "rg_crosscheck": d["rg_crosscheck"],
        "witness": json.dumps(d["witness"], sort_keys=True) if d["witness"] else "",
    }
    return out, got == expect


def newton_trace(inst: ExperimentInstance, x0=None, tol: Optional[float] = None) -> NewtonTrace:
    p = inst.params
    ge = GeneralizedEquation(inst.perturbation, inst.mapping)
    cfg = NewtonConfig(p["x0"] if x0 is None else x0,
                       tol if tol is not None else p.get("tol", 1e-10), p.get("max_iter", 50))
    return josephy_newton(ge, cfg, xstar=inst.xbar, monitor=True)


# -- reports ------------------------------------------------------------------

def _flatten(prefix: str, d: dict) -> dict:
    return {f"{prefix}.{k}": ext_to_json(v) for k, v in d.items()}


def _params(inst: ExperimentInstance) -> dict:
    flat = {"q": inst.q}
    flat.update({k: v for k, v in inst.estimator.items()})
    flat.update(inst.params)
    return flat


def execute(item: tuple) -> dict:
    """Run one raw instance; never raises."""
    index, raw, seed, timing = item
    iid = raw.get("id", f"#{index}") if isinstance(raw, dict) else f"#{index}"
    task = raw.get("task", "") if isinstance(raw, dict) else ""
    row = {"instance_id": iid, "task": task, "status": "ok", "pass": None, "error": ""}
    t0 = time.perf_counter()
    try:
        inst = instance_from_dict(raw, index)
        row.update(_flatten("param", _params(inst)))
        with np.errstate(all="ignore"):
            out, passed = run_task(inst, seed)
        row.update(_flatten("out", out))
        row["pass"] = passed
    except SchemaError as e:
        row.update(status="schema_error", error=str(e))
    except Exception as e:  # noqa: BLE001  (recorded, the batch continues)
        row.update(status="error", error=f"{type(e).__name__}: {e}")
    if timing:
        row["wall_time_ms"] = round(1000 * (time.perf_counter() - t0), 3)
    return row


def cell(value: Any) -> str:
    """CSV text of a report value; JSON values map to the same text."""
    if value is None:
        return ""
    if isinstance(value, str):
        return value
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, list):
        return ";".join(cell(v) for v in value)
    if isinstance(value, float) and not math.isfinite(value):
        return "inf" if value > 0 else "-inf"
    return json.dumps(value)


@dataclass
class BatchSummary:
    rows: list
    failures: int

    @property
    def exit_code(self) -> int:
        return 1 if self.failures else 0


def run_batch(raw_instances: list, parallelism: int = 1, out_dir=None, seed: int = 0,
              timing: bool = False, progress=None) -> BatchSummary:
    """Run every instance and write ``report.csv`` and ``report.json`` to ``out_dir``.

    ``raw_instances`` are instance dicts or :class:`ExperimentInstance`
    objects. Rows keep input order whatever the parallelism.
    """
    items = []
    for i, r in enumerate(raw_instances):
        raw = r.to_dict() if isinstance(r, ExperimentInstance) else r
        items.append((i, raw, seed, timing))
    if parallelism > 1 and len(items) > 1:
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            rows = []
            for row in pool.map(execute, items):
                rows.append(row)
                if progress:
                    progress(row)
    else:
        rows = []
        for it in items:
            rows.append(execute(it))
            if progress:
                progress(rows[-1])
    failures = sum(r["status"] != "ok" for r in rows)
    if out_dir is not None:
        write_reports(rows, out_dir, seed)
    return BatchSummary(rows, failures)


def write_reports(rows: list, out_dir, seed: int = 0):
    os.makedirs(out_dir, exist_ok=True)
    extra = sorted({k for r in rows for k in r} - set(LEAD_COLUMNS))
    columns = LEAD_COLUMNS + extra
    with open(os.path.join(out_dir, "report.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, quoting=csv.QUOTE_MINIMAL, lineterminator="\r\n")
        w.writerow(columns)
        for r in rows:
            w.writerow([cell(r.get(c)) for c in columns])
    doc = {"schema": SCHEMA_VERSION, "seed": seed, "columns": columns, "rows": ext_to_json(rows)}
    with open(os.path.join(out_dir, "report.json"), "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def emit_convergence_table(trace: NewtonTrace, path) -> None:
    """CSV with columns ``iter, x, residual, error_to_ref, ratio`` (ratio ``e_{k+1}/e_k^2``)."""
    if not trace.iterates:
        raise ValueError("empty trace")
    errs = trace.errors_to_ref
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\r\n")
        w.writerow(["iter", "x", "residual", "error_to_ref", "ratio"])
        for k, x in enumerate(trace.iterates):
            e = "" if errs is None else cell(errs[k])
            ratio = ""
            if errs is not None and k > 0 and errs[k - 1] > 0:
                ratio = cell(errs[k] / errs[k - 1] ** 2)
            w.writerow([k, cell([float(t) for t in x]), cell(trace.residuals[k]), e, ratio])
