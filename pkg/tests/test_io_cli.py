import csv
import json
import math

import numpy as np
import pytest

from regulab import cli
from regulab.catalog import DATA_FILES, acceptance_batch, complementarity_instance, data_path, sqrt2_instance
from regulab.io import (
    SchemaError,
    cell,
    emit_convergence_table,
    newton_trace,
    parse_instance_file,
    parse_instances,
    run_batch,
    serialize_instances,
)
from regulab.newton import NewtonTrace

IDENTITY = {
    "id": "id1",
    "task": "estimate-rg",
    "mapping": {"kind": "linear", "A": [[1.0]]},
    "base_point": {"xbar": [0.0], "ybar": [0.0]},
    "q": 1.0,
    "estimator": {"delta": 0.5, "resolution": 11, "refinement_levels": 1},
}


def doc(*instances):
    return json.dumps({"schema": 1, "instances": list(instances)})


def test_minimal_instance():
    (inst,) = parse_instances(doc(IDENTITY))
    assert inst.id == "id1" and inst.estimator["mu"] is None


def test_duplicate_ids_are_named():
    with pytest.raises(SchemaError, match="id1"):
        parse_instances(doc(IDENTITY, IDENTITY))


@pytest.mark.parametrize("patch, field", [
    ({"colour": 1}, "colour"),
    ({"estimator": {"delta": 0.5, "grid": 3}}, "grid"),
    ({"mapping": {"kind": "linear", "A": [[1.0]], "b": [0]}}, "b"),
    ({"task": "fly"}, "task"),
    ({"base_point": {"xbar": [0.0, 0.0], "ybar": [0.0]}}, "dims"),
])
def test_schema_violations_name_field_and_instance(patch, field):
    bad = {**IDENTITY, **patch}
    with pytest.raises(SchemaError) as err:
        parse_instances(doc(bad))
    assert "id1" in str(err.value)
    assert field in str(err.value) or "dims" == field


def test_schema_version_is_checked():
    with pytest.raises(SchemaError, match="schema"):
        parse_instances(json.dumps({"schema": 2, "instances": []}))


@pytest.mark.parametrize("name", sorted(DATA_FILES))
def test_bundled_files_are_canonical(name):
    text = data_path(name).read_text(encoding="utf-8")
    assert serialize_instances(parse_instances(text)) == text
    assert serialize_instances(DATA_FILES[name]()) == text


def test_cubic_file_has_order_one_third():
    (inst,) = parse_instance_file(data_path("cubic.json"))
    assert inst.q == 1 / 3


def test_infinite_bounds_round_trip():
    text = serialize_instances([complementarity_instance()])
    assert '"inf"' in text
    assert math.isinf(parse_instances(text)[0].mapping.upper[0])


def test_empty_batch(tmp_path):
    s = run_batch([], out_dir=tmp_path)
    assert s.rows == [] and s.exit_code == 0
    assert json.loads((tmp_path / "report.json").read_text())["rows"] == []


def test_malformed_instance_does_not_stop_the_batch(tmp_path):
    bad = {**IDENTITY, "id": "bad", "q": -1}
    s = run_batch([IDENTITY, bad], out_dir=tmp_path)
    assert [r["status"] for r in s.rows] == ["ok", "schema_error"]
    assert s.rows[0]["out.tau_hat"] == pytest.approx(1.0)
    assert s.exit_code == 1


def test_failed_verdict_is_not_an_error(tmp_path):
    inst = {**IDENTITY, "params": {"expected": 2.0, "tolerance": 0.01}}
    s = run_batch([inst], out_dir=tmp_path)
    assert s.rows[0]["pass"] is False and s.exit_code == 0


def _read(out):
    with open(out / "report.csv", newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return rows, json.loads((out / "report.json").read_text())


def test_reports_are_deterministic_and_consistent(tmp_path):
    batch = [i.to_dict() for i in acceptance_batch()][:6]
    run_batch(batch, 2, tmp_path / "a", seed=5)
    run_batch(batch, 1, tmp_path / "b", seed=5)
    assert (tmp_path / "a" / "report.json").read_bytes() == (tmp_path / "b" / "report.json").read_bytes()
    rows, js = _read(tmp_path / "a")
    assert len(rows) == len(js["rows"])
    for r, j in zip(rows, js["rows"]):
        for col in js["columns"]:
            assert r[col] == cell(j.get(col))


def test_convergence_table(tmp_path):
    trace = newton_trace(sqrt2_instance())
    path = tmp_path / "t.csv"
    emit_convergence_table(trace, path)
    lines = list(csv.reader(open(path, newline="")))
    assert lines[0] == ["iter", "x", "residual", "error_to_ref", "ratio"]
    assert len(lines) == 7  # header plus six iterates
    assert float(lines[-1][2]) <= 1e-12


def test_single_iterate_table(tmp_path):
    path = tmp_path / "one.csv"
    emit_convergence_table(NewtonTrace([np.array([1.0])], [0.0], errors_to_ref=[0.0]), path)
    lines = list(csv.reader(open(path, newline="")))
    assert len(lines) == 2 and lines[1][4] == ""


def test_complementarity_ratios_settle_near_gamma(tmp_path):
    trace = newton_trace(complementarity_instance())
    e = trace.errors_to_ref
    ratios = [e[k + 1] / e[k] ** 2 for k in range(len(e) - 1) if 1e-14 < e[k + 1] and e[k] < 0.1]
    assert ratios[-1] == pytest.approx(trace.rate.gamma_hat, rel=0.1)


def test_cli_run_and_exit_codes(tmp_path, capsys):
    batch = tmp_path / "b.json"
    batch.write_text(doc(IDENTITY))
    assert cli.main(["run", str(batch), "--out", str(tmp_path / "out")]) == 0
    bad = tmp_path / "bad.json"
    bad.write_text(doc(IDENTITY, IDENTITY))
    assert cli.main(["run", str(bad), "--out", str(tmp_path / "o2")]) == 2
    broken = tmp_path / "broken.json"
    broken.write_text(doc({**IDENTITY, "base_point": {"xbar": [3.0], "ybar": [0.0]}}))
    assert cli.main(["run", str(broken), "--out", str(tmp_path / "o3")]) == 1


def test_cli_newton_and_estimate(tmp_path, capsys):
    table = tmp_path / "t.csv"
    assert cli.main(["newton", str(data_path("newton.json")), "--id", "sqrt2", "--x0", "2.5",
                     "--tol", "1e-12", "--table", str(table)]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["converged"] and abs(out["x"][0] - math.sqrt(2)) <= 1e-12
    assert table.exists()
    assert cli.main(["estimate", str(data_path("cubic.json"))]) == 0
    line = json.loads(capsys.readouterr().out.strip())
    assert line["pass"] is True


def test_seed_environment_override(tmp_path, monkeypatch):
    inst = {**IDENTITY, "id": "cd", "task": "check-coderivative", "params": {"tau": 0.5},
            "mapping": {"kind": "linear", "A": [[2.0, 0.0], [0.0, 1.0]]},
            "base_point": {"xbar": [0.0, 0.0], "ybar": [0.0, 0.0]}}
    batch = tmp_path / "b.json"
    batch.write_text(doc(inst))
    monkeypatch.setenv("REGULAB_SEED", "11")
    assert cli.main(["run", str(batch), "--out", str(tmp_path / "o"), "--seed", "3"]) == 0
    assert json.loads((tmp_path / "o" / "report.json").read_text())["seed"] == 11
