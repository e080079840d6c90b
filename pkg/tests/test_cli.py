import json
import subprocess
import sys

import numpy as np
import pandas as pd
import pytest

from seqtransport.cli import SUMMARY_KEYS, dumps_json, main
from seqtransport.simgen import MC_COLUMNS


@pytest.fixture(scope="module")
def toy_files(tmp_path_factory):
    root = tmp_path_factory.mktemp("toy")
    data, dag = root / "toy.csv", root / "dag.json"
    assert main(["simulate", "gaussian-toy", "--n", "300", "--seed", "1", "--out", str(data),
                 "--dag-out", str(dag)]) == 0
    return data, dag


@pytest.fixture(scope="module")
def three_files(tmp_path_factory):
    root = tmp_path_factory.mktemp("three")
    data, dag = root / "three.csv", root / "dag.json"
    assert main(["simulate", "three-mediator", "--n0", "120", "--n1", "80", "--seed", "2",
                 "--out", str(data), "--dag-out", str(dag)]) == 0
    return data, dag


def run(args):
    return main([str(a) for a in args])


def read_table(path):
    # pandas' default float parser is not correctly rounded
    return pd.read_csv(path, float_precision="round_trip")


class TestSimulate:
    def test_writes_dataset(self, toy_files):
        data, dag = toy_files
        frame = read_table(data)
        assert list(frame.columns) == ["unit", "A", "X1", "X2", "Y"]
        assert len(frame) == 300
        spec = json.loads(dag.read_text())
        assert {n["name"] for n in spec["nodes"]} == {"A", "X1", "X2", "Y"}

    def test_stdout(self, capsys):
        assert main(["simulate", "gaussian-toy", "--n", "5", "--seed", "1"]) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert lines[0] == "unit,A,X1,X2,Y" and len(lines) == 6


class TestDecompose:
    def test_summary_contract(self, toy_files, tmp_path, capsys):
        data, dag = toy_files
        out = tmp_path / "run"
        assert run(["decompose", "--data", data, "--dag", dag, "--out", out, "--method", "st"]) == 0
        summary = json.loads((out / "summary.json").read_text())
        assert list(summary) == list(SUMMARY_KEYS)
        assert summary["tau_bar"] == summary["delta_bar"] + summary["zeta_bar"]
        assert summary["method"] == "st" and summary["n0"] + summary["n1"] == 300
        assert json.loads(capsys.readouterr().out) == summary

    def test_byte_identical_reruns(self, toy_files, tmp_path):
        data, dag = toy_files
        for name in ("a", "b"):
            assert run(["decompose", "--data", data, "--dag", dag, "--out", tmp_path / name]) == 0
        for artifact in ("summary.json", "effects.csv", "counterfactuals.csv", "diagnostics.json"):
            assert (tmp_path / "a" / artifact).read_bytes() == (tmp_path / "b" / artifact).read_bytes()

    def test_csv_schemas(self, toy_files, tmp_path):
        data, dag = toy_files
        out = tmp_path / "run"
        assert run(["attribute", "--data", data, "--dag", dag, "--out", out]) == 0
        cf = read_table(out / "counterfactuals.csv")
        assert list(cf.columns) == ["unit", "A", "X1", "X1_cf", "X2", "X2_cf"]
        eff = read_table(out / "effects.csv")
        assert list(eff.columns) == ["unit", "delta", "zeta", "tau", "delta_X1", "delta_X2"]
        np.testing.assert_array_equal(eff.tau, eff.delta + eff.zeta)
        np.testing.assert_allclose(eff.delta_X1 + eff.delta_X2, eff.delta, rtol=0, atol=1e-12)
        attr = read_table(out / "attribution.csv")
        assert list(attr.columns) == ["node", "mean_increment"] and list(attr.node) == ["X1", "X2"]
        diag = json.loads((out / "diagnostics.json").read_text())
        assert diag["overlap"]["support"] == "group 1"
        assert "eta_hat_source_support" in diag["overlap"]

    def test_floats_at_full_precision(self, toy_files, tmp_path):
        data, dag = toy_files
        out = tmp_path / "run"
        assert run(["decompose", "--data", data, "--dag", dag, "--out", out, "--method", "ot"]) == 0
        text = (out / "summary.json").read_text()
        value = json.loads(text)["delta_bar"]
        assert f"{value!r}" in text or format(value, ".17g") in text

    @pytest.mark.parametrize("method", ["ot", "skh"])
    def test_baselines(self, toy_files, tmp_path, method):
        data, dag = toy_files
        out = tmp_path / method
        assert run(["decompose", "--data", data, "--dag", dag, "--out", out, "--method", method]) == 0
        assert set(read_table(out / "effects.csv").columns) == {"unit", "delta", "zeta", "tau"}

    def test_transport_only(self, toy_files, tmp_path):
        data, dag = toy_files
        out = tmp_path / "run"
        assert run(["transport", "--data", data, "--dag", dag, "--out", out]) == 0
        assert sorted(p.name for p in out.iterdir()) == ["counterfactuals.csv", "diagnostics.json"]

    def test_reverse_direction(self, toy_files, tmp_path):
        data, dag = toy_files
        out = tmp_path / "run"
        assert run(["decompose", "--data", data, "--dag", dag, "--out", out, "--direction", "1->0"]) == 0
        cf = read_table(out / "counterfactuals.csv")
        assert set(cf.A) == {1}

    def test_mixed_types_with_overrides(self, three_files, tmp_path):
        data, dag = three_files
        out = tmp_path / "run"
        code = run(["attribute", "--data", data, "--dag", dag, "--out", out, "--regressor", "trees",
                    "--bandwidth", "X2=0.8", "--node-gamma", "X3=0.05"])
        assert code == 0
        cf = read_table(out / "counterfactuals.csv")
        assert set(cf.X3_cf) <= {"A", "B", "C"}
        summary = json.loads((out / "summary.json").read_text())
        assert 0 <= summary["eta_hat"] <= 0.1


class TestErrors:
    def test_non_binary_treatment_leaves_nothing(self, toy_files, tmp_path, capsys):
        _, dag = toy_files
        bad = tmp_path / "bad.csv"
        bad.write_text("unit,A,X1,X2,Y\n0,0,1,1,1\n1,2,1,1,1\n")
        out = tmp_path / "out"
        assert run(["decompose", "--data", bad, "--dag", dag, "--out", out]) == 1
        report = json.loads(capsys.readouterr().err)
        assert report["error"] == "NonBinaryTreatment" and report["command"] == "decompose"
        assert not out.exists() or not any(out.iterdir())

    def test_parse_error_reports_location(self, toy_files, tmp_path, capsys):
        _, dag = toy_files
        bad = tmp_path / "bad.csv"
        bad.write_text("unit,A,X1,X2,Y\n0,0,1,1,1\n1,1,oops,1,1\n")
        assert run(["transport", "--data", bad, "--dag", dag, "--out", tmp_path / "o"]) == 1
        report = json.loads(capsys.readouterr().err)
        assert report["error"] == "ParseError" and report["row"] == 2 and report["column"] == "X1"

    def test_failure_mid_run_removes_artifacts(self, toy_files, tmp_path, capsys):
        data, dag = toy_files
        frame = read_table(data).drop(columns="Y")
        no_outcome = tmp_path / "no_y.csv"
        frame.to_csv(no_outcome, index=False)
        spec = json.loads(dag.read_text())
        spec["nodes"] = [n for n in spec["nodes"] if n["name"] != "Y"]
        spec["edges"] = [e for e in spec["edges"] if "Y" not in e]
        spec.pop("outcome", None)
        dag2 = tmp_path / "dag.json"
        dag2.write_text(json.dumps(spec))
        out = tmp_path / "out"
        assert run(["decompose", "--data", no_outcome, "--dag", dag2, "--out", out]) == 1
        assert json.loads(capsys.readouterr().err)["error"] == "MissingColumn"
        assert not any(out.iterdir())

    def test_cycle_reported(self, toy_files, tmp_path, capsys):
        data, _ = toy_files
        dag = tmp_path / "cyc.json"
        dag.write_text(json.dumps({"nodes": [{"name": "A", "kind": "treatment"}, {"name": "X1", "kind": "numeric"},
                                             {"name": "X2", "kind": "numeric"}],
                                   "edges": [["A", "X1"], ["X1", "X2"], ["X2", "X1"]]}))
        assert run(["transport", "--data", data, "--dag", dag, "--out", tmp_path / "o"]) == 1
        report = json.loads(capsys.readouterr().err)
        assert report["error"] == "CycleDetected" and "cycle" in report

    def test_override_requires_st(self, toy_files, tmp_path, capsys):
        data, dag = toy_files
        code = run(["transport", "--data", data, "--dag", dag, "--out", tmp_path / "o", "--method", "ot",
                    "--bandwidth", "X2=1"])
        assert code == 1
        assert json.loads(capsys.readouterr().err)["error"] == "ValueError"


class TestMonteCarlo:
    def test_row_count(self, tmp_path):
        out = tmp_path / "mc.csv"
        assert main(["mc", "--dgp", "gaussian-toy", "--methods", "st1,ot", "--B", "50", "--n", "40",
                     "--out", str(out)]) == 0
        table = read_table(out)
        assert list(table.columns) == MC_COLUMNS
        assert len(table) == 100
        np.testing.assert_array_equal(table.tau_bar, table.delta_bar + table.zeta_bar)

    def test_unknown_method(self, capsys):
        assert main(["mc", "--dgp", "gaussian-toy", "--methods", "nf", "--B", "1"]) == 1
        assert json.loads(capsys.readouterr().err)["error"] == "ValueError"


def test_json_serializer():
    text = dumps_json({"a": 0.1, "b": float("nan"), "c": [1, True, None], "d": {}})
    assert json.loads(text) == {"a": 0.1, "b": None, "c": [1, True, None], "d": {}}
    assert '"a": 0.10000000000000001' in text


def test_module_entry_point(toy_files, tmp_path):
    data, dag = toy_files
    proc = subprocess.run([sys.executable, "-m", "seqtransport.cli", "transport", "--data", str(data),
                           "--dag", str(dag), "--out", str(tmp_path / "o")], capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "o" / "counterfactuals.csv").exists()
