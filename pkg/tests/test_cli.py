import io
import json
import subprocess
import sys

import numpy as np
import pytest

from contactlab.cli import builtin_specs, main, run
from contactlab.exprlang import compile_exprs, parse


def report(command, spec, **kw):
    buf = io.StringIO()
    code = run(command, spec, as_json=True, stream=buf, **kw)
    return code, json.loads(buf.getvalue())


def write_spec(tmp_path, spec, name="case"):
    p = tmp_path / f"{name}.json"
    p.write_text(json.dumps(spec))
    return str(p)


SLAB_CHART = {"kind": "box", "bounds": [[-1, 1], [-1, 1], [-1, 1]]}


def test_builtin_specs_listed():
    assert {"saddle_slab", "anosov_mapping_torus", "reeb_component", "cylinder_sine"} <= set(builtin_specs())


@pytest.mark.parametrize("command,spec", [("analyze", "saddle_slab"), ("liouville", "anosov_mapping_torus"),
                                          ("certify", "anosov_mapping_torus"), ("cylinder", "cylinder_sine"),
                                          ("seed-to-pair", "reeb_component"),
                                          ("frame", "anosov_mapping_torus")])
def test_passing_commands_exit_zero(command, spec):
    code, rep = report(command, spec, grid=4)
    assert code == 0 and rep["passed"] and "error" not in rep


def test_analyze_report_contents():
    code, rep = report("analyze", "saddle_slab", grid=5)
    res = rep["results"]
    # the reported X re-parses to 2y d/dy
    fn = compile_exprs([parse(c) for c in res["X"]], ("x", "y", "z"))
    pts = np.random.default_rng(0).uniform(-1, 1, (3, 5))
    vals = np.array([np.broadcast_to(v, (5,)) for v in fn(*pts)])
    np.testing.assert_allclose(vals, [0 * pts[1], 2 * pts[1], 0 * pts[1]], atol=1e-15)
    assert res["scalars"]["f0"] == {"min": 2.0, "max": 2.0}
    assert res["positivity"]["verdict"] == "Positive" and res["lie"]["passed"]
    assert rep["tool"]["name"] == "contactlab" and rep["command"] == "analyze"


def test_determinism_except_timing():
    a = report("sigma", "anosov_mapping_torus", grid=3)[1]
    b = report("sigma", "anosov_mapping_torus", grid=3)[1]
    assert a.pop("timing") and b.pop("timing")
    assert a == b


def test_failed_check_exits_one(tmp_path):
    # omega = 0 dominates nothing
    spec = {"chart": SLAB_CHART, "alpha_minus": ["-y", "0", "-1"], "alpha_plus": ["-y", "0", "1"],
            "witnesses": {"taut": {"omega": ["0", "0", "0"], "eta": ["0", "0", "1"]}}}
    code, rep = report("certify", write_spec(tmp_path, spec), grid=3)
    assert code == 1 and not rep["passed"] and rep["results"]["taut"]["verdict"] is False


def test_not_contact_exits_one_with_worst_point(tmp_path):
    spec = {"chart": SLAB_CHART, "alpha_minus": ["-y", "0", "-1"], "alpha_plus": ["y", "0", "1"]}
    code, rep = report("analyze", write_spec(tmp_path, spec), grid=3)
    assert code == 1 and rep["error"]["type"] == "NotContact"
    assert len(rep["error"]["worst_point"]) == 3 and rep["error"]["value"] <= 0


@pytest.mark.parametrize("spec", [
    {"chart": SLAB_CHART, "alpha_minus": ["-y", "0"], "alpha_plus": ["-y", "0", "1"]},
    {"chart": SLAB_CHART, "alpha_minus": ["-y +", "0", "-1"], "alpha_plus": ["-y", "0", "1"]},
    {"chart": SLAB_CHART, "alpha_minus": ["-w", "0", "-1"], "alpha_plus": ["-y", "0", "1"]},
    {"chart": {"kind": "sphere"}, "alpha_minus": ["0", "0", "1"], "alpha_plus": ["0", "0", "1"]},
    {"alpha_minus": ["0", "0", "1"]},
])
def test_input_errors_exit_two(tmp_path, spec):
    code, rep = report("analyze", write_spec(tmp_path, spec), grid=3)
    assert code == 2 and rep["error"]["operation"] == "analyze"


def test_missing_file_and_bad_json(tmp_path):
    assert report("analyze", str(tmp_path / "nope.json"))[0] == 2
    p = tmp_path / "bad.json"
    p.write_text("{not json")
    assert report("analyze", str(p))[0] == 2


def test_outputs_written(tmp_path):
    out = tmp_path / "out"
    code = run("sigma", "saddle_slab", grid=3, out=str(out), dump_csv=True, stream=io.StringIO())
    assert code == 0
    rep = json.loads((out / "saddle_slab_sigma.json").read_text())
    assert rep["passed"]
    lines = (out / "saddle_slab_sigma_sigma.csv").read_text().splitlines()
    assert lines[0] == "x,y,z,sigma_u,sigma_s" and len(lines) == 1 + 27


def test_argparse_entry_point(capsys):
    assert main(["liouville", "saddle_slab", "--grid", "3"]) == 0
    assert capsys.readouterr().out.strip() == "liouville: PASS"
    assert main(["bogus", "saddle_slab"]) == 2
    assert main(["analyze"]) == 2


def test_module_invocation():
    env_out = subprocess.run([sys.executable, "-m", "contactlab.cli", "liouville", "saddle_slab",
                              "--grid", "3", "--json"], capture_output=True, text=True,
                             env={"CONTACTLAB_THREADS": "2", "PATH": ""})
    assert env_out.returncode == 0
    rep = json.loads(env_out.stdout)
    assert rep["config"]["threads"] == "2"
