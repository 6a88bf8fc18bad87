import io
import json
import math
import os
import subprocess
import sys
from pathlib import Path

import pytest

from jumpldp.cli import EXIT_INVALID, EXIT_NUMERIC, EXIT_OK, run

GOLDEN = Path(__file__).parent / "golden"
INPUTS = GOLDEN / "inputs"
REGEN = os.environ.get("JUMPLDP_REGEN_GOLDEN") == "1"

# one cheap invocation per subcommand and variant, all on builtin models
CASES = {
    "list_models": ["list-models"],
    "simulate": ["simulate", "--model", "ex2_3", "--v", "20", "--x0", "1,0", "--t-max", "0.3", "--seed", "7"],
    "flux_simulate": ["flux-simulate", "--model", "ex2_3", "--v", "10", "--t-max", "0.2", "--seed", "1"],
    "exact": ["exact", "--model", "ex2_3", "--v", "3", "--t", "0.5"],
    "rate": ["rate", "--model", "ex1_1", "--x", "0.5", "--y", "0.5"],
    "rate_json": ["rate", "--model", "ex2_3", "--x", "0.5,0.5", "--y", "0.2,-0.2", "--format", "json"],
    "action": ["action", "--model", "ex1_1", "--path", "{in}/ex1_1_path.csv"],
    "flux_action": ["flux-action", "--model", "ex2_3", "--path", "{in}/ex2_3_path.csv", "--flux", "{in}/ex2_3_flux.csv"],
    "flux_action_induced": ["flux-action", "--model", "ex2_3", "--path", "{in}/ex2_3_path.csv"],
    "fluid": ["fluid", "--model", "ex2_3", "--t-max", "1", "--steps", "4"],
    "shift_path": ["shift-path", "--model", "ex1_1", "--path", "{in}/ex1_1_path.csv", "--delta", "0.1"],
    "verify_breakup": ["verify-breakup", "--model", "ex1_1", "--path", "{in}/ex1_1_path.csv", "--delta", "0.1"],
    "audit_convergence": ["audit", "convergence", "--model", "ex2_1_dimer", "--v", "10,100", "--grid-n", "3"],
    "audit_aleph": ["audit", "aleph", "--model", "ex2_1_dimer", "--v", "10", "--grid-n", "3"],
    "audit_decay": ["audit", "decay", "--model", "ex1_1"],
    "audit_fast": ["audit", "fast", "--model", "ex2_4"],
    "audit_cone": ["audit", "cone", "--model", "ex5_3"],
    "audit_escape_seq": ["audit", "escape-seq", "--model", "ex1_1", "--v", "10,100"],
    "study_marginal": ["study", "marginal", "--model", "ex1_1", "--v", "10,20"],
    "study_minimize": ["study", "minimize", "--model", "ex1_1", "--grid-n", "8"],
    "study_diverge": ["study", "diverge", "--model", "ex2_4", "--eps-to", "6"],
    "study_escape_event": ["study", "escape-event", "--model", "ex1_1", "--v", "20,50", "--delta", "0.2"],
    "study_escape_event_json": ["study", "escape-event", "--model", "ex2_4", "--v", "20", "--delta", "0.2", "--format", "json"],
}


def invoke(argv):
    out, err = io.StringIO(), io.StringIO()
    code = run([a.format(**{"in": INPUTS}) for a in argv], out, err)
    return code, out.getvalue(), err.getvalue()


@pytest.mark.parametrize("name", sorted(CASES))
def test_golden_output(name):
    code, out, err = invoke(CASES[name])
    assert code == EXIT_OK, err
    path = GOLDEN / f"{name}.out"
    if REGEN:
        path.write_text(out, encoding="utf-8")
    assert out == path.read_text(encoding="utf-8")


def test_every_subcommand_has_a_golden_case():
    from jumpldp.cli import HANDLERS

    covered = {argv[0] for argv in CASES.values()}
    assert covered == set(HANDLERS)


@pytest.mark.parametrize("name", ["simulate", "study_marginal", "audit_fast"])
def test_rerun_is_byte_identical(name):
    assert invoke(CASES[name])[1] == invoke(CASES[name])[1]


def test_marginal_ladder_limit():
    code, out, _ = invoke(["study", "marginal", "--model", "ex1_1", "--t", "1", "--delta", "0.5", "--v", "50,100,200,400", "--mode", "exact"])
    assert code == EXIT_OK
    limit = float(next(line for line in out.splitlines() if line.startswith("# limit=")).split("=", 1)[1])
    assert limit == pytest.approx(0.5 * math.log(1 - math.exp(-1)), abs=3e-3)


def test_rate_at_drift_is_zero():
    _, out, _ = invoke(CASES["rate"])
    assert out.splitlines()[1].split(",")[0] == "0"


def test_json_shape():
    code, out, _ = invoke(CASES["study_escape_event_json"])
    doc = json.loads(out)
    assert set(doc) == {"meta", "rows", "summary"}
    assert doc["rows"][0]["bound"] == "-inf"


def test_jobs_do_not_change_output():
    base = ["study", "escape-event", "--model", "ex1_1", "--v", "20,30,50", "--delta", "0.2"]
    assert invoke(base + ["--jobs", "1"])[1] == invoke(base + ["--jobs", "3"])[1]


def test_output_file(tmp_path):
    target = tmp_path / "out.csv"
    code, out, _ = invoke(CASES["fluid"] + ["-o", str(target)])
    assert code == EXIT_OK and out == ""
    assert target.read_text() == (GOLDEN / "fluid.out").read_text()


def test_model_file_input(tmp_path):
    doc = {"name": "b", "species": ["A"], "reactions": [{"in": {"A": 1}, "out": {"A": 2}, "rate": {"type": "mass_action", "k": 1.0}}]}
    f = tmp_path / "m.json"
    f.write_text(json.dumps(doc))
    code, out, _ = invoke(["rate", "--model", str(f), "--x", "0.5", "--y", "0.5"])
    assert code == EXIT_OK and out == (GOLDEN / "rate.out").read_text()


@pytest.mark.parametrize(
    "argv",
    [
        ["simulate", "--model", "nope", "--v", "10"],
        ["simulate", "--model", "ex1_1", "--v", "10", "--bogus"],
        ["rate", "--model", "ex1_1", "--x", "a", "--y", "1"],
        ["simulate", "--model", "ex1_1", "--v", "0"],
        ["action", "--model", "ex1_1", "--path", "/nonexistent/path.csv"],
        ["audit", "cone", "--model", "ex5_3", "--point", "0.5,0.5"],
        ["study", "escape-event", "--model", "ex1_1", "--region", "4"],
        [],
    ],
)
def test_invalid_input_exit_code(argv):
    code, out, err = invoke(argv)
    assert code == EXIT_INVALID
    assert out == "" and err.startswith("jumpldp: error:")


def test_numeric_failure_exit_code():
    # A + A -> 3A with x' = x^2 blows up before t = 2
    code, _, err = invoke(["fluid", "--model", "{in}/blowup.json", "--x0", "1", "--t-max", "2", "--steps", "1000"])
    assert code == EXIT_NUMERIC, err


def test_console_script_help():
    res = subprocess.run([sys.executable, "-m", "jumpldp.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "study" in res.stdout
