import json
import math
import subprocess
import sys

import pytest

from cnfpreserve.cli import build_parser, main
from cnfpreserve.datasets import PairedDataset, PairedLogitRecord, load_paired, save_paired

SUBCOMMANDS = ["audit", "histogram", "bound", "gen-data", "train-teacher", "distill", "tune"]


def logit_for(p):
    return [math.log(p / (1 - p)), 0.0]


def write_pairs(path, rows, labels=None):
    labels = labels or [None] * len(rows)
    recs = tuple(PairedLogitRecord(str(i), t, s, y) for i, ((t, s), y) in enumerate(zip(rows, labels)))
    save_paired(PairedDataset(recs), path)
    return str(path)


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """gen-data -> train-teacher on moons, shared by the slower tests."""
    d = tmp_path_factory.mktemp("pipe")
    cfg = d / "teacher.cfg"
    cfg.write_text("lr_stg1 = 0.05\nepochs_stg1 = 30\n")
    assert main(["gen-data", "--task", "moons", "--n", "1000", "--noise", "0.1", "--seed", "7",
                 "--out", str(d / "train.jsonl"), "--eval-out", str(d / "eval.jsonl")]) == 0
    assert main(["train-teacher", "--data", str(d / "train.jsonl"), "--config", str(cfg),
                 "--out", str(d / "teacher.json")]) == 0
    return d


# --------------------------------------------------------------------------
# audit


def test_audit_small_sigma_holds(tmp_path, capsys):
    # two records with deltas +0.026 and -0.026
    p = write_pairs(tmp_path / "p.jsonl", [(logit_for(0.7), logit_for(0.726)), (logit_for(0.726), logit_for(0.7))])
    assert main(["audit", "--input", p]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["sigma"] == pytest.approx(0.026, abs=1e-12)
    assert rep["holds"] is True and rep["kappa"] == 0.05


def test_audit_failing_sigma_exits_one(tmp_path):
    p = write_pairs(tmp_path / "p.jsonl", [(logit_for(0.7), logit_for(0.762)), (logit_for(0.762), logit_for(0.7))])
    out = tmp_path / "r.json"
    assert main(["audit", "--input", p, "--out", str(out)]) == 1
    rep = json.loads(out.read_text())
    assert rep["holds"] is False and rep["sigma"] == pytest.approx(0.062, abs=1e-12)


def test_audit_identical_logits(tmp_path, capsys):
    p = write_pairs(tmp_path / "p.jsonl", [([1.0, 2.0], [1.0, 2.0]), ([3.0, 0.0], [3.0, 0.0])], [1, 0])
    assert main(["audit", "--input", p, "--split", "eval"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["sigma"] == 0.0 and rep["acc_teacher"] == 1.0 and rep["split"] == "eval"


def test_audit_malformed_line(tmp_path, capsys):
    p = tmp_path / "p.jsonl"
    write_pairs(p, [([1.0, 0.0], [1.0, 0.0])])
    with open(p, "a") as fh:
        fh.write('{"id": "x", "teacher_logits": [1, 0]\n')
    assert main(["audit", "--input", str(p)]) == 2
    assert "line 2" in capsys.readouterr().err


def test_audit_missing_file(tmp_path, capsys):
    assert main(["audit", "--input", str(tmp_path / "nope.jsonl")]) == 2
    assert "error" in capsys.readouterr().err


def test_usage_errors_exit_two(capsys):
    assert main(["audit"]) == 2
    assert main(["audit", "--input", "x", "--bogus"]) == 2
    assert main(["audit", "--input", "x", "--kappa", "-1"]) == 2
    assert main([]) == 2


# --------------------------------------------------------------------------
# histogram and bound


def test_histogram_outputs(tmp_path):
    p = write_pairs(tmp_path / "p.jsonl", [([2.0, 0.0], [1.0, 0.0]), ([0.0, 1.0], [1.0, 0.0]), ([0.0, 3.0], [0.0, 2.0])])
    prefix = tmp_path / "out" / "h"
    assert main(["histogram", "--input", p, "--bins", "10", "--out-prefix", str(prefix)]) == 0
    for name in ("teacher", "student", "delta"):
        lines = (tmp_path / "out" / f"h_{name}.csv").read_text().splitlines()
        assert lines[0] == "bin_lo,bin_hi,count" and len(lines) == 11
    summary = json.loads((tmp_path / "out" / "h_summary.json").read_text())
    assert summary["n_total"] == 3 and summary["n_bot"] == 1 and summary["n_delta"] == 2


def test_bound_identical_models(tmp_path, capsys):
    p = write_pairs(tmp_path / "p.jsonl", [([1.0, 2.0], [1.0, 2.0]), ([0.5, -1.0], [0.5, -1.0])])
    assert main(["bound", "--input", p, "--loss", "auto"]) == 0
    rep = json.loads(capsys.readouterr().out)
    assert rep["step1_holds"] and rep["step2_holds"] and rep["step3_holds"] and rep["sigma"] == 0.0


def test_bound_inconsistent_loss_exits_one(tmp_path):
    p = write_pairs(tmp_path / "p.jsonl", [([2.0, 0.0], [1.0, 0.0])])
    assert main(["bound", "--input", p, "--loss", "0.5"]) == 1
    assert main(["bound", "--input", p, "--loss", "lots"]) == 2
    assert main(["bound", "--input", p, "--loss", "auto", "--alpha", "1"]) == 2


# --------------------------------------------------------------------------
# pipeline


def test_full_chain_on_blobs(tmp_path):
    d = tmp_path
    assert main(["gen-data", "--task", "blobs", "--n", "400", "--noise", "1.0", "--seed", "0",
                 "--out", str(d / "pts.jsonl")]) == 0
    assert main(["train-teacher", "--data", str(d / "pts.jsonl"), "--out", str(d / "t.json")]) == 0
    assert main(["distill", "--teacher", str(d / "t.json"), "--data", str(d / "pts.jsonl"),
                 "--out", str(d / "s.json"), "--emit-pairs", str(d / "pairs.jsonl"), "--log", str(d / "log.json")]) == 0
    assert main(["audit", "--input", str(d / "pairs.jsonl"), "--out", str(d / "r.json")]) == 0
    rep = json.loads((d / "r.json").read_text())
    loss = json.loads((d / "log.json").read_text())["records"][-1]["sum_form_loss"]
    assert rep["sigma"] <= math.sqrt(loss / rep["n_total"]) + 1e-9
    assert main(["bound", "--input", str(d / "pairs.jsonl"), "--loss", "auto"]) == 0


def test_outputs_byte_identical(tmp_path):
    def run(sub):
        d = tmp_path / sub
        d.mkdir()
        main(["gen-data", "--task", "xor", "--n", "200", "--noise", "0.5", "--seed", "3", "--out", str(d / "p.jsonl")])
        main(["train-teacher", "--data", str(d / "p.jsonl"), "--dims", "2,16,16,2", "--out", str(d / "t.json")])
        main(["distill", "--teacher", str(d / "t.json"), "--data", str(d / "p.jsonl"), "--dims", "2,8,2",
              "--out", str(d / "s.json"), "--emit-pairs", str(d / "pairs.jsonl")])
        main(["audit", "--input", str(d / "pairs.jsonl"), "--out", str(d / "r.json")])
        return {f.name: f.read_bytes() for f in d.iterdir()}

    a, b = run("a"), run("b")
    assert a.keys() == b.keys() and len(a) == 5
    assert a == b


def test_distill_emit_pairs_split_tag(pipeline, tmp_path):
    assert main(["distill", "--teacher", str(pipeline / "teacher.json"), "--data", str(pipeline / "eval.jsonl"),
                 "--dims", "2,8,2", "--out", str(tmp_path / "s.json"),
                 "--emit-pairs", str(tmp_path / "p.jsonl"), "--split", "eval"]) == 0
    assert len(load_paired(tmp_path / "p.jsonl")) == 200


def test_distill_bad_config_exits_two(pipeline, tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("momentum = 0.9\n")
    assert main(["distill", "--teacher", str(pipeline / "teacher.json"), "--data", str(pipeline / "train.jsonl"),
                 "--config", str(cfg), "--out", str(tmp_path / "s.json")]) == 2


def test_tune_known_failing_grid(pipeline, tmp_path):
    grid = tmp_path / "grid.txt"
    grid.write_text("lr_stg2 = 0.003\nbatch = 32\nepochs_stg2 = 2, 3\nweight_decay = 1e-4\n")
    out = tmp_path / "outcome.json"
    code = main(["tune", "--teacher", str(pipeline / "teacher.json"), "--data", str(pipeline / "train.jsonl"),
                 "--eval", str(pipeline / "eval.jsonl"), "--dims", "2,8,2", "--grid", str(grid),
                 "--seed", "0", "--out", str(out)])
    assert code == 1
    data = json.loads(out.read_text())
    assert data["best_config"] == "absent"
    assert data["baseline_sigma"] > 0.05
    assert len(data["trials"]) == 2 and not any(t["holds"] for t in data["trials"])


def test_tune_holding_grid(pipeline, tmp_path):
    grid = tmp_path / "grid.txt"
    grid.write_text("lr_stg2 = 0.07\nbatch = 28\nepochs_stg2 = 5\nweight_decay = 1e-4\n")
    out = tmp_path / "outcome.json"
    code = main(["tune", "--teacher", str(pipeline / "teacher.json"), "--data", str(pipeline / "train.jsonl"),
                 "--eval", str(pipeline / "eval.jsonl"), "--dims", "2,32,32,2", "--grid", str(grid),
                 "--out", str(out)])
    assert code == 0
    data = json.loads(out.read_text())
    assert data["best_config"]["lr_stg2"] == 0.07 and data["best_sigma"] <= 0.05


# --------------------------------------------------------------------------
# help


@pytest.mark.parametrize("sub", SUBCOMMANDS)
def test_help_lists_every_flag_with_default(sub, capsys):
    assert main([sub, "--help"]) == 0
    text = capsys.readouterr().out
    sp = build_parser()._subparsers._group_actions[0].choices[sub]
    for action in sp._actions:
        for opt in action.option_strings:
            assert opt in text
        if action.default not in (None, False, "==SUPPRESS==") and action.option_strings != ["-h", "--help"]:
            assert "(default:" in text


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "cnfpreserve", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    for sub in SUBCOMMANDS:
        assert sub in res.stdout
