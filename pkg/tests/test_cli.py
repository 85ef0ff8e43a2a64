import json
import os

import pytest

from fairlong.cli import main

SMALL = """
[dataset]
n = 160
d = 3
horizon = 4
[model]
classifier_hidden = 4, 4
generator_hidden = 5, 5
noise_dim = 2
[training]
epochs = 2
gan_rounds = 2
rgd_rounds = 2
batch_size = 64
target_T = 4
[evaluation]
setting1_T = 4
setting2_start = 3
setting2_T = 5
n_repeats = 1
"""


@pytest.fixture()
def cfg_path(tmp_path):
    p = tmp_path / "cfg.ini"
    p.write_text(SMALL)
    return str(p)


def _tree(root):
    out = {}
    for base, _, files in os.walk(root):
        for f in files:
            path = os.path.join(base, f)
            with open(path, "rb") as fh:
                out[os.path.relpath(path, root)] = fh.read()
    return out


def test_full_pipeline(tmp_path, cfg_path, capsys):
    out = str(tmp_path / "run")
    args = ["--config", cfg_path, "--out", out]
    assert main(["generate", *args]) == 0
    for phase in ("phase1", "rcgan", "deeplf", "baseline-dp", "baseline-eo"):
        assert main(["train", "--phase", phase, *args]) == 0, phase
    capsys.readouterr()
    assert main(["evaluate", "--setting", "1", *args]) == 0
    table = capsys.readouterr().out.splitlines()
    assert table[0] == "model,mean_accuracy,mean_local_unfairness,long_term_j1"
    assert {r.split(",")[0] for r in table[1:]} == {"mlp", "mlp-dp", "mlp-eo", "deeplf"}
    assert main(["evaluate", "--setting", "2", "--models", "phase1,deeplf", *args]) == 0
    rep = json.load(open(os.path.join(out, "reports", "setting2", "deeplf.json")))
    assert [r["t"] for r in rep["per_step"]] == [3, 4, 5]
    assert main(["report", "--setting", "1", *args]) == 0
    assert os.path.getsize(os.path.join(out, "figures", "setting1_per_step.png")) > 0
    assert os.path.getsize(os.path.join(out, "figures", "setting1_long_term.png")) > 0
    log = open(os.path.join(out, "logs", "deeplf.jsonl")).read().splitlines()
    assert len(log) == 2 and {"j1", "j2", "j3_mean"} <= set(json.loads(log[0]))


def test_generate_is_byte_identical_per_seed(tmp_path, cfg_path):
    a, b, c = (str(tmp_path / k) for k in "abc")
    assert main(["generate", "--config", cfg_path, "--out", a, "--seed", "4"]) == 0
    assert main(["generate", "--config", cfg_path, "--out", b, "--seed", "4"]) == 0
    assert main(["generate", "--config", cfg_path, "--out", c, "--seed", "5"]) == 0
    assert _tree(a) == _tree(b)
    assert _tree(a)["data/train.csv"] != _tree(c)["data/train.csv"]


def test_invalid_config_exits_2_before_writing(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[training]\nlambda_long = -1\n")
    out = tmp_path / "run"
    assert main(["generate", "--config", str(bad), "--out", str(out)]) == 2
    assert "[training] lambda_long" in capsys.readouterr().err
    assert not out.exists()


def test_missing_prerequisites_exit_3(tmp_path, cfg_path, capsys):
    out = str(tmp_path / "run")
    assert main(["train", "--phase", "deeplf", "--config", cfg_path, "--out", out]) == 3
    assert "missing prerequisite" in capsys.readouterr().err
    assert main(["evaluate", "--config", cfg_path, "--out", out]) == 3
    assert main(["report", "--config", cfg_path, "--out", out]) == 3


def test_unknown_model_exits_2(tmp_path, cfg_path):
    out = str(tmp_path / "run")
    assert main(["generate", "--config", cfg_path, "--out", out]) == 0
    assert main(["train", "--phase", "phase1", "--config", cfg_path, "--out", out]) == 0
    assert main(["train", "--phase", "rcgan", "--config", cfg_path, "--out", out]) == 0
    assert main(["evaluate", "--models", "svm", "--config", cfg_path, "--out", out]) == 2
