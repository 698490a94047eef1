import csv
import json
import os
import subprocess
import sys

import pytest

from augflat import cli
from augflat.harness import TrainConfig

DATA = "synthetic:mini_images:n=80,k=3"


@pytest.fixture(scope="module")
def checkpoint(tmp_path_factory):
    d = tmp_path_factory.mktemp("ck")
    cfg = d / "train.json"
    cfg.write_text(json.dumps(TrainConfig(epochs=5).to_dict()))
    ck = str(d / "model.bin")
    assert cli.main(["train", "--data", DATA, "--config", str(cfg),
                     "--arch", '{"kind": "mlp", "hidden": [8], "activation": "tanh"}', "--out", ck]) == 0
    return ck


def test_parse_data_synthetic_split():
    tr = cli.parse_data(DATA, "train")
    te = cli.parse_data(DATA, "test")
    assert (len(tr), len(te)) == (64, 16)


def test_duality_check(checkpoint, tmp_path):
    out = tmp_path / "dual.csv"
    rc = cli.main(["duality-check", "--model", checkpoint, "--data", DATA, "--gamma", "0.01",
                   "--samples", "200", "--points", "4", "--report", str(out)])
    rows = list(csv.reader(out.open()))
    assert rc == 0
    assert rows[0] == ["point", "ratio"] and len(rows[1:5]) == 4
    summary = dict(zip(rows[6], rows[7]))
    assert summary["violations"] == "0" and int(summary["samples"]) == 200


def test_psa_ecdf(tmp_path):
    aug = tmp_path / "aug.json"
    aug.write_text(json.dumps({"kind": "gaussian_noise", "params": {"sigma": 0.05}}))
    out = tmp_path / "ecdf.csv"
    assert cli.main(["psa-ecdf", "--aug", str(aug), "--data", DATA, "--n", "50",
                     "--out", str(out)]) == 0
    rows = list(csv.DictReader(out.open()))
    assert [float(r["threshold"]) for r in rows] == [0.01, 0.05, 0.1, 0.5]
    values = [float(r["ecdf"]) for r in rows]
    assert values == sorted(values)


def test_flatness(checkpoint, tmp_path):
    out = tmp_path / "flat.json"
    assert cli.main(["flatness", "--model", checkpoint, "--data", DATA, "--preset", "inet",
                     "--out", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert {"mu_pac_bayes", "lpf", "eps_sharp", "b_hat", "tol_b"} <= set(rep)


def test_attack(checkpoint, tmp_path):
    out = tmp_path / "adv.json"
    assert cli.main(["attack", "--model", checkpoint, "--data", DATA, "--preset", "cifar-linf",
                     "--out", str(out)]) == 0
    rep = json.loads(out.read_text())
    assert rep["adv_error"] >= rep["clean_error"]


@pytest.mark.parametrize("fmt", ["csv", "idx"])
def test_corrupt(tmp_path, fmt):
    out = tmp_path / "c"
    assert cli.main(["corrupt", "--data", DATA, "--kinds", "contrast,pixelate",
                     "--severities", "1..2", "--out-dir", str(out), "--format", fmt]) == 0
    assert len(os.listdir(out)) == 4
    from augflat.io import load_dataset
    first = sorted(os.listdir(out))[0]
    assert len(load_dataset(str(out / first))) == 16


def _experiment(tmp_path, arms, dataset=None):
    cfg = {
        "dataset": dataset or {"synthetic": {"kind": "mini_images", "n": 60, "k": 3}},
        "model": {"kind": "mlp", "hidden": [8]},
        "arms": arms, "seeds": [0],
        "flatness_overrides": {"mc_samples": 4, "search": [1e-4, 1.0, 4], "sharp_restarts": 1,
                               "sharp_steps": 2, "b_probes": 0},
        "attacks": ["cifar-l2"], "corruptions": ["contrast"], "severities": [1], "psa_n": 10,
    }
    path = tmp_path / "exp.json"
    path.write_text(json.dumps(cfg))
    return str(path)


def test_run_experiment_exit_codes(tmp_path):
    good = _experiment(tmp_path, [["erm", {"epochs": 2}]])
    assert cli.main(["run-experiment", "--config", good, "--out-dir", str(tmp_path / "a")]) == 0
    bad = _experiment(tmp_path, [["erm", {"epochs": 2}],
                                 ["boom", {"epochs": 2, "augmentation": {"kind": "hflip"}}]],
                      {"synthetic": {"kind": "gaussian_blobs", "n": 60}})
    assert cli.main(["run-experiment", "--config", bad, "--out-dir", str(tmp_path / "b")]) == 1


def test_rank_deficient_point_is_reported(tmp_path, capsys):
    import numpy as np
    from augflat.io import save_checkpoint
    from augflat.nnet import Model
    m = Model.mlp(64, [4], 3)
    ck = str(tmp_path / "dead.bin")
    save_checkpoint(ck, m, np.zeros(m.param_count))
    rc = cli.main(["duality-check", "--model", ck, "--data", DATA, "--gamma", "0.1",
                   "--samples", "10", "--report", str(tmp_path / "r.csv")])
    assert rc == 2 and "rank-deficient" in capsys.readouterr().err


def test_console_entry_point_help():
    r = subprocess.run([sys.executable, "-m", "augflat.cli", "--help"], capture_output=True, text=True)
    assert r.returncode == 0
    for sub in ("train", "run-experiment", "duality-check", "psa-ecdf", "flatness", "attack", "corrupt"):
        assert sub in r.stdout
