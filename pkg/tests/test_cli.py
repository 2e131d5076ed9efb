"""End-to-end CLI tests: generation, training, cross-validation, risk
decomposition, determinism of outputs, and exit codes."""

import json
import os

import numpy as np
import pytest

from neucredit import cli
from neucredit.checkpoint import load_checkpoint
from neucredit.data import load_consumer_dataset, load_flat_dataset
from neucredit.training import TrainingDiverged

FAST = ["--max-epochs", "2", "--patience", "2", "--batch-size", "50",
        "--hidden", "2", "--d-m", "2", "--d-z", "2",
        "--max-loans", "8", "--max-events", "6"]


def run(argv):
    return cli.main(argv)


def gen_flat(tmp_path, name="flat.jsonl", n=14, length=5, seed=11):
    path = str(tmp_path / name)
    assert run(["generate", "--kind", "synthetic", "--n", str(n), "--len",
                str(length), "--seed", str(seed), "--out", path]) == 0
    return path


def gen_portfolio(tmp_path, name="port.jsonl", n=24, seed=12):
    path = str(tmp_path / name)
    assert run(["generate", "--kind", "portfolio", "--n", str(n), "--seed",
                str(seed), "--out", path]) == 0
    return path


# ---------------------------------------------------------------------------
# generate

def test_generate_synthetic_is_deterministic(tmp_path, capsys):
    p1 = gen_flat(tmp_path, "a.jsonl")
    p2 = gen_flat(tmp_path, "b.jsonl")
    assert open(p1, "rb").read() == open(p2, "rb").read()
    out = capsys.readouterr().out
    assert "positive fraction" in out
    assert len(load_flat_dataset(p1)) == 14


def test_generate_seed_changes_output(tmp_path):
    p1 = gen_flat(tmp_path, "a.jsonl", seed=1)
    p2 = gen_flat(tmp_path, "b.jsonl", seed=2)
    assert open(p1, "rb").read() != open(p2, "rb").read()
    p3 = str(tmp_path / "c.jsonl")
    run(["generate", "--n", "14", "--len", "5", "--seed", "1",
         "--per-sequence-params", "--out", p3])
    assert open(p1, "rb").read() != open(p3, "rb").read()


def test_generate_portfolio_loads_back(tmp_path, capsys):
    p = gen_portfolio(tmp_path)
    cons = load_consumer_dataset(p)
    assert len(cons) == 24
    assert "consumers" in capsys.readouterr().out


# ---------------------------------------------------------------------------
# train

def test_train_writes_checkpoint_and_history(tmp_path):
    data = gen_flat(tmp_path)
    ckpt = str(tmp_path / "model.json")
    hist = str(tmp_path / "hist.csv")
    assert run(["train", "--data", data, "--model", "tva", "--seed", "3",
                "--checkpoint", ckpt, "--history", hist] + FAST) == 0
    model, scaler, meta = load_checkpoint(ckpt)
    assert meta["model"] == "tva" and meta["view"] == "loan"
    assert meta["loss"] == "bce" and meta["seed"] == 3
    assert meta["best_epoch"] >= 1
    lines = open(hist).read().strip().split("\n")
    assert lines[0] == "epoch,train_loss,val_loss,val_auc"
    assert len(lines) >= 2
    first = lines[1].split(",")
    assert first[0] == "1"
    assert all(np.isfinite(float(x)) for x in first[1:])


def test_train_default_history_path(tmp_path):
    data = gen_flat(tmp_path)
    ckpt = str(tmp_path / "m.json")
    assert run(["train", "--data", data, "--model", "lstm", "--checkpoint",
                ckpt] + FAST) == 0
    assert os.path.exists(str(tmp_path / "m_history.csv"))


def test_train_neucredit_end_to_end(tmp_path):
    data = gen_portfolio(tmp_path)
    ckpt = str(tmp_path / "nc.json")
    assert run(["train", "--data", data, "--model", "neucredit", "--loss",
                "conditional", "--seed", "5", "--checkpoint", ckpt] + FAST) == 0
    model, scaler, meta = load_checkpoint(ckpt)
    assert meta["loss"] == "conditional"
    assert model.config.head == "decomposed"


def test_train_loss_pairing_is_enforced(tmp_path):
    data = gen_portfolio(tmp_path)
    ckpt = str(tmp_path / "x.json")
    assert run(["train", "--data", data, "--model", "neucredit",
                "--checkpoint", ckpt] + FAST) == 2
    assert run(["train", "--data", data, "--model", "tva", "--loss",
                "conditional", "--checkpoint", ckpt] + FAST) == 2
    assert not os.path.exists(ckpt)


def test_view_validation(tmp_path):
    flat = gen_flat(tmp_path)
    port = gen_portfolio(tmp_path)
    ckpt = str(tmp_path / "x.json")
    assert run(["train", "--data", port, "--model", "mvm-tva", "--view",
                "loan", "--checkpoint", ckpt] + FAST) == 2
    assert run(["train", "--data", port, "--model", "tva", "--view", "all",
                "--checkpoint", ckpt] + FAST) == 2
    assert run(["train", "--data", flat, "--model", "tva", "--view", "order",
                "--checkpoint", ckpt] + FAST) == 2
    assert run(["train", "--data", flat, "--model", "mvm-tva",
                "--checkpoint", ckpt] + FAST) == 2


def test_bad_data_exits_3(tmp_path):
    bad = tmp_path / "bad.jsonl"
    bad.write_text('{"sequence_id": "s", "steps": [{"features": [0.0], "y": 7}]}\n')
    ckpt = str(tmp_path / "x.json")
    assert run(["train", "--data", str(bad), "--model", "lstm",
                "--checkpoint", ckpt] + FAST) == 3


def test_divergence_exits_4(tmp_path, monkeypatch):
    data = gen_flat(tmp_path)
    ckpt = str(tmp_path / "x.json")

    def boom(*a, **k):
        raise TrainingDiverged("non-finite loss in epoch 1, batch starting at 0")

    monkeypatch.setattr(cli, "train", boom)
    assert run(["train", "--data", data, "--model", "lstm",
                "--checkpoint", ckpt] + FAST) == 4


def test_unknown_model_is_an_argparse_error(tmp_path):
    data = gen_flat(tmp_path)
    with pytest.raises(SystemExit) as exc:
        run(["train", "--data", data, "--model", "transformer",
             "--checkpoint", str(tmp_path / "x.json")])
    assert exc.value.code == 2


# ---------------------------------------------------------------------------
# cv

def cv_args(data, out, models, seed="7"):
    argv = ["cv", "--data", data, "--seed", seed, "--out", out]
    for m in models:
        argv += ["--model", m]
    return argv + FAST


def test_cv_runs_are_byte_identical(tmp_path, monkeypatch):
    data = gen_portfolio(tmp_path)
    out1, out2, out3 = (str(tmp_path / n) for n in ("r1.csv", "r2.csv", "r3.csv"))
    models = ["random", "lr-loan", "lr-all", "mvm-tva"]
    assert run(cv_args(data, out1, models)) == 0
    assert run(cv_args(data, out2, models)) == 0
    assert open(out1, "rb").read() == open(out2, "rb").read()
    monkeypatch.setenv("NEUCREDIT_THREADS", "3")
    assert run(cv_args(data, out3, models)) == 0
    assert open(out1, "rb").read() == open(out3, "rb").read()


def test_cv_csv_structure(tmp_path):
    data = gen_flat(tmp_path)
    out = str(tmp_path / "res.csv")
    assert run(cv_args(data, out, ["random", "lstm", "lstm", "tva"])) == 0
    lines = open(out).read().strip().split("\n")
    assert lines[0] == "method,auc_1,auc_2,auc_3,auc_4,auc_5,avg_auc,sd"
    methods = [l.split(",")[0] for l in lines[1:]]
    assert methods == ["random", "lstm", "tva"]  # duplicates collapse
    for line in lines[1:]:
        cells = line.split(",")[1:]
        assert len(cells) == 7
        vals = [float(x) for x in cells]
        assert abs(np.mean(vals[:5]) - vals[5]) < 1e-15
        assert abs(np.std(vals[:5]) - vals[6]) < 1e-15


def test_cv_seed_changes_results(tmp_path):
    data = gen_portfolio(tmp_path)
    out1, out2 = str(tmp_path / "a.csv"), str(tmp_path / "b.csv")
    assert run(cv_args(data, out1, ["lr-loan"], seed="7")) == 0
    assert run(cv_args(data, out2, ["lr-loan"], seed="8")) == 0
    assert open(out1).read() != open(out2).read()


# ---------------------------------------------------------------------------
# decompose

def test_decompose_writes_factor_scores(tmp_path):
    data = gen_portfolio(tmp_path)
    ckpt = str(tmp_path / "nc.json")
    assert run(["train", "--data", data, "--model", "neucredit", "--loss",
                "conditional", "--seed", "5", "--checkpoint", ckpt] + FAST) == 0
    out = str(tmp_path / "risk.csv")
    assert run(["decompose", "--data", data, "--checkpoint", ckpt,
                "--out", out]) == 0
    lines = open(out).read().strip().split("\n")
    assert lines[0] == "consumer_id,loan_index,y,r,y_hat,y_a,y_w,y_b"
    cons = load_consumer_dataset(data)
    assert len(lines) - 1 == sum(len(c.loans) for c in cons)
    for line in lines[1:]:
        cid, idx, y, r, y_hat, y_a, y_w, y_b = line.split(",")
        assert y in ("0", "1")
        # the combined score is exactly the product of its factors
        assert float(y_hat) == (float(y_a) * float(y_w)) * float(y_b)
        for v in (y_hat, y_a, y_w, y_b):
            assert 0.0 < float(v) < 1.0


def test_decompose_rejects_plain_head(tmp_path):
    data = gen_portfolio(tmp_path)
    flat = gen_flat(tmp_path)
    ckpt = str(tmp_path / "plain.json")
    assert run(["train", "--data", data, "--model", "mvm-tva",
                "--checkpoint", ckpt] + FAST) == 0
    out = str(tmp_path / "risk.csv")
    assert run(["decompose", "--data", data, "--checkpoint", ckpt,
                "--out", out]) == 2
    # and consumer data is required
    ckpt2 = str(tmp_path / "nc.json")
    assert run(["train", "--data", data, "--model", "neucredit", "--loss",
                "conditional", "--checkpoint", ckpt2] + FAST) == 0
    assert run(["decompose", "--data", flat, "--checkpoint", ckpt2,
                "--out", out]) == 2
