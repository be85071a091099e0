import json

import numpy as np
import pytest
import torch

from ovlw_detr.checkpoint import load_checkpoint, read_checkpoint
from ovlw_detr.cli import main
from ovlw_detr.text_embedding import load_embedding_table

TINY_MODEL = dict(image_size=32, window_size=2, num_queries=6, eval_queries=6, num_groups=2, encoder_dim=32,
                  encoder_layers=2, encoder_heads=2, global_attention_layer_indices=[1], decoder_dim=32,
                  decoder_heads=2, decoder_ffn_dim=64, decoder_layers=2, text_dim=32)


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    spec = {"num_train": 6, "num_holdout": 2, "image_size": 48, "size_range": [10, 16]}
    (root / "spec.json").write_text(json.dumps(spec))
    assert main(["synth-data", "--config", str(root / "spec.json"), "--out", str(root / "data")]) == 0
    run = {"model": TINY_MODEL, "train": {"epochs": 2, "batch_size": 4, "max_vocab": 8},
           "sources": [{"name": "shapes", "annotations": str(root / "data" / "train.json")}]}
    (root / "run.json").write_text(json.dumps(run))
    assert main(["train", "--config", str(root / "run.json"), "--out", str(root / "run"), "--seed", "1"]) == 0
    return root


def test_train_outputs(workspace):
    run = workspace / "run"
    assert (run / "checkpoint_epoch001.pt").is_file() and (run / "checkpoint_epoch002.pt").is_file()
    lines = (run / "metrics.jsonl").read_text().splitlines()
    assert len(lines) == 4  # 2 epochs x ceil(6 / 4)
    assert all(np.isfinite(json.loads(ln)["total"]) for ln in lines)
    state = read_checkpoint(run / "last.pt")["train_state"]
    assert state["epoch"] == 2 and state["global_step"] == 4


def test_resume_continues_where_it_stopped(workspace, tmp_path):
    run = json.loads((workspace / "run.json").read_text())
    run["train"]["epochs"] = 3
    (tmp_path / "run.json").write_text(json.dumps(run))
    assert main(["train", "--config", str(tmp_path / "run.json"), "--out", str(tmp_path / "r"), "--seed", "1",
                 "--resume", str(workspace / "run" / "last.pt")]) == 0
    lines = [json.loads(ln) for ln in (tmp_path / "r" / "metrics.jsonl").read_text().splitlines()]
    assert [r["step"] for r in lines] == [4, 5] and {r["epoch"] for r in lines} == {2}


def test_embed_eval_bench_export(workspace, tmp_path, capsys):
    vocab = tmp_path / "vocab.txt"
    combos = [f"{c} {s}" for c in ("red", "green", "blue") for s in ("circle", "square", "triangle")]
    vocab.write_text("\n".join(combos) + "\n")
    assert main(["embed", str(vocab), "--dim", "32", "--out", str(tmp_path / "t.emb")]) == 0
    assert len(load_embedding_table(tmp_path / "t.emb")) == 9

    ckpt = str(workspace / "run" / "last.pt")
    data = str(workspace / "data" / "holdout.json")
    assert main(["eval", ckpt, "--table", str(tmp_path / "t.emb"), "--data", data, "--out", str(tmp_path / "ev"),
                 "--train-data", str(workspace / "data" / "train.json")]) == 0
    report = json.loads((tmp_path / "ev" / "report.json").read_text())
    assert 0 <= report["ap"] <= 1 and report["size_tag"] == "S"
    assert report["ap_r"] is not None  # red triangle never appears in training: rare
    assert (tmp_path / "ev" / "report.txt").read_text().startswith("Model")
    assert isinstance(json.loads((tmp_path / "ev" / "detections.json").read_text()), list)

    assert main(["eval", ckpt, "--vocab", str(vocab), "--data", data, "--out", str(tmp_path / "or"),
                 "--oracle"]) == 0
    assert json.loads((tmp_path / "or" / "report.json").read_text())["ap"] == 1.0

    assert main(["bench", ckpt, "--vocab", str(vocab), "--out", str(tmp_path / "b"), "--trials", "10",
                 "--warmup", "3"]) == 0
    lat = json.loads((tmp_path / "b" / "latency.json").read_text())
    model, payload = load_checkpoint(ckpt)
    assert lat["config_hash"] == payload["config_hash"] == model.cfg.config_hash()
    assert len(lat["samples_ms"]) == 10 and lat["vocab_size"] == 9

    assert main(["export", ckpt, "--out", str(tmp_path / "x")]) == 0
    npz = np.load(tmp_path / "x" / "weights.npz")
    sd = model.state_dict()
    assert set(npz.files) == set(sd)
    assert all(np.array_equal(npz[k], sd[k].numpy()) for k in sd)


def test_exit_codes(workspace, tmp_path, capsys):
    assert main(["train", "--config", str(tmp_path / "missing.json")]) == 2
    bad = {"model": {"image_size": 33}}
    (tmp_path / "bad.json").write_text(json.dumps(bad))
    assert main(["train", "--config", str(tmp_path / "bad.json")]) == 2
    assert "error:" in capsys.readouterr().err
    assert main(["eval", str(workspace / "run" / "last.pt"), "--table", str(tmp_path / "none.emb"),
                 "--data", str(workspace / "data" / "holdout.json"), "--out", str(tmp_path / "e")]) == 3
    (tmp_path / "t.emb").write_text("OVLW-EMB v1 dim=8 count=0\n")
    assert main(["eval", str(workspace / "run" / "last.pt"), "--table", str(tmp_path / "t.emb"),
                 "--data", str(workspace / "data" / "holdout.json"), "--out", str(tmp_path / "e")]) == 2


def test_nan_loss_dumps_batch(workspace, tmp_path, monkeypatch):
    from ovlw_detr import train as train_mod
    from ovlw_detr.config import RunConfig, preset
    from ovlw_detr.errors import NumericalError

    run = json.loads((workspace / "run.json").read_text())
    run["output_dir"] = str(tmp_path / "nan")
    trainer = train_mod.Trainer(RunConfig.from_dict(run, base=preset("desk-scale")))
    real = train_mod.group_detr_loss

    def poisoned(*a, **k):
        out = real(*a, **k)
        out.total = out.total * torch.tensor(float("nan"))
        return out

    monkeypatch.setattr(train_mod, "group_detr_loss", poisoned)
    with pytest.raises(NumericalError, match="nan_batch.json"):
        trainer.fit(max_steps=1)
    dump = json.loads((tmp_path / "nan" / "nan_batch.json").read_text())
    assert dump["step"] == 0 and len(dump["draws"]) == 4
