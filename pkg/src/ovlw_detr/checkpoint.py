"""Checkpoint archive: model config (JSON text) plus named weight tensors.

Layout of the ``torch.save`` dictionary::

    format       "ovlw-detr-ckpt/1"
    config       JSON text of ModelConfig
    config_hash  16 hex chars, ModelConfig.config_hash()
    weights      {parameter name: tensor}
    train_state  optional: optimizer state, epoch, position, run config
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch

from .config import ModelConfig
from .detector import OVLWDETR
from .errors import ConfigError, FormatError

FORMAT = "ovlw-detr-ckpt/1"


def save_checkpoint(path, model: OVLWDETR, train_state: dict | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format": FORMAT,
        "config": json.dumps(model.cfg.to_dict(), sort_keys=True),
        "config_hash": model.cfg.config_hash(),
        "weights": {k: v.detach().cpu().clone() for k, v in model.state_dict().items()},
    }
    if train_state is not None:
        payload["train_state"] = train_state
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(payload, tmp)
    tmp.replace(path)


def read_checkpoint(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"checkpoint not found: {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as exc:  # noqa: BLE001 - any unpickling failure is a format problem
        raise FormatError(f"cannot read checkpoint: {exc}", path=path) from None
    if not isinstance(payload, dict) or payload.get("format") != FORMAT:
        raise FormatError(f"not a {FORMAT} archive", path=path)
    return payload


def load_weights(model: OVLWDETR, weights: dict) -> None:
    own = model.state_dict()
    missing = sorted(set(own) - set(weights))
    unexpected = sorted(set(weights) - set(own))
    if missing or unexpected:
        raise ConfigError(f"checkpoint weights do not match the model: missing={missing[:5]} "
                          f"unexpected={unexpected[:5]}")
    for k, v in weights.items():
        if tuple(v.shape) != tuple(own[k].shape):
            raise ConfigError(f"shape mismatch for {k}: checkpoint {tuple(v.shape)}, model {tuple(own[k].shape)}")
    model.load_state_dict(weights)


def load_checkpoint(path, config: ModelConfig | None = None):
    """Rebuild the model stored at ``path``; returns (model, payload).

    If ``config`` is given it must agree with the stored weights' shapes.
    """
    payload = read_checkpoint(path)
    cfg = config or ModelConfig.from_dict(json.loads(payload["config"]))
    model = OVLWDETR(cfg)
    load_weights(model, payload["weights"])
    model.eval()
    return model, payload


def export_weights(path, out_dir) -> dict:
    """Write ``config.json`` and ``weights.npz`` (plain arrays) from a checkpoint."""
    payload = read_checkpoint(path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.json").write_text(payload["config"] + "\n", encoding="utf-8")
    np.savez(out / "weights.npz", **{k: v.numpy() for k, v in payload["weights"].items()})
    return {"config": str(out / "config.json"), "weights": str(out / "weights.npz"),
            "config_hash": payload["config_hash"]}
