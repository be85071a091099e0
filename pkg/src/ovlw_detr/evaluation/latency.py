"""End-to-end batch-1 latency measurement and an analytic FLOP count."""
from __future__ import annotations

import platform
import statistics
import time
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn.functional as F

from ..config import ModelConfig
from ..errors import ConfigError
from .ap import postprocess


def flop_estimate(cfg: ModelConfig, num_classes: int, mode: str = "eval", batch: int = 1) -> dict:
    """Analytic FLOPs of one forward pass, split by term.

    A multiply-accumulate counts as 2 FLOPs. Normalization, softmax and
    activations are not counted. Only ``alignment_logits`` depends on the
    vocabulary size, linearly.
    """
    E, D, Dt = cfg.encoder_dim, cfg.decoder_dim, cfg.text_dim
    N, p, w = cfg.num_tokens, cfg.patch_size, cfg.window_size
    G = cfg.num_groups if mode == "train" else 1
    Q = cfg.num_queries if mode == "train" else cfg.eval_queries
    QG = Q * G
    logit_layers = cfg.decoder_layers if mode == "train" else 1
    glob = set(cfg.global_attention_layer_indices)

    vit = 0
    for i in range(cfg.encoder_layers):
        span = N if i in glob else w * w
        vit += 2 * (4 * N * E * E + 2 * N * span * E + 8 * N * E * E)
    decoder = cfg.decoder_layers * 2 * (
        2 * QG * D * D                       # ref point head
        + 4 * QG * D * D + 2 * QG * Q * D    # self-attention within groups
        + 2 * QG * D * D + 2 * N * D * D + 2 * QG * N * D  # cross-attention
        + 2 * QG * D * cfg.decoder_ffn_dim   # FFN
        + QG * (2 * D * D + 4 * D))          # box MLP
    terms = {
        "patch_embed": 2 * N * 3 * p * p * E,
        "vit": vit,
        "projector": 2 * N * E * D,
        "selection_head": 2 * N * (D * D + D * Dt + 2 * D * D + 4 * D),
        "decoder": decoder,
        "decoder_head_proj": 2 * logit_layers * QG * D * Dt,
        "alignment_logits": 2 * (N + logit_layers * QG) * Dt * num_classes,
    }
    terms = {k: int(v) * batch for k, v in terms.items()}
    terms["total"] = sum(terms.values())
    return terms


@dataclass
class LatencyStats:
    samples_ms: list
    mean_ms: float
    median_ms: float
    p90_ms: float
    min_ms: float
    trials: int
    warmup: int
    flops: int
    config_hash: str
    size_tag: str
    vocab_size: int
    environment: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def environment_descriptor() -> dict:
    return {
        "python": platform.python_version(),
        "torch": torch.__version__,
        "machine": platform.machine(),
        "processor": platform.processor() or platform.machine(),
        "system": platform.system(),
        "threads": 1,
        "precision": "fp32",
    }


def preprocess(image: np.ndarray, size: int) -> torch.Tensor:
    t = torch.from_numpy(np.ascontiguousarray(image, dtype=np.float32)).permute(2, 0, 1)[None]
    if t.shape[-2:] != (size, size):
        t = F.interpolate(t, size=(size, size), mode="bilinear", align_corners=False)
    return t


def benchmark_latency(model, table, images, trials: int = 20, warmup: int = 5, top_n: int = 300) -> LatencyStats:
    """Time preprocess + forward + postprocess on batch-1 inputs, single-threaded.

    ``images`` is a sequence of HxWx3 float arrays, cycled through. Warmup
    runs are executed and discarded.
    """
    if trials < 10:
        raise ConfigError(f"trials must be >= 10, got {trials}")
    if warmup < 3:
        raise ConfigError(f"warmup must be >= 3, got {warmup}")
    images = list(images)
    if not images:
        raise ConfigError("no images to benchmark on")
    cfg = model.cfg
    table_t = table.as_tensor() if hasattr(table, "as_tensor") else torch.as_tensor(table, dtype=torch.float32)
    was_training = model.training
    threads = torch.get_num_threads()
    model.eval()
    torch.set_num_threads(1)
    samples = []
    try:
        with torch.inference_mode():
            for i in range(warmup + trials):
                img = images[i % len(images)]
                start = time.perf_counter()
                x = preprocess(img, cfg.image_size)
                out = model(x, table_t, mode="eval")
                postprocess(out, [(img.shape[1], img.shape[0])], top_n=top_n)
                elapsed = (time.perf_counter() - start) * 1000.0
                if i >= warmup:
                    samples.append(elapsed)
    finally:
        torch.set_num_threads(threads)
        model.train(was_training)
    return LatencyStats(
        samples_ms=samples,
        mean_ms=statistics.fmean(samples),
        median_ms=statistics.median(samples),
        p90_ms=float(np.percentile(samples, 90)),
        min_ms=min(samples),
        trials=trials,
        warmup=warmup,
        flops=flop_estimate(cfg, table_t.shape[0])["total"],
        config_hash=cfg.config_hash(),
        size_tag=cfg.size_tag,
        vocab_size=int(table_t.shape[0]),
        environment=environment_descriptor(),
    )
