"""Glue shared by training, evaluation and the CLI."""
from __future__ import annotations

import logging
from pathlib import Path

import numpy as np
import torch

from .data.samples import GroundingSample, read_grounding_annotations
from .errors import ConfigError, DataError
from .evaluation.ap import GroundTruth, evaluate_ap, postprocess
from .evaluation.latency import preprocess
from .text_embedding import (DEFAULT_TEMPLATE, EmbeddingTable, TableEncoder, VocabularySpec,
                             encode_vocabulary, load_embedding_table, make_encoder, normalize_phrase)

log = logging.getLogger(__name__)


class TextEmbedder:
    """Frozen phrase -> vector lookup for a fixed phrase pool.

    The pool is encoded once up front; per-batch vocabularies are row
    subsets of that table, so nothing downstream can modify it.
    """

    def __init__(self, encoder: str, phrases, dim: int, seed: int = 0,
                 template: str = DEFAULT_TEMPLATE):
        phrases = sorted({normalize_phrase(p) for p in phrases})
        vocab = VocabularySpec(tuple(phrases), template, normalization=False)
        if encoder.startswith("file:"):
            base = load_embedding_table(encoder[5:])
            fn = TableEncoder(base, template)
            tag = base.source_tag
        else:
            fn = make_encoder(encoder, dim=dim, seed=seed)
            tag = encoder
        self.table = encode_vocabulary(vocab, fn, source_tag=tag)
        if len(self.table) and self.table.dim != dim:
            raise ConfigError(f"text embeddings have dim {self.table.dim}, model expects {dim}")
        self.encoder = encoder

    def table_for(self, vocab: VocabularySpec) -> EmbeddingTable:
        try:
            return self.table.subset(vocab.entries)
        except KeyError as exc:
            raise DataError(f"phrase {exc.args[0]!r} is outside the embedded phrase pool") from None

    def content_hash(self) -> str:
        return self.table.content_hash()


def load_source(path, format: str = "coco", skip_invalid: bool = False) -> list:
    path = Path(path)
    samples = list(read_grounding_annotations(path, format, skip_invalid=skip_invalid))
    for s in samples:
        s.extras.setdefault("root", str(path.parent))
    return samples


def sample_image(sample: GroundingSample) -> np.ndarray:
    return sample.load_image(sample.extras.get("root"))


def collate(samples, labels, image_size: int):
    """Stack resized samples into a batch tensor and DETR-style targets."""
    images, targets = [], []
    for s, lab in zip(samples, labels):
        if s.width != image_size or s.height != image_size:
            raise DataError(f"sample {s.image_id} is {s.width}x{s.height}, expected {image_size}")
        images.append(torch.from_numpy(np.ascontiguousarray(s.image, dtype=np.float32)).permute(2, 0, 1))
        b = torch.as_tensor(s.boxes, dtype=torch.float32) / image_size
        cxcywh = torch.stack([(b[:, 0] + b[:, 2]) / 2, (b[:, 1] + b[:, 3]) / 2,
                              b[:, 2] - b[:, 0], b[:, 3] - b[:, 1]], dim=-1) if len(b) else b.reshape(0, 4)
        targets.append({"labels": torch.as_tensor(lab, dtype=torch.long).reshape(-1), "boxes": cxcywh})
    return torch.stack(images), targets


def ground_truth_for(samples, table: EmbeddingTable):
    gts = []
    for s in samples:
        for box, phrase in zip(s.boxes, s.phrases):
            p = normalize_phrase(phrase)
            if p not in table._index:
                raise DataError(f"ground-truth phrase {p!r} is not in the evaluation vocabulary")
            gts.append(GroundTruth(s.image_id, table.index(p), tuple(float(v) for v in box)))
    return gts


@torch.no_grad()
def predict(model, samples, table: EmbeddingTable, top_n: int = 300, batch_size: int = 8):
    """Eval-mode detections for every sample, boxes in original pixel coordinates."""
    model.eval()
    table_t = table.as_tensor()
    out = []
    for i in range(0, len(samples), batch_size):
        chunk = samples[i:i + batch_size]
        x = torch.cat([preprocess(sample_image(s), model.cfg.image_size) for s in chunk])
        res = model(x, table_t, mode="eval")
        out.extend(postprocess(res, [(s.width, s.height) for s in chunk], top_n=top_n,
                               image_ids=[s.image_id for s in chunk]))
    return out


def oracle_detections(samples, table: EmbeddingTable):
    """Perfect detections built from the ground truth (harness self-test)."""
    from .evaluation.ap import Detection

    return [[Detection(g.image_id, g.category, 1.0, g.box) for g in ground_truth_for([s], table)]
            for s in samples]


def evaluate_model(model, samples, table: EmbeddingTable, top_n: int = 300, buckets=None,
                   iou_thresholds=None, detections=None):
    dets = predict(model, samples, table, top_n) if detections is None else detections
    gts = ground_truth_for(samples, table)
    kw = {} if iou_thresholds is None else {"iou_thresholds": iou_thresholds}
    report = evaluate_ap(dets, gts, buckets=buckets, category_names=list(table.names), **kw)
    report.vocab_size = len(table)
    return report, dets


def category_image_counts(samples, names) -> list:
    """Number of images containing each name, for frequency bucketing."""
    index = {n: i for i, n in enumerate(names)}
    counts = [0] * len(names)
    for s in samples:
        for p in {normalize_phrase(p) for p in s.phrases}:
            if p in index:
                counts[index[p]] += 1
    return counts
