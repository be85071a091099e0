"""Training augmentation: random horizontal flip, random crop, square resize."""
from __future__ import annotations

import dataclasses
import logging

import numpy as np
import torch
import torch.nn.functional as F

from .samples import GroundingSample

log = logging.getLogger(__name__)

CROP_SCALE = (0.5, 1.0)
CROP_ASPECT = (0.75, 1.33)
CROP_RETRIES = 10
MIN_BOX_SIDE = 1.0


def hflip_boxes(boxes: np.ndarray, width: float) -> np.ndarray:
    out = boxes.copy()
    out[:, 0] = width - boxes[:, 2]
    out[:, 2] = width - boxes[:, 0]
    return out


def hflip(sample: GroundingSample) -> GroundingSample:
    image = None if sample.image is None else np.ascontiguousarray(sample.image[:, ::-1])
    return dataclasses.replace(sample, image=image, boxes=hflip_boxes(sample.boxes, sample.width))


def crop(sample: GroundingSample, x0: int, y0: int, w: int, h: int) -> GroundingSample:
    """Crop to the window, clip boxes, drop boxes thinner than a pixel."""
    boxes = sample.boxes - np.array([x0, y0, x0, y0], dtype=np.float64)
    boxes[:, [0, 2]] = boxes[:, [0, 2]].clip(0, w)
    boxes[:, [1, 3]] = boxes[:, [1, 3]].clip(0, h)
    keep = ((boxes[:, 2] - boxes[:, 0]) >= MIN_BOX_SIDE) & ((boxes[:, 3] - boxes[:, 1]) >= MIN_BOX_SIDE)
    image = None if sample.image is None else sample.image[y0:y0 + h, x0:x0 + w]
    return dataclasses.replace(sample, image=image, width=w, height=h, boxes=boxes[keep],
                               phrases=[p for p, k in zip(sample.phrases, keep) if k])


def resize(sample: GroundingSample, size: int) -> GroundingSample:
    """Stretch to size x size; boxes scale independently along x and y."""
    sx, sy = size / sample.width, size / sample.height
    boxes = sample.boxes * np.array([sx, sy, sx, sy])
    boxes = boxes.clip(0, size)
    image = None
    if sample.image is not None:
        t = torch.from_numpy(np.ascontiguousarray(sample.image, dtype=np.float32)).permute(2, 0, 1)[None]
        t = F.interpolate(t, size=(size, size), mode="bilinear", align_corners=False,
                          antialias=size < max(sample.width, sample.height))
        image = t[0].permute(1, 2, 0).clamp(0, 1).numpy()
    return dataclasses.replace(sample, image=image, width=size, height=size, boxes=boxes)


def random_crop_window(rng: np.random.Generator, width: int, height: int):
    area = width * height
    scale = rng.uniform(*CROP_SCALE)
    aspect = np.exp(rng.uniform(np.log(CROP_ASPECT[0]), np.log(CROP_ASPECT[1])))
    w = int(round(np.sqrt(area * scale * aspect)))
    h = int(round(np.sqrt(area * scale / aspect)))
    w, h = max(1, min(w, width)), max(1, min(h, height))
    x0 = int(rng.integers(0, width - w + 1))
    y0 = int(rng.integers(0, height - h + 1))
    return x0, y0, w, h


def augment(sample: GroundingSample, seed, size: int = 640, flip_prob: float = 0.5,
            crop_prob: float = 0.5) -> GroundingSample:
    """Flip, crop (keeping at least one box), resize. Deterministic per (sample, seed)."""
    rng = np.random.default_rng(seed)
    if rng.random() < flip_prob:
        sample = hflip(sample)
    if rng.random() < crop_prob and len(sample.boxes):
        for _ in range(CROP_RETRIES):
            cropped = crop(sample, *random_crop_window(rng, sample.width, sample.height))
            if len(cropped.boxes):
                sample = cropped
                break
        else:
            log.debug("image %s: no crop kept a box, crop skipped", sample.image_id)
    return resize(sample, size)
