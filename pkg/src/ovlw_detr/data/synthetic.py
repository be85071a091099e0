"""Colored-shapes dataset with held-out (color, shape) combinations.

Every color and every shape is seen in training, but some pairings only
appear in the holdout split, so detecting them requires composing the two
words through the text embeddings.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import ConfigError
from .samples import GroundingSample, write_grounding_annotations

log = logging.getLogger(__name__)

COLORS = {
    "red": (0.90, 0.10, 0.10),
    "green": (0.10, 0.80, 0.15),
    "blue": (0.10, 0.20, 0.95),
    "yellow": (0.95, 0.90, 0.10),
    "purple": (0.60, 0.15, 0.75),
    "cyan": (0.10, 0.85, 0.85),
}
SHAPES = ("circle", "square", "triangle", "diamond")


@dataclass
class SyntheticShapesSpec:
    colors: tuple = ("red", "green", "blue")
    shapes: tuple = ("circle", "square", "triangle")
    holdout_combinations: tuple = (("red", "triangle"),)
    train_combinations: tuple | None = None   # default: every pair not held out
    num_train: int = 100
    num_holdout: int = 20
    objects_per_image: tuple = (1, 3)
    image_size: int = 96
    size_range: tuple = (16, 32)
    noise: float = 0.08
    seed: int = 0

    def __post_init__(self):
        self.colors = tuple(self.colors)
        self.shapes = tuple(self.shapes)
        self.holdout_combinations = tuple(tuple(c) for c in self.holdout_combinations)
        if self.train_combinations is None:
            self.train_combinations = tuple((c, s) for c in self.colors for s in self.shapes
                                            if (c, s) not in self.holdout_combinations)
        else:
            self.train_combinations = tuple(tuple(c) for c in self.train_combinations)
        self.validate()

    def validate(self):
        for c in self.colors:
            if c not in COLORS:
                raise ConfigError(f"unknown color {c!r}; known: {sorted(COLORS)}")
        for s in self.shapes:
            if s not in SHAPES:
                raise ConfigError(f"unknown shape {s!r}; known: {SHAPES}")
        train, hold = set(self.train_combinations), set(self.holdout_combinations)
        if train & hold:
            raise ConfigError(f"train and holdout combinations overlap: {sorted(train & hold)}")
        for c, s in train | hold:
            if c not in self.colors or s not in self.shapes:
                raise ConfigError(f"combination ({c}, {s}) uses an unlisted color or shape")
        if {c for c, _ in train} != set(self.colors) or {s for _, s in train} != set(self.shapes):
            raise ConfigError("every color and every shape must occur in a train combination")
        lo, hi = self.objects_per_image
        if not 1 <= lo <= hi:
            raise ConfigError("objects_per_image must satisfy 1 <= min <= max")
        if not 4 <= self.size_range[0] <= self.size_range[1] <= self.image_size:
            raise ConfigError("size_range must lie within [4, image_size]")

    @classmethod
    def from_dict(cls, d: dict) -> "SyntheticShapesSpec":
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def phrase_of(color: str, shape: str) -> str:
    return f"{color} {shape}"


def shape_mask(shape: str, size: int, x0: float, y0: float, s: float) -> np.ndarray:
    """Boolean [size, size] mask of a shape inscribed in the box (x0, y0, x0+s, y0+s)."""
    yy, xx = np.mgrid[0:size, 0:size] + 0.5
    u = (xx - x0) / s
    v = (yy - y0) / s
    if shape == "square":
        return (u >= 0) & (u <= 1) & (v >= 0) & (v <= 1)
    if shape == "circle":
        return (u - 0.5) ** 2 + (v - 0.5) ** 2 <= 0.25
    if shape == "diamond":
        return np.abs(u - 0.5) + np.abs(v - 0.5) <= 0.5
    if shape == "triangle":
        # apex at top center, base along the bottom edge
        return (v <= 1) & (v >= 2 * np.abs(u - 0.5))
    raise ConfigError(f"unknown shape {shape!r}")


def _overlaps(box, boxes, margin=2.0):
    for b in boxes:
        if box[0] < b[2] + margin and b[0] < box[2] + margin and box[1] < b[3] + margin and b[1] < box[3] + margin:
            return True
    return False


def render_image(rng: np.random.Generator, spec: SyntheticShapesSpec, combos, count: int):
    size = spec.image_size
    image = (0.5 + spec.noise * rng.standard_normal((size, size, 3))).astype(np.float32)
    boxes, phrases, masks = [], [], []
    placed = 0
    for _ in range(count):
        for _attempt in range(50):
            s = float(rng.integers(spec.size_range[0], spec.size_range[1] + 1))
            x0 = float(rng.integers(0, size - int(s) + 1))
            y0 = float(rng.integers(0, size - int(s) + 1))
            box = (x0, y0, x0 + s, y0 + s)
            if not _overlaps(box, boxes):
                break
        else:
            log.debug("could not place object %d, reducing object count", placed + 1)
            break
        color, shape = combos[int(rng.integers(len(combos)))]
        mask = shape_mask(shape, size, x0, y0, s)
        image[mask] = np.asarray(COLORS[color], dtype=np.float32)
        # annotate the drawn pixels, not the nominal square
        ys, xs = np.nonzero(mask)
        boxes.append((float(xs.min()), float(ys.min()), float(xs.max() + 1), float(ys.max() + 1)))
        phrases.append(phrase_of(color, shape))
        masks.append(mask)
        placed += 1
    return image.clip(0, 1), np.array(boxes, dtype=np.float64).reshape(-1, 4), phrases, masks


def _split(spec, combos, n, rng, first_id, source, keep_masks):
    out = []
    lo, hi = spec.objects_per_image
    for i in range(n):
        count = int(rng.integers(lo, hi + 1))
        image, boxes, phrases, masks = render_image(rng, spec, combos, count)
        extras = {"masks": masks} if keep_masks else {}
        out.append(GroundingSample(first_id + i, spec.image_size, spec.image_size, boxes, phrases,
                                   source, f"{source}/{first_id + i:06d}.png", image, extras))
    return out


def generate_shapes_dataset(spec: SyntheticShapesSpec, keep_masks: bool = False):
    """Return (train, holdout) lists of in-memory samples, pixel-deterministic in ``spec.seed``."""
    spec.validate()
    rng_train = np.random.default_rng(np.random.SeedSequence([spec.seed, 0]))
    rng_hold = np.random.default_rng(np.random.SeedSequence([spec.seed, 1]))
    train = _split(spec, list(spec.train_combinations), spec.num_train, rng_train, 1, "train", keep_masks)
    holdout = _split(spec, list(spec.holdout_combinations), spec.num_holdout, rng_hold,
                     spec.num_train + 1, "holdout", keep_masks)
    return train, holdout


def to_uint8(image: np.ndarray) -> np.ndarray:
    return np.round(image * 255.0).clip(0, 255).astype(np.uint8)


def write_shapes_dataset(spec: SyntheticShapesSpec, out_dir) -> dict:
    """Write PNGs plus train.json / holdout.json (coco-like) and spec.json under ``out_dir``."""
    from PIL import Image

    out = Path(out_dir)
    train, holdout = generate_shapes_dataset(spec)
    paths = {}
    for name, samples in (("train", train), ("holdout", holdout)):
        (out / name).mkdir(parents=True, exist_ok=True)
        for s in samples:
            Image.fromarray(to_uint8(s.image)).save(out / s.file_name, format="PNG")
        paths[name] = out / f"{name}.json"
        write_grounding_annotations(samples, paths[name], format="coco")
    spec_d = spec.to_dict()
    (out / "spec.json").write_text(json.dumps(spec_d, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    return {k: str(v) for k, v in paths.items()}
