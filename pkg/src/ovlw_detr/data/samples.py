"""Grounding records and the two on-disk annotation formats.

coco-like (one JSON document)::

    {"images": [{"id": 1, "file_name": "a.png", "width": 96, "height": 96}],
     "annotations": [{"id": 1, "image_id": 1, "bbox": [x, y, w, h], "phrase": "red circle"}]}

odvg-like (JSON lines, one image per line)::

    {"filename": "a.png", "width": 96, "height": 96,
     "regions": [{"bbox": [x0, y0, x1, y1], "phrase": "red circle"}]}

``bbox`` is absolute pixels in both; coco-like uses xywh, odvg-like xyxy.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np

from ..errors import FormatError, InvalidInputError

log = logging.getLogger(__name__)


@dataclass
class GroundingSample:
    image_id: int
    width: int
    height: int
    boxes: np.ndarray                     # [n, 4] xyxy absolute
    phrases: list
    source: str = ""
    file_name: str | None = None
    image: np.ndarray | None = None       # HxWx3 float32 in [0, 1]
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        self.boxes = np.asarray(self.boxes, dtype=np.float64).reshape(-1, 4)
        self.phrases = list(self.phrases)

    def validate(self):
        if len(self.boxes) != len(self.phrases):
            raise InvalidInputError("box and phrase counts differ")
        if self.width <= 0 or self.height <= 0:
            raise InvalidInputError(f"image {self.image_id}: non-positive size")
        for box, phrase in zip(self.boxes, self.phrases):
            if not isinstance(phrase, str) or not phrase.strip():
                raise InvalidInputError(f"image {self.image_id}: empty phrase")
            x0, y0, x1, y1 = box
            if not np.all(np.isfinite(box)):
                raise InvalidInputError(f"image {self.image_id}: non-finite box")
            if x0 < 0 or y0 < 0 or x1 > self.width or y1 > self.height:
                raise InvalidInputError(f"image {self.image_id}: box {box.tolist()} exceeds image bounds "
                                        f"{self.width}x{self.height}")
            if x1 <= x0 or y1 <= y0:
                raise InvalidInputError(f"image {self.image_id}: box {box.tolist()} has non-positive area")

    def load_image(self, root=None) -> np.ndarray:
        if self.image is not None:
            return self.image
        if self.file_name is None:
            raise InvalidInputError(f"image {self.image_id} has neither pixels nor a file name")
        from PIL import Image

        path = Path(root or ".") / self.file_name
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0


def _read_json(path: Path):
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid JSON: {exc.msg}", line=exc.lineno, path=path) from None


def read_grounding_annotations(path, format: str = "coco", skip_invalid: bool = False,
                               source: str | None = None) -> Iterator[GroundingSample]:
    """Yield validated samples. A bad record raises naming its index, or is skipped."""
    path = Path(path)
    if not path.is_file():
        raise FormatError("annotation file not found", path=path)
    source = source or path.stem
    if format == "coco":
        records = _coco_records(path, source)
    elif format == "odvg":
        records = _odvg_records(path, source)
    else:
        raise InvalidInputError(f"unknown annotation format {format!r}")
    for index, make in records:
        try:
            sample = make()
            sample.validate()
        except (InvalidInputError, KeyError, TypeError, ValueError) as exc:
            msg = f"record {index}: {exc}"
            if skip_invalid:
                log.warning("skipping %s", msg)
                continue
            raise InvalidInputError(f"{path}: {msg}") from None
        yield sample


def _coco_records(path, source):
    doc = _read_json(path)
    if not isinstance(doc, dict) or "images" not in doc:
        raise FormatError("coco-like file needs an 'images' list", path=path)
    by_image = {}
    for ann in doc.get("annotations", []):
        by_image.setdefault(ann.get("image_id"), []).append(ann)
    for index, img in enumerate(doc["images"]):
        def make(img=img):
            anns = by_image.get(img["id"], [])
            boxes = [[a["bbox"][0], a["bbox"][1], a["bbox"][0] + a["bbox"][2], a["bbox"][1] + a["bbox"][3]]
                     for a in anns]
            return GroundingSample(int(img["id"]), int(img["width"]), int(img["height"]),
                                   np.array(boxes, dtype=np.float64).reshape(-1, 4),
                                   [a["phrase"] for a in anns], source, img.get("file_name"))
        yield index, make


def _odvg_records(path, source):
    with open(path, encoding="utf-8") as fh:
        for index, line in enumerate(fh):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise FormatError(f"invalid JSON: {exc.msg}", line=index + 1, path=path) from None

            def make(rec=rec, index=index):
                regions = rec.get("regions", [])
                return GroundingSample(int(rec.get("image_id", index)), int(rec["width"]), int(rec["height"]),
                                       np.array([r["bbox"] for r in regions], dtype=np.float64).reshape(-1, 4),
                                       [r["phrase"] for r in regions], source, rec.get("filename"))
            yield index, make


def _num(x: float):
    x = float(x)
    return int(x) if x.is_integer() else round(x, 6)


def write_grounding_annotations(samples, path, format: str = "coco") -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if format == "coco":
        images, anns = [], []
        for s in samples:
            images.append({"id": s.image_id, "file_name": s.file_name, "width": s.width, "height": s.height})
            for box, phrase in zip(s.boxes, s.phrases):
                x0, y0, x1, y1 = box
                anns.append({"id": len(anns) + 1, "image_id": s.image_id,
                             "bbox": [_num(x0), _num(y0), _num(x1 - x0), _num(y1 - y0)], "phrase": phrase})
        path.write_text(json.dumps({"images": images, "annotations": anns}, indent=1, sort_keys=True) + "\n",
                        encoding="utf-8")
    elif format == "odvg":
        with open(path, "w", encoding="utf-8") as fh:
            for s in samples:
                rec = {"image_id": s.image_id, "filename": s.file_name, "width": s.width, "height": s.height,
                       "regions": [{"bbox": [_num(v) for v in box], "phrase": p}
                                   for box, p in zip(s.boxes, s.phrases)]}
                fh.write(json.dumps(rec, sort_keys=True) + "\n")
    else:
        raise InvalidInputError(f"unknown annotation format {format!r}")
