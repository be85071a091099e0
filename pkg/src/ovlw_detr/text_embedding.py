"""Class-name text embeddings.

The detector never owns a text tower. Category names are turned into unit
vectors once, stored in an :class:`EmbeddingTable`, and handed to the model at
run time. Two encoders are provided: a deterministic character-trigram hash
encoder (``toy_text_encoder``) whose similarities follow shared substrings,
and a phrase-keyed random encoder with no such structure, used as a control.
Tables exported from any external encoder can be loaded from disk.
"""
from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from functools import partial
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, EncodingError, FormatError, InvalidInputError

DEFAULT_TEMPLATE = "a photo of a {}"
NORM_TOL = 1e-5
FILE_MAGIC = "OVLW-EMB"
FILE_VERSION = "v1"

_PUNCT = re.compile(r"[^\w\s-]", flags=re.UNICODE)
_SPACE = re.compile(r"\s+")


def normalize_phrase(phrase: str) -> str:
    """Lowercase, drop punctuation other than hyphens, collapse whitespace."""
    phrase = _PUNCT.sub(" ", phrase.lower()).replace("_", " ")
    return _SPACE.sub(" ", phrase).strip()


@dataclass(frozen=True)
class VocabularySpec:
    entries: tuple[str, ...]
    prompt_template: str = DEFAULT_TEMPLATE
    normalization: bool = True

    def __post_init__(self):
        entries = tuple(self.entries)
        if self.normalization:
            entries = tuple(normalize_phrase(e) for e in entries)
        object.__setattr__(self, "entries", entries)
        if self.prompt_template.count("{}") != 1:
            raise ConfigError(
                f"prompt_template must contain exactly one '{{}}' placeholder: {self.prompt_template!r}")
        seen = set()
        for e in entries:
            if not e:
                raise InvalidInputError("vocabulary entries must be non-empty")
            if e in seen:
                raise InvalidInputError(f"duplicate vocabulary entry after normalization: {e!r}")
            seen.add(e)

    def __len__(self):
        return len(self.entries)

    def prompts(self) -> list[str]:
        return [self.prompt_template.format(e) for e in self.entries]


@dataclass(frozen=True)
class EmbeddingTable:
    """Immutable [C x D] matrix of unit-norm rows, one per category name."""

    names: tuple[str, ...]
    vectors: np.ndarray
    source_tag: str = "toy"
    _index: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        names = tuple(self.names)
        vectors = np.array(self.vectors, dtype=np.float64, copy=True)
        if vectors.ndim != 2:
            raise InvalidInputError(f"vectors must be 2-D, got shape {vectors.shape}")
        if vectors.shape[0] != len(names):
            raise InvalidInputError(
                f"row count {vectors.shape[0]} does not match name count {len(names)}")
        if vectors.shape[1] <= 0:
            raise InvalidInputError("embedding dim must be positive")
        if len(set(names)) != len(names):
            raise InvalidInputError("duplicate names in embedding table")
        if not np.all(np.isfinite(vectors)):
            raise InvalidInputError("embedding table contains non-finite values")
        norms = np.linalg.norm(vectors, axis=1)
        if np.any(np.abs(norms - 1.0) > NORM_TOL):
            bad = int(np.argmax(np.abs(norms - 1.0)))
            raise InvalidInputError(
                f"row {bad} ({names[bad]!r}) has norm {norms[bad]:.8f}, expected 1")
        vectors.setflags(write=False)
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "vectors", vectors)
        object.__setattr__(self, "_index", {n: i for i, n in enumerate(names)})

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self):
        return len(self.names)

    def index(self, name: str) -> int:
        return self._index[name]

    def subset(self, names: Sequence[str]) -> "EmbeddingTable":
        """Rows for ``names`` in the given order. Raises KeyError for unknown names."""
        rows = [self._index[n] for n in names]
        return EmbeddingTable(tuple(names), self.vectors[rows], self.source_tag)

    def permuted(self, perm: Sequence[int]) -> "EmbeddingTable":
        perm = list(perm)
        return EmbeddingTable(tuple(self.names[i] for i in perm), self.vectors[perm], self.source_tag)

    def as_tensor(self, dtype=None, device=None):
        import torch

        return torch.tensor(self.vectors.copy(), dtype=dtype or torch.float32, device=device)

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update("\n".join(self.names).encode("utf-8"))
        h.update(np.ascontiguousarray(self.vectors).tobytes())
        return h.hexdigest()


def _bucket_and_sign(trigram: str, dim: int, seed: int) -> tuple[int, float]:
    digest = hashlib.blake2b(trigram.encode("utf-8"), digest_size=8,
                             salt=int(seed).to_bytes(8, "little", signed=True)).digest()
    value = int.from_bytes(digest, "little")
    return (value >> 1) % dim, (1.0 if value & 1 else -1.0)


def toy_text_encoder(phrase: str, dim: int = 256, seed: int = 0) -> np.ndarray:
    """Signed-count hash of the character trigrams of ``phrase``, L2-normalized.

    Phrases that share substrings ("red circle", "red square") land closer
    together than phrases that share none, which is what makes compositional
    zero-shot transfer measurable with this stand-in.
    """
    if dim < 8:
        raise ConfigError(f"toy encoder dim must be >= 8, got {dim}")
    text = normalize_phrase(phrase)
    if not text:
        raise InvalidInputError(f"phrase is empty after normalization: {phrase!r}")
    padded = f" {text} "
    vec = np.zeros(dim, dtype=np.float64)
    for i in range(len(padded) - 2):
        bucket, sign = _bucket_and_sign(padded[i:i + 3], dim, seed)
        vec[bucket] += sign
    norm = np.linalg.norm(vec)
    if norm == 0.0:
        # every trigram cancelled out; fall back to a single fixed bucket
        vec[_bucket_and_sign(padded, dim, seed)[0]] = 1.0
        norm = 1.0
    return vec / norm


def random_text_encoder(phrase: str, dim: int = 256, seed: int = 0) -> np.ndarray:
    """Gaussian unit vector keyed by the normalized phrase; carries no phrase structure."""
    if dim < 8:
        raise ConfigError(f"encoder dim must be >= 8, got {dim}")
    text = normalize_phrase(phrase)
    if not text:
        raise InvalidInputError(f"phrase is empty after normalization: {phrase!r}")
    key = hashlib.sha256(f"{seed}\x00{text}".encode("utf-8")).digest()
    rng = np.random.default_rng(int.from_bytes(key[:8], "little"))
    vec = rng.standard_normal(dim)
    return vec / np.linalg.norm(vec)


def make_encoder(kind: str, dim: int = 256, seed: int = 0) -> Callable[[str], np.ndarray]:
    if kind == "toy":
        return partial(toy_text_encoder, dim=dim, seed=seed)
    if kind == "random":
        return partial(random_text_encoder, dim=dim, seed=seed)
    raise ConfigError(f"unknown encoder {kind!r}")


def encode_vocabulary(vocab: VocabularySpec, encoder: Callable[[str], np.ndarray],
                      source_tag: str = "toy") -> EmbeddingTable:
    rows, failures = [], []
    for entry, prompt in zip(vocab.entries, vocab.prompts()):
        try:
            v = np.asarray(encoder(prompt), dtype=np.float64)
            n = np.linalg.norm(v)
            if v.ndim != 1 or not np.isfinite(n) or n == 0:
                raise InvalidInputError(f"encoder returned an unusable vector for {prompt!r}")
            rows.append(v / n)
        except Exception as exc:  # noqa: BLE001 - aggregated and re-raised below
            failures.append((entry, exc))
    if failures:
        raise EncodingError(failures)
    if not rows:
        return EmbeddingTable((), np.zeros((0, _encoder_dim(encoder))), source_tag)
    return EmbeddingTable(vocab.entries, np.stack(rows), source_tag)


def _encoder_dim(encoder) -> int:
    dim = getattr(encoder, "keywords", {}).get("dim")
    return int(dim) if dim else 1


class TableEncoder:
    """Encoder backed by a precomputed table; looks up the bare category name.

    Prompt templating is the exporter's concern for file-backed tables, so the
    template prefix is stripped before lookup.
    """

    def __init__(self, table: EmbeddingTable, template: str = DEFAULT_TEMPLATE):
        self.table = table
        self.prefix, self.suffix = (normalize_phrase(p) for p in template.split("{}"))

    def __call__(self, prompt: str) -> np.ndarray:
        text = normalize_phrase(prompt)
        if text in self.table._index:
            return self.table.vectors[self.table.index(text)]
        core = text
        if self.prefix and core.startswith(self.prefix):
            core = core[len(self.prefix):].strip()
        if self.suffix and core.endswith(self.suffix):
            core = core[: -len(self.suffix)].strip()
        if core not in self.table._index:
            raise KeyError(f"phrase {core!r} not in embedding table")
        return self.table.vectors[self.table.index(core)]


# ---------------------------------------------------------------------------
# file format
# ---------------------------------------------------------------------------

def save_embedding_table(table: EmbeddingTable, path) -> None:
    lines = [f"{FILE_MAGIC} {FILE_VERSION} dim={table.dim} count={len(table)}"]
    for name, row in zip(table.names, table.vectors):
        if "\t" in name or "\n" in name or "\r" in name:
            raise InvalidInputError(f"phrase contains a tab or newline: {name!r}")
        lines.append(name + "\t" + " ".join(format(float(x), ".10e") for x in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


_HEADER = re.compile(rf"^{FILE_MAGIC} (\S+) dim=(\d+) count=(\d+)$")


def load_embedding_table(path) -> EmbeddingTable:
    path = Path(path)
    if not path.is_file():
        raise FormatError("embedding table file not found", path=path)
    text = path.read_text(encoding="utf-8")
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise FormatError("empty file, missing header", line=1, path=path)
    m = _HEADER.match(lines[0].rstrip("\r"))
    if not m:
        raise FormatError(f"malformed header {lines[0]!r}", line=1, path=path)
    version, dim, count = m.group(1), int(m.group(2)), int(m.group(3))
    if version != FILE_VERSION:
        raise FormatError(f"unsupported version {version!r}", line=1, path=path)
    if dim <= 0:
        raise FormatError("dim must be positive", line=1, path=path)
    body = lines[1:]
    if len(body) != count:
        raise FormatError(f"header declares count={count} but file has {len(body)} rows",
                          line=len(lines) if len(body) > count else 1, path=path)
    names, rows, seen = [], np.zeros((count, dim)), {}
    for i, raw in enumerate(body):
        lineno = i + 2
        name, sep, values = raw.rstrip("\r").partition("\t")
        if not sep or not name:
            raise FormatError("expected '<phrase>\\t<values>'", line=lineno, path=path)
        if name in seen:
            raise FormatError(f"duplicate name {name!r} (first on line {seen[name]})",
                              line=lineno, path=path)
        seen[name] = lineno
        parts = values.split()
        if len(parts) != dim:
            raise FormatError(f"row has {len(parts)} values, header says dim={dim}",
                              line=lineno, path=path)
        try:
            rows[i] = [float(p) for p in parts]
        except ValueError as exc:
            raise FormatError(f"bad float: {exc}", line=lineno, path=path) from None
        norm = np.linalg.norm(rows[i])
        if abs(norm - 1.0) > NORM_TOL:
            raise FormatError(f"row norm {norm:.8f} is not 1", line=lineno, path=path)
        names.append(name)
    return EmbeddingTable(tuple(names), rows, source_tag=f"file:{path}")
