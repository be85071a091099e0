"""Per-batch vocabularies: batch positives padded with sampled negative phrases."""
from __future__ import annotations

import warnings

import numpy as np

from ..text_embedding import DEFAULT_TEMPLATE, VocabularySpec, normalize_phrase


def build_online_vocabulary(samples, max_size: int, negative_pool=(), seed=0,
                            prompt_template: str = DEFAULT_TEMPLATE):
    """Return (vocab, labels) where labels[i][j] indexes the phrase of annotation j of sample i.

    All distinct positive phrases are kept even if they exceed ``max_size``
    (with a warning); remaining slots are filled uniformly from the pool.
    """
    positives = []
    seen = set()
    for s in samples:
        for p in s.phrases:
            p = normalize_phrase(p)
            if p not in seen:
                seen.add(p)
                positives.append(p)
    if len(positives) > max_size:
        warnings.warn(f"{len(positives)} positive phrases exceed max vocabulary size {max_size}",
                      stacklevel=2)
    rng = np.random.default_rng(seed)
    pool = sorted({normalize_phrase(p) for p in negative_pool} - seen)
    room = max(0, max_size - len(positives))
    negatives = []
    if room and pool:
        take = rng.choice(len(pool), size=min(room, len(pool)), replace=False)
        negatives = [pool[i] for i in take]
    entries = positives + negatives
    order = rng.permutation(len(entries))
    entries = [entries[i] for i in order]
    vocab = VocabularySpec(tuple(entries), prompt_template, normalization=False)
    index = {e: i for i, e in enumerate(entries)}
    labels = [[index[normalize_phrase(p)] for p in s.phrases] for s in samples]
    return vocab, labels
