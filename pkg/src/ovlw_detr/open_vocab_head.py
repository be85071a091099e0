"""Text-aligned classification head.

Class logits are a scaled cosine similarity between projected query (or
token) embeddings and the rows of a frozen text-embedding table, plus a
scalar bias. There is no per-class weight, so the vocabulary can be swapped
at inference time.
"""
import math

import torch
from torch import nn

from .errors import InvalidInputError

NORM_EPS = 1e-8
# max elements of the [M, chunk, D] product held at once
_CHUNK_ELEMS = 1 << 22


class AlignmentHead(nn.Module):
    def __init__(self, embed_dim: int, text_dim: int, scale_init: float = 20.0,
                 bias_init: float = -10.0, use_bias: bool = True):
        super().__init__()
        self.proj = nn.Linear(embed_dim, text_dim)
        if embed_dim == text_dim:
            with torch.no_grad():
                self.proj.weight.copy_(torch.eye(embed_dim))
                self.proj.bias.zero_()
        self.log_scale = nn.Parameter(torch.tensor(math.log(scale_init)))
        self.use_bias = use_bias
        if use_bias:
            self.logit_bias = nn.Parameter(torch.tensor(float(bias_init)))
        else:
            self.register_buffer("logit_bias", torch.tensor(0.0))

    @property
    def text_dim(self) -> int:
        return self.proj.out_features

    @property
    def scale(self) -> torch.Tensor:
        return self.log_scale.exp()

    def forward(self, embs: torch.Tensor, table: torch.Tensor) -> torch.Tensor:
        return compute_alignment_logits(embs, table, self)


def cosine_scores(z: torch.Tensor, table: torch.Tensor) -> torch.Tensor:
    """``z @ table.T`` computed as a per-pair reduction over the last dim.

    A GEMM may change its accumulation order with the number of columns, so
    permuting, appending or duplicating table rows would perturb the other
    columns in the last bits. The explicit product-and-sum keeps every
    column a function of its own row only.
    """
    lead = z.shape[:-1]
    z = z.reshape(-1, 1, z.shape[-1])
    num_classes = table.shape[0]
    chunk = max(1, _CHUNK_ELEMS // max(1, z.shape[0] * z.shape[-1]))
    parts = [(z * table[i:i + chunk]).sum(-1) for i in range(0, num_classes, chunk)]
    out = torch.cat(parts, dim=-1) if parts else z.new_zeros(z.shape[0], 0)
    return out.reshape(*lead, num_classes)


def compute_alignment_logits(embs: torch.Tensor, table: torch.Tensor, head: AlignmentHead) -> torch.Tensor:
    """logits[..., c] = s * cos(proj(embs), table[c]) + b, bounded in [b - s, b + s].

    ``table`` rows are assumed unit-norm; only the projection is normalized,
    with its norm clamped at 1e-8 so zero vectors give zero similarity.
    """
    if table.dim() != 2 or table.shape[-1] != head.text_dim:
        raise InvalidInputError(
            f"table of shape {tuple(table.shape)} does not match head text dim {head.text_dim}")
    z = head.proj(embs)
    z = z / z.norm(dim=-1, keepdim=True).clamp(min=NORM_EPS)
    cos = cosine_scores(z, table.to(z.dtype)).clamp(-1.0, 1.0)
    return head.scale * cos + head.logit_bias


def duplicate_category_check(embs: torch.Tensor, table: torch.Tensor, head: AlignmentHead):
    """Logits plus the pairs of identical table rows whose columns must coincide."""
    logits = compute_alignment_logits(embs, table, head)
    pairs = []
    for i in range(table.shape[0]):
        for j in range(i + 1, table.shape[0]):
            if torch.equal(table[i], table[j]):
                pairs.append((i, j))
    return logits, pairs
