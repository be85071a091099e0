"""LW-DETR-shaped detector with text-driven query selection and classification.

Pipeline: ViT encoder (interleaved window / global attention) -> projector ->
top-K spatial query selection scored against the text table -> DETR decoder
with Group DETR masking and iterative box refinement. Every classification
point goes through :func:`compute_alignment_logits`, never a fixed class
weight matrix.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
import torch.nn.functional as F
from torch import nn

from .box_ops import inverse_sigmoid
from .config import ModelConfig
from .errors import InvalidInputError
from .open_vocab_head import AlignmentHead, compute_alignment_logits


@dataclass
class FeatureMemory:
    tokens: torch.Tensor        # [B, N, decoder_dim]
    token_boxes: torch.Tensor   # [B, N, 4] cxcywh anchors
    pos: torch.Tensor           # [N, decoder_dim]


@dataclass
class QuerySet:
    content: torch.Tensor       # [B, Q*G, decoder_dim]
    boxes: torch.Tensor         # [B, Q*G, 4], detached
    group_ids: torch.Tensor | None  # [Q*G]
    num_groups: int = 1
    selected: torch.Tensor | None = None  # [B, K] token indices, rank order


@dataclass
class DetectionOutput:
    logits: list                # per decoder layer, [B, Q*G, C]
    boxes: list                 # per decoder layer, [B, Q*G, 4] cxcywh
    group_ids: torch.Tensor | None
    num_groups: int
    enc_logits: torch.Tensor | None = None   # [B, K, C] selected-token logits
    enc_boxes: torch.Tensor | None = None    # [B, K, 4]
    selection_scores: torch.Tensor | None = None  # [B, N]
    selected: torch.Tensor | None = None     # [B, K]
    extras: dict = field(default_factory=dict)

    @property
    def pred_logits(self) -> torch.Tensor:
        return self.logits[-1]

    @property
    def pred_boxes(self) -> torch.Tensor:
        return self.boxes[-1]


def sine_pos_2d(grid: int, dim: int, temperature: float = 10000.0) -> torch.Tensor:
    """Fixed 2-D sinusoidal position table, [grid*grid, dim], row-major tokens."""
    if dim % 4:
        raise ValueError("dim must be divisible by 4")
    coords = (torch.arange(grid, dtype=torch.float32) + 0.5) / grid * 2 * math.pi
    yy, xx = torch.meshgrid(coords, coords, indexing="ij")
    freqs = temperature ** (torch.arange(dim // 4, dtype=torch.float32) / (dim // 4))
    x = xx.reshape(-1, 1) / freqs
    y = yy.reshape(-1, 1) / freqs
    return torch.cat([x.sin(), x.cos(), y.sin(), y.cos()], dim=1)


def box_sine_embed(boxes: torch.Tensor, dim: int, temperature: float = 10000.0) -> torch.Tensor:
    """Sinusoidal embedding of (cx, cy, w, h) in [0, 1], dim/4 features per coordinate."""
    n = dim // 8
    freqs = temperature ** (torch.arange(n, dtype=boxes.dtype, device=boxes.device) / n)
    x = boxes.unsqueeze(-1) * 2 * math.pi / freqs
    emb = torch.cat([x.sin(), x.cos()], dim=-1)
    return emb.flatten(-2)


def token_grid_anchors(grid: int, device=None) -> torch.Tensor:
    """cxcywh anchors for a grid x grid token layout: patch centers, patch-sized."""
    c = (torch.arange(grid, dtype=torch.float32, device=device) + 0.5) / grid
    cy, cx = torch.meshgrid(c, c, indexing="ij")
    wh = torch.full_like(cx, 1.0 / grid)
    return torch.stack([cx, cy, wh, wh], dim=-1).reshape(-1, 4)


class Attention(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.q = nn.Linear(dim, dim)
        self.k = nn.Linear(dim, dim)
        self.v = nn.Linear(dim, dim)
        self.out = nn.Linear(dim, dim)

    def forward(self, q, k, v, mask=None):
        # mask: bool [Nq, Nk], True = blocked
        B, Nq, D = q.shape
        h = self.heads
        q = self.q(q).view(B, Nq, h, -1).transpose(1, 2)
        k = self.k(k).view(B, k.shape[1], h, -1).transpose(1, 2)
        v = self.v(v).view(B, v.shape[1], h, -1).transpose(1, 2)
        attn = (q @ k.transpose(-2, -1)) * (q.shape[-1] ** -0.5)
        if mask is not None:
            attn = attn.masked_fill(mask, float("-inf"))
        attn = attn.softmax(dim=-1)
        return self.out((attn @ v).transpose(1, 2).reshape(B, Nq, D))


class Mlp(nn.Module):
    def __init__(self, dim, hidden, out=None, layers=2):
        super().__init__()
        dims = [dim] + [hidden] * (layers - 1) + [out or dim]
        self.layers = nn.ModuleList(nn.Linear(a, b) for a, b in zip(dims[:-1], dims[1:]))

    def forward(self, x):
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = F.gelu(x) if len(self.layers) == 2 else F.relu(x)
        return x


class ViTBlock(nn.Module):
    def __init__(self, dim, heads, grid, window_size=None):
        super().__init__()
        self.grid = grid
        self.window_size = window_size
        self.norm1 = nn.LayerNorm(dim)
        self.attn = Attention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.mlp = Mlp(dim, 4 * dim)

    def _windows(self, x):
        B, N, C = x.shape
        g, w = self.grid, self.window_size
        x = x.view(B, g // w, w, g // w, w, C).permute(0, 1, 3, 2, 4, 5)
        return x.reshape(-1, w * w, C)

    def _unwindows(self, x, B):
        g, w = self.grid, self.window_size
        C = x.shape[-1]
        x = x.view(B, g // w, g // w, w, w, C).permute(0, 1, 3, 2, 4, 5)
        return x.reshape(B, g * g, C)

    def forward(self, x):
        y = self.norm1(x)
        if self.window_size is not None:
            y = self._windows(y)
            y = self._unwindows(self.attn(y, y, y), x.shape[0])
        else:
            y = self.attn(y, y, y)
        x = x + y
        return x + self.mlp(self.norm2(x))


class ViTEncoder(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.patch_embed = nn.Conv2d(3, cfg.encoder_dim, cfg.patch_size, stride=cfg.patch_size)
        self.register_buffer("pos", sine_pos_2d(cfg.grid_size, cfg.encoder_dim), persistent=False)
        glob = set(cfg.global_attention_layer_indices)
        self.blocks = nn.ModuleList(
            ViTBlock(cfg.encoder_dim, cfg.encoder_heads, cfg.grid_size,
                     None if i in glob else cfg.window_size)
            for i in range(cfg.encoder_layers))

    def embed(self, images):
        return self.patch_embed(images).flatten(2).transpose(1, 2) + self.pos

    def forward(self, images):
        x = self.embed(images)
        for blk in self.blocks:
            x = blk(x)
        return x


class DecoderLayer(nn.Module):
    def __init__(self, dim, heads, ffn_dim):
        super().__init__()
        self.self_attn = Attention(dim, heads)
        self.norm1 = nn.LayerNorm(dim)
        self.cross_attn = Attention(dim, heads)
        self.norm2 = nn.LayerNorm(dim)
        self.ffn = nn.Sequential(nn.Linear(dim, ffn_dim), nn.ReLU(), nn.Linear(ffn_dim, dim))
        self.norm3 = nn.LayerNorm(dim)

    def forward(self, tgt, query_pos, memory, memory_pos, num_groups=1):
        # queries of different groups never attend to each other: run
        # self-attention on the [B*G, Q, D] block-diagonal layout
        B, n, D = tgt.shape
        q = (tgt + query_pos).reshape(B * num_groups, n // num_groups, D)
        sa = self.self_attn(q, q, tgt.reshape(B * num_groups, n // num_groups, D))
        tgt = self.norm1(tgt + sa.reshape(B, n, D))
        tgt = self.norm2(tgt + self.cross_attn(tgt + query_pos, memory + memory_pos, memory))
        return self.norm3(tgt + self.ffn(tgt))


class OVLWDETR(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        d = cfg.decoder_dim
        self.encoder = ViTEncoder(cfg)
        self.projector = nn.Sequential(nn.Linear(cfg.encoder_dim, d), nn.LayerNorm(d))
        self.register_buffer("anchors", token_grid_anchors(cfg.grid_size), persistent=False)
        self.register_buffer("memory_pos", sine_pos_2d(cfg.grid_size, d), persistent=False)

        head_kw = dict(scale_init=cfg.logit_scale_init, bias_init=cfg.logit_bias_init,
                       use_bias=cfg.use_logit_bias)
        self.enc_output = nn.Sequential(nn.Linear(d, d), nn.LayerNorm(d))
        self.enc_head = AlignmentHead(d, cfg.text_dim, **head_kw)
        self.enc_bbox = Mlp(d, d, 4, layers=3)

        # one content bank per group; group 0 is the inference group
        self.query_content = nn.Embedding(cfg.num_groups * cfg.num_queries, d)
        self.ref_point_head = Mlp(d, d, d, layers=2)
        self.layers = nn.ModuleList(DecoderLayer(d, cfg.decoder_heads, cfg.decoder_ffn_dim)
                                    for _ in range(cfg.decoder_layers))
        self.dec_norm = nn.LayerNorm(d)
        self.dec_head = AlignmentHead(d, cfg.text_dim, **head_kw)
        self.bbox_embed = Mlp(d, d, 4, layers=3)
        self._reset_parameters()

    def _reset_parameters(self):
        for mlp in (self.enc_bbox, self.bbox_embed):
            nn.init.zeros_(mlp.layers[-1].weight)
            nn.init.zeros_(mlp.layers[-1].bias)

    # -- stages -----------------------------------------------------------

    def vit_encode(self, images: torch.Tensor) -> torch.Tensor:
        s = self.cfg.image_size
        if images.dim() != 4 or tuple(images.shape[1:]) != (3, s, s):
            raise InvalidInputError(f"expected images of shape [B, 3, {s}, {s}], got {tuple(images.shape)}")
        return self.encoder(images)

    def project(self, tokens: torch.Tensor) -> FeatureMemory:
        if tokens.dim() != 3 or tokens.shape[-1] != self.cfg.encoder_dim:
            raise InvalidInputError(f"expected tokens [B, N, {self.cfg.encoder_dim}], got {tuple(tokens.shape)}")
        if tokens.shape[1] != self.cfg.num_tokens:
            raise InvalidInputError(f"expected {self.cfg.num_tokens} tokens, got {tokens.shape[1]}")
        B = tokens.shape[0]
        return FeatureMemory(self.projector(tokens), self.anchors.expand(B, -1, -1), self.memory_pos)

    def select_topk_queries(self, memory: FeatureMemory, table: torch.Tensor, k: int,
                            num_groups: int = 1):
        """Score tokens against the text table and keep the top ``k`` as spatial queries.

        Returns the query set and the encoder-stage outputs for the auxiliary loss.
        """
        if table.shape[0] == 0:
            raise InvalidInputError("vocabulary is empty")
        N = memory.tokens.shape[1]
        if k > N:
            raise InvalidInputError(f"k={k} exceeds token count {N}")
        feats = self.enc_output(memory.tokens)
        token_logits = compute_alignment_logits(feats, table, self.enc_head)
        token_boxes = (inverse_sigmoid(memory.token_boxes) + self.enc_bbox(feats)).sigmoid()
        scores = token_logits.detach().max(dim=-1).values
        selected = select_topk(scores, k)

        enc_logits = torch.gather(token_logits, 1, selected[..., None].expand(-1, -1, token_logits.shape[-1]))
        enc_boxes = torch.gather(token_boxes, 1, selected[..., None].expand(-1, -1, 4))
        queries = self.make_queries(enc_boxes.detach(), num_groups)
        queries.selected = selected
        return queries, dict(enc_logits=enc_logits, enc_boxes=enc_boxes, scores=scores)

    def make_queries(self, ref_boxes: torch.Tensor, num_groups: int) -> QuerySet:
        B, K, _ = ref_boxes.shape
        Q = self.cfg.num_queries
        if not 1 <= num_groups <= self.cfg.num_groups:
            raise InvalidInputError(f"num_groups must be in [1, {self.cfg.num_groups}]")
        bank = self.query_content.weight.view(self.cfg.num_groups, Q, -1)[:num_groups]
        if K != Q:
            # ranks beyond the bank reuse content rows cyclically
            bank = bank[:, torch.arange(K, device=bank.device) % Q]
        content = bank.reshape(1, num_groups * K, -1).expand(B, -1, -1)
        boxes = ref_boxes.repeat(1, num_groups, 1)
        group_ids = torch.arange(num_groups, device=ref_boxes.device).repeat_interleave(K)
        return QuerySet(content, boxes, group_ids, num_groups)

    def decode(self, queries: QuerySet, memory: FeatureMemory, table: torch.Tensor,
               group_mask: bool = True, all_layers: bool = True) -> DetectionOutput:
        if queries.content.shape[-1] != memory.tokens.shape[-1]:
            raise InvalidInputError("query and memory dims differ")
        groups = 1
        if group_mask:
            gid = queries.group_ids
            if gid is None:
                raise InvalidInputError("group_ids are required when group_mask is set")
            groups = queries.num_groups
            per_group = gid.numel() // groups
            expected = torch.arange(groups, device=gid.device).repeat_interleave(per_group)
            if gid.numel() != groups * per_group or not torch.equal(gid, expected):
                raise InvalidInputError("group_ids must be contiguous equal-sized blocks 0..G-1")
        tgt = queries.content
        ref = queries.boxes.detach()
        logits, boxes = [], []
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            query_pos = self.ref_point_head(box_sine_embed(ref, tgt.shape[-1]))
            tgt = layer(tgt, query_pos, memory.tokens, memory.pos, groups)
            hs = self.dec_norm(tgt)
            new_boxes = (inverse_sigmoid(ref) + self.bbox_embed(hs)).sigmoid()
            boxes.append(new_boxes)
            if all_layers or i == last:
                logits.append(compute_alignment_logits(hs, table, self.dec_head))
            ref = new_boxes.detach()
        return DetectionOutput(logits, boxes, queries.group_ids, queries.num_groups,
                               selected=queries.selected)

    def forward(self, images: torch.Tensor, table, mode: str = "eval",
                num_groups: int | None = None) -> DetectionOutput:
        if mode not in ("train", "eval"):
            raise InvalidInputError(f"mode must be train or eval, got {mode!r}")
        table = as_table_tensor(table, images.device)
        memory = self.project(self.vit_encode(images))
        if mode == "train":
            groups = self.cfg.num_groups if num_groups is None else num_groups
            k = self.cfg.num_queries
        else:
            groups = 1
            k = self.cfg.eval_queries
        queries, enc = self.select_topk_queries(memory, table, k, groups)
        out = self.decode(queries, memory, table, group_mask=groups > 1, all_layers=mode == "train")
        out.enc_logits = enc["enc_logits"]
        out.enc_boxes = enc["enc_boxes"]
        out.selection_scores = enc["scores"]
        return out


def select_topk(scores: torch.Tensor, k: int) -> torch.Tensor:
    """Indices of the ``k`` largest scores per row; ties go to the lower index."""
    return torch.argsort(scores, dim=-1, descending=True, stable=True)[..., :k]


def as_table_tensor(table, device=None) -> torch.Tensor:
    if isinstance(table, torch.Tensor):
        t = table
    elif hasattr(table, "as_tensor"):
        t = table.as_tensor()
    else:
        t = torch.as_tensor(table, dtype=torch.float32)
    return t.detach().to(device=device, dtype=torch.float32)


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())
