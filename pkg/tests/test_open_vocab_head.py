import math

import pytest
import torch

from ovlw_detr.errors import InvalidInputError
from ovlw_detr.open_vocab_head import AlignmentHead, compute_alignment_logits, duplicate_category_check
from oracles import naive_alignment_logits


def _unit(n, d, seed, dtype=torch.float64):
    g = torch.Generator().manual_seed(seed)
    t = torch.randn(n, d, generator=g, dtype=dtype)
    return t / t.norm(dim=-1, keepdim=True)


def test_matches_naive_double_loop():
    torch.manual_seed(0)
    head = AlignmentHead(6, 5).double()
    with torch.no_grad():
        head.log_scale.fill_(math.log(7.0))
        head.logit_bias.fill_(-1.5)
    embs = torch.randn(4, 6, dtype=torch.float64)
    table = _unit(3, 5, 1)
    got = compute_alignment_logits(embs, table, head)
    ref = naive_alignment_logits(embs.tolist(), table.tolist(), head.proj.weight.tolist(),
                                 head.proj.bias.tolist(), 7.0, -1.5)
    torch.testing.assert_close(got, torch.tensor(ref, dtype=torch.float64), rtol=0, atol=1e-12)


def test_initial_scale_bias_and_range():
    head = AlignmentHead(8, 8)
    assert head.scale.item() == pytest.approx(20.0)
    assert head.logit_bias.item() == -10.0
    # identity projection when dims agree
    torch.testing.assert_close(head.proj(torch.eye(8)), torch.eye(8))
    logits = head(torch.randn(50, 8), _unit(7, 8, 2, torch.float32))
    assert logits.min() >= -30 - 1e-4 and logits.max() <= 10 + 1e-4


def test_bias_flag():
    head = AlignmentHead(4, 4, use_bias=False)
    assert "logit_bias" not in dict(head.named_parameters())
    assert head.logit_bias.item() == 0.0


def test_zero_embedding_gives_bias_only():
    head = AlignmentHead(4, 4)
    out = head(torch.zeros(1, 4), _unit(3, 4, 0, torch.float32))
    torch.testing.assert_close(out, torch.full((1, 3), -10.0))


def test_permute_and_append_exact():
    torch.manual_seed(0)
    head = AlignmentHead(16, 16)
    embs = torch.randn(2, 30, 16)
    table = _unit(9, 16, 3, torch.float32)
    base = head(embs, table)
    perm = torch.randperm(9)
    assert torch.equal(head(embs, table[perm]), base[..., perm])
    extra = torch.cat([table, _unit(4, 16, 4, torch.float32)])
    assert torch.equal(head(embs, extra)[..., :9], base)


def test_duplicate_rows_give_identical_columns():
    head = AlignmentHead(8, 8)
    table = _unit(3, 8, 5, torch.float32)
    table = torch.cat([table, table[1:2]])
    logits, pairs = duplicate_category_check(torch.randn(5, 8), table, head)
    assert pairs == [(1, 3)]
    assert torch.equal(logits[:, 1], logits[:, 3])


def test_dim_mismatch():
    with pytest.raises(InvalidInputError):
        AlignmentHead(8, 8)(torch.randn(2, 8), torch.randn(3, 7))
