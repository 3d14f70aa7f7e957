import pytest
import torch

from cfbt.adapters import (
    BottleneckAdapter,
    CrossBranchFusion,
    DstaLayerAdapter,
    DstaPoint,
    apply_cstaf,
    apply_cstcf,
)
from cfbt.encoder import TokenSequence
from cfbt.errors import ContractViolation, ShapeError
from cfbt.verify import check_adapter_oracles


def _randomize(module: torch.nn.Module, seed: int) -> None:
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in module.parameters():
            p.copy_(torch.randn(p.shape, generator=gen, dtype=p.dtype) * 0.3)


def _stream(tokens: torch.Tensor, n_template: int, branch: str,
            modality: str = "rgb") -> TokenSequence:
    return TokenSequence(tokens, n_template, tokens.shape[1] - n_template,
                         branch, modality)


def test_bottleneck_starts_silent():
    ba = BottleneckAdapter(16, 4)
    x = torch.randn(2, 5, 16)
    assert torch.equal(ba(x), torch.zeros(2, 5, 16))


def test_bottleneck_matches_matrix_chain():
    # covered against an explicit composition, double precision
    result = check_adapter_oracles()
    assert result.passed, result.detail


def test_bottleneck_rejects_wrong_width():
    ba = BottleneckAdapter(16, 4)
    with pytest.raises(ShapeError):
        ba(torch.randn(2, 5, 8))


def test_fusion_zero_init_is_identity():
    fusion = CrossBranchFusion(dim=16, down_factor=4, drop_rate=0.0).eval()
    a = torch.randn(2, 6, 16)
    b = torch.randn(2, 6, 16)
    out_a, out_b = fusion(a, b)
    assert torch.equal(out_a, a)
    assert torch.equal(out_b, b)


def test_fusion_direction_weights_are_shared():
    # with identical per-branch norms, swapping inputs swaps outputs exactly
    torch.manual_seed(0)
    fusion = CrossBranchFusion(dim=16, down_factor=4, drop_rate=0.0).double().eval()
    _randomize(fusion, 1)
    with torch.no_grad():
        fusion.norm_b.weight.copy_(fusion.norm_a.weight)
        fusion.norm_b.bias.copy_(fusion.norm_a.bias)
    a = torch.randn(2, 6, 16, dtype=torch.float64)
    b = torch.randn(2, 6, 16, dtype=torch.float64)
    with torch.no_grad():
        out_a, out_b = fusion(a, b)
        swap_b, swap_a = fusion(b, a)
    assert torch.equal(out_a, swap_a)
    assert torch.equal(out_b, swap_b)


def test_fusion_dropout_only_active_in_train_mode():
    torch.manual_seed(0)
    fusion = CrossBranchFusion(dim=16, down_factor=4, drop_rate=0.5).double()
    _randomize(fusion, 2)
    a = torch.randn(1, 6, 16, dtype=torch.float64)
    b = torch.randn(1, 6, 16, dtype=torch.float64)
    fusion.eval()
    with torch.no_grad():
        e1 = fusion(a, b)[0]
        e2 = fusion(a, b)[0]
    assert torch.equal(e1, e2)
    fusion.train()
    torch.manual_seed(1)
    t1 = fusion(a, b)[0]
    torch.manual_seed(2)
    t2 = fusion(a, b)[0]
    assert not torch.equal(t1.detach(), t2.detach())


def test_fusion_rejects_width_mismatch():
    fusion = CrossBranchFusion(dim=16, down_factor=4)
    with pytest.raises(ShapeError):
        fusion(torch.randn(1, 4, 16), torch.randn(1, 4, 8))
    with pytest.raises(ShapeError):
        CrossBranchFusion(dim=10, down_factor=4)


def test_template_fusion_leaves_search_rows_untouched():
    torch.manual_seed(3)
    fusion = CrossBranchFusion(dim=16, down_factor=4, drop_rate=0.0).eval()
    _randomize(fusion, 3)
    a = _stream(torch.randn(2, 10, 16), 4, "initial")
    b = _stream(torch.randn(2, 10, 16), 4, "online")
    out_a, out_b = apply_cstaf(a, b, fusion)
    assert torch.equal(out_a.search_rows(), a.search_rows())
    assert torch.equal(out_b.search_rows(), b.search_rows())
    assert not torch.equal(out_a.template_rows(), a.template_rows())


def test_search_fusion_leaves_template_rows_untouched():
    torch.manual_seed(4)
    fusion = CrossBranchFusion(dim=16, down_factor=4, drop_rate=0.0).eval()
    _randomize(fusion, 4)
    a = _stream(torch.randn(2, 10, 16), 4, "initial")
    b = _stream(torch.randn(2, 10, 16), 4, "online")
    out_a, out_b = apply_cstcf(a, b, fusion)
    assert torch.equal(out_a.template_rows(), a.template_rows())
    assert torch.equal(out_b.template_rows(), b.template_rows())
    assert not torch.equal(out_a.search_rows(), a.search_rows())


def test_branch_fusion_contract_checks():
    fusion = CrossBranchFusion(dim=16, down_factor=4)
    rgb_i = _stream(torch.randn(1, 10, 16), 4, "initial")
    rgb_i2 = _stream(torch.randn(1, 10, 16), 4, "initial")
    tir_o = _stream(torch.randn(1, 10, 16), 4, "online", "tir")
    with pytest.raises(ContractViolation):
        apply_cstaf(rgb_i, rgb_i2, fusion)
    with pytest.raises(ContractViolation):
        apply_cstcf(rgb_i, tir_o, fusion)
    bad_layout = _stream(torch.randn(1, 10, 16), 6, "online")
    with pytest.raises(ShapeError):
        apply_cstaf(rgb_i, bad_layout, fusion)


def test_dsta_point_prompts_search_rows_both_directions():
    torch.manual_seed(5)
    point = DstaPoint(16, 4).double()
    _randomize(point, 5)
    a = _stream(torch.randn(2, 10, 16, dtype=torch.float64), 4, "initial")
    b = _stream(torch.randn(2, 10, 16, dtype=torch.float64), 4, "online")
    out_a, out_b = point.fuse(a, b)
    assert torch.equal(out_a.template_rows(), a.template_rows())
    assert torch.equal(out_b.template_rows(), b.template_rows())
    # prompts are computed from the *other* branch's pre-update snapshot
    want_a = a.search_rows() + point.adapter(b.search_rows())
    want_b = b.search_rows() + point.adapter(a.search_rows())
    assert torch.equal(out_a.search_rows(), want_a)
    assert torch.equal(out_b.search_rows(), want_b)


def test_dsta_layer_adapter_has_two_independent_points():
    layer = DstaLayerAdapter(16, 4)
    attn_ids = {id(p) for p in layer.attn_point.parameters()}
    mlp_ids = {id(p) for p in layer.mlp_point.parameters()}
    assert not attn_ids & mlp_ids
