"""Cross-attention exchange, contribution scoring, reweighted fusion."""

import math

import numpy as np
import pytest
import torch

from mtreenet.errors import ConfigError, ContractError
from mtreenet.fusion import (
    ContributionRecord,
    DualComplement,
    ReweightFusion,
    contribution_loss,
    contribution_ratios,
    split_classifier,
)


# ---------------------------------------------------------------------------
# DualComplement


def test_zero_value_projection_is_identity():
    dcm = DualComplement(feat_dim=16).eval()
    with torch.no_grad():
        dcm.em_value.weight.zero_()
        dcm.eeg_value.weight.zero_()
    a = torch.randn(3, 32, 16)
    b = torch.randn(3, 32, 16)
    out_a, out_b = dcm(a, b)
    assert torch.equal(out_a, a)
    assert torch.equal(out_b, b)


def test_attention_rows_sum_to_one():
    dcm = DualComplement(feat_dim=16, n_heads=2).eval()
    a = torch.randn(4, 32, 16)
    b = torch.randn(4, 32, 16)
    _, _, att = dcm(a, b, return_attention=True)
    assert set(att) == {"em_to_eeg", "eeg_to_em"}
    for m in att.values():
        assert m.shape == (4, 2, 32, 32)
        assert torch.allclose(m.sum(dim=-1), torch.ones(4, 2, 32), atol=1e-7)


def test_single_direction_variants():
    a = torch.randn(2, 32, 16)
    b = torch.randn(2, 32, 16)
    one = DualComplement(direction="em_to_eeg").eval()
    out_a, out_b = one(a, b)
    assert torch.equal(out_b, b)  # EM side untouched
    assert not torch.equal(out_a, a)
    other = DualComplement(direction="eeg_to_em").eval()
    out_a2, out_b2 = other(a, b)
    assert torch.equal(out_a2, a)
    assert not torch.equal(out_b2, b)
    with pytest.raises(ConfigError):
        DualComplement(direction="sideways")


def test_cross_attention_matches_hand_evaluation():
    # c=2 maps, d=2 features, one head: small enough to evaluate by hand
    dcm = DualComplement(feat_dim=2, n_heads=1, direction="em_to_eeg").double().eval()
    wq = torch.tensor([[1.0, 0.0], [0.0, 1.0]], dtype=torch.float64)
    wk = torch.tensor([[1.0, 1.0], [0.0, 1.0]], dtype=torch.float64)
    wv = torch.tensor([[2.0, 0.0], [1.0, 1.0]], dtype=torch.float64)
    with torch.no_grad():
        dcm.eeg_query.weight.copy_(wq)
        dcm.em_key.weight.copy_(wk)
        dcm.em_value.weight.copy_(wv)
    eeg = torch.tensor([[[1.0, 0.0], [0.0, 1.0]]], dtype=torch.float64)
    em = torch.tensor([[[1.0, 2.0], [3.0, 1.0]]], dtype=torch.float64)

    q = eeg[0] @ wq.T
    k = em[0] @ wk.T
    v = em[0] @ wv.T
    scores = (q @ k.T) / math.sqrt(2.0)
    att = torch.softmax(scores, dim=-1)
    expect = eeg[0] + att @ v

    out_eeg, out_em = dcm(eeg, em)
    assert torch.allclose(out_eeg[0], expect, atol=1e-12)
    assert torch.equal(out_em, em)


def test_dcm_contract_checks():
    dcm = DualComplement(feat_dim=16)
    with pytest.raises(ContractError):
        dcm(torch.randn(2, 32, 16), torch.randn(2, 32, 8))
    with pytest.raises(ContractError):
        dcm(torch.randn(2, 32, 8), torch.randn(2, 32, 8))
    with pytest.raises(ConfigError):
        DualComplement(feat_dim=15, n_heads=2)


# ---------------------------------------------------------------------------
# classifier split and contribution ratios


def test_split_classifier_halves():
    w = torch.arange(3 * 8, dtype=torch.float32).view(3, 8)
    b = torch.tensor([1.0, 2.0, 3.0])
    (we, be), (wm, bm) = split_classifier(w, b, 4)
    assert torch.equal(we, w[:, :4])
    assert torch.equal(wm, w[:, 4:])
    assert torch.allclose(be + bm, b)
    with pytest.raises(ContractError):
        split_classifier(w, b, 3)


def test_decomposition_identity_float64():
    torch.manual_seed(0)
    lin = torch.nn.Linear(8, 3).double()
    xe = torch.randn(16, 4, dtype=torch.float64)
    xm = torch.randn(16, 4, dtype=torch.float64)
    with torch.no_grad():
        full = lin(torch.cat([xe, xm], dim=1))
        (we, be), (wm, bm) = split_classifier(lin.weight, lin.bias, 4)
        parts = (xe @ we.T + be) + (xm @ wm.T + bm)
    assert float((full - parts).abs().max()) < 1e-12


def test_ratios_sum_to_one():
    torch.manual_seed(1)
    xe = torch.randn(32, 8)
    xm = torch.randn(32, 8)
    w = torch.randn(3, 16)
    b = torch.randn(3)
    y = torch.randint(0, 3, (32,))
    rec = contribution_ratios(xe, xm, w, b, y)
    assert torch.allclose(rec.ratio_eeg + rec.ratio_em, torch.ones(32), atol=1e-7)
    assert torch.allclose(rec.ratios.sum(dim=1), torch.ones(32), atol=1e-7)


def test_zero_em_half_gives_one_third_score():
    torch.manual_seed(2)
    xe = torch.randn(8, 5)
    xm = torch.randn(8, 5)
    w = torch.randn(3, 10)
    w[:, 5:] = 0.0  # EM half contributes nothing
    b = torch.zeros(3)
    y = torch.randint(0, 3, (8,))
    rec = contribution_ratios(xe, xm, w, b, y)
    third = torch.full((8,), 1 / 3)
    assert torch.allclose(rec.score_em, third, atol=1e-7)
    expect = rec.score_eeg / (rec.score_eeg + 1 / 3)
    assert torch.allclose(rec.ratio_eeg, expect, atol=1e-7)


def test_ratios_are_detached():
    xe = torch.randn(4, 5, requires_grad=True)
    xm = torch.randn(4, 5, requires_grad=True)
    w = torch.randn(3, 10, requires_grad=True)
    b = torch.randn(3, requires_grad=True)
    y = torch.zeros(4, dtype=torch.int64)
    rec = contribution_ratios(xe, xm, w, b, y)
    for t in (rec.score_eeg, rec.score_em, rec.ratio_eeg, rec.ratio_em):
        assert not t.requires_grad


def test_ratio_bias_split_invariance():
    # moving bias mass between halves cancels in the softmax of each half
    torch.manual_seed(3)
    xe, xm = torch.randn(6, 4), torch.randn(6, 4)
    w = torch.randn(3, 8)
    y = torch.randint(0, 3, (6,))
    r1 = contribution_ratios(xe, xm, w, torch.zeros(3), y)
    r2 = contribution_ratios(xe, xm, w, torch.full((3,), 5.0), y)
    assert torch.allclose(r1.ratio_eeg, r2.ratio_eeg, atol=1e-6)


# ---------------------------------------------------------------------------
# ReweightFusion


def test_reweight_weights_sum_to_one():
    fuse = ReweightFusion(modal_dim=8).eval()
    xe, xm = torch.randn(5, 8), torch.randn(5, 8)
    fused, w = fuse(xe, xm)
    assert fused.shape == (5, 16)
    assert torch.allclose(w.sum(dim=1), torch.ones(5), atol=1e-7)


def test_reweight_equal_weights_scale_halves():
    fuse = ReweightFusion(modal_dim=8).eval()
    with torch.no_grad():
        fuse.gate.weight.zero_()
        fuse.gate.bias.zero_()  # softmax of zeros -> (0.5, 0.5)
    xe, xm = torch.randn(5, 8), torch.randn(5, 8)
    fused, w = fuse(xe, xm)
    assert torch.allclose(w, torch.full((5, 2), 0.5), atol=1e-7)
    assert torch.allclose(fused, torch.cat([0.5 * xe, 0.5 * xm], dim=1), atol=1e-7)


def test_reweight_contract():
    fuse = ReweightFusion(modal_dim=8)
    with pytest.raises(ContractError):
        fuse(torch.randn(2, 4), torch.randn(2, 8))


# ---------------------------------------------------------------------------
# contribution loss


def test_contribution_loss_exact_match_is_zero():
    r = torch.tensor([[0.3, 0.7], [0.6, 0.4]])
    assert float(contribution_loss(r.clone(), r)) == 0.0


def test_contribution_loss_hand_value():
    w = torch.tensor([[0.5, 0.5]])
    r = torch.tensor([[0.7, 0.3]])
    assert float(contribution_loss(w, r)) == pytest.approx(0.4, abs=1e-7)


def test_contribution_loss_column_swap_symmetry():
    torch.manual_seed(4)
    w = torch.softmax(torch.randn(10, 2), dim=1)
    r = torch.softmax(torch.randn(10, 2), dim=1)
    a = contribution_loss(w, r)
    b = contribution_loss(w.flip(1), r.flip(1))
    assert torch.allclose(a, b, atol=1e-7)


def test_contribution_loss_shape_check():
    with pytest.raises(ContractError):
        contribution_loss(torch.zeros(3, 2), torch.zeros(2, 2))


def test_contribution_record_ratios_property():
    rec = ContributionRecord(
        score_eeg=torch.tensor([0.2]),
        score_em=torch.tensor([0.6]),
        ratio_eeg=torch.tensor([0.25]),
        ratio_em=torch.tensor([0.75]),
    )
    assert rec.ratios.shape == (1, 2)
    assert float(rec.ratios.sum()) == pytest.approx(1.0)
