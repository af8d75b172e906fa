"""Cross-modal fusion: complementary attention, contribution scoring, reweighting.

DualComplement exchanges structure between the two 32 x d feature maps with
scaled dot-product cross-attention (queries from the enriched modality, keys
and values from the other) plus a residual connection.

Contribution scoring splits the 3-way classifier column-wise into its EEG and
EM halves, scores each modality alone by the softmax probability at the true
label, and normalizes the pair into ratios. Ratios are detached: they act as
constant targets for the weight predictor and nothing backpropagates through
them.
"""

import math
from dataclasses import dataclass

import torch
import torch.nn as nn

from .errors import ConfigError, ContractError

DIRECTIONS = ("dual", "em_to_eeg", "eeg_to_em")


class DualComplement(nn.Module):
    """Bidirectional multi-head cross-attention with residual add.

    direction restricts the exchange: "em_to_eeg" only enriches the EEG maps
    from the EM maps, "eeg_to_em" the reverse, "dual" (default) both. Each
    active direction owns its query/key/value projections; attention rows are
    softmax-normalized over the 32 key maps.
    """

    def __init__(self, feat_dim=16, n_heads=2, direction="dual"):
        super().__init__()
        if direction not in DIRECTIONS:
            raise ConfigError(f"direction must be one of {DIRECTIONS}, got {direction!r}")
        if feat_dim % n_heads != 0:
            raise ConfigError(f"feat_dim {feat_dim} not divisible by n_heads {n_heads}")
        self.feat_dim = feat_dim
        self.n_heads = n_heads
        self.direction = direction

        def proj():
            return nn.Linear(feat_dim, feat_dim, bias=False)

        if direction in ("dual", "em_to_eeg"):
            self.eeg_query, self.em_key, self.em_value = proj(), proj(), proj()
        if direction in ("dual", "eeg_to_em"):
            self.em_query, self.eeg_key, self.eeg_value = proj(), proj(), proj()

    def _attend(self, q_src, kv_src, wq, wk, wv):
        b, c, d = q_src.shape
        h, dk = self.n_heads, d // self.n_heads
        q = wq(q_src).view(b, c, h, dk).transpose(1, 2)  # [B, h, c, dk]
        k = wk(kv_src).view(b, c, h, dk).transpose(1, 2)
        v = wv(kv_src).view(b, c, h, dk).transpose(1, 2)
        att = torch.softmax(q @ k.transpose(-1, -2) / math.sqrt(dk), dim=-1)  # [B, h, c, c]
        out = (att @ v).transpose(1, 2).reshape(b, c, d)
        return out, att

    def forward(self, feat_eeg, feat_em, return_attention=False):
        if feat_eeg.shape != feat_em.shape:
            raise ContractError(
                f"modality maps must share shape, got {tuple(feat_eeg.shape)} vs {tuple(feat_em.shape)}"
            )
        if feat_eeg.ndim != 3 or feat_eeg.shape[-1] != self.feat_dim:
            raise ContractError(
                f"expected [batch, maps, {self.feat_dim}], got {tuple(feat_eeg.shape)}"
            )
        out_eeg, out_em = feat_eeg, feat_em
        attention = {}
        if self.direction in ("dual", "em_to_eeg"):
            delta, att = self._attend(feat_eeg, feat_em, self.eeg_query, self.em_key, self.em_value)
            out_eeg = feat_eeg + delta
            attention["em_to_eeg"] = att
        if self.direction in ("dual", "eeg_to_em"):
            delta, att = self._attend(feat_em, feat_eeg, self.em_query, self.eeg_key, self.eeg_value)
            out_em = feat_em + delta
            attention["eeg_to_em"] = att
        if return_attention:
            return out_eeg, out_em, attention
        return out_eeg, out_em


class ReweightFusion(nn.Module):
    """Predict a softmax pair of modality weights and scale the halves.

    The fused vector is [x_eeg * w0, x_em * w1]; weights are returned so the
    contribution loss can pull them toward the observed ratios.
    """

    def __init__(self, modal_dim=512):
        super().__init__()
        self.gate = nn.Linear(2 * modal_dim, 2)
        self.modal_dim = modal_dim

    def forward(self, x_eeg, x_em):
        if x_eeg.shape[1] != self.modal_dim or x_em.shape[1] != self.modal_dim:
            raise ContractError(
                f"expected two [batch, {self.modal_dim}] halves, got {x_eeg.shape} / {x_em.shape}"
            )
        weights = torch.softmax(self.gate(torch.cat([x_eeg, x_em], dim=1)), dim=1)  # [B, 2]
        fused = torch.cat([x_eeg * weights[:, 0:1], x_em * weights[:, 1:2]], dim=1)
        return fused, weights


@dataclass
class ContributionRecord:
    score_eeg: torch.Tensor  # [B] softmax probability at the true class, EEG half alone
    score_em: torch.Tensor
    ratio_eeg: torch.Tensor  # [B] scores normalized to sum to 1
    ratio_em: torch.Tensor

    @property
    def ratios(self):
        return torch.stack([self.ratio_eeg, self.ratio_em], dim=1)  # [B, 2]


def split_classifier(tri_weight, tri_bias, modal_dim):
    """Column-split a [3 x 2*modal_dim] classifier into per-modality affine maps.

    Each half receives half the bias, so the full logits decompose exactly as
    the sum of the two half-scores.
    """
    if tri_weight.shape[1] != 2 * modal_dim:
        raise ContractError(
            f"classifier width {tri_weight.shape[1]} != 2 * modal_dim {2 * modal_dim}"
        )
    return (
        (tri_weight[:, :modal_dim], tri_bias / 2),
        (tri_weight[:, modal_dim:], tri_bias / 2),
    )


def contribution_ratios(x_eeg, x_em, tri_weight, tri_bias, y_true) -> ContributionRecord:
    """Per-trial modality contribution scores and ratios (detached).

    Computed under no_grad: the record is a constant target and gradients
    never flow through it into the classifier or the features.
    """
    with torch.no_grad():
        (w_e, b_e), (w_m, b_m) = split_classifier(tri_weight, tri_bias, x_eeg.shape[1])
        y = y_true.view(-1, 1)
        score_e = torch.softmax(x_eeg @ w_e.T + b_e, dim=1).gather(1, y).squeeze(1)
        score_m = torch.softmax(x_em @ w_m.T + b_m, dim=1).gather(1, y).squeeze(1)
        denom = (score_e + score_m).clamp_min(1e-30)
        return ContributionRecord(
            score_eeg=score_e,
            score_em=score_m,
            ratio_eeg=score_e / denom,
            ratio_em=score_m / denom,
        )


def contribution_loss(weights, ratios):
    """Mean L1 distance between predicted weights and contribution ratios."""
    if weights.shape != ratios.shape:
        raise ContractError(f"shape mismatch {weights.shape} vs {ratios.shape}")
    return (weights - ratios).abs().sum(dim=1).mean()
