"""Assembled decoder: extractors, cross-modal fusion, hierarchical heads.

Structural switches mirror the ablation study: use_dcm drops the cross-
attention exchange, use_reweight drops the contribution-guided weighting
(plain concatenation instead), hierarchical drops the binary head and the
gated prediction. Loss-term-only ablations live in the objective module.
"""

from dataclasses import dataclass
from typing import Optional

import torch
import torch.nn as nn

from .errors import ContractError
from .extractors import N_MAPS, EegExtractor, EmExtractor
from .fusion import DualComplement, ReweightFusion
from .heads import HierarchicalHeads, expand_binary, final_probabilities, fold_triplet


@dataclass
class ForwardOutput:
    feat_eeg: torch.Tensor  # [B, 32, d] maps after fusion (or extraction)
    feat_em: Optional[torch.Tensor]
    x_eeg: torch.Tensor  # [B, modal_dim] flattened halves
    x_em: Optional[torch.Tensor]
    phi_weights: Optional[torch.Tensor]  # [B, 2] predicted modality weights
    x_f: torch.Tensor  # [B, fused_dim]
    tri_logits: torch.Tensor  # [B, 3]
    bin_logits: Optional[torch.Tensor]  # [B, 2]
    eeg_tri_logits: Optional[torch.Tensor]  # [B, 3] auxiliary per-modality heads
    em_tri_logits: Optional[torch.Tensor]
    folded: Optional[torch.Tensor]  # [B, 2] 3-way prediction collapsed to binary
    expanded: Optional[torch.Tensor]  # [B, 3] binary prediction spread over 3 slots
    final_probs: torch.Tensor  # [B, 3]


class MtreeNet(nn.Module):
    def __init__(
        self,
        n_eeg_channels=64,
        n_em_components=6,
        n_samples=128,
        *,
        use_dcm=True,
        use_reweight=True,
        hierarchical=True,
        direction="dual",
        n_heads=2,
        dropout=0.2,
    ):
        super().__init__()
        self.eeg_extractor = EegExtractor(n_eeg_channels, n_samples, dropout=dropout)
        self.em_extractor = EmExtractor(n_em_components, n_samples, dropout=dropout)
        if self.eeg_extractor.out_len != self.em_extractor.out_len:
            raise ContractError("extractor output lengths disagree")
        self.feat_len = self.eeg_extractor.out_len
        self.modal_dim = N_MAPS * self.feat_len
        self.complement = (
            DualComplement(self.feat_len, n_heads=n_heads, direction=direction) if use_dcm else None
        )
        self.reweight = ReweightFusion(self.modal_dim) if use_reweight else None
        self.heads = HierarchicalHeads(
            fused_dim=2 * self.modal_dim, modal_dim=self.modal_dim, hierarchical=hierarchical
        )
        self.hierarchical = hierarchical

    def forward(self, eeg, em) -> ForwardOutput:
        feat_eeg = self.eeg_extractor(eeg)
        feat_em = self.em_extractor(em)
        if self.complement is not None:
            feat_eeg, feat_em = self.complement(feat_eeg, feat_em)
        x_eeg = feat_eeg.flatten(1)
        x_em = feat_em.flatten(1)
        eeg_tri = self.heads.eeg_triple(x_eeg)
        em_tri = self.heads.em_triple(x_em)
        if self.reweight is not None:
            x_f, phi = self.reweight(x_eeg, x_em)
        else:
            x_f, phi = torch.cat([x_eeg, x_em], dim=1), None
        tri_logits = self.heads.triple(x_f)
        if self.hierarchical:
            bin_logits = self.heads.binary(x_f)
            folded = fold_triplet(tri_logits)
            expanded = expand_binary(bin_logits)
        else:
            bin_logits = folded = expanded = None
        return ForwardOutput(
            feat_eeg=feat_eeg,
            feat_em=feat_em,
            x_eeg=x_eeg,
            x_em=x_em,
            phi_weights=phi,
            x_f=x_f,
            tri_logits=tri_logits,
            bin_logits=bin_logits,
            eeg_tri_logits=eeg_tri,
            em_tri_logits=em_tri,
            folded=folded,
            expanded=expanded,
            final_probs=final_probabilities(tri_logits, bin_logits),
        )


class EegBaseline(nn.Module):
    """EEG-only reference decoder: extractor, flatten, linear 3-way head."""

    def __init__(self, n_channels=64, n_samples=128, dropout=0.2):
        super().__init__()
        self.extractor = EegExtractor(n_channels, n_samples, dropout=dropout)
        self.modal_dim = N_MAPS * self.extractor.out_len
        self.head = nn.Linear(self.modal_dim, 3)

    def forward(self, eeg, em=None) -> ForwardOutput:
        feat = self.extractor(eeg)
        x = feat.flatten(1)
        tri = self.head(x)
        return ForwardOutput(
            feat_eeg=feat,
            feat_em=None,
            x_eeg=x,
            x_em=None,
            phi_weights=None,
            x_f=x,
            tri_logits=tri,
            bin_logits=None,
            eeg_tri_logits=None,
            em_tri_logits=None,
            folded=None,
            expanded=None,
            final_probs=torch.softmax(tri, dim=1),
        )
