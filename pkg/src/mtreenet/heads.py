"""Classifier heads and the hierarchical fold/expand/combine operations.

The 3-way head predicts {non-target, target-1, target-2}; the 2-way head
predicts {non-target, target}. Folding collapses the 3-way softmax onto the
binary task (the two target probabilities add); expanding duplicates the
binary target probability across both target slots. The final prediction
multiplies the expanded binary probabilities into the 3-way logits and
re-normalizes with a softmax, so the coarse head gates the fine one.
"""

import torch
import torch.nn as nn

from .errors import ContractError

_CLAMP = 1e-8


class HierarchicalHeads(nn.Module):
    """Linear heads over the fused vector plus per-modality auxiliary heads."""

    def __init__(self, fused_dim=1024, modal_dim=512, hierarchical=True):
        super().__init__()
        self.triple = nn.Linear(fused_dim, 3)
        self.binary = nn.Linear(fused_dim, 2) if hierarchical else None
        self.eeg_triple = nn.Linear(modal_dim, 3)
        self.em_triple = nn.Linear(modal_dim, 3)
        self.fused_dim = fused_dim
        self.modal_dim = modal_dim


def _check_width(x, width, what):
    if x.ndim != 2 or x.shape[1] != width:
        raise ContractError(f"{what}: expected [batch, {width}], got {tuple(x.shape)}")


def fold_triplet(tri_logits):
    """3-way logits -> binary probability pair [p_nontarget, p_target]."""
    _check_width(tri_logits, 3, "fold_triplet")
    p = torch.softmax(tri_logits, dim=1)
    return torch.stack([p[:, 0], p[:, 1] + p[:, 2]], dim=1)


def expand_binary(bin_logits):
    """Binary logits -> 3-slot probabilities [q0, q1, q1]."""
    _check_width(bin_logits, 2, "expand_binary")
    q = torch.softmax(bin_logits, dim=1)
    return torch.stack([q[:, 0], q[:, 1], q[:, 1]], dim=1)


def combine_hierarchy(expanded, tri_logits):
    """Final 3-way probabilities: softmax of the gated logits."""
    _check_width(expanded, 3, "combine_hierarchy")
    _check_width(tri_logits, 3, "combine_hierarchy")
    return torch.softmax(expanded * tri_logits, dim=1)


def final_probabilities(tri_logits, bin_logits):
    """Prediction path: hierarchical when a binary head exists, plain otherwise."""
    if bin_logits is None:
        return torch.softmax(tri_logits, dim=1)
    return combine_hierarchy(expand_binary(bin_logits), tri_logits)


def distillation_loss(folded, bin_logits):
    """Symmetric KL between the folded 3-way prediction and the binary head.

    Probabilities are clamped at 1e-8 inside the logs only.
    """
    _check_width(folded, 2, "distillation_loss")
    _check_width(bin_logits, 2, "distillation_loss")
    q = torch.softmax(bin_logits, dim=1)
    log_p = folded.clamp_min(_CLAMP).log()
    log_q = q.clamp_min(_CLAMP).log()
    kl_pq = (folded * (log_p - log_q)).sum(dim=1)
    kl_qp = (q * (log_q - log_p)).sum(dim=1)
    return (0.5 * (kl_pq + kl_qp)).mean()
