"""Loss assembly.

The classification loss is the 3-way cross-entropy plus the binary
cross-entropy plus intra_weight times the two per-modality auxiliary
cross-entropies. The overall training loss adds the contribution loss and
the distillation loss, each unweighted. Removed terms are reported as exact
zeros so loss dictionaries keep the same keys across ablations.
"""

import torch.nn.functional as F

from .fusion import contribution_loss, contribution_ratios
from .heads import distillation_loss

INTRA_WEIGHT = 0.2

LOSS_KEYS = ("L_ce", "L_bce", "L_intra_eeg", "L_intra_em", "L_cls", "L_cg", "L_sd", "L_overall")


def classification_loss(
    tri_logits,
    y_tri,
    bin_logits=None,
    y_bin=None,
    eeg_tri_logits=None,
    em_tri_logits=None,
    intra_weight=INTRA_WEIGHT,
):
    """Combined classification loss; absent heads contribute nothing."""
    total = F.cross_entropy(tri_logits, y_tri)
    if bin_logits is not None:
        total = total + F.cross_entropy(bin_logits, y_bin)
    if eeg_tri_logits is not None:
        total = total + intra_weight * F.cross_entropy(eeg_tri_logits, y_tri)
    if em_tri_logits is not None:
        total = total + intra_weight * F.cross_entropy(em_tri_logits, y_tri)
    return total


def overall_loss(cls_loss, cg_loss=None, sd_loss=None):
    """Unweighted sum of the classification, contribution and distillation losses."""
    total = cls_loss
    if cg_loss is not None:
        total = total + cg_loss
    if sd_loss is not None:
        total = total + sd_loss
    return total


def assemble_losses(
    out,
    y_tri,
    y_bin,
    *,
    tri_weight=None,
    tri_bias=None,
    include_cg=True,
    include_sd=True,
    intra_weight=INTRA_WEIGHT,
):
    """Compute every loss term for one forward pass.

    out is a network ForwardOutput. The contribution term needs the 3-way
    classifier weight/bias (to split into modality halves) and is only active
    when the model produced phi weights. Returns a dict keyed by LOSS_KEYS
    plus detached diagnostics mean_r_eeg and mean_phi0 (nan when inactive).
    """
    zero = out.tri_logits.new_zeros(())
    terms = {}
    terms["L_ce"] = F.cross_entropy(out.tri_logits, y_tri)
    terms["L_bce"] = (
        F.cross_entropy(out.bin_logits, y_bin) if out.bin_logits is not None else zero
    )
    terms["L_intra_eeg"] = (
        F.cross_entropy(out.eeg_tri_logits, y_tri) if out.eeg_tri_logits is not None else zero
    )
    terms["L_intra_em"] = (
        F.cross_entropy(out.em_tri_logits, y_tri) if out.em_tri_logits is not None else zero
    )
    terms["L_cls"] = (
        terms["L_ce"]
        + terms["L_bce"]
        + intra_weight * (terms["L_intra_eeg"] + terms["L_intra_em"])
    )

    mean_r_eeg = float("nan")
    mean_phi0 = float("nan")
    terms["L_cg"] = zero
    if out.phi_weights is not None and tri_weight is not None:
        record = contribution_ratios(out.x_eeg, out.x_em, tri_weight, tri_bias, y_tri)
        mean_r_eeg = float(record.ratio_eeg.mean())
        mean_phi0 = float(out.phi_weights[:, 0].detach().mean())
        if include_cg:
            terms["L_cg"] = contribution_loss(out.phi_weights, record.ratios)

    terms["L_sd"] = zero
    if include_sd and out.folded is not None and out.bin_logits is not None:
        terms["L_sd"] = distillation_loss(out.folded, out.bin_logits)

    terms["L_overall"] = terms["L_cls"] + terms["L_cg"] + terms["L_sd"]
    terms["mean_r_eeg"] = mean_r_eeg
    terms["mean_phi0"] = mean_phi0
    return terms
