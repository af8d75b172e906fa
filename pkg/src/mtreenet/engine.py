"""Training and evaluation harness.

train_fold runs one inner split: Adam, plateau-halving learning rate, best
validation balanced accuracy selects the returned parameters. cross_validate
runs the nested block-wise scheme per subject: each of the five blocks is held
out once; the remaining four blocks are trial-shuffled into five inner
partitions of which (by default) the first provides the validation set, and
the inner training portion is class-rebalanced before training. Validation and
test sets always keep their natural class distribution.

Checkpoints are single files: 4-byte magic, little-endian uint32 header
length, JSON header (array manifest, model and training configs, fingerprint,
best epoch), then each named state array as raw float32 little-endian bytes
in manifest order.
"""

import copy
import csv
import dataclasses
import hashlib
import json
import logging
import math
import os
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import torch

from . import objective
from .dataio import EM_SUBSETS, TrialSet, plan_folds, rebalance
from .errors import (
    ConfigError,
    ContractError,
    DegenerateClassError,
    NumericalDivergenceError,
    SchemaViolationError,
)
from .network import EegBaseline, MtreeNet

logger = logging.getLogger(__name__)

# a lone core thrashes under torch's default thread pool
if os.cpu_count() == 1:
    torch.set_num_threads(1)

N_CLASSES = 3

HISTORY_COLUMNS = [
    "epoch",
    "lr",
    "L_ce",
    "L_bce",
    "L_intra_eeg",
    "L_intra_em",
    "L_cg",
    "L_sd",
    "L_overall",
    "val_BA",
    "mean_r_eeg",
    "mean_phi0",
]

MODEL_KINDS = ("mtree", "eeg_baseline")

ABLATIONS = (
    ("full", {}),
    ("no_dcm", {"no_dcm": True}),
    ("no_cgrm", {"no_cgrm": True}),
    ("no_lcg", {"no_lcg": True}),
    ("no_hsm", {"no_hsm": True}),
    ("no_lsd", {"no_lsd": True}),
)


@dataclass
class TrainConfig:
    model: str = "mtree"
    lr: float = 1e-3
    batch_size: int = 128
    max_epochs: int = 120
    patience: int = 5
    lr_factor: float = 0.5
    seed: int = 0
    intra_weight: float = 0.2
    no_dcm: bool = False
    no_cgrm: bool = False
    no_lcg: bool = False
    no_hsm: bool = False
    no_lsd: bool = False
    em_components: str = "all"
    direction: str = "dual"
    full_inner: bool = False
    dropout: float = 0.2

    def validate(self):
        if self.model not in MODEL_KINDS:
            raise ConfigError(f"model must be one of {MODEL_KINDS}, got {self.model!r}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be positive, got {self.lr}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.max_epochs < 1:
            raise ConfigError(f"max_epochs must be >= 1, got {self.max_epochs}")
        if self.patience < 1:
            raise ConfigError(f"patience must be >= 1, got {self.patience}")
        if not 0 < self.lr_factor < 1:
            raise ConfigError(f"lr_factor must be in (0, 1), got {self.lr_factor}")
        if self.em_components not in EM_SUBSETS:
            raise ConfigError(
                f"em_components must be one of {sorted(EM_SUBSETS)}, got {self.em_components!r}"
            )
        if self.direction not in ("dual", "em_to_eeg", "eeg_to_em"):
            raise ConfigError(f"invalid direction {self.direction!r}")
        if not 0 <= self.dropout < 1:
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.intra_weight < 0:
            raise ConfigError(f"intra_weight must be >= 0, got {self.intra_weight}")

    def fingerprint(self):
        payload = json.dumps(dataclasses.asdict(self), sort_keys=True)
        return hashlib.sha256(payload.encode()).hexdigest()


# ---------------------------------------------------------------------------
# metrics


@dataclass
class MetricsReport:
    confusion: np.ndarray  # [3 x 3], rows = true class, cols = predicted
    tpr: np.ndarray  # [3] per-class true positive rate
    precision: np.ndarray  # [3]
    f1: np.ndarray  # [3]
    balanced_accuracy: float  # mean TPR over the three classes
    target_recall: float  # mean TPR over the two target classes
    f1_macro: float

    def as_dict(self):
        return {
            "confusion": [[int(v) for v in row] for row in self.confusion],
            "tpr": [float(v) for v in self.tpr],
            "precision": [float(v) for v in self.precision],
            "f1": [float(v) for v in self.f1],
            "balanced_accuracy": float(self.balanced_accuracy),
            "target_recall": float(self.target_recall),
            "f1_macro": float(self.f1_macro),
        }

    @classmethod
    def from_dict(cls, d):
        return cls(
            confusion=np.asarray(d["confusion"], dtype=np.int64),
            tpr=np.asarray(d["tpr"], dtype=np.float64),
            precision=np.asarray(d["precision"], dtype=np.float64),
            f1=np.asarray(d["f1"], dtype=np.float64),
            balanced_accuracy=float(d["balanced_accuracy"]),
            target_recall=float(d["target_recall"]),
            f1_macro=float(d["f1_macro"]),
        )


def compute_metrics(y_true, y_pred) -> MetricsReport:
    """Confusion-matrix metrics; 0/0 rates are defined as 0."""
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    if y_true.shape != y_pred.shape or y_true.ndim != 1:
        raise ContractError(f"label vectors must match, got {y_true.shape} vs {y_pred.shape}")
    if len(y_true) == 0:
        raise ContractError("empty label vectors")
    for name, v in (("y_true", y_true), ("y_pred", y_pred)):
        if v.min() < 0 or v.max() >= N_CLASSES:
            raise ContractError(f"{name} labels must lie in [0, {N_CLASSES})")
    confusion = np.zeros((N_CLASSES, N_CLASSES), dtype=np.int64)
    np.add.at(confusion, (y_true, y_pred), 1)
    tp = np.diag(confusion).astype(np.float64)
    actual = confusion.sum(axis=1).astype(np.float64)
    predicted = confusion.sum(axis=0).astype(np.float64)
    tpr = np.where(actual > 0, tp / np.where(actual > 0, actual, 1), 0.0)
    precision = np.where(predicted > 0, tp / np.where(predicted > 0, predicted, 1), 0.0)
    pr = precision + tpr
    f1 = np.where(pr > 0, 2 * precision * tpr / np.where(pr > 0, pr, 1), 0.0)
    return MetricsReport(
        confusion=confusion,
        tpr=tpr,
        precision=precision,
        f1=f1,
        balanced_accuracy=(tpr[0] + tpr[1] + tpr[2]) / 3,
        target_recall=(tpr[1] + tpr[2]) / 2,
        f1_macro=(f1[0] + f1[1] + f1[2]) / 3,
    )


# ---------------------------------------------------------------------------
# scheduler


class PlateauHalving:
    """Multiply the learning rate by factor after `patience` consecutive
    epochs without strict improvement of the monitored score (higher is
    better). The bad-epoch counter resets after each cut."""

    def __init__(self, optimizer, factor=0.5, patience=5):
        self.optimizer = optimizer
        self.factor = factor
        self.patience = patience
        self.best = -math.inf
        self.bad = 0

    @property
    def lr(self):
        return self.optimizer.param_groups[0]["lr"]

    def step(self, score):
        """Record one epoch's score; returns True when a cut happened."""
        if score > self.best:
            self.best = score
            self.bad = 0
            return False
        self.bad += 1
        if self.bad >= self.patience:
            for group in self.optimizer.param_groups:
                group["lr"] *= self.factor
            self.bad = 0
            return True
        return False


# ---------------------------------------------------------------------------
# model construction and batching


def build_model(cfg: TrainConfig, n_em_components, n_eeg_channels=64, n_samples=128):
    if cfg.model == "eeg_baseline":
        return EegBaseline(n_eeg_channels, n_samples, dropout=cfg.dropout)
    return MtreeNet(
        n_eeg_channels,
        n_em_components,
        n_samples,
        use_dcm=not cfg.no_dcm,
        use_reweight=not cfg.no_cgrm,
        hierarchical=not cfg.no_hsm,
        direction=cfg.direction,
        dropout=cfg.dropout,
    )


def _tensors(ts: TrialSet, em_idx):
    eeg = torch.from_numpy(ts.eeg).unsqueeze(1)  # [N, 1, C, T]
    em = torch.from_numpy(ts.em[:, list(em_idx), :]).unsqueeze(1)
    y_tri = torch.from_numpy(ts.y_tri)
    y_bin = torch.from_numpy(ts.y_bin)
    return eeg, em, y_tri, y_bin


def _loss_flags(cfg: TrainConfig, model):
    tri_weight = tri_bias = None
    if isinstance(model, MtreeNet) and model.reweight is not None:
        tri_weight = model.heads.triple.weight
        tri_bias = model.heads.triple.bias
    return {
        "tri_weight": tri_weight,
        "tri_bias": tri_bias,
        "include_cg": not cfg.no_lcg,
        "include_sd": not cfg.no_lsd,
        "intra_weight": cfg.intra_weight,
    }


def refresh_bn_stats(model, eeg, em, batch_size=256):
    """Recompute BatchNorm running statistics over the given tensors.

    Feature scales drift freely during training (BN output is scale
    invariant), so momentum-averaged statistics go stale when epochs hold only
    a few batches. Cumulative averaging over one sweep keeps eval-mode
    behavior aligned with the current parameters.
    """
    bns = [m for m in model.modules() if isinstance(m, torch.nn.modules.batchnorm._BatchNorm)]
    if not bns:
        return
    model.eval()
    saved = [bn.momentum for bn in bns]
    for bn in bns:
        bn.reset_running_stats()
        bn.momentum = None
        bn.train()
    with torch.no_grad():
        for s in range(0, eeg.shape[0], batch_size):
            model(eeg[s : s + batch_size], em[s : s + batch_size])
    for bn, momentum in zip(bns, saved):
        bn.momentum = momentum
        bn.eval()


def predict_probs(model, ts: TrialSet, em_idx, batch_size=256):
    """Model probabilities and 3-way logits over a TrialSet, in order."""
    eeg, em, _, _ = _tensors(ts, em_idx)
    model.eval()
    probs, logits = [], []
    with torch.no_grad():
        for s in range(0, len(ts), batch_size):
            out = model(eeg[s : s + batch_size], em[s : s + batch_size])
            probs.append(out.final_probs)
            logits.append(out.tri_logits)
    return torch.cat(probs).numpy(), torch.cat(logits).numpy()


def validation_score(model, ts: TrialSet, em_idx, batch_size=256):
    probs, _ = predict_probs(model, ts, em_idx, batch_size)
    return float(compute_metrics(ts.y_tri, probs.argmax(axis=1)).balanced_accuracy)


# ---------------------------------------------------------------------------
# single-fold training


@dataclass
class TrainedModel:
    model: torch.nn.Module
    config: TrainConfig
    best_epoch: int
    best_val_ba: float
    fingerprint: str
    info: dict = field(default_factory=dict)


def train_fold(train_ts: TrialSet, val_ts: TrialSet, cfg: TrainConfig):
    """Train on one inner split; returns (TrainedModel, history rows).

    train_ts is expected to be rebalanced already; val_ts keeps its natural
    distribution. The returned model carries the parameters of the epoch with
    the best (strictly improved) validation balanced accuracy.
    """
    cfg.validate()
    em_idx = EM_SUBSETS[cfg.em_components]
    torch.manual_seed(cfg.seed)
    model = build_model(cfg, len(em_idx), train_ts.eeg.shape[1], train_ts.eeg.shape[2])
    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    sched = PlateauHalving(opt, factor=cfg.lr_factor, patience=cfg.patience)
    flags = _loss_flags(cfg, model)

    eeg, em, y_tri, y_bin = _tensors(train_ts, em_idx)
    n = len(train_ts)
    history = []
    best_ba, best_epoch, best_state = -math.inf, 0, None

    for epoch in range(1, cfg.max_epochs + 1):
        perm = np.random.default_rng([cfg.seed, epoch]).permutation(n)
        model.train()
        sums = {k: 0.0 for k in objective.LOSS_KEYS}
        diag = {"mean_r_eeg": 0.0, "mean_phi0": 0.0}
        have_diag = False
        for s in range(0, n, cfg.batch_size):
            b = perm[s : s + cfg.batch_size]
            out = model(eeg[b], em[b])
            terms = objective.assemble_losses(out, y_tri[b], y_bin[b], **flags)
            loss = terms["L_overall"]
            if not torch.isfinite(loss):
                raise NumericalDivergenceError(epoch)
            opt.zero_grad()
            loss.backward()
            opt.step()
            for k in objective.LOSS_KEYS:
                sums[k] += float(terms[k].detach()) * len(b)
            if not math.isnan(terms["mean_r_eeg"]):
                have_diag = True
                diag["mean_r_eeg"] += terms["mean_r_eeg"] * len(b)
                diag["mean_phi0"] += terms["mean_phi0"] * len(b)

        lr_now = sched.lr  # rate in effect during this epoch
        refresh_bn_stats(model, eeg, em, cfg.batch_size)
        val_ba = validation_score(model, val_ts, em_idx, cfg.batch_size)
        row = {"epoch": epoch, "lr": lr_now}
        for k in objective.LOSS_KEYS:
            if k != "L_cls":
                row[k] = sums[k] / n
        row["val_BA"] = val_ba
        row["mean_r_eeg"] = diag["mean_r_eeg"] / n if have_diag else float("nan")
        row["mean_phi0"] = diag["mean_phi0"] / n if have_diag else float("nan")
        history.append(row)

        if val_ba > best_ba:
            best_ba, best_epoch = val_ba, epoch
            best_state = copy.deepcopy(model.state_dict())
        sched.step(val_ba)

    model.load_state_dict(best_state)
    return (
        TrainedModel(
            model=model,
            config=cfg,
            best_epoch=best_epoch,
            best_val_ba=best_ba,
            fingerprint=cfg.fingerprint(),
        ),
        history,
    )


def write_history(history, path):
    """History rows to CSV with the fixed column order."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(HISTORY_COLUMNS)
        for row in history:
            writer.writerow([repr(row[c]) if isinstance(row[c], float) else row[c] for c in HISTORY_COLUMNS])


def evaluate(tm: TrainedModel, ts: TrialSet, batch_size=256):
    """Metrics plus per-trial outputs of a trained model on a trial set."""
    em_idx = EM_SUBSETS[tm.config.em_components]
    probs, logits = predict_probs(tm.model, ts, em_idx, batch_size)
    y_pred = probs.argmax(axis=1)
    report = compute_metrics(ts.y_tri, y_pred)
    per_trial = {
        "final_probs": probs.tolist(),
        "tri_logits": logits.tolist(),
        "y_true": [int(v) for v in ts.y_tri],
        "y_pred": [int(v) for v in y_pred],
    }
    return report, per_trial


# ---------------------------------------------------------------------------
# checkpoints

_MAGIC = b"MTNC"
_FORMAT_VERSION = 1


def save_checkpoint(tm: TrainedModel, path):
    model = tm.model
    state = model.state_dict()
    manifest = []
    blobs = []
    for name, tensor in state.items():
        arr = np.ascontiguousarray(tensor.detach().cpu().numpy(), dtype="<f4")
        manifest.append({"name": name, "shape": list(tensor.shape)})
        blobs.append(arr.tobytes())
    if isinstance(model, EegBaseline):
        model_spec = {
            "kind": "eeg_baseline",
            "n_eeg_channels": model.extractor.n_channels,
            "n_samples": model.extractor.n_samples,
            "n_em_components": 0,
        }
    else:
        model_spec = {
            "kind": "mtree",
            "n_eeg_channels": model.eeg_extractor.n_channels,
            "n_samples": model.eeg_extractor.n_samples,
            "n_em_components": model.em_extractor.n_components,
        }
    header = {
        "format_version": _FORMAT_VERSION,
        "model": model_spec,
        "train_config": dataclasses.asdict(tm.config),
        "fingerprint": tm.fingerprint,
        "best_epoch": tm.best_epoch,
        "best_val_ba": tm.best_val_ba,
        "info": tm.info,
        "arrays": manifest,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode()
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "wb") as f:
        f.write(_MAGIC)
        f.write(struct.pack("<I", len(header_bytes)))
        f.write(header_bytes)
        for blob in blobs:
            f.write(blob)


def load_checkpoint(path) -> TrainedModel:
    with open(path, "rb") as f:
        data = f.read()
    if data[:4] != _MAGIC:
        raise SchemaViolationError(f"{path}: bad magic, not a checkpoint")
    (header_len,) = struct.unpack("<I", data[4:8])
    header = json.loads(data[8 : 8 + header_len].decode())
    if header.get("format_version") != _FORMAT_VERSION:
        raise SchemaViolationError(f"{path}: unsupported format {header.get('format_version')}")
    cfg = TrainConfig(**header["train_config"])
    spec = header["model"]
    model = build_model(cfg, spec["n_em_components"], spec["n_eeg_channels"], spec["n_samples"])
    reference = model.state_dict()
    manifest_names = [entry["name"] for entry in header["arrays"]]
    if set(manifest_names) != set(reference.keys()):
        raise SchemaViolationError(f"{path}: array manifest does not match the model")
    offset = 8 + header_len
    state = {}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        blob = data[offset : offset + 4 * count]
        if len(blob) != 4 * count:
            raise SchemaViolationError(f"{path}: truncated array {entry['name']}")
        offset += 4 * count
        arr = np.frombuffer(blob, dtype="<f4").reshape(shape)
        state[entry["name"]] = torch.from_numpy(arr.copy()).to(reference[entry["name"]].dtype)
    model.load_state_dict(state)
    model.eval()
    return TrainedModel(
        model=model,
        config=cfg,
        best_epoch=header["best_epoch"],
        best_val_ba=header["best_val_ba"],
        fingerprint=header["fingerprint"],
        info=header.get("info", {}),
    )


# ---------------------------------------------------------------------------
# saliency


def _normalize_map(v):
    v = np.asarray(v, dtype=np.float64)
    lo, hi = v.min(), v.max()
    if hi <= lo:
        return np.zeros_like(v)
    return (v - lo) / (hi - lo)


def saliency_maps(tm: TrainedModel, ts: TrialSet, batch_size=64):
    """Input-gradient saliency on target-class trials.

    Per trial: absolute gradient of the predicted-class probability with
    respect to each input sample, averaged over trials, then reduced along
    channels/time and min-max normalized to [0, 1].
    """
    target_idx = np.nonzero(ts.y_tri > 0)[0]
    if len(target_idx) == 0:
        raise DegenerateClassError("saliency needs target-class trials")
    sub = ts.subset(target_idx)
    em_idx = EM_SUBSETS[tm.config.em_components]
    eeg, em, _, _ = _tensors(sub, em_idx)
    model = tm.model
    model.eval()
    eeg_only = isinstance(model, EegBaseline)
    acc_eeg = np.zeros(eeg.shape[2:], dtype=np.float64)  # [C, T]
    acc_em = None if eeg_only else np.zeros(em.shape[2:], dtype=np.float64)
    n = len(sub)
    for s in range(0, n, batch_size):
        xe = eeg[s : s + batch_size].clone().requires_grad_(True)
        xm = em[s : s + batch_size].clone()
        inputs = [xe]
        if not eeg_only:
            xm.requires_grad_(True)
            inputs.append(xm)
        out = model(xe, xm)
        pred = out.final_probs.argmax(dim=1, keepdim=True)
        score = out.final_probs.gather(1, pred).sum()
        grads = torch.autograd.grad(score, inputs)
        acc_eeg += grads[0].abs().sum(dim=0).squeeze(0).numpy()
        if not eeg_only:
            acc_em += grads[1].abs().sum(dim=0).squeeze(0).numpy()
    eeg_map = acc_eeg / n
    maps = {
        "n_trials": n,
        "em_components": list(em_idx),
        "eeg_map": eeg_map,
        "eeg_channel": _normalize_map(eeg_map.mean(axis=1)),
        "eeg_time": _normalize_map(eeg_map.mean(axis=0)),
    }
    if not eeg_only:
        em_map = acc_em / n
        maps["em_map"] = em_map
        maps["em_component"] = _normalize_map(em_map.mean(axis=1))
        maps["em_time"] = _normalize_map(em_map.mean(axis=0))
    return maps


# ---------------------------------------------------------------------------
# cross-validation


def _fold_seed(base_seed, subject_index, fold_index, inner_index):
    ss = np.random.SeedSequence([int(base_seed), subject_index, fold_index, inner_index])
    return int(ss.generate_state(1)[0])


def _mean_std(values):
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std())


def _summarize(metric_dicts):
    keys = ("balanced_accuracy", "target_recall", "f1_macro")
    mean = {k: _mean_std([m[k] for m in metric_dicts])[0] for k in keys}
    std = {k: _mean_std([m[k] for m in metric_dicts])[1] for k in keys}
    return mean, std


def _run_fold(args):
    sub_ts, fold, cfg, subject_index, fold_index, subject_id = args
    inner_indices = range(len(fold.inner)) if cfg.full_inner else [0]
    inner_results = []
    for k in inner_indices:
        split = fold.inner[k]
        seed_k = _fold_seed(cfg.seed, subject_index, fold_index, k)
        cfg_k = dataclasses.replace(cfg, seed=seed_k)
        train_sub = rebalance(sub_ts.subset(split.train_idx), seed=seed_k)
        val_sub = sub_ts.subset(split.val_idx)
        tm, history = train_fold(train_sub, val_sub, cfg_k)
        test_sub = sub_ts.subset(fold.test_idx)
        report, per_trial = evaluate(tm, test_sub)
        inner_results.append(
            {
                "inner_index": k,
                "tm": tm,
                "history": history,
                "test_report": report,
                "per_trial": per_trial,
                "counts": {
                    "train_class_counts": [int(v) for v in train_sub.class_counts()],
                    "val_class_counts": [int(v) for v in val_sub.class_counts()],
                    "test_class_counts": [int(v) for v in test_sub.class_counts()],
                },
            }
        )
    return subject_id, fold_index, fold.test_block, inner_results


def cross_validate(ts: TrialSet, cfg: TrainConfig, out_dir=None, jobs=1):
    """Nested cross-validation over every subject in ts.

    Returns the report dict (also written as report.json along with
    checkpoints and history CSVs when out_dir is given).
    """
    cfg.validate()
    subjects = ts.subjects
    job_args = []
    for si, sub in enumerate(subjects):
        sub_ts = ts.for_subject(sub)
        plan = plan_folds(sub_ts, seed=cfg.seed)
        for fi, fold in enumerate(plan.outer):
            job_args.append((sub_ts, fold, cfg, si, fi, sub))

    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_fold, job_args))
    else:
        results = [_run_fold(a) for a in job_args]

    if out_dir:
        os.makedirs(os.path.join(out_dir, "checkpoints"), exist_ok=True)
        os.makedirs(os.path.join(out_dir, "history"), exist_ok=True)

    report = {
        "schema": "mtree-report-1",
        "train_config": dataclasses.asdict(cfg),
        "fingerprint": cfg.fingerprint(),
        "subjects": {},
    }
    for subject_id, fold_index, test_block, inner_results in results:
        sub_entry = report["subjects"].setdefault(subject_id, {"folds": []})
        primary = inner_results[0]
        fold_entry = {
            "fold_index": fold_index,
            "test_block": int(test_block),
            "val_inner_index": primary["inner_index"],
            "best_epoch": primary["tm"].best_epoch,
            "best_val_ba": primary["tm"].best_val_ba,
            "metrics": primary["test_report"].as_dict(),
            "per_trial": primary["per_trial"],
        }
        fold_entry.update(primary["counts"])
        if cfg.full_inner:
            fold_entry["inner"] = [
                {
                    "inner_index": r["inner_index"],
                    "best_val_ba": r["tm"].best_val_ba,
                    "metrics": r["test_report"].as_dict(),
                }
                for r in inner_results
            ]
        if out_dir:
            for r in inner_results:
                suffix = "" if r["inner_index"] == 0 else f"_inner{r['inner_index']}"
                name = f"{subject_id}_block{test_block}{suffix}"
                ckpt_rel = os.path.join("checkpoints", name + ".ckpt")
                hist_rel = os.path.join("history", name + ".csv")
                r["tm"].info = {
                    "subject_id": subject_id,
                    "test_block": int(test_block),
                    "inner_index": r["inner_index"],
                    "metrics": r["test_report"].as_dict(),
                }
                save_checkpoint(r["tm"], os.path.join(out_dir, ckpt_rel))
                write_history(r["history"], os.path.join(out_dir, hist_rel))
                if r["inner_index"] == primary["inner_index"]:
                    fold_entry["checkpoint"] = ckpt_rel
                    fold_entry["history"] = hist_rel
        sub_entry["folds"].append(fold_entry)

    subject_means = []
    for subject_id, sub_entry in report["subjects"].items():
        sub_entry["folds"].sort(key=lambda e: e["fold_index"])
        fold_metrics = [f["metrics"] for f in sub_entry["folds"]]
        mean, std = _summarize(fold_metrics)
        sub_entry["mean"] = mean
        sub_entry["std_over_folds"] = std
        subject_means.append(mean)
    agg_mean, agg_std = _summarize(subject_means)
    report["aggregate"] = {
        "n_subjects": len(subjects),
        "mean": agg_mean,
        "std": agg_std,
    }
    if out_dir:
        with open(os.path.join(out_dir, "report.json"), "w") as f:
            json.dump(report, f, indent=1)
    return report


def run_ablations(ts: TrialSet, cfg: TrainConfig, out_dir=None, jobs=1):
    """Run the six ablation configurations and collect their reports."""
    cfg.validate()
    configurations = {}
    for name, overrides in ABLATIONS:
        sub_cfg = dataclasses.replace(cfg, **overrides)
        sub_out = os.path.join(out_dir, name) if out_dir else None
        logger.info("ablation %s", name)
        configurations[name] = cross_validate(ts, sub_cfg, out_dir=sub_out, jobs=jobs)
    report = {"schema": "mtree-ablation-1", "configurations": configurations}
    if out_dir:
        with open(os.path.join(out_dir, "ablation_report.json"), "w") as f:
            json.dump(report, f, indent=1)
    return report
