"""Dataset layouts, preprocessing, fold planning and class rebalancing.

Two on-disk layouts are understood:

raw::

    <root>/<subject_id>/<task>/<block_id>/eeg.bin      float32-LE [channels x samples]
    <root>/<subject_id>/<task>/<block_id>/em.bin       float32-LE [components x samples]
    <root>/<subject_id>/<task>/<block_id>/events.tsv   onset_sample<TAB>label per line
    plus eeg.meta.json / em.meta.json sidecars (shape, rate, channel names)

preprocessed::

    <root>/<subject_id>/<task>/trials.bin              float32-LE [n_trials x 70 x 128]
    <root>/<subject_id>/<task>/trials.meta.json

trials.bin packs each trial as 70 rows: rows 0..63 are EEG channels, rows
64..69 the eye-movement components in EM_COMPONENTS order. All labels, block
ids and the sampling rate live in the sidecar.

Preprocessing order is fixed: band-pass the EEG at the source rate, down-sample
both streams to the target rate, epoch around each event onset, subtract the
per-channel mean of the pre-onset baseline window from the EEG epoch.
"""

import dataclasses
import json
import logging
import os
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy import signal

from .errors import (
    ConfigError,
    CorpusIncompleteError,
    DegenerateClassError,
    FoldArityError,
    SchemaViolationError,
)

logger = logging.getLogger(__name__)

N_EEG_CHANNELS = 64
N_EM_COMPONENTS = 6

EM_COMPONENTS = (
    "pupil_left",
    "pupil_right",
    "gaze_x_left",
    "gaze_x_right",
    "gaze_y_left",
    "gaze_y_right",
)

# index groups used by the EM-subset training configurations
EM_SUBSETS = {
    "all": (0, 1, 2, 3, 4, 5),
    "pupil": (0, 1),
    "x": (2, 3),
    "y": (4, 5),
}

LABEL_NAMES = ("non_target", "target_1", "target_2")


@dataclass
class PreprocessConfig:
    """Signal-conditioning parameters.

    baseline_ms and epoch_ms are windows relative to the event onset; the
    baseline window must end at or before the epoch start. The default epoch
    (0..1000 ms at 128 Hz) yields 128 samples; the default baseline
    (-200..0 ms) spans round(0.200 * 128) = 26 samples before onset.
    """

    target_rate: float = 128.0
    band: tuple = (0.5, 15.0)
    filter_order: int = 3
    baseline_ms: tuple = (-200.0, 0.0)
    epoch_ms: tuple = (0.0, 1000.0)

    def validate(self):
        if self.target_rate <= 0:
            raise ConfigError(f"target_rate must be positive, got {self.target_rate}")
        lo, hi = self.band
        if not 0 < lo < hi:
            raise ConfigError(f"band must satisfy 0 < low < high, got {self.band}")
        if hi >= self.target_rate / 2:
            raise ConfigError(
                f"band high edge {hi} must lie below the target Nyquist {self.target_rate / 2}"
            )
        if self.filter_order < 1:
            raise ConfigError(f"filter_order must be >= 1, got {self.filter_order}")
        if self.epoch_ms[1] <= self.epoch_ms[0]:
            raise ConfigError(f"epoch_ms must be increasing, got {self.epoch_ms}")
        if self.baseline_ms[1] > self.epoch_ms[0]:
            raise ConfigError(
                f"baseline window {self.baseline_ms} must end at or before epoch start"
            )

    @property
    def n_samples(self):
        return int(round((self.epoch_ms[1] - self.epoch_ms[0]) / 1000.0 * self.target_rate))

    @property
    def n_baseline(self):
        return int(round((self.baseline_ms[1] - self.baseline_ms[0]) / 1000.0 * self.target_rate))


@dataclass
class Trial:
    eeg: np.ndarray  # [channels x samples] float32
    em: np.ndarray  # [components x samples] float32
    y_tri: int  # 0 non-target, 1 target-1, 2 target-2
    y_bin: int  # 0 non-target, 1 target
    subject_id: str
    block_id: int


@dataclass
class RawRecording:
    subject_id: str
    block_id: int
    rate: float
    eeg: np.ndarray  # [channels x samples]
    em: np.ndarray  # [components x samples]
    events: list  # [(onset_sample, label)], onsets at the source rate


class TrialSet:
    """Ordered collection of trials stored as structure-of-arrays."""

    def __init__(self, eeg, em, y_tri, y_bin, subject_ids, block_ids, rate=128.0):
        self.eeg = np.ascontiguousarray(eeg, dtype=np.float32)
        self.em = np.ascontiguousarray(em, dtype=np.float32)
        self.y_tri = np.asarray(y_tri, dtype=np.int64)
        self.y_bin = np.asarray(y_bin, dtype=np.int64)
        self.subject_ids = np.asarray(subject_ids)
        self.block_ids = np.asarray(block_ids, dtype=np.int64)
        self.rate = float(rate)
        n = len(self.eeg)
        for name, arr in [
            ("em", self.em),
            ("y_tri", self.y_tri),
            ("y_bin", self.y_bin),
            ("subject_ids", self.subject_ids),
            ("block_ids", self.block_ids),
        ]:
            if len(arr) != n:
                raise SchemaViolationError(f"{name} has {len(arr)} rows, expected {n}")

    @classmethod
    def from_trials(cls, trials, rate=128.0):
        if not trials:
            raise DegenerateClassError("cannot build a TrialSet from zero trials")
        return cls(
            eeg=np.stack([t.eeg for t in trials]),
            em=np.stack([t.em for t in trials]),
            y_tri=[t.y_tri for t in trials],
            y_bin=[t.y_bin for t in trials],
            subject_ids=[t.subject_id for t in trials],
            block_ids=[t.block_id for t in trials],
            rate=rate,
        )

    def __len__(self):
        return len(self.eeg)

    def __getitem__(self, i) -> Trial:
        return Trial(
            eeg=self.eeg[i],
            em=self.em[i],
            y_tri=int(self.y_tri[i]),
            y_bin=int(self.y_bin[i]),
            subject_id=str(self.subject_ids[i]),
            block_id=int(self.block_ids[i]),
        )

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    @property
    def trials(self):
        return [self[i] for i in range(len(self))]

    def subset(self, idx) -> "TrialSet":
        idx = np.asarray(idx)
        return TrialSet(
            self.eeg[idx],
            self.em[idx],
            self.y_tri[idx],
            self.y_bin[idx],
            self.subject_ids[idx],
            self.block_ids[idx],
            rate=self.rate,
        )

    @property
    def subjects(self):
        return sorted(set(str(s) for s in self.subject_ids))

    def for_subject(self, subject_id) -> "TrialSet":
        mask = self.subject_ids == subject_id
        if not mask.any():
            raise CorpusIncompleteError(f"no trials for subject {subject_id!r}")
        return self.subset(np.nonzero(mask)[0])

    def block_groups(self):
        """Dict mapping block id to the trial indices of that block."""
        groups = {}
        for b in sorted(set(int(x) for x in self.block_ids)):
            groups[b] = np.nonzero(self.block_ids == b)[0]
        return groups

    def class_counts(self):
        return np.bincount(self.y_tri, minlength=3)


# ---------------------------------------------------------------------------
# filtering and resampling


def design_bandpass(band, order, rate):
    """Butterworth band-pass coefficients (b, a) for the given sampling rate."""
    nyq = rate / 2.0
    lo, hi = band
    if not 0 < lo < hi < nyq:
        raise ConfigError(f"band {band} invalid for rate {rate}")
    return signal.butter(order, [lo / nyq, hi / nyq], btype="bandpass")


def bandpass_filter(x, band, order, rate):
    """Zero-phase band-pass along the last axis (forward-backward application)."""
    b, a = design_bandpass(band, order, rate)
    return signal.filtfilt(b, a, x, axis=-1)


def _rate_fraction(target_rate, source_rate):
    # express target/source as a reduced integer ratio; rates are treated as
    # exact to 1e-3 Hz
    frac = Fraction(int(round(target_rate * 1000)), int(round(source_rate * 1000)))
    return frac.numerator, frac.denominator


def downsample(x, source_rate, target_rate):
    """Down-sample along the last axis.

    Integer rate ratios decimate (callers band-limit the EEG first); other
    ratios go through polyphase resampling.
    """
    if source_rate == target_rate:
        return np.asarray(x)
    if source_rate < target_rate:
        raise ConfigError(
            f"source rate {source_rate} below target rate {target_rate}; refusing to upsample"
        )
    up, down = _rate_fraction(target_rate, source_rate)
    if up == 1:
        return np.asarray(x)[..., ::down]
    return signal.resample_poly(x, up, down, axis=-1)


def map_onset(onset, source_rate, target_rate):
    return int(round(onset * target_rate / source_rate))


def interpolate_blinks(pupil):
    """Replace non-positive pupil samples by linear interpolation.

    Interior gaps are bridged linearly; runs touching either edge are held at
    the nearest valid sample. A channel with no valid samples is left as-is.
    """
    pupil = np.array(pupil, copy=True)
    valid = pupil > 0
    if valid.all() or not valid.any():
        return pupil
    idx = np.arange(len(pupil))
    pupil[~valid] = np.interp(idx[~valid], idx[valid], pupil[valid])
    return pupil


# ---------------------------------------------------------------------------
# preprocessing


def preprocess(rec: RawRecording, cfg: PreprocessConfig):
    """Turn one continuous recording into a list of epoched trials.

    Events whose epoch or baseline window falls outside the recording are
    skipped (counted in the log). Labels must be in {0, 1, 2}.
    """
    cfg.validate()
    if rec.eeg.ndim != 2 or rec.em.ndim != 2:
        raise SchemaViolationError("recordings must be [channels x samples]")
    if rec.rate < cfg.target_rate:
        raise ConfigError(f"recording rate {rec.rate} below target {cfg.target_rate}")

    em = np.array(rec.em, dtype=np.float64, copy=True)
    for comp in range(min(2, em.shape[0])):  # pupil components only
        em[comp] = interpolate_blinks(em[comp])

    eeg = bandpass_filter(np.asarray(rec.eeg, dtype=np.float64), cfg.band, cfg.filter_order, rec.rate)
    eeg = downsample(eeg, rec.rate, cfg.target_rate)
    em = downsample(em, rec.rate, cfg.target_rate)

    n_samples = cfg.n_samples
    start_off = int(round(cfg.epoch_ms[0] / 1000.0 * cfg.target_rate))
    base_lo_off = int(round(cfg.baseline_ms[0] / 1000.0 * cfg.target_rate))
    base_hi_off = int(round(cfg.baseline_ms[1] / 1000.0 * cfg.target_rate))

    trials = []
    skipped = 0
    for onset, label in rec.events:
        label = int(label)
        if label not in (0, 1, 2):
            raise SchemaViolationError(
                f"label {label} outside {{0,1,2}} in block {rec.block_id} of {rec.subject_id}"
            )
        o = map_onset(int(onset), rec.rate, cfg.target_rate)
        start, stop = o + start_off, o + start_off + n_samples
        b_lo, b_hi = o + base_lo_off, o + base_hi_off
        if min(start, b_lo) < 0 or max(stop, b_hi) > eeg.shape[-1]:
            skipped += 1
            continue
        eeg_ep = eeg[:, start:stop] - eeg[:, b_lo:b_hi].mean(axis=1, keepdims=True)
        em_ep = em[:, start:stop]
        trials.append(
            Trial(
                eeg=eeg_ep.astype(np.float32),
                em=em_ep.astype(np.float32),
                y_tri=label,
                y_bin=int(label > 0),
                subject_id=rec.subject_id,
                block_id=rec.block_id,
            )
        )
    if skipped:
        logger.warning(
            "skipped %d events with out-of-range windows in %s block %d",
            skipped,
            rec.subject_id,
            rec.block_id,
        )
    return trials


def preprocess_recordings(recordings, cfg: PreprocessConfig) -> TrialSet:
    """Preprocess recordings (sorted by subject, block) into one TrialSet."""
    recs = sorted(recordings, key=lambda r: (r.subject_id, r.block_id))
    trials = []
    for rec in recs:
        trials.extend(preprocess(rec, cfg))
    if not trials:
        raise DegenerateClassError("preprocessing produced no trials")
    return TrialSet.from_trials(trials, rate=cfg.target_rate)


# ---------------------------------------------------------------------------
# on-disk IO


def _write_array(path, arr):
    with open(path, "wb") as f:
        f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def _read_array(path, shape):
    expected = int(np.prod(shape)) * 4
    size = os.path.getsize(path)
    if size != expected:
        raise SchemaViolationError(
            f"{path}: {size} bytes on disk but sidecar shape {list(shape)} needs {expected}"
        )
    with open(path, "rb") as f:
        data = f.read()
    return np.frombuffer(data, dtype="<f4").reshape(shape).copy()


def save_raw(recordings, root, task):
    """Write recordings in the raw layout under root."""
    for rec in recordings:
        d = os.path.join(root, rec.subject_id, task, str(rec.block_id))
        os.makedirs(d, exist_ok=True)
        _write_array(os.path.join(d, "eeg.bin"), rec.eeg)
        _write_array(os.path.join(d, "em.bin"), rec.em)
        with open(os.path.join(d, "events.tsv"), "w") as f:
            for onset, label in rec.events:
                f.write(f"{int(onset)}\t{int(label)}\n")
        eeg_meta = {
            "shape": list(rec.eeg.shape),
            "rate": rec.rate,
            "channels": [f"ch{i + 1:02d}" for i in range(rec.eeg.shape[0])],
        }
        em_meta = {
            "shape": list(rec.em.shape),
            "rate": rec.rate,
            "channels": list(EM_COMPONENTS[: rec.em.shape[0]]),
        }
        with open(os.path.join(d, "eeg.meta.json"), "w") as f:
            json.dump(eeg_meta, f, indent=1)
        with open(os.path.join(d, "em.meta.json"), "w") as f:
            json.dump(em_meta, f, indent=1)


def _subject_dirs(root):
    if not os.path.isdir(root):
        raise CorpusIncompleteError(f"dataset root {root} does not exist")
    subs = sorted(d for d in os.listdir(root) if os.path.isdir(os.path.join(root, d)))
    if not subs:
        raise CorpusIncompleteError(f"dataset root {root} contains no subject directories")
    return subs


def load_raw(root, task):
    """Load every block of every subject for one task from the raw layout."""
    recordings = []
    for sub in _subject_dirs(root):
        task_dir = os.path.join(root, sub, task)
        if not os.path.isdir(task_dir):
            raise CorpusIncompleteError(f"subject {sub} has no task directory {task!r}")
        block_dirs = [d for d in os.listdir(task_dir) if os.path.isdir(os.path.join(task_dir, d))]
        if not block_dirs:
            raise CorpusIncompleteError(f"{task_dir} contains no block directories")
        try:
            block_ids = sorted(int(b) for b in block_dirs)
        except ValueError as e:
            raise SchemaViolationError(f"non-integer block directory under {task_dir}: {e}")
        for block in block_ids:
            d = os.path.join(task_dir, str(block))
            for fname in ("eeg.bin", "em.bin", "events.tsv", "eeg.meta.json", "em.meta.json"):
                if not os.path.isfile(os.path.join(d, fname)):
                    raise CorpusIncompleteError(f"missing {fname} in {d}")
            with open(os.path.join(d, "eeg.meta.json")) as f:
                eeg_meta = json.load(f)
            with open(os.path.join(d, "em.meta.json")) as f:
                em_meta = json.load(f)
            if eeg_meta.get("rate") != em_meta.get("rate"):
                raise SchemaViolationError(f"{d}: eeg/em sidecar rates disagree")
            eeg = _read_array(os.path.join(d, "eeg.bin"), eeg_meta["shape"])
            em = _read_array(os.path.join(d, "em.bin"), em_meta["shape"])
            events = []
            with open(os.path.join(d, "events.tsv")) as f:
                for ln, line in enumerate(f, 1):
                    line = line.rstrip("\n")
                    if not line:
                        continue
                    parts = line.split("\t")
                    if len(parts) != 2:
                        raise SchemaViolationError(f"{d}/events.tsv line {ln}: expected 2 fields")
                    events.append((int(parts[0]), int(parts[1])))
            recordings.append(
                RawRecording(
                    subject_id=sub,
                    block_id=block,
                    rate=float(eeg_meta["rate"]),
                    eeg=eeg,
                    em=em,
                    events=events,
                )
            )
    return recordings


def save_trials(ts: TrialSet, root, task):
    """Write a TrialSet in the preprocessed layout (one file per subject)."""
    for sub in ts.subjects:
        sub_ts = ts.for_subject(sub)
        d = os.path.join(root, sub, task)
        os.makedirs(d, exist_ok=True)
        packed = np.concatenate([sub_ts.eeg, sub_ts.em], axis=1)  # [n x 70 x T]
        _write_array(os.path.join(d, "trials.bin"), packed)
        meta = {
            "n_trials": len(sub_ts),
            "eeg_channels": int(sub_ts.eeg.shape[1]),
            "em_components": int(sub_ts.em.shape[1]),
            "n_samples": int(sub_ts.eeg.shape[2]),
            "rate": sub_ts.rate,
            "subject_id": sub,
            "y_tri": [int(v) for v in sub_ts.y_tri],
            "y_bin": [int(v) for v in sub_ts.y_bin],
            "block_ids": [int(v) for v in sub_ts.block_ids],
            "em_component_names": list(EM_COMPONENTS[: sub_ts.em.shape[1]]),
        }
        with open(os.path.join(d, "trials.meta.json"), "w") as f:
            json.dump(meta, f, indent=1)


def load_trials(root, task) -> TrialSet:
    """Load the preprocessed layout for one task into a single TrialSet."""
    parts = []
    rate = None
    for sub in _subject_dirs(root):
        d = os.path.join(root, sub, task)
        bin_path = os.path.join(d, "trials.bin")
        meta_path = os.path.join(d, "trials.meta.json")
        if not os.path.isfile(bin_path) or not os.path.isfile(meta_path):
            raise CorpusIncompleteError(f"missing trials.bin/trials.meta.json under {d}")
        with open(meta_path) as f:
            meta = json.load(f)
        n, ce, cm, t = (
            meta["n_trials"],
            meta["eeg_channels"],
            meta["em_components"],
            meta["n_samples"],
        )
        packed = _read_array(bin_path, (n, ce + cm, t))
        for key in ("y_tri", "y_bin", "block_ids"):
            if len(meta[key]) != n:
                raise SchemaViolationError(f"{meta_path}: {key} length != n_trials")
        if rate is None:
            rate = meta["rate"]
        elif rate != meta["rate"]:
            raise SchemaViolationError(f"{meta_path}: rate {meta['rate']} differs from {rate}")
        parts.append(
            TrialSet(
                eeg=packed[:, :ce, :],
                em=packed[:, ce:, :],
                y_tri=meta["y_tri"],
                y_bin=meta["y_bin"],
                subject_ids=[sub] * n,
                block_ids=meta["block_ids"],
                rate=meta["rate"],
            )
        )
    return concatenate_trialsets(parts)


def concatenate_trialsets(parts):
    if not parts:
        raise CorpusIncompleteError("no trial sets to concatenate")
    if len(parts) == 1:
        return parts[0]
    return TrialSet(
        eeg=np.concatenate([p.eeg for p in parts]),
        em=np.concatenate([p.em for p in parts]),
        y_tri=np.concatenate([p.y_tri for p in parts]),
        y_bin=np.concatenate([p.y_bin for p in parts]),
        subject_ids=np.concatenate([p.subject_ids for p in parts]),
        block_ids=np.concatenate([p.block_ids for p in parts]),
        rate=parts[0].rate,
    )


def load_dataset(root, task, preprocess_cfg=None):
    """Auto-detect the layout under root and load it.

    Preprocessed layouts return a TrialSet directly. Raw layouts are loaded
    and, when preprocess_cfg is given, run through preprocessing; otherwise
    the list of RawRecording is returned.
    """
    subs = _subject_dirs(root)
    has_trials = any(
        os.path.isfile(os.path.join(root, s, task, "trials.bin")) for s in subs
    )
    if has_trials:
        return load_trials(root, task)
    recs = load_raw(root, task)
    if preprocess_cfg is not None:
        return preprocess_recordings(recs, preprocess_cfg)
    return recs


# ---------------------------------------------------------------------------
# fold planning and rebalancing


@dataclass
class InnerSplit:
    train_idx: np.ndarray
    val_idx: np.ndarray


@dataclass
class OuterFold:
    test_block: int
    train_blocks: tuple
    test_idx: np.ndarray
    inner: list  # [InnerSplit] x 5


@dataclass
class FoldPlan:
    seed: int
    outer: list  # [OuterFold] x 5

    def describe(self):
        return [
            {
                "test_block": f.test_block,
                "train_blocks": list(f.train_blocks),
                "n_test": int(len(f.test_idx)),
            }
            for f in self.outer
        ]


N_BLOCKS = 5
N_INNER = 5


def plan_folds(ts: TrialSet, seed: int) -> FoldPlan:
    """Nested block-wise cross-validation plan.

    Outer folds hold out each of the five blocks once (ordered by block id);
    the remaining four blocks are shuffled at trial level and split into five
    inner train/validation partitions. Indices refer to positions in ts.
    """
    blocks = sorted(set(int(b) for b in ts.block_ids))
    if len(blocks) != N_BLOCKS:
        raise FoldArityError(f"expected {N_BLOCKS} blocks, found {len(blocks)}: {blocks}")
    outer = []
    for fi, test_block in enumerate(blocks):
        test_idx = np.nonzero(ts.block_ids == test_block)[0]
        train_idx = np.nonzero(ts.block_ids != test_block)[0]
        rng = np.random.default_rng([int(seed), fi])
        perm = rng.permutation(train_idx)
        chunks = np.array_split(perm, N_INNER)
        inner = []
        for k in range(N_INNER):
            val = np.sort(chunks[k])
            train = np.sort(np.concatenate([chunks[j] for j in range(N_INNER) if j != k]))
            inner.append(InnerSplit(train_idx=train, val_idx=val))
        outer.append(
            OuterFold(
                test_block=test_block,
                train_blocks=tuple(b for b in blocks if b != test_block),
                test_idx=test_idx,
                inner=inner,
            )
        )
    return FoldPlan(seed=int(seed), outer=outer)


def rebalance(ts: TrialSet, seed: int) -> TrialSet:
    """Down-sample the non-target class to round(mean(n_t1, n_t2)).

    Membership-only: surviving trials keep their contents and original order.
    All three classes must be present.
    """
    counts = ts.class_counts()
    for cls, n in enumerate(counts):
        if n == 0:
            raise DegenerateClassError(f"class {LABEL_NAMES[cls]} absent; cannot rebalance")
    target_nt = int(round((int(counts[1]) + int(counts[2])) / 2.0))
    nt_idx = np.nonzero(ts.y_tri == 0)[0]
    if len(nt_idx) > target_nt:
        rng = np.random.default_rng(int(seed))
        nt_keep = rng.choice(nt_idx, size=target_nt, replace=False)
    else:
        nt_keep = nt_idx
    keep = np.sort(np.concatenate([nt_keep, np.nonzero(ts.y_tri > 0)[0]]))
    return ts.subset(keep)
