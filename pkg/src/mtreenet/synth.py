"""Synthetic RSVP-style corpus generator with a brute-force metrics oracle.

Target trials carry a fixed event-related template on the last 16 EEG
channels: a negative Gaussian bump centered at 340 ms (sd 60 ms) plus a
positive bump at 520 ms (sd 120 ms), scaled by the per-class amplitude. Eye
movements add a class-scaled pupil dilation (logistic rise occupying roughly
470-820 ms) on both pupil components, and target-2 additionally drifts the
horizontal gaze from 600 ms on. Vertical gaze stays pure noise. All channels
ride on AR(1) noise (coefficient 0.95, unit marginal variance) scaled so the
template-to-noise power ratio matches snr_db.

generate() emits epoched trials directly at 128 Hz; generate_raw() emits
continuous recordings at a configurable source rate for the raw on-disk
layout, with events 1 s apart so every epoch and baseline window fits.
"""

from dataclasses import dataclass

import numpy as np
from scipy import signal

from .dataio import N_EEG_CHANNELS, N_EM_COMPONENTS, RawRecording, Trial, TrialSet
from .engine import MetricsReport, N_CLASSES
from .errors import ConfigError, ContractError

SAMPLE_RATE = 128.0
N_SAMPLES = 128
N_TEMPLATE_CHANNELS = 16  # last 16 EEG channels carry the template

AR_COEF = 0.95
EM_NOISE_SD = 1.0
GAZE_DRIFT_AMP = 1.5
PUPIL_RAW_BASELINE = 5.0  # raw-export pupil offset keeping samples positive

_N200_CENTER_MS, _N200_SD_MS = 340.0, 60.0
_P300_CENTER_MS, _P300_SD_MS = 520.0, 120.0
_PUPIL_CENTER_MS, _PUPIL_TAU_MS = 600.0, 60.0
_DRIFT_START_MS, _DRIFT_RAMP_MS = 600.0, 400.0


@dataclass
class SynthConfig:
    n_subjects: int = 1
    n_blocks: int = 5
    trials_per_block: int = 500
    class_probs: tuple = (0.88, 0.06, 0.06)
    snr_db: float = 10.0
    erp_amp: tuple = (1.0, 0.6)  # (target-1, target-2)
    pupil_amp: tuple = (1.0, 0.5)
    seed: int = 0
    source_rate: float = 128.0  # raw export only
    task: str = "A"

    def validate(self):
        for name in ("n_subjects", "n_blocks", "trials_per_block"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        probs = tuple(self.class_probs)
        if len(probs) != 3:
            raise ConfigError(f"class_probs needs 3 entries, got {len(probs)}")
        if any(p <= 0 for p in probs):
            raise ConfigError(f"class_probs must all be positive, got {probs}")
        if abs(sum(probs) - 1.0) > 1e-6:
            raise ConfigError(f"class_probs must sum to 1, got sum {sum(probs)}")
        for name in ("erp_amp", "pupil_amp"):
            if len(tuple(getattr(self, name))) != 2:
                raise ConfigError(f"{name} needs 2 entries (target-1, target-2)")
        if self.source_rate < SAMPLE_RATE:
            raise ConfigError(f"source_rate must be >= {SAMPLE_RATE}, got {self.source_rate}")


def erp_template(t_ms):
    """Unit-amplitude target template on a millisecond grid."""
    t_ms = np.asarray(t_ms, dtype=np.float64)
    n200 = np.exp(-0.5 * ((t_ms - _N200_CENTER_MS) / _N200_SD_MS) ** 2)
    p300 = np.exp(-0.5 * ((t_ms - _P300_CENTER_MS) / _P300_SD_MS) ** 2)
    return p300 - n200


def pupil_curve(t_ms):
    t_ms = np.asarray(t_ms, dtype=np.float64)
    return 1.0 / (1.0 + np.exp(-(t_ms - _PUPIL_CENTER_MS) / _PUPIL_TAU_MS))


def drift_curve(t_ms):
    t_ms = np.asarray(t_ms, dtype=np.float64)
    return np.clip((t_ms - _DRIFT_START_MS) / _DRIFT_RAMP_MS, 0.0, None)


def _ar1(rng, shape, coef=AR_COEF):
    """Stationary AR(1) noise with unit marginal variance along the last axis."""
    n = shape[-1]
    x0 = rng.standard_normal(shape[:-1])
    if n == 1:
        return x0[..., None]
    e = rng.standard_normal(shape[:-1] + (n - 1,)) * np.sqrt(1.0 - coef**2)
    zi = (coef * x0)[..., None]
    rest, _ = signal.lfilter([1.0], [1.0, -coef], e, axis=-1, zi=zi)
    return np.concatenate([x0[..., None], rest], axis=-1)


def noise_scale(snr_db, t_ms=None):
    """Noise standard deviation realizing snr_db against the unit template."""
    if t_ms is None:
        t_ms = np.arange(N_SAMPLES) / SAMPLE_RATE * 1000.0
    p_sig = float(np.mean(erp_template(t_ms) ** 2))
    return float(np.sqrt(p_sig / 10.0 ** (snr_db / 10.0)))


def generate(cfg: SynthConfig) -> TrialSet:
    """Epoched trials at 128 Hz, deterministic under cfg.seed."""
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    t_ms = np.arange(N_SAMPLES) / SAMPLE_RATE * 1000.0
    base = erp_template(t_ms)
    sd = noise_scale(cfg.snr_db, t_ms)
    pupil = pupil_curve(t_ms)
    drift = drift_curve(t_ms)

    trials = []
    for si in range(cfg.n_subjects):
        subject = f"sub{si:02d}"
        for block in range(1, cfg.n_blocks + 1):
            labels = rng.choice(N_CLASSES, size=cfg.trials_per_block, p=tuple(cfg.class_probs))
            eeg = _ar1(rng, (cfg.trials_per_block, N_EEG_CHANNELS, N_SAMPLES)) * sd
            em = _ar1(rng, (cfg.trials_per_block, N_EM_COMPONENTS, N_SAMPLES)) * EM_NOISE_SD
            for y in (1, 2):
                mask = labels == y
                if mask.any():
                    eeg[mask, -N_TEMPLATE_CHANNELS:, :] += cfg.erp_amp[y - 1] * base
                    em[np.ix_(mask, [0, 1])] += cfg.pupil_amp[y - 1] * pupil
            mask2 = labels == 2
            if mask2.any():
                em[np.ix_(mask2, [2, 3])] += GAZE_DRIFT_AMP * drift
            for i in range(cfg.trials_per_block):
                trials.append(
                    Trial(
                        eeg=eeg[i].astype(np.float32),
                        em=em[i].astype(np.float32),
                        y_tri=int(labels[i]),
                        y_bin=int(labels[i] > 0),
                        subject_id=subject,
                        block_id=block,
                    )
                )
    return TrialSet.from_trials(trials, rate=SAMPLE_RATE)


def generate_raw(cfg: SynthConfig):
    """Continuous recordings for the raw layout, one per (subject, block).

    Events sit 1 s apart after a 1 s lead-in. Pupil components carry a
    positive baseline so downstream blink interpolation leaves them alone.
    """
    cfg.validate()
    rng = np.random.default_rng(cfg.seed)
    rate = float(cfg.source_rate)
    epoch_len = int(round(1.0 * rate))
    soa = int(round(1.0 * rate))
    lead = int(round(1.0 * rate))
    tail = int(round(0.25 * rate))
    n_samples = lead + soa * cfg.trials_per_block + tail
    t_ms = np.arange(epoch_len) / rate * 1000.0
    base = erp_template(t_ms)
    sd = noise_scale(cfg.snr_db, t_ms)
    pupil = pupil_curve(t_ms)
    drift = drift_curve(t_ms)

    recordings = []
    for si in range(cfg.n_subjects):
        subject = f"sub{si:02d}"
        for block in range(1, cfg.n_blocks + 1):
            labels = rng.choice(N_CLASSES, size=cfg.trials_per_block, p=tuple(cfg.class_probs))
            eeg = _ar1(rng, (N_EEG_CHANNELS, n_samples)) * sd
            em = _ar1(rng, (N_EM_COMPONENTS, n_samples)) * EM_NOISE_SD
            em[0:2] += PUPIL_RAW_BASELINE
            events = []
            for i, y in enumerate(labels):
                onset = lead + i * soa
                events.append((onset, int(y)))
                if y == 0:
                    continue
                sl = slice(onset, onset + epoch_len)
                eeg[-N_TEMPLATE_CHANNELS:, sl] += cfg.erp_amp[y - 1] * base
                em[0:2, sl] += cfg.pupil_amp[y - 1] * pupil
                if y == 2:
                    em[2:4, sl] += GAZE_DRIFT_AMP * drift
            recordings.append(
                RawRecording(
                    subject_id=subject,
                    block_id=block,
                    rate=rate,
                    eeg=eeg.astype(np.float32),
                    em=em.astype(np.float32),
                    events=events,
                )
            )
    return recordings


def oracle_metrics(y_true, y_pred) -> MetricsReport:
    """Reference metrics by explicit counting; same conventions as the engine
    (0/0 rates are 0), implemented independently with plain Python loops."""
    y_true = [int(v) for v in y_true]
    y_pred = [int(v) for v in y_pred]
    if len(y_true) != len(y_pred):
        raise ContractError(f"length mismatch {len(y_true)} vs {len(y_pred)}")
    if not y_true:
        raise ContractError("empty label vectors")
    for v in y_true + y_pred:
        if v not in (0, 1, 2):
            raise ContractError(f"label {v} outside {{0,1,2}}")
    confusion = [[0] * N_CLASSES for _ in range(N_CLASSES)]
    for t, p in zip(y_true, y_pred):
        confusion[t][p] += 1
    tpr, precision, f1 = [], [], []
    for k in range(N_CLASSES):
        tp = confusion[k][k]
        actual = sum(confusion[k])
        predicted = sum(confusion[i][k] for i in range(N_CLASSES))
        r = tp / actual if actual > 0 else 0.0
        p = tp / predicted if predicted > 0 else 0.0
        tpr.append(r)
        precision.append(p)
        f1.append(2 * p * r / (p + r) if (p + r) > 0 else 0.0)
    return MetricsReport(
        confusion=np.asarray(confusion, dtype=np.int64),
        tpr=np.asarray(tpr),
        precision=np.asarray(precision),
        f1=np.asarray(f1),
        balanced_accuracy=(tpr[0] + tpr[1] + tpr[2]) / 3,
        target_recall=(tpr[1] + tpr[2]) / 2,
        f1_macro=(f1[0] + f1[1] + f1[2]) / 3,
    )
