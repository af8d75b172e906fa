"""Synthetic generator statistics and the brute-force metrics oracle."""

import numpy as np
import pytest

from mtreenet.dataio import N_EEG_CHANNELS
from mtreenet.errors import ConfigError, ContractError
from mtreenet.synth import (
    AR_COEF,
    GAZE_DRIFT_AMP,
    N_SAMPLES,
    N_TEMPLATE_CHANNELS,
    SAMPLE_RATE,
    SynthConfig,
    _ar1,
    drift_curve,
    erp_template,
    generate,
    generate_raw,
    noise_scale,
    oracle_metrics,
    pupil_curve,
)

T_MS = np.arange(N_SAMPLES) / SAMPLE_RATE * 1000.0


# ---------------------------------------------------------------------------
# config validation


def test_config_rejects_bad_probs():
    with pytest.raises(ConfigError):
        SynthConfig(class_probs=(0.5, 0.5)).validate()
    with pytest.raises(ConfigError):
        SynthConfig(class_probs=(0.5, 0.5, 0.1)).validate()
    with pytest.raises(ConfigError):
        SynthConfig(class_probs=(1.0, 0.0, 0.0)).validate()


def test_config_rejects_nonpositive_counts():
    with pytest.raises(ConfigError):
        SynthConfig(trials_per_block=0).validate()
    with pytest.raises(ConfigError):
        SynthConfig(n_blocks=0).validate()


def test_config_rejects_low_source_rate():
    with pytest.raises(ConfigError):
        SynthConfig(source_rate=100.0).validate()


# ---------------------------------------------------------------------------
# waveform shapes


def test_template_polarity():
    # negative deflection near 340 ms, positive near 520 ms
    base = erp_template(T_MS)
    assert base[np.argmin(np.abs(T_MS - 320))] < 0
    assert base[np.argmin(np.abs(T_MS - 560))] > 0


def test_pupil_curve_monotone_rise():
    p = pupil_curve(T_MS)
    assert (np.diff(p) > 0).all()
    assert p[0] < 0.01 and p[-1] > 0.95


def test_drift_curve_zero_then_ramp():
    d = drift_curve(T_MS)
    assert (d[T_MS < 600.0] == 0).all()
    late = d[T_MS >= 600.0]
    assert (np.diff(late) > 0).all()


def test_noise_scale_monotone_in_snr():
    assert noise_scale(0.0) > noise_scale(10.0) > noise_scale(20.0)
    # definition: sd^2 * 10^(snr/10) = mean template power
    p_sig = float(np.mean(erp_template(T_MS) ** 2))
    assert noise_scale(10.0) == pytest.approx(np.sqrt(p_sig / 10.0))


def test_ar1_statistics():
    rng = np.random.default_rng(0)
    x = _ar1(rng, (2000, 4, 128))
    assert x.shape == (2000, 4, 128)
    # stationary unit marginal variance at both ends of the window
    assert x[..., 0].var() == pytest.approx(1.0, rel=0.05)
    assert x[..., -1].var() == pytest.approx(1.0, rel=0.05)
    # lag-1 autocorrelation matches the coefficient
    r = np.mean(x[..., 1:] * x[..., :-1]) / x.var()
    assert r == pytest.approx(AR_COEF, abs=0.02)


# ---------------------------------------------------------------------------
# generated trial sets


def test_generate_shapes_and_determinism():
    cfg = SynthConfig(n_blocks=2, trials_per_block=20, seed=9)
    a = generate(cfg)
    b = generate(cfg)
    assert len(a) == 40
    assert a.eeg.shape == (40, 64, 128)
    assert a.em.shape == (40, 6, 128)
    assert np.array_equal(a.eeg, b.eeg)
    assert np.array_equal(a.em, b.em)
    assert np.array_equal(a.y_tri, b.y_tri)
    c = generate(SynthConfig(n_blocks=2, trials_per_block=20, seed=10))
    assert not np.array_equal(a.eeg, c.eeg)


def test_generate_class_counts_within_3_sigma():
    cfg = SynthConfig(n_blocks=5, trials_per_block=1000, seed=0)
    ts = generate(cfg)
    n = len(ts)
    counts = ts.class_counts()
    for k, p in enumerate(cfg.class_probs):
        sigma = np.sqrt(n * p * (1 - p))
        assert abs(counts[k] - n * p) <= 3 * sigma


def test_generate_amplitude_ratio_at_p300():
    # class-mean template-channel EEG at 520 ms scales with erp_amp: 1.0/0.6
    cfg = SynthConfig(
        n_blocks=5,
        trials_per_block=600,
        class_probs=(0.2, 0.4, 0.4),
        snr_db=20.0,
        seed=1,
    )
    ts = generate(cfg)
    i520 = int(round(0.520 * SAMPLE_RATE))
    m = {}
    for y in (1, 2):
        sel = ts.eeg[ts.y_tri == y][:, -N_TEMPLATE_CHANNELS:, i520]
        m[y] = float(sel.mean())
    assert m[1] / m[2] == pytest.approx(1.0 / 0.6, rel=0.05)


def test_generate_template_confined_to_last_16_channels():
    cfg = SynthConfig(n_blocks=5, trials_per_block=400, class_probs=(0.2, 0.4, 0.4), snr_db=20.0, seed=2)
    ts = generate(cfg)
    targets = ts.eeg[ts.y_tri > 0]
    i520 = int(round(0.520 * SAMPLE_RATE))
    on = np.abs(targets[:, -N_TEMPLATE_CHANNELS:, i520].mean())
    off = np.abs(targets[:, : N_EEG_CHANNELS - N_TEMPLATE_CHANNELS, i520].mean())
    assert on > 10 * off


def test_generate_equal_amplitude_symmetry():
    # with identical T1/T2 parameters the class populations are exchangeable
    cfg = SynthConfig(
        n_blocks=5,
        trials_per_block=600,
        class_probs=(0.2, 0.4, 0.4),
        erp_amp=(0.8, 0.8),
        pupil_amp=(0.7, 0.7),
        snr_db=10.0,
        seed=3,
    )
    ts = generate(cfg)
    i520 = int(round(0.520 * SAMPLE_RATE))
    sel1 = ts.eeg[ts.y_tri == 1][:, -N_TEMPLATE_CHANNELS:, i520]
    sel2 = ts.eeg[ts.y_tri == 2][:, -N_TEMPLATE_CHANNELS:, i520]
    pooled = np.sqrt(sel1.var() / sel1.size + sel2.var() / sel2.size)
    assert abs(sel1.mean() - sel2.mean()) < 4 * pooled


def test_generate_drift_only_on_target2_horizontal():
    cfg = SynthConfig(n_blocks=5, trials_per_block=400, class_probs=(0.2, 0.4, 0.4), seed=4)
    ts = generate(cfg)
    late = slice(int(round(0.8 * SAMPLE_RATE)), N_SAMPLES)
    x2 = ts.em[ts.y_tri == 2][:, 2:4, late].mean()
    x1 = ts.em[ts.y_tri == 1][:, 2:4, late].mean()
    y2 = ts.em[ts.y_tri == 2][:, 4:6, late].mean()
    assert x2 > 0.5 * GAZE_DRIFT_AMP * drift_curve(T_MS)[late].mean()
    assert abs(x1) < 0.2
    assert abs(y2) < 0.2  # vertical gaze carries no class signal


def test_generate_seed_decorrelates_noise():
    a = generate(SynthConfig(n_blocks=1, trials_per_block=50, seed=0))
    b = generate(SynthConfig(n_blocks=1, trials_per_block=50, seed=1))
    nt_a = a.eeg[a.y_tri == 0][:30]
    nt_b = b.eeg[b.y_tri == 0][:30]
    r = np.corrcoef(nt_a.ravel(), nt_b.ravel())[0, 1]
    assert abs(r) < 0.1


def test_generate_raw_layout_consistent():
    cfg = SynthConfig(n_blocks=2, trials_per_block=5, source_rate=128.0, seed=6)
    recs = generate_raw(cfg)
    assert len(recs) == 2
    for rec in recs:
        assert rec.eeg.shape[0] == 64 and rec.em.shape[0] == 6
        assert len(rec.events) == 5
        onsets = [o for o, _ in rec.events]
        assert all(b - a == 128 for a, b in zip(onsets, onsets[1:]))
        assert (rec.em[0:2] > 0).all()  # pupil baseline keeps samples positive
        assert rec.eeg.shape[1] >= onsets[-1] + 128


def test_generate_raw_deterministic():
    cfg = SynthConfig(n_blocks=1, trials_per_block=4, seed=7)
    a = generate_raw(cfg)
    b = generate_raw(cfg)
    assert np.array_equal(a[0].eeg, b[0].eeg)
    assert np.array_equal(a[0].em, b[0].em)
    assert a[0].events == b[0].events


# ---------------------------------------------------------------------------
# metrics oracle


def test_oracle_perfect_predictions():
    y = [0, 1, 2, 0, 1, 2]
    rep = oracle_metrics(y, y)
    assert rep.balanced_accuracy == 1.0
    assert rep.target_recall == 1.0
    assert (rep.f1 == 1.0).all()


def test_oracle_constant_classifier():
    y_true = [0, 0, 1, 1, 2, 2]
    rep = oracle_metrics(y_true, [0] * 6)
    assert rep.balanced_accuracy == pytest.approx(1 / 3)
    assert rep.target_recall == 0.0
    assert rep.f1[1] == 0.0 and rep.f1[2] == 0.0  # 0/0 convention


def test_oracle_hand_counted_matrix():
    # confusion rows (90,5,5) / (2,7,1) / (3,2,5)
    y_true, y_pred = [], []
    rows = [(90, 5, 5), (2, 7, 1), (3, 2, 5)]
    for t, row in enumerate(rows):
        for p, n in enumerate(row):
            y_true += [t] * n
            y_pred += [p] * n
    rep = oracle_metrics(y_true, y_pred)
    assert np.array_equal(rep.confusion, np.array(rows))
    assert rep.tpr == pytest.approx([0.9, 0.7, 0.5])
    assert rep.balanced_accuracy == pytest.approx(0.70)
    assert rep.target_recall == pytest.approx(0.60)


def test_oracle_input_validation():
    with pytest.raises(ContractError):
        oracle_metrics([0, 1], [0])
    with pytest.raises(ContractError):
        oracle_metrics([], [])
    with pytest.raises(ContractError):
        oracle_metrics([0, 3], [0, 0])
