"""Shared fixtures plus the acceptance-criteria result banner.

Tests marked @pytest.mark.criterion(n, "name") are collected into a summary
printed at the end of the run, one PASS/FAIL line per criterion.
"""

import numpy as np
import pytest
import torch

from mtreenet.dataio import plan_folds, rebalance
from mtreenet.engine import TrainConfig, train_fold
from mtreenet.synth import SynthConfig, generate

_criterion_results = {}


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "criterion(num, name): acceptance criterion checked by this test"
    )


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    num, name = marker.args
    if rep.when == "call":
        _criterion_results[(num, name)] = rep.passed
    elif rep.failed:  # setup or teardown error
        _criterion_results[(num, name)] = False


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _criterion_results:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for (num, name), passed in sorted(_criterion_results.items()):
        terminalreporter.write_line(
            f"ACCEPTANCE {num:02d} {name}: {'PASS' if passed else 'FAIL'}"
        )


# ---------------------------------------------------------------------------
# shared data fixtures


@pytest.fixture(scope="session")
def small_set():
    """5 blocks x 40 trials, enriched targets; enough for fold/rebalance tests."""
    return generate(
        SynthConfig(trials_per_block=40, class_probs=(0.5, 0.25, 0.25), snr_db=10.0, seed=3)
    )


@pytest.fixture(scope="session")
def trained_tiny(small_set):
    """A quickly trained model on the small set, for checkpoint/saliency tests."""
    torch.manual_seed(0)
    plan = plan_folds(small_set, seed=0)
    fold = plan.outer[0]
    split = fold.inner[0]
    train_ts = rebalance(small_set.subset(split.train_idx), seed=0)
    val_ts = small_set.subset(split.val_idx)
    cfg = TrainConfig(max_epochs=2, batch_size=64, seed=0)
    tm, history = train_fold(train_ts, val_ts, cfg)
    test_ts = small_set.subset(fold.test_idx)
    return {"tm": tm, "history": history, "test_ts": test_ts, "train_ts": train_ts}


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
