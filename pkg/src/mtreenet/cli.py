"""Command-line interface.

Subcommands: synth, preprocess, train, evaluate, ablate, saliency, report.
Configuration comes from a TOML file with [paths], [synth], [preprocess] and
[train] sections; command-line flags override file values. The data root
falls back to the MTREE_DATA_ROOT environment variable.

Exit codes: 0 success, 2 usage, 3 configuration, 4 data, 5 runtime.
"""

import argparse
import dataclasses
import json
import logging
import os
import sys

import numpy as np
import tomli

from . import dataio, engine, synth
from .dataio import LABEL_NAMES, PreprocessConfig
from .engine import TrainConfig
from .errors import (
    ConfigError,
    CorpusIncompleteError,
    DegenerateClassError,
    FoldArityError,
    MtreeError,
    SchemaViolationError,
)
from .synth import SynthConfig

logger = logging.getLogger(__name__)

_TRAIN_EXTRA = {"task": str, "jobs": int}  # train-section keys beyond TrainConfig


def _section_fields(cls):
    return {f.name: f for f in dataclasses.fields(cls)}


_SECTIONS = {
    "paths": None,
    "synth": SynthConfig,
    "preprocess": PreprocessConfig,
    "train": TrainConfig,
}


def load_config(path):
    """Parse and schema-check a TOML config; unknown keys are rejected."""
    if path is None:
        return {}
    try:
        with open(path, "rb") as f:
            config = tomli.load(f)
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found")
    except tomli.TOMLDecodeError as e:
        raise ConfigError(f"config file {path} is not valid TOML: {e}")
    for section, content in config.items():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown config section [{section}]")
        if not isinstance(content, dict):
            raise ConfigError(f"[{section}] must be a table")
        cls = _SECTIONS[section]
        if section == "paths":
            for key in content:
                if key not in ("data", "out"):
                    raise ConfigError(f"unknown key {key!r} in [paths]")
            continue
        fields = _section_fields(cls)
        for key in content:
            if key in fields:
                continue
            if section == "train" and key in _TRAIN_EXTRA:
                continue
            raise ConfigError(f"unknown key {key!r} in [{section}]")
    return config


def _coerce(cls, values):
    """Instantiate a config dataclass from TOML values (ints promote to
    floats, arrays become tuples)."""
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in values:
            continue
        v = values[f.name]
        if f.type in ("float", float) and isinstance(v, int) and not isinstance(v, bool):
            v = float(v)
        if f.type in ("tuple", tuple) and isinstance(v, list):
            v = tuple(v)
        kwargs[f.name] = v
    try:
        return cls(**kwargs)
    except TypeError as e:
        raise ConfigError(str(e))


def _make_synth(config) -> SynthConfig:
    cfg = _coerce(SynthConfig, config.get("synth", {}))
    cfg.validate()
    return cfg


def _make_preprocess(config) -> PreprocessConfig:
    cfg = _coerce(PreprocessConfig, config.get("preprocess", {}))
    cfg.validate()
    return cfg


def _make_train(config, args) -> TrainConfig:
    section = dict(config.get("train", {}))
    section.pop("task", None)
    section.pop("jobs", None)
    cfg = _coerce(TrainConfig, section)
    if getattr(args, "seed", None) is not None:
        cfg = dataclasses.replace(cfg, seed=args.seed)
    if getattr(args, "epochs", None) is not None:
        cfg = dataclasses.replace(cfg, max_epochs=args.epochs)
    if getattr(args, "full_inner", False):
        cfg = dataclasses.replace(cfg, full_inner=True)
    cfg.validate()
    return cfg


def _task(config, args):
    if getattr(args, "task", None):
        return args.task
    return config.get("train", {}).get("task", "A")


def _jobs(config, args):
    if getattr(args, "jobs", None) is not None:
        return args.jobs
    return int(config.get("train", {}).get("jobs", 1))


def _data_root(config, args):
    root = getattr(args, "data", None) or config.get("paths", {}).get("data")
    root = root or os.environ.get("MTREE_DATA_ROOT")
    if not root:
        raise ConfigError("no data root: pass --data, set [paths].data, or MTREE_DATA_ROOT")
    return root


def _out_dir(config, args, required=True):
    out = getattr(args, "out", None) or config.get("paths", {}).get("out")
    if not out and required:
        raise ConfigError("no output directory: pass --out or set [paths].out")
    if out:
        os.makedirs(out, exist_ok=True)
    return out


def _load_trialset(root, task, config):
    loaded = dataio.load_dataset(root, task)
    if isinstance(loaded, dataio.TrialSet):
        return loaded
    logger.info("raw layout detected; preprocessing %d recordings", len(loaded))
    return dataio.preprocess_recordings(loaded, _make_preprocess(config))


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args):
    config = load_config(args.config)
    cfg = _make_synth(config)
    out = _out_dir(config, args)
    recordings = synth.generate_raw(cfg)
    dataio.save_raw(recordings, out, cfg.task)
    print(
        f"wrote {len(recordings)} blocks ({cfg.n_subjects} subjects x {cfg.n_blocks} blocks, "
        f"{cfg.trials_per_block} trials each) to {out}"
    )
    return 0


def cmd_preprocess(args):
    config = load_config(args.config)
    task = _task(config, args)
    root = _data_root(config, args)
    out = _out_dir(config, args)
    recordings = dataio.load_raw(root, task)
    ts = dataio.preprocess_recordings(recordings, _make_preprocess(config))
    dataio.save_trials(ts, out, task)
    print(f"preprocessed {len(ts)} trials from {len(recordings)} blocks into {out}")
    return 0


def cmd_train(args):
    config = load_config(args.config)
    task = _task(config, args)
    ts = _load_trialset(_data_root(config, args), task, config)
    cfg = _make_train(config, args)
    out = _out_dir(config, args)
    report = engine.cross_validate(ts, cfg, out_dir=out, jobs=_jobs(config, args))
    agg = report["aggregate"]["mean"]
    print(
        f"trained {len(report['subjects'])} subjects; mean BA {agg['balanced_accuracy']:.4f}, "
        f"target recall {agg['target_recall']:.4f}, macro F1 {agg['f1_macro']:.4f}"
    )
    print(f"report written to {os.path.join(out, 'report.json')}")
    return 0


def cmd_evaluate(args):
    config = load_config(args.config)
    tm = engine.load_checkpoint(args.checkpoint)
    task = _task(config, args)
    ts = _load_trialset(_data_root(config, args), task, config)
    subject = tm.info.get("subject_id")
    if subject:
        ts = ts.for_subject(subject)
    block = args.block if args.block is not None else tm.info.get("test_block")
    if block is not None:
        idx = np.nonzero(ts.block_ids == int(block))[0]
        if len(idx) == 0:
            raise CorpusIncompleteError(f"no trials for block {block}")
        ts = ts.subset(idx)
    report, per_trial = engine.evaluate(tm, ts)
    print(f"evaluated {len(ts)} trials" + (f" of {subject}" if subject else ""))
    print(
        f"BA {report.balanced_accuracy:.4f}  target recall {report.target_recall:.4f}  "
        f"macro F1 {report.f1_macro:.4f}"
    )
    stored = tm.info.get("metrics")
    if stored is not None and block == tm.info.get("test_block"):
        match = stored["balanced_accuracy"] == report.balanced_accuracy
        print(f"stored training-time BA {stored['balanced_accuracy']:.4f} ({'match' if match else 'MISMATCH'})")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        payload = {
            "checkpoint": args.checkpoint,
            "subject_id": subject,
            "block": int(block) if block is not None else None,
            "metrics": report.as_dict(),
            "per_trial": per_trial,
        }
        path = os.path.join(args.out, "evaluation.json")
        with open(path, "w") as f:
            json.dump(payload, f, indent=1)
        print(f"wrote {path}")
    return 0


def cmd_ablate(args):
    config = load_config(args.config)
    task = _task(config, args)
    ts = _load_trialset(_data_root(config, args), task, config)
    cfg = _make_train(config, args)
    out = _out_dir(config, args)
    report = engine.run_ablations(ts, cfg, out_dir=out, jobs=_jobs(config, args))
    print(f"{'configuration':<12} {'BA':>8} {'recall':>8} {'F1':>8}")
    for name, sub_report in report["configurations"].items():
        agg = sub_report["aggregate"]["mean"]
        print(
            f"{name:<12} {agg['balanced_accuracy']:>8.4f} {agg['target_recall']:>8.4f} "
            f"{agg['f1_macro']:>8.4f}"
        )
    print(f"report written to {os.path.join(out, 'ablation_report.json')}")
    return 0


def cmd_saliency(args):
    config = load_config(args.config)
    tm = engine.load_checkpoint(args.checkpoint)
    task = _task(config, args)
    ts = _load_trialset(_data_root(config, args), task, config)
    subject = tm.info.get("subject_id")
    if subject:
        ts = ts.for_subject(subject)
    maps = engine.saliency_maps(tm, ts)
    out = _out_dir(config, args)
    payload = {
        k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in maps.items()
    }
    path = os.path.join(out, "saliency.json")
    with open(path, "w") as f:
        json.dump(payload, f, indent=1)
    _render_saliency(maps, out)
    print(f"saliency over {maps['n_trials']} target trials written to {out}")
    return 0


def cmd_report(args):
    with open(args.report) as f:
        report = json.load(f)
    out = args.out or os.path.dirname(os.path.abspath(args.report))
    os.makedirs(out, exist_ok=True)
    lines = render_report(report, out)
    path = os.path.join(out, "summary.txt")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")
    print("\n".join(lines))
    print(f"summary written to {path}")
    return 0


# ---------------------------------------------------------------------------
# rendering


def _plt():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def render_confusion(confusion, title, path):
    """Row-normalized percentage heatmap of one confusion matrix."""
    plt = _plt()
    confusion = np.asarray(confusion, dtype=np.float64)
    rows = confusion.sum(axis=1, keepdims=True)
    pct = 100.0 * confusion / np.where(rows > 0, rows, 1)
    fig, ax = plt.subplots(figsize=(4.2, 3.6))
    im = ax.imshow(pct, vmin=0, vmax=100, cmap="Blues")
    ax.set_xticks(range(3), LABEL_NAMES, rotation=30, ha="right")
    ax.set_yticks(range(3), LABEL_NAMES)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    ax.set_title(title)
    for i in range(3):
        for j in range(3):
            color = "white" if pct[i, j] > 50 else "black"
            ax.text(j, i, f"{pct[i, j]:.1f}", ha="center", va="center", color=color)
    fig.colorbar(im, ax=ax, label="% of true class")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def _render_saliency(maps, out):
    plt = _plt()
    fig, axes = plt.subplots(2, 2 if "em_map" in maps else 1, figsize=(9, 6), squeeze=False)
    axes[0][0].bar(range(len(maps["eeg_channel"])), maps["eeg_channel"])
    axes[0][0].set_title("EEG channel saliency")
    axes[0][0].set_xlabel("channel")
    axes[1][0].plot(maps["eeg_time"])
    axes[1][0].set_title("EEG temporal saliency")
    axes[1][0].set_xlabel("sample")
    if "em_map" in maps:
        names = [dataio.EM_COMPONENTS[i] for i in maps["em_components"]]
        axes[0][1].bar(range(len(maps["em_component"])), maps["em_component"])
        axes[0][1].set_xticks(range(len(names)), names, rotation=30, ha="right")
        axes[0][1].set_title("EM component saliency")
        axes[1][1].plot(maps["em_time"])
        axes[1][1].set_title("EM temporal saliency")
        axes[1][1].set_xlabel("sample")
    fig.tight_layout()
    fig.savefig(os.path.join(out, "saliency.png"), dpi=120)
    plt.close(fig)


def _single_report_lines(report, out, prefix=""):
    lines = []
    for subject, entry in report["subjects"].items():
        total = np.zeros((3, 3), dtype=np.int64)
        for fold in entry["folds"]:
            total += np.asarray(fold["metrics"]["confusion"], dtype=np.int64)
        tag = f"{prefix}{subject}"
        fname = f"confusion_{tag.replace('/', '_')}.png"
        render_confusion(total, tag, os.path.join(out, fname))
        mean, std = entry["mean"], entry["std_over_folds"]
        lines.append(
            f"{tag:<24} BA {mean['balanced_accuracy']:.4f} +/- {std['balanced_accuracy']:.4f}  "
            f"recall {mean['target_recall']:.4f}  F1 {mean['f1_macro']:.4f}"
        )
    agg = report["aggregate"]
    lines.append(
        f"{prefix + 'aggregate':<24} BA {agg['mean']['balanced_accuracy']:.4f} "
        f"+/- {agg['std']['balanced_accuracy']:.4f} over {agg['n_subjects']} subjects"
    )
    return lines


def render_report(report, out):
    """Render confusion heatmaps and return summary lines for a report dict."""
    schema = report.get("schema")
    if schema == "mtree-report-1":
        return _single_report_lines(report, out)
    if schema == "mtree-ablation-1":
        lines = []
        for name, sub_report in report["configurations"].items():
            lines.extend(_single_report_lines(sub_report, out, prefix=f"{name}/"))
        return lines
    raise SchemaViolationError(f"unrecognized report schema {schema!r}")


# ---------------------------------------------------------------------------
# parser and entry point


def build_parser():
    parser = argparse.ArgumentParser(
        prog="mtreenet",
        description="Multi-modal EEG + eye-movement RSVP decoder harness",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", default=None, help="TOML configuration file")
        p.set_defaults(func=func)
        return p

    p = add("synth", cmd_synth, "generate a synthetic raw dataset")
    p.add_argument("--out", default=None, help="output dataset root")

    p = add("preprocess", cmd_preprocess, "preprocess a raw dataset into trials")
    p.add_argument("--data", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--task", default=None)

    p = add("train", cmd_train, "run nested cross-validation training")
    p.add_argument("--data", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--task", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--jobs", type=int, default=None, help="parallel fold workers")
    p.add_argument("--full-inner", action="store_true", help="train all five inner splits")

    p = add("evaluate", cmd_evaluate, "evaluate a checkpoint on its test block")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", default=None)
    p.add_argument("--task", default=None)
    p.add_argument("--block", type=int, default=None, help="override the evaluation block")
    p.add_argument("--out", default=None, help="directory for evaluation.json")

    p = add("ablate", cmd_ablate, "run the six-configuration ablation study")
    p.add_argument("--data", default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--task", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--jobs", type=int, default=None)
    p.add_argument("--full-inner", action="store_true")

    p = add("saliency", cmd_saliency, "input-gradient saliency maps for a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", default=None)
    p.add_argument("--task", default=None)
    p.add_argument("--out", default=None)

    p = add("report", cmd_report, "render confusion figures and a text summary")
    p.add_argument("--report", required=True, help="report.json or ablation_report.json")
    p.add_argument("--out", default=None)

    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code) if e.code is not None else 0
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args) or 0
    except ConfigError as e:
        print(f"configuration error: {e}", file=sys.stderr)
        return 3
    except (CorpusIncompleteError, SchemaViolationError, FoldArityError, DegenerateClassError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return 4
    except FileNotFoundError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 4
    except MtreeError as e:
        print(f"runtime error: {e}", file=sys.stderr)
        return 5


if __name__ == "__main__":
    sys.exit(main())
