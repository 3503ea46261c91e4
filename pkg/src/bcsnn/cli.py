"""Batch command line: ``bcsnn {train,eval,triage,augment,summarize}``.

Settings come from, in increasing priority: built-in defaults, a flat
``key = value`` config file (``--config``), the ``BCSNN_OUTPUT_DIR``
environment variable (output directory only), and command-line flags. Every
flag ``--some-key`` mirrors config key ``some_key``.

All outputs of a command are staged next to their destination and moved into
place only after the command succeeded, so a nonzero exit leaves nothing
behind.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .bayes import triage, write_report_rows
from .coding import CODING_MODES
from .data import (Dataset, SplitSpec, augment, load_dataset, load_image_dataset, save_dataset,
                   split, synthetic_dataset, train_validation_split)
from .errors import BCSNNError, CheckpointError, DatasetError
from .models import ArchitectureSpec, build_desk_model, build_paper_model, summary
from .network import load_checkpoint, save_checkpoint
from .trainer import TrainConfig, evaluate, train, write_epoch_csv

logger = logging.getLogger("bcsnn")

OUTPUT_ENV = "BCSNN_OUTPUT_DIR"

DEFAULTS = {
    "synthetic": None,
    "data": None,
    "dataset_file": None,
    "model": "desk",
    "classes": 2,
    "input_size": None,
    "coding": "rate",
    "epochs": 30,
    "learning_rate": 1e-4,
    "batch_size": 20,
    "num_steps": 25,
    "seed": 0,
    "train_fraction": 0.8,
    "val_fraction": 0.1,
    "augment": 1,
    "passes": 100,
    "uq": "on",
    "threshold": 0.4,
    "metric": "entropy",
    "split": "test",
    "out": "runs",
    "checkpoint": None,
    "factor": 5,
}

CONVERTERS = {
    "classes": int, "input_size": int, "epochs": int, "learning_rate": float, "batch_size": int,
    "num_steps": int, "seed": int, "train_fraction": float, "val_fraction": float, "augment": int,
    "passes": int, "threshold": float, "factor": int,
}

CHOICES = {
    "model": ("desk", "paper"),
    "coding": CODING_MODES,
    "uq": ("on", "off"),
    "metric": ("entropy", "mi"),
    "split": ("test", "all"),
}

DATA_KEYS = ("synthetic", "data", "dataset_file", "input_size", "train_fraction", "seed")


class ConfigError(BCSNNError, ValueError):
    pass


def read_config_file(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file {path} not found")
    cfg = {}
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in DEFAULTS:
            raise ConfigError(f"unknown config key {key!r} in {path}:{lineno}")
        cfg[key] = value
    return cfg


def _coerce(key, value):
    if value is None:
        return None
    conv = CONVERTERS.get(key)
    try:
        value = conv(value) if conv else value
    except (TypeError, ValueError):
        raise ConfigError(f"invalid value {value!r} for {key!r}") from None
    if key in CHOICES and value not in CHOICES[key]:
        raise ConfigError(f"{key!r} must be one of {CHOICES[key]}, got {value!r}")
    return value


def resolve_settings(args: argparse.Namespace, env=None) -> dict:
    """Merge defaults < config file < environment < flags."""
    env = os.environ if env is None else env
    settings = dict(DEFAULTS)
    if getattr(args, "config", None):
        settings.update(read_config_file(args.config))
    if env.get(OUTPUT_ENV):
        settings["out"] = env[OUTPUT_ENV]
    for key, value in vars(args).items():
        if key in DEFAULTS and value is not None:
            settings[key] = value
    return {k: _coerce(k, v) for k, v in settings.items()}


class StagedOutputs:
    """Write files under temporary names and publish them together."""

    def __init__(self):
        self._staged: list[tuple[Path, Path]] = []

    def path(self, final) -> Path:
        final = Path(final)
        tmp = final.with_name(f".{final.name}.partial")
        self._staged.append((tmp, final))
        return tmp

    def commit(self):
        for tmp, final in self._staged:
            os.replace(tmp, final)
        self._staged.clear()

    def discard(self):
        for tmp, _ in self._staged:
            tmp.unlink(missing_ok=True)
        self._staged.clear()


# -- data ---------------------------------------------------------------------


def parse_synthetic(text: str) -> tuple[int, int]:
    try:
        classes, per_class = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise ConfigError(f"--synthetic expects CLASSESxPER_CLASS such as 2x200, got {text!r}") from None
    return classes, per_class


def default_input_size(settings) -> int:
    if settings["input_size"]:
        return settings["input_size"]
    return 128 if settings["model"] == "paper" else 32


def _check_one_source(settings):
    sources = [k for k in ("synthetic", "data", "dataset_file") if settings.get(k)]
    if len(sources) != 1:
        raise ConfigError("give exactly one of --synthetic, --data or --dataset-file")


def load_source(settings) -> Dataset:
    _check_one_source(settings)
    size = default_input_size(settings)
    if settings["synthetic"]:
        classes, per_class = parse_synthetic(settings["synthetic"])
        return synthetic_dataset(classes, per_class, size, seed=settings["seed"])
    if settings["data"]:
        return load_image_dataset(settings["data"], input_size=size)
    return load_dataset(settings["dataset_file"])


def check_source_exists(settings):
    _check_one_source(settings)
    for key in ("data", "dataset_file"):
        if settings.get(key) and not Path(settings[key]).exists():
            raise DatasetError(f"{key.replace('_', '-')} path {settings[key]} does not exist")


def split_spec(settings) -> SplitSpec:
    frac = settings["train_fraction"]
    return SplitSpec(frac, 1.0 - frac, settings["seed"])


# -- commands -----------------------------------------------------------------


def build_model(settings, num_classes: int, input_size: int):
    if settings["model"] == "paper":
        return build_paper_model(num_classes, seed=settings["seed"], input_size=input_size)
    spec = ArchitectureSpec(num_classes=num_classes, input_size=input_size)
    return build_desk_model(spec, seed=settings["seed"])


def cmd_train(settings, staged: StagedOutputs) -> int:
    check_source_exists(settings)
    out = Path(settings["out"])
    dataset = load_source(settings)
    train_set, _ = split(dataset, split_spec(settings))
    train_set, val_set = train_validation_split(train_set, settings["val_fraction"], settings["seed"])
    if settings["augment"] > 1:
        train_set = augment(train_set, settings["augment"], seed=settings["seed"])
    logger.info("training images: %d", len(train_set))
    network = build_model(settings, dataset.num_classes, dataset.image_shape[-1])
    config = TrainConfig(settings["learning_rate"], settings["batch_size"], settings["epochs"],
                         settings["num_steps"], settings["coding"], settings["uq"] == "on", settings["seed"])
    _, history = train(network, train_set, val_set, config)
    # wall-clock time goes to the log only, keeping the CSVs reproducible
    logger.info("training time: %.1f s", sum(m.seconds for m in history))

    out.mkdir(parents=True, exist_ok=True)
    ckpt = Path(settings["checkpoint"] or out / "checkpoint.npz")
    meta = {k: settings[k] for k in DATA_KEYS}
    meta.update({"input_size": dataset.image_shape[-1], "coding": settings["coding"],
                 "num_steps": settings["num_steps"], "class_names": dataset.class_names,
                 "model": settings["model"]})
    save_checkpoint(staged.path(ckpt), network, meta)
    write_epoch_csv(staged.path(out / "epochs.csv"), history, include_seconds=False)
    staged.path(out / "architecture.txt").write_text(summary(network) + "\n")
    return 0


def _load_for_eval(settings, args):
    if not settings["checkpoint"]:
        raise ConfigError("--checkpoint is required")
    if not Path(settings["checkpoint"]).is_file():
        raise CheckpointError(f"checkpoint {settings['checkpoint']} not found")
    network, meta = load_checkpoint(settings["checkpoint"])
    # data settings not given explicitly fall back to what the checkpoint was trained on
    explicit = {k for k, v in vars(args).items() if v is not None}
    if getattr(args, "config", None):
        explicit |= set(read_config_file(args.config))
    if not any(k in explicit for k in ("synthetic", "data", "dataset_file")):
        for k in DATA_KEYS:
            if k not in explicit and k in meta:
                settings[k] = meta[k]
    if "coding" not in explicit and "coding" in meta:
        settings["coding"] = meta["coding"]
    if "num_steps" not in explicit and "num_steps" in meta:
        settings["num_steps"] = meta["num_steps"]
    if "model" in explicit and meta.get("model") and settings["model"] != meta["model"]:
        raise CheckpointError(f"checkpoint holds a {meta['model']!r} model, not {settings['model']!r}")
    check_source_exists(settings)
    if not settings["input_size"]:
        settings["input_size"] = network.input_shape[-1]
    dataset = load_source(settings)
    if settings["split"] == "test":
        _, dataset = split(dataset, split_spec(settings))
    if dataset.image_shape != network.input_shape:
        raise CheckpointError(f"checkpoint expects inputs {network.input_shape}, data has {dataset.image_shape}")
    if dataset.num_classes != network.num_outputs:
        raise CheckpointError(f"checkpoint has {network.num_outputs} output classes, data has {dataset.num_classes}")
    return network, dataset


def cmd_eval(settings, staged: StagedOutputs, args) -> int:
    network, test_set = _load_for_eval(settings, args)
    use_mc = settings["uq"] == "on"
    result = evaluate(network, test_set, settings["coding"], mc=use_mc, mc_passes=settings["passes"],
                      num_steps=settings["num_steps"], base_seed=settings["seed"],
                      threshold=settings["threshold"], metric=settings["metric"])
    out = Path(settings["out"])
    out.mkdir(parents=True, exist_ok=True)
    tag = "uq_on" if use_mc else "uq_off"
    result.metrics.to_csv(staged.path(out / f"metrics_{tag}.csv"))
    result.metrics.confusion_to_csv(staged.path(out / f"confusion_{tag}.csv"))
    if use_mc:
        result.report.to_csv(staged.path(out / "uncertainty_report.csv"))
    logger.info("accuracy %.2f%% (%s)", result.metrics.accuracy, tag)
    return 0


def cmd_triage(settings, staged: StagedOutputs, args) -> int:
    network, test_set = _load_for_eval(settings, args)
    result = evaluate(network, test_set, settings["coding"], mc=True, mc_passes=settings["passes"],
                      num_steps=settings["num_steps"], base_seed=settings["seed"],
                      threshold=settings["threshold"], metric=settings["metric"])
    report = result.report
    selected = triage(report, settings["threshold"], settings["metric"])
    out = Path(settings["out"])
    out.mkdir(parents=True, exist_ok=True)
    report.to_csv(staged.path(out / "triage.csv"), indices=selected)
    with open(staged.path(out / "uncertainty_distribution.csv"), "w") as fh:
        fh.write("sample_id,entropy_nats,mutual_information_nats,correct\n")
        for i in range(len(report)):
            fh.write(f"{report.sample_id[i]},{report.entropy[i]:.6f},"
                     f"{report.mutual_information[i]:.6f},{int(report.correct[i])}\n")
    logger.info("%d of %d samples at or above %s %.3f", len(selected), len(report),
                settings["metric"], settings["threshold"])
    return 0


def cmd_augment(settings, staged: StagedOutputs) -> int:
    check_source_exists(settings)
    dataset = load_source(settings)
    augmented = augment(dataset, settings["factor"], seed=settings["seed"])
    logger.info("augmented images: %d", len(augmented))
    out = Path(settings["out"])
    out.mkdir(parents=True, exist_ok=True)
    save_dataset(staged.path(out / "augmented.npz"), augmented)
    return 0


def cmd_summarize(settings, staged: StagedOutputs) -> int:
    if settings["checkpoint"]:
        network, _ = load_checkpoint(settings["checkpoint"])
    else:
        network = build_model(settings, settings["classes"], default_input_size(settings))
    print(summary(network))
    return 0


# -- parser -------------------------------------------------------------------


def _flag(parser, key, help_text, **kw):
    parser.add_argument("--" + key.replace("_", "-"), dest=key, default=None, help=help_text, **kw)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bcsnn", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"bcsnn {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, data=True):
        p.add_argument("--config", default=None, help="flat key = value config file")
        _flag(p, "out", f"output directory (env {OUTPUT_ENV})")
        _flag(p, "seed", "seed for splits, initialisation, training and MC passes")
        if data:
            _flag(p, "synthetic", "synthetic data as CLASSESxPER_CLASS, e.g. 2x200")
            _flag(p, "data", "class-per-subdirectory image tree")
            _flag(p, "dataset_file", "cached dataset file (.npz)")
            _flag(p, "input_size", "image edge length after resizing")
            _flag(p, "train_fraction", "train share of the train/test split")

    p = sub.add_parser("train", help="train a model and write checkpoint + epoch CSV")
    common(p)
    _flag(p, "model", "desk or paper", choices=CHOICES["model"])
    _flag(p, "coding", "output coding", choices=CODING_MODES)
    _flag(p, "epochs", "training epochs")
    _flag(p, "learning_rate", "ADAM learning rate")
    _flag(p, "batch_size", "mini-batch size")
    _flag(p, "num_steps", "simulation steps per sample")
    _flag(p, "val_fraction", "validation share carved from the training split")
    _flag(p, "augment", "augmentation factor for the training split")
    _flag(p, "checkpoint", "checkpoint path (default OUT/checkpoint.npz)")
    _flag(p, "uq", "record MC dropout intent in the run config", choices=CHOICES["uq"])

    for name, text in (("eval", "metrics and confusion matrix on test data"),
                       ("triage", "flag high-uncertainty test samples")):
        p = sub.add_parser(name, help=text)
        common(p)
        _flag(p, "checkpoint", "trained checkpoint")
        _flag(p, "model", "expected model kind", choices=CHOICES["model"])
        _flag(p, "coding", "output coding (default: as trained)", choices=CODING_MODES)
        _flag(p, "num_steps", "simulation steps per sample (default: as trained)")
        _flag(p, "passes", "MC dropout passes")
        _flag(p, "split", "evaluate the test split or all samples", choices=CHOICES["split"])
        _flag(p, "threshold", "triage threshold in nats")
        _flag(p, "metric", "triage metric", choices=CHOICES["metric"])
        if name == "eval":
            _flag(p, "uq", "MC dropout uncertainty on/off", choices=CHOICES["uq"])

    p = sub.add_parser("augment", help="materialise an augmented dataset file")
    common(p)
    _flag(p, "factor", "augmentation factor")

    p = sub.add_parser("summarize", help="print a layer/shape/parameter table")
    common(p, data=False)
    _flag(p, "model", "desk or paper", choices=CHOICES["model"])
    _flag(p, "classes", "number of output classes")
    _flag(p, "input_size", "image edge length")
    _flag(p, "checkpoint", "summarise a checkpoint instead")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    staged = StagedOutputs()
    try:
        settings = resolve_settings(args)
        if args.command == "train":
            code = cmd_train(settings, staged)
        elif args.command == "eval":
            code = cmd_eval(settings, staged, args)
        elif args.command == "triage":
            code = cmd_triage(settings, staged, args)
        elif args.command == "augment":
            code = cmd_augment(settings, staged)
        else:
            code = cmd_summarize(settings, staged)
        staged.commit()
        return code
    except ConfigError as exc:
        staged.discard()
        print(f"bcsnn {args.command}: configuration error: {exc}", file=sys.stderr)
        return 2
    except (BCSNNError, OSError) as exc:
        staged.discard()
        print(f"bcsnn {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except BaseException:
        staged.discard()
        raise


if __name__ == "__main__":
    sys.exit(main())
