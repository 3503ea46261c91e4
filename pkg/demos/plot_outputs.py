"""Render the CLI's CSV outputs as PNG figures.

Reads whatever it finds in a run directory:

- ``epochs.csv``: training loss and accuracy per epoch
- ``uncertainty_distribution.csv``: entropy and MI for correct vs wrong predictions
- ``confusion_uq_on.csv`` / ``confusion_uq_off.csv``: confusion matrices

    python demos/plot_outputs.py runs/

Needs matplotlib (``pip install -e .[plot]``).
"""

import csv
import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


def read(path):
    with open(path) as fh:
        return list(csv.DictReader(fh))


def plot_epochs(path, out):
    rows = read(path)
    epoch = [int(r["epoch"]) for r in rows]
    fig, (a, b) = plt.subplots(1, 2, figsize=(9, 3.5))
    a.plot(epoch, [float(r["train_loss"]) for r in rows], label="train")
    b.plot(epoch, [float(r["train_acc"]) for r in rows], label="train")
    if any(r["val_loss"] != "nan" for r in rows):
        a.plot(epoch, [float(r["val_loss"]) for r in rows], label="validation")
        b.plot(epoch, [float(r["val_acc"]) for r in rows], label="validation")
    a.set(xlabel="epoch", ylabel="loss")
    b.set(xlabel="epoch", ylabel="accuracy (%)")
    a.legend()
    fig.tight_layout()
    fig.savefig(out, dpi=120)


def plot_uncertainty(path, out):
    rows = read(path)
    correct = np.array([r["correct"] == "1" for r in rows])
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
    for ax, col, name in zip(axes, ("entropy_nats", "mutual_information_nats"), ("entropy", "mutual information")):
        v = np.array([float(r[col]) for r in rows])
        bins = np.linspace(0, max(v.max(), 1e-3), 20)
        ax.hist(v[correct], bins, alpha=0.6, label=f"correct ({correct.sum()})")
        ax.hist(v[~correct], bins, alpha=0.6, label=f"incorrect ({(~correct).sum()})")
        ax.set(xlabel=f"{name} (nats)", ylabel="samples")
    axes[0].axvline(0.4, color="k", ls="--", lw=0.8)
    axes[0].legend()
    fig.tight_layout()
    fig.savefig(out, dpi=120)


def plot_confusion(path, out):
    with open(path) as fh:
        rows = list(csv.reader(fh))
    names = rows[0][1:]
    m = np.array([[int(x) for x in r[1:]] for r in rows[1:]])
    fig, ax = plt.subplots(figsize=(4, 3.5))
    ax.imshow(m, cmap="Blues")
    for (i, j), c in np.ndenumerate(m):
        ax.text(j, i, str(c), ha="center", va="center")
    ax.set_xticks(range(len(names)), names)
    ax.set_yticks(range(len(names)), names)
    ax.set(xlabel="predicted", ylabel="true")
    fig.tight_layout()
    fig.savefig(out, dpi=120)


if __name__ == "__main__":
    run = Path(sys.argv[1] if len(sys.argv) > 1 else "runs")
    jobs = [("epochs.csv", plot_epochs), ("uncertainty_distribution.csv", plot_uncertainty),
            ("confusion_uq_on.csv", plot_confusion), ("confusion_uq_off.csv", plot_confusion)]
    for name, fn in jobs:
        src = run / name
        if src.is_file():
            dst = src.with_suffix(".png")
            fn(src, dst)
            print(f"wrote {dst}")
