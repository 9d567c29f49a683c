"""Accuracy/loss vs. epoch and cumulative-energy curves as CSV files plus an SVG overlay."""
import csv
import re
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .errors import DataError  # noqa: E402

COLUMNS = ("epoch", "loss", "acc", "train_acc", "test_loss", "cumulative_energy_j")


def _safe(name):
    return re.sub(r"[^A-Za-z0-9_.-]+", "_", name) or "run"


def curve_rows(record):
    """``acc`` is test accuracy when the run had a test split, else train accuracy."""
    rows = []
    for r in record.epochs:
        test_acc = r.get("test_acc")
        rows.append({"epoch": r["epoch"], "loss": r["train_loss"],
                     "acc": test_acc if test_acc is not None else r["train_acc"],
                     "train_acc": r["train_acc"], "test_loss": r.get("test_loss", ""),
                     "cumulative_energy_j": r["energy_j"]})
    return rows


def emit_curves(records, out_dir, name="comparison"):
    """Write one CSV per record and ``<name>.svg``; returns the written paths.

    Run ids come from ``record.meta['run_id']`` (falling back to ``run<k>``)
    and label the plot legend.
    """
    records = list(records)
    if not records:
        raise DataError("emit_curves needs at least one TrainRecord")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ids, seen = [], set()
    for k, rec in enumerate(records):
        rid = rec.run_id or f"run{k}"
        while rid in seen:
            rid += f"_{k}"
        seen.add(rid)
        ids.append(rid)
    paths = []
    for rid, rec in zip(ids, records):
        p = out / f"{_safe(rid)}.csv"
        with p.open("w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=COLUMNS)
            w.writeheader()
            for row in curve_rows(rec):
                w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
        paths.append(p)

    fig, (ax_e, ax_t) = plt.subplots(1, 2, figsize=(10, 4))
    for rid, rec in zip(ids, records):
        rows = curve_rows(rec)
        ax_e.plot([r["cumulative_energy_j"] for r in rows], [r["acc"] for r in rows], marker=".", label=rid)
        ax_t.plot([r["epoch"] for r in rows], [r["loss"] for r in rows], marker=".", label=rid)
    ax_e.set_xlabel("cumulative training energy (J, compute only)")
    ax_e.set_ylabel("accuracy")
    ax_e.set_title("accuracy vs. energy")
    ax_t.set_xlabel("epoch")
    ax_t.set_ylabel("train loss")
    ax_t.set_title("loss vs. epoch")
    for ax in (ax_e, ax_t):
        ax.grid(alpha=0.3)
        ax.legend(fontsize=8)
    fig.tight_layout()
    svg = out / f"{_safe(name)}.svg"
    # fixed metadata keeps the SVG byte-stable across runs
    fig.savefig(svg, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)
    paths.append(svg)
    return paths
