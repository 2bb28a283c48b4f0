"""Report emitters: delimited score tables plus rendered figure files.

Every eval/train artifact is written both as CSV/JSON and as a PNG figure so
runs can be compared at a glance.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Optional

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .metrics import MODE_ONSET, MODE_ONSET_OFFSET, ClassificationReport, TranscriptionReport
from .notes import InstrumentTaxonomy


def _write_csv(path, header, rows, meta: Optional[dict] = None):
    with open(path, "w", newline="") as fh:
        for key, value in (meta or {}).items():
            fh.write(f"# {key}={value}\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def classification_rows(report: ClassificationReport, taxonomy: InstrumentTaxonomy):
    rows = []
    for c, counts in enumerate(report.per_class):
        rows.append([taxonomy.class_name(c), counts.tp, counts.fp, counts.fn,
                     f"{counts.precision:.4f}", f"{counts.recall:.4f}", f"{counts.f_score:.4f}"])
    rows.append(["macro_mean", "", "", "", "", "", f"{report.macro_f:.4f}"])
    return rows


def write_classification_report(report: ClassificationReport, taxonomy: InstrumentTaxonomy,
                                out_prefix, meta: Optional[dict] = None) -> dict:
    """Write <prefix>.csv/.json/.png; returns the JSON payload."""
    out_prefix = Path(out_prefix)
    out_prefix.parent.mkdir(parents=True, exist_ok=True)
    _write_csv(out_prefix.with_suffix(".csv"),
               ["class", "tp", "fp", "fn", "precision", "recall", "f_score"],
               classification_rows(report, taxonomy), meta)
    payload = {
        "mode": "classification",
        "meta": meta or {},
        "classes": {
            taxonomy.class_name(c): {
                "tp": counts.tp, "fp": counts.fp, "fn": counts.fn,
                "precision": counts.precision, "recall": counts.recall,
                "f_score": counts.f_score,
            }
            for c, counts in enumerate(report.per_class)
        },
        "macro_f": report.macro_f,
        "accuracy": report.accuracy,
        "n_examples": report.n_examples,
    }
    with open(out_prefix.with_suffix(".json"), "w") as fh:
        json.dump(payload, fh, indent=1)
        fh.write("\n")
    plot_classification(report, taxonomy, out_prefix.with_suffix(".png"))
    return payload


def plot_classification(report: ClassificationReport, taxonomy: InstrumentTaxonomy, path):
    names = [taxonomy.class_name(c) for c in range(len(report.per_class))]
    scores = [c.f_score for c in report.per_class]
    fig, ax = plt.subplots(figsize=(7, 3.5))
    ax.bar(names, scores, color="#4878cf")
    ax.axhline(report.macro_f, color="#d65f5f", linestyle="--",
               label=f"macro mean = {report.macro_f:.3f}")
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("note-level F-score")
    ax.tick_params(axis="x", rotation=30)
    ax.legend(loc="lower right")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def transcription_rows(report: TranscriptionReport, taxonomy: InstrumentTaxonomy):
    rows = []

    def fmt(counts):
        return [counts.tp, counts.fp, counts.fn,
                f"{counts.precision:.4f}", f"{counts.recall:.4f}", f"{counts.f_score:.4f}"]

    rows.append(["mpe_only"] + fmt(report.pooled[MODE_ONSET]) + fmt(report.pooled[MODE_ONSET_OFFSET]))
    for c in range(report.n_classes):
        rows.append([taxonomy.class_name(c)]
                    + fmt(report.per_class[MODE_ONSET][c])
                    + fmt(report.per_class[MODE_ONSET_OFFSET][c]))
    rows.append(["macro_mean", "", "", "", "", "", f"{report.macro_f(MODE_ONSET):.4f}",
                 "", "", "", "", "", f"{report.macro_f(MODE_ONSET_OFFSET):.4f}"])
    return rows


def write_transcription_report(report: TranscriptionReport, taxonomy: InstrumentTaxonomy,
                               out_prefix, meta: Optional[dict] = None) -> dict:
    out_prefix = Path(out_prefix)
    out_prefix.parent.mkdir(parents=True, exist_ok=True)
    header = (["class"]
              + [f"onset_{c}" for c in ("tp", "fp", "fn", "precision", "recall", "f_score")]
              + [f"onset_offset_{c}" for c in ("tp", "fp", "fn", "precision", "recall", "f_score")])
    _write_csv(out_prefix.with_suffix(".csv"), header,
               transcription_rows(report, taxonomy), meta)

    def mode_dict(mode):
        entry = {
            "mpe_only": _counts_dict(report.pooled[mode]),
            "classes": {taxonomy.class_name(c): _counts_dict(report.per_class[mode][c])
                        for c in range(report.n_classes)},
            "macro_f": report.macro_f(mode),
        }
        return entry

    payload = {
        "mode": "transcription",
        "meta": meta or {},
        "onset": mode_dict(MODE_ONSET),
        "onset_offset": mode_dict(MODE_ONSET_OFFSET),
    }
    with open(out_prefix.with_suffix(".json"), "w") as fh:
        json.dump(payload, fh, indent=1)
        fh.write("\n")
    plot_transcription(report, taxonomy, out_prefix.with_suffix(".png"))
    return payload


def _counts_dict(counts):
    return {"tp": counts.tp, "fp": counts.fp, "fn": counts.fn,
            "precision": counts.precision, "recall": counts.recall, "f_score": counts.f_score}


def plot_transcription(report: TranscriptionReport, taxonomy: InstrumentTaxonomy, path):
    names = ["mpe_only"] + [taxonomy.class_name(c) for c in range(report.n_classes)]
    onset = [report.pooled[MODE_ONSET].f_score] + [c.f_score for c in report.per_class[MODE_ONSET]]
    both = [report.pooled[MODE_ONSET_OFFSET].f_score] + [c.f_score for c in report.per_class[MODE_ONSET_OFFSET]]
    x = np.arange(len(names))
    fig, ax = plt.subplots(figsize=(8, 3.5))
    ax.bar(x - 0.2, onset, width=0.4, label="onset", color="#4878cf")
    ax.bar(x + 0.2, both, width=0.4, label="onset + offset", color="#6acc65")
    ax.set_xticks(x, names, rotation=30)
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("transcription F-score")
    ax.legend(loc="upper right")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_history(history, path):
    """Loss curves with the learning-rate steps on a twin axis."""
    epochs = np.arange(len(history.train_loss))
    fig, ax = plt.subplots(figsize=(7, 3.5))
    ax.plot(epochs, history.train_loss, label="train loss", color="#4878cf")
    ax.plot(epochs, history.val_loss, label="val loss", color="#d65f5f")
    ax.set_xlabel("epoch")
    ax.set_ylabel("cross-entropy")
    ax2 = ax.twinx()
    ax2.step(epochs, history.lr, where="post", color="#888888", label="lr")
    ax2.set_yscale("log")
    ax2.set_ylabel("learning rate")
    lines, labels = ax.get_legend_handles_labels()
    lines2, labels2 = ax2.get_legend_handles_labels()
    ax.legend(lines + lines2, labels + labels2, loc="upper right")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
