"""General-test, early-test and mask-detect evaluation; metric tables and plots."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

from .datamodel import DEFAULT_SCHEMA, DatasetSplit, FeatureSchema
from .model import Batch

# Masked values are NaN; the feature standardiser maps them to the training mean.
MASK_TOKEN = float("nan")


def mask_time_variant(tweet_features, user_features, schema: FeatureSchema = DEFAULT_SCHEMA):
    """Replace every time-variant feature with :data:`MASK_TOKEN`.

    Accepts single vectors or ``(n, width)`` arrays; returns float arrays.
    Time-invariant columns are copied unchanged.
    """
    tf = np.array(tweet_features, dtype=np.float64, copy=True)
    uf = np.array(user_features, dtype=np.float64, copy=True)
    if tf.shape[-1] != schema.n_tf or uf.shape[-1] != schema.n_uf:
        raise ValueError(
            f"feature widths ({tf.shape[-1]}, {uf.shape[-1]}) do not match schema ({schema.n_tf}, {schema.n_uf})"
        )
    tf[..., np.array(schema.tweet_time_variant(), dtype=bool)] = MASK_TOKEN
    uf[..., np.array(schema.user_time_variant(), dtype=bool)] = MASK_TOKEN
    return tf, uf


def mask_batch(batch: Batch, schema: FeatureSchema = DEFAULT_SCHEMA) -> Batch:
    tf, uf = mask_time_variant(batch.tweet_feats.numpy(), batch.user_feats.numpy(), schema)
    return batch.replace(tweet_feats=torch.from_numpy(tf), user_feats=torch.from_numpy(uf))


def _ratio(num: int, den: int) -> float:
    return num / den if den else 0.0


@dataclass(frozen=True)
class MetricsReport:
    """Confusion counts with "fake" as the positive class, and derived metrics."""

    name: str
    split: str
    mode: str
    tp: int
    fp: int
    fn: int
    tn: int
    n_excluded: int = 0
    delta_acc: Optional[float] = None

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    @property
    def accuracy(self) -> float:
        return _ratio(self.tp + self.tn, self.total)

    @property
    def precision(self) -> float:
        return _ratio(self.tp, self.tp + self.fp)

    @property
    def recall(self) -> float:
        return _ratio(self.tp, self.tp + self.fn)

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r > 0 else 0.0

    @property
    def per_class(self) -> dict:
        return {"fake": self.tp + self.fn, "genuine": self.tn + self.fp}

    def to_dict(self) -> dict:
        d = asdict(self)
        d.update(accuracy=self.accuracy, precision=self.precision, recall=self.recall, f1=self.f1)
        d["per_class"] = self.per_class
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(
            name=d["name"],
            split=d["split"],
            mode=d["mode"],
            tp=int(d["tp"]),
            fp=int(d["fp"]),
            fn=int(d["fn"]),
            tn=int(d["tn"]),
            n_excluded=int(d.get("n_excluded", 0)),
            delta_acc=d.get("delta_acc"),
        )

    @classmethod
    def from_predictions(cls, y_true, y_pred, name="", split="", mode="plain", n_excluded=0) -> "MetricsReport":
        y_true = np.asarray(y_true, dtype=int)
        y_pred = np.asarray(y_pred, dtype=int)
        return cls(
            name=name,
            split=split,
            mode=mode,
            tp=int(((y_true == 1) & (y_pred == 1)).sum()),
            fp=int(((y_true == 0) & (y_pred == 1)).sum()),
            fn=int(((y_true == 1) & (y_pred == 0)).sum()),
            tn=int(((y_true == 0) & (y_pred == 0)).sum()),
            n_excluded=n_excluded,
        )


@torch.no_grad()
def evaluate(
    model,
    batch: Batch,
    split: Optional[DatasetSplit] = None,
    mode: str = "plain",
    schema: FeatureSchema = DEFAULT_SCHEMA,
    name: str = "",
) -> MetricsReport:
    """Eval-mode metrics on the labelled tweets of ``batch`` (restricted to ``split`` if given).

    ``mode="mask_detect"`` masks time-variant contextual features before the
    forward pass. Unlabelled tweets are excluded and counted.
    """
    if mode not in ("plain", "mask_detect"):
        raise ValueError(f"unknown evaluation mode {mode!r}")
    pos = {tid: i for i, tid in enumerate(batch.ids)}
    ids = list(split.tweet_ids) if split is not None else list(batch.ids)
    if not ids:
        raise ValueError("cannot evaluate an empty split")
    missing = [i for i in ids if i not in pos]
    if missing:
        raise KeyError(f"split tweets missing from batch: {missing[:5]}")
    ids = sorted(ids)
    sub = batch.select([pos[i] for i in ids])
    if mode == "mask_detect":
        sub = mask_batch(sub, schema)
    labelled = (sub.labels >= 0).numpy()
    n_excluded = int((~labelled).sum())
    if hasattr(model, "eval"):
        model.eval()
    pred = model.logits(sub).argmax(-1).numpy()
    split_name = split.kind.value if split is not None else "all"
    return MetricsReport.from_predictions(
        sub.labels.numpy()[labelled], pred[labelled], name=name, split=split_name, mode=mode, n_excluded=n_excluded
    )


def with_deltas(runs: Sequence[MetricsReport], reference: Optional[MetricsReport] = None) -> list[MetricsReport]:
    """Set ``delta_acc = reference.accuracy - run.accuracy`` (reference defaults to the first run)."""
    if not runs:
        raise ValueError("need at least one run")
    ref = reference if reference is not None else runs[0]
    return [replace(r, delta_acc=ref.accuracy - r.accuracy) for r in runs]


REPORT_COLUMNS = ("name", "split", "mode", "accuracy", "precision", "recall", "f1", "delta_acc", "tp", "fp", "fn", "tn", "n_excluded")


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.4f}"
    return str(v)


def report(runs: Sequence[MetricsReport], out_dir, reference: Optional[MetricsReport] = None) -> list[Path]:
    """Write ``report.csv``, ``report.txt`` and ``plots/<name>.png``; returns the paths."""
    if not runs:
        raise ValueError("report needs at least one run")
    runs = with_deltas(runs, reference)
    out_dir = Path(out_dir)
    (out_dir / "plots").mkdir(parents=True, exist_ok=True)
    rows = []
    for r in runs:
        d = r.to_dict()
        rows.append([d[c] for c in REPORT_COLUMNS])

    csv_path = out_dir / "report.csv"
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(REPORT_COLUMNS)
        for row in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in row])

    text = [[c if c != "delta_acc" else "dAcc" for c in REPORT_COLUMNS]]
    for row in rows:
        text.append([_fmt(v) for v in row])
    widths = [max(len(r[i]) for r in text) for i in range(len(REPORT_COLUMNS))]
    buf = io.StringIO()
    for j, r in enumerate(text):
        buf.write(" | ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip() + "\n")
        if j == 0:
            buf.write("-+-".join("-" * w for w in widths) + "\n")
    txt_path = out_dir / "report.txt"
    txt_path.write_text(buf.getvalue(), encoding="utf-8")

    paths = [csv_path, txt_path]
    for r in runs:
        paths.append(_bar_plot(r, out_dir / "plots"))
    return paths


def _bar_plot(run: MetricsReport, plot_dir: Path) -> Path:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    names = ["Accuracy", "Precision", "Recall", "F1"]
    vals = [run.accuracy, run.precision, run.recall, run.f1]
    fig, ax = plt.subplots(figsize=(4, 3), dpi=100)
    ax.bar(names, vals, color="#4c72b0")
    ax.set_ylim(0, 1)
    title = f"{run.name or 'run'}: {run.split} ({run.mode})"
    ax.set_title(title, fontsize=9)
    for i, v in enumerate(vals):
        ax.text(i, v + 0.02, f"{v:.3f}", ha="center", fontsize=8)
    fig.tight_layout()
    stem = "_".join(x for x in (run.name, run.split, run.mode) if x) or "run"
    path = plot_dir / f"{_safe(stem)}.png"
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)
    return path


def _safe(s: str) -> str:
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in s)


def write_metrics(path, metrics: MetricsReport) -> None:
    Path(path).write_text(json.dumps(metrics.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_metrics(path) -> MetricsReport:
    return MetricsReport.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

