"""Confusion matrices, macro accuracy, and merged-class metrics.

Overall accuracy here is the macro average: the mean of per-class
recalls, weighting every class equally regardless of support.  Reports
also carry the sample-weighted (micro) figure so both views are on
record.  Class groups can be collapsed (for instance, all limb contact
points into a single body class) and the collapsed matrix scores
exactly as if the raw prediction pairs had been relabeled first.
"""

from __future__ import annotations

import datetime
import io
import json
from dataclasses import dataclass, field

import numpy as np


class EvaluationError(ValueError):
    """Metric requested from a matrix that cannot support it."""


@dataclass(frozen=True)
class ConfusionMatrix:
    """Counts indexed [true class, predicted class]."""

    counts: np.ndarray
    class_names: tuple[str, ...]

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "class_names", tuple(self.class_names))
        c = len(self.class_names)
        if counts.shape != (c, c):
            raise ValueError(f"counts shape {counts.shape} != ({c}, {c})")
        if np.any(counts < 0):
            raise ValueError("counts must be non-negative")
        if len(set(self.class_names)) != c:
            raise ValueError("class names must be unique")

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def __eq__(self, other) -> bool:
        if not isinstance(other, ConfusionMatrix):
            return NotImplemented
        return self.class_names == other.class_names and np.array_equal(self.counts, other.counts)

    def to_csv(self) -> str:
        """Rows are true classes; the header row names the predicted classes."""
        buf = io.StringIO()
        buf.write("true\\predicted," + ",".join(self.class_names) + "\n")
        for name, row in zip(self.class_names, self.counts):
            buf.write(name + "," + ",".join(str(int(v)) for v in row) + "\n")
        return buf.getvalue()


def confusion(preds, labels, class_names: tuple[str, ...]) -> ConfusionMatrix:
    """Tally (true, predicted) index pairs into a matrix."""
    preds = np.asarray(preds, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if preds.shape != labels.shape or preds.ndim != 1:
        raise ValueError(f"preds {preds.shape} and labels {labels.shape} must be equal-length 1-D")
    c = len(class_names)
    for name, arr in (("preds", preds), ("labels", labels)):
        if arr.size and (arr.min() < 0 or arr.max() >= c):
            raise ValueError(f"{name} contain indices outside [0, {c})")
    counts = np.zeros((c, c), dtype=np.int64)
    np.add.at(counts, (labels, preds), 1)
    return ConfusionMatrix(counts=counts, class_names=tuple(class_names))


def per_class_accuracy(cm: ConfusionMatrix) -> dict[str, float]:
    """Recall per class: diagonal over row sum.  Every class needs samples."""
    row_sums = cm.counts.sum(axis=1)
    empty = [name for name, s in zip(cm.class_names, row_sums) if s == 0]
    if empty:
        raise EvaluationError(f"no samples for classes {empty}; per-class accuracy undefined")
    diag = np.diag(cm.counts)
    return {name: float(d) / float(s) for name, d, s in zip(cm.class_names, diag, row_sums)}


def overall_accuracy(cm: ConfusionMatrix) -> float:
    """Macro accuracy: unweighted mean of per-class recalls."""
    if cm.total == 0:
        raise EvaluationError("empty matrix; accuracy undefined")
    return float(np.mean(list(per_class_accuracy(cm).values())))


def micro_accuracy(cm: ConfusionMatrix) -> float:
    """Sample-weighted accuracy: trace over total."""
    if cm.total == 0:
        raise EvaluationError("empty matrix; accuracy undefined")
    return float(np.trace(cm.counts)) / float(cm.total)


def merge_classes(cm: ConfusionMatrix, mapping: dict[str, str]) -> ConfusionMatrix:
    """Collapse classes by summing rows and columns group-wise.

    ``mapping`` must cover every class.  Merged class order follows the
    first appearance of each target name along the original order, so
    identity mappings leave the matrix untouched.
    """
    missing = [name for name in cm.class_names if name not in mapping]
    if missing:
        raise ValueError(f"mapping must cover every class; missing {missing}")
    extra = sorted(set(mapping) - set(cm.class_names))
    if extra:
        raise ValueError(f"mapping names unknown classes {extra}")
    merged_names: list[str] = []
    for name in cm.class_names:
        target = mapping[name]
        if target not in merged_names:
            merged_names.append(target)
    index = {name: merged_names.index(mapping[name]) for name in cm.class_names}
    c = len(merged_names)
    counts = np.zeros((c, c), dtype=np.int64)
    for i, true_name in enumerate(cm.class_names):
        for j, pred_name in enumerate(cm.class_names):
            counts[index[true_name], index[pred_name]] += cm.counts[i, j]
    return ConfusionMatrix(counts=counts, class_names=tuple(merged_names))


@dataclass(frozen=True)
class ReportMetadata:
    """Provenance attached to every report."""

    seed: int | None = None
    config_hash: str | None = None
    split: str | None = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        doc = {"seed": self.seed, "config_hash": self.config_hash, "split": self.split}
        doc.update(self.extra)
        return doc


def _matrix_block(cm: ConfusionMatrix) -> dict:
    return {
        "class_names": list(cm.class_names),
        "counts": cm.counts.tolist(),
        "per_class_accuracy": per_class_accuracy(cm),
        "macro_accuracy": overall_accuracy(cm),
        "micro_accuracy": micro_accuracy(cm),
        "total": cm.total,
    }


def report(
    cm: ConfusionMatrix,
    metadata: ReportMetadata | None = None,
    merge: dict[str, str] | None = None,
    timestamp: str | None = None,
) -> dict:
    """Machine-readable evaluation document.

    Includes the raw matrix block and, when ``merge`` is given, the
    collapsed block alongside it.  The timestamp is injectable so two
    reports from one run differ only where they must.
    """
    if timestamp is None:
        timestamp = datetime.datetime.now(datetime.timezone.utc).isoformat()
    doc = {
        "timestamp": timestamp,
        "metadata": (metadata or ReportMetadata()).to_dict(),
        "raw": _matrix_block(cm),
    }
    if merge is not None:
        doc["merged"] = _matrix_block(merge_classes(cm, merge))
        doc["merged"]["mapping"] = dict(merge)
    return doc


def report_to_json(doc: dict) -> str:
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"
