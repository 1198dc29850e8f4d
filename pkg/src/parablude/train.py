"""Dataset manifests, stratified 8:1:1 splits, SGD training, checkpoints.

The training recipe is deliberately plain: uniform-with-replacement
batches of 100, vanilla gradient descent under a piecewise-constant
learning-rate schedule (0.001 for 12,000 steps, then 0.0001 for 3,000),
model selection by best validation accuracy.  Everything is driven by
seeded generators so a (corpus, seed, config) triple fully determines
the run.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from parablude import nn
from parablude.audio import AudioClip, downmix_mono, read_wav
from parablude.dsp import FeatureConfig, features

CHECKPOINT_MAGIC = b"PMU1"
CHECKPOINT_VERSION = 1

SIX_CLASSES = ("hand", "forearm", "upper_arm", "sword", "silence", "other")
FIVE_CLASSES = ("hand", "forearm", "upper_arm", "silence", "other")
BACKGROUND_CLASSES = ("silence", "other")

LOCATIONS = ("lab", "outdoor", "judo_hall")
CLOTHING = ("plain", "tshirt", "hoodie")


class ManifestError(ValueError):
    """Manifest rows violate the schema or the label set."""


class CheckpointError(ValueError):
    """Checkpoint bytes are not a valid model file."""


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; carries the offending step."""


@dataclass(frozen=True)
class LabelSet:
    """Ordered class names plus the subset regarded as non-hits."""

    classes: tuple[str, ...]
    background: tuple[str, ...] = BACKGROUND_CLASSES

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(self.classes))
        object.__setattr__(self, "background", tuple(self.background))
        if len(set(self.classes)) != len(self.classes):
            raise ValueError("class names must be unique")
        if not set(self.background) <= set(self.classes):
            raise ValueError("background must be a subset of classes")
        for name in BACKGROUND_CLASSES:
            if name in self.classes and name not in self.background:
                raise ValueError(f"{name!r} must be a background class")

    def index(self, label: str) -> int:
        return self.classes.index(label)

    def is_background(self, label: str) -> bool:
        return label in self.background

    def to_dict(self) -> dict:
        return {"classes": list(self.classes), "background": list(self.background)}

    @classmethod
    def from_dict(cls, doc: dict) -> "LabelSet":
        return cls(classes=tuple(doc["classes"]), background=tuple(doc["background"]))


SIX_CLASS_SET = LabelSet(classes=SIX_CLASSES)
FIVE_CLASS_SET = LabelSet(classes=FIVE_CLASSES)


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    label: str
    location: str = "lab"
    clothing: str = "plain"

    def __post_init__(self):
        if self.location not in LOCATIONS:
            raise ManifestError(f"location {self.location!r} not one of {LOCATIONS}")
        if self.clothing not in CLOTHING:
            raise ManifestError(f"clothing {self.clothing!r} not one of {CLOTHING}")

    def to_dict(self) -> dict:
        return {
            "path": self.path,
            "label": self.label,
            "location": self.location,
            "clothing": self.clothing,
        }


@dataclass(frozen=True)
class DatasetManifest:
    """File list with labels; ``base_dir`` anchors relative paths."""

    entries: tuple[ManifestEntry, ...]
    label_set: LabelSet
    base_dir: Path = Path(".")

    def __post_init__(self):
        object.__setattr__(self, "entries", tuple(self.entries))
        object.__setattr__(self, "base_dir", Path(self.base_dir))
        for e in self.entries:
            if e.label not in self.label_set.classes:
                raise ManifestError(f"label {e.label!r} not in label set {self.label_set.classes}")

    def __len__(self) -> int:
        return len(self.entries)

    def class_counts(self) -> dict[str, int]:
        counts = {c: 0 for c in self.label_set.classes}
        for e in self.entries:
            counts[e.label] += 1
        return counts

    def by_class(self) -> dict[str, list[ManifestEntry]]:
        out: dict[str, list[ManifestEntry]] = {c: [] for c in self.label_set.classes}
        for e in self.entries:
            out[e.label].append(e)
        return out


def manifest_from_rows(rows: list[dict], label_set: LabelSet, base_dir: str | Path = ".") -> DatasetManifest:
    entries = tuple(
        ManifestEntry(
            path=r["path"],
            label=r["label"],
            location=r.get("location", "lab"),
            clothing=r.get("clothing", "plain"),
        )
        for r in rows
    )
    return DatasetManifest(entries=entries, label_set=label_set, base_dir=base_dir)


def write_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    """JSON Lines, one entry per line, with a leading label-set header line."""
    path = Path(path)
    with path.open("w") as fh:
        fh.write(json.dumps({"label_set": manifest.label_set.to_dict()}) + "\n")
        for e in manifest.entries:
            fh.write(json.dumps(e.to_dict()) + "\n")


def read_manifest(path: str | Path, label_set: LabelSet | None = None) -> DatasetManifest:
    """Read JSON Lines; the header line may be omitted if ``label_set`` given."""
    path = Path(path)
    rows = []
    header_set = None
    with path.open() as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                doc = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"{path}:{line_no}: invalid JSON: {exc}") from exc
            if "label_set" in doc:
                header_set = LabelSet.from_dict(doc["label_set"])
            else:
                if "path" not in doc or "label" not in doc:
                    raise ManifestError(f"{path}:{line_no}: entry needs path and label")
                rows.append(doc)
    resolved = label_set or header_set
    if resolved is None:
        labels = []
        for r in rows:
            if r["label"] not in labels:
                labels.append(r["label"])
        background = tuple(b for b in BACKGROUND_CLASSES if b in labels)
        resolved = LabelSet(classes=tuple(labels), background=background)
    return manifest_from_rows(rows, resolved, base_dir=path.parent)


def _class_rng(seed: int, label: str) -> np.random.Generator:
    digest = hashlib.sha256(label.encode()).digest()
    return np.random.default_rng([seed, int.from_bytes(digest[:8], "little")])


def split_dataset(
    manifest: DatasetManifest, split: tuple[int, int, int] = (8, 1, 1), seed: int = 0
) -> tuple[DatasetManifest, DatasetManifest, DatasetManifest]:
    """Per-class stratified split into train/val/test.

    Sizes per class of n: floor(n*a/total), floor(n*b/total), remainder.
    The shuffle is keyed by (seed, class name), so assignment is stable
    regardless of the other classes present.
    """
    a, b, c = split
    if min(a, b, c) <= 0:
        raise ValueError("split parts must be positive")
    total = a + b + c
    parts: tuple[list[ManifestEntry], ...] = ([], [], [])
    for label, entries in manifest.by_class().items():
        n = len(entries)
        if n < total:
            raise ValueError(f"class {label!r} has {n} entries; needs at least {total}")
        order = _class_rng(seed, label).permutation(n)
        n_train, n_val = n * a // total, n * b // total
        shuffled = [entries[i] for i in order]
        parts[0].extend(shuffled[:n_train])
        parts[1].extend(shuffled[n_train : n_train + n_val])
        parts[2].extend(shuffled[n_train + n_val :])
    return tuple(
        DatasetManifest(entries=tuple(p), label_set=manifest.label_set, base_dir=manifest.base_dir)
        for p in parts
    )


@dataclass(frozen=True)
class TrainConfig:
    """Schedule, batching, and split settings for one run."""

    schedule: tuple[tuple[int, float], ...] = ((12000, 0.001), (3000, 0.0001))
    batch_size: int = 100
    split: tuple[int, int, int] = (8, 1, 1)
    seed: int = 0
    eval_interval: int = 100

    def __post_init__(self):
        object.__setattr__(self, "schedule", tuple((int(s), float(lr)) for s, lr in self.schedule))
        if any(s < 0 or lr <= 0 for s, lr in self.schedule):
            raise ValueError("schedule needs non-negative step counts and positive rates")
        if self.batch_size < 1 or self.eval_interval < 1:
            raise ValueError("batch_size and eval_interval must be >= 1")

    @property
    def total_steps(self) -> int:
        return sum(s for s, _ in self.schedule)

    def scaled(self, factor: float) -> "TrainConfig":
        """Shrink/grow the schedule proportionally (minimum 1 step per leg)."""
        return replace(
            self,
            schedule=tuple((max(1, round(s * factor)), lr) for s, lr in self.schedule),
        )


def lr_at_step(step: int, config: TrainConfig) -> float:
    """Piecewise-constant learning rate; ``step`` is 0-indexed."""
    if step < 0 or step >= config.total_steps:
        raise ValueError(f"step {step} outside [0, {config.total_steps})")
    upper = 0
    for steps, lr in config.schedule:
        upper += steps
        if step < upper:
            return lr
    raise AssertionError("unreachable")


def load_clip(manifest: DatasetManifest, entry: ManifestEntry) -> AudioClip:
    return downmix_mono(read_wav((manifest.base_dir / entry.path).read_bytes()))


def featurize_manifest(
    manifest: DatasetManifest, feature_config: FeatureConfig
) -> tuple[np.ndarray, np.ndarray]:
    """Load every WAV and stack features: returns (X (N,T,F), y (N,))."""
    if not manifest.entries:
        raise ManifestError("manifest is empty")
    mats, labels = [], []
    for e in manifest.entries:
        clip = load_clip(manifest, e)
        mats.append(features(clip, feature_config).values)
        labels.append(manifest.label_set.index(e.label))
    return np.stack(mats), np.array(labels, dtype=np.int64)


@dataclass(frozen=True)
class HistoryRecord:
    step: int
    lr: float
    train_loss: float
    val_accuracy: float


def history_to_csv(history: list[HistoryRecord]) -> str:
    lines = ["step,lr,train_loss,val_accuracy"]
    for h in history:
        lines.append(f"{h.step},{h.lr:.10g},{h.train_loss:.10g},{h.val_accuracy:.10g}")
    return "\n".join(lines) + "\n"


def _accuracy(params: nn.ModelParams, xs: np.ndarray, ys: np.ndarray) -> float:
    preds = nn.predict_proba(xs, params).argmax(axis=1)
    return float((preds == ys).mean())


def train_model(
    train_manifest: DatasetManifest,
    val_manifest: DatasetManifest,
    feature_config: FeatureConfig,
    config: TrainConfig,
) -> tuple[nn.ModelParams, list[HistoryRecord]]:
    """Plain SGD over uniform-with-replacement batches.

    Initialization draws from ``config.seed``; batch sampling from a
    derived stream, so runs are bit-reproducible.  Returns the params
    with the best validation accuracy seen at an evaluation point
    (ties -> earliest), or the final params if training never evaluated.
    """
    x_train, y_train = featurize_manifest(train_manifest, feature_config)
    x_val, y_val = featurize_manifest(val_manifest, feature_config)
    input_shape = x_train.shape[1:]
    n_classes = len(train_manifest.label_set.classes)

    params = nn.init_params(input_shape, n_classes, seed=config.seed)
    if config.total_steps == 0:
        return params, []

    batch_rng = np.random.default_rng([config.seed, 0xBA7C4])
    history: list[HistoryRecord] = []
    best = (-1.0, 0, params)  # (val_accuracy, step, params); earlier step wins ties
    for step in range(config.total_steps):
        lr = lr_at_step(step, config)
        idx = batch_rng.integers(0, len(x_train), config.batch_size)
        loss, grads = nn.loss_and_gradients(x_train[idx], y_train[idx], params)
        if not np.isfinite(loss):
            raise TrainingDiverged(f"non-finite loss at step {step}")
        params = nn.sgd_step(params, grads, lr)
        if (step + 1) % config.eval_interval == 0 or step == config.total_steps - 1:
            val_acc = _accuracy(params, x_val, y_val)
            history.append(HistoryRecord(step=step, lr=lr, train_loss=loss, val_accuracy=val_acc))
            if val_acc > best[0]:
                best = (val_acc, step, params)
    return best[2], history


@dataclass(frozen=True)
class Checkpoint:
    """A trained model plus everything needed to apply it consistently."""

    params: nn.ModelParams
    features: FeatureConfig
    label_set: LabelSet


_TENSOR_ORDER = ("dw_kernel", "dw_bias", "fc_weights", "fc_bias")


def save_checkpoint(
    params: nn.ModelParams, feature_config: FeatureConfig, label_set: LabelSet
) -> bytes:
    """Self-describing binary: magic, version, JSON header, f64 tensors.

    Layout: ``PMU1`` | u16 version | u32 header length | header JSON |
    tensors as little-endian float64 in declaration order.
    """
    header = {
        "shapes": {name: list(getattr(params, name).shape) for name in _TENSOR_ORDER},
        "arch": {
            "input_shape": list(params.input_shape),
            "stride": list(params.stride),
            "beta": params.beta,
        },
        "label_set": label_set.to_dict(),
        "features": feature_config.to_dict(),
    }
    head = json.dumps(header, sort_keys=True).encode()
    blob = [CHECKPOINT_MAGIC, struct.pack("<H", CHECKPOINT_VERSION), struct.pack("<I", len(head)), head]
    for name in _TENSOR_ORDER:
        blob.append(np.ascontiguousarray(getattr(params, name), dtype="<f8").tobytes())
    return b"".join(blob)


def load_checkpoint(data: bytes) -> Checkpoint:
    if len(data) < 10 or data[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError("bad magic: not a model checkpoint")
    (version,) = struct.unpack_from("<H", data, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (head_len,) = struct.unpack_from("<I", data, 6)
    head_end = 10 + head_len
    if len(data) < head_end:
        raise CheckpointError("truncated header")
    try:
        header = json.loads(data[10:head_end])
        shapes = {name: tuple(header["shapes"][name]) for name in _TENSOR_ORDER}
        arch = header["arch"]
        label_set = LabelSet.from_dict(header["label_set"])
        feature_config = FeatureConfig.from_dict(header["features"])
    except (KeyError, ValueError, TypeError) as exc:
        raise CheckpointError(f"corrupt header: {exc}") from exc

    expected = sum(int(np.prod(s)) * 8 for s in shapes.values())
    body = data[head_end:]
    if len(body) != expected:
        raise CheckpointError(
            f"tensor payload is {len(body)} bytes; shape table implies {expected}"
        )
    tensors = {}
    offset = 0
    for name in _TENSOR_ORDER:
        count = int(np.prod(shapes[name]))
        tensors[name] = np.frombuffer(body, dtype="<f8", count=count, offset=offset).reshape(
            shapes[name]
        ).copy()
        offset += count * 8
    params = nn.ModelParams(
        **tensors,
        input_shape=tuple(arch["input_shape"]),
        stride=tuple(arch["stride"]),
        beta=float(arch["beta"]),
    )
    if len(label_set.classes) != params.n_classes:
        raise CheckpointError(
            f"{len(label_set.classes)} class names for {params.n_classes} model outputs"
        )
    return Checkpoint(params=params, features=feature_config, label_set=label_set)
