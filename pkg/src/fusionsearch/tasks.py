"""Synthetic multimodal tasks whose labels depend on one planted feature pair,
plus a manifest-based loader for precomputed features."""

import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np
import torch

from fusionsearch.feature_adapter import to_ncl
from fusionsearch.ops import PrimitiveOpKind, attention_op, concat_fc_op, linear_glu_op, channel_map
from fusionsearch.space import FeatureSpec

TASK_MODES = ("multiclass", "multilabel")
SPLITS = ("train", "val", "test")
MANIFEST_VERSION = 1

# (shape, axis_roles) per feature, modality-major; used when no shapes are given.
DEFAULT_SHAPES = (
    ((8, 4, 2, 2), ("channel", "temporal", "spatial", "spatial")),
    ((16, 4), ("channel", "temporal")),
    ((16,), ("channel",)),
    ((8,), ("channel",)),
    ((16, 4), ("channel", "temporal")),
    ((8, 4), ("channel", "temporal")),
)


@dataclass
class Split:
    features: list
    labels: torch.Tensor

    def __len__(self):
        return len(self.labels)

    def subset(self, idx):
        return Split([f[idx] for f in self.features], self.labels[idx])

    def concat(self, other):
        return Split([torch.cat([a, b]) for a, b in zip(self.features, other.features)],
                     torch.cat([self.labels, other.labels]))


@dataclass
class TaskData:
    train: Split
    val: Split
    test: Split
    features: tuple
    n_classes: int
    task_mode: str = "multiclass"
    teacher: object = None

    def split(self, name):
        return getattr(self, name)


@dataclass
class PlantedTaskSpec:
    n_modalities: int = 2
    features_per_modality: int = 3
    shapes: tuple = DEFAULT_SHAPES
    planted_pair: tuple = (1, 5)
    planted_op: PrimitiveOpKind = PrimitiveOpKind.ConcatFC
    n_classes: int = 2
    n_train: int = 2000
    n_val: int = 500
    n_test: int = 500
    label_noise: float = 0.05
    task_mode: str = "multiclass"
    teacher_channels: int = 8
    teacher_length: int = 4
    seed: int = 0
    modality_names: tuple = field(default=())

    def __post_init__(self):
        self.planted_op = PrimitiveOpKind(self.planted_op) if not isinstance(self.planted_op, str) \
            else PrimitiveOpKind[self.planted_op]
        self.shapes = tuple((tuple(s), tuple(r)) for s, r in self.shapes)
        self.planted_pair = tuple(self.planted_pair)
        if not self.modality_names:
            self.modality_names = tuple(chr(ord("A") + m) for m in range(self.n_modalities))
        n_feat = self.n_modalities * self.features_per_modality
        if self.n_modalities < 1 or self.features_per_modality < 1 or n_feat < 2:
            raise ValueError("need at least two features")
        if len(self.shapes) != n_feat:
            raise ValueError(f"expected {n_feat} feature shapes, got {len(self.shapes)}")
        a, b = self.planted_pair
        if not (0 <= a < n_feat and 0 <= b < n_feat and a != b):
            raise ValueError(f"invalid planted pair {self.planted_pair}")
        if self.planted_op == PrimitiveOpKind.Zero:
            raise ValueError("a Zero planted op makes labels constant")
        if self.n_classes < 2:
            raise ValueError("n_classes must be >= 2")
        if min(self.n_train, self.n_val, self.n_test) < 1:
            raise ValueError("every split needs at least one sample")
        if not 0.0 <= self.label_noise < 1.0:
            raise ValueError("label_noise must be in [0, 1)")
        if self.task_mode not in TASK_MODES:
            raise ValueError(f"task_mode must be one of {TASK_MODES}")

    def feature_specs(self):
        specs = []
        for m, name in enumerate(self.modality_names):
            for i in range(self.features_per_modality):
                shape, roles = self.shapes[m * self.features_per_modality + i]
                specs.append(FeatureSpec(name, i, shape, roles))
        return tuple(specs)


class PlantedTeacher:
    """The label-generating function: fixed reshaping, planted op, mean pool, readout."""

    def __init__(self, spec, rng):
        c, self.length = spec.teacher_channels, spec.teacher_length
        self.spec = spec
        specs = spec.feature_specs()
        self.pair = spec.planted_pair
        self.roles = [("batch",) + specs[i].axis_roles for i in self.pair]
        self.maps = [torch.from_numpy(rng.standard_normal((specs[i].channels, c)) / np.sqrt(specs[i].channels))
                     for i in self.pair]
        self.op = spec.planted_op
        self.w1 = torch.from_numpy(rng.standard_normal((c, c)) / np.sqrt(c))
        self.w2 = torch.from_numpy(rng.standard_normal((c, c)) / np.sqrt(c))
        self.w = torch.from_numpy(rng.standard_normal((2 * c, c)) / np.sqrt(2 * c))
        self.b = torch.from_numpy(0.1 * rng.standard_normal(c))
        self.readout = torch.from_numpy(rng.standard_normal((c, spec.n_classes)))
        self.offset = torch.zeros(spec.n_classes, dtype=torch.float64)

    def scores(self, features):
        """Class scores from the full feature list; only the planted pair is read."""
        x, y = (channel_map(to_ncl(features[i], roles, self.length), m)
                for i, roles, m in zip(self.pair, self.roles, self.maps))
        if self.op == PrimitiveOpKind.Sum:
            z = x + y
        elif self.op == PrimitiveOpKind.Attention:
            z = attention_op(x, y)
        elif self.op == PrimitiveOpKind.LinearGLU:
            z = linear_glu_op(x, y, self.w1, self.w2)
        else:
            z = concat_fc_op(x, y, self.w, self.b)
        return z.mean(dim=-1) @ self.readout - self.offset

    def predict(self, features):
        s = self.scores(features)
        if self.spec.task_mode == "multiclass":
            return s.argmax(dim=1)
        return (s > 0).to(torch.float64)


def generate(spec):
    """Seed-deterministic train/val/test splits of a planted task."""
    rng = np.random.default_rng(spec.seed)
    specs = spec.feature_specs()
    n = spec.n_train + spec.n_val + spec.n_test
    feats = [torch.from_numpy(rng.standard_normal((n,) + fs.shape)) for fs in specs]
    teacher = PlantedTeacher(spec, rng)
    with torch.no_grad():
        s = teacher.scores(feats)
        # center scores so classes are roughly balanced; part of the fixed label function
        teacher.offset = s.median(dim=0).values if spec.task_mode == "multilabel" else s.mean(dim=0)
        clean = teacher.predict(feats)
    labels = clean.clone()
    flip = torch.from_numpy(rng.random(labels.shape) < spec.label_noise)
    if spec.task_mode == "multiclass":
        shift = torch.from_numpy(rng.integers(1, spec.n_classes, size=n))
        labels = torch.where(flip, (labels + shift) % spec.n_classes, labels)
    else:
        labels = torch.where(flip, 1.0 - labels, labels)
    bounds = np.cumsum([0, spec.n_train, spec.n_val, spec.n_test])
    splits = [Split([f[lo:hi] for f in feats], labels[lo:hi]) for lo, hi in zip(bounds[:-1], bounds[1:])]
    return TaskData(*splits, features=specs, n_classes=spec.n_classes, task_mode=spec.task_mode, teacher=teacher)


def _sha256(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def export(data, directory):
    """Write features/labels as .npy arrays plus a JSON manifest; returns the manifest path."""
    os.makedirs(directory, exist_ok=True)
    order = [data.train, data.val, data.test]
    group = np.concatenate([np.full(len(s), g, dtype=np.int64) for g, s in enumerate(order)])
    entries = []
    for i, fs in enumerate(data.features):
        name = f"{fs.name}.npy"
        np.save(os.path.join(directory, name), np.concatenate([s.features[i].numpy() for s in order]))
        entries.append({**fs.to_dict(), "file": name, "sha256": _sha256(os.path.join(directory, name))})
    np.save(os.path.join(directory, "labels.npy"), np.concatenate([s.labels.numpy() for s in order]))
    np.save(os.path.join(directory, "groups.npy"), group)
    manifest = {
        "schema_version": MANIFEST_VERSION,
        "task_mode": data.task_mode,
        "n_classes": data.n_classes,
        "features": entries,
        "labels": {"file": "labels.npy", "sha256": _sha256(os.path.join(directory, "labels.npy"))},
        "partition": {
            "file": "groups.npy",
            "sha256": _sha256(os.path.join(directory, "groups.npy")),
            "assign": {"train": [0], "val": [1], "test": [2]},
        },
    }
    path = os.path.join(directory, "manifest.json")
    with open(path, "w") as f:
        json.dump(manifest, f, indent=2)
    return path


def _load_array(base, entry, what):
    path = os.path.join(base, entry["file"])
    if not os.path.exists(path):
        raise FileNotFoundError(f"{what}: missing file {entry['file']}")
    if "sha256" in entry and _sha256(path) != entry["sha256"]:
        raise ValueError(f"{what}: checksum mismatch for {entry['file']}")
    return np.load(path, allow_pickle=False)


def load_external(manifest_path):
    """Load splits declared by a manifest; ``partition.assign`` maps group ids to splits."""
    base = os.path.dirname(os.path.abspath(manifest_path))
    with open(manifest_path) as f:
        m = json.load(f)
    if m.get("schema_version") != MANIFEST_VERSION:
        raise ValueError(f"unsupported manifest schema_version {m.get('schema_version')!r}")
    labels = _load_array(base, m["labels"], "labels")
    groups = _load_array(base, m["partition"], "partition")
    n = len(labels)
    if groups.shape != (n,):
        raise ValueError(f"partition has shape {groups.shape}, expected ({n},)")
    specs, arrays = [], []
    for k, e in enumerate(m["features"]):
        fs = FeatureSpec.from_dict(e)
        arr = _load_array(base, e, f"features[{k}]")
        if arr.shape != (n,) + fs.shape:
            raise ValueError(f"features[{k}] ({fs.name}): shape {arr.shape} != declared {(n,) + fs.shape}")
        specs.append(fs)
        arrays.append(torch.from_numpy(arr.astype(np.float64)))
    assign = m["partition"]["assign"]
    seen = set()
    splits = []
    for name in SPLITS:
        ids = set(assign.get(name, []))
        if ids & seen:
            raise ValueError(f"partition groups {sorted(ids & seen)} assigned to more than one split")
        seen |= ids
        idx = torch.from_numpy(np.flatnonzero(np.isin(groups, list(ids))))
        if len(idx) == 0:
            raise ValueError(f"split {name!r} is empty")
        lab = torch.from_numpy(labels)
        splits.append(Split([a[idx] for a in arrays], lab[idx]))
    return TaskData(*splits, features=tuple(specs), n_classes=int(m["n_classes"]), task_mode=m["task_mode"])
