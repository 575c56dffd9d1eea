"""Synthetic classification tasks and an IDX (MNIST-style) loader."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .numerics import Rng

__all__ = [
    "Dataset",
    "make_spirals",
    "make_feature_swap",
    "feature_swap_labels",
    "train_val_split",
    "load_idx",
    "write_idx",
    "IdxError",
    "IdxMagicError",
    "IdxTruncatedError",
    "IdxCountMismatchError",
    "IDX_IMAGES_MAGIC",
    "IDX_LABELS_MAGIC",
]

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


@dataclass
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    num_classes: int
    split: str = "train"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.inputs.ndim != 2:
            raise ValueError("inputs must be a samples x features matrix")
        if len(self.labels) != len(self.inputs):
            raise ValueError(
                f"{len(self.inputs)} input rows but {len(self.labels)} labels"
            )
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise ValueError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def num_features(self) -> int:
        return self.inputs.shape[1]

    def subset(self, idx, split: str | None = None) -> "Dataset":
        idx = np.asarray(idx)
        return replace(
            self,
            inputs=self.inputs[idx],
            labels=self.labels[idx],
            split=split or self.split,
        )


def _standardize(x: np.ndarray) -> np.ndarray:
    mu = x.mean(axis=0)
    centered = x - mu
    sd = np.sqrt((centered**2).mean(axis=0))
    sd[sd == 0] = 1.0
    return centered / sd


def make_spirals(
    n_per_class: int,
    classes: int = 2,
    noise_std: float = 0.0,
    seed: int = 0,
    turns: float = 1.0,
) -> Dataset:
    """Interleaved Archimedean spirals in the plane, standardized per feature.

    Class ``c`` traces ``r = s, angle = 2*pi*(turns*s + c/classes)`` for
    radial positions ``s`` drawn uniformly from [0.1, 1].
    """
    if classes < 2:
        raise ValueError("need at least two classes")
    if noise_std < 0:
        raise ValueError("noise_std must be non-negative")
    rng = Rng(seed)
    xs, ys = [], []
    for c in range(classes):
        s = 0.1 + 0.9 * rng.uniform(n_per_class)
        angle = 2.0 * np.pi * (turns * s + c / classes)
        pts = np.stack([s * np.cos(angle), s * np.sin(angle)], axis=1)
        if noise_std > 0:
            pts = pts + rng.normal(pts.shape, std=noise_std)
        xs.append(pts)
        ys.append(np.full(n_per_class, c))
    x = _standardize(np.concatenate(xs))
    return Dataset(x, np.concatenate(ys), classes, meta={"task": "spirals"})


def feature_swap_labels(inputs: np.ndarray, meta: dict) -> np.ndarray:
    u = inputs[:, 1:]
    score0 = u[:, meta["set0"]] @ meta["weights0"]
    score1 = u[:, meta["set1"]] @ meta["weights1"]
    score = np.where(inputs[:, 0] > 0.5, score1, score0)
    return (score > 0).astype(np.int64)


def make_feature_swap(n: int, dim: int = 8, seed: int = 0) -> Dataset:
    """Binary task whose relevant features are chosen by a type bit.

    Inputs are ``[t, u_1 .. u_{dim-1}]`` with ``t`` in {0, 1} and ``u`` standard
    normal. The label is the sign of a fixed random linear functional over the
    feature set ``set0`` when ``t == 0`` and over the disjoint ``set1`` when
    ``t == 1``.
    """
    if dim < 4:
        raise ValueError("feature-swap needs dim >= 4")
    rng = Rng(seed)
    m = dim - 1
    order = rng.permutation(m)
    half = m // 2
    set0, set1 = np.sort(order[:half]), np.sort(order[half : 2 * half])
    meta = {
        "task": "feature-swap",
        "set0": set0,
        "set1": set1,
        "weights0": rng.normal(half),
        "weights1": rng.normal(half),
    }
    t = (rng.uniform(n) < 0.5).astype(np.float64)
    u = rng.normal((n, m))
    x = np.concatenate([t[:, None], u], axis=1)
    return Dataset(x, feature_swap_labels(x, meta), 2, meta=meta)


def train_val_split(data: Dataset, val_fraction: float = 0.2, seed: int = 0):
    """Disjoint, exhaustive random split into ``(train, val)``."""
    if not 0.0 <= val_fraction < 1.0:
        raise ValueError("val_fraction must be in [0, 1)")
    perm = Rng(seed).permutation(len(data))
    n_val = int(round(val_fraction * len(data)))
    val_idx, train_idx = np.sort(perm[:n_val]), np.sort(perm[n_val:])
    return data.subset(train_idx, "train"), data.subset(val_idx, "val")


class IdxError(ValueError):
    pass


class IdxMagicError(IdxError):
    pass


class IdxTruncatedError(IdxError):
    pass


class IdxCountMismatchError(IdxError):
    pass


def _read_idx(path, magic: int, ndim: int) -> np.ndarray:
    raw = Path(path).read_bytes()
    header = 4 + 4 * ndim
    if len(raw) < header:
        raise IdxTruncatedError(f"{path}: header truncated ({len(raw)} bytes)")
    found = struct.unpack(">I", raw[:4])[0]
    if found != magic:
        raise IdxMagicError(f"{path}: bad magic 0x{found:08x}, expected 0x{magic:08x}")
    dims = struct.unpack(f">{ndim}I", raw[4:header])
    expected = int(np.prod(dims))
    body = raw[header:]
    if len(body) < expected:
        raise IdxTruncatedError(f"{path}: expected {expected} data bytes, found {len(body)}")
    return np.frombuffer(body, dtype=np.uint8, count=expected).reshape(dims)


def load_idx(images_path, labels_path, num_classes: int | None = None) -> Dataset:
    """Load an IDX image/label file pair; pixels scaled to [0, 1] and flattened."""
    images = _read_idx(images_path, IDX_IMAGES_MAGIC, 3)
    labels = _read_idx(labels_path, IDX_LABELS_MAGIC, 1).astype(np.int64)
    if images.shape[0] != labels.shape[0]:
        raise IdxCountMismatchError(
            f"{images.shape[0]} images but {labels.shape[0]} labels"
        )
    x = images.reshape(images.shape[0], -1).astype(np.float64) / 255.0
    k = num_classes if num_classes is not None else int(labels.max()) + 1 if len(labels) else 1
    return Dataset(x, labels, k, meta={"task": "idx"})


def write_idx(path, array: np.ndarray) -> None:
    """Write a uint8 array as IDX (magic 0x0801 for 1-D, 0x0803 for 3-D)."""
    array = np.asarray(array, dtype=np.uint8)
    magic = {1: IDX_LABELS_MAGIC, 3: IDX_IMAGES_MAGIC}.get(array.ndim)
    if magic is None:
        raise ValueError("only 1-D label and 3-D image arrays are supported")
    with open(path, "wb") as f:
        f.write(struct.pack(">I", magic))
        f.write(struct.pack(f">{array.ndim}I", *array.shape))
        f.write(array.tobytes())
