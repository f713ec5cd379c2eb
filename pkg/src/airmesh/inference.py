"""Lightweight classifiers for leader-side group activity inference.

Decision trees and random forests predict with threshold comparisons and
integer histogram sums only (no floating-point arithmetic at inference
time, mirroring the target class of microcontroller deployments); the
Gaussian naive Bayes variant is the floating-point counterexample. Models
serialize to a versioned binary format so a trained bundle can be shipped
to any node.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from enum import IntEnum
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

MODEL_MAGIC = b"POHARMDL"
MODEL_VERSION = 1


class ModelFormatError(ValueError):
    """Raised for corrupt, truncated, or unsupported model bytes."""


class ModelKind(IntEnum):
    DECISION_TREE = 1
    RANDOM_FOREST = 2
    GAUSSIAN_NB = 3


@dataclass(frozen=True)
class Leaf:
    counts: Tuple[int, ...]


@dataclass(frozen=True)
class Split:
    feature: int
    threshold: float
    left: Union["Split", Leaf]
    right: Union["Split", Leaf]


TreeNode = Union[Split, Leaf]


@dataclass(frozen=True)
class NBParams:
    priors: np.ndarray      # (n_classes,)
    means: np.ndarray       # (n_classes, d)
    variances: np.ndarray   # (n_classes, d)

    def __eq__(self, other):
        return (isinstance(other, NBParams)
                and np.array_equal(self.priors, other.priors)
                and np.array_equal(self.means, other.means)
                and np.array_equal(self.variances, other.variances))


@dataclass(frozen=True)
class ModelBundle:
    kind: ModelKind
    trees: Tuple[TreeNode, ...]
    nb: Optional[NBParams]
    label_alphabet: Tuple[str, ...]
    feature_dim: int


@dataclass
class TrainSpec:
    kind: ModelKind
    max_depth: int = 12
    min_leaf: int = 2
    n_trees: int = 30
    bootstrap: bool = True
    max_features: Union[str, int, None] = "sqrt"  # per-split subsample; None = all

    def features_per_split(self, dim: int) -> Optional[int]:
        if self.max_features is None:
            return None
        if self.max_features == "sqrt":
            return max(1, int(np.sqrt(dim)))
        m = int(self.max_features)
        if not (1 <= m <= dim):
            raise ValueError(f"max_features {m} out of range for dim {dim}")
        return m


NB_VARIANCE_FLOOR = 1e-9


def _gini_terms(counts: np.ndarray) -> np.ndarray:
    # Sum of squared class counts per row; n*gini = n - terms/n.
    return np.einsum("ij,ij->i", counts, counts)


def _best_split(X: np.ndarray, y: np.ndarray, n_classes: int, min_leaf: int,
                features: Sequence[int]) -> Optional[Tuple[float, int, float]]:
    n = len(y)
    parent_counts = np.bincount(y, minlength=n_classes).astype(float)
    parent_score = n - float(parent_counts @ parent_counts) / n  # n * gini
    best: Optional[Tuple[float, int, float]] = None
    for feature in features:
        col = X[:, feature]
        order = np.argsort(col, kind="stable")
        sorted_col = col[order]
        onehot = np.zeros((n, n_classes))
        onehot[np.arange(n), y[order]] = 1.0
        prefix = np.cumsum(onehot, axis=0)
        cuts = np.arange(min_leaf, n - min_leaf + 1)
        cuts = cuts[sorted_col[cuts - 1] < sorted_col[cuts]]
        if cuts.size == 0:
            continue
        left = prefix[cuts - 1]
        right = parent_counts[None, :] - left
        sizes = cuts.astype(float)
        score = (sizes - _gini_terms(left) / sizes) \
            + ((n - sizes) - _gini_terms(right) / (n - sizes))
        i = int(np.argmin(score))
        if score[i] < parent_score - 1e-12:
            threshold = float((sorted_col[cuts[i] - 1] + sorted_col[cuts[i]]) / 2.0)
            candidate = (float(score[i]), feature, threshold)
            if best is None or candidate < best:
                best = candidate
    return best


def _grow(X: np.ndarray, y: np.ndarray, n_classes: int, depth: int,
          spec: TrainSpec, rng: Optional[np.random.Generator]) -> TreeNode:
    counts = np.bincount(y, minlength=n_classes)
    if depth >= spec.max_depth or len(y) < 2 * spec.min_leaf or counts.max() == len(y):
        return Leaf(tuple(int(c) for c in counts))
    per_split = spec.features_per_split(X.shape[1])
    if per_split is None or per_split >= X.shape[1]:
        features: Sequence[int] = range(X.shape[1])
    else:
        features = sorted(rng.choice(X.shape[1], size=per_split, replace=False))
    found = _best_split(X, y, n_classes, spec.min_leaf, features)
    if found is None:
        return Leaf(tuple(int(c) for c in counts))
    _, feature, threshold = found
    mask = X[:, feature] <= threshold
    return Split(feature, threshold,
                 _grow(X[mask], y[mask], n_classes, depth + 1, spec, rng),
                 _grow(X[~mask], y[~mask], n_classes, depth + 1, spec, rng))


def train(X: np.ndarray, labels: Sequence[str], spec: TrainSpec, seed: int = 0) -> ModelBundle:
    """Fit a model; fully determined by (data, spec, seed).

    Trees are CART with Gini impurity; the forest adds seeded bootstrap
    resampling and per-split feature subsampling. Naive Bayes stores
    per-class moments with a variance floor.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError(f"X must be 2-D, got shape {X.shape}")
    if len(labels) != len(X):
        raise ValueError("label count does not match row count")
    alphabet = tuple(sorted(set(labels)))
    if len(alphabet) < 2:
        raise ValueError("need at least two classes to train")
    index = {label: i for i, label in enumerate(alphabet)}
    y = np.array([index[l] for l in labels])
    n_classes = len(alphabet)
    dim = X.shape[1]

    if spec.kind is ModelKind.DECISION_TREE:
        tree_spec = TrainSpec(spec.kind, spec.max_depth, spec.min_leaf,
                              n_trees=1, bootstrap=False, max_features=None)
        root = _grow(X, y, n_classes, 0, tree_spec, None)
        return ModelBundle(spec.kind, (root,), None, alphabet, dim)

    if spec.kind is ModelKind.RANDOM_FOREST:
        streams = np.random.SeedSequence([seed, 0xF0437]).spawn(spec.n_trees)
        trees = []
        for stream in streams:
            rng = np.random.default_rng(stream)
            if spec.bootstrap:
                rows = rng.integers(0, len(y), size=len(y))
                Xb, yb = X[rows], y[rows]
                if len(np.unique(yb)) < 2:  # degenerate resample: fall back
                    Xb, yb = X, y
            else:
                Xb, yb = X, y
            trees.append(_grow(Xb, yb, n_classes, 0, spec, rng))
        return ModelBundle(spec.kind, tuple(trees), None, alphabet, dim)

    if spec.kind is ModelKind.GAUSSIAN_NB:
        priors = np.bincount(y, minlength=n_classes) / len(y)
        means = np.vstack([X[y == c].mean(axis=0) for c in range(n_classes)])
        variances = np.vstack([
            np.maximum(X[y == c].var(axis=0), NB_VARIANCE_FLOOR)
            for c in range(n_classes)
        ])
        return ModelBundle(spec.kind, (), NBParams(priors, means, variances), alphabet, dim)

    raise ValueError(f"unknown model kind {spec.kind}")


def _walk(node: TreeNode, x: np.ndarray) -> Tuple[int, ...]:
    while isinstance(node, Split):
        node = node.left if x[node.feature] <= node.threshold else node.right
    return node.counts


def predict(model: ModelBundle, feature: Sequence[float]) -> Tuple[str, list]:
    """Classify one feature vector; ties go to the lower label index.

    Tree scores are plain integer histogram sums; naive Bayes scores are
    per-class log joints.
    """
    x = np.asarray(feature, dtype=float)
    if x.shape != (model.feature_dim,):
        raise ValueError(f"feature must have shape ({model.feature_dim},), got {x.shape}")
    n = len(model.label_alphabet)
    if model.kind in (ModelKind.DECISION_TREE, ModelKind.RANDOM_FOREST):
        scores = [0] * n
        for tree in model.trees:
            for i, count in enumerate(_walk(tree, x)):
                scores[i] += count
    else:
        nb = model.nb
        log_joint = (np.log(nb.priors)
                     - 0.5 * np.sum(np.log(2.0 * np.pi * nb.variances), axis=1)
                     - 0.5 * np.sum((x[None, :] - nb.means) ** 2 / nb.variances, axis=1))
        scores = [float(v) for v in log_joint]
    winner = max(range(n), key=lambda i: (scores[i], -i))
    return model.label_alphabet[winner], scores


def aggregate(vectors: Sequence[np.ndarray]) -> np.ndarray:
    """Element-wise mean of the group members' embeddings."""
    if len(vectors) == 0:
        raise ValueError("cannot aggregate an empty group")
    stack = np.vstack([np.asarray(v, dtype=float) for v in vectors])
    return stack.mean(axis=0)


# --- binary model format ------------------------------------------------

_HEADER = struct.Struct(">8sHBH H")  # magic, version, kind, feature_dim, n_labels
_SPLIT_BODY = struct.Struct(">Hd")   # feature, threshold (after the marker byte)
_U16 = struct.Struct(">H")
_U32 = struct.Struct(">I")
_F64 = struct.Struct(">d")


def _encode_tree(node: TreeNode, out: list) -> None:
    if isinstance(node, Split):
        out.append(b"\x00")
        out.append(_SPLIT_BODY.pack(node.feature, node.threshold))
        _encode_tree(node.left, out)
        _encode_tree(node.right, out)
    else:
        out.append(b"\x01")
        for count in node.counts:
            out.append(_U32.pack(count))


def serialize(model: ModelBundle) -> bytes:
    parts = [_HEADER.pack(MODEL_MAGIC, MODEL_VERSION, int(model.kind),
                          model.feature_dim, len(model.label_alphabet))]
    for label in model.label_alphabet:
        raw = label.encode("utf-8")
        parts.append(struct.pack(">H", len(raw)))
        parts.append(raw)
    if model.kind in (ModelKind.DECISION_TREE, ModelKind.RANDOM_FOREST):
        parts.append(struct.pack(">H", len(model.trees)))
        for tree in model.trees:
            _encode_tree(tree, parts)
    else:
        nb = model.nb
        for c in range(len(model.label_alphabet)):
            parts.append(_F64.pack(float(nb.priors[c])))
            parts.append(np.asarray(nb.means[c], dtype=">f8").tobytes())
            parts.append(np.asarray(nb.variances[c], dtype=">f8").tobytes())
    return b"".join(parts)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.offset = 0

    def take(self, size: int) -> bytes:
        chunk = self.data[self.offset:self.offset + size]
        if len(chunk) != size:
            raise ModelFormatError("truncated model bytes")
        self.offset += size
        return chunk

    def unpack(self, spec: struct.Struct):
        return spec.unpack(self.take(spec.size))


def _decode_tree(reader: _Reader, n_labels: int, depth: int = 0) -> TreeNode:
    if depth > 64:
        raise ModelFormatError("tree nesting too deep")
    marker = reader.take(1)[0]
    if marker == 0:
        feature, threshold = reader.unpack(_SPLIT_BODY)
        left = _decode_tree(reader, n_labels, depth + 1)
        right = _decode_tree(reader, n_labels, depth + 1)
        return Split(feature, threshold, left, right)
    if marker == 1:
        counts = tuple(reader.unpack(_U32)[0] for _ in range(n_labels))
        return Leaf(counts)
    raise ModelFormatError(f"unknown tree node marker {marker}")


def deserialize(data: bytes) -> ModelBundle:
    reader = _Reader(data)
    magic, version, kind_value, feature_dim, n_labels = reader.unpack(_HEADER)
    if magic != MODEL_MAGIC:
        raise ModelFormatError("bad magic")
    if version != MODEL_VERSION:
        raise ModelFormatError(f"unsupported model version {version}")
    try:
        kind = ModelKind(kind_value)
    except ValueError as exc:
        raise ModelFormatError(f"unknown model kind {kind_value}") from exc
    labels = []
    for _ in range(n_labels):
        (length,) = reader.unpack(_U16)
        labels.append(reader.take(length).decode("utf-8"))
    if kind in (ModelKind.DECISION_TREE, ModelKind.RANDOM_FOREST):
        (n_trees,) = reader.unpack(_U16)
        trees = tuple(_decode_tree(reader, n_labels) for _ in range(n_trees))
        nb = None
    else:
        priors = np.zeros(n_labels)
        means = np.zeros((n_labels, feature_dim))
        variances = np.zeros((n_labels, feature_dim))
        for c in range(n_labels):
            (priors[c],) = reader.unpack(_F64)
            means[c] = np.frombuffer(reader.take(8 * feature_dim), dtype=">f8")
            variances[c] = np.frombuffer(reader.take(8 * feature_dim), dtype=">f8")
        trees = ()
        nb = NBParams(priors, means, variances)
    if reader.offset != len(data):
        raise ModelFormatError("trailing bytes after model body")
    return ModelBundle(kind, trees, nb, tuple(labels), feature_dim)


def save_model(path, model: ModelBundle) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize(model))


def load_model(path) -> ModelBundle:
    with open(path, "rb") as fh:
        return deserialize(fh.read())


# --- dataset file format --------------------------------------------------

def save_dataset_csv(path, X: np.ndarray, labels: Sequence[str]) -> None:
    X = np.asarray(X, dtype=float)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"f{i}" for i in range(X.shape[1])] + ["label"])
        for row, label in zip(X, labels):
            writer.writerow([repr(float(v)) for v in row] + [label])


def load_dataset_csv(path) -> Tuple[np.ndarray, List[str]]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ModelFormatError("empty dataset file") from None
        if not header or header[-1] != "label":
            raise ModelFormatError("dataset header must end with 'label'")
        dim = len(header) - 1
        rows, labels = [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != dim + 1:
                raise ModelFormatError(f"row {lineno}: expected {dim + 1} fields")
            try:
                rows.append([float(v) for v in row[:dim]])
            except ValueError as exc:
                raise ModelFormatError(f"row {lineno}: {exc}") from exc
            labels.append(row[dim])
    if not rows:
        raise ModelFormatError("dataset has no rows")
    return np.asarray(rows), labels
