"""Gait-phase classifier: a small tanh MLP trained from scratch with numpy.

Inputs are ``[|e|, |de|, grf, grf_rate]``; outputs are softmax probabilities
over (SW, CM, ST).  Weights persist to a versioned little-endian binary file
that carries its own normalisation constants.
"""
from __future__ import annotations

import csv
import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .contact import GaitPhase
from .errors import ClassifierError

FEATURES = ("abs_err", "abs_derr", "grf", "grf_rate")
LAYER_SIZES = (4, 16, 16, 3)
MAGIC = b"SRLPC"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class PhaseFeatures:
    abs_err: float
    abs_derr: float
    grf: float
    grf_rate: float

    def as_array(self) -> np.ndarray:
        return np.array([self.abs_err, self.abs_derr, self.grf, self.grf_rate], dtype=float)


@dataclass
class PhaseDataset:
    X: np.ndarray
    y: np.ndarray

    def __len__(self):
        return int(self.y.size)

    def extend(self, other: "PhaseDataset") -> "PhaseDataset":
        return PhaseDataset(np.vstack([self.X, other.X]), np.concatenate([self.y, other.y]))


@dataclass
class PhaseClassifier:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    mean: np.ndarray
    std: np.ndarray
    metadata: dict = field(default_factory=dict)

    def forward(self, X: np.ndarray) -> np.ndarray:
        """Class probabilities for a batch of raw (unnormalised) features."""
        return _forward(self.weights, self.biases, (np.atleast_2d(X) - self.mean) / self.std)[-1]


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    ez = np.exp(z)
    return ez / ez.sum(axis=1, keepdims=True)


def _forward(weights, biases, Xn):
    acts = [Xn]
    h = Xn
    for W, b in zip(weights[:-1], biases[:-1]):
        h = np.tanh(h @ W + b)
        acts.append(h)
    acts.append(_softmax(h @ weights[-1] + biases[-1]))
    return acts


def loss_and_grads(weights, biases, Xn, y):
    """Mean cross-entropy and its gradients by backpropagation."""
    acts = _forward(weights, biases, Xn)
    probs = acts[-1]
    n = Xn.shape[0]
    loss = -float(np.mean(np.log(probs[np.arange(n), y] + 1e-300)))
    delta = probs.copy()
    delta[np.arange(n), y] -= 1.0
    delta /= n
    gW = [None] * len(weights)
    gb = [None] * len(biases)
    for layer in range(len(weights) - 1, -1, -1):
        gW[layer] = acts[layer].T @ delta
        gb[layer] = delta.sum(axis=0)
        if layer:
            delta = (delta @ weights[layer].T) * (1.0 - acts[layer] ** 2)
    return loss, gW, gb


def init_params(rng: np.random.Generator, sizes=LAYER_SIZES):
    weights, biases = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        weights.append(rng.normal(0.0, 1.0 / math.sqrt(fan_in), size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return weights, biases


def _validate_dataset(ds: PhaseDataset, min_size: int):
    if ds.X.ndim != 2 or ds.X.shape[1] != len(FEATURES):
        raise ClassifierError(f"features must be (n, {len(FEATURES)})")
    if ds.X.shape[0] != ds.y.size:
        raise ClassifierError("feature/label count mismatch")
    if not np.all(np.isfinite(ds.X)):
        raise ClassifierError("dataset contains non-finite features")
    if len(ds) < min_size:
        raise ClassifierError(f"dataset too small: {len(ds)} < {min_size}")
    missing = [p.code for p in GaitPhase if not np.any(ds.y == int(p))]
    if missing:
        raise ClassifierError(f"dataset is missing phase classes: {', '.join(missing)}")


def train_classifier(
    dataset: PhaseDataset,
    seed: int = 0,
    epochs: int = 60,
    batch_size: int = 64,
    learning_rate: float = 0.05,
    momentum: float = 0.9,
    holdout: float = 0.2,
    min_size: int = 300,
) -> PhaseClassifier:
    """Mini-batch SGD with momentum on cross-entropy; deterministic for a given seed."""
    _validate_dataset(dataset, min_size)
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(dataset))
    n_test = int(round(holdout * len(dataset)))
    test_idx, train_idx = order[:n_test], order[n_test:]
    X_train, y_train = dataset.X[train_idx], dataset.y[train_idx].astype(int)

    mean = X_train.mean(axis=0)
    std = X_train.std(axis=0)
    std[std < 1e-12] = 1.0
    Xn = (X_train - mean) / std

    weights, biases = init_params(rng)
    vW = [np.zeros_like(W) for W in weights]
    vb = [np.zeros_like(b) for b in biases]
    loss = math.nan
    for _ in range(epochs):
        perm = rng.permutation(Xn.shape[0])
        for start in range(0, perm.size, batch_size):
            batch = perm[start : start + batch_size]
            loss, gW, gb = loss_and_grads(weights, biases, Xn[batch], y_train[batch])
            for i in range(len(weights)):
                vW[i] = momentum * vW[i] - learning_rate * gW[i]
                vb[i] = momentum * vb[i] - learning_rate * gb[i]
                weights[i] += vW[i]
                biases[i] += vb[i]

    clf = PhaseClassifier(weights, biases, mean, std)
    train_acc = accuracy(clf, PhaseDataset(X_train, y_train))
    test_acc = accuracy(clf, PhaseDataset(dataset.X[test_idx], dataset.y[test_idx])) if n_test else math.nan
    clf.metadata = {
        "epochs": epochs,
        "seed": seed,
        "batch_size": batch_size,
        "learning_rate": learning_rate,
        "n_train": int(train_idx.size),
        "n_test": int(n_test),
        "final_loss": float(loss),
        "train_accuracy": train_acc,
        "test_accuracy": test_acc,
    }
    return clf


def accuracy(clf: PhaseClassifier, ds: PhaseDataset) -> float:
    if len(ds) == 0:
        return math.nan
    pred = np.argmax(clf.forward(ds.X), axis=1)
    return float(np.mean(pred == ds.y))


def classify(clf: PhaseClassifier, f) -> tuple[GaitPhase, float]:
    x = f.as_array() if isinstance(f, PhaseFeatures) else np.asarray(f, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ClassifierError("features must be finite")
    probs = clf.forward(x)[0]
    k = int(np.argmax(probs))
    return GaitPhase(k), float(probs[k])


def save_classifier(clf: PhaseClassifier, path) -> Path:
    path = Path(path)
    header = {
        "layer_sizes": [int(clf.weights[0].shape[0])] + [int(W.shape[1]) for W in clf.weights],
        "features": list(FEATURES),
        "classes": [p.code for p in GaitPhase],
        "activation": "tanh",
        "metadata": clf.metadata,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    arrays = [clf.mean, clf.std]
    for W, b in zip(clf.weights, clf.biases):
        arrays += [W, b]
    with path.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<BI", FORMAT_VERSION, len(blob)))
        fh.write(blob)
        for arr in arrays:
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return path


def load_classifier(path) -> PhaseClassifier:
    path = Path(path)
    data = path.read_bytes()
    if not data.startswith(MAGIC):
        raise ClassifierError(f"{path}: not a phase classifier file")
    offset = len(MAGIC)
    version, hlen = struct.unpack_from("<BI", data, offset)
    if version != FORMAT_VERSION:
        raise ClassifierError(f"{path}: unsupported format version {version}")
    offset += struct.calcsize("<BI")
    header = json.loads(data[offset : offset + hlen].decode("utf-8"))
    offset += hlen
    sizes = header["layer_sizes"]

    def take(shape):
        nonlocal offset
        count = int(np.prod(shape))
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=offset).reshape(shape).astype(float)
        offset += 8 * count
        return arr

    try:
        mean = take((sizes[0],))
        std = take((sizes[0],))
        weights, biases = [], []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            weights.append(take((fan_in, fan_out)))
            biases.append(take((fan_out,)))
    except ValueError:
        raise ClassifierError(f"{path}: truncated weight data") from None
    if offset != len(data):
        raise ClassifierError(f"{path}: trailing bytes after weights")
    return PhaseClassifier(weights, biases, mean, std, header.get("metadata", {}))


def save_dataset_csv(ds: PhaseDataset, path) -> Path:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        fh.write(",".join(FEATURES) + ",label\n")
        for x, y in zip(ds.X, ds.y):
            fh.write(",".join(repr(float(v)) for v in x) + f",{GaitPhase(int(y)).code}\n")
    return path


def load_dataset_csv(path) -> PhaseDataset:
    path = Path(path)
    X, y = [], []
    with path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != FEATURES + ("label",):
            raise ClassifierError(f"{path}:1: expected header {','.join(FEATURES)},label")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(FEATURES) + 1:
                raise ClassifierError(f"{path}:{lineno}: expected {len(FEATURES) + 1} fields")
            try:
                X.append([float(v) for v in row[:-1]])
                label = row[-1].strip()
                y.append(int(label) if label.isdigit() else int(GaitPhase.from_code(label)))
            except ValueError as exc:
                raise ClassifierError(f"{path}:{lineno}: {exc}") from None
    return PhaseDataset(np.array(X, dtype=float).reshape(-1, len(FEATURES)), np.array(y, dtype=int))
