"""Datasets: CIFAR-10 binary loader, synthetic Gaussian blobs, IID client shards."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError

CIFAR_RECORDS_PER_FILE = 10_000
CIFAR_RECORD_BYTES = 1 + 3 * 32 * 32
CIFAR_FILE_BYTES = CIFAR_RECORDS_PER_FILE * CIFAR_RECORD_BYTES
CIFAR_TRAIN_FILES = tuple(f"data_batch_{i}.bin" for i in range(1, 6))
CIFAR_TEST_FILES = ("test_batch.bin",)


@dataclass(frozen=True)
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        if len(self.labels) < 1:
            raise ConfigError("dataset must contain at least one sample")
        if self.inputs.shape[0] != len(self.labels):
            raise ConfigError(f"{self.inputs.shape[0]} inputs but {len(self.labels)} labels")
        if self.labels.min() < 0 or self.labels.max() >= self.num_classes:
            raise ConfigError(f"labels must lie in [0, {self.num_classes})")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def input_shape(self) -> tuple[int, ...]:
        return tuple(self.inputs.shape[1:])

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.inputs[idx], self.labels[idx], self.num_classes)


@dataclass(frozen=True)
class ClientShard:
    client_id: int
    indices: np.ndarray
    knowledgeable: bool = False

    @property
    def n_k(self) -> int:
        return len(self.indices)


# --------------------------------------------------------------------------
# CIFAR-10
# --------------------------------------------------------------------------


def normalize_pixels(raw: np.ndarray) -> np.ndarray:
    """Bytes to [-1, 1] via (x/255 - 0.5) / 0.5."""
    return ((raw.astype(np.float32) / 255.0 - 0.5) / 0.5).astype(np.float32)


def read_cifar_file(path: Path) -> tuple[np.ndarray, np.ndarray]:
    """Labels and raw [n, 3, 32, 32] uint8 pixels from one binary batch file."""
    try:
        raw = np.fromfile(path, dtype=np.uint8)
    except OSError as exc:
        raise DataError(f"cannot read CIFAR-10 file {path}: {exc}") from exc
    if raw.size != CIFAR_FILE_BYTES:
        raise DataError(f"{path}: expected {CIFAR_FILE_BYTES} bytes, found {raw.size}")
    records = raw.reshape(CIFAR_RECORDS_PER_FILE, CIFAR_RECORD_BYTES)
    labels = records[:, 0].astype(np.int64)
    if labels.max() > 9:
        bad = int(np.argmax(labels > 9))
        raise DataError(f"{path}: record {bad} has label {labels[bad]} outside 0-9")
    return labels, records[:, 1:].reshape(-1, 3, 32, 32)


def load_cifar10(directory: str | Path, split: str = "train") -> Dataset:
    directory = Path(directory)
    if split == "train":
        names, expected = CIFAR_TRAIN_FILES, 50_000
    elif split == "test":
        names, expected = CIFAR_TEST_FILES, 10_000
    else:
        raise ConfigError(f"split must be 'train' or 'test', got {split!r}")
    labels, pixels = [], []
    for name in names:
        path = directory / name
        if not path.is_file():
            raise DataError(f"missing CIFAR-10 file {path}")
        lab, pix = read_cifar_file(path)
        labels.append(lab)
        pixels.append(pix)
    y = np.concatenate(labels)
    if len(y) != expected:
        raise DataError(f"CIFAR-10 {split} split has {len(y)} records, expected {expected}")
    return Dataset(normalize_pixels(np.concatenate(pixels)), y, 10)


# --------------------------------------------------------------------------
# Synthetic blobs
# --------------------------------------------------------------------------


def blob_means(num_classes: int, input_dim: int, separation: float, rng: np.random.Generator) -> np.ndarray:
    """Random class centres rescaled so the closest pair is exactly ``separation`` apart."""
    for _ in range(100):
        means = rng.normal(size=(num_classes, input_dim))
        diffs = means[:, None, :] - means[None, :, :]
        dist = np.sqrt((diffs**2).sum(-1))
        closest = dist[np.triu_indices(num_classes, 1)].min()
        if closest > 1e-9:
            return means * (separation / closest)
    raise ConfigError("could not place distinct class means")


def make_synthetic(
    num_classes: int,
    samples_per_class: int,
    input_dim: int,
    separation: float,
    seed: int,
) -> Dataset:
    """Unit-variance Gaussian blobs, class-major order, float32 inputs."""
    if num_classes < 2 or samples_per_class < 1 or input_dim < 1 or not separation > 0:
        raise ConfigError(
            f"invalid synthetic sizes: classes={num_classes}, samples_per_class={samples_per_class}, "
            f"input_dim={input_dim}, separation={separation}"
        )
    rng = np.random.default_rng(seed)
    means = blob_means(num_classes, input_dim, separation, rng)
    labels = np.repeat(np.arange(num_classes), samples_per_class)
    inputs = means[labels] + rng.normal(size=(len(labels), input_dim))
    return Dataset(inputs.astype(np.float32), labels, num_classes)


def train_test_split(dataset: Dataset, test_per_class: int, seed: int) -> tuple[Dataset, Dataset]:
    """Hold out ``test_per_class`` samples of every class."""
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for c in range(dataset.num_classes):
        idx = rng.permutation(np.flatnonzero(dataset.labels == c))
        if len(idx) <= test_per_class:
            raise ConfigError(f"class {c} has {len(idx)} samples, cannot hold out {test_per_class}")
        test_idx.append(idx[:test_per_class])
        train_idx.append(idx[test_per_class:])
    return dataset.subset(np.sort(np.concatenate(train_idx))), dataset.subset(np.sort(np.concatenate(test_idx)))


# --------------------------------------------------------------------------
# Client data
# --------------------------------------------------------------------------


def partition_iid(n: int, k: int, seed: int) -> list[ClientShard]:
    """Shuffle [0, n) and cut it into k contiguous runs; low ids take the remainder."""
    if k < 1:
        raise ConfigError(f"client count must be >= 1, got {k}")
    if k > n:
        raise ConfigError(f"cannot split {n} samples among {k} clients")
    perm = np.random.default_rng(seed).permutation(n)
    base, extra = divmod(n, k)
    shards, start = [], 0
    for cid in range(k):
        size = base + (1 if cid < extra else 0)
        shards.append(ClientShard(cid, perm[start : start + size]))
        start += size
    return shards


def sample_fraction(dataset: Dataset, fraction: float, seed: int) -> np.ndarray:
    """Class-stratified sample of floor(fraction*N) indices, without replacement.

    Each class contributes floor(fraction*N_c). The shortfall to floor(fraction*N)
    is one extra sample from each of that many classes, chosen uniformly among
    classes with a fractional remainder, so every class stays within one of
    fraction*N_c. Returned sorted ascending.
    """
    if not 0 < fraction <= 1:
        raise ConfigError(f"lambda must be in (0, 1], got {fraction}")
    n = len(dataset)
    if fraction == 1:
        return np.arange(n)
    rng = np.random.default_rng(seed)
    target = math.floor(fraction * n + 1e-9)
    chosen, leftovers, remainders = [], [], []
    for c in range(dataset.num_classes):
        idx = np.flatnonzero(dataset.labels == c)
        exact = fraction * len(idx)
        take = math.floor(exact + 1e-9)
        perm = rng.permutation(idx)
        chosen.append(perm[:take])
        leftovers.append(perm[take:])
        remainders.append(exact - take > 1e-9)
    picked = np.concatenate(chosen)
    short = target - len(picked)
    if short > 0:
        eligible = np.flatnonzero(remainders)
        extra = rng.choice(eligible, size=short, replace=False)
        picked = np.concatenate([picked, [leftovers[c][0] for c in extra]])
    return np.sort(picked).astype(np.int64)


def split_stratified(indices: np.ndarray, labels: np.ndarray, parts: int, seed: int) -> list[np.ndarray]:
    """Deal indices round-robin, class by class, into ``parts`` near-equal disjoint groups."""
    rng = np.random.default_rng(seed)
    indices = np.asarray(indices)
    ordered = np.concatenate([rng.permutation(indices[labels[indices] == c]) for c in np.unique(labels[indices])])
    return [np.sort(ordered[j::parts]) for j in range(parts)]
