"""FedAvg server loop with optional knowledgeable-client insertion (KCI).

Client ids 0..K-1 are the regular IID clients; K..K+m-1 are the inserted
knowledgeable clients. Knowledgeable data is drawn from the same training
set and may overlap regular shards.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields
from typing import Iterator, Sequence

import numpy as np

from . import nn
from .data import ClientShard, Dataset, partition_iid, sample_fraction, split_stratified
from .errors import ConfigError, InputError, InternalError

# RNG stream tags; every random draw is keyed by (seed, tag, ...)
STREAM_INIT, STREAM_PARTITION, STREAM_POOL, STREAM_SPLIT, STREAM_CLIENT = range(5)


def stream(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng([seed, *key])


@dataclass(frozen=True)
class HyperParams:
    T: int = 50
    K: int = 10
    E: int = 5
    B: int = 64
    eta: float = 0.01
    momentum: float = 0.9
    m: int = 0
    lam: float | None = None
    pool: float | None = None
    sample_ratio: float = 1.0
    seed: int = 0

    def validate(self) -> "HyperParams":
        for name in ("T", "K", "E", "B"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise ConfigError(f"{name} must be a positive integer, got {value!r}")
        if not isinstance(self.m, (int, np.integer)) or self.m < 0:
            raise ConfigError(f"m must be a non-negative integer, got {self.m!r}")
        if not self.eta > 0:
            raise ConfigError(f"eta must be positive, got {self.eta}")
        if not 0 <= self.momentum < 1:
            raise ConfigError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.sample_ratio != 1:
            raise ConfigError(f"sample_ratio is fixed at 1, got {self.sample_ratio}")
        if self.lam is not None and not 0 < self.lam <= 1:
            raise ConfigError(f"lambda must be in (0, 1], got {self.lam}")
        if self.pool is not None and not 0 < self.pool <= 1:
            raise ConfigError(f"pool must be in (0, 1], got {self.pool}")
        if self.m > 0:
            if self.lam is not None and self.pool is not None and not math.isclose(self.lam * self.m, self.pool, abs_tol=1e-12):
                raise ConfigError(f"lambda={self.lam} and pool={self.pool} disagree for m={self.m}")
            if self.kci_pool > 1 + 1e-12:
                raise ConfigError(f"m*lambda = {self.kci_pool:g} exceeds the full training set")
        return self

    @property
    def kci_pool(self) -> float:
        """Total knowledgeable data fraction (m * lambda)."""
        if self.lam is not None:
            return self.lam * self.m
        return 1.0 if self.pool is None else self.pool

    @property
    def kci_lambda(self) -> float:
        """Per-knowledgeable-client data fraction."""
        if self.lam is not None:
            return self.lam
        return self.kci_pool / self.m if self.m else 0.0

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True)
class Cohort:
    shards: tuple[ClientShard, ...]

    @property
    def total_samples(self) -> int:
        return sum(s.n_k for s in self.shards)

    def weights(self) -> list[float]:
        """Aggregation weights n_k / m_t in client order."""
        total = self.total_samples
        return [s.n_k / total for s in self.shards]


@dataclass
class RoundMetrics:
    run_label: str
    round: int
    test_accuracy: float
    train_loss: float
    wall_seconds: float


def build_kci_cohort(trainset: Dataset, hp: HyperParams) -> Cohort:
    hp.validate()
    n = len(trainset)
    shards = partition_iid(n, hp.K, seed=int(stream(hp.seed, STREAM_PARTITION).integers(2**63)))
    if hp.m > 0:
        pool = sample_fraction(trainset, hp.kci_pool, seed=int(stream(hp.seed, STREAM_POOL).integers(2**63)))
        parts = split_stratified(pool, trainset.labels, hp.m, seed=int(stream(hp.seed, STREAM_SPLIT).integers(2**63)))
        for j, part in enumerate(parts):
            if len(part) == 0:
                raise ConfigError(f"knowledgeable client {j} would receive no data (pool {hp.kci_pool:g} of {n})")
            shards.append(ClientShard(hp.K + j, part, knowledgeable=True))
    return Cohort(tuple(shards))


def client_training(
    shard: ClientShard,
    w: nn.ModelParams,
    hp: HyperParams,
    trainset: Dataset,
    rng: np.random.Generator,
    spec: nn.ModelSpec,
) -> tuple[nn.ModelParams, float]:
    """E epochs of mini-batch SGD with momentum from a zero velocity.

    Returns the trained parameters and the sample-weighted mean loss of the
    final epoch (NaN when E == 0).
    """
    idx = np.asarray(shard.indices)
    if len(idx) and (idx.min() < 0 or idx.max() >= len(trainset)):
        raise InternalError(f"client {shard.client_id} references samples outside the training set")
    state = nn.OptimizerState.fresh(w, hp.eta, hp.momentum)
    last_loss = float("nan")
    for _ in range(hp.E):
        order = idx[rng.permutation(len(idx))]
        total = 0.0
        for start in range(0, len(order), hp.B):
            take = order[start : start + hp.B]
            batch = nn.Batch(trainset.inputs[take], trainset.labels[take])
            loss, grads = nn.loss_and_grad(w, spec, batch)
            w, state = nn.sgd_step(w, grads, state)
            total += loss * len(take)
        last_loss = total / len(idx)
    return w, last_loss


def aggregate(models: Sequence[tuple[nn.ModelParams, int]]) -> nn.ModelParams:
    """Sample-count weighted average, accumulated in float64 in list order."""
    if not models:
        raise InputError("nothing to aggregate")
    counts = [int(n) for _, n in models]
    if min(counts) < 1:
        raise InternalError("every aggregated client needs n_k >= 1")
    total = sum(counts)
    weights = [n / total for n in counts]
    if abs(math.fsum(weights) - 1.0) > 1e-12:
        raise InternalError(f"aggregation weights sum to {math.fsum(weights)!r}")
    reference = models[0][0]
    sums = [np.zeros(a.shape, dtype=np.float64) for a in reference.arrays()]
    for (params, _), weight in zip(models, weights):
        nn.check_same_structure(reference, params)
        for acc, a in zip(sums, params.arrays()):
            acc += weight * a.astype(np.float64, copy=False)
    return reference.with_arrays([s.astype(a.dtype) for s, a in zip(sums, reference.arrays())])


def federated_rounds(
    spec: nn.ModelSpec,
    trainset: Dataset,
    testset: Dataset,
    hp: HyperParams,
    label: str = "",
    workers: int = 1,
) -> Iterator[tuple[RoundMetrics, nn.ModelParams]]:
    """Yield (metrics, global params) after each communication round."""
    hp.validate()
    spec.trace()
    if spec.input_shape != trainset.input_shape:
        raise ConfigError(f"model input {list(spec.input_shape)} does not match data {list(trainset.input_shape)}")
    if spec.num_classes != trainset.num_classes:
        raise ConfigError(f"model has {spec.num_classes} outputs but data has {trainset.num_classes} classes")
    cohort = build_kci_cohort(trainset, hp)
    w = nn.init_params(spec, stream(hp.seed, STREAM_INIT))
    pool = ThreadPoolExecutor(workers) if workers > 1 else None
    try:
        for t in range(1, hp.T + 1):
            started = time.perf_counter()

            def train(shard, w=w, t=t):
                return client_training(shard, w, hp, trainset, stream(hp.seed, STREAM_CLIENT, shard.client_id, t), spec)

            results = list(pool.map(train, cohort.shards) if pool else map(train, cohort.shards))
            w = aggregate([(params, s.n_k) for (params, _), s in zip(results, cohort.shards)])
            loss = sum(s.n_k * l for (_, l), s in zip(results, cohort.shards)) / cohort.total_samples
            acc = nn.evaluate_accuracy(w, spec, testset)
            yield RoundMetrics(label, t, acc, float(loss), time.perf_counter() - started), w
    finally:
        if pool:
            pool.shutdown()


def run_federated(
    spec: nn.ModelSpec,
    trainset: Dataset,
    testset: Dataset,
    hp: HyperParams,
    label: str = "",
    workers: int = 1,
) -> list[RoundMetrics]:
    return [m for m, _ in federated_rounds(spec, trainset, testset, hp, label, workers)]
