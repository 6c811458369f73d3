"""Learning side of the simulator.

The model is always a flat parameter vector. A :class:`Task` turns that vector
into loss, gradient and accuracy on a batch of samples; the bundled
:class:`SoftmaxTask` is multinomial logistic regression with biases, which is
the reference task used by the engine and the experiments.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from ehfl.types import ModelParams, Update


class DivergenceError(RuntimeError):
    """Local training produced a non-finite gradient or iterate."""


@dataclass(frozen=True)
class Dataset:
    X: np.ndarray
    y: np.ndarray

    def __post_init__(self) -> None:
        if len(self.X) != len(self.y):
            raise ValueError(f"{len(self.X)} feature rows but {len(self.y)} labels")

    def __len__(self) -> int:
        return len(self.y)

    def subset(self, idx: np.ndarray) -> Dataset:
        return Dataset(self.X[idx], self.y[idx])


class Task(Protocol):
    dimension: int

    def loss(self, params: ModelParams, X: np.ndarray, y: np.ndarray) -> float: ...

    def gradient(self, params: ModelParams, X: np.ndarray, y: np.ndarray) -> ModelParams: ...

    def accuracy(self, params: ModelParams, X: np.ndarray, y: np.ndarray) -> float: ...


@dataclass(frozen=True)
class SoftmaxTask:
    """Softmax regression; params pack a ``(n_classes, n_features)`` weight matrix then the biases."""

    n_classes: int
    n_features: int

    @property
    def dimension(self) -> int:
        return self.n_classes * (self.n_features + 1)

    def zeros(self) -> ModelParams:
        return np.zeros(self.dimension)

    def unpack(self, params: ModelParams) -> tuple[np.ndarray, np.ndarray]:
        if params.shape != (self.dimension,):
            raise ValueError(f"expected parameter vector of length {self.dimension}, got shape {params.shape}")
        k, f = self.n_classes, self.n_features
        return params[: k * f].reshape(k, f), params[k * f :]

    def logits(self, params: ModelParams, X: np.ndarray) -> np.ndarray:
        W, b = self.unpack(params)
        return X @ W.T + b

    def _log_probs(self, params: ModelParams, X: np.ndarray) -> np.ndarray:
        z = self.logits(params, X)
        z = z - z.max(axis=1, keepdims=True)
        return z - np.log(np.exp(z).sum(axis=1, keepdims=True))

    def loss(self, params: ModelParams, X: np.ndarray, y: np.ndarray) -> float:
        logp = self._log_probs(params, X)
        return float(-logp[np.arange(len(y)), y].mean())

    def gradient(self, params: ModelParams, X: np.ndarray, y: np.ndarray) -> ModelParams:
        probs = np.exp(self._log_probs(params, X))
        probs[np.arange(len(y)), y] -= 1.0
        probs /= len(y)
        return np.concatenate([(probs.T @ X).ravel(), probs.sum(axis=0)])

    def predict(self, params: ModelParams, X: np.ndarray) -> np.ndarray:
        return self.logits(params, X).argmax(axis=1)

    def accuracy(self, params: ModelParams, X: np.ndarray, y: np.ndarray) -> float:
        return float((self.predict(params, X) == y).mean())


@dataclass
class TrainingJob:
    """An in-flight LocalTrain session; the result is released at ``end_slot``."""

    start_slot: int
    end_slot: int
    client_id: int
    epoch: int
    start_model: ModelParams
    iterate: ModelParams | None = None
    batches_done: int = 0


@dataclass
class DataPartition:
    shards: list[np.ndarray]
    test: Dataset | None = None

    @property
    def sizes(self) -> list[int]:
        return [len(s) for s in self.shards]


def _batches(n: int, batch_size: int | None, rng: np.random.Generator | None):
    if batch_size is None or batch_size >= n:
        while True:
            yield slice(None)
    if rng is None:
        raise ValueError("mini-batch training needs a random stream for batch order")
    while True:
        order = rng.permutation(n)
        for start in range(0, n - batch_size + 1, batch_size):
            yield order[start : start + batch_size]


def local_train(
    start_model: ModelParams,
    shard: Dataset,
    learning_rate: float,
    n_batches: int,
    task: Task,
    *,
    rng: np.random.Generator | None = None,
    batch_size: int | None = None,
    epoch: int = 0,
    client_id: int = 0,
) -> Update:
    """Run ``n_batches`` SGD steps from ``start_model`` and return ``start_model - y_B``.

    With ``batch_size=None`` every step uses the whole shard and no random draws
    are made; otherwise the shard is reshuffled from ``rng`` each pass.
    """
    if n_batches < 0:
        raise ValueError(f"n_batches must be non-negative, got {n_batches}")
    if len(shard) == 0:
        raise ValueError("cannot train on an empty shard")
    y = np.array(start_model, dtype=float, copy=True)
    batches = _batches(len(shard), batch_size, rng)
    for b in range(n_batches):
        idx = next(batches)
        with np.errstate(over="ignore", invalid="ignore"):
            grad = task.gradient(y, shard.X[idx], shard.y[idx])
            if not np.all(np.isfinite(grad)):
                raise DivergenceError(
                    f"client {client_id}: non-finite gradient at batch {b} (learning_rate={learning_rate})"
                )
            y = y - learning_rate * grad
    if not np.all(np.isfinite(y)):
        raise DivergenceError(f"client {client_id}: iterate diverged (learning_rate={learning_rate})")
    return Update(delta=start_model - y, produced_epoch=epoch, client_id=client_id)


def aggregate(hub_model: ModelParams, updates: Sequence[Update], mode: str = "sum") -> ModelParams:
    """Apply received updates to the hub's model as a descent step.

    Each delta is ``start - y_B`` (an accumulated gradient step), so it is
    subtracted. ``mode="sum"`` applies the raw sum; ``mode="mean"`` divides by
    the number of updates. Updates are summed in client-id order so the result
    does not depend on arrival order.
    """
    if mode not in ("sum", "mean"):
        raise ValueError(f"unknown aggregation mode {mode!r}")
    if not updates:
        return np.array(hub_model, dtype=float, copy=True)
    ordered = sorted(updates, key=lambda u: (u.client_id, u.produced_epoch))
    total = np.zeros_like(hub_model, dtype=float)
    for u in ordered:
        if u.delta.shape != hub_model.shape:
            raise ValueError(f"update from client {u.client_id} has shape {u.delta.shape}, model has {hub_model.shape}")
        total += u.delta
    if mode == "mean":
        total /= len(ordered)
    return hub_model - total


def partition_iid(
    dataset: Dataset, n_clients: int, samples_per_client: int, rng: np.random.Generator
) -> DataPartition:
    needed = n_clients * samples_per_client
    if len(dataset) < needed:
        raise ValueError(f"need {needed} samples for {n_clients} x {samples_per_client}, dataset has {len(dataset)}")
    perm = rng.permutation(len(dataset))[:needed]
    return DataPartition(shards=[np.sort(s) for s in np.split(perm, n_clients)])


def partition_dirichlet(
    dataset: Dataset,
    n_clients: int,
    alpha: float,
    rng: np.random.Generator,
    max_tries: int = 10_000,
) -> DataPartition:
    """Label-skewed split: each class is divided among clients by a Dirichlet(alpha) draw.

    The whole draw is repeated until every client holds at least one sample.
    """
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    if len(dataset) < n_clients:
        raise ValueError(f"dataset of {len(dataset)} samples cannot cover {n_clients} clients")
    classes = np.unique(dataset.y)
    by_class = [np.flatnonzero(dataset.y == c) for c in classes]
    for _ in range(max_tries):
        shards: list[list[np.ndarray]] = [[] for _ in range(n_clients)]
        for idx in by_class:
            idx = rng.permutation(idx)
            props = rng.dirichlet(np.full(n_clients, alpha))
            cuts = (np.cumsum(props) * len(idx)).astype(int)[:-1]
            for client, part in enumerate(np.split(idx, cuts)):
                shards[client].append(part)
        merged = [np.sort(np.concatenate(parts)) for parts in shards]
        if all(len(s) > 0 for s in merged):
            return DataPartition(shards=merged)
    raise ValueError(f"no Dirichlet(alpha={alpha}) draw left every client non-empty after {max_tries} tries")


def evaluate(model: ModelParams, test: Dataset, task: Task) -> tuple[float, float]:
    if len(test) == 0:
        raise ValueError("empty test set")
    return task.accuracy(model, test.X, test.y), task.loss(model, test.X, test.y)


def global_objective(model: ModelParams, train: Dataset, partition: DataPartition, task: Task) -> float:
    """Average of the per-client empirical losses, each client weighted equally."""
    losses = [task.loss(model, train.X[s], train.y[s]) for s in partition.shards]
    return float(np.mean(losses))


def make_synthetic_task(
    n_classes: int,
    dimension: int,
    cluster_spread: float,
    rng: np.random.Generator,
    n_train: int = 1000,
    n_test: int = 1000,
) -> tuple[SoftmaxTask, Dataset, Dataset]:
    """Gaussian class clusters in ``dimension`` features, returned as ``(task, train, test)``.

    Class centres are standard-normal draws; every sample is its class centre
    plus isotropic noise of standard deviation ``cluster_spread``. Labels are
    balanced up to one sample.
    """
    if n_classes < 2 or dimension < 1:
        raise ValueError("need at least two classes and one feature")
    centres = rng.normal(size=(n_classes, dimension))

    def draw(n: int) -> Dataset:
        y = rng.permutation(np.arange(n) % n_classes)
        X = centres[y] + cluster_spread * rng.normal(size=(n, dimension))
        return Dataset(X, y.astype(np.int64))

    train = draw(n_train)
    test = draw(n_test)
    return SoftmaxTask(n_classes, dimension), train, test


def load_csv_dataset(path: str | Path) -> Dataset:
    """Read ``feature_1,...,feature_m,label`` rows; a non-numeric first line is taken as a header."""
    path = Path(path)
    with path.open() as fh:
        first = fh.readline()
    skip = 0
    try:
        [float(v) for v in first.strip().split(",")]
    except ValueError:
        skip = 1
    raw = np.loadtxt(path, delimiter=",", skiprows=skip, ndmin=2)
    labels = raw[:, -1]
    if not np.all(labels == np.round(labels)) or labels.min() < 0:
        raise ValueError(f"{path}: last column must hold non-negative integer labels")
    return Dataset(raw[:, :-1].astype(float), labels.astype(np.int64))
