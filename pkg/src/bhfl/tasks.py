"""Differentiable learning tasks, synthetic data, sharding, and local SGD.

Three task kinds cover the regimes the simulator needs at desk scale:
convex least-squares regression, convex softmax classification, and a
non-convex one-hidden-layer tanh network.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import DimensionError, ParticipantId, RoundClock, Topology, device_id


class PartitionInfeasibleError(ValueError):
    """Not enough per-class data to give every device a non-empty shard."""


class NoDataError(ValueError):
    """A device was asked to train on an empty shard."""


@dataclass(frozen=True)
class Dataset:
    """Feature matrix plus targets.

    ``groups`` holds the integer keys used by the label-skew partitioner;
    for classification it defaults to the labels themselves, for regression
    the generator attaches target-quantile bins.
    """

    features: np.ndarray  # (n, p) float64
    targets: np.ndarray   # (n,) float64 or int64
    n_classes: int | None = None
    groups: np.ndarray | None = None

    def __post_init__(self):
        if self.features.ndim != 2:
            raise ValueError("features must be a 2-D array")
        if len(self.targets) != len(self.features):
            raise ValueError("features and targets disagree on sample count")
        if self.n_classes is not None:
            labels = np.asarray(self.targets, dtype=np.int64)
            if labels.size and (labels.min() < 0 or labels.max() >= self.n_classes):
                raise ValueError("label outside 0..n_classes-1")

    def __len__(self) -> int:
        return len(self.features)

    @property
    def input_dim(self) -> int:
        return self.features.shape[1]

    def partition_keys(self) -> np.ndarray:
        if self.groups is not None:
            return np.asarray(self.groups, dtype=np.int64)
        if self.n_classes is not None:
            return np.asarray(self.targets, dtype=np.int64)
        raise ValueError("dataset has neither class labels nor partition groups")

    def subset(self, idx: np.ndarray) -> "Dataset":
        return Dataset(
            self.features[idx],
            self.targets[idx],
            n_classes=self.n_classes,
            groups=None if self.groups is None else self.groups[idx],
        )


def make_classification_dataset(n_samples: int, n_features: int, n_classes: int,
                                seed: int, spread: float = 1.0,
                                cluster_scale: float = 3.0) -> Dataset:
    """Gaussian class clusters with seed-determined means."""
    rng = np.random.default_rng(seed)
    means = rng.normal(scale=cluster_scale, size=(n_classes, n_features))
    labels = rng.integers(0, n_classes, size=n_samples)
    x = means[labels] + rng.normal(scale=spread, size=(n_samples, n_features))
    return Dataset(x, labels.astype(np.int64), n_classes=n_classes)


def make_regression_dataset(n_samples: int, n_features: int, seed: int,
                            noise: float = 0.5, weight_scale: float = 1.0,
                            n_groups: int = 10, grouping: str = "feature_cluster",
                            cluster_scale: float = 2.0, spread: float = 1.0,
                            group_offset_scale: float = 0.0) -> Dataset:
    """Linear model plus Gaussian noise.

    Partition groups are either Gaussian clusters in feature space (each
    group owns a region of inputs, the regression analogue of one-class
    ownership), conflicting pairs of co-located clusters, or quantile bins
    of the target. A nonzero group_offset_scale adds a per-group intercept
    no single linear model can absorb; in conflict_pairs mode two groups
    share each feature-space location with opposite offsets, so the offsets
    are irreducible noise to the global fit but dominate any single group's
    local fit.
    """
    if grouping not in ("feature_cluster", "conflict_pairs", "target_quantile"):
        raise ValueError(f"unknown grouping {grouping!r}")
    rng = np.random.default_rng(seed)
    w_true = rng.normal(scale=weight_scale, size=n_features)
    b_true = rng.normal(scale=weight_scale)
    if grouping in ("feature_cluster", "conflict_pairs"):
        if grouping == "conflict_pairs":
            locations = rng.normal(scale=cluster_scale, size=((n_groups + 1) // 2, n_features))
            centers = locations[np.arange(n_groups) // 2]
            offsets = group_offset_scale * np.where(np.arange(n_groups) % 2 == 0, 1.0, -1.0)
            if n_groups % 2 == 1:
                offsets[-1] = 0.0  # unpaired leftover carries no conflict
        else:
            centers = rng.normal(scale=cluster_scale, size=(n_groups, n_features))
            # equal-magnitude alternating offsets: every group is equally far
            # from any single linear fit, so no group is a lucky draw
            offsets = group_offset_scale * np.where(np.arange(n_groups) % 2 == 0, 1.0, -1.0)
        groups = rng.integers(0, n_groups, size=n_samples)
        x = centers[groups] + rng.normal(scale=spread, size=(n_samples, n_features))
        y = x @ w_true + b_true + offsets[groups] + rng.normal(scale=noise, size=n_samples)
        return Dataset(x, y, n_classes=None, groups=groups.astype(np.int64))
    x = rng.normal(size=(n_samples, n_features))
    y = x @ w_true + b_true + rng.normal(scale=noise, size=n_samples)
    order = np.argsort(y, kind="stable")
    groups = np.empty(n_samples, dtype=np.int64)
    for g, chunk in enumerate(np.array_split(order, n_groups)):
        groups[chunk] = g
    return Dataset(x, y, n_classes=None, groups=groups)


def split_train_eval(data: Dataset, eval_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Seeded shuffle split; the eval side is held out of all training."""
    n = len(data)
    n_eval = int(round(n * eval_fraction))
    perm = np.random.default_rng(seed).permutation(n)
    return data.subset(perm[n_eval:]), data.subset(perm[:n_eval])


TASK_KINDS = ("linear_regression", "softmax_classifier", "one_hidden_mlp")


@dataclass(frozen=True)
class TaskSpec:
    """Model family plus dimensions; fixes the flat parameter layout."""

    kind: str
    input_dim: int
    output_dim: int = 1
    hidden_dim: int = 0

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise ValueError(f"unknown task kind {self.kind!r}")
        if self.kind == "one_hidden_mlp" and self.hidden_dim < 1:
            raise ValueError("one_hidden_mlp needs hidden_dim >= 1")
        if self.kind != "linear_regression" and self.output_dim < 2:
            raise ValueError("classifiers need output_dim >= 2")

    @property
    def dim(self) -> int:
        p, c, h = self.input_dim, self.output_dim, self.hidden_dim
        if self.kind == "linear_regression":
            return p + 1
        if self.kind == "softmax_classifier":
            return c * p + c
        return h * p + h + c * h + c

    def init_weights(self, seed: int, scale: float = 0.1) -> np.ndarray:
        return np.random.default_rng(seed).normal(scale=scale, size=self.dim)


def _check_dim(task: TaskSpec, w: np.ndarray) -> None:
    if w.shape != (task.dim,):
        raise DimensionError(f"expected {task.dim} parameters, got {w.shape}")


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _mlp_unpack(task: TaskSpec, w: np.ndarray):
    p, c, h = task.input_dim, task.output_dim, task.hidden_dim
    o = 0
    w1 = w[o:o + h * p].reshape(h, p); o += h * p
    b1 = w[o:o + h]; o += h
    w2 = w[o:o + c * h].reshape(c, h); o += c * h
    b2 = w[o:o + c]
    return w1, b1, w2, b2


def loss(task: TaskSpec, w: np.ndarray, data: Dataset) -> float:
    """Mean per-sample loss: squared error or cross-entropy."""
    _check_dim(task, w)
    x = data.features
    if task.kind == "linear_regression":
        r = x @ w[:-1] + w[-1] - data.targets
        return float(np.mean(r * r))
    y = np.asarray(data.targets, dtype=np.int64)
    if task.kind == "softmax_classifier":
        p = task.input_dim
        logits = x @ w[:task.output_dim * p].reshape(task.output_dim, p).T + w[task.output_dim * p:]
    else:
        w1, b1, w2, b2 = _mlp_unpack(task, w)
        logits = np.tanh(x @ w1.T + b1) @ w2.T + b2
    logits = logits - logits.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(logits).sum(axis=1))
    return float(np.mean(logsumexp - logits[np.arange(len(y)), y]))


def gradient(task: TaskSpec, w: np.ndarray, batch: Dataset) -> np.ndarray:
    """Gradient of the batch-mean loss, same layout as w."""
    _check_dim(task, w)
    x = batch.features
    n = len(batch)
    if task.kind == "linear_regression":
        r = x @ w[:-1] + w[-1] - batch.targets
        g = np.empty_like(w)
        g[:-1] = 2.0 / n * (x.T @ r)
        g[-1] = 2.0 / n * r.sum()
        return g
    y = np.asarray(batch.targets, dtype=np.int64)
    onehot = np.zeros((n, task.output_dim))
    onehot[np.arange(n), y] = 1.0
    if task.kind == "softmax_classifier":
        p = task.input_dim
        c = task.output_dim
        logits = x @ w[:c * p].reshape(c, p).T + w[c * p:]
        delta = (_softmax(logits) - onehot) / n  # (n, c)
        return np.concatenate([(delta.T @ x).reshape(-1), delta.sum(axis=0)])
    w1, b1, w2, b2 = _mlp_unpack(task, w)
    hidden = np.tanh(x @ w1.T + b1)            # (n, h)
    delta = (_softmax(hidden @ w2.T + b2) - onehot) / n
    d_hidden = (delta @ w2) * (1.0 - hidden * hidden)
    return np.concatenate([
        (d_hidden.T @ x).reshape(-1), d_hidden.sum(axis=0),
        (delta.T @ hidden).reshape(-1), delta.sum(axis=0),
    ])


def accuracy(task: TaskSpec, w: np.ndarray, data: Dataset) -> float:
    """Fraction of correct argmax predictions (classifiers only)."""
    if task.kind == "linear_regression":
        raise ValueError("accuracy is undefined for regression")
    _check_dim(task, w)
    x = data.features
    if task.kind == "softmax_classifier":
        p, c = task.input_dim, task.output_dim
        logits = x @ w[:c * p].reshape(c, p).T + w[c * p:]
    else:
        w1, b1, w2, b2 = _mlp_unpack(task, w)
        logits = np.tanh(x @ w1.T + b1) @ w2.T + b2
    return float(np.mean(logits.argmax(axis=1) == np.asarray(data.targets, dtype=np.int64)))


@dataclass(frozen=True)
class LrSchedule:
    """Step size 1/(eta0 + decay*(t*K + k)); constant 1/eta0 when decay is 0."""

    eta0: float
    decay: float
    K: int

    def __post_init__(self):
        if self.eta0 <= 0:
            raise ValueError("eta0 must be positive")
        if self.decay < 0:
            raise ValueError("decay must be nonnegative")

    def rate(self, t: int, k: int) -> float:
        return 1.0 / (self.eta0 + self.decay * (t * self.K + k))

    def mean_rate(self, T: int) -> float:
        """Arithmetic mean of the rate over every (t, k) step of a T-round run."""
        steps = [self.rate(t, k) for t in range(1, T + 1) for k in range(1, self.K + 1)]
        return float(np.mean(steps))


@dataclass(frozen=True)
class LocalTrainConfig:
    batch_size: int = 32
    epochs_per_round: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs_per_round < 0:
            raise ValueError("epochs_per_round must be >= 0")


def local_train(task: TaskSpec, w_in: np.ndarray, shard: Dataset,
                schedule: LrSchedule, clock: RoundClock,
                cfg: LocalTrainConfig) -> np.ndarray:
    """Mini-batch SGD for one submission round.

    Runs ``epochs_per_round`` passes over the shard with the step size fixed
    at schedule.rate(t, k) for the whole round. The trailing partial batch is
    kept. Deterministic in (cfg.seed, t, k).
    """
    _check_dim(task, w_in)
    if len(shard) == 0:
        raise NoDataError("cannot train on an empty shard")
    eta = schedule.rate(clock.t, clock.k)
    rng = np.random.default_rng((cfg.seed, clock.t, clock.k))
    w = w_in.copy()
    n = len(shard)
    bs = min(cfg.batch_size, n)
    for _ in range(cfg.epochs_per_round):
        if bs >= n:
            # full batch: the shuffle cannot change the mean gradient
            w = w - eta * gradient(task, w, shard)
            continue
        order = rng.permutation(n)
        for start in range(0, n, bs):
            batch = shard.subset(order[start:start + bs])
            w = w - eta * gradient(task, w, batch)
    return w


def partition_non_iid(dataset: Dataset, topology: Topology, classes_per_device: int,
                      seed: int) -> dict[ParticipantId, Dataset]:
    """Label-skewed disjoint shards: each device draws from at most
    ``classes_per_device`` group keys.

    Deterministic in the seed. Raises PartitionInfeasibleError when some
    device would end up with an empty shard.
    """
    if classes_per_device < 1:
        raise ValueError("classes_per_device must be >= 1")
    if len(dataset) == 0:
        raise ValueError("cannot partition an empty dataset")
    keys = dataset.partition_keys()
    classes = np.unique(keys)
    n_classes = len(classes)
    rng = np.random.default_rng(seed)

    devices = [device_id(i, j) for i in topology.edges() for j in topology.devices(i)]
    # device m takes classes (m*cpd + r) mod n_classes; even coverage, <= cpd distinct
    wants: dict[int, list[ParticipantId]] = {c: [] for c in range(n_classes)}
    for m, dev in enumerate(devices):
        for r in range(classes_per_device):
            wants[(m * classes_per_device + r) % n_classes].append(dev)

    pieces: dict[ParticipantId, list[np.ndarray]] = {dev: [] for dev in devices}
    for c_ix, c in enumerate(classes):
        pool = np.flatnonzero(keys == c)
        takers = wants[c_ix]
        if not takers:
            continue
        if len(pool) < len(takers):
            raise PartitionInfeasibleError(
                f"group {c} has {len(pool)} samples for {len(takers)} devices")
        pool = rng.permutation(pool)
        for dev, chunk in zip(takers, np.array_split(pool, len(takers))):
            pieces[dev].append(chunk)

    shards = {}
    for dev in devices:
        idx = np.sort(np.concatenate(pieces[dev])) if pieces[dev] else np.empty(0, dtype=np.int64)
        if len(idx) == 0:
            raise PartitionInfeasibleError(f"device {dev} received no data")
        shards[dev] = dataset.subset(idx)
    return shards
