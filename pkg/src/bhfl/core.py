"""Topology, round bookkeeping, and the weight-vector arithmetic kernels.

Weight vectors are flat 1-D float64 numpy arrays. All arithmetic here uses a
fixed left-to-right accumulation order so repeated runs are bit-identical.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np


class DimensionError(ValueError):
    """Operands disagree on vector length."""


class EmptyAggregationError(ValueError):
    """An aggregate was requested over zero contributions."""


def as_weights(values) -> np.ndarray:
    """Coerce to a 1-D float64 array (copying), rejecting non-finite entries."""
    w = np.asarray(values, dtype=np.float64).reshape(-1).copy()
    if not np.all(np.isfinite(w)):
        raise ValueError("weight vector contains NaN or Inf")
    return w


def check_same_length(x: np.ndarray, y: np.ndarray) -> None:
    if x.shape != y.shape:
        raise DimensionError(f"length mismatch: {x.shape[0]} vs {y.shape[0]}")


def axpy(a: float, x: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Return a*x + y elementwise without modifying the inputs."""
    check_same_length(x, y)
    return a * x + y


def weighted_mean(weights: Sequence[np.ndarray], coeffs: Sequence[float]) -> np.ndarray:
    """Sum coeffs[n]*weights[n] in listed order.

    Does not renormalize: callers supply exact coefficients, whose total may
    deliberately be below 1 when straggler contributions are decayed.
    """
    if len(weights) == 0:
        raise EmptyAggregationError("no vectors to aggregate")
    if len(weights) != len(coeffs):
        raise DimensionError(f"{len(weights)} vectors but {len(coeffs)} coefficients")
    for c in coeffs:
        if c < 0:
            raise ValueError(f"negative coefficient {c}")
    acc = coeffs[0] * weights[0]
    for w, c in zip(weights[1:], coeffs[1:]):
        check_same_length(w, acc)
        acc = acc + c * w
    return acc


@dataclass(frozen=True)
class Topology:
    """Edge servers and the device counts attached to each."""

    devices_per_edge: tuple[int, ...]

    def __post_init__(self):
        if len(self.devices_per_edge) < 1:
            raise ValueError("need at least one edge server")
        if any(j < 1 for j in self.devices_per_edge):
            raise ValueError("every edge needs at least one device")
        object.__setattr__(self, "devices_per_edge", tuple(int(j) for j in self.devices_per_edge))

    @property
    def n_edges(self) -> int:
        return len(self.devices_per_edge)

    @property
    def total_devices(self) -> int:
        return sum(self.devices_per_edge)

    def edges(self) -> Iterator[int]:
        return iter(range(self.n_edges))

    def devices(self, edge: int) -> Iterator[int]:
        return iter(range(self.devices_per_edge[edge]))

    @classmethod
    def uniform(cls, n_edges: int, devices_per_edge: int) -> "Topology":
        return cls(tuple([devices_per_edge] * n_edges))


@dataclass(frozen=True)
class ParticipantId:
    """Addresses either an edge server or a device attached to one."""

    kind: str  # "device" | "edge"
    edge: int
    device: int | None = None

    def __post_init__(self):
        if self.kind not in ("device", "edge"):
            raise ValueError(f"unknown participant kind {self.kind!r}")
        if self.kind == "device" and self.device is None:
            raise ValueError("device participant needs a device index")
        if self.kind == "edge" and self.device is not None:
            raise ValueError("edge participant must not carry a device index")

    def in_topology(self, topo: Topology) -> bool:
        if not 0 <= self.edge < topo.n_edges:
            return False
        if self.kind == "device":
            return 0 <= self.device < topo.devices_per_edge[self.edge]
        return True


def device_id(edge: int, device: int) -> ParticipantId:
    return ParticipantId("device", edge, device)


def edge_id(edge: int) -> ParticipantId:
    return ParticipantId("edge", edge)


@dataclass(frozen=True)
class RoundClock:
    """Position (t, k) within a run of T global rounds of K edge rounds each.

    t and k are 1-based. T_c is the number of initial warm-up rounds during
    which every participant must submit; at least two such rounds are needed
    before any missing submission can be extrapolated from history.
    """

    t: int
    k: int
    K: int
    T: int
    T_c: int

    def __post_init__(self):
        if self.T_c < 2:
            raise ValueError("T_c must be >= 2")
        if not 1 <= self.k <= self.K:
            raise ValueError(f"edge round k={self.k} outside 1..{self.K}")
        if not 1 <= self.t <= self.T:
            raise ValueError(f"global round t={self.t} outside 1..{self.T}")

    @property
    def flat_step(self) -> int:
        """Strictly increasing scalar step index t*K + k."""
        return self.t * self.K + self.k

    @property
    def in_cold_boot(self) -> bool:
        return self.t <= self.T_c


def flat_round(t: int, k: int, K: int) -> int:
    """Scalar index t*K + k used for per-device submission rounds."""
    return t * K + k
