"""Channel latency model, convergence-bound evaluators, and the edge-round
count optimizer.

The optimizer scans integer K, keeping only values whose global convergence
bound meets the requirement and whose per-round waiting period covers the
consensus latency, then returns the feasible K with the smallest total
latency (the smallest feasible K, since total latency grows linearly in K).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class BoundInapplicableError(ValueError):
    """A bound's applicability predicate failed; carries which ones."""

    def __init__(self, failed: list[str]):
        super().__init__("bound inapplicable: " + "; ".join(failed))
        self.failed = failed


class InfeasibleKError(RuntimeError):
    """No K in range satisfies both constraints; names the tighter one."""

    def __init__(self, constraint: str, detail: str):
        super().__init__(f"no feasible K: {constraint} constraint cannot be met ({detail})")
        self.constraint = constraint


@dataclass(frozen=True)
class ChannelParams:
    """Physical uplink and compute characteristics of one device class."""

    bandwidth_hz: float
    transmit_power_w: float
    channel_gain: float
    noise_power_w: float
    model_bits: float
    cpu_cycles_per_round: float
    cpu_freq_hz: float

    def __post_init__(self):
        for name in ("bandwidth_hz", "transmit_power_w", "channel_gain",
                     "noise_power_w", "model_bits", "cpu_cycles_per_round", "cpu_freq_hz"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be strictly positive")


def transmission_rate(c: ChannelParams) -> float:
    """Shannon rate B*log2(1 + u*pi/eps^2) in bits/s."""
    return c.bandwidth_hz * math.log2(1.0 + c.transmit_power_w * c.channel_gain / c.noise_power_w)


def comm_latency(model_bits: float, rate_bits_per_s: float) -> float:
    if rate_bits_per_s <= 0:
        raise ZeroDivisionError("transmission rate must be positive")
    return model_bits / rate_bits_per_s


def compute_latency(cpu_cycles: float, cpu_freq_hz: float) -> float:
    if cpu_freq_hz <= 0:
        raise ZeroDivisionError("cpu frequency must be positive")
    return cpu_cycles / cpu_freq_hz


@dataclass(frozen=True)
class LatencyProfile:
    """Expected per-round latencies, optionally with per-participant values.

    Expectations are arithmetic means over whatever per-participant entries
    are given; the scalars act as the single shared value otherwise.
    """

    device_comm_s: float = 0.51
    device_comp_s: float = 1.67
    edge_comm_s: float = 0.05
    per_device_comm: tuple[float, ...] | None = None
    per_device_comp: tuple[float, ...] | None = None
    per_edge_comm: tuple[float, ...] | None = None

    def __post_init__(self):
        for name in ("device_comm_s", "device_comp_s", "edge_comm_s"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")

    @property
    def mean_device_comm(self) -> float:
        return float(np.mean(self.per_device_comm)) if self.per_device_comm else self.device_comm_s

    @property
    def mean_device_comp(self) -> float:
        return float(np.mean(self.per_device_comp)) if self.per_device_comp else self.device_comp_s

    @property
    def mean_edge_comm(self) -> float:
        return float(np.mean(self.per_edge_comm)) if self.per_edge_comm else self.edge_comm_s

    @property
    def max_device_round_s(self) -> float:
        """Worst single-device comm+compute time in one edge round."""
        if self.per_device_comm or self.per_device_comp:
            comm = self.per_device_comm or (self.device_comm_s,)
            comp = self.per_device_comp or (self.device_comp_s,)
            if len(comm) == len(comp):
                return float(max(a + b for a, b in zip(comm, comp)))
            return float(max(comm) + max(comp))
        return self.device_comm_s + self.device_comp_s

    @classmethod
    def from_channel(cls, c: ChannelParams, edge_comm_s: float = 0.05) -> "LatencyProfile":
        rate = transmission_rate(c)
        return cls(comm_latency(c.model_bits, rate),
                   compute_latency(c.cpu_cycles_per_round, c.cpu_freq_hz),
                   edge_comm_s)


def total_latency(T: int, N: int, J: int, K: int, profile: LatencyProfile) -> float:
    """T*N*J*K*(2*E[comm] + E[comp]) + 2*T*N*E[edge comm], in seconds."""
    for name, v in (("T", T), ("N", N), ("J", J), ("K", K)):
        if v < 1:
            raise ValueError(f"{name} must be a positive integer")
    device_term = T * N * J * K * (2.0 * profile.mean_device_comm + profile.mean_device_comp)
    edge_term = 2.0 * T * N * profile.mean_edge_comm
    return device_term + edge_term


def waiting_period(K: int, max_device_round_s: float) -> float:
    """Per-global-round submission window: K times the worst observed
    single-round device comm+compute time."""
    if K < 1:
        raise ValueError("K must be >= 1")
    return K * max_device_round_s


def edge_round_waiting_period(max_device_round_s: float) -> float:
    """Waiting window for a single edge round (the per-edge-round analogue of
    the global waiting period)."""
    return max_device_round_s


@dataclass(frozen=True)
class BoundParams:
    """Constants feeding the convergence-bound evaluators.

    None of these fall out of the artifact automatically; they are supplied
    in config or estimated from a calibration run (see harness helpers).
    """

    lipschitz: float                 # L
    gap0: float                      # initial loss minus optimal loss
    mean_lr: float                   # E[eta] over the horizon
    gamma0: float = 0.9
    grad_var_device: float = 0.0     # device-level gradient deviation bound
    grad_var_edge: float = 0.0       # edge-level gradient deviation bound
    est_var_edge: float = 0.0        # edge-tier estimated-weight deviation
    est_var_global: float = 0.0      # global-tier estimated-weight deviation
    diff_mean_device: float = 0.0    # mean successive-difference magnitude, devices
    diff_var_device: float = 0.0     # successive-difference variance bound, devices
    diff_mean_edge: float = 0.0      # mean successive-difference magnitude, edges
    diff_var_edge: float = 0.0       # successive-difference variance bound, edges
    mean_device_stragglers: float = 0.0   # E[S_i] per edge round
    mean_edge_stragglers: float = 0.0     # E[S] per global round
    devices_per_edge: float = 1.0         # E[J_i]
    straggler_devices: float = 1.0        # E[J_s]: devices behind absent edges
    n_edges: int = 1

    def __post_init__(self):
        if self.lipschitz <= 0:
            raise ValueError("lipschitz must be positive")
        for name in ("gap0", "mean_lr", "grad_var_device", "grad_var_edge",
                     "est_var_edge", "est_var_global", "diff_mean_device",
                     "diff_var_device", "diff_mean_edge", "diff_var_edge",
                     "mean_device_stragglers", "mean_edge_stragglers"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.devices_per_edge <= 0 or self.straggler_devices <= 0 or self.n_edges < 1:
            raise ValueError("population fields must be positive")


@dataclass(frozen=True)
class BoundResult:
    value: float
    decaying_term: float   # shrinks as rounds grow
    residual_term: float   # straggler-driven floor
    conditions: dict = field(default_factory=dict)


def edge_convergence_bound(K: int, bp: BoundParams) -> BoundResult:
    """Upper bound on the K-averaged expected squared gradient norm of one
    edge server's loss.

    Applicability: E[eta] > 1/(L+2), and the decayed straggler drift term
    must dominate the estimated-weight deviation.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    eta, L = bp.mean_lr, bp.lipschitz
    straggler_term = (bp.gamma0 * (bp.mean_device_stragglers / bp.devices_per_edge)
                      * (bp.diff_mean_device + bp.diff_var_device) - bp.est_var_edge)
    conditions = {
        "lr_condition": eta > 1.0 / (L + 2.0),
        "nonnegative_straggler_term": straggler_term >= 0.0,
    }
    failed = [name for name, ok in conditions.items() if not ok]
    if failed:
        raise BoundInapplicableError(failed)
    denom = L * eta + 2.0 * eta - 1.0
    first = 2.0 * (bp.gap0 + 2.0 * eta * bp.grad_var_device ** 2 / denom) / (denom * math.sqrt(K))
    second = (2.0 + L) * straggler_term / denom
    return BoundResult(first + second, first, second, conditions)


def global_convergence_bound(K: int, T: int, bp: BoundParams) -> BoundResult:
    """Upper bound on the T-averaged expected squared gradient norm of the
    global loss.

    Applicability: the learning-rate condition E[eta] >= 1/(L + 2*K*rho) with
    rho the absent-edge device share, the nonnegative straggler term, and a
    strictly positive denominator (the stated learning-rate condition alone
    does not force the sqrt(K) denominator positive, so it is checked
    explicitly and reported alongside the others).
    """
    if K < 1 or T < 1:
        raise ValueError("K and T must be >= 1")
    eta, L = bp.mean_lr, bp.lipschitz
    rho = bp.straggler_devices / (bp.n_edges * bp.devices_per_edge)
    straggler_term = (rho + bp.gamma0 * (bp.mean_edge_stragglers / bp.n_edges)
                      * (bp.diff_mean_edge + bp.diff_var_edge ** 2) - bp.est_var_global)
    denom = 2.0 * math.sqrt(K) * eta * rho + L * eta - 1.0
    conditions = {
        "lr_condition": eta >= 1.0 / (L + 2.0 * K * rho),
        "nonnegative_straggler_term": straggler_term >= 0.0,
        "positive_denominator": denom > 0.0,
    }
    failed = [name for name, ok in conditions.items() if not ok]
    if failed:
        raise BoundInapplicableError(failed)
    first = (2.0 * (bp.gap0 + math.sqrt(K) * eta * rho * bp.grad_var_edge ** 2)
             / (math.sqrt(T) * denom))
    second = (2.0 + L) * straggler_term / denom
    return BoundResult(first + second, first, second, conditions)


@dataclass(frozen=True)
class KCandidate:
    K: int
    bound: float | None          # None when the bound was inapplicable
    bound_ok: bool
    consensus_ok: bool
    waiting_period_s: float
    total_latency_s: float
    inapplicable: list = field(default_factory=list)

    @property
    def feasible(self) -> bool:
        return self.bound_ok and self.consensus_ok


@dataclass(frozen=True)
class KOptResult:
    k_star: int
    total_latency_s: float
    bound: float | None
    table: tuple[KCandidate, ...]
    binding: tuple[str, ...]     # constraints that fail at K*-1

    def to_dict(self) -> dict:
        return {
            "k_star": self.k_star,
            "total_latency_s": self.total_latency_s,
            "bound": self.bound,
            "binding": list(self.binding),
            "table": [{
                "K": c.K, "bound": c.bound, "bound_ok": c.bound_ok,
                "consensus_ok": c.consensus_ok, "waiting_period_s": c.waiting_period_s,
                "total_latency_s": c.total_latency_s, "inapplicable": list(c.inapplicable),
            } for c in self.table],
        }


def optimize_edge_rounds(T: int, n_edges: int, devices_per_edge: int,
                         profile: LatencyProfile, bp: BoundParams,
                         bound_requirement: float, consensus_latency_s: float,
                         k_max: int) -> KOptResult:
    """Scan K = 1..k_max and pick the feasible K of least total latency.

    Feasibility: global convergence bound <= bound_requirement (trivially
    satisfied when the requirement is infinite) and consensus latency within
    the K-scaled waiting period. Raises InfeasibleKError naming the tighter
    constraint when nothing qualifies.
    """
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    if bound_requirement <= 0:
        raise ValueError("bound_requirement must be positive")
    table = []
    for K in range(1, k_max + 1):
        inapplicable: list[str] = []
        bound_val: float | None = None
        if math.isinf(bound_requirement):
            bound_ok = True
            try:
                bound_val = global_convergence_bound(K, T, bp).value
            except BoundInapplicableError as err:
                inapplicable = err.failed
        else:
            try:
                bound_val = global_convergence_bound(K, T, bp).value
                bound_ok = bound_val <= bound_requirement
            except BoundInapplicableError as err:
                inapplicable = err.failed
                bound_ok = False
        lg = waiting_period(K, profile.max_device_round_s)
        table.append(KCandidate(
            K, bound_val, bound_ok, consensus_latency_s <= lg, lg,
            total_latency(T, n_edges, devices_per_edge, K, profile), inapplicable))

    feasible = [c for c in table if c.feasible]
    if not feasible:
        bound_possible = any(c.bound_ok for c in table)
        consensus_possible = any(c.consensus_ok for c in table)
        if not bound_possible and not consensus_possible:
            raise InfeasibleKError("convergence and consensus",
                                   f"no K in 1..{k_max} satisfies either constraint")
        if not bound_possible:
            raise InfeasibleKError("convergence",
                                   f"bound never reaches {bound_requirement} for K <= {k_max}")
        if not consensus_possible:
            raise InfeasibleKError(
                "consensus",
                f"waiting period never covers {consensus_latency_s}s for K <= {k_max}")
        first_bound = min(c.K for c in table if c.bound_ok)
        first_cons = min(c.K for c in table if c.consensus_ok)
        tighter = "convergence" if first_bound > first_cons else "consensus"
        raise InfeasibleKError(tighter, "constraints are individually but not jointly "
                                        f"satisfiable within K <= {k_max}")

    best = min(feasible, key=lambda c: (c.total_latency_s, c.K))
    binding = []
    prev = next((c for c in table if c.K == best.K - 1), None)
    if prev is not None:
        if not prev.bound_ok:
            binding.append("convergence")
        if not prev.consensus_ok:
            binding.append("consensus")
    return KOptResult(best.K, best.total_latency_s, best.bound, tuple(table), tuple(binding))
