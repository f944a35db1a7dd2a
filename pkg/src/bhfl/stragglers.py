"""Deterministic absence schedules for devices and edge servers.

A schedule maps (participant, round) to present/absent. Device plans are
keyed by the flat edge-round index t*K + k, edge plans by the global round t.
Warm-up rounds (t <= T_c) are always fully present.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import ParticipantId, Topology, device_id, edge_id, flat_round


class InfeasibleScheduleError(ValueError):
    """Requested more stragglers than the population holds."""


class UnknownParticipantError(KeyError):
    pass


@dataclass(frozen=True)
class AlwaysPresent:
    def present(self, rnd: int) -> bool:
        return True

    def to_dict(self) -> dict:
        return {"plan": "never"}


@dataclass(frozen=True)
class PermanentPlan:
    """Absent for every round >= first_absent_round, present before."""

    first_absent_round: int

    def present(self, rnd: int) -> bool:
        return rnd < self.first_absent_round

    def to_dict(self) -> dict:
        return {"plan": "permanent", "first_absent_round": self.first_absent_round}


@dataclass(frozen=True)
class MissSetPlan:
    """Absent exactly on the listed rounds."""

    missed: frozenset[int]

    def present(self, rnd: int) -> bool:
        return rnd not in self.missed

    def to_dict(self) -> dict:
        return {"plan": "temporary", "missed": sorted(self.missed)}


@dataclass(frozen=True)
class BernoulliPlan:
    """Independent per-round miss with probability p, from round >= start."""

    p: float
    seed: int
    start_round: int

    def present(self, rnd: int) -> bool:
        if rnd < self.start_round:
            return True
        draw = np.random.default_rng((self.seed, rnd)).random()
        return draw >= self.p

    def to_dict(self) -> dict:
        return {"plan": "bernoulli", "p": self.p, "seed": self.seed,
                "start_round": self.start_round}


def _plan_from_dict(d: dict):
    kind = d["plan"]
    if kind == "never":
        return AlwaysPresent()
    if kind == "permanent":
        return PermanentPlan(int(d["first_absent_round"]))
    if kind == "temporary":
        return MissSetPlan(frozenset(int(r) for r in d["missed"]))
    if kind == "bernoulli":
        return BernoulliPlan(float(d["p"]), int(d["seed"]), int(d["start_round"]))
    raise ValueError(f"unknown plan kind {kind!r}")


@dataclass
class StragglerSchedule:
    """Immutable-after-construction lookup of per-participant plans."""

    topology: Topology
    T: int
    K: int
    T_c: int
    plans: dict[ParticipantId, object] = field(default_factory=dict)

    def _plan(self, pid: ParticipantId):
        if not pid.in_topology(self.topology):
            raise UnknownParticipantError(f"{pid} not in topology")
        return self.plans.get(pid, AlwaysPresent())

    def is_present(self, pid: ParticipantId, t: int, k: int = 1) -> bool:
        """Pure lookup; devices are keyed by their (t, k) edge round.

        Schedules built by build_schedule never miss a warm-up round; plans
        loaded from config are looked up as-is so violations surface.
        """
        plan = self._plan(pid)
        rnd = flat_round(t, k, self.K) if pid.kind == "device" else t
        return plan.present(rnd)

    def device_absentees(self, edge: int, t: int, k: int) -> list[int]:
        return [j for j in self.topology.devices(edge)
                if not self.is_present(device_id(edge, j), t, k)]

    def edge_absentees(self, t: int) -> list[int]:
        return [i for i in self.topology.edges()
                if not self.is_present(edge_id(i), t)]

    def to_dict(self) -> dict:
        entries = []
        for pid in sorted(self.plans, key=lambda p: (p.kind, p.edge, p.device or -1)):
            entries.append({"kind": pid.kind, "edge": pid.edge, "device": pid.device,
                            **self.plans[pid].to_dict()})
        return {"T": self.T, "K": self.K, "T_c": self.T_c, "participants": entries}

    @classmethod
    def from_dict(cls, topology: Topology, d: dict) -> "StragglerSchedule":
        plans = {}
        for e in d.get("participants", []):
            pid = (device_id(e["edge"], e["device"]) if e["kind"] == "device"
                   else edge_id(e["edge"]))
            plans[pid] = _plan_from_dict(e)
        return cls(topology, int(d["T"]), int(d["K"]), int(d["T_c"]), plans)


def build_schedule(topology: Topology, T: int, K: int, T_c: int,
                   edge_straggler_count: int = 0, device_straggler_count: int = 0,
                   kind: str = "none", stop_round: int | None = None,
                   boundary: str = "after", identity: str = "fixed",
                   miss_probability: float = 0.5, run_length: int = 1,
                   seed: int = 0) -> StragglerSchedule:
    """Construct a deterministic schedule.

    kind:
      none       everyone present everywhere.
      permanent  a seeded subset stops submitting at stop_round; boundary
                 "after" makes the first absence stop_round+1, "at" makes it
                 stop_round itself.
      temporary  identity "rotating": the straggler role walks round-robin
                 through the population so exactly the requested number is
                 absent each post-warm-up round and everyone returns after
                 run_length consecutive misses (run_length 1 means isolated
                 single-round misses). identity "fixed": a seeded subset
                 misses rounds independently with miss_probability.

    Counts are per global round for edges and per edge round per edge server
    for devices.
    """
    if kind not in ("none", "permanent", "temporary"):
        raise ValueError(f"unknown straggler kind {kind!r}")
    if boundary not in ("after", "at"):
        raise ValueError(f"unknown boundary {boundary!r}")
    if identity not in ("fixed", "rotating"):
        raise ValueError(f"unknown identity mode {identity!r}")
    if edge_straggler_count > topology.n_edges:
        raise InfeasibleScheduleError(
            f"{edge_straggler_count} edge stragglers exceed {topology.n_edges} edges")
    for i in topology.edges():
        if device_straggler_count > topology.devices_per_edge[i]:
            raise InfeasibleScheduleError(
                f"{device_straggler_count} device stragglers exceed "
                f"{topology.devices_per_edge[i]} devices on edge {i}")

    sched = StragglerSchedule(topology, T, K, T_c)
    if kind == "none" or (edge_straggler_count == 0 and device_straggler_count == 0):
        return sched

    rng = np.random.default_rng(seed)
    first_global = T_c + 1  # warm-up rounds are untouchable

    if kind == "permanent":
        if stop_round is None:
            raise ValueError("permanent schedules need stop_round")
        first_absent_t = stop_round + 1 if boundary == "after" else stop_round
        if first_absent_t <= T_c:
            raise InfeasibleScheduleError("permanent absence would start inside warm-up")
        if edge_straggler_count:
            for i in sorted(rng.choice(topology.n_edges, edge_straggler_count, replace=False)):
                sched.plans[edge_id(int(i))] = PermanentPlan(first_absent_t)
        if device_straggler_count:
            first_flat = flat_round(first_absent_t, 1, K)
            for i in topology.edges():
                picks = rng.choice(topology.devices_per_edge[i], device_straggler_count,
                                   replace=False)
                for j in sorted(picks):
                    sched.plans[device_id(i, int(j))] = PermanentPlan(first_flat)
        return sched

    # temporary
    if run_length < 1:
        raise ValueError("run_length must be >= 1")
    if identity == "rotating":
        if edge_straggler_count:
            offset = int(rng.integers(topology.n_edges))
            missed: dict[int, set[int]] = {i: set() for i in topology.edges()}
            for step, t in enumerate(range(first_global, T + 1)):
                block = step // run_length
                for m in range(edge_straggler_count):
                    missed[(block + offset + m) % topology.n_edges].add(t)
            for i, rounds in missed.items():
                if rounds:
                    sched.plans[edge_id(i)] = MissSetPlan(frozenset(rounds))
        if device_straggler_count:
            first_flat = flat_round(first_global, 1, K)
            for i in topology.edges():
                j_i = topology.devices_per_edge[i]
                offset = int(rng.integers(j_i))
                missed = {j: set() for j in topology.devices(i)}
                for t in range(first_global, T + 1):
                    for k in range(1, K + 1):
                        r = flat_round(t, k, K)
                        block = (r - first_flat) // run_length
                        for m in range(device_straggler_count):
                            missed[(block + offset + m) % j_i].add(r)
                for j, rounds in missed.items():
                    if rounds:
                        sched.plans[device_id(i, j)] = MissSetPlan(frozenset(rounds))
        return sched

    # fixed identities with independent per-round misses
    if edge_straggler_count:
        for i in sorted(rng.choice(topology.n_edges, edge_straggler_count, replace=False)):
            sched.plans[edge_id(int(i))] = BernoulliPlan(
                miss_probability, int(rng.integers(2**31)), first_global)
    if device_straggler_count:
        first_flat = flat_round(first_global, 1, K)
        for i in topology.edges():
            picks = rng.choice(topology.devices_per_edge[i], device_straggler_count,
                               replace=False)
            for j in sorted(picks):
                sched.plans[device_id(i, int(j))] = BernoulliPlan(
                    miss_probability, int(rng.integers(2**31)), first_flat)
    return sched
