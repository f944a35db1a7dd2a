"""The two-tier round loop: local SGD, edge aggregation, consensus, global
aggregation, and block commits.

Every global round runs K edge rounds on each edge server's subtree, elects
a leader among the edges that are present, aggregates the edge submissions,
and commits the result to the replicated ledger. Absent edges keep their
local loops running against the last global model they received and sync the
ledger when they return.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .chain import ConsortiumChain, ElectionFailedError
from .core import RoundClock, Topology, device_id, edge_id, flat_round
from .hieavg import (AGGREGATOR_NAMES, ESTIMATED, EXCLUDED, AggregationReport,
                     DecayParams, SubmissionHistory, d_fedavg_edge, d_fedavg_global,
                     hieavg_edge, hieavg_global, t_fedavg_edge, t_fedavg_global)
from .latency import LatencyProfile, waiting_period
from .stragglers import StragglerSchedule
from .tasks import (Dataset, LocalTrainConfig, LrSchedule, TaskSpec, accuracy, gradient,
                    local_train, loss)


class ScheduleViolationError(RuntimeError):
    """A participant was absent during the warm-up rounds."""


def participant_seed(seed: int, edge: int, device: int) -> int:
    """Stable per-device seed derived from the run seed."""
    return int(np.random.SeedSequence((seed, edge, device)).generate_state(1)[0])


@dataclass(frozen=True)
class RoundEvent:
    t: int
    name: str          # "election" | "edge_submission" | "block_append"
    participant: int | None
    sim_time: float


@dataclass
class RoundMetrics:
    t: int
    loss: float
    accuracy: float | None
    mean_sq_grad_norm: float
    edge_stragglers: int
    device_stragglers: int
    coefficient_mass: float
    cumulative_latency_s: float
    block_height: int


@dataclass
class RunResult:
    final_weights: np.ndarray
    records: list[RoundMetrics]
    chain: ConsortiumChain
    events: list[RoundEvent]
    edge_reports: dict
    global_reports: dict


class Simulation:
    """Owns all mutable run state; one coordinator drives it round by round."""

    def __init__(self, *, topology: Topology, task: TaskSpec,
                 shards: dict, eval_data: Dataset | None,
                 schedule: StragglerSchedule, lr: LrSchedule, decay: DecayParams,
                 train_cfg: LocalTrainConfig, T: int, K: int, T_c: int,
                 aggregator: str = "hieavg", initial_weights: np.ndarray | None = None,
                 seed: int = 0, profile: LatencyProfile | None = None,
                 chain: ConsortiumChain | None = None, renormalize: bool = False,
                 delta_window: int | None = None, history_depth: int | None = None):
        if aggregator not in AGGREGATOR_NAMES:
            raise ValueError(f"unknown aggregator {aggregator!r}")
        if T_c < 2:
            raise ValueError("T_c must be >= 2")
        if T <= T_c:
            raise ValueError("T must exceed T_c")
        self.topology = topology
        self.task = task
        self.shards = shards
        self.eval_data = eval_data
        self.schedule = schedule
        self.lr = lr
        self.decay = decay
        self.train_cfg = train_cfg
        self.T, self.K, self.T_c = T, K, T_c
        self.aggregator = aggregator
        self.seed = seed
        self.profile = profile or LatencyProfile()
        self.chain = chain or ConsortiumChain(topology.n_edges, seed=seed)
        self.renormalize = renormalize

        self.w_global = (initial_weights.copy() if initial_weights is not None
                         else task.init_weights(seed))
        self.edge_models = [self.w_global.copy() for _ in topology.edges()]
        self.device_histories = {
            (i, j): SubmissionHistory(window=delta_window, max_entries=history_depth)
            for i in topology.edges() for j in topology.devices(i)}
        self.edge_histories = {
            i: SubmissionHistory(window=delta_window, max_entries=history_depth)
            for i in topology.edges()}
        self._device_seeds = {
            (i, j): participant_seed(seed, i, j)
            for i in topology.edges() for j in topology.devices(i)}

        self.records: list[RoundMetrics] = []
        self.events: list[RoundEvent] = []
        self.edge_reports: dict = {}
        self.global_reports: dict = {}
        self.sim_time = 0.0
        self.cumulative_latency = 0.0
        self._sq_grad_sum = 0.0
        self.next_round = 1

    # -- presence ---------------------------------------------------------

    def _device_present(self, i: int, j: int, t: int, k: int) -> bool:
        if self.aggregator == "oracle_no_stragglers":
            return True
        return self.schedule.is_present(device_id(i, j), t, k)

    def _edge_present(self, i: int, t: int) -> bool:
        if self.aggregator == "oracle_no_stragglers":
            return True
        return self.schedule.is_present(edge_id(i), t)

    # -- tier aggregation dispatch ---------------------------------------

    def _aggregate_edge(self, timely, straggler_ids, i, t, k):
        rnd = flat_round(t, k, self.K)
        j_total = self.topology.devices_per_edge[i]
        hists = {j: self.device_histories[(i, j)] for j in straggler_ids}
        if self.aggregator in ("hieavg", "oracle_no_stragglers"):
            report = hieavg_edge(timely, hists, self.decay, j_total, rnd,
                                 renormalize=self.renormalize)
        elif self.aggregator == "t_fedavg":
            report = t_fedavg_edge(timely, straggler_ids, j_total, rnd)
        else:
            report = d_fedavg_edge(timely, hists, j_total, rnd)
        self.edge_reports[(t, k, i)] = report
        return report.aggregate

    def _aggregate_global(self, timely, straggler_ids, t):
        jpe = self.topology.devices_per_edge
        hists = {i: (self.edge_histories[i], jpe[i]) for i in straggler_ids}
        if self.aggregator in ("hieavg", "oracle_no_stragglers"):
            report = hieavg_global(timely, hists, self.decay, self.topology.total_devices,
                                   t, renormalize=self.renormalize)
        elif self.aggregator == "t_fedavg":
            report = t_fedavg_global(timely, straggler_ids, t)
        else:
            report = d_fedavg_global(timely, hists, self.topology.total_devices, t)
        self.global_reports[t] = report
        return report

    # -- the round --------------------------------------------------------

    def run_round(self, t: int) -> None:
        topo = self.topology
        present_edges = [i for i in topo.edges() if self._edge_present(i, t)]
        if t <= self.T_c and len(present_edges) != topo.n_edges:
            missing = sorted(set(topo.edges()) - set(present_edges))
            raise ScheduleViolationError(f"edges {missing} absent in warm-up round {t}")

        # returning/present edges sync the ledger and adopt the tip model
        for i in present_edges:
            self.chain.sync_replica(i)
            self.edge_models[i] = self.w_global.copy()

        round_start = self.sim_time
        try:
            election = self.chain.elect(present_edges)
        except ElectionFailedError as err:
            raise ElectionFailedError(f"round {t}: {err}") from err
        election_done = round_start + election.latency
        self.events.append(RoundEvent(t, "election", election.leader, election_done))

        # K edge rounds on every subtree, absent edges included
        for i in topo.edges():
            base = self.edge_models[i]
            for k in range(1, self.K + 1):
                clock = RoundClock(t, k, self.K, self.T, self.T_c)
                timely, absent = {}, []
                for j in topo.devices(i):
                    if self._device_present(i, j, t, k):
                        cfg = replace(self.train_cfg, seed=self._device_seeds[(i, j)])
                        w_dev = local_train(self.task, base, self.shards[device_id(i, j)],
                                            self.lr, clock, cfg)
                        timely[j] = w_dev
                        self.device_histories[(i, j)].record(clock.flat_step, w_dev)
                    else:
                        if t <= self.T_c:
                            raise ScheduleViolationError(
                                f"device ({i},{j}) absent in warm-up round ({t},{k})")
                        absent.append(j)
                base = self._aggregate_edge(timely, absent, i, t, k)
            self.edge_models[i] = base

        # submissions and global aggregation
        training_done = round_start + waiting_period(self.K, self.profile.max_device_round_s)
        submit_base = max(training_done, election_done)
        timely_edges, absent_edges = {}, []
        submitted = 0
        for i in topo.edges():
            if i in present_edges:
                submitted += 1
                timely_edges[i] = (self.edge_models[i], topo.devices_per_edge[i])
                self.edge_histories[i].record(t, self.edge_models[i])
                self.events.append(RoundEvent(
                    t, "edge_submission", i,
                    submit_base + submitted * self.profile.mean_edge_comm))
            else:
                absent_edges.append(i)
        report = self._aggregate_global(timely_edges, absent_edges, t)
        self.w_global = report.aggregate

        payload = {
            "round": t,
            "aggregator": self.aggregator,
            "edges": [{"edge": i, "weights": w, "coef": c,
                       "status": report.statuses[i]}
                      for i, w, c in report.contributions],
            "statuses": {str(i): s for i, s in report.statuses.items()},
            "global_model": self.w_global,
            "coefficient_mass": report.coefficient_mass,
        }
        last_submission = (submit_base + len(present_edges) * self.profile.mean_edge_comm
                           if present_edges else submit_base)
        block = self.chain.append_block(election.leader, payload, t, present_edges)
        append_time = last_submission + self.profile.mean_edge_comm
        self.events.append(RoundEvent(t, "block_append", election.leader, append_time))
        self.sim_time = append_time

        # present edges received the block; they adopt the new global model
        for i in present_edges:
            self.edge_models[i] = self.w_global.copy()

        self._record_metrics(t, report, block.height)
        self.next_round = t + 1

    # -- metrics ----------------------------------------------------------

    def _objective_and_grad(self, w: np.ndarray) -> tuple[float, float]:
        """Hierarchical loss (mean over edges of mean over shards) and the
        squared norm of its gradient."""
        topo = self.topology
        total_loss = 0.0
        grad_acc = np.zeros_like(w)
        for i in topo.edges():
            edge_loss = 0.0
            edge_grad = np.zeros_like(w)
            for j in topo.devices(i):
                shard = self.shards[device_id(i, j)]
                edge_loss += loss(self.task, w, shard)
                edge_grad += gradient(self.task, w, shard)
            j_i = topo.devices_per_edge[i]
            total_loss += edge_loss / j_i
            grad_acc += edge_grad / j_i
        total_loss /= topo.n_edges
        grad_acc /= topo.n_edges
        return total_loss, float(grad_acc @ grad_acc)

    def _record_metrics(self, t: int, report: AggregationReport, height: int) -> None:
        obj, sq_norm = self._objective_and_grad(self.w_global)
        self._sq_grad_sum += sq_norm
        acc = None
        if self.task.kind != "linear_regression" and self.eval_data is not None:
            acc = accuracy(self.task, self.w_global, self.eval_data)
        device_stragglers = sum(
            r.count(ESTIMATED) + r.count(EXCLUDED)
            for (tt, _, _), r in self.edge_reports.items() if tt == t)
        edge_stragglers = report.count(ESTIMATED) + report.count(EXCLUDED)
        jpe = self.topology.devices_per_edge
        per_round = (sum(jpe) * self.K
                     * (2.0 * self.profile.mean_device_comm + self.profile.mean_device_comp)
                     + 2.0 * self.topology.n_edges * self.profile.mean_edge_comm)
        self.cumulative_latency += per_round
        self.records.append(RoundMetrics(
            t, obj, acc, self._sq_grad_sum / t, edge_stragglers, device_stragglers,
            report.coefficient_mass, self.cumulative_latency, height))

    # -- phases -----------------------------------------------------------

    def cold_boot(self) -> np.ndarray:
        """Run the warm-up rounds 1..T_c with full presence enforced."""
        if self.next_round != 1:
            raise RuntimeError("cold boot must run first")
        for t in range(1, self.T_c + 1):
            self.run_round(t)
        return self.w_global

    def run_estimation_phase(self) -> np.ndarray:
        """Run rounds T_c+1..T, estimating or excluding stragglers as the
        configured aggregator dictates."""
        if self.next_round != self.T_c + 1:
            raise RuntimeError("run cold_boot before the estimation phase")
        for t in range(self.T_c + 1, self.T + 1):
            self.run_round(t)
        return self.w_global

    def run(self) -> RunResult:
        self.cold_boot()
        self.run_estimation_phase()
        return RunResult(self.w_global.copy(), self.records, self.chain, self.events,
                         self.edge_reports, self.global_reports)


def cold_boot(sim: Simulation) -> np.ndarray:
    return sim.cold_boot()


def run_estimation_phase(sim: Simulation) -> np.ndarray:
    return sim.run_estimation_phase()
