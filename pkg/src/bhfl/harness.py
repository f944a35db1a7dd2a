"""Experiment orchestration on top of the simulation loop.

Runs are fully determined by their config: the same file produces byte
identical metrics output and the same ledger tip hash every time.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .config import ExperimentConfig
from .core import device_id
from .latency import BoundParams
from .simulation import RoundMetrics, RunResult, Simulation
from .tasks import gradient, partition_non_iid

METRICS_HEADER = ("t", "loss", "accuracy", "mean_sq_grad_norm", "edge_stragglers",
                  "device_stragglers", "coefficient_mass", "cumulative_latency_s",
                  "block_height")


def build_simulation(cfg: ExperimentConfig, aggregator: str | None = None) -> Simulation:
    """Materialize datasets, shards, schedule, and chain for one run."""
    T, K, T_c = cfg.rounds
    topo = cfg.topology()
    task = cfg.task()
    train, eval_data = cfg.datasets()
    shards = partition_non_iid(train, topo, int(cfg.raw["data"]["classes_per_device"]),
                               cfg.seed + 2)
    return Simulation(
        topology=topo, task=task, shards=shards, eval_data=eval_data,
        schedule=cfg.straggler_schedule(), lr=cfg.lr_schedule(),
        decay=cfg.decay_params(), train_cfg=cfg.local_train_config(),
        T=T, K=K, T_c=T_c, aggregator=aggregator or cfg.aggregator,
        seed=cfg.seed, profile=cfg.latency_profile(), chain=cfg.consortium_chain(),
        renormalize=bool(cfg.raw["renormalize"]),
        delta_window=cfg.raw["delta_window"], history_depth=cfg.raw["history_depth"])


def run_experiment(cfg: ExperimentConfig) -> RunResult:
    """Cold boot plus estimation phase; writes any configured output files."""
    sim = build_simulation(cfg)
    result = sim.run()
    out = cfg.output_paths()
    if out.get("metrics"):
        emit_metrics(result.records, out["metrics"])
    if out.get("summary"):
        write_summary(cfg, result, out["summary"])
    if out.get("ledger"):
        with open(out["ledger"], "w", encoding="utf-8") as fh:
            result.chain.ledger.export_records(fh)
    return result


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def emit_metrics(records: list[RoundMetrics], path) -> None:
    """Comma-separated metrics, one row per global round."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(METRICS_HEADER) + "\n")
        for r in records:
            row = (r.t, r.loss, r.accuracy, r.mean_sq_grad_norm, r.edge_stragglers,
                   r.device_stragglers, r.coefficient_mass, r.cumulative_latency_s,
                   r.block_height)
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def parse_metrics(path) -> list[RoundMetrics]:
    """Read a metrics file back into records (round-trips emit_metrics)."""
    records = []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
        if tuple(header) != METRICS_HEADER:
            raise ValueError(f"unexpected metrics header {header}")
        for line in fh:
            f = line.rstrip("\n").split(",")
            records.append(RoundMetrics(
                int(f[0]), float(f[1]), None if f[2] == "" else float(f[2]),
                float(f[3]), int(f[4]), int(f[5]), float(f[6]), float(f[7]), int(f[8])))
    return records


def write_summary(cfg: ExperimentConfig, result: RunResult, path) -> None:
    last = result.records[-1]
    summary = {
        "aggregator": cfg.aggregator,
        "seed": cfg.seed,
        "rounds": {"T": cfg.rounds[0], "K": cfg.rounds[1], "T_c": cfg.rounds[2]},
        "final_loss": last.loss,
        "final_accuracy": last.accuracy,
        "total_simulated_latency_s": last.cumulative_latency_s,
        "ledger_tip": result.chain.ledger.tip_hash.hex(),
        "blocks": len(result.chain.ledger),
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")


@dataclass
class ComparisonTable:
    """Aligned per-round losses for several aggregators on one schedule."""

    rounds: list[int]
    losses: dict[str, list[float]]

    def final_loss(self, aggregator: str) -> float:
        return self.losses[aggregator][-1]

    def write_csv(self, path) -> None:
        names = sorted(self.losses)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(",".join(["t"] + [f"loss_{n}" for n in names]) + "\n")
            for ix, t in enumerate(self.rounds):
                row = [str(t)] + [repr(self.losses[n][ix]) for n in names]
                fh.write(",".join(row) + "\n")


def compare_aggregators(cfg: ExperimentConfig, aggregators) -> ComparisonTable:
    """Run each aggregator with identical data, seeds, and schedule."""
    results = {}
    for name in aggregators:
        results[name] = build_simulation(cfg, aggregator=name).run()
    rounds = [r.t for r in next(iter(results.values())).records]
    losses = {name: [r.loss for r in res.records] for name, res in results.items()}
    return ComparisonTable(rounds, losses)


def sweep_compare(base: dict, points: list[dict], aggregators) -> dict[str, ComparisonTable]:
    """One comparison table per sweep point.

    Each point is a partial config overlaid on ``base`` (one nesting level,
    e.g. {"rounds": {"K": 4}}); the returned dict is keyed by a compact
    label built from the overrides.
    """
    from .config import validate

    tables = {}
    for point in points:
        merged = json.loads(json.dumps(base))
        parts = []
        for key, value in point.items():
            if isinstance(value, dict):
                merged.setdefault(key, {}).update(value)
                parts.extend(f"{k}={v}" for k, v in value.items())
            else:
                merged[key] = value
                parts.append(f"{key}={value}")
        label = ",".join(parts) or "base"
        tables[label] = compare_aggregators(validate(merged), aggregators)
    return tables


def estimate_bound_params(cfg: ExperimentConfig, calibration_rounds: int = 10,
                          pairs: int = 50) -> BoundParams:
    """Rough empirical estimates for the bound constants.

    Runs a short straggler-free calibration pass, then estimates the gradient
    smoothness constant from sampled weight pairs, the initial-to-best loss
    gap from the observed trajectory, and the variance-style constants from
    per-participant deviations. These are estimates, not certified bounds.
    """
    T, K, T_c = cfg.rounds
    calib = max(calibration_rounds, T_c + 1)
    topo = cfg.topology()
    task = cfg.task()
    train, eval_data = cfg.datasets()
    shards = partition_non_iid(train, topo, int(cfg.raw["data"]["classes_per_device"]),
                               cfg.seed + 2)
    from .stragglers import build_schedule
    sim = Simulation(
        topology=topo, task=task, shards=shards, eval_data=eval_data,
        schedule=build_schedule(topo, calib, K, T_c),
        lr=cfg.lr_schedule(), decay=cfg.decay_params(),
        train_cfg=cfg.local_train_config(), T=calib, K=K, T_c=T_c,
        aggregator="hieavg", seed=cfg.seed, profile=cfg.latency_profile())
    sim.run()

    rng = np.random.default_rng(cfg.seed + 3)
    w0 = task.init_weights(cfg.seed)

    # smoothness: max squared-gradient-difference ratio over sampled pairs
    lipschitz = 0.0
    scale = float(np.linalg.norm(sim.w_global)) + 1.0
    for _ in range(pairs):
        w1 = sim.w_global + rng.normal(scale=0.1 * scale, size=task.dim)
        w2 = sim.w_global + rng.normal(scale=0.1 * scale, size=task.dim)
        g1 = _hier_gradient(sim, w1)
        g2 = _hier_gradient(sim, w2)
        dw = float(np.sum((w1 - w2) ** 2))
        if dw > 0:
            lipschitz = max(lipschitz, float(np.sum((g1 - g2) ** 2)) / dw)

    losses = [r.loss for r in sim.records]
    initial_loss = sim._objective_and_grad(w0)[0]
    gap0 = max(initial_loss - min(losses), 0.0)

    dev_diff_norms, dev_diff_devs = _difference_stats(sim.device_histories.values())
    edge_diff_norms, edge_diff_devs = _difference_stats(sim.edge_histories.values())

    s = cfg.raw["stragglers"]
    return BoundParams(
        lipschitz=max(lipschitz, 1e-9),
        gap0=gap0,
        mean_lr=cfg.lr_schedule().mean_rate(T),
        gamma0=float(cfg.raw["decay"]["gamma0"]),
        grad_var_device=_grad_spread(sim, tier="device"),
        grad_var_edge=_grad_spread(sim, tier="edge"),
        est_var_edge=0.0,
        est_var_global=0.0,
        diff_mean_device=dev_diff_norms,
        diff_var_device=dev_diff_devs,
        diff_mean_edge=edge_diff_norms,
        diff_var_edge=edge_diff_devs,
        mean_device_stragglers=float(s["device_count_per_edge"]),
        mean_edge_stragglers=float(s["edge_count"]),
        devices_per_edge=topo.total_devices / topo.n_edges,
        straggler_devices=topo.total_devices / topo.n_edges,
        n_edges=topo.n_edges)


def _hier_gradient(sim: Simulation, w: np.ndarray) -> np.ndarray:
    topo = sim.topology
    acc = np.zeros_like(w)
    for i in topo.edges():
        edge_grad = np.zeros_like(w)
        for j in topo.devices(i):
            edge_grad += gradient(sim.task, w, sim.shards[device_id(i, j)])
        acc += edge_grad / topo.devices_per_edge[i]
    return acc / topo.n_edges


def _grad_spread(sim: Simulation, tier: str) -> float:
    """Max deviation of member gradients around their tier mean at the final
    weights."""
    w = sim.w_global
    topo = sim.topology
    worst = 0.0
    if tier == "device":
        for i in topo.edges():
            grads = [gradient(sim.task, w, sim.shards[device_id(i, j)])
                     for j in topo.devices(i)]
            mean = sum(grads) / len(grads)
            worst = max(worst, max(float(np.sum((g - mean) ** 2)) for g in grads))
    else:
        grads = []
        for i in topo.edges():
            edge_grad = np.zeros_like(w)
            for j in topo.devices(i):
                edge_grad += gradient(sim.task, w, sim.shards[device_id(i, j)])
            grads.append(edge_grad / topo.devices_per_edge[i])
        mean = sum(grads) / len(grads)
        worst = max(float(np.sum((g - mean) ** 2)) for g in grads)
    return float(np.sqrt(worst))


def _difference_stats(histories) -> tuple[float, float]:
    """Mean successive-difference norm and its deviation across histories."""
    norms = []
    devs = []
    for hist in histories:
        if len(hist) < 2:
            continue
        mean_diff = hist.mean_difference()
        norms.append(float(np.linalg.norm(mean_diff)))
        prev = None
        sq = []
        for _, w, _ in hist.entries:
            if prev is not None:
                sq.append(float(np.sum(((w - prev) - mean_diff) ** 2)))
            prev = w
        if sq:
            devs.append(max(sq))
    if not norms:
        return 0.0, 0.0
    return float(np.mean(norms)), float(np.sqrt(max(devs))) if devs else 0.0
