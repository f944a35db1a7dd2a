"""Experiment configuration: JSON with strict key checking and defaults.

The file is a nested JSON object; unknown keys are rejected with their full
path so typos cannot silently fall back to defaults. A minimal ``{}`` config
yields the standard five-edges-of-five-devices setup with K=2 and decay
parameters gamma0=lambda=0.9.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass

from .chain import ConsortiumChain
from .core import Topology
from .hieavg import AGGREGATOR_NAMES, DecayParams
from .latency import BoundParams, ChannelParams, LatencyProfile
from .stragglers import StragglerSchedule, build_schedule
from .tasks import (Dataset, LocalTrainConfig, LrSchedule, TaskSpec,
                    make_classification_dataset, make_regression_dataset, split_train_eval)


class ConfigError(ValueError):
    """Invalid or unknown configuration, with the offending key path."""


DEFAULTS: dict = {
    "seed": 7,
    "aggregator": "hieavg",
    "renormalize": False,
    "delta_window": None,
    "history_depth": None,
    "topology": {"devices_per_edge": [5, 5, 5, 5, 5]},
    "rounds": {"T": 60, "K": 2, "T_c": 2},
    "task": {"kind": "linear_regression", "input_dim": 8, "output_dim": 1, "hidden_dim": 0},
    "data": {
        "n_samples": 2000, "noise": 0.5, "weight_scale": 1.0, "spread": 1.0,
        "cluster_scale": 3.0, "n_groups": 25, "grouping": "target_quantile",
        "group_offset_scale": 0.0, "eval_fraction": 0.2, "classes_per_device": 1,
    },
    "lr": {"eta0": 20.0, "decay": 0.05},
    "local": {"batch_size": 32, "epochs_per_round": 1},
    "decay": {"gamma0": 0.9, "lambda": 0.9},
    "stragglers": {
        "kind": "none", "edge_count": 0, "device_count_per_edge": 0,
        "stop_round": None, "permanent_boundary": "after", "identity": "fixed",
        "miss_probability": 0.5, "run_length": 1, "seed": 3, "schedule": None,
    },
    "chain": {"election_timeout": [0.15, 0.30], "message_latency": 0.05,
              "leader_tenure": "per_round"},
    "latency": {"device_comm": 0.51, "device_comp": 1.67, "edge_comm": 0.05,
                "per_device_comm": None, "per_device_comp": None},
    "channel": None,
    "bounds": None,
    "output": {"metrics": None, "summary": None, "ledger": None},
}

# sections whose value may be a whole dict provided by the user (checked
# against their own key set when present)
_CHANNEL_KEYS = {"bandwidth_hz", "transmit_power_w", "channel_gain", "noise_power_w",
                 "model_bits", "cpu_cycles_per_round", "cpu_freq_hz"}
_BOUNDS_KEYS = {"lipschitz", "gap0", "mean_lr", "gamma0", "grad_var_device",
                "grad_var_edge", "est_var_edge", "est_var_global",
                "diff_mean_device", "diff_var_device", "diff_mean_edge",
                "diff_var_edge", "mean_device_stragglers", "mean_edge_stragglers",
                "devices_per_edge", "straggler_devices", "n_edges",
                "omega_max", "k_max"}


def _merge(defaults, given, path=""):
    if not isinstance(given, dict):
        raise ConfigError(f"{path or 'config'}: expected an object, got {type(given).__name__}")
    merged = copy.deepcopy(defaults)
    for key, value in given.items():
        here = f"{path}.{key}" if path else key
        if key not in defaults:
            raise ConfigError(f"unknown key {here!r}")
        if isinstance(defaults[key], dict) and defaults[key] and isinstance(value, dict):
            merged[key] = _merge(defaults[key], value, here)
        else:
            merged[key] = copy.deepcopy(value)
    return merged


def _check_extra_keys(section: dict | None, allowed: set, path: str) -> None:
    if section is None:
        return
    for key in section:
        if key not in allowed:
            raise ConfigError(f"unknown key {path}.{key!r}")


@dataclass
class ExperimentConfig:
    """Validated configuration; builders turn sections into domain objects."""

    raw: dict

    # -- builders --------------------------------------------------------

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    @property
    def aggregator(self) -> str:
        return self.raw["aggregator"]

    @property
    def rounds(self) -> tuple[int, int, int]:
        r = self.raw["rounds"]
        return int(r["T"]), int(r["K"]), int(r["T_c"])

    def topology(self) -> Topology:
        return Topology(tuple(self.raw["topology"]["devices_per_edge"]))

    def task(self) -> TaskSpec:
        t = self.raw["task"]
        return TaskSpec(t["kind"], int(t["input_dim"]), int(t["output_dim"]),
                        int(t["hidden_dim"]))

    def lr_schedule(self) -> LrSchedule:
        _, K, _ = self.rounds
        return LrSchedule(float(self.raw["lr"]["eta0"]), float(self.raw["lr"]["decay"]), K)

    def local_train_config(self) -> LocalTrainConfig:
        lo = self.raw["local"]
        return LocalTrainConfig(int(lo["batch_size"]), int(lo["epochs_per_round"]), self.seed)

    def decay_params(self) -> DecayParams:
        d = self.raw["decay"]
        return DecayParams(float(d["gamma0"]), float(d["lambda"]))

    def datasets(self) -> tuple[Dataset, Dataset]:
        """(train, eval) split, fully determined by the seed."""
        d = self.raw["data"]
        task = self.task()
        if task.kind == "linear_regression":
            full = make_regression_dataset(int(d["n_samples"]), task.input_dim,
                                           self.seed, noise=float(d["noise"]),
                                           weight_scale=float(d["weight_scale"]),
                                           n_groups=int(d["n_groups"]),
                                           grouping=d["grouping"],
                                           cluster_scale=float(d["cluster_scale"]),
                                           spread=float(d["spread"]),
                                           group_offset_scale=float(d["group_offset_scale"]))
        else:
            full = make_classification_dataset(int(d["n_samples"]), task.input_dim,
                                               task.output_dim, self.seed,
                                               spread=float(d["spread"]),
                                               cluster_scale=float(d["cluster_scale"]))
        return split_train_eval(full, float(d["eval_fraction"]), self.seed + 1)

    def straggler_schedule(self) -> StragglerSchedule:
        s = self.raw["stragglers"]
        T, K, T_c = self.rounds
        topo = self.topology()
        if s["schedule"] is not None:
            return StragglerSchedule.from_dict(topo, s["schedule"])
        return build_schedule(
            topo, T, K, T_c,
            edge_straggler_count=int(s["edge_count"]),
            device_straggler_count=int(s["device_count_per_edge"]),
            kind=s["kind"],
            stop_round=s["stop_round"],
            boundary=s["permanent_boundary"],
            identity=s["identity"],
            miss_probability=float(s["miss_probability"]),
            run_length=int(s["run_length"]),
            seed=int(s["seed"]))

    def consortium_chain(self) -> ConsortiumChain:
        c = self.raw["chain"]
        return ConsortiumChain(self.topology().n_edges, seed=self.seed,
                               timeout_range=tuple(float(x) for x in c["election_timeout"]),
                               message_latency=float(c["message_latency"]),
                               leader_tenure=c["leader_tenure"])

    def latency_profile(self) -> LatencyProfile:
        if self.raw["channel"] is not None:
            ch = self.raw["channel"]
            missing = _CHANNEL_KEYS - set(ch)
            if missing:
                raise ConfigError(f"channel: missing keys {sorted(missing)}")
            params = ChannelParams(**{k: float(ch[k]) for k in _CHANNEL_KEYS})
            return LatencyProfile.from_channel(params, float(self.raw["latency"]["edge_comm"]))
        la = self.raw["latency"]
        return LatencyProfile(
            float(la["device_comm"]), float(la["device_comp"]), float(la["edge_comm"]),
            per_device_comm=None if la["per_device_comm"] is None
            else tuple(float(x) for x in la["per_device_comm"]),
            per_device_comp=None if la["per_device_comp"] is None
            else tuple(float(x) for x in la["per_device_comp"]))

    def bound_params(self) -> tuple[BoundParams, float, int]:
        """(params, omega_max, k_max); mean_lr defaults to the schedule mean."""
        b = self.raw["bounds"]
        if b is None:
            raise ConfigError("bounds: section is required for bound evaluation")
        T, K, _ = self.rounds
        topo = self.topology()
        s = self.raw["stragglers"]
        values = dict(b)
        omega_max = float(values.pop("omega_max", float("inf")))
        k_max = int(values.pop("k_max", 8))
        values.setdefault("mean_lr", self.lr_schedule().mean_rate(T))
        values.setdefault("gamma0", float(self.raw["decay"]["gamma0"]))
        values.setdefault("n_edges", topo.n_edges)
        values.setdefault("devices_per_edge", topo.total_devices / topo.n_edges)
        values.setdefault("straggler_devices", topo.total_devices / topo.n_edges)
        values.setdefault("mean_device_stragglers", float(s["device_count_per_edge"]))
        values.setdefault("mean_edge_stragglers", float(s["edge_count"]))
        try:
            return BoundParams(**values), omega_max, k_max
        except TypeError as err:
            raise ConfigError(f"bounds: {err}") from err

    def output_paths(self) -> dict:
        return dict(self.raw["output"])


def validate(raw: dict) -> ExperimentConfig:
    merged = _merge(DEFAULTS, raw)
    _check_extra_keys(merged["channel"], _CHANNEL_KEYS, "channel")
    _check_extra_keys(merged["bounds"], _BOUNDS_KEYS, "bounds")

    T, K, T_c = (int(merged["rounds"][k]) for k in ("T", "K", "T_c"))
    if T_c < 2:
        raise ConfigError("rounds.T_c: T_c must be >= 2")
    if K < 1:
        raise ConfigError("rounds.K: K must be >= 1")
    if T <= T_c:
        raise ConfigError(f"rounds.T: T={T} must exceed T_c={T_c}")
    if merged["aggregator"] not in AGGREGATOR_NAMES:
        raise ConfigError(f"aggregator: unknown aggregator {merged['aggregator']!r}")
    devices = merged["topology"]["devices_per_edge"]
    if not devices or any(int(j) < 1 for j in devices):
        raise ConfigError("topology.devices_per_edge: every edge needs >= 1 device")
    s = merged["stragglers"]
    if s["kind"] not in ("none", "permanent", "temporary"):
        raise ConfigError(f"stragglers.kind: unknown kind {s['kind']!r}")
    if s["kind"] == "permanent" and s["schedule"] is None and s["stop_round"] is None:
        raise ConfigError("stragglers.stop_round: required for permanent stragglers")
    if int(s["edge_count"]) > len(devices):
        raise ConfigError("stragglers.edge_count: exceeds the number of edges")
    if any(int(s["device_count_per_edge"]) > int(j) for j in devices):
        raise ConfigError("stragglers.device_count_per_edge: exceeds a device population")

    cfg = ExperimentConfig(merged)
    cfg.task()          # dimension/kind checks
    cfg.lr_schedule()
    cfg.decay_params()
    cfg.local_train_config()
    return cfg


def load_config(path) -> ExperimentConfig:
    """Parse and validate a JSON experiment file."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as err:
            raise ConfigError(f"{path}: {err}") from err
    try:
        return validate(raw)
    except ConfigError:
        raise
    except ValueError as err:
        raise ConfigError(str(err)) from err
