"""Aggregation with straggler estimation, plus the benchmark aggregators.

The estimating aggregator fills a missing submission with the participant's
last stored weights advanced by the mean of its historical successive weight
differences, scaled by a geometric decay in the number of consecutively
missed rounds. The two benchmarks either drop stragglers and renormalize
(timely-only) or freeze them at their last real submission (delayed-weight).
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .core import EmptyAggregationError, weighted_mean

TIMELY = "timely"
ESTIMATED = "estimated"
EXCLUDED = "excluded"

AGGREGATOR_NAMES = ("hieavg", "t_fedavg", "d_fedavg", "oracle_no_stragglers")


class InsufficientHistoryError(RuntimeError):
    """Fewer than two stored submissions: no difference to extrapolate."""


@dataclass(frozen=True)
class DecayParams:
    """Geometric decay gamma0 * lambda^missed applied to estimated weights."""

    gamma0: float = 0.9
    lam: float = 0.9

    def __post_init__(self):
        if not 0.0 < self.gamma0 < 1.0:
            raise ValueError("gamma0 must lie strictly inside (0, 1)")
        if not 0.0 < self.lam < 1.0:
            raise ValueError("lambda must lie strictly inside (0, 1)")


def decay_factor(p: DecayParams, missed_rounds: int) -> float:
    """gamma0 * lambda^missed_rounds for missed_rounds >= 1."""
    if missed_rounds < 1:
        raise ValueError("missed_rounds must be >= 1")
    return p.gamma0 * p.lam ** missed_rounds


class SubmissionHistory:
    """Ordered per-participant record of accepted submissions and estimates.

    Keeps a running sum of successive weight differences so the mean
    difference is O(1) to query; a bounded window of recent differences can
    be requested instead of the full-history mean. The missed counter tracks
    consecutive rounds since the last real (non-estimated) submission.
    """

    def __init__(self, window: int | None = None, max_entries: int | None = None):
        if window is not None and window < 1:
            raise ValueError("window must be >= 1 when given")
        self.window = window
        self.max_entries = max_entries
        self.entries: deque = deque(maxlen=max_entries)  # (round, weights, estimated)
        self.missed_rounds = 0
        self._count = 0
        self._last_round: int | None = None
        self._last_weights: np.ndarray | None = None
        self._last_real: np.ndarray | None = None
        self._diff_sum: np.ndarray | None = None
        self._diff_count = 0
        self._recent: deque | None = deque(maxlen=window) if window else None

    def __len__(self) -> int:
        return self._count

    @property
    def last_round(self) -> int | None:
        return self._last_round

    @property
    def last_weights(self) -> np.ndarray:
        if self._last_weights is None:
            raise InsufficientHistoryError("history is empty")
        return self._last_weights

    @property
    def last_real_weights(self) -> np.ndarray:
        if self._last_real is None:
            raise InsufficientHistoryError("no real submission stored")
        return self._last_real

    def record(self, rnd: int, weights: np.ndarray, estimated: bool = False) -> None:
        if self._last_round is not None and rnd <= self._last_round:
            raise ValueError(f"round {rnd} not after last stored round {self._last_round}")
        w = np.asarray(weights, dtype=np.float64)
        if self._last_weights is not None:
            diff = w - self._last_weights
            self._diff_sum = diff if self._diff_sum is None else self._diff_sum + diff
            self._diff_count += 1
            if self._recent is not None:
                self._recent.append(diff)
        self.entries.append((rnd, w, estimated))
        self._count += 1
        self._last_round = rnd
        self._last_weights = w
        if estimated:
            self.missed_rounds += 1
        else:
            self._last_real = w
            self.missed_rounds = 0

    def mean_difference(self) -> np.ndarray:
        """Running mean of successive stored differences."""
        if self._diff_count == 0:
            raise InsufficientHistoryError(
                f"need >= 2 submissions, have {self._count}")
        if self._recent is not None:
            acc = self._recent[0].copy()
            for d in list(self._recent)[1:]:
                acc += d
            return acc / len(self._recent)
        return self._diff_sum / self._diff_count


def mean_weight_difference(history: SubmissionHistory) -> np.ndarray:
    return history.mean_difference()


def estimate_delayed(history: SubmissionHistory, rnd: int | None = None) -> np.ndarray:
    """Extrapolate one missing submission and feed it back into the history.

    Returns last stored weights plus the mean historical difference; the
    estimate is appended as an estimated entry so consecutive misses keep
    extrapolating while the missed counter keeps growing.
    """
    est = history.last_weights + history.mean_difference()
    if rnd is None:
        rnd = history.last_round + 1
    history.record(rnd, est, estimated=True)
    return est


@dataclass
class AggregationReport:
    """Outcome of one aggregation.

    ``contributions`` lists (participant, vector, coefficient) in the exact
    order they were summed, so replaying them through weighted_mean
    reproduces the aggregate bit for bit. The coefficient mass is always the
    raw applied weight share, 1 only when nobody was estimated or excluded,
    even when renormalization rescaled the contributions themselves.
    """

    round: int
    tier: str  # "edge" | "global"
    aggregator: str
    aggregate: np.ndarray
    statuses: dict[int, str]
    contributions: list[tuple[int, np.ndarray, float]]
    coefficient_mass: float

    def count(self, status: str) -> int:
        return sum(1 for s in self.statuses.values() if s == status)

    def coefficient(self, participant: int) -> float:
        for pid, _, coef in self.contributions:
            if pid == participant:
                return coef
        return 0.0


def replay_aggregate(contributions) -> np.ndarray:
    """Recompute an aggregate from ordered (id, vector, coefficient) entries."""
    return weighted_mean([w for _, w, _ in contributions],
                         [c for _, _, c in contributions])


def _build(rnd, tier, aggregator, statuses, contributions, mass) -> AggregationReport:
    agg = replay_aggregate(contributions)
    if not np.all(np.isfinite(agg)):
        raise ValueError("aggregate contains NaN or Inf")
    return AggregationReport(rnd, tier, aggregator, agg, statuses, contributions, mass)


def hieavg_edge(timely: dict[int, np.ndarray], straggler_histories: dict[int, "SubmissionHistory"],
                decay: DecayParams, j_total: int, rnd: int = 0,
                renormalize: bool = False, record_estimates: bool = True) -> AggregationReport:
    """Uniform 1/J mean with estimated-and-decayed straggler terms.

    With no stragglers this is exactly the plain uniform mean. Estimates are
    appended to the straggler histories unless record_estimates is False.
    """
    if len(timely) + len(straggler_histories) != j_total:
        raise ValueError("timely plus stragglers must cover all devices")
    if j_total == 0:
        raise EmptyAggregationError("edge has no devices")
    raw = []  # (device, vector, unnormalized coefficient)
    statuses = {}
    for j in sorted(timely):
        raw.append((j, timely[j], 1.0))
        statuses[j] = TIMELY
    for j in sorted(straggler_histories):
        hist = straggler_histories[j]
        gamma = decay_factor(decay, hist.missed_rounds + 1)
        est = hist.last_weights + hist.mean_difference()
        if record_estimates:
            hist.record(rnd if rnd > (hist.last_round or 0) else (hist.last_round or 0) + 1,
                        est, estimated=True)
        raw.append((j, est, gamma))
        statuses[j] = ESTIMATED
    # reported mass is always the raw applied weight share; renormalization
    # only rescales the contributions
    mass = sum(c for _, _, c in raw) / j_total
    divisor = sum(c for _, _, c in raw) if renormalize else j_total
    contributions = [(j, w, c / divisor) for j, w, c in raw]
    return _build(rnd, "edge", "hieavg", statuses, contributions, mass)


def hieavg_global(timely: dict[int, tuple[np.ndarray, int]],
                  straggler_histories: dict[int, tuple["SubmissionHistory", int]],
                  decay: DecayParams, total_devices: int, rnd: int = 0,
                  renormalize: bool = False, record_estimates: bool = True) -> AggregationReport:
    """Device-count-weighted mean with estimated-and-decayed absent edges."""
    if total_devices <= 0:
        raise EmptyAggregationError("topology has no devices")
    raw = []  # (edge, vector, unnormalized weight)
    statuses = {}
    for i in sorted(timely):
        w, j_i = timely[i]
        raw.append((i, w, float(j_i)))
        statuses[i] = TIMELY
    for i in sorted(straggler_histories):
        hist, j_i = straggler_histories[i]
        gamma = decay_factor(decay, hist.missed_rounds + 1)
        est = hist.last_weights + hist.mean_difference()
        if record_estimates:
            hist.record(rnd if rnd > (hist.last_round or 0) else (hist.last_round or 0) + 1,
                        est, estimated=True)
        raw.append((i, est, gamma * j_i))
        statuses[i] = ESTIMATED
    if not raw:
        raise EmptyAggregationError("no edge submissions at all")
    mass = sum(c for _, _, c in raw) / total_devices
    divisor = sum(c for _, _, c in raw) if renormalize else total_devices
    contributions = [(i, w, c / divisor) for i, w, c in raw]
    return _build(rnd, "global", "hieavg", statuses, contributions, mass)


def t_fedavg_edge(timely: dict[int, np.ndarray], straggler_ids, j_total: int,
                  rnd: int = 0) -> AggregationReport:
    """Timely-only uniform mean, renormalized over the present set."""
    if not timely:
        raise EmptyAggregationError("no timely device submissions")
    contributions = [(j, timely[j], 1.0 / len(timely)) for j in sorted(timely)]
    statuses = {j: TIMELY for j in timely}
    statuses.update({j: EXCLUDED for j in straggler_ids})
    return _build(rnd, "edge", "t_fedavg", statuses, contributions, 1.0)


def t_fedavg_global(timely: dict[int, tuple[np.ndarray, int]], straggler_ids,
                    rnd: int = 0) -> AggregationReport:
    """Timely-only device-count-weighted mean over the present edges."""
    if not timely:
        raise EmptyAggregationError("no timely edge submissions")
    total = sum(j for _, j in timely.values())
    contributions = [(i, timely[i][0], timely[i][1] / total) for i in sorted(timely)]
    statuses = {i: TIMELY for i in timely}
    statuses.update({i: EXCLUDED for i in straggler_ids})
    return _build(rnd, "global", "t_fedavg", statuses, contributions, 1.0)


def d_fedavg_edge(timely: dict[int, np.ndarray],
                  straggler_histories: dict[int, "SubmissionHistory"],
                  j_total: int, rnd: int = 0) -> AggregationReport:
    """Full-population mean with stragglers frozen at their last real
    submission: no decay, no drift term."""
    if len(timely) + len(straggler_histories) != j_total:
        raise ValueError("timely plus stragglers must cover all devices")
    contributions, statuses = [], {}
    for j in sorted(timely):
        contributions.append((j, timely[j], 1.0 / j_total))
        statuses[j] = TIMELY
    for j in sorted(straggler_histories):
        contributions.append((j, straggler_histories[j].last_real_weights, 1.0 / j_total))
        statuses[j] = ESTIMATED
    return _build(rnd, "edge", "d_fedavg", statuses, contributions, 1.0)


def d_fedavg_global(timely: dict[int, tuple[np.ndarray, int]],
                    straggler_histories: dict[int, tuple["SubmissionHistory", int]],
                    total_devices: int, rnd: int = 0) -> AggregationReport:
    contributions, statuses = [], {}
    for i in sorted(timely):
        w, j_i = timely[i]
        contributions.append((i, w, j_i / total_devices))
        statuses[i] = TIMELY
    for i in sorted(straggler_histories):
        hist, j_i = straggler_histories[i]
        contributions.append((i, hist.last_real_weights, j_i / total_devices))
        statuses[i] = ESTIMATED
    if not contributions:
        raise EmptyAggregationError("no edge submissions at all")
    return _build(rnd, "global", "d_fedavg", statuses, contributions, 1.0)
