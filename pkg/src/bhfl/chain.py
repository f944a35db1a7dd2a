"""Leader election, hash-linked blocks, and replicated ledgers.

The consensus layer is reduced to what the round loop needs: a randomized-
timeout leader election among live edge servers, one block commit per global
round, and broadcast to live replicas with catch-up sync for returners.
Block hashes are sha256 over a canonical little-endian encoding so they are
platform-stable.
"""

from __future__ import annotations

import base64
import hashlib
import json
import struct
from dataclasses import dataclass, field

import numpy as np

ZERO_HASH = bytes(32)

_T_NONE, _T_FALSE, _T_TRUE = b"N", b"F", b"T"
_T_INT, _T_FLOAT, _T_STR, _T_BYTES = b"i", b"f", b"s", b"b"
_T_LIST, _T_DICT, _T_ARRAY = b"l", b"d", b"a"


class ElectionFailedError(RuntimeError):
    """Fewer live voters than a majority of the membership."""


class NotLeaderError(PermissionError):
    """A non-leader tried to append a block."""


def encode_canonical(obj) -> bytes:
    """Deterministic length-prefixed little-endian encoding.

    Supports None, bool, int, float, str, bytes, list/tuple, str-keyed dict
    (sorted), and 1-D float64 arrays.
    """
    if obj is None:
        return _T_NONE
    if obj is True:
        return _T_TRUE
    if obj is False:
        return _T_FALSE
    if isinstance(obj, (int, np.integer)):
        return _T_INT + struct.pack("<q", int(obj))
    if isinstance(obj, (float, np.floating)):
        return _T_FLOAT + struct.pack("<d", float(obj))
    if isinstance(obj, str):
        raw = obj.encode("utf-8")
        return _T_STR + struct.pack("<q", len(raw)) + raw
    if isinstance(obj, (bytes, bytearray)):
        return _T_BYTES + struct.pack("<q", len(obj)) + bytes(obj)
    if isinstance(obj, np.ndarray):
        raw = np.ascontiguousarray(obj, dtype="<f8").reshape(-1).tobytes()
        return _T_ARRAY + struct.pack("<q", len(raw) // 8) + raw
    if isinstance(obj, (list, tuple)):
        parts = [_T_LIST, struct.pack("<q", len(obj))]
        parts.extend(encode_canonical(x) for x in obj)
        return b"".join(parts)
    if isinstance(obj, dict):
        keys = sorted(obj)
        if any(not isinstance(k, str) for k in keys):
            raise TypeError("canonical dicts need str keys")
        parts = [_T_DICT, struct.pack("<q", len(keys))]
        for k in keys:
            parts.append(encode_canonical(k))
            parts.append(encode_canonical(obj[k]))
        return b"".join(parts)
    raise TypeError(f"cannot canonically encode {type(obj)!r}")


def decode_canonical(raw: bytes):
    value, offset = _decode(raw, 0)
    if offset != len(raw):
        raise ValueError("trailing bytes after canonical value")
    return value


def _decode(raw: bytes, o: int):
    tag = raw[o:o + 1]
    o += 1
    if tag == _T_NONE:
        return None, o
    if tag == _T_TRUE:
        return True, o
    if tag == _T_FALSE:
        return False, o
    if tag == _T_INT:
        return struct.unpack_from("<q", raw, o)[0], o + 8
    if tag == _T_FLOAT:
        return struct.unpack_from("<d", raw, o)[0], o + 8
    if tag in (_T_STR, _T_BYTES):
        n = struct.unpack_from("<q", raw, o)[0]
        o += 8
        chunk = raw[o:o + n]
        return (chunk.decode("utf-8") if tag == _T_STR else chunk), o + n
    if tag == _T_ARRAY:
        n = struct.unpack_from("<q", raw, o)[0]
        o += 8
        arr = np.frombuffer(raw[o:o + 8 * n], dtype="<f8").astype(np.float64)
        return arr, o + 8 * n
    if tag == _T_LIST:
        n = struct.unpack_from("<q", raw, o)[0]
        o += 8
        out = []
        for _ in range(n):
            v, o = _decode(raw, o)
            out.append(v)
        return out, o
    if tag == _T_DICT:
        n = struct.unpack_from("<q", raw, o)[0]
        o += 8
        out = {}
        for _ in range(n):
            k, o = _decode(raw, o)
            v, o = _decode(raw, o)
            out[k] = v
        return out, o
    raise ValueError(f"bad canonical tag {tag!r} at offset {o - 1}")


def block_digest(height: int, round_t: int, prev_hash: bytes, payload_bytes: bytes) -> bytes:
    header = struct.pack("<qq", height, round_t) + prev_hash
    return hashlib.sha256(header + payload_bytes).digest()


@dataclass(frozen=True)
class Block:
    height: int
    round_t: int
    prev_hash: bytes
    payload_bytes: bytes
    hash: bytes

    @classmethod
    def create(cls, height: int, round_t: int, prev_hash: bytes, payload: dict) -> "Block":
        raw = encode_canonical(payload)
        return cls(height, round_t, prev_hash, raw,
                   block_digest(height, round_t, prev_hash, raw))

    @property
    def payload(self) -> dict:
        return decode_canonical(self.payload_bytes)

    def to_record(self) -> dict:
        return {
            "height": self.height,
            "round": self.round_t,
            "prev_hash": self.prev_hash.hex(),
            "hash": self.hash.hex(),
            "payload": base64.b64encode(self.payload_bytes).decode("ascii"),
        }

    @classmethod
    def from_record(cls, rec: dict) -> "Block":
        return cls(int(rec["height"]), int(rec["round"]), bytes.fromhex(rec["prev_hash"]),
                   base64.b64decode(rec["payload"]), bytes.fromhex(rec["hash"]))


def verify_chain(blocks: list[Block]) -> int | None:
    """Recompute every digest and linkage; None when clean, else the first
    bad height."""
    for ix, blk in enumerate(blocks):
        if blk.height != ix:
            return ix
        expected_prev = ZERO_HASH if ix == 0 else blocks[ix - 1].hash
        if blk.prev_hash != expected_prev:
            return ix
        if block_digest(blk.height, blk.round_t, blk.prev_hash, blk.payload_bytes) != blk.hash:
            return ix
    return None


@dataclass
class Ledger:
    """One replica's ordered block list."""

    blocks: list[Block] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.blocks)

    @property
    def tip_hash(self) -> bytes:
        return self.blocks[-1].hash if self.blocks else ZERO_HASH

    def append(self, block: Block) -> None:
        if block.height != len(self.blocks):
            raise ValueError(f"height {block.height} does not extend {len(self.blocks)} blocks")
        if block.prev_hash != self.tip_hash:
            raise ValueError("block does not link to replica tip")
        self.blocks.append(block)

    def verify(self) -> int | None:
        return verify_chain(self.blocks)

    def export_records(self, fh) -> None:
        """One JSON record per line; hashes hex, payload base64."""
        for blk in self.blocks:
            fh.write(json.dumps(blk.to_record(), sort_keys=True))
            fh.write("\n")

    @classmethod
    def from_records(cls, fh) -> "Ledger":
        led = cls()
        for line in fh:
            line = line.strip()
            if line:
                led.blocks.append(Block.from_record(json.loads(line)))
        return led


@dataclass(frozen=True)
class ElectionResult:
    leader: int
    term: int
    latency: float
    voting_rounds: int
    votes: dict


def majority(n: int) -> int:
    return n // 2 + 1


def elect_leader(n_edges: int, live, seed, current_term: int = 0,
                 timeout_range: tuple[float, float] = (0.15, 0.30),
                 message_latency: float = 0.05) -> ElectionResult:
    """Randomized-timeout election among live edge servers.

    Each voting round, live nodes draw timeouts; nodes timing out before the
    first candidate's request could reach them stand as candidates, and every
    live node casts exactly one vote per term for the first request it sees.
    A candidate with a majority of the full membership wins; otherwise the
    term advances and a new round is drawn. Deterministic given the seed.
    """
    live = sorted(set(live))
    if len(live) < majority(n_edges):
        raise ElectionFailedError(
            f"{len(live)} live of {n_edges} is below the majority {majority(n_edges)}")
    rng = np.random.default_rng(seed)
    term = current_term
    latency = 0.0
    rounds = 0
    while True:
        term += 1
        rounds += 1
        timeouts = {node: float(rng.uniform(*timeout_range)) for node in live}
        first = min(timeouts.values())
        candidates = [n for n in live if timeouts[n] <= first + message_latency]
        votes = {}
        for voter in live:
            if voter in candidates:
                votes[voter] = voter  # candidates vote for themselves
            else:
                arrival = {c: timeouts[c] + float(rng.uniform(0.5, 1.5)) * message_latency
                           for c in candidates}
                votes[voter] = min(candidates, key=lambda c: (arrival[c], c))
        tally: dict[int, int] = {}
        for cand in votes.values():
            tally[cand] = tally.get(cand, 0) + 1
        winner = max(tally, key=lambda c: (tally[c], -c))
        latency += first + 2.0 * message_latency  # timeout + request/grant trip
        if tally[winner] >= majority(n_edges):
            return ElectionResult(winner, term, latency, rounds, votes)


def consensus_latency(election_latency: float, submission_count: int,
                      per_message_latency: float, broadcast_latency: float) -> float:
    """Per-round consensus time: election, then one submission per edge,
    then the block broadcast."""
    for v in (election_latency, per_message_latency, broadcast_latency):
        if v < 0:
            raise ValueError("latency components must be nonnegative")
    if submission_count < 0:
        raise ValueError("submission_count must be nonnegative")
    return election_latency + submission_count * per_message_latency + broadcast_latency


class ConsortiumChain:
    """Replicated ledger owned by the round coordinator.

    Each edge server holds a replica; blocks append only through the elected
    leader and broadcast to live replicas. Absent edges receive the missed
    blocks when they next sync.
    """

    def __init__(self, n_edges: int, seed: int = 0,
                 timeout_range: tuple[float, float] = (0.15, 0.30),
                 message_latency: float = 0.05,
                 leader_tenure: str = "per_round"):
        if leader_tenure not in ("per_round", "sticky"):
            raise ValueError(f"unknown leader tenure {leader_tenure!r}")
        self.n_edges = n_edges
        self.seed = seed
        self.timeout_range = timeout_range
        self.message_latency = message_latency
        self.leader_tenure = leader_tenure
        self.term = 0
        self.leader: int | None = None
        self.replicas = {i: Ledger() for i in range(n_edges)}
        self._authoritative = Ledger()
        self._elections = 0

    def elect(self, live) -> ElectionResult:
        """Run (or skip, for a sticky surviving leader) this round's election."""
        live = sorted(set(live))
        if (self.leader_tenure == "sticky" and self.leader is not None
                and self.leader in live and len(live) >= majority(self.n_edges)):
            return ElectionResult(self.leader, self.term, 0.0, 0, {})
        self._elections += 1
        result = elect_leader(self.n_edges, live, (self.seed, self._elections),
                              current_term=self.term,
                              timeout_range=self.timeout_range,
                              message_latency=self.message_latency)
        self.term = result.term
        self.leader = result.leader
        return result

    def append_block(self, leader: int, payload: dict, round_t: int, live) -> Block:
        """Leader-only append, broadcast to live replicas."""
        if leader != self.leader:
            raise NotLeaderError(f"edge {leader} is not the leader (leader={self.leader})")
        block = Block.create(len(self._authoritative), round_t,
                             self._authoritative.tip_hash, payload)
        self._authoritative.append(block)
        for i in sorted(set(live)):
            self.replicas[i].append(block)
        return block

    def sync_replica(self, edge: int) -> int:
        """Catch a returning replica up to the authoritative tip; returns the
        number of blocks copied."""
        replica = self.replicas[edge]
        missing = self._authoritative.blocks[len(replica.blocks):]
        for blk in missing:
            replica.append(blk)
        return len(missing)

    @property
    def ledger(self) -> Ledger:
        return self._authoritative

    def tip_hashes(self) -> dict[int, bytes]:
        return {i: rep.tip_hash for i, rep in self.replicas.items()}
