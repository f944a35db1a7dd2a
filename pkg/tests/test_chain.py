import io

import numpy as np
import pytest

from bhfl.chain import (Block, ConsortiumChain, ElectionFailedError, Ledger, NotLeaderError,
                        consensus_latency, decode_canonical, elect_leader, encode_canonical,
                        majority, verify_chain)


class TestCanonicalEncoding:
    def test_round_trip(self):
        payload = {
            "round": 3,
            "weights": np.array([1.5, -2.25, 0.0]),
            "nested": {"a": [1, 2.5, "x", None, True, False], "b": b"\x00\x01"},
        }
        decoded = decode_canonical(encode_canonical(payload))
        assert decoded["round"] == 3
        assert np.array_equal(decoded["weights"], payload["weights"])
        assert decoded["nested"]["a"] == [1, 2.5, "x", None, True, False]
        assert decoded["nested"]["b"] == b"\x00\x01"

    def test_key_order_invariant(self):
        a = encode_canonical({"x": 1, "y": 2})
        b = encode_canonical({"y": 2, "x": 1})
        assert a == b

    def test_rejects_non_string_keys(self):
        with pytest.raises(TypeError):
            encode_canonical({1: "x"})


class TestElection:
    def test_single_node_wins_first_round(self):
        res = elect_leader(1, [0], seed=0)
        assert res.leader == 0 and res.voting_rounds == 1 and res.term == 1

    def test_five_nodes_majority_and_determinism(self):
        a = elect_leader(5, range(5), seed=42)
        b = elect_leader(5, range(5), seed=42)
        assert a.leader == b.leader and a.term == b.term and a.latency == b.latency
        votes_for_winner = sum(1 for v in a.votes.values() if v == a.leader)
        assert votes_for_winner >= 3

    def test_minority_live_fails(self):
        with pytest.raises(ElectionFailedError):
            elect_leader(5, [0, 1], seed=0)

    def test_safety_over_thousand_seeded_elections(self):
        rng = np.random.default_rng(123)
        for trial in range(1000):
            n = int(rng.integers(1, 9))
            live_count = int(rng.integers(0, n + 1))
            live = sorted(rng.choice(n, size=live_count, replace=False).tolist())
            if live_count < majority(n):
                with pytest.raises(ElectionFailedError):
                    elect_leader(n, live, seed=trial)
                continue
            res = elect_leader(n, live, seed=trial)
            assert res.leader in live
            # one vote per node, and the winner holds a full-membership majority
            assert set(res.votes) == set(live)
            tally = {}
            for v in res.votes.values():
                tally[v] = tally.get(v, 0) + 1
            winners = [c for c, n_votes in tally.items() if n_votes >= majority(n)]
            assert winners == [res.leader]

    def test_latency_grows_with_extra_rounds(self):
        res = elect_leader(5, range(5), seed=7)
        assert res.latency >= res.voting_rounds * 0.15


class TestConsensusLatency:
    def test_all_zero(self):
        assert consensus_latency(0, 0, 0, 0) == 0.0

    def test_worked_example(self):
        assert consensus_latency(0.1, 5, 0.05, 0.05) == pytest.approx(0.4, abs=1e-12)

    def test_submission_term_linear_in_count(self):
        base = consensus_latency(0.1, 5, 0.05, 0.05)
        double = consensus_latency(0.1, 10, 0.05, 0.05)
        assert double - base == pytest.approx(5 * 0.05, abs=1e-12)

    def test_rejects_negative(self):
        with pytest.raises(ValueError):
            consensus_latency(-1, 0, 0, 0)


def build_blocks(n, seed=0):
    rng = np.random.default_rng(seed)
    ledger = Ledger()
    for h in range(n):
        payload = {"round": h + 1, "weights": rng.normal(size=6)}
        ledger.append(Block.create(h, h + 1, ledger.tip_hash, payload))
    return ledger


class TestLedger:
    def test_genesis_has_zero_prev(self):
        ledger = build_blocks(1)
        assert ledger.blocks[0].height == 0
        assert ledger.blocks[0].prev_hash == bytes(32)

    def test_linkage(self):
        ledger = build_blocks(2)
        assert ledger.blocks[1].prev_hash == ledger.blocks[0].hash
        assert [b.height for b in ledger.blocks] == [0, 1]

    def test_empty_ledger_verifies(self):
        assert verify_chain([]) is None

    def test_untampered_chain_verifies(self):
        assert build_blocks(10).verify() is None

    def test_payload_tamper_detected(self):
        ledger = build_blocks(10, seed=1)
        blk = ledger.blocks[4]
        raw = bytearray(blk.payload_bytes)
        raw[7] ^= 0xFF
        ledger.blocks[4] = Block(blk.height, blk.round_t, blk.prev_hash, bytes(raw), blk.hash)
        assert ledger.verify() == 4

    def test_prev_hash_tamper_detected(self):
        ledger = build_blocks(10, seed=2)
        blk = ledger.blocks[5]
        bad_prev = bytearray(blk.prev_hash)
        bad_prev[0] ^= 0x01
        ledger.blocks[5] = Block(blk.height, blk.round_t, bytes(bad_prev),
                                 blk.payload_bytes, blk.hash)
        assert ledger.verify() == 5

    def test_export_round_trip(self):
        ledger = build_blocks(5, seed=3)
        buf = io.StringIO()
        ledger.export_records(buf)
        buf.seek(0)
        clone = Ledger.from_records(buf)
        assert clone.verify() is None
        assert clone.tip_hash == ledger.tip_hash
        assert np.array_equal(clone.blocks[2].payload["weights"],
                              ledger.blocks[2].payload["weights"])


class TestConsortiumChain:
    def test_leader_only_append(self):
        chain = ConsortiumChain(3, seed=0)
        res = chain.elect([0, 1, 2])
        outsider = next(i for i in range(3) if i != res.leader)
        with pytest.raises(NotLeaderError):
            chain.append_block(outsider, {"round": 1}, 1, [0, 1, 2])
        chain.append_block(res.leader, {"round": 1}, 1, [0, 1, 2])
        assert len(chain.ledger) == 1

    def test_replicas_converge_each_round(self):
        chain = ConsortiumChain(4, seed=1)
        for t in range(1, 6):
            res = chain.elect([0, 1, 2, 3])
            chain.append_block(res.leader, {"round": t}, t, [0, 1, 2, 3])
            tips = set(chain.tip_hashes().values())
            assert len(tips) == 1

    def test_returning_replica_syncs(self):
        chain = ConsortiumChain(3, seed=2)
        live = [0, 1]
        for t in range(1, 4):
            res = chain.elect(live)
            chain.append_block(res.leader, {"round": t}, t, live)
        assert len(chain.replicas[2]) == 0
        copied = chain.sync_replica(2)
        assert copied == 3
        assert chain.replicas[2].tip_hash == chain.ledger.tip_hash

    def test_sticky_leader_skips_election(self):
        chain = ConsortiumChain(3, seed=3, leader_tenure="sticky")
        first = chain.elect([0, 1, 2])
        second = chain.elect([0, 1, 2])
        assert second.leader == first.leader
        assert second.latency == 0.0 and second.term == first.term

    def test_sticky_leader_reelected_when_absent(self):
        chain = ConsortiumChain(3, seed=4, leader_tenure="sticky")
        first = chain.elect([0, 1, 2])
        live = [i for i in range(3) if i != first.leader]
        second = chain.elect(live)
        assert second.leader != first.leader
        assert second.term > first.term
