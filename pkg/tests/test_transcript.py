import hashlib

import pytest

from utils.errors import UsageError
from utils.transcript import SNAPSHOT_BUDGET, RunningTranscript, absorb, checkpoint, restore, snapshot


@pytest.mark.parametrize("cases", [50, pytest.param(10_000, marks=pytest.mark.slow)])
def test_checkpoint_equals_one_shot_hash(rng, cases):
    for _ in range(cases):
        data = rng.bytes(rng.integers(0, 400))
        rt = RunningTranscript()
        offset = 0
        while offset < len(data):
            step = rng.integers(1, 70)
            absorb(rt, data[offset:offset + step])
            offset += step
        assert checkpoint(rt) == hashlib.sha256(data).digest()


def test_checkpoint_does_not_disturb_the_running_hash():
    rt = absorb(RunningTranscript(), b"ClientHello")
    first = checkpoint(rt)
    assert checkpoint(rt) == first
    absorb(rt, b"ServerHello")
    assert first == hashlib.sha256(b"ClientHello").digest()
    assert checkpoint(rt) == hashlib.sha256(b"ClientHelloServerHello").digest()
    assert rt.checkpoint_pending == [11, 11, 22]


def test_empty_absorb_is_a_no_op():
    rt = absorb(RunningTranscript(), b"")
    assert rt.staged_bytes_total == 0
    assert checkpoint(rt) == hashlib.sha256(b"").digest()


def test_snapshot_round_trip(rng):
    rt = absorb(RunningTranscript(), rng.bytes(150))
    clone = restore(snapshot(rt))
    assert checkpoint(clone) == checkpoint(rt)
    absorb(rt, b"more")
    absorb(clone, b"more")
    assert checkpoint(clone) == checkpoint(rt)
    assert clone.staged_bytes_total == rt.staged_bytes_total


def test_snapshot_sizes():
    rt = absorb(RunningTranscript(), bytes(64 + 31))
    assert snapshot(rt).pending_length == 31
    assert snapshot(rt).size <= SNAPSHOT_BUDGET
    rt = absorb(RunningTranscript(), bytes(63))
    assert snapshot(rt).size == 41 + 63


def test_restore_accepts_raw_bytes():
    rt = absorb(RunningTranscript(), b"abc")
    assert checkpoint(restore(snapshot(rt).data)) == hashlib.sha256(b"abc").digest()


def test_restore_rejects_oversized_snapshot():
    with pytest.raises(UsageError):
        restore(bytes(41 + 64))


def test_interleaved_snapshots_match_oracle(rng):
    data = b""
    rt = RunningTranscript()
    for _ in range(40):
        chunk = rng.bytes(rng.integers(0, 50))
        data += chunk
        absorb(rt, chunk)
        if rng.random() < 0.3:
            rt = restore(snapshot(rt))
        assert checkpoint(rt) == hashlib.sha256(data).digest()


def test_restore_carries_the_hash_state_but_not_the_checkpoint_history(rng):
    rt = absorb(RunningTranscript(), rng.bytes(100))
    checkpoint(rt)
    clone = restore(snapshot(rt))
    assert clone.sha.to_bytes() == rt.sha.to_bytes()
    assert clone.staged_bytes_total == rt.staged_bytes_total
    assert clone.pending_length == rt.pending_length == 36
    assert rt.checkpoint_pending == [36]
    assert clone.checkpoint_pending == []
