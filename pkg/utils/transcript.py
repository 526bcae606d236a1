#!/usr/bin/env python

import logging

import attr

from utils.errors import UsageError
from utils.symmetric import SHA_BLOCK, Sha256State, sha256_absorb, sha256_finalize

# Configure logging
logger = logging.getLogger(__name__)

SNAPSHOT_FIXED_BYTES = 41
SNAPSHOT_BUDGET = 96


@attr.frozen
class TranscriptSnapshot:
    """H0-H7 (32 bytes) || bit_count (8 bytes) || pending length (1 byte) || pending."""
    data: bytes

    @property
    def size(self):
        return len(self.data)

    @property
    def pending_length(self):
        return self.data[40]


@attr.define
class RunningTranscript:
    """
    Session hash fed through a 64-byte staging buffer.

    Only the SHA-256 chaining state and the partial block are kept, never the
    handshake messages themselves. checkpoint_pending records the staging
    buffer fill at each checkpoint of this session; it is diagnostic only and
    not part of a snapshot.
    """
    sha: Sha256State = attr.Factory(Sha256State)
    staged_bytes_total: int = 0
    checkpoint_pending: list = attr.Factory(list)

    @property
    def pending_length(self):
        return len(self.sha.pending)


def absorb(rt, data):
    """Push handshake bytes; each full 64-byte block is digested at once."""
    if data:
        sha256_absorb(rt.sha, bytes(data))
        rt.staged_bytes_total += len(data)
    return rt


def checkpoint(rt):
    """Hash of everything absorbed so far, computed on a copy so absorbing can continue."""
    pending = len(rt.sha.pending)
    rt.checkpoint_pending.append(pending)
    logger.debug(f"Transcript checkpoint after {rt.staged_bytes_total} bytes (pending {pending})")
    return sha256_finalize(rt.sha)


def snapshot(rt):
    return TranscriptSnapshot(rt.sha.to_bytes())


def restore(snap):
    """
    Rebuild a RunningTranscript from a snapshot.

    Args:
        snap: TranscriptSnapshot or its raw bytes

    Returns:
        RunningTranscript: equivalent transcript, absorbing and checkpointing identically,
        with an empty checkpoint_pending history
    """
    data = snap.data if isinstance(snap, TranscriptSnapshot) else bytes(snap)
    if len(data) > SNAPSHOT_FIXED_BYTES + SHA_BLOCK - 1:
        raise UsageError(f"Transcript snapshot too long: {len(data)} bytes")
    sha = Sha256State.from_bytes(data)
    return RunningTranscript(sha=sha, staged_bytes_total=sha.bit_count // 8)
