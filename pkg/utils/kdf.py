#!/usr/bin/env python

import enum
import logging

import attr

from utils.costmodel import charge
from utils.errors import ReseedRequiredError, UsageError
from utils.symmetric import hmac_sha256, sha256

# Configure logging
logger = logging.getLogger(__name__)

HASH_LEN = 32
DRBG_MAX_GENERATES = 1 << 48
DRBG_MAX_BITS = 1 << 19
HKDF_MAX_LENGTH = 255 * HASH_LEN
LABEL_PREFIX = b"tls13"
MAX_LABEL = 249

# One table so an alternate label set is a one-line swap
LABELS = {
    "client_hs": b"c hs traffic",
    "server_hs": b"s hs traffic",
    "client_app": b"c ap traffic",
    "server_app": b"s ap traffic",
    "derived": b"derived",
    "finished": b"finished",
    "key": b"key",
    "iv": b"iv",
}

EMPTY_HASH = sha256(b"")
ZEROS = bytes(HASH_LEN)


# -- HMAC-DRBG ----------------------------------------------------------

@attr.define
class DrbgState:
    K: bytes
    V: bytes
    generate_count: int = 0


def _drbg_update(state, provided=b""):
    state.K = hmac_sha256(state.K, state.V + b"\x00" + provided)
    state.V = hmac_sha256(state.K, state.V)
    if provided:
        state.K = hmac_sha256(state.K, state.V + b"\x01" + provided)
        state.V = hmac_sha256(state.K, state.V)


def drbg_instantiate(seed_material):
    """Instantiate HMAC-DRBG: K = 0x00*32, V = 0x01*32, then update with the seed."""
    if not seed_material:
        raise UsageError("DRBG seed material must not be empty")
    state = DrbgState(K=bytes(HASH_LEN), V=b"\x01" * HASH_LEN)
    _drbg_update(state, bytes(seed_material))
    return state


def drbg_generate(state, n_bits):
    """
    Generate n_bits pseudo-random bits (no additional input).

    Returns:
        bytes: ceil(n_bits / 8) bytes; unused low-order bits of the last byte are zero
    """
    if n_bits < 0 or n_bits > DRBG_MAX_BITS:
        raise UsageError(f"A single generate is limited to 2^19 bits, requested {n_bits}")
    if state.generate_count >= DRBG_MAX_GENERATES:
        raise ReseedRequiredError("DRBG generate budget of 2^48 calls is exhausted")
    n_bytes = (n_bits + 7) // 8
    output = b""
    while len(output) < n_bytes:
        state.V = hmac_sha256(state.K, state.V)
        output += state.V
    _drbg_update(state)
    state.generate_count += 1
    charge("drbg_generate")
    output = bytearray(output[:n_bytes])
    if n_bits % 8:
        output[-1] &= (0xFF << (8 - n_bits % 8)) & 0xFF
    return bytes(output)


def bits_to_int(data, n_bits):
    """Leading n_bits of a generate output as an integer."""
    return int.from_bytes(data, "big") >> (8 * len(data) - n_bits)


# -- HKDF ---------------------------------------------------------------

def hkdf_extract(salt, ikm):
    return hmac_sha256(salt or ZEROS, ikm)


def hkdf_expand(prk, info, length):
    if length < 0 or length > HKDF_MAX_LENGTH:
        raise UsageError(f"HKDF output length must be at most {HKDF_MAX_LENGTH}, got {length}")
    okm = b""
    block = b""
    counter = 1
    while len(okm) < length:
        block = hmac_sha256(prk, block + info + bytes([counter]))
        okm += block
        counter += 1
    return okm[:length]


def hkdf_label(label, context, length):
    """
    Info string: length (2 bytes) || "tls13" || label length (1 byte) || label
    || context length (1 byte) || context.
    """
    if len(label) > MAX_LABEL:
        raise UsageError(f"Label longer than {MAX_LABEL} bytes")
    if len(context) > 255:
        raise UsageError("Context longer than 255 bytes")
    return (length.to_bytes(2, "big") + LABEL_PREFIX + bytes([len(label)]) + label
            + bytes([len(context)]) + context)


def hkdf_expand_label(secret, label, context, length):
    return hkdf_expand(secret, hkdf_label(label, context, length), length)


def derive_secret(secret, label, transcript_hash):
    if len(transcript_hash) != HASH_LEN:
        raise UsageError("Transcript hash must be 32 bytes")
    return hkdf_expand_label(secret, label, transcript_hash, HASH_LEN)


# -- TLS 1.3 key schedule -----------------------------------------------

@attr.frozen
class TrafficKeys:
    aead_key: bytes
    aead_iv: bytes


def traffic_keys(secret):
    return TrafficKeys(aead_key=hkdf_expand_label(secret, LABELS["key"], b"", 16),
                       aead_iv=hkdf_expand_label(secret, LABELS["iv"], b"", 12))


def finished_key(secret):
    return hkdf_expand_label(secret, LABELS["finished"], b"", HASH_LEN)


class Stage(enum.IntEnum):
    INIT = 0
    EARLY_DONE = 1
    HANDSHAKE_DONE = 2
    MASTER_DONE = 3


_SECRET_STAGES = {
    "early_secret": Stage.EARLY_DONE,
    "handshake_secret": Stage.HANDSHAKE_DONE,
    "client_hs_traffic": Stage.HANDSHAKE_DONE,
    "server_hs_traffic": Stage.HANDSHAKE_DONE,
    "master_secret": Stage.MASTER_DONE,
    "client_app_traffic": Stage.MASTER_DONE,
    "server_app_traffic": Stage.MASTER_DONE,
}


@attr.define
class KeySchedule:
    """TLS 1.3 key schedule; secrets are readable only once their stage is reached."""
    stage: Stage = Stage.INIT
    _secrets: dict = attr.Factory(dict)
    chain: list = attr.Factory(list)

    def secret(self, name):
        required = _SECRET_STAGES[name]
        if self.stage < required:
            raise UsageError(f"{name} is not available before stage {required.name}")
        return self._secrets[name]

    def __getattr__(self, name):
        if name in _SECRET_STAGES:
            return self.secret(name)
        raise AttributeError(name)

    def _store(self, name, value):
        self._secrets[name] = value
        self.chain.append((name, value.hex()))

    def derive_chain(self):
        """Ordered (step, hex) pairs, the golden KDF chain format."""
        return list(self.chain)


def key_schedule_advance(ks, psk=None, ecdhe=None, transcript_hash=None):
    """
    Move the key schedule to its next stage.

    Args:
        ks: KeySchedule to advance (mutated and returned)
        psk: Pre-shared key for the early stage; absent means 32 zero bytes
        ecdhe: Shared ECDHE secret, required for the handshake stage
        transcript_hash: Checkpoint hash for the traffic secrets of the stage

    Returns:
        KeySchedule: the advanced schedule
    """
    if ks.stage == Stage.INIT:
        ks._store("early_secret", hkdf_extract(ZEROS, psk or ZEROS))
        ks.stage = Stage.EARLY_DONE
    elif ks.stage == Stage.EARLY_DONE:
        if ecdhe is None or transcript_hash is None:
            raise UsageError("Handshake stage needs the ECDHE secret and the hello transcript hash")
        salt = derive_secret(ks._secrets["early_secret"], LABELS["derived"], EMPTY_HASH)
        handshake = hkdf_extract(salt, ecdhe)
        ks._store("handshake_secret", handshake)
        ks._store("client_hs_traffic", derive_secret(handshake, LABELS["client_hs"], transcript_hash))
        ks._store("server_hs_traffic", derive_secret(handshake, LABELS["server_hs"], transcript_hash))
        ks.stage = Stage.HANDSHAKE_DONE
    elif ks.stage == Stage.HANDSHAKE_DONE:
        if transcript_hash is None:
            raise UsageError("Master stage needs the server Finished transcript hash")
        salt = derive_secret(ks._secrets["handshake_secret"], LABELS["derived"], EMPTY_HASH)
        master = hkdf_extract(salt, ZEROS)
        ks._store("master_secret", master)
        ks._store("client_app_traffic", derive_secret(master, LABELS["client_app"], transcript_hash))
        ks._store("server_app_traffic", derive_secret(master, LABELS["server_app"], transcript_hash))
        ks.stage = Stage.MASTER_DONE
    else:
        raise UsageError("Key schedule is already complete")
    logger.debug(f"Key schedule advanced to {ks.stage.name}")
    return ks
