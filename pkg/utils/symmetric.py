#!/usr/bin/env python

"""
AES-128, GHASH/AES-GCM and resumable SHA2-256, metered with the cycle
formulas of the accelerator (11 cycles per AES block, 128/n_h cycles per
GF(2^128) product, 54 + 32(m + n) cycles per GCM call, 65 cycles per SHA
block).
"""

import hmac
import logging
import math

import attr

from utils.costmodel import charge
from utils.errors import AuthenticationError, UsageError

# Configure logging
logger = logging.getLogger(__name__)

BLOCK_SIZE = 16
GCM_IV_SIZE = 12
GCM_MAX_INPUT = 1 << 32
GHASH_STAGES = (1, 2, 4, 8, 16, 32, 64, 128)
TAG_LENGTHS = (4, 8, 12, 16)


# -- AES-128 ------------------------------------------------------------

def _xtime(a):
    a <<= 1
    return a ^ 0x11B if a & 0x100 else a


def _build_sbox():
    # log/antilog tables over the generator 3, then the affine map
    exp = [0] * 255
    log = [0] * 256
    x = 1
    for i in range(255):
        exp[i] = x
        log[x] = i
        x ^= _xtime(x)
    table = bytearray(256)
    for value in range(256):
        inv = 0 if value == 0 else exp[(255 - log[value]) % 255]
        s = inv
        for shift in range(1, 5):
            s ^= ((inv << shift) | (inv >> (8 - shift))) & 0xFF
        table[value] = s ^ 0x63
    return bytes(table)


SBOX = _build_sbox()
XTIME = bytes(_xtime(a) for a in range(256))
RCON = (0x01, 0x02, 0x04, 0x08, 0x10, 0x20, 0x40, 0x80, 0x1B, 0x36)


@attr.frozen
class AesKeySchedule:
    round_keys: tuple


def aes128_expand(key):
    """FIPS-197 key expansion of a 16-byte key into 11 round keys."""
    if len(key) != 16:
        raise UsageError(f"AES-128 key must be 16 bytes, got {len(key)}")
    words = [list(key[i:i + 4]) for i in range(0, 16, 4)]
    for i in range(4, 44):
        temp = list(words[i - 1])
        if i % 4 == 0:
            temp = [SBOX[b] for b in temp[1:] + temp[:1]]
            temp[0] ^= RCON[i // 4 - 1]
        words.append([w ^ t for w, t in zip(words[i - 4], temp)])
    return AesKeySchedule(tuple(bytes(sum(words[4 * r:4 * r + 4], [])) for r in range(11)))


def _encrypt_block(ks, block):
    state = [b ^ k for b, k in zip(block, ks.round_keys[0])]
    for rnd in range(1, 11):
        s = [SBOX[b] for b in state]
        # ShiftRows: row r rotates left by r columns
        s = [s[(r + 4 * ((c + r) % 4))] for c in range(4) for r in range(4)]
        if rnd != 10:
            mixed = []
            for c in range(0, 16, 4):
                a0, a1, a2, a3 = s[c:c + 4]
                total = a0 ^ a1 ^ a2 ^ a3
                mixed += [a0 ^ total ^ XTIME[a0 ^ a1], a1 ^ total ^ XTIME[a1 ^ a2],
                          a2 ^ total ^ XTIME[a2 ^ a3], a3 ^ total ^ XTIME[a3 ^ a0]]
            s = mixed
        state = [b ^ k for b, k in zip(s, ks.round_keys[rnd])]
    return bytes(state)


def aes128_encrypt(ks, block):
    """Encrypt one 16-byte block (11 cycles)."""
    if len(block) != BLOCK_SIZE:
        raise UsageError(f"AES block must be 16 bytes, got {len(block)}")
    charge("aes_blocks")
    return _encrypt_block(ks, block)


# -- GHASH / GCM --------------------------------------------------------

# 11100001 || 0^120
GHASH_R = 0xE1 << 120


def _stages(instance, attribute, value):
    if value not in GHASH_STAGES:
        raise UsageError(f"n_h must divide 128 and be a power of two, got {value}")


def _tag_length(instance, attribute, value):
    if value not in TAG_LENGTHS:
        raise UsageError(f"Tag length must be one of {TAG_LENGTHS}, got {value}")


@attr.frozen
class GcmParams:
    n_h: int = attr.field(default=4, validator=_stages)
    tag_len: int = attr.field(default=16, validator=_tag_length)


def _gf128_mul(x, v, n_h):
    """Apply the h-step 128 times, n_h steps per cycle. Returns (Z, cycles)."""
    z = 0
    cycles = 0
    i = 0
    for _ in range(128 // n_h):
        for _ in range(n_h):
            z ^= v & -((x >> (127 - i)) & 1)
            v = (v >> 1) ^ (GHASH_R & -(v & 1))
            i += 1
        cycles += 1
    return z, cycles


def ghash_mul(x, h, params=GcmParams()):
    """Product of two 16-byte blocks in GF(2^128), GCM bit order."""
    if len(x) != BLOCK_SIZE or len(h) != BLOCK_SIZE:
        raise UsageError("GHASH operands must be 16-byte blocks")
    z, cycles = _gf128_mul(int.from_bytes(x, "big"), int.from_bytes(h, "big"), params.n_h)
    charge("ghash_cycles", cycles)
    return z.to_bytes(BLOCK_SIZE, "big")


def _blocks(data):
    for offset in range(0, len(data), BLOCK_SIZE):
        yield data[offset:offset + BLOCK_SIZE].ljust(BLOCK_SIZE, b"\x00")


def _ghash(h, aad, ct):
    y = 0
    lengths = ((8 * len(aad)) << 64 | (8 * len(ct))).to_bytes(BLOCK_SIZE, "big")
    for block in (*_blocks(aad), *_blocks(ct), lengths):
        y, _ = _gf128_mul(y ^ int.from_bytes(block, "big"), h, 4)
    return y


def _inc32(counter):
    low = (int.from_bytes(counter[12:], "big") + 1) & 0xFFFFFFFF
    return counter[:12] + low.to_bytes(4, "big")


def _gctr(ks, counter, data):
    out = bytearray()
    for offset in range(0, len(data), BLOCK_SIZE):
        chunk = data[offset:offset + BLOCK_SIZE]
        stream = _encrypt_block(ks, counter)
        out += bytes(a ^ b for a, b in zip(chunk, stream))
        counter = _inc32(counter)
    return bytes(out)


def _gcm_core(key, iv, aad, text, encrypting):
    ks = key if isinstance(key, AesKeySchedule) else aes128_expand(key)
    if len(iv) != GCM_IV_SIZE:
        raise UsageError(f"GCM IV must be 12 bytes, got {len(iv)}")
    if len(aad) >= GCM_MAX_INPUT or len(text) >= GCM_MAX_INPUT:
        raise UsageError("GCM inputs must be shorter than 2^32 bytes")
    charge("gcm_calls")
    charge("gcm_aad_blocks", math.ceil(len(aad) / BLOCK_SIZE))
    charge("gcm_pt_blocks", math.ceil(len(text) / BLOCK_SIZE))
    h = int.from_bytes(_encrypt_block(ks, bytes(BLOCK_SIZE)), "big")
    j0 = bytes(iv) + b"\x00\x00\x00\x01"
    if encrypting:
        ct = _gctr(ks, _inc32(j0), text)
    else:
        ct = bytes(text)
    s = _ghash(h, aad, ct)
    full_tag = (int.from_bytes(_encrypt_block(ks, j0), "big") ^ s).to_bytes(BLOCK_SIZE, "big")
    return ks, j0, ct, full_tag


def gcm_seal(key, iv, aad, pt, params=GcmParams()):
    """
    AES-GCM authenticated encryption with a 96-bit IV.

    Args:
        key: 16-byte key or an expanded AesKeySchedule
        iv: 12-byte nonce
        aad: Associated data
        pt: Plaintext
        params: GcmParams (tag length)

    Returns:
        tuple: (ciphertext, tag truncated to params.tag_len)
    """
    _, _, ct, tag = _gcm_core(key, iv, aad, pt, encrypting=True)
    return ct, tag[:params.tag_len]


def gcm_open(key, iv, aad, ct, tag, params=GcmParams()):
    """Verify then decrypt; raises AuthenticationError without releasing plaintext."""
    ks, j0, _, expected = _gcm_core(key, iv, aad, ct, encrypting=False)
    if len(tag) != params.tag_len or not hmac.compare_digest(expected[:params.tag_len], bytes(tag)):
        raise AuthenticationError("GCM tag mismatch")
    return _gctr(ks, _inc32(j0), ct)


# -- SHA2-256 -----------------------------------------------------------

def _primes(count):
    found = []
    candidate = 2
    while len(found) < count:
        if all(candidate % p for p in found):
            found.append(candidate)
        candidate += 1
    return found


def _icbrt(n):
    x = 1 << -(-n.bit_length() // 3)
    while True:
        y = (2 * x + n // (x * x)) // 3
        if y >= x:
            return x
        x = y


# Fractional parts of square roots (H) and cube roots (K) of the first primes
SHA256_H0 = tuple(math.isqrt(p << 64) & 0xFFFFFFFF for p in _primes(8))
SHA256_K = tuple(_icbrt(p << 96) & 0xFFFFFFFF for p in _primes(64))

_MASK32 = 0xFFFFFFFF
SHA_BLOCK = 64
SHA_MAX_BITS = 1 << 64


def _rotr(x, n):
    return ((x >> n) | (x << (32 - n))) & _MASK32


def _compress(h, block):
    w = [int.from_bytes(block[i:i + 4], "big") for i in range(0, 64, 4)]
    for t in range(16, 64):
        s0 = _rotr(w[t - 15], 7) ^ _rotr(w[t - 15], 18) ^ (w[t - 15] >> 3)
        s1 = _rotr(w[t - 2], 17) ^ _rotr(w[t - 2], 19) ^ (w[t - 2] >> 10)
        w.append((w[t - 16] + s0 + w[t - 7] + s1) & _MASK32)
    a, b, c, d, e, f, g, hh = h
    for t in range(64):
        sigma1 = _rotr(e, 6) ^ _rotr(e, 11) ^ _rotr(e, 25)
        ch = (e & f) ^ (~e & g)
        t1 = (hh + sigma1 + ch + SHA256_K[t] + w[t]) & _MASK32
        sigma0 = _rotr(a, 2) ^ _rotr(a, 13) ^ _rotr(a, 22)
        maj = (a & b) ^ (a & c) ^ (b & c)
        t2 = (sigma0 + maj) & _MASK32
        hh, g, f, e, d, c, b, a = g, f, e, (d + t1) & _MASK32, c, b, a, (t1 + t2) & _MASK32
    charge("sha_blocks")
    return [(x + y) & _MASK32 for x, y in zip(h, (a, b, c, d, e, f, g, hh))]


@attr.define
class Sha256State:
    """
    Resumable SHA2-256 state: chaining values, bit counter, pending bytes.

    Serialized layout: H0-H7 (32 bytes, big-endian words) || bit_count
    (8 bytes) || pending length (1 byte) || pending.
    """
    h: list = attr.Factory(lambda: list(SHA256_H0))
    bit_count: int = 0
    pending: bytearray = attr.Factory(bytearray)

    def copy(self):
        return Sha256State(list(self.h), self.bit_count, bytearray(self.pending))

    def to_bytes(self):
        return (b"".join(x.to_bytes(4, "big") for x in self.h)
                + self.bit_count.to_bytes(8, "big")
                + bytes([len(self.pending)]) + bytes(self.pending))

    @classmethod
    def from_bytes(cls, data):
        if len(data) < 41:
            raise UsageError(f"SHA-256 state needs at least 41 bytes, got {len(data)}")
        pending_len = data[40]
        if pending_len >= SHA_BLOCK or len(data) != 41 + pending_len:
            raise UsageError("Inconsistent pending length in SHA-256 state")
        bit_count = int.from_bytes(data[32:40], "big")
        if bit_count % 8 or (bit_count // 8) % SHA_BLOCK != pending_len:
            raise UsageError("Bit counter does not match the pending buffer")
        h = [int.from_bytes(data[i:i + 4], "big") for i in range(0, 32, 4)]
        return cls(h, bit_count, bytearray(data[41:]))


def sha256_absorb(state, data):
    """Append bytes; every completed 64-byte block is digested immediately."""
    if state.bit_count + 8 * len(data) >= SHA_MAX_BITS:
        raise UsageError("SHA-256 input exceeds 2^64 bits")
    state.bit_count += 8 * len(data)
    state.pending += data
    if len(state.pending) >= SHA_BLOCK:
        full = len(state.pending) - len(state.pending) % SHA_BLOCK
        view = bytes(state.pending[:full])
        for offset in range(0, full, SHA_BLOCK):
            state.h = _compress(state.h, view[offset:offset + SHA_BLOCK])
        del state.pending[:full]
    return state


def sha256_finalize(state):
    """Digest of everything absorbed so far; the state itself is left untouched."""
    h = list(state.h)
    tail = bytes(state.pending) + b"\x80"
    tail += b"\x00" * ((56 - len(tail)) % SHA_BLOCK)
    tail += state.bit_count.to_bytes(8, "big")
    for offset in range(0, len(tail), SHA_BLOCK):
        h = _compress(h, tail[offset:offset + SHA_BLOCK])
    return b"".join(x.to_bytes(4, "big") for x in h)


def sha256(data):
    return sha256_finalize(sha256_absorb(Sha256State(), data))


HMAC_BLOCK = 64


def hmac_sha256(key, msg):
    """HMAC-SHA256: inner pass with 0x36 pads, outer pass with 0x5C pads."""
    if len(key) > HMAC_BLOCK:
        key = sha256(key)
    key = key.ljust(HMAC_BLOCK, b"\x00")
    inner = sha256(bytes(k ^ 0x36 for k in key) + msg)
    return sha256(bytes(k ^ 0x5C for k in key) + inner)
