import hashlib
import hmac as std_hmac
import os

import pytest

from utils.costmodel import CostLedger, metering
from utils.errors import AuthenticationError, UsageError
from utils.symmetric import (GcmParams, Sha256State, aes128_encrypt, aes128_expand, gcm_open, gcm_seal,
                             ghash_mul, hmac_sha256, sha256, sha256_absorb, sha256_finalize)


def ghash_reference(x, y):
    """Bit-by-bit GF(2^128) product in GCM bit order."""
    x, v = int.from_bytes(x, "big"), int.from_bytes(y, "big")
    z = 0
    for i in range(128):
        if (x >> (127 - i)) & 1:
            z ^= v
        v = (v >> 1) ^ (0xE1 << 120) if v & 1 else v >> 1
    return z.to_bytes(16, "big")


@pytest.mark.parametrize("key, block, expected", [
    ("00" * 16, "00" * 16, "66e94bd4ef8a2c3b884cfa59ca342b2e"),
    ("000102030405060708090a0b0c0d0e0f", "00112233445566778899aabbccddeeff", "69c4e0d86a7b0430d8cdb78070b4c55a"),
    ("2b7e151628aed2a6abf7158809cf4f3c", "3243f6a8885a308d313198a2e0370734", "3925841d02dc09fbdc118597196a0b32"),
])
def test_aes_known_answers(key, block, expected):
    assert aes128_encrypt(aes128_expand(bytes.fromhex(key)), bytes.fromhex(block)).hex() == expected


def test_aes_rejects_bad_sizes():
    with pytest.raises(UsageError):
        aes128_expand(bytes(15))
    with pytest.raises(UsageError):
        aes128_encrypt(aes128_expand(bytes(16)), bytes(15))


def test_aes_charges_one_block():
    ledger = CostLedger()
    with metering(ledger):
        aes128_encrypt(aes128_expand(bytes(16)), bytes(16))
    assert ledger.aes_blocks == 1
    assert ledger.aes_cycles == 11


@pytest.mark.parametrize("n_h", [1, 4, 32])
def test_ghash_stage_count_does_not_change_the_product(rng, n_h):
    for _ in range(20):
        x, h = rng.bytes(16), rng.bytes(16)
        assert ghash_mul(x, h, GcmParams(n_h=n_h)) == ghash_reference(x, h)


def test_ghash_cycles_follow_stage_count():
    ledger = CostLedger()
    with metering(ledger):
        ghash_mul(bytes(16), bytes(16), GcmParams(n_h=4))
    assert ledger.ghash_cycles == 32


def test_ghash_distributes_over_xor(rng):
    for _ in range(1000):
        x, y, h = rng.bytes(16), rng.bytes(16), rng.bytes(16)
        xor = bytes(a ^ b for a, b in zip(x, y))
        combined = bytes(a ^ b for a, b in zip(ghash_mul(x, h), ghash_mul(y, h)))
        assert ghash_mul(xor, h) == combined


def test_ghash_rejects_invalid_stage_count():
    with pytest.raises(UsageError):
        GcmParams(n_h=3)


def test_gcm_zero_vectors():
    ct, tag = gcm_seal(bytes(16), bytes(12), b"", b"")
    assert ct == b""
    assert tag.hex() == "58e2fccefa7e3061367f1d57a4e7455a"
    ct, tag = gcm_seal(bytes(16), bytes(12), b"", bytes(16))
    assert ct.hex() == "0388dace60b6a392f328c2b971b2fe78"
    assert tag.hex() == "ab6e47d42cec13bdf53a67b21257bddf"


def test_gcm_vector_with_aad():
    key = bytes.fromhex("feffe9928665731c6d6a8f9467308308")
    iv = bytes.fromhex("cafebabefacedbaddecaf888")
    pt = bytes.fromhex("d9313225f88406e5a55909c5aff5269a86a7a9531534f7da2e4c303d8a318a72"
                       "1c3c0c95956809532fcf0e2449a6b525b16aedf5aa0de657ba637b39")
    aad = bytes.fromhex("feedfacedeadbeeffeedfacedeadbeefabaddad2")
    ct, tag = gcm_seal(key, iv, aad, pt)
    assert ct.hex() == ("42831ec2217774244b7221b784d0d49ce3aa212f2c02a4e035c17e2329aca12e"
                        "21d514b25466931c7d8f6a5aac84aa051ba30b396a0aac973d58e091")
    assert tag.hex() == "5bc94fbc3221a5db94fae95ae7121a47"
    assert gcm_open(key, iv, aad, ct, tag) == pt


def test_gcm_matches_cryptography(rng):
    aead = pytest.importorskip("cryptography.hazmat.primitives.ciphers.aead")
    for length in (0, 1, 15, 16, 17, 100, 256):
        key, iv, aad, pt = rng.bytes(16), rng.bytes(12), rng.bytes(length % 40), rng.bytes(length)
        ct, tag = gcm_seal(key, iv, aad, pt)
        assert ct + tag == aead.AESGCM(key).encrypt(iv, pt, aad)


@pytest.mark.parametrize("tag_len", [4, 8, 12, 16])
def test_truncated_tags_round_trip(tag_len):
    params = GcmParams(tag_len=tag_len)
    ct, tag = gcm_seal(bytes(16), bytes(12), b"hdr", b"payload", params)
    assert len(tag) == tag_len
    assert gcm_open(bytes(16), bytes(12), b"hdr", ct, tag, params) == b"payload"


@pytest.mark.parametrize("mutations", [200, pytest.param(1000, marks=pytest.mark.slow)])
def test_gcm_open_rejects_every_single_bit_flip(rng, mutations):
    key, iv, aad, pt = rng.bytes(16), rng.bytes(12), rng.bytes(13), rng.bytes(40)
    ct, tag = gcm_seal(key, iv, aad, pt)
    fields = {"ct": ct, "aad": aad, "iv": iv, "tag": tag}
    for _ in range(mutations):
        name = rng.choice(sorted(fields))
        value = bytearray(fields[name])
        bit = rng.integers(8 * len(value))
        value[bit // 8] ^= 1 << (bit % 8)
        mutated = dict(fields, **{name: bytes(value)})
        with pytest.raises(AuthenticationError):
            gcm_open(key, mutated["iv"], mutated["aad"], mutated["ct"], mutated["tag"])


def test_gcm_rejects_wrong_iv_length():
    with pytest.raises(UsageError):
        gcm_seal(bytes(16), bytes(8), b"", b"")


def test_gcm_cycle_accounting():
    ledger = CostLedger()
    with metering(ledger):
        gcm_seal(bytes(16), bytes(12), bytes(13), bytes(40))
    assert ledger.gcm_calls == 1
    assert ledger.gcm_aad_blocks == 1
    assert ledger.gcm_pt_blocks == 3
    assert ledger.gcm_cycles == 54 + 32 * 4


@pytest.mark.parametrize("message, digest", [
    (b"", "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"),
    (b"abc", "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"),
    (b"abcdbcdecdefdefgefghfghighijhijkijkljklmklmnlmnomnopnopq",
     "248d6a61d20638b8e5c026930c3e6039a33ce45964ff2167f6ecedd419db06c1"),
])
def test_sha256_vectors(message, digest):
    assert sha256(message).hex() == digest


def test_sha256_matches_hashlib_across_block_boundaries():
    for length in (55, 56, 63, 64, 65, 119, 120, 128, 1000):
        data = os.urandom(length)
        assert sha256(data) == hashlib.sha256(data).digest()


@pytest.mark.parametrize("chunkings", [30, pytest.param(1000, marks=pytest.mark.slow)])
def test_streaming_is_chunking_invariant(rng, chunkings):
    data = rng.bytes(500)
    for _ in range(chunkings):
        state = Sha256State()
        offset = 0
        while offset < len(data):
            step = rng.integers(0, 90)
            sha256_absorb(state, data[offset:offset + step])
            offset += step
        assert sha256_finalize(state) == hashlib.sha256(data).digest()


def test_finalize_leaves_the_state_usable():
    state = sha256_absorb(Sha256State(), b"hello ")
    assert sha256_finalize(state) == hashlib.sha256(b"hello ").digest()
    sha256_absorb(state, b"world")
    assert sha256_finalize(state) == hashlib.sha256(b"hello world").digest()


def test_state_serialization_round_trip(rng):
    state = sha256_absorb(Sha256State(), rng.bytes(100))
    data = state.to_bytes()
    assert len(data) == 41 + 36
    clone = Sha256State.from_bytes(data)
    assert sha256_finalize(clone) == sha256_finalize(state)


def test_state_rejects_inconsistent_counter():
    data = bytearray(sha256_absorb(Sha256State(), b"abc").to_bytes())
    data[39] ^= 0x08
    with pytest.raises(UsageError):
        Sha256State.from_bytes(bytes(data))


def test_sha_blocks_charged():
    ledger = CostLedger()
    with metering(ledger):
        sha256(bytes(64))
    assert ledger.sha_blocks == 2
    assert ledger.sha_cycles == 130


def test_hmac_vector():
    mac = hmac_sha256(b"\x0b" * 20, b"Hi There")
    assert mac.hex() == "b0344c61d8db38535ca8afceaf0bf12b881dc200c9833da726e9376c2e32cff7"


def test_hmac_long_key_is_hashed_first():
    key = os.urandom(65)
    assert hmac_sha256(key, b"m") == hmac_sha256(sha256(key), b"m")
    assert hmac_sha256(key, b"m") == std_hmac.new(key, b"m", hashlib.sha256).digest()
