import pytest

from tests.oracles import drbg_reference, key_schedule_reference
from utils.costmodel import CostLedger, metering
from utils.errors import ReseedRequiredError, UsageError
from utils.kdf import (DRBG_MAX_GENERATES, EMPTY_HASH, KeySchedule, Stage, bits_to_int, derive_secret,
                       drbg_generate, drbg_instantiate, finished_key, hkdf_expand, hkdf_expand_label,
                       hkdf_extract, hkdf_label, key_schedule_advance, traffic_keys)
from utils.symmetric import hmac_sha256, sha256

IKM = b"\x0b" * 22
SALT = bytes(range(13))
INFO = bytes(range(0xf0, 0xfa))


def test_hkdf_published_vector():
    prk = hkdf_extract(SALT, IKM)
    assert prk.hex() == "077709362c2e32df0ddc3f0dc47bba6390b6c73bb50f9c3122ec844ad7c2b3e5"
    okm = hkdf_expand(prk, INFO, 42)
    assert okm.hex() == ("3cb25f25faacd57a90434f64d0362f2a2d2d0a90cf1a5a4c5db02d56ecc4c5bf"
                         "34007208d5b887185865")


def test_extract_with_empty_salt_uses_zeros():
    assert hkdf_extract(b"", IKM) == hmac_sha256(bytes(32), IKM)


def test_expand_length_limit():
    assert len(hkdf_expand(bytes(32), b"", 255 * 32)) == 8160
    with pytest.raises(UsageError):
        hkdf_expand(bytes(32), b"", 255 * 32 + 1)


def test_hkdf_matches_cryptography():
    hkdf_module = pytest.importorskip("cryptography.hazmat.primitives.kdf.hkdf")
    hashes = pytest.importorskip("cryptography.hazmat.primitives.hashes")
    expected = hkdf_module.HKDF(algorithm=hashes.SHA256(), length=100, salt=SALT, info=INFO).derive(IKM)
    assert hkdf_expand(hkdf_extract(SALT, IKM), INFO, 100) == expected


def test_hkdf_label_layout():
    info = hkdf_label(b"c hs traffic", bytes(32), 32)
    assert info[:2] == b"\x00\x20"
    assert info[2:7] == b"tls13"
    assert info[7] == len(b"c hs traffic")
    assert info[8:20] == b"c hs traffic"
    assert info[20] == 32
    assert len(info) == 2 + 5 + 1 + 12 + 1 + 32


def test_long_labels_rejected():
    with pytest.raises(UsageError):
        hkdf_label(b"x" * 250, b"", 32)


def test_derive_secret_needs_a_full_hash():
    with pytest.raises(UsageError):
        derive_secret(bytes(32), b"derived", b"short")
    assert derive_secret(bytes(32), b"derived", EMPTY_HASH) == hkdf_expand_label(bytes(32), b"derived", EMPTY_HASH, 32)


def test_drbg_matches_reference():
    seed = bytes(range(48))
    state = drbg_instantiate(seed)
    outputs = [drbg_generate(state, 256) for _ in range(3)]
    assert outputs == drbg_reference(seed, 256, calls=3)
    assert state.generate_count == 3


def test_drbg_update_runs_between_calls():
    a = drbg_instantiate(b"seed")
    b = drbg_instantiate(b"seed")
    assert drbg_generate(a, 512) != drbg_generate(b, 256) + drbg_generate(b, 256)


def test_drbg_partial_bits_are_masked():
    out = drbg_generate(drbg_instantiate(b"seed"), 12)
    assert len(out) == 2
    assert out[1] & 0x0F == 0
    assert bits_to_int(out, 12) == int.from_bytes(out, "big") >> 4


def test_drbg_limits():
    state = drbg_instantiate(b"seed")
    with pytest.raises(UsageError):
        drbg_generate(state, (1 << 19) + 1)
    state.generate_count = DRBG_MAX_GENERATES
    with pytest.raises(ReseedRequiredError):
        drbg_generate(state, 8)
    with pytest.raises(UsageError):
        drbg_instantiate(b"")


def test_drbg_bit_frequency():
    state = drbg_instantiate(b"frequency")
    data = b"".join(drbg_generate(state, 256) for _ in range(40))
    ones = sum(bin(byte).count("1") for byte in data)
    assert 0.48 <= ones / (8 * len(data)) <= 0.52


def test_drbg_generate_is_counted():
    ledger = CostLedger()
    with metering(ledger):
        state = drbg_instantiate(b"x")
        drbg_generate(state, 256)
        drbg_generate(state, 256)
    assert ledger.drbg_generate == 2


def test_key_schedule_matches_reference():
    ecdhe, hello, finished = sha256(b"ecdhe"), sha256(b"hello"), sha256(b"finished")
    ks = KeySchedule()
    key_schedule_advance(ks)
    key_schedule_advance(ks, ecdhe=ecdhe, transcript_hash=hello)
    key_schedule_advance(ks, transcript_hash=finished)
    expected = key_schedule_reference(ecdhe, hello, finished)
    assert {name: ks.secret(name) for name in expected} == expected
    assert [step for step, _ in ks.derive_chain()] == list(expected)


def test_zero_psk_rule():
    ks = key_schedule_advance(KeySchedule())
    assert ks.early_secret == hkdf_extract(bytes(32), bytes(32))


def test_secrets_are_gated_by_stage():
    ks = key_schedule_advance(KeySchedule())
    assert ks.stage == Stage.EARLY_DONE
    with pytest.raises(UsageError):
        ks.secret("client_hs_traffic")
    with pytest.raises(UsageError):
        key_schedule_advance(ks)


def test_completed_schedule_cannot_advance():
    ks = KeySchedule()
    key_schedule_advance(ks)
    key_schedule_advance(ks, ecdhe=bytes(32), transcript_hash=bytes(32))
    key_schedule_advance(ks, transcript_hash=bytes(32))
    with pytest.raises(UsageError):
        key_schedule_advance(ks)


def test_traffic_keys_and_finished_key():
    secret = sha256(b"traffic")
    keys = traffic_keys(secret)
    assert keys.aead_key == hkdf_expand_label(secret, b"key", b"", 16)
    assert keys.aead_iv == hkdf_expand_label(secret, b"iv", b"", 12)
    assert finished_key(secret) == hkdf_expand_label(secret, b"finished", b"", 32)
