import pytest

from utils.cert import (CachedInfoStore, CertChainPolicy, CertMode, certificate_summary, encode_oid, format_time,
                        issue_certificate, make_ca, make_identity, make_name, parse_certificate, reencode, validate)
from utils.costmodel import CostLedger, metering
from utils.curve import generator_cache
from utils.errors import CertErrorCode, CertificateError, UsageError

ONE_YEAR = 365 * 86400


@pytest.fixture(scope="module")
def pki(p256):
    cache = generator_cache(p256)
    ca = make_ca(cache, b"cert-tests")
    leaf = make_identity(cache, b"cert-tests", "leaf.dtls-engine.test")
    cert = issue_certificate(cache, ca, leaf, serial=5)
    return cache, ca, leaf, cert


def policy_for(pki, **overrides):
    cache, ca, _, _ = pki
    settings = dict(point_cache=cache, ca_public_key=ca.public_key, clock=ONE_YEAR, ca_name=ca.name)
    settings.update(overrides)
    return CertChainPolicy(**settings)


def error_code(excinfo):
    return excinfo.value.code


def test_parse_round_trip(pki, p256):
    _, ca, leaf, cert = pki
    parsed = parse_certificate(cert.der, p256)
    assert parsed.fields == cert.fields
    assert parsed.spki_point == leaf.public_key
    assert parsed.issuer == ca.name
    assert parsed.subject == leaf.name
    assert parsed.serial == b"\x05"
    assert reencode(parsed, p256) == cert.der


def test_tbs_span_is_contiguous(pki):
    cert = pki[3]
    start = cert.der.index(cert.tbs_bytes)
    assert start in (2, 3, 4)
    assert cert.tbs_bytes[0] == 0x30


def test_summary(pki):
    summary = certificate_summary(pki[3])
    assert summary["serial"] == "05"
    assert summary["curve"] == "P-256"
    assert summary["not_before"] == "20000101000000Z"
    assert summary["fingerprint"] == pki[3].fingerprint.hex()


def test_format_time():
    assert format_time(0) == "20000101000000Z"
    assert format_time(86400 + 61) == "20000102000101Z"
    with pytest.raises(UsageError):
        format_time(-1)


def test_oid_encoding():
    assert encode_oid("1.2.840.10045.3.1.7").hex() == "06082a8648ce3d030107"


def test_valid_certificate_costs_two_ecsm(pki):
    ledger = CostLedger()
    with metering(ledger):
        validate(pki[3], policy_for(pki))
    assert ledger.ecsm[256] == 2
    assert ledger.ecdsa_verify == 1


def test_expired(pki):
    with pytest.raises(CertificateError) as excinfo:
        validate(pki[3], policy_for(pki, clock=11 * ONE_YEAR))
    assert error_code(excinfo) == CertErrorCode.EXPIRED


def test_not_yet_valid(pki):
    cache, ca, leaf, _ = pki
    future = issue_certificate(cache, ca, leaf, serial=6, not_before=2 * ONE_YEAR, not_after=3 * ONE_YEAR)
    with pytest.raises(CertificateError) as excinfo:
        validate(future, policy_for(pki))
    assert error_code(excinfo) == CertErrorCode.NOT_YET_VALID


def test_bad_signature(pki, p256):
    der = bytearray(pki[3].der)
    der[-1] ^= 0x01
    tampered = parse_certificate(bytes(der), p256)
    with pytest.raises(CertificateError) as excinfo:
        validate(tampered, policy_for(pki))
    assert error_code(excinfo) == CertErrorCode.BAD_SIGNATURE


def test_wrong_ca_key(pki, p256):
    cache = pki[0]
    other = make_ca(cache, b"someone else")
    with pytest.raises(CertificateError) as excinfo:
        validate(pki[3], policy_for(pki, ca_public_key=other.public_key))
    assert error_code(excinfo) == CertErrorCode.BAD_SIGNATURE


def test_unknown_issuer(pki):
    with pytest.raises(CertificateError) as excinfo:
        validate(pki[3], policy_for(pki, ca_name=make_name("Another CA")))
    assert error_code(excinfo) == CertErrorCode.UNKNOWN_CA


def test_cached_mode_stores_then_skips_signature(pki):
    store = CachedInfoStore()
    policy = policy_for(pki, mode=CertMode.CACHED, store=store)
    validate(pki[3], policy)
    assert pki[3].fingerprint in store
    ledger = CostLedger()
    with metering(ledger):
        validate(pki[3], policy)
    assert sum(ledger.ecsm.values()) == 0


def test_cached_mode_still_checks_validity_window(pki):
    store = CachedInfoStore()
    store.put(pki[3])
    with pytest.raises(CertificateError) as excinfo:
        validate(pki[3], policy_for(pki, mode=CertMode.CACHED, store=store, clock=11 * ONE_YEAR))
    assert error_code(excinfo) == CertErrorCode.EXPIRED


def test_full_mode_does_not_store(pki):
    store = CachedInfoStore()
    validate(pki[3], policy_for(pki, store=store))
    assert len(store) == 0


@pytest.mark.parametrize("mutate, code", [
    (lambda der: der[:-1], CertErrorCode.TRUNCATED),
    (lambda der: der + b"\x00", CertErrorCode.TRAILING_DATA),
    (lambda der: b"\x31" + der[1:], CertErrorCode.TAG_MISMATCH),
    (lambda der: der[:1] + b"\x80" + der[2:], CertErrorCode.INDEFINITE_LENGTH),
    (lambda der: bytes(4097), CertErrorCode.OVERSIZE),
])
def test_structural_errors(pki, p256, mutate, code):
    with pytest.raises(CertificateError) as excinfo:
        parse_certificate(mutate(pki[3].der), p256)
    assert error_code(excinfo) == code


def test_other_curve_rejected(pki):
    from utils.curve import Curve

    with pytest.raises(CertificateError) as excinfo:
        parse_certificate(pki[3].der, Curve.from_preset("P-192"))
    assert error_code(excinfo) == CertErrorCode.UNSUPPORTED_CURVE


@pytest.mark.parametrize("inputs", [300, pytest.param(50_000, marks=pytest.mark.slow)])
def test_parser_never_crashes(pki, p256, rng, inputs):
    der = pki[3].der
    for _ in range(inputs):
        candidate = bytearray(der)
        for _ in range(rng.integers(1, 4)):
            candidate[rng.integers(len(candidate))] = rng.integers(256)
        try:
            parse_certificate(bytes(candidate), p256)
        except CertificateError:
            pass
    for _ in range(inputs):
        try:
            parse_certificate(rng.bytes(rng.integers(0, 300)), p256)
        except CertificateError:
            pass
