#!/usr/bin/env python

"""
Single-level X.509 profile for ECDSA/SHA-256 leaf certificates signed directly
by a provisioned CA.

The parser accepts distinguished encoding only (definite minimal lengths,
minimal integers, canonical times), so every accepted certificate re-encodes
to the identical byte string.
"""

import enum
import logging
from datetime import datetime, timedelta, timezone

import attr

from utils.curve import ecdsa_sign, ecdsa_verify, keypair_from_seed
from utils.errors import CertErrorCode, CertificateError, UsageError, ValidationError
from utils.symmetric import sha256

# Configure logging
logger = logging.getLogger(__name__)

MAX_CERT_SIZE = 4096
MAX_INTEGER_BYTES = 33
VERSION_V3 = 2

TAG_INTEGER = 0x02
TAG_BIT_STRING = 0x03
TAG_OID = 0x06
TAG_UTF8 = 0x0C
TAG_GENERALIZED_TIME = 0x18
TAG_SEQUENCE = 0x30
TAG_SET = 0x31
TAG_VERSION = 0xA0

OID_ECDSA_SHA256 = "1.2.840.10045.4.3.2"
OID_EC_PUBLIC_KEY = "1.2.840.10045.2.1"
OID_COMMON_NAME = "2.5.4.3"
CURVE_OIDS = {
    "P-160": "1.3.132.0.8",
    "P-192": "1.2.840.10045.3.1.1",
    "P-224": "1.3.132.0.33",
    "P-256": "1.2.840.10045.3.1.7",
}

VIRTUAL_EPOCH = datetime(2000, 1, 1, tzinfo=timezone.utc)
TIME_FORMAT = "%Y%m%d%H%M%SZ"


def _fail(code, message=""):
    raise CertificateError(code, message)


# -- DER writer ---------------------------------------------------------

def _length(n):
    if n < 0x80:
        return bytes([n])
    body = n.to_bytes((n.bit_length() + 7) // 8, "big")
    return bytes([0x80 | len(body)]) + body


def tlv(tag, content):
    return bytes([tag]) + _length(len(content)) + content


def integer_content(value):
    """Minimal two's-complement content octets of a non-negative integer."""
    if value < 0:
        raise UsageError("Only non-negative INTEGERs are encoded")
    return value.to_bytes(value.bit_length() // 8 + 1, "big")


def encode_oid(dotted):
    arcs = [int(arc) for arc in dotted.split(".")]
    body = bytearray([40 * arcs[0] + arcs[1]])
    for arc in arcs[2:]:
        chunk = [arc & 0x7F]
        arc >>= 7
        while arc:
            chunk.append(0x80 | (arc & 0x7F))
            arc >>= 7
        body += bytes(reversed(chunk))
    return tlv(TAG_OID, bytes(body))


def format_time(seconds):
    """GeneralizedTime text for virtual seconds since 2000-01-01T00:00:00Z."""
    if seconds < 0:
        raise UsageError("Virtual time cannot precede the epoch")
    return (VIRTUAL_EPOCH + timedelta(seconds=seconds)).strftime(TIME_FORMAT)


def make_name(common_name):
    """Name with a single CN attribute; names are compared as opaque bytes afterwards."""
    atv = tlv(TAG_SEQUENCE, encode_oid(OID_COMMON_NAME) + tlv(TAG_UTF8, common_name.encode("utf-8")))
    return tlv(TAG_SEQUENCE, tlv(TAG_SET, atv))


# -- DER reader ---------------------------------------------------------

class _Reader:
    """Cursor over a bounded span of DER input."""

    def __init__(self, data, start=0, end=None):
        self.data = data
        self.pos = start
        self.end = len(data) if end is None else end

    def at_end(self):
        return self.pos >= self.end

    def read(self, tag):
        """Consume one TLV of the expected tag; returns (content_start, content_end)."""
        data, pos, end = self.data, self.pos, self.end
        if pos + 2 > end:
            _fail(CertErrorCode.TRUNCATED, f"header at offset {pos}")
        if data[pos] != tag:
            _fail(CertErrorCode.TAG_MISMATCH, f"expected 0x{tag:02x} at offset {pos}, got 0x{data[pos]:02x}")
        first = data[pos + 1]
        pos += 2
        if first == 0x80:
            _fail(CertErrorCode.INDEFINITE_LENGTH, f"at offset {pos - 2}")
        if first < 0x80:
            length = first
        else:
            count = first & 0x7F
            if count > 2:
                _fail(CertErrorCode.OVERSIZE, f"{count} length octets")
            if pos + count > end:
                _fail(CertErrorCode.TRUNCATED, "length octets")
            length = int.from_bytes(data[pos:pos + count], "big")
            if data[pos] == 0 or length < 0x80:
                _fail(CertErrorCode.NON_CANONICAL, "length not in minimal form")
            pos += count
        if pos + length > end:
            _fail(CertErrorCode.TRUNCATED, f"content of 0x{tag:02x} runs past its container")
        self.pos = pos + length
        return pos, pos + length

    def enter(self, tag):
        start, stop = self.read(tag)
        return _Reader(self.data, start, stop)

    def raw(self, tag):
        """Complete TLV bytes of the next element."""
        begin = self.pos
        _, stop = self.read(tag)
        return bytes(self.data[begin:stop])

    def integer(self):
        start, stop = self.read(TAG_INTEGER)
        content = self.data[start:stop]
        if not content:
            _fail(CertErrorCode.LENGTH_MISMATCH, "empty INTEGER")
        if len(content) > MAX_INTEGER_BYTES:
            _fail(CertErrorCode.OVERSIZE, "INTEGER too long")
        if content[0] & 0x80:
            _fail(CertErrorCode.NON_CANONICAL, "negative INTEGER")
        if len(content) > 1 and content[0] == 0 and not content[1] & 0x80:
            _fail(CertErrorCode.NON_CANONICAL, "INTEGER with redundant leading zero")
        return bytes(content)

    def oid(self):
        begin = self.pos
        self.read(TAG_OID)
        return bytes(self.data[begin:self.pos])

    def finish(self, what):
        if not self.at_end():
            _fail(CertErrorCode.TRAILING_DATA, f"{self.end - self.pos} bytes after {what}")


def _parse_time(text):
    try:
        decoded = text.decode("ascii")
    except UnicodeDecodeError:
        _fail(CertErrorCode.BAD_TIME, "non-ASCII time")
    if len(decoded) != 15 or not decoded[:14].isdigit() or decoded[14] != "Z":
        _fail(CertErrorCode.BAD_TIME, f"'{decoded}' is not YYYYMMDDHHMMSSZ")
    try:
        moment = datetime.strptime(decoded, TIME_FORMAT).replace(tzinfo=timezone.utc)
    except ValueError:
        _fail(CertErrorCode.BAD_TIME, f"'{decoded}' is not a calendar time")
    seconds = int((moment - VIRTUAL_EPOCH).total_seconds())
    if seconds < 0 or format_time(seconds) != decoded:
        _fail(CertErrorCode.BAD_TIME, f"'{decoded}' is outside the virtual time range")
    return seconds


# -- certificate records -------------------------------------------------

@attr.frozen
class CertificateFields:
    serial: bytes
    issuer: bytes
    subject: bytes
    not_before: int
    not_after: int
    public_key: object
    curve_name: str


@attr.frozen
class Certificate:
    fields: CertificateFields
    sig: tuple
    tbs_bytes: bytes
    der: bytes
    fingerprint: bytes = attr.field()

    @fingerprint.default
    def _fingerprint(self):
        return sha256(self.der)

    @property
    def serial(self):
        return self.fields.serial

    @property
    def issuer(self):
        return self.fields.issuer

    @property
    def subject(self):
        return self.fields.subject

    @property
    def not_before(self):
        return self.fields.not_before

    @property
    def not_after(self):
        return self.fields.not_after

    @property
    def spki_point(self):
        return self.fields.public_key


def _algorithm():
    return tlv(TAG_SEQUENCE, encode_oid(OID_ECDSA_SHA256))


def encode_tbs(fields, curve):
    if fields.curve_name not in CURVE_OIDS:
        raise UsageError(f"No certificate profile for curve {fields.curve_name}")
    if fields.not_before > fields.not_after:
        raise UsageError("not_before is later than not_after")
    if not fields.serial or integer_content(int.from_bytes(fields.serial, "big")) != fields.serial:
        raise UsageError("Serial must be minimal INTEGER content")
    spki = tlv(TAG_SEQUENCE,
               tlv(TAG_SEQUENCE, encode_oid(OID_EC_PUBLIC_KEY) + encode_oid(CURVE_OIDS[fields.curve_name]))
               + tlv(TAG_BIT_STRING, b"\x00" + curve.encode_point(fields.public_key)))
    validity = tlv(TAG_SEQUENCE,
                   tlv(TAG_GENERALIZED_TIME, format_time(fields.not_before).encode("ascii"))
                   + tlv(TAG_GENERALIZED_TIME, format_time(fields.not_after).encode("ascii")))
    body = (tlv(TAG_VERSION, tlv(TAG_INTEGER, bytes([VERSION_V3])))
            + tlv(TAG_INTEGER, fields.serial)
            + _algorithm()
            + fields.issuer
            + validity
            + fields.subject
            + spki)
    return tlv(TAG_SEQUENCE, body)


def assemble_certificate(tbs, sig):
    signature = tlv(TAG_SEQUENCE, tlv(TAG_INTEGER, integer_content(sig[0])) + tlv(TAG_INTEGER, integer_content(sig[1])))
    return tlv(TAG_SEQUENCE, tbs + _algorithm() + tlv(TAG_BIT_STRING, b"\x00" + signature))


def encode_certificate(fields, ca_private_key, cache):
    """
    Sign and encode a certificate.

    Args:
        fields: CertificateFields of the leaf
        ca_private_key: CA signing scalar
        cache: PointCache of the curve (holds the generator table)

    Returns:
        bytes: DER encoding
    """
    tbs = encode_tbs(fields, cache.curve)
    sig = ecdsa_sign(cache, ca_private_key, sha256(tbs))
    return assemble_certificate(tbs, sig)


def reencode(cert, curve):
    """DER rebuilt from the parsed fields and signature."""
    return assemble_certificate(encode_tbs(cert.fields, curve), cert.sig)


def parse_certificate(der, curve):
    """
    Strict parse of the certificate profile.

    Raises:
        CertificateError: with a code naming the first violation found
    """
    der = bytes(der)
    if len(der) > MAX_CERT_SIZE:
        _fail(CertErrorCode.OVERSIZE, f"{len(der)} bytes")
    outer_reader = _Reader(der)
    cert_reader = outer_reader.enter(TAG_SEQUENCE)
    outer_reader.finish("certificate")

    tbs_begin = cert_reader.pos
    tbs = cert_reader.enter(TAG_SEQUENCE)
    tbs_bytes = der[tbs_begin:cert_reader.pos]

    version = tbs.enter(TAG_VERSION)
    if version.integer() != bytes([VERSION_V3]):
        _fail(CertErrorCode.UNSUPPORTED_VERSION)
    version.finish("version")
    serial = tbs.integer()
    _expect_algorithm(tbs.enter(TAG_SEQUENCE))
    issuer = tbs.raw(TAG_SEQUENCE)

    validity = tbs.enter(TAG_SEQUENCE)
    times = []
    for _ in range(2):
        start, stop = validity.read(TAG_GENERALIZED_TIME)
        times.append(_parse_time(der[start:stop]))
    validity.finish("validity")
    if times[0] > times[1]:
        _fail(CertErrorCode.BAD_TIME, "not_before is later than not_after")

    subject = tbs.raw(TAG_SEQUENCE)
    point = _parse_spki(tbs.enter(TAG_SEQUENCE), curve)
    tbs.finish("tbsCertificate")

    _expect_algorithm(cert_reader.enter(TAG_SEQUENCE))
    sig = _parse_signature(cert_reader)
    cert_reader.finish("signature")

    fields = CertificateFields(serial=serial, issuer=issuer, subject=subject, not_before=times[0],
                               not_after=times[1], public_key=point, curve_name=curve.name)
    return Certificate(fields=fields, sig=sig, tbs_bytes=tbs_bytes, der=der)


def _expect_algorithm(reader):
    if reader.oid() != encode_oid(OID_ECDSA_SHA256):
        _fail(CertErrorCode.UNSUPPORTED_ALGORITHM)
    reader.finish("algorithm identifier")


def _bit_string(reader):
    start, stop = reader.read(TAG_BIT_STRING)
    if stop == start or reader.data[start] != 0:
        _fail(CertErrorCode.NON_CANONICAL, "BIT STRING with unused bits")
    return start + 1, stop


def _parse_spki(reader, curve):
    algorithm = reader.enter(TAG_SEQUENCE)
    if algorithm.oid() != encode_oid(OID_EC_PUBLIC_KEY):
        _fail(CertErrorCode.UNSUPPORTED_ALGORITHM, "public key is not an EC key")
    curve_oid = algorithm.oid()
    algorithm.finish("SPKI algorithm")
    if curve.name not in CURVE_OIDS or curve_oid != encode_oid(CURVE_OIDS[curve.name]):
        _fail(CertErrorCode.UNSUPPORTED_CURVE, f"key is not on {curve.name}")
    start, stop = _bit_string(reader)
    reader.finish("SPKI")
    encoded = reader.data[start:stop]
    if len(encoded) != 1 + 2 * curve.field.byte_length or encoded[0] != 0x04:
        _fail(CertErrorCode.LENGTH_MISMATCH, "public key is not an uncompressed point")
    try:
        return curve.decode_point(encoded)
    except ValidationError as e:
        _fail(CertErrorCode.OFF_CURVE_POINT, str(e))


def _parse_signature(reader):
    start, stop = _bit_string(reader)
    inner = _Reader(reader.data, start, stop)
    pair = inner.enter(TAG_SEQUENCE)
    inner.finish("signature value")
    r = int.from_bytes(pair.integer(), "big")
    s = int.from_bytes(pair.integer(), "big")
    pair.finish("signature value")
    return r, s


# -- validation ----------------------------------------------------------

class CertMode(enum.Enum):
    FULL = "full"
    CACHED = "cached"


@attr.define
class CachedInfoStore:
    """Certificates already validated, keyed by their SHA-256 fingerprint."""
    entries: dict = attr.Factory(dict)

    def put(self, cert):
        self.entries[cert.fingerprint] = cert

    def get(self, fingerprint):
        return self.entries.get(fingerprint)

    def __contains__(self, fingerprint):
        return fingerprint in self.entries

    def __len__(self):
        return len(self.entries)


@attr.define
class CertChainPolicy:
    point_cache: object
    ca_public_key: object
    clock: int = 0
    mode: CertMode = CertMode.FULL
    ca_name: bytes = None
    store: CachedInfoStore = attr.Factory(CachedInfoStore)


def _check_window(cert, clock):
    if clock < cert.not_before:
        _fail(CertErrorCode.NOT_YET_VALID, f"valid from {format_time(cert.not_before)}")
    if clock > cert.not_after:
        _fail(CertErrorCode.EXPIRED, f"expired at {format_time(cert.not_after)}")


def validate(cert, policy):
    """
    Check a parsed certificate against the CA policy.

    In cached mode a certificate whose fingerprint is in the store skips the
    signature check; the validity window is always checked.
    """
    if policy.mode == CertMode.CACHED and cert.fingerprint in policy.store:
        _check_window(cert, policy.clock)
        logger.debug("Certificate found in cached-info store, signature check skipped")
        return cert
    if policy.ca_name is not None and cert.issuer != policy.ca_name:
        _fail(CertErrorCode.UNKNOWN_CA, "issuer does not name the provisioned CA")
    _check_window(cert, policy.clock)
    if not ecdsa_verify(policy.point_cache, policy.ca_public_key, sha256(cert.tbs_bytes), cert.sig):
        _fail(CertErrorCode.BAD_SIGNATURE)
    if policy.mode == CertMode.CACHED:
        policy.store.put(cert)
    return cert


# -- fixtures ------------------------------------------------------------

@attr.frozen
class Identity:
    name: bytes
    private_key: int
    public_key: object


def make_ca(cache, seed, common_name="DTLS Engine Test CA"):
    d, q = keypair_from_seed(cache, b"ca|" + bytes(seed))
    return Identity(make_name(common_name), d, q)


def make_identity(cache, seed, common_name):
    d, q = keypair_from_seed(cache, b"id|" + common_name.encode("utf-8") + b"|" + bytes(seed))
    return Identity(make_name(common_name), d, q)


def issue_certificate(cache, ca, subject, serial=1, not_before=0, not_after=10 * 365 * 86400):
    """Issue a leaf certificate for identity ``subject`` under ``ca``; returns the parsed Certificate."""
    fields = CertificateFields(serial=integer_content(serial), issuer=ca.name, subject=subject.name,
                               not_before=not_before, not_after=not_after,
                               public_key=subject.public_key, curve_name=cache.curve.name)
    der = encode_certificate(fields, ca.private_key, cache)
    logger.info(f"Issued certificate serial {serial} ({len(der)} bytes)")
    return parse_certificate(der, cache.curve)


def certificate_summary(cert):
    """JSON-friendly view used by `cert show`."""
    x, y = cert.spki_point.coords()
    return {
        "serial": cert.serial.hex(),
        "issuer": cert.issuer.hex(),
        "subject": cert.subject.hex(),
        "not_before": format_time(cert.not_before),
        "not_after": format_time(cert.not_after),
        "curve": cert.fields.curve_name,
        "public_key": {"x": format(x, "x"), "y": format(y, "x")},
        "signature": {"r": format(cert.sig[0], "x"), "s": format(cert.sig[1], "x")},
        "fingerprint": cert.fingerprint.hex(),
        "size": len(cert.der),
    }
