#!/usr/bin/env python

import enum


class EngineError(Exception):
    """Base class for every error raised by the engine."""


class UsageError(EngineError):
    """A precondition of the called operation does not hold."""


class CryptoError(EngineError):
    pass


class NotInvertibleError(CryptoError):
    pass


class ValidationError(CryptoError):
    """A public value (point, key share) failed validation."""


class AuthenticationError(CryptoError):
    """An AEAD tag, Finished MAC or signature did not verify."""


class ReseedRequiredError(CryptoError):
    pass


class CertErrorCode(enum.Enum):
    # structural
    TRUNCATED = "truncated"
    TAG_MISMATCH = "tag-mismatch"
    INDEFINITE_LENGTH = "indefinite-length"
    NON_CANONICAL = "non-canonical-encoding"
    LENGTH_MISMATCH = "length-mismatch"
    TRAILING_DATA = "trailing-data"
    OVERSIZE = "oversize"
    # content
    UNSUPPORTED_VERSION = "unsupported-version"
    UNSUPPORTED_ALGORITHM = "unsupported-algorithm"
    UNSUPPORTED_CURVE = "unsupported-curve"
    BAD_TIME = "bad-time"
    OFF_CURVE_POINT = "off-curve-point"
    # validation
    EXPIRED = "expired"
    NOT_YET_VALID = "not-yet-valid"
    BAD_SIGNATURE = "bad-signature"
    UNKNOWN_CA = "unknown-ca"


class CertificateError(CryptoError):
    def __init__(self, code, message=""):
        self.code = code
        super().__init__(f"{code.value}: {message}" if message else code.value)


class ProtocolError(EngineError):
    """The handshake cannot continue (timeout exhaustion, fatal alert)."""


class DecodeError(ProtocolError):
    """A record or handshake message is malformed; the datagram carrying it is dropped."""
