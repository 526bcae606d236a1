#!/usr/bin/env python

"""
DTLS 1.3 handshake engine.

A Session is driven from outside: ``start`` (client), ``handle_datagram`` for
every received datagram and ``tick`` whenever virtual time advances. Each call
returns the datagrams to transmit together with the events it produced. One
record travels per datagram and carries at most 256 bytes of plaintext.

Flights:
    client:  ClientHello                                           (epoch 0)
    server:  ServerHello (epoch 0), EncryptedExtensions, CertificateRequest,
             Certificate, CertificateVerify, Finished              (epoch 1)
    client:  CertificateUrl, CertificateVerify, Finished           (epoch 1)

Application data uses epoch 2.
"""

import enum
import hmac
import logging
import struct

import attr

from utils.cert import (CachedInfoStore, CertChainPolicy, CertMode, issue_certificate, make_ca,
                        make_identity, parse_certificate, validate)
from utils.costmodel import CostLedger, metering
from utils.curve import (PointCache, ecdh_derive, ecdh_keygen, ecdsa_sign, ecdsa_verify,
                         generator_cache, scalar_from_drbg)
from utils.errors import (AuthenticationError, CertErrorCode, CertificateError, DecodeError,
                          UsageError, ValidationError)
from utils.kdf import (KeySchedule, drbg_generate, drbg_instantiate, finished_key,
                       key_schedule_advance, traffic_keys)
from utils.symmetric import GcmParams, aes128_expand, gcm_open, gcm_seal, hmac_sha256, sha256
from utils.transcript import RunningTranscript, absorb, checkpoint

# Configure logging
logger = logging.getLogger(__name__)

MAX_PLAINTEXT = 256
MAX_MESSAGE = 4096 + MAX_PLAINTEXT
MAX_DEFERRED = 32
MAX_AHEAD = 8
REPLAY_WINDOW = 64
RECORD_VERSION = b"\xfe\xfc"
SUITE_ECDHE_ECDSA_AES128GCM_SHA256 = 0xC02B
SIG_ECDSA_SHA256 = 0x0403
RANDOM_BYTES = 32
ONE_YEAR = 365 * 86400

CV_PAD = b"\x20" * 64
CV_CONTEXT = {
    "server": b"TLS 1.3, server CertificateVerify",
    "client": b"TLS 1.3, client CertificateVerify",
}

# type, version, epoch << 48 | seq, length
RECORD_HEADER = struct.Struct("!B2sQH")
# type, total length, message_seq, fragment offset, fragment length
HANDSHAKE_HEADER = struct.Struct("!B3sH3s3s")


class ContentType(enum.IntEnum):
    ALERT = 21
    HANDSHAKE = 22
    APPLICATION_DATA = 23


class MsgType(enum.IntEnum):
    CLIENT_HELLO = 1
    SERVER_HELLO = 2
    ENCRYPTED_EXTENSIONS = 8
    CERTIFICATE = 11
    CERTIFICATE_REQUEST = 13
    CERTIFICATE_VERIFY = 15
    FINISHED = 20
    CERTIFICATE_URL = 21


PLAINTEXT_MESSAGES = (MsgType.CLIENT_HELLO, MsgType.SERVER_HELLO)


class AlertCode(enum.IntEnum):
    UNEXPECTED_MESSAGE = 10
    HANDSHAKE_FAILURE = 40
    BAD_CERTIFICATE = 42
    CERTIFICATE_EXPIRED = 45
    ILLEGAL_PARAMETER = 47
    UNKNOWN_CA = 48
    DECODE_ERROR = 50
    DECRYPT_ERROR = 51


ALERT_FATAL = 2

_CERT_ALERTS = {
    CertErrorCode.EXPIRED: AlertCode.CERTIFICATE_EXPIRED,
    CertErrorCode.NOT_YET_VALID: AlertCode.CERTIFICATE_EXPIRED,
    CertErrorCode.UNKNOWN_CA: AlertCode.UNKNOWN_CA,
}


class Role(enum.Enum):
    CLIENT = "client"
    SERVER = "server"


class State(enum.Enum):
    START = "start"
    WAIT_SERVER_FLIGHT = "wait_server_flight"
    WAIT_CLIENT_HELLO = "wait_client_hello"
    WAIT_CLIENT_FLIGHT = "wait_client_flight"
    ESTABLISHED = "established"
    FAILED = "failed"
    CLOSED = "closed"


# -- records ------------------------------------------------------------

@attr.frozen
class Record:
    content_type: int
    epoch: int
    seq: int
    payload: bytes

    def encode(self):
        header = RECORD_HEADER.pack(self.content_type, RECORD_VERSION,
                                    (self.epoch << 48) | self.seq, len(self.payload))
        return header + self.payload


def decode_record(datagram):
    """Exactly one record per datagram."""
    if len(datagram) < RECORD_HEADER.size:
        raise DecodeError("datagram shorter than a record header")
    content_type, version, epoch_seq, length = RECORD_HEADER.unpack_from(datagram)
    if version != RECORD_VERSION:
        raise DecodeError(f"unexpected record version {version.hex()}")
    if content_type not in ContentType.__members__.values():
        raise DecodeError(f"unknown content type {content_type}")
    payload = datagram[RECORD_HEADER.size:]
    if len(payload) != length:
        raise DecodeError("record length does not match the datagram")
    return Record(content_type, epoch_seq >> 48, epoch_seq & ((1 << 48) - 1), bytes(payload))


def record_nonce(iv, epoch, seq):
    """12-byte IV XOR (0^4 || epoch || seq48)."""
    mask = bytes(4) + ((epoch << 48) | seq).to_bytes(8, "big")
    return bytes(a ^ b for a, b in zip(iv, mask))


@attr.define
class ReplayWindow:
    """Sliding window over received record sequence numbers of one epoch."""
    size: int = REPLAY_WINDOW
    top: int = -1
    bitmap: int = 0

    def seen(self, seq):
        if seq > self.top:
            return False
        offset = self.top - seq
        return offset >= self.size or bool((self.bitmap >> offset) & 1)

    def mark(self, seq):
        if seq > self.top:
            self.bitmap = ((self.bitmap << (seq - self.top)) | 1) & ((1 << self.size) - 1)
            self.top = seq
        else:
            self.bitmap |= 1 << (self.top - seq)


@attr.define
class EpochState:
    epoch: int
    keys: object = None
    schedule: object = None
    next_seq: int = 0
    window: ReplayWindow = attr.Factory(ReplayWindow)

    @classmethod
    def with_keys(cls, epoch, keys):
        return cls(epoch, keys, aes128_expand(keys.aead_key))


# -- handshake messages ---------------------------------------------------

@attr.frozen
class Fragment:
    msg_type: MsgType
    total_len: int
    message_seq: int
    frag_offset: int
    body: bytes

    def encode(self):
        return HANDSHAKE_HEADER.pack(self.msg_type, self.total_len.to_bytes(3, "big"), self.message_seq,
                                     self.frag_offset.to_bytes(3, "big"),
                                     len(self.body).to_bytes(3, "big")) + self.body


def decode_fragment(payload):
    if len(payload) < HANDSHAKE_HEADER.size:
        raise DecodeError("handshake fragment shorter than its header")
    msg_type, total, message_seq, offset, frag_len = HANDSHAKE_HEADER.unpack_from(payload)
    total, offset, frag_len = (int.from_bytes(v, "big") for v in (total, offset, frag_len))
    body = payload[HANDSHAKE_HEADER.size:]
    if len(body) != frag_len:
        raise DecodeError("fragment length does not match the record")
    if offset + frag_len > total or total > MAX_MESSAGE:
        raise DecodeError("fragment lies outside its message")
    try:
        msg_type = MsgType(msg_type)
    except ValueError:
        raise DecodeError(f"unknown handshake message type {msg_type}")
    return Fragment(msg_type, total, message_seq, offset, bytes(body))


@attr.frozen
class HandshakeMessage:
    msg_type: MsgType
    message_seq: int
    body: bytes

    def encode(self):
        """Unfragmented form; this is what the transcript absorbs."""
        return Fragment(self.msg_type, len(self.body), self.message_seq, 0, self.body).encode()

    def fragments(self, max_plaintext=MAX_PLAINTEXT):
        chunk = max_plaintext - HANDSHAKE_HEADER.size
        offsets = range(0, len(self.body), chunk) if self.body else [0]
        return [Fragment(self.msg_type, len(self.body), self.message_seq, offset,
                         self.body[offset:offset + chunk]).encode() for offset in offsets]


class Reassembly:
    """Collects the fragments of one message; overlapping bytes must agree."""

    def __init__(self, fragment, epoch):
        self.msg_type = fragment.msg_type
        self.total_len = fragment.total_len
        self.epoch = epoch
        self.body = bytearray(self.total_len)
        self.filled = bytearray(self.total_len)
        self.missing = self.total_len

    def add(self, fragment, epoch):
        if (fragment.msg_type != self.msg_type or fragment.total_len != self.total_len
                or epoch != self.epoch):
            return False
        start = fragment.frag_offset
        for i, value in enumerate(fragment.body):
            if self.filled[start + i] and self.body[start + i] != value:
                return False
        for i, value in enumerate(fragment.body):
            if not self.filled[start + i]:
                self.filled[start + i] = 1
                self.body[start + i] = value
                self.missing -= 1
        return True

    @property
    def complete(self):
        return self.missing == 0


class _Cursor:
    def __init__(self, data):
        self.data = bytes(data)
        self.pos = 0

    def take(self, n):
        if self.pos + n > len(self.data):
            raise DecodeError("message body truncated")
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u8(self):
        return self.take(1)[0]

    def u16(self):
        return int.from_bytes(self.take(2), "big")

    def vector8(self):
        return self.take(self.u8())

    def vector16(self):
        return self.take(self.u16())

    def finish(self):
        if self.pos != len(self.data):
            raise DecodeError("trailing bytes in message body")


def _vector8(data):
    return bytes([len(data)]) + data


def _vector16(data):
    return len(data).to_bytes(2, "big") + data


@attr.frozen
class ClientHello:
    random: bytes
    key_share: bytes
    cached_fingerprint: bytes = b""
    suite: int = SUITE_ECDHE_ECDSA_AES128GCM_SHA256

    def encode(self):
        return (self.random + self.suite.to_bytes(2, "big") + _vector8(self.key_share)
                + _vector8(self.cached_fingerprint))

    @classmethod
    def decode(cls, body):
        cursor = _Cursor(body)
        random = cursor.take(RANDOM_BYTES)
        suite = cursor.u16()
        key_share = cursor.vector8()
        cached = cursor.vector8()
        cursor.finish()
        if len(cached) not in (0, 32):
            raise DecodeError("cached-info fingerprint must be 32 bytes")
        return cls(random, key_share, cached, suite)


@attr.frozen
class ServerHello:
    random: bytes
    key_share: bytes
    suite: int = SUITE_ECDHE_ECDSA_AES128GCM_SHA256

    def encode(self):
        return self.random + self.suite.to_bytes(2, "big") + _vector8(self.key_share)

    @classmethod
    def decode(cls, body):
        cursor = _Cursor(body)
        random = cursor.take(RANDOM_BYTES)
        suite = cursor.u16()
        key_share = cursor.vector8()
        cursor.finish()
        return cls(random, key_share, suite)


CERT_FULL = 0
CERT_CACHED = 1


def encode_certificate_body(kind, data):
    return bytes([kind]) + _vector16(data)


def decode_certificate_body(body):
    cursor = _Cursor(body)
    kind = cursor.u8()
    data = cursor.vector16()
    cursor.finish()
    if kind not in (CERT_FULL, CERT_CACHED) or (kind == CERT_CACHED and len(data) != 32):
        raise DecodeError("malformed Certificate message")
    return kind, data


def encode_signature(sig, width):
    return SIG_ECDSA_SHA256.to_bytes(2, "big") + _vector16(sig[0].to_bytes(width, "big")
                                                           + sig[1].to_bytes(width, "big"))


def decode_signature(body, width):
    cursor = _Cursor(body)
    if cursor.u16() != SIG_ECDSA_SHA256:
        raise DecodeError("unsupported signature scheme")
    value = cursor.vector16()
    cursor.finish()
    if len(value) != 2 * width:
        raise DecodeError("signature has the wrong width")
    return int.from_bytes(value[:width], "big"), int.from_bytes(value[width:], "big")


def encode_certificate_url(url, digest):
    return _vector8(url) + digest


def decode_certificate_url(body):
    cursor = _Cursor(body)
    url = cursor.vector8()
    digest = cursor.take(32)
    cursor.finish()
    return url, digest


def certificate_verify_content(role, transcript_hash):
    return CV_PAD + CV_CONTEXT[role] + b"\x00" + transcript_hash


# -- timer ----------------------------------------------------------------

@attr.define
class RetransmitTimer:
    """Fixed-timeout retransmission timer over virtual seconds; no backoff."""
    timeout: float
    max_retries: int
    deadline: float = None
    retries: int = 0

    def arm(self, now):
        self.deadline = now + self.timeout

    def disarm(self):
        self.deadline = None

    @property
    def armed(self):
        return self.deadline is not None

    def expired(self, now):
        return self.armed and now >= self.deadline


# -- configuration and provisioning ---------------------------------------

def _tag_length(instance, attribute, value):
    GcmParams(tag_len=value)


@attr.define
class SessionConfig:
    """Everything a session is provisioned with before the handshake starts."""
    role: Role
    curve: object
    identity: object
    certificate: object
    point_cache: PointCache
    drbg: object
    ca_public_key: object
    ca_name: bytes
    mode: CertMode = CertMode.FULL
    peer_store: CachedInfoStore = attr.Factory(CachedInfoStore)
    timeout: float = 1.0
    max_retries: int = 20
    tag_len: int = attr.field(default=16, validator=_tag_length)
    cert_clock: int = ONE_YEAR
    client_url: bytes = b"https://certs.dtls-engine.test/client"


@attr.frozen
class Provisioned:
    client: SessionConfig
    server: SessionConfig
    ca: object
    server_certificate: object
    client_certificate: object


def seed_bytes(seed):
    if isinstance(seed, int):
        return seed.to_bytes(8, "big", signed=False)
    if isinstance(seed, str):
        return seed.encode("utf-8")
    return bytes(seed)


def provision(curve, seed, mode=CertMode.FULL, timeout=1.0, max_retries=20, tag_len=16, cert_clock=ONE_YEAR):
    """
    Build a matching client/server pair: CA, identities, certificates, pinned
    comb tables and DRBG seeds.

    Args:
        curve: Curve the whole deployment runs on
        seed: int, str or bytes from which every key is derived
        mode: CertMode of the client; Cached pre-validates the server certificate
        timeout: Retransmission timeout in virtual seconds
        max_retries: Retransmissions before a session gives up
        tag_len: AES-GCM tag length in bytes
        cert_clock: Virtual time used for certificate validity checks

    Returns:
        Provisioned
    """
    mode = CertMode(mode)
    seed = seed_bytes(seed)
    with metering():
        base = generator_cache(curve)
        ca = make_ca(base, seed)
        server_id = make_identity(base, seed, "server.dtls-engine.test")
        client_id = make_identity(base, seed, "client.dtls-engine.test")
        server_cert = issue_certificate(base, ca, server_id, serial=2)
        client_cert = issue_certificate(base, ca, client_id, serial=3)
        ca_table = curve.comb_precompute(ca.public_key)

        client_cache = generator_cache(curve)
        client_cache.install("Q_CA", ca_table)
        client_store = CachedInfoStore()
        if mode == CertMode.CACHED:
            client_cache.install("Q_SRV", curve.comb_precompute(server_id.public_key))
            client_store.put(server_cert)

        server_cache = generator_cache(curve)
        server_cache.install("Q_CA", ca_table)
        server_store = CachedInfoStore()
        server_store.put(client_cert)

        common = dict(curve=curve, ca_public_key=ca.public_key, ca_name=ca.name, timeout=timeout,
                      max_retries=max_retries, tag_len=tag_len, cert_clock=cert_clock)
        client = SessionConfig(role=Role.CLIENT, identity=client_id, certificate=client_cert,
                               point_cache=client_cache, drbg=drbg_instantiate(b"client-drbg|" + seed),
                               mode=mode, peer_store=client_store, **common)
        server = SessionConfig(role=Role.SERVER, identity=server_id, certificate=server_cert,
                               point_cache=server_cache, drbg=drbg_instantiate(b"server-drbg|" + seed),
                               mode=mode, peer_store=server_store, **common)
    logger.info(f"Provisioned {mode.value} deployment on {curve.name}")
    return Provisioned(client, server, ca, server_cert, client_cert)


# -- session --------------------------------------------------------------

EXPECTED = {
    Role.CLIENT: (MsgType.SERVER_HELLO, MsgType.ENCRYPTED_EXTENSIONS, MsgType.CERTIFICATE_REQUEST,
                  MsgType.CERTIFICATE, MsgType.CERTIFICATE_VERIFY, MsgType.FINISHED),
    Role.SERVER: (MsgType.CLIENT_HELLO, MsgType.CERTIFICATE_URL, MsgType.CERTIFICATE_VERIFY,
                  MsgType.FINISHED),
}


class Session:
    """One side of a DTLS 1.3 handshake and the application-data channel after it."""

    def __init__(self, config):
        self.config = config
        self.role = config.role
        self.curve = config.curve
        self.state = State.START if self.role == Role.CLIENT else State.WAIT_CLIENT_HELLO
        self.ledger = CostLedger()
        self.transcript = RunningTranscript()
        self.key_schedule = KeySchedule()
        self.timer = RetransmitTimer(config.timeout, config.max_retries)
        self.gcm = GcmParams(tag_len=config.tag_len)
        self.events = []
        self.checkpoints = []
        self.traffic = {}
        self.retransmissions = 0
        self.received_appdata = []
        self._read = {0: EpochState(0)}
        self._write = {0: EpochState(0)}
        self._write_epoch = 0
        self._pending_epoch2 = None
        self._send_seq = 0
        self._recv_seq = 0
        self._reassembly = {}
        self._deferred = []
        self._flight = []
        self._retransmit_on = None
        self._ephemeral = None
        self._peer_public = None
        self._now = 0.0
        self._sig_width = (self.curve.n.bit_length() + 7) // 8

    # -- bookkeeping ------------------------------------------------------

    def _event(self, name, **details):
        event = {"time": round(float(self._now), 9), "role": self.role.value, "event": name}
        event.update(details)
        self.events.append(event)
        return event

    def _set_state(self, state):
        if state != self.state:
            self._event("state", old=self.state.value, new=state.value)
            logger.info(f"{self.role.value}: {self.state.value} -> {state.value}")
            self.state = state

    def _checkpoint(self):
        value = checkpoint(self.transcript)
        self.checkpoints.append(value)
        return value

    def _message(self, msg_type, body):
        message = HandshakeMessage(msg_type, self._send_seq, body)
        self._send_seq += 1
        absorb(self.transcript, message.encode())
        return message

    # -- record layer -----------------------------------------------------

    def _protect(self, epoch, content_type, plaintext):
        state = self._write[epoch]
        seq = state.next_seq
        state.next_seq += 1
        if epoch == 0:
            return Record(content_type, 0, seq, plaintext).encode()
        header = RECORD_HEADER.pack(content_type, RECORD_VERSION, (epoch << 48) | seq,
                                    len(plaintext) + self.gcm.tag_len)
        ct, tag = gcm_seal(state.schedule, record_nonce(state.keys.aead_iv, epoch, seq), header,
                           plaintext, self.gcm)
        return header + ct + tag

    def _unprotect(self, record, state):
        if record.epoch == 0:
            return record.payload
        if len(record.payload) < self.gcm.tag_len:
            raise AuthenticationError("record shorter than its tag")
        header = RECORD_HEADER.pack(record.content_type, RECORD_VERSION,
                                    (record.epoch << 48) | record.seq, len(record.payload))
        split = len(record.payload) - self.gcm.tag_len
        return gcm_open(state.schedule, record_nonce(state.keys.aead_iv, record.epoch, record.seq),
                        header, record.payload[:split], record.payload[split:], self.gcm)

    def _send_flight(self, messages, trigger):
        self._flight = [(epoch, fragment) for message, epoch in messages for fragment in message.fragments()]
        self._retransmit_on = trigger
        datagrams = [self._protect(epoch, ContentType.HANDSHAKE, fragment) for epoch, fragment in self._flight]
        self._event("flight_sent", messages=[message.msg_type.name for message, _ in messages],
                    datagrams=len(datagrams))
        return datagrams

    def _retransmit(self, reason):
        self.retransmissions += 1
        datagrams = [self._protect(epoch, ContentType.HANDSHAKE, fragment) for epoch, fragment in self._flight]
        self._event("retransmit", reason=reason, datagrams=len(datagrams))
        logger.info(f"{self.role.value}: retransmitting flight ({reason})")
        return datagrams

    def _fatal(self, code, reason):
        self.timer.disarm()
        self._event("fatal_alert", code=int(code), alert=code.name, reason=reason)
        logger.warning(f"{self.role.value}: fatal alert {code.name}: {reason}")
        datagram = self._protect(self._write_epoch, ContentType.ALERT, bytes([ALERT_FATAL, code]))
        self._set_state(State.FAILED)
        return [datagram]

    # -- public driving interface -------------------------------------------

    def start(self, now=0.0):
        """Client only: send the ClientHello."""
        if self.role != Role.CLIENT or self.state != State.START:
            raise UsageError("Only a fresh client session can be started")
        self._now = now
        cache = self.config.point_cache
        with metering(self.ledger):
            random = drbg_generate(self.config.drbg, 8 * RANDOM_BYTES)
            self._ephemeral = scalar_from_drbg(self.config.drbg, self.curve.n)
            share = ecdh_keygen(cache, self._ephemeral)
            cached = b""
            if self.config.mode == CertMode.CACHED and len(self.config.peer_store):
                cached = next(iter(self.config.peer_store.entries))
            hello = ClientHello(random, self.curve.encode_point(share), cached)
            message = self._message(MsgType.CLIENT_HELLO, hello.encode())
            datagrams = self._send_flight([(message, 0)], trigger=None)
            self.timer.arm(now)
            self.ledger.charge("idle_periods")
        self._set_state(State.WAIT_SERVER_FLIGHT)
        return datagrams

    def handle_datagram(self, datagram, now):
        """
        Process one received datagram.

        Returns:
            tuple: (datagrams to send, events produced by this call)
        """
        self._now = now
        first_event = len(self.events)
        with metering(self.ledger):
            try:
                record = decode_record(bytes(datagram))
            except DecodeError as e:
                self._event("drop", reason=str(e))
                logger.warning(f"{self.role.value}: dropped datagram: {str(e)}")
                return [], self.events[first_event:]
            out = self._receive_record(record)
            out += self._drain_deferred()
        return out, self.events[first_event:]

    def tick(self, now):
        """Retransmit the last flight if the timer expired; gives up after max_retries."""
        self._now = now
        first_event = len(self.events)
        if not self.timer.expired(now) or self.state in (State.FAILED, State.CLOSED):
            return [], []
        with metering(self.ledger):
            if self.timer.retries >= self.timer.max_retries:
                self.timer.disarm()
                self._event("timeout", retries=self.timer.retries)
                logger.warning(f"{self.role.value}: retransmissions exhausted")
                self._set_state(State.FAILED)
                return [], self.events[first_event:]
            self.timer.retries += 1
            self.timer.arm(now)
            out = self._retransmit("timer")
        return out, self.events[first_event:]

    def send_appdata(self, data, now=0.0):
        """Seal application data into epoch-2 records of at most 256 plaintext bytes."""
        if self.state != State.ESTABLISHED:
            raise UsageError("Application data needs an established session")
        self._now = now
        with metering(self.ledger):
            return [self._protect(2, ContentType.APPLICATION_DATA, bytes(data[offset:offset + MAX_PLAINTEXT]))
                    for offset in range(0, len(data), MAX_PLAINTEXT)]

    def close(self, now=0.0):
        self._now = now
        self.timer.disarm()
        self.config.point_cache.evict_transient()
        self._set_state(State.CLOSED)

    @property
    def established(self):
        return self.state == State.ESTABLISHED

    # -- receive path -------------------------------------------------------

    def _receive_record(self, record):
        if self.state in (State.FAILED, State.CLOSED):
            return []
        state = self._read.get(record.epoch)
        if state is None:
            if record.epoch > max(self._read) and len(self._deferred) < MAX_DEFERRED:
                self._deferred.append(record)
                self._event("deferred", epoch=record.epoch, seq=record.seq)
            else:
                self._event("drop", reason=f"no keys for epoch {record.epoch}")
            return []
        if state.window.seen(record.seq):
            self._event("replay_dropped", epoch=record.epoch, seq=record.seq)
            return []
        try:
            plaintext = self._unprotect(record, state)
        except AuthenticationError:
            self._event("drop", reason="record authentication failed", epoch=record.epoch)
            logger.warning(f"{self.role.value}: record failed authentication")
            return []
        state.window.mark(record.seq)

        if record.content_type == ContentType.ALERT:
            self._event("alert_received", payload=plaintext.hex())
            self.timer.disarm()
            self._set_state(State.FAILED)
            return []
        if record.content_type == ContentType.APPLICATION_DATA:
            if record.epoch != 2:
                self._event("drop", reason="application data outside epoch 2")
                return []
            self.received_appdata.append(plaintext)
            self._event("appdata_received", length=len(plaintext))
            return []
        if record.epoch > 1:
            self._event("drop", reason="handshake record in epoch 2")
            return []
        try:
            fragment = decode_fragment(plaintext)
        except DecodeError as e:
            self._event("drop", reason=str(e))
            return []
        return self._receive_fragment(fragment, record.epoch)

    def _drain_deferred(self):
        out = []
        progress = True
        while progress and self._deferred:
            progress = False
            for record in list(self._deferred):
                if record.epoch in self._read:
                    self._deferred.remove(record)
                    out += self._receive_record(record)
                    progress = True
        return out

    def _receive_fragment(self, fragment, epoch):
        seq = fragment.message_seq
        if seq < self._recv_seq:
            if seq == self._retransmit_on and self._flight and self.state != State.FAILED:
                return self._retransmit("peer_retransmission")
            return []
        if seq >= self._recv_seq + MAX_AHEAD:
            self._event("drop", reason=f"message_seq {seq} too far ahead")
            return []
        expected_epoch = 0 if fragment.msg_type in PLAINTEXT_MESSAGES else 1
        if epoch != expected_epoch:
            self._event("drop", reason=f"{fragment.msg_type.name} in epoch {epoch}")
            return []
        buffer = self._reassembly.get(seq)
        if buffer is None:
            buffer = self._reassembly[seq] = Reassembly(fragment, epoch)
        if not buffer.add(fragment, epoch):
            self._event("drop", reason=f"conflicting fragment of message {seq}")
            return []

        out = []
        while self._recv_seq in self._reassembly and self._reassembly[self._recv_seq].complete:
            buffer = self._reassembly.pop(self._recv_seq)
            message = HandshakeMessage(buffer.msg_type, self._recv_seq, bytes(buffer.body))
            self._recv_seq += 1
            # max_retries counts retransmissions without progress
            self.timer.retries = 0
            out += self._process(message)
            if self.state == State.FAILED:
                break
        return out

    def _process(self, message):
        expected = EXPECTED[self.role]
        index = message.message_seq
        if index >= len(expected) or message.msg_type != expected[index]:
            return self._fatal(AlertCode.UNEXPECTED_MESSAGE, f"unexpected {message.msg_type.name}")
        self._event("message_received", message=message.msg_type.name, length=len(message.body))
        handler = getattr(self, f"_on_{message.msg_type.name.lower()}")
        try:
            return handler(message)
        except DecodeError as e:
            return self._fatal(AlertCode.DECODE_ERROR, str(e))

    # -- key management -------------------------------------------------

    def _own_and_peer(self, client_keys, server_keys):
        if self.role == Role.CLIENT:
            return client_keys, server_keys
        return server_keys, client_keys

    def _derive_handshake_keys(self, ecdhe, hello_hash):
        ks = self.key_schedule
        key_schedule_advance(ks)
        key_schedule_advance(ks, ecdhe=ecdhe, transcript_hash=hello_hash)
        self.traffic["client_hs"] = traffic_keys(ks.client_hs_traffic)
        self.traffic["server_hs"] = traffic_keys(ks.server_hs_traffic)
        own, peer = self._own_and_peer(self.traffic["client_hs"], self.traffic["server_hs"])
        self._write[1] = EpochState.with_keys(1, own)
        self._read[1] = EpochState.with_keys(1, peer)
        self._write_epoch = 1
        self._event("keys_installed", epoch=1)

    def _derive_application_keys(self, finished_hash):
        ks = key_schedule_advance(self.key_schedule, transcript_hash=finished_hash)
        self.traffic["client_app"] = traffic_keys(ks.client_app_traffic)
        self.traffic["server_app"] = traffic_keys(ks.server_app_traffic)
        self._pending_epoch2 = self._own_and_peer(self.traffic["client_app"], self.traffic["server_app"])

    def _establish(self):
        own, peer = self._pending_epoch2
        self._write[2] = EpochState.with_keys(2, own)
        self._read[2] = EpochState.with_keys(2, peer)
        self._write_epoch = 2
        self.timer.disarm()
        self._set_state(State.ESTABLISHED)
        self._event("established", ledger=self.ledger.as_dict(),
                    checkpoint_pending=list(self.transcript.checkpoint_pending))

    def _finished_mac(self, role, transcript_hash):
        secret = self.key_schedule.secret(f"{role}_hs_traffic")
        return hmac_sha256(finished_key(secret), transcript_hash)

    def _sign(self, transcript_hash):
        content = certificate_verify_content(self.role.value, transcript_hash)
        sig = ecdsa_sign(self.config.point_cache, self.config.identity.private_key, sha256(content))
        return encode_signature(sig, self._sig_width)

    def _verify_peer_signature(self, body, transcript_hash):
        peer = "server" if self.role == Role.CLIENT else "client"
        sig = decode_signature(body, self._sig_width)
        content = certificate_verify_content(peer, transcript_hash)
        return ecdsa_verify(self.config.point_cache, self._peer_public, sha256(content), sig)

    def _verify_peer_finished(self, body, transcript_hash):
        peer = "server" if self.role == Role.CLIENT else "client"
        return hmac.compare_digest(self._finished_mac(peer, transcript_hash), bytes(body))

    def _policy(self):
        return CertChainPolicy(point_cache=self.config.point_cache, ca_public_key=self.config.ca_public_key,
                               clock=self.config.cert_clock, mode=self.config.mode,
                               ca_name=self.config.ca_name, store=self.config.peer_store)

    def _peer_share(self, encoded):
        try:
            return self.curve.decode_point(encoded)
        except ValidationError:
            return None

    # -- server handlers --------------------------------------------------

    def _on_client_hello(self, message):
        hello = ClientHello.decode(message.body)
        if hello.suite != SUITE_ECDHE_ECDSA_AES128GCM_SHA256:
            return self._fatal(AlertCode.HANDSHAKE_FAILURE, "no common cipher suite")
        peer_share = self._peer_share(hello.key_share)
        if peer_share is None:
            return self._fatal(AlertCode.ILLEGAL_PARAMETER, "invalid key share")
        absorb(self.transcript, message.encode())
        cache = self.config.point_cache
        random = drbg_generate(self.config.drbg, 8 * RANDOM_BYTES)
        self._ephemeral = scalar_from_drbg(self.config.drbg, self.curve.n)
        share = ecdh_keygen(cache, self._ephemeral)
        ecdhe = ecdh_derive(cache, self._ephemeral, peer_share)

        server_hello = self._message(MsgType.SERVER_HELLO,
                                     ServerHello(random, self.curve.encode_point(share)).encode())
        self._derive_handshake_keys(ecdhe, self._checkpoint())
        extensions = self._message(MsgType.ENCRYPTED_EXTENSIONS, _vector16(b""))
        request = self._message(MsgType.CERTIFICATE_REQUEST, _vector8(b"") + SIG_ECDSA_SHA256.to_bytes(2, "big"))
        own_cert = self.config.certificate
        if hello.cached_fingerprint and hmac.compare_digest(hello.cached_fingerprint, own_cert.fingerprint):
            body = encode_certificate_body(CERT_CACHED, own_cert.fingerprint)
        else:
            body = encode_certificate_body(CERT_FULL, own_cert.der)
        certificate = self._message(MsgType.CERTIFICATE, body)
        verify = self._message(MsgType.CERTIFICATE_VERIFY, self._sign(self._checkpoint()))
        finished = self._message(MsgType.FINISHED, self._finished_mac("server", self._checkpoint()))
        self._derive_application_keys(self._checkpoint())

        flight = [(server_hello, 0), (extensions, 1), (request, 1), (certificate, 1), (verify, 1), (finished, 1)]
        datagrams = self._send_flight(flight, trigger=message.message_seq)
        self.timer.arm(self._now)
        self.ledger.charge("idle_periods")
        self._set_state(State.WAIT_CLIENT_FLIGHT)
        return datagrams

    def _on_certificate_url(self, message):
        _, digest = decode_certificate_url(message.body)
        cert = self.config.peer_store.get(digest)
        if cert is None:
            return self._fatal(AlertCode.BAD_CERTIFICATE, "client certificate hash not provisioned")
        try:
            validate(cert, attr.evolve(self._policy(), mode=CertMode.CACHED))
        except CertificateError as e:
            return self._fatal(_CERT_ALERTS.get(e.code, AlertCode.BAD_CERTIFICATE), str(e))
        self._peer_public = cert.spki_point
        absorb(self.transcript, message.encode())
        self._checkpoint()
        return []

    # -- client handlers --------------------------------------------------

    def _on_server_hello(self, message):
        hello = ServerHello.decode(message.body)
        if hello.suite != SUITE_ECDHE_ECDSA_AES128GCM_SHA256:
            return self._fatal(AlertCode.HANDSHAKE_FAILURE, "server picked an unknown suite")
        peer_share = self._peer_share(hello.key_share)
        if peer_share is None:
            return self._fatal(AlertCode.ILLEGAL_PARAMETER, "invalid key share")
        ecdhe = ecdh_derive(self.config.point_cache, self._ephemeral, peer_share)
        absorb(self.transcript, message.encode())
        self._derive_handshake_keys(ecdhe, self._checkpoint())
        return []

    def _on_encrypted_extensions(self, message):
        cursor = _Cursor(message.body)
        cursor.vector16()
        cursor.finish()
        absorb(self.transcript, message.encode())
        return []

    def _on_certificate_request(self, message):
        cursor = _Cursor(message.body)
        cursor.vector8()
        if cursor.u16() != SIG_ECDSA_SHA256:
            return self._fatal(AlertCode.HANDSHAKE_FAILURE, "unsupported signature scheme requested")
        cursor.finish()
        absorb(self.transcript, message.encode())
        return []

    def _on_certificate(self, message):
        kind, data = decode_certificate_body(message.body)
        policy = self._policy()
        try:
            if kind == CERT_CACHED:
                cert = self.config.peer_store.get(data)
                if self.config.mode != CertMode.CACHED or cert is None:
                    return self._fatal(AlertCode.BAD_CERTIFICATE, "unknown cached certificate")
            else:
                cert = parse_certificate(data, self.curve)
            validate(cert, policy)
        except CertificateError as e:
            return self._fatal(_CERT_ALERTS.get(e.code, AlertCode.BAD_CERTIFICATE), str(e))
        self._peer_public = cert.spki_point
        absorb(self.transcript, message.encode())
        self._checkpoint()
        return []

    # -- shared handlers --------------------------------------------------

    def _on_certificate_verify(self, message):
        if not self._verify_peer_signature(message.body, self.checkpoints[-1]):
            return self._fatal(AlertCode.DECRYPT_ERROR, "CertificateVerify signature rejected")
        absorb(self.transcript, message.encode())
        self._checkpoint()
        return []

    def _on_finished(self, message):
        if not self._verify_peer_finished(message.body, self.checkpoints[-1]):
            return self._fatal(AlertCode.DECRYPT_ERROR, "Finished MAC mismatch")
        absorb(self.transcript, message.encode())
        if self.role == Role.SERVER:
            self._establish()
            return []

        self.timer.disarm()
        self._derive_application_keys(self._checkpoint())
        url = self._message(MsgType.CERTIFICATE_URL,
                            encode_certificate_url(self.config.client_url, self.config.certificate.fingerprint))
        verify = self._message(MsgType.CERTIFICATE_VERIFY, self._sign(self._checkpoint()))
        finished = self._message(MsgType.FINISHED, self._finished_mac("client", self._checkpoint()))
        datagrams = self._send_flight([(url, 1), (verify, 1), (finished, 1)], trigger=message.message_seq)
        self._establish()
        return datagrams


# -- module-level operations --------------------------------------------------

def fresh_config(config):
    """Copy of a provisioned config whose mutable parts (DRBG, caches, store) start over."""
    return attr.evolve(config, point_cache=config.point_cache.copy(), drbg=attr.evolve(config.drbg),
                       peer_store=CachedInfoStore(dict(config.peer_store.entries)))


def client_start(config, now=0.0):
    """Create a client session and its ClientHello flight."""
    session = Session(config)
    return session, session.start(now)


def server_session(config):
    if config.role != Role.SERVER:
        raise UsageError("Server sessions need a server configuration")
    return Session(config)


def run_lockstep(client_config, server_config, max_rounds=16):
    """
    Perfect channel without a clock: every datagram is delivered in order.
    Both sides run on fresh copies of their configurations.

    Returns:
        tuple: (client, server, wire) where wire lists (sender role, datagram)
    """
    client, datagrams = client_start(fresh_config(client_config))
    server = server_session(fresh_config(server_config))
    wire = []
    sender, receiver = client, server
    for _ in range(max_rounds):
        if not datagrams:
            break
        replies = []
        for datagram in datagrams:
            wire.append((sender.role.value, datagram))
            out, _ = receiver.handle_datagram(datagram, 0.0)
            replies += out
        datagrams = replies
        sender, receiver = receiver, sender
    return client, server, wire


def handle_datagram(session, datagram, now):
    return session.handle_datagram(datagram, now)


def tick(session, now):
    return session.tick(now)


def send_appdata(session, data, now=0.0):
    return session.send_appdata(data, now)
