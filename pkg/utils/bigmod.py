#!/usr/bin/env python

"""
Modular arithmetic over runtime-configurable primes of up to 256 bits.

Every operation has two paths with identical results. When a metering scope
asks for field-level detail (a ledger with ``field_ops`` or an operation
trace), the bit-serial reference engine runs: interleaved shift-add
multiplication with compute-then-select reduction and the binary extended
Euclidean inverter, charging cycles and appending opcode tags. Otherwise the
native integer operations are used.
"""

import enum
import logging

import attr

from utils.costmodel import current_meter
from utils.errors import NotInvertibleError, UsageError

# Configure logging
logger = logging.getLogger(__name__)

UINT256_BITS = 256
UINT256_BYTES = 32

# Right-shifting by this much turns any intermediate into 0 (>= 0) or -1 (< 0)
_SIGN = 511


def _check_uint256(value):
    if not isinstance(value, int) or value < 0 or value >> UINT256_BITS:
        raise UsageError(f"Value out of UInt256 range: {value!r}")
    return value


def u256_from_hex(text):
    """Parse a big-endian hex string (case-insensitive, optional 0x prefix)."""
    cleaned = text.strip().lower()
    if cleaned.startswith("0x"):
        cleaned = cleaned[2:]
    try:
        value = int(cleaned, 16)
    except ValueError:
        raise UsageError(f"Invalid hex value: {text!r}")
    return _check_uint256(value)


def u256_to_hex(value):
    return format(_check_uint256(value), "064x")


def u256_to_bytes(value):
    return _check_uint256(value).to_bytes(UINT256_BYTES, "big")


def u256_from_bytes(data):
    if len(data) != UINT256_BYTES:
        raise UsageError(f"UInt256 needs exactly 32 bytes, got {len(data)}")
    return int.from_bytes(data, "big")


class Op(enum.Enum):
    ADD = "ADD"
    SUB = "SUB"
    MUL = "MUL"
    INV = "INV"
    DBL_PT = "DBL_PT"
    ADD_PT = "ADD_PT"
    SHIFT = "SHIFT"
    CSEL = "CSEL"


POINT_OPS = (Op.DBL_PT, Op.ADD_PT)


@attr.define(eq=False)
class OpTrace:
    """
    Append-only record of the operations a computation performed.

    ``steps`` holds the internal iteration count of each entry (t for a MUL,
    the measured loop length for an INV); trace equality only compares the
    opcode sequence.
    """
    ops: list = attr.Factory(list)
    steps: list = attr.Factory(list)

    def append(self, op, steps=1):
        self.ops.append(op)
        self.steps.append(steps)

    def point_ops(self):
        return [op for op in self.ops if op in POINT_OPS]

    def encode(self, point_only=False):
        ops = self.point_ops() if point_only else self.ops
        return " ".join(op.value for op in ops).encode("ascii")

    def count(self, op):
        return self.ops.count(op)

    def __len__(self):
        return len(self.ops)

    def __eq__(self, other):
        if not isinstance(other, OpTrace):
            return NotImplemented
        return self.ops == other.ops

    __hash__ = None


def _odd_modulus(instance, attribute, value):
    _check_uint256(value)
    if value < 3 or value % 2 == 0:
        raise UsageError(f"Field modulus must be odd and at least 3, got {value}")


@attr.frozen
class FieldCtx:
    """Prime field context; primality of p is the caller's responsibility."""
    p: int = attr.field(validator=_odd_modulus)

    @property
    def t(self):
        return self.p.bit_length()

    @property
    def byte_length(self):
        return (self.t + 7) // 8

    def element(self, value):
        """Field element for any integer, reduced modulo p."""
        return FieldElement(value % self.p, self)

    @property
    def zero(self):
        return FieldElement(0, self)

    @property
    def one(self):
        return FieldElement(1, self)


def _in_field(instance, attribute, value):
    if not 0 <= value < instance.ctx.p:
        raise UsageError(f"Field element {value} not reduced modulo {instance.ctx.p}")


@attr.frozen(repr=False)
class FieldElement:
    value: int = attr.field(validator=_in_field)
    ctx: FieldCtx

    def is_zero(self):
        return self.value == 0

    def to_bytes(self):
        return u256_to_bytes(self.value)

    def __int__(self):
        return self.value

    def __repr__(self):
        return f"FieldElement(0x{self.value:x})"


def _check_pair(a, b):
    if a.ctx is not b.ctx and a.ctx != b.ctx:
        raise UsageError("Operands belong to different field contexts")


def _record(meter, op, counter=None, amount=1, key=None, steps=1):
    if meter.trace is not None:
        meter.trace.append(op, steps)
    if counter is not None and meter.ledger is not None:
        meter.ledger.charge(counter, amount, key)


def mod_add(a, b):
    _check_pair(a, b)
    p = a.ctx.p
    s = a.value + b.value - p
    s += p & (s >> _SIGN)
    meter = current_meter()
    if meter is not None and meter.detailed:
        _record(meter, Op.ADD, "mod_add")
    return FieldElement(s, a.ctx)


def mod_sub(a, b):
    _check_pair(a, b)
    p = a.ctx.p
    s = a.value - b.value
    s += p & (s >> _SIGN)
    meter = current_meter()
    if meter is not None and meter.detailed:
        _record(meter, Op.SUB, "mod_add")
    return FieldElement(s, a.ctx)


def mod_neg(a):
    return mod_sub(a.ctx.zero, a)


def mod_select(flag, x, y):
    """x if flag else y, as a mask blend (one CSEL tag, no cycles)."""
    _check_pair(x, y)
    mask = -(int(flag) & 1)
    meter = current_meter()
    if meter is not None and meter.detailed:
        _record(meter, Op.CSEL)
    return FieldElement(y.value ^ ((x.value ^ y.value) & mask), x.ctx)


def _interleaved_mul(a, b, p, t):
    acc = 0
    for i in range(t - 1, -1, -1):
        acc = (acc << 1) + (b & -((a >> i) & 1))
        # two subtract-and-select steps, both always computed
        r = acc - p
        acc = r + (p & (r >> _SIGN))
        r = acc - p
        acc = r + (p & (r >> _SIGN))
    return acc


def mod_mul(a, b):
    """
    (a * b) mod p.

    Metered runs use the shift-add multiplier with interleaved reduction:
    exactly t iterations of acc = 2*acc + a_i*b followed by two conditional
    subtractions of p, costing t cycles.
    """
    _check_pair(a, b)
    ctx = a.ctx
    meter = current_meter()
    if meter is None or not meter.detailed:
        return FieldElement((a.value * b.value) % ctx.p, ctx)
    t = ctx.t
    value = _interleaved_mul(a.value, b.value, ctx.p, t)
    _record(meter, Op.MUL, "mod_mul", key=t, steps=t)
    return FieldElement(value, ctx)


def _binary_divide(num, den, p):
    """
    num / den mod p using only halvings, additions and subtractions.

    Returns the quotient and the number of cycles spent: one per halving
    step, two per subtract step.
    """
    u, v = den, p
    x1, x2 = num, 0
    cycles = 0
    while u != 1 and v != 1:
        while u & 1 == 0:
            u >>= 1
            x1 = x1 >> 1 if x1 & 1 == 0 else (x1 + p) >> 1
            cycles += 1
        while v & 1 == 0:
            v >>= 1
            x2 = x2 >> 1 if x2 & 1 == 0 else (x2 + p) >> 1
            cycles += 1
        if u >= v:
            u -= v
            x1 -= x2
            x1 += p & (x1 >> _SIGN)
        else:
            v -= u
            x2 -= x1
            x2 += p & (x2 >> _SIGN)
        cycles += 2
    return (x1 if u == 1 else x2) % p, cycles


def mod_div_euclid(num, den):
    """num / den in one pass of the binary extended Euclidean algorithm."""
    _check_pair(num, den)
    if den.is_zero():
        raise NotInvertibleError("Division by zero in the field")
    ctx = num.ctx
    meter = current_meter()
    if meter is None or not meter.detailed:
        return FieldElement(num.value * pow(den.value, -1, ctx.p) % ctx.p, ctx)
    value, cycles = _binary_divide(num.value, den.value, ctx.p)
    _record(meter, Op.INV, "inv_euclid_iters", amount=cycles, steps=cycles)
    if meter.ledger is not None:
        meter.ledger.charge("inv_euclid_calls")
    return FieldElement(value, ctx)


def mod_inv_euclid(a):
    if a.is_zero():
        raise NotInvertibleError("Zero has no inverse")
    return mod_div_euclid(a.ctx.one, a)


def mod_inv_fermat(a):
    """a^(p-2) mod p by left-to-right square-and-multiply on mod_mul."""
    if a.is_zero():
        raise NotInvertibleError("Zero has no inverse")
    exponent = a.ctx.p - 2
    result = a
    for bit in bin(exponent)[3:]:
        result = mod_mul(result, result)
        if bit == "1":
            result = mod_mul(result, a)
    return result
