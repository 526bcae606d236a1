#!/usr/bin/env python

"""
Reconfigurable prime-field elliptic curves in affine coordinates.

Scalar multiplication uses a 4-row comb over zero-less signed digits: every
loop iteration is exactly one doubling and one addition of a table point,
so the point-operation trace does not depend on the scalar.
"""

import enum
import functools
import logging

import attr

from utils.bigmod import (FieldCtx, FieldElement, Op, OpTrace, mod_add, mod_div_euclid,
                          mod_inv_euclid, mod_mul, mod_neg, mod_select, mod_sub,
                          u256_from_hex, u256_to_bytes)
from utils.costmodel import CostLedger, OpCost, charge, comb_spacing, current_meter, metering
from utils.errors import UsageError, ValidationError
from utils.kdf import bits_to_int, drbg_generate, drbg_instantiate

# Configure logging
logger = logging.getLogger(__name__)

COMB_ROWS = 4
COMB_ENTRIES = 8
CACHE_SLOTS = 6
PINNED_POINTS = ("G", "Q_CA", "Q_SRV")

CURVE_PRESETS = {
    # secp160r1 (SEC 2); NIST never standardized a 160-bit prime curve
    "P-160": {
        "form": "ShortWeierstrass",
        "p": "ffffffffffffffffffffffffffffffff7fffffff",
        "a": "ffffffffffffffffffffffffffffffff7ffffffc",
        "b": "1c97befc54bd7a8b65acf89f81d4d4adc565fa45",
        "n": "0100000000000000000001f4c8f927aed3ca752257",
        "Gx": "4a96b5688ef573284664698968c38bb913cbfc82",
        "Gy": "23a628553168947d59dcc912042351377ac5fb32",
        "cofactor": "1",
    },
    "P-192": {
        "form": "ShortWeierstrass",
        "p": "fffffffffffffffffffffffffffffffeffffffffffffffff",
        "a": "fffffffffffffffffffffffffffffffefffffffffffffffc",
        "b": "64210519e59c80e70fa7e9ab72243049feb8deecc146b9b1",
        "n": "ffffffffffffffffffffffff99def836146bc9b1b4d22831",
        "Gx": "188da80eb03090f67cbf20eb43a18800f4ff0afd82ff1012",
        "Gy": "07192b95ffc8da78631011ed6b24cdd573f977a11e794811",
        "cofactor": "1",
    },
    "P-224": {
        "form": "ShortWeierstrass",
        "p": "ffffffffffffffffffffffffffffffff000000000000000000000001",
        "a": "fffffffffffffffffffffffffffffffefffffffffffffffffffffffe",
        "b": "b4050a850c04b3abf54132565044b0b7d7bfd8ba270b39432355ffb4",
        "n": "ffffffffffffffffffffffffffff16a2e0b8f03e13dd29455c5c2a3d",
        "Gx": "b70e0cbd6bb4bf7f321390b94a03c1d356c21122343280d6115c1d21",
        "Gy": "bd376388b5f723fb4c22dfe6cd4375a05a07476444d5819985007e34",
        "cofactor": "1",
    },
    "P-256": {
        "form": "ShortWeierstrass",
        "p": "ffffffff00000001000000000000000000000000ffffffffffffffffffffffff",
        "a": "ffffffff00000001000000000000000000000000fffffffffffffffffffffffc",
        "b": "5ac635d8aa3a93e7b3ebbd55769886bc651d06b0cc53b0f63bce3c3e27d2604b",
        "n": "ffffffff00000000ffffffffffffffffbce6faada7179e84f3b9cac2fc632551",
        "Gx": "6b17d1f2e12c4247f8bce6e563a440f277037d812deb33a0f4a13945d898c296",
        "Gy": "4fe342e2fe1a7f9b8ee7eb4a7c0f9e162bce33576b315ececbb6406837bf51f5",
        "cofactor": "1",
    },
    # 28-point toy group y^2 = x^3 + x + 1 over F_23; G = 4*(3, 10) has order 7
    "toy23": {
        "form": "ShortWeierstrass",
        "p": "17",
        "a": "1",
        "b": "1",
        "n": "7",
        "Gx": "11",
        "Gy": "3",
        "cofactor": "4",
    },
}


class CurveForm(enum.Enum):
    SHORT_WEIERSTRASS = "ShortWeierstrass"
    MONTGOMERY = "Montgomery"


@attr.frozen
class AffinePoint:
    """A point bound to a named curve; x and y are None for the point at infinity."""
    x: FieldElement = None
    y: FieldElement = None
    curve: str = ""

    @classmethod
    def infinity(cls, curve):
        return cls(None, None, curve)

    @property
    def is_infinity(self):
        return self.x is None

    def coords(self):
        return None if self.is_infinity else (self.x.value, self.y.value)


@attr.frozen
class CurveParams:
    """
    Short-Weierstrass curve description.

    Montgomery descriptions are converted on the way in; ``form`` records the
    form the curve was described in and ``montgomery`` keeps (A, B).
    """
    name: str
    form: CurveForm
    field: FieldCtx
    a: FieldElement
    b: FieldElement
    n: int
    G: AffinePoint
    cofactor: int = 1
    montgomery: tuple = None

    def __attrs_post_init__(self):
        a, b, p = self.a.value, self.b.value, self.field.p
        if (4 * pow(a, 3, p) + 27 * pow(b, 2, p)) % p == 0:
            raise UsageError(f"Curve {self.name} is singular (4a^3 + 27b^2 = 0)")
        if self.n < 3 or self.n % 2 == 0:
            raise UsageError(f"Group order of {self.name} must be odd")
        if self.G.is_infinity or not _on_curve(self.G.x.value, self.G.y.value, a, b, p):
            raise UsageError(f"Generator of {self.name} is not on the curve")

    @classmethod
    def from_values(cls, name, form, p, a, b, n, gx, gy, cofactor=1):
        """Build parameters from integers, converting a Montgomery description by By^2 = x^3 + Ax^2 + x."""
        form = CurveForm(form)
        field = FieldCtx(p)
        montgomery = None
        if form == CurveForm.MONTGOMERY:
            mont_a, mont_b = a % p, b % p
            inv_b = pow(mont_b, -1, p)
            inv_3b = pow(3 * mont_b, -1, p)
            a = (3 - mont_a * mont_a) * pow(3 * mont_b * mont_b, -1, p) % p
            b = (2 * pow(mont_a, 3, p) - 9 * mont_a) * pow(27 * pow(mont_b, 3, p), -1, p) % p
            gx, gy = (gx * inv_b + mont_a * inv_3b) % p, gy * inv_b % p
            montgomery = (mont_a, mont_b)
        generator = AffinePoint(field.element(gx), field.element(gy), name)
        return cls(name=name, form=form, field=field, a=field.element(a), b=field.element(b),
                   n=n, G=generator, cofactor=cofactor, montgomery=montgomery)

    @classmethod
    def from_hex_mapping(cls, name, mapping):
        """Parameters from the key=value fields of a curve description file."""
        try:
            values = {key: u256_from_hex(mapping[key]) for key in ("p", "a", "b", "n", "Gx", "Gy")}
            cofactor = u256_from_hex(mapping.get("cofactor", "1"))
            form = mapping.get("form", CurveForm.SHORT_WEIERSTRASS.value)
        except KeyError as e:
            raise UsageError(f"Curve description lacks field {e}")
        return cls.from_values(name, form, values["p"], values["a"], values["b"], values["n"],
                               values["Gx"], values["Gy"], cofactor)


def _on_curve(x, y, a, b, p):
    return (y * y - (x * x * x + a * x + b)) % p == 0


class Correction(enum.Enum):
    SUB_P = "SubP"
    SUB_2P = "Sub2P"


@attr.frozen
class ZsdScalar:
    """Zero-less signed digits, least significant first; digits[-1] is always +1."""
    digits: tuple
    correction: Correction

    @property
    def value(self):
        return zsd_decode(self.digits)


def zsd_digits(k_odd, t):
    """Digits of the shifted bit-string (1, k'_{t-1}, ..., k'_1), bit 1 -> +1, bit 0 -> -1."""
    if k_odd % 2 == 0 or k_odd <= 0 or k_odd >> t:
        raise UsageError(f"ZSD encoding needs an odd value below 2^{t}")
    return tuple(2 * ((k_odd >> (i + 1)) & 1) - 1 for i in range(t - 1)) + (1,)


def zsd_decode(digits):
    return sum(digit << i for i, digit in enumerate(digits))


def zsd_encode(k, t, n=None):
    """
    Even/odd adjustment k' = k + 1 (even k) or k + 2 (odd k), then ZSD digits of k'.

    Args:
        k: Scalar, 0 < k < n
        t: Number of digits
        n: Group order bounding k (optional)

    Returns:
        ZsdScalar
    """
    if k <= 0 or (n is not None and k >= n):
        raise UsageError("Scalar out of range for ZSD encoding")
    odd = k & 1
    k_prime = k + 1 + odd
    correction = Correction.SUB_2P if odd else Correction.SUB_P
    return ZsdScalar(zsd_digits(k_prime, t), correction)


@attr.frozen
class CombTable:
    """
    Eight comb points for base P: entry b0 + 2*b1 + 4*b2 holds
    s0*P + s1*2^d*P + s2*2^(2d)*P + 2^(3d)*P with s_r = +1 iff b_r = 1.
    """
    curve: str
    base: AffinePoint
    d: int
    points: tuple
    double_base: AffinePoint

    @property
    def width(self):
        return COMB_ROWS


def _trace_point_op(op):
    meter = current_meter()
    if meter is not None and meter.trace is not None:
        meter.trace.append(op)


class Curve:
    """Arithmetic on one set of CurveParams."""

    def __init__(self, params):
        self.params = params
        self.name = params.name
        self.field = params.field
        self.n = params.n
        self.G = params.G
        self.t = self.field.t
        self.d = comb_spacing(self.n.bit_length())
        self._g_table = None

    @classmethod
    @functools.lru_cache(maxsize=None)
    def from_preset(cls, name):
        if name not in CURVE_PRESETS:
            raise UsageError(f"Unknown curve preset '{name}' (known: {', '.join(CURVE_PRESETS)})")
        return cls(CurveParams.from_hex_mapping(name, CURVE_PRESETS[name]))

    @classmethod
    def from_montgomery(cls, name, p, mont_a, mont_b, n, u, v, cofactor=1):
        """Curve from a Montgomery description By^2 = x^3 + Ax^2 + x and a generator (u, v)."""
        return cls(CurveParams.from_values(name, CurveForm.MONTGOMERY, p, mont_a, mont_b, n, u, v, cofactor))

    def __repr__(self):
        return f"Curve({self.name}, t={self.t})"

    # -- points -------------------------------------------------------

    def point(self, x, y):
        """Validated affine point from integer coordinates."""
        p = self.field.p
        if not (0 <= x < p and 0 <= y < p):
            raise ValidationError("Point coordinates are not field elements")
        if not _on_curve(x, y, self.params.a.value, self.params.b.value, p):
            raise ValidationError(f"Point is not on curve {self.name}")
        return AffinePoint(FieldElement(x, self.field), FieldElement(y, self.field), self.name)

    @property
    def infinity(self):
        return AffinePoint.infinity(self.name)

    def is_on_curve(self, P):
        if P.curve != self.name:
            return False
        return P.is_infinity or _on_curve(P.x.value, P.y.value, self.params.a.value,
                                          self.params.b.value, self.field.p)

    def validate_public(self, P):
        """Public-key validation: right curve, on the curve, not infinity."""
        if P.curve != self.name or P.is_infinity or not self.is_on_curve(P):
            raise ValidationError(f"Invalid public point for curve {self.name}")
        return P

    def _check(self, P):
        if P.curve != self.name:
            raise UsageError(f"Point belongs to curve '{P.curve}', not '{self.name}'")

    def negate(self, P):
        if P.is_infinity:
            return P
        return AffinePoint(P.x, mod_neg(P.y), self.name)

    def encode_point(self, P):
        """Uncompressed encoding 0x04 || x || y at field width."""
        if P.is_infinity:
            raise UsageError("The point at infinity has no uncompressed encoding")
        size = self.field.byte_length
        return b"\x04" + P.x.value.to_bytes(size, "big") + P.y.value.to_bytes(size, "big")

    def decode_point(self, data):
        size = self.field.byte_length
        if len(data) != 1 + 2 * size or data[0] != 0x04:
            raise ValidationError("Malformed uncompressed point encoding")
        return self.point(int.from_bytes(data[1:1 + size], "big"), int.from_bytes(data[1 + size:], "big"))

    # -- group law ----------------------------------------------------

    def _add(self, P, Q):
        if P.is_infinity:
            return Q
        if Q.is_infinity:
            return P
        if P.x.value == Q.x.value:
            if P.y.value == Q.y.value:
                return self._dbl(P)
            return self.infinity
        lam = mod_div_euclid(mod_sub(Q.y, P.y), mod_sub(Q.x, P.x))
        x3 = mod_sub(mod_sub(mod_mul(lam, lam), P.x), Q.x)
        y3 = mod_sub(mod_mul(lam, mod_sub(P.x, x3)), P.y)
        return AffinePoint(x3, y3, self.name)

    def _dbl(self, P):
        if P.is_infinity or P.y.is_zero():
            return self.infinity
        xx = mod_mul(P.x, P.x)
        # 3x^2 + a and 2y as additions
        numerator = mod_add(mod_add(mod_add(xx, xx), xx), self.params.a)
        lam = mod_div_euclid(numerator, mod_add(P.y, P.y))
        x3 = mod_sub(mod_sub(mod_mul(lam, lam), P.x), P.x)
        y3 = mod_sub(mod_mul(lam, mod_sub(P.x, x3)), P.y)
        return AffinePoint(x3, y3, self.name)

    def point_add(self, P, Q):
        """P + Q; generic case costs 2M + I."""
        self._check(P)
        self._check(Q)
        _trace_point_op(Op.ADD_PT)
        return self._add(P, Q)

    def point_dbl(self, P):
        """2P; generic case costs 3M + I."""
        self._check(P)
        _trace_point_op(Op.DBL_PT)
        return self._dbl(P)

    # -- scalar multiplication ----------------------------------------

    def _check_scalar(self, k):
        if not isinstance(k, int) or not 0 < k < self.n:
            raise UsageError(f"Scalar out of range (0, n) for curve {self.name}")

    def comb_precompute(self, P):
        """Comb table of P: 3d doublings and 14 additions."""
        self._check(P)
        if P.is_infinity:
            raise UsageError("Cannot precompute a comb table for the point at infinity")
        d = self.d
        rows = [P]
        q = P
        double_base = None
        for _ in range(COMB_ROWS - 1):
            for _ in range(d):
                q = self.point_dbl(q)
                if double_base is None:
                    double_base = q
            rows.append(q)
        level = [rows[3]]
        for r in (2, 1, 0):
            negated = self.negate(rows[r])
            level = [entry for base in level
                     for entry in (self.point_add(base, negated), self.point_add(base, rows[r]))]
        charge("comb_precompute", key=self.t)
        logger.debug(f"Comb table precomputed on {self.name} (d={d})")
        return CombTable(curve=self.name, base=P, d=d, points=tuple(level), double_base=double_base)

    @property
    def g_table(self):
        """Comb table of the generator, computed once per Curve."""
        if self._g_table is None:
            with metering():
                self._g_table = self.comb_precompute(self.G)
        return self._g_table

    def _conditional_negate(self, P, flag):
        if P.is_infinity:
            return P
        return AffinePoint(P.x, mod_select(flag, mod_neg(P.y), P.y), self.name)

    def _select_point(self, flag, P, Q):
        return AffinePoint(mod_select(flag, P.x, Q.x), mod_select(flag, P.y, Q.y), self.name)

    def ecsm(self, k, table):
        """
        k * P for the base P of a comb table.

        Runs exactly d iterations of one DBL and one ADD, then subtracts the
        selected pre-point (P or 2P) undoing the even/odd adjustment.
        """
        if table.curve != self.name:
            raise UsageError(f"Comb table belongs to curve '{table.curve}'")
        self._check_scalar(k)
        d = table.d
        zsd = zsd_encode(k, COMB_ROWS * d, self.n)
        digits = zsd.digits
        q = self.infinity
        for i in range(d - 1, -1, -1):
            q = self.point_dbl(q)
            signs = [digits[i + r * d] for r in range(COMB_ROWS)]
            negative = int(signs[3] < 0)
            index = sum(int(signs[r] > 0) << r for r in range(COMB_ROWS - 1)) ^ (7 * negative)
            q = self.point_add(q, self._conditional_negate(table.points[index], negative))
        pre_point = self._select_point(zsd.correction == Correction.SUB_2P, table.double_base, table.base)
        q = self.point_add(q, self.negate(pre_point))
        charge("ecsm", key=self.t)
        return q

    def ecsm_naive(self, k, P):
        """Textbook MSB-first double-and-add; adds only where a scalar bit is 1."""
        self._check(P)
        self._check_scalar(k)
        q = P
        for bit in bin(k)[3:]:
            q = self.point_dbl(q)
            if bit == "1":
                q = self.point_add(q, P)
        return q

    # -- measurement helpers --------------------------------------------

    def measure_point_costs(self):
        """Field-op cost (M, I) of one generic ADD and one generic DBL, from ledger deltas."""
        with metering():
            two_g = self._dbl(self.G)
        costs = []
        for operation in (lambda: self.point_add(self.G, two_g), lambda: self.point_dbl(two_g)):
            ledger = CostLedger(field_ops=True)
            with metering(ledger):
                operation()
            costs.append(OpCost(m=sum(ledger.mod_mul.values()), i=ledger.inv_euclid_calls))
        return tuple(costs)

    def ecsm_overhead(self, k=None):
        """Point operations an ECSM spends beyond its d doublings and d table additions."""
        trace = OpTrace()
        with metering(trace=trace):
            self.ecsm(k or self.n // 3, self.g_table)
        return len(trace.point_ops()) - 2 * self.d


def recover_scalar_bits(trace):
    """Read the scalar back out of a double-and-add trace: DBL opens a 0 bit, ADD sets it."""
    bits = "1"
    for op in trace.point_ops():
        if op == Op.DBL_PT:
            bits += "0"
        elif op == Op.ADD_PT:
            bits = bits[:-1] + "1"
    return int(bits, 2)


@attr.define
class CacheSlot:
    point_id: str
    table: CombTable
    pinned: bool
    last_used: int = 0


class PointCache:
    """
    Six comb-table slots. G, Q_CA and Q_SRV are pinned at installation time;
    the remaining slots serve transient points with least-recently-used
    replacement.
    """

    def __init__(self, curve):
        self.curve = curve
        self.slots = [None] * CACHE_SLOTS
        self._clock = 0

    def install(self, point_id, table):
        if point_id not in PINNED_POINTS:
            raise UsageError(f"Only {', '.join(PINNED_POINTS)} can be pinned")
        if table.curve != self.curve.name:
            raise UsageError("Comb table belongs to another curve")
        for index, slot in enumerate(self.slots):
            if slot is not None and slot.point_id == point_id:
                self.slots[index] = CacheSlot(point_id, table, True)
                return
        free = [index for index, slot in enumerate(self.slots) if slot is None]
        if not free:
            free = [index for index, slot in enumerate(self.slots) if not slot.pinned]
        self.slots[free[0]] = CacheSlot(point_id, table, True)
        logger.debug(f"Pinned comb table {point_id} in slot {free[0]}")

    def pinned_tables(self):
        return {slot.point_id: slot.table for slot in self.slots if slot is not None and slot.pinned}

    def lookup(self, point):
        for slot in self.slots:
            if slot is not None and slot.table.base == point:
                self._clock += 1
                slot.last_used = self._clock
                return slot.table
        return None

    def table_for(self, point):
        """Cached table of point, precomputing into a transient slot on a miss."""
        table = self.lookup(point)
        if table is not None:
            return table
        table = self.curve.comb_precompute(point)
        candidates = [i for i, slot in enumerate(self.slots) if slot is None or not slot.pinned]
        if not candidates:
            raise UsageError("Point cache has no transient slot left")
        index = min(candidates, key=lambda i: (self.slots[i] is not None,
                                              self.slots[i].last_used if self.slots[i] else 0))
        self._clock += 1
        self.slots[index] = CacheSlot(f"transient-{self._clock}", table, False, self._clock)
        return table

    def evict_transient(self):
        for index, slot in enumerate(self.slots):
            if slot is not None and not slot.pinned:
                self.slots[index] = None

    def copy(self):
        clone = PointCache(self.curve)
        clone.slots = [None if slot is None else attr.evolve(slot) for slot in self.slots]
        clone._clock = self._clock
        return clone


def generator_cache(curve):
    """Point cache with the generator table pinned."""
    cache = PointCache(curve)
    cache.install("G", curve.g_table)
    return cache


# -- key agreement and signatures ---------------------------------------

def scalar_from_drbg(drbg, n):
    """Uniform scalar in [1, n-1] from a single generate of t + 64 bits."""
    bits = n.bit_length() + 64
    return bits_to_int(drbg_generate(drbg, bits), bits) % (n - 1) + 1


def ecdh_keygen(cache, k):
    curve = cache.curve
    return curve.ecsm(k, cache.table_for(curve.G))


def keypair_from_seed(cache, seed):
    """Deterministic (d, Q = dG) from seed material."""
    d = scalar_from_drbg(drbg_instantiate(seed), cache.curve.n)
    return d, ecdh_keygen(cache, d)


def ecdh_derive(cache, k, q_peer):
    """x-coordinate of k * Q_peer as 32 big-endian bytes."""
    curve = cache.curve
    curve.validate_public(q_peer)
    shared = curve.ecsm(k, cache.table_for(q_peer))
    if shared.is_infinity:
        raise ValidationError("ECDH produced the point at infinity")
    charge("ecdh")
    return u256_to_bytes(shared.x.value)


def _hash_to_int(msg_hash, n):
    e = int.from_bytes(msg_hash, "big")
    excess = 8 * len(msg_hash) - n.bit_length()
    return e >> excess if excess > 0 else e


def ecdsa_sign(cache, d, msg_hash):
    """
    ECDSA with a deterministic nonce: HMAC-DRBG seeded with d || msg_hash,
    t-bit candidates, retry while the candidate is >= n or r, s would be 0.
    """
    curve = cache.curve
    n = curve.n
    if not isinstance(d, int) or not 0 < d < n:
        raise UsageError("Signing key out of range")
    if len(msg_hash) != 32:
        raise UsageError("Message hash must be 32 bytes")
    scalars = FieldCtx(n)
    e = _hash_to_int(msg_hash, n)
    drbg = drbg_instantiate(u256_to_bytes(d) + bytes(msg_hash))
    table = cache.table_for(curve.G)
    t = n.bit_length()
    while True:
        k = bits_to_int(drbg_generate(drbg, t), t)
        if not 0 < k < n:
            continue
        r = curve.ecsm(k, table).x.value % n
        if r == 0:
            continue
        k_inv = mod_inv_euclid(FieldElement(k, scalars))
        s = mod_mul(k_inv, scalars.element(e + r * d)).value
        if s == 0:
            continue
        charge("ecdsa_sign")
        return r, s


def ecdsa_verify(cache, Q, msg_hash, sig):
    """Plain ECDSA verification (no low-s rule): u1*G + u2*Q via two comb ECSMs."""
    curve = cache.curve
    n = curve.n
    r, s = sig
    curve.validate_public(Q)
    charge("ecdsa_verify")
    if not (0 < r < n and 0 < s < n):
        return False
    scalars = FieldCtx(n)
    w = mod_inv_euclid(FieldElement(s, scalars))
    u1 = mod_mul(scalars.element(_hash_to_int(msg_hash, n)), w).value
    u2 = mod_mul(scalars.element(r), w).value
    term = curve.ecsm(u1, cache.table_for(curve.G)) if u1 else curve.infinity
    point = curve.point_add(term, curve.ecsm(u2, cache.table_for(Q)))
    if point.is_infinity:
        return False
    return point.x.value % n == r
