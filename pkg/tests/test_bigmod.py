import pytest

from utils.bigmod import (FieldCtx, FieldElement, Op, OpTrace, mod_add, mod_div_euclid, mod_inv_euclid,
                          mod_inv_fermat, mod_mul, mod_neg, mod_select, mod_sub, u256_from_hex, u256_to_hex)
from utils.costmodel import CostLedger, metering
from utils.curve import Curve
from utils.errors import NotInvertibleError, UsageError

P256 = 0xffffffff00000001000000000000000000000000ffffffffffffffffffffffff


@pytest.fixture
def field():
    return FieldCtx(P256)


def random_element(field, rng, nonzero=False):
    low = 1 if nonzero else 0
    return field.element(low + int.from_bytes(rng.bytes(field.byte_length + 8), "big") % (field.p - low))


def test_u256_hex_is_case_insensitive():
    assert u256_from_hex("0xABcd") == 0xabcd
    assert u256_to_hex(0xabcd) == "0" * 60 + "abcd"


@pytest.mark.parametrize("text", ["xyz", "1" + "0" * 64])
def test_u256_rejects_bad_values(text):
    with pytest.raises(UsageError):
        u256_from_hex(text)


def test_field_ctx_rejects_even_modulus():
    with pytest.raises(UsageError):
        FieldCtx(100)


def test_field_ctx_width(field):
    assert field.t == 256
    assert FieldCtx(23).t == 5


def test_unreduced_element_rejected(field):
    with pytest.raises(UsageError):
        FieldElement(P256, field)


def test_add_sub_match_integers(field, rng):
    for _ in range(200):
        a, b = random_element(field, rng), random_element(field, rng)
        assert mod_add(a, b).value == (a.value + b.value) % P256
        assert mod_sub(a, b).value == (a.value - b.value) % P256
        assert mod_sub(mod_add(a, b), b) == a


def test_add_wraps_at_modulus(field):
    assert mod_add(field.element(P256 - 1), field.one).value == 0
    assert mod_sub(field.zero, field.one).value == P256 - 1
    assert mod_neg(field.zero).value == 0


def test_mismatched_contexts_rejected(field):
    with pytest.raises(UsageError):
        mod_add(field.one, FieldCtx(23).one)


def test_mul_matches_integers_on_both_paths(field, rng):
    for _ in range(100):
        a, b = random_element(field, rng), random_element(field, rng)
        expected = a.value * b.value % P256
        assert mod_mul(a, b).value == expected
        with metering(field_ops=True):
            assert mod_mul(a, b).value == expected


def test_mul_runs_t_iterations_for_every_operand_pair(field, rng):
    trace = OpTrace()
    with metering(trace=trace):
        for _ in range(100):
            mod_mul(random_element(field, rng), random_element(field, rng))
    assert trace.ops == [Op.MUL] * 100
    assert set(trace.steps) == {256}


def test_mul_charges_t_cycles(field):
    ledger = CostLedger(field_ops=True)
    with metering(ledger):
        mod_mul(field.element(3), field.element(5))
    assert ledger.mod_mul[256] == 1
    assert ledger.mul_cycles == 256


def test_add_charges_one_cycle(field):
    ledger = CostLedger(field_ops=True)
    trace = OpTrace()
    with metering(ledger, trace=trace):
        mod_add(field.one, field.one)
        mod_sub(field.one, field.one)
    assert ledger.mod_add == 2
    assert trace.ops == [Op.ADD, Op.SUB]


def test_unmetered_calls_leave_no_trace(field):
    ledger = CostLedger()
    with metering(ledger):
        mod_mul(field.element(7), field.element(9))
    assert ledger.mod_mul == {}


def test_select_blends_without_branching(field):
    x, y = field.element(11), field.element(22)
    assert mod_select(1, x, y) == x
    assert mod_select(0, x, y) == y
    trace = OpTrace()
    with metering(trace=trace):
        mod_select(True, x, y)
        mod_select(False, x, y)
    assert trace.ops == [Op.CSEL, Op.CSEL]


def test_euclid_inverse(field, rng):
    for _ in range(100):
        a = random_element(field, rng, nonzero=True)
        with metering(field_ops=True):
            inverse = mod_inv_euclid(a)
        assert mod_mul(inverse, a) == field.one


def test_fermat_agrees_with_euclid(field, rng):
    for _ in range(20):
        a = random_element(field, rng, nonzero=True)
        assert mod_inv_fermat(a) == mod_inv_euclid(a)


def test_division(field, rng):
    num, den = random_element(field, rng), random_element(field, rng, nonzero=True)
    with metering(field_ops=True):
        quotient = mod_div_euclid(num, den)
    assert mod_mul(quotient, den) == num


def test_euclid_cycle_band(field, rng):
    ledger = CostLedger(field_ops=True)
    samples = 200
    with metering(ledger):
        for _ in range(samples):
            mod_inv_euclid(random_element(field, rng, nonzero=True))
    assert ledger.inv_euclid_calls == samples
    assert 600 <= ledger.inv_euclid_iters / samples <= 900


def test_fermat_costs_multiplications(field):
    ledger = CostLedger(field_ops=True)
    with metering(ledger):
        mod_inv_fermat(field.element(12345))
    # p - 2 has 256 bits: 255 squarings plus one multiply per remaining set bit
    exponent = P256 - 2
    assert ledger.mod_mul[256] == 255 + bin(exponent).count("1") - 1


@pytest.mark.parametrize("inverse", [mod_inv_euclid, mod_inv_fermat])
def test_zero_has_no_inverse(field, inverse):
    with pytest.raises(NotInvertibleError):
        inverse(field.zero)


def test_small_field_exhaustive():
    field = FieldCtx(23)
    for a in range(1, 23):
        with metering(field_ops=True):
            inverse = mod_inv_euclid(field.element(a))
        assert inverse.value * a % 23 == 1


NIST_PRIMES = ["P-160", "P-192", "P-224", "P-256"]


def nist_field(name):
    return Curve.from_preset(name).field


@pytest.mark.slow
@pytest.mark.parametrize("name", NIST_PRIMES)
def test_mul_matches_integers_per_prime(name, rng):
    field = nist_field(name)
    for _ in range(10_000):
        a, b = random_element(field, rng), random_element(field, rng)
        expected = a.value * b.value % field.p
        assert mod_mul(a, b).value == expected
        with metering(field_ops=True):
            assert mod_mul(a, b).value == expected


@pytest.mark.slow
@pytest.mark.parametrize("name", NIST_PRIMES)
def test_fermat_agrees_with_euclid_per_prime(name, rng):
    field = nist_field(name)
    for _ in range(1000):
        a = random_element(field, rng, nonzero=True)
        with metering(field_ops=True):
            euclid = mod_inv_euclid(a)
        assert mod_inv_fermat(a) == euclid


@pytest.mark.slow
def test_euclid_cycle_band_over_1000_inputs(field, rng):
    ledger = CostLedger(field_ops=True)
    with metering(ledger):
        for _ in range(1000):
            mod_inv_euclid(random_element(field, rng, nonzero=True))
    assert ledger.inv_euclid_calls == 1000
    assert 600 <= ledger.inv_euclid_iters / 1000 <= 900
