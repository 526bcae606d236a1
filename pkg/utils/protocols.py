#!/usr/bin/env python

"""
Protocols built on the standalone primitives: Merkle hashing, Schnorr
identification and ECMQV key agreement, each with a benchmark that meters
one run and prices it with the calibration table.
"""

import logging
import math

import attr

from utils.costmodel import CostLedger, ledger_report, metering
from utils.curve import generator_cache, scalar_from_drbg
from utils.errors import UsageError, ValidationError
from utils.handshake import seed_bytes
from utils.kdf import bits_to_int, drbg_generate, drbg_instantiate, hkdf_extract
from utils.symmetric import sha256

# Configure logging
logger = logging.getLogger(__name__)

ECMQV_SALT = b"dtls-engine ecmqv"


# -- Merkle hashing ----------------------------------------------------

@attr.frozen
class MerkleTree:
    """
    Binary hash tree. Level 0 holds sha256(leaf); a level with an odd number
    of nodes pairs its last node with itself.
    """
    leaves: tuple
    levels: tuple

    @property
    def root(self):
        return self.levels[-1][0]

    @property
    def size(self):
        return len(self.leaves)


@attr.frozen
class MerkleProof:
    index: int
    siblings: tuple

    def __len__(self):
        return len(self.siblings)


def merkle_build(leaves):
    leaves = tuple(bytes(leaf) for leaf in leaves)
    if not leaves:
        raise UsageError("A Merkle tree needs at least one leaf")
    level = [sha256(leaf) for leaf in leaves]
    levels = [tuple(level)]
    while len(level) > 1:
        if len(level) % 2:
            level = level + [level[-1]]
        level = [sha256(level[i] + level[i + 1]) for i in range(0, len(level), 2)]
        levels.append(tuple(level))
    logger.debug(f"Merkle tree over {len(leaves)} leaves, depth {len(levels) - 1}")
    return MerkleTree(leaves, tuple(levels))


def merkle_prove(tree, index):
    """Sibling path from leaf ``index`` to the root; ceil(log2 n) hashes long."""
    if not 0 <= index < tree.size:
        raise UsageError(f"Leaf index {index} outside a tree of {tree.size} leaves")
    siblings = []
    position = index
    for level in tree.levels[:-1]:
        sibling = position ^ 1
        siblings.append(level[sibling] if sibling < len(level) else level[position])
        position //= 2
    return MerkleProof(index, tuple(siblings))


def merkle_verify(root, leaf, proof):
    node = sha256(bytes(leaf))
    position = proof.index
    for sibling in proof.siblings:
        node = sha256(sibling + node) if position & 1 else sha256(node + sibling)
        position //= 2
    return position == 0 and node == root


def merkle_depth(n_leaves):
    return math.ceil(math.log2(n_leaves)) if n_leaves > 1 else 0


# -- Schnorr identification --------------------------------------------

@attr.frozen
class SchnorrTranscript:
    commitment: object
    challenge: int
    response: int


def schnorr_commit(cache, drbg):
    """Prover's first move: fresh r and R = rG."""
    r = scalar_from_drbg(drbg, cache.curve.n)
    return r, cache.curve.ecsm(r, cache.table_for(cache.curve.G))


def schnorr_challenge(drbg, n):
    """Verifier's challenge: one generate of bitlen(n) bits, reduced mod n."""
    t = n.bit_length()
    return bits_to_int(drbg_generate(drbg, t), t) % n


def schnorr_respond(r, challenge, secret, n):
    return (r + challenge * secret) % n


def schnorr_prove(cache, secret, prover_drbg, verifier_drbg):
    """
    Run the three-move identification protocol between an honest prover and
    a verifier whose challenges come from ``verifier_drbg``.

    Returns:
        SchnorrTranscript
    """
    n = cache.curve.n
    r, commitment = schnorr_commit(cache, prover_drbg)
    challenge = schnorr_challenge(verifier_drbg, n)
    return SchnorrTranscript(commitment, challenge, schnorr_respond(r, challenge, secret, n))


def _multiple(cache, k, point):
    """k * point, with 0 mapped to infinity instead of rejected."""
    curve = cache.curve
    k %= curve.n
    if k == 0:
        return curve.infinity
    return curve.ecsm(k, cache.table_for(point))


def schnorr_verify(cache, public_key, transcript):
    """Accept iff s*G == R + c*Q."""
    curve = cache.curve
    curve.validate_public(public_key)
    if not curve.is_on_curve(transcript.commitment):
        return False
    if not (0 <= transcript.challenge < curve.n and 0 <= transcript.response < curve.n):
        return False
    left = _multiple(cache, transcript.response, curve.G)
    right = curve.point_add(transcript.commitment, _multiple(cache, transcript.challenge, public_key))
    return left == right


def schnorr_simulate(cache, public_key, drbg):
    """Transcript produced without the secret: pick c and s, then R = sG - cQ."""
    curve = cache.curve
    n = curve.n
    while True:
        challenge = schnorr_challenge(drbg, n)
        response = scalar_from_drbg(drbg, n)
        commitment = curve.point_add(_multiple(cache, response, curve.G),
                                     curve.negate(_multiple(cache, challenge, public_key)))
        if not commitment.is_infinity:
            return SchnorrTranscript(commitment, challenge, response)


# -- ECMQV -------------------------------------------------------------

@attr.frozen
class EcmqvParty:
    static_private: int
    static_public: object
    ephemeral_private: int
    ephemeral_public: object


@attr.frozen
class EcmqvContext:
    initiator: EcmqvParty
    responder: EcmqvParty
    shared: bytes


def ecmqv_party(cache, seed, ephemeral_is_static=False):
    """Static and ephemeral key pairs drawn from one DRBG seeded with ``seed``."""
    drbg = drbg_instantiate(seed_bytes(seed))
    n = cache.curve.n
    static = scalar_from_drbg(drbg, n)
    ephemeral = static if ephemeral_is_static else scalar_from_drbg(drbg, n)
    table = cache.table_for(cache.curve.G)
    static_public = cache.curve.ecsm(static, table)
    ephemeral_public = static_public if ephemeral_is_static else cache.curve.ecsm(ephemeral, table)
    return EcmqvParty(static, static_public, ephemeral, ephemeral_public)


def associate_value(point, n):
    """(x mod 2^h) + 2^h with h = ceil(bitlen(n) / 2)."""
    h = math.ceil(n.bit_length() / 2)
    return (point.x.value % (1 << h)) + (1 << h)


def ecmqv_derive(cache, own, peer_static, peer_ephemeral):
    """
    Shared secret of ``own`` with a peer's static and ephemeral public keys.

    Returns:
        bytes: hkdf_extract over the x-coordinate of the shared point
    """
    curve = cache.curve
    n = curve.n
    curve.validate_public(peer_static)
    curve.validate_public(peer_ephemeral)
    implicit = (own.ephemeral_private + associate_value(own.ephemeral_public, n) * own.static_private) % n
    peer_point = curve.point_add(peer_ephemeral,
                                 _multiple(cache, associate_value(peer_ephemeral, n), peer_static))
    if peer_point.is_infinity:
        raise ValidationError("ECMQV peer combination is the point at infinity")
    scalar = (curve.params.cofactor * implicit) % n
    if scalar == 0:
        raise ValidationError("ECMQV implicit signature vanished")
    shared = curve.ecsm(scalar, cache.table_for(peer_point))
    return hkdf_extract(ECMQV_SALT, shared.x.value.to_bytes(curve.field.byte_length, "big"))


def ecmqv_exchange(cache, initiator, responder):
    a = ecmqv_derive(cache, initiator, responder.static_public, responder.ephemeral_public)
    b = ecmqv_derive(cache, responder, initiator.static_public, initiator.ephemeral_public)
    if a != b:
        raise ValidationError("ECMQV parties derived different secrets")
    return EcmqvContext(initiator, responder, a)


# -- benchmarks ----------------------------------------------------------

def _benchmark(name, ledger, table, improvement_key):
    report = ledger_report(ledger, table)
    accelerated = report["energy_uj"]["total"]
    software = {"accelerated_uj": accelerated}
    if improvement_key in table.reference:
        improvement = table.reference[improvement_key].si
        software["improvement"] = improvement
        software["software_uj"] = accelerated * improvement
    ecsm_count = sum(ledger.ecsm.values())
    if ecsm_count and "software_comb_ecsm_256" in table.reference:
        software["software_ecsm_uj"] = ecsm_count * table.reference["software_comb_ecsm_256"].si * 1e6
    report["benchmark"] = name
    report["software"] = software
    logger.info(f"Benchmark {name}: {accelerated:.3f} uJ accelerated")
    return report


def bench_ecmqv(curve, seed, table):
    cache = generator_cache(curve)
    with metering():
        initiator = ecmqv_party(cache, b"initiator|" + seed_bytes(seed))
        responder = ecmqv_party(cache, b"responder|" + seed_bytes(seed))
    ledger = CostLedger()
    with metering(ledger):
        ecmqv_derive(cache, initiator, responder.static_public, responder.ephemeral_public)
    return _benchmark("ecmqv", ledger, table, "improvement_ecc")


def bench_schnorr(curve, seed, table):
    cache = generator_cache(curve)
    prover = drbg_instantiate(b"prover|" + seed_bytes(seed))
    verifier = drbg_instantiate(b"verifier|" + seed_bytes(seed))
    with metering():
        secret = scalar_from_drbg(prover, curve.n)
        public_key = curve.ecsm(secret, curve.g_table)
    ledger = CostLedger()
    with metering(ledger):
        transcript = schnorr_prove(cache, secret, prover, verifier)
    report = _benchmark("schnorr", ledger, table, "improvement_ecc")
    report["accepted"] = schnorr_verify(cache, public_key, transcript)
    return report


def bench_merkle(seed, table, n_leaves=64, leaf_size=32):
    if n_leaves < 1 or leaf_size < 0:
        raise UsageError("Merkle benchmark needs at least one leaf")
    drbg = drbg_instantiate(b"merkle|" + seed_bytes(seed))
    leaves = [drbg_generate(drbg, 8 * leaf_size) for _ in range(n_leaves)]
    ledger = CostLedger()
    with metering(ledger):
        tree = merkle_build(leaves)
    report = _benchmark("merkle", ledger, table, "improvement_merkle")
    report["root"] = tree.root.hex()
    report["leaves"] = n_leaves
    return report
