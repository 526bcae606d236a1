#!/usr/bin/env python

"""
Command-line front door of the DTLS engine simulator.

    python app.py hash --hex 616263
    python app.py handshake-sim --drop 0.2 --seed 7 --log run.jsonl
    python app.py energy total --Eh 0.150 --Ea 125e-9 --N 32 --tsession 86400 --tappdata 1

Exit codes: 0 success, 2 usage error, 3 cryptographic failure, 4 protocol failure.
"""

import contextlib
import io
import json
import logging
from typing import Optional

import typer

from data_manager import (GOLDEN_DIR, WIRE_DIR, check_golden, load_calibration, load_scenario, parse_hex,
                          read_input, resolve_curve, write_event_log, write_golden)
from utils.bigmod import OpTrace, u256_from_hex
from utils.cert import (CertChainPolicy, Identity, certificate_summary, issue_certificate, make_ca,
                        make_identity, parse_certificate, validate)
from utils.costmodel import (AnalysisParams, comb_amortization, contour_figure, contour_sweep, e_total,
                             fermat_vs_euclid_ratio, ledger_report, metering)
from utils.curve import (ecdh_derive, ecdsa_sign, ecdsa_verify, generator_cache, keypair_from_seed,
                         recover_scalar_bits, scalar_from_drbg)
from utils.errors import CryptoError, EngineError, ProtocolError, UsageError
from utils.handshake import provision, run_lockstep, seed_bytes
from utils.kdf import KeySchedule, drbg_generate, drbg_instantiate, hkdf_expand, hkdf_extract, key_schedule_advance
from utils.netsim import run_handshake
from utils.protocols import bench_ecmqv, bench_merkle, bench_schnorr, merkle_build
from utils.symmetric import GcmParams, gcm_open, gcm_seal, hmac_sha256, sha256

# Configure logging
logging.basicConfig(level=logging.INFO, format='%(asctime)s - %(name)s - %(levelname)s - %(message)s')
logger = logging.getLogger(__name__)

EXIT_USAGE = 2
EXIT_CRYPTO = 3
EXIT_PROTOCOL = 4
EXIT_OTHER = 1

app = typer.Typer(add_completion=False, help="DTLS 1.3 crypto engine simulator.")
app_cert = typer.Typer(help="Certificate tooling.")
app_energy = typer.Typer(help="Energy analysis.")
app_bench = typer.Typer(help="Protocols beyond DTLS on the same primitives.")
app.add_typer(app_cert, name="cert")
app.add_typer(app_energy, name="energy")
app.add_typer(app_bench, name="bench")

opt_hex = typer.Option(None, "--hex", help="Input as hex (case-insensitive).")
opt_file = typer.Option(None, "--file", help="Input file, read whole (at most 16 MiB).")
opt_curve = typer.Option("P-256", "--curve", help="Curve preset or .curve file.")
opt_calibration = typer.Option(None, "--calibration", help="Calibration YAML (default calibration/energy.yaml).")


@app.callback()
def main(verbose: bool = typer.Option(False, "--verbose", "-v", help="Debug logging on stderr."),
         quiet: bool = typer.Option(False, "--quiet", "-q", help="Only warnings and errors on stderr.")):
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.getLogger().setLevel(level)


@contextlib.contextmanager
def guarded(operation):
    """Map engine errors to exit codes; the error text goes to the log on stderr."""
    try:
        yield
    except typer.Exit:
        raise
    except UsageError as e:
        logger.error(f"Error in {operation}: {str(e)}")
        raise typer.Exit(EXIT_USAGE)
    except CryptoError as e:
        logger.error(f"Error in {operation}: {str(e)}")
        raise typer.Exit(EXIT_CRYPTO)
    except ProtocolError as e:
        logger.error(f"Error in {operation}: {str(e)}")
        raise typer.Exit(EXIT_PROTOCOL)
    except (EngineError, OSError) as e:
        logger.error(f"Error in {operation}: {str(e)}")
        raise typer.Exit(EXIT_OTHER)


def emit(obj):
    typer.echo(json.dumps(obj, indent=2, sort_keys=True))


def _private_key(text, curve):
    d = u256_from_hex(text)
    if not 0 < d < curve.n:
        raise UsageError(f"Scalar out of range [1, n-1] for curve {curve.name}")
    return d


def _scalar_width(curve):
    return (curve.n.bit_length() + 7) // 8


# -- primitives -----------------------------------------------------------

@app.command("hash")
def hash_command(hex_value: Optional[str] = opt_hex, file: Optional[str] = opt_file):
    """SHA-256 digest."""
    with guarded("hash"):
        typer.echo(sha256(read_input(file, hex_value)).hex())


@app.command("hmac")
def hmac_command(key: str = typer.Option(..., "--key", help="Key as hex."),
                 hex_value: Optional[str] = opt_hex, file: Optional[str] = opt_file):
    """HMAC-SHA256."""
    with guarded("hmac"):
        typer.echo(hmac_sha256(parse_hex(key, "key"), read_input(file, hex_value)).hex())


@app.command("hkdf")
def hkdf_command(ikm: str = typer.Option(..., "--ikm", help="Input keying material as hex."),
                 salt: str = typer.Option("", "--salt", help="Salt as hex (empty means 32 zero bytes)."),
                 info: str = typer.Option("", "--info", help="Info as hex."),
                 length: int = typer.Option(32, "--length", help="Output length in bytes (at most 8160).")):
    """HKDF-SHA256 extract-then-expand; prints the output keying material."""
    with guarded("hkdf"):
        prk = hkdf_extract(parse_hex(salt, "salt"), parse_hex(ikm, "ikm"))
        typer.echo(hkdf_expand(prk, parse_hex(info, "info"), length).hex())


@app.command("drbg")
def drbg_command(seed: str = typer.Option(..., "--seed", help="Seed material as hex."),
                 bits: int = typer.Option(256, "--bits", help="Bits per generate call."),
                 count: int = typer.Option(1, "--count", help="Number of generate calls.")):
    """HMAC-DRBG output, one generate call per line."""
    with guarded("drbg"):
        state = drbg_instantiate(parse_hex(seed, "seed"))
        for _ in range(count):
            typer.echo(drbg_generate(state, bits).hex())


@app.command("aead-seal")
def aead_seal_command(key: str = typer.Option(..., "--key", help="16-byte key as hex."),
                      iv: str = typer.Option(..., "--iv", help="12-byte IV as hex."),
                      aad: str = typer.Option("", "--aad", help="Associated data as hex."),
                      tag_len: int = typer.Option(16, "--tag-len", help="Tag length: 4, 8, 12 or 16."),
                      hex_value: Optional[str] = opt_hex, file: Optional[str] = opt_file):
    """AES-128-GCM encryption; prints ciphertext || tag."""
    with guarded("aead-seal"):
        ct, tag = gcm_seal(parse_hex(key, "key"), parse_hex(iv, "iv"), parse_hex(aad, "aad"),
                           read_input(file, hex_value), GcmParams(tag_len=tag_len))
        typer.echo((ct + tag).hex())


@app.command("aead-open")
def aead_open_command(key: str = typer.Option(..., "--key", help="16-byte key as hex."),
                      iv: str = typer.Option(..., "--iv", help="12-byte IV as hex."),
                      aad: str = typer.Option("", "--aad", help="Associated data as hex."),
                      tag_len: int = typer.Option(16, "--tag-len", help="Tag length: 4, 8, 12 or 16."),
                      hex_value: Optional[str] = opt_hex, file: Optional[str] = opt_file):
    """AES-128-GCM decryption of ciphertext || tag; exit 3 when the tag does not verify."""
    with guarded("aead-open"):
        params = GcmParams(tag_len=tag_len)
        sealed = read_input(file, hex_value)
        if len(sealed) < params.tag_len:
            raise UsageError("Input shorter than the tag")
        split = len(sealed) - params.tag_len
        typer.echo(gcm_open(parse_hex(key, "key"), parse_hex(iv, "iv"), parse_hex(aad, "aad"),
                            sealed[:split], sealed[split:], params).hex())


# -- elliptic curves --------------------------------------------------------

@app.command("keygen")
def keygen_command(curve: str = opt_curve, seed: str = typer.Option(..., "--seed", help="Seed string.")):
    """Deterministic key pair from a seed."""
    with guarded("keygen"):
        c = resolve_curve(curve)
        d, q = keypair_from_seed(generator_cache(c), seed_bytes(seed))
        emit({"curve": c.name, "private_key": format(d, "x"), "public_key": c.encode_point(q).hex()})


@app.command("sign")
def sign_command(curve: str = opt_curve, key: str = typer.Option(..., "--key", help="Private key as hex."),
                 hex_value: Optional[str] = opt_hex, file: Optional[str] = opt_file):
    """Deterministic ECDSA over SHA-256 of the message; prints r || s."""
    with guarded("sign"):
        c = resolve_curve(curve)
        r, s = ecdsa_sign(generator_cache(c), _private_key(key, c), sha256(read_input(file, hex_value)))
        width = _scalar_width(c)
        typer.echo((r.to_bytes(width, "big") + s.to_bytes(width, "big")).hex())


@app.command("verify")
def verify_command(curve: str = opt_curve,
                   public: str = typer.Option(..., "--public", help="Uncompressed public point as hex."),
                   signature: str = typer.Option(..., "--signature", help="r || s as hex."),
                   hex_value: Optional[str] = opt_hex, file: Optional[str] = opt_file):
    """ECDSA verification; prints valid or invalid (exit 3)."""
    with guarded("verify"):
        c = resolve_curve(curve)
        width = _scalar_width(c)
        sig = parse_hex(signature, "signature")
        if len(sig) != 2 * width:
            raise UsageError(f"Signature must be {2 * width} bytes on {c.name}")
        sig = (int.from_bytes(sig[:width], "big"), int.from_bytes(sig[width:], "big"))
        q = c.decode_point(parse_hex(public, "public key"))
        if not ecdsa_verify(generator_cache(c), q, sha256(read_input(file, hex_value)), sig):
            typer.echo("invalid")
            raise typer.Exit(EXIT_CRYPTO)
        typer.echo("valid")


@app.command("ecdh")
def ecdh_command(curve: str = opt_curve, key: str = typer.Option(..., "--key", help="Private key as hex."),
                 peer: str = typer.Option(..., "--peer", help="Peer public point as hex.")):
    """ECDH shared secret (x-coordinate, 32 bytes)."""
    with guarded("ecdh"):
        c = resolve_curve(curve)
        typer.echo(ecdh_derive(generator_cache(c), _private_key(key, c), c.decode_point(parse_hex(peer, "peer"))).hex())


@app.command("ecsm")
def ecsm_command(curve: str = opt_curve, scalar: str = typer.Option(..., "--scalar", help="Scalar as hex."),
                 point: Optional[str] = typer.Option(None, "--point", help="Base point as hex (default G)."),
                 naive: bool = typer.Option(False, "--naive", help="Textbook double-and-add instead of the comb."),
                 trace: bool = typer.Option(False, "--trace", help="Also print the point-operation trace.")):
    """Scalar multiplication k * P."""
    with guarded("ecsm"):
        c = resolve_curve(curve)
        k = _private_key(scalar, c)
        base = c.decode_point(parse_hex(point, "point")) if point else c.G
        table = None if naive else generator_cache(c).table_for(base)
        ops = OpTrace()
        with metering(trace=ops if trace else None):
            result = c.ecsm_naive(k, base) if naive else c.ecsm(k, table)
        typer.echo(c.encode_point(result).hex() if not result.is_infinity else "infinity")
        if trace:
            typer.echo(ops.encode(point_only=True).decode("ascii"))


@app.command("spa-audit")
def spa_audit_command(curve: str = opt_curve,
                      scalars: int = typer.Option(100, "--scalars", help="Number of random scalars."),
                      seed: str = typer.Option(..., "--seed", help="Seed string for the scalars.")):
    """Operation-trace audit: comb traces must not depend on the scalar, the naive ladder leaks it."""
    with guarded("spa-audit"):
        if scalars < 1:
            raise UsageError("--scalars must be at least 1")
        c = resolve_curve(curve)
        drbg = drbg_instantiate(b"spa-audit|" + seed_bytes(seed))
        ks = [scalar_from_drbg(drbg, c.n) for _ in range(scalars)]
        table = c.g_table
        traces = []
        for k in ks:
            ops = OpTrace()
            with metering(trace=ops):
                c.ecsm(k, table)
            traces.append(ops)
        uniform = all(t == traces[0] for t in traces[1:])
        naive = OpTrace()
        with metering(trace=naive):
            c.ecsm_naive(ks[0], c.G)
        recovered = recover_scalar_bits(naive)
        emit({
            "curve": c.name,
            "scalars": scalars,
            "comb": {"verdict": "UNIFORM" if uniform else "LEAKY", "point_ops": len(traces[0].point_ops()),
                     "field_ops": len(traces[0])},
            "naive": {"verdict": "LEAKY" if recovered == ks[0] else "UNIFORM", "recovered": format(recovered, "x"),
                      "matches_scalar": recovered == ks[0]},
        })
        logger.info(f"SPA audit over {scalars} scalars: comb {'uniform' if uniform else 'leaky'}")


# -- certificates -----------------------------------------------------------

def _load_ca(path):
    with open(path, "r", encoding="utf-8") as handle:
        data = json.load(handle)
    try:
        c = resolve_curve(data["curve"])
        ca = Identity(bytes.fromhex(data["name"]), int(data["private_key"], 16),
                      c.decode_point(bytes.fromhex(data["public_key"])))
    except (KeyError, ValueError) as e:
        raise UsageError(f"Malformed CA file {path}: {str(e)}")
    return c, ca


@app_cert.command("make-ca")
def cert_make_ca(curve: str = opt_curve, seed: str = typer.Option(..., "--seed", help="Seed string."),
                 name: str = typer.Option("DTLS Engine Test CA", "--name", help="CA common name."),
                 out: Optional[str] = typer.Option(None, "--out", help="Write the CA file here.")):
    """Create a CA key pair; the CA file holds the private key."""
    with guarded("cert make-ca"):
        c = resolve_curve(curve)
        ca = make_ca(generator_cache(c), seed_bytes(seed), name)
        data = {"curve": c.name, "name": ca.name.hex(), "private_key": format(ca.private_key, "x"),
                "public_key": c.encode_point(ca.public_key).hex()}
        if out:
            with open(out, "w", encoding="utf-8") as handle:
                json.dump(data, handle, indent=2, sort_keys=True)
            logger.info(f"CA written to {out}")
        emit({key: value for key, value in data.items() if key != "private_key"} if out else data)


@app_cert.command("issue")
def cert_issue(ca_file: str = typer.Option(..., "--ca", help="CA file from make-ca."),
               subject: str = typer.Option(..., "--subject", help="Subject common name."),
               seed: str = typer.Option(..., "--seed", help="Seed string for the subject key."),
               serial: int = typer.Option(1, "--serial"),
               not_before: int = typer.Option(0, "--not-before", help="Virtual seconds since 2000-01-01."),
               not_after: int = typer.Option(10 * 365 * 86400, "--not-after", help="Virtual seconds since 2000-01-01."),
               out: Optional[str] = typer.Option(None, "--out", help="Write the DER here.")):
    """Issue a leaf certificate; prints the DER as hex, or its fingerprint with --out."""
    with guarded("cert issue"):
        c, ca = _load_ca(ca_file)
        cache = generator_cache(c)
        identity = make_identity(cache, seed_bytes(seed), subject)
        cert = issue_certificate(cache, ca, identity, serial=serial, not_before=not_before, not_after=not_after)
        if out:
            with open(out, "wb") as handle:
                handle.write(cert.der)
            typer.echo(cert.fingerprint.hex())
        else:
            typer.echo(cert.der.hex())


@app_cert.command("show")
def cert_show(curve: str = opt_curve, hex_value: Optional[str] = opt_hex, file: Optional[str] = opt_file):
    """Parse a certificate and print its fields."""
    with guarded("cert show"):
        emit(certificate_summary(parse_certificate(read_input(file, hex_value), resolve_curve(curve))))


@app_cert.command("verify")
def cert_verify(ca_file: str = typer.Option(..., "--ca", help="CA file from make-ca."),
                clock: int = typer.Option(365 * 86400, "--clock", help="Virtual time of the check."),
                hex_value: Optional[str] = opt_hex, file: Optional[str] = opt_file):
    """Validate a certificate against the CA; exit 3 with the reason when it fails."""
    with guarded("cert verify"):
        c, ca = _load_ca(ca_file)
        cert = parse_certificate(read_input(file, hex_value), c)
        validate(cert, CertChainPolicy(point_cache=generator_cache(c), ca_public_key=ca.public_key,
                                       clock=clock, ca_name=ca.name))
        typer.echo("valid")


# -- handshake ------------------------------------------------------------

@app.command("handshake-sim")
def handshake_sim(config: Optional[str] = typer.Option(None, "--config", help="Scenario YAML."),
                  curve: Optional[str] = typer.Option(None, "--curve"),
                  mode: Optional[str] = typer.Option(None, "--mode", help="full or cached."),
                  drop: Optional[float] = typer.Option(None, "--drop"),
                  duplicate: Optional[float] = typer.Option(None, "--duplicate"),
                  reorder: Optional[float] = typer.Option(None, "--reorder"),
                  latency: Optional[float] = typer.Option(None, "--latency"),
                  jitter: Optional[float] = typer.Option(None, "--jitter"),
                  timeout: Optional[float] = typer.Option(None, "--timeout"),
                  max_retries: Optional[int] = typer.Option(None, "--max-retries"),
                  tag_len: Optional[int] = typer.Option(None, "--tag-len"),
                  seed: Optional[int] = typer.Option(None, "--seed"),
                  max_time: Optional[float] = typer.Option(None, "--max-time"),
                  log: Optional[str] = typer.Option(None, "--log", help="Write the event log as JSON lines."),
                  calibration: Optional[str] = opt_calibration):
    """Co-simulate a client and a server over a lossy virtual network."""
    with guarded("handshake-sim"):
        scenario = load_scenario(config, curve=curve, mode=mode, drop_prob=drop, duplicate_prob=duplicate,
                                 reorder_prob=reorder, latency=latency, jitter=jitter, timeout=timeout,
                                 max_retries=max_retries, tag_len=tag_len, seed=seed, max_time=max_time)
        c = resolve_curve(scenario.curve)
        pair = provision(c, scenario.seed, scenario.mode, timeout=scenario.timeout,
                         max_retries=scenario.max_retries, tag_len=scenario.tag_len)
        result = run_handshake(scenario.sim_config(), pair)
        table = load_calibration(calibration)
        summary = result.summary()
        summary["energy_uj"] = {
            "client": ledger_report(result.client_ledger, table)["energy_uj"]["total"],
            "server": ledger_report(result.server_ledger, table)["energy_uj"]["total"],
        }
        summary["scenario"] = {"curve": c.name, "mode": scenario.mode.value, "seed": scenario.seed}
        if log:
            write_event_log(result.events, log)
        emit(summary)
        if not result.completed:
            raise ProtocolError(f"Handshake did not complete (client {result.client_state}, "
                                f"server {result.server_state})")


# -- energy ----------------------------------------------------------------

@app_energy.command("total")
def energy_total(e_handshake: float = typer.Option(0.150, "--Eh", help="Handshake energy (J)."),
                 e_appdata: float = typer.Option(125e-9, "--Ea", help="Application data energy (J per byte)."),
                 n_bytes: float = typer.Option(32, "--N", help="Payload bytes per transmission."),
                 t_session: float = typer.Option(86400, "--tsession", help="Session duration (s)."),
                 t_appdata: float = typer.Option(1, "--tappdata", help="Seconds between transmissions.")):
    """Total session energy and the share spent in the handshake."""
    with guarded("energy total"):
        total, fraction = e_total(AnalysisParams(e_handshake, e_appdata, n_bytes, t_session, t_appdata))
        emit({"e_total_j": total, "handshake_fraction": fraction, "handshake_percent": round(100 * fraction, 3)})


@app_energy.command("contour")
def energy_contour(e_handshake: float = typer.Option(0.150, "--Eh", help="Handshake energy (J)."),
                   e_appdata: float = typer.Option(125e-9, "--Ea", help="Application data energy (J per byte)."),
                   out: Optional[str] = typer.Option(None, "--out", help="CSV path (default stdout)."),
                   html: Optional[str] = typer.Option(None, "--html", help="Also write a plotly contour page.")):
    """Handshake share over payload size and data period, for one day and one week sessions."""
    with guarded("energy contour"):
        frame = contour_sweep(e_handshake, e_appdata)
        if out:
            frame.to_csv(out, index=False)
            logger.info(f"Contour grid ({len(frame)} rows) written to {out}")
        else:
            typer.echo(frame.to_csv(index=False), nl=False)
        if html:
            contour_figure(frame).write_html(html, include_plotlyjs="cdn")
            logger.info(f"Contour figure written to {html}")


@app_energy.command("handshake")
def energy_handshake(curve: str = opt_curve, seed: str = typer.Option(..., "--seed", help="Deployment seed."),
                     calibration: Optional[str] = opt_calibration):
    """Modeled client handshake energy in full and cached mode over a perfect channel."""
    with guarded("energy handshake"):
        c = resolve_curve(curve)
        table = load_calibration(calibration)
        ledgers = {}
        for mode in ("full", "cached"):
            pair = provision(c, seed, mode)
            client, server, _ = run_lockstep(pair.client, pair.server)
            if not (client.established and server.established):
                raise ProtocolError(f"{mode} handshake did not complete")
            ledgers[mode] = client.ledger
        full = ledger_report(ledgers["full"], table, target="handshake_full")
        cached = ledger_report(ledgers["cached"], table, baseline=ledgers["full"], target="handshake_cached")
        emit({"full": full, "cached": cached, "comb_amortization": comb_amortization(cached),
              "fermat_vs_euclid": fermat_vs_euclid_ratio(table)})


# -- benchmarks ------------------------------------------------------------

@app_bench.command("ecmqv")
def bench_ecmqv_command(curve: str = opt_curve, seed: str = typer.Option(..., "--seed"),
                        calibration: Optional[str] = opt_calibration):
    """One ECMQV key derivation."""
    with guarded("bench ecmqv"):
        emit(bench_ecmqv(resolve_curve(curve), seed, load_calibration(calibration)))


@app_bench.command("schnorr")
def bench_schnorr_command(curve: str = opt_curve, seed: str = typer.Option(..., "--seed"),
                          calibration: Optional[str] = opt_calibration):
    """One Schnorr identification run (prover side)."""
    with guarded("bench schnorr"):
        emit(bench_schnorr(resolve_curve(curve), seed, load_calibration(calibration)))


@app_bench.command("merkle")
def bench_merkle_command(seed: str = typer.Option(..., "--seed"),
                         leaves: int = typer.Option(64, "--leaves"),
                         leaf_size: int = typer.Option(32, "--leaf-size"),
                         calibration: Optional[str] = opt_calibration):
    """Merkle tree construction over DRBG-generated leaves."""
    with guarded("bench merkle"):
        emit(bench_merkle(seed, load_calibration(calibration), n_leaves=leaves, leaf_size=leaf_size))


# -- golden files ----------------------------------------------------------

P256_G = ("046b17d1f2e12c4247f8bce6e563a440f277037d812deb33a0f4a13945d898c296"
          "4fe342e2fe1a7f9b8ee7eb4a7c0f9e162bce33576b315ececbb6406837bf51f5")

CLI_GOLDENS = {
    "cli_hash_abc.txt": ["hash", "--hex", "616263"],
    "cli_hmac.txt": ["hmac", "--key", "0b" * 20, "--hex", "4869205468657265"],
    "cli_hkdf.txt": ["hkdf", "--ikm", "0b" * 22, "--salt", "000102030405060708090a0b0c",
                     "--info", "f0f1f2f3f4f5f6f7f8f9", "--length", "42"],
    "cli_drbg.txt": ["drbg", "--seed", "000102030405060708090a0b0c0d0e0f", "--bits", "256", "--count", "2"],
    "cli_aead_seal.txt": ["aead-seal", "--key", "00" * 16, "--iv", "00" * 12, "--hex", "00" * 16],
    "cli_aead_open.txt": ["aead-open", "--key", "00" * 16, "--iv", "00" * 12,
                          "--hex", "0388dace60b6a392f328c2b971b2fe78ab6e47d42cec13bdf53a67b21257bddf"],
    "cli_keygen_p256.txt": ["keygen", "--curve", "P-256", "--seed", "golden"],
    "cli_sign_p256.txt": ["sign", "--key", "1", "--hex", "616263"],
    "cli_verify_p256.txt": ["verify", "--public", P256_G, "--signature", "00" * 31 + "01" + "00" * 31 + "01",
                            "--hex", "616263"],
    "cli_ecdh_p256.txt": ["ecdh", "--key", "1", "--peer", P256_G],
    "cli_ecsm_toy23.txt": ["ecsm", "--curve", "toy23", "--scalar", "3", "--trace"],
    "cli_spa_audit_p160.txt": ["spa-audit", "--curve", "P-160", "--scalars", "3", "--seed", "golden"],
    "cli_cert_make_ca.txt": ["cert", "make-ca", "--seed", "golden"],
    "cli_handshake_sim.txt": ["handshake-sim", "--seed", "1", "--drop", "0.2"],
    "cli_energy_total.txt": ["energy", "total", "--Eh", "0.150", "--Ea", "125e-9", "--N", "32",
                             "--tsession", "86400", "--tappdata", "1"],
    "cli_bench_merkle.txt": ["bench", "merkle", "--seed", "golden", "--leaves", "7"],
    "cli_bench_ecmqv.txt": ["bench", "ecmqv", "--seed", "golden"],
    "cli_bench_schnorr.txt": ["bench", "schnorr", "--seed", "golden"],
    "cli_energy_contour.txt": ["energy", "contour"],
}


def run_cli(argv):
    """
    Run one command in-process.

    Returns:
        tuple: (exit code, stdout text)
    """
    buffer = io.StringIO()
    with contextlib.redirect_stdout(buffer):
        code = typer.main.get_command(app).main(args=list(argv), prog_name="app.py", standalone_mode=False)
    return code or 0, buffer.getvalue()


def kdf_chain_text():
    ks = KeySchedule()
    key_schedule_advance(ks)
    key_schedule_advance(ks, ecdhe=sha256(b"golden ecdhe"), transcript_hash=sha256(b"golden hello"))
    key_schedule_advance(ks, transcript_hash=sha256(b"golden server finished"))
    return "".join(f"{step} {value}\n" for step, value in ks.derive_chain())


def merkle_roots_text(max_leaves=9):
    lines = []
    for n in range(1, max_leaves + 1):
        tree = merkle_build([f"leaf-{i}".encode("ascii") for i in range(n)])
        lines.append(f"{n} {tree.root.hex()}\n")
    return "".join(lines)


def wire_text(mode, curve="P-256", seed=1):
    pair = provision(resolve_curve(curve), seed, mode)
    client, server, wire = run_lockstep(pair.client, pair.server)
    if not (client.established and server.established):
        raise ProtocolError(f"{mode} handshake did not complete")
    return "".join(f"{role} {datagram.hex()}\n" for role, datagram in wire)


def golden_files():
    """Every golden file as (directory, name, producer)."""
    files = [(GOLDEN_DIR, name, (lambda argv=argv: run_cli(argv)[1])) for name, argv in CLI_GOLDENS.items()]
    files.append((GOLDEN_DIR, "kdf_chain.txt", kdf_chain_text))
    files.append((GOLDEN_DIR, "merkle_roots.txt", merkle_roots_text))
    for mode in ("full", "cached"):
        files.append((WIRE_DIR, f"handshake_p256_{mode}.hex", (lambda mode=mode: wire_text(mode))))
    return files


@app.command("golden")
def golden_command(check: bool = typer.Option(False, "--check", help="Compare instead of rewriting.")):
    """Regenerate (or check) every golden file."""
    with guarded("golden"):
        mismatches = []
        for directory, name, producer in golden_files():
            text = producer()
            if check:
                if not check_golden(name, text, directory):
                    mismatches.append(name)
            else:
                write_golden(name, text, directory)
        for name in mismatches:
            typer.echo(f"mismatch {name}")
        typer.echo(f"{len(golden_files())} golden files {'checked' if check else 'written'}")
        if mismatches:
            raise typer.Exit(EXIT_OTHER)


if __name__ == "__main__":
    app()
