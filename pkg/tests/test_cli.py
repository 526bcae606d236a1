import json

import pytest
from typer.testing import CliRunner

from app import CLI_GOLDENS, app, golden_files, kdf_chain_text, merkle_roots_text, wire_text
from data_manager import check_golden, write_golden
from tests.oracles import key_schedule_reference, merkle_root_reference
from utils.cert import CertMode
from utils.symmetric import sha256

runner = CliRunner()


def run_cli(argv):
    result = runner.invoke(app, argv)
    return result.exit_code, result.stdout


def run_json(argv):
    code, out = run_cli(argv)
    assert code == 0, out
    return json.loads(out)


def test_hash():
    assert run_cli(["hash", "--hex", "616263"]) == (
        0, "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad\n")


def test_hash_of_a_file(tmp_path):
    path = tmp_path / "abc.bin"
    path.write_bytes(b"abc")
    code, out = run_cli(["hash", "--file", str(path)])
    assert code == 0
    assert out.startswith("ba7816bf")


def test_hex_input_is_case_insensitive():
    assert run_cli(["hash", "--hex", "0x61 62 63"])[1] == run_cli(["hash", "--hex", "616263"])[1]
    assert run_cli(["hash", "--hex", "4A"])[1] == run_cli(["hash", "--hex", "4a"])[1]


def test_hkdf_vector():
    code, out = run_cli(CLI_GOLDENS["cli_hkdf.txt"])
    assert code == 0
    assert out.strip().endswith("34007208d5b887185865")


@pytest.mark.parametrize("argv", [
    ["hash"],
    ["hash", "--hex", "zz"],
    ["hkdf", "--ikm", "00", "--length", "9000"],
    ["drbg", "--seed", "00", "--bits", str((1 << 19) + 1)],
    ["aead-seal", "--key", "00", "--iv", "00" * 12, "--hex", ""],
    ["ecsm", "--curve", "toy23", "--scalar", "7"],
    ["keygen", "--curve", "P-999", "--seed", "x"],
])
def test_usage_errors_exit_2(argv):
    assert run_cli(argv)[0] == 2


def test_aead_round_trip_and_tamper():
    key, iv = "11" * 16, "22" * 12
    code, sealed = run_cli(["aead-seal", "--key", key, "--iv", iv, "--aad", "abcd", "--tag-len", "8",
                            "--hex", "68656c6c6f"])
    assert code == 0
    sealed = sealed.strip()
    assert len(sealed) == 2 * (5 + 8)
    opened = run_cli(["aead-open", "--key", key, "--iv", iv, "--aad", "abcd", "--tag-len", "8", "--hex", sealed])
    assert opened == (0, "68656c6c6f\n")
    tampered = sealed[:-1] + ("0" if sealed[-1] != "0" else "1")
    code, out = run_cli(["aead-open", "--key", key, "--iv", iv, "--aad", "abcd", "--tag-len", "8",
                         "--hex", tampered])
    assert code == 3
    assert out == ""


def test_sign_and_verify():
    keys = run_json(["keygen", "--seed", "alice"])
    assert keys["curve"] == "P-256"
    code, signature = run_cli(["sign", "--key", keys["private_key"], "--hex", "6d7367"])
    assert code == 0
    signature = signature.strip()
    assert len(signature) == 128
    argv = ["verify", "--public", keys["public_key"], "--signature", signature]
    assert run_cli(argv + ["--hex", "6d7367"]) == (0, "valid\n")
    assert run_cli(argv + ["--hex", "6d7368"]) == (3, "invalid\n")


def test_signatures_are_deterministic():
    keys = run_json(["keygen", "--seed", "alice"])
    first = run_cli(["sign", "--key", keys["private_key"], "--hex", "00"])
    assert run_cli(["sign", "--key", keys["private_key"], "--hex", "00"]) == first


def test_ecdh_agreement():
    alice = run_json(["keygen", "--seed", "alice"])
    bob = run_json(["keygen", "--seed", "bob"])
    ab = run_cli(["ecdh", "--key", alice["private_key"], "--peer", bob["public_key"]])
    ba = run_cli(["ecdh", "--key", bob["private_key"], "--peer", alice["public_key"]])
    assert ab == ba
    assert len(ab[1].strip()) == 64


def test_ecdh_rejects_off_curve_peer():
    alice = run_json(["keygen", "--seed", "alice"])
    assert run_cli(["ecdh", "--key", alice["private_key"], "--peer", "04" + "00" * 64])[0] == 3


def test_ecsm_trace_lines():
    code, out = run_cli(["ecsm", "--curve", "toy23", "--scalar", "3", "--trace"])
    assert code == 0
    point, trace = out.splitlines()
    assert point.startswith("04")
    assert trace
    naive = run_cli(["ecsm", "--curve", "toy23", "--scalar", "3", "--naive"])[1]
    assert naive.splitlines()[0] == point


def test_spa_audit():
    report = run_json(["spa-audit", "--curve", "P-160", "--scalars", "4", "--seed", "audit"])
    assert report["comb"]["verdict"] == "UNIFORM"
    assert report["naive"]["matches_scalar"] is True
    assert report["naive"]["verdict"] == "LEAKY"


def test_certificate_flow(tmp_path):
    ca_path = str(tmp_path / "ca.json")
    der_path = str(tmp_path / "leaf.der")
    ca = run_json(["cert", "make-ca", "--seed", "cli-ca", "--out", ca_path])
    assert "private_key" not in ca
    code, fingerprint = run_cli(["cert", "issue", "--ca", ca_path, "--subject", "node.test", "--seed", "node",
                                 "--serial", "9", "--out", der_path])
    assert code == 0
    assert len(fingerprint.strip()) == 64
    summary = run_json(["cert", "show", "--file", der_path])
    assert summary["serial"] == "09"
    assert summary["fingerprint"] == fingerprint.strip()
    assert run_cli(["cert", "verify", "--ca", ca_path, "--file", der_path]) == (0, "valid\n")
    assert run_cli(["cert", "verify", "--ca", ca_path, "--clock", str(11 * 365 * 86400), "--file", der_path])[0] == 3


def test_certificate_from_another_ca_is_rejected(tmp_path):
    ca_path = str(tmp_path / "ca.json")
    other_path = str(tmp_path / "other.json")
    run_cli(["cert", "make-ca", "--seed", "one", "--out", ca_path])
    run_cli(["cert", "make-ca", "--seed", "two", "--out", other_path])
    code, der = run_cli(["cert", "issue", "--ca", ca_path, "--subject", "node.test", "--seed", "node"])
    assert code == 0
    assert run_cli(["cert", "verify", "--ca", other_path, "--hex", der.strip()])[0] == 3


def test_malformed_ca_file(tmp_path):
    path = tmp_path / "ca.json"
    path.write_text(json.dumps({"curve": "P-256"}))
    assert run_cli(["cert", "issue", "--ca", str(path), "--subject", "x", "--seed", "x"])[0] == 2


def test_handshake_sim_writes_the_event_log(tmp_path):
    log = tmp_path / "run.jsonl"
    summary = run_json(["handshake-sim", "--drop", "0.2", "--seed", "7", "--log", str(log)])
    assert summary["completed"] is True
    assert summary["keys_match"] is True
    assert summary["scenario"] == {"curve": "P-256", "mode": "full", "seed": 7}
    assert summary["energy_uj"]["client"] > 0
    lines = log.read_text().splitlines()
    assert lines
    events = [json.loads(line) for line in lines]
    assert all({"time", "role", "event"} <= set(event) for event in events)


def test_handshake_sim_failure_exits_4():
    code, out = run_cli(["handshake-sim", "--drop", "0.95", "--max-retries", "1", "--seed", "3"])
    assert code == 4
    assert json.loads(out)["completed"] is False


def test_handshake_sim_rejects_bad_probability():
    assert run_cli(["handshake-sim", "--drop", "1.5"])[0] == 2


def test_energy_total():
    result = run_json(CLI_GOLDENS["cli_energy_total.txt"])
    assert result["handshake_fraction"] == pytest.approx(0.3027, abs=0.01)
    assert result["handshake_percent"] == pytest.approx(30.27, abs=1)


def test_energy_total_rejects_long_periods():
    assert run_cli(["energy", "total", "--tsession", "60", "--tappdata", "120"])[0] == 2


def test_energy_contour(tmp_path):
    out = tmp_path / "contour.csv"
    html = tmp_path / "contour.html"
    code, _ = run_cli(["energy", "contour", "--out", str(out), "--html", str(html)])
    assert code == 0
    assert out.read_text().splitlines()[0] == "t_session,n_bytes,t_appdata,e_total,handshake_fraction"
    assert html.exists()


def test_energy_handshake():
    report = run_json(["energy", "handshake", "--seed", "1"])
    assert 0.30 <= report["cached"]["comparison"]["energy_reduction"] <= 0.40
    assert 1.8 <= report["comb_amortization"]["ratio"] <= 2.6
    assert report["fermat_vs_euclid"]["symbolic"] == 128


def test_bench_commands():
    assert run_json(["bench", "schnorr", "--seed", "1"])["accepted"] is True
    assert run_json(["bench", "ecmqv", "--seed", "1"])["benchmark"] == "ecmqv"
    assert run_json(["bench", "merkle", "--seed", "1", "--leaves", "5"])["leaves"] == 5


GOLDEN_FILES = golden_files()


@pytest.mark.parametrize("directory, name, producer", GOLDEN_FILES, ids=[entry[1] for entry in GOLDEN_FILES])
def test_golden_files(directory, name, producer):
    assert check_golden(name, producer(), directory), f"{name} differs from its golden file or is missing"


def test_missing_golden_is_never_written(tmp_path):
    assert not check_golden("absent.txt", "text\n", str(tmp_path))
    assert not (tmp_path / "absent.txt").exists()
    write_golden("present.txt", "text\n", str(tmp_path))
    assert check_golden("present.txt", "text\n", str(tmp_path))
    assert not check_golden("present.txt", "other\n", str(tmp_path))


def test_kdf_chain_follows_the_label_layout():
    expected = key_schedule_reference(sha256(b"golden ecdhe"), sha256(b"golden hello"),
                                      sha256(b"golden server finished"))
    assert kdf_chain_text() == "".join(f"{step} {value.hex()}\n" for step, value in expected.items())


def test_merkle_roots_duplicate_the_odd_node():
    lines = merkle_roots_text().splitlines()
    assert len(lines) == 9
    for n, line in enumerate(lines, start=1):
        leaves = [f"leaf-{i}".encode("ascii") for i in range(n)]
        assert line == f"{n} {merkle_root_reference(leaves).hex()}"


@pytest.mark.parametrize("mode", list(CertMode))
def test_wire_text_lists_the_lockstep_datagrams(lockstep, mode):
    wire = lockstep[mode][2]
    assert wire_text(mode.value) == "".join(f"{role} {datagram.hex()}\n" for role, datagram in wire)


@pytest.mark.parametrize("argv", [["--help"], ["cert", "--help"], ["energy", "--help"], ["bench", "--help"]])
def test_help_exits_0(argv):
    code, out = run_cli(argv)
    assert code == 0
    assert "Usage" in out


def test_every_subcommand_has_a_golden_file():
    covered = {argv[0] if argv[0] not in ("cert", "energy", "bench") else " ".join(argv[:2])
               for argv in CLI_GOLDENS.values()}
    assert {"hash", "hmac", "hkdf", "drbg", "aead-seal", "aead-open", "keygen", "sign", "verify", "ecdh",
            "ecsm", "spa-audit", "handshake-sim", "energy total", "energy contour", "bench ecmqv",
            "bench schnorr", "bench merkle"} <= covered
