import json

import pytest

from utils.cert import CertMode
from utils.errors import UsageError
from utils.handshake import fresh_config, provision
from utils.netsim import SimConfig, World, completion_rate, report, run_handshake, step


@pytest.fixture(scope="module")
def full_pair(deployment):
    return deployment[CertMode.FULL]


def test_perfect_channel(full_pair):
    result = run_handshake(SimConfig(), full_pair)
    assert result.completed and result.keys_match
    assert result.retransmissions == {"client": 0, "server": 0}
    assert result.client_checkpoints == result.server_checkpoints
    assert result.duration == pytest.approx(3 * 0.05)
    assert result.datagrams["dropped"] == 0


def test_same_seed_same_event_log(full_pair):
    config = SimConfig(drop_prob=0.3, duplicate_prob=0.1, jitter=0.01, seed=7)
    first = run_handshake(config, full_pair)
    second = run_handshake(config, full_pair)
    assert first.events == second.events
    assert first.summary() == second.summary()


def test_different_seeds_differ(full_pair):
    first = run_handshake(SimConfig(drop_prob=0.3, seed=1), full_pair)
    second = run_handshake(SimConfig(drop_prob=0.3, seed=2), full_pair)
    assert first.events != second.events


@pytest.mark.parametrize("seeds", [10, pytest.param(100, marks=pytest.mark.slow)])
def test_moderate_loss_completes(full_pair, seeds):
    rate, reports = completion_rate(SimConfig(drop_prob=0.2), full_pair, range(seeds))
    assert rate == 1.0
    assert all(r.keys_match for r in reports)
    assert sum(sum(r.retransmissions.values()) for r in reports) >= 1


@pytest.mark.slow
def test_heavy_loss_mostly_completes(p256):
    pair = provision(p256, 1, max_retries=20)
    rate, _ = completion_rate(SimConfig(drop_prob=0.5), pair, range(100))
    assert rate >= 0.95


def test_latency_above_timeout_causes_spurious_retransmissions(full_pair):
    result = run_handshake(SimConfig(latency=1.5, seed=3), full_pair)
    assert result.completed
    assert sum(result.retransmissions.values()) > 0
    assert result.datagrams["dropped"] == 0


def test_duplicates_and_reordering(full_pair):
    config = SimConfig(duplicate_prob=0.5, reorder_prob=0.3, jitter=0.02, seed=11)
    result = run_handshake(config, full_pair)
    assert result.completed and result.keys_match
    assert result.datagrams["duplicated"] > 0


def test_cached_mode_over_a_lossy_channel(deployment):
    result = run_handshake(SimConfig(drop_prob=0.2, seed=5), deployment[CertMode.CACHED])
    assert result.completed
    assert sum(result.client_ledger.ecsm.values()) == 5


def test_network_log_entries(full_pair):
    result = run_handshake(SimConfig(drop_prob=0.3, seed=4), full_pair)
    network = [e for e in result.events if e["role"] == "network"]
    assert network
    assert {e["event"] for e in network} <= {"send", "drop", "duplicate"}
    assert all("epoch" in e and "seq" in e for e in network)
    assert result.datagrams["sent"] == len([e for e in network if e["event"] in ("send", "drop")])


def test_summary_is_json_serializable(full_pair):
    summary = run_handshake(SimConfig(), full_pair).summary()
    assert json.loads(json.dumps(summary))["completed"] is True
    assert summary["client_ledger"]["ecsm"] == {"256": 7}


def test_stepping_a_world(full_pair):
    world = World(SimConfig(), fresh_config(full_pair.client), fresh_config(full_pair.server))
    entries = []
    for _ in range(1000):
        if world.done:
            break
        entries += step(world)
    assert report(world).completed
    assert any(e["event"] == "established" for e in entries)


def test_source_configs_are_not_mutated(full_pair):
    before = full_pair.client.drbg.generate_count
    run_handshake(SimConfig(), full_pair)
    assert full_pair.client.drbg.generate_count == before


@pytest.mark.parametrize("overrides", [
    {"drop_prob": 1.0},
    {"duplicate_prob": -0.1},
    {"reorder_prob": 1.5},
    {"latency": -1.0},
    {"jitter": -0.5},
])
def test_sim_config_validation(overrides):
    with pytest.raises(UsageError):
        SimConfig(**overrides)
