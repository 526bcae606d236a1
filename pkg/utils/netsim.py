#!/usr/bin/env python

"""
Deterministic datagram network for client/server co-simulation.

A simpy Environment orders every delivery and timer wake-up in virtual time.
All randomness comes from one numpy Generator seeded per world. Each
transmitted datagram consumes exactly four draws, in this order:

    drop, duplicate, reorder, jitter

so a given seed and configuration always reproduce the same event log.
"""

import logging

import attr
import numpy as np
import simpy

from utils.errors import EngineError, UsageError
from utils.handshake import RECORD_HEADER, Role, Session, State, fresh_config, server_session

# Configure logging
logger = logging.getLogger(__name__)

DRAWS_PER_DATAGRAM = 4


def _probability(instance, attribute, value):
    if not 0.0 <= value < 1.0:
        raise UsageError(f"{attribute.name} must lie in [0, 1), got {value}")


def _non_negative(instance, attribute, value):
    if value < 0:
        raise UsageError(f"{attribute.name} must be non-negative, got {value}")


@attr.frozen
class SimConfig:
    """Channel behavior shared by both directions."""
    drop_prob: float = attr.field(default=0.0, validator=_probability)
    duplicate_prob: float = attr.field(default=0.0, validator=_probability)
    reorder_prob: float = attr.field(default=0.0, validator=_probability)
    latency: float = attr.field(default=0.05, validator=_non_negative)
    jitter: float = attr.field(default=0.0, validator=_non_negative)
    seed: int = attr.field(default=0, converter=lambda v: int(v) & ((1 << 64) - 1))
    max_time: float = attr.field(default=300.0, validator=_non_negative)

    @property
    def reorder_delay(self):
        """Extra hold-back of a reordered datagram: one more latency plus the full jitter range."""
        return self.latency + self.jitter + 1e-3


@attr.frozen
class HandshakeReport:
    completed: bool
    client_state: str
    server_state: str
    retransmissions: dict
    duration: float
    client_ledger: object
    server_ledger: object
    keys_match: bool
    client_checkpoints: list
    server_checkpoints: list
    datagrams: dict
    events: list

    def summary(self):
        """JSON-friendly digest for the CLI."""
        return {
            "completed": self.completed,
            "client_state": self.client_state,
            "server_state": self.server_state,
            "retransmissions": dict(self.retransmissions),
            "duration": round(self.duration, 6),
            "keys_match": self.keys_match,
            "datagrams": dict(self.datagrams),
            "client_ledger": self.client_ledger.as_dict(),
            "server_ledger": self.server_ledger.as_dict(),
        }


def _peek_header(datagram):
    if len(datagram) < RECORD_HEADER.size:
        return {}
    content_type, _, epoch_seq, _ = RECORD_HEADER.unpack_from(datagram)
    return {"content_type": content_type, "epoch": epoch_seq >> 48, "seq": epoch_seq & ((1 << 48) - 1)}


class Channel:
    """Lossy path between the two sessions; one instance carries both directions."""

    def __init__(self, world, config, rng):
        self.world = world
        self.env = world.env
        self.config = config
        self.rng = rng
        self.counters = {"sent": 0, "dropped": 0, "duplicated": 0, "reordered": 0, "delivered": 0}

    def send(self, sender, datagrams):
        receiver = Role.SERVER if sender == Role.CLIENT else Role.CLIENT
        for datagram in datagrams:
            u_drop, u_duplicate, u_reorder, u_jitter = self.rng.random(DRAWS_PER_DATAGRAM)
            self.counters["sent"] += 1
            header = _peek_header(datagram)
            if u_drop < self.config.drop_prob:
                self.counters["dropped"] += 1
                self.world.record("network", "drop", sender=sender.value, length=len(datagram), **header)
                continue
            delay = self.config.latency + float(u_jitter) * self.config.jitter
            if u_reorder < self.config.reorder_prob:
                self.counters["reordered"] += 1
                delay += self.config.reorder_delay
            self.world.record("network", "send", sender=sender.value, length=len(datagram),
                              delay=round(delay, 9), **header)
            self.env.process(self._deliver(receiver, datagram, delay))
            if u_duplicate < self.config.duplicate_prob:
                self.counters["duplicated"] += 1
                self.world.record("network", "duplicate", sender=sender.value, **header)
                self.env.process(self._deliver(receiver, datagram, delay + self.config.latency / 2))

    def _deliver(self, receiver, datagram, delay):
        yield self.env.timeout(delay)
        self.counters["delivered"] += 1
        self.world.deliver(receiver, datagram)


class World:
    """
    Client session, server session and the channel between them.

    Args:
        sim_config: SimConfig for the channel
        client_config: SessionConfig of the client
        server_config: SessionConfig of the server
    """

    def __init__(self, sim_config, client_config, server_config):
        self.config = sim_config
        self.env = simpy.Environment()
        self.rng = np.random.default_rng(sim_config.seed)
        self.log = []
        self.channel = Channel(self, sim_config, self.rng)
        self.sessions = {Role.CLIENT: Session(client_config), Role.SERVER: server_session(server_config)}
        self._scheduled = {Role.CLIENT: None, Role.SERVER: None}
        self.started = False

    @property
    def client(self):
        return self.sessions[Role.CLIENT]

    @property
    def server(self):
        return self.sessions[Role.SERVER]

    @property
    def now(self):
        return float(self.env.now)

    def record(self, role, event, **details):
        entry = {"time": round(self.now, 9), "role": role, "event": event}
        entry.update(details)
        self.log.append(entry)

    def _absorb(self, role, datagrams, events):
        self.log.extend(events)
        if datagrams:
            self.channel.send(role, datagrams)
        self._watch_timer(role)

    def _watch_timer(self, role):
        deadline = self.sessions[role].timer.deadline
        if deadline is not None and deadline != self._scheduled[role]:
            self._scheduled[role] = deadline
            self.env.process(self._timer(role, deadline))

    def _timer(self, role, deadline):
        yield self.env.timeout(max(0.0, deadline - self.now))
        session = self.sessions[role]
        if session.timer.deadline != deadline:
            return
        self._scheduled[role] = None
        datagrams, events = session.tick(self.now)
        self._absorb(role, datagrams, events)

    def start(self):
        if self.started:
            return
        self.started = True
        first = len(self.client.events)
        datagrams = self.client.start(self.now)
        self._absorb(Role.CLIENT, datagrams, self.client.events[first:])

    def deliver(self, role, datagram):
        session = self.sessions[role]
        try:
            datagrams, events = session.handle_datagram(datagram, self.now)
        except EngineError as e:
            logger.error(f"Error in {role.value} session: {str(e)}")
            self.record(role.value, "session_error", error=type(e).__name__, message=str(e))
            return
        self._absorb(role, datagrams, events)

    @property
    def done(self):
        states = {session.state for session in self.sessions.values()}
        return states == {State.ESTABLISHED} or State.FAILED in states

    @property
    def idle(self):
        return self.env.peek() == float("inf")


def step(world):
    """
    Advance to the next scheduled event (a delivery or a timer) and process it.

    Returns:
        list: event-log entries produced by this step
    """
    world.start()
    if world.idle:
        return []
    first = len(world.log)
    world.env.step()
    return world.log[first:]


def _keys_match(client, server):
    if not (client.established and server.established):
        return False
    names = ("client_hs", "server_hs", "client_app", "server_app")
    return all(client.traffic.get(name) == server.traffic.get(name) for name in names)


def report(world):
    client, server = world.client, world.server
    completed = client.established and server.established
    return HandshakeReport(
        completed=completed,
        client_state=client.state.value,
        server_state=server.state.value,
        retransmissions={"client": client.retransmissions, "server": server.retransmissions},
        duration=world.now,
        client_ledger=client.ledger,
        server_ledger=server.ledger,
        keys_match=_keys_match(client, server),
        client_checkpoints=list(client.checkpoints),
        server_checkpoints=list(server.checkpoints),
        datagrams=dict(world.channel.counters),
        events=list(world.log),
    )


def run_handshake(sim_config, provisioned):
    """
    Drive a fresh client/server pair to Established or failure.

    Args:
        sim_config: SimConfig for the channel
        provisioned: Provisioned pair from handshake.provision; it is not mutated

    Returns:
        HandshakeReport
    """
    world = World(sim_config, fresh_config(provisioned.client), fresh_config(provisioned.server))
    world.start()
    while not world.done and not world.idle and world.env.peek() <= sim_config.max_time:
        step(world)
    result = report(world)
    for session in world.sessions.values():
        session.config.point_cache.evict_transient()
    logger.info(f"Handshake run seed={sim_config.seed}: completed={result.completed}, "
                f"retransmissions={result.retransmissions}, duration={result.duration:.3f}s")
    return result


def completion_rate(sim_config, provisioned, seeds):
    """Fraction of seeds whose handshake completes, plus the per-seed reports."""
    reports = [run_handshake(attr.evolve(sim_config, seed=seed), provisioned) for seed in seeds]
    rate = float(np.mean([r.completed for r in reports])) if reports else 0.0
    return rate, reports
