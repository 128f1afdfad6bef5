import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import rec_at
from falsefriends.ident import NodeRecord
from falsefriends.peermgr import (
    Direction,
    InboundOutcome,
    InboundThrottle,
    PeerManager,
    Provenance,
    SlotConfig,
)
from falsefriends.table import DiscoveryTable, ReadMode

NS = 1_000_000_000
LOCAL = NodeRecord(random.Random(5).getrandbits(256), "192.0.2.1")


def rich_table(rng):
    t = DiscoveryTable(LOCAL.id)
    for d in range(239, 256):
        for _ in range(4):
            t.add_seen(rec_at(LOCAL.id, d, rng))
    return t


def buffer_source(rng, n=16):
    def refill():
        return [NodeRecord(rng.getrandbits(256), "8.8.8.8") for _ in range(n)]

    return refill


def test_slot_split():
    assert (SlotConfig(25).outbound_slots, SlotConfig(25).inbound_slots) == (8, 17)
    assert (SlotConfig(50).outbound_slots, SlotConfig(50).inbound_slots) == (16, 34)
    with pytest.raises(ValueError):
        SlotConfig(0)


def connect_all(mgr, report, now=0):
    for dec in report.dials:
        mgr.dial_succeeded(dec.peer.id, now, None)


def test_fresh_fill_is_four_and_four(rng):
    mgr = PeerManager(LOCAL)
    rep = mgr.fill_outbound(rich_table(rng), rng, buffer_source(rng))
    assert rep.free == 8
    assert len(rep.from_table) == 4 and len(rep.from_buffer) == 4
    assert [d.provenance for d in rep.dials].count(Provenance.TABLE) == 4


def test_single_free_slot_goes_to_buffer(rng):
    mgr = PeerManager(LOCAL)
    table = rich_table(rng)
    connect_all(mgr, mgr.fill_outbound(table, rng, buffer_source(rng)))
    peer = mgr.peers()[0].peer.id
    mgr.on_disconnect(peer, Direction.OUT, 1)
    rep = mgr.fill_outbound(table, rng, buffer_source(rng))
    assert rep.free == 1 and not rep.from_table and len(rep.from_buffer) == 1


def test_two_free_repeatedly_one_each(rng):
    mgr = PeerManager(LOCAL)
    table = rich_table(rng)
    connect_all(mgr, mgr.fill_outbound(table, rng, buffer_source(rng)))
    for _ in range(5):
        for conn in mgr.peers()[:2]:
            mgr.on_disconnect(conn.peer.id, Direction.OUT, 0)
        rep = mgr.fill_outbound(table, rng, buffer_source(rng))
        assert rep.free == 2 and len(rep.from_table) == 1 and len(rep.from_buffer) == 1
        connect_all(mgr, rep)


def test_buffer_consumed_in_order_and_refilled_once(rng):
    mgr = PeerManager(LOCAL)
    batch = [NodeRecord(rng.getrandbits(256), "8.8.4.4") for _ in range(6)]
    calls = []

    def refill():
        calls.append(1)
        return list(batch)

    t = DiscoveryTable(LOCAL.id)
    rep = mgr.fill_outbound(t, rng, refill)
    assert rep.from_buffer == batch[:4] and len(calls) == 1
    assert list(mgr.lookup_buffer) == batch[4:]
    connect_all(mgr, rep)
    for conn in mgr.peers()[:3]:
        mgr.on_disconnect(conn.peer.id, Direction.OUT, 0)
    rep = mgr.fill_outbound(t, rng, refill)
    assert rep.from_buffer == batch[4:] and len(calls) == 1


def test_empty_refill_leaves_slots_free(rng):
    mgr = PeerManager(LOCAL)
    calls = []
    rep = mgr.fill_outbound(DiscoveryTable(LOCAL.id), rng, lambda: calls.append(1) or [])
    assert rep.dials == [] and len(calls) == 1 and mgr.free_outbound() == 8


def test_dedupe_after_selection(rng):
    mgr = PeerManager(LOCAL)
    t = DiscoveryTable(LOCAL.id)
    only = rec_at(LOCAL.id, 255, rng)
    t.add_seen(only)
    rep = mgr.fill_outbound(t, rng, lambda: [only, LOCAL, only])
    assert len(rep.from_table) == 1 and len(rep.from_buffer) == 3
    assert [d.peer for d in rep.dials] == [only]
    assert mgr.free_outbound() == 7  # pending dial reserves a slot


def test_failed_dial_frees_slot(rng):
    mgr = PeerManager(LOCAL)
    rep = mgr.fill_outbound(rich_table(rng), rng, buffer_source(rng))
    mgr.dial_failed(rep.dials[0].peer.id)
    assert mgr.free_outbound() == 1


def test_inbound_legacy_one_ip_fills():
    mgr = PeerManager(LOCAL)
    rng = random.Random(0)
    for i in range(17):
        assert mgr.accept_inbound(NodeRecord(rng.getrandbits(256), "203.0.113.1", 40000 + i), i) is InboundOutcome.ACCEPTED
    assert mgr.accept_inbound(NodeRecord(rng.getrandbits(256), "203.0.113.1"), 99) is InboundOutcome.REJECTED_FULL
    assert mgr.free_inbound() == 0


def test_inbound_duplicate_rejected():
    mgr = PeerManager(LOCAL)
    peer = NodeRecord(77, "1.2.3.4")
    assert mgr.accept_inbound(peer, 0) is InboundOutcome.ACCEPTED
    assert mgr.accept_inbound(peer, 1) is InboundOutcome.REJECTED_DUPLICATE


def test_throttle_rejects_within_window():
    mgr = PeerManager(LOCAL, throttle=InboundThrottle(30 * NS))
    assert mgr.accept_inbound(NodeRecord(1, "203.0.113.1"), 0) is InboundOutcome.ACCEPTED
    assert mgr.accept_inbound(NodeRecord(2, "203.0.113.1"), 10 * NS) is InboundOutcome.REJECTED_THROTTLED
    assert mgr.accept_inbound(NodeRecord(3, "203.0.113.2"), 10 * NS) is InboundOutcome.ACCEPTED
    assert mgr.accept_inbound(NodeRecord(2, "203.0.113.1"), 30 * NS) is InboundOutcome.ACCEPTED


@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 5 * 10**9)), max_size=200))
def test_throttle_accepted_attempts_spaced(attempts):
    window = 30 * NS
    mgr = PeerManager(LOCAL, SlotConfig(1000), throttle=InboundThrottle(window))
    now = 0
    accepted = {}
    for k, (ip, gap) in enumerate(attempts):
        now += gap
        if mgr.accept_inbound(NodeRecord(k + 1, f"203.0.113.{ip + 1}"), now) is InboundOutcome.ACCEPTED:
            accepted.setdefault(ip, []).append(now)
    for times in accepted.values():
        assert all(b - a >= window for a, b in zip(times, times[1:]))


def test_disconnect_accounting(rng):
    mgr = PeerManager(LOCAL)
    table = rich_table(rng)
    connect_all(mgr, mgr.fill_outbound(table, rng, buffer_source(rng)))
    for i in range(17):
        mgr.accept_inbound(NodeRecord(1000 + i, "9.9.9.9"), 0)
    assert mgr.free_outbound() == 0 and mgr.free_inbound() == 0
    inbound = [c for c in mgr.peers() if c.direction is Direction.IN][0]
    assert mgr.on_disconnect(inbound.peer.id, Direction.IN, 1) is Direction.IN
    assert mgr.free_outbound() == 0
    assert mgr.on_disconnect(12345, Direction.OUT, 1) is None
    mgr.drop_all(2)
    assert mgr.free_outbound() == 8 and mgr.free_inbound() == 17


@given(st.lists(st.sampled_from(["fill", "ok", "fail", "in", "drop_in", "drop_out"]), max_size=120), st.integers(0, 2**32))
def test_slot_conservation(script, seed):
    rng = random.Random(seed)
    mgr = PeerManager(LOCAL, SlotConfig(rng.choice([25, 50])), rng.choice(list(ReadMode)))
    table = rich_table(random.Random(seed + 1))
    for step in script:
        if step == "fill":
            rep = mgr.fill_outbound(table, rng, buffer_source(rng))
            n = rep.free
            if n > 0:
                tagged = [d.provenance for d in rep.dials]
                assert tagged.count(Provenance.TABLE) <= n // 2
                assert tagged.count(Provenance.BUFFER) <= n - n // 2
        elif step in ("ok", "fail") and mgr.pending:
            pid = rng.choice(sorted(mgr.pending))
            if step == "ok":
                mgr.dial_succeeded(pid, 0, None)
            else:
                mgr.dial_failed(pid)
        elif step == "in":
            mgr.accept_inbound(NodeRecord(rng.getrandbits(256), "7.7.7.7"), 0)
        elif step.startswith("drop"):
            d = Direction.IN if step == "drop_in" else Direction.OUT
            conns = [c for c in mgr.peers() if c.direction is d]
            if conns:
                mgr.on_disconnect(rng.choice(conns).peer.id, d, 0)
        n_in = mgr.count(Direction.IN)
        n_out = mgr.count(Direction.OUT)
        assert n_in + mgr.free_inbound() == mgr.slots.inbound_slots
        assert n_out + len(mgr.pending) + mgr.free_outbound() == mgr.slots.outbound_slots
        assert 0 <= n_in <= mgr.slots.inbound_slots and 0 <= n_out <= mgr.slots.outbound_slots
        assert len(mgr.connections) == n_in + n_out


def test_is_eclipsed_examples():
    mgr = PeerManager(LOCAL)
    adv = set()
    for i in range(17):
        p = NodeRecord(100 + i, "203.0.113.1")
        adv.add(p.id)
        mgr.accept_inbound(p, 0)
    for i in range(7):
        p = NodeRecord(200 + i, "203.0.113.2")
        adv.add(p.id)
        mgr.pending[p.id] = type("D", (), {"peer": p, "provenance": Provenance.TABLE})()
        mgr.dial_succeeded(p.id, 0, None)
    assert not mgr.is_eclipsed(adv)  # one outbound slot still empty
    last = NodeRecord(300, "198.51.100.1")
    mgr.pending[last.id] = type("D", (), {"peer": last, "provenance": Provenance.BUFFER})()
    mgr.dial_succeeded(last.id, 0, None)
    assert not mgr.is_eclipsed(adv)  # 24 adversarial + 1 honest
    assert mgr.is_eclipsed(adv | {last.id})
