import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import at_distance, rec_at
from falsefriends.ident import NodeRecord, log_distance
from falsefriends.table import (
    AddOutcome,
    DiscoveryTable,
    ReadMode,
    TableInvariantError,
)

LOCAL = random.Random(99).getrandbits(256)


def fresh(**kw):
    return DiscoveryTable(LOCAL, **kw)


def test_bucket_for_examples(rng):
    t = fresh()
    assert t.bucket_for(LOCAL ^ (1 << 255)).distance == 255
    assert t.bucket_for(LOCAL ^ (1 << 100) ^ 5).distance == 239
    assert t.bucket_for(at_distance(LOCAL, 247, rng)).distance == 247
    assert len(t.buckets) == 17


def test_add_seen_fresh_is_added_at_head(rng):
    t = fresh()
    rec = rec_at(LOCAL, 250, rng)
    assert t.add_seen(rec) is AddOutcome.ADDED
    assert t.bucket_for(rec.id).head == rec
    t.audit()


def test_bump_moves_to_front(rng):
    t = fresh()
    recs = [rec_at(LOCAL, 255, rng) for _ in range(8)]
    for r in recs:
        t.add_seen(r)
    b = t.bucket_at(255)
    target = b.entries[5]
    assert t.add_seen(target) is AddOutcome.BUMPED
    assert b.entries[0] == target and len(b.entries) == 8
    t.audit()


def test_third_record_from_subnet_rejected(rng):
    t = fresh()
    for host in (1, 2):
        assert t.add_seen(rec_at(LOCAL, 254, rng, f"10.1.1.{host}")) is AddOutcome.ADDED
    assert t.add_seen(rec_at(LOCAL, 254, rng, "10.1.1.3")) is AddOutcome.REJECTED_SUBNET
    # a different bucket still has room for that /24
    assert t.add_seen(rec_at(LOCAL, 253, rng, "10.1.1.3")) is AddOutcome.ADDED
    t.audit()


def test_table_wide_subnet_limit(rng):
    t = fresh()
    outcomes = [t.add_seen(rec_at(LOCAL, d, rng, f"10.9.9.{d - 200}")) for d in range(239, 256)]
    assert outcomes.count(AddOutcome.ADDED) == 10
    assert outcomes[10:] == [AddOutcome.REJECTED_SUBNET] * 7
    t.audit()


def test_subnet_limits_toggle(rng):
    t = fresh(subnet_limits=False)
    for host in range(1, 6):
        assert t.add_seen(rec_at(LOCAL, 254, rng, f"10.1.1.{host}")) is AddOutcome.ADDED
    t.audit()


def fill_bucket(t, d, rng, n=16):
    recs = [rec_at(LOCAL, d, rng) for _ in range(n)]
    for r in recs:
        assert t.add_seen(r) is AddOutcome.ADDED
    return recs


def test_full_bucket_goes_to_replacements_fifo(rng):
    t = fresh()
    fill_bucket(t, 255, rng)
    extra = [rec_at(LOCAL, 255, rng) for _ in range(11)]
    for r in extra:
        assert t.add_seen(r) is AddOutcome.REPLACEMENT_ADDED
    b = t.bucket_at(255)
    assert b.replacements == extra[1:]  # oldest evicted
    assert t.add_seen(extra[5]) is AddOutcome.NOOP
    t.audit()


def test_revalidate_all_live(rng):
    t = fresh()
    fill_bucket(t, 250, rng, 5)
    before = set(r.id for r in t)
    b = t.bucket_at(250)
    last = b.entries[-1]
    rep = t.revalidate_step(rng, 0, lambda r: True)
    assert rep.alive and rep.probed == last and b.entries[0] == last
    assert set(r.id for r in t) == before


def test_revalidate_dead_promotes_replacement(rng):
    t = fresh()
    fill_bucket(t, 255, rng)
    spare = rec_at(LOCAL, 255, rng)
    t.add_seen(spare)
    b = t.bucket_at(255)
    last = b.entries[-1]
    rep = t.revalidate_step(rng, 0, lambda r: False)
    assert not rep.alive and rep.probed == last and rep.promoted == spare
    assert last not in b.entries and b.entries[-1] == spare and not b.replacements
    t.audit()


def test_revalidate_dead_no_replacement_shrinks(rng):
    t = fresh()
    fill_bucket(t, 251, rng, 3)
    rep = t.revalidate_step(rng, 0, lambda r: False)
    assert rep.promoted is None and len(t) == 2
    assert fresh().revalidate_step(rng, 0, lambda r: True).distance is None


def test_promotion_respects_subnet_limits(rng):
    t = fresh()
    fill_bucket(t, 255, rng)
    blocked = rec_at(LOCAL, 255, rng, "10.3.3.9")
    assert t.add_seen(blocked) is AddOutcome.REPLACEMENT_ADDED
    b = t.bucket_at(255)
    for host in (1, 2):
        t.delete(b.entries[-1].id)
        assert t.add_seen(rec_at(LOCAL, 255, rng, f"10.3.3.{host}")) is AddOutcome.ADDED
    ok = rec_at(LOCAL, 255, rng, "10.4.4.4")
    assert t.add_seen(ok) is AddOutcome.REPLACEMENT_ADDED
    for _ in range(5):
        u = DiscoveryTable.from_snapshot(t.snapshot())
        rep = u.revalidate_step(random.Random(_), 0, lambda r: False)
        assert rep.promoted == ok
        assert u.bucket_at(255).replacements == [blocked]
        u.audit()


def test_read_random_heads_single_bucket(rng):
    t = fresh()
    fill_bucket(t, 249, rng, 5)
    got = t.read_random_nodes(rng, 4, ReadMode.HEADS)
    assert got == [t.bucket_at(249).head]


def test_read_random_heads_distinct_buckets(rng):
    t = fresh()
    for d in range(239, 256):
        fill_bucket(t, d, rng, 2)
    for _ in range(50):
        got = t.read_random_nodes(rng, 17, ReadMode.HEADS)
        assert len(got) == 17 and len({t.bucket_for(r.id).distance for r in got}) == 17


def test_read_random_uniform_distinct(rng):
    t = fresh()
    fill_bucket(t, 255, rng, 10)
    got = t.read_random_nodes(rng, 4, ReadMode.UNIFORM)
    assert len(set(r.id for r in got)) == 4
    with pytest.raises(ValueError):
        t.read_random_nodes(rng, 0)


@given(st.integers(1, 20), st.integers(0, 2**32))
def test_head_capture_property(max_n, seed):
    rng = random.Random(seed)
    t = fresh(subnet_limits=False)
    adversarial = set()
    for d in range(239, 256):
        if rng.random() < 0.2:
            continue
        for _ in range(rng.randrange(0, 16)):
            t.add_seen(rec_at(LOCAL, d, rng))
        sybil = rec_at(LOCAL, d, rng)
        t.add_seen(sybil)
        if t.bucket_at(d).head != sybil:
            t.add_seen(sybil)  # bump (or it was parked as a replacement)
        if t.bucket_at(d).head == sybil:
            adversarial.add(sybil.id)
        else:
            t.bucket_at(d).entries.clear()  # keep the precondition: every non-empty head adversarial
            t.recount_subnets()
    t.subnet_counts = t.recount_subnets()
    t._size = sum(len(b.entries) for b in t.buckets)
    for _ in range(20):
        for r in t.read_random_nodes(rng, max_n, ReadMode.HEADS):
            assert r.id in adversarial


def brute_closest_known(t, target, k):
    return sorted(t, key=lambda r: r.id ^ target)[:k]


def test_closest_known_small_table(rng):
    t = fresh()
    recs = [rec_at(LOCAL, d, rng) for d in (240, 250, 255)]
    for r in recs:
        t.add_seen(r)
    target = rng.getrandbits(256)
    assert t.closest_known(target) == sorted(recs, key=lambda r: r.id ^ target)


def test_closest_known_matches_brute_force(rng):
    t = fresh(subnet_limits=False)
    for _ in range(2000):
        t.add_seen(NodeRecord(rng.getrandbits(256) ^ (LOCAL & ~((1 << rng.choice([256, 250, 245, 241])) - 1)), "1.1.1.1"))
    assert len(t) > 50
    for _ in range(100):
        target = rng.getrandbits(256)
        if rng.random() < 0.5:
            target = LOCAL ^ rng.getrandbits(rng.choice([200, 239, 244, 250]))
        for k in (1, 12, 16, 40):
            assert t.closest_known(target, k) == brute_closest_known(t, target, k)
    assert t.closest_known(LOCAL, 16) == brute_closest_known(t, LOCAL, 16)


def test_closest_known_always_has_adversary_when_every_bucket_has_one(rng):
    t = fresh(subnet_limits=False)
    sybils = set()
    for d in range(239, 256):
        for _ in range(rng.randrange(0, 20)):
            t.add_seen(rec_at(LOCAL, d, rng))
        s = rec_at(LOCAL, d, rng)
        if t.add_seen(s) is not AddOutcome.ADDED:
            victim = t.bucket_at(d).entries[-1]
            t.delete(victim.id)
            assert t.add_seen(s) is AddOutcome.ADDED
        sybils.add(s.id)
    for _ in range(200):
        target = rng.getrandbits(256)
        assert any(r.id in sybils for r in t.closest_known(target))


ops = st.lists(
    st.tuples(
        st.sampled_from(["add", "add", "add", "revalidate", "delete", "readd"]),
        st.integers(239, 255),
        st.integers(0, 5),
        st.booleans(),
    ),
    max_size=250,
)


@given(ops, st.integers(0, 2**32), st.booleans())
def test_invariants_hold_after_every_mutation(script, seed, limits):
    rng = random.Random(seed)
    t = fresh(bucket_size=4, max_replacements=3, subnet_limits=limits) if seed % 2 else fresh(subnet_limits=limits)
    known = []
    last_bumped = None
    for op, d, subnet, alive in script:
        if op == "add":
            rec = rec_at(LOCAL, d, rng, f"10.0.{subnet}.{rng.randrange(1, 255)}")
            known.append(rec)
            t.add_seen(rec)
        elif op == "readd" and known:
            rec = rng.choice(known)
            if t.add_seen(rec) is AddOutcome.BUMPED:
                last_bumped = rec
                assert t.bucket_for(rec.id).head == rec
        elif op == "revalidate":
            t.revalidate_step(rng, 0, lambda r: alive)
        elif op == "delete" and known:
            t.delete(rng.choice(known).id)
        t.audit()
        assert t.recount_subnets() == +t.subnet_counts
        assert LOCAL not in t


def test_audit_detects_corruption(rng):
    t = fresh()
    rec = rec_at(LOCAL, 255, rng)
    t.add_seen(rec)
    t.bucket_at(254).entries.append(rec)
    with pytest.raises(TableInvariantError):
        t.audit()


def test_snapshot_roundtrip(rng):
    t = fresh()
    for d in (240, 255, 255, 250):
        t.add_seen(rec_at(LOCAL, d, rng))
    fill_bucket(t, 247, rng)
    t.add_seen(rec_at(LOCAL, 247, rng))
    u = DiscoveryTable.from_snapshot(t.snapshot())
    assert u.snapshot() == t.snapshot()
    u.audit()


def test_local_id_never_stored():
    t = fresh()
    with pytest.raises(ValueError):
        t.add_seen(NodeRecord(LOCAL, "1.2.3.4"))
    assert LOCAL not in t
