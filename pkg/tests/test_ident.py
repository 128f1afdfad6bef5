import pickle
import random

import pytest
from hypothesis import given
from hypothesis import strategies as st

from falsefriends import ident
from falsefriends.ident import (
    EQUAL,
    MiningError,
    MiningReport,
    NodeRecord,
    Sha256Random,
    generate_id,
    id_from_bytes,
    id_from_hex,
    id_from_pubkey,
    id_to_bytes,
    id_to_hex,
    log_distance,
    merge_mined,
    mine_bucket_set,
    mine_id_for_distance,
    subnet_of,
    subnet_to_str,
    xor_less,
)

ids = st.integers(min_value=0, max_value=2**256 - 1)


def test_log_distance_examples():
    assert log_distance(0, 1 << 255) == 255
    assert log_distance(0, 1) == 0
    assert log_distance(5, 5) is EQUAL
    assert log_distance(0, (1 << 247) | 12345) == 247


def test_equal_is_singleton_and_picklable():
    assert pickle.loads(pickle.dumps(EQUAL)) is EQUAL
    assert repr(EQUAL) == "EQUAL"


def test_xor_less_example():
    assert xor_less(0b01, 0b10, 0)
    assert not xor_less(0b10, 0b01, 0)


@given(ids, ids)
def test_log_distance_symmetric(a, b):
    assert log_distance(a, b) == log_distance(b, a) or a == b


@given(ids, ids)
def test_prefix_law(a, b):
    d = log_distance(a, b)
    if a == b:
        assert d is EQUAL
        return
    shared = 255 - d
    assert a >> (256 - shared) == b >> (256 - shared)
    assert (a >> (255 - shared)) & 1 != (b >> (255 - shared)) & 1


@given(st.lists(ids, min_size=3, max_size=20, unique=True), ids)
def test_xor_order_total_and_idempotent(xs, target):
    from functools import cmp_to_key

    def cmp(a, b):
        return -1 if xor_less(a, b, target) else (1 if xor_less(b, a, target) else 0)

    once = sorted(xs, key=cmp_to_key(cmp))
    assert sorted(once, key=cmp_to_key(cmp)) == once
    for a, b in zip(once, once[1:]):
        assert xor_less(a, b, target) and not xor_less(b, a, target)
    assert once == sorted(xs, key=lambda x: x ^ target)


@given(ids, ids)
def test_unidirectional(a, v):
    b = a ^ v
    assert a ^ b == v


def test_hex_and_bytes_roundtrip(rng):
    for _ in range(50):
        x = generate_id(rng)
        assert id_from_hex(id_to_hex(x)) == x
        assert id_from_hex("0x" + id_to_hex(x).upper()) == x
        assert id_from_bytes(id_to_bytes(x)) == x
    with pytest.raises(ValueError):
        id_from_hex("ab")
    with pytest.raises(ValueError):
        id_from_hex("zz" * 32)
    with pytest.raises(ValueError):
        id_from_bytes(b"\x00" * 31)


def test_pubkey_hash_path():
    a = id_from_pubkey(b"\x01" * 64)
    assert 0 <= a < 2**256 and a == id_from_pubkey(b"\x01" * 64)
    with pytest.raises(ValueError):
        id_from_pubkey(b"\x01" * 33)


def test_node_record_subnet_and_json():
    rec = NodeRecord(7, "203.0.113.9", 1, 2)
    assert rec.subnet == subnet_of("203.0.113.200")
    assert subnet_to_str(rec.subnet) == "203.0.113.0/24"
    assert NodeRecord.from_json(rec.to_json()) == rec
    with pytest.raises(ValueError):
        NodeRecord(2**256, "1.2.3.4")


def test_generate_id_deterministic():
    assert generate_id(random.Random(5)) == generate_id(random.Random(5))
    assert generate_id(Sha256Random(5)) == generate_id(Sha256Random(5))
    assert generate_id(random.Random(5)) != generate_id(random.Random(6))


@pytest.mark.parametrize("make_rng", [lambda: random.Random(9), lambda: Sha256Random(9)])
def test_generate_id_uniform(make_rng):
    rng = make_rng()
    n = 100_000
    draws = [generate_id(rng) for _ in range(n)]
    for bit in range(256):
        freq = sum((x >> bit) & 1 for x in draws[:20_000]) / 20_000 if bit % 8 else sum((x >> bit) & 1 for x in draws) / n
        assert abs(freq - 0.5) < 0.015 if bit % 8 else abs(freq - 0.5) < 0.01
    ref = draws[0]
    at255 = sum(1 for x in draws[1:] if log_distance(ref, x) == 255) / (n - 1)
    assert abs(at255 - 0.5) < 0.01


def test_log_distance_frequencies_match_binomial():
    rng = random.Random(3)
    ref = generate_id(rng)
    n = 100_000
    counts = {}
    for _ in range(n):
        d = log_distance(ref, generate_id(rng))
        counts[d] = counts.get(d, 0) + 1
    for d in range(246, 256):
        p = 2.0 ** (d - 256)
        sigma = (n * p * (1 - p)) ** 0.5
        assert abs(counts.get(d, 0) - n * p) <= 3 * sigma + 1


def test_sha256_random_state_roundtrip():
    r = Sha256Random(b"seed")
    r.getrandbits(100)
    state = r.getstate()
    a = [r.getrandbits(256) for _ in range(3)]
    r.setstate(state)
    assert [r.getrandbits(256) for _ in range(3)] == a
    assert 0.0 <= r.random() < 1.0


def test_mining_validates_distance():
    with pytest.raises(ValueError):
        mine_id_for_distance(0, 238, random.Random(0))
    with pytest.raises(ValueError):
        mine_id_for_distance(0, 256, random.Random(0))


def test_mining_cap_raises():
    class Stuck(random.Random):
        def getrandbits(self, k):
            return 0  # equals local forever

    with pytest.raises(MiningError):
        mine_id_for_distance(0, 255, Stuck())


def test_mine_255_mean_about_two():
    rng = random.Random(11)
    mean = sum(mine_id_for_distance(123, 255, rng).attempts for _ in range(2000)) / 2000
    assert abs(mean - 2) < 0.15


@pytest.mark.parametrize("d", [252, 253, 254, 255])
def test_mining_distribution_small_d(d):
    rng = random.Random(d)
    local = generate_id(rng)
    mean = sum(mine_id_for_distance(local, d, rng).attempts for _ in range(1000)) / 1000
    assert abs(mean - 2 ** (256 - d)) <= 0.1 * 2 ** (256 - d)


def test_mine_bucket_set_postconditions():
    rng = random.Random(2)
    local = generate_id(rng)
    mined = mine_bucket_set(local, rng)
    assert sorted(mined) == list(range(239, 256))
    for d, rep in mined.items():
        assert log_distance(local, rep.id) == d
        assert rep.attempts >= 1
    assert MiningReport.from_json(mined[240].to_json()) == mined[240]


def test_merge_mined_first_wins():
    a = {250: MiningReport(1, 3)}
    b = {250: MiningReport(2, 5), 251: MiningReport(3, 1)}
    merged = merge_mined(a, b)
    assert merged[250].id == 1 and merged[251].id == 3


def test_constants():
    assert list(ident.BUCKET_DISTANCES) == list(range(239, 256))
    assert ident.mining_cap(255) == 2 * 64
