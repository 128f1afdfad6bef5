import random

import pytest
from hypothesis import HealthCheck, settings

from falsefriends.ident import NodeRecord, log_distance

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def at_distance(local: int, d: int, rng: random.Random) -> int:
    """A uniformly random ID at log-distance ``d`` from ``local``."""
    node_id = local ^ ((1 << d) | rng.getrandbits(d))
    assert log_distance(local, node_id) == d
    return node_id


def rec_at(local: int, d: int, rng: random.Random, ip: str = None) -> NodeRecord:
    if ip is None:
        ip = f"{rng.randrange(1, 224)}.{rng.randrange(256)}.{rng.randrange(256)}.{rng.randrange(1, 255)}"
    return NodeRecord(at_distance(local, d, rng), ip)


@pytest.fixture
def rng():
    return random.Random(1234)
