"""The false friends attack: mined bucket Sybils, a poisoned ID pool and an
inbound flood, all drawing their addresses from two /24 subnets.
"""
import ipaddress
import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import TYPE_CHECKING, Dict, List, Optional, Tuple, Union

from .ident import (
    BUCKET_DISTANCES,
    NodeRecord,
    SubnetKey,
    generate_id,
    id_from_hex,
    id_to_hex,
    log_distance,
    mine_bucket_set,
    subnet_of,
)
from .idpool import SybilPool, build_pool
from .peermgr import InboundOutcome
from .table import TABLE_SUBNET_LIMIT

if TYPE_CHECKING:  # pragma: no cover
    from .simnet import Simulation

NS = 1_000_000_000

# Documentation ranges (RFC 5737); the honest population never uses them.
DEFAULT_SUBNETS = ("203.0.113.0", "198.51.100.0")
SYBIL_PORT_BASE = 30303
SYBIL_PORT_SPAN = 20000


class PlanError(ValueError):
    pass


def _host(subnet_base: str, host: int) -> str:
    return str(ipaddress.IPv4Address(int(ipaddress.IPv4Address(subnet_base)) + host))


@dataclass
class AttackPlan:
    victim_id: int
    bucket_sybils: Dict[int, NodeRecord]
    pool: SybilPool
    subnets: Tuple[str, str] = DEFAULT_SUBNETS
    addresses_per_subnet: int = 16
    ping_interval: float = 3.0
    inbound_fillers: List[NodeRecord] = field(default_factory=list)
    mining_attempts: Dict[int, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not 1 <= self.addresses_per_subnet <= 254:
            raise PlanError("addresses_per_subnet must be within 1..254")
        self._bucket_ids = {rec.id for rec in self.bucket_sybils.values()}
        self._filler_ids = {rec.id for rec in self.inbound_fillers}

    # -- identities -----------------------------------------------------

    def __contains__(self, node_id: object) -> bool:
        return node_id in self._bucket_ids or node_id in self._filler_ids or node_id in self.pool

    def is_sybil(self, node_id: int) -> bool:
        return node_id in self

    def add_fillers(self, records: List[NodeRecord]) -> None:
        self.inbound_fillers.extend(records)
        self._filler_ids.update(r.id for r in records)

    def subnet_keys(self) -> Tuple[SubnetKey, SubnetKey]:
        return subnet_of(self.subnets[0]), subnet_of(self.subnets[1])

    def record_for(self, node_id: int) -> NodeRecord:
        """Endpoint under which the attacker serves a pool ID.

        The ID's low bit picks the subnet and the next bits pick a host and
        port, so the mapping needs no storage and is the same in every run.
        """
        subnet = self.subnets[node_id & 1]
        host = 1 + (node_id >> 1) % self.addresses_per_subnet
        port = SYBIL_PORT_BASE + (node_id >> 16) % SYBIL_PORT_SPAN
        return NodeRecord(node_id, _host(subnet, host), port, port)

    # -- invariants -----------------------------------------------------

    def audit(self) -> None:
        problems = []
        if sorted(self.bucket_sybils) != list(BUCKET_DISTANCES):
            problems.append("bucket sybils must cover distances 239..255 exactly")
        keys = self.subnet_keys()
        if keys[0] == keys[1]:
            problems.append("the two subnets must be distinct /24s")
        per_subnet: Dict[int, int] = {}
        for d, rec in self.bucket_sybils.items():
            if log_distance(self.victim_id, rec.id) != d:
                problems.append(f"sybil for bucket {d} sits at another distance")
            if rec.subnet not in keys:
                problems.append(f"sybil for bucket {d} outside the attack subnets")
            per_subnet[rec.subnet] = per_subnet.get(rec.subnet, 0) + 1
        if any(c > TABLE_SUBNET_LIMIT for c in per_subnet.values()):
            problems.append("more than 10 bucket sybils share a /24")
        for rec in self.inbound_fillers:
            if rec.subnet not in keys:
                problems.append("inbound filler outside the attack subnets")
        if problems:
            raise PlanError("; ".join(problems))

    # -- serialization --------------------------------------------------

    def to_json(self, pool_file: Optional[str] = None) -> Dict[str, object]:
        return {
            "victim_id": id_to_hex(self.victim_id),
            "bucket_sybils": {str(d): r.to_json() for d, r in sorted(self.bucket_sybils.items())},
            "mining_attempts": {str(d): a for d, a in sorted(self.mining_attempts.items())},
            "subnets": [s + "/24" for s in self.subnets],
            "addresses_per_subnet": self.addresses_per_subnet,
            "ping_interval": self.ping_interval,
            "inbound_fillers": [r.to_json() for r in self.inbound_fillers],
            "pool_size": len(self.pool),
            "pool_file": pool_file,
        }

    def save(self, path: Union[str, Path], pool_file: Optional[str] = None) -> None:
        Path(path).write_text(json.dumps(self.to_json(pool_file), indent=2, sort_keys=True) + "\n")

    @classmethod
    def from_json(cls, obj: Dict[str, object], pool: Optional[SybilPool] = None) -> "AttackPlan":
        if pool is None:
            pool_file = obj.get("pool_file")
            if not pool_file:
                raise PlanError("plan has no pool file and no pool was given")
            pool = SybilPool.load(str(pool_file))
        plan = cls(
            victim_id=id_from_hex(str(obj["victim_id"])),
            bucket_sybils={
                int(d): NodeRecord.from_json(r) for d, r in obj["bucket_sybils"].items()  # type: ignore[attr-defined]
            },
            pool=pool,
            subnets=tuple(s.split("/")[0] for s in obj["subnets"]),  # type: ignore[arg-type,attr-defined]
            addresses_per_subnet=int(obj["addresses_per_subnet"]),  # type: ignore[arg-type]
            ping_interval=float(obj["ping_interval"]),  # type: ignore[arg-type]
            inbound_fillers=[NodeRecord.from_json(r) for r in obj["inbound_fillers"]],  # type: ignore[attr-defined]
            mining_attempts={int(d): int(a) for d, a in obj.get("mining_attempts", {}).items()},  # type: ignore[attr-defined]
        )
        plan.audit()
        return plan

    @classmethod
    def load(cls, path: Union[str, Path], pool: Optional[SybilPool] = None) -> "AttackPlan":
        return cls.from_json(json.loads(Path(path).read_text()), pool)


def assign_bucket_subnets(distances: List[int]) -> Dict[int, int]:
    """Split bucket Sybils over two subnets: the first 10 to subnet 0, the
    rest to subnet 1, which keeps both under the table-wide /24 limit."""
    if len(distances) > 2 * TABLE_SUBNET_LIMIT:
        raise PlanError("two subnets cannot hold more than 20 table entries")
    return {d: (0 if i < TABLE_SUBNET_LIMIT else 1) for i, d in enumerate(sorted(distances))}


def prepare_attack(
    victim_id: int,
    pool_size: int,
    rng: random.Random,
    *,
    pool: Optional[SybilPool] = None,
    subnets: Tuple[str, str] = DEFAULT_SUBNETS,
    addresses_per_subnet: int = 16,
    ping_interval: float = 3.0,
    inbound_fillers: int = 0,
    filler_ips: int = 1,
) -> AttackPlan:
    """Mine one Sybil per bucket, build (or reuse) the pool, assign addresses.

    Bucket IDs depend on the victim; a pool can be shared between victims.
    """
    if pool_size < 1:
        raise PlanError("pool_size must be >= 1")
    if not 1 <= filler_ips <= addresses_per_subnet:
        raise PlanError("filler_ips must be within 1..addresses_per_subnet")
    mined = mine_bucket_set(victim_id, rng)
    side = assign_bucket_subnets(list(mined))
    sybils: Dict[int, NodeRecord] = {}
    for i, d in enumerate(sorted(mined)):
        subnet = subnets[side[d]]
        host = 1 + i % addresses_per_subnet
        port = SYBIL_PORT_BASE + i
        sybils[d] = NodeRecord(mined[d].id, _host(subnet, host), port, port)
    if pool is None:
        pool = build_pool(pool_size, rng)
    fillers = [
        NodeRecord(generate_id(rng), _host(subnets[0], 1 + j % filler_ips), 40000 + j, 40000 + j)
        for j in range(inbound_fillers)
    ]
    plan = AttackPlan(
        victim_id,
        sybils,
        pool,
        subnets,
        addresses_per_subnet,
        ping_interval,
        fillers,
        {d: r.attempts for d, r in mined.items()},
    )
    plan.audit()
    return plan


def poison_findnode(plan: AttackPlan, target: int, limit: int = 16) -> List[NodeRecord]:
    return [plan.record_for(x) for x in plan.pool.closest(target, limit)]


class _PingClock:
    """Jittered keep-alive schedule of one Sybil, enumerable lazily."""

    __slots__ = ("rng", "interval", "jitter", "t")

    def __init__(self, rng: random.Random, start: int, interval: int, jitter: float) -> None:
        self.rng = rng
        self.interval = interval
        self.jitter = jitter
        self.t = start

    def next_after(self, now: int) -> int:
        while self.t <= now:
            self.t += int(self.interval * self.rng.uniform(1.0 - self.jitter, 1.0 + self.jitter))
        return self.t


class Attacker:
    """Runs a plan against the victim of a :class:`~falsefriends.simnet.Simulation`.

    A keep-alive ping only changes the victim's table when its Sybil is not
    already the head of its bucket (or parked in the replacement list of a
    full bucket). Pings that cannot change anything are not simulated; each
    Sybil sleeps until the victim's bucket changes and then resumes at the
    next tick of its own jittered clock.
    """

    def __init__(
        self,
        sim: "Simulation",
        plan: AttackPlan,
        rng: random.Random,
        *,
        ping_jitter: float = 0.2,
        flood_poll: float = 1.0,
        throttle_window: Optional[int] = None,
    ) -> None:
        self.sim = sim
        self.plan = plan
        self.rng = rng
        self.ping_jitter = ping_jitter
        self.flood_poll = int(flood_poll * NS)
        self.throttle_window = throttle_window
        self._clocks: Dict[int, _PingClock] = {}
        self._ping_pending: Dict[int, bool] = {d: False for d in plan.bucket_sybils}
        self._flood_pending = False
        self._blocked_until: Dict[str, int] = {}
        self.active = False

    # -- keep-alive pings ----------------------------------------------

    def start(self, now: int) -> None:
        self.active = True
        interval = int(self.plan.ping_interval * NS)
        for d in sorted(self.plan.bucket_sybils):
            clock_rng = random.Random(f"{self.sim.cfg.seed}:ping-clock:{d}")
            self._clocks[d] = _PingClock(clock_rng, now, interval, self.ping_jitter)
            self._ping_pending[d] = True
            self.sim.schedule(now, self._send_ping, d)
        self.wake_flood(now)

    def stop(self) -> None:
        self.active = False

    def ping_would_change(self, d: int) -> bool:
        table = self.sim.victim_table
        rec = self.plan.bucket_sybils[d]
        bucket = table.bucket_for(rec.id)
        i = bucket.index_of(rec.id)
        if i >= 0:
            return i > 0
        full = len(bucket.entries) >= table.bucket_size
        if full and bucket.replacement_index(rec.id) >= 0:
            return False
        return table.subnet_limits_allow(bucket, rec)

    def _send_ping(self, now: int, d: int) -> None:
        if not self.active or not self.sim.victim_online:
            self._ping_pending[d] = False
            return
        self.sim.send_ping(self.plan.bucket_sybils[d])

    def ping_delivered(self, d: int, now: int) -> None:
        """The victim processed the PING of bucket ``d``'s Sybil."""
        self._ping_pending[d] = False
        self.touch(d, now)

    def touch(self, d: Optional[int], now: int) -> None:
        """The victim's bucket ``d`` changed; wake its Sybil if needed."""
        if not self.active or d is None or d not in self._clocks or self._ping_pending[d]:
            return
        if self.ping_would_change(d):
            self._ping_pending[d] = True
            self.sim.schedule(self._clocks[d].next_after(now), self._send_ping, d)

    # -- lookup poisoning ----------------------------------------------

    def answer_findnode(self, target: int, limit: int) -> List[NodeRecord]:
        return poison_findnode(self.plan, target, limit)

    # -- inbound flood -------------------------------------------------

    def wake_flood(self, now: int) -> None:
        """A victim inbound slot may have opened up; probe after a poll delay."""
        if not self.active or self._flood_pending or not self.plan.inbound_fillers:
            return
        self._flood_pending = True
        delay = int(self.rng.random() * self.flood_poll) + self.sim.latency()
        self.sim.schedule(now + delay, self._flood)

    def _idle_filler(self, now: int) -> Optional[NodeRecord]:
        mgr = self.sim.victim_peers
        for rec in self.plan.inbound_fillers:
            if self._blocked_until.get(rec.ip, 0) > now:
                continue
            if not mgr.is_connected(rec.id):
                return rec
        return None

    def _flood(self, now: int) -> None:
        self._flood_pending = False
        if not self.active or not self.sim.victim_online:
            return
        mgr = self.sim.victim_peers
        if mgr.free_inbound() <= 0:
            return
        filler = self._idle_filler(now)
        if filler is None:
            wake = [t for t in self._blocked_until.values() if t > now]
            if wake:
                self._flood_pending = True
                self.sim.schedule(min(wake), self._flood)
            return
        outcome = self.sim.victim_accept_inbound(filler, now, adversarial=True)
        if outcome is InboundOutcome.REJECTED_THROTTLED:
            window = self.throttle_window or 0
            self._blocked_until[filler.ip] = now + window
        if outcome in (InboundOutcome.ACCEPTED, InboundOutcome.REJECTED_THROTTLED,
                       InboundOutcome.REJECTED_DUPLICATE):
            self.wake_flood(now)
