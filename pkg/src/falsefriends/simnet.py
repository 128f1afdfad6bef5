"""Deterministic discrete-event simulation of one victim in an honest network.

Only the victim runs the full node logic (table maintenance, peer manager,
lookups). Honest nodes answer pings and FindNode from a static view of the
network built on first use, ping the victim, connect to it, and go on and
offline. Time is integer nanoseconds; every random choice comes from a
named stream derived from the scenario seed, so a configuration fully
determines its trace.
"""
import dataclasses
import enum
import functools
import heapq
import ipaddress
import json
import logging
import random
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, Iterator, List, Optional, Tuple

from .attacker import DEFAULT_SUBNETS, Attacker, AttackPlan, prepare_attack
from .churn import ChurnModel, sample_connection_duration
from .ident import NodeRecord, generate_id, id_to_hex
from .idpool import SybilPool, build_pool
from .lookup import handle_findnode, random_target, run_lookup
from .peermgr import (
    Direction,
    InboundOutcome,
    InboundThrottle,
    PeerManager,
    Provenance,
    SlotConfig,
)
from .table import AddOutcome, DiscoveryTable, ReadMode

log = logging.getLogger(__name__)

NS = 1_000_000_000
HOUR = 3600.0
DAY = 86400.0
VICTIM_IP = "192.0.2.10"
_RESERVED_NETS = [ipaddress.IPv4Network(n) for n in (
    "0.0.0.0/8", "10.0.0.0/8", "127.0.0.0/8", "192.0.2.0/24",
    "198.51.100.0/24", "203.0.113.0/24", "100.64.0.0/10",
    "169.254.0.0/16", "172.16.0.0/12", "192.168.0.0/16",
)]


def _ns(seconds: float) -> int:
    return int(round(seconds * NS))


class ConfigError(ValueError):
    pass


# -- configuration -----------------------------------------------------------


@dataclass(frozen=True)
class GethVariant:
    name: str
    max_peers: int = 25
    read_mode: ReadMode = ReadMode.HEADS
    inbound_throttle: Optional[float] = None
    subnet_limits: bool = True

    def to_json(self) -> Dict[str, Any]:
        return {
            "name": self.name,
            "max_peers": self.max_peers,
            "read_mode": self.read_mode.value,
            "inbound_throttle": self.inbound_throttle,
            "subnet_limits": self.subnet_limits,
        }

    @classmethod
    def from_json(cls, obj: Any) -> "GethVariant":
        if isinstance(obj, str):
            return variant_preset(obj)
        return cls(
            str(obj["name"]),
            int(obj.get("max_peers", 25)),
            ReadMode(obj.get("read_mode", "heads")),
            obj.get("inbound_throttle"),
            bool(obj.get("subnet_limits", True)),
        )


PRE_1_8 = GethVariant("pre-1.8", 25, ReadMode.HEADS, None, subnet_limits=False)
V1_8 = GethVariant("geth-1.8", 25, ReadMode.HEADS, None)
V1_9 = GethVariant("geth-1.9", 50, ReadMode.UNIFORM, 30.0)
VARIANTS = {v.name: v for v in (PRE_1_8, V1_8, V1_9)}


def variant_preset(name: str) -> GethVariant:
    aliases = {"V1_8": "geth-1.8", "V1_9": "geth-1.9", "1.8": "geth-1.8", "1.9": "geth-1.9"}
    try:
        return VARIANTS[aliases.get(name, name)]
    except KeyError:
        raise ConfigError(f"unknown variant {name!r}; choose from {sorted(VARIANTS)}") from None


@dataclass(frozen=True)
class LatencyModel:
    """One-way latency, uniform on mean +/- jitter (seconds)."""

    mean: float = 0.180
    jitter: float = 0.050

    def to_json(self) -> Dict[str, float]:
        return {"mean": self.mean, "jitter": self.jitter}


@dataclass(frozen=True)
class AttackSettings:
    pool_size: int = 1_000_000
    pool_seed: int = 1
    ping_interval: float = 3.0
    ping_jitter: float = 0.2
    inbound_fillers: Optional[int] = None
    filler_ips: int = 1
    flood_poll: float = 1.0
    addresses_per_subnet: int = 16
    subnets: Tuple[str, str] = DEFAULT_SUBNETS
    plan_file: Optional[str] = None

    def to_json(self) -> Dict[str, Any]:
        out = dataclasses.asdict(self)
        out["subnets"] = list(self.subnets)
        return out

    @classmethod
    def from_json(cls, obj: Dict[str, Any]) -> "AttackSettings":
        obj = dict(obj)
        if "subnets" in obj:
            obj["subnets"] = tuple(s.split("/")[0] for s in obj["subnets"])
        return cls(**obj)


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int = 0
    honest_count: int = 1000
    geth_variant: GethVariant = V1_8
    neighbors_limit: int = 16
    churn_model: ChurnModel = ChurnModel()
    latency_model: LatencyModel = LatencyModel()
    restart_victim: bool = True
    attack: Optional[AttackSettings] = AttackSettings()
    duration_limit: float = 24 * HOUR
    dial_failure_prob: float = 0.9
    bootstrap_count: int = 16
    warmup: float = 72 * HOUR
    connect_timeout: float = 10.0
    udp_timeout: float = 0.5
    revalidate_mean: float = 5.0
    honest_ping_rate: float = 0.1
    honest_inbound_rate: float = 0.05
    honest_online_mean: Optional[float] = 12 * HOUR
    honest_offline_mean: float = 12 * HOUR
    startup_delay: float = 2.0
    fill_retry: float = 5.0
    checkpoint_interval: float = HOUR
    trace_messages: bool = False

    def validate(self) -> None:
        problems = []
        if not 0 <= self.seed < 2**64:
            problems.append("seed must be a 64-bit unsigned integer")
        for name in ("honest_count", "bootstrap_count"):
            if getattr(self, name) < 0:
                problems.append(f"{name} must be >= 0")
        if self.bootstrap_count > self.honest_count:
            problems.append("bootstrap_count exceeds honest_count")
        if not 0.0 <= self.dial_failure_prob <= 1.0:
            problems.append("dial_failure_prob must be within [0, 1]")
        if self.neighbors_limit < 1:
            problems.append("neighbors_limit must be >= 1")
        if self.duration_limit <= 0:
            problems.append("duration_limit must be > 0")
        for name in ("warmup", "connect_timeout", "udp_timeout", "startup_delay",
                     "honest_ping_rate", "honest_inbound_rate"):
            if getattr(self, name) < 0:
                problems.append(f"{name} must be >= 0")
        for name in ("revalidate_mean", "fill_retry", "checkpoint_interval", "honest_offline_mean"):
            if getattr(self, name) <= 0:
                problems.append(f"{name} must be > 0")
        if self.honest_online_mean is not None and self.honest_online_mean <= 0:
            problems.append("honest_online_mean must be > 0 or null")
        if self.latency_model.mean <= 0 or not 0 <= self.latency_model.jitter < self.latency_model.mean:
            problems.append("latency jitter must be within [0, mean)")
        if self.attack is not None:
            a = self.attack
            if a.pool_size < 1:
                problems.append("attack.pool_size must be >= 1")
            if a.ping_interval <= 0 or not 0 <= a.ping_jitter < 1:
                problems.append("attack ping schedule is invalid")
            if a.inbound_fillers is not None and a.inbound_fillers < 0:
                problems.append("attack.inbound_fillers must be >= 0")
            if a.flood_poll <= 0:
                problems.append("attack.flood_poll must be > 0")
        if problems:
            raise ConfigError("; ".join(problems))

    def replace(self, **changes: Any) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)

    def to_json(self) -> Dict[str, Any]:
        out: Dict[str, Any] = {}
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if hasattr(value, "to_json"):
                value = value.to_json()
            out[f.name] = value
        return out

    @classmethod
    def from_json(cls, obj: Dict[str, Any]) -> "ScenarioConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(obj) - known - {"preset"}
        if unknown:
            raise ConfigError(f"unknown scenario fields: {sorted(unknown)}")
        base = preset(obj["preset"]) if "preset" in obj else cls()
        kwargs: Dict[str, Any] = {}
        for key, value in obj.items():
            if key == "preset":
                continue
            if key == "geth_variant":
                value = GethVariant.from_json(value)
            elif key == "churn_model":
                value = ChurnModel.from_json(value)
            elif key == "latency_model":
                value = LatencyModel(**value)
            elif key == "attack" and value is not None:
                value = AttackSettings.from_json(value)
            kwargs[key] = value
        cfg = dataclasses.replace(base, **kwargs)
        cfg.validate()
        return cfg


def preset(name: str, **changes: Any) -> ScenarioConfig:
    """Scenario for one of the named Geth regimes."""
    cfg = ScenarioConfig(geth_variant=variant_preset(name))
    return cfg.replace(**changes) if changes else cfg


# -- trace ---------------------------------------------------------------------


class Outcome(enum.Enum):
    ECLIPSED = "ECLIPSED"
    TIMEOUT = "TIMEOUT"


@dataclass
class SimTrace:
    seed: int
    events: List[Dict[str, Any]] = field(default_factory=list)
    outcome: Outcome = Outcome.TIMEOUT
    eclipse_time_ns: Optional[int] = None
    attack_start_ns: int = 0
    end_ns: int = 0

    def outcome_record(self) -> Dict[str, Any]:
        return {
            "outcome": self.outcome.value,
            "eclipse_time_ns": self.eclipse_time_ns,
            "seed": self.seed,
            "attack_start_ns": self.attack_start_ns,
            "end_ns": self.end_ns,
        }

    def lines(self) -> Iterator[str]:
        for ev in self.events:
            yield json.dumps(ev, sort_keys=True, separators=(",", ":"))
        yield json.dumps(self.outcome_record(), sort_keys=True, separators=(",", ":"))

    def to_ndjson(self) -> str:
        return "\n".join(self.lines()) + "\n"

    def write(self, path: str) -> None:
        with open(path, "w") as fh:
            for line in self.lines():
                fh.write(line)
                fh.write("\n")

    @property
    def eclipsed(self) -> bool:
        return self.outcome is Outcome.ECLIPSED


def read_trace(path: str) -> Tuple[List[Dict[str, Any]], Dict[str, Any]]:
    with open(path) as fh:
        rows = [json.loads(line) for line in fh if line.strip()]
    return rows[:-1], rows[-1]


def replay_connections(events: List[Dict[str, Any]]) -> Dict[Tuple[str, str], Dict[str, Any]]:
    """Victim connections still open after the given connection events."""
    open_conns: Dict[Tuple[str, str], Dict[str, Any]] = {}
    for ev in events:
        if ev.get("node") != "victim":
            continue
        key = (ev.get("peer"), ev.get("direction"))
        if ev["event"] == "connect":
            open_conns[key] = ev  # type: ignore[index]
        elif ev["event"] == "disconnect":
            open_conns.pop(key, None)  # type: ignore[arg-type]
    return open_conns


# -- messages ------------------------------------------------------------------


class MsgKind(enum.Enum):
    PING = "ping"
    PONG = "pong"
    FINDNODE = "findnode"
    NEIGHBORS = "neighbors"
    CONNECT = "connect"
    DISCONNECT = "disconnect"


@dataclass(frozen=True)
class Message:
    kind: MsgKind
    src: NodeRecord
    dst: int
    payload: Any = None
    sent_at: int = 0


@functools.lru_cache(maxsize=2)
def shared_pool(size: int, seed: int) -> SybilPool:
    """Pools depend only on (size, seed); build each once per process."""
    return build_pool(size, random.Random(f"pool:{seed}"))


class _Stop(Exception):
    pass


class Simulation:
    def __init__(self, cfg: ScenarioConfig, plan: Optional[AttackPlan] = None) -> None:
        cfg.validate()
        self.cfg = cfg
        self.now = 0
        self._queue: List[Tuple[int, int, Callable[..., None], Tuple[Any, ...]]] = []
        self._seq = 0
        seed = cfg.seed
        self._rng_ids = random.Random(f"{seed}:ids")
        self._rng_net = random.Random(f"{seed}:net")
        self._rng_victim = random.Random(f"{seed}:victim")
        self._rng_dial = random.Random(f"{seed}:dial")
        self._rng_churn = random.Random(f"{seed}:churn")
        self._rng_honest = random.Random(f"{seed}:honest")
        self._lat_lo = _ns(cfg.latency_model.mean - cfg.latency_model.jitter)
        self._lat_hi = _ns(cfg.latency_model.mean + cfg.latency_model.jitter)

        self._make_population()
        self.victim = NodeRecord(generate_id(self._rng_ids), VICTIM_IP)
        self.victim_online = True
        variant = cfg.geth_variant
        self.victim_table = DiscoveryTable(self.victim.id, subnet_limits=variant.subnet_limits)
        throttle = None
        if variant.inbound_throttle is not None:
            throttle = InboundThrottle(_ns(variant.inbound_throttle))
        self.victim_peers = PeerManager(
            self.victim, SlotConfig(variant.max_peers), variant.read_mode, throttle
        )
        self.attack_start = 0 if cfg.restart_victim else _ns(cfg.warmup)
        self.end_time = self.attack_start + _ns(cfg.duration_limit)
        self.trace = SimTrace(cfg.seed, attack_start_ns=self.attack_start)
        self._fill_pending = False
        self._retry_pending = False
        self._dialing = False
        self._lookup_elapsed = 0
        self._lookup_timeouts = 0
        self._booted = False
        self._finished = False

        self.plan: Optional[AttackPlan] = None
        self.attacker: Optional[Attacker] = None
        self._sybil_bucket: Dict[int, int] = {}
        if cfg.attack is not None:
            self.plan = plan if plan is not None else self._prepare_plan(cfg.attack)
            if self.plan.victim_id != self.victim.id:
                raise ConfigError("attack plan was mined for a different victim")
            self.attacker = Attacker(
                self,
                self.plan,
                random.Random(f"{seed}:attacker"),
                ping_jitter=cfg.attack.ping_jitter,
                flood_poll=cfg.attack.flood_poll,
                throttle_window=throttle.window if throttle else None,
            )
            self._sybil_bucket = {rec.id: d for d, rec in self.plan.bucket_sybils.items()}

    # -- setup ---------------------------------------------------------------

    def _random_ip(self, rng: random.Random) -> str:
        while True:
            addr = ipaddress.IPv4Address(rng.randrange(1 << 24, 224 << 24))
            if not any(addr in net for net in _RESERVED_NETS):
                return str(addr)

    def _make_population(self) -> None:
        n = self.cfg.honest_count
        rng = self._rng_ids
        ids = set()
        records = []
        while len(records) < n:
            node_id = generate_id(rng)
            if node_id in ids:
                continue
            ids.add(node_id)
            records.append(NodeRecord(node_id, self._random_ip(rng)))
        self.honest = records
        self.honest_index = {rec.id: i for i, rec in enumerate(records)}
        self.online = [True] * n
        self._honest_tables: Dict[int, DiscoveryTable] = {}

    def _prepare_plan(self, settings: AttackSettings) -> AttackPlan:
        fillers = settings.inbound_fillers
        if fillers is None:
            fillers = SlotConfig(self.cfg.geth_variant.max_peers).inbound_slots
        if settings.plan_file:
            plan = AttackPlan.load(settings.plan_file)
            if len(plan.inbound_fillers) < fillers:
                raise ConfigError("plan file has fewer inbound fillers than required")
            return plan
        pool = shared_pool(settings.pool_size, settings.pool_seed)
        return prepare_attack(
            self.victim.id,
            settings.pool_size,
            random.Random(f"{self.cfg.seed}:mining"),
            pool=pool,
            subnets=settings.subnets,
            addresses_per_subnet=settings.addresses_per_subnet,
            ping_interval=settings.ping_interval,
            inbound_fillers=fillers,
            filler_ips=settings.filler_ips,
        )

    def honest_table(self, idx: int) -> DiscoveryTable:
        table = self._honest_tables.get(idx)
        if table is None:
            me = self.honest[idx]
            table = DiscoveryTable(me.id)
            order = list(range(len(self.honest)))
            random.Random(f"{self.cfg.seed}:honest-table:{idx}").shuffle(order)
            for j in order:
                if j != idx:
                    table.add_seen(self.honest[j])
            self._honest_tables[idx] = table
        return table

    # -- event plumbing ------------------------------------------------------

    def schedule(self, t: int, fn: Callable[..., None], *args: Any) -> None:
        if t < self.now:
            raise ValueError("cannot schedule into the past")
        self._seq += 1
        heapq.heappush(self._queue, (t, self._seq, fn, args))

    def latency(self) -> int:
        return self._rng_net.randint(self._lat_lo, self._lat_hi)

    def emit(self, event: str, **fields: Any) -> None:
        fields["time"] = self.now
        fields["event"] = event
        self.trace.events.append(fields)

    def is_sybil(self, node_id: int) -> bool:
        return self.plan is not None and node_id in self.plan

    def is_reachable(self, node_id: int) -> bool:
        if node_id == self.victim.id:
            return self.victim_online
        idx = self.honest_index.get(node_id)
        if idx is not None:
            return self.online[idx]
        return self.is_sybil(node_id)

    def liveness(self, rec: NodeRecord) -> bool:
        return self.is_reachable(rec.id)

    def send(self, msg: Message, at: Optional[int] = None, latency: Optional[int] = None) -> None:
        sent = self.now if at is None else at
        msg = dataclasses.replace(msg, sent_at=sent)
        self.schedule(sent + (self.latency() if latency is None else latency), self._deliver, msg)

    def send_ping(self, src: NodeRecord) -> None:
        self.send(Message(MsgKind.PING, src, self.victim.id))

    def _deliver(self, now: int, msg: Message) -> None:
        if not self.is_reachable(msg.dst):
            if self.cfg.trace_messages:
                self.emit("drop", kind=msg.kind.value, src=id_to_hex(msg.src.id), dst=id_to_hex(msg.dst))
            return
        if self.cfg.trace_messages:
            self.emit("recv", kind=msg.kind.value, src=id_to_hex(msg.src.id),
                      dst=id_to_hex(msg.dst), sent=msg.sent_at)
        if msg.dst == self.victim.id:
            self._victim_handle(now, msg)
        else:
            self._remote_handle(now, msg)

    def _victim_handle(self, now: int, msg: Message) -> None:
        kind = msg.kind
        if kind is MsgKind.PING:
            self.victim_add_seen(msg.src, now, source="ping")
            self.send(Message(MsgKind.PONG, self.victim, msg.src.id))
            d = self._sybil_bucket.get(msg.src.id)
            if d is not None and self.attacker is not None:
                self.attacker.ping_delivered(d, now)
        elif kind is MsgKind.FINDNODE:
            found = handle_findnode(self.victim_table, msg.payload, self.cfg.neighbors_limit)
            self.send(Message(MsgKind.NEIGHBORS, self.victim, msg.src.id, found))
        elif kind is MsgKind.CONNECT:
            self.victim_accept_inbound(msg.src, now, adversarial=self.is_sybil(msg.src.id))
        elif kind is MsgKind.DISCONNECT:
            self._victim_disconnect(now, msg.src.id, msg.payload)

    def _remote_handle(self, now: int, msg: Message) -> None:
        me = self._record_of(msg.dst)
        if msg.kind is MsgKind.PING:
            self.send(Message(MsgKind.PONG, me, msg.src.id))
        elif msg.kind is MsgKind.FINDNODE:
            self.send(Message(MsgKind.NEIGHBORS, me, msg.src.id, self.answer_findnode(me, msg.payload)))

    def _record_of(self, node_id: int) -> NodeRecord:
        idx = self.honest_index.get(node_id)
        if idx is not None:
            return self.honest[idx]
        assert self.plan is not None
        d = self._sybil_bucket.get(node_id)
        if d is not None:
            return self.plan.bucket_sybils[d]
        for rec in self.plan.inbound_fillers:
            if rec.id == node_id:
                return rec
        return self.plan.record_for(node_id)

    def answer_findnode(self, responder: NodeRecord, target: int) -> List[NodeRecord]:
        """What ``responder`` returns to a FindNode for ``target`` right now."""
        if not self.is_reachable(responder.id):
            return []
        if self.is_sybil(responder.id):
            assert self.attacker is not None
            return self.attacker.answer_findnode(target, self.cfg.neighbors_limit)
        idx = self.honest_index[responder.id]
        return handle_findnode(self.honest_table(idx), target, self.cfg.neighbors_limit)

    # -- victim --------------------------------------------------------------

    def victim_add_seen(self, rec: NodeRecord, now: int, source: str) -> AddOutcome:
        outcome = self.victim_table.add_seen(rec, now)
        if outcome in (AddOutcome.ADDED, AddOutcome.REPLACEMENT_ADDED, AddOutcome.REJECTED_SUBNET):
            self.emit("table", node="victim", op=outcome.value, peer=id_to_hex(rec.id),
                      bucket=self.victim_table.bucket_for(rec.id).distance,
                      adversarial=self.is_sybil(rec.id), source=source)
        if self.attacker is not None and outcome is not AddOutcome.NOOP:
            self.attacker.touch(self.victim_table.bucket_for(rec.id).distance, now)
        return outcome

    def _revalidate(self, now: int) -> None:
        report = self.victim_table.revalidate_step(self._rng_victim, now, self.liveness)
        if report.probed is not None and not report.alive:
            self.emit("table", node="victim", op="removed", peer=id_to_hex(report.probed.id),
                      bucket=report.distance, adversarial=self.is_sybil(report.probed.id))
            if report.promoted is not None:
                self.emit("table", node="victim", op="promoted", peer=id_to_hex(report.promoted.id),
                          bucket=report.distance, adversarial=self.is_sybil(report.promoted.id))
        if self.attacker is not None and report.distance is not None:
            self.attacker.touch(report.distance, now)
        gap = self._rng_victim.expovariate(1.0 / self.cfg.revalidate_mean)
        self.schedule(now + max(1, _ns(gap)), self._revalidate)

    def _lookup_query(self, rec: NodeRecord, target: int) -> List[NodeRecord]:
        answer = self.answer_findnode(rec, target)
        if not self.is_reachable(rec.id):
            self._lookup_timeouts += 1
        return answer

    def _refill_buffer(self) -> List[NodeRecord]:
        target = random_target(self._rng_victim)
        self._lookup_timeouts = 0
        result = run_lookup(self.victim_table, target, self._lookup_query)
        rtt = 2 * _ns(self.cfg.latency_model.mean)
        elapsed = result.rounds * rtt
        if self._lookup_timeouts:
            elapsed += _ns(self.cfg.udp_timeout)
        self._lookup_elapsed = elapsed
        self.emit("lookup", node="victim", target=id_to_hex(target), rounds=result.rounds,
                  queried=len(result.queried), results=len(result.nodes),
                  adversarial=sum(1 for r in result.nodes if self.is_sybil(r.id)))
        return result.nodes

    def request_fill(self, now: int) -> None:
        if self._dialing and not self._fill_pending:
            self._fill_pending = True
            self.schedule(now, self._fill)

    def _fill(self, now: int) -> None:
        self._fill_pending = False
        mgr = self.victim_peers
        self._lookup_elapsed = 0
        report = mgr.fill_outbound(self.victim_table, self._rng_victim, self._refill_buffer)
        if report.free > 0:
            self.emit("fill", node="victim", free=report.free, from_table=len(report.from_table),
                      from_buffer=len(report.from_buffer), dials=len(report.dials),
                      refilled=report.refilled)
        for decision in report.dials:
            delay = self._lookup_elapsed if decision.provenance is Provenance.BUFFER else 0
            self._start_dial(now + delay, decision.peer)
        if mgr.free_outbound() > 0 and not mgr.pending and not self._retry_pending:
            self._retry_pending = True
            self.schedule(now + _ns(self.cfg.fill_retry), self._retry_fill)

    def _retry_fill(self, now: int) -> None:
        self._retry_pending = False
        self.request_fill(now)

    def _start_dial(self, t: int, peer: NodeRecord) -> None:
        rtt = self.latency() + self.latency()
        if self.is_sybil(peer.id):
            self.schedule(t + rtt, self._dial_ok, peer.id, None)
            return
        idx = self.honest_index.get(peer.id)
        reachable = idx is not None and self.online[idx]
        if not reachable or self._rng_dial.random() < self.cfg.dial_failure_prob:
            self.schedule(t + _ns(self.cfg.connect_timeout), self._dial_failed, peer.id)
            return
        duration = sample_connection_duration(self.cfg.churn_model, self._rng_churn)
        self.schedule(t + rtt, self._dial_ok, peer.id, duration)

    def _dial_ok(self, now: int, peer_id: int, duration: Optional[int]) -> None:
        mgr = self.victim_peers
        if peer_id not in mgr.pending:
            return
        end = None if duration is None else now + duration
        conn = mgr.dial_succeeded(peer_id, now, end)
        self._emit_conn("connect", conn.peer.id, Direction.OUT, conn.provenance)
        if end is not None:
            self.send(Message(MsgKind.DISCONNECT, conn.peer, self.victim.id, Direction.OUT),
                      at=end, latency=0)
        self._check_eclipse(now)

    def _dial_failed(self, now: int, peer_id: int) -> None:
        self.victim_peers.dial_failed(peer_id)
        self.emit("dial_failed", node="victim", peer=id_to_hex(peer_id))
        self.request_fill(now)

    def victim_accept_inbound(self, peer: NodeRecord, now: int, adversarial: bool) -> InboundOutcome:
        end = None
        if not adversarial:
            end = now + sample_connection_duration(self.cfg.churn_model, self._rng_churn)
        outcome = self.victim_peers.accept_inbound(peer, now, end)
        if outcome is InboundOutcome.ACCEPTED:
            self._emit_conn("connect", peer.id, Direction.IN, Provenance.INBOUND)
            if end is not None:
                self.send(Message(MsgKind.DISCONNECT, peer, self.victim.id, Direction.IN),
                          at=end, latency=0)
            self._check_eclipse(now)
        return outcome

    def _victim_disconnect(self, now: int, peer_id: int, direction: Direction) -> None:
        freed = self.victim_peers.on_disconnect(peer_id, direction, now)
        if freed is None:
            return
        self._emit_conn("disconnect", peer_id, direction, None)
        if freed is Direction.OUT:
            self.request_fill(now)
        elif self.attacker is not None:
            self.attacker.wake_flood(now)

    def _emit_conn(self, event: str, peer_id: int, direction: Direction,
                   provenance: Optional[Provenance]) -> None:
        fields: Dict[str, Any] = {
            "node": "victim",
            "peer": id_to_hex(peer_id),
            "direction": direction.value,
            "adversarial": self.is_sybil(peer_id),
        }
        if provenance is not None:
            fields["provenance"] = provenance.value
        self.emit(event, **fields)

    def _check_eclipse(self, now: int) -> None:
        if self.plan is None or self.attacker is None or not self.attacker.active:
            return
        if self.victim_peers.is_eclipsed(self.plan):
            self.trace.outcome = Outcome.ECLIPSED
            self.trace.eclipse_time_ns = now - self.attack_start
            self.emit("eclipsed", node="victim", since_attack_ns=now - self.attack_start)
            raise _Stop

    def _start_dialing(self, now: int) -> None:
        self._dialing = True
        self.request_fill(now)

    # -- honest background -----------------------------------------------

    def _honest_ping(self, now: int) -> None:
        idx = self._rng_honest.randrange(len(self.honest))
        if self.online[idx]:
            self.send(Message(MsgKind.PING, self.honest[idx], self.victim.id))
        self.schedule(now + max(1, _ns(self._rng_honest.expovariate(self.cfg.honest_ping_rate))),
                      self._honest_ping)

    def _honest_connect(self, now: int) -> None:
        idx = self._rng_honest.randrange(len(self.honest))
        rec = self.honest[idx]
        if self.online[idx] and not self.victim_peers.is_connected(rec.id):
            self.send(Message(MsgKind.CONNECT, rec, self.victim.id))
        self.schedule(now + max(1, _ns(self._rng_honest.expovariate(self.cfg.honest_inbound_rate))),
                      self._honest_connect)

    def _toggle_online(self, now: int, idx: int) -> None:
        self.online[idx] = not self.online[idx]
        mean = self.cfg.honest_online_mean if self.online[idx] else self.cfg.honest_offline_mean
        self.schedule(now + max(1, _ns(self._rng_honest.expovariate(1.0 / mean))),  # type: ignore[operator]
                      self._toggle_online, idx)

    def _checkpoint(self, now: int) -> None:
        mgr = self.victim_peers
        conns = mgr.peers()
        heads = [b.head for b in self.victim_table.buckets if b.head is not None]
        self.emit(
            "checkpoint",
            node="victim",
            inbound=mgr.count(Direction.IN),
            outbound=mgr.count(Direction.OUT),
            adversarial_in=sum(1 for c in conns if c.direction is Direction.IN and self.is_sybil(c.peer.id)),
            adversarial_out=sum(1 for c in conns if c.direction is Direction.OUT and self.is_sybil(c.peer.id)),
            table_size=len(self.victim_table),
            adversarial_heads=sum(1 for h in heads if self.is_sybil(h.id)),
            nonempty_buckets=len(heads),
        )
        self.schedule(now + _ns(self.cfg.checkpoint_interval), self._checkpoint)

    def _start_attack(self, now: int) -> None:
        assert self.attacker is not None
        self.emit("attack_start", node="attacker", sybils=len(self.plan.bucket_sybils),  # type: ignore[union-attr]
                  pool_size=len(self.plan.pool))  # type: ignore[union-attr]
        self.attacker.start(now)

    # -- main loop -----------------------------------------------------------

    def _boot(self) -> None:
        cfg = self.cfg
        rng = self._rng_honest
        if cfg.honest_online_mean is not None:
            total = cfg.honest_online_mean + cfg.honest_offline_mean
            for i in range(len(self.honest)):
                self.online[i] = rng.random() < cfg.honest_online_mean / total
                mean = cfg.honest_online_mean if self.online[i] else cfg.honest_offline_mean
                self.schedule(max(1, _ns(rng.expovariate(1.0 / mean))), self._toggle_online, i)
        live = [i for i in range(len(self.honest)) if self.online[i]]
        for i in rng.sample(live, min(cfg.bootstrap_count, len(live))):
            self.victim_add_seen(self.honest[i], 0, source="bootstrap")
        self.emit("start", node="victim", id=id_to_hex(self.victim.id),
                  variant=cfg.geth_variant.name, bootstrap=len(self.victim_table))
        self.schedule(_ns(rng.expovariate(1.0 / cfg.revalidate_mean)), self._revalidate)
        if self.honest and cfg.honest_ping_rate > 0:
            self.schedule(_ns(rng.expovariate(cfg.honest_ping_rate)), self._honest_ping)
        if self.honest and cfg.honest_inbound_rate > 0:
            self.schedule(_ns(rng.expovariate(cfg.honest_inbound_rate)), self._honest_connect)
        self.schedule(_ns(cfg.startup_delay), self._start_dialing)
        if self.attacker is not None:
            self.schedule(self.attack_start, self._start_attack)
        self.schedule(self.attack_start, self._checkpoint)

    def run_until(self, t: int) -> bool:
        """Process every event up to time ``t`` (capped at the run's end).

        Returns False once the run is over (eclipse or duration limit).
        """
        if self._finished:
            return False
        if not self._booted:
            self._booted = True
            self._boot()
        limit = min(t, self.end_time)
        queue = self._queue
        try:
            while queue and queue[0][0] <= limit:
                t_ev, _, fn, args = heapq.heappop(queue)
                self.now = t_ev
                fn(t_ev, *args)
        except _Stop:
            self._finished = True
            return False
        self.now = max(self.now, limit)
        if limit >= self.end_time:
            self._finished = True
        return not self._finished

    def run(self) -> SimTrace:
        self.run_until(self.end_time)
        self._finished = True
        self.trace.end_ns = self.now
        return self.trace


def run_scenario(cfg: ScenarioConfig, plan: Optional[AttackPlan] = None) -> SimTrace:
    return Simulation(cfg, plan).run()
