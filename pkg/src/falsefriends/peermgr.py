"""DEVp2p-style connection slots and outbound candidate selection."""
import enum
import logging
import random
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Container, Deque, Dict, List, Optional, Tuple

from .ident import NodeRecord
from .table import DiscoveryTable, ReadMode

log = logging.getLogger(__name__)

NS = 1_000_000_000
DEFAULT_THROTTLE_NS = 30 * NS


class Direction(enum.Enum):
    IN = "in"
    OUT = "out"


class Provenance(enum.Enum):
    TABLE = "table"
    BUFFER = "buffer"
    INBOUND = "inbound"


class InboundOutcome(enum.Enum):
    ACCEPTED = "accepted"
    REJECTED_FULL = "rejected_full"
    REJECTED_THROTTLED = "rejected_throttled"
    REJECTED_DUPLICATE = "rejected_duplicate"


@dataclass(frozen=True)
class SlotConfig:
    max_peers: int = 25

    def __post_init__(self) -> None:
        if self.max_peers < 1:
            raise ValueError("max_peers must be >= 1")

    @property
    def outbound_slots(self) -> int:
        return self.max_peers // 3

    @property
    def inbound_slots(self) -> int:
        return self.max_peers - self.outbound_slots


@dataclass
class Connection:
    peer: NodeRecord
    direction: Direction
    established_at: int
    scheduled_end: Optional[int] = None
    provenance: Provenance = Provenance.INBOUND


@dataclass(frozen=True)
class DialDecision:
    peer: NodeRecord
    provenance: Provenance


@dataclass
class FillReport:
    free: int
    from_table: List[NodeRecord] = field(default_factory=list)
    from_buffer: List[NodeRecord] = field(default_factory=list)
    dials: List[DialDecision] = field(default_factory=list)
    refilled: bool = False


class InboundThrottle:
    """Remembers the last attempt per IP that got past the throttle."""

    def __init__(self, window: int = DEFAULT_THROTTLE_NS) -> None:
        self.window = window
        self.last_attempt: Dict[str, int] = {}

    def check(self, ip: str, now: int) -> bool:
        last = self.last_attempt.get(ip)
        if last is not None and now - last < self.window:
            return False
        self.last_attempt[ip] = now
        return True

    def retry_at(self, ip: str) -> int:
        return self.last_attempt.get(ip, 0) + self.window


class PeerManager:
    def __init__(
        self,
        local: NodeRecord,
        slots: SlotConfig = SlotConfig(),
        read_mode: ReadMode = ReadMode.HEADS,
        throttle: Optional[InboundThrottle] = None,
    ) -> None:
        self.local = local
        self.slots = slots
        self.read_mode = read_mode
        self.throttle = throttle
        self.connections: Dict[Tuple[int, Direction], Connection] = {}
        self.pending: Dict[int, DialDecision] = {}
        self.lookup_buffer: Deque[NodeRecord] = deque()
        self._count = {Direction.IN: 0, Direction.OUT: 0}

    # -- accounting -----------------------------------------------------

    def count(self, direction: Direction) -> int:
        return self._count[direction]

    def free_inbound(self) -> int:
        return self.slots.inbound_slots - self._count[Direction.IN]

    def free_outbound(self) -> int:
        """Outbound slots neither connected nor reserved by a pending dial."""
        return self.slots.outbound_slots - self._count[Direction.OUT] - len(self.pending)

    def is_connected(self, peer_id: int) -> bool:
        return (peer_id, Direction.IN) in self.connections or (
            peer_id,
            Direction.OUT,
        ) in self.connections

    def peers(self) -> List[Connection]:
        return list(self.connections.values())

    # -- outbound -------------------------------------------------------

    def fill_outbound(
        self,
        table: DiscoveryTable,
        rng: random.Random,
        refill: Callable[[], List[NodeRecord]],
    ) -> FillReport:
        """Choose dial candidates for the free outbound slots.

        With n free slots, n // 2 candidates come from the table and the
        remaining n - n // 2 from the front of the lookup-buffer. An empty
        buffer is refilled through ``refill`` at most once per call.
        Duplicates and self are dropped only after both sources were drawn
        from, so a dropped candidate still uses up its share.
        """
        n = self.free_outbound()
        report = FillReport(free=n)
        if n <= 0:
            return report
        n_table = n // 2
        if n_table:
            report.from_table = table.read_random_nodes(rng, n_table, self.read_mode)
        n_buffer = n - n_table
        if not self.lookup_buffer:
            self.lookup_buffer.extend(refill())
            report.refilled = True
        while n_buffer and self.lookup_buffer:
            report.from_buffer.append(self.lookup_buffer.popleft())
            n_buffer -= 1

        chosen = set()
        for source, provenance in (
            (report.from_table, Provenance.TABLE),
            (report.from_buffer, Provenance.BUFFER),
        ):
            for rec in source:
                if (
                    rec.id == self.local.id
                    or rec.id in chosen
                    or rec.id in self.pending
                    or self.is_connected(rec.id)
                ):
                    continue
                chosen.add(rec.id)
                decision = DialDecision(rec, provenance)
                self.pending[rec.id] = decision
                report.dials.append(decision)
        return report

    def dial_succeeded(self, peer_id: int, now: int, scheduled_end: Optional[int]) -> Connection:
        decision = self.pending.pop(peer_id)
        conn = Connection(decision.peer, Direction.OUT, now, scheduled_end, decision.provenance)
        self.connections[(peer_id, Direction.OUT)] = conn
        self._count[Direction.OUT] += 1
        return conn

    def dial_failed(self, peer_id: int) -> None:
        self.pending.pop(peer_id, None)

    # -- inbound --------------------------------------------------------

    def accept_inbound(
        self, peer: NodeRecord, now: int, scheduled_end: Optional[int] = None
    ) -> InboundOutcome:
        if self.throttle is not None and not self.throttle.check(peer.ip, now):
            return InboundOutcome.REJECTED_THROTTLED
        if self.free_inbound() <= 0:
            return InboundOutcome.REJECTED_FULL
        if (peer.id, Direction.IN) in self.connections or peer.id == self.local.id:
            return InboundOutcome.REJECTED_DUPLICATE
        self.connections[(peer.id, Direction.IN)] = Connection(
            peer, Direction.IN, now, scheduled_end, Provenance.INBOUND
        )
        self._count[Direction.IN] += 1
        return InboundOutcome.ACCEPTED

    # -- teardown -------------------------------------------------------

    def on_disconnect(self, peer_id: int, direction: Direction, now: int) -> Optional[Direction]:
        """Drop a connection; return the freed direction, or None if unknown."""
        conn = self.connections.pop((peer_id, direction), None)
        if conn is None:
            log.warning("disconnect for unknown connection %064x/%s", peer_id, direction.value)
            return None
        self._count[direction] -= 1
        return direction

    def drop_all(self, now: int) -> List[Connection]:
        dropped = list(self.connections.values())
        for conn in dropped:
            self.on_disconnect(conn.peer.id, conn.direction, now)
        self.pending.clear()
        self.lookup_buffer.clear()
        return dropped

    def is_eclipsed(self, adversary_ids: Container[int]) -> bool:
        if self._count[Direction.IN] < self.slots.inbound_slots:
            return False
        if self._count[Direction.OUT] < self.slots.outbound_slots:
            return False
        return all(key[0] in adversary_ids for key in self.connections)
