"""Geth-style discovery table: 17 k-buckets with replacement lists.

Buckets are ordered by activity: index 0 is the most recently active entry.
Entering the table follows the ping/pong flow of ``add_seen``; the /24
subnet limits (2 per bucket, 10 per table) are checked before a record
enters a bucket or a replacement list.
"""
import enum
import random
from collections import Counter
from dataclasses import dataclass
from typing import Callable, Dict, Iterator, List, Optional

from .ident import (
    EQUAL,
    MAX_BUCKET_DISTANCE,
    MIN_BUCKET_DISTANCE,
    NodeRecord,
    id_to_hex,
    log_distance,
)

BUCKET_SIZE = 16
MAX_REPLACEMENTS = 10
BUCKET_SUBNET_LIMIT = 2
TABLE_SUBNET_LIMIT = 10
DEFAULT_READ_MAX = 4


class AddOutcome(enum.Enum):
    BUMPED = "bumped"
    ADDED = "added"
    REPLACEMENT_ADDED = "replacement_added"
    REJECTED_SUBNET = "rejected_subnet"
    NOOP = "noop"


class ReadMode(enum.Enum):
    HEADS = "heads"
    UNIFORM = "uniform"


class TableInvariantError(AssertionError):
    pass


class Bucket:
    __slots__ = ("distance", "entries", "replacements", "subnets")

    def __init__(self, distance: int) -> None:
        self.distance = distance
        self.entries: List[NodeRecord] = []
        # oldest first; new arrivals are appended
        self.replacements: List[NodeRecord] = []
        self.subnets: Counter = Counter()

    def index_of(self, node_id: int) -> int:
        for i, rec in enumerate(self.entries):
            if rec.id == node_id:
                return i
        return -1

    def replacement_index(self, node_id: int) -> int:
        for i, rec in enumerate(self.replacements):
            if rec.id == node_id:
                return i
        return -1

    @property
    def head(self) -> Optional[NodeRecord]:
        return self.entries[0] if self.entries else None

    def __len__(self) -> int:
        return len(self.entries)

    def __repr__(self) -> str:
        return f"<Bucket {self.distance} entries={len(self.entries)} repl={len(self.replacements)}>"


@dataclass(frozen=True)
class RevalidationReport:
    distance: Optional[int]
    probed: Optional[NodeRecord]
    alive: bool
    promoted: Optional[NodeRecord] = None


class DiscoveryTable:
    def __init__(
        self,
        local_id: int,
        bucket_size: int = BUCKET_SIZE,
        max_replacements: int = MAX_REPLACEMENTS,
        subnet_limits: bool = True,
    ) -> None:
        self.local_id = local_id
        self.bucket_size = bucket_size
        self.max_replacements = max_replacements
        self.subnet_limits = subnet_limits
        self.buckets: List[Bucket] = [
            Bucket(d) for d in range(MIN_BUCKET_DISTANCE, MAX_BUCKET_DISTANCE + 1)
        ]
        self.subnet_counts: Counter = Counter()
        self._size = 0

    # -- lookup helpers -------------------------------------------------

    def _bucket_index(self, node_id: int) -> int:
        d = log_distance(self.local_id, node_id)
        if d is EQUAL:
            raise ValueError("the local node cannot be stored in its own table")
        return max(d, MIN_BUCKET_DISTANCE) - MIN_BUCKET_DISTANCE  # type: ignore[operator]

    def bucket_for(self, node_id: int) -> Bucket:
        return self.buckets[self._bucket_index(node_id)]

    def bucket_at(self, distance: int) -> Bucket:
        return self.buckets[distance - MIN_BUCKET_DISTANCE]

    def __len__(self) -> int:
        return self._size

    def __contains__(self, node_id: object) -> bool:
        if not isinstance(node_id, int) or node_id == self.local_id:
            return False
        return self.bucket_for(node_id).index_of(node_id) >= 0

    def entries(self) -> List[NodeRecord]:
        return [rec for b in self.buckets for rec in b.entries]

    def __iter__(self) -> Iterator[NodeRecord]:
        for b in self.buckets:
            yield from b.entries

    def subnet_limits_allow(self, bucket: Bucket, rec: NodeRecord) -> bool:
        if not self.subnet_limits:
            return True
        return (
            bucket.subnets[rec.subnet] < BUCKET_SUBNET_LIMIT
            and self.subnet_counts[rec.subnet] < TABLE_SUBNET_LIMIT
        )

    def _insert(self, bucket: Bucket, rec: NodeRecord, front: bool) -> None:
        if front:
            bucket.entries.insert(0, rec)
        else:
            bucket.entries.append(rec)
        bucket.subnets[rec.subnet] += 1
        self.subnet_counts[rec.subnet] += 1
        self._size += 1

    def _remove_at(self, bucket: Bucket, index: int) -> NodeRecord:
        rec = bucket.entries.pop(index)
        for counter in (bucket.subnets, self.subnet_counts):
            counter[rec.subnet] -= 1
            if not counter[rec.subnet]:
                del counter[rec.subnet]
        self._size -= 1
        return rec

    # -- mutation -------------------------------------------------------

    def add_seen(self, rec: NodeRecord, now: int = 0) -> AddOutcome:
        """Process a record that sent a ping or answered one of our pings.

        ``now`` is accepted for call-site symmetry with the simulator; the
        table itself keeps no clock.
        """
        bucket = self.bucket_for(rec.id)
        i = bucket.index_of(rec.id)
        if i >= 0:
            if i:
                bucket.entries.insert(0, bucket.entries.pop(i))
            return AddOutcome.BUMPED
        if len(bucket.entries) < self.bucket_size:
            if not self.subnet_limits_allow(bucket, rec):
                return AddOutcome.REJECTED_SUBNET
            j = bucket.replacement_index(rec.id)
            if j >= 0:
                del bucket.replacements[j]
            self._insert(bucket, rec, front=True)
            return AddOutcome.ADDED
        if bucket.replacement_index(rec.id) >= 0:
            return AddOutcome.NOOP
        if not self.subnet_limits_allow(bucket, rec):
            return AddOutcome.REJECTED_SUBNET
        bucket.replacements.append(rec)
        if len(bucket.replacements) > self.max_replacements:
            del bucket.replacements[0]
        return AddOutcome.REPLACEMENT_ADDED

    def revalidate_step(
        self,
        rng: random.Random,
        now: int,
        liveness: Callable[[NodeRecord], bool],
    ) -> RevalidationReport:
        """Ping the last entry of a random non-empty bucket.

        A live entry moves to the front. A dead one is dropped and a random
        replacement that passes the subnet limits takes its place at the tail.
        """
        candidates = [b for b in self.buckets if b.entries]
        if not candidates:
            return RevalidationReport(None, None, False)
        bucket = candidates[rng.randrange(len(candidates))]
        last = bucket.entries[-1]
        if liveness(last):
            bucket.entries.insert(0, bucket.entries.pop())
            return RevalidationReport(bucket.distance, last, True)
        self._remove_at(bucket, len(bucket.entries) - 1)
        eligible = [r for r in bucket.replacements if self.subnet_limits_allow(bucket, r)]
        promoted = None
        if eligible:
            promoted = eligible[rng.randrange(len(eligible))]
            bucket.replacements.remove(promoted)
            self._insert(bucket, promoted, front=False)
        return RevalidationReport(bucket.distance, last, False, promoted)

    def delete(self, node_id: int) -> bool:
        bucket = self.bucket_for(node_id)
        i = bucket.index_of(node_id)
        if i < 0:
            return False
        self._remove_at(bucket, i)
        return True

    # -- node proposals -------------------------------------------------

    def read_random_nodes(
        self,
        rng: random.Random,
        max: int = DEFAULT_READ_MAX,
        mode: ReadMode = ReadMode.HEADS,
    ) -> List[NodeRecord]:
        if max < 1:
            raise ValueError("max must be >= 1")
        if mode is ReadMode.HEADS:
            nonempty = [b for b in self.buckets if b.entries]
            chosen = rng.sample(nonempty, min(max, len(nonempty)))
            return [b.entries[0] for b in chosen]
        everything = self.entries()
        return rng.sample(everything, min(max, len(everything)))

    def closest_known(self, target: int, k: int = BUCKET_SIZE) -> List[NodeRecord]:
        """The k bucket entries closest to ``target`` by xor, ascending.

        Entries in the target's own bucket beat everything in lower buckets,
        which in turn beat each higher bucket in ascending order, so only
        the groups needed to reach k entries are sorted.
        """
        if k < 1:
            raise ValueError("k must be >= 1")
        d = log_distance(self.local_id, target)
        bt = MIN_BUCKET_DISTANCE if d is EQUAL else max(d, MIN_BUCKET_DISTANCE)  # type: ignore[type-var]
        i_t = bt - MIN_BUCKET_DISTANCE
        buckets = self.buckets
        groups = [buckets[i_t].entries, [r for b in buckets[:i_t] for r in b.entries]]
        groups.extend(b.entries for b in buckets[i_t + 1:])
        out: List[NodeRecord] = []
        for group in groups:
            if not group:
                continue
            out.extend(sorted(group, key=lambda r: r.id ^ target))
            if len(out) >= k:
                break
        return out[:k]

    # -- inspection -----------------------------------------------------

    def recount_subnets(self) -> Counter:
        return Counter(rec.subnet for rec in self)

    def audit(self) -> None:
        """Check every structural invariant; raise TableInvariantError."""
        problems = []
        seen = set()
        for b in self.buckets:
            if len(b.entries) > self.bucket_size:
                problems.append(f"bucket {b.distance} holds {len(b.entries)} entries")
            if len(b.replacements) > self.max_replacements:
                problems.append(f"bucket {b.distance} holds {len(b.replacements)} replacements")
            entry_ids = [r.id for r in b.entries]
            repl_ids = [r.id for r in b.replacements]
            if len(set(entry_ids)) != len(entry_ids) or len(set(repl_ids)) != len(repl_ids):
                problems.append(f"bucket {b.distance} has duplicate records")
            if set(entry_ids) & set(repl_ids):
                problems.append(f"bucket {b.distance} has a record in both lists")
            for rec in b.entries + b.replacements:
                if rec.id == self.local_id:
                    problems.append("local id stored in table")
                    continue
                d = log_distance(self.local_id, rec.id)
                if max(d, MIN_BUCKET_DISTANCE) != b.distance:  # type: ignore[type-var]
                    problems.append(f"{id_to_hex(rec.id)} at distance {d} in bucket {b.distance}")
            for rec in b.entries:
                if rec.id in seen:
                    problems.append(f"{id_to_hex(rec.id)} in two buckets")
                seen.add(rec.id)
            per_bucket = Counter(r.subnet for r in b.entries)
            if per_bucket != +b.subnets:
                problems.append(f"bucket {b.distance} subnet counter drifted")
            if self.subnet_limits and any(c > BUCKET_SUBNET_LIMIT for c in per_bucket.values()):
                problems.append(f"bucket {b.distance} exceeds the per-bucket /24 limit")
        recount = self.recount_subnets()
        if recount != +self.subnet_counts:
            problems.append("table subnet counter drifted")
        if self.subnet_limits and any(c > TABLE_SUBNET_LIMIT for c in recount.values()):
            problems.append("table exceeds the table-wide /24 limit")
        if self._size != len(seen):
            problems.append(f"size {self._size} != {len(seen)}")
        if problems:
            raise TableInvariantError("; ".join(problems))

    def snapshot(self) -> Dict[str, object]:
        return {
            "local_id": id_to_hex(self.local_id),
            "bucket_size": self.bucket_size,
            "max_replacements": self.max_replacements,
            "subnet_limits": self.subnet_limits,
            "buckets": [
                {
                    "distance": b.distance,
                    "entries": [r.to_json() for r in b.entries],
                    "replacements": [r.to_json() for r in b.replacements],
                }
                for b in self.buckets
            ],
        }

    @classmethod
    def from_snapshot(cls, snap: Dict[str, object]) -> "DiscoveryTable":
        from .ident import id_from_hex

        table = cls(
            id_from_hex(str(snap["local_id"])),
            int(snap.get("bucket_size", BUCKET_SIZE)),  # type: ignore[arg-type]
            int(snap.get("max_replacements", MAX_REPLACEMENTS)),  # type: ignore[arg-type]
            bool(snap.get("subnet_limits", True)),
        )
        for raw in snap["buckets"]:  # type: ignore[attr-defined]
            bucket = table.bucket_at(int(raw["distance"]))
            for obj in raw["entries"]:
                rec = NodeRecord.from_json(obj)
                if table.bucket_for(rec.id) is not bucket:
                    raise ValueError("snapshot entry stored in the wrong bucket")
                table._insert(bucket, rec, front=False)
            bucket.replacements = [NodeRecord.from_json(o) for o in raw["replacements"]]
        table.audit()
        return table
