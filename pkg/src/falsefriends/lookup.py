"""Iterative lookup used to fill the lookup-buffer, and FindNode handling."""
import random
from dataclasses import dataclass, field
from typing import Callable, Dict, FrozenSet, List

from .ident import NodeId, NodeRecord, generate_id
from .table import BUCKET_SIZE, DiscoveryTable

RESULT_SIZE = BUCKET_SIZE
DEFAULT_NEIGHBORS_LIMIT = 16
MAX_ROUNDS = 64

QueryFn = Callable[[NodeRecord, int], List[NodeRecord]]


class LookupDivergedError(RuntimeError):
    pass


@dataclass
class LookupResult:
    target: int
    nodes: List[NodeRecord]
    rounds: int
    queried: FrozenSet[int] = field(default_factory=frozenset)
    # largest xor-distance in the candidate set after each round
    frontier: List[int] = field(default_factory=list)


def run_lookup(
    initiator_table: DiscoveryTable,
    target: int,
    query: QueryFn,
    max_rounds: int = MAX_ROUNDS,
) -> LookupResult:
    """Repeat FindNode rounds over the 16 closest candidates until stable.

    Every round queries each candidate not asked before, merges the answers
    into the candidate set, and keeps the 16 closest to ``target``. The
    lookup ends when a round leaves the candidate set unchanged. Records
    naming the initiator itself are discarded.
    """
    local = initiator_table.local_id
    current = initiator_table.closest_known(target, RESULT_SIZE)
    queried: Dict[int, None] = {}
    frontier: List[int] = []
    rounds = 0
    while True:
        rounds += 1
        if rounds > max_rounds:
            raise LookupDivergedError(f"lookup did not converge in {max_rounds} rounds")
        merged: Dict[int, NodeRecord] = {r.id: r for r in current}
        for rec in current:
            if rec.id in queried:
                continue
            queried[rec.id] = None
            for found in query(rec, target):
                if found.id != local and found.id not in merged:
                    merged[found.id] = found
        nxt = sorted(merged.values(), key=lambda r: r.id ^ target)[:RESULT_SIZE]
        if nxt:
            frontier.append(nxt[-1].id ^ target)
        if {r.id for r in nxt} == {r.id for r in current}:
            return LookupResult(target, nxt, rounds, frozenset(queried), frontier)
        current = nxt


def handle_findnode(
    responder_table: DiscoveryTable, target: int, limit: int = DEFAULT_NEIGHBORS_LIMIT
) -> List[NodeRecord]:
    if limit < 1:
        raise ValueError("limit must be >= 1")
    return responder_table.closest_known(target, limit)


def random_target(rng: random.Random) -> NodeId:
    return generate_id(rng)
