"""Pre-computed Sybil ID pools and exact xor k-nearest queries.

IDs are kept in a sorted array. Every subtree of the binary trie over the
IDs is a contiguous slice of that array, so a depth-first walk that always
descends into the child agreeing with the target's bit first visits the
IDs in ascending xor-distance order. Slices at or below
``_LEAF_SIZE`` are sorted directly instead of split further.
"""
import math
import random
from bisect import bisect_left
from pathlib import Path
from typing import Iterable, List, Sequence, Union

from .ident import ID_BITS, ID_BYTES, NodeId, generate_id

POOL_MAGIC = b"SPOOL1"
_LEAF_SIZE = 32


class PoolFormatError(ValueError):
    pass


class SybilPool:
    __slots__ = ("_ids",)

    def __init__(self, ids: Iterable[int]) -> None:
        ordered = sorted(ids)
        for prev, cur in zip(ordered, ordered[1:]):
            if prev == cur:
                raise ValueError(f"duplicate id in pool: {cur:064x}")
        self._ids: List[int] = ordered

    @classmethod
    def _from_sorted(cls, ids: List[int]) -> "SybilPool":
        pool = cls.__new__(cls)
        pool._ids = ids
        return pool

    def __len__(self) -> int:
        return len(self._ids)

    def size(self) -> int:
        return len(self._ids)

    def __contains__(self, node_id: object) -> bool:
        if not isinstance(node_id, int):
            return False
        i = bisect_left(self._ids, node_id)
        return i < len(self._ids) and self._ids[i] == node_id

    def __iter__(self):
        return iter(self._ids)

    @property
    def ids(self) -> Sequence[int]:
        return self._ids

    def closest(self, target: int, k: int) -> List[NodeId]:
        """The min(k, n) pool IDs nearest to ``target`` by xor, ascending."""
        if k < 1:
            raise ValueError("k must be >= 1")
        ids = self._ids
        out: List[int] = []
        # Explicit stack of (lo, hi, bit, base); the matching child is pushed
        # last so it is popped first.
        stack = [(0, len(ids), ID_BITS - 1, 0)]
        while stack and len(out) < k:
            lo, hi, bit, base = stack.pop()
            if lo >= hi:
                continue
            if hi - lo <= _LEAF_SIZE or bit < 0:
                chunk = sorted(ids[lo:hi], key=lambda x: x ^ target)
                out.extend(chunk[: k - len(out)])
                continue
            upper = base | (1 << bit)
            mid = bisect_left(ids, upper, lo, hi)
            if (target >> bit) & 1:
                stack.append((lo, mid, bit - 1, base))
                stack.append((mid, hi, bit - 1, upper))
            else:
                stack.append((mid, hi, bit - 1, upper))
                stack.append((lo, mid, bit - 1, base))
        return out  # type: ignore[return-value]

    def save(self, path: Union[str, Path]) -> None:
        with open(path, "wb") as fh:
            fh.write(POOL_MAGIC)
            fh.write(len(self._ids).to_bytes(8, "little"))
            fh.write(b"".join(x.to_bytes(ID_BYTES, "big") for x in self._ids))

    @classmethod
    def load(cls, path: Union[str, Path]) -> "SybilPool":
        data = Path(path).read_bytes()
        header = len(POOL_MAGIC) + 8
        if data[: len(POOL_MAGIC)] != POOL_MAGIC:
            raise PoolFormatError("bad magic, not a pool file")
        n = int.from_bytes(data[len(POOL_MAGIC):header], "little")
        if len(data) != header + n * ID_BYTES:
            raise PoolFormatError(f"pool file truncated: header says {n} ids")
        ids = [
            int.from_bytes(data[off:off + ID_BYTES], "big")
            for off in range(header, len(data), ID_BYTES)
        ]
        for prev, cur in zip(ids, ids[1:]):
            if prev >= cur:
                raise PoolFormatError("pool ids not strictly ascending")
        return cls._from_sorted(ids)


def build_pool(n: int, rng: random.Random) -> SybilPool:
    if n < 1:
        raise ValueError("pool size must be >= 1")
    seen = set()
    while len(seen) < n:
        seen.add(generate_id(rng))
    return SybilPool._from_sorted(sorted(seen))


def brute_closest(ids: Iterable[int], target: int, k: int) -> List[int]:
    """Linear scan reference for :meth:`SybilPool.closest`."""
    return sorted(ids, key=lambda x: x ^ target)[:k]


def min_beats_network_prob(m: int, n: int) -> float:
    """P[min of n pool draws is xor-closer than min of m honest IDs]."""
    if m < 0 or n < 0:
        raise ValueError("m and n must be non-negative")
    if n == 0:
        return 0.0
    if m == 0:
        return 1.0
    return -math.expm1(n * math.log1p(-1.0 / (m + 1)))
