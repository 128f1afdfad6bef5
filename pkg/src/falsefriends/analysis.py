"""Closed-form attack probabilities and Monte Carlo estimators that check them.

Notation: a bucket at log-distance ``i``; ``N`` honest IDs in the bucket a
lookup queries, of which the ``l``-th smallest distance is the threshold;
``a`` adversarial IDs; ``m`` honest IDs in the whole network; ``n`` the
size of the attacker's pool.
"""
import csv
import io
import math
import random
from dataclasses import dataclass
from typing import Iterable, List, Optional, Sequence, Union

import numpy as np

from .idpool import min_beats_network_prob

SeedLike = Union[int, np.random.Generator, None]
_CHUNK_VALUES = 4_000_000  # uniforms drawn per vectorized block

__all__ = [
    "AnalysisDomainError",
    "bucket_entry_prob",
    "expected_keygens",
    "total_expected_keygens",
    "findnode_query_prob",
    "single_order_stat_prob",
    "min_id_single_draw_prob",
    "min_beats_network_prob",
    "findnode_query_prob_exact",
    "min_beats_network_exact",
    "mc_validate_findnode",
    "mc_validate_findnode_combined",
    "mc_validate_findnode_discrete",
    "mc_validate_min_id",
    "mc_sharded",
    "Row",
    "fig5_rows",
    "fig7_rows",
    "min_id_rows",
    "keygen_rows",
    "rows_to_csv",
    "CSV_FIELDS",
]


class AnalysisDomainError(ValueError):
    pass


def _rng(seed: SeedLike) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _check_int(name: str, value: int, lo: int, hi: Optional[int] = None) -> None:
    if isinstance(value, bool) or not isinstance(value, (int, np.integer)):
        raise AnalysisDomainError(f"{name} must be an integer")
    if value < lo or (hi is not None and value > hi):
        bound = f"[{lo}, {hi}]" if hi is not None else f">= {lo}"
        raise AnalysisDomainError(f"{name}={value} outside {bound}")


def _check_order(l: int, N: int) -> None:
    _check_int("l", l, 1)
    _check_int("N", N, 1)
    if l > N:
        raise AnalysisDomainError(f"l={l} exceeds N={N}")


# -- closed forms --------------------------------------------------------------


def bucket_entry_prob(i: int) -> float:
    """Chance that a uniform ID lands at log-distance ``i``."""
    _check_int("i", i, 0, 255)
    return math.ldexp(1.0, i - 256)


def expected_keygens(i: int) -> int:
    """Mean key generations to hit log-distance ``i`` (geometric mean 1/p)."""
    _check_int("i", i, 193, 255)
    return 1 << (256 - i)


def total_expected_keygens(lo: int = 239, hi: int = 255) -> int:
    return sum(expected_keygens(i) for i in range(lo, hi + 1))


def single_order_stat_prob(l: int, N: int) -> float:
    """P(Z < Y_(l)) for one uniform Z against N honest uniforms."""
    _check_order(l, N)
    return l / (N + 1)


def findnode_query_prob(l: int, N: int, a: int) -> float:
    """Chance that at least one of ``a`` adversarial IDs beats Y_(l)."""
    _check_order(l, N)
    _check_int("a", a, 0)
    if a == 0:
        return 0.0
    return -math.expm1(a * math.log1p(-l / (N + 1)))


def min_id_single_draw_prob(m: int) -> float:
    """Chance one uniform ID is xor-closer to a target than all of ``m``."""
    _check_int("m", m, 0)
    return 1.0 / (m + 1)


def findnode_query_prob_exact(l: int, N: int, a: int) -> float:
    """Exact P(min of a uniforms < Y_(l)) = 1 - E[(1 - Y_(l))^a].

    :func:`findnode_query_prob` replaces E[(1 - Y)^a] with (1 - E[Y])^a,
    which by Jensen's inequality overstates the probability for a >= 2.
    """
    _check_order(l, N)
    _check_int("a", a, 0)
    stay = 1.0
    for j in range(a):
        stay *= (N - l + 1 + j) / (N + 1 + j)
    return 1.0 - stay


def min_beats_network_exact(m: int, n: int) -> float:
    """Exact chance the closest of n adversarial IDs beats all m honest ones.

    All m + n distances are exchangeable, so the overall minimum is
    adversarial with probability n / (m + n). The product form in
    :func:`min_beats_network_prob` treats the n draws as independent
    contests against fresh honest sets and overstates this.
    """
    _check_int("m", m, 0)
    _check_int("n", n, 0)
    if n == 0:
        return 0.0
    return n / (m + n)


# -- Monte Carlo ---------------------------------------------------------------


def _chunks(trials: int, width: int) -> Iterable[int]:
    step = max(1, _CHUNK_VALUES // max(1, width))
    done = 0
    while done < trials:
        size = min(step, trials - done)
        yield size
        done += size


def _count_findnode(l: int, N: int, a: int, trials: int, gen: np.random.Generator) -> int:
    hits = 0
    for size in _chunks(trials, N + a):
        honest = gen.random((size, N))
        threshold = np.partition(honest, l - 1, axis=1)[:, l - 1]
        if a == 0:
            continue
        adv_min = gen.random((size, a)).min(axis=1)
        hits += int(np.count_nonzero(adv_min < threshold))
    return hits


def mc_validate_findnode(l: int, N: int, a: int, trials: int, rng: SeedLike = None) -> float:
    """Fraction of trials where some adversarial uniform is below the l-th
    smallest of N honest uniforms (brute force, no order-statistic theory)."""
    _check_order(l, N)
    _check_int("a", a, 0)
    _check_int("trials", trials, 1)
    return _count_findnode(l, N, a, trials, _rng(rng)) / trials


def mc_validate_findnode_combined(k: int, N: int, a: int, trials: int, rng: SeedLike = None) -> float:
    """Fraction of trials where an adversarial value ranks among the ``k``
    smallest of all N + a values, counted by sorting the combined sample."""
    _check_int("k", k, 1)
    _check_int("N", N, 1)
    _check_int("a", a, 0)
    _check_int("trials", trials, 1)
    gen = _rng(rng)
    hits = 0
    for size in _chunks(trials, N + a):
        values = gen.random((size, N + a))
        order = np.argsort(values, axis=1)[:, :k]
        hits += int(np.count_nonzero((order >= N).any(axis=1)))
    return hits / trials


def mc_validate_findnode_discrete(l: int, N: int, a: int, trials: int, rng: Optional[random.Random] = None) -> float:
    """Same experiment as :func:`mc_validate_findnode` on 256-bit integer
    xor-distances instead of reals. Pure Python, so keep ``trials`` modest."""
    _check_order(l, N)
    _check_int("a", a, 0)
    _check_int("trials", trials, 1)
    rng = rng or random.Random()
    bits = rng.getrandbits
    hits = 0
    for _ in range(trials):
        target = bits(256)
        honest = sorted(bits(256) ^ target for _ in range(N))
        if a and min(bits(256) ^ target for _ in range(a)) < honest[l - 1]:
            hits += 1
    return hits / trials


def _count_min_id(m: int, n: int, trials: int, gen: np.random.Generator) -> int:
    if n == 0:
        return 0
    if m == 0:
        return trials
    hits = 0
    # 64-bit IDs: xor ranking equals the 256-bit ranking unless the top 64
    # bits tie, which has probability about (m + n)^2 / 2^64.
    for size in _chunks(trials, m + n):
        target = gen.integers(0, 2**64, size=(size, 1), dtype=np.uint64, endpoint=False)
        honest = (gen.integers(0, 2**64, size=(size, m), dtype=np.uint64) ^ target).min(axis=1)
        adv = (gen.integers(0, 2**64, size=(size, n), dtype=np.uint64) ^ target).min(axis=1)
        hits += int(np.count_nonzero(adv < honest))
    return hits


def mc_validate_min_id(m: int, n: int, trials: int, rng: SeedLike = None) -> float:
    """Fraction of trials in which the closest of ``n`` adversarial IDs is
    xor-closer to a fresh random target than every one of ``m`` honest IDs."""
    _check_int("m", m, 0)
    _check_int("n", n, 0)
    _check_int("trials", trials, 1)
    return _count_min_id(m, n, trials, _rng(rng)) / trials


def mc_sharded(kind: str, params: Sequence[int], trials_per_shard: int, seeds: Sequence[int]) -> float:
    """Pool shard estimates; the result depends only on the seed list."""
    counters = {"findnode": _count_findnode, "min_id": _count_min_id}
    if kind not in counters:
        raise AnalysisDomainError(f"unknown estimator {kind!r}")
    if not seeds:
        raise AnalysisDomainError("need at least one shard seed")
    fn = counters[kind]
    total = sum(fn(*params, trials_per_shard, np.random.default_rng(s)) for s in seeds)  # type: ignore[operator]
    return total / (trials_per_shard * len(seeds))


# -- tabular output ------------------------------------------------------------

CSV_FIELDS = ["formula", "i", "l", "N", "a", "m", "n", "closed_form", "monte_carlo", "trials", "abs_error"]


@dataclass(frozen=True)
class Row:
    formula: str
    closed_form: float
    monte_carlo: Optional[float] = None
    trials: int = 0
    i: Optional[int] = None
    l: Optional[int] = None
    N: Optional[int] = None
    a: Optional[int] = None
    m: Optional[int] = None
    n: Optional[int] = None

    @property
    def abs_error(self) -> Optional[float]:
        if self.monte_carlo is None:
            return None
        return abs(self.closed_form - self.monte_carlo)

    def as_dict(self) -> dict:
        out = {}
        for name in CSV_FIELDS:
            value = getattr(self, name)
            if value is None:
                out[name] = ""
            elif isinstance(value, float):
                out[name] = repr(value)
            else:
                out[name] = value
        return out


def fig5_rows(
    Ns: Sequence[int] = (32, 136, 272),
    a_values: Sequence[int] = tuple(range(1, 21)),
    l: int = 17,
    trials: int = 0,
    seed: int = 0,
) -> List[Row]:
    rows = []
    for N in Ns:
        for a in a_values:
            mc = None
            if trials:
                mc = mc_validate_findnode(l, N, a, trials, np.random.default_rng([seed, N, a]))
            rows.append(Row("findnode_query_prob", findnode_query_prob(l, N, a), mc, trials, l=l, N=N, a=a))
    return rows


def default_pool_sweep() -> List[int]:
    return [10**k for k in range(0, 8)]


def fig7_rows(
    ms: Sequence[int] = (9000, 25000, 500000),
    ns: Optional[Sequence[int]] = None,
) -> List[Row]:
    ns = default_pool_sweep() if ns is None else ns
    return [Row("min_beats_network_prob", min_beats_network_prob(m, n), m=m, n=n) for m in ms for n in ns]


def min_id_rows(m: int, ns: Sequence[int], trials: int = 0, seed: int = 0) -> List[Row]:
    rows = []
    for n in ns:
        mc = mc_validate_min_id(m, n, trials, np.random.default_rng([seed, m, n])) if trials else None
        rows.append(Row("min_beats_network_prob", min_beats_network_prob(m, n), mc, trials, m=m, n=n))
    return rows


def keygen_rows(lo: int = 239, hi: int = 255) -> List[Row]:
    return [Row("expected_keygens", float(expected_keygens(i)), i=i) for i in range(lo, hi + 1)]


def rows_to_csv(rows: Iterable[Row]) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow(row.as_dict())
    return buf.getvalue()
