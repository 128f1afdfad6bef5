"""Node identities, the two distance metrics and Sybil ID mining.

Node IDs are plain Python ints in ``[0, 2**256)``. Real IDs are Keccak-256
hashes of secp256k1 public keys; only their uniformity matters here, so the
ID generator is any object with a ``getrandbits`` method.
"""
import hashlib
import ipaddress
import json
import random
from dataclasses import dataclass, field
from typing import Dict, Final, NewType, Union

ID_BITS: Final = 256
ID_BYTES: Final = ID_BITS // 8
ID_MAX: Final = (1 << ID_BITS) - 1

# Geth >= 1.8 keeps 17 buckets, for log-distances 239..255.
MIN_BUCKET_DISTANCE: Final = 239
MAX_BUCKET_DISTANCE: Final = 255
BUCKET_DISTANCES: Final = range(MIN_BUCKET_DISTANCE, MAX_BUCKET_DISTANCE + 1)

MINING_CAP_FACTOR: Final = 64

NodeId = NewType("NodeId", int)
SubnetKey = NewType("SubnetKey", int)


class _Equal:
    """Marker returned by :func:`log_distance` for identical IDs."""

    _instance = None

    def __new__(cls) -> "_Equal":
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "EQUAL"

    def __reduce__(self) -> str:
        return "EQUAL"


EQUAL: Final = _Equal()


class MiningError(Exception):
    pass


def id_to_hex(node_id: int) -> str:
    return format(node_id, "064x")


def id_from_hex(text: str) -> NodeId:
    text = text.lower()
    if text.startswith("0x"):
        text = text[2:]
    if len(text) != 2 * ID_BYTES:
        raise ValueError(f"node id must be 64 hex characters, got {len(text)}")
    try:
        value = int(text, 16)
    except ValueError:
        raise ValueError(f"node id is not hexadecimal: {text!r}") from None
    return NodeId(value)


def id_to_bytes(node_id: int) -> bytes:
    return node_id.to_bytes(ID_BYTES, "big")


def id_from_bytes(data: bytes) -> NodeId:
    if len(data) != ID_BYTES:
        raise ValueError(f"node id must be {ID_BYTES} bytes")
    return NodeId(int.from_bytes(data, "big"))


def id_from_pubkey(pubkey: bytes) -> NodeId:
    """Hash a 64-byte marshaled public key into a node ID.

    Uses SHA3-256 from the stdlib. Ethereum uses legacy Keccak-256, whose
    padding differs, so the output does not match live node IDs; the
    distribution (uniform) is what matters for everything in this package.
    """
    if len(pubkey) != 64:
        raise ValueError("expected a 64-byte uncompressed public key without prefix")
    return NodeId(int.from_bytes(hashlib.sha3_256(pubkey).digest(), "big"))


def log_distance(a: int, b: int) -> Union[int, _Equal]:
    """Return floor(log2(a ^ b)), i.e. 255 minus the common prefix length.

    Identical IDs have no log-distance and yield :data:`EQUAL`.
    """
    x = a ^ b
    if x == 0:
        return EQUAL
    return x.bit_length() - 1


def xor_less(a: int, b: int, target: int) -> bool:
    return (a ^ target) < (b ^ target)


def subnet_of(ip: str) -> SubnetKey:
    return SubnetKey(int(ipaddress.IPv4Address(ip)) >> 8)


def subnet_to_str(key: int) -> str:
    return str(ipaddress.IPv4Address(key << 8)) + "/24"


@dataclass(frozen=True)
class NodeRecord:
    id: int
    ip: str
    udp_port: int = 30303
    tcp_port: int = 30303
    subnet: SubnetKey = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if not 0 <= self.id <= ID_MAX:
            raise ValueError("node id out of range")
        for port in (self.udp_port, self.tcp_port):
            if not 0 <= port <= 0xFFFF:
                raise ValueError(f"port out of range: {port}")
        object.__setattr__(self, "subnet", subnet_of(self.ip))

    def to_json(self) -> Dict[str, object]:
        return {
            "id": id_to_hex(self.id),
            "ip": self.ip,
            "udp_port": self.udp_port,
            "tcp_port": self.tcp_port,
        }

    @classmethod
    def from_json(cls, obj: Dict[str, object]) -> "NodeRecord":
        return cls(
            id_from_hex(str(obj["id"])),
            str(obj["ip"]),
            int(obj["udp_port"]),  # type: ignore[arg-type]
            int(obj["tcp_port"]),  # type: ignore[arg-type]
        )


class Sha256Random(random.Random):
    """Deterministic SHA-256 counter-mode generator.

    Slower than the Mersenne Twister but cryptographic quality; meant for
    mining, where the ID stream should be indistinguishable from real
    hashed keys.
    """

    def __init__(self, seed: Union[int, str, bytes] = 0) -> None:
        self._key = b""
        self._counter = 0
        super().__init__(seed)

    def seed(self, a=None, version: int = 2) -> None:  # type: ignore[override]
        if isinstance(a, int):
            a = a.to_bytes((a.bit_length() + 8) // 8, "big", signed=True)
        elif isinstance(a, str):
            a = a.encode()
        elif a is None:
            a = b""
        self._key = hashlib.sha256(b"falsefriends/sha256random" + a).digest()
        self._counter = 0

    def getstate(self):  # type: ignore[override]
        return (self._key, self._counter)

    def setstate(self, state) -> None:  # type: ignore[override]
        self._key, self._counter = state

    def _block(self) -> int:
        digest = hashlib.sha256(self._key + self._counter.to_bytes(8, "big")).digest()
        self._counter += 1
        return int.from_bytes(digest, "big")

    def getrandbits(self, k: int) -> int:
        if k < 0:
            raise ValueError("number of bits must be non-negative")
        value = 0
        have = 0
        while have < k:
            value = (value << 256) | self._block()
            have += 256
        return value >> (have - k)

    def random(self) -> float:
        return self.getrandbits(53) * (1.0 / (1 << 53))


def generate_id(rng: random.Random) -> NodeId:
    return NodeId(rng.getrandbits(ID_BITS))


@dataclass(frozen=True)
class MiningReport:
    id: int
    attempts: int

    def to_json(self) -> str:
        return json.dumps({"id": id_to_hex(self.id), "attempts": self.attempts})

    @classmethod
    def from_json(cls, text: str) -> "MiningReport":
        obj = json.loads(text)
        return cls(id_from_hex(obj["id"]), int(obj["attempts"]))


def mining_cap(d: int) -> int:
    return (1 << (ID_BITS - d)) * MINING_CAP_FACTOR


def mine_id_for_distance(local: int, d: int, rng: random.Random) -> MiningReport:
    """Draw IDs until one lands at log-distance ``d`` from ``local``.

    Counts every draw, including the successful one. Gives up with
    :class:`MiningError` after 64 times the expected number of draws.
    """
    if not MIN_BUCKET_DISTANCE <= d <= MAX_BUCKET_DISTANCE:
        raise ValueError(f"distance must be in 239..255, got {d}")
    cap = mining_cap(d)
    getrandbits = rng.getrandbits
    # log_distance(local, x) == d  <=>  (local ^ x) >> d == 1
    for attempts in range(1, cap + 1):
        candidate = getrandbits(ID_BITS)
        if (candidate ^ local) >> d == 1:
            return MiningReport(candidate, attempts)
    raise MiningError(f"no id at distance {d} after {cap} attempts")


def mine_bucket_set(local: int, rng: random.Random) -> Dict[int, MiningReport]:
    """Mine one ID for every bucket distance 239..255, each independently."""
    return {d: mine_id_for_distance(local, d, rng) for d in BUCKET_DISTANCES}


def merge_mined(*partials: Dict[int, MiningReport]) -> Dict[int, MiningReport]:
    """Merge per-worker mining results, first found per distance wins."""
    merged: Dict[int, MiningReport] = {}
    for part in partials:
        for d, report in part.items():
            merged.setdefault(d, report)
    return merged
