"""Key-tree private identification followed by HB+ authentication.

The reader keeps a tree of branching factor ``beta`` and depth ``d`` whose
node keys are derived from a master secret.  A tag stores the keys on its
root-to-leaf path plus a pair of authentication keys.  One protocol run:

1. the tag draws a challenge ``B`` (r x k_y) and sends, for every level i,
   ``z_i = B_tr . y_i + noise`` where ``B_tr`` is the top ``r_tr`` rows of B;
2. the reader walks down the tree, at each level picking the child whose
   predicted response is Hamming-closest to ``z_i``;
3. the reader sends ``A`` (r x k_x), the tag answers ``A.x_t + B.y_t + noise``
   and the reader checks it against the keys of the leaf it reached.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .gf2 import (
    BitMatrix,
    BitVector,
    DimensionError,
    mat_vec_mul,
    pack_bits,
    popcount_rows,
    row_parities,
    sample_noise,
    sample_uniform,
)
from .hb import (
    HbPlusKeys,
    ProtocolParams,
    draw_auth_noise,
    hbplus_reader_expected,
    hbplus_tag_respond,
    verify_threshold,
)
from .stream import SeededStream

_NODE_TAG = b"hbtree.node.v1\x00"
_AUTH_TAG = b"hbtree.auth.v1\x00"


class CapacityError(ValueError):
    """The tree cannot hold the requested number of tags."""


# ---------------------------------------------------------------- secrets


@dataclass(frozen=True)
class MasterSecret:
    ms: bytes

    def __post_init__(self):
        if len(self.ms) != 32:
            raise ValueError("master secret must be 32 bytes")

    @classmethod
    def generate(cls, stream: SeededStream) -> MasterSecret:
        return cls(stream.bytes(32))

    def __repr__(self) -> str:
        return "MasterSecret(<hidden>)"


def encode_path(path: Sequence[int]) -> bytes:
    """Canonical node name: ``"1:c1/2:c2/..."`` with 1-based levels."""
    return "/".join(f"{lvl}:{c}" for lvl, c in enumerate(path, start=1)).encode()


def _keyed_bits(tag: bytes, master: MasterSecret, name: bytes, nbits: int) -> bytes:
    h = hashlib.shake_256()
    h.update(tag)
    h.update(master.ms)
    h.update(len(name).to_bytes(4, "little"))
    h.update(name)
    return h.digest((nbits + 7) // 8)


def derive_node_key(master: MasterSecret, node_path: Sequence[int], k_y: int) -> BitVector:
    """k_y-bit key of the node reached by following ``node_path`` from the root."""
    if not node_path:
        raise ValueError("the root has no key; path must have at least one level")
    if any(c < 0 for c in node_path):
        raise ValueError(f"invalid node path {tuple(node_path)}")
    return BitVector.from_bytes(_keyed_bits(_NODE_TAG, master, encode_path(node_path), k_y), k_y)


def derive_auth_keys(master: MasterSecret, leaf: int, k_x: int, k_y: int) -> HbPlusKeys:
    raw = _keyed_bits(_AUTH_TAG, master, str(leaf).encode(), k_x + k_y)
    value = int.from_bytes(raw, "little")
    x = BitVector.from_int(value & ((1 << k_x) - 1), k_x)
    y = BitVector.from_int((value >> k_x) & ((1 << k_y) - 1), k_y)
    return HbPlusKeys(x, y)


def leaf_to_path(leaf: int, beta: int, d: int) -> tuple[int, ...]:
    digits = []
    for _ in range(d):
        leaf, c = divmod(leaf, beta)
        digits.append(c)
    return tuple(reversed(digits))


def path_to_leaf(path: Sequence[int], beta: int) -> int:
    leaf = 0
    for c in path:
        leaf = leaf * beta + c
    return leaf


# ---------------------------------------------------------------- directory


@dataclass(frozen=True)
class TagCredential:
    tag_id: object
    path_keys: tuple[BitVector, ...]
    x_t: BitVector
    y_t: BitVector
    true_leaf: int | None = None

    @property
    def auth_keys(self) -> HbPlusKeys:
        return HbPlusKeys(self.x_t, self.y_t)

    def storage_bits(self) -> int:
        return sum(len(k) for k in self.path_keys) + len(self.x_t) + len(self.y_t)

    def to_json(self) -> dict:
        return {
            "tag_id": self.tag_id,
            "path_keys": [k.to_json() for k in self.path_keys],
            "x_t": self.x_t.to_json(),
            "y_t": self.y_t.to_json(),
        }


class TreeDirectory:
    """Reader-side state: master secret, leaf assignment, cached keys."""

    def __init__(self, params: ProtocolParams, master: MasterSecret):
        self.params = params
        self.master = master
        self.assignment: dict[object, int] = {}
        # sparse Fisher-Yates over [0, capacity): positions that were swapped
        self._swap: dict[int, int] = {}
        self._remaining = params.capacity
        self._node_keys: dict[tuple[int, ...], BitVector] = {}
        self._children: dict[tuple[int, ...], np.ndarray] = {}
        self._auth: dict[int, HbPlusKeys] = {}

    @property
    def capacity(self) -> int:
        return self.params.capacity

    def __len__(self) -> int:
        return len(self.assignment)

    def _check_path(self, path: Sequence[int]) -> None:
        p = self.params
        if not 1 <= len(path) <= p.d or any(not 0 <= c < p.beta for c in path):
            raise ValueError(f"path {tuple(path)} is outside a depth-{p.d}, beta-{p.beta} tree")

    def node_key(self, path: Sequence[int]) -> BitVector:
        path = tuple(path)
        key = self._node_keys.get(path)
        if key is None:
            self._check_path(path)
            key = derive_node_key(self.master, path, self.params.k_y)
            self._node_keys[path] = key
        return key

    def children_words(self, prefix: Sequence[int]) -> np.ndarray:
        """Packed keys of all children of ``prefix``: shape (beta, n_words(k_y))."""
        prefix = tuple(prefix)
        block = self._children.get(prefix)
        if block is None:
            if len(prefix) >= self.params.d:
                raise ValueError("leaves have no children")
            block = np.stack(
                [derive_node_key(self.master, prefix + (c,), self.params.k_y).words
                 for c in range(self.params.beta)]
            )
            block.flags.writeable = False
            self._children[prefix] = block
        return block

    def auth_keys(self, leaf: int) -> HbPlusKeys:
        keys = self._auth.get(leaf)
        if keys is None:
            if not 0 <= leaf < self.capacity:
                raise ValueError(f"leaf {leaf} out of range")
            keys = derive_auth_keys(self.master, leaf, self.params.k_x, self.params.k_y)
            self._auth[leaf] = keys
        return keys

    def credential_for_leaf(self, leaf: int, tag_id: object = None) -> TagCredential:
        p = self.params
        path = leaf_to_path(leaf, p.beta, p.d)
        keys = self.auth_keys(leaf)
        path_keys = tuple(self.node_key(path[: i + 1]) for i in range(p.d))
        return TagCredential(tag_id, path_keys, keys.x, keys.y, leaf)

    def _take_free_leaf(self, stream: SeededStream) -> int:
        j = stream.randbelow(self._remaining)
        last = self._remaining - 1
        leaf = self._swap.get(j, j)
        self._swap[j] = self._swap.pop(last, last)
        if j == last:
            self._swap.pop(j, None)
        self._remaining = last
        return leaf

    def assign_leaf(self, tag_id: object, stream: SeededStream) -> int:
        """Give ``tag_id`` a uniformly random free leaf without building its credential."""
        if tag_id in self.assignment:
            raise ValueError(f"tag {tag_id!r} is already registered")
        if self._remaining == 0:
            raise CapacityError(f"tree is full ({self.capacity} leaves)")
        leaf = self._take_free_leaf(stream)
        self.assignment[tag_id] = leaf
        return leaf

    def register(self, tag_id: object, stream: SeededStream) -> TagCredential:
        return self.credential_for_leaf(self.assign_leaf(tag_id, stream), tag_id)

    def to_json(self) -> dict:
        return {
            "params": self.params.to_dict(),
            "master": self.master.ms.hex(),
            "assignment": [[t, leaf] for t, leaf in self.assignment.items()],
            "free": {"remaining": self._remaining,
                     "swap": sorted([k, v] for k, v in self._swap.items())},
        }

    @classmethod
    def from_json(cls, obj: dict) -> TreeDirectory:
        d = cls(ProtocolParams.from_dict(obj["params"]), MasterSecret(bytes.fromhex(obj["master"])))
        d.assignment = {t: int(leaf) for t, leaf in obj["assignment"]}
        d._remaining = int(obj["free"]["remaining"])
        d._swap = {int(k): int(v) for k, v in obj["free"]["swap"]}
        return d


def setup_system(n_bound: int, params: ProtocolParams, stream: SeededStream) -> TreeDirectory:
    if n_bound < 0:
        raise ValueError("population bound must be non-negative")
    if params.capacity < n_bound:
        raise CapacityError(
            f"beta^d = {params.beta}^{params.d} = {params.capacity} < {n_bound} tags"
        )
    return TreeDirectory(params, MasterSecret.generate(stream))


def register_tag(directory: TreeDirectory, tag_id: object, stream: SeededStream) -> TagCredential:
    return directory.register(tag_id, stream)


def random_credential(params: ProtocolParams, stream: SeededStream) -> TagCredential:
    """An impostor: fresh uniform keys unrelated to any directory."""
    path_keys = tuple(sample_uniform(stream, params.k_y) for _ in range(params.d))
    x = sample_uniform(stream, params.k_x)
    y = sample_uniform(stream, params.k_y)
    return TagCredential("impostor", path_keys, x, y, None)


# ---------------------------------------------------------------- protocol


@dataclass(frozen=True)
class TraversalMessage:
    b_m: BitMatrix
    z_levels: tuple[BitVector, ...]


@dataclass
class OpCounts:
    reader_matvec: int = 0
    tag_matvec: int = 0
    bits_sent: int = 0  # tag -> reader
    bits_received: int = 0  # reader -> tag

    @property
    def total_bits(self) -> int:
        return self.bits_sent + self.bits_received

    def __add__(self, other: OpCounts) -> OpCounts:
        return OpCounts(
            self.reader_matvec + other.reader_matvec,
            self.tag_matvec + other.tag_matvec,
            self.bits_sent + other.bits_sent,
            self.bits_received + other.bits_received,
        )

    def as_dict(self) -> dict:
        return {
            "reader_matvec": self.reader_matvec,
            "tag_matvec": self.tag_matvec,
            "bits_sent": self.bits_sent,
            "bits_received": self.bits_received,
        }


def single_run_ops(params: ProtocolParams) -> OpCounts:
    """Counts for one run: d traversal products on each side, plus A.x and B.y."""
    p = params
    return OpCounts(
        reader_matvec=p.d * p.beta + 2,
        tag_matvec=p.d + 2,
        bits_sent=p.r * p.k_y + p.d * p.r_tr + p.r,
        bits_received=p.r * p.k_x,
    )


@dataclass
class Transcript:
    b_m: BitMatrix
    z_levels: tuple[BitVector, ...]
    path: tuple[int, ...]
    level_distances: tuple[int, ...]
    a_m: BitMatrix
    z: BitVector
    identified_leaf: int
    distance: int
    accepted: bool

    def to_json(self) -> dict:
        return {
            "B": self.b_m.to_json(),
            "z_levels": [z.to_json() for z in self.z_levels],
            "path": list(self.path),
            "level_distances": list(self.level_distances),
            "A": self.a_m.to_json(),
            "z": self.z.to_json(),
            "identified_leaf": self.identified_leaf,
            "distance": self.distance,
            "verdict": "accept" if self.accepted else "reject",
        }


@dataclass
class ProtocolOutcome:
    identified_leaf: int
    accepted: bool
    distance: int
    repeats_used: int
    op_counts: OpCounts
    path: tuple[int, ...] = ()
    transcripts: list[Transcript] = field(default_factory=list)


def tag_traversal_respond(
    cred: TagCredential, params: ProtocolParams, stream: SeededStream
) -> TraversalMessage:
    if len(cred.path_keys) != params.d:
        raise DimensionError(f"credential has {len(cred.path_keys)} path keys, expected {params.d}")
    b_m = sample_uniform(stream, (params.r, params.k_y))
    b_tr = b_m.top_rows(params.r_tr)
    z_levels = tuple(
        mat_vec_mul(b_tr, y) ^ sample_noise(stream, params.r_tr, params.eps)
        for y in cred.path_keys
    )
    return TraversalMessage(b_m, z_levels)


def descend_path(directory: TreeDirectory, msg: TraversalMessage) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """Chosen child index and winning distance at every level."""
    p = directory.params
    if msg.b_m.shape != (p.r, p.k_y):
        raise DimensionError(f"B is {msg.b_m.shape}, expected {(p.r, p.k_y)}")
    if len(msg.z_levels) != p.d or any(len(z) != p.r_tr for z in msg.z_levels):
        raise DimensionError("traversal responses do not match (d, r_tr)")
    rows = msg.b_m.words[: p.r_tr]
    path: list[int] = []
    dists: list[int] = []
    for z in msg.z_levels:
        keys = directory.children_words(path)
        # predicted responses of all children: (beta, r_tr) bits
        pred = row_parities(rows[None, :, :], keys)
        dist = popcount_rows(pack_bits(pred) ^ z.words)
        best = int(np.argmin(dist))  # first minimum -> lowest child index
        path.append(best)
        dists.append(int(dist[best]))
    return tuple(path), tuple(dists)


def reader_descend(directory: TreeDirectory, msg: TraversalMessage) -> int:
    path, _ = descend_path(directory, msg)
    return path_to_leaf(path, directory.params.beta)


def run_protocol_once(
    directory: TreeDirectory,
    cred: TagCredential,
    params: ProtocolParams,
    stream: SeededStream,
    *,
    forced_leaf: int | None = None,
    record: bool = False,
) -> ProtocolOutcome:
    """One traversal + authentication.

    The tag's draws (B, traversal noise, authentication noise) come from
    ``stream.derive("tag")`` and the reader's challenge A from
    ``stream.derive("reader")``.  ``forced_leaf`` skips the descent and
    authenticates against the given leaf.
    """
    tag_s = stream.derive("tag")
    reader_s = stream.derive("reader")
    msg = tag_traversal_respond(cred, params, tag_s)
    if forced_leaf is None:
        path, level_dists = descend_path(directory, msg)
        leaf = path_to_leaf(path, params.beta)
    else:
        path, level_dists = leaf_to_path(forced_leaf, params.beta, params.d), ()
        leaf = forced_leaf
    a_m = sample_uniform(reader_s, (params.r, params.k_x))
    z = hbplus_tag_respond(a_m, msg.b_m, cred.auth_keys, draw_auth_noise(tag_s, params))
    verdict = verify_threshold(z, hbplus_reader_expected(a_m, msg.b_m, directory.auth_keys(leaf)), params.tau)
    out = ProtocolOutcome(leaf, verdict.accepted, verdict.distance, 1, single_run_ops(params), path)
    if record:
        out.transcripts.append(
            Transcript(msg.b_m, msg.z_levels, path, level_dists, a_m, z, leaf,
                       verdict.distance, verdict.accepted)
        )
    return out


def attempt_stream(stream: SeededStream, attempt: int) -> SeededStream:
    return stream if attempt == 0 else stream.derive("attempt", attempt)


def run_protocol_iterated(
    directory: TreeDirectory,
    cred: TagCredential,
    params: ProtocolParams,
    stream: SeededStream,
    *,
    forced_leaf: int | None = None,
    record: bool = False,
) -> ProtocolOutcome:
    """Repeat the protocol until it accepts or ``params.s`` runs are used."""
    ops = OpCounts()
    transcripts: list[Transcript] = []
    for attempt in range(params.s):
        out = run_protocol_once(
            directory, cred, params, attempt_stream(stream, attempt),
            forced_leaf=forced_leaf, record=record,
        )
        ops = ops + out.op_counts
        transcripts.extend(out.transcripts)
        if out.accepted:
            break
    out.repeats_used = attempt + 1
    out.op_counts = ops
    out.transcripts = transcripts
    return out
