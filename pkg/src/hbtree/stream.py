"""Deterministic, domain-separated random streams.

Every random draw in the package comes from a :class:`SeededStream`.  A stream
is identified by a 256-bit seed; child streams are derived by hashing the
parent seed with a label and an index, so the bits a component sees do not
depend on the order in which other components run.
"""
from __future__ import annotations

import hashlib
import threading

import numpy as np

_DERIVE_TAG = b"hbtree.stream.v1\x00"
_MASK128 = (1 << 128) - 1
_local = threading.local()


def _engine() -> np.random.PCG64:
    # one PCG64 per thread; streams load their own state into it on each draw
    g = getattr(_local, "pcg", None)
    if g is None:
        g = _local.pcg = np.random.PCG64(0)
    return g


def _normalize_seed(seed: bytes | int | str) -> bytes:
    if isinstance(seed, bytes):
        if len(seed) != 32:
            raise ValueError(f"seed must be 32 bytes, got {len(seed)}")
        return seed
    if isinstance(seed, str):
        text = seed[2:] if seed.lower().startswith("0x") else seed
        try:
            value = int(text, 16)
        except ValueError:
            raise ValueError(f"seed is not a hex string: {seed!r}") from None
        return _normalize_seed(value)
    if isinstance(seed, (int, np.integer)):
        value = int(seed)
        if not 0 <= value < 1 << 256:
            raise ValueError("integer seed must lie in [0, 2**256)")
        return value.to_bytes(32, "little")
    raise TypeError(f"unsupported seed type {type(seed).__name__}")


class SeededStream:
    """A single-owner stream of uniform 64-bit words.

    ``counter`` is the number of words drawn so far.  Two streams with the same
    seed produce the same words in the same order.
    """

    __slots__ = ("seed", "counter", "_state", "_inc")

    def __init__(self, seed: bytes | int | str):
        self.seed = _normalize_seed(seed)
        self.counter = 0
        # PCG64 state and (odd) increment taken straight from the seed halves
        self._state = int.from_bytes(self.seed[:16], "little")
        self._inc = int.from_bytes(self.seed[16:], "little") | 1

    def __repr__(self) -> str:
        return f"SeededStream({self.seed.hex()[:16]}..., counter={self.counter})"

    @property
    def hex(self) -> str:
        return self.seed.hex()

    def derive(self, label: str, index: int = 0) -> SeededStream:
        """Child stream for ``(label, index)``; does not consume parent draws."""
        lab = label.encode()
        if len(lab) > 0xFFFF:
            raise ValueError("label too long")
        if index < 0:
            raise ValueError("index must be non-negative")
        h = hashlib.sha256()
        h.update(_DERIVE_TAG)
        h.update(self.seed)
        h.update(len(lab).to_bytes(2, "little"))
        h.update(lab)
        h.update(index.to_bytes(16, "little"))
        return SeededStream(h.digest())

    def words(self, n: int) -> np.ndarray:
        if n < 0:
            raise ValueError("n must be non-negative")
        g = _engine()
        g.state = {
            "bit_generator": "PCG64",
            "state": {"state": self._state, "inc": self._inc},
            "has_uint32": 0,
            "uinteger": 0,
        }
        out = g.random_raw(n).astype(np.uint64, copy=False)
        self._state = g.state["state"]["state"] & _MASK128
        self.counter += n
        return out

    def bytes(self, n: int) -> bytes:
        w = self.words((n + 7) // 8)
        return w.astype("<u8", copy=False).tobytes()[:n]

    def random(self) -> float:
        """Uniform float in [0, 1) with 53 bits of resolution."""
        return int(self.words(1)[0] >> np.uint64(11)) * (1.0 / (1 << 53))

    def randbelow(self, n: int) -> int:
        """Uniform integer in [0, n), unbiased (rejection on 64-bit words)."""
        if n <= 0:
            raise ValueError("n must be positive")
        if n == 1:
            return 0
        if n > 1 << 64:
            raise ValueError("n must be at most 2**64")
        limit = (1 << 64) - ((1 << 64) % n)
        while True:
            w = int(self.words(1)[0])
            if w < limit:
                return w % n
