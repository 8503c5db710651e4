"""Bit-packed linear algebra over GF(2).

Vectors and matrix rows are stored as little-endian 64-bit words: bit ``i``
of a vector lives in word ``i // 64`` at position ``i % 64``.  Padding bits
past the logical length are always zero, so equality and Hamming weight can
be computed on the packed words directly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .stream import SeededStream

WORD_BITS = 64
_U64 = np.dtype("<u8")
_ALL_ONES = np.uint64(0xFFFFFFFFFFFFFFFF)


class DimensionError(ValueError):
    """Operand shapes violate an operation's contract."""


def n_words(nbits: int) -> int:
    return (nbits + WORD_BITS - 1) // WORD_BITS


def tail_mask(nbits: int) -> np.uint64:
    rem = nbits % WORD_BITS
    return _ALL_ONES if rem == 0 else np.uint64((1 << rem) - 1)


def pack_bits(bits: np.ndarray) -> np.ndarray:
    """Pack a 0/1 array along its last axis into little-endian uint64 words."""
    bits = np.asarray(bits, dtype=np.uint8)
    nbits = bits.shape[-1]
    w = n_words(nbits)
    pad = w * WORD_BITS - nbits
    if pad:
        widths = [(0, 0)] * (bits.ndim - 1) + [(0, pad)]
        bits = np.pad(bits, widths)
    packed = np.packbits(bits, axis=-1, bitorder="little")
    return np.ascontiguousarray(packed).view(_U64).reshape(bits.shape[:-1] + (w,))


def unpack_words(words: np.ndarray, nbits: int) -> np.ndarray:
    """Inverse of :func:`pack_bits`: words (..., W) -> 0/1 uint8 array (..., nbits)."""
    words = np.ascontiguousarray(words, dtype=_U64)
    as_bytes = words.view(np.uint8).reshape(words.shape[:-1] + (words.shape[-1] * 8,))
    return np.unpackbits(as_bytes, axis=-1, bitorder="little")[..., :nbits]


def row_parities(rows: np.ndarray, vec: np.ndarray) -> np.ndarray:
    """parity(row AND vec) for every row; broadcasts over leading axes.

    ``rows`` has shape (..., m, W) and ``vec`` (..., W).  Returns uint8 (..., m).
    """
    counts = np.bitwise_count(rows & vec[..., None, :]).sum(axis=-1, dtype=np.int32)
    return (counts & 1).astype(np.uint8)


def popcount_rows(words: np.ndarray) -> np.ndarray:
    return np.bitwise_count(words).sum(axis=-1, dtype=np.int64)


# ---------------------------------------------------------------- vectors


class BitVector:
    """Immutable packed GF(2) vector."""

    __slots__ = ("_words", "_n")

    def __init__(self, words: np.ndarray, n: int):
        words = np.array(words, dtype=_U64, copy=True).reshape(-1)
        if n < 0:
            raise ValueError("length must be non-negative")
        if words.shape[0] != n_words(n):
            raise DimensionError(f"{words.shape[0]} words cannot hold exactly {n} bits")
        if n and words[-1] & ~tail_mask(n):
            raise ValueError("padding bits must be zero")
        words.flags.writeable = False
        self._words = words
        self._n = n

    @classmethod
    def _wrap(cls, words: np.ndarray, n: int) -> BitVector:
        # trusted constructor: caller guarantees canonical form
        obj = cls.__new__(cls)
        words = np.ascontiguousarray(words, dtype=_U64)
        words.flags.writeable = False
        obj._words = words
        obj._n = n
        return obj

    @classmethod
    def zeros(cls, n: int) -> BitVector:
        return cls._wrap(np.zeros(n_words(n), dtype=_U64), n)

    @classmethod
    def ones(cls, n: int) -> BitVector:
        w = np.full(n_words(n), _ALL_ONES, dtype=_U64)
        if n:
            w[-1] &= tail_mask(n)
        return cls._wrap(w, n)

    @classmethod
    def from_bits(cls, bits: Iterable[int]) -> BitVector:
        arr = np.fromiter((1 if b else 0 for b in bits), dtype=np.uint8)
        return cls._wrap(pack_bits(arr), arr.shape[0])

    @classmethod
    def from_int(cls, value: int, n: int) -> BitVector:
        if value < 0 or value >> n:
            raise ValueError(f"value does not fit in {n} bits")
        raw = value.to_bytes(n_words(n) * 8, "little")
        return cls._wrap(np.frombuffer(raw, dtype=_U64).copy(), n)

    @classmethod
    def from_bytes(cls, data: bytes, n: int) -> BitVector:
        """First ``n`` bits of ``data`` (little-endian bit order)."""
        if len(data) * 8 < n:
            raise ValueError("not enough bytes")
        value = int.from_bytes(data, "little") & ((1 << n) - 1)
        return cls.from_int(value, n)

    @classmethod
    def from_hex(cls, text: str, n: int) -> BitVector:
        raw = bytes.fromhex(text)
        if len(raw) != n_words(n) * 8:
            raise ValueError("hex payload length does not match bit length")
        return cls(np.frombuffer(raw, dtype=_U64), n)

    @property
    def words(self) -> np.ndarray:
        return self._words

    def __len__(self) -> int:
        return self._n

    def __getitem__(self, i: int) -> int:
        if not -self._n <= i < self._n:
            raise IndexError(i)
        i %= self._n
        return int(self._words[i >> 6] >> np.uint64(i & 63)) & 1

    def __iter__(self):
        return iter(self.to_bits().tolist())

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, BitVector):
            return NotImplemented
        return self._n == other._n and bool(np.array_equal(self._words, other._words))

    def __hash__(self) -> int:
        return hash((self._n, self._words.tobytes()))

    def _check(self, other: BitVector) -> None:
        if self._n != other._n:
            raise DimensionError(f"length mismatch: {self._n} vs {other._n}")

    def __xor__(self, other: BitVector) -> BitVector:
        self._check(other)
        return BitVector._wrap(self._words ^ other._words, self._n)

    def __and__(self, other: BitVector) -> BitVector:
        self._check(other)
        return BitVector._wrap(self._words & other._words, self._n)

    def __or__(self, other: BitVector) -> BitVector:
        self._check(other)
        return BitVector._wrap(self._words | other._words, self._n)

    def weight(self) -> int:
        return int(np.bitwise_count(self._words).sum())

    def to_bits(self) -> np.ndarray:
        return unpack_words(self._words, self._n)

    def to_int(self) -> int:
        return int.from_bytes(self._words.tobytes(), "little")

    def to_hex(self) -> str:
        return self._words.tobytes().hex()

    def to_json(self) -> dict:
        return {"len": self._n, "hex": self.to_hex()}

    @classmethod
    def from_json(cls, obj: dict) -> BitVector:
        return cls.from_hex(obj["hex"], int(obj["len"]))

    def __repr__(self) -> str:
        if self._n <= 64:
            return f"BitVector('{''.join(map(str, self.to_bits().tolist()))}')"
        return f"BitVector(len={self._n}, weight={self.weight()})"


# ---------------------------------------------------------------- matrices


class BitMatrix:
    """Immutable packed GF(2) matrix; row ``i`` is a canonical packed vector."""

    __slots__ = ("_words", "_rows", "_cols")

    def __init__(self, words: np.ndarray, rows: int, cols: int):
        words = np.array(words, dtype=_U64, copy=True).reshape(rows, n_words(cols))
        if rows and cols and np.any(words[:, -1] & ~tail_mask(cols)):
            raise ValueError("padding bits must be zero")
        words.flags.writeable = False
        self._words = words
        self._rows = rows
        self._cols = cols

    @classmethod
    def _wrap(cls, words: np.ndarray, rows: int, cols: int) -> BitMatrix:
        obj = cls.__new__(cls)
        words = np.ascontiguousarray(words, dtype=_U64).reshape(rows, n_words(cols))
        words.flags.writeable = False
        obj._words = words
        obj._rows = rows
        obj._cols = cols
        return obj

    @classmethod
    def zeros(cls, rows: int, cols: int) -> BitMatrix:
        return cls._wrap(np.zeros((rows, n_words(cols)), dtype=_U64), rows, cols)

    @classmethod
    def identity(cls, n: int) -> BitMatrix:
        return cls.from_bits(np.eye(n, dtype=np.uint8))

    @classmethod
    def from_bits(cls, bits: np.ndarray | Sequence[Sequence[int]]) -> BitMatrix:
        arr = np.asarray(bits, dtype=np.uint8)
        if arr.ndim != 2:
            raise DimensionError("expected a 2-D bit array")
        if np.any(arr > 1):
            raise ValueError("entries must be 0 or 1")
        rows, cols = arr.shape
        return cls._wrap(pack_bits(arr), rows, cols)

    @classmethod
    def from_rows(cls, rows: Sequence[BitVector]) -> BitMatrix:
        if not rows:
            raise DimensionError("need at least one row (use zeros() for empty)")
        cols = len(rows[0])
        for v in rows:
            if len(v) != cols:
                raise DimensionError("rows differ in length")
        return cls._wrap(np.stack([v.words for v in rows]), len(rows), cols)

    @property
    def words(self) -> np.ndarray:
        return self._words

    @property
    def rows(self) -> int:
        return self._rows

    @property
    def cols(self) -> int:
        return self._cols

    @property
    def shape(self) -> tuple[int, int]:
        return self._rows, self._cols

    def row(self, i: int) -> BitVector:
        return BitVector._wrap(self._words[i], self._cols)

    def top_rows(self, k: int) -> BitMatrix:
        if not 0 <= k <= self._rows:
            raise DimensionError(f"cannot take {k} of {self._rows} rows")
        return BitMatrix._wrap(self._words[:k], k, self._cols)

    def to_bits(self) -> np.ndarray:
        return unpack_words(self._words, self._cols)

    def transpose(self) -> BitMatrix:
        return BitMatrix.from_bits(self.to_bits().T)

    def __getitem__(self, ij: tuple[int, int]) -> int:
        i, j = ij
        if not (0 <= i < self._rows and 0 <= j < self._cols):
            raise IndexError(ij)
        return int(self._words[i, j >> 6] >> np.uint64(j & 63)) & 1

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, BitMatrix):
            return NotImplemented
        return self.shape == other.shape and bool(np.array_equal(self._words, other._words))

    def __hash__(self) -> int:
        return hash((self._rows, self._cols, self._words.tobytes()))

    def to_hex(self) -> str:
        return self._words.tobytes().hex()

    def to_json(self) -> dict:
        return {"rows": self._rows, "cols": self._cols, "hex": self.to_hex()}

    @classmethod
    def from_json(cls, obj: dict) -> BitMatrix:
        rows, cols = int(obj["rows"]), int(obj["cols"])
        raw = bytes.fromhex(obj["hex"])
        if len(raw) != rows * n_words(cols) * 8:
            raise ValueError("hex payload length does not match matrix shape")
        return cls(np.frombuffer(raw, dtype=_U64), rows, cols)

    def __repr__(self) -> str:
        return f"BitMatrix({self._rows}x{self._cols})"


@dataclass(frozen=True)
class ToeplitzMatrix:
    """rows x cols Toeplitz matrix; entry (i, j) = diag_seed[i - j + cols - 1]."""

    rows: int
    cols: int
    diag_seed: BitVector

    def __post_init__(self):
        if self.rows < 0 or self.cols < 0:
            raise ValueError("dimensions must be non-negative")
        want = self.rows + self.cols - 1 if self.rows and self.cols else 0
        if len(self.diag_seed) != want:
            raise DimensionError(f"diag_seed must have {want} bits, got {len(self.diag_seed)}")

    def expand(self) -> BitMatrix:
        if not self.rows or not self.cols:
            return BitMatrix.zeros(self.rows, self.cols)
        seed = self.diag_seed.to_bits()
        i = np.arange(self.rows)[:, None]
        j = np.arange(self.cols)[None, :]
        return BitMatrix.from_bits(seed[i - j + self.cols - 1])

    @classmethod
    def from_dense(cls, m: BitMatrix) -> ToeplitzMatrix:
        """Compress a dense matrix; raises ValueError if it is not Toeplitz."""
        if not m.rows or not m.cols:
            return cls(m.rows, m.cols, BitVector.zeros(0))
        bits = m.to_bits()
        # first row read right-to-left gives seed[0..cols-1], first column the rest
        seed = np.concatenate([bits[0, ::-1], bits[1:, 0]])
        t = cls(m.rows, m.cols, BitVector.from_bits(seed))
        if t.expand() != m:
            raise ValueError("matrix is not Toeplitz")
        return t

    def to_json(self) -> dict:
        return {"rows": self.rows, "cols": self.cols, "diag_seed": self.diag_seed.to_json()}


# ---------------------------------------------------------------- operations


def mat_vec_mul(m: BitMatrix, v: BitVector) -> BitVector:
    """m . v over GF(2): bit i of the result is parity(row_i AND v)."""
    if m.cols != len(v):
        raise DimensionError(f"matrix has {m.cols} columns, vector has {len(v)} bits")
    if m.rows == 0:
        return BitVector.zeros(0)
    return BitVector._wrap(pack_bits(row_parities(m.words, v.words)), m.rows)


def vec_mat_mul(v: BitVector, m: ToeplitzMatrix) -> BitVector:
    """v . M for a Toeplitz M, without expanding M.

    Column j of M restricted to rows 0..rows-1 is the window
    diag_seed[cols-1-j : cols-1-j+rows], so each output bit is one
    AND + popcount on Python integers.
    """
    if len(v) != m.rows:
        raise DimensionError(f"vector has {len(v)} bits, matrix has {m.rows} rows")
    if not m.rows or not m.cols:
        return BitVector.zeros(m.cols)
    seed = m.diag_seed.to_int()
    x = v.to_int()
    out = 0
    last = m.cols - 1
    for j in range(m.cols):
        if ((seed >> (last - j)) & x).bit_count() & 1:
            out |= 1 << j
    return BitVector.from_int(out, m.cols)


def hamming_weight(v: BitVector) -> int:
    return v.weight()


def hamming_distance(u: BitVector, v: BitVector) -> int:
    if len(u) != len(v):
        raise DimensionError(f"length mismatch: {len(u)} vs {len(v)}")
    return int(np.bitwise_count(u.words ^ v.words).sum())


# ---------------------------------------------------------------- sampling


def uniform_words(stream: SeededStream, rows: int, nbits: int) -> np.ndarray:
    """(rows, n_words(nbits)) uniform words with canonical padding."""
    w = n_words(nbits)
    words = stream.words(rows * w).reshape(rows, w)
    if nbits and nbits % WORD_BITS:
        words[:, -1] &= tail_mask(nbits)
    return words


def noise_exponent(eps: float) -> int:
    """k such that eps == 2**-k (0 for eps == 0); ValueError otherwise."""
    if not 0 <= eps < 0.5:
        raise ValueError(f"noise rate must lie in [0, 0.5), got {eps}")
    if eps == 0:
        return 0
    mant, exp = math.frexp(eps)
    if mant != 0.5:
        raise ValueError(f"noise rate must be a power of two (1/4, 1/8, ...), got {eps}")
    return 1 - exp


def noise_words(stream: SeededStream, nbits: int, eps: float) -> np.ndarray:
    """Bernoulli(eps) bits as packed words: AND of k uniform draws for eps = 2**-k."""
    k = noise_exponent(eps)
    w = n_words(nbits)
    if k == 0:
        return np.zeros(w, dtype=_U64)
    acc = stream.words(w)
    for _ in range(k - 1):
        acc &= stream.words(w)
    if nbits and nbits % WORD_BITS:
        acc[-1] &= tail_mask(nbits)
    return acc


def sample_uniform(stream: SeededStream, dims: int | tuple[int, int]) -> BitVector | BitMatrix:
    """Uniform vector (``dims`` an int) or matrix (``dims`` a (rows, cols) pair)."""
    if isinstance(dims, (int, np.integer)):
        n = int(dims)
        if n < 0:
            raise ValueError("length must be non-negative")
        return BitVector._wrap(uniform_words(stream, 1, n)[0], n)
    rows, cols = dims
    if rows < 0 or cols < 0:
        raise ValueError("dimensions must be non-negative")
    return BitMatrix._wrap(uniform_words(stream, rows, cols), rows, cols)


def sample_noise(stream: SeededStream, r: int, eps: float) -> BitVector:
    return BitVector._wrap(noise_words(stream, r, eps), r)


def sample_toeplitz(stream: SeededStream, rows: int, cols: int) -> ToeplitzMatrix:
    n = rows + cols - 1 if rows and cols else 0
    return ToeplitzMatrix(rows, cols, sample_uniform(stream, n))
