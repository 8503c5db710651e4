"""Parallel HB, HB+ and HB# responses and threshold verification."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import NamedTuple

from .gf2 import (
    BitMatrix,
    BitVector,
    DimensionError,
    ToeplitzMatrix,
    hamming_distance,
    mat_vec_mul,
    noise_exponent,
    sample_noise,
    sample_uniform,
    vec_mat_mul,
)
from .stream import SeededStream


@dataclass(frozen=True)
class ProtocolParams:
    """Every knob of one protocol configuration.

    ``eps == 0`` is accepted as a noise-free test mode.  ``d == 0`` is a
    degenerate tree with a single leaf, i.e. plain HB+.
    """

    eps: float
    k_x: int
    k_y: int
    r: int
    r_tr: int
    tau: int
    d: int = 1
    beta: int = 2
    s: int = 1
    noise_checked: bool = False

    def __post_init__(self):
        noise_exponent(self.eps)  # dyadic and in [0, 0.5)
        for name in ("k_x", "k_y", "r"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if not 0 <= self.tau <= self.r:
            raise ValueError(f"tau must lie in [0, r], got {self.tau}")
        if not 1 <= self.r_tr <= self.r:
            raise ValueError(f"r_tr must lie in [1, r], got {self.r_tr}")
        if self.beta < 2:
            raise ValueError("beta must be at least 2")
        if self.d < 0:
            raise ValueError("d must be non-negative")
        if self.s < 1:
            raise ValueError("s must be at least 1")

    @property
    def capacity(self) -> int:
        return self.beta ** self.d

    def replace(self, **changes) -> ProtocolParams:
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, obj: dict) -> ProtocolParams:
        known = {f.name for f in dataclasses.fields(cls)}
        extra = set(obj) - known
        if extra:
            raise ValueError(f"unknown protocol parameter(s): {', '.join(sorted(extra))}")
        return cls(**obj)


@dataclass(frozen=True)
class HbPlusKeys:
    x: BitVector
    y: BitVector

    @classmethod
    def random(cls, stream: SeededStream, k_x: int, k_y: int) -> HbPlusKeys:
        return cls(sample_uniform(stream, k_x), sample_uniform(stream, k_y))


@dataclass(frozen=True)
class HbSharpKeys:
    x_m: ToeplitzMatrix
    y_m: ToeplitzMatrix

    def __post_init__(self):
        if self.x_m.cols != self.y_m.cols:
            raise DimensionError("both secrets must produce the same response length")


class Verdict(NamedTuple):
    accepted: bool
    distance: int


def _need(cond: bool, msg: str) -> None:
    if not cond:
        raise DimensionError(msg)


def hb_tag_respond(a_m: BitMatrix, x: BitVector, noise: BitVector) -> BitVector:
    _need(len(noise) == a_m.rows, "noise length must equal challenge rows")
    return mat_vec_mul(a_m, x) ^ noise


def hbplus_reader_expected(a_m: BitMatrix, b_m: BitMatrix, keys: HbPlusKeys) -> BitVector:
    _need(a_m.rows == b_m.rows, "challenge matrices must have the same number of rows")
    return mat_vec_mul(a_m, keys.x) ^ mat_vec_mul(b_m, keys.y)


def hbplus_tag_respond(
    a_m: BitMatrix, b_m: BitMatrix, keys: HbPlusKeys, noise: BitVector
) -> BitVector:
    _need(len(noise) == a_m.rows, "noise length must equal challenge rows")
    return hbplus_reader_expected(a_m, b_m, keys) ^ noise


def hbsharp_reader_expected(a_v: BitVector, b_v: BitVector, keys: HbSharpKeys) -> BitVector:
    return vec_mat_mul(a_v, keys.x_m) ^ vec_mat_mul(b_v, keys.y_m)


def hbsharp_tag_respond(
    a_v: BitVector, b_v: BitVector, keys: HbSharpKeys, noise: BitVector
) -> BitVector:
    _need(len(noise) == keys.x_m.cols, "noise length must equal the response length")
    return hbsharp_reader_expected(a_v, b_v, keys) ^ noise


def verify_threshold(z: BitVector, z_exp: BitVector, tau: int) -> Verdict:
    dist = hamming_distance(z, z_exp)
    return Verdict(dist <= tau, dist)


MAX_NOISE_RETRIES = 1 << 20


def sample_noise_checked(stream: SeededStream, r: int, eps: float, tau: int) -> BitVector:
    """Bernoulli(eps) noise conditioned on weight <= tau (rejection sampling)."""
    if tau >= r:
        return sample_noise(stream, r, eps)
    if tau <= 0 or eps == 0:
        # weight 0 is the only admissible outcome
        return BitVector.zeros(r)
    for _ in range(MAX_NOISE_RETRIES):
        nu = sample_noise(stream, r, eps)
        if nu.weight() <= tau:
            return nu
    raise RuntimeError(f"noise with weight <= {tau} not found after {MAX_NOISE_RETRIES} draws")


def draw_auth_noise(stream: SeededStream, params: ProtocolParams) -> BitVector:
    """Noise for the authentication response, honouring ``noise_checked``."""
    if params.noise_checked:
        return sample_noise_checked(stream, params.r, params.eps, params.tau)
    return sample_noise(stream, params.r, params.eps)
