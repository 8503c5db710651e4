"""Experiment configuration (one JSON object per experiment)."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path

from ..hb import ProtocolParams
from ..stream import SeededStream

BASELINES = ("tree_hb", "exhaustive_hb", "tree_prf")
TRAVERSAL_MODES = ("free", "forced")
ADVERSARIES = ("random_guess", "key_knowing")


class ConfigError(ValueError):
    """Invalid or unreadable experiment configuration."""


@dataclass(frozen=True)
class SimConfig:
    params: ProtocolParams
    n_tags: int
    trials: int
    impostor_fraction: float = 0.0
    q_sessions: int = 1
    root_seed: str = "00"
    baseline: str = "tree_hb"
    workers: int = 1
    traversal: str = "free"
    adversary: str | None = None
    config_id: str = "sim"

    def __post_init__(self):
        if self.trials < 1:
            raise ConfigError("trials must be at least 1")
        if self.n_tags < 1:
            raise ConfigError("n_tags must be at least 1")
        if not 0.0 <= self.impostor_fraction <= 1.0:
            raise ConfigError("impostor_fraction must lie in [0, 1]")
        if self.q_sessions < 0:
            raise ConfigError("q_sessions must be non-negative")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        if self.baseline not in BASELINES:
            raise ConfigError(f"baseline must be one of {', '.join(BASELINES)}")
        if self.traversal not in TRAVERSAL_MODES:
            raise ConfigError(f"traversal must be one of {', '.join(TRAVERSAL_MODES)}")
        if self.adversary is not None and self.adversary not in ADVERSARIES:
            raise ConfigError(f"adversary must be one of {', '.join(ADVERSARIES)}")
        if self.baseline != "exhaustive_hb" and self.n_tags > self.params.capacity:
            raise ConfigError(
                f"n_tags={self.n_tags} exceeds tree capacity {self.params.capacity}"
            )
        try:
            SeededStream(self.root_seed)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad root_seed: {exc}") from None

    @property
    def root(self) -> SeededStream:
        return SeededStream(self.root_seed)

    def replace(self, **changes) -> SimConfig:
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["params"] = self.params.to_dict()
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> SimConfig:
        if not isinstance(obj, dict):
            raise ConfigError("config must be a JSON object")
        known = {f.name for f in dataclasses.fields(cls)}
        extra = set(obj) - known
        if extra:
            raise ConfigError(f"unknown config key(s): {', '.join(sorted(extra))}")
        body = dict(obj)
        try:
            body["params"] = ProtocolParams.from_dict(body["params"])
            return cls(**body)
        except ConfigError:
            raise
        except KeyError as exc:
            raise ConfigError(f"missing config key {exc}") from None
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def from_file(cls, path: str | Path) -> SimConfig:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
        return cls.from_dict(obj)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)
