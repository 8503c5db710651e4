"""Wilson intervals, aggregate statistics and report emission."""
from __future__ import annotations

import io
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

Z95 = 1.959963984540054
CSV_HEADER = "config_id,metric,estimate,ci_lo,ci_hi,trials"


def wilson_interval(successes: int, n: int, z: float = Z95) -> tuple[float, float]:
    if n <= 0:
        return 0.0, 1.0
    if not 0 <= successes <= n:
        raise ValueError("need 0 <= successes <= n")
    p = successes / n
    z2 = z * z
    denom = 1.0 + z2 / n
    centre = (p + z2 / (2 * n)) / denom
    half = z * math.sqrt(p * (1 - p) / n + z2 / (4 * n * n)) / denom
    # clamp so the interval always contains the point estimate
    return max(0.0, min(centre - half, p)), min(1.0, max(centre + half, p))


@dataclass(frozen=True)
class Metric:
    name: str
    estimate: float
    ci_lo: float
    ci_hi: float
    trials: int

    @classmethod
    def rate(cls, name: str, successes: int, n: int) -> Metric:
        lo, hi = wilson_interval(successes, n)
        return cls(name, successes / n if n else 0.0, lo, hi, n)

    @classmethod
    def advantage(cls, name: str, correct: int, n: int) -> Metric:
        """2 p - 1 for a guessing game, with the Wilson interval mapped through."""
        lo, hi = wilson_interval(correct, n)
        est = 2 * (correct / n) - 1 if n else 0.0
        return cls(name, est, 2 * lo - 1, 2 * hi - 1, n)

    @classmethod
    def value(cls, name: str, value: float, n: int) -> Metric:
        return cls(name, float(value), float(value), float(value), n)

    def covers(self, x: float) -> bool:
        return self.ci_lo <= x <= self.ci_hi

    def to_json(self) -> dict:
        return {"metric": self.name, "estimate": self.estimate, "ci_lo": self.ci_lo,
                "ci_hi": self.ci_hi, "trials": self.trials}


@dataclass
class AggregateStats:
    config_id: str
    metrics: list[Metric] = field(default_factory=list)
    totals: dict[str, int] = field(default_factory=dict)
    wall_mean_ns: float | None = None
    wall_stdev_ns: float | None = None

    def __getitem__(self, name: str) -> Metric:
        for m in self.metrics:
            if m.name == name:
                return m
        raise KeyError(name)

    def names(self) -> list[str]:
        return [m.name for m in self.metrics]

    def to_json(self) -> dict:
        out = {
            "config_id": self.config_id,
            "metrics": [m.to_json() for m in self.metrics],
            "totals": dict(sorted(self.totals.items())),
        }
        if self.wall_mean_ns is not None:
            out["wall_mean_ns"] = self.wall_mean_ns
            out["wall_stdev_ns"] = self.wall_stdev_ns
        return out

    @classmethod
    def from_json(cls, obj: dict) -> AggregateStats:
        metrics = [
            Metric(m["metric"], float(m["estimate"]), float(m["ci_lo"]), float(m["ci_hi"]),
                   int(m["trials"]))
            for m in obj["metrics"]
        ]
        return cls(obj["config_id"], metrics, {k: int(v) for k, v in obj["totals"].items()},
                   obj.get("wall_mean_ns"), obj.get("wall_stdev_ns"))


def _csv_field(text: str) -> str:
    if any(ch in text for ch in ',"\n'):
        return '"' + text.replace('"', '""') + '"'
    return text


def render_csv(stats: Iterable[AggregateStats]) -> str:
    lines = [CSV_HEADER]
    for st in stats:
        cid = _csv_field(st.config_id)
        for m in st.metrics:
            lines.append(f"{cid},{_csv_field(m.name)},{m.estimate!r},{m.ci_lo!r},{m.ci_hi!r},{m.trials}")
        for name, total in sorted(st.totals.items()):
            lines.append(f"{cid},{_csv_field('total_' + name)},{total},{total},{total},0")
    return "\n".join(lines) + "\n"


def render_json(stats: Iterable[AggregateStats]) -> str:
    body = [st.to_json() for st in stats]
    return json.dumps(body, indent=2, sort_keys=True) + "\n"


def emit_report(
    stats: AggregateStats | Iterable[AggregateStats],
    fmt: str = "csv",
    dest: str | Path | None = None,
) -> str:
    """Write a report to ``dest`` (stdout when None) and return the text."""
    items = [stats] if isinstance(stats, AggregateStats) else list(stats)
    if fmt == "csv":
        text = render_csv(items)
    elif fmt == "json":
        text = render_json(items)
    else:
        raise ValueError(f"unknown report format {fmt!r}")
    if dest is None or str(dest) == "-":
        sys.stdout.write(text)
    else:
        with io.open(dest, "w", newline="\n") as fh:
            fh.write(text)
    return text


def load_json_report(text: str) -> list[AggregateStats]:
    return [AggregateStats.from_json(o) for o in json.loads(text)]
