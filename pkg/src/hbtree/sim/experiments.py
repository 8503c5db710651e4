"""Monte Carlo experiments built on the trial engines.

Trials are split into fixed-size chunks (independent of the worker count);
each chunk returns integer counts and the counts are summed, so a report
depends only on the configuration and root seed.
"""
from __future__ import annotations

import json
import math
import multiprocessing as mp
import statistics
import time
from typing import Callable

import numpy as np

from .. import analysis
from ..gf2 import n_words, noise_exponent, row_parities, tail_mask, unpack_words
from ..hb import ProtocolParams
from ..stream import SeededStream
from ..tree import setup_system
from .config import SimConfig
from .engine import (
    ExhaustiveContext,
    PrfTreeContext,
    TreeContext,
    batch_counts,
    exhaustive_counts,
    run_exhaustive_batch,
    run_prf_trial,
    run_tree_batch,
)
from .stats import AggregateStats, Metric

CHUNK = {"tree_hb": 256, "exhaustive_hb": 32, "tree_prf": 512, "privacy": 256}

_CONTEXTS: dict[tuple[str, str], object] = {}
_CONTEXT_TYPES = {"tree_hb": TreeContext, "exhaustive_hb": ExhaustiveContext, "tree_prf": PrfTreeContext}


def _context(kind: str, cfg: SimConfig):
    key = (kind, cfg.to_json())
    ctx = _CONTEXTS.get(key)
    if ctx is None:
        _CONTEXTS.clear()
        ctx = _CONTEXT_TYPES[kind](cfg)
        _CONTEXTS[key] = ctx
    return ctx


def _add(into: dict[str, int], more: dict[str, int]) -> None:
    for k, v in more.items():
        into[k] = into.get(k, 0) + int(v)


def _run_chunk(job: tuple[str, str, int, int]) -> tuple[dict[str, int], int]:
    kind, cfg_json, start, stop = job
    cfg = SimConfig.from_dict(json.loads(cfg_json))
    ctx = _context("tree_hb" if kind == "privacy" else kind, cfg)
    t0 = time.perf_counter_ns()
    if kind == "privacy":
        from .privacy import play_games

        counts = play_games(ctx, range(start, stop))
    elif kind == "tree_hb":
        counts = batch_counts(run_tree_batch(ctx, range(start, stop)), cfg.params)
    elif kind == "exhaustive_hb":
        counts = exhaustive_counts(run_exhaustive_batch(ctx, range(start, stop)), cfg.params, cfg.n_tags)
    else:
        counts = {}
        for i in range(start, stop):
            _add(counts, run_prf_trial(ctx, i))
    return counts, time.perf_counter_ns() - t0


def run_chunks(kind: str, cfg: SimConfig) -> tuple[dict[str, int], list[int]]:
    """Summed counts over all trials plus per-chunk wall times."""
    size = CHUNK[kind]
    jobs = [(kind, cfg.to_json(), s, min(cfg.trials, s + size)) for s in range(0, cfg.trials, size)]
    totals: dict[str, int] = {}
    walls: list[int] = []
    if cfg.workers == 1 or len(jobs) == 1:
        results = map(_run_chunk, jobs)
        for counts, wall in results:
            _add(totals, counts)
            walls.append(wall)
    else:
        with mp.get_context("fork").Pool(cfg.workers) as pool:
            for counts, wall in pool.imap_unordered(_run_chunk, jobs):
                _add(totals, counts)
                walls.append(wall)
    return totals, walls


def _rates(counts: dict[str, int]) -> list[Metric]:
    out = []
    if counts.get("legit_trials"):
        out.append(Metric.rate("frr", counts["legit_rejects"], counts["legit_trials"]))
    if counts.get("impostor_trials"):
        out.append(Metric.rate("far", counts["impostor_accepts"], counts["impostor_trials"]))
    return out


def _timing(stats: AggregateStats, walls: list[int], trials: int, chunk: int) -> None:
    per_trial = [w / chunk for w in walls]
    stats.wall_mean_ns = sum(walls) / trials
    stats.wall_stdev_ns = statistics.pstdev(per_trial) if len(per_trial) > 1 else 0.0


def expected_tree_rates(params: ProtocolParams) -> dict[str, float]:
    """Closed-form predictions for a tree configuration (noise > 0)."""
    p = params
    fa = analysis.frr_auth(p.r, p.tau, p.eps)
    p_fb = analysis.false_branch(p.r_tr, p.eps, p.beta) if p.d else 0.0
    p_rd = analysis.false_branch_reader(p.r_tr, p.eps, p.beta) if p.d else 0.0
    union = analysis.combined_frr(p.d, p_fb, fa)
    # reader model: every level must stay on the path, then authentication must pass
    reader = 1.0 - (1.0 - p_rd) ** p.d * (1.0 - fa)
    return {
        "expected_frr": union ** p.s,
        "expected_frr_reader": reader ** p.s,
        "expected_false_branch": p_fb,
        "expected_false_branch_reader": p_rd,
        "expected_far": min(1.0, p.s * analysis.far_auth(p.r, p.tau)),
    }


def simulate_tree_protocol(cfg: SimConfig, *, timing: bool = False) -> AggregateStats:
    counts, walls = run_chunks("tree_hb", cfg)
    stats = AggregateStats(cfg.config_id)
    stats.metrics.extend(_rates(counts))
    if counts.get("levels_on_path"):
        stats.metrics.append(
            Metric.rate("per_level_false_branch", counts["branch_events"], counts["levels_on_path"])
        )
    if counts.get("legit_trials"):
        n = counts["legit_trials"]
        stats.metrics.append(Metric.rate("wrong_leaf", counts["legit_wrong_leaf"], n))
        stats.metrics.append(Metric.value("mean_repeats", counts["legit_repeats"] / n, n))
    if cfg.params.eps > 0:
        for name, val in expected_tree_rates(cfg.params).items():
            stats.metrics.append(Metric.value(name, val, 0))
    stats.totals = {k: counts.get(k, 0) for k in
                    ("runs", "reader_matvec", "tag_matvec", "bits_sent", "bits_received")}
    if timing:
        _timing(stats, walls, cfg.trials, CHUNK["tree_hb"])
    return stats


def simulate_exhaustive_search(cfg: SimConfig, *, timing: bool = False) -> AggregateStats:
    counts, walls = run_chunks("exhaustive_hb", cfg)
    stats = AggregateStats(cfg.config_id)
    stats.metrics.extend(_rates(counts))
    p = cfg.params
    n = cfg.n_tags
    if p.eps > 0:
        delta = analysis.far_auth(p.r, p.tau)
        # an impostor gets through if any of the N verifications passes
        sys_far = -math.expm1(n * math.log1p(-delta)) if delta < 1 else 1.0
        stats.metrics.append(Metric.value("expected_far", 1.0 - (1.0 - sys_far) ** p.s, 0))
    stats.metrics.append(Metric.value("verifications_per_run", counts["verifications"] / counts["runs"], counts["runs"]))
    stats.totals = {k: counts.get(k, 0) for k in
                    ("runs", "verifications", "reader_matvec", "tag_matvec", "bits_sent", "bits_received")}
    if timing:
        _timing(stats, walls, cfg.trials, CHUNK["exhaustive_hb"])
    return stats


def simulate_tree_prf_baseline(cfg: SimConfig, *, timing: bool = False) -> AggregateStats:
    counts, walls = run_chunks("tree_prf", cfg)
    stats = AggregateStats(cfg.config_id)
    stats.metrics.extend(_rates(counts))
    stats.totals = {k: counts.get(k, 0) for k in
                    ("runs", "reader_prf_evals", "tag_prf_evals", "bits_sent", "bits_received")}
    if timing:
        _timing(stats, walls, cfg.trials, CHUNK["tree_prf"])
    return stats


SIMULATORS: dict[str, Callable[..., AggregateStats]] = {
    "tree_hb": simulate_tree_protocol,
    "exhaustive_hb": simulate_exhaustive_search,
    "tree_prf": simulate_tree_prf_baseline,
}


def run_config(cfg: SimConfig, *, timing: bool = False) -> AggregateStats:
    """Dispatch a configuration to its experiment."""
    if cfg.adversary is not None:
        from .privacy import privacy_experiment

        return privacy_experiment(cfg, cfg.adversary)
    return SIMULATORS[cfg.baseline](cfg, timing=timing)


# ---------------------------------------------------------------- isolated descent steps


def simulate_descent_levels(
    r_tr: int,
    eps: float,
    beta: int,
    levels: int,
    seed: str | int | bytes = 0,
    *,
    k_y: int = 64,
    block: int = 1 << 14,
) -> AggregateStats:
    """Wrong-branch rate of single nearest-child steps.

    Each step uses a fresh challenge, fresh noise and a true child drawn
    uniformly among the ``beta`` children of a fixed node; the reader picks
    the nearest predicted response with lowest-index tie-breaking.  Block
    ``b`` draws from ``root.derive("block", b)``.
    """
    params = ProtocolParams(eps=eps, k_x=1, k_y=k_y, r=r_tr, r_tr=r_tr, tau=0, d=1, beta=beta)
    root = SeededStream(seed)
    directory = setup_system(beta, params, root.derive("master"))
    keys = directory.children_words(())
    wy, wtr = n_words(k_y), n_words(r_tr)
    k = noise_exponent(eps)
    wrong = 0
    done = 0
    b_idx = 0
    while done < levels:
        m = min(block, levels - done)
        s = root.derive("block", b_idx)
        # uniform child: top 53 bits scaled to [0, beta); bias below beta / 2**53
        u = (s.words(m) >> np.uint64(11)).astype(np.float64) * (1.0 / (1 << 53))
        true_child = np.minimum((u * beta).astype(np.int64), beta - 1)
        b = s.words(m * r_tr * wy).reshape(m, r_tr, wy)
        b[..., -1] &= tail_mask(k_y)
        if k:
            nz = np.bitwise_and.reduce(s.words(m * k * wtr).reshape(m, k, wtr), axis=1)
            nz[:, -1] &= tail_mask(r_tr)
            noise = unpack_words(nz, r_tr)
        else:
            noise = np.zeros((m, r_tr), dtype=np.uint8)
        pred = row_parities(b[:, None], np.broadcast_to(keys, (m,) + keys.shape))  # (m, beta, r_tr)
        z = pred[np.arange(m), true_child] ^ noise
        dist = (pred != z[:, None, :]).sum(axis=2)
        wrong += int((np.argmin(dist, axis=1) != true_child).sum())
        done += m
        b_idx += 1

    stats = AggregateStats(f"descent_r{r_tr}_b{beta}")
    stats.metrics.append(Metric.rate("per_level_false_branch", wrong, levels))
    if eps > 0:
        stats.metrics.append(Metric.value("expected_false_branch", analysis.false_branch(r_tr, eps, beta), 0))
        stats.metrics.append(
            Metric.value("expected_false_branch_reader", analysis.false_branch_reader(r_tr, eps, beta), 0)
        )
    return stats
