"""Linkability game against an eavesdropper.

In each game a coin b is tossed and two distinct registered tags t0, t1 are
picked.  The adversary sees q pairs of session transcripts; the first
session of every pair comes from t0, the second from t1 when b = 1 and from
t0 again when b = 0.  It then guesses b.  Advantage is 2 Pr[correct] - 1.
"""
from __future__ import annotations

from typing import Callable, Protocol, Sequence

from ..gf2 import hamming_distance, mat_vec_mul
from ..hb import ProtocolParams
from ..stream import SeededStream
from ..tree import TagCredential, Transcript, run_protocol_once
from .config import SimConfig
from .stats import AggregateStats, Metric

SessionPair = tuple[Transcript, Transcript]


class Adversary(Protocol):
    def guess(self, sessions: Sequence[SessionPair], stream: SeededStream) -> int: ...


class RandomGuess:
    """Ignores the transcripts and flips a coin."""

    def guess(self, sessions: Sequence[SessionPair], stream: SeededStream) -> int:
        return stream.randbelow(2)


class KeyKnowing:
    """Knows both candidates' path keys and asks whose keys explain the second sessions."""

    def __init__(self, params: ProtocolParams, cand0: TagCredential, cand1: TagCredential):
        self.r_tr = params.r_tr
        self.keys = (cand0.path_keys, cand1.path_keys)

    def _misfit(self, tr: Transcript, keys) -> int:
        b_tr = tr.b_m.top_rows(self.r_tr)
        return sum(hamming_distance(z, mat_vec_mul(b_tr, y)) for z, y in zip(tr.z_levels, keys))

    def guess(self, sessions: Sequence[SessionPair], stream: SeededStream) -> int:
        votes = 0
        for _, second in sessions:
            d0 = self._misfit(second, self.keys[0])
            d1 = self._misfit(second, self.keys[1])
            votes += (d1 < d0) - (d0 < d1)
        if votes == 0:
            return stream.randbelow(2)
        return int(votes > 0)


AdversaryFactory = Callable[[ProtocolParams, TagCredential, TagCredential], Adversary]

ADVERSARY_FACTORIES: dict[str, AdversaryFactory] = {
    "random_guess": lambda params, c0, c1: RandomGuess(),
    "key_knowing": KeyKnowing,
}


def _resolve(adversary: str | AdversaryFactory) -> AdversaryFactory:
    if isinstance(adversary, str):
        try:
            return ADVERSARY_FACTORIES[adversary]
        except KeyError:
            raise ValueError(f"unknown adversary {adversary!r}") from None
    return adversary


def play_game(ctx, g: int, adversary: str | AdversaryFactory) -> tuple[int, int]:
    """(coin, guess) for game g."""
    cfg: SimConfig = ctx.cfg
    gs = ctx.root.derive("game", g)
    coin = gs.derive("coin").randbelow(2)
    pick = gs.derive("pick")
    n = cfg.n_tags
    j0 = pick.randbelow(n)
    j1 = pick.randbelow(n - 1)
    j1 += j1 >= j0
    c0 = ctx.directory.credential_for_leaf(int(ctx.leaves[j0]), j0)
    c1 = ctx.directory.credential_for_leaf(int(ctx.leaves[j1]), j1)
    second = c1 if coin else c0
    sessions = []
    for m in range(cfg.q_sessions):
        pair = []
        for pos, cred in enumerate((c0, second)):
            out = run_protocol_once(ctx.directory, cred, cfg.params, gs.derive("session", 2 * m + pos), record=True)
            pair.append(out.transcripts[0])
        sessions.append(tuple(pair))
    strategy = _resolve(adversary)(cfg.params, c0, c1)
    return coin, int(strategy.guess(sessions, gs.derive("adversary")))


def play_games(ctx, games, adversary: str | AdversaryFactory | None = None) -> dict[str, int]:
    adversary = adversary if adversary is not None else ctx.cfg.adversary
    correct = 0
    n = 0
    for g in games:
        coin, guess = play_game(ctx, g, adversary)
        correct += coin == guess
        n += 1
    return {"games": n, "correct": correct}


def privacy_experiment(cfg: SimConfig, adversary: str | AdversaryFactory) -> AggregateStats:
    """Estimate the adversary's advantage over ``cfg.trials`` games."""
    if cfg.n_tags < 2:
        raise ValueError("the linkability game needs at least two registered tags")
    stats = AggregateStats(cfg.config_id)
    if cfg.q_sessions == 0:
        # nothing observed: the guess is independent of the coin
        stats.metrics.append(Metric.value("advantage", 0.0, cfg.trials))
        return stats
    if isinstance(adversary, str):
        from .experiments import run_chunks

        _resolve(adversary)
        counts, _ = run_chunks("privacy", cfg.replace(adversary=adversary))
    else:
        from .engine import TreeContext

        counts = play_games(TreeContext(cfg), range(cfg.trials), adversary)
    stats.metrics.append(Metric.advantage("advantage", counts["correct"], counts["games"]))
    stats.metrics.append(Metric.rate("correct", counts["correct"], counts["games"]))
    return stats
