"""Trial execution: a scalar reference path and a vectorised batch path.

Both paths give trial ``i`` the stream ``root.derive("trial", i)`` and make
exactly the same draws from it, so a batch run reproduces the scalar run
trial by trial.  The batch path only changes how the arithmetic is done:
challenge generation stays per trial, while responses, descent and
verification are evaluated on whole arrays (descent through a float32
matrix product over unpacked bits, which is exact for these sizes).
"""
from __future__ import annotations

import hashlib
import time
from dataclasses import dataclass

import numpy as np

from ..gf2 import n_words, noise_exponent, row_parities, sample_uniform, tail_mask, unpack_words
from ..hb import (
    HbPlusKeys,
    ProtocolParams,
    draw_auth_noise,
    hbplus_reader_expected,
    hbplus_tag_respond,
    sample_noise_checked,
    verify_threshold,
)
from ..stream import SeededStream
from ..tree import (
    OpCounts,
    ProtocolOutcome,
    TagCredential,
    TreeDirectory,
    attempt_stream,
    derive_auth_keys,
    derive_node_key,
    leaf_to_path,
    random_credential,
    run_protocol_iterated,
    setup_system,
    single_run_ops,
)
from .config import SimConfig

# bound on elements of one float32 product block (keeps peak memory ~100 MB)
_BLOCK_ELEMS = 1 << 23


def is_impostor(i: int, fraction: float) -> bool:
    """Spread impostor trials evenly: exactly floor(n * fraction) of the first n."""
    return int((i + 1) * fraction) > int(i * fraction)


@dataclass
class TrialReport:
    outcome: ProtocolOutcome
    legitimate: bool
    wrong_branch_levels: int  # levels off the true path in the final attempt
    wall_nanos: int
    branch_events: int = 0  # attempts in which the descent left the true path
    levels_on_path: int = 0  # descent steps taken while still on the true path


# ---------------------------------------------------------------- contexts


class TreeContext:
    """Directory, registered leaves and key caches for one configuration."""

    def __init__(self, cfg: SimConfig):
        self.cfg = cfg
        self.params = cfg.params
        self.root = cfg.root
        self.directory = setup_system(cfg.n_tags, cfg.params, self.root.derive("master"))
        reg = self.root.derive("register")
        self.leaves = np.array(
            [self.directory.assign_leaf(j, reg) for j in range(cfg.n_tags)], dtype=np.int64
        )
        self._child_bits: dict[tuple[int, int], np.ndarray] = {}
        self._auth_words: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    def identity(self, i: int) -> tuple[bool, int, SeededStream, TagCredential]:
        """(legitimate, picked tag index, run stream, credential) for trial i."""
        ts = self.root.derive("trial", i)
        j = ts.derive("pick").randbelow(self.cfg.n_tags)
        if is_impostor(i, self.cfg.impostor_fraction):
            cred = random_credential(self.params, ts.derive("impostor"))
            return False, j, ts.derive("run"), cred
        leaf = int(self.leaves[j])
        return True, j, ts.derive("run"), self.directory.credential_for_leaf(leaf, j)

    def children_bits(self, level: int, code: int) -> np.ndarray:
        """Unpacked float32 keys (beta, k_y) of the children of node ``code`` at ``level``."""
        key = (level, code)
        blk = self._child_bits.get(key)
        if blk is None:
            if len(self._child_bits) > 4096:
                self._child_bits.clear()
            prefix = leaf_to_path(code, self.params.beta, level)
            words = self.directory.children_words(prefix)
            blk = unpack_words(words, self.params.k_y).astype(np.float32)
            self._child_bits[key] = blk
        return blk

    def auth_words(self, leaf: int) -> tuple[np.ndarray, np.ndarray]:
        got = self._auth_words.get(leaf)
        if got is None:
            k = self.directory.auth_keys(leaf)
            got = (k.x.words, k.y.words)
            self._auth_words[leaf] = got
        return got


# ---------------------------------------------------------------- scalar path


def _branch_stats(path: tuple[int, ...], true_path: tuple[int, ...]) -> tuple[int, int, int]:
    """(left the path?, steps taken on the path, levels off the path)."""
    d = len(true_path)
    for lvl, (got, want) in enumerate(zip(path, true_path)):
        if got != want:
            return 1, lvl + 1, d - lvl
    return 0, d, 0


def run_tree_trial(ctx: TreeContext, i: int) -> TrialReport:
    t0 = time.perf_counter_ns()
    legit, j, run_s, cred = ctx.identity(i)
    forced = int(ctx.leaves[j]) if ctx.cfg.traversal == "forced" else None
    out = run_protocol_iterated(ctx.directory, cred, ctx.params, run_s, forced_leaf=forced, record=True)
    events = on_path = off_final = 0
    if legit and forced is None and ctx.params.d:
        true_path = leaf_to_path(cred.true_leaf, ctx.params.beta, ctx.params.d)
        for tr in out.transcripts:
            e, steps, off_final = _branch_stats(tr.path, true_path)
            events += e
            on_path += steps
    out.transcripts = []
    return TrialReport(out, legit, off_final, time.perf_counter_ns() - t0, events, on_path)


# ---------------------------------------------------------------- batch path


@dataclass
class TrialBatch:
    index: np.ndarray
    legit: np.ndarray
    accepted: np.ndarray
    distance: np.ndarray
    repeats: np.ndarray
    leaf: np.ndarray
    wrong_branch_levels: np.ndarray
    branch_events: np.ndarray
    levels_on_path: np.ndarray


def _draw_attempt(params: ProtocolParams, streams: list[SeededStream], attempt: int, levels: int):
    """Per-trial draws for one attempt, in the same order as the scalar protocol.

    Tag stream: B, then ``levels`` traversal noise vectors, then the
    authentication noise.  Reader stream: A.
    """
    p = params
    n = len(streams)
    wx, wy, wtr, wr = n_words(p.k_x), n_words(p.k_y), n_words(p.r_tr), n_words(p.r)
    k = noise_exponent(p.eps)
    nb, nl = p.r * wy, levels * k * wtr
    na = 0 if p.noise_checked else k * wr
    b = np.empty((n, p.r, wy), dtype=np.uint64)
    a = np.empty((n, p.r, wx), dtype=np.uint64)
    lvl_noise = np.zeros((n, levels, wtr), dtype=np.uint64)
    auth_noise = np.zeros((n, wr), dtype=np.uint64)
    for t, s in enumerate(streams):
        rs = attempt_stream(s, attempt)
        tag_s = rs.derive("tag")
        w = tag_s.words(nb + nl + na)
        b[t] = w[:nb].reshape(p.r, wy)
        if k:
            if levels:
                lvl_noise[t] = np.bitwise_and.reduce(w[nb:nb + nl].reshape(levels, k, wtr), axis=1)
            if not p.noise_checked:
                auth_noise[t] = np.bitwise_and.reduce(w[nb + nl:].reshape(k, wr), axis=0)
        if p.noise_checked:
            auth_noise[t] = sample_noise_checked(tag_s, p.r, p.eps, p.tau).words
        a[t] = rs.derive("reader").words(p.r * wx).reshape(p.r, wx)
    b[..., -1] &= tail_mask(p.k_y)
    a[..., -1] &= tail_mask(p.k_x)
    lvl_noise[..., -1] &= tail_mask(p.r_tr)
    auth_noise[..., -1] &= tail_mask(p.r)
    return a, b, lvl_noise, auth_noise


def _nearest(bf: np.ndarray, keys: np.ndarray, z: np.ndarray) -> np.ndarray:
    """Index of the Hamming-nearest predicted response, lowest index on ties.

    bf: (G, m, k) float32 challenge bits; keys: (beta, k) float32 key bits;
    z: (G, m) uint8 received bits.
    """
    g, m, k = bf.shape
    beta = keys.shape[0]
    step = max(1, _BLOCK_ELEMS // (m * beta))
    out = np.empty(g, dtype=np.int64)
    kt = keys.T
    for s in range(0, g, step):
        e = min(g, s + step)
        pred = (bf[s:e].reshape(-1, k) @ kt).reshape(e - s, m, beta)
        bits = pred.astype(np.int32) & 1
        dist = (bits != z[s:e, :, None]).sum(axis=1)
        out[s:e] = np.argmin(dist, axis=1)
    return out


def _descend(ctx: TreeContext, b_tr: np.ndarray, z_levels: np.ndarray) -> np.ndarray:
    p = ctx.params
    n = b_tr.shape[0]
    bf = unpack_words(b_tr, p.k_y).astype(np.float32)
    code = np.zeros(n, dtype=np.int64)
    path = np.zeros((n, p.d), dtype=np.int64)
    for lvl in range(p.d):
        order = np.argsort(code, kind="stable")
        sorted_codes = code[order]
        cuts = np.flatnonzero(np.diff(sorted_codes)) + 1
        for grp in np.split(order, cuts):
            node = int(code[grp[0]])
            best = _nearest(bf[grp], ctx.children_bits(lvl, node), z_levels[grp, lvl])
            path[grp, lvl] = best
            code[grp] = node * p.beta + best
    return path


def _true_paths(leaves: np.ndarray, beta: int, d: int) -> np.ndarray:
    out = np.zeros((len(leaves), d), dtype=np.int64)
    rest = leaves.copy()
    for lvl in range(d - 1, -1, -1):
        out[:, lvl] = rest % beta
        rest //= beta
    return out


def run_tree_batch(ctx: TreeContext, indices) -> TrialBatch:
    p = ctx.params
    idx = np.asarray(list(indices), dtype=np.int64)
    n = len(idx)
    wx, wy = n_words(p.k_x), n_words(p.k_y)
    legit = np.zeros(n, dtype=bool)
    target = np.zeros(n, dtype=np.int64)
    true_leaf = np.full(n, -1, dtype=np.int64)
    path_keys = np.zeros((n, p.d, wy), dtype=np.uint64)
    x_t = np.zeros((n, wx), dtype=np.uint64)
    y_t = np.zeros((n, wy), dtype=np.uint64)
    streams = []
    for t, i in enumerate(idx):
        lg, j, run_s, cred = ctx.identity(int(i))
        legit[t] = lg
        target[t] = ctx.leaves[j]
        if lg:
            true_leaf[t] = cred.true_leaf
        for lvl, key in enumerate(cred.path_keys):
            path_keys[t, lvl] = key.words
        x_t[t] = cred.x_t.words
        y_t[t] = cred.y_t.words
        streams.append(run_s)

    forced = ctx.cfg.traversal == "forced"
    accepted = np.zeros(n, dtype=bool)
    distance = np.zeros(n, dtype=np.int64)
    repeats = np.zeros(n, dtype=np.int64)
    leaf = np.zeros(n, dtype=np.int64)
    off_final = np.zeros(n, dtype=np.int64)
    events = np.zeros(n, dtype=np.int64)
    on_path = np.zeros(n, dtype=np.int64)
    true_path = _true_paths(np.maximum(true_leaf, 0), p.beta, p.d)
    track = legit & (not forced)

    active = np.arange(n)
    for attempt in range(p.s):
        if active.size == 0:
            break
        a, b, lvl_noise, auth_noise = _draw_attempt(p, [streams[t] for t in active], attempt, p.d)
        if p.d:
            b_tr = b[:, : p.r_tr]
            z_lv = row_parities(b_tr[:, None], path_keys[active]) ^ unpack_words(lvl_noise, p.r_tr)
        if forced or p.d == 0:
            got_leaf = target[active]
            got_path = _true_paths(got_leaf, p.beta, p.d)
        else:
            got_path = _descend(ctx, b_tr, z_lv)
            got_leaf = np.zeros(len(active), dtype=np.int64)
            for lvl in range(p.d):
                got_leaf = got_leaf * p.beta + got_path[:, lvl]
        keys = [ctx.auth_words(int(lf)) for lf in got_leaf]
        x_id = np.stack([k[0] for k in keys])
        y_id = np.stack([k[1] for k in keys])
        z = row_parities(a, x_t[active]) ^ row_parities(b, y_t[active]) ^ unpack_words(auth_noise, p.r)
        expected = row_parities(a, x_id) ^ row_parities(b, y_id)
        dist = (z != expected).sum(axis=1)
        acc = dist <= p.tau

        accepted[active] = acc
        distance[active] = dist
        repeats[active] = attempt + 1
        leaf[active] = got_leaf
        tr = track[active]
        if tr.any() and p.d:
            mism = got_path != true_path[active]
            left = mism.any(axis=1)
            first = np.argmax(mism, axis=1)
            sel = active[tr]
            events[sel] += left[tr]
            on_path[sel] += np.where(left, first + 1, p.d)[tr]
            off_final[sel] = np.where(left, p.d - first, 0)[tr]
        active = active[~acc]

    return TrialBatch(idx, legit, accepted, distance, repeats, leaf, off_final, events, on_path)


def batch_counts(batch: TrialBatch, params: ProtocolParams) -> dict[str, int]:
    lg = batch.legit
    im = ~lg
    runs = int(batch.repeats.sum())
    ops = single_run_ops(params)
    true_ok = batch.wrong_branch_levels == 0
    return {
        "trials": int(len(lg)),
        "legit_trials": int(lg.sum()),
        "legit_rejects": int((lg & ~batch.accepted).sum()),
        "legit_wrong_leaf": int((lg & ~true_ok).sum()),
        "legit_repeats": int(batch.repeats[lg].sum()),
        "impostor_trials": int(im.sum()),
        "impostor_accepts": int((im & batch.accepted).sum()),
        "branch_events": int(batch.branch_events.sum()),
        "levels_on_path": int(batch.levels_on_path.sum()),
        "runs": runs,
        "reader_matvec": runs * ops.reader_matvec,
        "tag_matvec": runs * ops.tag_matvec,
        "bits_sent": runs * ops.bits_sent,
        "bits_received": runs * ops.bits_received,
    }


# ---------------------------------------------------------------- exhaustive search


class ExhaustiveContext:
    """N registered HB+ tags; the reader tries every key pair."""

    def __init__(self, cfg: SimConfig):
        self.cfg = cfg
        self.params = cfg.params
        self.root = cfg.root
        ms = setup_system(0, cfg.params, self.root.derive("master")).master
        self.keys = [derive_auth_keys(ms, j, cfg.params.k_x, cfg.params.k_y) for j in range(cfg.n_tags)]
        self._xf = None
        self._yf = None

    def float_keys(self) -> tuple[np.ndarray, np.ndarray]:
        if self._xf is None:
            p = self.params
            self._xf = unpack_words(np.stack([k.x.words for k in self.keys]), p.k_x).astype(np.float32)
            self._yf = unpack_words(np.stack([k.y.words for k in self.keys]), p.k_y).astype(np.float32)
        return self._xf, self._yf

    def identity(self, i: int) -> tuple[bool, int, SeededStream, HbPlusKeys]:
        ts = self.root.derive("trial", i)
        j = ts.derive("pick").randbelow(self.cfg.n_tags)
        if is_impostor(i, self.cfg.impostor_fraction):
            return False, j, ts.derive("run"), HbPlusKeys.random(ts.derive("impostor"), self.params.k_x, self.params.k_y)
        return True, j, ts.derive("run"), self.keys[j]


def exhaustive_ops(params: ProtocolParams, n_tags: int) -> OpCounts:
    p = params
    return OpCounts(
        reader_matvec=2 * n_tags,
        tag_matvec=2,
        bits_sent=p.r * p.k_y + p.r,
        bits_received=p.r * p.k_x,
    )


def run_exhaustive_trial(ctx: ExhaustiveContext, i: int) -> tuple[bool, bool, int]:
    """Scalar reference: (legitimate, accepted, repeats)."""
    p = ctx.params
    legit, _, run_s, keys = ctx.identity(i)
    for attempt in range(p.s):
        rs = attempt_stream(run_s, attempt)
        tag_s, reader_s = rs.derive("tag"), rs.derive("reader")
        b_m = sample_uniform(tag_s, (p.r, p.k_y))
        nu = draw_auth_noise(tag_s, p)
        a_m = sample_uniform(reader_s, (p.r, p.k_x))
        z = hbplus_tag_respond(a_m, b_m, keys, nu)
        ok = any(verify_threshold(z, hbplus_reader_expected(a_m, b_m, k), p.tau).accepted for k in ctx.keys)
        if ok:
            return legit, True, attempt + 1
    return legit, False, p.s


def run_exhaustive_batch(ctx: ExhaustiveContext, indices) -> dict[str, np.ndarray]:
    p = ctx.params
    idx = np.asarray(list(indices), dtype=np.int64)
    n = len(idx)
    legit = np.zeros(n, dtype=bool)
    x_t = np.zeros((n, n_words(p.k_x)), dtype=np.uint64)
    y_t = np.zeros((n, n_words(p.k_y)), dtype=np.uint64)
    streams = []
    for t, i in enumerate(idx):
        lg, _, run_s, keys = ctx.identity(int(i))
        legit[t] = lg
        x_t[t] = keys.x.words
        y_t[t] = keys.y.words
        streams.append(run_s)
    xf, yf = ctx.float_keys()
    n_keys = xf.shape[0]
    step = max(1, _BLOCK_ELEMS // (p.r * n_keys))

    accepted = np.zeros(n, dtype=bool)
    repeats = np.zeros(n, dtype=np.int64)
    active = np.arange(n)
    for attempt in range(p.s):
        if active.size == 0:
            break
        a, b, _, auth_noise = _draw_attempt(p, [streams[t] for t in active], attempt, 0)
        z = row_parities(a, x_t[active]) ^ row_parities(b, y_t[active]) ^ unpack_words(auth_noise, p.r)
        af = unpack_words(a, p.k_x).astype(np.float32)
        bf = unpack_words(b, p.k_y).astype(np.float32)
        acc = np.zeros(len(active), dtype=bool)
        for s in range(0, len(active), step):
            e = min(len(active), s + step)
            pred = af[s:e].reshape(-1, p.k_x) @ xf.T + bf[s:e].reshape(-1, p.k_y) @ yf.T
            bits = (pred.astype(np.int32) & 1).reshape(e - s, p.r, n_keys)
            dist = (bits != z[s:e, :, None]).sum(axis=1)
            acc[s:e] = (dist <= p.tau).any(axis=1)
        accepted[active] = acc
        repeats[active] = attempt + 1
        active = active[~acc]
    return {"index": idx, "legit": legit, "accepted": accepted, "repeats": repeats}


def exhaustive_counts(res: dict[str, np.ndarray], params: ProtocolParams, n_tags: int) -> dict[str, int]:
    lg, acc, rep = res["legit"], res["accepted"], res["repeats"]
    runs = int(rep.sum())
    ops = exhaustive_ops(params, n_tags)
    return {
        "trials": int(len(lg)),
        "legit_trials": int(lg.sum()),
        "legit_rejects": int((lg & ~acc).sum()),
        "legit_repeats": int(rep[lg].sum()),
        "impostor_trials": int((~lg).sum()),
        "impostor_accepts": int((~lg & acc).sum()),
        "runs": runs,
        "verifications": runs * n_tags,
        "reader_matvec": runs * ops.reader_matvec,
        "tag_matvec": runs * ops.tag_matvec,
        "bits_sent": runs * ops.bits_sent,
        "bits_received": runs * ops.bits_received,
    }


# ---------------------------------------------------------------- PRF key tree


PRF_OUT_BITS = 128
_PRF_TAG = b"hbtree.prf.v1\x00"


def prf(key: bytes, nonce: bytes) -> bytes:
    return hashlib.shake_256(_PRF_TAG + key + nonce).digest(PRF_OUT_BITS // 8)


class PrfTreeContext:
    """Same tree shape, but each level is an exact PRF match on a 128-bit key."""

    def __init__(self, cfg: SimConfig):
        self.cfg = cfg
        self.params = cfg.params
        self.root = cfg.root
        self.directory = setup_system(cfg.n_tags, cfg.params, self.root.derive("master"))
        reg = self.root.derive("register")
        self.leaves = [self.directory.assign_leaf(j, reg) for j in range(cfg.n_tags)]
        self._keys: dict[tuple[int, ...], bytes] = {}

    def key(self, path: tuple[int, ...]) -> bytes:
        k = self._keys.get(path)
        if k is None:
            k = derive_node_key(self.directory.master, path, PRF_OUT_BITS).words.tobytes()
            self._keys[path] = k
        return k


def run_prf_trial(ctx: PrfTreeContext, i: int) -> dict[str, int]:
    p = ctx.params
    ts = ctx.root.derive("trial", i)
    j = ts.derive("pick").randbelow(ctx.cfg.n_tags)
    legit = not is_impostor(i, ctx.cfg.impostor_fraction)
    if legit:
        true_path = leaf_to_path(ctx.leaves[j], p.beta, p.d)
        tag_keys = [ctx.key(true_path[: lvl + 1]) for lvl in range(p.d)]
    else:
        imp = ts.derive("impostor")
        tag_keys = [imp.bytes(PRF_OUT_BITS // 8) for _ in range(p.d)]
    nonce = ts.derive("run").derive("tag").bytes(16)
    msgs = [prf(k, nonce) for k in tag_keys]

    evals = 0
    prefix: tuple[int, ...] = ()
    ok = True
    for m in msgs:
        hit = None
        for c in range(p.beta):
            evals += 1
            if prf(ctx.key(prefix + (c,)), nonce) == m and hit is None:
                hit = c
        if hit is None:
            ok = False
            break
        prefix += (hit,)
    return {
        "trials": 1,
        "legit_trials": int(legit),
        "legit_rejects": int(legit and not ok),
        "impostor_trials": int(not legit),
        "impostor_accepts": int(ok and not legit),
        "runs": 1,
        "reader_prf_evals": evals,
        "tag_prf_evals": p.d,
        "bits_sent": 8 * len(nonce) + p.d * PRF_OUT_BITS,
        "bits_received": 0,
    }
