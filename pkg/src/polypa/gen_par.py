"""Batch-parallel generator: independent sampling until the first dependent draw.

Host samples are processed in batches.  At batch start the distribution is
frozen (total weight ``W_s``, node count ``n_s``).  In phase 1 every worker
draws hosts for the sample slots it owns (slot ``t`` belongs to worker
``t mod P``) straight from the frozen list, but first flips a coin for each
slot that comes up heads with probability ``W_s / W'_t``, where ``W'_t`` is a
deterministic upper bound on the true total weight at slot ``t``.  Heads
certifies the slot as independent; the first tails slot ``l`` cuts the batch.
Phase 2 commits all slots below the cut.  The cut slot itself is resolved by
a three-way mixture — old distribution, weight added during the batch, or the
new distribution — which restores the exact marginal ``f(d_h)/W`` at slot
``l``.

The committed output is a deterministic function of (master seed, worker
count): every worker draws from a fresh child stream per batch and phase, so
the racy early-stop hint can only change how far a worker over-samples past
the cut, never what is committed.

For ``ell == 1`` phase 2 itself runs in parallel (new nodes by slot
ownership, host updates by host ownership, appends into exactly sized
per-worker blocks).  For ``ell > 1`` phase 2 replays the committed slots in
order so that duplicate hosts within one node can be redrawn from the exact
node-arrival distribution.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
from numba import njit, prange
import numba

from .core import Graph, GenConfig, WeightFunction, check_generation_inputs
from .proposal_list import (
    I_N,
    I_SIZE,
    ProposalList,
    ProposalStats,
    _draw,
    _fw,
    _grow_entries,
    _increment_host,
    _insert_node,
)
from .rng import RandomSource, _derive_state, _next_below, _next_double

__all__ = [
    "BatchState",
    "HostBuffer",
    "ParStats",
    "ParRun",
    "upper_bound_W",
    "run_batch",
    "generate_par",
    "generate_par_instrumented",
]

# meta layout (int64[8])
M_S = 0  # slot cursor (start of the next batch)
M_BATCHES = 1  # batches executed so far
M_DELTA = 2  # running maximum degree
M_LAST_S = 3  # last batch: first slot
M_LAST_L = 4  # last batch: cut slot (== total slots when no coin fired)
M_LAST_COMMIT = 5  # last batch: committed slots incl. the resolved cut slot
M_LAST_NS = 6  # last batch: node count at start
M_LAST_DELTA = 7  # last batch: max degree at start

# fmeta layout (float64[1])
FM_LAST_WS = 0  # last batch: total weight at start


@dataclass(frozen=True)
class BatchState:
    """Frozen scalars of one batch; slots are 0-based, ``l`` may be sentinel.

    ``s <= l <= total_slots`` where ``l == total_slots`` means no dependence
    coin fired in the batch.
    """

    s: int
    l: int
    W_s: float
    n_s: int
    Delta_s: int


@dataclass(frozen=True)
class HostBuffer:
    """Committed (new node, host, slot) triples drawn by one worker."""

    worker: int
    triples: tuple[tuple[int, int, int], ...]


def upper_bound_W(bs: BatchState, i: int, f: WeightFunction, ell: int = 1) -> float:
    """Deterministic upper bound on the total weight at sample slot ``i``.

    ``W_s + 2(i-s)`` for alpha <= 1 and the max-degree form for alpha > 1;
    with ``ell > 1`` both get slack for nodes completing mid-batch.
    """
    if not f.is_polynomial:
        raise ValueError("batch generation supports polynomial weight functions only")
    k = i - bs.s
    if k < 0:
        raise ValueError("slot precedes the batch start")
    if k == 0:
        return bs.W_s
    return _wprime(bs.W_s, bs.Delta_s, k, ell, f.alpha)


@njit(cache=True, inline="always")
def _wprime(W_s, delta_s, k, ell, alpha):
    if alpha <= 1.0:
        return W_s + 2.0 * k + 2.0 * (ell - 1)
    dd = float(delta_s if delta_s > ell else ell)
    kk = float(k + ell - 1)
    return W_s + 2.0 * ((dd + kk) ** alpha - dd ** alpha)


# Raise-free twins of the proposal-list helpers.  The parallel regions must
# stay single-entry/single-exit for numba's parfors to run them on threads,
# so nothing reachable from a prange body may raise.  Batch generation is
# polynomial-only, hence the table error-tail case cannot occur here.


@njit(cache=True, inline="always")
def _fw_nr(d, memo, kind, alpha):
    if d < memo.size:
        return memo[d]
    if kind == 0:
        return float(d) ** alpha
    return memo[memo.size - 1]


@njit(cache=True, inline="always")
def _draw_nr(entries, size, n, count, deg, bound, implicit, memo, kind, alpha, state):
    while True:
        if implicit:
            k = _next_below(state, size + n)
            v = k if k < n else entries[k - n]
        else:
            v = entries[_next_below(state, size)]
        if v < 0:
            continue
        u = _next_double(state)
        if u * bound * count[v] < _fw_nr(deg[v], memo, kind, alpha):
            return v


def _engine_body(
    T,
    ell,
    P,
    n0,
    m0,
    implicit,
    memo,
    kind,
    alpha,
    entries,
    ist,
    fst,
    count,
    deg,
    edges,
    hosts_all,
    batch_tag,
    base,
    max_batches,
    meta,
    fmeta,
):
    s = meta[M_S]
    batches = 0
    worker_l = np.empty(P, dtype=np.int64)
    lhint = np.empty(1, dtype=np.int64)
    while s < T and (max_batches < 0 or batches < max_batches):
        b = meta[M_BATCHES]
        s_start = s
        W_s = fst[0]
        n_s = ist[I_N]
        size_s = ist[I_SIZE]
        delta_s = meta[M_DELTA]
        thr0 = W_s / n_s
        if thr0 > fst[1]:
            fst[1] = thr0
        U_s = fst[1]
        lhint[0] = T

        # ---- phase 1: frozen sampling plus the dependence-coin cut
        for p in prange(P):
            st = np.empty(4, dtype=np.uint64)
            _derive_state(base, b, p, 0, st)
            lp = T
            off = (p - (s % P)) % P
            if off < 0:
                off += P
            for t in range(s + off, T, P):
                if t >= lhint[0]:
                    break
                if t > s:
                    wp = _wprime(W_s, delta_s, t - s, ell, alpha)
                    if _next_double(st) * wp >= W_s:  # tails: dependent sample
                        lp = t
                        if t < lhint[0]:
                            lhint[0] = t  # advisory, racy on purpose
                        break
                hosts_all[t] = _draw_nr(
                    entries, size_s, n_s, count, deg, U_s, implicit, memo, kind, alpha, st
                )
            worker_l[p] = lp

        l = T
        for p in range(P):
            if worker_l[p] < l:
                l = worker_l[p]
        ce = l if l < T else T

        # ---- phase 2: commit slots s..ce-1
        if ell == 1:
            if ce > s:
                nb = ce - s
                ch_h = np.empty((P, nb), dtype=np.int64)
                ch_pre = np.empty((P, nb), dtype=np.int64)
                ch_cnt = np.zeros(P, dtype=np.int64)
                app_need = np.zeros(P, dtype=np.int64)
                d_w = np.zeros(P, dtype=np.float64)
                d_max = np.zeros(P, dtype=np.int64)
                for p in prange(P):
                    # new nodes and edges: slot ownership
                    off2 = (p - (s % P)) % P
                    if off2 < 0:
                        off2 += P
                    for t in range(s + off2, ce, P):
                        v = n0 + t
                        edges[m0 + t, 0] = v
                        edges[m0 + t, 1] = hosts_all[t]
                        count[v] = 1
                        deg[v] = 1
                    # host updates: host ownership
                    acc = 0.0
                    mx = 0
                    cc = 0
                    for t in range(s, ce):
                        h = hosts_all[t]
                        if h % P != p:
                            continue
                        if batch_tag[h] != b:
                            batch_tag[h] = b
                            ch_h[p, cc] = h
                            ch_pre[p, cc] = deg[h]
                            cc += 1
                        d0 = deg[h]
                        deg[h] = d0 + 1
                        acc += _fw_nr(d0 + 1, memo, kind, alpha) - _fw_nr(d0, memo, kind, alpha)
                        if d0 + 1 > mx:
                            mx = d0 + 1
                    d_w[p] = acc
                    d_max[p] = mx
                    ch_cnt[p] = cc
                    # entries needed to restore w(h) <= W_s/n_s for owned hosts
                    nd = 0
                    for j in range(cc):
                        h = ch_h[p, j]
                        w_h = _fw_nr(deg[h], memo, kind, alpha)
                        tgt = count[h]
                        while w_h > thr0 * tgt:
                            tgt += 1
                        nd += tgt - count[h]
                    app_need[p] = nd

                # fixed-order reductions keep the shared scalars deterministic
                w_new = W_s
                for p in range(P):
                    w_new += d_w[p]
                w_new += nb * memo[1]  # every committed node enters with degree 1
                fst[0] = w_new
                ist[I_N] = n_s + nb
                for p in range(P):
                    if d_max[p] > meta[M_DELTA]:
                        meta[M_DELTA] = d_max[p]

                node_block = 0 if implicit else nb
                total_app = node_block
                for p in range(P):
                    total_app += app_need[p]
                if ist[I_SIZE] + total_app > entries.size:
                    entries = _grow_entries(entries, ist[I_SIZE], total_app)
                offs = np.empty(P + 1, dtype=np.int64)
                offs[0] = ist[I_SIZE] + node_block
                for p in range(P):
                    offs[p + 1] = offs[p] + app_need[p]
                for p in prange(P):
                    if not implicit:
                        off3 = (p - (s % P)) % P
                        if off3 < 0:
                            off3 += P
                        for t in range(s + off3, ce, P):
                            entries[ist[I_SIZE] + (t - s)] = n0 + t
                    pos = offs[p]
                    for j in range(ch_cnt[p]):
                        h = ch_h[p, j]
                        w_h = _fw_nr(deg[h], memo, kind, alpha)
                        tgt = count[h]
                        while w_h > thr0 * tgt:
                            entries[pos] = h
                            pos += 1
                            tgt += 1
                        count[h] = tgt
                ist[I_SIZE] = ist[I_SIZE] + total_app

                committed = nb
            else:
                ch_h = np.empty((P, 0), dtype=np.int64)
                ch_pre = np.empty((P, 0), dtype=np.int64)
                ch_cnt = np.zeros(P, dtype=np.int64)
                committed = 0

            # ---- resolve the dependent slot via the exact three-way mixture
            if l < T:
                st3 = np.empty(4, dtype=np.uint64)
                _derive_state(base, b, P, 1, st3)
                W_l = fst[0]
                wp_l = _wprime(W_s, delta_s, l - s, ell, alpha)
                num = W_l - W_s
                den = wp_l - W_s
                if num < -1e-9 * W_s or num > den * (1.0 + 1e-9):
                    raise RuntimeError("batch invariant violated: W_s <= W_l <= W'_l failed")
                hsel = -1
                if den > 0.0 and _next_double(st3) * den < num:
                    # weight added during the batch
                    target = _next_double(st3) * num
                    acc2 = 0.0
                    for p in range(P):
                        for j in range(ch_cnt[p]):
                            h = ch_h[p, j]
                            acc2 += _fw(deg[h], memo, kind, alpha) - _fw(
                                ch_pre[p, j], memo, kind, alpha
                            )
                            if acc2 > target:
                                hsel = h
                                break
                        if hsel >= 0:
                            break
                    if hsel < 0:
                        for t in range(s, ce):
                            acc2 += memo[1]
                            if acc2 > target:
                                hsel = n0 + t
                                break
                    if hsel < 0:  # float drift at the very edge
                        hsel = n0 + ce - 1 if ce > s else -1
                if hsel < 0:
                    # new distribution, rejection-sampled from the live list
                    hsel, _ = _draw(
                        entries,
                        ist[I_SIZE],
                        ist[I_N],
                        count,
                        deg,
                        fst[1],
                        implicit,
                        memo,
                        kind,
                        alpha,
                        st3,
                    )
                v = n0 + l
                edges[m0 + l, 0] = v
                edges[m0 + l, 1] = hsel
                r = _insert_node(entries, ist, fst, count, deg, v, 1, implicit, memo, kind, alpha)
                if r < 0:
                    entries = _grow_entries(entries, ist[I_SIZE], -r)
                    _insert_node(entries, ist, fst, count, deg, v, 1, implicit, memo, kind, alpha)
                r = _increment_host(entries, ist, fst, count, deg, hsel, memo, kind, alpha)
                if r < 0:
                    entries = _grow_entries(entries, ist[I_SIZE], -r)
                    _increment_host(entries, ist, fst, count, deg, hsel, memo, kind, alpha)
                if deg[hsel] > meta[M_DELTA]:
                    meta[M_DELTA] = deg[hsel]
                committed += 1
                s = l + 1
            else:
                s = T
        else:
            # ---- ell > 1: ordered replay with exact duplicate redraws
            stc = np.empty(4, dtype=np.uint64)
            _derive_state(base, b, P, 1, stc)
            nrec_cap = 2 * (ce - s) + 2
            rec_v = np.empty(nrec_cap, dtype=np.int64)
            rec_pre = np.empty(nrec_cap, dtype=np.int64)
            nrec = 0
            committed = 0
            for t in range(s, ce):
                nodeb = t // ell
                first = m0 + nodeb * ell
                h = hosts_all[t]
                while True:
                    dup = False
                    for q in range(first, m0 + t):
                        if edges[q, 1] == h:
                            dup = True
                            break
                    if not dup:
                        break
                    h, _ = _draw(
                        entries,
                        ist[I_SIZE],
                        ist[I_N],
                        count,
                        deg,
                        fst[1],
                        implicit,
                        memo,
                        kind,
                        alpha,
                        stc,
                    )
                edges[m0 + t, 0] = n0 + nodeb
                edges[m0 + t, 1] = h
                committed += 1
                if t == nodeb * ell + ell - 1:
                    entries, nrec = _apply_node_updates(
                        entries,
                        ist,
                        fst,
                        count,
                        deg,
                        edges,
                        n0,
                        nodeb,
                        ell,
                        first,
                        implicit,
                        memo,
                        kind,
                        alpha,
                        batch_tag,
                        b,
                        rec_v,
                        rec_pre,
                        nrec,
                        meta,
                    )
            if l < T:
                nodeb = l // ell
                first = m0 + nodeb * ell
                W_l = fst[0]
                wp_l = _wprime(W_s, delta_s, l - s, ell, alpha)
                num = W_l - W_s
                den = wp_l - W_s
                if num < -1e-9 * W_s or num > den * (1.0 + 1e-9):
                    raise RuntimeError("batch invariant violated: W_s <= W_l <= W'_l failed")
                hsel = -1
                if den > 0.0 and _next_double(stc) * den < num:
                    target = _next_double(stc) * num
                    acc2 = 0.0
                    for j in range(nrec):
                        acc2 += _fw(deg[rec_v[j]], memo, kind, alpha) - _fw(
                            rec_pre[j], memo, kind, alpha
                        )
                        if acc2 > target:
                            hsel = rec_v[j]
                            break
                    if hsel < 0 and nrec > 0:
                        hsel = rec_v[nrec - 1]
                if hsel < 0:
                    hsel, _ = _draw(
                        entries,
                        ist[I_SIZE],
                        ist[I_N],
                        count,
                        deg,
                        fst[1],
                        implicit,
                        memo,
                        kind,
                        alpha,
                        stc,
                    )
                # distinctness against this node's already fixed hosts; redraws
                # come from the exact node-arrival distribution
                while True:
                    dup = False
                    for q in range(first, m0 + l):
                        if edges[q, 1] == hsel:
                            dup = True
                            break
                    if not dup:
                        break
                    hsel, _ = _draw(
                        entries,
                        ist[I_SIZE],
                        ist[I_N],
                        count,
                        deg,
                        fst[1],
                        implicit,
                        memo,
                        kind,
                        alpha,
                        stc,
                    )
                edges[m0 + l, 0] = n0 + nodeb
                edges[m0 + l, 1] = hsel
                committed += 1
                if l == nodeb * ell + ell - 1:
                    entries, nrec = _apply_node_updates(
                        entries,
                        ist,
                        fst,
                        count,
                        deg,
                        edges,
                        n0,
                        nodeb,
                        ell,
                        first,
                        implicit,
                        memo,
                        kind,
                        alpha,
                        batch_tag,
                        b,
                        rec_v,
                        rec_pre,
                        nrec,
                        meta,
                    )
                s = l + 1
            else:
                s = T

        meta[M_LAST_S] = s_start
        meta[M_LAST_L] = l
        meta[M_LAST_COMMIT] = committed
        meta[M_LAST_NS] = n_s
        meta[M_LAST_DELTA] = delta_s
        fmeta[FM_LAST_WS] = W_s
        batches += 1
        meta[M_BATCHES] = meta[M_BATCHES] + 1
        meta[M_S] = s
    return entries


@njit(cache=True)
def _apply_node_updates(
    entries,
    ist,
    fst,
    count,
    deg,
    edges,
    n0,
    nodeb,
    ell,
    first,
    implicit,
    memo,
    kind,
    alpha,
    batch_tag,
    b,
    rec_v,
    rec_pre,
    nrec,
    meta,
):
    """Insert a completed node and bump its hosts (ordered-replay commit)."""
    v = n0 + nodeb
    if batch_tag[v] != b:
        batch_tag[v] = b
        rec_v[nrec] = v
        rec_pre[nrec] = 0
        nrec += 1
    r = _insert_node(entries, ist, fst, count, deg, v, ell, implicit, memo, kind, alpha)
    if r < 0:
        entries = _grow_entries(entries, ist[I_SIZE], -r)
        _insert_node(entries, ist, fst, count, deg, v, ell, implicit, memo, kind, alpha)
    if deg[v] > meta[M_DELTA]:
        meta[M_DELTA] = deg[v]
    for j in range(ell):
        h = edges[first + j, 1]
        if batch_tag[h] != b:
            batch_tag[h] = b
            rec_v[nrec] = h
            rec_pre[nrec] = deg[h]
            nrec += 1
        r = _increment_host(entries, ist, fst, count, deg, h, memo, kind, alpha)
        if r < 0:
            entries = _grow_entries(entries, ist[I_SIZE], -r)
            _increment_host(entries, ist, fst, count, deg, h, memo, kind, alpha)
        if deg[h] > meta[M_DELTA]:
            meta[M_DELTA] = deg[h]
    return entries, nrec


_engine_par = njit(cache=True, parallel=True)(_engine_body)
_engine_seq = njit(cache=True)(_engine_body)


@dataclass
class ParStats:
    """Run summary: batch count, wall time, and final list shape."""

    batches: int
    wall_seconds: float
    proposal: ProposalStats


class ParRun:
    """Batch-stepped execution of the parallel generator.

    Holds the shared state between batches so that tests can drive one batch
    at a time via :meth:`run_batch` and inspect :attr:`batch_state` and the
    per-worker host buffers afterwards.
    """

    def __init__(
        self,
        seed_graph: Graph,
        cfg: GenConfig,
        master_seed: int | None = None,
        rng: RandomSource | None = None,
        implicit_first: bool = True,
        use_threads: bool | None = None,
    ):
        check_generation_inputs(seed_graph, cfg)
        if not cfg.f.is_polynomial:
            raise ValueError("batch generation supports polynomial weight functions only")
        if rng is None:
            rng = RandomSource(cfg.seed if master_seed is None else master_seed)
        self.cfg = cfg
        self.n0 = seed_graph.n0
        self.m0 = seed_graph.m0
        self.T = cfg.N * cfg.ell
        n_final = seed_graph.n0 + cfg.N
        self.pl = ProposalList.build(
            seed_graph, cfg.f, implicit_first=implicit_first, node_capacity=n_final
        )
        self.edges = np.empty((seed_graph.m0 + self.T, 2), dtype=np.int64)
        self.edges[: seed_graph.m0] = seed_graph.edges
        self.hosts_all = np.empty(self.T, dtype=np.int64)
        self.batch_tag = np.full(n_final, -1, dtype=np.int64)
        self.base = np.uint64(rng.child(0).base_key)
        self.meta = np.zeros(8, dtype=np.int64)
        self.meta[M_DELTA] = int(seed_graph.degrees.max()) if seed_graph.n0 else 0
        self.meta[M_LAST_L] = self.T
        self.fmeta = np.zeros(1, dtype=np.float64)
        self.batch_state: BatchState | None = None
        if use_threads is None:
            use_threads = cfg.workers > 1
        self._engine = _engine_par if use_threads else _engine_seq
        if use_threads:
            numba.set_num_threads(max(1, min(cfg.workers, numba.config.NUMBA_NUM_THREADS)))

    @property
    def done(self) -> bool:
        return int(self.meta[M_S]) >= self.T

    @property
    def batches(self) -> int:
        return int(self.meta[M_BATCHES])

    def _step(self, max_batches: int) -> int:
        before = int(self.meta[M_S])
        self.pl._entries = self._engine(
            self.T,
            self.cfg.ell,
            self.cfg.workers,
            self.n0,
            self.m0,
            self.pl.implicit_first,
            self.pl._memo,
            self.pl._kind,
            self.pl._alpha,
            self.pl._entries,
            self.pl._ist,
            self.pl._fst,
            self.pl._count,
            self.pl._deg,
            self.edges,
            self.hosts_all,
            self.batch_tag,
            self.base,
            max_batches,
            self.meta,
            self.fmeta,
        )
        if int(self.meta[M_S]) > before or max_batches != 0:
            self.batch_state = BatchState(
                s=int(self.meta[M_LAST_S]),
                l=int(self.meta[M_LAST_L]),
                W_s=float(self.fmeta[FM_LAST_WS]),
                n_s=int(self.meta[M_LAST_NS]),
                Delta_s=int(self.meta[M_LAST_DELTA]),
            )
        return int(self.meta[M_S]) - before

    def run_batch(self) -> int:
        """Execute one batch; returns the number of committed samples."""
        if self.done:
            return 0
        return self._step(1)

    def run_all(self) -> None:
        if not self.done:
            self._step(-1)

    def host_buffers(self) -> list[HostBuffer]:
        """Per-worker committed triples of the last executed batch."""
        if self.batch_state is None:
            return []
        s, l = self.batch_state.s, self.batch_state.l
        ce = min(l, self.T)
        buffers = []
        for p in range(self.cfg.workers):
            triples = tuple(
                (self.n0 + t // self.cfg.ell, int(self.hosts_all[t]), t)
                for t in range(s, ce)
                if t % self.cfg.workers == p
            )
            buffers.append(HostBuffer(worker=p, triples=triples))
        return buffers

    def graph(self) -> Graph:
        if not self.done:
            raise RuntimeError("generation is not finished")
        n_final = self.n0 + self.cfg.N
        degrees = np.bincount(self.edges.ravel(), minlength=n_final).astype(np.int64)
        return Graph(
            n0=self.n0, m0=self.m0, n=n_final, edges=self.edges, degrees=degrees
        )


def run_batch(state: ParRun) -> int:
    """Module-level alias: advance ``state`` by exactly one batch."""
    return state.run_batch()


def generate_par(
    seed_graph: Graph,
    cfg: GenConfig,
    master_seed: int | None = None,
    rng: RandomSource | None = None,
    implicit_first: bool = True,
) -> Graph:
    """Parallel generation; output distribution identical to the sequential path."""
    g, _ = generate_par_instrumented(
        seed_graph, cfg, master_seed=master_seed, rng=rng, implicit_first=implicit_first
    )
    return g


def generate_par_instrumented(
    seed_graph: Graph,
    cfg: GenConfig,
    master_seed: int | None = None,
    rng: RandomSource | None = None,
    implicit_first: bool = True,
    use_threads: bool | None = None,
) -> tuple[Graph, ParStats]:
    run = ParRun(
        seed_graph,
        cfg,
        master_seed=master_seed,
        rng=rng,
        implicit_first=implicit_first,
        use_threads=use_threads,
    )
    t0 = time.perf_counter()
    run.run_all()
    wall = time.perf_counter() - t0
    return run.graph(), ParStats(
        batches=run.batches, wall_seconds=wall, proposal=run.pl.stats()
    )
