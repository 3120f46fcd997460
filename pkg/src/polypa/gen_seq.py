"""Sequential generator: one proposal-list sample chain per added node.

Each new node draws its hosts against the distribution frozen at its own
arrival: all ``ell`` hosts are sampled (rejecting duplicates) before any
degree, weight, or list update is applied.  The update order per node is
insert-new-node first, then one host increment per edge, which keeps the
running ``W/n`` thresholds aligned with the post-edge graph state.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
from numba import njit

from .core import Graph, GenConfig, check_generation_inputs
from .proposal_list import (
    ProposalList,
    _draw,
    _grow_entries,
    _increment_host,
    _insert_node,
    I_N,
    I_SIZE,
)
from .rng import RandomSource

__all__ = ["generate_seq", "generate_seq_instrumented", "SeqTrace"]


@dataclass
class SeqTrace:
    """Per-node instrumentation from a sequential run.

    ``proposal_sizes[i]``   explicit entry count after node i was added
    ``rejections[i]``       proposals discarded for node i (rejected or duplicate)
    """

    proposal_sizes: np.ndarray
    rejections: np.ndarray
    wall_seconds: float


@njit(cache=True)
def _seq_engine(
    N,
    ell,
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
    state,
    tr_size,
    tr_rej,
):
    hosts = np.empty(ell, dtype=np.int64)
    for i in range(N):
        v = n0 + i
        # sample ell distinct hosts from the state frozen at this node's arrival
        nh = 0
        rej = 0
        while nh < ell:
            h, props = _draw(
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
                state,
            )
            rej += props - 1
            dup = False
            for j in range(nh):
                if hosts[j] == h:
                    dup = True
                    break
            if dup:
                rej += 1
                continue
            hosts[nh] = h
            nh += 1
        # commit: new node enters the list first, then its hosts are bumped
        r = _insert_node(entries, ist, fst, count, deg, v, ell, implicit, memo, kind, alpha)
        if r < 0:
            entries = _grow_entries(entries, ist[I_SIZE], -r)
            _insert_node(entries, ist, fst, count, deg, v, ell, implicit, memo, kind, alpha)
        for j in range(ell):
            h = hosts[j]
            edges[m0 + i * ell + j, 0] = v
            edges[m0 + i * ell + j, 1] = h
            r = _increment_host(entries, ist, fst, count, deg, h, memo, kind, alpha)
            if r < 0:
                entries = _grow_entries(entries, ist[I_SIZE], -r)
                _increment_host(entries, ist, fst, count, deg, h, memo, kind, alpha)
        tr_size[i] = ist[I_SIZE]
        tr_rej[i] = rej
    return entries


def _run(seed_graph: Graph, cfg: GenConfig, rng: RandomSource | None, implicit_first: bool):
    check_generation_inputs(seed_graph, cfg)
    if not cfg.f.is_non_decreasing:
        raise ValueError("sequential generation requires a non-decreasing weight function")
    if rng is None:
        rng = RandomSource(cfg.seed)

    n_final = seed_graph.n0 + cfg.N
    m_final = seed_graph.m0 + cfg.N * cfg.ell
    edges = np.empty((m_final, 2), dtype=np.int64)
    edges[: seed_graph.m0] = seed_graph.edges

    pl = ProposalList.build(
        seed_graph, cfg.f, implicit_first=implicit_first, node_capacity=n_final
    )
    tr_size = np.empty(cfg.N, dtype=np.int64)
    tr_rej = np.empty(cfg.N, dtype=np.int64)

    state = rng.child(0).kernel_state()
    t0 = time.perf_counter()
    if cfg.N:
        pl._entries = _seq_engine(
            cfg.N,
            cfg.ell,
            seed_graph.n0,
            seed_graph.m0,
            pl.implicit_first,
            pl._memo,
            pl._kind,
            pl._alpha,
            pl._entries,
            pl._ist,
            pl._fst,
            pl._count,
            pl._deg,
            edges,
            state,
            tr_size,
            tr_rej,
        )
    wall = time.perf_counter() - t0

    degrees = np.bincount(edges.ravel(), minlength=n_final).astype(np.int64)
    g = Graph(n0=seed_graph.n0, m0=seed_graph.m0, n=n_final, edges=edges, degrees=degrees)
    trace = SeqTrace(proposal_sizes=tr_size, rejections=tr_rej, wall_seconds=wall)
    return g, trace, pl


def generate_seq(
    seed_graph: Graph,
    cfg: GenConfig,
    rng: RandomSource | None = None,
    implicit_first: bool = True,
) -> Graph:
    """Grow the seed graph by ``cfg.N`` nodes with ``cfg.ell`` hosts each."""
    g, _, _ = _run(seed_graph, cfg, rng, implicit_first)
    return g


def generate_seq_instrumented(
    seed_graph: Graph,
    cfg: GenConfig,
    rng: RandomSource | None = None,
    implicit_first: bool = True,
) -> tuple[Graph, SeqTrace, ProposalList]:
    """Like :func:`generate_seq`, also returning the trace and final list.

    The output graph is bit-identical to the plain call under the same seed;
    instrumentation is always recorded and merely discarded there.
    """
    return _run(seed_graph, cfg, rng, implicit_first)
