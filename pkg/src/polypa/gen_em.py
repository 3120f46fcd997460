"""Two-phase generator for arbitrary weight functions.

Phase 1 never touches concrete hosts: it only samples the *degree* of each
requested host, which needs nothing but per-degree node counters ``c_d`` and
weights ``c_d * f(d)``.  Distinctness of one node's hosts is enforced by
remembering how many hosts were already taken from each degree group and
rejecting accordingly.  Phase 2 then resolves every request for degree ``d``
at request time ``t = ell*i + j`` to a node chosen uniformly among all nodes
that held degree ``d`` strictly before ``t``, by merging per-degree message
streams through two priority queues.  Matched nodes are forwarded to the next
degree group with the availability time of the requesting node.

All priority-queue traffic is counted; the totals stand in for the I/O cost
of an external-memory realization.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field

import numpy as np

from .core import Graph, GenConfig, WeightFunction, check_generation_inputs, weight
from .rng import RandomSource

__all__ = [
    "DegreeGroups",
    "HostReq",
    "ExMsg",
    "OpCounts",
    "RequestLog",
    "sample_degree",
    "phase1",
    "sort_requests",
    "phase2",
    "generate_em",
]


@dataclass(frozen=True)
class HostReq:
    """Host request: node wants its j-th host to have the given degree."""

    node: int
    slot: int  # j, 1-based
    degree: int


@dataclass(frozen=True)
class ExMsg:
    """Existence message: ``node`` has ``degree`` from time ``time`` on."""

    degree: int
    time: int
    node: int


@dataclass
class OpCounts:
    """Operation counters standing in for I/O accounting."""

    pq_m_push: int = 0
    pq_m_pop: int = 0
    pq_u_push: int = 0
    pq_u_pop: int = 0
    sorted_items: int = 0
    requests: int = 0

    @property
    def total_pq_ops(self) -> int:
        return self.pq_m_push + self.pq_m_pop + self.pq_u_push + self.pq_u_pop


class _Fenwick:
    """Growable 1-based Fenwick tree over non-negative float weights."""

    def __init__(self):
        self._tree: list[float] = [0.0]
        self.n = 0
        self.total = 0.0

    def append(self, value: float) -> None:
        self.n += 1
        i = self.n
        low = i - (i & -i)
        # the new cell covers (low, i]; seed it with the already-stored part
        s = self._prefix(i - 1) - self._prefix(low)
        self._tree.append(s + value)
        self.total += value

    def update(self, i: int, delta: float) -> None:
        self.total += delta
        while i <= self.n:
            self._tree[i] += delta
            i += i & -i

    def _prefix(self, i: int) -> float:
        s = 0.0
        while i > 0:
            s += self._tree[i]
            i -= i & -i
        return s

    def pick(self, target: float) -> int:
        """Smallest index with prefix sum exceeding ``target`` (1-based)."""
        idx = 0
        bit = 1 << (self.n.bit_length())
        while bit:
            nxt = idx + bit
            if nxt <= self.n and self._tree[nxt] <= target:
                target -= self._tree[nxt]
                idx = nxt
            bit >>= 1
        return idx + 1


class DegreeGroups:
    """Per-degree node counters with a weighted draw index.

    Degrees in ``[1, B]`` live in a dense static segment (``B`` is the
    smallest power of two at or above sqrt of the final node count); larger
    degrees live in a sparse dynamic segment.  Both support point update and
    weighted draw proportional to ``c_d * f(d)`` in logarithmic time.
    """

    def __init__(self, f: WeightFunction, max_nodes: int):
        self.f = f
        root = math.isqrt(max(int(max_nodes), 1))
        if root * root < max_nodes:
            root += 1  # ceil of the square root
        b = 1
        while b < root:
            b *= 2
        self.static_bound = b
        self._static = _Fenwick()
        for _ in range(b):
            self._static.append(0.0)
        self._static_count = np.zeros(b + 1, dtype=np.int64)
        self._dyn = _Fenwick()
        self._dyn_slot: dict[int, int] = {}
        self._dyn_deg: list[int] = []
        self._dyn_count: list[int] = []

    @property
    def total_weight(self) -> float:
        return self._static.total + self._dyn.total

    def count(self, d: int) -> int:
        if d <= self.static_bound:
            return int(self._static_count[d])
        slot = self._dyn_slot.get(d)
        return 0 if slot is None else self._dyn_count[slot]

    def counts(self) -> dict[int, int]:
        out = {
            int(d): int(c)
            for d, c in enumerate(self._static_count)
            if c
        }
        for d, slot in self._dyn_slot.items():
            if self._dyn_count[slot]:
                out[d] = self._dyn_count[slot]
        return out

    def add_nodes(self, d: int, k: int = 1) -> None:
        if d < 1:
            raise ValueError("degree groups start at degree 1")
        w = weight(self.f, d)
        if d <= self.static_bound:
            self._static_count[d] += k
            if self._static_count[d] < 0:
                raise ValueError(f"negative counter for degree {d}")
            self._static.update(d, w * k)
            return
        slot = self._dyn_slot.get(d)
        if slot is None:
            slot = len(self._dyn_deg)
            self._dyn_slot[d] = slot
            self._dyn_deg.append(d)
            self._dyn_count.append(0)
            self._dyn.append(0.0)
        self._dyn_count[slot] += k
        if self._dyn_count[slot] < 0:
            raise ValueError(f"negative counter for degree {d}")
        self._dyn.update(slot + 1, w * k)

    def remove_nodes(self, d: int, k: int = 1) -> None:
        self.add_nodes(d, -k)

    def draw(self, rng: RandomSource) -> int:
        """One degree proportional to ``c_d * f(d)``."""
        total = self.total_weight
        if total <= 0.0:
            raise ValueError("no weight left to draw from")
        while True:
            target = rng.random() * total
            if target < self._static.total:
                d = self._static.pick(target)
                if (
                    d <= self.static_bound
                    and self._static_count[d] > 0
                    and weight(self.f, d) > 0.0
                ):
                    return d
            else:
                target -= self._static.total
                if self._dyn.n:
                    slot = self._dyn.pick(target)
                    if slot <= self._dyn.n and self._dyn_count[slot - 1] > 0:
                        d = self._dyn_deg[slot - 1]
                        if weight(self.f, d) > 0.0:
                            return d
            # float drift landed on an empty or weightless cell; redraw


def sample_degree(groups: DegreeGroups, taken: dict[int, int], rng: RandomSource) -> int:
    """Sample a host degree with the without-replacement correction.

    ``taken[d]`` counts hosts already taken from degree ``d`` by the current
    node; a draw of ``d`` is accepted with probability ``(c_d - s_d)/c_d``.
    """
    eligible = groups.total_weight
    for d, s in taken.items():
        eligible -= s * weight(groups.f, d)
    if eligible <= 0.0:
        raise ValueError("all remaining weight is excluded by taken hosts")
    while True:
        d = groups.draw(rng)
        s = taken.get(d, 0)
        if s == 0:
            return d
        c = groups.count(d)
        if c <= s:
            continue
        if rng.random() * c < c - s:
            return d


@dataclass
class RequestLog:
    """Column-oriented host requests; ``HostReq`` views for small logs."""

    node_index: np.ndarray  # 1-based index i of the requesting node
    slot: np.ndarray  # 1-based j
    degree: np.ndarray
    n0: int
    ell: int

    def __len__(self) -> int:
        return int(self.node_index.size)

    @property
    def times(self) -> np.ndarray:
        return self.ell * self.node_index + self.slot

    def node_ids(self) -> np.ndarray:
        return self.n0 + self.node_index - 1

    def as_hostreqs(self) -> list[HostReq]:
        return [
            HostReq(node=int(self.n0 + i - 1), slot=int(j), degree=int(d))
            for i, j, d in zip(self.node_index, self.slot, self.degree)
        ]

    @staticmethod
    def from_hostreqs(reqs, n0: int, ell: int) -> "RequestLog":
        return RequestLog(
            node_index=np.array([r.node - n0 + 1 for r in reqs], dtype=np.int64),
            slot=np.array([r.slot for r in reqs], dtype=np.int64),
            degree=np.array([r.degree for r in reqs], dtype=np.int64),
            n0=n0,
            ell=ell,
        )


def phase1(
    seed_graph: Graph, cfg: GenConfig, rng: RandomSource
) -> tuple[RequestLog, list[ExMsg], DegreeGroups]:
    """Sample all host degrees; returns requests and the initial messages.

    Counters move only after a node's full request block: ``(c_d, c_{d+1})``
    becomes ``(c_d - s_d, c_{d+1} + s_d)`` for every touched degree, then the
    new node joins group ``ell``, so a node never hosts itself.
    """
    check_generation_inputs(seed_graph, cfg)
    n0, N, ell = seed_graph.n0, cfg.N, cfg.ell
    groups = DegreeGroups(cfg.f, n0 + N)
    msgs = [ExMsg(degree=int(d), time=0, node=v) for v, d in enumerate(seed_graph.degrees)]
    for v in range(n0):
        groups.add_nodes(int(seed_graph.degrees[v]), 1)

    node_col = np.empty(N * ell, dtype=np.int64)
    slot_col = np.empty(N * ell, dtype=np.int64)
    deg_col = np.empty(N * ell, dtype=np.int64)
    pos = 0
    taken: dict[int, int] = {}
    for i in range(1, N + 1):
        msgs.append(ExMsg(degree=ell, time=ell * (i + 1), node=n0 + i - 1))
        taken.clear()
        for j in range(1, ell + 1):
            d = sample_degree(groups, taken, rng)
            taken[d] = taken.get(d, 0) + 1
            node_col[pos] = i
            slot_col[pos] = j
            deg_col[pos] = d
            pos += 1
        for d, s in taken.items():
            groups.remove_nodes(d, s)
            groups.add_nodes(d + 1, s)
        groups.add_nodes(ell, 1)
    log = RequestLog(node_index=node_col, slot=slot_col, degree=deg_col, n0=n0, ell=ell)
    return log, msgs, groups


def sort_requests(log: RequestLog) -> RequestLog:
    """Stable ascending order by (degree, request time)."""
    order = np.lexsort((log.times, log.degree))
    return RequestLog(
        node_index=log.node_index[order],
        slot=log.slot[order],
        degree=log.degree[order],
        n0=log.n0,
        ell=log.ell,
    )


def phase2(
    sorted_log: RequestLog,
    msgs: list[ExMsg],
    rng: RandomSource,
    counts: OpCounts | None = None,
) -> np.ndarray:
    """Resolve sorted requests to concrete hosts; returns generated edges.

    Edges are written back to generation order: request (i, j) owns row
    ``(i-1)*ell + (j-1)``.
    """
    if counts is None:
        counts = OpCounts()
    ell, n0 = sorted_log.ell, sorted_log.n0
    pq_m: list[tuple[int, int, int, int]] = []
    seq = 0
    for msg in msgs:
        pq_m.append((msg.degree, msg.time, seq, msg.node))
        seq += 1
    heapq.heapify(pq_m)
    counts.pq_m_push += len(pq_m)

    edges = np.empty((len(sorted_log), 2), dtype=np.int64)
    pq_u: list[tuple[float, int, int]] = []
    cur_d = -1
    r_min, r_max = 0.0, 1.0
    useq = 0
    for k in range(len(sorted_log)):
        d = int(sorted_log.degree[k])
        i = int(sorted_log.node_index[k])
        j = int(sorted_log.slot[k])
        t = ell * i + j
        if d != cur_d:
            counts.pq_u_pop += len(pq_u)  # unmatched nodes are discarded
            pq_u.clear()
            r_min, r_max = 0.0, 1.0
            cur_d = d
        while pq_m and (pq_m[0][0] < d or (pq_m[0][0] == d and pq_m[0][1] < t)):
            md, _mt, _ms, mv = heapq.heappop(pq_m)
            counts.pq_m_pop += 1
            if md == d:
                r = r_min + rng.random() * (r_max - r_min)
                heapq.heappush(pq_u, (r, useq, mv))
                useq += 1
                counts.pq_u_push += 1
            # messages for smaller degrees can never match again: dropped
        if not pq_u:
            raise RuntimeError("no eligible host in the uniform queue; phase-1/2 mismatch")
        r_u, _, u = heapq.heappop(pq_u)
        counts.pq_u_pop += 1
        r_min = r_u
        edges[(i - 1) * ell + (j - 1), 0] = n0 + i - 1
        edges[(i - 1) * ell + (j - 1), 1] = u
        heapq.heappush(pq_m, (d + 1, ell * (i + 1), seq, u))
        seq += 1
        counts.pq_m_push += 1
    counts.pq_u_pop += len(pq_u)
    pq_u.clear()
    return edges


def generate_em(
    seed_graph: Graph,
    cfg: GenConfig,
    master_seed: int | None = None,
    rng: RandomSource | None = None,
) -> tuple[Graph, OpCounts]:
    """Run both phases; returns the graph and the operation counters."""
    if rng is None:
        rng = RandomSource(cfg.seed if master_seed is None else master_seed)
    counts = OpCounts()
    log, msgs, _groups = phase1(seed_graph, cfg, rng.child(0))
    counts.requests = len(log)
    slog = sort_requests(log)
    counts.sorted_items = len(slog)
    gen_edges = phase2(slog, msgs, rng.child(1), counts)
    n_final = seed_graph.n0 + cfg.N
    edges = np.vstack([seed_graph.edges.reshape(-1, 2), gen_edges])
    degrees = np.bincount(edges.ravel(), minlength=n_final).astype(np.int64)
    g = Graph(
        n0=seed_graph.n0, m0=seed_graph.m0, n=n_final, edges=edges, degrees=degrees
    )
    return g, counts
