"""Dynamic proposal distribution for rejection-sampled host selection.

The structure keeps a growable multiset of node entries.  Node ``v`` holds
``c(v)`` entries, so proposing a uniform entry and accepting with probability
``f(d_v) / (c(v) * U)`` yields hosts with exact probability ``f(d_v) / W``
whenever ``U`` dominates every per-entry weight ``w(v) = f(d_v) / c(v)``.

Instead of the exact maximum of ``w(v)``, the acceptance bound ``U`` is the
running maximum of ``W/n`` over all mutation steps: every node satisfies
``w(v) <= W/n`` as of its last modification, so the bound never
underestimates and costs O(1) to maintain.

With ``implicit_first`` enabled, the first entry of every node is not stored:
ids are dense, so entry ``k < n`` simply names node ``k``, and the explicit
array holds only the ``c(v) - 1`` overflow entries.

Weight decreases are unsupported; degrees only grow under preferential
attachment.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numba import njit, int64

from .core import Graph, WeightFunction, weight
from .rng import RandomSource, _next_below, _next_double

__all__ = ["ProposalList", "ProposalStats", "build"]

# Indices into the scalar state arrays shared with the kernels.
I_SIZE = 0  # explicit entry count
I_N = 1  # node count
F_W = 0  # total weight
F_U = 1  # acceptance bound


@njit(cache=True, inline="always")
def _fw(d, memo, kind, alpha):
    """Weight of degree ``d``; memoized below ``memo.size``."""
    if d < memo.size:
        return memo[d]
    if kind == 0:  # polynomial
        return float(d) ** alpha
    if kind == 1:  # table, extend tail
        return memo[memo.size - 1]
    raise ValueError("degree is beyond the weight table (error tail rule)")


@njit(cache=True, inline="always")
def _draw(entries, size, n, count, deg, bound, implicit, memo, kind, alpha, state):
    """One rejection-sampled host from a frozen list view.

    Returns (host, proposals).  Negative entries mark reserved-but-unwritten
    slots and are retried without counting as proposals.
    """
    proposals = 0
    while True:
        if implicit:
            k = _next_below(state, size + n)
            v = k if k < n else entries[k - n]
        else:
            v = entries[_next_below(state, size)]
        if v < 0:
            continue
        proposals += 1
        u = _next_double(state)
        if u * bound * count[v] < _fw(deg[v], memo, kind, alpha):
            return v, proposals


@njit(cache=True)
def _bulk_draw(entries, ist, fst, count, deg, implicit, memo, kind, alpha, state, draws, out):
    """Accumulate ``draws`` samples into per-node counts (statistical tests)."""
    total_proposals = 0
    for _ in range(draws):
        v, props = _draw(
            entries, ist[I_SIZE], ist[I_N], count, deg, fst[F_U], implicit, memo, kind, alpha, state
        )
        out[v] += 1
        total_proposals += props
    return total_proposals


@njit(cache=True, inline="always")
def _insert_node(entries, ist, fst, count, deg, v, d, implicit, memo, kind, alpha):
    """Add node ``v`` with degree ``d``; count per the construction formula.

    Returns the number of explicit entries appended, or the negated number
    needed when the entry array is full (state untouched in that case).
    """
    fd = _fw(d, memo, kind, alpha)
    w_new = fst[F_W] + fd
    n_new = ist[I_N] + 1
    c = int64(math.ceil(fd * n_new / w_new))
    if c < 1:
        c = 1
    extra = c - 1 if implicit else c
    size = ist[I_SIZE]
    if size + extra > entries.size:
        return -extra
    for i in range(extra):
        entries[size + i] = v
    count[v] = c
    deg[v] = d
    ist[I_SIZE] = size + extra
    ist[I_N] = n_new
    fst[F_W] = w_new
    thr = w_new / n_new
    if thr > fst[F_U]:
        fst[F_U] = thr
    return extra


@njit(cache=True, inline="always")
def _increment_host(entries, ist, fst, count, deg, h, memo, kind, alpha):
    """Raise the degree of ``h`` by one and append entries until w(h) <= W/n.

    Returns the number of entries appended, or the negated number needed when
    the entry array is full (state untouched in that case).
    """
    d = deg[h]
    w_old = _fw(d, memo, kind, alpha)
    w_new = _fw(d + 1, memo, kind, alpha)
    if w_new < w_old:
        raise ValueError("weight decreases are not supported")
    total = fst[F_W] + (w_new - w_old)
    thr = total / ist[I_N]
    c = count[h]
    need = 0
    while w_new > thr * c:
        c += 1
        need += 1
    size = ist[I_SIZE]
    if size + need > entries.size:
        return -need
    for i in range(need):
        entries[size + i] = h
    count[h] = c
    deg[h] = d + 1
    ist[I_SIZE] = size + need
    fst[F_W] = total
    if thr > fst[F_U]:
        fst[F_U] = thr
    return need


@njit(cache=True)
def _grow_entries(entries, size, need):
    """Reallocate with doubling; unused tail is sentinel-filled."""
    cap = entries.size if entries.size > 0 else 16
    while cap < size + need:
        cap *= 2
    out = np.full(cap, -1, dtype=np.int64)
    out[:size] = entries[:size]
    return out


@dataclass(frozen=True)
class ProposalStats:
    """Snapshot of list size and sampling parameters."""

    explicit_entries: int
    implicit_entries: int
    total_weight: float
    node_count: int
    accept_bound: float

    @property
    def total_entries(self) -> int:
        return self.explicit_entries + self.implicit_entries


class ProposalList:
    """Growable entry multiset over dense node ids; single-writer."""

    def __init__(
        self,
        degrees,
        f: WeightFunction,
        implicit_first: bool = True,
        node_capacity: int | None = None,
    ):
        degrees = np.asarray(degrees, dtype=np.int64)
        n = int(degrees.size)
        if n == 0:
            raise ValueError("cannot build a proposal list over zero nodes")
        if int(degrees.min()) < 1:
            raise ValueError("every node must have degree >= 1")
        self.f = f
        self.implicit_first = bool(implicit_first)
        self._memo, self._kind, self._alpha = f.kernel_args()

        w = np.array([weight(f, int(d)) for d in degrees], dtype=np.float64)
        # sequential sum: the jitted builders accumulate in index order and the
        # scalar state must agree bit-for-bit across both construction paths
        total = 0.0
        for x in w:
            total += float(x)
        if total <= 0.0:
            raise ValueError("total weight is zero")
        counts = np.ceil(w * n / total).astype(np.int64)
        np.maximum(counts, 1, out=counts)

        cap_nodes = max(node_capacity or 0, n)
        self._count = np.zeros(cap_nodes, dtype=np.int64)
        self._deg = np.zeros(cap_nodes, dtype=np.int64)
        self._count[:n] = counts
        self._deg[:n] = degrees

        extra = counts - 1 if self.implicit_first else counts
        size = int(extra.sum())
        self._entries = np.full(max(2 * size + 16, 64), -1, dtype=np.int64)
        self._entries[:size] = np.repeat(np.arange(n, dtype=np.int64), extra)

        self._ist = np.array([size, n], dtype=np.int64)
        self._fst = np.array([total, total / n], dtype=np.float64)

    @classmethod
    def build(
        cls,
        g: Graph,
        f: WeightFunction,
        implicit_first: bool = True,
        node_capacity: int | None = None,
    ) -> "ProposalList":
        """Construct from a graph's current degrees."""
        return cls(g.degrees, f, implicit_first=implicit_first, node_capacity=node_capacity)

    # -- read access -------------------------------------------------------

    @property
    def node_count(self) -> int:
        return int(self._ist[I_N])

    @property
    def explicit_entries(self) -> int:
        return int(self._ist[I_SIZE])

    @property
    def implicit_entries(self) -> int:
        return self.node_count if self.implicit_first else 0

    @property
    def total_entries(self) -> int:
        return self.explicit_entries + self.implicit_entries

    @property
    def total_weight(self) -> float:
        return float(self._fst[F_W])

    @property
    def accept_bound(self) -> float:
        return float(self._fst[F_U])

    def count(self, v: int) -> int:
        return int(self._count[v])

    def degree(self, v: int) -> int:
        return int(self._deg[v])

    def stats(self) -> ProposalStats:
        return ProposalStats(
            explicit_entries=self.explicit_entries,
            implicit_entries=self.implicit_entries,
            total_weight=self.total_weight,
            node_count=self.node_count,
            accept_bound=self.accept_bound,
        )

    # -- mutation ----------------------------------------------------------

    def sample(self, rng: RandomSource) -> int:
        """Draw one host with probability f(d_h) / W."""
        v, _ = _draw(
            self._entries,
            self._ist[I_SIZE],
            self._ist[I_N],
            self._count,
            self._deg,
            self._fst[F_U],
            self.implicit_first,
            self._memo,
            self._kind,
            self._alpha,
            rng.kernel_state(),
        )
        return int(v)

    def sample_counts(self, rng: RandomSource, draws: int) -> tuple[np.ndarray, int]:
        """Draw many hosts; returns (per-node counts, total proposals)."""
        out = np.zeros(self.node_count, dtype=np.int64)
        props = _bulk_draw(
            self._entries,
            self._ist,
            self._fst,
            self._count,
            self._deg,
            self.implicit_first,
            self._memo,
            self._kind,
            self._alpha,
            rng.kernel_state(),
            draws,
            out,
        )
        return out, int(props)

    def insert_node(self, v: int, d: int) -> None:
        """Add a new node; ids must stay dense, so ``v`` is the next id."""
        n = self.node_count
        if v != n:
            if 0 <= v < n:
                raise ValueError(f"node {v} is already present")
            raise ValueError(f"node ids must be dense; expected {n}, got {v}")
        if d < 1:
            raise ValueError("initial degree must be >= 1")
        if v >= self._count.size:
            grow = max(2 * self._count.size, v + 1)
            for name in ("_count", "_deg"):
                arr = np.zeros(grow, dtype=np.int64)
                arr[: getattr(self, name).size] = getattr(self, name)
                setattr(self, name, arr)
        self._call_append(_insert_node, v, d, self.implicit_first)

    def increment_host(self, h: int) -> None:
        """Account one new edge endpoint at node ``h``."""
        if not (0 <= h < self.node_count):
            raise ValueError(f"unknown node {h}")
        self._call_append(_increment_host, h)

    def _call_append(self, kernel, *args) -> None:
        r = kernel(
            self._entries,
            self._ist,
            self._fst,
            self._count,
            self._deg,
            *args,
            self._memo,
            self._kind,
            self._alpha,
        )
        if r < 0:
            self._entries = _grow_entries(self._entries, self.explicit_entries, -r)
            r = kernel(
                self._entries,
                self._ist,
                self._fst,
                self._count,
                self._deg,
                *args,
                self._memo,
                self._kind,
                self._alpha,
            )
            assert r >= 0

    # -- full-scan checks (test support) ------------------------------------

    def recomputed_weight(self) -> float:
        n = self.node_count
        return float(sum(weight(self.f, int(d)) for d in self._deg[:n]))

    def recomputed_entry_total(self) -> int:
        return int(self._count[: self.node_count].sum())

    def max_entry_weight(self) -> float:
        n = self.node_count
        w = np.array([weight(self.f, int(d)) for d in self._deg[:n]])
        return float((w / self._count[:n]).max())

    def explicit_entry_histogram(self) -> np.ndarray:
        """Count explicit entries per node by scanning the raw array."""
        size = self.explicit_entries
        return np.bincount(self._entries[:size], minlength=self.node_count)


def build(g: Graph, f: WeightFunction, implicit_first: bool = True) -> ProposalList:
    """Module-level alias for :meth:`ProposalList.build`."""
    return ProposalList.build(g, f, implicit_first=implicit_first)
