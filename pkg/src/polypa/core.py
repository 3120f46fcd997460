"""Model types, seed-graph construction, weight functions, and serialization.

Node ids are dense integers: the seed graph owns ids ``0..n0-1`` and the
i-th added node is ``n0 + i - 1``.  Degrees are therefore plain arrays and a
node's first proposal-list entry can be addressed by id arithmetic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .rng import RandomSource

__all__ = [
    "TEXT",
    "BINARY",
    "ParseError",
    "WeightFunction",
    "Graph",
    "SeedSpec",
    "GenConfig",
    "RandomSource",
    "weight",
    "make_seed_graph",
    "degree_histogram",
    "write_edges",
    "read_edges",
]

TEXT = "text"
BINARY = "binary"

# Kernel codes for weight functions: beyond the memo array, 0 keeps evaluating
# d**alpha, 1 extends the last tabulated value, 2 is out of domain.
KIND_POLYNOMIAL = 0
KIND_TABLE_EXTEND = 1
KIND_TABLE_ERROR = 2

# Degrees below this bound get precomputed polynomial weights.
POLY_MEMO_LIMIT = 1024


class ParseError(ValueError):
    """Malformed edge-list input; carries the offending line or byte offset."""

    def __init__(self, message: str, line: int | None = None, offset: int | None = None):
        where = ""
        if line is not None:
            where = f" (line {line})"
        elif offset is not None:
            where = f" (offset {offset})"
        super().__init__(message + where)
        self.line = line
        self.offset = offset


@dataclass(frozen=True)
class WeightFunction:
    """Host-weight function f(d): polynomial d**alpha or a tabulated sequence.

    Tabulated values are indexed by degree starting at 1.  Past the end of the
    table either the last value is extended (default) or lookups are an error.
    """

    kind: str  # "polynomial" | "table"
    alpha: float = 1.0
    values: np.ndarray | None = None
    tail: str = "extend"

    @staticmethod
    def polynomial(alpha: float) -> "WeightFunction":
        alpha = float(alpha)
        if not math.isfinite(alpha) or alpha < 0.0:
            raise ValueError(f"alpha must be a finite non-negative real, got {alpha}")
        return WeightFunction(kind="polynomial", alpha=alpha)

    @staticmethod
    def table(values, tail: str = "extend") -> "WeightFunction":
        vals = np.asarray(values, dtype=np.float64)
        if vals.ndim != 1 or vals.size == 0:
            raise ValueError("table needs a non-empty 1-d value sequence")
        if not np.all(np.isfinite(vals)) or np.any(vals < 0.0):
            raise ValueError("table values must be finite and non-negative")
        if tail not in ("extend", "error"):
            raise ValueError(f"unknown tail rule {tail!r}")
        vals = vals.copy()
        vals.setflags(write=False)
        return WeightFunction(kind="table", alpha=float("nan"), values=vals, tail=tail)

    @property
    def is_polynomial(self) -> bool:
        return self.kind == "polynomial"

    @property
    def is_non_decreasing(self) -> bool:
        """Required by the rejection-sampling generators."""
        if self.is_polynomial:
            return True  # alpha >= 0
        return bool(np.all(np.diff(self.values) >= 0.0))

    def __call__(self, d: int) -> float:
        return weight(self, d)

    def kernel_args(self) -> tuple[np.ndarray, int, float]:
        """(memo, kind code, alpha) triple consumed by the jitted kernels.

        ``memo[d]`` holds f(d) for all memoized degrees; index 0 is 0.0 and is
        never a live degree.
        """
        if self.is_polynomial:
            # scalar pow, not numpy's vectorized pow: memoized values must be
            # bit-identical to runtime float(d) ** alpha evaluations
            memo = np.array(
                [0.0] + [float(d) ** self.alpha for d in range(1, POLY_MEMO_LIMIT)],
                dtype=np.float64,
            )
            return memo, KIND_POLYNOMIAL, self.alpha
        memo = np.empty(self.values.size + 1, dtype=np.float64)
        memo[0] = 0.0
        memo[1:] = self.values
        code = KIND_TABLE_EXTEND if self.tail == "extend" else KIND_TABLE_ERROR
        return memo, code, 0.0


def weight(f: WeightFunction, d: int) -> float:
    """Evaluate f(d) for an integer degree d >= 0."""
    d = int(d)
    if d < 0:
        raise ValueError("degree must be non-negative")
    if f.is_polynomial:
        if d == 0:
            return 0.0
        return float(d) ** f.alpha
    if d == 0:
        return 0.0
    if d <= f.values.size:
        return float(f.values[d - 1])
    if f.tail == "extend":
        return float(f.values[-1])
    raise ValueError(f"degree {d} is beyond the {f.values.size}-entry weight table")


@dataclass
class Graph:
    """Growable simple graph: a seed prefix plus edges appended by generation.

    ``edges`` is an ``(m, 2)`` int64 array.  Seed edges come first in their
    construction order; generated edges follow in generation order with the
    newer endpoint stored first.
    """

    n0: int
    m0: int
    n: int
    edges: np.ndarray
    degrees: np.ndarray

    @property
    def m(self) -> int:
        return int(self.edges.shape[0])

    @property
    def added_nodes(self) -> int:
        return self.n - self.n0

    def __eq__(self, other) -> bool:
        if not isinstance(other, Graph):
            return NotImplemented
        return (
            self.n == other.n
            and self.edges.shape == other.edges.shape
            and bool(np.array_equal(self.edges, other.edges))
        )

    def copy(self) -> "Graph":
        return Graph(self.n0, self.m0, self.n, self.edges.copy(), self.degrees.copy())

    def validate(self) -> None:
        """Check structural invariants; raises on violation (test support)."""
        if self.edges.shape != (self.m, 2):
            raise AssertionError("edge array shape")
        if self.m and (self.edges.min() < 0 or self.edges.max() >= self.n):
            raise AssertionError("edge endpoint out of range")
        if np.any(self.edges[:, 0] == self.edges[:, 1]):
            raise AssertionError("self-loop")
        deg = np.bincount(self.edges.ravel(), minlength=self.n).astype(np.int64)
        if not np.array_equal(deg, self.degrees):
            raise AssertionError("degree array out of sync")
        # each generated node has distinct hosts
        gen = self.edges[self.m0:]
        if gen.shape[0] > 1:
            order = np.lexsort((gen[:, 1], gen[:, 0]))
            pairs = gen[order]
            same = np.all(np.diff(pairs, axis=0) == 0, axis=1)
            if bool(same.any()):
                raise AssertionError("a generated node repeats a host")


def graph_from_edges(edges: np.ndarray, n0: int | None = None, m0: int | None = None) -> Graph:
    """Build a graph whose edges are all part of the seed unless stated."""
    edges = np.ascontiguousarray(np.asarray(edges, dtype=np.int64).reshape(-1, 2))
    n = int(edges.max()) + 1 if edges.size else 0
    if n0 is None:
        n0 = n
    n = max(n, n0)
    if m0 is None:
        m0 = edges.shape[0]
    degrees = np.bincount(edges.ravel(), minlength=n).astype(np.int64)
    return Graph(n0=n0, m0=m0, n=n, edges=edges, degrees=degrees)


@dataclass(frozen=True)
class SeedSpec:
    """Seed-graph description: ring, 1-regular matching, or an edge file."""

    kind: str  # "ring" | "one_regular" | "file"
    n0: int = 0
    path: str | None = None

    @staticmethod
    def ring(n0: int) -> "SeedSpec":
        return SeedSpec(kind="ring", n0=int(n0))

    @staticmethod
    def one_regular(n0: int) -> "SeedSpec":
        return SeedSpec(kind="one_regular", n0=int(n0))

    @staticmethod
    def from_edge_file(path) -> "SeedSpec":
        return SeedSpec(kind="file", path=str(path))


def make_seed_graph(spec: SeedSpec) -> Graph:
    """Materialize a seed graph from its spec."""
    if spec.kind == "ring":
        n0 = spec.n0
        if n0 < 3:
            raise ValueError(f"ring seed needs n0 >= 3, got {n0}")
        ids = np.arange(n0, dtype=np.int64)
        edges = np.column_stack([ids, (ids + 1) % n0])
        return graph_from_edges(edges, n0=n0)
    if spec.kind == "one_regular":
        n0 = spec.n0
        if n0 < 2 or n0 % 2:
            raise ValueError(f"1-regular seed needs even n0 >= 2, got {n0}")
        left = np.arange(0, n0, 2, dtype=np.int64)
        edges = np.column_stack([left, left + 1])
        return graph_from_edges(edges, n0=n0)
    if spec.kind == "file":
        with open(spec.path, "rb") as fh:
            data = fh.read()
        g = read_edges(data, TEXT)
        _check_seed_simple(g)
        return g
    raise ValueError(f"unknown seed spec kind {spec.kind!r}")


def _check_seed_simple(g: Graph) -> None:
    if np.any(g.edges[:, 0] == g.edges[:, 1]):
        raise ValueError("seed graph contains a self-loop")
    norm = np.sort(g.edges, axis=1)
    if np.unique(norm, axis=0).shape[0] != norm.shape[0]:
        raise ValueError("seed graph contains a duplicate edge")


@dataclass(frozen=True)
class GenConfig:
    """Generation request: add N nodes with ell hosts each under weight f."""

    N: int
    ell: int
    f: WeightFunction
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.N < 0:
            raise ValueError("N must be non-negative")
        if self.ell < 1:
            raise ValueError("ell must be at least 1")
        if self.workers < 1:
            raise ValueError("workers must be at least 1")


def check_generation_inputs(seed_graph: Graph, cfg: GenConfig) -> None:
    """Shared generator preconditions (hosts-per-node bound, live degrees)."""
    if cfg.ell > seed_graph.n0:
        raise ValueError(f"ell={cfg.ell} exceeds seed node count n0={seed_graph.n0}")
    if seed_graph.n != seed_graph.n0:
        raise ValueError("seed graph must not contain generated nodes")
    if seed_graph.n0 and int(seed_graph.degrees[: seed_graph.n0].min()) < 1:
        raise ValueError("seed graph contains a degree-0 node")


def degree_histogram(g: Graph) -> dict[int, int]:
    """Map degree -> node count."""
    counts = np.bincount(g.degrees)
    return {int(d): int(c) for d, c in enumerate(counts) if c}


def write_edges(g: Graph, fmt: str = TEXT) -> bytes:
    """Serialize the edge list; the inverse of :func:`read_edges`."""
    if fmt == TEXT:
        if g.m == 0:
            return b""
        pairs = g.edges.tolist()
        return ("\n".join(f"{u} {v}" for u, v in pairs) + "\n").encode("ascii")
    if fmt == BINARY:
        return np.ascontiguousarray(g.edges, dtype="<u8").tobytes()
    raise ValueError(f"unknown format {fmt!r}")


def read_edges(data: bytes, fmt: str = TEXT) -> Graph:
    """Parse an edge list; node count is inferred as max id + 1."""
    if fmt == TEXT:
        rows: list[tuple[int, int]] = []
        for lineno, raw in enumerate(data.decode("utf-8", errors="replace").splitlines(), 1):
            line = raw.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ParseError(f"expected 'u v', got {raw!r}", line=lineno)
            try:
                u, v = int(parts[0]), int(parts[1])
            except ValueError:
                raise ParseError(f"non-integer endpoint in {raw!r}", line=lineno) from None
            if u < 0 or v < 0:
                raise ParseError("negative node id", line=lineno)
            rows.append((u, v))
        edges = np.array(rows, dtype=np.int64).reshape(-1, 2)
        return graph_from_edges(edges)
    if fmt == BINARY:
        if len(data) % 16:
            raise ParseError("binary edge list length is not a multiple of 16", offset=len(data))
        words = np.frombuffer(data, dtype="<u8")
        if words.size and int(words.max()) >= (1 << 63):
            raise ParseError("node id exceeds signed 64-bit range", offset=0)
        return graph_from_edges(words.astype(np.int64).reshape(-1, 2))
    raise ValueError(f"unknown format {fmt!r}")
