"""Undirected simple graphs and the structural primitives built on them."""

from __future__ import annotations

from collections import Counter, deque
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Hashable, Iterable

import numpy as np

from . import kernels


class GraphError(ValueError):
    """Raised when edges violate the simple-graph invariants."""


def _canonical_edges(edges) -> np.ndarray:
    arr = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    arr = np.sort(arr, axis=1)
    order = np.lexsort((arr[:, 1], arr[:, 0]))
    return arr[order]


def simplify_edges(pairs) -> tuple[np.ndarray, int]:
    """Drop self-loops and duplicate (in either orientation) pairs.

    Returns the canonical edge array and the number of dropped pairs.
    """
    arr = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    keep = arr[:, 0] != arr[:, 1]
    arr = np.sort(arr[keep], axis=1)
    uniq = np.unique(arr, axis=0) if len(arr) else arr
    return _canonical_edges(uniq), int(len(keep) - len(uniq))


@dataclass(frozen=True, eq=False)
class Graph:
    """Immutable undirected simple graph on nodes ``0 .. num_nodes-1``.

    ``edges`` is stored canonically: each pair as ``(u, v)`` with ``u < v``,
    rows sorted lexicographically.  Construction fails on self-loops,
    duplicates or out-of-range endpoints; use :func:`simplify_edges` first
    for dirty input.
    """

    num_nodes: int
    edges: np.ndarray = field(repr=False)

    def __post_init__(self):
        n = int(self.num_nodes)
        if n < 0:
            raise GraphError("num_nodes must be non-negative")
        edges = _canonical_edges(self.edges)
        if len(edges):
            if edges.min() < 0 or edges.max() >= n:
                raise GraphError(f"edge endpoint out of range for {n} nodes")
            if np.any(edges[:, 0] == edges[:, 1]):
                raise GraphError("self-loops are not allowed")
            if np.any(np.all(edges[1:] == edges[:-1], axis=1)):
                raise GraphError("duplicate edges are not allowed")
        edges.setflags(write=False)
        object.__setattr__(self, "num_nodes", n)
        object.__setattr__(self, "edges", edges)

    @classmethod
    def from_edges(cls, num_nodes: int, edges: Iterable[tuple[int, int]]) -> "Graph":
        return cls(num_nodes, np.asarray(list(edges), dtype=np.int64).reshape(-1, 2))

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def __eq__(self, other):
        if not isinstance(other, Graph):
            return NotImplemented
        return self.num_nodes == other.num_nodes and np.array_equal(self.edges, other.edges)

    def __hash__(self):
        return hash((self.num_nodes, self.edges.tobytes()))

    @cached_property
    def csr(self) -> tuple[np.ndarray, np.ndarray]:
        """(indptr, indices) with ascending neighbor lists."""
        n = self.num_nodes
        src = np.concatenate([self.edges[:, 0], self.edges[:, 1]])
        dst = np.concatenate([self.edges[:, 1], self.edges[:, 0]])
        order = np.lexsort((dst, src))
        indices = dst[order].astype(np.int64)
        counts = np.bincount(src, minlength=n) if n else np.zeros(0, dtype=np.int64)
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(counts, out=indptr[1:])
        return indptr, indices

    @cached_property
    def adjacency(self) -> np.ndarray:
        """Dense symmetric boolean adjacency matrix."""
        adj = np.zeros((self.num_nodes, self.num_nodes), dtype=bool)
        adj[self.edges[:, 0], self.edges[:, 1]] = True
        adj[self.edges[:, 1], self.edges[:, 0]] = True
        adj.setflags(write=False)
        return adj

    @cached_property
    def degrees(self) -> np.ndarray:
        return np.diff(self.csr[0])

    def neighbors(self, v: int) -> np.ndarray:
        indptr, indices = self.csr
        return indices[indptr[v] : indptr[v + 1]]

    @cached_property
    def triangles(self) -> np.ndarray:
        """(T, 3) array of triangles ``a < b < c``, sorted."""
        indptr, indices = self.csr
        return np.asarray(kernels.triangles(indptr, indices), dtype=np.int64).reshape(-1, 3)

    @cached_property
    def neighborhood_edge_table(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Flattened E_{N_v} for every v as parallel arrays ``(center, u, z)``.

        A triangle ``{a, b, c}`` contributes the inner edge ``(b, c)`` to
        ``N_a``, ``(a, c)`` to ``N_b`` and ``(a, b)`` to ``N_c``.  Rows are
        sorted by center, then by the edge.
        """
        t = self.triangles
        center = np.concatenate([t[:, 0], t[:, 1], t[:, 2]])
        u = np.concatenate([t[:, 1], t[:, 0], t[:, 0]])
        z = np.concatenate([t[:, 2], t[:, 2], t[:, 1]])
        order = np.lexsort((z, u, center))
        return center[order], u[order], z[order]

    @cached_property
    def restricted_degree_table(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Directed pairs ``(v, i, d_i|_{N_v})`` for every i in N_v with a nonzero count."""
        center, u, z = self.neighborhood_edge_table
        v = np.concatenate([center, center])
        i = np.concatenate([u, z])
        if len(v) == 0:
            empty = np.zeros(0, dtype=np.int64)
            return empty, empty, np.zeros(0)
        pairs, counts = np.unique(np.stack([v, i], axis=1), axis=0, return_counts=True)
        return pairs[:, 0], pairs[:, 1], counts.astype(np.float64)


class Multiset:
    """Finite multiset; equality ignores element order."""

    def __init__(self, elements: Iterable[Hashable] = ()):
        self._counts = Counter(elements)

    @property
    def support(self) -> set:
        return set(self._counts)

    def multiplicity(self, x) -> int:
        return self._counts.get(x, 0)

    def elements(self) -> list:
        return sorted(self._counts.elements())

    def __len__(self):
        return sum(self._counts.values())

    def __eq__(self, other):
        if not isinstance(other, Multiset):
            return NotImplemented
        return self._counts == other._counts

    def __repr__(self):
        return f"Multiset({self.elements()!r})"


@dataclass(frozen=True)
class NeighborhoodView:
    center: int
    members: tuple[int, ...]
    inner_edges: tuple[tuple[int, int], ...]


def neighborhood(g: Graph, v: int) -> NeighborhoodView:
    if not 0 <= v < g.num_nodes:
        raise IndexError(f"node {v} out of range for graph with {g.num_nodes} nodes")
    members = tuple(int(u) for u in g.neighbors(v))
    member_set = set(members)
    inner = tuple(
        (int(a), int(b))
        for a, b in g.edges
        if int(a) in member_set and int(b) in member_set
    )
    return NeighborhoodView(v, members, inner)


def restricted_degree(view: NeighborhoodView, i: int) -> int:
    """Number of members of ``view`` adjacent to ``i`` inside the neighborhood."""
    if i not in view.members:
        raise ValueError(f"node {i} is not in the neighborhood of {view.center}")
    return sum(1 for a, b in view.inner_edges if a == i or b == i)


def triangle_count(g: Graph) -> int:
    return len(g.triangles)


def connected_triples(g: Graph) -> int:
    d = g.degrees.astype(np.int64)
    return int(np.sum(d * (d - 1) // 2))


def global_clustering_coefficient(g: Graph) -> float:
    """Transitivity: 3 * triangles / connected triples, 0 when there are no triples."""
    triples = connected_triples(g)
    if triples == 0:
        return 0.0
    return 3.0 * triangle_count(g) / triples


def connected_components(g: Graph) -> int:
    parent = list(range(g.num_nodes))

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for a, b in g.edges:
        ra, rb = find(int(a)), find(int(b))
        if ra != rb:
            parent[max(ra, rb)] = min(ra, rb)
    return sum(1 for x in range(g.num_nodes) if find(x) == x)


def cycle_basis(g: Graph) -> list[list[int]]:
    """Fundamental cycle basis of a BFS spanning forest.

    Each component is rooted at its smallest node and neighbors are visited
    in ascending order, so the basis is a deterministic function of the
    graph.  One cycle per non-tree edge, in canonical edge order; each cycle
    starts at the non-tree edge's first endpoint and walks through the tree.
    """
    n = g.num_nodes
    parent = np.full(n, -1, dtype=np.int64)
    depth = np.full(n, -1, dtype=np.int64)
    for root in range(n):
        if depth[root] >= 0:
            continue
        depth[root] = 0
        queue = deque([root])
        while queue:
            x = queue.popleft()
            for y in g.neighbors(x):
                if depth[y] < 0:
                    depth[y] = depth[x] + 1
                    parent[y] = x
                    queue.append(int(y))

    cycles = []
    for a, b in g.edges:
        a, b = int(a), int(b)
        if parent[a] == b or parent[b] == a:
            continue
        left, right = [a], [b]
        x, y = a, b
        while depth[x] > depth[y]:
            x = int(parent[x])
            left.append(x)
        while depth[y] > depth[x]:
            y = int(parent[y])
            right.append(y)
        while x != y:
            x = int(parent[x])
            y = int(parent[y])
            left.append(x)
            right.append(y)
        # left ends at the common ancestor; right repeats it
        cycles.append(left + right[-2::-1])
    return cycles


# ---------------------------------------------------------------------------
# plain-text edge list: "num_nodes num_edges" then one "u v" per line
# ---------------------------------------------------------------------------


def write_edge_list(g: Graph, path) -> None:
    lines = [f"{g.num_nodes} {g.num_edges}"]
    lines += [f"{a} {b}" for a, b in g.edges]
    Path(path).write_text("\n".join(lines) + "\n")


def read_edge_list(path) -> Graph:
    path = Path(path)
    rows = [ln.split() for ln in path.read_text().splitlines() if ln.strip()]
    if not rows or len(rows[0]) != 2:
        raise GraphError(f"{path}: header must be 'num_nodes num_edges'")
    n, m = int(rows[0][0]), int(rows[0][1])
    body = rows[1:]
    if len(body) != m:
        raise GraphError(f"{path}: header declares {m} edges, found {len(body)}")
    for lineno, row in enumerate(body, start=2):
        if len(row) != 2:
            raise GraphError(f"{path}:{lineno}: expected 'u v'")
    return Graph(n, np.array([[int(a), int(b)] for a, b in body], dtype=np.int64).reshape(-1, 2))
