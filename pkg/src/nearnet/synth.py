"""The black/white adversarial graph family and its toy labelling tasks.

Every member has 2N black nodes of degree 3 (two white neighbors and one
black partner) and 2N white nodes of degree 2 (two black neighbors).  All
black nodes look alike to any 1-hop aggregator, and so do all white nodes,
while triangle counts and cycle lengths vary from graph to graph.

Node numbering: black nodes are ``0 .. 2N-1`` with partners ``(2k, 2k+1)``,
white nodes are ``2N .. 4N-1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .graph import Graph, cycle_basis, global_clustering_coefficient

BLACK = 0
WHITE = 1


@dataclass(frozen=True)
class FamilyGraph:
    graph: Graph
    colors: np.ndarray
    n_param: int

    @classmethod
    def from_graph(cls, graph: Graph, n_param: int) -> "FamilyGraph":
        """Attach colors using the standard numbering (first half black)."""
        colors = np.full(graph.num_nodes, WHITE, dtype=np.int8)
        colors[: min(2 * n_param, graph.num_nodes)] = BLACK
        return cls(graph, colors, n_param)


@dataclass
class GeneratorState:
    """Pending white-node slots: ``pending[b]`` copies of black node b (0, 1 or 2)."""

    pending: np.ndarray
    next_white: int
    rng: np.random.Generator

    @property
    def size(self) -> int:
        return int(self.pending.sum())

    def take(self, values) -> None:
        for b in values:
            if self.pending[b] <= 0:
                raise RuntimeError(f"black node {b} has no free slot")
            self.pending[b] -= 1


@dataclass(frozen=True)
class SamplerConfig:
    count: int = 1000
    poisson_mean: float = 2.0
    seed: int = 0

    def __post_init__(self):
        if self.count < 1:
            raise ValueError("count must be >= 1")
        if not self.poisson_mean > 0:
            raise ValueError("poisson_mean must be > 0")


def _terminal_pairs(pending: np.ndarray, rng: np.random.Generator) -> list[tuple[int, int]]:
    """Split the last four slots between the two remaining white nodes."""
    values = np.repeat(np.arange(len(pending)), pending)
    distinct, counts = np.unique(values, return_counts=True)
    if len(distinct) == 2:
        # {p, p, q, q}
        p, q = (int(x) for x in distinct)
        return [(p, q), (p, q)]
    if len(distinct) == 3:
        # {p, p, q, r}: the doubled value goes to both whites
        p = int(distinct[counts == 2][0])
        q, r = (int(x) for x in distinct[counts == 1])
        return [(p, q), (p, r)]
    perm = rng.permutation(values)
    return [tuple(sorted((int(perm[0]), int(perm[1])))), tuple(sorted((int(perm[2]), int(perm[3]))))]


def generate_family_graph(n: int, rng: np.random.Generator) -> FamilyGraph:
    """Random member of the family with ``4n`` nodes and ``5n`` edges."""
    if n < 1:
        raise ValueError(f"n must be a positive integer, got {n}")
    n_black = 2 * n
    edges = [(2 * k, 2 * k + 1) for k in range(n)]
    state = GeneratorState(np.full(n_black, 2, dtype=np.int64), n_black, rng)

    while state.size > 4:
        support = np.flatnonzero(state.pending)
        pair = rng.choice(support, size=2, replace=False)
        state.take(pair)
        w = state.next_white
        edges += [(int(pair[0]), w), (int(pair[1]), w)]
        state.next_white += 1

    for pair in _terminal_pairs(state.pending, rng):
        state.take(pair)
        w = state.next_white
        edges += [(pair[0], w), (pair[1], w)]
        state.next_white += 1

    colors = np.concatenate([np.full(n_black, BLACK, np.int8), np.full(n_black, WHITE, np.int8)])
    return FamilyGraph(Graph.from_edges(4 * n, edges), colors, n)


def verify_family(fg: FamilyGraph) -> list[str]:
    """All violated membership conditions; an empty list means the graph passes."""
    g, n = fg.graph, fg.n_param
    colors = np.asarray(fg.colors)
    problems = []
    if g.num_nodes != 4 * n:
        problems.append(f"|V| = {g.num_nodes} != 4N = {4 * n}")
    if g.num_edges != 5 * n:
        problems.append(f"|E| = {g.num_edges} != 5N = {5 * n}")
    if len(colors) != g.num_nodes:
        problems.append(f"{len(colors)} colors for {g.num_nodes} nodes")
        return problems
    n_black = int(np.sum(colors == BLACK))
    n_white = int(np.sum(colors == WHITE))
    if n_black != 2 * n:
        problems.append(f"{n_black} black nodes != 2N = {2 * n}")
    if n_white != 2 * n:
        problems.append(f"{n_white} white nodes != 2N = {2 * n}")

    found = set()
    for v in range(g.num_nodes):
        nbr_colors = colors[g.neighbors(v)]
        blacks = int(np.sum(nbr_colors == BLACK))
        whites = int(np.sum(nbr_colors == WHITE))
        if colors[v] == WHITE:
            if not (blacks == 2 and whites == 0):
                found.add("white node not connected to exactly two black nodes")
        else:
            if blacks != 1:
                found.add("black node lacks black neighbor" if blacks == 0 else "black node has more than one black neighbor")
            if whites != 2:
                found.add("black node not connected to exactly two white nodes")
    problems.extend(sorted(found))
    return problems


def poisson_knuth(lam: float, rng: np.random.Generator) -> int:
    """Knuth's multiplication method; one uniform per unit of the result plus one."""
    limit = math.exp(-lam)
    k = 0
    p = rng.random()
    while p > limit:
        k += 1
        p *= rng.random()
    return k


def sample_dataset(cfg: SamplerConfig) -> list[FamilyGraph]:
    """``cfg.count`` graphs, each with N = 1 + Poisson(mean) on its own substream."""
    streams = np.random.SeedSequence(cfg.seed).spawn(cfg.count)
    out = []
    for ss in streams:
        rng = np.random.Generator(np.random.PCG64(ss))
        n = 1 + poisson_knuth(cfg.poisson_mean, rng)
        out.append(generate_family_graph(n, rng))
    return out


def label_artfcc(g: Graph, threshold: float = 0.2) -> int:
    return int(global_clustering_coefficient(g) >= threshold)


def label_artfcycle6(g: Graph) -> int:
    return int(any(len(c) >= 6 for c in cycle_basis(g)))


LABELERS = {"artfcc": label_artfcc, "artfcycle6": label_artfcycle6}


def initial_features(fg: FamilyGraph) -> np.ndarray:
    """One-hot color rows: black -> (1, 0), white -> (0, 1)."""
    colors = np.asarray(fg.colors, dtype=np.int64)
    H = np.zeros((len(colors), 2))
    H[np.arange(len(colors)), colors] = 1.0
    return H
