import itertools

import numpy as np

from nearnet.graph import Graph


def random_graph(rng, n=None, p=None):
    n = int(rng.integers(1, 16)) if n is None else n
    p = float(rng.uniform(0.1, 0.8)) if p is None else p
    pairs = [(a, b) for a, b in itertools.combinations(range(n), 2) if rng.random() < p]
    return Graph.from_edges(n, pairs)


def complete_graph(n):
    return Graph.from_edges(n, itertools.combinations(range(n), 2))


def path_graph(n):
    return Graph.from_edges(n, [(i, i + 1) for i in range(n - 1)])


def cycle_graph(n):
    return Graph.from_edges(n, [(i, (i + 1) % n) for i in range(n)])


def star_graph(leaves):
    return Graph.from_edges(leaves + 1, [(0, i) for i in range(1, leaves + 1)])


def random_tree(rng, n):
    return Graph.from_edges(n, [(int(rng.integers(0, i)), i) for i in range(1, n)])


# edges {1-2, 1-3, 2-3, 1-4, 2-4} written 0-based
PROP1_N1 = Graph.from_edges(4, [(0, 1), (0, 2), (1, 2), (0, 3), (1, 3)])


def brute_inner_edges(g, v):
    A = g.adjacency
    members = [u for u in range(g.num_nodes) if A[u, v]]
    return [(u, z) for u, z in itertools.combinations(members, 2) if A[u, z]]


def brute_triangles(g):
    A = g.adjacency
    return sum(1 for a, b, c in itertools.combinations(range(g.num_nodes), 3) if A[a, b] and A[b, c] and A[a, c])


def permute_graph(g, perm):
    """Relabel node i as perm[i]."""
    perm = np.asarray(perm)
    return Graph(g.num_nodes, perm[g.edges] if g.num_edges else g.edges)
