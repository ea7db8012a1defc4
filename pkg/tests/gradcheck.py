"""Central finite differences."""

import numpy as np


def numeric_grad(f, x, idx, h=1e-5):
    out = []
    for i in idx:
        old = x.flat[i]
        x.flat[i] = old + h
        fp = f()
        x.flat[i] = old - h
        fm = f()
        x.flat[i] = old
        out.append((fp - fm) / (2 * h))
    return np.array(out)


def rel_error(a, b, floor=1e-6):
    """||a - b|| / (||a|| + ||b||); the floor keeps structurally zero gradients
    (e.g. a bias feeding batch norm) from reducing to a ratio of rounding noise."""
    a, b = np.asarray(a), np.asarray(b)
    denom = max(np.linalg.norm(a) + np.linalg.norm(b), floor)
    return float(np.linalg.norm(a - b) / denom)


def sample_indices(rng, size, k=6):
    return rng.choice(size, size=min(k, size), replace=False)


def model_instance(seed, n=10, count=8):
    """A batch of random n-node graphs with continuous node features.

    Several graphs per batch keep the classifier's batch norm away from the
    two-row regime, where its output is nearly a sign function.
    """
    from helpers import random_graph
    from nearnet.layers import GraphBatch

    rng = np.random.default_rng(seed)
    gs = [random_graph(rng, n=n, p=0.45) for _ in range(count)]
    H0 = rng.normal(size=(count * n, 3))
    return GraphBatch(gs), H0, np.arange(count) % 2, rng
