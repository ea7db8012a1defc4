"""Time every kernel under both backends on batch-sized inputs.

    python benchmarks/bench_kernels.py [--graphs 32] [--repeat 200]

Inputs mimic a training minibatch of synthetic family graphs plus a denser
random batch, where the edge-pair tables are larger.
"""

import argparse
import itertools
import timeit

import numpy as np

from nearnet import kernels
from nearnet.graph import Graph
from nearnet.layers import GraphBatch
from nearnet.synth import SamplerConfig, sample_dataset


def dense_batch(rng, count, n=30, p=0.3):
    graphs = []
    for _ in range(count):
        pairs = [e for e in itertools.combinations(range(n), 2) if rng.random() < p]
        graphs.append(Graph.from_edges(n, pairs))
    return GraphBatch(graphs)


def cases(batch, rng, width):
    H = rng.normal(size=(batch.num_nodes, width))
    G = rng.normal(size=H.shape)
    n = batch.num_nodes
    scale, shift = rng.uniform(0.5, 2, width), rng.normal(size=width)
    bn = kernels.NUMPY_KERNELS["batchnorm_train"](H, scale, shift, 1e-5)
    g = batch.graphs[0]
    indptr, indices = g.csr
    return {
        "scatter_rows": (batch.dst, batch.src, H, n),
        "scatter_rows_weighted": (batch.rd_center, batch.rd_member, batch.rd_weight, H, n),
        "near_max": (batch.near_center, batch.near_u, batch.near_z, H, n),
        "near_max_backward": (batch.near_center, batch.near_u, batch.near_z, H, G),
        "near_prod": (batch.near_center, batch.near_u, batch.near_z, H, n),
        "near_prod_backward": (batch.near_center, batch.near_u, batch.near_z, H, G),
        "batchnorm_train": (H, scale, shift, 1e-5),
        "batchnorm_backward": (G, bn[1], bn[4], scale, True),
        "triangles": (indptr, indices),
    }


def run(label, batch, rng, width, repeat):
    print(f"\n{label}: {batch.num_graphs} graphs, {batch.num_nodes} nodes, "
          f"{len(batch.near_center)} neighborhood edges, width {width}")
    print(f"{'kernel':<24}{'numba us':>12}{'numpy us':>12}{'speedup':>10}")
    for name, args in cases(batch, rng, width).items():
        nb, npy = kernels.NUMBA_KERNELS[name], kernels.NUMPY_KERNELS[name]
        nb(*args)  # compile outside the timing
        t_nb = min(timeit.repeat(lambda: nb(*args), number=repeat, repeat=3)) / repeat * 1e6
        t_np = min(timeit.repeat(lambda: npy(*args), number=repeat, repeat=3)) / repeat * 1e6
        print(f"{name:<24}{t_nb:>12.1f}{t_np:>12.1f}{t_np / t_nb:>9.1f}x")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--graphs", type=int, default=32)
    ap.add_argument("--width", type=int, default=32)
    ap.add_argument("--repeat", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    rng = np.random.default_rng(args.seed)
    fam = GraphBatch([fg.graph for fg in sample_dataset(SamplerConfig(args.graphs, 2.0, args.seed))])
    run("family minibatch", fam, rng, args.width, args.repeat)
    run("dense random minibatch", dense_batch(rng, args.graphs), rng, args.width, args.repeat)


if __name__ == "__main__":
    main()
