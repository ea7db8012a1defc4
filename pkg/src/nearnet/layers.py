"""GIN-0 message passing with neighborhood edge aggregation (NEAR).

A layer maps node features H to

    MLP(h_v + sum_{u in N_v} h_u)                              variant "none"
    MLP(concat(h_v + sum_{u in N_v} h_u, NEAR_g(N_v, H)))      variants c/e/m/h

where NEAR_g sums g(h_u, h_z) over the edges joining two neighbors of v:
g = 1 (c), h_u + h_z (e), elementwise max (m), elementwise product (h).
The model reads every layer out (including the raw input), concatenates the
graph vectors and classifies them with a 2-layer MLP.

Batches of graphs are handled as one disjoint union (:class:`GraphBatch`);
node-level batch norm therefore pools statistics over every node in the
minibatch.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .graph import Graph, neighborhood, restricted_degree
from .nn import BatchNorm, MLP2, Module, ReLU, ShapeError, StaleCacheError

VARIANTS = ("none", "c", "e", "m", "h")
READOUTS = ("sum", "mean")
BN_SCOPES = ("batch", "graph")


@dataclass(frozen=True)
class AggregatorSpec:
    variant: str = "none"
    in_dim: int = 1

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown NEAR variant {self.variant!r}; pick one of {VARIANTS}")

    @property
    def embed_dim(self) -> int:
        if self.variant == "none":
            return 0
        return 1 if self.variant == "c" else self.in_dim


@dataclass(frozen=True)
class ModelConfig:
    num_layers: int = 5
    hidden_dim: int = 32
    variant: str = "none"
    readout: str = "sum"
    dropout: float = 0.5
    classifier_hidden: int | None = None
    mlp_batchnorm: bool = True
    layer_output_bn: bool = True
    classifier_batchnorm: bool = True
    # node-level batch norm statistics: pooled over the minibatch or per graph
    bn_scope: str = "batch"

    def __post_init__(self):
        if self.num_layers < 1:
            raise ValueError("num_layers must be >= 1")
        if self.hidden_dim < 1:
            raise ValueError("hidden_dim must be >= 1")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown NEAR variant {self.variant!r}")
        if self.readout not in READOUTS:
            raise ValueError(f"readout must be one of {READOUTS}")
        if self.bn_scope not in BN_SCOPES:
            raise ValueError(f"bn_scope must be one of {BN_SCOPES}")


class GraphBatch:
    """Disjoint union of graphs with the index tables the kernels consume."""

    def __init__(self, graphs: list[Graph]):
        if not graphs:
            raise ValueError("empty batch")
        counts = np.array([g.num_nodes for g in graphs], dtype=np.int64)
        if np.any(counts == 0):
            raise ValueError("graphs in a batch need at least one node")
        offsets = np.zeros(len(graphs) + 1, dtype=np.int64)
        np.cumsum(counts, out=offsets[1:])
        self.graphs = graphs
        self.num_graphs = len(graphs)
        self.num_nodes = int(offsets[-1])
        self.node_counts = counts
        self.offsets = offsets
        self.graph_index = np.repeat(np.arange(len(graphs)), counts)

        src, dst, cen, eu, ez, rv, ri, rw = ([] for _ in range(8))
        for g, off in zip(graphs, offsets[:-1]):
            e = g.edges + off
            src += [e[:, 0], e[:, 1]]
            dst += [e[:, 1], e[:, 0]]
            c, u, z = g.neighborhood_edge_table
            cen.append(c + off)
            eu.append(u + off)
            ez.append(z + off)
            v, i, w = g.restricted_degree_table
            rv.append(v + off)
            ri.append(i + off)
            rw.append(w)
        cat = lambda xs, dt=np.int64: np.ascontiguousarray(np.concatenate(xs).astype(dt))  # noqa: E731
        self.src, self.dst = cat(src), cat(dst)
        self.near_center, self.near_u, self.near_z = cat(cen), cat(eu), cat(ez)
        self.rd_center, self.rd_member, self.rd_weight = cat(rv), cat(ri), cat(rw, np.float64)
        # per-node |E_{N_v}|
        self.inner_edge_counts = np.bincount(self.near_center, minlength=self.num_nodes).astype(np.float64)

    @classmethod
    def single(cls, g: Graph) -> "GraphBatch":
        return cls([g])


def _as_batch(g) -> GraphBatch:
    return g if isinstance(g, GraphBatch) else GraphBatch.single(g)


def _check_rows(batch: GraphBatch, H: np.ndarray):
    if H.ndim != 2 or H.shape[0] != batch.num_nodes:
        raise ShapeError(f"feature matrix has shape {H.shape}, graph has {batch.num_nodes} nodes")


# ---------------------------------------------------------------------------
# aggregators over whole batches
# ---------------------------------------------------------------------------


def aggregate_neighbors_sum(g, H: np.ndarray) -> np.ndarray:
    """Row v = sum of the rows of v's neighbors; isolated nodes get zeros."""
    batch = _as_batch(g)
    _check_rows(batch, H)
    return kernels.scatter_rows(batch.dst, batch.src, np.ascontiguousarray(H, dtype=np.float64), batch.num_nodes)


def near_aggregate(g, H: np.ndarray, variant: str) -> np.ndarray:
    """NEAR_g(N_v, H) for every node v at once."""
    batch = _as_batch(g)
    _check_rows(batch, H)
    H = np.ascontiguousarray(H, dtype=np.float64)
    n = batch.num_nodes
    if variant == "c":
        return batch.inner_edge_counts[:, None].copy()
    if variant == "e":
        # sum_i d_i|_{N_v} h_i
        return kernels.scatter_rows_weighted(batch.rd_center, batch.rd_member, batch.rd_weight, H, n)
    if variant == "m":
        return kernels.near_max(batch.near_center, batch.near_u, batch.near_z, H, n)
    if variant == "h":
        return kernels.near_prod(batch.near_center, batch.near_u, batch.near_z, H, n)
    raise ValueError(f"no NEAR aggregation for variant {variant!r}")


def near_aggregate_backward(g, H: np.ndarray, variant: str, grad: np.ndarray) -> np.ndarray:
    batch = _as_batch(g)
    grad = np.ascontiguousarray(grad, dtype=np.float64)
    if variant == "c":
        return np.zeros_like(H)
    if variant == "e":
        # restricted-degree weights are symmetric in (v, i)
        return kernels.scatter_rows_weighted(batch.rd_member, batch.rd_center, batch.rd_weight, grad, batch.num_nodes)
    H = np.ascontiguousarray(H, dtype=np.float64)
    if variant == "m":
        return kernels.near_max_backward(batch.near_center, batch.near_u, batch.near_z, H, grad)
    if variant == "h":
        return kernels.near_prod_backward(batch.near_center, batch.near_u, batch.near_z, H, grad)
    raise ValueError(f"no NEAR aggregation for variant {variant!r}")


# ---------------------------------------------------------------------------
# single-node definitions
# ---------------------------------------------------------------------------


def near_c(g: Graph, v: int) -> int:
    """Edges inside N_v, i.e. triangles through v."""
    return len(neighborhood(g, v).inner_edges)


def near_e(g: Graph, v: int, H: np.ndarray) -> np.ndarray:
    view = neighborhood(g, v)
    out = np.zeros(H.shape[1])
    for i in view.members:
        d = restricted_degree(view, i)
        if d:
            out += d * H[i]
    return out


def _near_pairwise(g: Graph, v: int, H: np.ndarray, op) -> np.ndarray:
    if H.shape[0] != g.num_nodes:
        raise ShapeError(f"feature matrix has {H.shape[0]} rows, graph has {g.num_nodes} nodes")
    out = np.zeros(H.shape[1])
    for a, b in neighborhood(g, v).inner_edges:
        out += op(H[a], H[b])
    return out


def near_m(g: Graph, v: int, H: np.ndarray) -> np.ndarray:
    return _near_pairwise(g, v, H, np.maximum)


def near_h(g: Graph, v: int, H: np.ndarray) -> np.ndarray:
    return _near_pairwise(g, v, H, np.multiply)


# ---------------------------------------------------------------------------
# layers and model
# ---------------------------------------------------------------------------


class GNNLayer(Module):
    """One GIN-0 (+NEAR) layer: COMBINE is a 2-layer MLP, optionally followed by BN + ReLU."""

    def __init__(
        self,
        in_dim: int,
        hidden_dim: int,
        variant: str,
        rng: np.random.Generator,
        mlp_batchnorm: bool = True,
        output_bn: bool = True,
        bn_scope: str = "batch",
    ):
        super().__init__()
        self.bn_scope = bn_scope
        self.spec = AggregatorSpec(variant, in_dim)
        self.in_dim = in_dim
        self.children["mlp"] = MLP2(in_dim + self.spec.embed_dim, hidden_dim, hidden_dim, rng, batchnorm=mlp_batchnorm)
        if output_bn:
            self.children["bn"] = BatchNorm(hidden_dim)
            self.out_relu = ReLU()

    def forward(self, batch: GraphBatch, H: np.ndarray, train: bool) -> np.ndarray:
        if H.shape[1] != self.in_dim:
            raise ShapeError(f"layer expects {self.in_dim} input features, got {H.shape[1]}")
        x = H + aggregate_neighbors_sum(batch, H)
        if self.spec.variant != "none":
            x = np.concatenate([x, near_aggregate(batch, H, self.spec.variant)], axis=1)
        groups = batch.offsets if self.bn_scope == "graph" else None
        out = self.children["mlp"].forward(x, train, groups=groups)
        if "bn" in self.children:
            out = self.out_relu.forward(self.children["bn"].forward(out, train, groups))
        self._cache = (batch, H)
        return out

    def backward(self, grad: np.ndarray) -> np.ndarray:
        batch, H = self._pop_cache()
        if "bn" in self.children:
            grad = self.children["bn"].backward(self.out_relu.backward(grad))
        gx = self.children["mlp"].backward(grad)
        g_sum = gx[:, : self.in_dim]
        # the neighbor-sum operator is symmetric, so its adjoint is itself
        g_H = g_sum + aggregate_neighbors_sum(batch, g_sum)
        if self.spec.variant != "none":
            g_H = g_H + near_aggregate_backward(batch, H, self.spec.variant, gx[:, self.in_dim :])
        return g_H


def gnn_layer_forward(g, H: np.ndarray, layer: GNNLayer, mode: str = "eval") -> np.ndarray:
    return layer.forward(_as_batch(g), np.asarray(H, dtype=np.float64), train=(mode == "train"))


def readout(H: np.ndarray, mode: str) -> np.ndarray:
    """Column-wise sum or mean of a single graph's node features."""
    if H.shape[0] == 0:
        raise ValueError("readout of a graph with no nodes")
    if mode == "sum":
        return H.sum(axis=0)
    if mode == "mean":
        return H.mean(axis=0)
    raise ValueError(f"readout must be one of {READOUTS}")


def _batch_readout(batch: GraphBatch, H: np.ndarray, mode: str) -> np.ndarray:
    out = np.add.reduceat(H, batch.offsets[:-1], axis=0)
    if mode == "mean":
        out = out / batch.node_counts[:, None]
    return out


def _batch_readout_backward(batch: GraphBatch, grad: np.ndarray, mode: str) -> np.ndarray:
    if mode == "mean":
        grad = grad / batch.node_counts[:, None]
    return grad[batch.graph_index]


@dataclass
class GraphRepresentation:
    per_layer: list[np.ndarray]
    concatenated: np.ndarray = field(init=False)

    def __post_init__(self):
        self.concatenated = np.concatenate(self.per_layer, axis=-1)


class NEARModel(Module):
    """K message-passing layers, per-layer readout, concatenation, 2-layer MLP classifier."""

    def __init__(self, cfg: ModelConfig, in_dim: int, num_classes: int, rng: np.random.Generator):
        super().__init__()
        self.cfg = cfg
        self.in_dim = in_dim
        self.num_classes = num_classes
        dims = [in_dim] + [cfg.hidden_dim] * cfg.num_layers
        for k in range(cfg.num_layers):
            self.children[f"layer{k + 1}"] = GNNLayer(
                dims[k], cfg.hidden_dim, cfg.variant, rng, cfg.mlp_batchnorm, cfg.layer_output_bn, cfg.bn_scope
            )
        self.rep_dim = sum(dims)
        self.children["classifier"] = MLP2(
            self.rep_dim,
            cfg.classifier_hidden or cfg.hidden_dim,
            num_classes,
            rng,
            batchnorm=cfg.classifier_batchnorm,
            dropout=cfg.dropout,
        )

    @property
    def gnn_layers(self) -> list[GNNLayer]:
        return [self.children[f"layer{k + 1}"] for k in range(self.cfg.num_layers)]

    def forward(self, g, H0: np.ndarray, train: bool = False, rng: np.random.Generator | None = None):
        batch = _as_batch(g)
        _check_rows(batch, H0)
        if H0.shape[1] != self.in_dim:
            raise ShapeError(f"model expects {self.in_dim} input features, got {H0.shape[1]}")
        H = np.asarray(H0, dtype=np.float64)
        per_layer = [_batch_readout(batch, H, self.cfg.readout)]
        for layer in self.gnn_layers:
            H = layer.forward(batch, H, train)
            per_layer.append(_batch_readout(batch, H, self.cfg.readout))
        rep = GraphRepresentation(per_layer)
        logits = self.children["classifier"].forward(rep.concatenated, train, rng)
        self._cache = (batch, [p.shape[1] for p in per_layer])
        return rep, logits

    def backward(self, grad_logits: np.ndarray) -> np.ndarray:
        """Accumulate parameter gradients; returns the gradient with respect to H0."""
        try:
            batch, widths = self._pop_cache()
        except StaleCacheError:
            raise StaleCacheError("model backward() needs a fresh forward pass") from None
        g_rep = self.children["classifier"].backward(grad_logits)
        bounds = np.cumsum([0] + widths)
        chunks = [g_rep[:, bounds[k] : bounds[k + 1]] for k in range(len(widths))]
        g_H = _batch_readout_backward(batch, chunks[-1], self.cfg.readout)
        for k in range(self.cfg.num_layers, 0, -1):
            g_H = self.gnn_layers[k - 1].backward(g_H)
            g_H = g_H + _batch_readout_backward(batch, chunks[k - 1], self.cfg.readout)
        return g_H

    def parameter_dicts(self) -> tuple[dict, dict]:
        params, grads = {}, {}
        for name, p, g in self.named_parameters():
            params[name] = p
            grads[name] = g
        return params, grads


def model_forward(model: NEARModel, g, H0: np.ndarray, mode: str = "eval", rng=None):
    return model.forward(g, H0, train=(mode == "train"), rng=rng)


def model_backward(model: NEARModel, grad_logits: np.ndarray) -> dict:
    model.backward(grad_logits)
    return {name: g for name, _, g in model.named_parameters()}
