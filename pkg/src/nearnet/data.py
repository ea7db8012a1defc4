"""TU-Dortmund benchmark format: loading, writing and node-feature encoding.

A dataset ``NAME`` is a directory holding

    NAME_A.txt                one "i, j" pair per line, 1-based global node ids
    NAME_graph_indicator.txt  line k holds the graph id (1-based) of node k
    NAME_graph_labels.txt     line g holds the class of graph g
    NAME_node_labels.txt      optional, one integer per node
    NAME_node_attributes.txt  optional, comma-separated floats per node

Pairs may be separated by commas and/or whitespace.  Both orientations of an
undirected edge usually appear; they collapse to one edge.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .graph import Graph, simplify_edges

log = logging.getLogger(__name__)

RECIPE_BLOCKS = ("labels", "attributes", "degree", "dummy")
_SPLIT = re.compile(r"[,\s]+")


class DatasetFormatError(ValueError):
    pass


@dataclass
class RawDataset:
    name: str
    graphs: list[Graph]
    graph_labels: np.ndarray
    label_values: list
    node_labels: list[np.ndarray] | None = None
    node_attributes: list[np.ndarray] | None = None
    dropped_edges: int = 0

    @property
    def num_classes(self) -> int:
        return len(self.label_values)


@dataclass
class DatasetBundle:
    graphs: list[Graph]
    graph_labels: np.ndarray
    node_features: list[np.ndarray]
    meta: dict = field(default_factory=dict)
    _chunks: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        if not (len(self.graphs) == len(self.graph_labels) == len(self.node_features)):
            raise ValueError("graphs, labels and features must have equal length")
        widths = {f.shape[1] for f in self.node_features}
        if len(widths) > 1:
            raise ValueError(f"feature matrices disagree on width: {sorted(widths)}")

    def __len__(self):
        return len(self.graphs)

    @property
    def num_classes(self) -> int:
        return int(self.meta.get("num_classes", int(self.graph_labels.max()) + 1))

    @property
    def feature_dim(self) -> int:
        return self.node_features[0].shape[1]

    def chunks(self, size: int) -> list:
        """Fixed (batch, H0, labels) chunks in dataset order, built once per size."""
        from .layers import GraphBatch

        if size not in self._chunks:
            out = []
            for start in range(0, len(self), size):
                idx = list(range(start, min(start + size, len(self))))
                batch = GraphBatch([self.graphs[i] for i in idx])
                H0 = np.concatenate([self.node_features[i] for i in idx])
                out.append((batch, H0, self.graph_labels[idx]))
            self._chunks[size] = out
        return self._chunks[size]

    def subset(self, idx) -> "DatasetBundle":
        idx = list(idx)
        return DatasetBundle(
            [self.graphs[i] for i in idx],
            self.graph_labels[idx],
            [self.node_features[i] for i in idx],
            dict(self.meta),
        )


def _read_lines(path: Path) -> list[str]:
    return [ln.strip() for ln in path.read_text().splitlines()]


def _parse_ints(path: Path, expect: int | None = None) -> list[list[int]]:
    rows = []
    for lineno, line in enumerate(_read_lines(path), start=1):
        if not line:
            continue
        try:
            vals = [int(x) for x in _SPLIT.split(line) if x]
        except ValueError:
            raise DatasetFormatError(f"{path.name}:{lineno}: expected integers, got {line!r}") from None
        if expect is not None and len(vals) != expect:
            raise DatasetFormatError(f"{path.name}:{lineno}: expected {expect} values, got {len(vals)}")
        rows.append(vals)
    return rows


def load_tu_dataset(directory, name: str) -> RawDataset:
    root = Path(directory)
    if (root / name).is_dir() and not (root / f"{name}_A.txt").exists():
        root = root / name

    def need(suffix):
        p = root / f"{name}_{suffix}.txt"
        if not p.exists():
            raise FileNotFoundError(f"missing dataset file {p}")
        return p

    indicator = np.array([r[0] for r in _parse_ints(need("graph_indicator"), 1)], dtype=np.int64)
    glabels_raw = [r[0] for r in _parse_ints(need("graph_labels"), 1)]
    n_graphs = len(glabels_raw)
    if len(indicator) == 0:
        raise DatasetFormatError(f"{name}_graph_indicator.txt is empty")
    if np.any(np.diff(indicator) < 0):
        bad = int(np.flatnonzero(np.diff(indicator) < 0)[0]) + 2
        raise DatasetFormatError(f"{name}_graph_indicator.txt:{bad}: graph ids must be non-decreasing")
    if indicator.min() < 1 or indicator.max() > n_graphs:
        raise DatasetFormatError(f"{name}_graph_indicator.txt: graph ids outside 1..{n_graphs}")

    n_nodes = len(indicator)
    graph_of = indicator - 1
    counts = np.bincount(graph_of, minlength=n_graphs)
    first = np.zeros(n_graphs + 1, dtype=np.int64)
    np.cumsum(counts, out=first[1:])

    per_graph: list[list[tuple[int, int]]] = [[] for _ in range(n_graphs)]
    a_path = need("A")
    for lineno, line in enumerate(_read_lines(a_path), start=1):
        if not line:
            continue
        parts = [x for x in _SPLIT.split(line) if x]
        if len(parts) != 2:
            raise DatasetFormatError(f"{a_path.name}:{lineno}: expected a node pair, got {line!r}")
        try:
            i, j = int(parts[0]) - 1, int(parts[1]) - 1
        except ValueError:
            raise DatasetFormatError(f"{a_path.name}:{lineno}: non-integer node id in {line!r}") from None
        if not (0 <= i < n_nodes and 0 <= j < n_nodes):
            raise DatasetFormatError(f"{a_path.name}:{lineno}: node id out of range 1..{n_nodes}")
        gi, gj = graph_of[i], graph_of[j]
        if gi != gj:
            raise DatasetFormatError(f"{a_path.name}:{lineno}: edge joins graphs {gi + 1} and {gj + 1}")
        per_graph[gi].append((i - first[gi], j - first[gi]))

    graphs = []
    dropped = 0
    for gid in range(n_graphs):
        edges, _ = simplify_edges(per_graph[gid])
        # both orientations of one edge are the normal encoding, not a defect
        seen = set()
        for p in per_graph[gid]:
            dropped += p[0] == p[1] or p in seen
            seen.add(p)
        graphs.append(Graph(int(counts[gid]), edges))
    if dropped:
        log.warning("%s: dropped %d self-loop/duplicate edge lines", name, dropped)

    label_values = sorted(set(glabels_raw))
    remap = {v: k for k, v in enumerate(label_values)}
    graph_labels = np.array([remap[v] for v in glabels_raw], dtype=np.int64)

    node_labels = None
    p = root / f"{name}_node_labels.txt"
    if p.exists():
        rows = _parse_ints(p)
        if len(rows) != n_nodes:
            raise DatasetFormatError(f"{p.name}: {len(rows)} lines for {n_nodes} nodes")
        flat = np.array([r[0] for r in rows], dtype=np.int64)
        node_labels = [flat[first[g] : first[g + 1]] for g in range(n_graphs)]

    node_attributes = None
    p = root / f"{name}_node_attributes.txt"
    if p.exists():
        rows = []
        for lineno, line in enumerate(_read_lines(p), start=1):
            if not line:
                continue
            try:
                rows.append([float(x) for x in _SPLIT.split(line) if x])
            except ValueError:
                raise DatasetFormatError(f"{p.name}:{lineno}: expected floats, got {line!r}") from None
        if len(rows) != n_nodes:
            raise DatasetFormatError(f"{p.name}: {len(rows)} lines for {n_nodes} nodes")
        if len({len(r) for r in rows}) != 1:
            raise DatasetFormatError(f"{p.name}: rows have differing widths")
        flat = np.array(rows, dtype=np.float64)
        node_attributes = [flat[first[g] : first[g + 1]] for g in range(n_graphs)]

    return RawDataset(name, graphs, graph_labels, label_values, node_labels, node_attributes, dropped)


def save_tu_dataset(raw: RawDataset, directory, name: str | None = None) -> Path:
    """Write ``raw`` in TU format, both orientations per edge."""
    name = name or raw.name
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    a_lines, ind_lines = [], []
    offset = 0
    for gid, g in enumerate(raw.graphs):
        for a, b in g.edges:
            a_lines.append(f"{a + offset + 1}, {b + offset + 1}")
            a_lines.append(f"{b + offset + 1}, {a + offset + 1}")
        ind_lines += [str(gid + 1)] * g.num_nodes
        offset += g.num_nodes
    (root / f"{name}_A.txt").write_text("\n".join(a_lines) + "\n")
    (root / f"{name}_graph_indicator.txt").write_text("\n".join(ind_lines) + "\n")
    labels = [str(raw.label_values[k]) for k in raw.graph_labels]
    (root / f"{name}_graph_labels.txt").write_text("\n".join(labels) + "\n")
    if raw.node_labels is not None:
        vals = np.concatenate(raw.node_labels)
        (root / f"{name}_node_labels.txt").write_text("\n".join(str(int(v)) for v in vals) + "\n")
    if raw.node_attributes is not None:
        vals = np.concatenate(raw.node_attributes)
        (root / f"{name}_node_attributes.txt").write_text(
            "\n".join(", ".join(repr(float(x)) for x in row) for row in vals) + "\n"
        )
    return root


def resolve_recipe(raw: RawDataset, recipe) -> list[str]:
    """Expand ``"auto"``: labels/attributes when present, else a dummy column; plus degree."""
    if recipe in (None, "auto"):
        blocks = []
        if raw.node_labels is not None:
            blocks.append("labels")
        if raw.node_attributes is not None:
            blocks.append("attributes")
        if not blocks:
            blocks.append("dummy")
        return blocks + ["degree"]
    if isinstance(recipe, str):
        recipe = [b for b in re.split(r"[+,\s]+", recipe) if b]
    for b in recipe:
        if b not in RECIPE_BLOCKS:
            raise ValueError(f"unknown feature block {b!r}; known: {RECIPE_BLOCKS}")
    return list(recipe)


def encode_node_features(raw: RawDataset, recipe="auto", degree_cap: int | None = None) -> DatasetBundle:
    """Concatenate the requested one-hot / raw blocks into one matrix per graph."""
    blocks = resolve_recipe(raw, recipe)
    label_alphabet = None
    if "labels" in blocks:
        if raw.node_labels is None:
            raise ValueError(f"{raw.name} has no node labels")
        label_alphabet = np.unique(np.concatenate(raw.node_labels))
    if "attributes" in blocks and raw.node_attributes is None:
        raise ValueError(f"{raw.name} has no node attributes")
    if "degree" in blocks and degree_cap is None:
        degree_cap = max(int(g.degrees.max(initial=0)) for g in raw.graphs)

    feats = []
    for gid, g in enumerate(raw.graphs):
        parts = []
        for b in blocks:
            if b == "labels":
                idx = np.searchsorted(label_alphabet, raw.node_labels[gid])
                one = np.zeros((g.num_nodes, len(label_alphabet)))
                one[np.arange(g.num_nodes), idx] = 1.0
                parts.append(one)
            elif b == "attributes":
                parts.append(np.asarray(raw.node_attributes[gid], dtype=np.float64))
            elif b == "degree":
                d = np.minimum(g.degrees, degree_cap)
                one = np.zeros((g.num_nodes, degree_cap + 1))
                one[np.arange(g.num_nodes), d] = 1.0
                parts.append(one)
            elif b == "dummy":
                parts.append(np.ones((g.num_nodes, 1)))
        feats.append(np.concatenate(parts, axis=1))

    meta = {
        "name": raw.name,
        "recipe": blocks,
        "num_classes": raw.num_classes,
        "degree_cap": degree_cap,
        "label_alphabet": None if label_alphabet is None else label_alphabet.tolist(),
    }
    return DatasetBundle(list(raw.graphs), raw.graph_labels.copy(), feats, meta)
