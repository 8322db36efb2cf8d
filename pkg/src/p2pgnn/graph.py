"""Static graph data model, dataset TSV ingestion, and diffusion primitives.

Nodes are integer ids ``0..n_nodes-1``. Graphs are undirected, carry no
self-loops, and are immutable after construction, so they can be shared
freely between concurrently running experiment repetitions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse


class DatasetError(Exception):
    """Malformed or inconsistent dataset input."""


class Graph:
    """Undirected graph stored as deduplicated, sorted neighbor lists.

    Directed edge listings are symmetrized: ``(u, v)`` and ``(v, u)``
    collapse to a single undirected edge.
    """

    def __init__(self, n_nodes: int, edges=()):
        if n_nodes < 0:
            raise ValueError("n_nodes must be nonnegative")
        seen = set()
        adj = [[] for _ in range(n_nodes)]
        for u, v in edges:
            u, v = int(u), int(v)
            if not (0 <= u < n_nodes and 0 <= v < n_nodes):
                raise ValueError(f"edge ({u}, {v}) references a node outside [0, {n_nodes})")
            if u == v:
                raise ValueError(f"self-loop on node {u} is not supported")
            key = (u, v) if u < v else (v, u)
            if key in seen:
                continue
            seen.add(key)
            adj[u].append(v)
            adj[v].append(u)
        self._n = n_nodes
        self._edges = tuple(sorted(seen))
        self._adj = tuple(np.array(sorted(a), dtype=np.int64) for a in adj)
        # Degree view used by all diffusion normalizations: zero-degree nodes
        # are clamped to 1 so D^{-d} is always defined.
        self._degrees = np.maximum(
            1.0, np.array([len(a) for a in self._adj], dtype=np.float64)
        )
        self._degrees.setflags(write=False)

    @property
    def n_nodes(self) -> int:
        return self._n

    @property
    def edges(self) -> tuple:
        """Undirected edges as sorted (u, v) pairs with u < v."""
        return self._edges

    @property
    def n_edges(self) -> int:
        return len(self._edges)

    def neighbors(self, u: int) -> np.ndarray:
        return self._adj[u]

    def neighbor_count(self, u: int) -> int:
        return len(self._adj[u])

    @property
    def degrees(self) -> np.ndarray:
        """Per-node degree clamped below at 1 (float vector)."""
        return self._degrees

    def adjacency(self) -> sparse.csr_matrix:
        """Symmetric 0/1 adjacency as a CSR matrix."""
        if not self._edges:
            return sparse.csr_matrix((self._n, self._n))
        us, vs = zip(*self._edges)
        row = np.concatenate([us, vs])
        col = np.concatenate([vs, us])
        data = np.ones(len(row))
        return sparse.csr_matrix((data, (row, col)), shape=(self._n, self._n))


@dataclass(frozen=True)
class NodeData:
    """Per-node feature rows and one-hot label rows (all-zero when unknown)."""

    features: np.ndarray  # (N, F) float64
    labels: np.ndarray    # (N, C) float64, one-hot or all-zero rows

    def __post_init__(self):
        f = np.asarray(self.features, dtype=np.float64)
        y = np.asarray(self.labels, dtype=np.float64)
        if f.ndim != 2 or y.ndim != 2:
            raise ValueError("features and labels must be 2-D arrays")
        if f.shape[0] != y.shape[0]:
            raise ValueError("features and labels must have one row per node")
        nonzero = np.any(y != 0, axis=1)
        ok = (y >= 0).all() and np.all(y.sum(axis=1)[nonzero] == 1.0)
        if not ok or not np.all(np.isin(y, (0.0, 1.0))):
            raise ValueError("label rows must be one-hot or all-zero")
        f.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "features", f)
        object.__setattr__(self, "labels", y)

    @property
    def n_nodes(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def n_classes(self) -> int:
        return self.labels.shape[1]

    def labeled_nodes(self) -> np.ndarray:
        return np.flatnonzero(np.any(self.labels != 0, axis=1))


@dataclass(frozen=True)
class Splits:
    """Disjoint train/valid/test node-id sets."""

    train: frozenset
    valid: frozenset
    test: frozenset

    def __post_init__(self):
        object.__setattr__(self, "train", frozenset(int(u) for u in self.train))
        object.__setattr__(self, "valid", frozenset(int(u) for u in self.valid))
        object.__setattr__(self, "test", frozenset(int(u) for u in self.test))
        if self.train & self.valid or self.train & self.test or self.valid & self.test:
            raise ValueError("train/valid/test splits must be pairwise disjoint")


def _parse_error(path, lineno, msg):
    return DatasetError(f"{path}:{lineno}: {msg}")


def _read_rows(path, n_fields):
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            fields = line.split("\t")
            if len(fields) != n_fields:
                raise _parse_error(
                    path, lineno, f"expected {n_fields} tab-separated fields, got {len(fields)}"
                )
            rows.append((lineno, fields))
    return rows


def load_dataset(nodes_path, edges_path, splits_path):
    """Load a (Graph, NodeData, Splits) triple from the three-file TSV format.

    Raises DatasetError with file/line context on malformed rows, dangling
    edge endpoints, overlapping splits, or unlabeled train/valid nodes.
    """
    feat_by_id = {}
    label_by_id = {}
    for lineno, (sid, sfeat, slabel) in _read_rows(nodes_path, 3):
        try:
            nid = int(sid)
        except ValueError:
            raise _parse_error(nodes_path, lineno, f"bad node id {sid!r}") from None
        if nid in feat_by_id:
            raise _parse_error(nodes_path, lineno, f"duplicate node id {nid}")
        try:
            feats = (
                np.fromiter((float(x) for x in sfeat.split(",")), dtype=np.float64)
                if sfeat
                else np.zeros(0)
            )
        except ValueError:
            raise _parse_error(nodes_path, lineno, "bad feature value") from None
        if slabel == "":
            label = None
        else:
            try:
                label = int(slabel)
            except ValueError:
                raise _parse_error(nodes_path, lineno, f"bad label {slabel!r}") from None
            if label < 0:
                raise _parse_error(nodes_path, lineno, "label index must be nonnegative")
        feat_by_id[nid] = feats
        label_by_id[nid] = label

    n = len(feat_by_id)
    if set(feat_by_id) != set(range(n)):
        raise DatasetError(f"{nodes_path}: node ids must cover exactly 0..{n - 1}")
    f_len = {len(f) for f in feat_by_id.values()}
    if len(f_len) > 1:
        raise DatasetError(f"{nodes_path}: feature rows have inconsistent lengths {sorted(f_len)}")
    n_feat = f_len.pop() if f_len else 0

    labels_present = [l for l in label_by_id.values() if l is not None]
    n_classes = (max(labels_present) + 1) if labels_present else 0
    features = np.zeros((n, n_feat))
    labels = np.zeros((n, n_classes))
    for nid in range(n):
        features[nid] = feat_by_id[nid]
        if label_by_id[nid] is not None:
            labels[nid, label_by_id[nid]] = 1.0

    edge_list = []
    for lineno, (su, sv) in _read_rows(edges_path, 2):
        try:
            u, v = int(su), int(sv)
        except ValueError:
            raise _parse_error(edges_path, lineno, f"bad edge endpoints {su!r}, {sv!r}") from None
        if not (0 <= u < n and 0 <= v < n):
            raise _parse_error(edges_path, lineno, f"edge ({u}, {v}) references unknown node")
        if u == v:
            raise _parse_error(edges_path, lineno, f"self-loop on node {u} is not supported")
        edge_list.append((u, v))
    graph = Graph(n, edge_list)

    split_names = {"train": set(), "valid": set(), "test": set()}
    assigned = {}
    for lineno, (sid, name) in _read_rows(splits_path, 2):
        try:
            nid = int(sid)
        except ValueError:
            raise _parse_error(splits_path, lineno, f"bad node id {sid!r}") from None
        if name not in split_names:
            raise _parse_error(splits_path, lineno, f"unknown split {name!r}")
        if not (0 <= nid < n):
            raise _parse_error(splits_path, lineno, f"split references unknown node {nid}")
        if nid in assigned:
            raise _parse_error(
                splits_path, lineno, f"node {nid} already assigned to {assigned[nid]!r}"
            )
        assigned[nid] = name
        split_names[name].add(nid)

    for name in ("train", "valid"):
        for nid in sorted(split_names[name]):
            if not np.any(labels[nid] != 0):
                raise DatasetError(f"{splits_path}: {name} node {nid} has no label")

    data = NodeData(features=features, labels=labels)
    splits = Splits(train=split_names["train"], valid=split_names["valid"], test=split_names["test"])
    return graph, data, splits


def save_dataset(graph: Graph, data: NodeData, splits: Splits, nodes_path, edges_path, splits_path):
    """Serialize back to the TSV format accepted by load_dataset."""
    with open(nodes_path, "w", encoding="utf-8") as fh:
        for nid in range(graph.n_nodes):
            feats = ",".join(format(x, ".17g") for x in data.features[nid])
            row = data.labels[nid]
            label = str(int(np.argmax(row))) if np.any(row != 0) else ""
            fh.write(f"{nid}\t{feats}\t{label}\n")
    with open(edges_path, "w", encoding="utf-8") as fh:
        for u, v in graph.edges:
            fh.write(f"{u}\t{v}\n")
    with open(splits_path, "w", encoding="utf-8") as fh:
        for name, members in (("train", splits.train), ("valid", splits.valid), ("test", splits.test)):
            for nid in sorted(members):
                fh.write(f"{nid}\t{name}\n")


def masked_neighbors(graph: Graph, train, u: int) -> list:
    """Neighbors of u excluding training nodes (diffusion cannot enter them)."""
    if not (0 <= u < graph.n_nodes):
        raise ValueError(f"node {u} outside [0, {graph.n_nodes})")
    return [int(v) for v in graph.neighbors(u) if v not in train]


def diffusion_matrix(graph: Graph, d: float, masked_by=None) -> sparse.csr_matrix:
    """Degree-normalized propagation operator W with W[u,v] = 1/(deg(u)^d deg(v)^(1-d)).

    Contributions from nodes in ``masked_by`` are dropped. Zero-degree nodes
    get a unit self-entry so they retain whatever value they hold.
    """
    if d not in (0.0, 0.5):
        raise ValueError("d must be 0 or 0.5")
    deg = graph.degrees
    rows, cols, vals = [], [], []
    for u in range(graph.n_nodes):
        nbrs = graph.neighbors(u)
        if len(nbrs) == 0:
            rows.append(u)
            cols.append(u)
            vals.append(1.0)
            continue
        for v in nbrs:
            if masked_by is not None and v in masked_by:
                continue
            rows.append(u)
            cols.append(int(v))
            vals.append(1.0 / (deg[u] ** d * deg[v] ** (1.0 - d)))
    return sparse.csr_matrix((vals, (rows, cols)), shape=(graph.n_nodes, graph.n_nodes))


def propagate(graph: Graph, values: np.ndarray, d: float, masked_by=None) -> np.ndarray:
    """One application of the normalized propagation operator to row vectors.

    out[u] = sum_v values[v] / (deg(u)^d * deg(v)^(1-d)) over unmasked
    neighbors v of u; zero-degree nodes keep their own row.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2 or values.shape[0] != graph.n_nodes:
        raise ValueError(
            f"values must be ({graph.n_nodes}, C), got {values.shape}"
        )
    return diffusion_matrix(graph, d, masked_by) @ values
