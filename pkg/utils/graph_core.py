"""
Graph Core
Immutable undirected weighted graph in compressed adjacency form, edgelist / label
file I/O, degree queries and largest-connected-component extraction.
"""
import logging
import os
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .errors import GraphFormatError

logger = logging.getLogger(__name__)

COMMENT_PREFIXES = ('#', '%')


def _frozen(array, dtype):
    out = np.ascontiguousarray(array, dtype=dtype)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class Graph:
    """
    Undirected weighted graph.

    Off-diagonal adjacency is stored symmetrically in CSR arrays (indptr, indices,
    weights) with sorted, duplicate-free neighbor ids per row. Self-loops live in a
    separate per-node array and count twice in a node's degree.
    """
    indptr: np.ndarray
    indices: np.ndarray
    weights: np.ndarray
    self_loops: np.ndarray
    total_weight: float

    @classmethod
    def from_edges(cls, num_nodes, src, dst, weights=None):
        """
        Build a symmetrized graph from an edge list
        Args:
            num_nodes: number of nodes n (ids must be in [0, n))
            src, dst: endpoint arrays; (u, v) and (v, u) are the same edge
            weights: positive weights, default 1.0; duplicates are summed
        """
        src = np.asarray(src, dtype=np.int64)
        dst = np.asarray(dst, dtype=np.int64)
        if weights is None:
            weights = np.ones(len(src), dtype=np.float64)
        weights = np.asarray(weights, dtype=np.float64)
        if not (len(src) == len(dst) == len(weights)):
            raise GraphFormatError("Edge arrays must have equal length")
        if len(src) and (min(src.min(), dst.min()) < 0 or max(src.max(), dst.max()) >= num_nodes):
            raise GraphFormatError(f"Edge endpoint out of range [0, {num_nodes})")
        if np.any(weights < 0):
            raise GraphFormatError("Negative edge weight")
        if np.any(weights == 0):
            raise GraphFormatError("Zero edge weight")

        loop_mask = src == dst
        self_loops = np.bincount(src[loop_mask], weights=weights[loop_mask], minlength=num_nodes)

        lo = np.minimum(src[~loop_mask], dst[~loop_mask])
        hi = np.maximum(src[~loop_mask], dst[~loop_mask])
        upper = sp.coo_matrix((weights[~loop_mask], (lo, hi)), shape=(num_nodes, num_nodes)).tocsr()
        upper.sum_duplicates()
        total_weight = float(upper.data.sum() + self_loops.sum())
        return cls._from_csr((upper + upper.T).tocsr(), self_loops, total_weight)

    @classmethod
    def _from_csr(cls, csr, self_loops, total_weight=None):
        coo = sp.coo_matrix(csr)
        off_diagonal = coo.row != coo.col
        csr = sp.csr_matrix(
            (coo.data[off_diagonal], (coo.row[off_diagonal], coo.col[off_diagonal])), shape=coo.shape
        )
        csr.sum_duplicates()
        csr.sort_indices()
        csr.eliminate_zeros()
        if total_weight is None:
            total_weight = float(csr.data.sum() / 2.0 + np.sum(self_loops))
        return cls(
            indptr=_frozen(csr.indptr, np.int64),
            indices=_frozen(csr.indices, np.int64),
            weights=_frozen(csr.data, np.float64),
            self_loops=_frozen(self_loops, np.float64),
            total_weight=float(total_weight),
        )

    @property
    def num_nodes(self):
        return len(self.indptr) - 1

    @property
    def num_edges(self):
        """Number of undirected edges, self-loops included"""
        return len(self.indices) // 2 + int(np.count_nonzero(self.self_loops))

    def neighbors(self, v):
        """Neighbor ids and weights of v (self-loop excluded)"""
        start, end = self.indptr[v], self.indptr[v + 1]
        return self.indices[start:end], self.weights[start:end]

    def degree(self, v):
        """Weighted degree of v; a self-loop counts twice"""
        if not 0 <= v < self.num_nodes:
            raise IndexError(f"Node id {v} out of range [0, {self.num_nodes})")
        start, end = self.indptr[v], self.indptr[v + 1]
        return float(self.weights[start:end].sum() + 2.0 * self.self_loops[v])

    def degrees(self):
        return np.bincount(self.row_ids(), weights=self.weights, minlength=self.num_nodes) + 2.0 * self.self_loops

    def row_ids(self):
        """Source node of every stored adjacency entry"""
        return np.repeat(np.arange(self.num_nodes, dtype=np.int64), np.diff(self.indptr))

    def edges(self):
        """Undirected off-diagonal edges as (u, v, w) arrays with u < v"""
        rows = self.row_ids()
        mask = rows < self.indices
        return rows[mask], self.indices[mask], self.weights[mask]

    def edge_keys(self):
        """Sorted int64 keys u * n + v over all stored (u, v) entries, for membership tests"""
        return self.row_ids() * self.num_nodes + self.indices

    def has_edges(self, u, v):
        """Vectorized adjacency test for node-pair arrays"""
        u = np.asarray(u, dtype=np.int64)
        v = np.asarray(v, dtype=np.int64)
        keys = self.edge_keys()
        query = u * self.num_nodes + v
        pos = np.searchsorted(keys, query)
        pos = np.minimum(pos, max(len(keys) - 1, 0))
        if len(keys) == 0:
            return np.zeros(query.shape, dtype=bool)
        return keys[pos] == query

    def to_csr(self, include_self_loops=False):
        csr = sp.csr_matrix((self.weights, self.indices, self.indptr), shape=(self.num_nodes, self.num_nodes))
        if include_self_loops:
            csr = (csr + sp.diags(self.self_loops)).tocsr()
        return csr

    def induced_subgraph(self, nodes):
        """Subgraph on the given (sorted, unique) nodes, relabelled 0..len(nodes)-1 in order"""
        nodes = np.asarray(nodes, dtype=np.int64)
        csr = self.to_csr()[nodes][:, nodes]
        return Graph._from_csr(csr, self.self_loops[nodes])

    def __eq__(self, other):
        if not isinstance(other, Graph):
            return NotImplemented
        return (
            np.array_equal(self.indptr, other.indptr)
            and np.array_equal(self.indices, other.indices)
            and np.array_equal(self.weights, other.weights)
            and np.array_equal(self.self_loops, other.self_loops)
            and self.total_weight == other.total_weight
        )

    __hash__ = None

    def __repr__(self):
        return f"Graph(num_nodes={self.num_nodes}, num_edges={self.num_edges}, total_weight={self.total_weight:g})"


@dataclass(frozen=True)
class NodeLabels:
    """Per-node label sets; label ids are in [0, num_labels)"""
    labels: Tuple[Tuple[int, ...], ...]
    num_labels: int

    def __post_init__(self):
        for node, node_labels in enumerate(self.labels):
            for label in node_labels:
                if not 0 <= label < self.num_labels:
                    raise GraphFormatError(f"Label {label} of node {node} outside [0, {self.num_labels})")

    @property
    def num_nodes(self):
        return len(self.labels)

    def indicator_matrix(self):
        matrix = np.zeros((self.num_nodes, self.num_labels), dtype=bool)
        for node, node_labels in enumerate(self.labels):
            matrix[node, list(node_labels)] = True
        return matrix

    def nodes_with_label(self, label):
        return np.array([v for v, node_labels in enumerate(self.labels) if label in node_labels], dtype=np.int64)


def degree(g: Graph, v: int) -> float:
    return g.degree(v)


def _iter_data_lines(path):
    with open(path, 'r', encoding='utf-8') as f:
        for line_number, line in enumerate(f, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith(COMMENT_PREFIXES):
                continue
            yield line_number, stripped


def _parse_node_id(token, path, line_number):
    try:
        node = int(token)
    except ValueError:
        raise GraphFormatError(f"Node id is not an integer: {token!r}", path, line_number) from None
    if node < 0:
        raise GraphFormatError(f"Negative node id {node}", path, line_number)
    return node


def _parse_weight(token, path, line_number):
    try:
        w = float(token)
    except ValueError:
        raise GraphFormatError(f"Weight is not a number: {token!r}", path, line_number) from None
    if not np.isfinite(w):
        raise GraphFormatError(f"Non-finite weight {token!r}", path, line_number)
    if w < 0:
        raise GraphFormatError(f"Negative weight {w}", path, line_number)
    return w


def load_edgelist(path, weighted=False) -> Tuple[Graph, np.ndarray]:
    """
    Load a whitespace-separated edgelist ("u v" or "u v w" per line)

    Node ids are compacted to [0, n) in ascending order of their original ids.
    Returns:
        (Graph, original_ids) where original_ids[new_id] is the id in the file
    """
    if not os.path.exists(path):
        raise GraphFormatError("Edgelist file does not exist", path)

    src, dst, wts = [], [], []
    skipped_zero = 0
    for line_number, line in _iter_data_lines(path):
        tokens = line.split()
        if len(tokens) not in (2, 3):
            raise GraphFormatError(f"Expected 'u v [w]', got {len(tokens)} fields", path, line_number)
        u = _parse_node_id(tokens[0], path, line_number)
        v = _parse_node_id(tokens[1], path, line_number)
        w = 1.0
        if len(tokens) == 3:
            # checked even when unweighted, where the column is then ignored
            column = _parse_weight(tokens[2], path, line_number)
            if weighted:
                if column == 0:
                    skipped_zero += 1
                    continue
                w = column
        src.append(u)
        dst.append(v)
        wts.append(w)

    if not src:
        raise GraphFormatError("Edgelist contains no edges", path)
    if skipped_zero:
        logger.warning(f"Skipped {skipped_zero} zero-weight edges in {path}")

    src = np.asarray(src, dtype=np.int64)
    dst = np.asarray(dst, dtype=np.int64)
    original_ids, compact = np.unique(np.concatenate([src, dst]), return_inverse=True)
    graph = Graph.from_edges(len(original_ids), compact[:len(src)], compact[len(src):], np.asarray(wts))
    logger.info(f"Loaded {path}: {graph.num_nodes} nodes, {graph.num_edges} edges, total weight {graph.total_weight:g}")
    return graph, original_ids


def save_edgelist(g: Graph, path, original_ids=None):
    """Write "u v w" lines (u < v) followed by self-loops as "u u w" """
    ids = np.arange(g.num_nodes) if original_ids is None else np.asarray(original_ids)
    u, v, w = g.edges()
    loops = np.flatnonzero(g.self_loops)
    with open(path, 'w', encoding='utf-8') as f:
        for a, b, weight in zip(u.tolist(), v.tolist(), w.tolist()):
            f.write(f"{ids[a]} {ids[b]} {weight!r}\n")
        for a in loops.tolist():
            f.write(f"{ids[a]} {ids[a]} {float(g.self_loops[a])!r}\n")


def largest_connected_component(g: Graph) -> Tuple[Graph, np.ndarray]:
    """
    Induced subgraph on the largest connected component
    Ties between equal-size components go to the one holding the smallest node id.
    Returns:
        (component graph, kept) where kept[new_id] = old_id
    """
    if g.num_nodes == 0:
        raise GraphFormatError("Graph has no nodes")
    num_components, membership = connected_components(g.to_csr(), directed=False)
    if num_components == 1:
        return g, np.arange(g.num_nodes, dtype=np.int64)

    sizes = np.bincount(membership, minlength=num_components)
    # np.unique returns the first index per label, i.e. the smallest member id
    _, first_member = np.unique(membership, return_index=True)
    best = min(range(num_components), key=lambda c: (-sizes[c], first_member[c]))
    kept = np.flatnonzero(membership == best)
    return g.induced_subgraph(kept), kept


def save_id_map(original_ids, path):
    with open(path, 'w', encoding='utf-8') as f:
        for new_id, original in enumerate(np.asarray(original_ids).tolist()):
            f.write(f"{original} {new_id}\n")


def load_id_map(path) -> np.ndarray:
    """Read "original_id new_id" lines; returns original_ids indexed by new id"""
    pairs = []
    for line_number, line in _iter_data_lines(path):
        tokens = line.split()
        if len(tokens) != 2:
            raise GraphFormatError("Expected 'original_id new_id'", path, line_number)
        pairs.append((_parse_node_id(tokens[1], path, line_number), _parse_node_id(tokens[0], path, line_number)))
    pairs.sort()
    if [p[0] for p in pairs] != list(range(len(pairs))):
        raise GraphFormatError("New ids in id map are not dense 0..n-1", path)
    return np.array([p[1] for p in pairs], dtype=np.int64)


def load_labels(path, original_ids: Optional[Sequence[int]] = None, num_nodes: Optional[int] = None) -> NodeLabels:
    """
    Read "node_id label[,label...]" lines

    When original_ids is given, file node ids are translated to compact ids and nodes
    missing from the map (e.g. dropped by LCC extraction) are ignored. Label ids are
    compacted to [0, num_labels) in ascending order.
    """
    if original_ids is not None:
        lookup = {int(orig): new for new, orig in enumerate(np.asarray(original_ids).tolist())}
        num_nodes = len(lookup)
    else:
        lookup = None

    raw = {}
    for line_number, line in _iter_data_lines(path):
        tokens = line.split(None, 1)
        node = _parse_node_id(tokens[0], path, line_number)
        labels = []
        if len(tokens) > 1:
            for token in tokens[1].replace(' ', '').split(','):
                if token:
                    labels.append(_parse_node_id(token, path, line_number))
        if lookup is not None:
            if node not in lookup:
                continue
            node = lookup[node]
        raw.setdefault(node, set()).update(labels)

    if num_nodes is None:
        num_nodes = max(raw) + 1 if raw else 0
    if raw and max(raw) >= num_nodes:
        raise GraphFormatError(f"Label file mentions node {max(raw)} beyond {num_nodes} nodes", path)

    universe = sorted(set().union(*raw.values())) if raw else []
    remap = {label: i for i, label in enumerate(universe)}
    labels: List[Tuple[int, ...]] = [tuple() for _ in range(num_nodes)]
    for node, node_labels in raw.items():
        labels[node] = tuple(sorted(remap[label] for label in node_labels))
    return NodeLabels(labels=tuple(labels), num_labels=len(universe))


def save_labels(labels: NodeLabels, path, original_ids=None):
    ids = np.arange(labels.num_nodes) if original_ids is None else np.asarray(original_ids)
    with open(path, 'w', encoding='utf-8') as f:
        for node, node_labels in enumerate(labels.labels):
            f.write(f"{ids[node]} {','.join(str(label) for label in node_labels)}\n")
