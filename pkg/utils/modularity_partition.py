"""
Modularity Partition
Modularity of a partition, O(1) incremental community moves (internal / external
degree accumulators), move-based refinement and the greedy k-way partitioner.
"""
import heapq
import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from .errors import PartitionError
from .graph_core import Graph

logger = logging.getLogger(__name__)

# moves must beat staying by more than this to count as an improvement
MOVE_TOLERANCE = 1e-12


@dataclass
class CommunityAssignment:
    """Community id per node; every id in [0, num_communities) is used"""
    membership: np.ndarray
    num_communities: int

    @classmethod
    def from_membership(cls, membership):
        """Compact arbitrary integer labels to [0, k), keeping ascending label order"""
        membership = np.asarray(membership, dtype=np.int64)
        if len(membership) == 0:
            return cls(membership=membership, num_communities=0)
        uniques, compact = np.unique(membership, return_inverse=True)
        return cls(membership=compact.astype(np.int64), num_communities=len(uniques))

    @classmethod
    def singletons(cls, n):
        return cls(membership=np.arange(n, dtype=np.int64), num_communities=n)

    @property
    def num_nodes(self):
        return len(self.membership)

    def sizes(self):
        return np.bincount(self.membership, minlength=self.num_communities)

    def validate(self, g: Optional[Graph] = None):
        if g is not None and len(self.membership) != g.num_nodes:
            raise PartitionError(
                f"Membership length {len(self.membership)} does not match graph with {g.num_nodes} nodes"
            )
        if len(self.membership) and (self.membership.min() < 0 or self.membership.max() >= self.num_communities):
            raise PartitionError(f"Community id outside [0, {self.num_communities})")
        if np.any(self.sizes() == 0):
            raise PartitionError("Assignment has empty communities")
        return self

    def copy(self):
        return CommunityAssignment(membership=self.membership.copy(), num_communities=self.num_communities)

    def __eq__(self, other):
        if not isinstance(other, CommunityAssignment):
            return NotImplemented
        return self.num_communities == other.num_communities and np.array_equal(self.membership, other.membership)

    __hash__ = None


@dataclass
class ModularityState:
    """
    Per-community degree accumulators.
    internal_degree[c]: sum over members of their degree inside c (internal edges
    and self-loops counted twice); external_degree[c]: weight of edges leaving c.
    """
    internal_degree: np.ndarray
    external_degree: np.ndarray
    total_weight: float

    def copy(self):
        return ModularityState(
            internal_degree=self.internal_degree.copy(),
            external_degree=self.external_degree.copy(),
            total_weight=self.total_weight,
        )

    def community_degree(self):
        return self.internal_degree + self.external_degree


def build_state(g: Graph, h: CommunityAssignment) -> ModularityState:
    """Compute internal / external degrees from scratch with one pass over the edges"""
    if len(h.membership) != g.num_nodes:
        raise PartitionError(f"Membership length {len(h.membership)} does not match graph with {g.num_nodes} nodes")
    k = h.num_communities
    membership = h.membership
    source_comm = membership[g.row_ids()]
    target_comm = membership[g.indices]
    inside = source_comm == target_comm

    internal = np.bincount(source_comm[inside], weights=g.weights[inside], minlength=k).astype(float)
    internal += np.bincount(membership, weights=2.0 * g.self_loops, minlength=k)
    external = np.bincount(source_comm[~inside], weights=g.weights[~inside], minlength=k).astype(float)
    return ModularityState(internal_degree=internal, external_degree=external, total_weight=g.total_weight)


def modularity(state: ModularityState) -> float:
    """Q = (1/2m) * sum_c (ID[c] - (ID[c] + ED[c])^2 / 2m)"""
    if state.total_weight <= 0:
        raise PartitionError("Modularity is undefined for a graph with zero total weight")
    two_m = 2.0 * state.total_weight
    community_degree = state.internal_degree + state.external_degree
    return float(np.sum(state.internal_degree - community_degree ** 2 / two_m) / two_m)


def log_sigmoid(z):
    return -np.logaddexp(0.0, -z)


def node_community_degrees(g: Graph, h: CommunityAssignment, v: int) -> Tuple[np.ndarray, np.ndarray]:
    """
    Degree of v towards each adjacent community plus its own (self-loop excluded)
    Returns:
        (communities in ascending order, weights)
    """
    neighbors, weights = g.neighbors(v)
    own = h.membership[v]
    communities = np.append(h.membership[neighbors], own)
    weights = np.append(weights, 0.0)
    uniques, inverse = np.unique(communities, return_inverse=True)
    return uniques, np.bincount(inverse, weights=weights, minlength=len(uniques))


def _move_deltas(state, source, targets, k_source, k_targets, node_degree, self_loop):
    """Modularity change of moving a node from source to each target (targets != source)"""
    two_m = 2.0 * state.total_weight
    internal, external = state.internal_degree, state.external_degree

    def term(inner, total):
        return inner - total * total / two_m

    src_in, src_tot = internal[source], internal[source] + external[source]
    dst_in, dst_tot = internal[targets], internal[targets] + external[targets]
    before = term(src_in, src_tot) + term(dst_in, dst_tot)
    after = (
        term(src_in - 2.0 * k_source - 2.0 * self_loop, src_tot - node_degree)
        + term(dst_in + 2.0 * k_targets + 2.0 * self_loop, dst_tot + node_degree)
    )
    return (after - before) / two_m


def move_score(state: ModularityState, g: Graph, h: CommunityAssignment, x_level, x_parent, v: int,
               target: int, beta: float, gamma: float, community_degrees=None) -> float:
    """
    gamma * Q(after moving v to target) + beta * log sigmoid(x_level[v] . x_parent[target])
    Pure evaluation; neither state nor h is modified.
    """
    if not 0 <= target < h.num_communities:
        raise PartitionError(f"Target community {target} outside [0, {h.num_communities})")
    if community_degrees is None:
        community_degrees = node_community_degrees(g, h, v)
    communities, weights = community_degrees
    source = h.membership[v]

    q_after = modularity(state)
    if target != source:
        k_source = weights[np.searchsorted(communities, source)]
        pos = np.searchsorted(communities, target)
        k_target = weights[pos] if pos < len(communities) and communities[pos] == target else 0.0
        q_after += float(_move_deltas(
            state, source, np.array([target]), k_source, np.array([k_target]), g.degree(v), g.self_loops[v]
        )[0])

    score = gamma * q_after
    if beta != 0:
        score += beta * float(log_sigmoid(np.dot(x_level[v], x_parent[target])))
    return score


def apply_move(state: ModularityState, g: Graph, h: CommunityAssignment, v: int, target: int,
               community_degrees=None):
    """Move v to target, updating membership and internal / external degrees in O(1)"""
    source = h.membership[v]
    if source == target:
        return
    if community_degrees is None:
        community_degrees = node_community_degrees(g, h, v)
    communities, weights = community_degrees
    k_source = weights[np.searchsorted(communities, source)]
    pos = np.searchsorted(communities, target)
    k_target = weights[pos] if pos < len(communities) and communities[pos] == target else 0.0
    node_degree = g.degree(v)
    loop = 2.0 * g.self_loops[v]

    state.internal_degree[source] -= 2.0 * k_source + loop
    state.external_degree[source] += 2.0 * k_source + loop - node_degree
    state.internal_degree[target] += 2.0 * k_target + loop
    state.external_degree[target] += node_degree - 2.0 * k_target - loop
    h.membership[v] = target


def update_h(g: Graph, h: CommunityAssignment, state: ModularityState, x_level, x_parent, beta: float,
             gamma: float, max_sweeps: int, q_trace: Optional[List[float]] = None):
    """
    Refine the community assignment by best-target node moves

    Nodes are swept in ascending id order. Each node may move to any community it is
    adjacent to; it moves only when the best score strictly beats staying, ties
    resolved towards the smallest community id. Moves that would empty a community
    are skipped. With gamma == 0 the structure is frozen.

    Returns:
        (assignment, state, moves_made) as new objects
    """
    h = h.copy()
    state = state.copy()
    if max_sweeps <= 0 or gamma == 0 or h.num_communities <= 1:
        return h, state, 0

    use_embeddings = beta != 0 and x_level is not None and x_parent is not None
    node_degrees = g.degrees()
    sizes = h.sizes()
    q = modularity(state)
    if q_trace is not None:
        q_trace.append(q)

    moves_made = 0
    for sweep in range(max_sweeps):
        moved = 0
        for v in range(g.num_nodes):
            source = h.membership[v]
            if sizes[source] <= 1:
                continue
            communities, weights = node_community_degrees(g, h, v)
            others = communities != source
            if not np.any(others):
                continue
            targets = communities[others]
            k_source = weights[~others][0]
            deltas = _move_deltas(state, source, targets, k_source, weights[others], node_degrees[v], g.self_loops[v])

            scores = gamma * deltas
            stay = 0.0
            if use_embeddings:
                affinities = log_sigmoid(x_parent[targets] @ x_level[v])
                scores = scores + beta * affinities
                stay = beta * float(log_sigmoid(np.dot(x_parent[source], x_level[v])))

            best = int(np.argmax(scores))
            if scores[best] > stay + MOVE_TOLERANCE:
                target = int(targets[best])
                apply_move(state, g, h, v, target, (communities, weights))
                sizes[source] -= 1
                sizes[target] += 1
                q += float(deltas[best])
                moved += 1

        moves_made += moved
        if q_trace is not None:
            q_trace.append(q)
        logger.debug(f"Refinement sweep {sweep + 1}: {moved} moves, Q={q:.6f}")
        if moved == 0:
            break

    return h, state, moves_made


def initial_partition(g: Graph, k: int, seed=None) -> CommunityAssignment:
    """
    Greedy modularity agglomeration down to exactly k communities, then one
    refinement sweep (beta=0, gamma=1)

    Starting from singletons, the connected pair with the largest modularity gain is
    merged (ties by smallest id pair) until k communities remain. The procedure is
    deterministic; seed is accepted so callers can swap in seeded partitioners.
    """
    n = g.num_nodes
    if k < 1:
        raise PartitionError(f"Number of communities must be at least 1, got {k}")
    if k > n:
        raise PartitionError(f"Cannot split {n} nodes into {k} communities")
    if k == n:
        return CommunityAssignment.singletons(n)
    if k == 1:
        return CommunityAssignment(membership=np.zeros(n, dtype=np.int64), num_communities=1)

    m = g.total_weight
    degree = g.degrees().tolist()
    links = [dict() for _ in range(n)]
    u_arr, v_arr, w_arr = g.edges()
    for u, v, w in zip(u_arr.tolist(), v_arr.tolist(), w_arr.tolist()):
        links[u][v] = w
        links[v][u] = w

    def gain(a, b):
        return links[a][b] / m - degree[a] * degree[b] / (2.0 * m * m)

    version = [0] * n
    alive = [True] * n
    parent = list(range(n))
    heap = [(-gain(u, v), u, v, 0, 0) for u, v in zip(u_arr.tolist(), v_arr.tolist())]
    heapq.heapify(heap)

    def merge(a, b):
        # a < b; b is absorbed into a
        for c, w in links[b].items():
            if c == a:
                continue
            links[a][c] = links[a].get(c, 0.0) + w
            links[c][a] = links[c].get(a, 0.0) + w
            del links[c][b]
        links[a].pop(b, None)
        links[b] = {}
        degree[a] += degree[b]
        alive[b] = False
        parent[b] = a
        version[a] += 1
        for c in links[a]:
            lo, hi = (a, c) if a < c else (c, a)
            heapq.heappush(heap, (-gain(lo, hi), lo, hi, version[lo], version[hi]))

    remaining = n
    while remaining > k and heap:
        _, a, b, va, vb = heapq.heappop(heap)
        if not (alive[a] and alive[b]) or version[a] != va or version[b] != vb:
            continue
        merge(a, b)
        remaining -= 1

    if remaining > k:
        logger.warning(f"Graph ran out of connected community pairs at {remaining} communities; merging lightest pairs")
    while remaining > k:
        living = sorted((degree[c], c) for c in range(n) if alive[c])
        a, b = sorted((living[0][1], living[1][1]))
        merge(a, b)
        remaining -= 1

    def find(x):
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    h = CommunityAssignment.from_membership([find(v) for v in range(n)])
    state = build_state(g, h)
    h, state, moves = update_h(g, h, state, None, None, beta=0.0, gamma=1.0, max_sweeps=1)
    logger.info(f"Initial partition: {k} communities, Q={modularity(state):.4f} ({moves} refinement moves)")
    return h


def load_partition(path, num_nodes: Optional[int] = None) -> CommunityAssignment:
    """One community id per line, line i = node i; ids are compacted on load"""
    with open(path, 'r', encoding='utf-8') as f:
        lines = f.read().splitlines()
    while lines and not lines[-1].strip():
        lines.pop()
    membership = []
    for line_number, line in enumerate(lines, start=1):
        try:
            membership.append(int(line.strip()))
        except ValueError:
            raise PartitionError(f"{path}:{line_number}: community id is not an integer: {line.strip()!r}") from None
    if num_nodes is not None and len(membership) != num_nodes:
        raise PartitionError(f"{path}: {len(membership)} community ids for a graph with {num_nodes} nodes")
    return CommunityAssignment.from_membership(membership)


def save_partition(h: CommunityAssignment, path):
    with open(path, 'w', encoding='utf-8') as f:
        for community in h.membership.tolist():
            f.write(f"{community}\n")
