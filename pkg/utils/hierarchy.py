"""
Hierarchy
Level bookkeeping for the multi-level structure: coarsening through community
assignments, averaged coarse embeddings, the community-count schedule and the
hyperparameter bundle shared by every level.
"""
import dataclasses
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import ConfigError, InfeasibleSpecError, PartitionError
from .graph_core import Graph
from .modularity_partition import CommunityAssignment, build_state, initial_partition, modularity

logger = logging.getLogger(__name__)

# the square-root schedule closes with a single all-encompassing level below this
MIN_SCHEDULED_COMMUNITIES = 10


@dataclass(frozen=True)
class MaziConfig:
    """Hyperparameters of the joint embedding / community model"""
    levels: Optional[int] = None
    dim: int = 128
    lr: Tuple[float, ...] = (0.025,)
    epochs: Tuple[int, ...] = (1,)
    window: int = 5
    walk_length: int = 20
    walks_per_node: int = 10
    iterations: int = 1
    alpha: Tuple[float, ...] = (1.0,)
    beta: Tuple[float, ...] = (1.0,)
    gamma: Tuple[float, ...] = (1.0,)
    negatives: int = 5
    community_counts: Optional[Tuple[int, ...]] = None
    max_sweeps: int = 10
    rebuild_coarse: bool = True
    parallel: bool = False
    workers: int = 4
    optimizer: str = 'sgd'
    batch_size: int = 4096
    p: float = 1.0
    q: float = 1.0
    baseline_epochs: int = 1
    baseline_lr: float = 0.025
    seed: int = 0

    def __post_init__(self):
        for name in ('lr', 'epochs', 'alpha', 'beta', 'gamma'):
            value = getattr(self, name)
            if not isinstance(value, tuple):
                value = tuple(value) if isinstance(value, (list, np.ndarray)) else (value,)
                object.__setattr__(self, name, value)
        if self.community_counts is not None and not isinstance(self.community_counts, tuple):
            object.__setattr__(self, 'community_counts', tuple(int(c) for c in self.community_counts))
        self.validate()

    def validate(self):
        if self.levels is not None and self.levels < 2:
            raise ConfigError(f"levels must be at least 2, got {self.levels}", 'levels')
        if self.dim < 1:
            raise ConfigError(f"dim must be at least 1, got {self.dim}", 'dim')
        if self.walk_length < 2:
            raise ConfigError(f"walk_length must be at least 2, got {self.walk_length}", 'walk_length')
        if self.window < 1:
            raise ConfigError(f"window must be at least 1, got {self.window}", 'window')
        if self.walks_per_node < 1:
            raise ConfigError(f"walks_per_node must be at least 1, got {self.walks_per_node}", 'walks_per_node')
        if self.negatives < 0:
            raise ConfigError(f"negatives must be nonnegative, got {self.negatives}", 'negatives')
        if self.iterations < 0:
            raise ConfigError(f"iterations must be nonnegative, got {self.iterations}", 'iterations')
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be positive, got {self.batch_size}", 'batch_size')
        if self.optimizer not in ('sgd', 'adam'):
            raise ConfigError(f"optimizer must be 'sgd' or 'adam', got {self.optimizer!r}", 'optimizer')
        if self.p <= 0 or self.q <= 0:
            raise ConfigError("p and q must be positive", 'p')
        for name in ('lr', 'alpha', 'beta', 'gamma'):
            if any(v < 0 for v in getattr(self, name)):
                raise ConfigError(f"{name} must be nonnegative", name)
        if any(e < 0 for e in self.epochs):
            raise ConfigError("epochs must be nonnegative", 'epochs')
        counts = self.community_counts
        if counts is not None:
            if any(c < 1 for c in counts):
                raise ConfigError("community_counts must be positive", 'community_counts')
            if any(b >= a for a, b in zip(counts, counts[1:])):
                raise ConfigError(f"community_counts must be strictly decreasing, got {list(counts)}", 'community_counts')

    def at_level(self, name, level):
        """Per-level value (1-based level); short lists repeat their last entry"""
        values = getattr(self, name)
        return values[min(level, len(values)) - 1]

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


@dataclass
class LevelState:
    """Graph, outgoing community assignment (None at the top level) and embeddings of one level"""
    graph: Graph
    assignment: Optional[CommunityAssignment]
    embeddings: np.ndarray


@dataclass
class Hierarchy:
    levels: List[LevelState]
    config: MaziConfig
    provenance: dict = field(default_factory=dict)

    @property
    def num_levels(self):
        return len(self.levels)

    def level(self, l) -> LevelState:
        """1-based level access"""
        return self.levels[l - 1]

    def node_counts(self):
        return [state.graph.num_nodes for state in self.levels]

    def assignments(self):
        return [state.assignment for state in self.levels[:-1]]

    def validate(self):
        counts = self.node_counts()
        if any(b >= a for a, b in zip(counts, counts[1:])):
            raise InfeasibleSpecError(f"Level sizes must strictly decrease, got {counts}")
        for l in range(1, self.num_levels):
            state, coarse = self.level(l), self.level(l + 1)
            if state.assignment is None or state.assignment.num_communities != coarse.graph.num_nodes:
                raise PartitionError(f"Assignment at level {l} does not map onto level {l + 1}")
        for l, state in enumerate(self.levels, start=1):
            if state.embeddings.shape[0] != state.graph.num_nodes:
                raise PartitionError(f"Embedding rows at level {l} do not match its graph")
        return self


def coarsen(g: Graph, h: CommunityAssignment) -> Graph:
    """
    Collapse every community into one node

    Crossing edges accumulate into coarse edges; intra-community edges and
    self-loops accumulate into the coarse node's self-loop, so total weight is
    conserved.
    """
    h.validate(g)
    u, v, w = g.edges()
    loops = np.flatnonzero(g.self_loops)
    membership = h.membership
    src = np.concatenate([membership[u], membership[loops]])
    dst = np.concatenate([membership[v], membership[loops]])
    weights = np.concatenate([w, g.self_loops[loops]])
    return Graph.from_edges(h.num_communities, src, dst, weights)


def average_up(x_fine: np.ndarray, h: CommunityAssignment) -> np.ndarray:
    """Row c of the result is the mean of the fine rows assigned to community c"""
    if x_fine.shape[0] != len(h.membership):
        raise PartitionError(f"Embedding has {x_fine.shape[0]} rows but assignment covers {len(h.membership)} nodes")
    sums = np.zeros((h.num_communities, x_fine.shape[1]), dtype=np.float64)
    np.add.at(sums, h.membership, x_fine)
    return sums / h.sizes()[:, None]


def sqrt_schedule(n: int) -> List[int]:
    """
    floor(sqrt(n)) communities per level, closed by a single all-encompassing
    community once the next count would fall below 10
    """
    counts = []
    current = n
    while True:
        k = math.isqrt(current)
        if k < MIN_SCHEDULED_COMMUNITIES:
            if current > 1:
                counts.append(1)
            return counts
        counts.append(k)
        current = k


def community_schedule(n: int, config: MaziConfig, provided: Sequence[CommunityAssignment] = ()) -> List[int]:
    """Community count for each of the L-1 assignments"""
    if config.community_counts is not None:
        counts = list(config.community_counts)
        for i, h in enumerate(provided):
            if i < len(counts):
                counts[i] = h.num_communities
    else:
        # a full chain (prior hierarchy) is used as given; a lone level-1 partition is extended
        counts = [h.num_communities for h in provided]
        last = counts[-1] if counts else n
        wants_more = config.levels is not None and len(counts) < config.levels - 1
        if last > 1 and (len(provided) <= 1 or wants_more):
            counts.extend(sqrt_schedule(last))

    if config.levels is not None:
        if len(counts) < config.levels - 1:
            raise InfeasibleSpecError(
                f"Schedule {counts} yields only {len(counts) + 1} levels, {config.levels} requested"
            )
        counts = counts[:config.levels - 1]

    if not counts:
        raise InfeasibleSpecError(f"No coarse level can be built for a graph with {n} nodes")
    sizes = [n] + counts
    for level, (fine, coarse) in enumerate(zip(sizes, sizes[1:]), start=1):
        if coarse >= fine:
            raise InfeasibleSpecError(
                f"Level {level} has {fine} nodes but {coarse} communities were requested", level=level
            )
    return counts


def init_gxh(g1: Graph, x1: np.ndarray, config: MaziConfig,
             init_h: Union[None, CommunityAssignment, Sequence[CommunityAssignment]] = None, seed=None) -> Hierarchy:
    """
    Build all levels: partition, coarsen and average upwards

    init_h may be a level-1 partition or a chain of partitions (finest first);
    missing levels are partitioned with the greedy partitioner.
    """
    if x1.shape[0] != g1.num_nodes:
        raise PartitionError(f"Embedding has {x1.shape[0]} rows for a graph with {g1.num_nodes} nodes")
    if init_h is None:
        provided = []
    elif isinstance(init_h, CommunityAssignment):
        provided = [init_h]
    else:
        provided = list(init_h)

    counts = community_schedule(g1.num_nodes, config, provided)
    levels = [LevelState(graph=g1, assignment=None, embeddings=np.array(x1, dtype=np.float64))]
    for l, k in enumerate(counts, start=1):
        current = levels[-1]
        if l <= len(provided):
            h = provided[l - 1].copy().validate(current.graph)
        else:
            h = initial_partition(current.graph, k, seed=seed)
        current.assignment = h
        coarse = coarsen(current.graph, h)
        levels.append(LevelState(graph=coarse, assignment=None, embeddings=average_up(current.embeddings, h)))
        logger.info(f"Level {l + 1}: {coarse.num_nodes} nodes, total weight {coarse.total_weight:g}")

    hierarchy = Hierarchy(levels=levels, config=config)
    hierarchy.provenance['schedule'] = [g1.num_nodes] + counts
    return hierarchy.validate()


def rebuild_coarse(hierarchy: Hierarchy, l: int):
    """Recompute G^{j+1} = coarsen(G^j, H^j) for j = l ... L-1"""
    for j in range(l, hierarchy.num_levels):
        fine = hierarchy.level(j)
        hierarchy.level(j + 1).graph = coarsen(fine.graph, fine.assignment)


def refresh_top(hierarchy: Hierarchy):
    """Top-level embeddings become the average of the level below"""
    below = hierarchy.levels[-2]
    hierarchy.levels[-1].embeddings = average_up(below.embeddings, below.assignment)


def level_modularity(hierarchy: Hierarchy, l: int) -> float:
    state = hierarchy.level(l)
    if state.assignment is None or state.graph.total_weight == 0:
        return 0.0
    return modularity(build_state(state.graph, state.assignment))


def hierarchy_summary(hierarchy: Hierarchy, embedding_files: Optional[Sequence[str]] = None) -> dict:
    """Serializable description of every level"""
    summary = {'num_levels': hierarchy.num_levels, 'node_counts': hierarchy.node_counts(), 'levels': []}
    for l, state in enumerate(hierarchy.levels, start=1):
        entry = {
            'level': l,
            'num_nodes': state.graph.num_nodes,
            'num_edges': state.graph.num_edges,
            'total_weight': state.graph.total_weight,
            'embedding_file': embedding_files[l - 1] if embedding_files else None,
        }
        if state.assignment is not None:
            entry['num_communities'] = state.assignment.num_communities
            entry['modularity'] = level_modularity(hierarchy, l)
            entry['membership'] = state.assignment.membership.tolist()
        summary['levels'].append(entry)
    return summary
