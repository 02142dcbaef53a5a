"""
Synthetic Hierarchical Graph Generator
Leaves of a balanced community tree become graph nodes. Each node draws a
power-law degree and, per edge stub, the tree level at which it meets its
partner from a geometric progression, so cross-community edges thin out going
up the hierarchy. Labels follow the neighbors' second-last-level communities.
"""
import logging
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .errors import ConfigError, GraphFormatError, InfeasibleSpecError
from .graph_core import Graph, NodeLabels, largest_connected_component
from .modularity_partition import CommunityAssignment, build_state, modularity
from .random_streams import RandomStreams

logger = logging.getLogger(__name__)

BENCHMARK_RATIOS = (1.05, 1.2, 1.4, 1.6, 1.8, 2.0)


@dataclass(frozen=True)
class TreeSpec:
    """
    Community tree and degree model

    branching is listed from the root down; the last factor is the number of
    leaves under each second-last-level community.
    """
    branching: Tuple[int, ...]
    common_ratio: float = 1.2
    power_law_exponent: float = 4.5
    max_degree: float = 187
    min_degree: int = 1
    mean_degree: Optional[float] = None
    seed: int = 0
    label_draws: int = 1

    def __post_init__(self):
        object.__setattr__(self, 'branching', tuple(int(b) for b in self.branching))
        if not self.branching:
            raise ConfigError("branching needs at least one factor", 'branching')
        if any(b < 1 for b in self.branching):
            raise ConfigError(f"branching factors must be positive, got {list(self.branching)}", 'branching')
        if self.common_ratio <= 1.0:
            raise ConfigError(f"common_ratio must be greater than 1, got {self.common_ratio}", 'common_ratio')
        if self.max_degree < 1:
            raise ConfigError(f"max_degree must be at least 1, got {self.max_degree}", 'max_degree')
        if not 1 <= self.min_degree <= self.degree_cap:
            raise ConfigError(f"min_degree must lie in [1, {self.degree_cap}], got {self.min_degree}", 'min_degree')
        if self.label_draws < 1:
            raise ConfigError("label_draws must be at least 1", 'label_draws')

    @property
    def levels(self):
        """Tree levels including the leaves and the root"""
        return len(self.branching) + 1

    @property
    def num_leaves(self):
        return int(np.prod(self.branching))

    @property
    def degree_cap(self):
        return int(np.floor(self.max_degree))

    def block_sizes(self):
        """Leaves under one community at tree levels 1 (a leaf) up to the root"""
        sizes = [1]
        for b in reversed(self.branching):
            sizes.append(sizes[-1] * b)
        return sizes

    def replace(self, **changes):
        return replace(self, **changes)


PRESETS: Dict[str, TreeSpec] = {
    'paper-synth': TreeSpec(branching=(5, 5, 5, 75), common_ratio=1.2, power_law_exponent=4.5,
                            max_degree=187, mean_degree=33.0),
    'figure1': TreeSpec(branching=(5, 5, 5, 30), common_ratio=3.0, power_law_exponent=4.5,
                        max_degree=8, mean_degree=7.5),
}
PRESETS['benchmark'] = PRESETS['paper-synth']


@dataclass
class GroundTruth:
    """
    Ancestor communities per node

    ancestors[v, j] is the community of node v at tree level j + 2 (column 0 is
    the second-last level, the last column the root). Ids are compact per column.
    """
    ancestors: np.ndarray
    labels: Optional[NodeLabels] = None
    report: dict = field(default_factory=dict)

    @property
    def num_nodes(self):
        return self.ancestors.shape[0]

    def finest_partition(self) -> CommunityAssignment:
        return CommunityAssignment.from_membership(self.ancestors[:, 0])

    def prior_partitions(self) -> List[CommunityAssignment]:
        """Tree levels as a chain of assignments, finest first, each over the previous level's communities"""
        chain = [self.finest_partition()]
        for j in range(1, self.ancestors.shape[1]):
            fine = CommunityAssignment.from_membership(self.ancestors[:, j - 1]).membership
            coarse = CommunityAssignment.from_membership(self.ancestors[:, j]).membership
            mapping = np.zeros(fine.max() + 1, dtype=np.int64)
            mapping[fine] = coarse
            chain.append(CommunityAssignment.from_membership(mapping))
        return chain


def meeting_level_distribution(spec: TreeSpec) -> np.ndarray:
    """
    p(j) proportional to common_ratio ** -(j - 1) for meeting levels j = 1 .. levels - 1

    j = 1 means the two leaves share their second-last-level community; each step
    up the tree divides the weight by the common ratio.
    """
    j = np.arange(1, spec.levels)
    weights = np.power(float(spec.common_ratio), -(j - 1.0))
    return weights / weights.sum()


def power_law_pmf(exponent: float, low: int, high: int) -> Tuple[np.ndarray, np.ndarray]:
    support = np.arange(low, high + 1, dtype=np.float64)
    weights = np.power(support, -float(exponent))
    return support.astype(np.int64), weights / weights.sum()


def resolve_min_degree(spec: TreeSpec) -> int:
    """Largest support minimum whose power-law mean does not exceed spec.mean_degree"""
    if spec.mean_degree is None:
        return spec.min_degree
    best = None
    for low in range(1, spec.degree_cap + 1):
        support, pmf = power_law_pmf(spec.power_law_exponent, low, spec.degree_cap)
        if float(support @ pmf) <= spec.mean_degree:
            best = low
        else:
            break
    if best is None:
        raise ConfigError(f"mean_degree {spec.mean_degree} is below the smallest achievable mean", 'mean_degree')
    return best


def sample_degrees(spec: TreeSpec, n: int, rng, min_degree: Optional[int] = None) -> np.ndarray:
    """Inverse-CDF draws from the discrete power law on [min_degree, floor(max_degree)]"""
    low = spec.min_degree if min_degree is None else min_degree
    support, pmf = power_law_pmf(spec.power_law_exponent, low, spec.degree_cap)
    cdf = np.cumsum(pmf)
    index = np.searchsorted(cdf, rng.random(n) * cdf[-1], side='right')
    return support[np.minimum(index, len(support) - 1)]


def _tree_ancestors(spec: TreeSpec) -> np.ndarray:
    leaves = np.arange(spec.num_leaves, dtype=np.int64)
    sizes = spec.block_sizes()
    return np.stack([leaves // size for size in sizes[1:]], axis=1)


def generate_graph(spec: TreeSpec) -> Tuple[Graph, GroundTruth]:
    """
    Stub-based generation over the community tree, restricted to the largest
    connected component

    Partners for a stub at meeting level j are uniform over the leaves sharing the
    level-(j + 1) ancestor but not the level-j one. Duplicate pairs collapse to one
    unit-weight edge.
    """
    sizes = spec.block_sizes()
    for j in range(1, spec.levels):
        if sizes[j] - sizes[j - 1] <= 0:
            raise InfeasibleSpecError(
                f"Tree level {j + 1} has a single child, so no partner exists at meeting level {j}", level=j
            )

    streams = RandomStreams(spec.seed)
    rng = streams.get('generator')
    n = spec.num_leaves
    min_degree = resolve_min_degree(spec)
    degrees = sample_degrees(spec, n, rng, min_degree)

    src = np.repeat(np.arange(n, dtype=np.int64), degrees)
    probabilities = meeting_level_distribution(spec)
    meeting = rng.choice(np.arange(1, spec.levels), size=len(src), p=probabilities)
    block = np.asarray(sizes, dtype=np.int64)[meeting]
    child = np.asarray(sizes, dtype=np.int64)[meeting - 1]
    block_start = (src // block) * block
    child_start = (src // child) * child
    offset = (rng.random(len(src)) * (block - child)).astype(np.int64)
    dst = block_start + offset
    dst = np.where(dst >= child_start, dst + child, dst)

    lo, hi = np.minimum(src, dst), np.maximum(src, dst)
    keys = np.unique(lo * n + hi)
    full = Graph.from_edges(n, keys // n, keys % n)
    g, kept = largest_connected_component(full)
    if len(kept) < n:
        logger.warning(f"Largest connected component keeps {len(kept)} of {n} generated nodes")

    ancestors = _tree_ancestors(spec)[kept]
    compact = np.stack(
        [CommunityAssignment.from_membership(ancestors[:, j]).membership for j in range(ancestors.shape[1])], axis=1
    )
    gt = GroundTruth(ancestors=compact)
    gt.report = {
        'num_nodes': g.num_nodes,
        'num_edges': g.num_edges,
        'generated_nodes': n,
        'common_ratio': spec.common_ratio,
        'min_degree': min_degree,
        'mean_directed_degree': float(degrees.mean()),
        'max_directed_degree': int(degrees.max()),
        'mean_degree': float(g.degrees().mean()),
        'prior_modularity': modularity(build_state(g, gt.finest_partition())),
    }
    logger.info(
        f"Generated {g.num_nodes} nodes / {g.num_edges} edges (ratio {spec.common_ratio}, "
        f"mean directed degree {gt.report['mean_directed_degree']:.2f}, prior Q {gt.report['prior_modularity']:.4f})"
    )
    return g, gt


def generate_labels(g: Graph, gt: GroundTruth, seed=0, draws: int = 1) -> NodeLabels:
    """
    Each node samples a neighbor (weight-proportional) and takes its second-last-level
    community as label; draws > 1 repeats the sampling and keeps the distinct labels
    """
    finest = gt.ancestors[:, 0]
    num_labels = int(finest.max()) + 1 if len(finest) else 0
    degrees = np.diff(g.indptr)
    if np.any(degrees == 0):
        isolated = int(np.flatnonzero(degrees == 0)[0])
        raise GraphFormatError(f"Node {isolated} has no neighbors to draw a label from")

    rng = RandomStreams(seed).get('labels')
    cumulative = np.cumsum(g.weights)
    padded = np.concatenate([[0.0], cumulative])
    base = padded[g.indptr[:-1]]
    row_weight = padded[g.indptr[1:]] - base
    nodes = np.repeat(np.arange(g.num_nodes), draws)
    targets = base[nodes] + rng.random(len(nodes)) * row_weight[nodes]
    index = np.clip(np.searchsorted(cumulative, targets, side='right'), g.indptr[nodes], g.indptr[nodes + 1] - 1)
    drawn = finest[g.indices[index]].reshape(g.num_nodes, draws)
    labels = tuple(tuple(sorted(set(row.tolist()))) for row in drawn)
    return NodeLabels(labels=labels, num_labels=num_labels)


def generate(spec: TreeSpec) -> Tuple[Graph, GroundTruth]:
    """Graph plus labels in one call"""
    g, gt = generate_graph(spec)
    gt.labels = generate_labels(g, gt, seed=spec.seed, draws=spec.label_draws)
    gt.report['num_labels'] = gt.labels.num_labels
    return g, gt


def modularity_sweep(ratios: Sequence[float], seeds: Sequence[int], template: TreeSpec) -> pd.DataFrame:
    """Mean prior-partition modularity and degree per common ratio"""
    rows = []
    for ratio in ratios:
        for seed in seeds:
            _, gt = generate_graph(template.replace(common_ratio=float(ratio), seed=int(seed)))
            rows.append({
                'ratio': float(ratio),
                'seed': int(seed),
                'Q': gt.report['prior_modularity'],
                'mean_directed_degree': gt.report['mean_directed_degree'],
                'mean_degree': gt.report['mean_degree'],
            })
            logger.debug(f"ratio={ratio} seed={seed}: Q={rows[-1]['Q']:.4f}")
    frame = pd.DataFrame(rows)
    table = frame.groupby('ratio', sort=True).agg(
        mean_Q=('Q', 'mean'), std_Q=('Q', 'std'),
        mean_directed_degree=('mean_directed_degree', 'mean'), mean_degree=('mean_degree', 'mean'),
    ).reset_index()
    return table


def save_ground_truth(gt: GroundTruth, path, original_ids=None):
    """One line per node: node id, then its ancestor path finest first, comma separated"""
    ids = np.arange(gt.num_nodes) if original_ids is None else np.asarray(original_ids)
    with open(path, 'w', encoding='utf-8') as f:
        for node, path_row in zip(ids.tolist(), gt.ancestors.tolist()):
            f.write(f"{node} {','.join(str(c) for c in path_row)}\n")


def load_ground_truth(path, original_ids=None) -> GroundTruth:
    """
    Read ancestor paths; with original_ids, row i belongs to node original_ids[i]
    and every such node must be present. Ids are re-compacted per column.
    """
    rows = {}
    with open(path, 'r', encoding='utf-8') as f:
        for line_number, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            tokens = line.split(None, 1)
            if len(tokens) != 2:
                raise GraphFormatError("Expected 'node_id c1,c2,...'", path, line_number)
            try:
                rows[int(tokens[0])] = [int(c) for c in tokens[1].split(',')]
            except ValueError:
                raise GraphFormatError("Ancestor ids must be integers", path, line_number) from None
    if len({len(r) for r in rows.values()}) > 1:
        raise GraphFormatError("Ancestor paths have different lengths", path)
    nodes = sorted(rows) if original_ids is None else [int(v) for v in original_ids]
    missing = [v for v in nodes if v not in rows]
    if missing:
        raise GraphFormatError(f"No ancestor path for {len(missing)} nodes (first: {missing[0]})", path)
    ancestors = np.array([rows[v] for v in nodes], dtype=np.int64)
    compact = np.stack(
        [CommunityAssignment.from_membership(ancestors[:, j]).membership for j in range(ancestors.shape[1])], axis=1
    )
    return GroundTruth(ancestors=compact)
