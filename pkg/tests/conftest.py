import numpy as np
import pytest

from utils.graph_core import Graph
from utils.hierarchy import MaziConfig
from utils.modularity_partition import CommunityAssignment


def random_graph(n, m, seed, weighted=False, self_loops=0):
    """Simple random graph with m distinct edges (plus optional self-loops)"""
    rng = np.random.default_rng(seed)
    keys = set()
    while len(keys) < m:
        u, v = rng.integers(0, n, size=2)
        if u != v:
            keys.add((min(u, v), max(u, v)))
    src, dst = (np.array(side) for side in zip(*sorted(keys)))
    if self_loops:
        loops = rng.choice(n, size=self_loops, replace=False)
        src, dst = np.concatenate([src, loops]), np.concatenate([dst, loops])
    weights = rng.uniform(0.5, 3.0, size=len(src)) if weighted else None
    return Graph.from_edges(n, src, dst, weights)


@pytest.fixture
def two_triangles():
    """Triangles {0,1,2} and {3,4,5} joined by the bridge 2-3"""
    src = [0, 0, 1, 3, 3, 4, 2]
    dst = [1, 2, 2, 4, 5, 5, 3]
    return Graph.from_edges(6, src, dst)


@pytest.fixture
def triangle_partition():
    return CommunityAssignment.from_membership([0, 0, 0, 1, 1, 1])


@pytest.fixture
def misassigned_bridge():
    """Bridge node 2 placed with the other triangle"""
    return CommunityAssignment.from_membership([0, 0, 1, 1, 1, 1])


@pytest.fixture
def single_edge():
    return Graph.from_edges(2, [0], [1])


@pytest.fixture
def path_graph():
    return Graph.from_edges(4, [0, 1, 2], [1, 2, 3])


@pytest.fixture
def tiny_config():
    return MaziConfig(
        dim=8, lr=(0.05,), epochs=(1,), window=2, walk_length=6, walks_per_node=4, negatives=2,
        batch_size=256, iterations=1, baseline_epochs=2, baseline_lr=0.05, seed=0,
    )


@pytest.fixture
def write_file(tmp_path):
    def write(name, text):
        path = tmp_path / name
        path.write_text(text, encoding='utf-8')
        return str(path)
    return write
