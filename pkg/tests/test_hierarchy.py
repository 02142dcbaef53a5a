import numpy as np
import pytest

from utils.errors import ConfigError, InfeasibleSpecError
from utils.hierarchy import (
    MaziConfig, average_up, coarsen, community_schedule, hierarchy_summary, init_gxh, level_modularity,
    rebuild_coarse, refresh_top, sqrt_schedule,
)
from utils.modularity_partition import CommunityAssignment, build_state, modularity
from tests.conftest import random_graph


def test_sqrt_schedule():
    assert sqrt_schedule(20111) == [141, 11, 1]
    assert sqrt_schedule(10312) == [101, 10, 1]
    assert sqrt_schedule(50) == [1]
    assert sqrt_schedule(1) == []


def test_config_schedule_takes_precedence():
    config = MaziConfig(community_counts=(50, 5))
    assert community_schedule(1000, config) == [50, 5]


def test_levels_truncate_schedule():
    assert community_schedule(20111, MaziConfig(levels=3)) == [141, 11]
    with pytest.raises(InfeasibleSpecError):
        community_schedule(20111, MaziConfig(levels=6))


def test_schedule_rejects_too_many_communities():
    with pytest.raises(InfeasibleSpecError) as excinfo:
        community_schedule(10, MaziConfig(community_counts=(10, 2)))
    assert excinfo.value.level == 1


def test_config_rejects_non_decreasing_counts():
    with pytest.raises(ConfigError):
        MaziConfig(community_counts=(5, 5))
    with pytest.raises(ConfigError):
        MaziConfig(levels=1)


def test_at_level_repeats_last_entry():
    config = MaziConfig(lr=(0.1, 0.01), beta=2.0)
    assert config.at_level('lr', 1) == 0.1
    assert config.at_level('lr', 4) == 0.01
    assert config.at_level('beta', 3) == 2.0


def test_coarsen_conserves_weight():
    rng = np.random.default_rng(2)
    for seed in range(50):
        g = random_graph(40, 90, seed, weighted=True, self_loops=seed % 4)
        k = int(rng.integers(1, 12))
        membership = np.concatenate([np.arange(k), rng.integers(0, k, size=40 - k)])
        h = CommunityAssignment.from_membership(rng.permutation(membership))
        coarse = coarsen(g, h)
        assert coarse.num_nodes == k
        assert coarse.total_weight == pytest.approx(g.total_weight)
        assert coarse.degrees().sum() == pytest.approx(g.degrees().sum())
        np.testing.assert_allclose(coarse.degrees(), np.bincount(h.membership, weights=g.degrees(), minlength=k))


def test_coarsen_two_triangles(two_triangles, triangle_partition):
    coarse = coarsen(two_triangles, triangle_partition)
    assert coarse.num_nodes == 2
    assert coarse.self_loops.tolist() == [3.0, 3.0]
    assert coarse.neighbors(0)[1].tolist() == [1.0]


def test_average_up():
    x = np.arange(12, dtype=float).reshape(4, 3)
    h = CommunityAssignment.from_membership([1, 0, 1, 0])
    averaged = average_up(x, h)
    np.testing.assert_allclose(averaged[0], (x[1] + x[3]) / 2)
    np.testing.assert_allclose(averaged[1], (x[0] + x[2]) / 2)


def test_init_gxh_builds_consistent_levels(two_triangles, triangle_partition):
    x1 = np.random.default_rng(0).normal(size=(6, 4))
    config = MaziConfig(community_counts=(2, 1))
    hierarchy = init_gxh(two_triangles, x1, config)
    assert hierarchy.node_counts() == [6, 2, 1]
    assert hierarchy.level(1).assignment == triangle_partition
    np.testing.assert_allclose(hierarchy.level(2).embeddings, average_up(x1, triangle_partition))
    np.testing.assert_allclose(hierarchy.level(3).embeddings[0], x1.mean(axis=0))
    assert hierarchy.level(3).assignment is None
    assert level_modularity(hierarchy, 1) == pytest.approx(5.0 / 14.0)
    assert hierarchy.provenance['schedule'] == [6, 2, 1]


def test_init_gxh_keeps_provided_partition(two_triangles, misassigned_bridge):
    x1 = np.zeros((6, 2))
    hierarchy = init_gxh(two_triangles, x1, MaziConfig(community_counts=(3, 1)), init_h=misassigned_bridge)
    assert hierarchy.level(1).assignment == misassigned_bridge
    assert hierarchy.node_counts() == [6, 2, 1]


def test_init_gxh_accepts_partition_chain(two_triangles, triangle_partition):
    chain = [triangle_partition, CommunityAssignment.from_membership([0, 0])]
    hierarchy = init_gxh(two_triangles, np.zeros((6, 3)), MaziConfig(), init_h=chain)
    assert hierarchy.node_counts() == [6, 2, 1]


def test_refresh_top(two_triangles):
    x1 = np.random.default_rng(1).normal(size=(6, 3))
    hierarchy = init_gxh(two_triangles, x1, MaziConfig(community_counts=(2, 1)))
    hierarchy.level(2).embeddings = np.array([[1.0, 2.0, 3.0], [3.0, 4.0, 5.0]])
    refresh_top(hierarchy)
    np.testing.assert_allclose(hierarchy.level(3).embeddings, [[2.0, 3.0, 4.0]])


def test_hierarchy_summary(two_triangles):
    hierarchy = init_gxh(two_triangles, np.zeros((6, 2)), MaziConfig(community_counts=(2,)))
    summary = hierarchy_summary(hierarchy, ['a.txt', 'b.txt'])
    assert summary['node_counts'] == [6, 2]
    assert summary['levels'][0]['membership'] == [0, 0, 0, 1, 1, 1]
    assert summary['levels'][1]['embedding_file'] == 'b.txt'
    assert 'membership' not in summary['levels'][1]


def assert_levels_consistent(hierarchy):
    for l in range(1, hierarchy.num_levels):
        fine, coarse = hierarchy.level(l), hierarchy.level(l + 1)
        assert coarse.graph == coarsen(fine.graph, fine.assignment)


def test_coarse_levels_carry_community_degrees():
    rng = np.random.default_rng(4)
    for seed in range(20):
        n = int(rng.integers(30, 100))
        g = random_graph(n, 3 * n, seed, weighted=seed % 2 == 0, self_loops=seed % 3)
        hierarchy = init_gxh(g, np.zeros((n, 2)), MaziConfig(community_counts=(8, 3)))
        for l in range(1, hierarchy.num_levels):
            state = build_state(hierarchy.level(l).graph, hierarchy.level(l).assignment)
            coarse = hierarchy.level(l + 1).graph
            np.testing.assert_allclose(state.internal_degree, 2.0 * coarse.self_loops, atol=1e-9)
            np.testing.assert_allclose(state.community_degree(), coarse.degrees(), atol=1e-9)
            singletons = CommunityAssignment.singletons(coarse.num_nodes)
            assert modularity(state) == pytest.approx(modularity(build_state(coarse, singletons)), abs=1e-12)


def test_rebuild_coarse_refreshes_every_level_above():
    g = random_graph(80, 240, seed=7)
    hierarchy = init_gxh(g, np.zeros((80, 2)), MaziConfig(community_counts=(12, 4, 2)))
    h1 = hierarchy.level(1).assignment
    sizes = h1.sizes()
    v = int(np.flatnonzero(sizes[h1.membership] > 1)[0])
    h1.membership[v] = (h1.membership[v] + 1) % h1.num_communities
    rebuild_coarse(hierarchy, 1)
    assert_levels_consistent(hierarchy)
    assert hierarchy.level(4).graph.total_weight == pytest.approx(g.total_weight)
