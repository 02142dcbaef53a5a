import numpy as np
import pytest
from scipy.special import log_expit

from utils.embedding_trainer import (
    EmbeddingTrainer, NegativeSampler, WalkContext, comm_loss_and_grad, contexts_from_walks, load_embeddings,
    random_walks, save_embeddings, scatter_rows, sg_loss_and_grads, train_flat_baseline, update_x,
)
from utils.errors import DimensionMismatchError, DivergenceError
from utils.graph_core import Graph
from utils.hierarchy import MaziConfig, init_gxh
from tests.conftest import random_graph


def numeric_gradient(f, x, row, eps=1e-6):
    grad = np.zeros(x.shape[1])
    for i in range(x.shape[1]):
        plus, minus = x.copy(), x.copy()
        plus[row, i] += eps
        minus[row, i] -= eps
        grad[i] = (f(plus) - f(minus)) / (2 * eps)
    return grad


def test_walks_shape_and_start_nodes(two_triangles):
    walks = random_walks(two_triangles, r=3, wl=5, seed=1)
    assert walks.shape == (18, 5)
    assert walks[:, 0].tolist() == list(range(6)) * 3


def test_single_edge_walk_alternates(single_edge):
    walks = random_walks(single_edge, r=1, wl=4, seed=0)
    assert walks[0].tolist() == [0, 1, 0, 1]
    assert walks[1].tolist() == [1, 0, 1, 0]


def test_walks_follow_edges():
    g = random_graph(50, 120, seed=4, weighted=True, self_loops=5)
    walks = random_walks(g, r=2, wl=10, seed=3)
    a, b = walks[:, :-1].ravel(), walks[:, 1:].ravel()
    valid = (a >= 0) & (b >= 0)
    assert np.all(g.has_edges(a[valid], b[valid]))


def test_walk_stops_at_node_with_only_self_loop():
    g = Graph.from_edges(3, [0, 2], [1, 2])
    walks = random_walks(g, r=1, wl=3, seed=0)
    assert walks[2].tolist() == [2, -1, -1]


def test_self_loop_is_never_followed():
    g = Graph.from_edges(2, [0, 0], [0, 1], [100.0, 1.0])
    walks = random_walks(g, r=50, wl=2, seed=0)
    assert np.all(walks[0::2, 1] == 1)


def test_transition_proportional_to_weight():
    star = Graph.from_edges(4, [0, 0, 0], [1, 2, 3], [1.0, 1.0, 1000.0])
    walks = random_walks(star, r=3000, wl=2, seed=7)
    first_steps = walks[walks[:, 0] == 0, 1]
    assert np.mean(first_steps == 3) == pytest.approx(1000.0 / 1002.0, abs=0.005)


def test_return_parameter_biases_second_step(path_graph):
    # from 1 after coming from 0: weight 1/p back to 0, 1/q on to 2
    walks = random_walks(path_graph, r=4000, wl=3, seed=2, p=0.25, q=1.0)
    from_zero = walks[walks[:, 0] == 0]
    assert np.all(from_zero[:, 1] == 1)
    assert np.mean(from_zero[:, 2] == 0) == pytest.approx(0.8, abs=0.03)


def test_walks_are_reproducible(two_triangles):
    np.testing.assert_array_equal(random_walks(two_triangles, 2, 6, seed=5), random_walks(two_triangles, 2, 6, seed=5))


def test_contexts_in_walk_order():
    pairs = contexts_from_walks([[10, 11, 12]], k=1)
    assert pairs.tolist() == [[10, 11], [11, 10], [11, 12], [12, 11]]


def test_context_count_matches_window_sizes():
    pairs = contexts_from_walks([[0, 1, 2, 3, 4]], k=2)
    assert len(pairs) == 2 + 3 + 4 + 3 + 2


def test_contexts_skip_padding():
    pairs = contexts_from_walks(np.array([[2, -1, -1]]), k=2)
    assert len(pairs) == 0


def test_negative_sampler_frequencies():
    degrees = np.array([1.0, 16.0, 0.0, 81.0])
    sampler = NegativeSampler(degrees)
    expected = degrees ** 0.75 / np.sum(degrees ** 0.75)
    draws = sampler.sample(200000, np.random.default_rng(0))
    observed = np.bincount(draws, minlength=4) / len(draws)
    np.testing.assert_allclose(observed, expected, atol=0.005)
    assert observed[2] == 0.0


def test_sg_gradients_match_finite_differences():
    rng = np.random.default_rng(0)
    x = rng.normal(scale=0.5, size=(6, 5))
    ctx = WalkContext(center=0, positives=(1, 2, 3), negatives=(4, 5, 4))
    loss, grads = sg_loss_and_grads(x, ctx, alpha=0.7)
    assert loss == pytest.approx(
        np.mean([log_expit(x[0] @ x[j]) for j in (1, 2, 3)]) + 0.7 * np.mean([log_expit(-x[0] @ x[j]) for j in (4, 5, 4)])
    )
    for node, grad in grads.items():
        expected = numeric_gradient(lambda z: sg_loss_and_grads(z, ctx, 0.7)[0], x, node)
        np.testing.assert_allclose(grad, expected, rtol=1e-5, atol=1e-8)


def test_sg_zero_vectors():
    x = np.zeros((3, 4))
    loss, grads = sg_loss_and_grads(x, WalkContext(0, (1, 2)), alpha=1.0)
    assert loss == pytest.approx(np.log(0.5))
    assert all(np.all(g == 0) for g in grads.values())


def test_comm_gradient_matches_finite_differences():
    rng = np.random.default_rng(1)
    x_level, x_parent = rng.normal(size=(4, 3)), rng.normal(size=(2, 3))
    loss, grad = comm_loss_and_grad(x_level, x_parent, 2, 1, beta=1.5)
    assert loss == pytest.approx(1.5 * log_expit(x_level[2] @ x_parent[1]))
    expected = numeric_gradient(lambda z: comm_loss_and_grad(z, x_parent, 2, 1, 1.5)[0], x_level, 2)
    np.testing.assert_allclose(grad, expected, rtol=1e-5, atol=1e-8)
    assert comm_loss_and_grad(x_level, x_parent, 2, 1, beta=0.0)[0] == 0.0


def test_scatter_rows_sums_duplicates():
    index, summed = scatter_rows(np.array([3, 1, 3]), np.array([[1.0, 2.0], [5.0, 5.0], [10.0, 20.0]]))
    assert index.tolist() == [1, 3]
    np.testing.assert_allclose(summed, [[5.0, 5.0], [11.0, 22.0]])


def test_skip_gram_objective_increases_on_single_edge(single_edge):
    config = MaziConfig(dim=4, window=1, walk_length=4, walks_per_node=1, negatives=0, seed=3)
    trainer = EmbeddingTrainer(config)
    x = trainer.initial_embeddings(2)
    objective = [log_expit(x[0] @ x[1])]
    for i in range(20):
        x, _ = trainer.train_level(single_edge, x, epochs=1, lr=0.01, alpha=0.0, counters=(i,))
        objective.append(log_expit(x[0] @ x[1]))
    assert all(b >= a for a, b in zip(objective, objective[1:]))
    assert objective[-1] > objective[0]


def test_initial_embeddings_range(tiny_config):
    x = EmbeddingTrainer(tiny_config).initial_embeddings(100)
    assert x.shape == (100, 8)
    assert np.all(np.abs(x) <= 0.5 / 8)


def test_baseline_is_deterministic(two_triangles, tiny_config):
    a = train_flat_baseline(two_triangles, tiny_config)
    b = train_flat_baseline(two_triangles, tiny_config)
    np.testing.assert_array_equal(a, b)
    c = train_flat_baseline(two_triangles, tiny_config.replace(seed=1))
    assert not np.array_equal(a, c)


def test_update_x_leaves_other_levels_untouched(two_triangles, tiny_config):
    config = tiny_config.replace(community_counts=(2, 1))
    x1 = EmbeddingTrainer(config).initial_embeddings(6)
    hierarchy = init_gxh(two_triangles, x1, config)
    before = [state.embeddings.copy() for state in hierarchy.levels]
    x2, stats = update_x(hierarchy, 2, config, counters=(0, 0, 2))
    assert x2.shape == (2, 8)
    for state, old in zip(hierarchy.levels, before):
        np.testing.assert_array_equal(state.embeddings, old)
    assert stats['comm_loss'] < 0
    assert len(stats['epoch_losses']) == 1


def test_update_x_without_beta_has_no_comm_loss(two_triangles, tiny_config):
    config = tiny_config.replace(community_counts=(2,), beta=(0.0,))
    hierarchy = init_gxh(two_triangles, EmbeddingTrainer(config).initial_embeddings(6), config)
    _, stats = update_x(hierarchy, 1, config)
    assert stats['comm_loss'] == 0.0


def test_parent_term_pulls_towards_parent(two_triangles):
    config = MaziConfig(dim=4, window=1, walk_length=2, walks_per_node=1, negatives=0, alpha=(0.0,),
                        beta=(5.0,), community_counts=(2,), lr=(0.05,), seed=0)
    hierarchy = init_gxh(two_triangles, np.zeros((6, 4)), config)
    hierarchy.level(2).embeddings = np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]])
    x1, _ = EmbeddingTrainer(config).update_x(hierarchy, 1)
    # triangle {0,1,2} moves along axis 0, triangle {3,4,5} along axis 1
    assert np.all(x1[:3, 0] > 0) and np.all(x1[3:, 1] > 0)


def cosine_matrix(x):
    unit = x / np.linalg.norm(x, axis=1, keepdims=True)
    return unit @ unit.T


def test_node_parent_cosine_grows_every_epoch(two_triangles, triangle_partition):
    config = MaziConfig(dim=4, window=1, walk_length=5, walks_per_node=5, negatives=0, alpha=(0.0,),
                        beta=(10.0,), lr=(0.002,), community_counts=(2,), batch_size=5, seed=0)
    x1 = np.random.default_rng(0).normal(scale=0.5, size=(6, 4))
    hierarchy = init_gxh(two_triangles, x1, config, init_h=triangle_partition)
    parents = np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]])
    hierarchy.level(2).embeddings = parents
    trainer = EmbeddingTrainer(config)

    def mean_parent_cosine(x):
        own = parents[triangle_partition.membership]
        return float(np.mean(np.sum(x * own, axis=1) / np.linalg.norm(x, axis=1)))

    trace = [mean_parent_cosine(hierarchy.level(1).embeddings)]
    for epoch in range(5):
        hierarchy.level(1).embeddings, _ = trainer.update_x(hierarchy, 1, counters=(epoch,))
        trace.append(mean_parent_cosine(hierarchy.level(1).embeddings))
    assert all(b > a for a, b in zip(trace, trace[1:]))


def test_baseline_groups_triangle_members(two_triangles):
    intra_pairs = [(0, 1), (0, 2), (1, 2), (3, 4), (3, 5), (4, 5)]
    cross_pairs = [(i, j) for i in range(3) for j in range(3, 6)]
    intra, cross = [], []
    for seed in range(3):
        config = MaziConfig(dim=8, window=2, walk_length=10, walks_per_node=10, negatives=2, batch_size=40,
                            baseline_epochs=20, baseline_lr=0.025, seed=seed)
        cos = cosine_matrix(train_flat_baseline(two_triangles, config))
        intra.append(np.mean([cos[i, j] for i, j in intra_pairs]))
        cross.append(np.mean([cos[i, j] for i, j in cross_pairs]))
    assert np.mean(intra) > np.mean(cross)


def test_parallel_mode_produces_finite_embeddings(two_triangles, tiny_config):
    config = tiny_config.replace(parallel=True, workers=2, batch_size=12)
    x = train_flat_baseline(two_triangles, config)
    assert x.shape == (6, 8)
    assert np.all(np.isfinite(x))


def test_adam_optimizer_runs(two_triangles, tiny_config):
    x = train_flat_baseline(two_triangles, tiny_config.replace(optimizer='adam'))
    assert np.all(np.isfinite(x))


def test_non_finite_gradient_raises(two_triangles, tiny_config):
    trainer = EmbeddingTrainer(tiny_config)
    x = trainer.initial_embeddings(6)
    x[0, 0] = np.nan
    with pytest.raises(DivergenceError):
        trainer.train_level(two_triangles, x, epochs=1, lr=0.1, alpha=1.0)


def test_shape_mismatch_raises(two_triangles, tiny_config):
    with pytest.raises(DimensionMismatchError):
        EmbeddingTrainer(tiny_config).train_level(two_triangles, np.zeros((6, 3)), epochs=1, lr=0.1, alpha=1.0)


def test_embedding_file_round_trip(tmp_path):
    x = np.random.default_rng(0).normal(size=(3, 4))
    path = str(tmp_path / 'emb.txt')
    save_embeddings(x, path, node_ids=[30, 10, 20])
    np.testing.assert_array_equal(load_embeddings(path, node_ids=[30, 10, 20]), x)
    np.testing.assert_array_equal(load_embeddings(path), x[[1, 2, 0]])


def test_embedding_file_errors(write_file):
    with pytest.raises(DimensionMismatchError):
        load_embeddings(write_file('bad.txt', "2 3\n0 1.0 2.0 3.0\n1 1.0 2.0\n"))
    with pytest.raises(DimensionMismatchError):
        load_embeddings(write_file('short.txt', "1 2\n0 1.0 2.0\n"), node_ids=[0, 5])
