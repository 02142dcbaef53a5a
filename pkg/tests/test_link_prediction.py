import numpy as np
import pytest

from utils.errors import DimensionMismatchError, InfeasibleSpecError
from utils.graph_core import Graph
from utils.link_prediction import (
    DecoderModel, LinkSplit, fit_decoder, make_decoder_split, make_link_split, map_score, mean_average_precision,
    query_ranks, score_pairs,
)
from tests.conftest import random_graph


@pytest.fixture(scope='module')
def thousand_edges():
    return random_graph(200, 1000, seed=21)


def numeric_parameter_gradient(model, name, z, y, eps=1e-6):
    values = model.parameters()[name]
    grad = np.zeros_like(values, dtype=np.float64)
    for index in np.ndindex(values.shape):
        plus, minus = model.copy(), model.copy()
        if name == 'b2':
            plus.b2 += eps
            minus.b2 -= eps
        else:
            getattr(plus, name)[index] += eps
            getattr(minus, name)[index] -= eps
        grad[index] = (plus.loss_and_grads(z, y)[0] - minus.loss_and_grads(z, y)[0]) / (2 * eps)
    return grad


def test_split_sizes(thousand_edges):
    split = make_link_split(thousand_edges, seed=0)
    assert split.val_pos.shape == (50, 2)
    assert split.test_pos.shape == (100, 2)
    assert split.val_neg.shape == (50, 99, 2)
    assert split.test_neg.shape == (100, 99, 2)
    assert split.train_graph.num_edges == 850


def test_split_keeps_every_node_connected(thousand_edges):
    split = make_link_split(thousand_edges, seed=1)
    had_edges = thousand_edges.degrees() > 0
    assert np.all(split.train_graph.degrees()[had_edges] > 0)


def test_held_out_edges_are_removed_and_disjoint(thousand_edges):
    split = make_link_split(thousand_edges, seed=2)
    for pos in (split.val_pos, split.test_pos):
        assert np.all(thousand_edges.has_edges(pos[:, 0], pos[:, 1]))
        assert not np.any(split.train_graph.has_edges(pos[:, 0], pos[:, 1]))
    val_keys = set(map(tuple, split.val_pos.tolist()))
    test_keys = set(map(tuple, split.test_pos.tolist()))
    assert not val_keys & test_keys


def test_negatives_are_distinct_non_edges(thousand_edges):
    split = make_link_split(thousand_edges, negatives=30, seed=3)
    for query in split.test_neg:
        assert not np.any(thousand_edges.has_edges(query[:, 0], query[:, 1]))
        assert np.all(query[:, 0] != query[:, 1])
        assert len(set(map(tuple, query.tolist()))) == 30


def test_split_is_reproducible(thousand_edges):
    a = make_link_split(thousand_edges, seed=4)
    b = make_link_split(thousand_edges, seed=4)
    np.testing.assert_array_equal(a.test_pos, b.test_pos)
    np.testing.assert_array_equal(a.val_neg, b.val_neg)
    assert a.train_graph == b.train_graph


def test_split_infeasible_on_a_path(path_graph):
    with pytest.raises(InfeasibleSpecError):
        make_link_split(path_graph, val_frac=0.5, test_frac=0.5, negatives=1)


def test_decoder_split_sizes(thousand_edges):
    split = make_decoder_split(thousand_edges, seed=0)
    assert len(split.train_pos) == 20
    assert len(split.val_pos) == 10
    assert len(split.test_pos) == 10
    assert split.train_neg.shape == (20, 20, 2)
    assert split.train_graph.num_edges == 960


def test_ranks_are_pessimistic_on_ties():
    ranks = query_ranks(np.array([5.0, 1.0, 2.0]), np.array([[1.0, 2.0], [1.0, 1.0], [3.0, 4.0]]))
    assert ranks.tolist() == [1, 3, 3]


def test_mean_average_precision():
    assert mean_average_precision(np.array([5.0]), np.array([[1.0, 2.0, 3.0]])) == 1.0
    assert mean_average_precision(np.array([0.0]), np.array([[1.0, 2.0, 3.0]])) == pytest.approx(0.25)
    assert mean_average_precision(np.array([5.0, 2.0]), np.array([[1.0], [3.0]])) == pytest.approx(0.75)


def test_map_invariant_to_monotone_transform():
    rng = np.random.default_rng(0)
    pos, neg = rng.normal(size=10), rng.normal(size=(10, 7))
    assert mean_average_precision(pos, neg) == pytest.approx(mean_average_precision(np.exp(pos), np.exp(neg)))


def tie_split(num_nodes=30, negatives=20):
    g = random_graph(num_nodes, 60, seed=0)
    u, v, _ = g.edges()
    pos = np.stack([u[:3], v[:3]], axis=1)
    neg = np.tile(np.array([[0, 0]]), (3, negatives, 1))
    return LinkSplit(train_graph=g, val_pos=pos, val_neg=neg, test_pos=pos, test_neg=neg,
                     negatives_per_positive=negatives)


def test_constant_scores_give_worst_rank():
    split = tie_split()
    x = np.ones((30, 4))
    assert map_score(x, split) == pytest.approx(1.0 / 21.0)
    zero_mlp = DecoderModel(kind='mlp2', w1=np.zeros((4, 3)), b1=np.zeros(3), w2=np.zeros(3), b2=0.0)
    x = np.random.default_rng(1).normal(size=(30, 4))
    assert map_score(x, split, zero_mlp) == pytest.approx(1.0 / 21.0)


def test_distmult_with_unit_relation_matches_dot_product():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(10, 5))
    pairs = rng.integers(0, 10, size=(15, 2))
    np.testing.assert_allclose(
        score_pairs(x, pairs, DecoderModel.initial('distmult', 5)), score_pairs(x, pairs), rtol=1e-12
    )


@pytest.mark.parametrize('kind', ['distmult', 'mlp2'])
def test_decoder_gradients_match_finite_differences(kind):
    rng = np.random.default_rng(3)
    z = rng.normal(size=(12, 4))
    y = (rng.random(12) < 0.5).astype(float)
    model = DecoderModel.initial(kind, 4, hidden=3, seed=1)
    if kind == 'distmult':
        model.relation = rng.normal(size=4)
    _, grads = model.loss_and_grads(z, y)
    for name, grad in grads.items():
        expected = numeric_parameter_gradient(model, name, z, y)
        np.testing.assert_allclose(grad, expected, rtol=1e-4, atol=1e-7)


def test_decoder_rejects_wrong_dimension():
    model = DecoderModel.initial('distmult', 4)
    with pytest.raises(DimensionMismatchError):
        model.logits(np.zeros((2, 3)))


def test_fit_decoder(thousand_edges):
    split = make_decoder_split(thousand_edges, seed=5)
    x = np.random.default_rng(4).normal(scale=0.3, size=(200, 6))
    model, ap = fit_decoder(x, split, 'mlp2', epochs=30, lr=0.1, seed=2)
    assert model.kind == 'mlp2'
    assert 0.0 < ap <= 1.0
    again, ap_again = fit_decoder(x, split, 'mlp2', epochs=30, lr=0.1, seed=2)
    assert ap == ap_again
    np.testing.assert_array_equal(model.w1, again.w1)


def test_fit_decoder_keeps_best_validation_snapshot(thousand_edges):
    split = make_decoder_split(thousand_edges, seed=6)
    x = np.random.default_rng(5).normal(size=(200, 4))
    model, _ = fit_decoder(x, split, 'distmult', epochs=0)
    np.testing.assert_array_equal(model.relation, np.ones(4))


def test_sigmoid_dot_decoder_has_no_training(thousand_edges):
    split = make_decoder_split(thousand_edges, seed=7)
    x = np.random.default_rng(6).normal(size=(200, 4))
    _, ap = fit_decoder(x, split, 'sigmoid-dot')
    assert ap == pytest.approx(map_score(x, split))


def test_edges_of_graph_with_self_loops_split_cleanly():
    g = random_graph(100, 400, seed=9, self_loops=10)
    split = make_link_split(g, val_frac=0.05, test_frac=0.05, negatives=5, seed=0)
    assert len(split.val_pos) == 20
    assert np.allclose(split.train_graph.self_loops, g.self_loops)
    assert isinstance(split.train_graph, Graph)
