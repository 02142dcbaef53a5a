"""
Link Prediction
Held-out edge splits with fixed negative candidates, MAP under pessimistic tie
ranking, and the learnable pair decoders (DistMult, two-layer MLP) trained on
element-wise products of endpoint embeddings.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, Optional

import numpy as np
from scipy.special import expit

from .errors import DimensionMismatchError, DivergenceError, InfeasibleSpecError
from .graph_core import Graph
from .random_streams import as_generator

logger = logging.getLogger(__name__)

DECODER_KINDS = ('sigmoid-dot', 'distmult', 'mlp2')


@dataclass
class LinkSplit:
    """
    Train graph plus held-out positives, each with its own negative candidates

    *_pos arrays are (k, 2) node pairs, *_neg arrays are (k, R, 2).
    """
    train_graph: Graph
    val_pos: np.ndarray
    val_neg: np.ndarray
    test_pos: np.ndarray
    test_neg: np.ndarray
    negatives_per_positive: int
    train_pos: np.ndarray = field(default_factory=lambda: np.empty((0, 2), dtype=np.int64))
    train_neg: np.ndarray = field(default_factory=lambda: np.empty((0, 0, 2), dtype=np.int64))

    def held_out(self, which):
        if which not in ('train', 'val', 'test'):
            raise ValueError(f"Unknown split part {which!r}")
        return getattr(self, f"{which}_pos"), getattr(self, f"{which}_neg")


def _select_removable(g: Graph, count: int, rng) -> np.ndarray:
    """Edge indices (into g.edges()) whose removal leaves every endpoint with a neighbor"""
    u, v, _ = g.edges()
    remaining = np.diff(g.indptr).astype(np.int64)
    chosen = []
    for e in rng.permutation(len(u)).tolist():
        if len(chosen) == count:
            break
        a, b = u[e], v[e]
        if remaining[a] > 1 and remaining[b] > 1:
            remaining[a] -= 1
            remaining[b] -= 1
            chosen.append(e)
    if len(chosen) < count:
        raise InfeasibleSpecError(
            f"Only {len(chosen)} of {count} edges can be held out without isolating an endpoint"
        )
    return np.array(chosen, dtype=np.int64)


def _sample_non_edges(g: Graph, queries: int, per_query: int, rng) -> np.ndarray:
    """(queries, per_query, 2) uniform non-edges, distinct within each query"""
    n = g.num_nodes
    available = n * (n - 1) // 2 - len(g.indices) // 2
    if per_query > available:
        raise InfeasibleSpecError(f"{per_query} negatives requested but the graph has {available} non-edges")
    result = np.empty((queries, per_query, 2), dtype=np.int64)
    for q in range(queries):
        found = np.empty((0,), dtype=np.int64)
        while len(found) < per_query:
            a = rng.integers(0, n, size=2 * per_query + 8)
            b = rng.integers(0, n, size=2 * per_query + 8)
            lo, hi = np.minimum(a, b), np.maximum(a, b)
            ok = (lo != hi) & ~g.has_edges(lo, hi)
            keys = lo[ok] * n + hi[ok]
            # keep first occurrences in draw order
            merged = np.concatenate([found, keys])
            _, first = np.unique(merged, return_index=True)
            found = merged[np.sort(first)]
        found = found[:per_query]
        result[q, :, 0] = found // n
        result[q, :, 1] = found % n
    return result


def _split(g: Graph, fractions, negatives: int, seed, train_negatives: Optional[int] = None) -> LinkSplit:
    rng = as_generator(seed, 'split')
    u, v, w = g.edges()
    m = len(u)
    counts = [int(round(f * m)) for f in fractions]
    chosen = _select_removable(g, sum(counts), rng)

    keep = np.ones(m, dtype=bool)
    keep[chosen] = False
    loops = np.flatnonzero(g.self_loops)
    train_graph = Graph.from_edges(
        g.num_nodes, np.concatenate([u[keep], loops]), np.concatenate([v[keep], loops]),
        np.concatenate([w[keep], g.self_loops[loops]]),
    )

    parts = np.split(chosen, np.cumsum(counts)[:-1])
    pairs = [np.stack([u[p], v[p]], axis=1) for p in parts]
    val_pos, test_pos = pairs[0], pairs[1]
    split = LinkSplit(
        train_graph=train_graph,
        val_pos=val_pos,
        val_neg=_sample_non_edges(g, len(val_pos), negatives, rng),
        test_pos=test_pos,
        test_neg=_sample_non_edges(g, len(test_pos), negatives, rng),
        negatives_per_positive=negatives,
    )
    if len(pairs) > 2:
        split.train_pos = pairs[2]
        split.train_neg = _sample_non_edges(g, len(pairs[2]), train_negatives or negatives, rng)
    logger.info(
        f"Link split: {len(val_pos)} val / {len(test_pos)} test / {len(split.train_pos)} train positives, "
        f"{negatives} negatives each, train graph keeps {train_graph.num_edges} of {m} edges"
    )
    return split


def make_link_split(g: Graph, val_frac: float = 0.05, test_frac: float = 0.10, negatives: int = 99,
                    seed=0) -> LinkSplit:
    """Hold out round(frac * m) edges for validation and test; 99 non-edge candidates per positive"""
    return _split(g, (val_frac, test_frac), negatives, seed)


def make_decoder_split(g: Graph, train_frac: float = 0.02, val_frac: float = 0.01, test_frac: float = 0.01,
                       negatives: int = 20, seed=0) -> LinkSplit:
    """Decoder protocol: small train / val / test edge sets, all removed from the train graph"""
    return _split(g, (val_frac, test_frac, train_frac), negatives, seed, train_negatives=negatives)


def query_ranks(pos_scores: np.ndarray, neg_scores: np.ndarray) -> np.ndarray:
    """1-based rank of each positive among its negatives; ties count against the positive"""
    return 1 + np.sum(neg_scores >= pos_scores[:, None], axis=1)


def mean_average_precision(pos_scores: np.ndarray, neg_scores: np.ndarray) -> float:
    """With one relevant item per query, AP is 1 / rank"""
    if len(pos_scores) == 0:
        return float('nan')
    return float(np.mean(1.0 / query_ranks(np.asarray(pos_scores), np.asarray(neg_scores))))


@dataclass
class DecoderModel:
    """Scores a node pair from z = x_u * x_v"""
    kind: str = 'sigmoid-dot'
    relation: Optional[np.ndarray] = None
    w1: Optional[np.ndarray] = None
    b1: Optional[np.ndarray] = None
    w2: Optional[np.ndarray] = None
    b2: float = 0.0

    def __post_init__(self):
        if self.kind not in DECODER_KINDS:
            raise ValueError(f"Unknown decoder {self.kind!r}; expected one of {', '.join(DECODER_KINDS)}")

    @classmethod
    def initial(cls, kind: str, dim: int, hidden: Optional[int] = None, seed=0):
        if kind == 'sigmoid-dot':
            return cls(kind=kind)
        if kind == 'distmult':
            return cls(kind=kind, relation=np.ones(dim))
        rng = as_generator(seed, 'decoder')
        hidden = hidden or dim
        return cls(
            kind=kind,
            w1=rng.normal(0.0, np.sqrt(2.0 / dim), size=(dim, hidden)),
            b1=np.zeros(hidden),
            w2=rng.normal(0.0, np.sqrt(1.0 / hidden), size=hidden),
            b2=0.0,
        )

    @property
    def dim(self):
        if self.kind == 'distmult':
            return len(self.relation)
        if self.kind == 'mlp2':
            return self.w1.shape[0]
        return None

    def parameters(self) -> Dict[str, np.ndarray]:
        if self.kind == 'distmult':
            return {'relation': self.relation}
        if self.kind == 'mlp2':
            return {'w1': self.w1, 'b1': self.b1, 'w2': self.w2, 'b2': np.array(self.b2)}
        return {}

    def copy(self):
        params = {k: np.array(v, dtype=np.float64) for k, v in self.parameters().items()}
        if 'b2' in params:
            params['b2'] = float(params['b2'])
        return DecoderModel(kind=self.kind, **params)

    def logits(self, z: np.ndarray) -> np.ndarray:
        if self.dim is not None and z.shape[1] != self.dim:
            raise DimensionMismatchError(f"Decoder expects dimension {self.dim}, embeddings have {z.shape[1]}")
        if self.kind == 'sigmoid-dot':
            return z.sum(axis=1)
        if self.kind == 'distmult':
            return z @ self.relation
        hidden = np.maximum(z @ self.w1 + self.b1, 0.0)
        return hidden @ self.w2 + self.b2

    def loss_and_grads(self, z: np.ndarray, y: np.ndarray):
        """Mean binary cross-entropy and its gradient for every parameter"""
        s = self.logits(z)
        loss = float(np.mean(np.logaddexp(0.0, s) - y * s))
        ds = (expit(s) - y) / len(y)
        if self.kind == 'sigmoid-dot':
            return loss, {}
        if self.kind == 'distmult':
            return loss, {'relation': z.T @ ds}
        pre = z @ self.w1 + self.b1
        hidden = np.maximum(pre, 0.0)
        dh = ds[:, None] * self.w2[None, :] * (pre > 0)
        return loss, {
            'w1': z.T @ dh,
            'b1': dh.sum(axis=0),
            'w2': hidden.T @ ds,
            'b2': np.array(ds.sum()),
        }

    def step(self, grads, lr):
        for name, grad in grads.items():
            if name == 'b2':
                self.b2 = float(self.b2 - lr * grad)
            else:
                setattr(self, name, getattr(self, name) - lr * grad)


def pair_features(x: np.ndarray, pairs: np.ndarray) -> np.ndarray:
    pairs = np.asarray(pairs, dtype=np.int64).reshape(-1, 2)
    return x[pairs[:, 0]] * x[pairs[:, 1]]


def score_pairs(x: np.ndarray, pairs: np.ndarray, decoder: Optional[DecoderModel] = None) -> np.ndarray:
    decoder = decoder or DecoderModel()
    return decoder.logits(pair_features(x, pairs))


def map_score(x: np.ndarray, split: LinkSplit, decoder: Optional[DecoderModel] = None, which: str = 'test') -> float:
    """MAP over the held-out queries of one split part"""
    pos, neg = split.held_out(which)
    if len(pos) == 0:
        return float('nan')
    pos_scores = score_pairs(x, pos, decoder)
    neg_scores = score_pairs(x, neg.reshape(-1, 2), decoder).reshape(neg.shape[0], neg.shape[1])
    return mean_average_precision(pos_scores, neg_scores)


def fit_decoder(x: np.ndarray, split: LinkSplit, kind: str, epochs: int = 200, lr: float = 0.1,
                hidden: Optional[int] = None, seed=0):
    """
    Gradient descent on binary cross-entropy over the split's train positives and
    their negatives; the snapshot with the best validation MAP is scored on test

    Returns:
        (DecoderModel, test AP)
    """
    model = DecoderModel.initial(kind, x.shape[1], hidden=hidden, seed=seed)
    if kind == 'sigmoid-dot' or len(split.train_pos) == 0:
        return model, map_score(x, split, model, 'test')

    negatives = split.train_neg.reshape(-1, 2)
    z = np.vstack([pair_features(x, split.train_pos), pair_features(x, negatives)])
    y = np.concatenate([np.ones(len(split.train_pos)), np.zeros(len(negatives))])

    best, best_val = model.copy(), map_score(x, split, model, 'val')
    for epoch in range(epochs):
        loss, grads = model.loss_and_grads(z, y)
        if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
            raise DivergenceError(f"{kind} decoder diverged at epoch {epoch + 1} (lr={lr})")
        model.step(grads, lr)
        val = map_score(x, split, model, 'val')
        if val > best_val:
            best, best_val = model.copy(), val
        logger.debug(f"{kind} epoch {epoch + 1}: loss={loss:.5f} val MAP={val:.4f}")

    test = map_score(x, split, best, 'test')
    logger.info(f"{kind} decoder: best val MAP {best_val:.4f}, test MAP {test:.4f}")
    return best, test
