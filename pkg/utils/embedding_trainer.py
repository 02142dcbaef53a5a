"""
Embedding Trainer
Weighted random walks, window contexts, skip-gram with negative sampling and the
community-proximity terms that tie each level's embeddings to its parents and
children.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse as sp
from scipy.special import expit, log_expit

from .errors import DimensionMismatchError, DivergenceError, GraphFormatError
from .graph_core import Graph
from .random_streams import RandomStreams, as_generator

logger = logging.getLogger(__name__)

NEGATIVE_POWER = 0.75
BASELINE_COUNTERS = (0, 0, 0)
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class WalkContext:
    """One center node with its window positives and drawn negatives"""
    center: int
    positives: Tuple[int, ...]
    negatives: Tuple[int, ...] = ()


class NegativeSampler:
    """Alias table over nodes with probability proportional to degree ** 0.75"""

    def __init__(self, degrees, power=NEGATIVE_POWER):
        weights = np.power(np.asarray(degrees, dtype=np.float64), power)
        total = weights.sum()
        if total <= 0:
            raise GraphFormatError("Cannot build a negative sampler over zero-degree nodes")
        self.probabilities = weights / total
        self.prob, self.alias = self._build_alias(self.probabilities)

    @staticmethod
    def _build_alias(probabilities):
        n = len(probabilities)
        scaled = probabilities * n
        prob = np.ones(n, dtype=np.float64)
        alias = np.arange(n, dtype=np.int64)
        small = [i for i in range(n) if scaled[i] < 1.0]
        large = [i for i in range(n) if scaled[i] >= 1.0]
        while small and large:
            s, l = small.pop(), large.pop()
            prob[s] = scaled[s]
            alias[s] = l
            scaled[l] = scaled[l] - (1.0 - scaled[s])
            if scaled[l] < 1.0:
                small.append(l)
            else:
                large.append(l)
        # leftovers are 1.0 up to rounding
        return prob, alias

    def sample(self, size, rng):
        slots = rng.integers(0, len(self.prob), size=size)
        keep = rng.random(size=size) < self.prob[slots]
        return np.where(keep, slots, self.alias[slots])


def _first_order_step(g: Graph, cumulative, base, row_weight, nodes, rng):
    targets = base[nodes] + rng.random(len(nodes)) * row_weight[nodes]
    index = np.searchsorted(cumulative, targets, side='right')
    index = np.clip(index, g.indptr[nodes], g.indptr[nodes + 1] - 1)
    return g.indices[index]


def random_walks(g: Graph, r: int, wl: int, seed=0, p: float = 1.0, q: float = 1.0) -> np.ndarray:
    """
    r weighted walks of length wl from every node

    Row i * n + v holds walk i started at v. Transitions are proportional to edge
    weight and never follow self-loops; a walk reaching a node without other
    neighbors stops there and the rest of its row is -1. p and q bias the step
    after the first one (return / in-out parameters), sampled by rejection.
    """
    if wl < 1:
        raise ValueError(f"Walk length must be positive, got {wl}")
    rng = as_generator(seed, 'walks')
    n = g.num_nodes
    walks = np.full((r * n, wl), -1, dtype=np.int64)
    walks[:, 0] = np.tile(np.arange(n, dtype=np.int64), r)

    cumulative = np.cumsum(g.weights)
    padded = np.concatenate([[0.0], cumulative])
    base = padded[g.indptr[:-1]]
    row_weight = padded[g.indptr[1:]] - base
    second_order = p != 1.0 or q != 1.0
    ceiling = max(1.0 / p, 1.0, 1.0 / q)

    for step in range(1, wl):
        current = walks[:, step - 1]
        active = np.flatnonzero(current >= 0)
        active = active[row_weight[current[active]] > 0]
        if len(active) == 0:
            break
        nodes = current[active]
        chosen = _first_order_step(g, cumulative, base, row_weight, nodes, rng)
        if second_order and step >= 2:
            previous = walks[active, step - 2]
            pending = np.arange(len(active))
            while len(pending):
                x, t = chosen[pending], previous[pending]
                bias = np.where(x == t, 1.0 / p, np.where(g.has_edges(t, x), 1.0, 1.0 / q))
                accepted = rng.random(len(pending)) * ceiling < bias
                pending = pending[~accepted]
                if len(pending):
                    chosen[pending] = _first_order_step(g, cumulative, base, row_weight, nodes[pending], rng)
        walks[active, step] = chosen
    return walks


def _as_walk_array(corpus):
    if isinstance(corpus, np.ndarray) and corpus.ndim == 2:
        return corpus
    corpus = [list(walk) for walk in corpus]
    width = max((len(walk) for walk in corpus), default=0)
    padded = np.full((len(corpus), width), -1, dtype=np.int64)
    for i, walk in enumerate(corpus):
        padded[i, :len(walk)] = walk
    return padded


def _window_pairs(walks: np.ndarray, k: int):
    """(walk row, position, center, context) for every in-window pair, walk-major order"""
    num_walks, wl = walks.shape
    offsets = np.array([o for o in range(-k, k + 1) if o != 0], dtype=np.int64)
    context_pos = np.arange(wl)[:, None] + offsets[None, :]
    in_range = (context_pos >= 0) & (context_pos < wl)
    contexts = walks[:, np.clip(context_pos, 0, wl - 1)]
    centers = np.broadcast_to(walks[:, :, None], contexts.shape)
    valid = in_range[None, :, :] & (centers >= 0) & (contexts >= 0)
    rows, positions, _ = np.nonzero(valid)
    return rows, positions, centers[valid], contexts[valid]


def contexts_from_walks(corpus, k: int) -> np.ndarray:
    """All (center, positive) pairs within distance k along each walk, as an (P, 2) array"""
    if k < 1:
        raise ValueError(f"Window must be at least 1, got {k}")
    walks = _as_walk_array(corpus)
    if walks.size == 0:
        return np.empty((0, 2), dtype=np.int64)
    _, _, centers, contexts = _window_pairs(walks, k)
    return np.stack([centers, contexts], axis=1)


def _accumulate(grads, node, vector):
    if node in grads:
        grads[node] = grads[node] + vector
    else:
        grads[node] = np.array(vector, dtype=np.float64)


def sg_loss_and_grads(x: np.ndarray, ctx: WalkContext, alpha: float) -> Tuple[float, Dict[int, np.ndarray]]:
    """
    Skip-gram objective of one context and its gradient (ascent direction)

    loss = mean_j log sigmoid(x_c . x_j) + alpha * mean_n log sigmoid(-x_c . x_n)
    Returns:
        (loss, {node: gradient row})
    """
    c = ctx.center
    xc = x[c]
    loss = 0.0
    grads: Dict[int, np.ndarray] = {}

    if ctx.positives:
        weight = 1.0 / len(ctx.positives)
        for j in ctx.positives:
            dot = float(np.dot(xc, x[j]))
            loss += weight * float(log_expit(dot))
            coef = weight * (1.0 - float(expit(dot)))
            _accumulate(grads, c, coef * x[j])
            _accumulate(grads, j, coef * xc)

    if ctx.negatives and alpha != 0:
        weight = alpha / len(ctx.negatives)
        for n in ctx.negatives:
            dot = float(np.dot(xc, x[n]))
            loss += weight * float(log_expit(-dot))
            coef = -weight * float(expit(dot))
            _accumulate(grads, c, coef * x[n])
            _accumulate(grads, n, coef * xc)

    if c not in grads:
        grads[c] = np.zeros_like(xc, dtype=np.float64)
    return loss, grads


def comm_loss_and_grad(x_level: np.ndarray, x_parent: np.ndarray, v: int, parent: int,
                       beta: float) -> Tuple[float, np.ndarray]:
    """beta * log sigmoid(x_v . x_parent) and its gradient on x_v (parent held fixed)"""
    if beta == 0:
        return 0.0, np.zeros(x_level.shape[1], dtype=np.float64)
    dot = float(np.dot(x_level[v], x_parent[parent]))
    return beta * float(log_expit(dot)), beta * (1.0 - float(expit(dot))) * x_parent[parent]


def scatter_rows(index: np.ndarray, values: np.ndarray):
    """Sum rows of values sharing an index; returns (unique indices, summed rows)"""
    unique, inverse = np.unique(index, return_inverse=True)
    summing = sp.csr_matrix(
        (np.ones(len(index)), (inverse, np.arange(len(index)))), shape=(len(unique), len(index))
    )
    return unique, summing @ values


@dataclass
class ProximityLink:
    """Fixed embeddings of an adjacent level and how this level's nodes relate to them"""
    embeddings: np.ndarray
    membership: np.ndarray
    beta: float
    scale: float = 1.0


class EmbeddingTrainer:
    """Minibatch trainer for one level's embedding matrix"""

    def __init__(self, config, streams: Optional[RandomStreams] = None):
        self.config = config
        self.streams = streams if streams is not None else RandomStreams(config.seed)

    def initial_embeddings(self, n):
        """Uniform in [-0.5/d, 0.5/d]"""
        d = self.config.dim
        rng = self.streams.get('init')
        return rng.uniform(-0.5 / d, 0.5 / d, size=(n, d))

    def train_flat_baseline(self, g: Graph) -> np.ndarray:
        """Flat skip-gram embeddings (no hierarchy terms)"""
        config = self.config
        x = self.initial_embeddings(g.num_nodes)
        x, stats = self.train_level(
            g, x, epochs=config.baseline_epochs, lr=config.baseline_lr, alpha=config.at_level('alpha', 1),
            counters=BASELINE_COUNTERS, p=config.p, q=config.q,
        )
        logger.info(f"Flat baseline trained: {g.num_nodes} x {config.dim}, sg_loss={stats['sg_loss']:.4f}")
        return x

    def update_x(self, hierarchy, l: int, counters=()) -> Tuple[np.ndarray, dict]:
        """
        Optimise X^l with H^l, X^{l+1} and X^{l-1}, H^{l-1} held fixed

        The parent term pulls x_v towards its community's row in X^{l+1}; for l > 1
        the child term pulls x_v towards the rows of X^{l-1} assigned to it, weighted
        by |V^l| / |V^{l-1}| so both levels keep their 1/|V| normalization.
        """
        config = self.config
        state = hierarchy.level(l)
        parent = None
        if l < hierarchy.num_levels:
            parent = ProximityLink(
                embeddings=hierarchy.level(l + 1).embeddings,
                membership=state.assignment.membership,
                beta=config.at_level('beta', l),
            )
        child = None
        if l > 1:
            below = hierarchy.level(l - 1)
            child = ProximityLink(
                embeddings=below.embeddings,
                membership=below.assignment.membership,
                beta=config.at_level('beta', l - 1),
                scale=state.graph.num_nodes / below.graph.num_nodes,
            )
        return self.train_level(
            state.graph, state.embeddings.copy(), epochs=config.at_level('epochs', l), lr=config.at_level('lr', l),
            alpha=config.at_level('alpha', l), parent=parent, child=child, counters=counters,
        )

    def train_level(self, g: Graph, x: np.ndarray, epochs: int, lr: float, alpha: float,
                    parent: Optional[ProximityLink] = None, child: Optional[ProximityLink] = None,
                    counters=(), p: float = 1.0, q: float = 1.0) -> Tuple[np.ndarray, dict]:
        """Run epochs of minibatch updates over fresh walks; x is modified in place and returned"""
        config = self.config
        if x.shape != (g.num_nodes, config.dim):
            raise DimensionMismatchError(f"Embedding shape {x.shape} does not match ({g.num_nodes}, {config.dim})")
        for link in (parent, child):
            if link is not None and link.embeddings.shape[1] != x.shape[1]:
                raise DimensionMismatchError("Adjacent level embeddings have a different dimension")

        stats = {'sg_loss': 0.0, 'comm_loss': 0.0, 'epoch_losses': []}
        if epochs <= 0 or g.num_nodes == 0:
            return x, stats

        sampler = NegativeSampler(np.maximum(g.degrees(), 1e-12))
        adam = _LazyAdam(x.shape) if config.optimizer == 'adam' else None
        parallel = config.parallel and adam is None
        if config.parallel and adam is not None:
            logger.warning("Adam updates are sequential only; ignoring parallel mode")
        rows_per_batch = max(1, config.batch_size // config.walk_length)

        for epoch in range(epochs):
            walks = random_walks(
                g, config.walks_per_node, config.walk_length, self.streams.get('walks', *counters, epoch), p=p, q=q
            )
            order = self.streams.get('shuffle', *counters, epoch).permutation(len(walks))
            walks = walks[order]
            chunks = [walks[i:i + rows_per_batch] for i in range(0, len(walks), rows_per_batch)]

            def run_chunk(index):
                rng = self.streams.get('negatives', *counters, epoch, index)
                return self._train_chunk(x, chunks[index], lr, alpha, parent, child, sampler, rng, adam)

            if parallel:
                with ThreadPoolExecutor(max_workers=config.workers) as pool:
                    results = list(pool.map(run_chunk, range(len(chunks))))
            else:
                results = [run_chunk(i) for i in range(len(chunks))]

            occurrences = sum(r[0] for r in results)
            sg_loss = sum(r[1] for r in results) / max(occurrences, 1)
            comm_loss = sum(r[2] for r in results) / max(occurrences, 1)
            stats['epoch_losses'].append((sg_loss, comm_loss))
            logger.debug(f"Epoch {epoch + 1}/{epochs}: sg_loss={sg_loss:.5f} comm_loss={comm_loss:.5f}")

        stats['sg_loss'], stats['comm_loss'] = stats['epoch_losses'][-1]
        return x, stats

    def _train_chunk(self, x, walks, lr, alpha, parent, child, sampler, rng, adam):
        """Gradient of one batch from a single snapshot of x, then one ascent step"""
        k = self.config.window
        num_negatives = self.config.negatives

        occ_rows, occ_pos = np.nonzero(walks >= 0)
        occ_center = walks[occ_rows, occ_pos]
        num_occ = len(occ_center)
        if num_occ == 0:
            return 0, 0.0, 0.0
        occ_grid = np.full(walks.shape, -1, dtype=np.int64)
        occ_grid[occ_rows, occ_pos] = np.arange(num_occ)

        rows, positions, centers, contexts = _window_pairs(walks, k)
        keep = centers != contexts
        pair_occ = occ_grid[rows[keep], positions[keep]]
        pair_ctx = contexts[keep]
        pair_weight = 1.0 / np.bincount(pair_occ, minlength=num_occ)[pair_occ]

        xc = x[occ_center]
        grad_center = np.zeros_like(xc)
        index_parts, value_parts = [], []

        dots = np.einsum('ij,ij->i', xc[pair_occ], x[pair_ctx])
        sg_loss = float(np.sum(pair_weight * log_expit(dots)))
        coef = pair_weight * (1.0 - expit(dots))
        if len(pair_occ):
            # only occurrences with at least one positive appear here
            present, summed = scatter_rows(pair_occ, coef[:, None] * x[pair_ctx])
            grad_center[present] += summed
            index_parts.append(pair_ctx)
            value_parts.append(coef[:, None] * xc[pair_occ])

        if num_negatives > 0 and alpha != 0:
            negatives = sampler.sample((num_occ, num_negatives), rng)
            xn = x[negatives]
            neg_dots = np.einsum('od,ord->or', xc, xn)
            weight = alpha / num_negatives
            sg_loss += weight * float(np.sum(log_expit(-neg_dots)))
            neg_coef = -weight * expit(neg_dots)
            grad_center += np.einsum('or,ord->od', neg_coef, xn)
            index_parts.append(negatives.ravel())
            value_parts.append((neg_coef[:, :, None] * xc[:, None, :]).reshape(-1, x.shape[1]))

        comm_loss = 0.0
        if parent is not None and parent.beta != 0:
            xp = parent.embeddings[parent.membership[occ_center]]
            parent_dots = np.einsum('ij,ij->i', xc, xp)
            comm_loss += parent.beta * float(np.sum(log_expit(parent_dots)))
            grad_center += parent.beta * (1.0 - expit(parent_dots))[:, None] * xp

        if child is not None and child.beta != 0:
            child_dots = np.einsum('ij,ij->i', child.embeddings, x[child.membership])
            weight = child.beta * child.scale
            child_coef = weight * (1.0 - expit(child_dots))
            owners, pulled = scatter_rows(child.membership, child_coef[:, None] * child.embeddings)
            child_grad = np.zeros_like(x)
            child_grad[owners] = pulled
            child_loss = np.bincount(child.membership, weights=weight * log_expit(child_dots), minlength=len(x))
            comm_loss += float(np.sum(child_loss[occ_center]))
            grad_center += child_grad[occ_center]

        index_parts.append(occ_center)
        value_parts.append(grad_center)
        touched, grad = scatter_rows(np.concatenate(index_parts), np.concatenate(value_parts))
        if not np.all(np.isfinite(grad)):
            raise DivergenceError(
                f"Non-finite gradient on {int(np.sum(~np.isfinite(grad).all(axis=1)))} rows; "
                f"lower the learning rate (lr={lr})"
            )
        if adam is not None:
            adam.step(x, touched, grad, lr)
        else:
            x[touched] += lr * grad
        return num_occ, sg_loss, comm_loss


class _LazyAdam:
    """Adam on the rows touched by each batch"""

    def __init__(self, shape):
        self.m = np.zeros(shape)
        self.v = np.zeros(shape)
        self.t = 0

    def step(self, x, rows, grad, lr):
        beta1, beta2 = ADAM_BETAS
        self.t += 1
        self.m[rows] = beta1 * self.m[rows] + (1.0 - beta1) * grad
        self.v[rows] = beta2 * self.v[rows] + (1.0 - beta2) * grad * grad
        m_hat = self.m[rows] / (1.0 - beta1 ** self.t)
        v_hat = self.v[rows] / (1.0 - beta2 ** self.t)
        x[rows] += lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)


def update_x(hierarchy, l: int, config=None, streams: Optional[RandomStreams] = None, counters=()):
    """Functional form of EmbeddingTrainer.update_x"""
    trainer = EmbeddingTrainer(config or hierarchy.config, streams)
    return trainer.update_x(hierarchy, l, counters=counters)


def train_flat_baseline(g: Graph, config, streams: Optional[RandomStreams] = None) -> np.ndarray:
    return EmbeddingTrainer(config, streams).train_flat_baseline(g)


def save_embeddings(x: np.ndarray, path, node_ids: Optional[Sequence[int]] = None):
    """word2vec text format: header "n d", then "node_id v1 ... vd" per row"""
    ids = np.arange(len(x)) if node_ids is None else np.asarray(node_ids)
    with open(path, 'w', encoding='utf-8') as f:
        f.write(f"{x.shape[0]} {x.shape[1]}\n")
        for node, row in zip(ids.tolist(), x):
            f.write(f"{node} " + ' '.join(repr(float(v)) for v in row) + '\n')


def load_embeddings(path, node_ids: Optional[Sequence[int]] = None) -> np.ndarray:
    """
    Read a word2vec text file; with node_ids, row i of the result is the vector of
    node_ids[i] (every id must be present)
    """
    with open(path, 'r', encoding='utf-8') as f:
        header = f.readline().split()
        if len(header) != 2:
            raise GraphFormatError("Embedding header must be 'n d'", path, 1)
        n, d = int(header[0]), int(header[1])
        vectors = {}
        for line_number, line in enumerate(f, start=2):
            tokens = line.split()
            if not tokens:
                continue
            if len(tokens) != d + 1:
                raise DimensionMismatchError(f"{path}:{line_number}: expected {d} values, got {len(tokens) - 1}")
            vectors[int(tokens[0])] = np.array([float(t) for t in tokens[1:]])
    if len(vectors) != n:
        raise GraphFormatError(f"Header announces {n} vectors but {len(vectors)} were read", path)
    if node_ids is None:
        node_ids = sorted(vectors)
    missing = [v for v in node_ids if int(v) not in vectors]
    if missing:
        raise DimensionMismatchError(f"{path}: no embedding for {len(missing)} nodes (first: {missing[0]})")
    return np.vstack([vectors[int(v)] for v in node_ids]) if len(node_ids) else np.empty((0, d))
