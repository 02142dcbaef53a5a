"""
Node Classification
One-vs-rest L2-regularised logistic regression on node embeddings with a
per-class training sample, C chosen on validation macro F1, micro / macro F1
on the test nodes.
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import expit
from sklearn.metrics import f1_score

from .errors import DimensionMismatchError, InfeasibleSpecError
from .graph_core import NodeLabels
from .random_streams import as_generator

logger = logging.getLogger(__name__)

C_GRID = (0.1, 1.0, 10.0)
GRADIENT_TOLERANCE = 1e-6
MAX_ITERATIONS = 5000
ARMIJO = 1e-4
IMBALANCE_SHARE = 0.75


@dataclass
class ClassifierModel:
    """Per-label weights and biases of the one-vs-rest model"""
    weights: np.ndarray
    bias: np.ndarray
    C: float
    multilabel: bool = False
    objective_traces: List[np.ndarray] = field(default_factory=list)
    validation_scores: Dict[float, float] = field(default_factory=dict)

    def decision_function(self, x: np.ndarray) -> np.ndarray:
        if x.shape[1] != self.weights.shape[0]:
            raise DimensionMismatchError(
                f"Classifier expects dimension {self.weights.shape[0]}, embeddings have {x.shape[1]}"
            )
        return x @ self.weights + self.bias

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        return expit(self.decision_function(x))

    def predict(self, x: np.ndarray) -> np.ndarray:
        """Label indicator matrix: top-1 label, or every label with probability >= 0.5"""
        proba = self.predict_proba(x)
        if self.multilabel:
            return proba >= 0.5
        predicted = np.zeros(proba.shape, dtype=bool)
        predicted[np.arange(len(proba)), np.argmax(proba, axis=1)] = True
        return predicted


def f1_scores(y_true: np.ndarray, y_pred: np.ndarray) -> Tuple[float, float]:
    """(micro F1, macro F1) on label-indicator matrices"""
    micro = f1_score(y_true, y_pred, average='micro', zero_division=0)
    macro = f1_score(y_true, y_pred, average='macro', zero_division=0)
    return float(micro), float(macro)


def sample_train_nodes(labels: NodeLabels, s: int, rng, imbalance: bool = False) -> np.ndarray:
    """
    s nodes per class, classes visited in id order; with imbalance the class takes
    min(floor(0.75 * class size), s) nodes, at least one
    """
    chosen = np.zeros(labels.num_nodes, dtype=bool)
    for label in range(labels.num_labels):
        members = labels.nodes_with_label(label)
        if len(members) == 0:
            raise InfeasibleSpecError(f"Label {label} has no instances")
        quota = max(1, min(int(np.floor(IMBALANCE_SHARE * len(members))), s)) if imbalance else s
        available = members[~chosen[members]]
        if len(available) < quota:
            logger.warning(f"Label {label}: only {len(available)} of {quota} requested training nodes available")
        picked = rng.permutation(available)[:quota]
        chosen[picked] = True

    train = np.flatnonzero(chosen)
    covered = labels.indicator_matrix()[train].any(axis=0)
    if not covered.all():
        raise InfeasibleSpecError(f"Label {int(np.flatnonzero(~covered)[0])} is absent from the training sample")
    return train


def split_nodes(labels: NodeLabels, s: int, seed=0, imbalance: bool = False):
    """(train, val, test) node arrays; labelled nodes outside train are halved into val and test"""
    rng = as_generator(seed, 'split')
    train = sample_train_nodes(labels, s, rng, imbalance)
    labelled = np.array([v for v, node_labels in enumerate(labels.labels) if node_labels], dtype=np.int64)
    rest = rng.permutation(np.setdiff1d(labelled, train))
    half = (len(rest) + 1) // 2
    return train, np.sort(rest[:half]), np.sort(rest[half:])


def fit_one_vs_rest(x: np.ndarray, y: np.ndarray, C: float, tol: float = GRADIENT_TOLERANCE,
                    max_iter: int = MAX_ITERATIONS):
    """
    Minimise sum_i NLL_i + ||w||^2 / (2C) for every label column at once

    Gradient descent with Barzilai-Borwein step sizes and Armijo backtracking, run per
    column until its gradient norm drops below tol. The bias is not regularised.
    Returns:
        (weights (d, L), bias (L,), objective trace (iterations, L))
    """
    n, d = x.shape
    num_labels = y.shape[1]
    design = np.hstack([x, np.ones((n, 1))])
    target = y.astype(np.float64)
    penalty = np.ones(d + 1) / C
    penalty[-1] = 0.0

    def objective(theta):
        scores = design @ theta
        nll = np.sum(np.logaddexp(0.0, scores) - target * scores, axis=0)
        return nll + 0.5 * np.sum(penalty[:, None] * theta * theta, axis=0)

    def gradient(theta):
        return design.T @ (expit(design @ theta) - target) + penalty[:, None] * theta

    theta = np.zeros((d + 1, num_labels))
    value = objective(theta)
    grad = gradient(theta)
    lipschitz = 0.25 * np.linalg.norm(design, ord=2) ** 2 + 1.0 / C
    step = np.full(num_labels, 1.0 / lipschitz)
    active = np.linalg.norm(grad, axis=0) > tol
    trace = [value.copy()]

    for iteration in range(max_iter):
        if not active.any():
            break
        squared = np.sum(grad * grad, axis=0)
        t = step.copy()
        candidate = theta - t * grad
        new_value = objective(candidate)
        backtrack = active & (new_value > value - ARMIJO * t * squared)
        while backtrack.any():
            t[backtrack] *= 0.5
            candidate[:, backtrack] = theta[:, backtrack] - t[backtrack] * grad[:, backtrack]
            new_value = objective(candidate)
            backtrack = active & (new_value > value - ARMIJO * t * squared) & (t > 1e-20)

        improved = active & (new_value <= value)
        new_theta = np.where(improved, candidate, theta)
        new_grad = gradient(new_theta)
        s = new_theta - theta
        change = new_grad - grad
        curvature = np.sum(s * change, axis=0)
        step = np.where(curvature > 0, np.sum(s * s, axis=0) / np.where(curvature > 0, curvature, 1.0), t)

        theta, grad = new_theta, new_grad
        value = np.where(improved, new_value, value)
        trace.append(value.copy())
        active = improved & (np.linalg.norm(grad, axis=0) > tol)

    logger.debug(f"One-vs-rest fit (C={C}): {len(trace) - 1} iterations")
    return theta[:-1], theta[-1], np.array(trace)


def fit_classifier(x: np.ndarray, labels: NodeLabels, s: int = 10, c_grid: Sequence[float] = C_GRID, seed=0,
                   imbalance: bool = False, multilabel: bool = False, tol: float = GRADIENT_TOLERANCE,
                   max_iter: int = MAX_ITERATIONS):
    """
    Train one-vs-rest models for every C, keep the best on validation macro F1
    (first in grid order on ties) and score it on the test nodes

    Returns:
        (ClassifierModel, micro F1, macro F1)
    """
    if x.shape[0] != labels.num_nodes:
        raise DimensionMismatchError(f"{x.shape[0]} embedding rows for {labels.num_nodes} labelled nodes")
    train, val, test = split_nodes(labels, s, seed=seed, imbalance=imbalance)
    indicator = labels.indicator_matrix()

    best: Optional[ClassifierModel] = None
    scores = {}
    for C in c_grid:
        weights, bias, trace = fit_one_vs_rest(x[train], indicator[train], C, tol=tol, max_iter=max_iter)
        model = ClassifierModel(weights=weights, bias=bias, C=float(C), multilabel=multilabel,
                                objective_traces=[trace[:, j] for j in range(trace.shape[1])])
        _, val_macro = f1_scores(indicator[val], model.predict(x[val])) if len(val) else (0.0, 0.0)
        scores[float(C)] = val_macro
        logger.info(f"C={C}: validation macro F1 {val_macro:.4f}")
        if best is None or val_macro > scores[best.C]:
            best = model

    best.validation_scores = scores
    micro, macro = f1_scores(indicator[test], best.predict(x[test]))
    logger.info(
        f"Classification ({len(train)} train / {len(val)} val / {len(test)} test): C={best.C} "
        f"micro F1 {micro:.4f}, macro F1 {macro:.4f}"
    )
    return best, micro, macro
