"""
Mazi Driver
Alternating optimisation over the hierarchy: a forward pass fine to coarse and a
backward pass coarse to fine, each level updating its embeddings and then its
community assignment.
"""
import logging
import time
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional

import numpy as np
import pandas as pd

from .errors import ConfigError
from .graph_core import Graph, NodeLabels
from .hierarchy import Hierarchy, MaziConfig, init_gxh, rebuild_coarse, refresh_top
from .embedding_trainer import EmbeddingTrainer
from .modularity_partition import build_state, modularity, update_h
from .random_streams import RandomStreams

logger = logging.getLogger(__name__)

FORWARD = 'fwd'
BACKWARD = 'bwd'
DIRECTION_IDS = {FORWARD: 0, BACKWARD: 1}
ABLATION_MODES = ('full', 'no_beta', 'no_gamma')
REPORT_COLUMNS = ['iteration', 'direction', 'level', 'sg_loss', 'comm_loss', 'Q', 'moves', 'seconds']


@dataclass
class TrainRecord:
    iteration: int
    direction: str
    level: int
    sg_loss: float
    comm_loss: float
    Q: float
    moves: int
    seconds: float


@dataclass
class TrainReport:
    """One record per (iteration, direction, level) update"""
    records: List[TrainRecord] = field(default_factory=list)

    def add(self, record: TrainRecord):
        self.records.append(record)

    def __len__(self):
        return len(self.records)

    def order(self):
        return [(r.direction, r.level) for r in self.records]

    def q_trace(self, level):
        return [r.Q for r in self.records if r.level == level]

    def total_moves(self):
        return sum(r.moves for r in self.records)

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(r) for r in self.records], columns=REPORT_COLUMNS)

    def to_csv(self, path):
        self.to_frame().to_csv(path, index=False)
        logger.info(f"Training report written to {path}")


def update_xh(hierarchy: Hierarchy, l: int, trainer: EmbeddingTrainer, iteration: int, direction: str) -> TrainRecord:
    """
    UpdateXH at level l: X^l first, then H^l against the new X^l and fixed X^{l+1}

    G^{l+1} is rebuilt when H^l changed and rebuild_coarse is on.
    """
    started = time.perf_counter()
    config = hierarchy.config
    state = hierarchy.level(l)
    state.embeddings, stats = trainer.update_x(hierarchy, l, counters=(iteration, DIRECTION_IDS[direction], l))

    mod_state = build_state(state.graph, state.assignment)
    state.assignment, mod_state, moves = update_h(
        state.graph, state.assignment, mod_state, state.embeddings, hierarchy.level(l + 1).embeddings,
        beta=config.at_level('beta', l), gamma=config.at_level('gamma', l), max_sweeps=config.max_sweeps,
    )
    if moves and config.rebuild_coarse:
        rebuild_coarse(hierarchy, l)

    q = modularity(mod_state) if mod_state.total_weight > 0 else 0.0
    record = TrainRecord(
        iteration=iteration, direction=direction, level=l, sg_loss=stats['sg_loss'], comm_loss=stats['comm_loss'],
        Q=q, moves=moves, seconds=time.perf_counter() - started,
    )
    logger.info(
        f"[{iteration}/{direction}] level {l}: sg_loss={record.sg_loss:.4f} comm_loss={record.comm_loss:.4f} "
        f"Q={q:.4f} moves={moves} ({record.seconds:.1f}s)"
    )
    return record


def run_mazi(g1: Graph, config: MaziConfig, init_x: Optional[np.ndarray] = None, init_h=None,
             streams: Optional[RandomStreams] = None):
    """
    Joint embedding and hierarchical community training

    Without init_x the level-1 embeddings start from the flat skip-gram baseline.
    init_h may be a level-1 partition or a full prior hierarchy (finest first).
    Returns:
        (Hierarchy, TrainReport)
    """
    streams = streams if streams is not None else RandomStreams(config.seed)
    trainer = EmbeddingTrainer(config, streams)

    x1 = trainer.train_flat_baseline(g1) if init_x is None else np.array(init_x, dtype=np.float64)
    hierarchy = init_gxh(g1, x1, config, init_h=init_h, seed=streams)
    hierarchy.provenance['initial_modularity'] = [
        modularity(build_state(s.graph, s.assignment)) for s in hierarchy.levels[:-1] if s.graph.total_weight > 0
    ]
    report = TrainReport()
    top = hierarchy.num_levels - 1
    logger.info(f"Training {hierarchy.num_levels} levels {hierarchy.node_counts()} for {config.iterations} iterations")

    for iteration in range(1, config.iterations + 1):
        for l in range(1, top + 1):
            report.add(update_xh(hierarchy, l, trainer, iteration, FORWARD))
        for l in range(top, 0, -1):
            report.add(update_xh(hierarchy, l, trainer, iteration, BACKWARD))
        refresh_top(hierarchy)

    hierarchy.validate()
    return hierarchy, report


def ablation_config(config: MaziConfig, mode: str) -> MaziConfig:
    if mode not in ABLATION_MODES:
        raise ConfigError(f"Unknown ablation mode {mode!r}; expected one of {', '.join(ABLATION_MODES)}", 'ablation_mode')
    if mode == 'no_beta':
        return config.replace(beta=(0.0,))
    if mode == 'no_gamma':
        return config.replace(gamma=(0.0,))
    return config


def ablation_run(g1: Graph, config: MaziConfig, mode: str, init_x=None, init_h=None,
                 labels: Optional[NodeLabels] = None, link_split=None, eval_options: Optional[Dict] = None) -> Dict:
    """
    run_mazi with beta or gamma zeroed, plus optional downstream metrics

    With link_split the model trains on split.train_graph and MAP is measured on
    its test queries; with labels the level-1 embeddings are classified.
    """
    eval_options = eval_options or {}
    ablated = ablation_config(config, mode)
    graph = link_split.train_graph if link_split is not None else g1
    hierarchy, report = run_mazi(graph, ablated, init_x=init_x, init_h=init_h)

    result = {
        'mode': mode,
        'hierarchy': hierarchy,
        'report': report,
        'metrics': {
            'total_moves': float(report.total_moves()),
            'final_modularity': report.records[-1].Q if report.records else float('nan'),
        },
    }
    x1 = hierarchy.level(1).embeddings
    if link_split is not None:
        from .link_prediction import map_score
        result['metrics']['map'] = map_score(x1, link_split)
    if labels is not None:
        from .node_classification import fit_classifier
        _, micro, macro = fit_classifier(x1, labels, seed=config.seed, **eval_options)
        result['metrics']['micro_f1'] = micro
        result['metrics']['macro_f1'] = macro
    logger.info(f"Ablation {mode}: {result['metrics']}")
    return result
