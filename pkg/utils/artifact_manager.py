"""
Artifact Manager
Run directory layout and every file a run writes: resolved config, id map,
per-level embeddings and partitions, hierarchy dump, training report, generated
graphs and metric tables.
"""
import json
import logging
import os
from typing import Dict, Iterable, List, Optional

import numpy as np
import pandas as pd

from .embedding_trainer import save_embeddings
from .graph_core import Graph, save_edgelist, save_id_map, save_labels
from .hierarchy import Hierarchy, hierarchy_summary
from .modularity_partition import save_partition
from .run_config import DEFAULT_OUTPUT_DIR, RunConfig
from .synthetic_generator import GroundTruth, save_ground_truth

logger = logging.getLogger(__name__)

METRIC_COLUMNS = ['method', 'dataset', 'seed', 'metric', 'value']


def resolve_run_dir(config: Optional[RunConfig] = None) -> str:
    """
    Run directory: config output_dir (already carrying --out / MAZI_OUTPUT_DIR when
    given) or outputs/
    """
    path = config['output_dir'] if config is not None and config['output_dir'] else DEFAULT_OUTPUT_DIR
    os.makedirs(path, exist_ok=True)
    return path


def summarize_metrics(rows: Iterable[Dict]) -> pd.DataFrame:
    """Mean and sample standard deviation per (method, dataset, metric) over seeds"""
    frame = pd.DataFrame(list(rows), columns=METRIC_COLUMNS)
    if frame.empty:
        return pd.DataFrame(columns=['method', 'dataset', 'metric', 'mean', 'std', 'runs'])
    summary = frame.groupby(['method', 'dataset', 'metric'], sort=True)['value'].agg(['mean', 'std', 'count'])
    summary = summary.reset_index().rename(columns={'count': 'runs'})
    summary['std'] = summary['std'].fillna(0.0)
    return summary


class ArtifactManager:
    """Writes the files of one run into its directory"""

    def __init__(self, run_dir: str):
        self.run_dir = run_dir
        os.makedirs(run_dir, exist_ok=True)

    def path(self, name):
        return os.path.join(self.run_dir, name)

    def write_config(self, config: RunConfig):
        config.save(self.path('resolved_config.conf'))

    def write_id_map(self, original_ids):
        save_id_map(original_ids, self.path('id_map.txt'))

    def write_embeddings(self, level: int, x: np.ndarray, node_ids=None) -> str:
        name = f"embeddings_level{level}.txt"
        save_embeddings(x, self.path(name), node_ids)
        return name

    def write_hierarchy(self, hierarchy: Hierarchy, original_ids=None) -> List[str]:
        """Per-level embeddings and partitions plus hierarchy.json"""
        embedding_files = []
        for l, state in enumerate(hierarchy.levels, start=1):
            ids = original_ids if l == 1 else None
            embedding_files.append(self.write_embeddings(l, state.embeddings, ids))
            if state.assignment is not None:
                save_partition(state.assignment, self.path(f"partition_level{l}.txt"))
        summary = hierarchy_summary(hierarchy, embedding_files)
        summary['provenance'] = hierarchy.provenance
        with open(self.path('hierarchy.json'), 'w', encoding='utf-8') as f:
            json.dump(summary, f, indent=2, default=_json_default)
        logger.info(f"Hierarchy with {hierarchy.num_levels} levels written to {self.run_dir}")
        return embedding_files

    def write_report(self, report):
        report.to_csv(self.path('train_report.csv'))

    def write_generated(self, g: Graph, gt: GroundTruth):
        """Edge list, labels, ground truth and generation report of a synthetic graph"""
        save_edgelist(g, self.path('graph.edgelist'))
        if gt.labels is not None:
            save_labels(gt.labels, self.path('labels.txt'))
        save_ground_truth(gt, self.path('ground_truth.txt'))
        self.write_key_values(gt.report, 'generation_report.txt')

    def write_key_values(self, values: Dict, name: str):
        with open(self.path(name), 'w', encoding='utf-8') as f:
            for key, value in values.items():
                f.write(f"{key} = {value}\n")

    def write_frame(self, frame: pd.DataFrame, name: str):
        frame.to_csv(self.path(name), index=False)

    def write_metrics(self, rows: List[Dict], name: str = 'metrics'):
        """CSV rows (method, dataset, seed, metric, value) plus a mean / std key-value report"""
        frame = pd.DataFrame(rows, columns=METRIC_COLUMNS)
        frame.to_csv(self.path(f"{name}.csv"), index=False)
        summary = summarize_metrics(rows)
        with open(self.path(f"{name}_report.txt"), 'w', encoding='utf-8') as f:
            for row in frame.itertuples(index=False):
                f.write(f"{row.method}.{row.dataset}.seed{row.seed}.{row.metric} = {row.value!r}\n")
            for row in summary.itertuples(index=False):
                f.write(f"{row.method}.{row.dataset}.{row.metric} = {row.mean:.6f} +- {row.std:.6f} ({row.runs} runs)\n")
        logger.info(f"{len(frame)} metric rows written to {self.path(name + '.csv')}")
        return summary


def _json_default(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"Cannot serialise {type(value).__name__}")
