"""
Mazi command line
generate | partition | train | eval-lp | eval-nc | ablate | sweep
"""
import argparse
import logging
import os
import sys
from typing import List, Optional

from utils.artifact_manager import ArtifactManager, resolve_run_dir
from utils.embedding_trainer import load_embeddings, train_flat_baseline
from utils.errors import ConfigError, MaziError
from utils.graph_core import largest_connected_component, load_edgelist, load_labels
from utils.hierarchy import coarsen, community_schedule
from utils.link_prediction import fit_decoder, make_decoder_split, make_link_split, map_score
from utils.mazi_driver import ABLATION_MODES, ablation_run, run_mazi
from utils.modularity_partition import build_state, initial_partition, load_partition, modularity, save_partition
from utils.node_classification import fit_classifier
from utils.random_streams import RandomStreams
from utils.run_config import RunConfig
from utils.synthetic_generator import generate, load_ground_truth, modularity_sweep

logger = logging.getLogger(__name__)

LOG_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'


def setup_logging(run_dir, quiet=False):
    """Log to mazi.log in the run directory and to the console"""
    console = logging.StreamHandler()
    console.setLevel(logging.WARNING if quiet else logging.INFO)
    logging.basicConfig(
        level=logging.INFO,
        format=LOG_FORMAT,
        handlers=[
            logging.FileHandler(os.path.join(run_dir, 'mazi.log'), encoding='utf-8'),
            console,
        ],
        force=True,
    )


def dataset_name(config):
    path = config['edgelist'] or config['preset'] or 'synthetic'
    return os.path.splitext(os.path.basename(path))[0]


def load_graph(config, artifacts: Optional[ArtifactManager] = None):
    """Edge list restricted to its largest connected component; writes the id map"""
    g, original_ids = load_edgelist(config.require('edgelist'), weighted=config['weighted'])
    component, kept = largest_connected_component(g)
    if len(kept) < g.num_nodes:
        logger.warning(f"Input is disconnected: keeping {len(kept)} of {g.num_nodes} nodes (largest component)")
    original_ids = original_ids[kept]
    if artifacts is not None:
        artifacts.write_id_map(original_ids)
    return component, original_ids


def initial_assignments(config, original_ids, num_nodes):
    """User partition or prior hierarchy, if configured"""
    if config['prior_hierarchy']:
        return load_ground_truth(config['prior_hierarchy'], original_ids).prior_partitions()
    if config['partition']:
        h = load_partition(config['partition'])
        if h.num_nodes != num_nodes:
            raise ConfigError(
                f"Partition covers {h.num_nodes} nodes but the graph has {num_nodes} after LCC extraction", 'partition'
            )
        return h
    return None


def train_embeddings(g, config, seed, init_h=None):
    """Level-1 embeddings of the configured method"""
    mazi_config = config.mazi_config().replace(seed=seed)
    if config['mode'] == 'baseline':
        return train_flat_baseline(g, mazi_config)
    hierarchy, _ = run_mazi(g, mazi_config, init_h=init_h)
    return hierarchy.level(1).embeddings


def eval_seeds(config) -> List[int]:
    return [config['seed'] + i for i in range(config['eval_seeds'])]


def metric_row(config, seed, metric, value, method=None):
    return {
        'method': method or config['mode'],
        'dataset': dataset_name(config),
        'seed': seed,
        'metric': metric,
        'value': float(value),
    }


def cmd_generate(config, artifacts):
    spec = config.tree_spec()
    g, gt = generate(spec)
    artifacts.write_generated(g, gt)
    logger.info(
        f"Generated graph: {g.num_nodes} nodes, mean degree {gt.report['mean_degree']:.2f}, "
        f"prior Q {gt.report['prior_modularity']:.4f}"
    )


def cmd_partition(config, artifacts):
    """Greedy partitions for every level of the schedule, without training"""
    g, _ = load_graph(config, artifacts)
    mazi_config = config.mazi_config()
    counts = community_schedule(g.num_nodes, mazi_config)
    report = {'schedule': ','.join(str(c) for c in [g.num_nodes] + counts)}
    current = g
    for level, k in enumerate(counts, start=1):
        h = initial_partition(current, k, seed=RandomStreams(mazi_config.seed))
        save_partition(h, artifacts.path(f"partition_level{level}.txt"))
        report[f"level{level}.modularity"] = modularity(build_state(current, h)) if current.total_weight > 0 else 0.0
        current = coarsen(current, h)
    artifacts.write_key_values(report, 'partition_report.txt')


def cmd_train(config, artifacts):
    g, original_ids = load_graph(config, artifacts)
    mazi_config = config.mazi_config()
    if config['mode'] == 'baseline':
        x = train_flat_baseline(g, mazi_config)
        artifacts.write_embeddings(1, x, original_ids)
        return
    init_h = initial_assignments(config, original_ids, g.num_nodes)
    hierarchy, report = run_mazi(g, mazi_config, init_h=init_h)
    artifacts.write_hierarchy(hierarchy, original_ids)
    artifacts.write_report(report)


def cmd_eval_lp(config, artifacts):
    g, original_ids = load_graph(config, artifacts)
    supplied = load_embeddings(config['embeddings'], original_ids) if config['embeddings'] else None
    init_h = initial_assignments(config, original_ids, g.num_nodes)
    rows = []
    for seed in eval_seeds(config):
        split = make_link_split(g, config['val_frac'], config['test_frac'], config['lp_negatives'], seed=seed)
        x = supplied if supplied is not None else train_embeddings(split.train_graph, config, seed, init_h=init_h)
        rows.append(metric_row(config, seed, 'map', map_score(x, split)))

        if config['decoder'] != 'sigmoid-dot':
            decoder_split = make_decoder_split(
                g, config['decoder_train_frac'], config['decoder_val_frac'], config['decoder_test_frac'],
                config['decoder_negatives'], seed=seed,
            )
            x = supplied if supplied is not None else train_embeddings(
                decoder_split.train_graph, config, seed, init_h=init_h
            )
            _, ap = fit_decoder(
                x, decoder_split, config['decoder'], epochs=config['decoder_epochs'], lr=config['decoder_lr'],
                hidden=config['mlp_hidden'], seed=seed,
            )
            rows.append(metric_row(config, seed, f"{config['decoder']}_ap", ap))
    artifacts.write_metrics(rows, 'metrics_lp')


def cmd_eval_nc(config, artifacts):
    g, original_ids = load_graph(config, artifacts)
    labels = load_labels(config.require('labels'), original_ids)
    supplied = load_embeddings(config['embeddings'], original_ids) if config['embeddings'] else None
    init_h = initial_assignments(config, original_ids, g.num_nodes)
    rows = []
    for seed in eval_seeds(config):
        x = supplied if supplied is not None else train_embeddings(g, config, seed, init_h=init_h)
        model, micro, macro = fit_classifier(
            x, labels, s=config['train_per_class'], c_grid=config['c_grid'], seed=seed,
            imbalance=config['imbalance'], multilabel=config['multilabel'],
        )
        rows.append(metric_row(config, seed, 'micro_f1', micro))
        rows.append(metric_row(config, seed, 'macro_f1', macro))
        rows.append(metric_row(config, seed, 'C', model.C))
    artifacts.write_metrics(rows, 'metrics_nc')


def cmd_ablate(config, artifacts):
    """Node classification when labels are configured, link prediction otherwise"""
    g, original_ids = load_graph(config, artifacts)
    labels = load_labels(config['labels'], original_ids) if config['labels'] else None
    init_h = initial_assignments(config, original_ids, g.num_nodes)
    modes = [config['ablation_mode']] if config['ablation_mode'] else list(ABLATION_MODES)
    eval_options = {
        's': config['train_per_class'], 'c_grid': config['c_grid'],
        'imbalance': config['imbalance'], 'multilabel': config['multilabel'],
    }
    rows = []
    for seed in eval_seeds(config):
        mazi_config = config.mazi_config().replace(seed=seed)
        split = None
        if labels is None:
            split = make_link_split(g, config['val_frac'], config['test_frac'], config['lp_negatives'], seed=seed)
        for mode in modes:
            result = ablation_run(g, mazi_config, mode, init_h=init_h, labels=labels, link_split=split,
                                  eval_options=eval_options)
            result['report'].to_csv(artifacts.path(f"train_report_{mode}_seed{seed}.csv"))
            for metric, value in result['metrics'].items():
                rows.append(metric_row(config, seed, metric, value, method=f"mazi_{mode}"))
    artifacts.write_metrics(rows, 'metrics_ablation')


def cmd_sweep(config, artifacts):
    table = modularity_sweep(config['sweep_ratios'], config['sweep_seeds'], config.tree_spec())
    artifacts.write_frame(table, 'modularity_sweep.csv')
    for row in table.itertuples(index=False):
        logger.info(f"ratio {row.ratio}: mean Q {row.mean_Q:.4f}, mean degree {row.mean_directed_degree:.2f}")


COMMANDS = {
    'generate': cmd_generate,
    'partition': cmd_partition,
    'train': cmd_train,
    'eval-lp': cmd_eval_lp,
    'eval-nc': cmd_eval_nc,
    'ablate': cmd_ablate,
    'sweep': cmd_sweep,
}


def build_parser():
    parser = argparse.ArgumentParser(prog='mazi', description="Joint node embeddings and hierarchical communities")
    parser.add_argument('command', choices=sorted(COMMANDS))
    parser.add_argument('--config', required=True, help="key = value configuration file")
    parser.add_argument('--set', dest='overrides', action='append', default=[], metavar='KEY=VALUE',
                        help="override one configuration key (repeatable)")
    parser.add_argument('--out', help="run directory")
    parser.add_argument('--seed', type=int, help="run seed")
    parser.add_argument('--quiet', action='store_true', help="console shows warnings and errors only")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        config = RunConfig.load(args.config, args.overrides, seed=args.seed, out=args.out)
        run_dir = resolve_run_dir(config)
    except MaziError as e:
        logging.basicConfig(level=logging.INFO, format=LOG_FORMAT)
        logger.error(f"Configuration error: {e}")
        return 1

    setup_logging(run_dir, quiet=args.quiet)
    artifacts = ArtifactManager(run_dir)
    try:
        artifacts.write_config(config)
        logger.info(f"Running {args.command} (seed {config['seed']}) into {run_dir}")
        COMMANDS[args.command](config, artifacts)
    except (MaziError, OSError) as e:
        logger.debug("Command failed", exc_info=True)
        logger.error(f"{args.command} failed: {e}")
        return 1
    logger.info(f"{args.command} finished")
    return 0


if __name__ == '__main__':
    sys.exit(main())
