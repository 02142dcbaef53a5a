"""
Run Configuration Manager
Loads the flat key = value run configuration from defaults, a config file,
MAZI_* environment variables and command-line overrides
"""
import logging
import os
from typing import Dict, Iterable, Optional

from dotenv import load_dotenv

from .errors import ConfigError
from .hierarchy import MaziConfig
from .synthetic_generator import PRESETS, TreeSpec

logger = logging.getLogger(__name__)

ENV_PREFIX = 'MAZI_'
DEFAULT_OUTPUT_DIR = 'outputs'

# key: (default, type, documentation)
KEYS = {
    # run
    'seed': (0, 'int', "Run seed; every random stream derives from it"),
    'mode': ('mazi', 'str', "mazi (hierarchical model) or baseline (flat skip-gram)"),
    'output_dir': (None, 'str', "Run directory when --out and MAZI_OUTPUT_DIR are not given"),
    # inputs
    'edgelist': (None, 'str', "Edge list path ('u v' or 'u v w' lines)"),
    'weighted': (False, 'bool', "Read a third weight column from the edge list"),
    'labels': (None, 'str', "Node label file ('node label[,label...]' lines)"),
    'embeddings': (None, 'str', "Pre-trained embeddings to evaluate instead of training"),
    'partition': (None, 'str', "Level-1 partition used instead of the greedy partitioner"),
    'prior_hierarchy': (None, 'str', "Ground-truth file whose ancestor paths seed every level"),
    # model
    'dim': (128, 'int', "Embedding dimension"),
    'levels': (None, 'int', "Number of hierarchy levels (empty: from the community schedule)"),
    'community_counts': (None, 'ints', "Communities per coarse level (empty: sqrt schedule)"),
    'lr': ([0.025], 'floats', "Learning rate per level"),
    'epochs': ([1], 'ints', "Epochs of fresh walks per level and update"),
    'window': (5, 'int', "Context window radius"),
    'walk_length': (20, 'int', "Random walk length"),
    'walks_per_node': (10, 'int', "Walks started from every node"),
    'iterations': (1, 'int', "Forward/backward alternating iterations"),
    'alpha': ([1.0], 'floats', "Negative-sampling weight per level"),
    'beta': ([1.0], 'floats', "Community-proximity weight per level"),
    'gamma': ([1.0], 'floats', "Modularity weight per level"),
    'negatives': (5, 'int', "Negative samples per context"),
    'max_sweeps': (10, 'int', "Community refinement sweeps per update"),
    'rebuild_coarse': (True, 'bool', "Rebuild the coarse graph after community moves"),
    'execution': ('sequential', 'str', "sequential (deterministic) or parallel (lock-free threads)"),
    'workers': (4, 'int', "Threads in parallel execution"),
    'optimizer': ('sgd', 'str', "sgd or adam"),
    'batch_size': (4096, 'int', "Walk positions per minibatch"),
    'p': (1.0, 'float', "Return parameter of the baseline walks"),
    'q': (1.0, 'float', "In-out parameter of the baseline walks"),
    'baseline_epochs': (1, 'int', "Epochs of the flat skip-gram baseline"),
    'baseline_lr': (0.025, 'float', "Learning rate of the flat skip-gram baseline"),
    # generator
    'preset': (None, 'str', "Generator preset: paper-synth (alias benchmark) or figure1"),
    'branching': (None, 'ints', "Tree branching factors from the root down"),
    'common_ratio': (1.2, 'float', "Geometric decay of cross-level edges (> 1)"),
    'power_law_exponent': (4.5, 'float', "Degree power-law exponent"),
    'max_degree': (187.0, 'float', "Degree cap"),
    'min_degree': (1, 'int', "Smallest degree of the power law"),
    'mean_degree': (None, 'float', "Target mean out-degree (chooses min_degree)"),
    'label_draws': (1, 'int', "Neighbor draws per node label (> 1 gives multi-label)"),
    'sweep_ratios': ([1.05, 1.2, 1.4, 1.6, 1.8, 2.0], 'floats', "Common ratios of the modularity sweep"),
    'sweep_seeds': ([0, 1, 2], 'ints', "Seeds of the modularity sweep"),
    # evaluation
    'ablation_mode': (None, 'str', "full, no_beta or no_gamma (empty: ablate runs all three)"),
    'eval_seeds': (1, 'int', "Number of seeds evaluated (seed, seed + 1, ...)"),
    'val_frac': (0.05, 'float', "Validation edge fraction"),
    'test_frac': (0.10, 'float', "Test edge fraction"),
    'lp_negatives': (99, 'int', "Negative candidates per held-out edge"),
    'decoder': ('sigmoid-dot', 'str', "sigmoid-dot, distmult or mlp2"),
    'decoder_train_frac': (0.02, 'float', "Decoder train edge fraction"),
    'decoder_val_frac': (0.01, 'float', "Decoder validation edge fraction"),
    'decoder_test_frac': (0.01, 'float', "Decoder test edge fraction"),
    'decoder_negatives': (20, 'int', "Negatives per decoder positive"),
    'decoder_epochs': (200, 'int', "Decoder gradient steps"),
    'decoder_lr': (0.1, 'float', "Decoder learning rate"),
    'mlp_hidden': (None, 'int', "Hidden width of the MLP decoder (empty: dim)"),
    'train_per_class': (10, 'int', "Training nodes sampled per class"),
    'c_grid': ([0.1, 1.0, 10.0], 'floats', "Inverse regularisation strengths tried"),
    'imbalance': (False, 'bool', "Use min(75% of class size, s) training nodes per class"),
    'multilabel': (False, 'bool', "Threshold probabilities at 0.5 instead of top-1"),
}

CHOICES = {
    'mode': ('mazi', 'baseline'),
    'execution': ('sequential', 'parallel'),
    'optimizer': ('sgd', 'adam'),
    'ablation_mode': ('full', 'no_beta', 'no_gamma'),
    'decoder': ('sigmoid-dot', 'distmult', 'mlp2'),
}

TRUE_VALUES = ('true', '1', 'yes', 'on')
FALSE_VALUES = ('false', '0', 'no', 'off')
GENERATOR_KEYS = ('branching', 'common_ratio', 'power_law_exponent', 'max_degree', 'min_degree',
                  'mean_degree', 'label_draws')


def parse_value(key, raw):
    """Convert a raw string to the key's type; an empty string means unset (None)"""
    if key not in KEYS:
        raise ConfigError(f"Unknown configuration key: {key}", key)
    _, kind, _ = KEYS[key]
    if isinstance(raw, str):
        raw = raw.strip()
        if raw == '':
            return None
    elif raw is None:
        return None
    try:
        if kind == 'int':
            return int(raw)
        if kind == 'float':
            return float(raw)
        if kind == 'bool':
            if isinstance(raw, bool):
                return raw
            if raw.lower() in TRUE_VALUES:
                return True
            if raw.lower() in FALSE_VALUES:
                return False
            raise ValueError(raw)
        if kind in ('ints', 'floats'):
            cast = int if kind == 'ints' else float
            items = raw if isinstance(raw, (list, tuple)) else [t for t in str(raw).split(',') if t.strip()]
            return [cast(item) for item in items]
        return str(raw)
    except ValueError:
        raise ConfigError(f"Invalid value for {key} ({kind}): {raw!r}", key) from None


def format_value(value):
    if value is None:
        return ''
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, (list, tuple)):
        return ','.join(str(v) for v in value)
    return str(value)


def read_config_file(path) -> Dict[str, str]:
    """Raw 'key = value' pairs; '#' starts a comment"""
    if not os.path.exists(path):
        raise ConfigError(f"Config file not found: {path}")
    values = {}
    with open(path, 'r', encoding='utf-8') as f:
        for line_number, line in enumerate(f, start=1):
            line = line.split('#', 1)[0].strip()
            if not line:
                continue
            if '=' not in line:
                raise ConfigError(f"{path}:{line_number}: expected 'key = value', got {line!r}")
            key, raw = (part.strip() for part in line.split('=', 1))
            if key not in KEYS:
                raise ConfigError(f"{path}:{line_number}: unknown configuration key: {key}", key)
            values[key] = raw
    return values


class RunConfig:
    """Resolved run configuration"""

    def __init__(self, values: Optional[Dict] = None, explicit: Iterable[str] = ()):
        self.values = {key: spec[0] for key, spec in KEYS.items()}
        self.explicit = set(explicit)
        for key, value in (values or {}).items():
            self.set(key, value)
        self.validate()

    @classmethod
    def load(cls, config_path=None, overrides: Iterable[str] = (), seed: Optional[int] = None,
             out: Optional[str] = None, use_env: bool = True):
        """
        Resolve defaults < config file < MAZI_<KEY> environment < --set overrides < --seed / --out
        """
        config = cls()

        if config_path:
            for key, raw in read_config_file(config_path).items():
                config.set(key, raw)
            logger.info(f"Configuration loaded from {config_path}")

        if use_env:
            load_dotenv()
            for key in KEYS:
                raw = os.environ.get(ENV_PREFIX + key.upper())
                if raw is not None:
                    config.set(key, raw)
                    logger.debug(f"{key} taken from environment")

        for item in overrides:
            if '=' not in item:
                raise ConfigError(f"Override must look like key=value, got {item!r}")
            key, raw = (part.strip() for part in item.split('=', 1))
            config.set(key, raw)

        if seed is not None:
            config.set('seed', seed)
        if out is not None:
            config.set('output_dir', out)
        config.validate()
        return config

    def set(self, key, value):
        self.values[key] = parse_value(key, value)
        self.explicit.add(key)

    def get(self, key):
        if key not in KEYS:
            raise ConfigError(f"Unknown configuration key: {key}", key)
        return self.values[key]

    def __getitem__(self, key):
        return self.get(key)

    def require(self, key):
        value = self.get(key)
        if value is None:
            raise ConfigError(f"Missing required configuration key: {key}", key)
        return value

    def validate(self):
        for key, choices in CHOICES.items():
            if self.values[key] is not None and self.values[key] not in choices:
                raise ConfigError(f"{key} must be one of {', '.join(choices)}, got {self.values[key]!r}", key)
        if self.values['preset'] is not None and self.values['preset'] not in PRESETS:
            raise ConfigError(f"Unknown preset {self.values['preset']!r}; expected one of {', '.join(PRESETS)}", 'preset')
        if self.values['seed'] is None or self.values['seed'] < 0:
            raise ConfigError("seed must be a nonnegative integer", 'seed')
        if self.values['eval_seeds'] is None or self.values['eval_seeds'] < 1:
            raise ConfigError("eval_seeds must be at least 1", 'eval_seeds')
        return self

    def mazi_config(self) -> MaziConfig:
        v = self.values
        return MaziConfig(
            levels=v['levels'],
            dim=v['dim'],
            lr=tuple(v['lr']),
            epochs=tuple(v['epochs']),
            window=v['window'],
            walk_length=v['walk_length'],
            walks_per_node=v['walks_per_node'],
            iterations=v['iterations'],
            alpha=tuple(v['alpha']),
            beta=tuple(v['beta']),
            gamma=tuple(v['gamma']),
            negatives=v['negatives'],
            community_counts=tuple(v['community_counts']) if v['community_counts'] else None,
            max_sweeps=v['max_sweeps'],
            rebuild_coarse=v['rebuild_coarse'],
            parallel=v['execution'] == 'parallel',
            workers=v['workers'],
            optimizer=v['optimizer'],
            batch_size=v['batch_size'],
            p=v['p'],
            q=v['q'],
            baseline_epochs=v['baseline_epochs'],
            baseline_lr=v['baseline_lr'],
            seed=v['seed'],
        )

    def tree_spec(self) -> TreeSpec:
        """Preset (if any) with explicitly set generator keys applied on top"""
        preset = self.values['preset']
        if preset is None:
            if self.values['branching'] is None:
                raise ConfigError("Missing required configuration key: branching (or set a preset)", 'branching')
            fields = {key: self.values[key] for key in GENERATOR_KEYS}
        else:
            fields = {
                key: self.values[key] for key in GENERATOR_KEYS
                if key in self.explicit and self.values[key] is not None
            }
        fields['seed'] = self.values['seed']
        if preset is None:
            return TreeSpec(**fields)
        return PRESETS[preset].replace(**fields)

    def as_dict(self):
        return dict(self.values)

    def resolved_values(self):
        """Values with preset generator settings spelled out"""
        values = dict(self.values)
        if values['preset'] is not None:
            spec = self.tree_spec()
            for key in GENERATOR_KEYS:
                value = getattr(spec, key)
                values[key] = list(value) if isinstance(value, tuple) else value
        return values

    def save(self, path):
        """Write every key (resolved) so the file can be passed back with --config"""
        values = self.resolved_values()
        with open(path, 'w', encoding='utf-8') as f:
            f.write("# resolved run configuration\n")
            for key, (_, _, doc) in KEYS.items():
                f.write(f"# {doc}\n{key} = {format_value(values[key])}\n")
        logger.info(f"Resolved configuration written to {path}")
