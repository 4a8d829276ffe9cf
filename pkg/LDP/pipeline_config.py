'''
Module      : pipeline_config
Description : The pipeline configuration tree, read from YAML.

Sections: model, lora, train (one block per phase), preference, metrics, eval,
dataprep, plus the run seed. Unknown keys at any level are rejected with their
dotted path. Every default equals the one written in data/default_config.yaml.
'''

import hashlib
import json
import os
from dataclasses import asdict, dataclass, field, fields, replace

import yaml

try:
    from LDP.alignment import PAIR_SOURCES, PHASES, TrainRun
    from LDP.clinical_eval import KAPPA_METHODS
    from LDP.dataprep import DataprepOptions
    from LDP.errors import ConfigError
    from LDP.lora_adapters import LORA_PRESETS, LoraConfig
    from LDP.micro_mllm import ModelConfig
    from LDP.nlg_metrics import MetricOptions
    from LDP.tokenizer import DATA_DIR, PROMPT_PRESETS
except ModuleNotFoundError:
    from alignment import PAIR_SOURCES, PHASES, TrainRun
    from clinical_eval import KAPPA_METHODS
    from dataprep import DataprepOptions
    from errors import ConfigError
    from lora_adapters import LORA_PRESETS, LoraConfig
    from micro_mllm import ModelConfig
    from nlg_metrics import MetricOptions
    from tokenizer import DATA_DIR, PROMPT_PRESETS

DEFAULT_CONFIG_PATH = os.path.join(DATA_DIR, 'default_config.yaml')
GENERATION_STRATEGIES = ('greedy', 'top_k')
PS_MODES = ('mean', 'trimmed')
# Keys owned by the run rather than by the config file
RUN_OWNED_KEYS = {'model': {'seed'}, 'train': {'phase', 'seed', 'reference_id', 'loss_trace'}}


@dataclass
class EvalOptions:
    prompt: str = 'structured_report'
    max_new: int = 24
    strategy: str = 'greedy'
    top_k: int = 5
    ps_mode: str = 'mean'
    kappa_method: str = 'fleiss'
    bootstrap_resamples: int = 2000

    def __post_init__(self):
        if self.prompt not in PROMPT_PRESETS:
            raise ConfigError(f'eval.prompt must be one of {", ".join(PROMPT_PRESETS)}')
        if self.strategy not in GENERATION_STRATEGIES:
            raise ConfigError(f'eval.strategy must be one of {", ".join(GENERATION_STRATEGIES)}')
        if self.ps_mode not in PS_MODES:
            raise ConfigError(f'eval.ps_mode must be one of {", ".join(PS_MODES)}')
        if self.kappa_method not in KAPPA_METHODS:
            raise ConfigError(f'eval.kappa_method must be one of {", ".join(KAPPA_METHODS)}')
        if self.max_new < 1 or self.top_k < 1 or self.bootstrap_resamples < 1:
            raise ConfigError('eval.max_new, eval.top_k and eval.bootstrap_resamples must be positive')


@dataclass
class PreferenceOptions:
    source: str = 'base-model'
    max_new: int = 24
    held_out_fraction: float = 0.2

    def __post_init__(self):
        if self.source not in PAIR_SOURCES:
            raise ConfigError(f'preference.source must be one of {", ".join(PAIR_SOURCES)}')
        if self.max_new < 1:
            raise ConfigError('preference.max_new must be positive')
        if not 0.0 <= self.held_out_fraction < 1.0:
            raise ConfigError('preference.held_out_fraction must be in [0, 1)')


def default_train_runs():
    return {phase: TrainRun.defaults(phase) for phase in PHASES}


@dataclass
class PipelineConfig:
    seed: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)
    lora: LoraConfig = field(default_factory=LoraConfig)
    train: dict = field(default_factory=default_train_runs)
    preference: PreferenceOptions = field(default_factory=PreferenceOptions)
    metrics: MetricOptions = field(default_factory=MetricOptions)
    eval: EvalOptions = field(default_factory=EvalOptions)
    dataprep: DataprepOptions = field(default_factory=DataprepOptions)

    def train_run(self, phase):
        """ Fresh TrainRun for a phase, seeded with the run seed """
        if phase not in self.train:
            raise ConfigError(f'unknown phase {phase!r}, expected one of {", ".join(PHASES)}')
        return replace(self.train[phase], seed=self.seed, loss_trace=[])

    def to_dict(self):
        return {'seed': self.seed,
                'model': {key: value for key, value in self.model.to_dict().items() if key != 'seed'},
                'lora': self.lora.to_dict(),
                'train': {phase: {key: value for key, value in run.settings().items()
                                  if key not in RUN_OWNED_KEYS['train']}
                          for phase, run in sorted(self.train.items())},
                'preference': asdict(self.preference),
                'metrics': asdict(self.metrics),
                'eval': asdict(self.eval),
                'dataprep': asdict(self.dataprep)}

    def config_hash(self):
        """ SHA-256 of the canonical JSON form of the resolved config """
        canonical = json.dumps(self.to_dict(), sort_keys=True, separators=(',', ':'))
        return hashlib.sha256(canonical.encode('utf-8')).hexdigest()


def _coerce(value, default, key_path):
    """ Convert a YAML value to the type of the field default """
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f'{key_path} must be true or false, got {value!r}')
        return value
    if isinstance(default, (int, float)):
        if isinstance(value, bool):
            raise ConfigError(f'{key_path} must be a number, got {value!r}')
        try:
            number = float(value) if isinstance(value, str) else value
            if isinstance(default, float):
                return float(number)
            if isinstance(number, float):
                if not number.is_integer():
                    raise ValueError(value)
                return int(number)
            return int(number)
        except (TypeError, ValueError) as error:
            raise ConfigError(f'{key_path} must be a number, got {value!r}') from error
    if isinstance(default, str) and not isinstance(value, str):
        raise ConfigError(f'{key_path} must be a string, got {value!r}')
    if isinstance(default, (list, tuple)) and not isinstance(value, list):
        raise ConfigError(f'{key_path} must be a list, got {value!r}')
    return value


def _section(cls, data, key_path, base=None, owned=frozenset()):
    """
    Build one dataclass section from a mapping, rejecting unknown keys.
    :param cls: Dataclass type of the section
    :param data: Mapping read from YAML (None keeps every default)
    :param key_path: Dotted path used in error messages
    :param base: Instance supplying the defaults (default: cls())
    :param owned: Field names that may not be set from the file
    :return: Instance of cls
    """
    base = cls() if base is None else base
    if data is None:
        return base
    if not isinstance(data, dict):
        raise ConfigError(f'{key_path} must be a mapping')
    allowed = {item.name for item in fields(cls)} - set(owned)
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(f'unknown config key {key_path}.{unknown[0]}')
    values = {key: _coerce(value, getattr(base, key), f'{key_path}.{key}') for key, value in data.items()}
    try:
        return replace(base, **values)
    except TypeError as error:
        raise ConfigError(f'{key_path}: {error}') from error


def _lora_section(data):
    if data is None:
        return LoraConfig()
    if not isinstance(data, dict):
        raise ConfigError('lora must be a mapping')
    data = dict(data)
    preset = data.pop('preset', None)
    base = LoraConfig()
    if preset is not None:
        if preset not in LORA_PRESETS:
            raise ConfigError(f'lora.preset must be one of {", ".join(LORA_PRESETS)}')
        base = LoraConfig.from_preset(preset)
    if 'rank' in data and 'alpha' not in data:
        # alpha follows 2r unless set explicitly
        data['alpha'] = 2.0 * _coerce(data['rank'], 0, 'lora.rank')
    return _section(LoraConfig, data, 'lora', base)


def config_from_dict(data):
    """
    Resolve a parsed config mapping into a PipelineConfig.
    :param data: Dict as read from YAML (may be None or partial)
    :return: PipelineConfig
    """
    data = {} if data is None else data
    if not isinstance(data, dict):
        raise ConfigError('config file must hold a mapping at the top level')
    known = {item.name for item in fields(PipelineConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f'unknown config key {unknown[0]}')

    train = default_train_runs()
    train_data = data.get('train') or {}
    if not isinstance(train_data, dict):
        raise ConfigError('train must be a mapping of phase -> settings')
    for phase, settings in train_data.items():
        if phase not in PHASES:
            raise ConfigError(f'unknown config key train.{phase}')
        train[phase] = _section(TrainRun, settings, f'train.{phase}', train[phase], RUN_OWNED_KEYS['train'])

    return PipelineConfig(seed=_coerce(data.get('seed', 0), 0, 'seed'),
                          model=_section(ModelConfig, data.get('model'), 'model', owned=RUN_OWNED_KEYS['model']),
                          lora=_lora_section(data.get('lora')),
                          train=train,
                          preference=_section(PreferenceOptions, data.get('preference'), 'preference'),
                          metrics=_section(MetricOptions, data.get('metrics'), 'metrics'),
                          eval=_section(EvalOptions, data.get('eval'), 'eval'),
                          dataprep=_section(DataprepOptions, data.get('dataprep'), 'dataprep'))


def load_config(path=None, seed=None, prompt=None):
    """
    Read a YAML pipeline config and apply command-line overrides.
    :param path: Config file path, None for the built-in defaults
    :param seed: --seed override
    :param prompt: --prompt override of eval.prompt
    :return: PipelineConfig
    """
    data = {}
    if path is not None:
        try:
            with open(path, 'r') as config_file:
                data = yaml.safe_load(config_file)
        except FileNotFoundError as error:
            raise ConfigError(f'config file {path} does not exist') from error
        except yaml.YAMLError as error:
            raise ConfigError(f'config file {path} is not valid YAML: {error}') from error
    config = config_from_dict(data)
    if seed is not None:
        config = replace(config, seed=int(seed))
    if prompt is not None:
        config = replace(config, eval=replace(config.eval, prompt=prompt))
    return config
