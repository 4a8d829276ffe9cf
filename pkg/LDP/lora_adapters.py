'''
Module      : lora_adapters
Description : Low-rank adapters on attention projections of the micro model.

An adapted projection computes x W^T + (alpha / r) * x A^T B^T with the base weight W
frozen, A [r x d_in] drawn uniformly in +-1/sqrt(d_in) and B [d_out x r] starting at zero,
so a freshly injected model computes exactly what the base model computes.
'''

import concurrent.futures
from dataclasses import asdict, dataclass, field
from math import ceil

import numpy as np

try:
    from LDP import autodiff as ad
    from LDP.checkpoints import read_container, write_container
    from LDP.errors import ConfigError, ContractError, StateError
    from LDP.micro_mllm import param_count
except ModuleNotFoundError:
    import autodiff as ad
    from checkpoints import read_container, write_container
    from errors import ConfigError, ContractError, StateError
    from micro_mllm import param_count

LORA_TARGETS = ('Q', 'K', 'V', 'O')
LORA_LAYERS = ('decoder', 'encoder', 'adapter')
LORA_PRESETS = {'decoder-qkv': {'targets': ['Q', 'K', 'V'], 'layers': ['decoder']},
                'decoder-qkvo': {'targets': ['Q', 'K', 'V', 'O'], 'layers': ['decoder']}}


@dataclass
class LoraConfig:
    rank: int = 8
    alpha: float = None
    targets: list = field(default_factory=lambda: ['Q', 'K', 'V', 'O'])
    layers: list = field(default_factory=lambda: ['decoder'])
    dropout: float = 0.0

    def __post_init__(self):
        if self.alpha is None:
            self.alpha = 2.0 * self.rank
        self.targets = list(self.targets)
        self.layers = list(self.layers)
        self.validate()

    @classmethod
    def from_preset(cls, preset, rank=8, alpha=None, dropout=0.0):
        if preset not in LORA_PRESETS:
            raise ConfigError(f'unknown LoRA preset {preset!r}, expected one of {", ".join(LORA_PRESETS)}')
        return cls(rank=rank, alpha=alpha, dropout=dropout, **LORA_PRESETS[preset])

    @property
    def scaling(self):
        return self.alpha / self.rank

    def validate(self):
        if int(self.rank) != self.rank or self.rank < 1:
            raise ConfigError(f'lora.rank must be a positive integer, got {self.rank}')
        if not self.targets:
            raise ConfigError('lora.targets must not be empty')
        unknown = [t for t in self.targets if t not in LORA_TARGETS]
        if unknown:
            raise ConfigError(f'unknown LoRA target(s) {unknown}, expected a subset of {list(LORA_TARGETS)}')
        if not self.layers:
            raise ConfigError('lora.layers must not be empty')
        unknown = [scope for scope in self.layers if scope not in LORA_LAYERS]
        if unknown:
            raise ConfigError(f'unknown LoRA layer scope(s) {unknown}, expected a subset of {list(LORA_LAYERS)}')
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f'lora.dropout must be in [0, 1), got {self.dropout}')

    def to_dict(self):
        return asdict(self)


class LoraState:
    """ A/B factors of one adapted projection """

    def __init__(self, d_out, d_in, config, rng):
        bound = 1.0 / np.sqrt(d_in)
        self.A = ad.parameter(rng.uniform(-bound, bound, size=(config.rank, d_in)))
        self.B = ad.parameter(np.zeros((d_out, config.rank)))
        self.scaling = config.scaling
        self.dropout = config.dropout
        self.rng = rng
        self.merged = False

    def delta(self, x, training=False):
        if training and self.dropout > 0.0:
            keep = (self.rng.random(x.shape) >= self.dropout) / (1.0 - self.dropout)
            x = x * keep
        return ad.matmul(ad.matmul(x, ad.transpose(self.A)), ad.transpose(self.B)) * self.scaling

    def delta_weight(self):
        return self.scaling * (self.B.data @ self.A.data)


def target_shapes(model_config, lora_config):
    """
    Names and (d_out, d_in) of the projections a LoRA config adapts, derived from the model config alone.
    :return: List of (name, d_out, d_in)
    """
    d = model_config.d_model
    scopes = {'decoder': [f'decoder.{i}.attn' for i in range(model_config.n_dec_layers)],
              'encoder': [f'encoder.{i}.attn' for i in range(model_config.n_enc_layers)],
              'adapter': ['adapter.attn']}
    shapes = []
    for scope in lora_config.layers:
        for prefix in scopes[scope]:
            for target in lora_config.targets:
                shapes.append((f'{prefix}.{target.lower()}', d, d))
    if not shapes:
        raise ConfigError(f'LoRA layer scope {lora_config.layers} matches no projection of this model')
    return shapes


def inject(model, config, seed=0):
    """
    Attach adapters to the configured projections and freeze every base parameter.
    :param model: MicroModel
    :param config: LoraConfig
    :param seed: Seed of the A initialisation and of adapter dropout
    :return: The adapted model (same object)
    """
    if model.lora_config is not None:
        raise StateError('adapters are already injected into this model')
    config.validate()
    linears = model.named_linears()
    shapes = target_shapes(model.config, config)
    missing = [name for name, _, _ in shapes if name not in linears]
    if missing:
        raise ConfigError(f'LoRA target(s) {missing} do not exist in the model')

    model.set_base_trainable(False)
    children = np.random.SeedSequence(seed).spawn(len(shapes))
    for (name, d_out, d_in), child in zip(shapes, children):
        linears[name].adapter = LoraState(d_out, d_in, config, np.random.default_rng(child))
    model.lora_config = config
    return model


def _adapted(model):
    if model.lora_config is None:
        raise StateError('model has no injected adapters')
    return [linear for linear in model.named_linears().values() if linear.adapter is not None]


def merge(model):
    """ Fold every adapter into its base weight, W' = W + (alpha/r) B A; adapters stop contributing """
    adapted = _adapted(model)
    if any(linear.adapter.merged for linear in adapted):
        raise StateError('adapters are already merged')
    for linear in adapted:
        linear.weight.data = linear.weight.data + linear.adapter.delta_weight()
        linear.adapter.merged = True
        linear.adapter.A.requires_grad = False
        linear.adapter.B.requires_grad = False
    return model


def unmerge(model):
    """ Subtract the merged update again and reactivate the adapters """
    adapted = _adapted(model)
    if not all(linear.adapter.merged for linear in adapted):
        raise StateError('adapters are not merged')
    for linear in adapted:
        linear.weight.data = linear.weight.data - linear.adapter.delta_weight()
        linear.adapter.merged = False
        linear.adapter.A.requires_grad = True
        linear.adapter.B.requires_grad = True
    return model


def base_model(model):
    """ Frozen copy of the base model under the adapters: merged updates removed, adapters detached """
    base = model.snapshot()
    if base.lora_config is None:
        return base
    for linear in _adapted(base):
        if linear.adapter.merged:
            linear.weight.data = linear.weight.data - linear.adapter.delta_weight()
        linear.adapter = None
    base.lora_config = None
    return base


@dataclass
class EfficiencyReport:
    trainable: int
    base_total: int
    percentage: float
    reduction: float
    lora_optimizer_bytes: int
    full_optimizer_bytes: int

    def to_row(self):
        return {'trainable_params': self.trainable,
                'base_params': self.base_total,
                'trainable_percent': f'{self.percentage:.2f}',
                'reduction_factor': f'{self.reduction:.1f}',
                'lora_optimizer_state_bytes': self.lora_optimizer_bytes,
                'full_optimizer_state_bytes': self.full_optimizer_bytes}


def trainable_param_count(model_dims, config):
    """
    Exact count of adapter values, r * (d_in + d_out) per adapted matrix (2dr for square ones)
    :param model_dims: ModelConfig
    :param config: LoraConfig
    :return: (count, fraction of the base parameter count)
    """
    count = sum(config.rank * (d_in + d_out) for _, d_out, d_in in target_shapes(model_dims, config))
    return count, count / param_count(model_dims)


def efficiency_from_totals(base_total, trainable, bytes_per_value=8):
    """
    Percentage, reduction factor and optimizer-state memory (gradient + two moments per trainable value)
    :param base_total: Parameter count of the base model
    :param trainable: Number of trainable values
    :param bytes_per_value: Storage size of one value
    :return: EfficiencyReport
    """
    if trainable <= 0 or base_total <= 0:
        raise ContractError('parameter totals must be positive')
    return EfficiencyReport(trainable=int(trainable),
                            base_total=int(base_total),
                            percentage=100.0 * trainable / base_total,
                            reduction=base_total / trainable,
                            lora_optimizer_bytes=int(3 * trainable * bytes_per_value),
                            full_optimizer_bytes=int(3 * base_total * bytes_per_value))


def efficiency_report(model_config, lora_config, bytes_per_value=8):
    count, _ = trainable_param_count(model_config, lora_config)
    return efficiency_from_totals(param_count(model_config), count, bytes_per_value)


def rank_sweep(model_factory, corpus, ranks, lora_config, fit, file_logger, cpu=1):
    """
    One adapter training run per rank with shared seed and corpus.
    :param model_factory: Callable returning a fresh base MicroModel
    :param corpus: Training corpus handed to fit
    :param ranks: List of ranks to try
    :param lora_config: LoraConfig whose targets, layers and dropout are shared by all runs (alpha follows 2r)
    :param fit: Callable (adapted model, corpus) -> dict of metric values
    :param file_logger: Logger
    :param cpu: Number of runs executed at the same time
    :return: Rows sorted by rank, each {'rank', 'trainable_params', **metrics}
    """
    if not ranks:
        raise ContractError('rank sweep needs at least one rank')

    def run(rank):
        config = LoraConfig(rank=rank, targets=lora_config.targets, layers=lora_config.layers,
                            dropout=lora_config.dropout)
        model = inject(model_factory(), config)
        count = sum(tensor.size for tensor in model.adapter_parameters().values())
        return {'rank': rank, 'trainable_params': count, **fit(model, corpus)}

    progress_num = max(1, ceil(len(ranks) / 10))
    rows = []
    with concurrent.futures.ThreadPoolExecutor(max_workers=cpu) as executor:
        results = [executor.submit(run, rank) for rank in ranks]
        for f in concurrent.futures.as_completed(results):
            rows.append(f.result())
            if len(rows) % progress_num == 0 or len(rows) == 1:
                file_logger.info(f'\tRank sweep: {len(rows)} of {len(ranks)} runs done')
    return sorted(rows, key=lambda row: row['rank'])


def save_adapters(model, path):
    """ Adapter-only checkpoint: A/B factors, LoraConfig and the config of the base they belong to """
    _adapted(model)
    meta = {'lora': model.lora_config.to_dict(), 'model': model.config.to_dict()}
    return write_container(path, 'adapter', meta, model.adapter_parameters())


def load_adapters(model, path):
    """ Inject the checkpoint's LoRA config into a matching base model and restore its factors """
    _, meta, tensors = read_container(path, expected_kind='adapter')
    if meta['model'] != model.config.to_dict():
        raise ConfigError(f'adapter checkpoint {path} was trained on a different base model config')
    inject(model, LoraConfig(**meta['lora']))
    params = model.adapter_parameters()
    if set(params) != set(tensors):
        raise ConfigError(f'adapter checkpoint {path} does not match the injected adapters')
    for name, tensor in params.items():
        tensor.data = tensors[name]
    return model
