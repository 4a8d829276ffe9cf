'''
Module      : micro_mllm
Description : Miniature vision-language report generator.

Three parts, as in the full-size model it stands in for:
  - vision encoder: patch embedding + self-attention blocks with 2D rotary positions
  - vision-language adapter: one cross-attention layer in which adapter_queries learned
    query tokens compress the patch tokens into visual features F_v
  - language decoder: causal self-attention blocks over [F_v || text tokens] with 1D
    rotary positions, followed by a projection to the vocabulary

Parameter count (d = d_model, h = mlp_ratio * d, P = patch_dim, m = adapter_queries,
V = vocab_size):
    patch embedding      P*d + d
    per encoder block    4*d^2 + 2*d*h + 2*d
    adapter              m*d + 4*d^2 + 2*d
    token embedding      V*d
    per decoder block    4*d^2 + 2*d*h + 2*d
    final norm + head    d + d*V

Embedding and head rows are drawn from N(0, 1), every other projection from N(0, 1/d_in).
'''

import copy
from dataclasses import asdict, dataclass, field

import numpy as np

try:
    from LDP import autodiff as ad
    from LDP.errors import ConfigError, ContractError, DimensionError, LengthError, VocabularyError
    from LDP.tokenizer import EOS, SPECIAL_TOKENS
except ModuleNotFoundError:
    import autodiff as ad
    from errors import ConfigError, ContractError, DimensionError, LengthError, VocabularyError
    from tokenizer import EOS, SPECIAL_TOKENS

MASK_VALUE = -1e30
EOS_ID = SPECIAL_TOKENS.index(EOS)
ROPE_MODES = ('rope1d_text', 'rope2d_image')


@dataclass
class ModelConfig:
    d_model: int = 64
    n_heads: int = 4
    n_enc_layers: int = 2
    n_dec_layers: int = 2
    vocab_size: int = 512
    patch_grid: tuple = (8, 8)
    patch_dim: int = 12
    max_text_len: int = 32
    adapter_queries: int = 16
    mlp_ratio: int = 2
    rope_base: float = 10000.0
    encoder_rope: bool = True
    visual_positions: bool = True
    seed: int = 0

    def __post_init__(self):
        self.patch_grid = tuple(int(v) for v in self.patch_grid)
        self.validate()

    @property
    def head_dim(self):
        return self.d_model // self.n_heads

    @property
    def num_patches(self):
        return self.patch_grid[0] * self.patch_grid[1]

    def validate(self):
        for name in ('d_model', 'n_heads', 'vocab_size', 'patch_dim', 'max_text_len', 'adapter_queries', 'mlp_ratio'):
            if getattr(self, name) < 1:
                raise ConfigError(f'model.{name} must be positive')
        if self.n_enc_layers < 0 or self.n_dec_layers < 0:
            raise ConfigError('layer counts must be non-negative')
        if len(self.patch_grid) != 2 or min(self.patch_grid) < 1:
            raise ConfigError('model.patch_grid must be two positive sizes')
        if self.d_model % self.n_heads:
            raise ConfigError(f'd_model {self.d_model} is not divisible by n_heads {self.n_heads}')
        if self.head_dim % 2:
            raise ConfigError(f'head_dim {self.head_dim} must be even for rotary positions')
        if self.encoder_rope and self.head_dim % 4:
            raise ConfigError(f'head_dim {self.head_dim} must be divisible by 4 for 2D rotary positions')
        if self.adapter_queries > self.num_patches:
            raise ConfigError('adapter_queries cannot exceed the number of patches')

    def to_dict(self):
        record = asdict(self)
        record['patch_grid'] = list(self.patch_grid)
        return record


@dataclass
class PositionalScheme:
    mode: str = 'rope1d_text'
    base: float = 10000.0

    def apply(self, x, positions):
        return apply_rope(x, positions, self.mode, self.base)


def rope_angles(positions, head_dim, mode, base=10000.0):
    """
    Rotation angles for each position and feature pair.
    In 2D mode the first half of the pairs turn with the row index, the second half with the column index.
    :return: (cos, sin) arrays [len x head_dim/2]
    """
    if head_dim % 2:
        raise ConfigError(f'rotary positions need an even head_dim, got {head_dim}')
    positions = np.asarray(positions, dtype=np.float64)
    if mode == 'rope1d_text':
        inv_freq = base ** (-np.arange(0, head_dim, 2) / head_dim)
        angles = positions.reshape(-1)[:, None] * inv_freq[None, :]
    elif mode == 'rope2d_image':
        if head_dim % 4:
            raise ConfigError(f'2D rotary positions need head_dim divisible by 4, got {head_dim}')
        positions = positions.reshape(-1, 2)
        inv_freq = base ** (-np.arange(head_dim // 4) * 4.0 / head_dim)
        angles = np.concatenate([positions[:, 0:1] * inv_freq, positions[:, 1:2] * inv_freq], axis=1)
    else:
        raise ConfigError(f'unknown rotary mode {mode!r}')
    return np.cos(angles), np.sin(angles)


def apply_rope(q_or_k, positions, mode='rope1d_text', base=10000.0):
    """
    Rotate query or key vectors by their positions.
    :param q_or_k: Tensor [heads x len x head_dim]
    :param positions: len integers (1D) or len (row, col) pairs (2D)
    :param mode: 'rope1d_text' or 'rope2d_image'
    :param base: Base frequency
    :return: Rotated Tensor, same shape
    """
    x = ad.as_tensor(q_or_k)
    cos, sin = rope_angles(positions, x.shape[-1], mode, base)
    if cos.shape[0] != x.shape[-2]:
        raise DimensionError(f'{cos.shape[0]} positions for a sequence of length {x.shape[-2]}')
    return ad.rotate_pairs(x, cos, sin)


def _init_weight(rng, d_out, d_in):
    return ad.Tensor(rng.normal(0.0, 1.0 / np.sqrt(d_in), size=(d_out, d_in)))


class Linear:
    """ y = x W^T, W stored [d_out x d_in]; an attached low-rank adapter adds its update """

    def __init__(self, weight):
        self.weight = weight
        self.adapter = None

    @property
    def d_out(self):
        return self.weight.shape[0]

    @property
    def d_in(self):
        return self.weight.shape[1]

    def __call__(self, x, training=False):
        out = ad.matmul(x, ad.transpose(self.weight))
        if self.adapter is not None and not self.adapter.merged:
            out = out + self.adapter.delta(x, training)
        return out


class AttentionProjections:
    def __init__(self, rng, d_model):
        self.q = Linear(_init_weight(rng, d_model, d_model))
        self.k = Linear(_init_weight(rng, d_model, d_model))
        self.v = Linear(_init_weight(rng, d_model, d_model))
        self.o = Linear(_init_weight(rng, d_model, d_model))


def _split_heads(x, n_heads):
    length, width = x.shape
    return ad.transpose(ad.reshape(x, (length, n_heads, width // n_heads)), (1, 0, 2))


def _merge_heads(x):
    heads, length, head_dim = x.shape
    return ad.reshape(ad.transpose(x, (1, 0, 2)), (length, heads * head_dim))


def attention(projections, query_input, key_input, n_heads, training=False,
              query_rope=None, key_rope=None, causal=False):
    """
    Multi-head scaled dot-product attention.
    :param query_input: Tensor [Lq x d]
    :param key_input: Tensor [Lk x d]
    :param query_rope: Optional (cos, sin) rotation for queries
    :param key_rope: Optional (cos, sin) rotation for keys
    :param causal: Mask keys after each query position (requires Lq == Lk)
    :return: Tensor [Lq x d] after the output projection
    """
    q = _split_heads(projections.q(query_input, training), n_heads)
    k = _split_heads(projections.k(key_input, training), n_heads)
    v = _split_heads(projections.v(key_input, training), n_heads)
    if query_rope is not None:
        q = ad.rotate_pairs(q, *query_rope)
    if key_rope is not None:
        k = ad.rotate_pairs(k, *key_rope)
    scores = ad.matmul(q, ad.transpose(k, (0, 2, 1))) * (1.0 / np.sqrt(q.shape[-1]))
    if causal:
        length = scores.shape[-1]
        scores = scores + np.triu(np.full((length, length), MASK_VALUE), k=1)
    weights = ad.softmax(scores, axis=-1)
    return projections.o(_merge_heads(ad.matmul(weights, v)), training)


class TransformerBlock:
    """ Pre-norm self-attention + MLP block """

    def __init__(self, rng, d_model, hidden):
        self.attn_norm = ad.Tensor(np.ones(d_model))
        self.attn = AttentionProjections(rng, d_model)
        self.mlp_norm = ad.Tensor(np.ones(d_model))
        self.mlp_in = Linear(_init_weight(rng, hidden, d_model))
        self.mlp_out = Linear(_init_weight(rng, d_model, hidden))

    def __call__(self, x, n_heads, rope, causal, training=False):
        h = ad.rms_norm(x, self.attn_norm)
        x = x + attention(self.attn, h, h, n_heads, training, rope, rope, causal)
        h = ad.rms_norm(x, self.mlp_norm)
        return x + self.mlp_out(ad.gelu(self.mlp_in(h, training)), training)


class VisionLanguageAdapter:
    """ Learned queries attend once over the encoded patch tokens """

    def __init__(self, rng, d_model, n_queries):
        self.queries = ad.Tensor(rng.normal(0.0, 1.0, size=(n_queries, d_model)))
        self.query_norm = ad.Tensor(np.ones(d_model))
        self.key_norm = ad.Tensor(np.ones(d_model))
        self.attn = AttentionProjections(rng, d_model)

    def __call__(self, patch_tokens, n_heads, training=False):
        q_in = ad.rms_norm(self.queries, self.query_norm)
        kv_in = ad.rms_norm(patch_tokens, self.key_norm)
        return self.queries + attention(self.attn, q_in, kv_in, n_heads, training)


class MicroModel:
    """ Vision encoder, vision-language adapter and language decoder with named parameters """

    def __init__(self, config):
        config.validate()
        self.config = config
        self.lora_config = None
        rng = np.random.default_rng(config.seed)
        d, hidden = config.d_model, config.mlp_ratio * config.d_model
        self.patch_embed = Linear(_init_weight(rng, d, config.patch_dim))
        self.patch_bias = ad.Tensor(np.zeros(d))
        self.encoder = [TransformerBlock(rng, d, hidden) for _ in range(config.n_enc_layers)]
        self.adapter = VisionLanguageAdapter(rng, d, config.adapter_queries)
        self.token_embedding = ad.Tensor(rng.normal(0.0, 1.0, size=(config.vocab_size, d)))
        self.decoder = [TransformerBlock(rng, d, hidden) for _ in range(config.n_dec_layers)]
        self.final_norm = ad.Tensor(np.ones(d))
        # unit-scale rows like the embedding: logits of a frozen head are bounded by |w_v| * sqrt(d)
        self.lm_head = Linear(ad.Tensor(rng.normal(0.0, 1.0, size=(config.vocab_size, d))))

    def named_linears(self):
        """ Projection layers by dotted name, e.g. 'decoder.1.attn.q' """
        linears = {'patch_embed': self.patch_embed}
        for scope, blocks in (('encoder', self.encoder), ('decoder', self.decoder)):
            for i, block in enumerate(blocks):
                for proj in ('q', 'k', 'v', 'o'):
                    linears[f'{scope}.{i}.attn.{proj}'] = getattr(block.attn, proj)
                linears[f'{scope}.{i}.mlp_in'] = block.mlp_in
                linears[f'{scope}.{i}.mlp_out'] = block.mlp_out
        for proj in ('q', 'k', 'v', 'o'):
            linears[f'adapter.attn.{proj}'] = getattr(self.adapter.attn, proj)
        linears['lm_head'] = self.lm_head
        return linears

    def named_parameters(self):
        """ Base parameters by name, in a fixed order (adapters excluded) """
        params = {'patch_bias': self.patch_bias,
                  'adapter.queries': self.adapter.queries,
                  'adapter.query_norm': self.adapter.query_norm,
                  'adapter.key_norm': self.adapter.key_norm,
                  'token_embedding': self.token_embedding,
                  'final_norm': self.final_norm}
        for scope, blocks in (('encoder', self.encoder), ('decoder', self.decoder)):
            for i, block in enumerate(blocks):
                params[f'{scope}.{i}.attn_norm'] = block.attn_norm
                params[f'{scope}.{i}.mlp_norm'] = block.mlp_norm
        for name, linear in self.named_linears().items():
            params[f'{name}.weight'] = linear.weight
        return dict(sorted(params.items()))

    def adapter_parameters(self):
        """ Low-rank factors of attached adapters by name """
        params = {}
        for name, linear in self.named_linears().items():
            if linear.adapter is not None:
                params[f'{name}.lora_A'] = linear.adapter.A
                params[f'{name}.lora_B'] = linear.adapter.B
        return params

    def set_base_trainable(self, flag):
        """ Mark every base parameter as trainable (full fine-tuning) or frozen """
        for tensor in self.named_parameters().values():
            tensor.requires_grad = bool(flag)
            tensor.grad = None

    def trainable_parameters(self):
        named = {**self.named_parameters(), **self.adapter_parameters()}
        return {name: tensor for name, tensor in named.items() if tensor.requires_grad}

    def snapshot(self):
        """ Frozen deep copy, used as the reference policy """
        frozen = copy.deepcopy(self)
        for tensor in list(frozen.named_parameters().values()) + list(frozen.adapter_parameters().values()):
            tensor.requires_grad = False
            tensor.grad = None
        return frozen


def param_count(config):
    """ Closed-form number of base parameters of a MicroModel built from config """
    d, hidden = config.d_model, config.mlp_ratio * config.d_model
    block = 4 * d * d + 2 * d * hidden + 2 * d
    return (config.patch_dim * d + d
            + config.n_enc_layers * block
            + config.adapter_queries * d + 4 * d * d + 2 * d
            + config.vocab_size * d
            + config.n_dec_layers * block
            + d + d * config.vocab_size)


def _check_patches(model, image_patches):
    patches = np.asarray(image_patches.data if isinstance(image_patches, ad.Tensor) else image_patches,
                         dtype=np.float64)
    rows, cols = model.config.patch_grid
    expected = (rows, cols, model.config.patch_dim)
    if patches.shape != expected:
        raise DimensionError(f'patch grid of shape {patches.shape} does not match the configured {expected}')
    return patches


def _check_tokens(model, text_tokens):
    tokens = np.asarray(text_tokens, dtype=np.int64).reshape(-1)
    if tokens.size == 0:
        raise ContractError('text must contain at least one token')
    if tokens.size > model.config.max_text_len:
        raise LengthError(f'text of {tokens.size} tokens exceeds max_text_len {model.config.max_text_len}')
    if np.any(tokens < 0) or np.any(tokens >= model.config.vocab_size):
        raise VocabularyError(f'token id outside vocabulary of size {model.config.vocab_size}')
    return tokens


def encode_image(model, image_patches, training=False):
    """
    Visual features F_v = adapter(ViT(I)).
    :param model: MicroModel
    :param image_patches: array [rows x cols x patch_dim]
    :param training: Enables adapter dropout
    :return: Tensor [adapter_queries x d_model]
    """
    config = model.config
    patches = _check_patches(model, image_patches)
    rows, cols = config.patch_grid
    x = model.patch_embed(ad.Tensor(patches.reshape(rows * cols, config.patch_dim)), training) + model.patch_bias
    rope = None
    if config.encoder_rope:
        grid = np.stack(np.meshgrid(np.arange(rows), np.arange(cols), indexing='ij'), axis=-1).reshape(-1, 2)
        rope = rope_angles(grid, config.head_dim, 'rope2d_image', config.rope_base)
    for block in model.encoder:
        x = block(x, config.n_heads, rope, causal=False, training=training)
    return model.adapter(x, config.n_heads, training)


def decode(model, visual_features, text_tokens, training=False):
    """
    Decoder pass over [visual features || text tokens].
    :param visual_features: Tensor [m x d] or None for a text-only language model pass
    :param text_tokens: Token ids, length L
    :return: Tensor [L x vocab_size]
    """
    config = model.config
    tokens = _check_tokens(model, text_tokens)
    text = model.token_embedding[tokens]
    if visual_features is None:
        x = text
        positions = np.arange(tokens.size)
        offset = 0
    else:
        offset = visual_features.shape[0]
        x = ad.concat([visual_features, text], axis=0)
        if config.visual_positions:
            positions = np.arange(offset + tokens.size)
        else:
            positions = np.concatenate([np.zeros(offset), np.arange(tokens.size)])
    rope = rope_angles(positions, config.head_dim, 'rope1d_text', config.rope_base)
    for block in model.decoder:
        x = block(x, config.n_heads, rope, causal=True, training=training)
    if offset:
        x = x[offset:]
    return model.lm_head(ad.rms_norm(x, model.final_norm), training)


def forward(model, image_patches, text_tokens, ablate_visual=False, training=False):
    """
    Next-token logits for every text position, conditioned on the image.
    :param ablate_visual: Drop the adapter output entirely (pure language model pass)
    :return: Tensor [L x vocab_size]
    """
    _check_tokens(model, text_tokens)
    features = None if ablate_visual else encode_image(model, image_patches, training)
    return decode(model, features, text_tokens, training)


def generate(model, image_patches, prompt_tokens, max_new, strategy='greedy', top_k=5, seed=0, eos_id=EOS_ID):
    """
    Autoregressive report generation.
    :param prompt_tokens: Non-empty list of ids (beginning-of-sequence plus optional prompt)
    :param max_new: Largest number of new tokens
    :param strategy: 'greedy' or 'top_k'
    :param top_k: Candidates kept by top_k sampling
    :param seed: Seed of the top_k sampler
    :param eos_id: Token ending generation (not returned)
    :return: List of generated token ids
    """
    if len(prompt_tokens) == 0:
        raise ContractError('generation needs a non-empty prompt')
    if max_new < 1:
        raise ContractError('max_new must be at least 1')
    if strategy not in ('greedy', 'top_k'):
        raise ConfigError(f'unknown decoding strategy {strategy!r}')
    rng = np.random.default_rng(seed)
    tokens = [int(t) for t in prompt_tokens]
    generated = []
    with ad.no_grad():
        features = encode_image(model, image_patches)
        for _ in range(max_new):
            if len(tokens) >= model.config.max_text_len:
                break
            logits = decode(model, features, tokens).data[-1]
            if strategy == 'greedy':
                next_token = int(np.argmax(logits))
            else:
                candidates = np.argsort(-logits, kind='stable')[:top_k]
                shifted = logits[candidates] - logits[candidates].max()
                probs = np.exp(shifted) / np.exp(shifted).sum()
                next_token = int(candidates[rng.choice(len(candidates), p=probs)])
            if next_token == eos_id:
                break
            generated.append(next_token)
            tokens.append(next_token)
    return generated
