'''
Module      : alignment
Description : Training objectives and loops for the report generator.

Phases:
  - SFT: token-level cross-entropy of the expert report given image and prompt
  - DPO: -log sigmoid(beta * [(log pi(y_w) - log pi_ref(y_w)) - (log pi(y_l) - log pi_ref(y_l))])
  - SimPO: -log sigmoid(beta * (log pi(y_w)/|y_w| - log pi(y_l)/|y_l|) - gamma), reference free
  - ORPO: CE(y_w) + lambda * -log sigmoid(log odds(y_w) - log odds(y_l)),
          odds(y) = p/(1-p) with p = exp(log pi(y)/|y|)

Only tensors that require gradients are updated, so with adapters injected every phase
trains the adapters alone. The reference policy is a frozen snapshot and is evaluated
without building a graph.
'''

import json
from dataclasses import asdict, dataclass, field
from math import ceil

import numpy as np

try:
    from LDP import autodiff as ad
    from LDP.dataprep import hallucinate_report
    from LDP.errors import ConfigError, ContractError, DataError, LengthError, VocabularyError
    from LDP.micro_mllm import decode, encode_image, generate
    from LDP.optimizer import Adam, clip_grad_norm
except ModuleNotFoundError:
    import autodiff as ad
    from dataprep import hallucinate_report
    from errors import ConfigError, ContractError, DataError, LengthError, VocabularyError
    from micro_mllm import decode, encode_image, generate
    from optimizer import Adam, clip_grad_norm

PHASES = ('sft', 'dpo', 'simpo', 'orpo')
PAIR_SOURCES = ('base-model', 'hallucination')
PAIRS_SCHEMA = 'ldp.preference_pairs/1'
ORPO_CEILING = float(np.log(1.0 - 1e-9))


@dataclass
class ReportExample:
    """ One supervised example: image, prompt ids (beginning-of-sequence first) and target report ids """
    context_id: str
    patches: np.ndarray
    prompt: list
    target: list
    text: str = ''


@dataclass
class PreferencePair:
    context_id: str
    patches: np.ndarray
    prompt: list
    chosen: list
    rejected: list
    sources: dict = field(default_factory=lambda: {'chosen': 'expert-report', 'rejected': 'base-model'})

    def __post_init__(self):
        if not self.chosen or not self.rejected:
            raise DataError(f'preference pair {self.context_id} has an empty response')
        if list(self.chosen) == list(self.rejected):
            raise DataError(f'preference pair {self.context_id} has identical responses')


@dataclass
class TrainRun:
    """ Settings and loss trace of one training phase """
    phase: str = 'sft'
    lr: float = 2e-4
    batch_size: int = 16
    epochs: int = 1
    beta: float = 0.1
    gamma: float = 0.5
    lam: float = 0.25
    clip_norm: float = 1.0
    seed: int = 0
    reference_id: str = None
    loss_trace: list = field(default_factory=list)

    def __post_init__(self):
        if self.phase not in PHASES:
            raise ConfigError(f'unknown phase {self.phase!r}, expected one of {", ".join(PHASES)}')
        if self.lr <= 0 or self.batch_size < 1 or self.epochs < 1:
            raise ConfigError(f'{self.phase}: lr, batch_size and epochs must be positive')
        if self.phase in ('dpo', 'simpo') and self.beta <= 0:
            raise ConfigError(f'{self.phase}: beta must be positive')
        if self.gamma < 0 or self.lam < 0:
            raise ConfigError(f'{self.phase}: gamma and lam must be non-negative')

    @classmethod
    def defaults(cls, phase):
        """ Phase defaults: SFT lr 2e-4, preference phases lr 1e-6 with beta 0.1 """
        if phase == 'sft':
            return cls(phase=phase)
        return cls(phase=phase, lr=1e-6)

    def settings(self):
        record = asdict(self)
        record.pop('loss_trace')
        return record


def make_examples(pairs, vocab, prompt):
    """
    Encode image-text pairs for training.
    :param pairs: List of ImageTextPair
    :param vocab: Vocabulary
    :param prompt: Prompt token ids (beginning-of-sequence plus preset)
    :return: List of ReportExample, targets ending in end-of-sequence
    """
    return [ReportExample(context_id=pair.pair_id, patches=pair.patches, prompt=list(prompt),
                          target=vocab.encode(pair.report, add_eos=True), text=pair.report)
            for pair in pairs]


def report_logits(model, patches, prompt, y, training=False, features=None):
    """
    Logits predicting each token of y after the prompt.
    :param features: Precomputed visual features (skips the encoder)
    :return: Tensor [|y| x vocab]
    """
    if len(prompt) == 0:
        raise ContractError('prompt must hold at least the beginning-of-sequence token')
    if len(y) == 0:
        raise DataError('response must not be empty')
    tokens = list(prompt) + list(y)[:-1]
    if len(tokens) > model.config.max_text_len:
        raise LengthError(f'prompt + response of {len(tokens) + 1} tokens exceeds max_text_len + 1')
    if features is None:
        features = encode_image(model, patches, training)
    logits = decode(model, features, tokens, training)
    return logits[len(prompt) - 1:]


def logprob_from_logits(logits, y):
    """ Sum over positions of log softmax(logits)[t, y_t] """
    y = np.asarray(y, dtype=np.int64)
    if y.size == 0:
        raise DataError('response must not be empty')
    if np.any(y < 0) or np.any(y >= logits.shape[-1]):
        raise VocabularyError(f'token id outside vocabulary of size {logits.shape[-1]}')
    return ad.tensor_sum(ad.log_softmax(logits, axis=-1)[np.arange(y.size), y])


def seq_logprob(model, context, y, training=False, features=None):
    """
    log pi(y | image, prompt)
    :param context: (patches, prompt ids)
    :param y: Response token ids
    :return: Scalar Tensor
    """
    patches, prompt = context
    return logprob_from_logits(report_logits(model, patches, prompt, y, training, features), y)


def sft_loss(model, batch, training=True):
    """ Mean over examples of the token-mean cross-entropy of the target report """
    if not batch:
        raise DataError('empty batch')
    losses = [ad.cross_entropy(report_logits(model, ex.patches, ex.prompt, ex.target, training), ex.target)
              for ex in batch]
    return ad.tensor_sum(ad.concat([loss.reshape((1,)) for loss in losses])) * (1.0 / len(losses))


def _mean(terms):
    return ad.tensor_sum(ad.concat([term.reshape((1,)) for term in terms])) * (1.0 / len(terms))


def dpo_objective(policy_w, policy_l, reference_w, reference_l, beta):
    """ Per-pair DPO loss from sequence log-probabilities (reference values as floats) """
    margin = (policy_w - reference_w) - (policy_l - reference_l)
    return -ad.log_sigmoid(margin * beta)


def simpo_objective(logp_w, len_w, logp_l, len_l, beta, gamma):
    """ Per-pair SimPO loss from summed log-probabilities and response lengths """
    if len_w < 1 or len_l < 1:
        raise DataError('SimPO needs non-empty responses')
    margin = (logp_w * (1.0 / len_w) - logp_l * (1.0 / len_l)) * beta - gamma
    return -ad.log_sigmoid(margin)


def log_odds(mean_logp, diagnostics=None):
    """
    log(p / (1 - p)) for p = exp(mean_logp), with mean_logp clamped at log(1 - 1e-9)
    :param diagnostics: Optional dict whose 'clamped' count is increased for each clamp
    """
    if diagnostics is not None and mean_logp.item() > ORPO_CEILING:
        diagnostics['clamped'] = diagnostics.get('clamped', 0) + 1
    clamped = ad.minimum(mean_logp, ORPO_CEILING)
    return clamped - ad.log(1.0 - ad.exp(clamped))


def orpo_objective(logp_w, len_w, logp_l, len_l, lam, diagnostics=None):
    """ Per-pair ORPO loss: cross-entropy of y_w plus lambda times the odds-ratio term """
    mean_w = logp_w * (1.0 / len_w)
    mean_l = logp_l * (1.0 / len_l)
    ratio = -ad.log_sigmoid(log_odds(mean_w, diagnostics) - log_odds(mean_l, diagnostics))
    return -mean_w + ratio * lam


def _pair_logprobs(model, pair, training=False):
    """ Encode the image once and score both responses """
    features = encode_image(model, pair.patches, training)
    context = (pair.patches, pair.prompt)
    return (seq_logprob(model, context, pair.chosen, training, features),
            seq_logprob(model, context, pair.rejected, training, features))


def reference_logprobs(reference, pairs):
    """ Frozen reference log-probabilities of (y_w, y_l) per pair """
    with ad.no_grad():
        return [tuple(value.item() for value in _pair_logprobs(reference, pair)) for pair in pairs]


def _check_compatible(policy, reference):
    if policy.config.vocab_size != reference.config.vocab_size:
        raise ConfigError(f'policy vocabulary ({policy.config.vocab_size}) differs from '
                          f'reference vocabulary ({reference.config.vocab_size})')


def dpo_loss(policy, reference, batch, beta, reference_values=None, training=True):
    """
    Mean DPO loss over a batch of preference pairs.
    :param policy: Trainable MicroModel
    :param reference: Frozen MicroModel snapshot
    :param batch: List of PreferencePair
    :param beta: Preference weight, > 0
    :param reference_values: Optional precomputed reference log-probabilities, one tuple per pair
    :return: Scalar Tensor
    """
    if beta <= 0:
        raise ConfigError('DPO beta must be positive')
    if not batch:
        raise DataError('empty batch')
    _check_compatible(policy, reference)
    if reference_values is None:
        reference_values = reference_logprobs(reference, batch)
    terms = []
    for pair, (ref_w, ref_l) in zip(batch, reference_values):
        logp_w, logp_l = _pair_logprobs(policy, pair, training)
        terms.append(dpo_objective(logp_w, logp_l, ref_w, ref_l, beta))
    return _mean(terms)


def simpo_loss(policy, batch, beta, gamma, training=True):
    if beta <= 0 or gamma < 0:
        raise ConfigError('SimPO needs beta > 0 and gamma >= 0')
    if not batch:
        raise DataError('empty batch')
    terms = []
    for pair in batch:
        logp_w, logp_l = _pair_logprobs(policy, pair, training)
        terms.append(simpo_objective(logp_w, len(pair.chosen), logp_l, len(pair.rejected), beta, gamma))
    return _mean(terms)


def orpo_loss(policy, batch, lam, diagnostics=None, training=True):
    if lam < 0:
        raise ConfigError('ORPO lambda must be non-negative')
    if not batch:
        raise DataError('empty batch')
    terms = []
    for pair in batch:
        logp_w, logp_l = _pair_logprobs(policy, pair, training)
        terms.append(orpo_objective(logp_w, len(pair.chosen), logp_l, len(pair.rejected), lam, diagnostics))
    return _mean(terms)


def _batches(items, batch_size, rng):
    order = rng.permutation(len(items))
    return [[items[i] for i in order[start:start + batch_size]] for start in range(0, len(items), batch_size)]


def _step(optimizer, loss, clip_norm):
    optimizer.zero_grad()
    ad.backward(loss)
    clip_grad_norm(optimizer.parameters, clip_norm)
    optimizer.step()
    return loss.item()


def sft_epoch(model, corpus, optimizer, file_logger, batch_size=16, rng=None, clip_norm=1.0):
    """
    One pass of supervised fine-tuning over the corpus.
    :param model: MicroModel (adapters injected, or base made trainable)
    :param corpus: List of ReportExample
    :param optimizer: Adam over the trainable tensors
    :param file_logger: Logger
    :param batch_size: Examples per update
    :param rng: numpy Generator shuffling the batches
    :param clip_norm: Gradient norm ceiling, 0 disables
    :return: List of per-batch losses
    """
    if not corpus:
        raise DataError('SFT corpus is empty')
    rng = np.random.default_rng(0) if rng is None else rng
    losses = [_step(optimizer, sft_loss(model, batch), clip_norm) for batch in _batches(corpus, batch_size, rng)]
    file_logger.debug(f'SFT epoch: {len(losses)} batches, last loss {losses[-1]:.6f}')
    return losses


def win_rate(policy, reference, pairs, reference_values=None):
    """ Fraction of pairs on which the policy margin log pi(y_w) - log pi(y_l) strictly exceeds the reference margin """
    if not pairs:
        raise DataError('no pairs to compute a win-rate on')
    if reference_values is None:
        reference_values = reference_logprobs(reference, pairs)
    policy_values = reference_logprobs(policy, pairs)
    wins = sum((p_w - p_l) > (r_w - r_l) for (p_w, p_l), (r_w, r_l) in zip(policy_values, reference_values))
    return wins / len(pairs)


def dpo_epoch(policy, reference, pairs, optimizer, file_logger, beta=0.1, batch_size=16, rng=None,
              clip_norm=1.0, held_out=None):
    """
    One DPO pass over the training pairs.
    :param held_out: Pairs the win-rate is measured on (default: the training pairs)
    :return: (per-batch losses, win-rate after the epoch)
    """
    if not pairs:
        raise DataError('no preference pairs to train on')
    _check_compatible(policy, reference)
    rng = np.random.default_rng(0) if rng is None else rng
    cached = dict(zip((id(pair) for pair in pairs), reference_logprobs(reference, pairs)))
    losses = []
    for batch in _batches(pairs, batch_size, rng):
        values = [cached[id(pair)] for pair in batch]
        losses.append(_step(optimizer, dpo_loss(policy, reference, batch, beta, values), clip_norm))
    rate = win_rate(policy, reference, held_out if held_out else pairs)
    file_logger.debug(f'DPO epoch: {len(losses)} batches, last loss {losses[-1]:.6f}, win-rate {rate:.3f}')
    return losses, rate


def preference_epoch(phase, policy, pairs, optimizer, file_logger, run, rng=None, diagnostics=None):
    """ One pass of the reference-free SimPO or ORPO objective """
    if not pairs:
        raise DataError('no preference pairs to train on')
    rng = np.random.default_rng(0) if rng is None else rng
    losses = []
    for batch in _batches(pairs, run.batch_size, rng):
        if phase == 'simpo':
            loss = simpo_loss(policy, batch, run.beta, run.gamma)
        elif phase == 'orpo':
            loss = orpo_loss(policy, batch, run.lam, diagnostics)
        else:
            raise ConfigError(f'{phase} is not a reference-free preference phase')
        losses.append(_step(optimizer, loss, run.clip_norm))
    if diagnostics and diagnostics.get('clamped'):
        file_logger.warning(f'ORPO: sequence probability clamped below 1 in {diagnostics["clamped"]} evaluations')
    return losses


def run_phase(run, policy, data, file_logger, rng, reference=None, held_out=None):
    """
    Train one phase for run.epochs epochs, filling run.loss_trace with (epoch, batch, loss).
    :param data: ReportExample list for SFT, PreferencePair list otherwise
    :param reference: Frozen snapshot, required for DPO
    :return: Summary dict (final loss, win-rate when measured, ORPO clamp count)
    """
    if run.phase == 'dpo' and reference is None:
        raise ConfigError('DPO needs a reference policy (an SFT checkpoint)')
    parameters = list(policy.trainable_parameters().values())
    if not parameters:
        raise ContractError('model has no trainable parameters')
    optimizer = Adam(parameters, lr=run.lr)
    diagnostics = {}
    summary = {}
    progress_num = max(1, ceil(run.epochs / 10))
    for epoch in range(1, run.epochs + 1):
        if run.phase == 'sft':
            losses = sft_epoch(policy, data, optimizer, file_logger, run.batch_size, rng, run.clip_norm)
        elif run.phase == 'dpo':
            losses, summary['win_rate'] = dpo_epoch(policy, reference, data, optimizer, file_logger, run.beta,
                                                    run.batch_size, rng, run.clip_norm, held_out)
        else:
            losses = preference_epoch(run.phase, policy, data, optimizer, file_logger, run, rng, diagnostics)
        run.loss_trace.extend((epoch, step, loss) for step, loss in enumerate(losses, start=1))
        if epoch % progress_num == 0 or epoch == 1:
            file_logger.info(f'\t{run.phase.upper()} epoch {epoch} of {run.epochs}: mean loss {np.mean(losses):.6f}')
    summary['final_loss'] = run.loss_trace[-1][2]
    if run.phase == 'orpo':
        summary['orpo_clamped'] = diagnostics.get('clamped', 0)
    return summary


def build_preference_pairs(examples, vocab, file_logger, source='base-model', policy=None, max_new=24, rng=None):
    """
    Preferred = expert report, non-preferred = base-model generation with the prompt, or the expert
    report with one clinical attribute replaced (hallucination).
    :param examples: List of ReportExample carrying the expert reports
    :param vocab: Vocabulary
    :param file_logger: Logger
    :param source: 'base-model' or 'hallucination'
    :param policy: MicroModel generating the non-preferred reports (base-model source)
    :param max_new: Generation length limit
    :param rng: numpy Generator used by the hallucination source
    :return: (list of PreferencePair, statistics dict)
    """
    if source not in PAIR_SOURCES:
        raise ConfigError(f'unknown preference source {source!r}, expected one of {", ".join(PAIR_SOURCES)}')
    if source == 'base-model' and policy is None:
        raise ConfigError('base-model preference pairs need a model to generate with')
    rng = np.random.default_rng(0) if rng is None else rng
    pairs = []
    stats = {'contexts': len(examples), 'pairs': 0, 'dropped_identical': 0, 'skipped': 0}
    for example in examples:
        if source == 'base-model':
            try:
                limit = min(max_new, policy.config.max_text_len - len(example.prompt))
                rejected = generate(policy, example.patches, example.prompt, max(1, limit), eos_id=vocab.eos_id)
            except (LengthError, VocabularyError) as error:
                file_logger.warning(f'Generation failed for {example.context_id}: {error}')
                stats['skipped'] += 1
                continue
            rejected = rejected + [vocab.eos_id]
        else:
            altered = hallucinate_report(example.text, rng)
            if altered is None:
                file_logger.warning(f'No clinical attribute to alter in report of {example.context_id}')
                stats['skipped'] += 1
                continue
            rejected = vocab.encode(altered, add_eos=True)
        if rejected == list(example.target):
            file_logger.debug(f'Dropped pair {example.context_id}: generation equals the expert report')
            stats['dropped_identical'] += 1
            continue
        pairs.append(PreferencePair(context_id=example.context_id, patches=example.patches, prompt=list(example.prompt),
                                    chosen=list(example.target), rejected=rejected,
                                    sources={'chosen': 'expert-report', 'rejected': source}))
    stats['pairs'] = len(pairs)
    file_logger.info(f'{stats["pairs"]} preference pairs built from {stats["contexts"]} contexts '
                     f'({stats["dropped_identical"]} identical dropped, {stats["skipped"]} skipped)')
    return pairs, stats


def write_preference_pairs(pairs, path):
    with open(path, 'w') as out_file:
        out_file.write(json.dumps({'schema': PAIRS_SCHEMA}) + '\n')
        for pair in pairs:
            record = {'context_id': pair.context_id, 'prompt': pair.prompt, 'y_w': pair.chosen,
                      'y_l': pair.rejected, 'sources': pair.sources}
            out_file.write(json.dumps(record, sort_keys=True) + '\n')


def read_preference_pairs(path, patches_by_context):
    """
    Read pairs written by write_preference_pairs.
    :param patches_by_context: Dict context id -> patch grid
    :return: List of PreferencePair
    """
    pairs = []
    with open(path, 'r') as in_file:
        header = json.loads(in_file.readline())
        if header.get('schema') != PAIRS_SCHEMA:
            raise DataError(f'{path} is not a {PAIRS_SCHEMA} file')
        for line in in_file:
            record = json.loads(line)
            if record['context_id'] not in patches_by_context:
                raise DataError(f'{path}: unknown context {record["context_id"]}')
            pairs.append(PreferencePair(context_id=record['context_id'],
                                        patches=patches_by_context[record['context_id']],
                                        prompt=record['prompt'], chosen=record['y_w'], rejected=record['y_l'],
                                        sources=record['sources']))
    return pairs
