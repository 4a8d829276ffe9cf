'''
Module      : nlg_metrics
Description : Corpus-level BLEU-1..4, ROUGE-L, METEOR-lite and CIDEr.

All metrics read tokens produced by tokenizer.tokenize_text (lowercase, punctuation split).
  - BLEU: clipped n-gram counts pooled over the corpus, zero precisions replaced by 1e-9,
    brevity penalty min(1, exp(1 - r/c)) with r the closest reference length per hypothesis
  - ROUGE-L: LCS F-measure (beta = 1), best reference per hypothesis, corpus mean
  - METEOR-lite: exact then suffix-stem unigram alignment, F = 10PR/(R + 9P),
    penalty 0.5 * (chunks/matches)^3, best reference, corpus mean
  - CIDEr: TF-IDF n-gram vectors (IDF over the reference sets of the corpus), mean cosine
    against each reference, n = 1..4 averaged, times 10; CIDEr-D penalty optional
'''

import json
import os
from collections import Counter
from dataclasses import dataclass, field
from math import exp, log

import numpy as np

try:
    from LDP.errors import ConfigError, DataError, DegenerateCorpusError, ValidationError
    from LDP.tokenizer import DATA_DIR, tokenize_text
except ModuleNotFoundError:
    from errors import ConfigError, DataError, DegenerateCorpusError, ValidationError
    from tokenizer import DATA_DIR, tokenize_text

BLEU_EPSILON = 1e-9
EVAL_CORPUS_SCHEMA = 'ldp.eval_corpus/1'
METRIC_COLUMNS = ('BLEU-1', 'BLEU-2', 'BLEU-3', 'BLEU-4', 'METEOR', 'ROUGE-L', 'CIDEr')


def _load_suffixes():
    with open(os.path.join(DATA_DIR, 'stem_suffixes.txt'), 'r') as suffix_file:
        suffixes = [line.strip() for line in suffix_file if line.strip() and not line.startswith('#')]
    return sorted(suffixes, key=lambda suffix: -len(suffix))


STEM_SUFFIXES = _load_suffixes()


@dataclass
class MetricOptions:
    sentence_bleu: bool = False
    cider_d: bool = False
    cider_sigma: float = 6.0


@dataclass
class TokenizedCorpus:
    """ (hypothesis tokens, list of reference token lists) per case """
    entries: list
    ids: list = field(default_factory=list)

    def __post_init__(self):
        for i, (_, references) in enumerate(self.entries):
            if not references:
                raise DataError(f'corpus entry {i} has no reference')
        if not self.ids:
            self.ids = [str(i) for i in range(len(self.entries))]

    @classmethod
    def from_texts(cls, hypotheses, references, ids=None):
        """ Tokenise raw strings: one hypothesis and a list of references per case """
        if len(hypotheses) != len(references):
            raise DataError('number of hypotheses and reference sets differ')
        entries = [(tokenize_text(hyp), [tokenize_text(ref) for ref in refs])
                   for hyp, refs in zip(hypotheses, references)]
        return cls(entries, list(ids) if ids else [])

    def __len__(self):
        return len(self.entries)


def ngrams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def _closest_ref_length(hyp_len, references):
    return min((len(ref) for ref in references), key=lambda length: (abs(length - hyp_len), length))


def _bleu_from_counts(matches, totals, hyp_len, ref_len, n):
    log_precision = 0.0
    for order in range(n):
        precision = matches[order] / totals[order] if matches[order] > 0 else BLEU_EPSILON
        log_precision += log(precision)
    if hyp_len == 0:
        return 0.0
    brevity = min(1.0, exp(1.0 - ref_len / hyp_len))
    return brevity * exp(log_precision / n)


def _bleu_counts(hyp, references, n):
    matches, totals = [0] * n, [0] * n
    for order in range(1, n + 1):
        hyp_counts = ngrams(hyp, order)
        max_ref = Counter()
        for ref in references:
            for gram, count in ngrams(ref, order).items():
                max_ref[gram] = max(max_ref[gram], count)
        matches[order - 1] = sum(min(count, max_ref[gram]) for gram, count in hyp_counts.items())
        totals[order - 1] = max(len(hyp) - order + 1, 0)
    return matches, totals


def bleu(corpus, n=4, sentence_average=False):
    """
    BLEU-n of a corpus.
    :param corpus: TokenizedCorpus
    :param n: Highest n-gram order, 1..4
    :param sentence_average: Mean of per-sentence BLEU instead of pooled counts
    :return: Score in [0, 1]
    """
    if not 1 <= n <= 4:
        raise ConfigError(f'BLEU order must be in 1..4, got {n}')
    if len(corpus) == 0:
        raise DataError('empty corpus')
    if sentence_average:
        scores = []
        for hyp, references in corpus.entries:
            matches, totals = _bleu_counts(hyp, references, n)
            scores.append(_bleu_from_counts(matches, totals, len(hyp), _closest_ref_length(len(hyp), references), n))
        return float(np.mean(scores))
    matches, totals = [0] * n, [0] * n
    hyp_len = ref_len = 0
    for hyp, references in corpus.entries:
        entry_matches, entry_totals = _bleu_counts(hyp, references, n)
        matches = [a + b for a, b in zip(matches, entry_matches)]
        totals = [a + b for a, b in zip(totals, entry_totals)]
        hyp_len += len(hyp)
        ref_len += _closest_ref_length(len(hyp), references)
    return _bleu_from_counts(matches, totals, hyp_len, ref_len, n)


def empty_hypotheses(corpus):
    """ Ids of cases whose hypothesis has no tokens (they only add reference length to BLEU) """
    return [case_id for case_id, (hyp, _) in zip(corpus.ids, corpus.entries) if not hyp]


def lcs_length(a, b):
    """ Length of the longest common subsequence, dynamic programming """
    if not a or not b:
        return 0
    table = np.zeros((len(a) + 1, len(b) + 1), dtype=np.int64)
    for i, token_a in enumerate(a, start=1):
        for j, token_b in enumerate(b, start=1):
            if token_a == token_b:
                table[i, j] = table[i - 1, j - 1] + 1
            else:
                table[i, j] = max(table[i - 1, j], table[i, j - 1])
    return int(table[-1, -1])


def rouge_l_pair(hyp, ref):
    lcs = lcs_length(hyp, ref)
    if lcs == 0:
        return 0.0
    precision, recall = lcs / len(hyp), lcs / len(ref)
    return 2.0 * precision * recall / (precision + recall)


def rouge_l(corpus):
    if len(corpus) == 0:
        raise DataError('empty corpus')
    return float(np.mean([max(rouge_l_pair(hyp, ref) for ref in references) for hyp, references in corpus.entries]))


def stem(word):
    """ Strip the longest listed suffix that leaves at least three characters """
    for suffix in STEM_SUFFIXES:
        if word.endswith(suffix) and len(word) - len(suffix) >= 3:
            return word[:-len(suffix)]
    return word


def align_unigrams(hyp, ref):
    """
    Greedy one-to-one unigram alignment: exact matches first, then stem matches;
    each hypothesis token takes the earliest free reference position.
    :return: Sorted list of (hyp index, ref index)
    """
    used_hyp, used_ref = set(), set()
    alignment = []
    for key in (lambda token: token, stem):
        ref_keys = [key(token) for token in ref]
        for i, token in enumerate(hyp):
            if i in used_hyp:
                continue
            wanted = key(token)
            for j, ref_key in enumerate(ref_keys):
                if j not in used_ref and ref_key == wanted:
                    alignment.append((i, j))
                    used_hyp.add(i)
                    used_ref.add(j)
                    break
    return sorted(alignment)


def count_chunks(alignment):
    """ Runs of matches adjacent in both hypothesis and reference """
    chunks = 0
    previous = None
    for i, j in alignment:
        if previous is None or i != previous[0] + 1 or j != previous[1] + 1:
            chunks += 1
        previous = (i, j)
    return chunks


def meteor_pair(hyp, ref):
    """
    METEOR-lite of one hypothesis against one reference
    :return: (score, F-mean)
    """
    alignment = align_unigrams(hyp, ref)
    matches = len(alignment)
    if matches == 0:
        return 0.0, 0.0
    precision, recall = matches / len(hyp), matches / len(ref)
    f_mean = 10.0 * precision * recall / (recall + 9.0 * precision)
    penalty = 0.5 * (count_chunks(alignment) / matches) ** 3
    return f_mean * (1.0 - penalty), f_mean


def meteor_lite(corpus):
    if len(corpus) == 0:
        raise DataError('empty corpus')
    return float(np.mean([max(meteor_pair(hyp, ref)[0] for ref in references)
                          for hyp, references in corpus.entries]))


def _tfidf(counts, document_frequency, n_documents):
    """ Raw n-gram counts weighted by log(N / df); n-grams no reference contains weigh zero """
    return {gram: count * log(n_documents / document_frequency[gram]) if document_frequency[gram] else 0.0
            for gram, count in counts.items()}


def _cosine(u, v, clip=False):
    """ Cosine of two sparse vectors; clip bounds each hypothesis weight by the reference weight """
    norm_u = np.sqrt(sum(value * value for value in u.values()))
    norm_v = np.sqrt(sum(value * value for value in v.values()))
    if norm_u == 0.0 or norm_v == 0.0:
        return 0.0
    if clip:
        dot = sum(min(value, v.get(gram, 0.0)) * v.get(gram, 0.0) for gram, value in u.items())
    else:
        dot = sum(value * v.get(gram, 0.0) for gram, value in u.items())
    return dot / (norm_u * norm_v)


def cider(corpus, cider_d=False, sigma=6.0):
    """
    CIDEr of a corpus of at least two cases.
    :param cider_d: Clip hypothesis weights by the reference and apply the Gaussian length penalty
    :param sigma: Width of the length penalty
    :return: Non-negative score
    """
    n_documents = len(corpus)
    if n_documents < 2:
        raise DegenerateCorpusError('CIDEr needs at least two cases to estimate document frequencies; '
                                    'evaluate a larger test corpus or drop CIDEr')
    scores = np.zeros(n_documents)
    for n in range(1, 5):
        document_frequency = Counter()
        for _, references in corpus.entries:
            document_frequency.update(set(gram for ref in references for gram in ngrams(ref, n)))
        for case, (hyp, references) in enumerate(corpus.entries):
            hyp_vector = _tfidf(ngrams(hyp, n), document_frequency, n_documents)
            similarities = []
            for ref in references:
                similarity = _cosine(hyp_vector, _tfidf(ngrams(ref, n), document_frequency, n_documents), cider_d)
                if cider_d:
                    similarity *= exp(-((len(hyp) - len(ref)) ** 2) / (2.0 * sigma ** 2))
                similarities.append(similarity)
            scores[case] += 10.0 * float(np.mean(similarities)) / 4.0
    return float(np.mean(scores))


def evaluate_corpus(corpus, options=None):
    """
    Every metric of the report table for one corpus.
    :return: Dict column -> score, ordered as METRIC_COLUMNS
    """
    options = MetricOptions() if options is None else options
    row = {f'BLEU-{n}': bleu(corpus, n, options.sentence_bleu) for n in range(1, 5)}
    row['METEOR'] = meteor_lite(corpus)
    row['ROUGE-L'] = rouge_l(corpus)
    row['CIDEr'] = cider(corpus, options.cider_d, options.cider_sigma)
    return row


def read_eval_corpus(path):
    """
    Read {id, hypothesis, references[]} records written one per line after the schema line
    :return: TokenizedCorpus
    """
    ids, hypotheses, references = [], [], []
    with open(path, 'r') as in_file:
        try:
            header = json.loads(in_file.readline())
        except json.JSONDecodeError as error:
            raise ValidationError(f'{path}: missing schema line', 1) from error
        if header.get('schema') != EVAL_CORPUS_SCHEMA:
            raise ValidationError(f'{path}: expected schema {EVAL_CORPUS_SCHEMA}', 1)
        for line_number, line in enumerate(in_file, start=2):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                ids.append(str(record['id']))
                hypotheses.append(str(record['hypothesis']))
                refs = [str(ref) for ref in record['references']]
            except (json.JSONDecodeError, KeyError, TypeError) as error:
                raise ValidationError(f'{path}: malformed corpus record', line_number) from error
            if not refs:
                raise ValidationError(f'{path}: record {ids[-1]} has no reference', line_number)
            references.append(refs)
    if not ids:
        raise DataError(f'{path} holds no corpus records')
    return TokenizedCorpus.from_texts(hypotheses, references, ids)


def write_eval_corpus(ids, hypotheses, references, path):
    with open(path, 'w') as out_file:
        out_file.write(json.dumps({'schema': EVAL_CORPUS_SCHEMA}) + '\n')
        for case_id, hyp, refs in zip(ids, hypotheses, references):
            out_file.write(json.dumps({'id': case_id, 'hypothesis': hyp, 'references': list(refs)}, sort_keys=True) + '\n')
