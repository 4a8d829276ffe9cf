'''
Module      : clinical_eval
Description : Physician Score rubric, score aggregation and inter-rater agreement.

Physician Score (PS) = 0.4 clinical accuracy + 0.3 factual completeness
                     + 0.2 terminology + 0.1 clinical usability, every score in [1, 10].
Kappa statistics need categories, so PS values are binned as 1-2, 3-4, 5-6, 7-8, 9-10
(category = min(4, floor((PS - 1) / bin_width))).
'''

import concurrent.futures
import csv
from collections import defaultdict
from dataclasses import dataclass, fields
from itertools import combinations
from math import floor

import numpy as np

try:
    from LDP.errors import ArityError, ConfigError, DataError, UndefinedKappaError, ValidationError
except ModuleNotFoundError:
    from errors import ArityError, ConfigError, DataError, UndefinedKappaError, ValidationError

DIMENSIONS = ('clinical_accuracy', 'factual_completeness', 'terminology', 'clinical_usability')
SCORE_SHEET_SCHEMA = 'ldp.score_sheet/1'
SCORE_SHEET_COLUMNS = ('rater', 'group', 'case') + DIMENSIONS
KAPPA_METHODS = ('fleiss', 'mean_pairwise_cohen')
BOOTSTRAP_SHARD_SIZE = 250


@dataclass
class ScoreSheet:
    rater_id: str
    case_id: str
    scores: tuple
    group: str = ''

    def __post_init__(self):
        self.scores = tuple(float(score) for score in self.scores)
        if len(self.scores) != len(DIMENSIONS):
            raise ValidationError(f'rater {self.rater_id}, case {self.case_id}: expected {len(DIMENSIONS)} scores')
        for name, score in zip(DIMENSIONS, self.scores):
            if not 1.0 <= score <= 10.0:
                raise ValidationError(f'rater {self.rater_id}, case {self.case_id}: {name} score {score} outside [1, 10]')


@dataclass
class RubricWeights:
    clinical_accuracy: float = 0.4
    factual_completeness: float = 0.3
    terminology: float = 0.2
    clinical_usability: float = 0.1

    def __post_init__(self):
        values = self.as_array()
        if np.any(values < 0):
            raise ConfigError('rubric weights must be non-negative')
        if abs(values.sum() - 1.0) > 1e-12:
            raise ConfigError(f'rubric weights must sum to 1, got {values.sum()}')

    def as_array(self):
        return np.array([getattr(self, item.name) for item in fields(self)], dtype=np.float64)


def weighted_ps(sheet, weights=None):
    """ Dot product of the four dimension scores with the rubric weights """
    weights = RubricWeights() if weights is None else weights
    return float(np.dot(np.array(sheet.scores), weights.as_array()))


def aggregate_ps(scores, mode='mean'):
    """
    Combine PS values.
    :param scores: List of PS values
    :param mode: 'mean' or 'trimmed' (drops one highest and one lowest value)
    :return: Aggregate PS
    """
    scores = [float(score) for score in scores]
    if mode == 'mean':
        if not scores:
            raise ArityError('mean of no scores')
        return sum(scores) / len(scores)
    if mode == 'trimmed':
        if len(scores) < 3:
            raise ArityError(f'trimmed mean needs at least 3 scores, got {len(scores)}')
        kept = sorted(scores)[1:-1]
        return sum(kept) / len(kept)
    raise ConfigError(f'unknown aggregation mode {mode!r}')


def bin_ps(ps, bin_width=2.0, n_bins=5):
    """ Ordinal category of a PS value """
    return min(n_bins - 1, int(floor((ps - 1.0) / bin_width)))


def cohen_kappa(ratings_a, ratings_b):
    """
    Cohen's kappa of two raters.
    :param ratings_a: Categorical ratings of rater A
    :param ratings_b: Ratings of rater B on the same items
    :return: (p_o - p_e) / (1 - p_e)
    """
    if len(ratings_a) != len(ratings_b):
        raise DataError('rating sequences differ in length')
    if len(ratings_a) < 2:
        raise ArityError('kappa needs at least two rated items')
    a, b = np.asarray(ratings_a), np.asarray(ratings_b)
    observed = float(np.mean(a == b))
    categories = sorted(set(a.tolist()) | set(b.tolist()))
    expected = float(sum(np.mean(a == c) * np.mean(b == c) for c in categories))
    if expected >= 1.0:
        raise UndefinedKappaError('chance agreement is 1 (every rating in one category)')
    return (observed - expected) / (1.0 - expected)


def fleiss_kappa(counts):
    """
    Fleiss' kappa from an items x categories matrix of rating counts (equal raters per item).
    :return: (P_bar - P_e) / (1 - P_e)
    """
    counts = np.asarray(counts, dtype=np.float64)
    if counts.ndim != 2 or counts.shape[0] < 1:
        raise DataError('Fleiss kappa needs an items x categories count matrix')
    per_item = counts.sum(axis=1)
    if np.any(per_item != per_item[0]) or per_item[0] < 2:
        raise DataError('every item needs the same number (>= 2) of ratings')
    n = per_item[0]
    agreement = ((counts * counts).sum(axis=1) - n) / (n * (n - 1.0))
    proportions = counts.sum(axis=0) / counts.sum()
    expected = float(np.dot(proportions, proportions))
    if expected >= 1.0:
        raise UndefinedKappaError('chance agreement is 1 (every rating in one category)')
    return (float(agreement.mean()) - expected) / (1.0 - expected)


def rating_counts(matrix, n_categories):
    """ cases x raters category matrix -> cases x categories count matrix """
    matrix = np.asarray(matrix, dtype=np.int64)
    return np.stack([np.bincount(row, minlength=n_categories) for row in matrix])


def mean_pairwise_cohen(matrix):
    matrix = np.asarray(matrix)
    return float(np.mean([cohen_kappa(matrix[:, i], matrix[:, j])
                          for i, j in combinations(range(matrix.shape[1]), 2)]))


def _kappa_of(matrix, method, n_categories):
    if method == 'fleiss':
        return fleiss_kappa(rating_counts(matrix, n_categories))
    return mean_pairwise_cohen(matrix)


@dataclass
class KappaResult:
    method: str
    kappa: float
    ci_low: float
    ci_high: float
    n_cases: int
    n_raters: int
    resamples: int
    skipped_resamples: int


def rating_matrix(sheets, weights=None, bin_width=2.0):
    """
    Binned PS per case and rater.
    :return: (cases x raters category matrix, case ids, rater ids)
    """
    by_key = {}
    for sheet in sheets:
        key = (sheet.case_id, sheet.rater_id)
        if key in by_key:
            raise ValidationError(f'rater {sheet.rater_id} scored case {sheet.case_id} twice')
        by_key[key] = bin_ps(weighted_ps(sheet, weights), bin_width)
    cases = sorted({case for case, _ in by_key})
    raters = sorted({rater for _, rater in by_key})
    missing = [(case, rater) for case in cases for rater in raters if (case, rater) not in by_key]
    if missing:
        raise ValidationError(f'incomplete score sheet: rater {missing[0][1]} did not score case {missing[0][0]}')
    return np.array([[by_key[(case, rater)] for rater in raters] for case in cases]), cases, raters


def _bootstrap_shard(matrix, method, n_categories, n_resamples, seed_sequence):
    rng = np.random.default_rng(seed_sequence)
    estimates, skipped = [], 0
    n_cases = matrix.shape[0]
    for _ in range(n_resamples):
        sample = matrix[rng.integers(n_cases, size=n_cases)]
        try:
            estimates.append(_kappa_of(sample, method, n_categories))
        except UndefinedKappaError:
            skipped += 1
    return estimates, skipped


def multi_rater_kappa(sheets, file_logger, method=None, weights=None, n_resamples=2000, seed=0, cpu=1,
                      bin_width=2.0, n_categories=5):
    """
    Agreement of three or more raters over binned PS, with a case-level bootstrap 95% interval.
    Resamples are drawn in fixed shards of BOOTSTRAP_SHARD_SIZE, each with its own spawned seed, so the
    interval does not depend on cpu.
    :param sheets: List of ScoreSheet covering every (case, rater) combination
    :param file_logger: Logger
    :param method: 'fleiss' (default) or 'mean_pairwise_cohen'
    :param n_resamples: Bootstrap resamples
    :param seed: Bootstrap seed
    :param cpu: Shards computed at the same time
    :return: KappaResult
    """
    method = 'fleiss' if method is None else method
    if method not in KAPPA_METHODS:
        raise ConfigError(f'unknown kappa method {method!r}, expected one of {", ".join(KAPPA_METHODS)}')
    matrix, cases, raters = rating_matrix(sheets, weights, bin_width)
    if len(raters) < 3 or len(cases) < 2:
        raise ArityError(f'multi-rater kappa needs >= 3 raters and >= 2 cases, got {len(raters)} and {len(cases)}')
    if method == 'mean_pairwise_cohen':
        file_logger.info(f"Cohen's kappa is a two-rater statistic; reporting its mean over "
                         f"{len(raters) * (len(raters) - 1) // 2} rater pairs of {len(raters)} raters")
    point = _kappa_of(matrix, method, n_categories)

    shard_sizes = [BOOTSTRAP_SHARD_SIZE] * (n_resamples // BOOTSTRAP_SHARD_SIZE)
    if n_resamples % BOOTSTRAP_SHARD_SIZE:
        shard_sizes.append(n_resamples % BOOTSTRAP_SHARD_SIZE)
    children = np.random.SeedSequence(seed).spawn(len(shard_sizes))
    with concurrent.futures.ThreadPoolExecutor(max_workers=cpu) as executor:
        results = [executor.submit(_bootstrap_shard, matrix, method, n_categories, size, child)
                   for size, child in zip(shard_sizes, children)]
        shards = [f.result() for f in results]
    estimates = [value for shard, _ in shards for value in shard]
    skipped = sum(count for _, count in shards)
    if skipped:
        file_logger.warning(f'{skipped} of {n_resamples} bootstrap resamples had undefined kappa and were skipped')
    if not estimates:
        raise UndefinedKappaError('kappa is undefined on every bootstrap resample')
    low, high = np.percentile(estimates, [2.5, 97.5])
    return KappaResult(method=method, kappa=point, ci_low=float(low), ci_high=float(high), n_cases=len(cases),
                       n_raters=len(raters), resamples=len(estimates), skipped_resamples=skipped)


def read_score_sheet(path):
    """
    Read a tab-separated score sheet: schema line, header row, one row per (rater, group, case, 4 scores)
    :param path: File path
    :return: List of ScoreSheet
    """
    sheets = []
    with open(path, 'r', newline='') as in_file:
        first = in_file.readline().strip()
        if first != f'# schema={SCORE_SHEET_SCHEMA}':
            raise ValidationError(f'{path}: first line must be "# schema={SCORE_SHEET_SCHEMA}"', 1)
        reader = csv.DictReader(in_file, delimiter='\t')
        if reader.fieldnames is None or tuple(reader.fieldnames) != SCORE_SHEET_COLUMNS:
            raise ValidationError(f'{path}: header must be {", ".join(SCORE_SHEET_COLUMNS)}', 2)
        for line_number, row in enumerate(reader, start=3):
            if None in row or any(row[column] is None for column in SCORE_SHEET_COLUMNS):
                raise ValidationError(f'{path}: expected {len(SCORE_SHEET_COLUMNS)} columns', line_number)
            try:
                scores = [float(row[name]) for name in DIMENSIONS]
            except ValueError as error:
                raise ValidationError(f'{path}: non-numeric score', line_number) from error
            if not row['rater'] or not row['case']:
                raise ValidationError(f'{path}: rater and case must be given', line_number)
            try:
                sheets.append(ScoreSheet(rater_id=row['rater'], case_id=row['case'], scores=scores,
                                         group=row['group'] or ''))
            except ValidationError as error:
                raise ValidationError(f'{path}: {error}', line_number) from error
    return sheets


def rater_ps(sheets, weights=None):
    """
    Each rater's PS, the mean over the cases they scored.
    :return: Rows [{'rater', 'group', 'cases', 'ps'}] sorted by rater
    """
    per_rater = defaultdict(list)
    rater_group = {}
    for sheet in sheets:
        per_rater[sheet.rater_id].append(weighted_ps(sheet, weights))
        if rater_group.setdefault(sheet.rater_id, sheet.group) != sheet.group:
            raise ValidationError(f'rater {sheet.rater_id} appears in groups {rater_group[sheet.rater_id]!r} '
                                  f'and {sheet.group!r}')
    return [{'rater': rater, 'group': rater_group[rater], 'cases': len(per_rater[rater]),
             'ps': aggregate_ps(per_rater[rater])} for rater in sorted(per_rater)]


def ps_table(sheets, file_logger, weights=None):
    """
    Evaluator-level PS table: raters sharing a group are averaged into one evaluator entry,
    ungrouped raters are entries of their own.
    :return: (rows [{'evaluator', 'raters', 'ps', 'note'}], {'mean', 'trimmed'})
    """
    if not sheets:
        raise DataError('score sheet is empty')
    entries = defaultdict(list)
    for row in rater_ps(sheets, weights):
        entries[row['group'] if row['group'] else row['rater']].append(row['ps'])
    rows = []
    for evaluator in sorted(entries):
        values = entries[evaluator]
        note = f'average from {len(values)} individual expert evaluations' if len(values) > 1 else ''
        rows.append({'evaluator': evaluator, 'raters': len(values), 'ps': aggregate_ps(values), 'note': note})
    values = [row['ps'] for row in rows]
    summary = {'mean': aggregate_ps(values), 'trimmed': None}
    if len(values) >= 3:
        summary['trimmed'] = aggregate_ps(values, 'trimmed')
    else:
        file_logger.warning('Fewer than 3 evaluators, trimmed PS is not reported')
    return rows, summary
