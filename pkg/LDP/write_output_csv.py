import csv
import json
import os

METRICS_SCHEMA = 'ldp.metrics/1'
EFFICIENCY_SCHEMA = 'ldp.efficiency/1'
ABLATION_SCHEMA = 'ldp.ablation/1'
LOSS_TRACE_SCHEMA = 'ldp.loss_trace/1'
PS_TABLE_SCHEMA = 'ldp.ps_table/1'
RATER_PS_SCHEMA = 'ldp.rater_ps/1'
KAPPA_SCHEMA = 'ldp.kappa/1'
PREP_SUMMARY_SCHEMA = 'ldp.prep_summary/1'
MISSING_VALUE = 'NA'


def format_value(value):
    """ Table cell text: floats with 6 decimals, None as NA """
    if value is None:
        return MISSING_VALUE
    if isinstance(value, float):
        return f'{value:.6f}'
    return value


def write_table(rows, header, schema, path):
    """
    Function to write a tab separated table, with a schema line first, and its JSON mirror next to it
    :param rows: List of dicts keyed by the header columns
    :param header: Column names in output order
    :param schema: Schema id written as '# schema=<id>' and into the mirror
    :param path: Output path of the table; the mirror gets the same name with a .json extension
    :return: (table path, mirror path)
    """
    with open(path, 'w', newline='') as out_file:
        out_file.write(f'# schema={schema}\n')
        writer = csv.DictWriter(out_file, fieldnames=header, delimiter='\t', lineterminator='\n')

        writer.writeheader()

        for row in rows:
            writer.writerow({column: format_value(row.get(column)) for column in header})

    mirror_path = os.path.splitext(path)[0] + '.json'
    with open(mirror_path, 'w') as out_file:
        json.dump({'schema': schema, 'columns': list(header),
                   'rows': [{column: row.get(column) for column in header} for row in rows]},
                  out_file, indent=1, sort_keys=True)
        out_file.write('\n')
    return path, mirror_path


def write_metric_table(rows, metric_columns, out_path):
    """
    Function to write the report-quality table, one row per evaluated model or prompt setting
    :param rows: Dicts with 'model', one value per metric column and 'PS' (None when no score sheet was given)
    :param metric_columns: Metric column names in output order
    :param out_path: Output folder
    :return: Paths written
    """
    header = ['model'] + list(metric_columns) + ['PS']
    return write_table(rows, header, METRICS_SCHEMA, os.path.join(out_path, 'metrics.tsv'))


def write_efficiency_table(rows, out_path):
    header = ['setting', 'rank', 'trainable_params', 'base_params', 'trainable_percent', 'reduction_factor',
              'lora_optimizer_state_bytes', 'full_optimizer_state_bytes']
    return write_table(rows, header, EFFICIENCY_SCHEMA, os.path.join(out_path, 'efficiency.tsv'))


def write_ablation_table(rows, metric_columns, out_path):
    """
    Function to write the ablation table, one row per variant, ready for plotting
    :param rows: Dicts with 'variant', 'trainable_params' and metric values
    :param metric_columns: Metric columns to include
    :param out_path: Output folder
    :return: Paths written
    """
    header = ['variant', 'trainable_params'] + list(metric_columns)
    return write_table(rows, header, ABLATION_SCHEMA, os.path.join(out_path, 'ablation.tsv'))


def write_loss_trace(run, out_path):
    rows = [{'phase': run.phase, 'epoch': epoch, 'step': step, 'loss': loss} for epoch, step, loss in run.loss_trace]
    return write_table(rows, ['phase', 'epoch', 'step', 'loss'], LOSS_TRACE_SCHEMA,
                       os.path.join(out_path, 'loss_trace.tsv'))


def write_ps_table(rows, summary, out_path):
    """
    Function to write the evaluator-level Physician Score table with the two aggregate rows last
    :param rows: Dicts with 'evaluator', 'raters', 'ps' and 'note'
    :param summary: Dict with 'mean' and 'trimmed' aggregates (trimmed may be None)
    :param out_path: Output folder
    :return: Paths written
    """
    table = list(rows)
    table.append({'evaluator': 'Average', 'raters': sum(row['raters'] for row in rows), 'ps': summary['mean'],
                  'note': 'mean over evaluators'})
    table.append({'evaluator': 'Trimmed average', 'raters': None, 'ps': summary['trimmed'],
                  'note': 'highest and lowest evaluator discarded'})
    return write_table(table, ['evaluator', 'raters', 'ps', 'note'], PS_TABLE_SCHEMA,
                       os.path.join(out_path, 'ps_table.tsv'))


def write_kappa_report(result, out_path):
    row = {'method': result.method, 'kappa': result.kappa, 'ci_low': result.ci_low, 'ci_high': result.ci_high,
           'n_cases': result.n_cases, 'n_raters': result.n_raters, 'resamples': result.resamples,
           'skipped_resamples': result.skipped_resamples}
    return write_table([row], list(row), KAPPA_SCHEMA, os.path.join(out_path, 'kappa.tsv'))


def write_prep_summary(summary, out_path):
    rows = [{'item': key, 'count': value} for key, value in summary.items()]
    return write_table(rows, ['item', 'count'], PREP_SUMMARY_SCHEMA, os.path.join(out_path, 'prep_summary.tsv'))


def write_rater_table(rows, out_path):
    return write_table(rows, ['rater', 'group', 'cases', 'ps'], RATER_PS_SCHEMA, os.path.join(out_path, 'rater_ps.tsv'))
