'''
Module      : pipeline_commands
Description : The six ldp commands: prep, train, eval, efficiency, ablate and score.

Each command takes the parsed command line, the resolved PipelineConfig and the
file logger, writes its outputs into the output folder and finishes with a
manifest.json recording config hash, seed, input and output digests and a
metric summary. Library errors propagate to __main__, which maps them to exit codes.
'''

import concurrent.futures
import copy
import os
import tempfile
from dataclasses import replace
from math import ceil, floor

try:
    from LDP.alignment import (PHASES, build_preference_pairs, make_examples, run_phase, win_rate,
                               write_preference_pairs)
    from LDP.check_inputs import BASE_CHECKPOINT, ADAPTER_CHECKPOINT, VOCAB_FILE, check_checkpoint_folder, \
        check_schema
    from LDP.checkpoints import load_model, save_model
    from LDP.clinical_eval import SCORE_SHEET_SCHEMA, multi_rater_kappa, ps_table, rater_ps, read_score_sheet
    from LDP.dataprep import (PAIRS_SCHEMA, SEQUENCES_SCHEMA, SPANS_SCHEMA, fraction_subset, prepare_corpus,
                              read_pairs, read_sequences, stratified_split, synth_corpus, write_ledger, write_pairs,
                              write_sequences)
    from LDP.errors import ArityError, ConfigError, DataError, LdpError, UndefinedKappaError, ValidationError
    from LDP.exit_with_error import exit_with_error
    from LDP.lora_adapters import (LoraConfig, base_model, efficiency_from_totals, efficiency_report, inject,
                                   load_adapters, merge, rank_sweep, save_adapters)
    from LDP.micro_mllm import MicroModel, generate
    from LDP.nlg_metrics import (EVAL_CORPUS_SCHEMA, METRIC_COLUMNS, TokenizedCorpus, evaluate_corpus,
                                 read_eval_corpus, write_eval_corpus)
    from LDP.seed_handling import SeedStreams
    from LDP.tokenizer import Vocabulary, prompt_tokens
    from LDP.wrangle_outputs import RunManifest, file_digest, partition_variants, variant_name, write_manifest
    from LDP.write_output_csv import (write_ablation_table, write_efficiency_table, write_kappa_report,
                                      write_loss_trace, write_metric_table, write_prep_summary, write_ps_table,
                                      write_rater_table)
except ModuleNotFoundError:
    from alignment import (PHASES, build_preference_pairs, make_examples, run_phase, win_rate,
                           write_preference_pairs)
    from check_inputs import BASE_CHECKPOINT, ADAPTER_CHECKPOINT, VOCAB_FILE, check_checkpoint_folder, check_schema
    from checkpoints import load_model, save_model
    from clinical_eval import SCORE_SHEET_SCHEMA, multi_rater_kappa, ps_table, rater_ps, read_score_sheet
    from dataprep import (PAIRS_SCHEMA, SEQUENCES_SCHEMA, SPANS_SCHEMA, fraction_subset, prepare_corpus,
                          read_pairs, read_sequences, stratified_split, synth_corpus, write_ledger, write_pairs,
                          write_sequences)
    from errors import ArityError, ConfigError, DataError, LdpError, UndefinedKappaError, ValidationError
    from exit_with_error import exit_with_error
    from lora_adapters import (LoraConfig, base_model, efficiency_from_totals, efficiency_report, inject,
                               load_adapters, merge, rank_sweep, save_adapters)
    from micro_mllm import MicroModel, generate
    from nlg_metrics import (EVAL_CORPUS_SCHEMA, METRIC_COLUMNS, TokenizedCorpus, evaluate_corpus,
                             read_eval_corpus, write_eval_corpus)
    from seed_handling import SeedStreams
    from tokenizer import Vocabulary, prompt_tokens
    from wrangle_outputs import RunManifest, file_digest, partition_variants, variant_name, write_manifest
    from write_output_csv import (write_ablation_table, write_efficiency_table, write_kappa_report,
                                  write_loss_trace, write_metric_table, write_prep_summary, write_ps_table,
                                  write_rater_table)

ABLATION_COLUMNS = ('BLEU-1', 'BLEU-4', 'METEOR', 'ROUGE-L', 'CIDEr')


def start_run(command, config, file_logger):
    """ Seed streams and an open manifest for one command """
    file_logger.info(f'{command}: seed {config.seed}, config hash {config.config_hash()}')
    return SeedStreams(config.seed), RunManifest(command=command, config_hash=config.config_hash(), seed=config.seed)


def finish_run(manifest, outputs, out_path, file_logger):
    manifest.add_outputs(outputs, out_path)
    return write_manifest(manifest, out_path, file_logger)


def model_config_for(config, streams):
    """ The configured model dimensions with the initialisation seed of this run """
    return replace(config.model, seed=streams.integer('model_init'))


def load_trained(paths, file_logger):
    """
    Rebuild a trained model from the folder written by 'ldp train'.
    :param paths: Dict from check_checkpoint_folder
    :param file_logger: Logger
    :return: (MicroModel with adapters when present, Vocabulary)
    """
    model, _ = load_model(paths['base'])
    if paths['adapter'] is not None:
        load_adapters(model, paths['adapter'])
    vocab = Vocabulary.load(paths['vocab'])
    if len(vocab) > model.config.vocab_size:
        raise ConfigError(f'vocabulary of {len(vocab)} tokens does not fit the model vocabulary of '
                          f'{model.config.vocab_size}')
    file_logger.debug(f'Loaded checkpoint {paths["base"]} (adapters: {paths["adapter"] is not None})')
    return model, vocab


def generate_reports(model, vocab, pairs, options, streams, file_logger):
    """
    Generate one report per image with the configured prompt preset and decoding strategy.
    :param pairs: List of ImageTextPair supplying images and reference reports
    :param options: EvalOptions
    :return: (TokenizedCorpus, list of generated report strings)
    """
    if not pairs:
        raise DataError('no images to generate reports for')
    prompt = prompt_tokens(vocab, options.prompt)
    limit = min(options.max_new, model.config.max_text_len - len(prompt))
    if limit < 1:
        raise ConfigError(f'prompt preset {options.prompt!r} leaves no room for generation')
    seeds = [int(child.generate_state(1)[0] & 0x7FFFFFFF) for child in streams.spawn('generation', len(pairs))]
    progress_num = max(1, ceil(len(pairs) / 10))
    hypotheses = []
    for i, pair in enumerate(pairs):
        tokens = generate(model, pair.patches, prompt, limit, options.strategy, options.top_k, seeds[i],
                          eos_id=vocab.eos_id)
        hypotheses.append(vocab.decode(tokens))
        if (i + 1) % progress_num == 0 or i == 0:
            file_logger.info(f'\tReport number {i + 1} has been generated')
    references = [[pair.report] for pair in pairs]
    return TokenizedCorpus.from_texts(hypotheses, references, [pair.pair_id for pair in pairs]), hypotheses


def split_preference_pairs(pairs, held_out_fraction, rng):
    """ Shuffle and hold out floor(fraction * n) pairs for the win-rate; nothing is held out if that is 0 or all """
    order = rng.permutation(len(pairs))
    n_held = floor(held_out_fraction * len(pairs))
    if n_held == 0 or n_held == len(pairs):
        return list(pairs), []
    held = set(order[:n_held].tolist())
    return ([pair for i, pair in enumerate(pairs) if i not in held],
            [pair for i, pair in enumerate(pairs) if i in held])


def cmd_prep(cmd_args, config, file_logger):
    """
    Keyframe sampling, cleaning, alignment and the stratified split. Without --frames a seeded
    synthetic video corpus of dataprep.corpus_size videos is generated first.
    :return: Manifest path
    """
    streams, manifest = start_run('prep', config, file_logger)
    options = config.dataprep
    out_path = cmd_args.out_path
    outputs = []
    if cmd_args.frames is not None:
        if cmd_args.spans is None:
            raise ConfigError('--frames needs --spans')
        check_schema([cmd_args.frames], SEQUENCES_SCHEMA, file_logger)
        check_schema([cmd_args.spans], SPANS_SCHEMA, file_logger)
        sequences = read_sequences(cmd_args.frames, cmd_args.spans)
        manifest.add_inputs([cmd_args.frames, cmd_args.spans])
    else:
        file_logger.info(f'No input videos given, generating {options.corpus_size} synthetic videos')
        sequences = synth_corpus(options.corpus_size, streams.integer('corpus'), options.frame_rate)
        frames_path, spans_path = os.path.join(out_path, 'frames.jsonl'), os.path.join(out_path, 'spans.jsonl')
        write_sequences(sequences, frames_path, spans_path)
        outputs.extend([frames_path, spans_path])

    pairs, ledger, reasons = prepare_corpus(sequences, options, file_logger, cmd_args.cpu,
                                            config.model.patch_grid, config.model.patch_dim)
    if not pairs:
        raise DataError('no image-text pairs survived keyframe sampling, cleaning and alignment')
    train, test = stratified_split(pairs, file_logger, options.split_ratio, streams.integer('split'),
                                   options.patient_level)

    paths = {name: os.path.join(out_path, f'{name}.jsonl') for name in ('train_pairs', 'test_pairs', 'rejections')}
    write_pairs(train, paths['train_pairs'])
    write_pairs(test, paths['test_pairs'])
    write_ledger(ledger, paths['rejections'])
    summary = {'videos': len(sequences), 'pairs': len(pairs), 'train_pairs': len(train), 'test_pairs': len(test)}
    summary.update({f'rejected_{reason}': count for reason, count in reasons.items()})
    outputs.extend(paths.values())
    outputs.extend(write_prep_summary(summary, out_path))
    file_logger.info(f'{len(pairs)} image-text pairs from {len(sequences)} videos: '
                     f'{len(train)} train, {len(test)} test')
    manifest.metrics = summary
    return finish_run(manifest, outputs, out_path, file_logger)


def cmd_train(cmd_args, config, file_logger):
    """
    Train one phase. SFT starts from a fresh base model with injected adapters (or continues a
    checkpoint); DPO continues the SFT checkpoint given with --checkpoint and uses a frozen copy
    of it as reference; SimPO and ORPO continue a checkpoint when given.
    :return: Manifest path
    """
    phase = cmd_args.phase
    if phase not in PHASES:
        raise ConfigError(f'unknown phase {phase!r}')
    if phase == 'dpo' and cmd_args.checkpoint is None:
        raise ConfigError('DPO needs an SFT checkpoint (--checkpoint) as its reference policy')
    streams, manifest = start_run(f'train:{phase}', config, file_logger)
    out_path = cmd_args.out_path
    check_schema([cmd_args.corpus], PAIRS_SCHEMA, file_logger)
    pairs = read_pairs(cmd_args.corpus, config.model.patch_grid, config.model.patch_dim)
    manifest.add_inputs([cmd_args.corpus])

    checkpoint = None
    if cmd_args.checkpoint is not None:
        checkpoint = check_checkpoint_folder(cmd_args.checkpoint, file_logger)
        model, vocab = load_trained(checkpoint, file_logger)
        manifest.add_inputs([checkpoint['base'], checkpoint['adapter'], checkpoint['vocab']])
    else:
        vocab = Vocabulary.build([pair.report for pair in pairs], max_size=config.model.vocab_size)
        model = inject(MicroModel(model_config_for(config, streams)), config.lora, seed=streams.integer('adapter_init'))
    examples = make_examples(pairs, vocab, prompt_tokens(vocab, config.eval.prompt))
    run = config.train_run(phase)
    file_logger.info(f'{phase.upper()}: {len(examples)} examples, '
                     f'{sum(t.size for t in model.trainable_parameters().values())} trainable values')

    outputs = []
    if phase == 'sft':
        summary = run_phase(run, model, examples, file_logger, streams.generator('batching'))
    else:
        initial = model.snapshot()
        preference_pairs, stats = build_preference_pairs(examples, vocab, file_logger, config.preference.source,
                                                         base_model(initial), config.preference.max_new,
                                                         streams.generator('pairs'))
        if not preference_pairs:
            raise DataError('no preference pairs could be built from the corpus')
        train_pairs, held_out = split_preference_pairs(preference_pairs, config.preference.held_out_fraction,
                                                       streams.generator('split'))
        reference = initial if phase == 'dpo' else None
        if reference is not None:
            run.reference_id = file_digest(checkpoint['adapter'])
        summary = run_phase(run, model, train_pairs, file_logger, streams.generator('batching'), reference, held_out)
        if 'win_rate' not in summary:
            summary['win_rate'] = win_rate(model, initial, held_out if held_out else train_pairs)
        summary.update({f'pairs_{key}': value for key, value in stats.items()})
        summary['held_out_pairs'] = len(held_out)
        pairs_path = os.path.join(out_path, 'preference_pairs.jsonl')
        write_preference_pairs(preference_pairs, pairs_path)
        outputs.append(pairs_path)
        file_logger.info(f'{phase.upper()} win-rate against the starting policy: {summary["win_rate"]:.3f}')

    paths = [os.path.join(out_path, name) for name in (BASE_CHECKPOINT, ADAPTER_CHECKPOINT, VOCAB_FILE)]
    save_model(model, paths[0])
    save_adapters(model, paths[1])
    vocab.save(paths[2])
    outputs.extend(paths)
    outputs.extend(write_loss_trace(run, out_path))
    if cmd_args.merge:
        merged = merge(copy.deepcopy(model))
        merged_path = os.path.join(out_path, 'merged_model.ckpt')
        save_model(merged, merged_path, {'merged_lora': merged.lora_config.to_dict()})
        outputs.append(merged_path)
    manifest.metrics = {'phase': phase, 'reference_id': run.reference_id, **summary}
    return finish_run(manifest, outputs, out_path, file_logger)


def cmd_eval(cmd_args, config, file_logger):
    """
    Score generated reports (or a pre-generated corpus file) with every report metric, plus the
    Physician Score when a score sheet is given.
    :return: Manifest path
    """
    streams, manifest = start_run('eval', config, file_logger)
    out_path = cmd_args.out_path
    outputs = []
    if cmd_args.eval_corpus is not None:
        check_schema([cmd_args.eval_corpus], EVAL_CORPUS_SCHEMA, file_logger)
        corpus = read_eval_corpus(cmd_args.eval_corpus)
        manifest.add_inputs([cmd_args.eval_corpus])
        label = cmd_args.label or os.path.splitext(os.path.basename(cmd_args.eval_corpus))[0]
    else:
        if cmd_args.checkpoint is None or cmd_args.test is None:
            raise ConfigError('eval needs --checkpoint and --test, or --eval_corpus')
        paths = check_checkpoint_folder(cmd_args.checkpoint, file_logger, require_adapter=False)
        check_schema([cmd_args.test], PAIRS_SCHEMA, file_logger)
        model, vocab = load_trained(paths, file_logger)
        test_pairs = read_pairs(cmd_args.test, model.config.patch_grid, model.config.patch_dim)
        manifest.add_inputs([cmd_args.test] + [path for path in paths.values() if path is not None])
        corpus, hypotheses = generate_reports(model, vocab, test_pairs, config.eval, streams, file_logger)
        generated_path = os.path.join(out_path, 'generated_reports.jsonl')
        write_eval_corpus(corpus.ids, hypotheses, [[pair.report] for pair in test_pairs], generated_path)
        outputs.append(generated_path)
        label = cmd_args.label or f'{os.path.basename(os.path.normpath(cmd_args.checkpoint))}:{config.eval.prompt}'

    row = {'model': label, **evaluate_corpus(corpus, config.metrics), 'PS': None}
    if cmd_args.score_sheet is not None:
        check_schema([cmd_args.score_sheet], SCORE_SHEET_SCHEMA, file_logger)
        sheets = read_score_sheet(cmd_args.score_sheet)
        manifest.add_inputs([cmd_args.score_sheet])
        if sheets:
            _, summary = ps_table(sheets, file_logger)
            row['PS'] = summary[config.eval.ps_mode]
        else:
            file_logger.warning(f'Score sheet {cmd_args.score_sheet} holds no scores, PS column is absent')
    outputs.extend(write_metric_table([row], METRIC_COLUMNS, out_path))
    file_logger.info('\t'.join(f'{column} {row[column]:.4f}' for column in METRIC_COLUMNS))
    manifest.metrics = row
    return finish_run(manifest, outputs, out_path, file_logger)


def cmd_efficiency(cmd_args, config, file_logger):
    """
    Trainable-parameter accounting of the configured LoRA setup, per rank with --ranks, and for
    externally given totals with --base_params/--trainable_params.
    :return: Manifest path
    """
    _, manifest = start_run('efficiency', config, file_logger)
    rows = []
    for rank in cmd_args.ranks or [config.lora.rank]:
        lora_config = LoraConfig(rank=rank, targets=config.lora.targets, layers=config.lora.layers,
                                 dropout=config.lora.dropout)
        rows.append({'setting': 'micro', 'rank': rank, **efficiency_report(config.model, lora_config).to_row()})
    if (cmd_args.base_params is None) != (cmd_args.trainable_params is None):
        raise ConfigError('--base_params and --trainable_params must be given together')
    if cmd_args.base_params is not None:
        report = efficiency_from_totals(int(round(cmd_args.base_params)), int(round(cmd_args.trainable_params)))
        rows.append({'setting': 'external', 'rank': None, **report.to_row()})
    for row in rows:
        file_logger.info(f'{row["setting"]} (rank {row["rank"] if row["rank"] is not None else "-"}): '
                         f'{row["trainable_params"]} trainable of {row["base_params"]} parameters '
                         f'({row["trainable_percent"]}%), {row["reduction_factor"]}x reduction')
    outputs = list(write_efficiency_table(rows, cmd_args.out_path))
    manifest.metrics = {'rows': rows}
    return finish_run(manifest, outputs, cmd_args.out_path, file_logger)


def _ablation_variants(cmd_args):
    given = [(name, values) for name, values in (('ranks', cmd_args.ranks), ('phases', cmd_args.phases),
                                                 ('fractions', cmd_args.fractions)) if values]
    if len(given) != 1:
        raise ConfigError('ablate needs exactly one of --ranks, --phases or --fractions')
    kind, values = given[0]
    if len(values) < 2:
        raise ArityError(f'an ablation needs at least 2 variants, got {len(values)}')
    return kind, list(values)


def cmd_ablate(cmd_args, config, file_logger):
    """
    Train and score several variants with a shared seed and corpus: LoRA ranks, training phases
    after a shared SFT run, or stratified fractions of the training split. Variants run on
    -c/--cpu threads, each writing into its own working folder.
    :return: Manifest path
    """
    kind, values = _ablation_variants(cmd_args)
    streams, manifest = start_run(f'ablate:{kind}', config, file_logger)
    out_path = cmd_args.out_path
    check_schema([cmd_args.corpus], PAIRS_SCHEMA, file_logger)
    check_schema([cmd_args.test], PAIRS_SCHEMA, file_logger)
    grid, patch_dim = config.model.patch_grid, config.model.patch_dim
    train_pairs = read_pairs(cmd_args.corpus, grid, patch_dim)
    test_pairs = read_pairs(cmd_args.test, grid, patch_dim)
    manifest.add_inputs([cmd_args.corpus, cmd_args.test])

    vocab = Vocabulary.build([pair.report for pair in train_pairs], max_size=config.model.vocab_size)
    prompt = prompt_tokens(vocab, config.eval.prompt)
    model_config = model_config_for(config, streams)
    work_folder = tempfile.mkdtemp(prefix='.ablate_', dir=out_path)

    def fit_sft(model, examples):
        run_phase(config.train_run('sft'), model, examples, file_logger, streams.generator('batching'))
        return model

    def score(model, label):
        save_adapters(model, os.path.join(_working(work_folder, label), ADAPTER_CHECKPOINT))
        corpus, _ = generate_reports(model, vocab, test_pairs, config.eval, streams, file_logger)
        metrics = evaluate_corpus(corpus, config.metrics)
        return {column: metrics[column] for column in ABLATION_COLUMNS}

    try:
        if kind == 'ranks':
            def fit_rank(model, examples):
                return score(fit_sft(model, examples), f'r={model.lora_config.rank}')

            sweep = rank_sweep(lambda: MicroModel(model_config), make_examples(train_pairs, vocab, prompt),
                               [int(rank) for rank in values], config.lora, fit_rank, file_logger, cmd_args.cpu)
            rows = [{'variant': f'r={row.pop("rank")}', **row} for row in sweep]
        elif kind == 'phases':
            rows = _phase_variants(values, train_pairs, vocab, prompt, model_config, config, streams, file_logger,
                                   fit_sft, score, cmd_args.cpu)
        else:
            rows = _fraction_variants(values, train_pairs, vocab, prompt, model_config, config, streams,
                                      file_logger, fit_sft, score, cmd_args.cpu)
    except LdpError as error:
        exit_with_error(f'ablation variant failed: {error}', error.exit_status, work_folder)

    outputs = partition_variants(work_folder, out_path, file_logger)
    outputs.extend(write_ablation_table(rows, ABLATION_COLUMNS, out_path))
    manifest.metrics = {'variants': [row['variant'] for row in rows]}
    return finish_run(manifest, outputs, out_path, file_logger)


def _working(work_folder, label):
    folder = os.path.join(work_folder, variant_name(label))
    os.makedirs(folder, exist_ok=True)
    return folder


def _trainable_count(model):
    return sum(tensor.size for tensor in model.adapter_parameters().values())


def _run_variants(jobs, cpu, file_logger):
    """ Run (label, callable) jobs on a thread pool; rows come back in job order """
    rows = [None] * len(jobs)
    progress_num = max(1, ceil(len(jobs) / 10))
    done = 0
    with concurrent.futures.ThreadPoolExecutor(max_workers=cpu) as executor:
        futures = {executor.submit(job): i for i, (_, job) in enumerate(jobs)}
        for f in concurrent.futures.as_completed(futures):
            rows[futures[f]] = f.result()
            done += 1
            if done % progress_num == 0 or done == 1:
                file_logger.info(f'\tVariant number {done} of {len(jobs)} has been processed')
    return rows


def _phase_variants(phases, train_pairs, vocab, prompt, model_config, config, streams, file_logger, fit_sft, score,
                    cpu):
    unknown = [phase for phase in phases if phase not in PHASES]
    if unknown:
        raise ConfigError(f'unknown phase(s) {unknown}')
    examples = make_examples(train_pairs, vocab, prompt)
    sft_model = fit_sft(inject(MicroModel(model_config), config.lora, seed=streams.integer('adapter_init')), examples)
    reference = sft_model.snapshot()
    needs_pairs = any(phase != 'sft' for phase in phases)
    if needs_pairs:
        preference_pairs, _ = build_preference_pairs(examples, vocab, file_logger, config.preference.source,
                                                     base_model(reference), config.preference.max_new,
                                                     streams.generator('pairs'))
        if not preference_pairs:
            raise DataError('no preference pairs could be built from the corpus')
        pair_train, held_out = split_preference_pairs(preference_pairs, config.preference.held_out_fraction,
                                                      streams.generator('split'))

    def variant(phase):
        if phase == 'sft':
            return {'variant': 'sft', 'trainable_params': _trainable_count(sft_model), **score(sft_model, 'sft')}
        policy = copy.deepcopy(sft_model)
        run_phase(config.train_run(phase), policy, pair_train, file_logger, streams.generator('batching'),
                  reference if phase == 'dpo' else None, held_out)
        label = f'sft+{phase}'
        return {'variant': label, 'trainable_params': _trainable_count(policy), **score(policy, label)}

    return _run_variants([(phase, lambda phase=phase: variant(phase)) for phase in phases], cpu, file_logger)


def _fraction_variants(fractions, train_pairs, vocab, prompt, model_config, config, streams, file_logger, fit_sft,
                       score, cpu):
    def variant(fraction):
        subset = fraction_subset(train_pairs, fraction, streams.integer('split'))
        model = inject(MicroModel(model_config), config.lora, seed=streams.integer('adapter_init'))
        fit_sft(model, make_examples(subset, vocab, prompt))
        label = f'fraction={fraction:g}'
        return {'variant': label, 'trainable_params': _trainable_count(model), **score(model, label)}

    return _run_variants([(fraction, lambda fraction=fraction: variant(fraction)) for fraction in fractions],
                         cpu, file_logger)


def cmd_score(cmd_args, config, file_logger):
    """
    Physician Score table from an expert score sheet: per-rater PS, group averages, mean and trimmed
    aggregates, and multi-rater kappa with a bootstrap interval when the sheet supports it.
    :return: Manifest path
    """
    streams, manifest = start_run('score', config, file_logger)
    out_path = cmd_args.out_path
    check_schema([cmd_args.score_sheet], SCORE_SHEET_SCHEMA, file_logger)
    sheets = read_score_sheet(cmd_args.score_sheet)
    manifest.add_inputs([cmd_args.score_sheet])
    if not sheets:
        raise DataError(f'score sheet {cmd_args.score_sheet} holds no scores')
    mode = cmd_args.mode or config.eval.ps_mode

    rows, summary = ps_table(sheets, file_logger)
    if summary[mode] is None:
        raise ArityError(f'{mode} PS needs at least 3 evaluators, the sheet has {len(rows)}')
    outputs = list(write_rater_table(rater_ps(sheets), out_path))
    outputs.extend(write_ps_table(rows, summary, out_path))
    metrics = {'ps': summary[mode], 'mode': mode, 'ps_mean': summary['mean'], 'ps_trimmed': summary['trimmed']}
    try:
        kappa = multi_rater_kappa(sheets, file_logger, config.eval.kappa_method,
                                  n_resamples=config.eval.bootstrap_resamples, seed=streams.integer('bootstrap'),
                                  cpu=cmd_args.cpu)
        outputs.extend(write_kappa_report(kappa, out_path))
        metrics.update({'kappa': kappa.kappa, 'kappa_ci': [kappa.ci_low, kappa.ci_high]})
        file_logger.info(f'{kappa.method} kappa {kappa.kappa:.4f} (95% CI {kappa.ci_low:.4f} to {kappa.ci_high:.4f})')
    except (ArityError, UndefinedKappaError, ValidationError) as error:
        file_logger.warning(f'Inter-rater agreement is not reported: {error}')
    file_logger.info(f'Physician Score ({mode}): {summary[mode]:.4f}')
    manifest.metrics = metrics
    return finish_run(manifest, outputs, out_path, file_logger)


COMMANDS = {'prep': cmd_prep, 'train': cmd_train, 'eval': cmd_eval, 'efficiency': cmd_efficiency,
            'ablate': cmd_ablate, 'score': cmd_score}
