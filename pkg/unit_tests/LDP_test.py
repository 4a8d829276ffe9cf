'''
Unit tests for LDP: input checks, seeding, output tables, run manifests, the command line and the commands.

Usage: python -m unittest -v LDP_test
'''

import argparse
import json
import logging
import os
import shutil
import tempfile
import unittest
from contextlib import redirect_stderr, redirect_stdout
from io import StringIO

import numpy as np

from LDP import check_depencies
from LDP import check_inputs
from LDP import commandline_interface
from LDP import exit_with_error
from LDP import pipeline_commands
from LDP import seed_handling
from LDP import wrangle_outputs
from LDP import write_output_csv
from LDP.checkpoints import read_container
from LDP.clinical_eval import KappaResult
from LDP.errors import ArityError, ConfigError, EXIT_CONFIG_ERROR, EXIT_DATA_ERROR
from LDP.pipeline_config import PipelineConfig, config_from_dict

TEST_DATA = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'unit_test_data')
SCORE_SHEET = os.path.join(TEST_DATA, 'TestScoreSheetFile', 'five_evaluators.tsv')

# Small enough to train and generate with in a unit test
SMALL_RUN = {'seed': 5,
             'model': {'d_model': 16, 'n_heads': 2, 'n_enc_layers': 1, 'n_dec_layers': 1, 'vocab_size': 300,
                       'patch_grid': [2, 2], 'patch_dim': 8, 'adapter_queries': 2},
             'lora': {'rank': 2},
             'train': {'sft': {'lr': 0.01, 'batch_size': 8}, 'dpo': {'lr': 0.001, 'batch_size': 8}},
             'preference': {'max_new': 8},
             'eval': {'prompt': 'minimal', 'max_new': 12, 'bootstrap_resamples': 100},
             'dataprep': {'corpus_size': 6}}


def parse(*args):
    return commandline_interface.get_commandline_arguments(list(args), 'test')


def read_json(path):
    with open(path, 'r') as in_file:
        return json.load(in_file)


class TestExitWithError(unittest.TestCase):
    def test_exit_w_tmp_folder_deletion(self):
        ''' Test the exit function is able to remove the temporary folder '''
        tmp_folder = tempfile.mkdtemp()
        with open(os.path.join(tmp_folder, 'partial.tsv'), 'w') as out_file:
            out_file.write('x\n')

        with self.assertRaises(SystemExit) as context, redirect_stderr(StringIO()) as stderr:
            exit_with_error.exit_with_error(exit_status=4, message='test msg', tmp_folder=tmp_folder)

        self.assertEqual(context.exception.code, 4)
        self.assertFalse(os.path.exists(tmp_folder))
        self.assertTrue(stderr.getvalue().endswith('LDP ERROR: test msg, exiting\n'))


class TestDependencies(unittest.TestCase):
    def test_version_tuples(self):
        self.assertEqual(check_depencies.version_tuple('1.26.4'), (1, 26, 4))
        self.assertEqual(check_depencies.version_tuple('2.0.0rc1'), (2, 0, 0))
        self.assertEqual(check_depencies.version_tuple('6.0.1+local'), (6, 0, 1))

    def test_installed_versions_are_reported(self):
        versions = check_depencies.check_dependencies_for_main()

        self.assertEqual(len(versions), 2)


class TestInputChecks(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.logger = logging.getLogger('test_logger.log')
        cls.logger.setLevel(logging.INFO)

    def setUp(self):
        self.folder = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.folder)

    def assert_exit(self, status, function, *args):
        with self.assertRaises(SystemExit) as context, redirect_stderr(StringIO()):
            function(*args)
        self.assertEqual(context.exception.code, status)

    def test_missing_and_empty_files(self):
        empty = os.path.join(self.folder, 'empty.jsonl')
        open(empty, 'w').close()

        self.assert_exit(EXIT_DATA_ERROR, check_inputs.check_if_exists, [os.path.join(self.folder, 'none')],
                         self.logger)
        self.assert_exit(EXIT_DATA_ERROR, check_inputs.check_if_exists, [empty], self.logger)
        check_inputs.check_if_exists([SCORE_SHEET], self.logger)

    def test_schema_recognition(self):
        frames = os.path.join(TEST_DATA, 'TestSequenceFiles', 'frames.jsonl')

        self.assertEqual(check_inputs.read_schema_id(SCORE_SHEET), 'ldp.score_sheet/1')
        self.assertEqual(check_inputs.read_schema_id(frames), 'ldp.frame_sequences/1')
        check_inputs.check_schema([frames], 'ldp.frame_sequences/1', self.logger)
        self.assert_exit(EXIT_DATA_ERROR, check_inputs.check_schema, [frames], 'ldp.image_text_pairs/1', self.logger)

    def test_checkpoint_folder(self):
        self.assert_exit(EXIT_CONFIG_ERROR, check_inputs.check_checkpoint_folder,
                         os.path.join(self.folder, 'missing'), self.logger)
        for name in (check_inputs.BASE_CHECKPOINT, check_inputs.VOCAB_FILE):
            with open(os.path.join(self.folder, name), 'w') as out_file:
                out_file.write('{}\n')

        self.assert_exit(EXIT_CONFIG_ERROR, check_inputs.check_checkpoint_folder, self.folder, self.logger)
        paths = check_inputs.check_checkpoint_folder(self.folder, self.logger, require_adapter=False)
        self.assertIsNone(paths['adapter'])
        self.assertEqual(paths['vocab'], os.path.join(self.folder, check_inputs.VOCAB_FILE))


class TestSeedHandling(unittest.TestCase):
    def test_parse_seed(self):
        self.assertEqual(seed_handling.parse_seed('12'), 12)
        self.assertEqual(seed_handling.parse_seed(str(2 ** 64 - 1)), 2 ** 64 - 1)
        for value in ('x', '-1', str(2 ** 64)):
            with self.assertRaises(argparse.ArgumentTypeError):
                seed_handling.parse_seed(value)

    def test_streams_are_reproducible_and_independent(self):
        first, second = seed_handling.SeedStreams(3), seed_handling.SeedStreams(3)

        self.assertEqual(first.describe(), second.describe())
        self.assertEqual(len(set(first.describe().values())), len(seed_handling.STREAMS))
        np.testing.assert_array_equal(first.generator('split').random(5), second.generator('split').random(5))
        self.assertNotEqual(first.integer('model_init'), seed_handling.SeedStreams(4).integer('model_init'))
        with self.assertRaises(KeyError):
            first.integer('dropout')

    def test_spawn_does_not_advance_the_stream(self):
        streams = seed_handling.SeedStreams(8)
        once = [child.generate_state(1)[0] for child in streams.spawn('generation', 3)]
        again = [child.generate_state(1)[0] for child in streams.spawn('generation', 3)]

        self.assertEqual(once, again)
        self.assertEqual(streams.spawn('generation', 0), [])


class TestOutputTables(unittest.TestCase):
    def setUp(self):
        self.folder = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.folder)

    def test_table_and_mirror(self):
        rows = [{'item': 'pairs', 'count': 0.5}, {'item': 'rejected', 'count': None}]
        table, mirror = write_output_csv.write_table(rows, ['item', 'count'], 'ldp.test/1',
                                                     os.path.join(self.folder, 'table.tsv'))

        with open(table, 'r') as in_file:
            lines = in_file.read().splitlines()
        self.assertEqual(lines, ['# schema=ldp.test/1', 'item\tcount', 'pairs\t0.500000', 'rejected\tNA'])
        self.assertEqual(read_json(mirror), {'schema': 'ldp.test/1', 'columns': ['item', 'count'],
                                             'rows': [{'item': 'pairs', 'count': 0.5},
                                                      {'item': 'rejected', 'count': None}]})

    def test_ps_table_aggregate_rows(self):
        rows = [{'evaluator': 'a', 'raters': 3, 'ps': 6.0, 'note': ''},
                {'evaluator': 'b', 'raters': 1, 'ps': 8.0, 'note': ''}]
        _, mirror = write_output_csv.write_ps_table(rows, {'mean': 7.0, 'trimmed': None}, self.folder)
        written = read_json(mirror)['rows']

        self.assertEqual([row['evaluator'] for row in written], ['a', 'b', 'Average', 'Trimmed average'])
        self.assertEqual((written[2]['raters'], written[2]['ps']), (4, 7.0))
        self.assertIsNone(written[3]['ps'])

    def test_kappa_report(self):
        result = KappaResult(method='fleiss', kappa=0.25, ci_low=0.1, ci_high=0.4, n_cases=10, n_raters=3,
                             resamples=100, skipped_resamples=0)
        table, _ = write_output_csv.write_kappa_report(result, self.folder)

        with open(table, 'r') as in_file:
            lines = in_file.read().splitlines()
        self.assertEqual(lines[0], '# schema=ldp.kappa/1')
        self.assertEqual(lines[2].split('\t')[:2], ['fleiss', '0.250000'])


class TestRunManifest(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.logger = logging.getLogger('test_logger.log')
        cls.logger.setLevel(logging.INFO)

    def setUp(self):
        self.folder = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.folder)

    def test_manifest_records_digests(self):
        output = os.path.join(self.folder, 'out.tsv')
        with open(output, 'w') as out_file:
            out_file.write('abc')
        manifest = wrangle_outputs.RunManifest(command='score', config_hash='h', seed=3)
        manifest.add_inputs([SCORE_SHEET, None])
        manifest.add_outputs([output], self.folder)
        record = wrangle_outputs.read_manifest(wrangle_outputs.write_manifest(manifest, self.folder, self.logger))

        self.assertEqual(record['schema'], 'ldp.manifest/1')
        self.assertEqual((record['command'], record['seed']), ('score', 3))
        self.assertEqual(list(record['inputs']), ['five_evaluators.tsv'])
        self.assertEqual(record['outputs']['out.tsv'],
                         'ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad')
        self.assertNotIn('started', record)
        self.assertGreaterEqual(record['wall_time'], 0.0)

    def test_variant_folders(self):
        work_folder = os.path.join(self.folder, 'work')
        for label in ('r=8', 'sft+dpo'):
            variant = os.path.join(work_folder, wrangle_outputs.variant_name(label))
            os.makedirs(variant)
            with open(os.path.join(variant, 'adapter.ckpt'), 'w') as out_file:
                out_file.write(label)

        moved = wrangle_outputs.partition_variants(work_folder, self.folder, self.logger)

        self.assertEqual([os.path.relpath(path, self.folder) for path in moved],
                         [os.path.join('variants', 'r_8', 'adapter.ckpt'),
                          os.path.join('variants', 'sft_dpo', 'adapter.ckpt')])
        self.assertFalse(os.path.exists(work_folder))


class TestCommandLine(unittest.TestCase):
    def assert_exit(self, status, *args):
        with self.assertRaises(SystemExit) as context, redirect_stdout(StringIO()), redirect_stderr(StringIO()):
            parse(*args)
        self.assertEqual(context.exception.code, status)

    def test_help_and_version(self):
        self.assert_exit(EXIT_CONFIG_ERROR)
        self.assert_exit(0, '-help')
        self.assert_exit(0, '-v')

    def test_invalid_command_lines(self):
        self.assert_exit(2, 'train')
        self.assert_exit(2, 'efficiency', '--seed=-1')
        self.assert_exit(2, 'efficiency', '--cpu', '0')
        self.assert_exit(2, 'ablate', '--corpus', 'a', '--test', 'b', '--ranks', '8', '--phases', 'sft')
        self.assert_exit(2, 'score', '--score_sheet', 'x.tsv', '--mode', 'median')

    def test_shared_flags(self):
        args = parse('score', '--score_sheet', 'x.tsv', '-o', 'out', '-c', '3', '--seed', '9', '-q')

        self.assertEqual((args.command, args.out_path, args.cpu, args.seed), ('score', 'out', 3, 9))
        self.assertTrue(args.quiet)
        self.assertIsNone(args.mode)
        self.assertEqual(parse('train', '--corpus', 'c.jsonl').phase, 'sft')


class TestCommands(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.logger = logging.getLogger('test_logger.log')
        cls.logger.setLevel(logging.INFO)

    def setUp(self):
        self.folder = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.folder)

    def test_efficiency(self):
        args = parse('efficiency', '-o', self.folder, '--ranks', '4', '8', '--base_params', '7.0e9',
                     '--trainable_params', '8.4e6')
        manifest = read_json(pipeline_commands.cmd_efficiency(args, PipelineConfig(), self.logger))
        rows = read_json(os.path.join(self.folder, 'efficiency.json'))['rows']

        self.assertEqual([row['trainable_params'] for row in rows[:2]], [4096, 8192])
        self.assertEqual((rows[2]['setting'], rows[2]['rank']), ('external', None))
        self.assertEqual((rows[2]['trainable_percent'], rows[2]['reduction_factor']), ('0.12', '833.3'))
        self.assertEqual(sorted(manifest['outputs']), ['efficiency.json', 'efficiency.tsv'])
        self.assertEqual(manifest['config_hash'], PipelineConfig().config_hash())

    def test_efficiency_needs_both_totals(self):
        args = parse('efficiency', '-o', self.folder, '--base_params', '7.0e9')
        with self.assertRaises(ConfigError):
            pipeline_commands.cmd_efficiency(args, PipelineConfig(), self.logger)

    def test_score(self):
        config = config_from_dict({'eval': {'bootstrap_resamples': 100}})
        args = parse('score', '-o', self.folder, '--score_sheet', SCORE_SHEET)
        manifest = read_json(pipeline_commands.cmd_score(args, config, self.logger))
        rows = read_json(os.path.join(self.folder, 'ps_table.json'))['rows']

        self.assertEqual(rows[0]['note'], 'average from 3 individual expert evaluations')
        self.assertAlmostEqual(rows[-2]['ps'], 7.2, places=12)
        self.assertAlmostEqual(rows[-1]['ps'], 7.1667, delta=1e-4)
        self.assertEqual(manifest['metrics']['mode'], 'mean')
        self.assertAlmostEqual(manifest['metrics']['ps'], 7.2, places=12)
        self.assertIn('five_evaluators.tsv', manifest['inputs'])
        self.assertIn('rater_ps.tsv', manifest['outputs'])

    def test_score_trimmed_mode(self):
        config = config_from_dict({'eval': {'bootstrap_resamples': 100}})
        args = parse('score', '-o', self.folder, '--score_sheet', SCORE_SHEET, '--mode', 'trimmed')
        manifest = read_json(pipeline_commands.cmd_score(args, config, self.logger))

        self.assertAlmostEqual(manifest['metrics']['ps'], 7.1667, delta=1e-4)

    def test_trimmed_score_needs_three_evaluators(self):
        sheet = os.path.join(self.folder, 'two.tsv')
        with open(sheet, 'w') as out_file:
            out_file.write('# schema=ldp.score_sheet/1\n'
                           'rater\tgroup\tcase\tclinical_accuracy\tfactual_completeness\tterminology\t'
                           'clinical_usability\n'
                           'a\t\tcase01\t5\t5\t5\t5\n'
                           'b\t\tcase01\t7\t7\t7\t7\n')
        args = parse('score', '-o', self.folder, '--score_sheet', sheet, '--mode', 'trimmed')

        with self.assertRaises(ArityError):
            pipeline_commands.cmd_score(args, PipelineConfig(), self.logger)

    def test_eval_corpus_file_with_score_sheet(self):
        corpus = os.path.join(TEST_DATA, 'TestEvalCorpusFile', 'eval_corpus.jsonl')
        args = parse('eval', '-o', self.folder, '--eval_corpus', corpus, '--score_sheet', SCORE_SHEET)
        manifest = read_json(pipeline_commands.cmd_eval(args, PipelineConfig(), self.logger))
        table = read_json(os.path.join(self.folder, 'metrics.json'))

        self.assertEqual(table['columns'][0], 'model')
        self.assertEqual(table['columns'][-1], 'PS')
        self.assertEqual(table['rows'][0]['model'], 'eval_corpus')
        self.assertAlmostEqual(table['rows'][0]['PS'], 7.2, places=12)
        self.assertEqual(manifest['metrics']['model'], 'eval_corpus')

    def test_eval_needs_an_input(self):
        with self.assertRaises(ConfigError):
            pipeline_commands.cmd_eval(parse('eval', '-o', self.folder), PipelineConfig(), self.logger)

    def test_dpo_needs_a_checkpoint(self):
        args = parse('train', '-o', self.folder, '--phase', 'dpo', '--corpus', 'train_pairs.jsonl')
        with self.assertRaises(ConfigError):
            pipeline_commands.cmd_train(args, PipelineConfig(), self.logger)

    def test_frames_need_spans(self):
        args = parse('prep', '-o', self.folder, '--frames', os.path.join(TEST_DATA, 'TestSequenceFiles',
                                                                         'frames.jsonl'))
        with self.assertRaises(ConfigError):
            pipeline_commands.cmd_prep(args, PipelineConfig(), self.logger)

    def test_ablation_needs_two_variants(self):
        args = parse('ablate', '-o', self.folder, '--corpus', 'a', '--test', 'b', '--ranks', '8')
        with self.assertRaises(ArityError):
            pipeline_commands.cmd_ablate(args, PipelineConfig(), self.logger)

    def test_preference_split(self):
        rng = np.random.default_rng(0)
        train, held_out = pipeline_commands.split_preference_pairs(list(range(10)), 0.2, rng)

        self.assertEqual(len(held_out), 2)
        self.assertEqual(sorted(train + held_out), list(range(10)))
        self.assertEqual(pipeline_commands.split_preference_pairs([1, 2], 0.2, rng), ([1, 2], []))


class TestPipeline(unittest.TestCase):
    ''' prep, SFT, DPO, eval and ablate on a small synthetic corpus '''

    @classmethod
    def setUpClass(cls):
        cls.logger = logging.getLogger('test_logger.log')
        cls.logger.setLevel(logging.INFO)
        cls.config = config_from_dict(SMALL_RUN)
        cls.folder = tempfile.mkdtemp()
        cls.prep, cls.sft = os.path.join(cls.folder, 'prep'), os.path.join(cls.folder, 'sft')
        os.makedirs(cls.prep)
        os.makedirs(cls.sft)
        cls.prep_manifest = read_json(pipeline_commands.cmd_prep(parse('prep', '-o', cls.prep), cls.config,
                                                                 cls.logger))
        cls.train_pairs = os.path.join(cls.prep, 'train_pairs.jsonl')
        cls.test_pairs = os.path.join(cls.prep, 'test_pairs.jsonl')
        cls.sft_manifest = read_json(pipeline_commands.cmd_train(
            parse('train', '-o', cls.sft, '--corpus', cls.train_pairs), cls.config, cls.logger))

    @classmethod
    def tearDownClass(cls):
        shutil.rmtree(cls.folder)

    def out_folder(self, name):
        folder = os.path.join(self.folder, name)
        os.makedirs(folder)
        return folder

    def test_prep_outputs(self):
        metrics = self.prep_manifest['metrics']

        self.assertEqual(metrics['videos'], 6)
        self.assertEqual(metrics['train_pairs'] + metrics['test_pairs'], metrics['pairs'])
        self.assertGreater(metrics['test_pairs'], 1)
        for name in ('frames.jsonl', 'spans.jsonl', 'train_pairs.jsonl', 'test_pairs.jsonl', 'rejections.jsonl',
                     'prep_summary.tsv'):
            self.assertIn(name, self.prep_manifest['outputs'])

    def test_prep_is_a_function_of_the_seed(self):
        again = self.out_folder('prep_again')
        manifest = read_json(pipeline_commands.cmd_prep(parse('prep', '-o', again), self.config, self.logger))

        self.assertEqual(manifest['outputs'], self.prep_manifest['outputs'])
        self.assertEqual(manifest['config_hash'], self.prep_manifest['config_hash'])

    def test_prep_from_files(self):
        out = self.out_folder('prep_files')
        args = parse('prep', '-o', out, '--frames', os.path.join(self.prep, 'frames.jsonl'), '--spans',
                     os.path.join(self.prep, 'spans.jsonl'))
        manifest = read_json(pipeline_commands.cmd_prep(args, self.config, self.logger))

        self.assertEqual(manifest['outputs']['train_pairs.jsonl'], self.prep_manifest['outputs']['train_pairs.jsonl'])
        self.assertEqual(sorted(manifest['inputs']), ['frames.jsonl', 'spans.jsonl'])

    def test_sft_checkpoint(self):
        metrics = self.sft_manifest['metrics']

        self.assertEqual(metrics['phase'], 'sft')
        self.assertIsNone(metrics['reference_id'])
        for name in ('base_model.ckpt', 'adapter.ckpt', 'vocab.json', 'loss_trace.tsv'):
            self.assertTrue(os.path.isfile(os.path.join(self.sft, name)), msg=name)
        trace = read_json(os.path.join(self.sft, 'loss_trace.json'))['rows']
        self.assertEqual(trace[-1]['loss'], metrics['final_loss'])

    def test_dpo_continues_from_sft(self):
        out = self.out_folder('dpo')
        args = parse('train', '-o', out, '--phase', 'dpo', '--corpus', self.train_pairs, '--checkpoint', self.sft,
                     '--merge')
        manifest = read_json(pipeline_commands.cmd_train(args, self.config, self.logger))
        metrics = manifest['metrics']

        self.assertEqual(metrics['phase'], 'dpo')
        self.assertEqual(metrics['reference_id'], manifest['inputs']['adapter.ckpt'])
        self.assertGreaterEqual(metrics['win_rate'], 0.0)
        self.assertLessEqual(metrics['win_rate'], 1.0)
        self.assertGreater(metrics['pairs_pairs'], 0)
        for name in ('preference_pairs.jsonl', 'merged_model.ckpt', 'adapter.ckpt'):
            self.assertIn(name, manifest['outputs'])
        with open(os.path.join(out, 'preference_pairs.jsonl'), 'r') as in_file:
            records = [json.loads(line) for line in in_file.readlines()[1:]]
        self.assertEqual({record['sources']['rejected'] for record in records}, {'base-model'})

    def test_eval_generates_and_scores(self):
        out = self.out_folder('eval')
        args = parse('eval', '-o', out, '--checkpoint', self.sft, '--test', self.test_pairs)
        manifest = read_json(pipeline_commands.cmd_eval(args, self.config, self.logger))
        row = read_json(os.path.join(out, 'metrics.json'))['rows'][0]

        self.assertEqual(row['model'], 'sft:minimal')
        self.assertIsNone(row['PS'])
        self.assertIn('generated_reports.jsonl', manifest['outputs'])
        for column in ('BLEU-1', 'BLEU-4', 'METEOR', 'ROUGE-L'):
            self.assertGreaterEqual(row[column], 0.0)
            self.assertLessEqual(row[column], 1.0 + 1e-12)

    def test_fraction_ablation(self):
        out = self.out_folder('ablate')
        args = parse('ablate', '-o', out, '--corpus', self.train_pairs, '--test', self.test_pairs, '--fractions',
                     '0.5', '1.0', '-c', '2')
        manifest = read_json(pipeline_commands.cmd_ablate(args, self.config, self.logger))
        rows = read_json(os.path.join(out, 'ablation.json'))['rows']

        self.assertEqual([row['variant'] for row in rows], ['fraction=0.5', 'fraction=1'])
        self.assertEqual(rows[0]['trainable_params'], rows[1]['trainable_params'])
        self.assertEqual(manifest['metrics']['variants'], ['fraction=0.5', 'fraction=1'])
        self.assertTrue(os.path.isfile(os.path.join(out, 'variants', 'fraction_0.5', 'adapter.ckpt')))
        self.assertEqual([name for name in os.listdir(out) if name.startswith('.ablate_')], [])

    def test_phase_ablation(self):
        out = self.out_folder('ablate_phases')
        args = parse('ablate', '-o', out, '--corpus', self.train_pairs, '--test', self.test_pairs, '--phases',
                     'sft', 'dpo', 'simpo', 'orpo', '-c', '2')
        pipeline_commands.cmd_ablate(args, self.config, self.logger)
        table = read_json(os.path.join(out, 'ablation.json'))
        with open(os.path.join(out, 'ablation.tsv'), 'r') as in_file:
            lines = in_file.read().splitlines()

        self.assertEqual(table['columns'], ['variant', 'trainable_params', 'BLEU-1', 'BLEU-4', 'METEOR', 'ROUGE-L',
                                            'CIDEr'])
        self.assertEqual(lines[1].split('\t'), table['columns'])
        self.assertEqual(len(lines), 2 + 4)
        self.assertEqual([row['variant'] for row in table['rows']], ['sft', 'sft+dpo', 'sft+simpo', 'sft+orpo'])
        self.assertEqual(len({row['trainable_params'] for row in table['rows']}), 1)
        for row in table['rows']:
            for column in ('BLEU-1', 'BLEU-4', 'METEOR', 'ROUGE-L', 'CIDEr'):
                self.assertIsNotNone(row[column], msg=f'{row["variant"]} {column}')
            self.assertTrue(os.path.isfile(os.path.join(out, 'variants', wrangle_outputs.variant_name(row['variant']),
                                                        'adapter.ckpt')))

    def test_rank_ablation_trains_every_rank(self):
        out = self.out_folder('ablate_ranks')
        args = parse('ablate', '-o', out, '--corpus', self.train_pairs, '--test', self.test_pairs, '--ranks',
                     '4', '1', '2', '-c', '2')
        pipeline_commands.cmd_ablate(args, self.config, self.logger)
        rows = read_json(os.path.join(out, 'ablation.json'))['rows']
        counts = [row['trainable_params'] for row in rows]

        self.assertEqual([row['variant'] for row in rows], ['r=1', 'r=2', 'r=4'])
        self.assertEqual(counts, [128, 256, 512])
        for row in rows:
            for column in ('BLEU-1', 'BLEU-4', 'METEOR', 'ROUGE-L', 'CIDEr'):
                self.assertGreaterEqual(row[column], 0.0, msg=f'{row["variant"]} {column}')
            folder = os.path.join(out, 'variants', wrangle_outputs.variant_name(row['variant']))
            _, meta, tensors = read_container(os.path.join(folder, 'adapter.ckpt'), expected_kind='adapter')
            self.assertEqual(meta['lora']['rank'], int(row['variant'][2:]))
            self.assertTrue(any(np.any(value != 0.0) for name, value in tensors.items() if name.endswith('lora_B')))


if __name__ == '__main__':
    unittest.main()
