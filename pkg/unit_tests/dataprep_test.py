'''
Unit tests for corpus construction: keyframe sampling, filtering, alignment, splitting and the corpus files.

Usage: python -m unittest -v dataprep_test
'''

import filecmp
import logging
import os
import shutil
import tempfile
import unittest

import numpy as np

from LDP import dataprep
from LDP.dataprep import DataprepOptions, Frame, FrameSequence, ImageTextPair, SentenceSpan
from LDP.errors import ConfigError, DataError, ValidationError

TEST_DATA = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'unit_test_data')


def fuzzed_sequence(rng, video_id='fuzz', n_frames=1000, duration=500.0):
    times = np.sort(rng.choice(np.arange(1, int(duration * 1000)), size=n_frames, replace=False)) / 1000.0
    frames = [Frame(timestamp=float(t), quality=float(rng.uniform()), polyp_present=bool(rng.random() < 0.8),
                    render_key=(2, 1, 0, 0), noise_seed=int(i)) for i, t in enumerate(times)]
    starts = np.sort(rng.uniform(0.0, duration, size=4))
    sentences = [SentenceSpan(float(start), float(min(duration, start + rng.uniform(5.0, 120.0))), f'sentence {i}')
                 for i, start in enumerate(starts)]
    return FrameSequence(video_id=video_id, duration=duration, frames=frames, sentences=sentences, stratum='serrated')


def plain_pairs(strata, patients=None):
    patients = patients or [None] * len(strata)
    return [ImageTextPair(pair_id=f'p{i}', patches=np.zeros((1, 1, 1)), report='polyp', stratum=stratum,
                          video_id=f'v{i}', timestamp=0.0, patient_id=patient)
            for i, (stratum, patient) in enumerate(zip(strata, patients))]


class TestKeyframes(unittest.TestCase):
    def setUp(self):
        self.frames = [Frame(timestamp=i + 0.5, quality=1.0, polyp_present=True) for i in range(60)]
        self.seq = FrameSequence(video_id='v', duration=60.0, frames=self.frames)

    def test_rate_follows_video_length(self):
        sampled = dataprep.sample_keyframes(self.seq, target_frames=12)

        self.assertEqual(len(sampled), 12)
        self.assertEqual([frame.timestamp for frame in sampled][:2], [2.5, 7.5])

    def test_rate_is_clamped(self):
        short = FrameSequence(video_id='s', duration=2.0, frames=self.frames[:2])

        self.assertEqual(len(dataprep.sample_keyframes(short, target_frames=12)), 2)
        self.assertEqual(len(dataprep.sample_keyframes(self.seq, target_frames=1, min_rate=0.1)), 6)

    def test_no_frames(self):
        with self.assertRaises(DataError):
            dataprep.sample_keyframes(FrameSequence(video_id='e', duration=5.0, frames=[]), 3)
        with self.assertRaises(ConfigError):
            dataprep.sample_keyframes(self.seq, 0)


class TestFilterAndAlignment(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.logger = logging.getLogger('test_logger.log')
        cls.logger.setLevel(logging.INFO)

    def test_quality_threshold_is_inclusive(self):
        frames = [Frame(1.0, 0.5, True), Frame(2.0, 0.49, True), Frame(3.0, 0.9, False)]
        kept, rejected = dataprep.quality_filter(frames, 0.5, require_polyp=True)

        self.assertEqual(kept, frames[:1])
        self.assertEqual([reason for _, reason in rejected], ['low-quality', 'no-polyp'])
        self.assertEqual(len(dataprep.quality_filter(frames, 0.5, require_polyp=False)[0]), 2)

    def test_equally_close_spans_take_the_earlier_start(self):
        frame = Frame(5.0, 1.0, True, patches=np.zeros((2, 2, 7)))
        seq = FrameSequence(video_id='v', duration=10.0, frames=[frame], stratum='serrated',
                            sentences=[SentenceSpan(4.0, 8.0, 'later'), SentenceSpan(2.0, 6.0, 'earlier')])
        with self.assertLogs('test_logger.log', level='INFO') as logs:
            pairs, unaligned = dataprep.align_frames_to_sentences(seq, [frame], self.logger)

        self.assertEqual(unaligned, [])
        self.assertEqual(pairs[0].report, 'earlier')
        self.assertTrue(any('equally close to two sentence midpoints' in line for line in logs.output))
        seq.stratum = None
        with self.assertRaises(ValidationError):
            dataprep.align_frames_to_sentences(seq, [frame], self.logger)

    def test_every_frame_is_accounted_for(self):
        rng = np.random.default_rng(5)
        options = DataprepOptions(target_frames=300, min_quality=0.4)
        for trial in range(3):
            seq = fuzzed_sequence(rng, video_id=f'fuzz{trial}')
            pairs, ledger = dataprep.process_sequence(seq, options, self.logger, grid=(2, 2), patch_dim=7)

            self.assertEqual(len(pairs) + len(ledger), len(seq.frames))
            accounted = sorted([pair.timestamp for pair in pairs] + [entry['timestamp'] for entry in ledger])
            self.assertEqual(accounted, [frame.timestamp for frame in seq.frames])
            self.assertTrue(set(entry['reason'] for entry in ledger) <= set(dataprep.LEDGER_REASONS))

    def test_fixture_sequence(self):
        data = os.path.join(TEST_DATA, 'TestSequenceFiles')
        sequences = dataprep.read_sequences(os.path.join(data, 'frames.jsonl'), os.path.join(data, 'spans.jsonl'))
        pairs, ledger = dataprep.process_sequence(sequences[0], DataprepOptions(), self.logger)

        self.assertEqual([pair.report for pair in pairs], ['a small adenomatous polyp in the rectum .'])
        self.assertEqual(pairs[0].patches.shape, (8, 8, 12))
        self.assertEqual([(entry['timestamp'], entry['reason']) for entry in ledger],
                         [(4.0, 'low-quality'), (6.0, 'no-polyp'), (8.0, 'unaligned')])


class TestSplit(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.logger = logging.getLogger('test_logger.log')
        cls.logger.setLevel(logging.INFO)

    def test_floor_of_the_ratio_goes_to_train(self):
        train, test = dataprep.stratified_split(plain_pairs(['adenomatous'] * 2314), self.logger, ratio=0.8, seed=1)

        self.assertEqual((len(train), len(test)), (1851, 463))

    def test_per_stratum_counts_and_disjointness(self):
        pairs = plain_pairs(['adenomatous'] * 10 + ['serrated'] * 7 + ['hyperplastic'] * 3)
        train, test = dataprep.stratified_split(pairs, self.logger, seed=4)

        counts = {stratum: sum(pair.stratum == stratum for pair in train) for stratum in ('adenomatous', 'serrated',
                                                                                          'hyperplastic')}
        self.assertEqual(counts, {'adenomatous': 8, 'serrated': 5, 'hyperplastic': 2})
        self.assertEqual(len(train) + len(test), len(pairs))
        self.assertFalse({pair.pair_id for pair in train} & {pair.pair_id for pair in test})

    def test_single_member_stratum_goes_to_train(self):
        with self.assertLogs('test_logger.log', level='WARNING'):
            train, test = dataprep.stratified_split(plain_pairs(['adenomatous'] * 5 + ['inflammatory']), self.logger)

        self.assertIn('inflammatory', [pair.stratum for pair in train])
        self.assertEqual(len(test), 1)

    def test_split_is_seeded(self):
        pairs = plain_pairs(['adenomatous'] * 20)
        first = dataprep.stratified_split(pairs, self.logger, seed=9)[1]
        second = dataprep.stratified_split(pairs, self.logger, seed=9)[1]

        self.assertEqual([pair.pair_id for pair in first], [pair.pair_id for pair in second])

    def test_patients_stay_on_one_side(self):
        patients = [f'patient{i // 3}' for i in range(30)]
        pairs = plain_pairs(['adenomatous'] * 30, patients)
        train, test = dataprep.stratified_split(pairs, self.logger, seed=2, patient_level=True)

        self.assertFalse({pair.patient_id for pair in train} & {pair.patient_id for pair in test})
        self.assertEqual(len(train), 24)

    def test_fraction_subset(self):
        pairs = plain_pairs(['adenomatous'] * 10 + ['serrated'] * 3)
        subset = dataprep.fraction_subset(pairs, 0.25, seed=0)

        self.assertEqual(sum(pair.stratum == 'adenomatous' for pair in subset), 2)
        self.assertEqual(sum(pair.stratum == 'serrated' for pair in subset), 1)
        with self.assertRaises(ConfigError):
            dataprep.fraction_subset(pairs, 0.0)

    def test_empty_corpus(self):
        with self.assertRaises(DataError):
            dataprep.stratified_split([], self.logger)


class TestSyntheticCorpus(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.logger = logging.getLogger('test_logger.log')
        cls.logger.setLevel(logging.INFO)

    def setUp(self):
        self.folder = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.folder)

    def test_preparation_is_byte_identical_across_runs(self):
        paths = []
        for run, cpu in enumerate((1, 3)):
            sequences = dataprep.synth_corpus(5, seed=8)
            pairs, ledger, counts = dataprep.prepare_corpus(sequences, DataprepOptions(), self.logger, cpu=cpu)
            pairs_path = os.path.join(self.folder, f'pairs{run}.jsonl')
            ledger_path = os.path.join(self.folder, f'ledger{run}.jsonl')
            dataprep.write_pairs(pairs, pairs_path)
            dataprep.write_ledger(ledger, ledger_path)
            paths.append((pairs_path, ledger_path))

            self.assertEqual(len(pairs) + sum(counts.values()), sum(len(seq.frames) for seq in sequences))
        for first, second in zip(*paths):
            self.assertTrue(filecmp.cmp(first, second, shallow=False))

    def test_sequence_files_read_back(self):
        sequences = dataprep.synth_corpus(3, seed=1)
        frames_path = os.path.join(self.folder, 'frames.jsonl')
        spans_path = os.path.join(self.folder, 'spans.jsonl')
        dataprep.write_sequences(sequences, frames_path, spans_path)
        loaded = dataprep.read_sequences(frames_path, spans_path)

        self.assertEqual([seq.video_id for seq in loaded], [seq.video_id for seq in sequences])
        self.assertEqual(loaded[1].sentences, sequences[1].sentences)
        np.testing.assert_array_equal(loaded[2].frames[4].grid(), sequences[2].frames[4].grid())

    def test_pairs_file_renders_the_same_images(self):
        pairs = dataprep.synth_pairs(4, seed=3)
        path = os.path.join(self.folder, 'pairs.jsonl')
        dataprep.write_pairs(pairs, path)
        loaded = dataprep.read_pairs(path)

        for original, copy in zip(pairs, loaded):
            self.assertEqual(original.report, copy.report)
            np.testing.assert_array_equal(original.patches, copy.patches)

    def test_images_carry_the_report_content(self):
        pair = dataprep.synth_pairs(1, seed=6)[0]
        type_index = dataprep.POLYP_TYPES.index(pair.stratum)
        means = dataprep.patch_statistics(pair.patches)

        self.assertEqual(int(np.argmax(means[:4])), type_index)
        with self.assertRaises(ConfigError):
            dataprep.render_patches((0, 0, 0, 0), 1, patch_dim=6)

    def test_unknown_video_size(self):
        with self.assertRaises(ConfigError):
            dataprep.synth_corpus(0)
        with self.assertRaises(DataError):
            dataprep.prepare_corpus([], DataprepOptions(), self.logger)


class TestHallucination(unittest.TestCase):
    def test_one_attribute_changes(self):
        rng = np.random.default_rng(0)
        report = 'adenomatous polyp in the rectum , small , about 8 mm .'
        for _ in range(20):
            altered = dataprep.hallucinate_report(report, rng)
            before, after = dataprep.parse_attributes(report), dataprep.parse_attributes(altered)
            changed = [key for key in before if before[key] != after[key]]

            self.assertEqual(len(changed), 1)
            if changed == ['size']:
                self.assertIn(f'{dataprep.SIZE_MM[after["size"]]} mm', altered)

    def test_report_without_attributes(self):
        self.assertIsNone(dataprep.hallucinate_report('no abnormality seen .', np.random.default_rng(0)))


class TestSequenceFiles(unittest.TestCase):
    def setUp(self):
        self.data = os.path.join(TEST_DATA, 'TestSequenceFiles')

    def test_unordered_frames_name_their_line(self):
        with self.assertRaises(ValidationError) as context:
            dataprep.read_sequences(os.path.join(self.data, 'unordered_frames.jsonl'),
                                    os.path.join(self.data, 'spans.jsonl'))
        self.assertEqual(context.exception.line_number, 3)

    def test_missing_field(self):
        with self.assertRaises(ValidationError) as context:
            dataprep.read_sequences(os.path.join(self.data, 'missing_duration.jsonl'),
                                    os.path.join(self.data, 'spans.jsonl'))
        self.assertEqual(context.exception.line_number, 2)

    def test_missing_stratum_names_file_and_line(self):
        path = os.path.join(self.data, 'missing_stratum.jsonl')
        with self.assertRaises(ValidationError) as context:
            dataprep.read_sequences(path, os.path.join(self.data, 'spans.jsonl'))
        self.assertEqual(context.exception.line_number, 2)
        self.assertIn(path, str(context.exception))
        self.assertIn('video0001 has no stratum', str(context.exception))

    def test_wrong_schema(self):
        with self.assertRaises(ValidationError) as context:
            dataprep.read_sequences(os.path.join(self.data, 'spans.jsonl'), os.path.join(self.data, 'spans.jsonl'))
        self.assertEqual(context.exception.line_number, 1)


if __name__ == '__main__':
    unittest.main()
