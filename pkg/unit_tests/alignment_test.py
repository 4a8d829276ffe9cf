'''
Unit tests for the training objectives (SFT, DPO, SimPO, ORPO), their loops and preference-pair construction.

Usage: python -m unittest -v alignment_test
'''

import logging
import os
import shutil
import tempfile
import unittest

import numpy as np

from LDP import alignment
from LDP import autodiff as ad
from LDP.alignment import PreferencePair, ReportExample, TrainRun
from LDP.dataprep import synth_pairs
from LDP.errors import ConfigError, DataError
from LDP.lora_adapters import LoraConfig, inject
from LDP.micro_mllm import EOS_ID, MicroModel, ModelConfig, generate
from LDP.nlg_metrics import TokenizedCorpus, bleu
from LDP.tokenizer import Vocabulary, prompt_tokens


def small_config(**overrides):
    settings = dict(d_model=16, n_heads=2, n_enc_layers=1, n_dec_layers=1, vocab_size=12, patch_grid=(2, 2),
                    patch_dim=3, max_text_len=8, adapter_queries=2, seed=3)
    settings.update(overrides)
    return ModelConfig(**settings)


def adapted_model(rank=4, layers=('decoder', 'adapter'), **overrides):
    return inject(MicroModel(small_config(**overrides)), LoraConfig(rank=rank, layers=list(layers)), seed=1)


def randomise_b(model, seed):
    rng = np.random.default_rng(seed)
    for name, tensor in model.adapter_parameters().items():
        if name.endswith('lora_B'):
            tensor.data = rng.normal(0.0, 0.1, size=tensor.shape)


def marked_pairs(n, seed):
    ''' chosen reports carry token 5 where rejected ones carry token 6; everything else is shared '''
    rng = np.random.default_rng(seed)
    pairs = []
    for i in range(n):
        lead = int(rng.integers(7, 11))
        pairs.append(PreferencePair(context_id=f'ctx{i}', patches=rng.normal(size=(2, 2, 3)), prompt=[1],
                                    chosen=[lead, 5, EOS_ID], rejected=[lead, 6, EOS_ID]))
    return pairs


class TestObjectives(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.logger = logging.getLogger('test_logger.log')
        cls.logger.setLevel(logging.INFO)

    def setUp(self):
        self.pairs = marked_pairs(4, seed=0)

    def test_dpo_loss_is_log_two_when_policy_is_reference(self):
        policy = adapted_model()
        reference = policy.snapshot()
        loss = alignment.dpo_loss(policy, reference, self.pairs, beta=0.1)

        self.assertAlmostEqual(loss.item(), np.log(2.0), delta=1e-12)

    def test_dpo_objective_values(self):
        margin_loss = alignment.dpo_objective(ad.Tensor(-1.0), ad.Tensor(-3.0), -2.0, -2.0, beta=0.5)

        self.assertAlmostEqual(margin_loss.item(), np.logaddexp(0.0, -1.0), places=12)

    def test_dpo_loss_falls_as_the_chosen_margin_grows(self):
        losses = [alignment.dpo_objective(ad.Tensor(logp_w), ad.Tensor(-4.0), -3.0, -4.0, beta=0.1).item()
                  for logp_w in np.linspace(-6.0, 0.0, 13)]

        for before, after in zip(losses, losses[1:]):
            self.assertLess(after, before)

    def test_simpo_margin_ignores_duplicated_tokens(self):
        ''' doubling y_w (same per-token log-probability) leaves the length-normalised margin unchanged '''
        rng = np.random.default_rng(6)
        for _ in range(20):
            per_token = rng.uniform(-3.0, -0.1, size=int(rng.integers(1, 8)))
            logp_l, len_l = float(rng.uniform(-20.0, -1.0)), int(rng.integers(1, 10))
            single = alignment.simpo_objective(ad.Tensor(per_token.sum()), per_token.size, ad.Tensor(logp_l), len_l,
                                               beta=2.0, gamma=0.5)
            doubled = np.concatenate([per_token, per_token])
            twice = alignment.simpo_objective(ad.Tensor(doubled.sum()), doubled.size, ad.Tensor(logp_l), len_l,
                                              beta=2.0, gamma=0.5)

            self.assertAlmostEqual(single.item(), twice.item(), delta=1e-10)

    def test_simpo_objective_values(self):
        loss = alignment.simpo_objective(ad.Tensor(-2.0), 2, ad.Tensor(-6.0), 3, beta=2.0, gamma=0.5)

        self.assertAlmostEqual(loss.item(), np.logaddexp(0.0, -(2.0 * (-1.0 + 2.0) - 0.5)), places=12)

    def test_orpo_clamps_certain_responses(self):
        diagnostics = {}
        loss = alignment.orpo_objective(ad.Tensor(0.0), 2, ad.Tensor(-4.0), 2, lam=0.25, diagnostics=diagnostics)

        self.assertTrue(np.isfinite(loss.item()))
        self.assertEqual(diagnostics['clamped'], 1)

    def test_gradients_of_every_objective(self):
        policy = adapted_model()
        reference = policy.snapshot()
        randomise_b(policy, 2)
        params = list(policy.adapter_parameters().values())
        examples = [ReportExample(context_id=p.context_id, patches=p.patches, prompt=p.prompt, target=p.chosen)
                    for p in self.pairs]
        losses = {'sft': lambda: alignment.sft_loss(policy, examples),
                  'dpo': lambda: alignment.dpo_loss(policy, reference, self.pairs, beta=0.5),
                  'simpo': lambda: alignment.simpo_loss(policy, self.pairs, beta=2.0, gamma=0.5),
                  'orpo': lambda: alignment.orpo_loss(policy, self.pairs, lam=0.25)}

        for phase, loss in losses.items():
            report = ad.grad_check_parameters(loss, params, n_samples=50, seed=4)
            self.assertLess(report.max_relative_error, 1e-4, msg=f'{phase}: {report}')

    def test_invalid_hyperparameters(self):
        policy = adapted_model()
        with self.assertRaises(ConfigError):
            alignment.dpo_loss(policy, policy.snapshot(), self.pairs, beta=0.0)
        with self.assertRaises(ConfigError):
            alignment.simpo_loss(policy, self.pairs, beta=1.0, gamma=-1.0)
        with self.assertRaises(ConfigError):
            alignment.orpo_loss(policy, self.pairs, lam=-0.1)
        with self.assertRaises(DataError):
            alignment.simpo_loss(policy, [], beta=1.0, gamma=0.0)

    def test_reference_with_other_vocabulary(self):
        policy = adapted_model()
        with self.assertRaises(ConfigError):
            alignment.dpo_loss(policy, MicroModel(small_config(vocab_size=13)), self.pairs, beta=0.1)

    def test_pair_needs_distinct_responses(self):
        with self.assertRaises(DataError):
            PreferencePair(context_id='c', patches=np.zeros((2, 2, 3)), prompt=[1], chosen=[4, 2], rejected=[4, 2])
        with self.assertRaises(DataError):
            PreferencePair(context_id='c', patches=np.zeros((2, 2, 3)), prompt=[1], chosen=[], rejected=[4, 2])


class TestTrainRun(unittest.TestCase):
    def test_phase_defaults(self):
        self.assertEqual(TrainRun.defaults('sft').lr, 2e-4)
        dpo = TrainRun.defaults('dpo')
        self.assertEqual((dpo.lr, dpo.beta), (1e-6, 0.1))
        self.assertNotIn('loss_trace', dpo.settings())

    def test_invalid_runs(self):
        with self.assertRaises(ConfigError):
            TrainRun(phase='ppo')
        with self.assertRaises(ConfigError):
            TrainRun(phase='dpo', beta=0.0)
        with self.assertRaises(ConfigError):
            TrainRun(lr=0.0)

    def test_dpo_without_reference(self):
        with self.assertRaises(ConfigError):
            alignment.run_phase(TrainRun(phase='dpo'), adapted_model(), marked_pairs(2, 0),
                                logging.getLogger('test_logger.log'), np.random.default_rng(0))


class TestSupervisedLearning(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.logger = logging.getLogger('test_logger.log')
        cls.logger.setLevel(logging.INFO)

    def setUp(self):
        self.patches = np.random.default_rng(5).normal(size=(2, 2, 3))
        self.example = ReportExample(context_id='one', patches=self.patches, prompt=[1], target=[5, 6, 7, EOS_ID])

    def overfit(self, n_pairs):
        ''' adapter-only SFT at micro scale, one full-corpus batch per step for 200 steps '''
        corpus = synth_pairs(n_pairs, seed=0)
        vocab = Vocabulary.build([pair.report for pair in corpus])
        examples = alignment.make_examples(corpus, vocab, prompt_tokens(vocab, 'none'))
        lora = LoraConfig(rank=8, layers=['decoder', 'adapter'])
        model = inject(MicroModel(ModelConfig(vocab_size=len(vocab))), lora, seed=1)
        base = {name: tensor.data.copy() for name, tensor in model.named_parameters().items()}
        run = TrainRun(phase='sft', lr=1e-2, batch_size=n_pairs, epochs=200)
        alignment.run_phase(run, model, examples, self.logger, np.random.default_rng(0))
        for name, tensor in model.named_parameters().items():
            np.testing.assert_array_equal(tensor.data, base[name], err_msg=name)
        return model, run, vocab, examples

    @staticmethod
    def final_loss(model, examples):
        with ad.no_grad():
            return alignment.sft_loss(model, examples, training=False).item()

    def test_overfit_pair_is_reproduced(self):
        model, run, vocab, examples = self.overfit(1)
        example = examples[0]

        self.assertEqual(len(run.loss_trace), 200)
        self.assertLess(self.final_loss(model, examples), 0.05)
        self.assertEqual(generate(model, example.patches, example.prompt, max_new=30, eos_id=vocab.eos_id),
                         example.target[:-1])

    def test_adapters_learn_the_tiny_corpus(self):
        model, run, vocab, examples = self.overfit(8)
        hypotheses = [vocab.decode(generate(model, ex.patches, ex.prompt, max_new=30, eos_id=vocab.eos_id))
                      for ex in examples]
        corpus = TokenizedCorpus.from_texts(hypotheses, [[ex.text] for ex in examples])

        self.assertEqual(len(run.loss_trace), 200)
        self.assertLess(self.final_loss(model, examples), 0.05)
        self.assertGreater(bleu(corpus, n=1), 0.95)

    def test_overfitting_is_deterministic(self):
        _, first, _, _ = self.overfit(1)
        _, second, _, _ = self.overfit(1)

        self.assertEqual(first.loss_trace, second.loss_trace)

    def test_full_fine_tuning_of_a_small_model(self):
        model = MicroModel(small_config())
        model.set_base_trainable(True)
        run = TrainRun(phase='sft', lr=1e-2, batch_size=1, epochs=200)
        alignment.run_phase(run, model, [self.example], self.logger, np.random.default_rng(0))

        self.assertLess(self.final_loss(model, [self.example]), 0.05)
        self.assertEqual(generate(model, self.patches, [1], max_new=6), [5, 6, 7])

    def test_adapter_training_lowers_the_loss(self):
        model = adapted_model(rank=8)
        run = TrainRun(phase='sft', lr=1e-2, batch_size=1, epochs=100)
        summary = alignment.run_phase(run, model, [self.example], self.logger, np.random.default_rng(0))

        self.assertLess(summary['final_loss'], 0.5 * run.loss_trace[0][2])

    def test_empty_corpus(self):
        with self.assertRaises(DataError):
            alignment.run_phase(TrainRun(phase='sft'), adapted_model(), [], self.logger, np.random.default_rng(0))


class TestPreferenceTraining(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.logger = logging.getLogger('test_logger.log')
        cls.logger.setLevel(logging.INFO)

    def test_dpo_raises_held_out_win_rate(self):
        pairs = marked_pairs(250, seed=1)
        train, held_out = pairs[:200], pairs[200:]
        policy = adapted_model()
        reference = policy.snapshot()

        self.assertEqual(alignment.win_rate(policy, reference, held_out), 0.0)

        run = TrainRun(phase='dpo', lr=5e-3, batch_size=16, epochs=4, beta=0.1)
        summary = alignment.run_phase(run, policy, train, self.logger, np.random.default_rng(0), reference=reference,
                                      held_out=held_out)

        self.assertGreaterEqual(summary['win_rate'], 0.9)
        self.assertLess(summary['final_loss'], np.log(2.0))
        self.assertEqual(summary['win_rate'], alignment.win_rate(policy, reference, held_out))

    def test_reference_free_phases_prefer_chosen(self):
        pairs = marked_pairs(32, seed=2)
        for phase in ('simpo', 'orpo'):
            policy = adapted_model()
            reference = policy.snapshot()
            run = TrainRun(phase=phase, lr=5e-3, batch_size=8, epochs=3, beta=2.0)
            summary = alignment.run_phase(run, policy, pairs, self.logger, np.random.default_rng(0))

            self.assertEqual(len(run.loss_trace), 12)
            self.assertGreater(alignment.win_rate(policy, reference, pairs), 0.5, msg=phase)
            if phase == 'orpo':
                self.assertEqual(summary['orpo_clamped'], 0)


class TestPreferencePairs(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.logger = logging.getLogger('test_logger.log')
        cls.logger.setLevel(logging.INFO)

    def setUp(self):
        self.corpus = synth_pairs(40, seed=2, grid=(2, 2), patch_dim=8)
        self.vocab = Vocabulary.build([pair.report for pair in self.corpus])
        self.examples = alignment.make_examples(self.corpus, self.vocab, prompt_tokens(self.vocab, 'none'))

    def test_hallucinated_pairs_cover_the_corpus(self):
        pairs, stats = alignment.build_preference_pairs(self.examples, self.vocab, self.logger, source='hallucination',
                                                         rng=np.random.default_rng(0))

        self.assertGreaterEqual(stats['pairs'] / stats['contexts'], 0.9)
        for pair, example in zip(pairs, self.examples):
            self.assertEqual(pair.chosen, example.target)
            self.assertNotEqual(pair.rejected, pair.chosen)
            self.assertEqual(pair.rejected[-1], self.vocab.eos_id)

    def test_base_model_generations_are_rejected(self):
        model = MicroModel(small_config(vocab_size=len(self.vocab), max_text_len=24, patch_dim=8))
        pairs, stats = alignment.build_preference_pairs(self.examples[:3], self.vocab, self.logger,
                                                         source='base-model', policy=model, max_new=6)

        self.assertEqual(stats['contexts'], 3)
        self.assertEqual(stats['pairs'] + stats['dropped_identical'] + stats['skipped'], 3)
        for pair in pairs:
            self.assertEqual(pair.sources['rejected'], 'base-model')
            self.assertLessEqual(len(pair.rejected), 7)

    def test_source_checks(self):
        with self.assertRaises(ConfigError):
            alignment.build_preference_pairs(self.examples, self.vocab, self.logger, source='human')
        with self.assertRaises(ConfigError):
            alignment.build_preference_pairs(self.examples, self.vocab, self.logger, source='base-model')

    def test_pairs_file(self):
        folder = tempfile.mkdtemp()
        try:
            pairs, _ = alignment.build_preference_pairs(self.examples, self.vocab, self.logger,
                                                        source='hallucination', rng=np.random.default_rng(0))
            path = os.path.join(folder, 'preference_pairs.jsonl')
            alignment.write_preference_pairs(pairs, path)
            patches = {pair.pair_id: pair.patches for pair in self.corpus}
            loaded = alignment.read_preference_pairs(path, patches)

            self.assertEqual([(p.chosen, p.rejected) for p in loaded], [(p.chosen, p.rejected) for p in pairs])
            with self.assertRaises(DataError):
                alignment.read_preference_pairs(path, {})
        finally:
            shutil.rmtree(folder)


if __name__ == '__main__':
    unittest.main()
