import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gloss2text import autodiff as ad  # noqa: F401 (no_grad in loss probes)
from gloss2text import corpus as cp
from gloss2text import metrics
from gloss2text import training as tr
from gloss2text.errors import ConfigError, ContractError, NumericError
from gloss2text.model import ModelConfig, TransformerModel

from helpers import synthetic_corpus


class TestNoamSchedule:
    def test_continuous_at_warmup(self):
        lr_before = tr.noam_lr(2999, 0.5, 512, 3000)
        lr_at = tr.noam_lr(3000, 0.5, 512, 3000)
        closed = 0.5 * 512 ** -0.5 * 3000 ** -0.5
        assert lr_at == pytest.approx(closed, abs=1e-12)
        assert lr_before < lr_at

    def test_peak_value_fixture(self):
        # 0.5 * 512^-0.5 * 3000^-0.5 = 4.0345e-4
        assert tr.noam_lr(3000, 0.5, 512, 3000) == pytest.approx(4.0345e-4, abs=1e-7)

    def test_inverse_sqrt_decay(self):
        ratio = tr.noam_lr(6000, 0.5, 512, 3000) / tr.noam_lr(3000, 0.5, 512, 3000)
        assert ratio == pytest.approx(1 / math.sqrt(2), rel=1e-12)

    @given(st.integers(1, 20000))
    @settings(max_examples=60, deadline=None)
    def test_maximum_at_warmup(self, step):
        warmup = 3000
        assert tr.noam_lr(step, 0.5, 512, warmup) <= tr.noam_lr(warmup, 0.5, 512, warmup) + 1e-18

    def test_step_zero_rejected(self):
        with pytest.raises(ContractError):
            tr.noam_lr(0, 0.5, 512, 3000)


class TestAdam:
    def params_of(self, arr, grad=None):
        t = ad.Tensor(arr, requires_grad=True)
        if grad is not None:
            t.grad = np.asarray(grad, dtype=t.dtype)
        return {"p": t}

    def test_zero_gradient_leaves_parameters(self):
        params = self.params_of(np.ones(4), grad=np.zeros(4))
        adam = tr.Adam()
        adam.step(params, lr=0.1)
        np.testing.assert_array_equal(params["p"].data, np.ones(4))

    def test_first_step_closed_form_double_precision(self):
        g = np.array([0.3, -1.7, 0.0004, -9.1])
        p0 = np.array([1.0, 2.0, 3.0, 4.0])
        params = self.params_of(p0.copy(), grad=g.copy())
        adam = tr.Adam(beta1=0.9, beta2=0.998, eps=1e-8)
        adam.step(params, lr=0.01)
        expected = p0 - 0.01 * g / (np.abs(g) + 1e-8)
        np.testing.assert_allclose(params["p"].data, expected, atol=1e-10)

    def test_deterministic_across_runs(self):
        def run():
            rng = np.random.Generator(np.random.Philox(3))
            params = {"w": ad.Tensor(rng.standard_normal(8).astype(np.float32),
                                     requires_grad=True)}
            adam = tr.Adam()
            for step in range(20):
                params["w"].grad = (params["w"].data * 0.1 + step * 0.01).astype(np.float32)
                adam.step(params, lr=1e-3)
            return params["w"].data.copy()

        np.testing.assert_array_equal(run(), run())

    def test_non_finite_gradient_names_parameter(self):
        params = self.params_of(np.ones(2), grad=np.array([np.nan, 1.0]))
        with pytest.raises(NumericError, match="'p'"):
            tr.Adam().step(params, lr=0.1)

    def test_moments_decay_without_gradient_effect(self):
        params = self.params_of(np.ones(2), grad=np.array([1.0, -1.0]))
        adam = tr.Adam()
        adam.step(params, lr=0.1)
        m, v = adam.moments["p"]
        assert m[0] == pytest.approx(0.1)  # (1 - beta1) * g
        assert v[0] == pytest.approx(0.002)


def encoded_fixture(n_train=6, n_dev=2, seed=0):
    corpus = synthetic_corpus(n_train, n_dev, seed=seed)
    src_vocab = cp.build_vocab(corpus, "source")
    tgt_vocab = cp.build_vocab(corpus, "target")
    train = tr.encode_examples(corpus.splits["train"], src_vocab, tgt_vocab)
    dev = tr.encode_examples(corpus.splits["dev"], src_vocab, tgt_vocab)
    return corpus, src_vocab, tgt_vocab, train, dev


class TestMakeBatches:
    def test_single_batch_when_budget_huge(self):
        _, _, _, train, _ = encoded_fixture()
        batches = tr.make_batches(train, batch_tokens=10_000, seed=1)
        assert len(batches) == 1
        assert sorted(batches[0].ids) == sorted(ex.id for ex in train)

    def test_fixed_seed_reproducible(self):
        _, _, _, train, _ = encoded_fixture(n_train=30)
        a = tr.make_batches(train, 40, seed=7)
        b = tr.make_batches(train, 40, seed=7)
        assert [x.ids for x in a] == [x.ids for x in b]
        for ba, bb in zip(a, b):
            np.testing.assert_array_equal(ba.src, bb.src)

    def test_partition_property(self):
        _, _, _, train, _ = encoded_fixture(n_train=25)
        batches = tr.make_batches(train, 48, seed=3)
        ids = sorted(i for b in batches for i in b.ids)
        assert ids == sorted(ex.id for ex in train)

    def test_padded_budget_respected(self):
        _, _, _, train, _ = encoded_fixture(n_train=25)
        for batch in tr.make_batches(train, 48, seed=4):
            assert batch.tgt.shape[0] * batch.tgt.shape[1] <= 48

    def test_token_totals_preserved(self):
        _, _, _, train, _ = encoded_fixture(n_train=20)
        batches = tr.make_batches(train, 64, seed=5)
        assert sum(b.src_token_count for b in batches) == sum(len(ex.src_ids) for ex in train)
        assert sum(b.tgt_token_count for b in batches) == sum(len(ex.tgt_ids) for ex in train)

    def test_oversized_sentence_rejected(self):
        _, _, _, train, _ = encoded_fixture()
        with pytest.raises(ContractError):
            tr.make_batches(train, batch_tokens=3, seed=0)

    def test_sentence_count_mode(self):
        _, _, _, train, _ = encoded_fixture(n_train=10)
        batches = tr.make_batches(train, batch_tokens=2048, seed=0, batch_sentences=4)
        assert all(len(b.ids) <= 4 for b in batches)
        assert sum(len(b.ids) for b in batches) == 10

    def test_pad_id_fills_short_rows(self):
        _, _, _, train, _ = encoded_fixture(n_train=12)
        batches = tr.make_batches(train, 60, seed=6)
        batch = max(batches, key=lambda b: len(b.ids))
        assert (batch.src[~batch.src_allowed] == cp.Vocabulary.pad_id).all()


class TestBatchLoss:
    def test_initial_loss_near_log_vocab(self):
        # vocab much larger than d_model, so the random initial logits stay
        # near-uniform and the loss lands at ln V
        _, src_vocab, tgt_vocab, train, _ = encoded_fixture(n_train=40)
        cfg = ModelConfig(src_vocab_size=len(src_vocab), tgt_vocab_size=len(tgt_vocab),
                          num_layers=1, d_model=4, num_heads=2, ffn_dim=8, dropout=0.0)
        model = TransformerModel(cfg, seed=0)
        batch = tr.make_batches(train, 2048, seed=0)[0]
        loss = tr.batch_loss(model, batch, label_smoothing=0.0).item()
        assert loss == pytest.approx(math.log(len(tgt_vocab)), rel=0.05)

    def test_pad_rows_do_not_change_loss(self):
        # same sentences with and without an extra padded row
        _, src_vocab, tgt_vocab, train, _ = encoded_fixture(n_train=4)
        cfg = ModelConfig(src_vocab_size=len(src_vocab), tgt_vocab_size=len(tgt_vocab),
                          num_layers=1, d_model=16, num_heads=2, ffn_dim=32, dropout=0.0)
        model = TransformerModel(cfg, seed=1)
        single = tr.make_batches(train[:1], 2048, seed=0)[0]
        merged = tr.make_batches(train[:2], 2048, seed=0)[0]
        # per-sentence loss of the first example, batched alone vs with padding
        alone = tr.batch_loss(model, single, 0.1).item()
        row = merged.ids.index(train[0].id)
        solo_again = tr.Batch(
            src=merged.src[row:row + 1], tgt=merged.tgt[row:row + 1],
            src_allowed=merged.src_allowed[row:row + 1], ids=[train[0].id],
            src_token_count=0, tgt_token_count=0,
        )
        padded = tr.batch_loss(model, solo_again, 0.1).item()
        assert padded == pytest.approx(alone, rel=1e-5)


class TestTrainLoop:
    def test_patience_counts_evaluations_past_best(self, monkeypatch):
        scores = iter([30.0, 29.0, 28.0, 27.0, 26.0, 25.0, 24.0, 23.0, 22.0])

        def fake_bleu(hyps, refs, max_n=4):
            return next(scores), {}

        monkeypatch.setattr(metrics, "bleu", fake_bleu)
        _, src_vocab, tgt_vocab, train, dev = encoded_fixture()
        cfg = ModelConfig(src_vocab_size=len(src_vocab), tgt_vocab_size=len(tgt_vocab),
                          num_layers=1, d_model=8, num_heads=2, ffn_dim=16, dropout=0.0)
        model = TransformerModel(cfg, seed=2)
        result = tr.train(model, train, dev, src_vocab, tgt_vocab,
                          tr.TrainConfig(patience=5, max_epochs=50, warmup_steps=10))
        assert result.log.stop_reason == "early_stopping(patience=5)"
        assert len(result.log.records) == 6  # best + exactly 5 non-improving
        assert result.log.best_index == 0
        assert result.best_dev_bleu4 == 30.0

    def test_best_checkpoint_is_max_over_evaluations(self, monkeypatch):
        scores = iter([10.0, 12.0, 11.0, 15.0, 9.0, 8.0, 7.0, 6.0, 5.0, 4.0])

        def fake_bleu(hyps, refs, max_n=4):
            return next(scores), {}

        monkeypatch.setattr(metrics, "bleu", fake_bleu)
        _, src_vocab, tgt_vocab, train, dev = encoded_fixture()
        cfg = ModelConfig(src_vocab_size=len(src_vocab), tgt_vocab_size=len(tgt_vocab),
                          num_layers=1, d_model=8, num_heads=2, ffn_dim=16, dropout=0.0)
        model = TransformerModel(cfg, seed=3)
        result = tr.train(model, train, dev, src_vocab, tgt_vocab,
                          tr.TrainConfig(patience=5, max_epochs=50, warmup_steps=10))
        assert result.best_dev_bleu4 == 15.0
        assert result.log.records[result.log.best_index].dev_bleu4 == 15.0
        assert all(r.dev_bleu4 <= 15.0 for r in result.log.records)

    def test_empty_dev_rejected(self):
        _, src_vocab, tgt_vocab, train, _ = encoded_fixture()
        cfg = ModelConfig(src_vocab_size=len(src_vocab), tgt_vocab_size=len(tgt_vocab),
                          num_layers=1, d_model=8, num_heads=2, ffn_dim=16)
        model = TransformerModel(cfg, seed=4)
        with pytest.raises(ConfigError):
            tr.train(model, train, [], src_vocab, tgt_vocab, tr.TrainConfig())

    def test_log_jsonl_layout(self, tmp_path, monkeypatch):
        scores = iter([5.0] + [4.0] * 8)
        monkeypatch.setattr(metrics, "bleu", lambda h, r, max_n=4: (next(scores), {}))
        _, src_vocab, tgt_vocab, train, dev = encoded_fixture()
        cfg = ModelConfig(src_vocab_size=len(src_vocab), tgt_vocab_size=len(tgt_vocab),
                          num_layers=1, d_model=8, num_heads=2, ffn_dim=16, dropout=0.0)
        model = TransformerModel(cfg, seed=5)
        result = tr.train(model, train, dev, src_vocab, tgt_vocab,
                          tr.TrainConfig(patience=2, max_epochs=50, warmup_steps=10))
        path = tmp_path / "log.jsonl"
        result.log.write(path)
        import json

        lines = path.read_text().splitlines()
        rec = json.loads(lines[0])
        assert set(rec) == {"step", "lr", "dev_loss", "dev_bleu4"}
        steps = [json.loads(l)["step"] for l in lines]
        assert steps == sorted(steps)


class TestMemorization:
    def test_toy_training_loss_monotone_per_epoch(self):
        corpus = synthetic_corpus(10, seed=11)
        src_vocab = cp.build_vocab(corpus, "source")
        tgt_vocab = cp.build_vocab(corpus, "target")
        train = tr.encode_examples(corpus.splits["train"], src_vocab, tgt_vocab)
        cfg = ModelConfig(src_vocab_size=len(src_vocab), tgt_vocab_size=len(tgt_vocab),
                          num_layers=1, d_model=32, num_heads=4, ffn_dim=64, dropout=0.0)
        model = TransformerModel(cfg, seed=6)
        adam = tr.Adam()
        step = 0
        losses = []
        for epoch in range(12):
            for batch in tr.make_batches(train, 2048, seed=epoch):
                step += 1
                model.zero_grads()
                loss = tr.batch_loss(model, batch, 0.0, training=True,
                                     rng=np.random.Generator(np.random.Philox(epoch)))
                loss.backward()
                adam.step(model.params, tr.noam_lr(step, 1.5, 32, 30))
            with ad.no_grad():
                batch = tr.make_batches(train, 2048, seed=0)[0]
                losses.append(tr.batch_loss(model, batch, 0.0).item())
        for before, after in zip(losses, losses[1:]):
            assert after <= before + 1e-3, f"loss rose {before:.4f} -> {after:.4f}"

    def test_small_model_memorizes_tiny_corpus(self):
        corpus = synthetic_corpus(10, seed=11)
        corpus.splits["dev"] = corpus.splits["train"]
        src_vocab = cp.build_vocab(corpus, "source")
        tgt_vocab = cp.build_vocab(corpus, "target")
        train = tr.encode_examples(corpus.splits["train"], src_vocab, tgt_vocab)
        cfg = ModelConfig(src_vocab_size=len(src_vocab), tgt_vocab_size=len(tgt_vocab),
                          num_layers=1, d_model=32, num_heads=4, ffn_dim=64, dropout=0.0)
        model = TransformerModel(cfg, seed=6)
        config = tr.TrainConfig(initial_lr=3.0, warmup_steps=60, batch_tokens=2048,
                                label_smoothing=0.0, patience=8, max_epochs=60, seed=6)
        result = tr.train(model, train, train, src_vocab, tgt_vocab, config)
        model.load_state_arrays(result.best_state)
        acc = tr.token_accuracy(model, tr.make_batches(train, 2048, seed=0))
        assert acc > 0.95
        assert result.best_dev_bleu4 > 90.0


class TestMultiSeed:
    def test_single_seed_mean_equals_run(self):
        report = tr.multi_seed_run([4], lambda s: {"bleu": 11.0 + s})
        assert report.mean == {"bleu": 15.0}
        assert report.std == {"bleu": 0.0}

    def test_identical_seed_zero_variance(self):
        report = tr.multi_seed_run([3, 3, 3], lambda s: {"bleu": 7.5})
        assert report.std["bleu"] == 0.0

    def test_three_seeds_aggregate(self):
        report = tr.multi_seed_run([1, 2, 3], lambda s: {"m": float(s)})
        assert report.mean["m"] == pytest.approx(2.0)
        assert set(report.per_seed) == {1, 2, 3}
        assert report.std["m"] == pytest.approx(math.sqrt(2 / 3))

    def test_empty_seed_list(self):
        with pytest.raises(ConfigError):
            tr.multi_seed_run([], lambda s: {})
