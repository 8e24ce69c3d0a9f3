import math

import numpy as np
import pytest

from segparse import tensor_core as tc
from segparse import trainer as tr
from segparse.errors import ContractError, DivergenceError
from segparse.model import ModelConfig, ModelParams
from segparse.tensor_core import Graph, Tensor
from segparse.treebank import char_tree_from_word_tree, gen_synth_corpus
from tests.test_encoder import tiny_model


def gold_batch(corpus, indices):
    return [(corpus.items[i][0], char_tree_from_word_tree(*corpus.items[i]))
            for i in indices]


def small_train_setup(mode="joint-multi", n_train=60, n_dev=20):
    train_corpus = gen_synth_corpus(5, n_train)
    dev_corpus = gen_synth_corpus(6, n_dev)
    model_cfg = ModelConfig(mode=mode, embed_dim=8, hidden=12, lstm_layers=1,
                            arc_mlp=10, label_mlp=6, min_freq=1,
                            embed_dropout=0.1, lstm_dropout=0.1,
                            arc_mlp_dropout=0.1, label_mlp_dropout=0.1)
    return train_corpus, dev_corpus, model_cfg


class TestLrAt:
    @pytest.mark.parametrize("t,expect", [
        (0, 2e-3),
        (5000, 1.5e-3),
        (10000, 1.125e-3),
        (2500, 2e-3 * 0.75 ** 0.5),
        (1, 2e-3 * 0.75 ** (1 / 5000)),
        (100000, 2e-3 * 0.75 ** 20.0),
    ])
    def test_exact(self, t, expect):
        got = tr.lr_at(t)
        assert abs(got - expect) <= 1e-15 * abs(expect)

    def test_negative_rejected(self):
        with pytest.raises(ContractError):
            tr.lr_at(-1)


class TestAdamStep:
    def one_param(self, value, grad):
        p = Tensor(np.array([value]), requires_grad=True)
        p.grad = np.array([grad])
        return [("w", p)], p

    def test_zero_grads_keep_params_but_tick(self):
        named, p = self.one_param(1.0, 0.0)
        state = tr.OptimState(m={"w": np.zeros(1)}, v={"w": np.zeros(1)})
        tr.adam_step(named, state, tr.TrainConfig())
        assert p.data[0] == 1.0
        assert state.step == 1

    def test_matches_hand_computed_update(self):
        cfg = tr.TrainConfig()
        named, p = self.one_param(1.0, 0.5)
        state = tr.OptimState(m={"w": np.zeros(1)}, v={"w": np.zeros(1)})
        tr.adam_step(named, state, cfg)
        m_hat = 0.5
        v_hat = 0.25
        expect = 1.0 - tr.lr_at(0) * m_hat / (math.sqrt(v_hat) + cfg.eps)
        assert abs(p.data[0] - expect) < 1e-12

    def test_clip_scales_to_global_norm(self):
        a = Tensor(np.zeros(4), requires_grad=True)
        a.grad = np.full(4, 25.0)  # norm 50
        named = [("a", a)]
        norm = tr.clip_global_norm(named, 5.0)
        assert norm == pytest.approx(50.0)
        assert np.linalg.norm(a.grad) == pytest.approx(5.0)

    def test_nonfinite_grads_abort(self):
        named, p = self.one_param(1.0, float("nan"))
        state = tr.OptimState(m={"w": np.zeros(1)}, v={"w": np.zeros(1)})
        with pytest.raises(DivergenceError):
            tr.adam_step(named, state, tr.TrainConfig())

    def test_missing_grad_still_decays_moments(self):
        p = Tensor(np.array([1.0]), requires_grad=True)
        state = tr.OptimState(m={"w": np.array([1.0])}, v={"w": np.array([1.0])})
        tr.adam_step([("w", p)], state, tr.TrainConfig())
        assert state.m["w"][0] == pytest.approx(0.9)
        assert p.data[0] != 1.0  # stale momentum still moves the weight


class TestJointLoss:
    def test_uniform_logits_per_token(self):
        model, corpus = tiny_model(texts=("abcd", "abcd"))
        for name, t in model.trainables():
            if name.startswith("scorer/"):
                t.data[:] = 0.0
        batch = gold_batch(corpus, [0, 1])
        loss = tr.joint_loss(batch, model, "eval")
        n = 4
        K = len(model.label_set)
        expect = (math.log(n + 1) + math.log(K))
        assert float(loss.data) == pytest.approx(expect, rel=1e-9)

    def test_empty_batch_rejected(self):
        model, _ = tiny_model()
        with pytest.raises(ContractError):
            tr.joint_loss([], model, "eval")

    def test_loss_decreases_overfitting_one_sentence(self):
        model, corpus = tiny_model(dtype="float32")
        batch = gold_batch(corpus, [0])
        cfg = tr.TrainConfig(clip=5.0)
        state = tr.OptimState.for_model(model)
        losses = []
        for _ in range(100):
            with Graph() as g:
                loss = tr.joint_loss(batch, model, "eval")
            tc.backward(g, loss)
            tr.adam_step(model.trainables(), state, cfg)
            model.zero_grads()
            losses.append(float(loss.data))
        assert all(b < a for a, b in zip(losses[:20], losses[1:20]))  # early trend
        assert losses[-1] < losses[0] * 0.5

    def test_monotone_after_warmup_fixed_masks(self):
        # single repeated batch with per-trial fixed dropout masks: loss keeps
        # falling after step 5 in at least 9 of 10 seeded trials
        ok = 0
        for seed in range(10):
            model, corpus = tiny_model(seed=seed, dtype="float32")
            rng = np.random.default_rng(seed)
            batch = gold_batch(corpus, [0, 1])
            longest = max(len(s) for s, _ in batch)
            masks = model.sample_masks(rng, len(batch), longest)
            state = tr.OptimState.for_model(model)
            losses = []
            for _ in range(15):
                with Graph() as g:
                    loss = tr.joint_loss(batch, model, "train", masks)
                tc.backward(g, loss)
                tr.adam_step(model.trainables(), state, tr.TrainConfig())
                model.zero_grads()
                losses.append(float(loss.data))
            if all(b < a for a, b in zip(losses[5:], losses[6:])):
                ok += 1
        assert ok >= 9

    def test_seg_only_loss_uniform(self):
        model, corpus = tiny_model(mode="seg-only", texts=("abcd", "abcd"))
        for name, t in model.trainables():
            if name.startswith("scorer/"):
                t.data[:] = 0.0
        batch = gold_batch(corpus, [0])
        loss = tr.joint_loss(batch, model, "eval")
        assert float(loss.data) == pytest.approx(math.log(2.0), rel=1e-9)

    def test_gradcheck_full_joint_loss(self):
        model, corpus = tiny_model()
        batch = gold_batch(corpus, [0])

        def f(_):
            return tr.joint_loss(batch, model, "eval")

        for name, tensor in model.trainables():
            report = tc.grad_check(f, tensor)
            assert report.passed, (name, report.max_rel_err, report.failures[:2])


class TestMakeBatches:
    def test_partition_and_length_buckets(self):
        rng = np.random.default_rng(0)
        lengths = [5, 9, 5, 7, 5, 9, 7, 5, 6]
        batches = tr.make_batches(lengths, 3, rng)
        flat = sorted(i for b in batches for i in b)
        assert flat == list(range(len(lengths)))
        for b in batches:
            assert max(lengths[i] for i in b) - min(lengths[i] for i in b) <= 2

    def test_deterministic_given_seed(self):
        lengths = list(np.random.default_rng(1).integers(5, 15, size=50))
        a = tr.make_batches(lengths, 8, np.random.default_rng(7))
        b = tr.make_batches(lengths, 8, np.random.default_rng(7))
        assert a == b


class TestTrainLoop:
    def test_end_to_end_improves_and_selects_best(self, tmp_path):
        train_corpus, dev_corpus, model_cfg = small_train_setup()
        cfg = tr.TrainConfig(batch_size=16, max_epochs=3, seed=3, save_every_epoch=True)
        result = tr.train(train_corpus, dev_corpus, cfg, model_cfg, tmp_path / "run",
                          quiet=True)
        assert len(result.history) == 3
        best_logged = max(result.history, key=lambda h: (h["udep_f1"], h["seg_f1"]))
        assert result.history[result.best_epoch - 1]["udep_f1"] == best_logged["udep_f1"]
        run = tmp_path / "run"
        assert (run / "best.ckpt").exists()
        assert (run / "epoch_001.ckpt").exists()
        assert (run / "manifest.json").exists()
        assert (run / "train.log").exists()
        assert (run / "model.json").exists()

    def test_bit_identical_reruns(self, tmp_path):
        train_corpus, dev_corpus, model_cfg = small_train_setup(n_train=30, n_dev=10)
        cfg = tr.TrainConfig(batch_size=8, max_epochs=2, seed=11)
        blobs = []
        for tag in ("a", "b"):
            out = tmp_path / tag
            tr.train(train_corpus, dev_corpus, cfg, model_cfg, out, quiet=True)
            blobs.append({p.name: p.read_bytes() for p in sorted(out.iterdir())})
        assert blobs[0].keys() == blobs[1].keys()
        for name in blobs[0]:
            assert blobs[0][name] == blobs[1][name], f"{name} differs between reruns"

    def test_pretrained_tables_never_written(self, tmp_path):
        from segparse.encoder import PretrainedTable
        train_corpus, dev_corpus, model_cfg = small_train_setup(n_train=20, n_dev=8)
        rng = np.random.default_rng(0)
        chars = sorted({c for s, _ in train_corpus.items for c in s.chars})
        vectors = rng.standard_normal((len(chars), model_cfg.embed_dim)).astype(np.float32)
        table = PretrainedTable({c: i for i, c in enumerate(chars)}, vectors)
        frozen = vectors.copy()
        cfg = tr.TrainConfig(batch_size=8, max_epochs=1, seed=2)
        result = tr.train(train_corpus, dev_corpus, cfg, model_cfg, tmp_path / "run",
                          pretrained={"uni": table}, quiet=True)
        assert result.model.embeddings.pretrained["uni"] is table
        np.testing.assert_array_equal(table.vectors, frozen)
        assert table.vectors.tobytes() == frozen.tobytes()

    def test_early_stop(self, tmp_path):
        train_corpus, dev_corpus, model_cfg = small_train_setup()
        cfg = tr.TrainConfig(batch_size=16, max_epochs=50, seed=3, early_stop_f1=0.0)
        result = tr.train(train_corpus, dev_corpus, cfg, model_cfg, tmp_path / "run",
                          quiet=True)
        assert len(result.history) == 1  # any score passes a 0.0 bar
