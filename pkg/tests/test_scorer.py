import numpy as np

from segparse import scorer as sc
from segparse import tensor_core as tc
from segparse.tensor_core import Tensor
from segparse.treebank import Sentence
from tests.test_encoder import tiny_model


def naive_arc_scores(rh, rd, bilinear, prior):
    out = np.zeros((rh.shape[0], rd.shape[0]))
    for i in range(rh.shape[0]):
        for j in range(rd.shape[0]):
            out[i, j] = rh[i] @ bilinear @ rd[j] + rh[i] @ prior
    return out


def naive_label_scores(rh, rd, bilinear, linear, bias):
    P, K = rh.shape[0], bilinear.shape[0]
    out = np.zeros((P, K))
    for p in range(P):
        both = np.concatenate([rh[p], rd[p]])
        for k in range(K):
            out[p, k] = rh[p] @ bilinear[k] @ rd[p] + linear[k] @ both + bias[k]
    return out


class TestScoreArcs:
    def test_zero_params_zero_scores(self):
        rng = np.random.default_rng(0)
        rh = Tensor(rng.standard_normal((4, 3)))
        rd = Tensor(rng.standard_normal((3, 3)))
        out = sc.score_arcs(rh, rd, Tensor(np.zeros((3, 3))), Tensor(np.zeros(3)))
        assert (out.data == 0).all()

    def test_unit_vectors_identity_bilinear(self):
        e1 = np.zeros(3)
        e1[0] = 1.0
        out = sc.score_arcs(Tensor(e1[None, :]), Tensor(e1[None, :]),
                            Tensor(np.eye(3)), Tensor(np.zeros(3)))
        assert out.data.tolist() == [[1.0]]

    def test_matches_triple_loop(self):
        rng = np.random.default_rng(1)
        rh = rng.standard_normal((5, 4))
        rd = rng.standard_normal((4, 4))
        bl = rng.standard_normal((4, 4))
        pr = rng.standard_normal(4)
        out = sc.score_arcs(Tensor(rh), Tensor(rd), Tensor(bl), Tensor(pr))
        np.testing.assert_allclose(out.data, naive_arc_scores(rh, rd, bl, pr), atol=1e-12)

    def test_grad_check_all_inputs(self):
        rng = np.random.default_rng(2)
        parts = {
            "rh": Tensor(rng.standard_normal((4, 3))),
            "rd": Tensor(rng.standard_normal((3, 3))),
            "bl": Tensor(rng.standard_normal((3, 3))),
            "pr": Tensor(rng.standard_normal(3)),
        }
        weights = rng.standard_normal((4, 3))

        def make_f():
            def f(_):
                out = sc.score_arcs(parts["rh"], parts["rd"], parts["bl"], parts["pr"])
                return tc.sum_all(tc.mul(out, Tensor(weights)))
            return f

        for name, tensor in parts.items():
            report = tc.grad_check(make_f(), tensor)
            assert report.passed, (name, report.max_rel_err)

    def test_column_shift_invariance(self):
        # adding a constant to one column leaves softmax probs and argmax unchanged
        rng = np.random.default_rng(3)
        scores = rng.standard_normal((5, 4))
        shifted = scores.copy()
        shifted[:, 2] += 7.5

        def probs(col):
            e = np.exp(col - col.max())
            return e / e.sum()

        np.testing.assert_allclose(probs(scores[:, 2]), probs(shifted[:, 2]), rtol=1e-12)
        assert scores[:, 2].argmax() == shifted[:, 2].argmax()


class TestScoreLabels:
    def test_zero_params_zero_rows(self):
        model, _ = tiny_model()
        s = model.scorer
        for t in (s.label_bilinear, s.label_linear, s.label_bias):
            t.data[:] = 0
        rh = Tensor(np.random.default_rng(0).standard_normal((4, model.config.label_mlp)))
        rd = Tensor(np.random.default_rng(1).standard_normal((4, model.config.label_mlp)))
        out = sc.score_labels(rh, rd, [(1, 0), (2, 1)], s)
        assert (out.data == 0).all()

    def test_linear_term_isolated(self):
        model, _ = tiny_model()
        s = model.scorer
        q = model.config.label_mlp
        s.label_bilinear.data[:] = 0
        s.label_bias.data[:] = 0
        s.label_linear.data[:] = 0
        s.label_linear.data[0, 0] = 1.0  # label 0 reads head coordinate 0
        rng = np.random.default_rng(2)
        rh = Tensor(rng.standard_normal((3, q)))
        rd = Tensor(rng.standard_normal((3, q)))
        out = sc.score_labels(rh, rd, [(2, 1)], s)
        assert abs(out.data[0, 0] - rh.data[1, 0]) < 1e-12
        assert (out.data[0, 1:] == 0).all()

    def test_matches_naive_definition(self):
        model, _ = tiny_model()
        s = model.scorer
        q = model.config.label_mlp
        rng = np.random.default_rng(3)
        rows = 5
        rh_full = rng.standard_normal((rows, q))
        rd_full = rng.standard_normal((rows, q))
        pairs = [(1, 0), (2, 4), (3, 3)]
        out = sc.score_labels(Tensor(rh_full), Tensor(rd_full), pairs, s)
        gathered_h = np.stack([rh_full[i] for _, i in pairs])
        gathered_d = np.stack([rd_full[j] for j, _ in pairs])
        expect = naive_label_scores(gathered_h, gathered_d, s.label_bilinear.data,
                                    s.label_linear.data, s.label_bias.data)
        np.testing.assert_allclose(out.data, expect, atol=1e-12)

    def test_grad_check_label_params(self):
        model, _ = tiny_model()
        s = model.scorer
        q = model.config.label_mlp
        rng = np.random.default_rng(4)
        rh = Tensor(rng.standard_normal((4, q)))
        rd = Tensor(rng.standard_normal((4, q)))
        pairs = [(1, 0), (2, 3), (3, 1)]
        weights = rng.standard_normal((len(pairs), len(model.label_set)))

        def f(_):
            out = sc.score_labels(rh, rd, pairs, s)
            return tc.sum_all(tc.mul(out, Tensor(weights)))

        for name, tensor in [("bilinear", s.label_bilinear), ("linear", s.label_linear),
                             ("bias", s.label_bias), ("rh", rh), ("rd", rd)]:
            report = tc.grad_check(f, tensor)
            assert report.passed, (name, report.max_rel_err)

    def test_full_tensor_path_agrees_with_pairs(self):
        model, _ = tiny_model()
        q = model.config.label_mlp
        rng = np.random.default_rng(5)
        n = 3
        rh = Tensor(rng.standard_normal((n + 1, q)))
        rd = Tensor(rng.standard_normal((n + 1, q)))
        full = sc.score_labels_full(rh, rd, model.scorer, n)
        assert full.shape == (n, n + 1, len(model.label_set))
        one = sc.score_labels(rh, rd, [(2, 1)], model.scorer)
        np.testing.assert_allclose(full.data[1, 1], one.data[0], atol=1e-12)


class TestScoreSentence:
    def test_shapes_joint(self):
        model, _ = tiny_model()
        s = Sentence.from_chars("abcde")
        scores = sc.score_sentence(s, model, "eval", pairs=[(j, 0) for j in range(1, 6)])
        assert scores.arc.shape == (6, 5)
        assert scores.label.shape == (5, len(model.label_set))
        assert np.isfinite(scores.arc.data).all()

    def test_eval_deterministic(self):
        model, _ = tiny_model()
        s = Sentence.from_chars("abcd")
        a = sc.score_sentence(s, model, "eval").arc.data
        b = sc.score_sentence(s, model, "eval").arc.data
        assert (a == b).all()

    def test_seg_only_scores_adjacent_pairs(self):
        model, _ = tiny_model(mode="seg-only")
        s = Sentence.from_chars("abcd")
        scores = sc.score_sentence(s, model, "eval")
        assert scores.arc is None
        assert scores.pairs == [(1, 2), (2, 3), (3, 4)]
        assert scores.label.shape == (3, len(model.label_set))

    def test_projection_shapes_and_zero_weights(self):
        model, _ = tiny_model()
        from segparse.encoder import encode
        h = encode(Sentence.from_chars("abcde"), model, "eval")
        arc_head, arc_dep, label_head, label_dep = sc.project(h, model.scorer, "eval")
        assert arc_head.shape == (6, model.config.arc_mlp)
        assert label_dep.shape == (6, model.config.label_mlp)
        model.scorer.arc_head_w.data[:] = 0
        model.scorer.arc_head_b.data[:] = 0
        arc_head2, *_ = sc.project(h, model.scorer, "eval")
        assert (arc_head2.data == 0).all()

    def test_gradcheck_loss_through_score_sentence(self):
        model, corpus = tiny_model()
        s = corpus.items[0][0]
        gold_heads = np.arange(1, len(s) + 1) % len(s)  # arbitrary fixed heads

        def f(_):
            scores = sc.score_sentence(s, model, "eval")
            return tc.softmax_xent(tc.transpose(scores.arc), gold_heads)

        for name, tensor in model.trainables():
            if "label" in name:
                continue
            report = tc.grad_check(f, tensor)
            assert report.passed, (name, report.max_rel_err, report.failures[:2])
