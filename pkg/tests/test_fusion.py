"""Fusion math: pair blending, class-wise softmax weights, logistic fusion."""

import math

import numpy as np
import pytest

from sedfuse.core import ClassVocabulary, Event, EventList, FrameGrid, ValidationError
from sedfuse.decode import PostProcessConfig, decode_many, rasterize
from sedfuse.fusion import (
    AlphaFit,
    ClassF1Table,
    FusionWeights,
    apply_logistic_fusion,
    classwise_weights,
    combine_pair,
    fit_alpha,
    fit_logistic_fusion,
    frame_bce,
    fuse_average,
    fuse_classwise,
    logistic_loss_and_grad,
    sweep_beta,
)

VOCAB2 = ClassVocabulary(("a", "b"))


def grid(values, clip="c", hop=0.1):
    return FrameGrid(clip, hop, np.asarray(values, dtype=float))


def random_grid(rng, t=16, c=2, clip="c", hop=0.1):
    return FrameGrid(clip, hop, rng.random((t, c)))


class TestCombinePair:
    def test_alpha_one_returns_first_bit_exact(self, rng):
        a, b = random_grid(rng), random_grid(rng)
        out = combine_pair(a, b, 1.0)
        assert np.array_equal(out.values, a.values)

    def test_alpha_zero_returns_second_bit_exact(self, rng):
        a, b = random_grid(rng), random_grid(rng)
        out = combine_pair(a, b, 0.0)
        assert np.array_equal(out.values, b.values)

    def test_midpoint(self):
        out = combine_pair(grid([[0.2]]), grid([[0.6]]), 0.5)
        assert out.values[0, 0] == pytest.approx(0.4)

    def test_idempotent_on_equal_inputs(self, rng):
        a = random_grid(rng)
        same = FrameGrid(a.clip_id, a.hop_seconds, a.values)
        for alpha in (0.0, 0.3, 0.5, 0.77, 1.0):
            assert np.array_equal(combine_pair(a, same, alpha).values, a.values)

    def test_output_within_input_envelope(self, rng):
        for _ in range(50):
            a, b = random_grid(rng), random_grid(rng)
            alpha = float(rng.random())
            out = combine_pair(a, b, alpha).values
            lo = np.minimum(a.values, b.values)
            hi = np.maximum(a.values, b.values)
            assert (out >= lo - 1e-12).all() and (out <= hi + 1e-12).all()

    def test_alpha_out_of_range(self, rng):
        with pytest.raises(ValidationError):
            combine_pair(random_grid(rng), random_grid(rng), 1.5)

    def test_shape_mismatch(self, rng):
        with pytest.raises(ValidationError):
            combine_pair(random_grid(rng, t=8), random_grid(rng, t=9), 0.5)


class TestClasswiseWeights:
    def test_beta_zero_uniform(self):
        table = ClassF1Table(("m1", "m2", "m3"), ("a", "b"), np.random.rand(3, 2))
        w = classwise_weights(table, 0.0)
        np.testing.assert_allclose(w.values, 1 / 3, atol=1e-15)

    def test_two_model_hand_value(self):
        # independent softmax evaluation of the (0.4, 0.6) column at beta=1
        table = ClassF1Table(("m1", "m2"), ("a",), [[0.4], [0.6]])
        w = classwise_weights(table, 1.0)
        denom = math.exp(0.4) + math.exp(0.6)
        assert w.values[0, 0] == pytest.approx(math.exp(0.4) / denom, abs=1e-12)
        assert w.values[0, 0] == pytest.approx(0.4502, abs=1e-4)
        assert w.values[1, 0] == pytest.approx(0.5498, abs=1e-4)

    def test_large_beta_concentrates(self, rng):
        # gaps are kept >= 0.4 so the softmax can saturate past 1 - 1e-6
        for _ in range(50):
            m = int(rng.integers(2, 6))
            best = rng.integers(0, m)
            column = rng.random(m) * 0.3
            column[best] = 0.7 + rng.random() * 0.3
            table = ClassF1Table(
                tuple(f"m{i}" for i in range(m)), ("a",), column.reshape(-1, 1)
            )
            w = classwise_weights(table, 50.0)
            assert w.values[best, 0] >= 1 - 1e-6

    def test_columns_sum_to_one(self, rng):
        for beta in (-3.0, 0.0, 1.0, 17.0, 50.0):
            table = ClassF1Table(
                ("m1", "m2", "m3", "m4"), ("a", "b", "c"), rng.random((4, 3))
            )
            w = classwise_weights(table, beta)
            np.testing.assert_allclose(w.values.sum(axis=0), 1.0, atol=1e-12)
            assert (w.values > 0).all()

    def test_shift_invariance(self, rng):
        values = rng.random((3, 2)) * 0.5
        table = ClassF1Table(("m1", "m2", "m3"), ("a", "b"), values)
        shifted = values.copy()
        shifted[:, 0] += 0.4  # constant shift of one full column
        table2 = ClassF1Table(("m1", "m2", "m3"), ("a", "b"), shifted)
        w1 = classwise_weights(table, 3.0)
        w2 = classwise_weights(table2, 3.0)
        np.testing.assert_allclose(w1.values, w2.values, atol=1e-12)

    def test_monotone_concentration(self, rng):
        column = np.array([0.3, 0.5, 0.8])
        table = ClassF1Table(("m1", "m2", "m3"), ("a",), column.reshape(-1, 1))
        w1 = classwise_weights(table, 2.0)
        w2 = classwise_weights(table, 5.0)
        assert w2.values[2, 0] > w1.values[2, 0]

    def test_nonfinite_beta_rejected(self):
        table = ClassF1Table(("m1",), ("a",), [[0.5]])
        with pytest.raises(ValidationError):
            classwise_weights(table, float("inf"))


class TestFuseClasswise:
    def test_identical_grids_identity(self, rng):
        g = random_grid(rng)
        table = ClassF1Table(("m1", "m2", "m3"), ("a", "b"), rng.random((3, 2)))
        for beta in (0.0, 1.0, 9.0):
            out = fuse_classwise([g, g, g], classwise_weights(table, beta))
            assert np.array_equal(out.values, g.values)

    def test_beta_zero_equals_mean(self, rng):
        grids = [random_grid(rng) for _ in range(4)]
        table = ClassF1Table(tuple("mnop"), ("a", "b"), rng.random((4, 2)))
        out = fuse_classwise(grids, classwise_weights(table, 0.0))
        mean = np.mean([g.values for g in grids], axis=0)
        np.testing.assert_allclose(out.values, mean, atol=1e-12)

    def test_faithful_hand_case(self):
        table = ClassF1Table(("m1", "m2"), ("a",), [[0.5], [0.5]])
        out = fuse_classwise(
            [grid([[0.4]]), grid([[0.8]])],
            classwise_weights(table, 0.0, mode="faithful"),
        )
        assert out.values[0, 0] == pytest.approx(0.3, abs=1e-15)

    def test_faithful_equals_normalized_over_m(self, rng):
        grids = [random_grid(rng) for _ in range(3)]
        table = ClassF1Table(("m1", "m2", "m3"), ("a", "b"), rng.random((3, 2)))
        normalized = fuse_classwise(grids, classwise_weights(table, 2.0))
        faithful = fuse_classwise(grids, classwise_weights(table, 2.0, mode="faithful"))
        np.testing.assert_allclose(faithful.values, normalized.values / 3, atol=1e-15)

    def test_threshold_scaling_relation(self, rng):
        # binarized decisions agree when the faithful threshold is t / M
        # (M a power of two keeps the division exact)
        grids = [random_grid(rng, t=64) for _ in range(4)]
        table = ClassF1Table(tuple("mnop"), ("a", "b"), rng.random((4, 2)))
        normalized = fuse_classwise(grids, classwise_weights(table, 3.0))
        faithful = fuse_classwise(grids, classwise_weights(table, 3.0, mode="faithful"))
        t = 0.5
        np.testing.assert_array_equal(
            faithful.values >= t / 4, normalized.values >= t
        )

    def test_normalized_bounded_by_inputs(self, rng):
        grids = [random_grid(rng) for _ in range(3)]
        table = ClassF1Table(("m1", "m2", "m3"), ("a", "b"), rng.random((3, 2)))
        out = fuse_classwise(grids, classwise_weights(table, 4.0)).values
        stack = np.stack([g.values for g in grids])
        assert (out >= stack.min(axis=0) - 1e-12).all()
        assert (out <= stack.max(axis=0) + 1e-12).all()

    def test_misalignment_rejected(self, rng):
        table = ClassF1Table(("m1", "m2"), ("a", "b"), rng.random((2, 2)))
        with pytest.raises(ValidationError):
            fuse_classwise(
                [random_grid(rng, clip="c1"), random_grid(rng, clip="c2")],
                classwise_weights(table, 0.0),
            )


class TestFuseAverage:
    def test_single_grid_identity(self, rng):
        g = random_grid(rng)
        assert np.array_equal(fuse_average([g]).values, g.values)

    def test_midpoint(self):
        out = fuse_average([grid([[0.0]]), grid([[1.0]])])
        assert out.values[0, 0] == pytest.approx(0.5)

    def test_matches_classwise_beta_zero(self, rng):
        grids = [random_grid(rng) for _ in range(3)]
        table = ClassF1Table(("m1", "m2", "m3"), ("a", "b"), rng.random((3, 2)))
        avg = fuse_average(grids)
        cw = fuse_classwise(grids, classwise_weights(table, 0.0))
        np.testing.assert_allclose(avg.values, cw.values, atol=1e-12)


def _oracle_pair_setup(rng, n_clips=6, t=64):
    """Truth plus (noise, oracle) grid pairs: best blend weight is 0."""
    vocab = VOCAB2
    hop = 0.1
    truth_events = []
    oracle_grids, noise_grids = [], []
    for k in range(n_clips):
        clip = f"c{k}"
        values = np.zeros((t, 2))
        start = int(rng.integers(0, t - 10))
        values[start : start + 8, 0] = 1.0
        truth_events.append(Event(clip, start * hop, (start + 8) * hop, "a"))
        oracle_grids.append(FrameGrid(clip, hop, values))
        noise_grids.append(FrameGrid(clip, hop, rng.random((t, 2))))
    return EventList(truth_events), oracle_grids, noise_grids


class TestFitAlpha:
    def test_oracle_second_model_wins(self, rng):
        # under the threshold-insensitive BCE objective, any weight on the
        # noise model strictly hurts, so the fit must land on 0
        truth, oracle, noise = _oracle_pair_setup(rng)
        fit = fit_alpha(
            list(zip(noise, oracle)), truth,
            PostProcessConfig(default_median_window=1), VOCAB2,
            objective="frame-bce",
        )
        assert fit.alpha == 0.0

    def test_flat_curve_tie_breaks_to_half(self, rng):
        truth, oracle, _ = _oracle_pair_setup(rng)
        fit = fit_alpha(
            [(g, FrameGrid(g.clip_id, g.hop_seconds, g.values)) for g in oracle],
            truth, PostProcessConfig(default_median_window=1), VOCAB2,
        )
        scores = {s for _, s in fit.curve}
        assert len(scores) == 1
        assert fit.alpha == 0.5

    def test_alpha_attains_curve_max(self, rng):
        truth, oracle, noise = _oracle_pair_setup(rng)
        fit = fit_alpha(
            list(zip(oracle, noise)), truth,
            PostProcessConfig(default_median_window=1), VOCAB2,
            objective="frame-bce",
        )
        best = max(s for _, s in fit.curve)
        got = dict(fit.curve)[fit.alpha]
        assert got == best

    def test_fine_grid_oracle(self, rng):
        # two models with per-frame accuracies ~0.9/0.7; the coarse fit must
        # land within 0.05 of an exhaustive 0.001-step search of the same
        # objective
        vocab = VOCAB2
        hop = 0.1
        truth_events, pairs = [], []
        for k in range(8):
            clip = f"c{k}"
            target = np.zeros((80, 2), dtype=bool)
            start = int(rng.integers(0, 60))
            target[start : start + 12, 0] = True
            truth_events.append(Event(clip, start * hop, (start + 12) * hop, "a"))
            flip_a = rng.random((80, 2)) < 0.1
            flip_b = rng.random((80, 2)) < 0.3
            grid_a = np.where(target ^ flip_a, 0.9, 0.1)
            grid_b = np.where(target ^ flip_b, 0.9, 0.1)
            pairs.append((FrameGrid(clip, hop, grid_a), FrameGrid(clip, hop, grid_b)))
        truth = EventList(truth_events)
        cfg = PostProcessConfig(default_median_window=1)
        fit = fit_alpha(pairs, truth, cfg, vocab, objective="frame-bce")

        def bce_at(alpha):
            return frame_bce([combine_pair(a, b, alpha) for a, b in pairs], truth, vocab)

        fine = min((bce_at(i / 1000.0), i / 1000.0) for i in range(1001))
        assert abs(fit.alpha - fine[1]) <= 0.05

    def test_empty_dev_set(self):
        with pytest.raises(ValidationError):
            fit_alpha([], EventList([]), PostProcessConfig(), VOCAB2)


class TestLogisticFusion:
    def test_gradient_matches_finite_differences(self, rng):
        for _ in range(100):
            n = int(rng.integers(5, 40))
            m = int(rng.integers(1, 4))
            x = rng.random((n, m))
            y = (rng.random(n) < 0.5).astype(float)
            if y.min() == y.max():
                continue
            w = rng.normal(size=m)
            b = float(rng.normal())
            loss, gw, gb = logistic_loss_and_grad(w, b, x, y)
            eps = 1e-6
            for i in range(m):
                dw = np.zeros(m)
                dw[i] = eps
                lp, _, _ = logistic_loss_and_grad(w + dw, b, x, y)
                lm, _, _ = logistic_loss_and_grad(w - dw, b, x, y)
                fd = (lp - lm) / (2 * eps)
                assert gw[i] == pytest.approx(fd, rel=1e-6, abs=1e-9)
            lp, _, _ = logistic_loss_and_grad(w, b + eps, x, y)
            lm, _, _ = logistic_loss_and_grad(w, b - eps, x, y)
            assert gb == pytest.approx((lp - lm) / (2 * eps), rel=1e-6, abs=1e-9)

    def test_fit_beats_equal_average(self, rng):
        truth, oracle, noise = _oracle_pair_setup(rng)
        model_grids = [oracle, noise]
        model = fit_logistic_fusion(model_grids, truth, VOCAB2)
        fused = [apply_logistic_fusion(model, [a, b]) for a, b in zip(*model_grids)]
        avg = [fuse_average([a, b]) for a, b in zip(*model_grids)]
        assert frame_bce(fused, truth, VOCAB2) <= frame_bce(avg, truth, VOCAB2)

    def test_single_perfect_model_auc(self, rng):
        truth, oracle, _ = _oracle_pair_setup(rng)
        model = fit_logistic_fusion([oracle], truth, VOCAB2)
        fused = [apply_logistic_fusion(model, [g]) for g in oracle]
        # class "a": every positive frame must outscore every negative frame
        scores_pos, scores_neg = [], []
        by_clip = truth.by_clip()
        for g in fused:
            target = rasterize(
                EventList(by_clip.get(g.clip_id, [])), g.hop_seconds, g.n_frames,
                VOCAB2, clip_id=g.clip_id,
            ).values[:, 0]
            scores_pos.extend(g.values[target, 0].tolist())
            scores_neg.extend(g.values[~target, 0].tolist())
        assert min(scores_pos) > max(scores_neg)

    def test_degenerate_class_falls_back_to_average(self, rng):
        # class "b" never occurs: all-zero targets
        truth, oracle, noise = _oracle_pair_setup(rng)
        model = fit_logistic_fusion([oracle, noise], truth, VOCAB2)
        assert bool(model.fallback[1])
        assert not bool(model.fallback[0])
        fused = apply_logistic_fusion(model, [oracle[0], noise[0]])
        expected = (oracle[0].values[:, 1] + noise[0].values[:, 1]) / 2
        np.testing.assert_allclose(fused.values[:, 1], expected, atol=1e-15)

    def test_apply_zero_model_gives_half(self, rng):
        from sedfuse.fusion import LogisticFusionModel

        lm = LogisticFusionModel(
            ("m1", "m2"), VOCAB2.classes,
            np.zeros((2, 2)), np.zeros(2),
            np.zeros(2, dtype=np.int64), np.zeros(2), np.zeros(2, dtype=bool),
        )
        out = apply_logistic_fusion(lm, [random_grid(rng), random_grid(rng)])
        np.testing.assert_allclose(out.values, 0.5, atol=1e-15)

    def test_apply_matches_manual_sigmoid(self, rng):
        from sedfuse.fusion import LogisticFusionModel

        w = rng.normal(size=(2, 3))
        b = rng.normal(size=2)
        lm = LogisticFusionModel(
            ("m1", "m2", "m3"), VOCAB2.classes, w, b,
            np.zeros(2, dtype=np.int64), np.zeros(2), np.zeros(2, dtype=bool),
        )
        grids = [random_grid(rng) for _ in range(3)]
        out = apply_logistic_fusion(lm, grids)
        stack = np.stack([g.values for g in grids], axis=1)
        for c in range(2):
            z = stack[:, :, c] @ w[c] + b[c]
            np.testing.assert_allclose(
                out.values[:, c], 1 / (1 + np.exp(-z)), atol=1e-12
            )


class TestSweepBeta:
    def _setup(self, rng):
        truth, oracle, noise = _oracle_pair_setup(rng)
        table = ClassF1Table(("m1", "m2"), VOCAB2.classes, [[0.9, 0.5], [0.3, 0.5]])
        return truth, [oracle, noise], table

    def test_singleton(self, rng):
        truth, model_grids, table = self._setup(rng)
        cfg = PostProcessConfig(default_median_window=1)
        sweep = sweep_beta(model_grids, table, truth, [0.0], cfg, VOCAB2)
        assert sweep.beta == 0.0
        avg = [fuse_average(list(pair)) for pair in zip(*model_grids)]
        from sedfuse.metrics import CollarConfig, event_f1

        avg_f1 = event_f1(truth, decode_many(avg, cfg, VOCAB2), CollarConfig(), VOCAB2).macro_f1
        assert sweep.curve[0][1] == pytest.approx(avg_f1, abs=1e-12)

    def test_identical_columns_flat_min_beta(self, rng):
        truth, model_grids, _ = self._setup(rng)
        table = ClassF1Table(("m1", "m2"), VOCAB2.classes, [[0.6, 0.6], [0.6, 0.6]])
        cfg = PostProcessConfig(default_median_window=1)
        sweep = sweep_beta(model_grids, table, truth, [4.0, 0.0, 2.0], cfg, VOCAB2)
        assert len({s for _, s in sweep.curve}) == 1
        assert sweep.beta == 0.0

    def test_empty_betas(self, rng):
        truth, model_grids, table = self._setup(rng)
        with pytest.raises(ValidationError):
            sweep_beta(model_grids, table, truth, [], PostProcessConfig(), VOCAB2)


class TestF1TableIO:
    def test_save_load_round_trip(self, tmp_path, rng):
        table = ClassF1Table(("m1", "m2"), ("a", "b", "c"), rng.random((2, 3)))
        path = tmp_path / "f1_table.json"
        table.save(path)
        back = ClassF1Table.load(path)
        assert back.models == table.models
        assert back.classes == table.classes
        np.testing.assert_array_equal(back.values, table.values)

    def test_shape_mismatch(self):
        with pytest.raises(ValidationError):
            ClassF1Table(("m1",), ("a", "b"), [[0.1]])

    def test_range_check(self):
        with pytest.raises(ValidationError):
            ClassF1Table(("m1",), ("a",), [[1.5]])
