import numpy as np
import pytest
import torch

from stmae.downstream import (
    ChangeHead,
    ClassificationHead,
    HeadConfig,
    SegmentationHead,
    compute_metrics,
    encode_for_downstream,
    finetune,
    parameter_hash,
)
from stmae.downstream.heads import _MultiScaleFuseHead, reduce_stage_features
from stmae.downstream.metrics import f1_from_precision_recall
from stmae.data.synthetic import GeneratorConfig, generate_change_pair, generate_labeled_tile, generate_synthetic_scene
from stmae.model import ModelConfig, build_autoencoder
from stmae.model.encoder import TokenMap


def _features(b=2, t=2, g=2, n=16, dims=(8, 16, 32, 64), seed=0):
    gen = torch.Generator().manual_seed(seed)
    return [
        TokenMap(torch.rand(b, t, g, n // 2**s, n // 2**s, dims[s], generator=gen), s + 1)
        for s in range(4)
    ]


class TestSegmentationHead:
    def test_output_shape(self):
        head = SegmentationHead([8, 16, 32, 64], num_classes=6, hidden=32)
        logits = head(_features(), out_hw=(64, 64))
        assert logits.shape == (2, 6, 64, 64)

    def test_constant_features_give_constant_logits(self):
        head = SegmentationHead([8, 16, 32, 64], num_classes=4, hidden=16)
        feats = [
            TokenMap(torch.ones(1, 2, 2, 16 // 2**s, 16 // 2**s, d) * 0.3, s + 1)
            for s, d in enumerate((8, 16, 32, 64))
        ]
        logits = head(feats, out_hw=(32, 32))
        flat = logits.permute(0, 2, 3, 1).reshape(-1, 4)
        assert torch.allclose(flat, flat[0].expand_as(flat), atol=1e-5)

    def test_exactly_three_linear_layers_deep(self):
        head = SegmentationHead([8, 16, 32, 64], num_classes=3, hidden=16)
        assert head.linear_layer_depth == 3
        # Census: the ladder owns per-stage projections (parallel, depth 1),
        # one fuse layer, one classifier, and nothing else learnable.
        linears = [m for m in head.modules() if isinstance(m, torch.nn.Linear)]
        assert len(linears) == 4 + 1 + 1

    def test_stage_count_mismatch_rejected(self):
        head = SegmentationHead([8, 16, 32, 64], num_classes=3, hidden=16)
        with pytest.raises(ValueError, match="stages"):
            head(_features()[:2], out_hw=(32, 32))


class TestClassificationHead:
    def test_logit_length(self):
        head = ClassificationHead(64, num_classes=7)
        assert head(_features()).shape == (2, 7)

    def test_exactly_one_linear_layer(self):
        head = ClassificationHead(64, num_classes=7)
        assert head.linear_layer_depth == 1
        assert len([m for m in head.modules() if isinstance(m, torch.nn.Linear)]) == 1

    def test_spatial_permutation_invariance(self):
        head = ClassificationHead(64, num_classes=5)
        feats = _features()
        logits = head(feats)
        stage4 = feats[3].tensor
        perm = torch.randperm(stage4.shape[3])
        shuffled = stage4[:, :, :, perm][:, :, :, :, perm]
        logits_perm = head(feats[:3] + [TokenMap(shuffled, 4)])
        assert torch.allclose(logits, logits_perm, atol=1e-5)


class TestChangeHead:
    def test_identical_inputs_never_prefer_change(self):
        head = ChangeHead([8, 16, 32, 64], hidden=16)
        feats = _features(seed=3)
        logits = head(feats, feats, out_hw=(32, 32))
        assert (logits[:, 1] <= logits[:, 0] + 1e-7).all()

    def test_symmetric_in_inputs(self):
        head = ChangeHead([8, 16, 32, 64], hidden=16)
        # Train-like perturbation so the zero-initialized classifier is not
        # the only thing making outputs equal.
        with torch.no_grad():
            head.ladder.classify.weight.normal_()
            head.ladder.classify.bias.normal_()
        fa, fb = _features(seed=1), _features(seed=2)
        ab = head(fa, fb, out_hw=(32, 32))
        ba = head(fb, fa, out_hw=(32, 32))
        assert torch.equal(ab, ba)

    def test_mismatched_stage_shapes_rejected(self):
        head = ChangeHead([8, 16, 32, 64], hidden=16)
        with pytest.raises(ValueError, match="differ"):
            head(_features(), _features(n=8), out_hw=(32, 32))


class TestReduce:
    def test_mean_and_last(self):
        feats = _features()
        mean = reduce_stage_features(feats, "mean")
        last = reduce_stage_features(feats, "last")
        assert mean[0].shape == (2, 16, 16, 8)
        expected_last = feats[0].tensor[:, -1].mean(dim=1)
        assert torch.allclose(last[0], expected_last)


class TestMetrics:
    def test_perfect_predictions_score_100(self):
        preds = torch.tensor([0, 1, 2, 1, 0])
        report = compute_metrics(preds, preds, task="classification", num_classes=3)
        assert report.top1 == 100.0
        assert report.miou == 100.0
        assert all(f == 100.0 for f in report.f1)

    def test_f1_arithmetic_from_reference_row(self):
        assert round(f1_from_precision_recall(96.0, 95.0), 1) == 95.5

    def test_three_class_confusion_hand_computed(self):
        # Confusion [[2,1,0],[0,3,0],[1,0,3]]: rows true, columns predicted.
        true = [0, 0, 0, 1, 1, 1, 2, 2, 2, 2]
        pred = [0, 0, 1, 1, 1, 1, 0, 2, 2, 2]
        report = compute_metrics(np.array(pred), np.array(true), task="classification", num_classes=3)
        assert report.confusion == [[2, 1, 0], [0, 3, 0], [1, 0, 3]]
        assert report.precision[0] == pytest.approx(100 * 2 / 3)
        assert report.recall[0] == pytest.approx(100 * 2 / 3)
        assert report.precision[1] == pytest.approx(100 * 3 / 4)
        assert report.recall[1] == pytest.approx(100.0)
        assert report.precision[2] == pytest.approx(100.0)
        assert report.recall[2] == pytest.approx(100 * 3 / 4)
        assert report.top1 == pytest.approx(80.0)
        assert report.support == [3, 3, 4]

    def test_label_permutation_symmetry(self):
        rng = np.random.default_rng(0)
        true = rng.integers(0, 4, 200)
        pred = rng.integers(0, 4, 200)
        base = compute_metrics(pred, true, task="classification", num_classes=4)
        perm = np.array([2, 3, 1, 0])
        permuted = compute_metrics(perm[pred], perm[true], task="classification", num_classes=4)
        inverse = np.argsort(perm)
        for k in range(4):
            assert permuted.precision[perm[k]] == pytest.approx(base.precision[k])
            assert permuted.recall[perm[k]] == pytest.approx(base.recall[k])
        assert permuted.top1 == pytest.approx(base.top1)
        assert permuted.miou == pytest.approx(base.miou)
        assert inverse is not None

    def test_bounds_and_row_sums(self):
        rng = np.random.default_rng(3)
        true = rng.integers(0, 5, 300)
        pred = rng.integers(0, 5, 300)
        report = compute_metrics(pred, true, task="segmentation", num_classes=5)
        cm = np.array(report.confusion)
        assert (cm.sum(axis=1) == np.bincount(true, minlength=5)).all()
        for metric in (report.precision, report.recall, report.f1, [report.top1, report.miou]):
            assert all(0.0 <= v <= 100.0 for v in metric)

    def test_map_from_scores(self):
        true = np.array([0, 0, 1, 1])
        scores = np.array([[0.9, 0.1], [0.8, 0.2], [0.3, 0.7], [0.6, 0.4]])
        pred = scores.argmax(axis=1)
        report = compute_metrics(pred, true, task="classification", scores=scores, num_classes=2)
        # class 0 ranking: s0 (P), s1 (P), s3 (N)... AP_0 = 1; class 1
        # ranking by score: s2 (P), s3 (P), ... AP_1 = 1.
        assert report.mean_ap == pytest.approx(100.0)

    def test_empty_input_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            compute_metrics(np.array([]), np.array([]), task="classification", num_classes=2)

    def test_table_and_json_render(self):
        report = compute_metrics(
            np.array([0, 1]), np.array([0, 1]), task="classification",
            num_classes=2, class_names=["water", "grass"],
        )
        table = report.to_table()
        assert "water" in table and "top-1" in table
        assert '"top1": 100.0' in report.to_json()


class TestFinetuneProtocol:
    def test_frozen_encoder_hash_unchanged(self):
        cfg = ModelConfig.tiny()
        encoder = build_autoencoder(cfg, 0).encoder
        gen = GeneratorConfig(
            height=16, width=16, channels=4, frames=2,
            classes=tuple(
                type(c)(c.name, c.weight, c.base[:4], c.season_amp, c.season_phase)
                for c in GeneratorConfig().classes
            ),
            timestamps=(15, 195), n_regions=1,
        )
        data = [generate_labeled_tile(i, gen, i % 3) for i in range(9)]
        result = finetune(
            HeadConfig("classification", num_classes=3, encoder_frozen=True),
            cfg, encoder, data, data, steps=10, batch_size=4, lr=0.05, seed=0,
        )
        assert result.encoder_hash_before == result.encoder_hash_after
        assert parameter_hash(encoder) == result.encoder_hash_after

    def test_unfrozen_encoder_changes(self):
        cfg = ModelConfig.tiny()
        encoder = build_autoencoder(cfg, 0).encoder
        gen = GeneratorConfig(
            height=16, width=16, channels=4, frames=2,
            classes=tuple(
                type(c)(c.name, c.weight, c.base[:4], c.season_amp, c.season_phase)
                for c in GeneratorConfig().classes
            ),
            timestamps=(15, 195), n_regions=1,
        )
        data = [generate_labeled_tile(i, gen, i % 3) for i in range(6)]
        result = finetune(
            HeadConfig("classification", num_classes=3, encoder_frozen=False),
            cfg, encoder, data, data, steps=5, batch_size=4, lr=0.01, seed=0,
        )
        assert result.encoder_hash_before != result.encoder_hash_after

    def test_single_frame_inputs_adapted_by_repetition(self):
        from stmae.downstream.finetune import adapt_frames

        x = torch.rand(1, 4, 8, 8)
        out = adapt_frames(x, 6)
        assert out.shape == (6, 4, 8, 8)
        for t in range(6):
            assert torch.equal(out[t], x[0])

    def test_downstream_encoding_full_visibility(self, desk_cfg):
        model = build_autoencoder(desk_cfg, 0)
        values = torch.rand(1, 6, 6, 64, 64)
        feats = encode_for_downstream(model.encoder, values, desk_cfg.grid_for(64, 64))
        assert len(feats) == 4
        assert feats[0].tensor.shape == (1, 6, 3, 16, 16, 8)
