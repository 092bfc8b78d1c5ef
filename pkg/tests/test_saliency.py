import warnings

import numpy as np
import pandas as pd
import pytest
import torch
from PIL import Image
from torch.autograd import gradcheck

from src.cams.io import cams_path, load_cams
from src.cams.priors import make_priors
from src.config import C2amConfig, NetworkConfig
from src.saliency.losses import (
    COS_EPS,
    HintMask,
    SimilarityTriple,
    c2am_components,
    c2am_loss,
    c2amh_loss,
    cosine_matrix,
    extract_hints,
    fg_bg_features,
    hint_loss,
    rank_weights,
)
from src.refinement.seeds import binarize
from src.saliency.network import Disentangler, build_disentangler
from src.saliency.trainer import (
    DIAGNOSTICS_CSV,
    METRICS_LOG,
    MODEL_FILE,
    emit_saliency,
    hint_precision,
    make_saliency,
    saliency_diagnostics,
    train_c2amh,
)

NETWORK = NetworkConfig(channels=[4, 8], downsample=1, groups=2)


def _features(seed: int, n: int = 4, k: int = 6):
    gen = torch.Generator().manual_seed(seed)
    v_f = (torch.rand(n, k, dtype=torch.float64, generator=gen) + 0.1).requires_grad_()
    v_b = (torch.rand(n, k, dtype=torch.float64, generator=gen) + 0.1).requires_grad_()
    return v_f, v_b


class TestSimilarities:
    def test_cosine_is_rectified_and_clamped(self):
        a = torch.tensor([[1.0, 0.0], [-1.0, 0.0]])
        s = cosine_matrix(a)
        assert s[0, 1] == pytest.approx(COS_EPS)
        assert s[0, 0] == pytest.approx(1.0 - COS_EPS)

    def test_rank_weights(self):
        s = torch.tensor([
            [0.9, 0.5, 0.7],
            [0.5, 0.9, 0.5],
            [0.7, 0.5, 0.9],
        ])
        w = rank_weights(s, alpha=0.25)
        assert torch.all(torch.diagonal(w) == 0)
        assert w[0, 2] == pytest.approx(1.0)
        assert w[0, 1] == pytest.approx(float(np.exp(-0.25)))
        # tie in row 1 broken by column index
        assert w[1, 0] == pytest.approx(1.0)
        assert w[1, 2] == pytest.approx(float(np.exp(-0.25)))

    def test_rank_weights_need_two_samples(self):
        with pytest.raises(ValueError, match="at least 2"):
            rank_weights(torch.ones(1, 1), 0.25)

    def test_components_reject_saturated_similarity(self):
        trip = SimilarityTriple(s_f=torch.ones(2, 2), s_b=torch.full((2, 2), 0.5), s_neg=torch.full((2, 2), 0.5))
        with pytest.raises(ValueError, match="strictly inside"):
            c2am_components(trip, torch.ones(2, 2), torch.ones(2, 2))

    def test_components_on_graph_tensors_do_not_warn(self):
        v_f, v_b = _features(0)
        trip = SimilarityTriple.from_features(v_f, v_b)
        w = rank_weights(trip.s_f, 0.25)
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            terms = c2am_components(trip, w, w)
        assert all(t.requires_grad for t in terms.values())


class TestGradients:
    @pytest.mark.parametrize("seed", range(20))
    def test_c2am_loss(self, seed):
        v_f, v_b = _features(seed)
        trip = SimilarityTriple.from_features(v_f.detach(), v_b.detach())
        w_f, w_b = rank_weights(trip.s_f, 0.25), rank_weights(trip.s_b, 0.25)

        def loss(a, b):
            return c2am_loss(SimilarityTriple.from_features(a, b), w_f, w_b)

        assert gradcheck(loss, (v_f, v_b), eps=1e-6, atol=1e-8, rtol=1e-4)

    @pytest.mark.parametrize("seed", range(20))
    def test_c2amh_loss(self, seed):
        v_f, v_b = _features(seed)
        gen = torch.Generator().manual_seed(100 + seed)
        logits = torch.randn(4, 5, 5, dtype=torch.float64, generator=gen, requires_grad=True)
        hints = torch.rand(4, 5, 5, generator=gen) > 0.5
        trip = SimilarityTriple.from_features(v_f.detach(), v_b.detach())
        w_f, w_b = rank_weights(trip.s_f, 0.25), rank_weights(trip.s_b, 0.25)

        def loss(a, b, z):
            return c2amh_loss(SimilarityTriple.from_features(a, b), w_f, w_b, torch.sigmoid(z), hints, 1.0)

        assert gradcheck(loss, (v_f, v_b, logits), eps=1e-6, atol=1e-8, rtol=1e-4)


class TestHints:
    def test_extract_hints_thresholds(self):
        prior = torch.tensor([[[0.9, 0.2, 0.05]], [[0.1, 0.3, 0.0]]])
        hints = extract_hints(prior, delta_fg=0.4, delta_bg=0.1)
        assert hints.fg.tolist() == [[True, False, False]]
        assert hints.bg.tolist() == [[False, False, True]]

    def test_extract_hints_threshold_order(self):
        with pytest.raises(ValueError, match="delta_bg < delta_fg"):
            extract_hints(torch.zeros(1, 2, 2), delta_fg=0.1, delta_bg=0.4)

    def test_hint_loss(self):
        P = torch.full((2, 3, 3), 0.5)
        fg = torch.zeros(2, 3, 3, dtype=torch.bool)
        assert float(hint_loss(P, fg)) == 0.0
        fg[0, 0, 0] = True
        # images without hints do not dilute the mean
        assert float(hint_loss(P, fg)) == pytest.approx(np.log(2.0))

    def test_hint_loss_pools_pixels_across_images(self):
        P = torch.full((2, 2, 2), 0.5)
        P[1] = 0.25
        fg = torch.zeros(2, 2, 2, dtype=torch.bool)
        fg[0, 0, 0] = True
        fg[1] = True
        expected = (np.log(2.0) + 4 * np.log(4.0)) / 5
        assert float(hint_loss(P, fg)) == pytest.approx(expected)

    def test_hint_precision(self):
        gt = np.array([[0, 1], [255, 0]], dtype=np.uint8)
        hints = HintMask(
            fg=torch.tensor([[True, True], [True, False]]),
            bg=torch.tensor([[True, False], [False, True]]),
        )
        result = hint_precision(hints, gt, "x")
        assert result.fg_precision == pytest.approx(0.5)
        assert result.bg_precision == pytest.approx(1.0)
        assert result.fg_pixels == 2


class TestDisentangler:
    def test_untrained_model_predicts_half(self):
        features, P = Disentangler([4, 8], 1, 2)(torch.rand(2, 3, 16, 16))
        assert features.shape == (2, 8, 8, 8)
        assert torch.allclose(P, torch.full((2, 8, 8), 0.5))

    def test_fg_bg_features_partition(self):
        A = torch.rand(2, 4, 9)
        v_f, v_b = fg_bg_features(A, torch.ones(2, 9))
        assert torch.allclose(v_f, A.mean(dim=-1))
        assert torch.all(v_b == 0)

    def test_init_from_classifier(self, toy_net):
        classifier = toy_net(5)
        model = build_disentangler(NETWORK)
        model.init_from_classifier(classifier)
        for a, b in zip(model.trunk.parameters(), classifier.trunk.parameters()):
            assert torch.equal(a, b)

    def test_emit_and_binarize(self, make_sample):
        model = build_disentangler(NETWORK)
        saliency = emit_saliency(model, make_sample(size=16).image)
        assert saliency.shape == (16, 16)
        assert torch.all(binarize(saliency, 0.5))
        with pytest.raises(ValueError, match="delta_sal"):
            binarize(saliency, 1.0)


def test_train_and_emit_saliency(tmp_path, dataset, toy_net):
    priors = tmp_path / "priors"
    make_priors(toy_net(dataset.num_classes), dataset, priors, scales=(1.0,), use_flip=False)
    config = C2amConfig(batch_size=3, epochs=1, crop_size=16, seed=0)

    run = train_c2amh(dataset, priors, config, NETWORK, tmp_path / "c2amh", classifier=toy_net(dataset.num_classes))
    # 8 samples in batches of 3: the last batch of 2 trains, nothing is skipped
    assert run.steps == 3 and run.skipped_batches == 0
    lines = (tmp_path / "c2amh" / METRICS_LOG).read_text().splitlines()
    assert len(lines) == 3 and "hint=" in lines[0]
    assert (tmp_path / "c2amh" / MODEL_FILE).exists()

    out = tmp_path / "saliency"
    make_saliency(run.model, dataset, out)
    sample = dataset[0]
    png = np.array(Image.open(out / f"{sample.id}.png"))
    sidecar = load_cams(cams_path(out, sample.id))
    assert png.shape == sample.image.shape[-2:]
    assert sidecar.shape == (1, *sample.image.shape[-2:])
    assert np.array_equal(png, np.clip(np.rint(sidecar[0].astype(np.float64) * 255), 0, 255).astype(np.uint8))

    table = saliency_diagnostics(dataset, priors, out, config)
    assert len(table) == len(dataset)
    expected = {"fg_precision", "bg_precision", "saliency_fg", "saliency_bg", "salient_fraction", "anchored"}
    assert set(table.columns) >= expected
    assert table["salient_fraction"].between(0.0, 1.0).all()
    assert pd.read_csv(out / DIAGNOSTICS_CSV).shape[0] == len(dataset)


def test_single_image_batches_are_skipped(tmp_path, dataset, toy_net):
    priors = tmp_path / "priors"
    make_priors(toy_net(dataset.num_classes), dataset, priors, scales=(1.0,), use_flip=False)
    config = C2amConfig(batch_size=7, epochs=1, crop_size=16, use_hints=False, seed=0)
    run = train_c2amh(dataset, priors, config, NETWORK, tmp_path / "c2am")
    assert run.steps == 1 and run.skipped_batches == 1
    assert "hint=" not in (tmp_path / "c2am" / METRICS_LOG).read_text()
