import logging

import numpy as np
import pandas as pd
import pytest

from src.cams.io import cams_path, save_cams
from src.cams.priors import make_priors
from src.config import RefineConfig
from src.datasets.masks import read_mask
from src.refinement import crf
from src.refinement.crf import crf_refine
from src.refinement.random_walk import build_affinity, disk_offsets, random_walk, transition_matrix
from src.refinement.refine import anchor_to_seeds, make_seeds, refine_dataset, refine_sample, with_background
from src.refinement.seeds import (
    UNKNOWN,
    SeedMap,
    binarize,
    seeds_from_priors,
    seeds_with_saliency,
    unknown_fraction,
)


def _two_region_image(h: int = 6, w: int = 8) -> np.ndarray:
    image = np.zeros((3, h, w))
    image[:, :, w // 2:] = 1.0
    return image


class TestSeeds:
    def test_priors_only_rule(self):
        prior = np.array([[[0.05, 0.3, 0.9]], [[0.02, 0.2, 0.5]]])
        seeds = seeds_from_priors(prior, delta_bg=0.1, delta_fg=0.4)
        assert seeds.labels.tolist() == [[0, UNKNOWN, 1]]
        assert seeds.unknown_fraction == pytest.approx(1 / 3)

    def test_argmax_class_is_one_based(self):
        prior = np.array([[[0.1]], [[0.8]]])
        assert seeds_from_priors(prior).labels[0, 0] == 2

    def test_saliency_overrides_priors(self):
        prior = np.array([[[0.9, 0.9, 0.2]]])
        saliency = np.array([[0.1, 0.9, 0.9]])
        seeds = seeds_with_saliency(prior, saliency, delta_fg=0.4, delta_sal=0.5)
        assert seeds.labels.tolist() == [[0, 1, UNKNOWN]]

    def test_saliency_shrinks_unknown_band(self):
        prior = np.full((2, 4, 4), 0.25)
        saliency = np.zeros((4, 4))
        assert seeds_from_priors(prior).unknown_fraction == 1.0
        assert seeds_with_saliency(prior, saliency).unknown_fraction == 0.0

    def test_salient_pixels_keep_confident_background(self):
        prior = np.array([[[0.02, 0.2, 0.9]]])
        saliency = np.ones((1, 3))
        seeds = seeds_with_saliency(prior, saliency, delta_fg=0.4, delta_sal=0.5, delta_bg=0.1)
        assert seeds.labels.tolist() == [[0, UNKNOWN, 1]]

    def test_guided_unknown_is_subset_of_priors_unknown(self):
        rng = np.random.default_rng(4)
        prior = rng.random((3, 12, 12)) * 0.6
        saliency = rng.random((12, 12))
        guided = seeds_with_saliency(prior, saliency).labels == UNKNOWN
        plain = seeds_from_priors(prior).labels == UNKNOWN
        assert not np.any(guided & ~plain)
        assert guided.sum() <= plain.sum()

    def test_seeds_follow_class_permutation(self):
        rng = np.random.default_rng(2)
        prior = rng.random((4, 6, 6))
        saliency = rng.random((6, 6))
        perm = np.array([2, 0, 3, 1])
        # channel k of the permuted prior is class perm[k]
        lookup = np.arange(256, dtype=np.uint8)
        lookup[1:5] = perm + 1
        for rule in (lambda p: seeds_from_priors(p), lambda p: seeds_with_saliency(p, saliency)):
            assert np.array_equal(lookup[rule(prior[perm]).labels], rule(prior).labels)

    def test_binarize(self):
        saliency = np.array([0.2, 0.5, 0.9])
        assert binarize(saliency, 0.5).tolist() == [False, True, True]
        with pytest.raises(ValueError, match="delta_sal"):
            binarize(saliency, 0.0)

    def test_invalid_thresholds(self):
        with pytest.raises(ValueError, match="delta_bg"):
            seeds_from_priors(np.zeros((1, 2, 2)), delta_bg=0.5, delta_fg=0.4)
        with pytest.raises(ValueError, match="shape"):
            seeds_with_saliency(np.zeros((1, 2, 2)), np.zeros((3, 3)))
        with pytest.raises(ValueError, match="saliency"):
            seeds_with_saliency(np.zeros((1, 2, 2)), np.full((2, 2), 2.0))

    def test_unknown_fraction_of_empty_map(self):
        assert unknown_fraction(np.zeros((0, 0), dtype=np.uint8)) == 0.0


class TestAffinity:
    def test_disk_offsets(self):
        offsets = disk_offsets(1)
        assert sorted(offsets) == [(-1, 0), (0, -1), (0, 0), (0, 1), (1, 0)]

    def test_symmetric_with_unit_diagonal(self):
        graph = build_affinity(np.random.default_rng(0).random((3, 5, 6)), radius=2, sigma=0.5)
        dense = graph.weights.toarray()
        assert dense.shape == (30, 30)
        assert np.allclose(dense, dense.T)
        assert np.allclose(np.diag(dense), 1.0)
        assert np.allclose(graph.degree, dense.sum(axis=1))

    def test_constant_image_falls_back_to_unit_sigma(self):
        graph = build_affinity(np.ones((3, 4, 4)), radius=1)
        assert graph.sigma == 1.0
        assert np.allclose(graph.weights.data, 1.0)

    def test_transition_rows_sum_to_one(self):
        graph = build_affinity(np.random.default_rng(1).random((3, 4, 5)), radius=2)
        T = transition_matrix(graph, beta=8)
        assert np.allclose(np.asarray(T.sum(axis=1)).ravel(), 1.0)

    def test_invalid_arguments(self):
        with pytest.raises(ValueError, match="radius"):
            build_affinity(np.zeros((3, 4, 4)), radius=0)
        with pytest.raises(ValueError, match="sigma"):
            build_affinity(np.zeros((3, 4, 4)), sigma=-1.0)


class TestRandomWalk:
    def test_zero_iterations_is_identity(self):
        prior = np.random.default_rng(0).random((2, 4, 4))
        graph = build_affinity(np.zeros((3, 4, 4)), radius=1)
        out = random_walk(prior, graph, t_iters=0)
        assert np.array_equal(out, prior) and out is not prior

    def test_output_is_a_distribution(self):
        prior = np.random.default_rng(2).random((3, 5, 5))
        graph = build_affinity(np.random.default_rng(3).random((3, 5, 5)), radius=2)
        out = random_walk(prior, graph, beta=2, t_iters=10)
        assert np.allclose(out.sum(axis=0), 1.0)
        assert out.min() >= 0.0

    def test_noisy_pixel_follows_its_region(self):
        image = _two_region_image()
        prior = np.zeros((2, 6, 8))
        prior[0, :, :4], prior[1, :, :4] = 0.6, 0.4
        prior[0, :, 4:], prior[1, :, 4:] = 0.4, 0.6
        prior[:, 2, 1] = [0.3, 0.7]
        graph = build_affinity(image, radius=2, sigma=0.1)
        labels = random_walk(prior, graph, beta=8, t_iters=20).argmax(axis=0)
        assert np.all(labels[:, :4] == 0)
        assert np.all(labels[:, 4:] == 1)

    def test_long_walk_on_constant_image_smooths_to_uniform(self):
        prior = np.random.default_rng(5).random((3, 8, 8))
        graph = build_affinity(np.ones((3, 8, 8)), radius=2)
        out = random_walk(prior, graph, beta=8, t_iters=500)
        spread = out.reshape(3, -1).max(axis=1) - out.reshape(3, -1).min(axis=1)
        assert np.all(spread < 1e-3)

    def test_shape_and_parameter_checks(self):
        graph = build_affinity(np.zeros((3, 4, 4)), radius=1)
        with pytest.raises(ValueError, match="does not match"):
            random_walk(np.zeros((2, 3, 3)), graph)
        with pytest.raises(ValueError, match="beta"):
            random_walk(np.zeros((2, 4, 4)), graph, beta=0.5)


class TestCrf:
    def test_no_plugin_returns_input(self):
        probs = np.random.default_rng(0).random((2, 3, 3))
        assert crf_refine(np.zeros((3, 3, 3)), probs) is probs

    def test_unknown_plugin(self):
        with pytest.raises(ValueError, match="registered plugins"):
            crf_refine(np.zeros((3, 3, 3)), np.zeros((2, 3, 3)), plugin="nope")

    def test_failing_plugin_falls_back(self, monkeypatch, caplog):
        def broken(image, probs):
            raise RuntimeError("backend missing")

        monkeypatch.setitem(crf.CRF_PLUGINS, "broken", broken)
        probs = np.ones((2, 3, 3)) / 2
        with caplog.at_level(logging.WARNING):
            assert crf_refine(np.zeros((3, 3, 3)), probs, plugin="broken") is probs
        assert "backend missing" in caplog.text

    def test_wrong_shape_is_ignored(self, monkeypatch):
        monkeypatch.setitem(crf.CRF_PLUGINS, "squash", lambda image, probs: probs[:1])
        probs = np.ones((2, 3, 3)) / 2
        assert crf_refine(np.zeros((3, 3, 3)), probs, plugin="squash") is probs

    def test_registered_plugin_is_applied(self, monkeypatch):
        monkeypatch.setitem(crf.CRF_PLUGINS, "flip", lambda image, probs: probs[::-1])
        probs = np.stack([np.zeros((2, 2)), np.ones((2, 2))])
        assert np.array_equal(crf_refine(np.zeros((3, 2, 2)), probs, plugin="flip"), probs[::-1])

    def test_dense_crf_is_registered(self):
        assert "pydensecrf" in crf.CRF_PLUGINS


class TestRefineSample:
    def test_with_background(self):
        prior = np.array([[[0.7, 0.0, 1.2]]])
        out = with_background(prior)
        assert out.shape == (2, 1, 3)
        assert np.allclose(out[0], [[0.3, 1.0, 0.0]])

    def test_anchor_to_seeds(self):
        prior_bg = np.full((3, 1, 3), 1 / 3)
        out = anchor_to_seeds(prior_bg, SeedMap(np.array([[0, 2, UNKNOWN]], dtype=np.uint8)))
        assert out[:, 0, 0].tolist() == [1.0, 0.0, 0.0]
        assert out[:, 0, 1].tolist() == [0.0, 0.0, 1.0]
        assert np.allclose(out[:, 0, 2], 1 / 3)

    def test_anchor_checks(self):
        with pytest.raises(ValueError, match="does not match"):
            anchor_to_seeds(np.zeros((2, 2, 2)), SeedMap(np.zeros((3, 3), dtype=np.uint8)))
        with pytest.raises(ValueError, match="exceeds"):
            anchor_to_seeds(np.zeros((2, 1, 1)), SeedMap(np.array([[4]], dtype=np.uint8)))

    def test_refines_two_regions(self):
        image = _two_region_image()
        prior = np.zeros((1, 6, 8))
        prior[0, :, 4:] = 0.8
        prior[0, 1, 1] = 0.6
        seeds = seeds_from_priors(prior, delta_bg=0.1, delta_fg=0.7)
        config = RefineConfig(radius=2, sigma=0.1, t_iters=20)
        mask = refine_sample(image, prior, seeds, config)
        assert mask.dtype == np.uint8
        assert np.all(mask[:, :4] == 0)
        assert np.all(mask[:, 4:] == 1)


def test_make_seeds_and_refine_dataset(tmp_path, dataset, toy_net):
    priors = tmp_path / "priors"
    make_priors(toy_net(dataset.num_classes), dataset, priors, scales=(1.0,), use_flip=False)
    saliency = tmp_path / "saliency"
    for sample_id in dataset.ids:
        save_cams(cams_path(saliency, sample_id), np.zeros((1, 32, 32), dtype=np.float32))

    config = RefineConfig(radius=2, t_iters=3)
    stats = make_seeds(dataset, priors, tmp_path / "seeds", config, saliency_dir=saliency)
    assert len(stats) == len(dataset)
    assert stats["saliency_guided"].all()
    assert (stats["unknown_fraction"] == 0.0).all()
    assert (stats["unknown_fraction"] <= stats["unknown_fraction_priors"]).all()
    on_disk = pd.read_csv(tmp_path / "seeds" / "stats.csv")
    assert list(on_disk["sample_id"]) == dataset.ids

    written = refine_dataset(dataset, priors, tmp_path / "masks", config, seeds_dir=tmp_path / "seeds", workers=2)
    assert [p.stem for p in written] == dataset.ids
    for path in written:
        mask = read_mask(path)
        assert mask.shape == (32, 32)
        assert mask.max() <= dataset.num_classes


def test_make_seeds_without_saliency(tmp_path, dataset, toy_net):
    priors = tmp_path / "priors"
    make_priors(toy_net(dataset.num_classes), dataset, priors, scales=(1.0,), use_flip=False)
    stats = make_seeds(dataset, priors, tmp_path / "seeds", RefineConfig(use_saliency=False))
    assert not stats["saliency_guided"].any()
    assert stats["unknown_fraction_priors"].isna().all()
