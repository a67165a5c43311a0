#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Tests for bags, attention-based MIL and selective fine-tuning.
"""

import copy

import numpy as np
import pytest
import torch

from crossmag.mil import (
    ActivationBudgetError,
    Bag,
    EmptyBagError,
    FoldError,
    MilRunConfig,
    SlidePatches,
    abmil_forward,
    build_bags,
    build_head,
    embed_patches,
    kfold_by_slide,
    load_bags,
    run_block_ablation,
    save_bags,
    train_e2e_fold,
    train_mil_e2e,
    train_mil_frozen,
)
from crossmag.mil.bags import store_hashes
from crossmag.models import build_encoder, preset
from crossmag.pyramid import build_manifest


@pytest.fixture
def small_slides():
    """Four slides of three random 5x patches, labels alternating."""
    rng = np.random.default_rng(0)
    return [
        SlidePatches(f"slide_{i}", rng.integers(0, 256, size=(3, 224, 224, 3), dtype=np.uint8), i % 2)
        for i in range(4)
    ]


def quick_config(**overrides):
    values = {"folds": 2, "epochs": 1, "n_boot": 10, "lr": 0.01, "attention_dim": 8}
    values.update(overrides)
    return MilRunConfig(**values)


class TestAbmil:
    def test_attention_is_a_distribution(self):
        for gated in (False, True):
            head = build_head(8, 3, attention_dim=4, gated=gated, seed=0)
            scores, attention = abmil_forward(np.random.default_rng(1).normal(size=(9, 8)).astype(np.float32), head)
            assert scores.shape == (3,)
            assert attention.shape == (9,)
            assert bool((attention >= 0).all())
            assert float(attention.sum()) == pytest.approx(1.0, abs=1e-6)

    def test_hand_computed_oracle(self):
        head = build_head(2, 2, attention_dim=1, seed=0).double()
        with torch.no_grad():
            head.V.weight.copy_(torch.tensor([[1.0, 0.0]]))
            head.w.weight.copy_(torch.tensor([[2.0]]))
            head.classifier.weight.copy_(torch.eye(2))
            head.classifier.bias.zero_()
        instances = np.array([[0.0, 1.0], [1.0, 3.0]])
        scores, attention = abmil_forward(instances, head)

        logits = np.array([0.0, 2.0 * np.tanh(1.0)])
        expected_attention = np.exp(logits) / np.exp(logits).sum()
        expected_scores = expected_attention @ instances
        assert np.allclose(attention.detach().numpy(), expected_attention)
        assert np.allclose(scores.detach().numpy(), expected_scores)

    def test_permutation_invariance(self):
        head = build_head(4, 2, attention_dim=3, gated=True, seed=2).double()
        instances = np.random.default_rng(3).normal(size=(6, 4))
        order = np.array([5, 0, 3, 1, 4, 2])
        scores, attention = abmil_forward(instances, head)
        shuffled_scores, shuffled_attention = abmil_forward(instances[order], head)
        assert torch.allclose(scores, shuffled_scores)
        assert torch.allclose(attention[order], shuffled_attention)

    def test_empty_bag(self):
        head = build_head(4, 2, seed=0)
        with pytest.raises(EmptyBagError):
            abmil_forward(torch.zeros(0, 4), head)
        with pytest.raises(EmptyBagError):
            Bag("s", np.zeros((0, 4), dtype=np.float32), 0)


class TestFolds:
    def test_every_slide_tested_once(self):
        labels = [0, 1] * 7 + [2] * 3
        splits = kfold_by_slide(labels, 5, seed=3)
        combined = np.concatenate(splits)
        assert sorted(combined.tolist()) == list(range(len(labels)))

    def test_folds_are_stratified(self):
        labels = np.array([0] * 10 + [1] * 10)
        for test_idx in kfold_by_slide(labels, 5, seed=0):
            assert np.bincount(labels[test_idx], minlength=2).tolist() == [2, 2]

    def test_deterministic(self):
        labels = [0, 1, 1, 0, 1, 0, 0, 1]
        first = kfold_by_slide(labels, 2, seed=9)
        second = kfold_by_slide(labels, 2, seed=9)
        assert all(np.array_equal(a, b) for a, b in zip(first, second))

    def test_too_few_slides(self):
        with pytest.raises(FoldError):
            kfold_by_slide([0, 1], 3, seed=0)


class TestFrozenMil:
    def test_template_head_and_bags_untouched(self, make_bags):
        bags = make_bags(n_slides=8, dim=4, n_instances=5)
        snapshot = [bag.embeddings.copy() for bag in bags]
        head = build_head(4, 2, attention_dim=8, seed=0)
        before = copy.deepcopy(head.state_dict())

        result = train_mil_frozen(bags, head, quick_config(), progress=False)

        for name, tensor in head.state_dict().items():
            assert torch.equal(tensor, before[name])
        assert all(np.array_equal(bag.embeddings, kept) for bag, kept in zip(bags, snapshot))
        assert len(result.heads) == 2
        assert sorted(p["slide_id"] for p in result.predictions) == sorted(b.slide_id for b in bags)
        assert set(result.frame()["mode"]) == {"frozen"}

    def test_external_cohort_scored_by_every_fold(self, make_bags):
        bags = make_bags(n_slides=8, dim=4, n_instances=5)
        external = make_bags(n_slides=4, dim=4, n_instances=5, seed=1)
        result = train_mil_frozen(bags, build_head(4, 2, seed=0), quick_config(), external=external, progress=False)
        frame = result.frame()
        assert frame.groupby("split").size().to_dict() == {"external": 2, "test": 2}

    @pytest.mark.slow
    def test_learns_separable_bags(self, make_bags):
        bags = make_bags(n_slides=20, dim=8, n_instances=12)
        config = quick_config(folds=4, epochs=30, attention_dim=16)
        result = train_mil_frozen(bags, build_head(8, 2, attention_dim=16, seed=0), config, progress=False)
        assert result.summary()["auc_mean"].iloc[0] > 0.8


class TestBagStore:
    def test_build_save_load(self, synthetic_pairs, toy_student, toy_teacher, tmp_path):
        manifest = build_manifest(synthetic_pairs, tmp_path / "data")
        bags = build_bags(manifest, tmp_path / "data", toy_student, view="lowmag", workers=2)
        assert [bag.slide_id for bag in bags] == manifest.slide_ids()
        assert all(bag.embeddings.shape == (1, 16) for bag in bags)

        teacher_bags = build_bags(manifest, tmp_path / "data", toy_teacher, view="children_mean")
        assert all(bag.embeddings.shape == (1, 32) for bag in teacher_bags)

        save_bags(bags, tmp_path / "store", encoder_hash="abc123")
        loaded = load_bags(tmp_path / "store", slide_ids=[bag.slide_id for bag in bags])
        for original, reloaded in zip(bags, loaded):
            assert np.array_equal(original.embeddings, reloaded.embeddings)
            assert original.label == reloaded.label
        assert set(store_hashes(tmp_path / "store").values()) == {"abc123"}

    def test_unknown_view(self, synthetic_pairs, toy_student, tmp_path):
        manifest = build_manifest(synthetic_pairs[:1], tmp_path)
        with pytest.raises(ValueError):
            build_bags(manifest, tmp_path, toy_student, view="highmag")


class TestEndToEnd:
    def test_zero_blocks_matches_frozen_path(self, small_slides, toy_student):
        config = quick_config(mode="e2e", n_trainable_blocks=0)
        head = build_head(16, 2, attention_dim=8, seed=0)
        e2e = train_mil_e2e(small_slides, toy_student, head, config, progress=False)

        bags = [Bag(s.slide_id, embed_patches(toy_student, s.patches), s.label) for s in small_slides]
        frozen = train_mil_frozen(bags, head, quick_config(), progress=False)

        probs = [[v for k, v in p.items() if k.startswith("prob_")] for p in e2e.predictions]
        expected = [[v for k, v in p.items() if k.startswith("prob_")] for p in frozen.predictions]
        assert np.allclose(probs, expected)

    @pytest.mark.parametrize("k", [0, 1, 2, 4])
    def test_only_trainable_blocks_change(self, small_slides, k):
        encoder = build_encoder(preset("toy_student", depth=4), seed=1)
        before = {name: p.detach().clone() for name, p in encoder.named_parameters()}
        head = build_head(16, 2, attention_dim=8, seed=0)
        config = quick_config(mode="e2e", n_trainable_blocks=k, epochs=3, max_patches_per_bag=2)
        encoder, _ = train_e2e_fold(small_slides, encoder, head, config, seed=0, max_steps=10)

        for name, param in encoder.named_parameters():
            in_trainable_block = any(name.startswith(f"blocks.{i}.") for i in range(4 - k, 4))
            if in_trainable_block:
                continue
            if name.startswith("norm.") and k > 0:
                continue
            assert torch.equal(param.detach(), before[name]), name
        if k > 0:
            changed = [
                name
                for name, param in encoder.named_parameters()
                if name.startswith("blocks.3.") and not torch.equal(param.detach(), before[name])
            ]
            assert changed

    def test_activation_budget(self, small_slides, toy_student):
        config = quick_config(mode="e2e", n_trainable_blocks=1, activation_budget_mb=1e-6)
        with pytest.raises(ActivationBudgetError) as excinfo:
            train_e2e_fold(small_slides, toy_student, build_head(16, 2, seed=0), config, seed=0)
        assert excinfo.value.n_patches == 3

    def test_block_ablation_one_row_per_k(self, small_slides, toy_student):
        config = quick_config(max_patches_per_bag=2)
        result = run_block_ablation(
            small_slides, toy_student, build_head(16, 2, attention_dim=8, seed=0), config, grid=(0, 1, "all"),
            progress=False,
        )
        assert result.summary["k"].tolist() == [0, 1, 2]
        assert len(result.folds) == 3 * config.folds
        assert set(result.folds["mode"]) == {"e2e"}
