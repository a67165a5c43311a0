#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Tests for cross-magnification distillation.
"""

import csv

import numpy as np
import pytest
import torch

from crossmag.distill import (
    DegenerateFeatureError,
    DistillConfig,
    DistillTrainer,
    NonFiniteLossError,
    build_heads,
    cosine_loss,
    distillation_loss,
    ema_update,
    ema_update_module,
    local_loss,
    lr_at,
    project,
    spatial_pool,
    teacher_global,
    total_loss,
    train_distill,
)
from crossmag.distill.trainer import LOSS_LOG_FIELDS, state_digest
from crossmag.models import ShapeError, build_encoder, encode_teacher, preset
from crossmag.pyramid import generate_synthetic_wsi, tessellate


def brute_force_pool(tokens: torch.Tensor, grid_side: int) -> torch.Tensor:
    window = grid_side // 4
    batch, _, dim = tokens.shape
    out = torch.zeros(batch, 16, dim, dtype=tokens.dtype)
    for i in range(16):
        rows = range((i // 4) * window, (i // 4) * window + window)
        cols = range((i % 4) * window, (i % 4) * window + window)
        members = [r * grid_side + c for r in rows for c in cols]
        out[:, i] = tokens[:, members].mean(dim=1)
    return out


class TestPooling:
    @pytest.mark.parametrize("grid_side", [4, 8, 16])
    def test_matches_brute_force(self, grid_side):
        generator = torch.Generator().manual_seed(0)
        tokens = torch.randn(2, grid_side * grid_side, 5, dtype=torch.float64, generator=generator)
        assert torch.allclose(spatial_pool(tokens, grid_side), brute_force_pool(tokens, grid_side))

    def test_random_trials(self):
        generator = torch.Generator().manual_seed(1)
        for grid_side in (4, 8, 16):
            # 334 trials per grid, stacked along the batch axis
            tokens = torch.randn(334, grid_side * grid_side, 3, dtype=torch.float64, generator=generator)
            assert torch.allclose(spatial_pool(tokens, grid_side), brute_force_pool(tokens, grid_side))

    def test_infers_grid_side(self):
        tokens = torch.randn(1, 64, 3)
        assert torch.equal(spatial_pool(tokens), spatial_pool(tokens, 8))

    def test_region_order_follows_child_grid(self):
        grid_side = 8
        tokens = torch.zeros(1, grid_side * grid_side, 1)
        # Mark token (row 2, col 6): region row 1, region col 3 -> child 7
        tokens[0, 2 * grid_side + 6, 0] = 4.0
        pooled = spatial_pool(tokens, grid_side)[0, :, 0]
        assert pooled.nonzero().flatten().tolist() == [7]
        assert float(pooled[7]) == 1.0

    def test_rejects_indivisible_grid(self):
        with pytest.raises(ShapeError):
            spatial_pool(torch.zeros(1, 36, 2), 6)

    def test_teacher_global_is_region_mean(self):
        regions = torch.arange(32, dtype=torch.float32).reshape(1, 16, 2)
        assert teacher_global(regions).tolist() == [[15.0, 16.0]]


class TestLosses:
    def test_cosine_extremes(self):
        a = torch.tensor([[1.0, 2.0, 3.0]])
        assert float(cosine_loss(a, a)) == pytest.approx(-1.0)
        assert float(cosine_loss(a, -a)) == pytest.approx(1.0)
        assert float(cosine_loss(torch.tensor([[1.0, 0.0]]), torch.tensor([[0.0, 3.0]]))) == pytest.approx(0.0)

    def test_cosine_is_scale_invariant(self):
        a = torch.randn(4, 6)
        b = torch.randn(4, 6)
        assert float(cosine_loss(a, b)) == pytest.approx(float(cosine_loss(3.0 * a, 0.5 * b)), abs=1e-6)

    def test_zero_norm_raises(self):
        with pytest.raises(DegenerateFeatureError):
            cosine_loss(torch.zeros(1, 3), torch.ones(1, 3))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            cosine_loss(torch.ones(1, 3), torch.ones(1, 4))
        with pytest.raises(ShapeError):
            local_loss(torch.ones(1, 15, 3), torch.ones(1, 15, 3))

    def test_total_loss_weights(self):
        config = DistillConfig(lambda_global=1.0, lambda_local=0.5)
        breakdown = total_loss(torch.tensor(-0.8), torch.tensor(0.4), config)
        assert float(breakdown.total) == pytest.approx(-0.6)
        assert float(breakdown.global_term) == pytest.approx(-0.8)
        assert float(breakdown.local_term) == pytest.approx(0.4)

    def test_total_loss_bounded_on_random_inputs(self):
        config = DistillConfig(lambda_global=1.0, lambda_local=0.5)
        generator = torch.Generator().manual_seed(0)
        worst = 0.0
        for _ in range(10_000):
            student_global, target_global = torch.randn(2, 1, 8, generator=generator)
            student_regions, teacher_regions = torch.randn(2, 1, 16, 8, generator=generator)
            breakdown = total_loss(
                cosine_loss(student_global, target_global), local_loss(teacher_regions, student_regions), config
            )
            worst = max(worst, abs(float(breakdown.total)))
        assert worst <= config.loss_bound + 1e-6

    def test_local_loss_is_region_permutation_covariant(self):
        generator = torch.Generator().manual_seed(1)
        for _ in range(50):
            teacher_regions = torch.randn(3, 16, 8, generator=generator)
            student_regions = torch.randn(3, 16, 8, generator=generator)
            perm = torch.randperm(16, generator=generator)
            permuted = local_loss(teacher_regions[:, perm], student_regions[:, perm])
            assert float(permuted) == pytest.approx(float(local_loss(teacher_regions, student_regions)), abs=1e-6)

    def test_total_loss_bounded(self, toy_student, toy_teacher, synthetic_pairs):
        config = DistillConfig(lambda_global=1.0, lambda_local=0.5, batch_size=4)
        heads = build_heads(16, 32, seed=0)
        children = np.stack([pair.children_20x for pair in synthetic_pairs])
        patches = np.stack([pair.patch_5x for pair in synthetic_pairs])
        regions = encode_teacher(toy_teacher, children).per_region
        breakdown = distillation_loss(toy_student, heads, patches, regions, config)
        values = breakdown.as_floats()
        assert -1.0 <= values["L_global"] <= 1.0
        assert -1.0 <= values["L_local"] <= 1.0
        assert abs(values["L"]) <= config.loss_bound + 1e-6
        assert values["L"] == pytest.approx(values["L_global"] + 0.5 * values["L_local"], abs=1e-6)


class TestProjection:
    def test_identical_rows_reduce_to_norm_bias(self):
        head = build_heads(4, 6, seed=0)["global"].train()
        with torch.no_grad():
            head.norm.bias.copy_(torch.linspace(-1.0, 1.0, 6))
            expected = head.fc2(torch.nn.functional.gelu(head.norm.bias))
            out = project(head, torch.ones(5, 4))
        assert torch.allclose(out, expected.expand(5, 6), atol=1e-6)

    def test_single_vector_in_eval_mode(self):
        head = build_heads(4, 6, seed=0)["local"].eval()
        x = torch.randn(4)
        assert project(head, x).shape == (6,)
        assert torch.allclose(project(head, x), project(head, x[None])[0])

    def test_region_batches_keep_their_layout(self):
        head = build_heads(4, 6, seed=0)["local"]
        assert project(head, torch.randn(3, 16, 4)).shape == (3, 16, 6)
        with pytest.raises(ShapeError):
            project(head, torch.randn(3, 5))


class TestSchedule:
    def test_cosine_endpoints_and_midpoint(self):
        config = DistillConfig(peak_lr=1.0, total_steps=100)
        assert lr_at(0, config) == 1.0
        assert lr_at(50, config) == pytest.approx(0.5)
        assert lr_at(100, config) == 0.0
        assert lr_at(250, config) == 0.0

    def test_monotone_decay(self):
        config = DistillConfig(total_steps=40)
        rates = [lr_at(step, config) for step in range(41)]
        assert all(a >= b for a, b in zip(rates, rates[1:]))

    def test_warmup(self):
        config = DistillConfig(peak_lr=1.0, total_steps=10, warmup_steps=2)
        assert [lr_at(step, config) for step in range(3)] == [0.5, 1.0, 1.0]

    def test_negative_step(self):
        with pytest.raises(ValueError):
            lr_at(-1, DistillConfig())

    @pytest.mark.parametrize(
        "overrides",
        [{"ema_decay": 1.5}, {"peak_lr": -1.0}, {"total_steps": 0}, {"batch_size": 1}, {"warmup_steps": 200}],
    )
    def test_invalid_config(self, overrides):
        with pytest.raises(ValueError):
            DistillConfig(**overrides)

    def test_from_config_ignores_unrelated_keys(self):
        config = DistillConfig.from_config({"peak_lr": 0.001, "total_steps": 7, "cache_teacher": True})
        assert config.total_steps == 7
        assert config.peak_lr == 0.001


class TestEma:
    def test_closed_form(self):
        ema = [torch.zeros(3, dtype=torch.float64)]
        source = [torch.ones(3, dtype=torch.float64)]
        ema_update(ema, source, 0.9)
        assert torch.allclose(ema[0], torch.full((3,), 0.1, dtype=torch.float64))
        ema_update(ema, source, 0.9)
        assert torch.allclose(ema[0], torch.full((3,), 0.19, dtype=torch.float64))

    def test_extreme_decays(self):
        ema = [torch.tensor([0.3, -2.0])]
        source = [torch.tensor([1.7, 5.5])]
        ema_update(ema, source, 1.0)
        assert torch.equal(ema[0], torch.tensor([0.3, -2.0]))
        ema_update(ema, source, 0.0)
        assert torch.equal(ema[0], source[0])

    def test_shape_checks(self):
        with pytest.raises(ShapeError):
            ema_update([torch.zeros(2)], [torch.zeros(3)], 0.5)
        with pytest.raises(ShapeError):
            ema_update([torch.zeros(2)], [], 0.5)

    def test_module_update_copies_buffers(self):
        heads = build_heads(4, 6, seed=0)
        ema = build_heads(4, 6, seed=1)
        heads["global"].norm.running_mean.fill_(2.5)
        ema_update_module(ema, heads, 0.5)
        assert torch.equal(ema["global"].norm.running_mean, heads["global"].norm.running_mean)


class TestTraining:
    def test_gradient_matches_finite_differences(self, synthetic_pairs):
        """64-bit central differences on sampled elements of every student and head tensor."""
        student = build_encoder(preset("toy_student", depth=2), seed=1).double()
        teacher = build_encoder(preset("toy_teacher", depth=2), seed=0).double()
        heads = build_heads(16, 32, seed=0).double()
        config = DistillConfig(batch_size=4)
        patches = np.stack([pair.patch_5x for pair in synthetic_pairs])
        regions = encode_teacher(teacher, np.stack([pair.children_20x for pair in synthetic_pairs])).per_region

        def loss() -> float:
            return float(distillation_loss(student, heads, patches, regions, config).total)

        distillation_loss(student, heads, patches, regions, config).total.backward()
        named = [(f"student.{n}", p) for n, p in student.named_parameters()]
        named += [(f"heads.{n}", p) for n, p in heads.named_parameters()]
        generator = torch.Generator().manual_seed(0)
        h = 1e-6
        worst = 0.0
        for name, param in named:
            assert param.grad is not None, name
            flat, grad = param.data.view(-1), param.grad.view(-1)
            for index in torch.randperm(flat.numel(), generator=generator)[:3].tolist():
                original = float(flat[index])
                flat[index] = original + h
                upper = loss()
                flat[index] = original - h
                lower = loss()
                flat[index] = original
                numeric = (upper - lower) / (2 * h)
                analytic = float(grad[index])
                worst = max(worst, abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-6))
        assert worst <= 1e-4

    def test_zero_learning_rate_keeps_weights(self, toy_student, toy_teacher, synthetic_pairs):
        before = state_digest(toy_student)
        config = DistillConfig(peak_lr=0.0, total_steps=3, batch_size=2, ema_decay=0.5)
        result = train_distill(synthetic_pairs, toy_teacher, toy_student, config, seed=0, progress=False)
        assert state_digest(result.student) == before
        assert state_digest(result.ema_student) == before

    def test_teacher_never_changes(self, toy_student, toy_teacher, synthetic_pairs):
        before = state_digest(toy_teacher)
        config = DistillConfig(total_steps=2, batch_size=2)
        train_distill(synthetic_pairs, toy_teacher, toy_student, config, seed=0, progress=False)
        assert state_digest(toy_teacher) == before

    def test_same_seed_same_history(self, synthetic_pairs):
        config = DistillConfig(total_steps=2, batch_size=2)
        runs = []
        for _ in range(2):
            student = build_encoder(preset("toy_student", depth=2), seed=1)
            teacher = build_encoder(preset("toy_teacher", depth=2), seed=0)
            result = train_distill(synthetic_pairs, teacher, student, config, seed=5, progress=False)
            runs.append(([row["L"] for row in result.history], state_digest(result.ema_student)))
        assert runs[0] == runs[1]

    def test_run_dir_outputs(self, toy_student, toy_teacher, synthetic_pairs, tmp_path):
        config = DistillConfig(total_steps=3, batch_size=2, log_every=1)
        result = train_distill(synthetic_pairs, toy_teacher, toy_student, config, run_dir=tmp_path, progress=False)
        with open(result.loss_log, newline="", encoding="utf-8") as f:
            rows = list(csv.DictReader(f))
        assert [int(row["step"]) for row in rows] == [0, 1, 2]
        assert tuple(rows[0]) == LOSS_LOG_FIELDS
        assert float(rows[0]["lr"]) == pytest.approx(config.peak_lr)
        assert set(result.checkpoints) == {"student_ema", "distill_state"}
        assert all(path.exists() for path in result.checkpoints.values())

    def test_non_finite_loss_raises(self, toy_student, toy_teacher, synthetic_pairs):
        with torch.no_grad():
            toy_student.patch_embed.weight.fill_(float("nan"))
        config = DistillConfig(total_steps=2, batch_size=2, augment=False)
        trainer = DistillTrainer(synthetic_pairs, toy_teacher, toy_student, config, seed=0)
        with pytest.raises(NonFiniteLossError) as excinfo:
            trainer.step(0)
        assert excinfo.value.step == 0
        assert len(excinfo.value.keys) == 2

    def test_empty_pairs_rejected(self, toy_student, toy_teacher):
        with pytest.raises(ValueError):
            DistillTrainer([], toy_teacher, toy_student, DistillConfig())

    @pytest.mark.parametrize("augment", [True, False])
    def test_single_pair_manifest(self, toy_student, toy_teacher, tiny_generator, augment):
        pairs = tessellate(generate_synthetic_wsi(tiny_generator, 0))
        assert len(pairs) == 1
        config = DistillConfig(total_steps=2, batch_size=2, augment=augment)
        result = train_distill(pairs, toy_teacher, toy_student, config, seed=0, progress=False)
        assert len(result.history) == 2
        assert all(np.isfinite(row["L"]) for row in result.history)

    @pytest.mark.slow
    def test_loss_decreases(self, toy_student, toy_teacher, synthetic_pairs):
        config = DistillConfig(peak_lr=0.001, total_steps=60, batch_size=4, augment=False, weight_decay=0.0)
        result = train_distill(synthetic_pairs, toy_teacher, toy_student, config, seed=0, progress=False)
        losses = [row["L"] for row in result.history]
        assert np.mean(losses[-5:]) < np.mean(losses[:5])

    @pytest.mark.slow
    def test_overfits_fixed_pairs(self, tiny_generator):
        pairs = []
        for seed in range(64):
            pairs.extend(tessellate(generate_synthetic_wsi(tiny_generator, seed)))
        student = build_encoder(preset("toy_student", depth=2), seed=1)
        teacher = build_encoder(preset("toy_teacher", depth=2), seed=0)
        config = DistillConfig(peak_lr=0.001, total_steps=2000, batch_size=32, augment=False, log_every=100)
        result = train_distill(pairs, teacher, student, config, seed=0, progress=False)
        assert np.mean([row["L"] for row in result.history[-50:]]) <= -1.35
