#!/usr/bin/env python3
# -*- coding: utf-8 -*-

"""
Tests for paired significance tests.
"""

import numpy as np
import pytest

from crossmag.evaluation import UndefinedMetricError, bootstrap_f1_test, delong_test, mcnemar_test
from crossmag.evaluation.significance import PairedTestResult


def permutation_p_value(scores_a, scores_b, labels, draws=20000, seed=0):
    """Two-sided permutation test on the AUC difference, swapping models per sample."""
    positive = labels == 1

    def aucs(a):
        pos = a[..., positive][..., :, None]
        neg = a[..., ~positive][..., None, :]
        return ((pos > neg) + 0.5 * (pos == neg)).mean(axis=(-2, -1))

    observed = abs(aucs(scores_a) - aucs(scores_b))
    swap = np.random.default_rng(seed).random((draws, labels.size)) < 0.5
    perm_a = np.where(swap, scores_b, scores_a)
    perm_b = np.where(swap, scores_a, scores_b)
    deltas = np.abs(aucs(perm_a) - aucs(perm_b))
    return float(np.mean(deltas >= observed - 1e-12))


class TestMcNemar:
    def test_exact_binomial_tail(self):
        labels = np.ones(10, dtype=int)
        result = mcnemar_test(labels, np.zeros(10, dtype=int), labels)
        assert result.p_value == pytest.approx(1 / 512)
        assert result.statistic == pytest.approx(8.1)
        assert result.delta == 1.0

    def test_sign_follows_discordance(self):
        labels = np.ones(10, dtype=int)
        result = mcnemar_test(np.zeros(10, dtype=int), labels, labels)
        assert result.statistic < 0
        assert result.p_value == pytest.approx(1 / 512)

    def test_no_discordant_pairs(self):
        result = mcnemar_test([0, 1, 1], [0, 1, 1], [0, 1, 0])
        assert result.p_value == 1.0
        assert result.flagged

    def test_large_counts_use_chi_square(self):
        labels = np.zeros(60, dtype=int)
        preds_a = np.zeros(60, dtype=int)
        preds_b = np.zeros(60, dtype=int)
        preds_b[:20] = 1
        preds_a[20:30] = 1
        result = mcnemar_test(preds_a, preds_b, labels)
        assert "chi-square" in result.note
        assert result.statistic == pytest.approx(81 / 30)

    def test_misaligned_inputs(self):
        with pytest.raises(ValueError):
            mcnemar_test([0, 1], [0], [0, 1])


class TestDeLong:
    def test_self_comparison(self):
        rng = np.random.default_rng(0)
        labels = np.array([0, 1] * 15)
        scores = rng.random(30) + 0.3 * labels
        result = delong_test(scores, scores, labels)
        assert result.p_value == 1.0
        assert result.delta == 0.0

    def test_better_model_has_positive_statistic(self):
        rng = np.random.default_rng(1)
        labels = np.array([0, 1] * 50)
        strong = labels + rng.normal(0, 0.3, size=100)
        weak = labels + rng.normal(0, 2.0, size=100)
        result = delong_test(strong, weak, labels)
        assert result.statistic > 0
        assert result.delta > 0
        assert result.p_value < 0.05

    def test_requires_binary_labels(self):
        with pytest.raises(UndefinedMetricError):
            delong_test([0.1, 0.5, 0.9], [0.2, 0.4, 0.6], [0, 1, 2])

    def test_too_few_per_class(self):
        result = delong_test([0.1, 0.5, 0.9], [0.2, 0.4, 0.6], [0, 1, 1])
        assert result.flagged
        assert result.p_value == 1.0

    @pytest.mark.slow
    def test_agrees_with_permutation_oracle(self):
        gaps = []
        for seed in range(5):
            rng = np.random.default_rng(seed)
            labels = np.array([0, 1] * 10)
            shared = labels + rng.normal(0, 0.8, size=20)
            scores_a = shared + rng.normal(0, 0.4, size=20)
            scores_b = shared + rng.normal(0, 0.4, size=20)
            delong_p = delong_test(scores_a, scores_b, labels).p_value
            gaps.append(abs(delong_p - permutation_p_value(scores_a, scores_b, labels, seed=seed)))
        assert np.mean(gaps) <= 0.05


class TestBootstrapF1:
    def test_identical_predictions(self):
        preds = [0, 1, 1, 0, 1]
        result = bootstrap_f1_test(preds, preds, [0, 1, 0, 0, 1], n_boot=200)
        assert result.p_value == 1.0
        assert result.delta == 0.0

    def test_deterministic_per_seed(self):
        rng = np.random.default_rng(4)
        labels = rng.integers(0, 2, size=60)
        preds_a = np.where(rng.random(60) < 0.8, labels, 1 - labels)
        preds_b = np.where(rng.random(60) < 0.7, labels, 1 - labels)
        first = bootstrap_f1_test(preds_a, preds_b, labels, n_boot=1000, seed=7)
        second = bootstrap_f1_test(preds_a, preds_b, labels, n_boot=1000, seed=7)
        assert first == second

    def test_p_value_shrinks_as_gap_grows(self):
        rng = np.random.default_rng(5)
        labels = rng.integers(0, 2, size=200)
        errors = rng.permutation(200)[:80]
        preds_b = labels.copy()
        preds_b[errors] = 1 - preds_b[errors]

        p_values = []
        for n_errors in (80, 60, 40, 20):
            preds_a = labels.copy()
            preds_a[errors[:n_errors]] = 1 - preds_a[errors[:n_errors]]
            result = bootstrap_f1_test(preds_a, preds_b, labels, n_boot=500, seed=0)
            assert 0.0 <= result.p_value <= 1.0
            p_values.append(result.p_value)
        assert all(a >= b for a, b in zip(p_values, p_values[1:]))
        assert p_values[0] == 1.0
        assert p_values[-1] < 0.05


def test_result_validation():
    with pytest.raises(ValueError):
        PairedTestResult("wilcoxon", 0.0, 0.5)
    with pytest.raises(ValueError):
        PairedTestResult("mcnemar", 0.0, 1.5)
