import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import brute_force_top
from curvmix import autodiff as ad
from curvmix.gating import target_weights, unnormalized_targets
from curvmix.losses import (
    ContrastiveConfig,
    align_loss,
    contrastive_loss,
    cross_entropy,
    intra_negatives,
    mi_lower_bound,
    mine_negatives,
    positive_choice,
    region_index,
    select_positive,
    task_loss,
    total_loss,
)


def T(x):
    return ad.Tensor(np.asarray(x, dtype=np.float64))


class TestCrossEntropy:
    @pytest.mark.parametrize("C", [2, 3, 7])
    def test_uniform_logits(self, C):
        loss = cross_entropy(T(np.zeros((5, C))), np.zeros(5, dtype=int), np.ones(5, dtype=bool))
        assert loss.item() == pytest.approx(math.log(C), abs=1e-12)

    def test_half_undecided_half_certain(self):
        logits = np.array([[0.0, 0.0], [0.0, 0.0], [800.0, 0.0], [0.0, 800.0]])
        loss = cross_entropy(T(logits), np.array([0, 1, 0, 1]), np.ones(4, dtype=bool))
        assert loss.item() == pytest.approx(math.log(2) / 2, abs=1e-12)

    def test_mask_restricts_rows(self):
        logits = np.array([[0.0, 0.0], [-50.0, 50.0]])
        loss = cross_entropy(T(logits), np.array([0, 0]), np.array([True, False]))
        assert loss.item() == pytest.approx(math.log(2))

    def test_scaling_correct_logits_drives_loss_to_zero(self):
        losses = [cross_entropy(T(s * np.eye(3)), np.arange(3), np.ones(3, bool)).item() for s in (1, 10, 40)]
        assert losses[0] > losses[1] > losses[2] and losses[2] < 1e-15

    def test_empty_mask(self):
        with pytest.raises(ValueError):
            cross_entropy(T(np.zeros((2, 2))), np.zeros(2, int), np.zeros(2, bool))

    def test_task_loss_applies_classifier(self):
        h = np.ones((2, 3))
        loss = task_loss(T(h), np.zeros((3, 4)), np.zeros((1, 4)), np.array([1, 2]), np.ones(2, bool))
        assert loss.item() == pytest.approx(math.log(4))


class TestAlign:
    def test_zero_when_equal(self):
        t = target_weights(np.linspace(-1, 1, 9), 0.1, 0.05)
        assert abs(align_loss(t, T(t)).item()) < 1e-10

    def test_peaked_target_against_uniform_gate(self):
        eps = 0.1
        target = np.array([[1 - 2 * eps, eps, eps]])
        expected = (1 - 2 * eps) * math.log(3 * (1 - 2 * eps)) + 2 * eps * math.log(3 * eps)
        got = align_loss(target, T(np.full((1, 3), 1 / 3))).item()
        assert got == pytest.approx(expected, abs=1e-10)
        assert got == pytest.approx(0.45958, abs=1e-5)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 10_000))
    def test_non_negative(self, seed):
        r = np.random.default_rng(seed)
        a = r.dirichlet(np.ones(3), size=4)
        b = r.dirichlet(np.ones(3), size=4)
        assert align_loss(a, T(b)).item() >= -1e-12

    def test_gradient_wrt_gate_logits(self, rng):
        target = target_weights(rng.uniform(-0.5, 0.5, 5), 0.1, 0.05)
        z = rng.standard_normal((5, 3))

        def value(zz):
            return align_loss(target, ad.row_softmax(T(zz))).item()

        tape = ad.Tape()
        g = tape.backward(align_loss(target, ad.row_softmax(tape.param("z", z))))["z"]
        fd = np.zeros_like(z)
        for idx in np.ndindex(z.shape):
            a, b = z.copy(), z.copy()
            a[idx] += 1e-6
            b[idx] -= 1e-6
            fd[idx] = (value(a) - value(b)) / 2e-6
        assert np.linalg.norm(g - fd) / np.linalg.norm(fd) < 1e-4

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            align_loss(np.ones((2, 3)) / 3, T(np.ones((3, 3)) / 3))


class TestPositives:
    def test_region_rule(self):
        theta = 1e-4
        assert list(region_index([0.0, -0.5, 0.5, theta, -theta], theta)) == [0, 1, 2, 0, 0]

    def test_select_positive_rows(self):
        tangents = [T(np.full((4, 2), float(m))) for m in range(3)]
        out = select_positive([0.0, -0.5, 0.5, 1e-4], 1e-4, tangents)
        assert np.array_equal(out.value[:, 0], [0.0, 1.0, 2.0, 0.0])

    def test_consistent_with_target_argmax(self):
        theta, eta = 0.05, 0.01
        k = np.linspace(-1, 1, 2001)
        keep = np.abs(np.abs(k) - theta) > 10 * eta
        choice = positive_choice(k, theta, eta=eta)
        assert np.array_equal(choice[keep], np.argmax(unnormalized_targets(k, theta, eta), axis=1)[keep])

    def test_disabled_region_expert_falls_back(self):
        # hyperbolic disabled: strongly negative nodes go to whichever of E, S scores higher (E)
        choice = positive_choice([-0.8, 0.0, 0.8], 0.05, enabled=(0, 2))
        assert list(choice) == [0, 0, 1]

    def test_intra_negatives_are_the_other_two(self):
        tangents = [T(np.full((3, 1), float(m))) for m in range(3)]
        negs = intra_negatives(np.array([0, 1, 2]), tangents)
        assert np.array_equal(negs[0].value[:, 0], [1.0, 0.0, 0.0])
        assert np.array_equal(negs[1].value[:, 0], [2.0, 2.0, 1.0])


class TestMining:
    def test_matches_brute_force(self):
        r = np.random.default_rng(0)
        for n in (5, 8, 20, 50):
            for k in (1, 2, 4):
                pos = r.standard_normal((n, 4))
                fused = r.standard_normal((n, 4))
                assert np.array_equal(mine_negatives(pos, fused, k), brute_force_top(pos, fused, k))

    def test_five_nodes_top_two(self, rng):
        pos, fused = rng.standard_normal((5, 3)), rng.standard_normal((5, 3))
        assert np.array_equal(mine_negatives(pos, fused, 2), brute_force_top(pos, fused, 2))

    def test_no_mining_when_K_is_two(self, rng):
        out = mine_negatives(rng.standard_normal((4, 2)), rng.standard_normal((4, 2)), 0)
        assert out.shape == (4, 0)

    def test_duplicate_is_mined_first(self):
        fused = np.eye(4)
        pos = np.zeros((4, 4))
        pos[0] = fused[2]
        assert mine_negatives(pos, fused, 1)[0, 0] == 2

    def test_ties_go_to_smaller_id(self):
        fused = np.ones((4, 2))
        assert list(mine_negatives(np.ones((4, 2)), fused, 2)[3]) == [0, 1]

    def test_shrinks_with_warning(self, rng):
        with pytest.warns(UserWarning):
            out = mine_negatives(rng.standard_normal((3, 2)), rng.standard_normal((3, 2)), 5)
        assert out.shape == (3, 2)


class TestContrastive:
    def test_closed_form(self):
        # fused = e1, positive = e1, three orthogonal negatives
        h = T([[1.0, 0.0]])
        neg = [T([[0.0, 1.0]])] * 3
        loss = contrastive_loss(h, T([[2.0, 0.0]]), neg, tau=1.0).item()
        assert loss == pytest.approx(-math.log(math.e / (math.e + 3)), abs=1e-12)
        assert loss == pytest.approx(0.74367, abs=5e-6)

    def test_uniform_similarities(self, rng):
        h = T(rng.standard_normal((6, 3)))
        for K in (2, 4, 7):
            loss = contrastive_loss(h, h, [h] * K, tau=0.5).item()
            assert loss == pytest.approx(math.log(K + 1), abs=1e-12)

    def test_separation_limit(self):
        h = T([[1.0, 0.0]])
        loss = contrastive_loss(h, h, [T([[-1.0, 0.0]])] * 4, tau=0.1).item()
        assert 0 <= loss < 1e-7

    def test_mined_rows_enter_the_loss(self, rng):
        h = T(rng.standard_normal((5, 3)))
        base = contrastive_loss(h, h, [], tau=0.5).item()
        idx = mine_negatives(h.value, h.value, 2)
        assert contrastive_loss(h, h, [], tau=0.5, inter_index=idx).item() > base

    def test_zero_norm_rows_are_safe(self):
        h = T([[0.0, 0.0], [1.0, 0.0]])
        loss = contrastive_loss(h, h, [T(np.zeros((2, 2)))], tau=0.5)
        assert np.isfinite(loss.item())

    def test_gradient_flows_through_all_inputs(self, rng):
        tape = ad.Tape()
        h = tape.param("h", rng.standard_normal((4, 3)))
        p = tape.param("p", rng.standard_normal((4, 3)))
        n = tape.param("n", rng.standard_normal((4, 3)))
        g = tape.backward(contrastive_loss(h, p, [n], tau=0.5, inter_index=mine_negatives(p.value, h.value, 1)))
        for k in "hpn":
            assert np.linalg.norm(g[k]) > 0

    def test_bad_tau(self):
        with pytest.raises(ValueError):
            contrastive_loss(T([[1.0]]), T([[1.0]]), [], tau=0.0)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            ContrastiveConfig(K=1)
        with pytest.raises(ValueError):
            ContrastiveConfig(tau=0.0)


class TestTotalAndBound:
    def test_weighted_sum(self):
        assert total_loss(T(0.2), T(0.3), T(0.5), 1, 1, 1).item() == pytest.approx(1.0, abs=1e-12)

    def test_task_only(self):
        assert total_loss(T(0.7), T(0.3), T(0.5), 1, 0, 0).item() == 0.7

    def test_all_zero_coefficients_give_zero_gradient(self):
        tape = ad.Tape()
        a = tape.param("a", [[2.0]])
        out = total_loss(ad.mul(a, a), a, a, 0, 0, 0)
        assert out.item() == 0.0
        assert tape.backward(out)["a"][0, 0] == 0.0

    def test_negative_weight(self):
        with pytest.raises(ValueError):
            total_loss(T(1.0), None, None, 1, -1, 0)

    def test_mi_bound(self):
        assert mi_lower_bound(math.log(5), 4) == pytest.approx(0.0, abs=1e-15)
        assert mi_lower_bound(0.0, 4) == pytest.approx(math.log(5))
        # ln 5 - 0.74366 evaluated directly
        assert mi_lower_bound(0.74366, 4) == pytest.approx(0.86578, abs=1e-5)
        with pytest.raises(ValueError):
            mi_lower_bound(0.1, 0)
