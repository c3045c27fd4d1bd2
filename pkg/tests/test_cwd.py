import math

import numpy as np
import pytest

from distillkit.cwd import CwdConfig, cwd_backward, cwd_grad_student, cwd_loss, cwd_total, logit_kd_loss
from distillkit.gradcheck import finite_diff, rel_error, run_gradcheck
from distillkit.tensor import ConvLayer, Rng, Tensor4

from oracles import cwd_loss_oracle

# KL of [1/3, 2/3] against [1/2, 1/2]: (1/3)ln(2/3) + (2/3)ln(4/3)
HAND_KL = (1 / 3) * math.log(2 / 3) + (2 / 3) * math.log(4 / 3)


def rand_tensor(seed, n, c, h, w, scale=1.0):
    return Tensor4(Rng(seed).uniform_signed(n * c * h * w).reshape(n, c, h, w) * scale)


class TestCwdLoss:
    def test_identical_inputs_zero(self):
        x = rand_tensor(1, 2, 3, 4, 4, scale=2.0)
        for temp in (1.0, 2.0, 3.0, 4.0):
            loss, _ = cwd_loss(x, x, CwdConfig(temperature=temp))
            assert abs(loss) < 1e-7

    def test_hand_oracle_value(self):
        teacher = Tensor4(np.array([0.0, math.log(2.0)], dtype=np.float32).reshape(1, 1, 1, 2))
        student = Tensor4(np.zeros((1, 1, 1, 2), dtype=np.float32))
        loss, per_channel = cwd_loss(teacher, student, CwdConfig(temperature=1.0))
        assert loss == pytest.approx(HAND_KL, abs=1e-5)
        assert loss == pytest.approx(0.056633, abs=1e-5)
        assert per_channel.shape == (1,)

    def test_temperature_squared_prefactor(self):
        # logits pre-multiplied by T keep the softmax identical, so the loss
        # scales exactly with T^2
        teacher = Tensor4(np.array([0.0, 2 * math.log(2.0)], dtype=np.float32).reshape(1, 1, 1, 2))
        student = Tensor4(np.zeros((1, 1, 1, 2), dtype=np.float32))
        loss, _ = cwd_loss(teacher, student, CwdConfig(temperature=2.0))
        assert loss == pytest.approx(4 * HAND_KL, abs=1e-5)

    def test_per_channel_sums_to_loss(self):
        teacher = rand_tensor(2, 2, 5, 4, 4)
        student = rand_tensor(3, 2, 5, 4, 4)
        cfg = CwdConfig(temperature=3.0)
        loss, per_channel = cwd_loss(teacher, student, cfg)
        assert len(per_channel) == 5
        assert loss == pytest.approx(9.0 * per_channel.sum(), abs=1e-5)

    @pytest.mark.parametrize("seed", range(6))
    def test_matches_straight_line_oracle(self, seed):
        teacher = rand_tensor(seed * 2, 1, 2, 3, 3, scale=2.0)
        student = rand_tensor(seed * 2 + 1, 1, 2, 3, 3, scale=2.0)
        cfg = CwdConfig(temperature=float(1 + seed % 4))
        loss, _ = cwd_loss(teacher, student, cfg)
        assert loss == pytest.approx(cwd_loss_oracle(teacher, student, cfg.temperature), rel=1e-9)

    def test_non_negative_on_many_instances(self):
        for seed in range(1000):
            teacher = rand_tensor(seed, 1, 2, 3, 3, scale=3.0)
            student = rand_tensor(seed + 10_000, 1, 2, 3, 3, scale=3.0)
            loss, _ = cwd_loss(teacher, student, CwdConfig(temperature=2.0))
            assert loss >= -1e-7

    def test_equal_distribution_pairs_give_zero(self):
        # per-slice constant shifts leave the spatial softmax unchanged
        teacher = rand_tensor(5, 2, 3, 4, 4)
        shifts = Rng(6).uniform_signed(2 * 3).reshape(2, 3, 1, 1) * 5.0
        student = Tensor4(teacher.astype64() + shifts)
        loss, _ = cwd_loss(teacher, student, CwdConfig(temperature=2.0))
        assert loss < 1e-6

    def test_asymmetry(self):
        teacher = Tensor4(np.array([0.0, math.log(2.0)], dtype=np.float32).reshape(1, 1, 1, 2))
        student = Tensor4(np.zeros((1, 1, 1, 2), dtype=np.float32))
        cfg = CwdConfig(temperature=1.0)
        forward, _ = cwd_loss(teacher, student, cfg)
        backward, _ = cwd_loss(student, teacher, cfg)
        assert abs(forward - backward) > 1e-6

    def test_dim_mismatch_without_align(self):
        with pytest.raises(ValueError):
            cwd_loss(rand_tensor(0, 1, 3, 2, 2), rand_tensor(1, 1, 2, 2, 2), CwdConfig(temperature=1.0))

    def test_align_present_but_channels_match(self):
        cfg = CwdConfig(temperature=1.0, align=ConvLayer.identity(2, 1))
        with pytest.raises(ValueError):
            cwd_loss(rand_tensor(0, 1, 2, 2, 2), rand_tensor(1, 1, 2, 2, 2), cfg)

    def test_align_path(self):
        teacher = rand_tensor(0, 1, 3, 4, 4)
        student = rand_tensor(1, 1, 2, 4, 4)
        align = ConvLayer.init_uniform(Rng(2), 3, 2, 1)
        loss, per_channel = cwd_loss(teacher, student, CwdConfig(temperature=2.0, align=align))
        assert loss >= 0 and len(per_channel) == 3


class TestCwdGradient:
    def test_zero_at_identical_inputs(self):
        x = rand_tensor(4, 1, 2, 3, 3)
        grad = cwd_grad_student(x, x, CwdConfig(temperature=2.0))
        assert np.max(np.abs(grad.data)) < 1e-7

    def test_slice_sums_vanish(self):
        teacher = rand_tensor(5, 2, 3, 4, 4)
        student = rand_tensor(6, 2, 3, 4, 4)
        grad = cwd_grad_student(teacher, student, CwdConfig(temperature=3.0))
        sums = grad.astype64().reshape(2, 3, -1).sum(axis=2)
        assert np.max(np.abs(sums)) < 1e-5

    def test_closed_form(self):
        from distillkit.tensor import spatial_softmax

        teacher = rand_tensor(7, 1, 2, 3, 3)
        student = rand_tensor(8, 1, 2, 3, 3)
        temp = 2.0
        grad = cwd_grad_student(teacher, student, CwdConfig(temperature=temp))
        p = spatial_softmax(teacher, temp).astype64()
        q = spatial_softmax(student, temp).astype64()
        assert np.max(np.abs(grad.astype64() - temp * (q - p))) < 1e-6

    @pytest.mark.parametrize("temperature", [1.0, 2.0, 3.0, 4.0])
    def test_finite_difference_per_temperature(self, temperature):
        report = run_gradcheck("cwd", trials=20, seed=int(temperature * 10), temperature=temperature)
        assert report.passed, f"max rel error {report.max_rel_error}"
        assert len(report.checks) >= 20

    def test_finite_difference_through_align(self):
        teacher = rand_tensor(9, 1, 3, 4, 4)
        student = rand_tensor(10, 1, 2, 4, 4)
        align = ConvLayer.init_uniform(Rng(11), 3, 2, 1)
        cfg = CwdConfig(temperature=2.0, align=align)
        _, _, grad_student, grad_align = cwd_backward(teacher, student, cfg)

        def loss_student(vals):
            return cwd_loss(teacher, Tensor4(vals), cfg)[0]

        fd = finite_diff(loss_student, student.data)
        assert rel_error(grad_student.astype64(), fd) < 1e-3

        def loss_align_w(vals):
            cfg2 = CwdConfig(temperature=2.0, align=ConvLayer(vals, align.bias))
            return cwd_loss(teacher, student, cfg2)[0]

        fd_w = finite_diff(loss_align_w, align.weight)
        assert rel_error(grad_align.weight.astype(np.float64), fd_w) < 1e-3

    def test_descent_step_does_not_increase_loss(self):
        cfg = CwdConfig(temperature=2.0)
        for seed in range(100):
            teacher = rand_tensor(seed, 1, 2, 3, 3, scale=2.0)
            student = rand_tensor(seed + 500, 1, 2, 3, 3, scale=2.0)
            before, _ = cwd_loss(teacher, student, cfg)
            grad = cwd_grad_student(teacher, student, cfg)
            stepped = Tensor4(student.astype64() - 1e-2 * grad.astype64())
            after, _ = cwd_loss(teacher, stepped, cfg)
            assert after <= before + 1e-9


class TestCwdTotal:
    def test_paper_arithmetic(self):
        assert cwd_total(1.0, 0.02, CwdConfig(temperature=2.0, feature_weight=50.0)) == pytest.approx(2.0)

    def test_zero_feature_loss(self):
        assert cwd_total(1.25, 0.0, CwdConfig(temperature=1.0)) == pytest.approx(1.25)

    def test_pure_distillation(self):
        assert cwd_total(0.0, 1.0, CwdConfig(temperature=1.0, feature_weight=50.0)) == pytest.approx(50.0)

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            cwd_total(float("inf"), 0.0, CwdConfig(temperature=1.0))


class TestLogitKd:
    def test_identical_logits_zero(self):
        assert logit_kd_loss([0.3, -1.0, 2.0], [0.3, -1.0, 2.0], 2.0) == pytest.approx(0.0, abs=1e-12)

    def test_shared_hand_oracle(self):
        assert logit_kd_loss([0.0, math.log(2.0)], [0.0, 0.0], 1.0) == pytest.approx(0.056633, abs=1e-5)

    def test_zero_weight_disables_term(self):
        cfg = CwdConfig(temperature=1.0, logit_weight=0.0)
        feature = 0.4
        logit = logit_kd_loss([1.0, 2.0], [0.5, 0.1], 1.0)
        total = cwd_total(1.0, feature, cfg) + cfg.logit_weight * logit
        assert total == pytest.approx(cwd_total(1.0, feature, cfg))

    def test_zero_iff_same_softened_distribution(self):
        # a constant logit shift leaves the softened distribution unchanged
        assert logit_kd_loss([1.0, 2.0, 3.0], [4.0, 5.0, 6.0], 2.0) == pytest.approx(0.0, abs=1e-12)
        assert logit_kd_loss([1.0, 2.0, 3.0], [1.0, 2.0, 3.5], 2.0) > 1e-4

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            logit_kd_loss([1.0, 2.0], [1.0], 1.0)

    def test_non_negative(self):
        rng = Rng(3)
        for _ in range(200):
            t = rng.uniform_signed(5) * 3
            s = rng.uniform_signed(5) * 3
            assert logit_kd_loss(t, s, 2.0) >= 0.0


class TestConfigValidation:
    def test_bad_temperature(self):
        with pytest.raises(ValueError):
            CwdConfig(temperature=0.0)

    def test_bad_weights(self):
        with pytest.raises(ValueError):
            CwdConfig(temperature=1.0, feature_weight=-1.0)
        with pytest.raises(ValueError):
            CwdConfig(temperature=1.0, logit_weight=-0.5)

    def test_align_must_be_1x1(self):
        with pytest.raises(ValueError):
            CwdConfig(temperature=1.0, align=ConvLayer.identity(2, 3))
