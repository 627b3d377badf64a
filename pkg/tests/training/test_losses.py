"""
Tests for MIL and distillation losses.

:hierarchy: [Testing | Unit Tests | Training | Losses]
:relates-to:
 - motivated_by: "Loss values are checked against closed-form oracles"
 - implements: "Test suite for soft dice, label complement, kd, wce and totals"

:complexity: 4
"""

import math

import pytest
import torch

from ikd_mil.core.config import LossConfig
from ikd_mil.core.exceptions import ConfigurationError, PreconditionError, ShapeError
from ikd_mil.models import MultiScaleOutput, fuse_maps
from ikd_mil.training.losses import (
    apply_label_complement,
    distillation_loss_components,
    kd_loss,
    naive_masks,
    soft_dice_loss,
    student_total_loss,
    teacher_loss,
    wce_loss,
)

CFG = LossConfig()


def _output(maps, logits=None):
    logits = torch.zeros(len(maps)) if logits is None else logits
    return MultiScaleOutput(per_block=list(maps), fused=fuse_maps(maps, logits))


def _square(size=8, lo=2, hi=6):
    m = torch.zeros(size, size)
    m[lo:hi, lo:hi] = 1.0
    return m


class TestSoftDice:
    def test_exact_binary_match_is_zero(self):
        m = _square()

        assert float(soft_dice_loss(m, m)) == pytest.approx(0.0, abs=1e-7)

    def test_empty_empty_is_zero(self):
        z = torch.zeros(8, 8)

        assert float(soft_dice_loss(z, z)) == pytest.approx(0.0)

    def test_disjoint_is_near_one(self):
        a = _square(lo=0, hi=2)
        b = _square(lo=4, hi=6)

        assert float(soft_dice_loss(a, b)) == pytest.approx(1.0, abs=1e-6)

    def test_closed_form(self):
        pred = torch.tensor([[0.5, 0.5], [0.0, 0.0]])
        target = torch.tensor([[1.0, 0.0], [0.0, 0.0]])
        eps = 1e-6
        expected = 1.0 - (2 * 0.5 + eps) / (1.0 + 1.0 + eps)

        assert float(soft_dice_loss(pred, target, eps)) == pytest.approx(expected)

    def test_per_image_reduction(self):
        batch = torch.stack([_square(), torch.zeros(8, 8)])
        target = torch.stack([_square(), _square()])

        per_image = soft_dice_loss(batch, target, reduce_dims=(-2, -1))

        assert per_image.shape == (2,)
        assert float(per_image[0]) == pytest.approx(0.0, abs=1e-7)
        assert float(per_image[1]) == pytest.approx(1.0, abs=1e-6)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            soft_dice_loss(torch.zeros(4, 4), torch.zeros(5, 5))


class TestLabelComplement:
    def test_positive_is_identity(self):
        maps = [torch.rand(4, 4), torch.rand(4, 4)]
        target = torch.rand(4, 4)

        out_maps, out_target = apply_label_complement(maps, target, 1)

        assert all(torch.equal(a, b) for a, b in zip(out_maps, maps))
        assert torch.equal(out_target, target)

    def test_negative_complements_and_is_involution(self):
        maps = [torch.rand(4, 4)]
        target = torch.rand(4, 4)

        once_maps, once_target = apply_label_complement(maps, target, 0)
        twice_maps, twice_target = apply_label_complement(once_maps, once_target, 0)

        assert torch.allclose(once_maps[0], 1.0 - maps[0])
        assert torch.allclose(once_target, 1.0 - target)
        assert torch.allclose(twice_maps[0], maps[0])
        assert torch.allclose(twice_target, target)

    def test_batched_labels(self):
        maps = [torch.full((2, 3, 3), 0.2)]
        target = torch.full((2, 3, 3), 0.7)

        out_maps, out_target = apply_label_complement(maps, target, torch.tensor([1, 0]))

        assert torch.allclose(out_maps[0][0], torch.full((3, 3), 0.2))
        assert torch.allclose(out_maps[0][1], torch.full((3, 3), 0.8))
        assert torch.allclose(out_target[1], torch.full((3, 3), 0.3))

    def test_invalid_label(self):
        with pytest.raises(PreconditionError):
            apply_label_complement([torch.zeros(2, 2)], torch.zeros(2, 2), 2)


class TestTeacherLoss:
    def test_perfect_positive_prediction_is_zero(self):
        ones = torch.ones(8, 8)
        out = _output([ones, ones, ones])

        assert float(teacher_loss(out, naive_masks(1, (8, 8))[0], 1, CFG)) == pytest.approx(0.0, abs=1e-6)

    def test_perfect_negative_prediction_is_zero(self):
        zeros = torch.zeros(8, 8)
        out = _output([zeros, zeros, zeros])

        assert float(teacher_loss(out, naive_masks(0, (8, 8))[0], 0, CFG)) == pytest.approx(0.0, abs=1e-6)

    def test_sums_fused_and_block_terms(self):
        maps = [torch.full((4, 4), v) for v in (0.2, 0.5, 0.8)]
        out = _output(maps)
        ones = torch.ones(4, 4)
        expected = sum(float(soft_dice_loss(m, ones)) for m in maps + [out.fused])

        assert float(teacher_loss(out, ones, 1, CFG)) == pytest.approx(expected, rel=1e-6)

    def test_batch_is_mean_of_images(self):
        maps_a = [torch.rand(4, 4) for _ in range(3)]
        maps_b = [torch.rand(4, 4) for _ in range(3)]
        single_a = float(teacher_loss(_output(maps_a), torch.ones(4, 4), 1, CFG))
        single_b = float(teacher_loss(_output(maps_b), torch.zeros(4, 4), 0, CFG))
        batch = _output([torch.stack([a, b]) for a, b in zip(maps_a, maps_b)])
        labels = torch.tensor([1, 0])

        batched = float(teacher_loss(batch, naive_masks(labels, (4, 4)), labels, CFG))

        assert batched == pytest.approx((single_a + single_b) / 2, rel=1e-5)

    def test_inconsistent_naive_mask(self):
        out = _output([torch.rand(4, 4) for _ in range(3)])

        with pytest.raises(PreconditionError):
            teacher_loss(out, torch.zeros(4, 4), 1, CFG)

    def test_gradient_reaches_fusion_logits(self):
        logits = torch.zeros(3, requires_grad=True)
        maps = [torch.full((4, 4), v) for v in (0.1, 0.5, 0.9)]
        out = MultiScaleOutput(per_block=maps, fused=fuse_maps(maps, logits))

        teacher_loss(out, torch.ones(4, 4), 1, CFG).backward()

        assert logits.grad is not None
        # raising the weight of the brightest map lowers the positive loss
        assert float(logits.grad[2]) < 0.0 < float(logits.grad[0])


class TestKdLoss:
    def test_student_equal_to_binary_teacher_is_zero(self):
        t = _square()
        student = _output([t, t, t])

        assert float(kd_loss(student, t, 1, CFG)) == pytest.approx(0.0, abs=1e-6)

    def test_negative_target_ignores_teacher(self):
        student = _output([torch.rand(6, 6) for _ in range(3)])
        noisy_teacher = torch.rand(6, 6)

        a = kd_loss(student, noisy_teacher, 0, CFG)
        b = kd_loss(student, torch.zeros(6, 6), 0, CFG)

        assert float(a) == pytest.approx(float(b))

    def test_no_gradient_into_teacher(self):
        teacher = torch.rand(6, 6, requires_grad=True)
        student_maps = [torch.rand(6, 6, requires_grad=True) for _ in range(3)]
        student = _output(student_maps)

        kd_loss(student, teacher, 1, CFG).backward()

        assert teacher.grad is None
        assert all(m.grad is not None for m in student_maps)

    def test_gradcheck(self):
        teacher = torch.rand(4, 4, dtype=torch.float64)
        logits = torch.zeros(3, dtype=torch.float64)

        def fn(m0, m1, m2):
            maps = [m0, m1, m2]
            return kd_loss(MultiScaleOutput(maps, fuse_maps(maps, logits)), teacher, 1, CFG)

        inputs = tuple(
            (0.1 + 0.8 * torch.rand(4, 4, dtype=torch.float64)).requires_grad_(True) for _ in range(3)
        )
        assert torch.autograd.gradcheck(fn, inputs)


class TestWceLoss:
    def test_zero_teacher_gives_zero(self):
        assert float(wce_loss(torch.rand(5, 5), torch.zeros(5, 5), CFG)) == pytest.approx(0.0)

    def test_constant_cross_entropy(self):
        student = torch.full((5, 5), 0.5)
        expected = -math.log(0.5 + CFG.log_epsilon)

        assert float(wce_loss(student, torch.ones(5, 5), CFG)) == pytest.approx(expected, rel=1e-5)

    def test_cross_entropy_of_ln2_everywhere(self):
        student = torch.full((2, 6, 6), 0.5 - CFG.log_epsilon, dtype=torch.float64)
        teacher = torch.ones(2, 6, 6, dtype=torch.float64)

        assert float(wce_loss(student, teacher, CFG)) == pytest.approx(math.log(2.0), abs=1e-12)

    def test_weights_favor_low_cross_entropy_pixels(self):
        student = torch.tensor([[0.9, 0.1]])
        teacher = torch.ones(1, 2)
        ce = -torch.log(student + CFG.log_epsilon)
        weights = torch.softmax(-ce.flatten(), dim=0)
        expected = float((ce.flatten() * weights).sum())

        assert float(wce_loss(student, teacher, CFG)) == pytest.approx(expected, rel=1e-6)
        assert expected < float(ce.mean())

    def test_finite_at_zero_student(self):
        loss = wce_loss(torch.zeros(4, 4), torch.ones(4, 4), CFG)

        assert math.isfinite(float(loss))


class TestTotals:
    def _pair(self):
        torch.manual_seed(0)
        student = _output([torch.rand(2, 6, 6) for _ in range(3)], torch.tensor([0.2, -0.1, 0.4]))
        teacher = _output([torch.rand(2, 6, 6) for _ in range(3)])
        return student, teacher, torch.tensor([1, 0])

    def test_a_zero_is_kd_only(self):
        student, teacher, y = self._pair()
        cfg = LossConfig(a=0.0)

        assert float(student_total_loss(student, teacher.fused, y, cfg)) == pytest.approx(
            float(kd_loss(student, teacher.fused, y, cfg))
        )

    def test_total_combines_terms(self):
        student, teacher, y = self._pair()
        cfg = LossConfig(a=0.25)
        terms = distillation_loss_components(student, teacher, y, cfg, structure="fusion")

        assert float(terms["total"]) == pytest.approx(float(terms["kd"]) + 0.25 * float(terms["wce"]))
        assert float(terms["total"]) == pytest.approx(float(student_total_loss(student, teacher.fused, y, cfg)))

    def test_structure_b_uses_fused_only(self):
        student, teacher, y = self._pair()
        cfg = LossConfig(a=0.0)
        fused_only = MultiScaleOutput(per_block=[], fused=student.fused)

        terms_b = distillation_loss_components(student, teacher, y, cfg, structure="b")
        terms_fusion = distillation_loss_components(student, teacher, y, cfg, structure="fusion")

        assert float(terms_b["kd"]) < float(terms_fusion["kd"])
        assert float(terms_b["kd"]) == pytest.approx(float(kd_loss(fused_only, teacher.fused, y, cfg)))

    def test_structure_a_matches_blocks(self):
        maps = [_square(6, 1, 3), _square(6, 2, 5), _square(6, 0, 6)]
        teacher = _output(maps)
        student = _output([m.clone() for m in maps])

        terms = distillation_loss_components(student, teacher, 1, LossConfig(a=0.0), structure="a")

        assert float(terms["kd"]) == pytest.approx(0.0, abs=1e-6)

    def test_unknown_structure(self):
        student, teacher, y = self._pair()

        with pytest.raises(ConfigurationError):
            distillation_loss_components(student, teacher, y, CFG, structure="c")

    def test_negative_a_rejected(self):
        student, teacher, y = self._pair()

        with pytest.raises(ConfigurationError):
            student_total_loss(student, teacher.fused, y, LossConfig(a=-1.0))

    def test_losses_non_negative(self):
        student, teacher, y = self._pair()
        terms = distillation_loss_components(student, teacher, y, CFG)

        assert all(float(v) >= 0.0 for v in terms.values())
