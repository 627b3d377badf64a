"""
Tests for the two-stage training engine.

:hierarchy: [Testing | Unit Tests | Training | Engine]
:relates-to:
 - motivated_by: "Frozen teacher, frozen fusion logits and role switching are runtime invariants"
 - implements: "Test suite for train_mil_stage, fit_fusion_weights, distillation_cycle,
                run_iterative_distillation"

:complexity: 6
"""

import dataclasses
import itertools

import pytest
import torch

from ikd_mil.core.exceptions import ConfigurationError, InvariantViolationError, TrainingAbortedError
from ikd_mil.metrics import evaluate_dataset
from ikd_mil.models import Checkpoint, build_backbone, clone_model
from ikd_mil.training import (
    TrainingHistory,
    distillation_cycle,
    fit_fusion_weights,
    run_iterative_distillation,
    train_mil_stage,
)
from ikd_mil.utils.hashing import parameter_checksum


def _non_fusion_state(model):
    return {k: v.clone() for k, v in model.state_dict().items() if k != "fusion.logits"}


class TestMilStage:
    def test_zero_epochs_leaves_model_untouched(self, tiny_model, tiny_dataset, tiny_train_cfg):
        before = parameter_checksum(tiny_model)
        cfg = dataclasses.replace(tiny_train_cfg, mil_epochs=0)

        checkpoint = train_mil_stage(tiny_model, tiny_dataset, cfg)

        assert parameter_checksum(tiny_model) == before
        assert checkpoint.stage_tag == "mil"

    def test_trains_backbone_not_fusion(self, tiny_model, tiny_dataset, tiny_val, tiny_train_cfg):
        history = TrainingHistory()
        before = parameter_checksum(tiny_model.blocks)

        checkpoint = train_mil_stage(tiny_model, tiny_dataset, tiny_train_cfg, val=tiny_val, history=history)

        assert parameter_checksum(tiny_model.blocks) != before
        assert torch.equal(tiny_model.fusion.logits, torch.zeros(3))
        assert [r.epoch for r in history.for_stage("mil")] == [1, 2]
        assert all(r.val_f1 is not None for r in history.rows)
        assert checkpoint.metadata["best_val_f1"] == max(r.val_f1 for r in history.rows)

    def test_same_seed_reproduces(self, tiny_spec, tiny_dataset, tiny_train_cfg):
        a = build_backbone(tiny_spec, seed=0)
        b = build_backbone(tiny_spec, seed=0)

        train_mil_stage(a, tiny_dataset, tiny_train_cfg)
        train_mil_stage(b, tiny_dataset, tiny_train_cfg)

        assert parameter_checksum(a) == parameter_checksum(b)

    def test_empty_dataset(self, tiny_model, tiny_dataset, tiny_train_cfg):
        with pytest.raises(ConfigurationError):
            train_mil_stage(tiny_model, tiny_dataset.subset([]), tiny_train_cfg)

    def test_test_split_refused_for_validation(self, tiny_model, tiny_dataset, tiny_val, tiny_train_cfg):
        with pytest.raises(ConfigurationError, match="test split"):
            train_mil_stage(tiny_model, tiny_dataset, tiny_train_cfg, val=tiny_val.with_role("test"))

    def test_non_finite_loss_aborts(self, tiny_model, tiny_dataset, tiny_train_cfg, mocker):
        mocker.patch(
            "ikd_mil.training.engine.teacher_loss",
            return_value=torch.tensor(float("nan"), requires_grad=True),
        )

        with pytest.raises(TrainingAbortedError) as exc:
            train_mil_stage(tiny_model, tiny_dataset, tiny_train_cfg)
        assert exc.value.epoch == 1
        assert exc.value.batch_index == 0

    def test_teacher_loss_decreases_on_separable_data(self, tiny_model, tiny_dataset, tiny_train_cfg):
        cfg = dataclasses.replace(tiny_train_cfg, mil_epochs=8, learning_rate=1e-2)
        history = TrainingHistory()

        train_mil_stage(tiny_model, tiny_dataset, cfg, history=history)

        losses = [r.loss_teacher for r in history.for_stage("mil")]
        assert len(losses) == 8
        assert losses[-1] < losses[0]


class TestFusionFit:
    def test_only_fusion_logits_change(self, tiny_model, tiny_dataset, tiny_train_cfg):
        before = _non_fusion_state(tiny_model)

        fit_fusion_weights(tiny_model, tiny_dataset, tiny_train_cfg)

        after = _non_fusion_state(tiny_model)
        assert all(torch.equal(before[k], after[k]) for k in before)
        assert not torch.equal(tiny_model.fusion.logits, torch.zeros(3))

    def test_planted_oracle_recovers_mask_channel(self, oracle_model, oracle_dataset, tiny_train_cfg):
        cfg = dataclasses.replace(tiny_train_cfg, fusion_fit_epochs=30, fusion_learning_rate=0.1)
        history = TrainingHistory()

        weights = fit_fusion_weights(oracle_model, oracle_dataset, cfg, history=history)
        report = evaluate_dataset(oracle_model, oracle_dataset.with_role("test"))

        assert weights.as_list().index(max(weights.as_list())) == 0
        assert weights.as_list()[0] > 0.8
        assert report.mean_f1 == pytest.approx(1.0)
        assert report.mean_hd_pos == pytest.approx(0.0)
        losses = [r.loss_teacher for r in history.for_stage("fusion")]
        assert losses[-1] < losses[0]


class TestDistillationCycle:
    def test_teacher_frozen_and_student_fusion_fixed(self, tiny_model, tiny_dataset, tiny_val, tiny_train_cfg):
        with torch.no_grad():
            tiny_model.fusion.logits.copy_(torch.tensor([0.4, -0.2, 0.1]))
        teacher = tiny_model
        student = clone_model(teacher)
        teacher_sum = parameter_checksum(teacher)
        history = TrainingHistory()

        report = distillation_cycle(teacher, student, tiny_dataset, tiny_val, tiny_train_cfg, history=history)

        assert parameter_checksum(teacher) == teacher_sum
        assert report.teacher_checksum == teacher_sum
        assert torch.equal(student.fusion.logits, teacher.fusion.logits)
        assert parameter_checksum(student.blocks) != parameter_checksum(teacher.blocks)
        assert all(r.teacher_checksum == teacher_sum for r in history.rows)
        assert [r.epoch for r in history.rows] == [1, 2]

    def test_best_checkpoint_tracks_best_epoch(self, tiny_model, tiny_dataset, tiny_val, tiny_train_cfg):
        report = distillation_cycle(
            tiny_model, clone_model(tiny_model), tiny_dataset, tiny_val, tiny_train_cfg, cycle_index=3
        )

        scores = [m.f1 for m in report.epoch_metrics]
        assert report.best_f1 == max(scores)
        assert report.best_epoch == report.epoch_metrics[scores.index(max(scores))].epoch
        assert report.best_checkpoint.stage_tag == "distill-cycle-3"

    def test_teacher_mutation_detected(self, tiny_model, tiny_dataset, tiny_val, tiny_train_cfg, mocker):
        mocker.patch(
            "ikd_mil.training.engine.parameter_checksum",
            side_effect=["before"] + ["after"] * 10,
        )

        with pytest.raises(InvariantViolationError):
            distillation_cycle(tiny_model, clone_model(tiny_model), tiny_dataset, tiny_val, tiny_train_cfg)

    def test_zero_lr_leaves_student_bit_identical(self, tiny_model, tiny_dataset, tiny_val, tiny_train_cfg):
        cfg = dataclasses.replace(tiny_train_cfg, learning_rate=0.0)
        student = clone_model(tiny_model)
        with torch.no_grad():
            for p in student.heads.parameters():
                p.add_(0.05)
        before = parameter_checksum(student)

        report = distillation_cycle(tiny_model, student, tiny_dataset, tiny_val, cfg)

        assert parameter_checksum(student) == before
        assert report.student_checksum_end == before

    def test_test_split_refused(self, tiny_model, tiny_dataset, tiny_val, tiny_train_cfg):
        with pytest.raises(ConfigurationError):
            distillation_cycle(
                tiny_model, clone_model(tiny_model), tiny_dataset, tiny_val.with_role("test"), tiny_train_cfg
            )


class TestIterativeDistillation:
    def test_switches_after_every_cycle_but_the_last(self, tiny_model, tiny_dataset, tiny_val, tiny_train_cfg):
        best, reports = run_iterative_distillation(tiny_train_cfg, tiny_dataset, tiny_val, teacher=tiny_model)

        assert [r.cycle_index for r in reports] == [0, 1]
        assert [r.start_epoch for r in reports] == [1, 3]
        assert [r.switched for r in reports] == [True, False]
        # after the switch the previous student supervises
        assert reports[1].teacher_checksum == reports[0].student_checksum_end
        assert not best.training

    def test_no_switch(self, tiny_model, tiny_dataset, tiny_val, tiny_train_cfg):
        cfg = dataclasses.replace(tiny_train_cfg, role_switch=False)

        _, reports = run_iterative_distillation(cfg, tiny_dataset, tiny_val, teacher=tiny_model)

        assert not any(r.switched for r in reports)
        assert reports[0].teacher_checksum == reports[1].teacher_checksum

    def test_caller_teacher_not_mutated(self, tiny_model, tiny_dataset, tiny_val, tiny_train_cfg):
        before = parameter_checksum(tiny_model)

        run_iterative_distillation(tiny_train_cfg, tiny_dataset, tiny_val, teacher=tiny_model)

        assert parameter_checksum(tiny_model) == before

    def test_partial_last_cycle(self, tiny_model, tiny_dataset, tiny_val, tiny_train_cfg):
        cfg = dataclasses.replace(tiny_train_cfg, total_distill_epochs=3)

        _, reports = run_iterative_distillation(cfg, tiny_dataset, tiny_val, teacher=tiny_model)

        assert [r.epochs for r in reports] == [2, 1]

    def test_zero_epochs_returns_teacher_copy(self, tiny_model, tiny_dataset, tiny_val, tiny_train_cfg):
        cfg = dataclasses.replace(tiny_train_cfg, total_distill_epochs=0)

        best, reports = run_iterative_distillation(cfg, tiny_dataset, tiny_val, teacher=tiny_model)

        assert reports == []
        assert parameter_checksum(best) == parameter_checksum(tiny_model)

    def test_best_model_matches_best_cycle(self, tiny_model, tiny_dataset, tiny_val, tiny_train_cfg):
        best, reports = run_iterative_distillation(tiny_train_cfg, tiny_dataset, tiny_val, teacher=tiny_model)

        winner = max(reports, key=lambda r: r.best_f1)
        assert parameter_checksum(best) == winner.best_checkpoint.checksum()

    def test_validation_trigger(self, tiny_model, tiny_dataset, tiny_val, tiny_train_cfg):
        cfg = dataclasses.replace(tiny_train_cfg, switch_trigger="validation")

        _, reports = run_iterative_distillation(cfg, tiny_dataset, tiny_val, teacher=tiny_model)

        first = reports[0]
        assert first.switched == (first.best_f1 > first.teacher_val_f1)

    def test_random_student_init(self, tiny_model, tiny_dataset, tiny_val, tiny_train_cfg):
        with torch.no_grad():
            tiny_model.fusion.logits.copy_(torch.tensor([1.0, 0.0, -1.0]))
        cfg = dataclasses.replace(tiny_train_cfg, student_init="random", total_distill_epochs=2)

        best, _ = run_iterative_distillation(cfg, tiny_dataset, tiny_val, teacher=tiny_model)

        assert torch.equal(best.fusion.logits, tiny_model.fusion.logits)

    def test_accepts_checkpoint_teacher(self, tiny_model, tiny_dataset, tiny_val, tiny_train_cfg):
        checkpoint = Checkpoint.from_model(tiny_model, "mil")

        _, reports = run_iterative_distillation(tiny_train_cfg, tiny_dataset, tiny_val, teacher=checkpoint)

        assert reports[0].teacher_checksum == checkpoint.checksum()

    def test_inline_stage_one(self, tiny_spec, tiny_dataset, tiny_val, tiny_train_cfg):
        history = TrainingHistory()
        cfg = dataclasses.replace(tiny_train_cfg, total_distill_epochs=2)

        run_iterative_distillation(cfg, tiny_dataset, tiny_val, backbone=tiny_spec, history=history)

        assert [r.stage for r in history.rows] == ["mil", "mil", "fusion", "fusion", "distill", "distill"]

    def test_resume_skips_finished_cycles(self, tiny_model, tiny_dataset, tiny_val, tiny_train_cfg, tmp_path):
        history = TrainingHistory()
        best, reports = run_iterative_distillation(
            tiny_train_cfg, tiny_dataset, tiny_val, teacher=tiny_model, history=history, run_dir=tmp_path
        )

        assert (tmp_path / "checkpoints" / "cycle-1.pt").exists()
        assert (tmp_path / "checkpoints" / "best-cycle-0.pt").exists()

        resumed_history = TrainingHistory()
        resumed, resumed_reports = run_iterative_distillation(
            tiny_train_cfg, tiny_dataset, tiny_val, teacher=tiny_model, history=resumed_history, run_dir=tmp_path
        )

        assert len(resumed_reports) == len(reports)
        assert parameter_checksum(resumed) == parameter_checksum(best)
        assert len(resumed_history) == len(history)

    def test_selected_f1_is_running_maximum(self, tiny_model, tiny_dataset, tiny_val, tiny_train_cfg):
        cfg = dataclasses.replace(tiny_train_cfg, total_distill_epochs=6)

        best, reports = run_iterative_distillation(cfg, tiny_dataset, tiny_val, teacher=tiny_model)

        running = list(itertools.accumulate((r.best_f1 for r in reports), max))
        assert len(reports) == 3
        assert all(a <= b for a, b in zip(running, running[1:]))
        assert all(r.best_f1 <= running[-1] for r in reports)
        score = evaluate_dataset(best, tiny_val, batch_size=cfg.eval_batch_size).mean_f1
        assert score == pytest.approx(running[-1])


class TestResumeConfig:
    def _first_run(self, model, data, val, cfg, run_dir):
        run_iterative_distillation(cfg, data, val, teacher=model, run_dir=run_dir)
        assert (run_dir / "checkpoints" / "cycle-1.pt").exists()

    def test_changed_config_refused(self, tiny_model, tiny_dataset, tiny_val, tiny_train_cfg, tmp_path):
        self._first_run(tiny_model, tiny_dataset, tiny_val, tiny_train_cfg, tmp_path)
        changed = dataclasses.replace(tiny_train_cfg, learning_rate=5e-4)

        with pytest.raises(ConfigurationError, match="cycle-1.pt"):
            run_iterative_distillation(changed, tiny_dataset, tiny_val, teacher=tiny_model, run_dir=tmp_path)

    def test_changed_loss_constant_refused(self, tiny_model, tiny_dataset, tiny_val, tiny_train_cfg, tmp_path):
        self._first_run(tiny_model, tiny_dataset, tiny_val, tiny_train_cfg, tmp_path)
        changed = dataclasses.replace(tiny_train_cfg, a=0.5)

        with pytest.raises(ConfigurationError):
            run_iterative_distillation(changed, tiny_dataset, tiny_val, teacher=tiny_model, run_dir=tmp_path)

    def test_runtime_fields_do_not_block_resume(self, tiny_model, tiny_dataset, tiny_val, tiny_train_cfg, tmp_path):
        self._first_run(tiny_model, tiny_dataset, tiny_val, tiny_train_cfg, tmp_path)
        relaxed = dataclasses.replace(tiny_train_cfg, eval_batch_size=2)

        _, reports = run_iterative_distillation(relaxed, tiny_dataset, tiny_val, teacher=tiny_model, run_dir=tmp_path)

        assert [r.cycle_index for r in reports] == [0, 1]

    def test_resume_disabled_starts_fresh(self, tiny_model, tiny_dataset, tiny_val, tiny_train_cfg, tmp_path):
        self._first_run(tiny_model, tiny_dataset, tiny_val, tiny_train_cfg, tmp_path)
        changed = dataclasses.replace(tiny_train_cfg, learning_rate=5e-4)
        history = TrainingHistory()

        run_iterative_distillation(
            changed, tiny_dataset, tiny_val, teacher=tiny_model, history=history, run_dir=tmp_path, resume=False
        )

        assert len(history.for_stage("distill")) == 4
