"""
Tests for record formatting, hierarchy tags and the per-run log sink.

:hierarchy: [Testing | Unit Tests | Utils | Logger]
"""

import pytest

from ikd_mil.training import train_mil_stage
from ikd_mil.utils.logger import format_fields, format_value, get_logger, hierarchy_of, run_log


class TestFields:
    def test_value_rendering(self):
        assert format_value(None) == "n/a"
        assert format_value(0.25) == "0.25000"
        assert format_value(0.25, digits=2) == "0.25"
        assert format_value(3) == "3"
        assert format_value(True) == "True"

    def test_fields_keep_keyword_order(self):
        text = format_fields(cycle=2, epoch=7, val_f1=None, loss_kd=0.5)

        assert text == "cycle=2 | epoch=7 | val_f1=n/a | loss_kd=0.50000"


class TestLogger:
    def test_hierarchy_from_docstring(self):
        assert hierarchy_of(train_mil_stage) == "Training | Engine | TrainMilStage"
        assert hierarchy_of(lambda: None) is None

    def test_name_prefixed(self):
        assert get_logger("custom").name == "ikd_mil.custom"
        assert get_logger("ikd_mil.cli").name == "ikd_mil.cli"

    def test_record_layout(self):
        log = get_logger(__name__)

        message = log.record("Engine", "Cycle", digits=4, cycle=0, best_f1=0.71234, switched=True)

        assert message == "[Engine|Cycle] cycle=0 | best_f1=0.7123 | switched=True"
        assert log.record("CLI", "Main") == "[CLI|Main]"


class TestRunLog:
    def test_records_reach_run_file(self, tmp_path):
        log = get_logger(__name__, train_mil_stage)

        with run_log(tmp_path / "run") as path:
            log.record("Engine", "MIL", epoch="1/2", loss_teacher=0.5)
            log.debug("batch detail")
        log.info("[Engine|MIL] after the block")

        text = path.read_text(encoding="utf-8")
        assert path.name == "run.log"
        assert "[Engine|MIL] epoch=1/2 | loss_teacher=0.50000" in text
        assert "[Training | Engine | TrainMilStage] batch detail" in text
        assert "after the block" not in text

    def test_sink_removed_on_error(self, tmp_path):
        log = get_logger(__name__)

        with pytest.raises(RuntimeError):
            with run_log(tmp_path) as path:
                raise RuntimeError("boom")
        log.info("[Test|Log] later")

        assert "later" not in path.read_text(encoding="utf-8")
