"""Tests for the error hierarchy and structured logging."""

import io
import json
import logging

from sxextract.core.errors import (
    CheckpointError,
    ConfigError,
    CorpusFormatError,
    NumericalError,
    ShapeError,
    SxError,
    VerificationError,
)
from sxextract.core.logging import LOGGER_NAME, RunContextFilter, get_logger, get_run_id, set_run_id, setup_logging


class TestErrors:
    """Exception messages and components."""

    def test_every_error_is_an_sx_error(self) -> None:
        """All package errors share one base class."""
        for error in (
            ConfigError("x"),
            CorpusFormatError("x"),
            CheckpointError("x"),
            NumericalError("x"),
            VerificationError("x"),
            ShapeError("op", (1,), (2,)),
        ):
            assert isinstance(error, SxError)
            assert error.component

    def test_corpus_error_names_line_and_field(self) -> None:
        """Format errors carry the line number and field path."""
        error = CorpusFormatError("missing field", line=3, field="turns[0].speaker")
        assert error.line == 3
        assert error.message == "line 3, field turns[0].speaker: missing field"

    def test_shape_error_names_op_and_shapes(self) -> None:
        """Shape errors name the operation and both shapes."""
        error = ShapeError("matmul", (2, 3), (4, 5))
        assert "matmul" in error.message
        assert "(2, 3)" in error.message and "(4, 5)" in error.message

    def test_numerical_error_context(self) -> None:
        """Numerical errors keep step and unit id."""
        error = NumericalError("nan", step=4, unit_id="c-1:0-1")
        assert (error.step, error.unit_id, error.component) == (4, "c-1:0-1", "training")


class TestLogging:
    """Logger setup and run-id stamping."""

    def test_run_context_filter_stamps_run_id(self) -> None:
        """Every record receives the current run id."""
        set_run_id("run-123")
        record = logging.LogRecord("sxextract.x", logging.INFO, __file__, 1, "msg", (), None)
        assert RunContextFilter().filter(record)
        assert record.run_id == "run-123"  # type: ignore[attr-defined]
        assert get_run_id() == "run-123"

    def test_setup_installs_single_handler(self) -> None:
        """Repeated setup keeps exactly one stream handler."""
        setup_logging("INFO", "text")
        logger = setup_logging("DEBUG", "text")
        assert logger.name == LOGGER_NAME
        assert len([h for h in logger.handlers if isinstance(h, logging.StreamHandler)]) == 1
        assert logger.level == logging.DEBUG
        assert logger.propagate is False

    def test_json_output_carries_extra_fields(self) -> None:
        """JSON records include structured extra fields and the run id."""
        logger = setup_logging("INFO", "json")
        stream = io.StringIO()
        handler = logger.handlers[0]
        handler.setStream(stream)  # type: ignore[attr-defined]
        set_run_id("abc")
        get_logger("tests").info("epoch complete", extra={"epoch": 2, "loss": 0.5})
        payload = json.loads(stream.getvalue().strip().splitlines()[-1])
        assert payload["message"] == "epoch complete"
        assert payload["epoch"] == 2
        assert payload["run_id"] == "abc"

    def test_child_logger_names(self) -> None:
        """Child loggers live under the package namespace."""
        assert get_logger("services.metrics").name == "sxextract.services.metrics"
        assert get_logger("sxextract.cli").name == "sxextract.cli"
