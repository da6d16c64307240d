"""
Unit tests for response_handler module.
Tests the exit code mapping and the one-line diagnostic format.
"""
import errno

import pytest

from blockout.exceptions import (
    ConfigError,
    DomainError,
    LogicError,
    NonFiniteLossError,
    ParseError,
    ShapeError,
)
from blockout.shared.response_handler import (
    EXIT_CONFIG,
    EXIT_FAILURE,
    EXIT_MISSING,
    EXIT_NON_FINITE,
    EXIT_PARSE,
    EXIT_VALIDATION,
    error_response,
    exit_code_for,
)


@pytest.mark.unit
class TestExitCodeFor:
    """Test exit_code_for function."""

    @pytest.mark.parametrize(
        "exc, code",
        [
            (ConfigError("run.yaml", "bad"), EXIT_CONFIG),
            (ParseError("truncated", 12), EXIT_PARSE),
            (NonFiniteLossError(3, "layer0.weights", float("nan")), EXIT_NON_FINITE),
            (FileNotFoundError(errno.ENOENT, "training log not found", "runs/a/training_log.json"), EXIT_MISSING),
            (LogicError("stale state"), EXIT_VALIDATION),
            (ShapeError("matmul", (2, 3), (2, 3)), EXIT_FAILURE),
            (DomainError("k must be positive"), EXIT_FAILURE),
            (PermissionError(errno.EACCES, "denied"), EXIT_FAILURE),
            (RuntimeError("boom"), EXIT_FAILURE),
        ],
    )
    def test_mapping(self, exc, code):
        """Verify each failure class maps to its exit code."""
        assert exit_code_for(exc) == code


@pytest.mark.unit
class TestErrorResponse:
    """Test error_response function."""

    def test_config_error_format(self):
        """Verify the diagnostic carries file, line and field."""
        code, message = error_response(ConfigError("run.yaml", "Input should be greater than 0", line=4, field="batch_size"))
        assert code == EXIT_CONFIG
        assert message == "error[INVALID_CONFIG]: run.yaml:4: field 'batch_size': Input should be greater than 0"

    def test_missing_file_names_path(self):
        """Verify a missing file reports the reason and the path."""
        code, message = error_response(FileNotFoundError(errno.ENOENT, "no probability snapshots recorded", "r/log.json"))
        assert code == EXIT_MISSING
        assert message == "error[NOT_FOUND]: no probability snapshots recorded: r/log.json"

    def test_parse_error_offset(self):
        """Verify parse errors keep their byte offset and record index."""
        _, message = error_response(ParseError("label 10 >= num_classes 10", 48, record_index=1))
        assert message == "error[MALFORMED_FILE]: label 10 >= num_classes 10 (byte 48, record 1)"

    def test_empty_message_falls_back_to_type(self):
        """Verify an exception without text is named by its type."""
        assert error_response(RuntimeError()) == (EXIT_FAILURE, "error[FAILED]: RuntimeError")
