from typing import Dict, Tuple, Type

from blockout.exceptions import (
    BlockoutError,
    ConfigError,
    LogicError,
    NonFiniteLossError,
    ParseError,
)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_PARSE = 3
EXIT_NON_FINITE = 4
EXIT_MISSING = 5
EXIT_VALIDATION = 6

# Checked in order; the first matching class decides the exit code
EXIT_CODES: Dict[Type[BaseException], int] = {
    ConfigError: EXIT_CONFIG,
    ParseError: EXIT_PARSE,
    NonFiniteLossError: EXIT_NON_FINITE,
    FileNotFoundError: EXIT_MISSING,
    LogicError: EXIT_VALIDATION,
    BlockoutError: EXIT_FAILURE,
    OSError: EXIT_FAILURE,
}

EXIT_NAMES = {
    EXIT_OK: "OK",
    EXIT_FAILURE: "FAILED",
    EXIT_CONFIG: "INVALID_CONFIG",
    EXIT_PARSE: "MALFORMED_FILE",
    EXIT_NON_FINITE: "NON_FINITE_LOSS",
    EXIT_MISSING: "NOT_FOUND",
    EXIT_VALIDATION: "VALIDATION_FAILED",
}


def exit_code_for(exc: BaseException) -> int:
    """
    Map an exception to a process exit code.

    Args:
        exc: Exception raised by a command

    Returns:
        Exit code from EXIT_CODES, or EXIT_FAILURE when nothing matches
    """
    for exc_type, code in EXIT_CODES.items():
        if isinstance(exc, exc_type):
            return code
    return EXIT_FAILURE


def error_response(exc: BaseException) -> Tuple[int, str]:
    """
    Create the standard one-line diagnostic for a failed command.

    Args:
        exc: Exception raised by a command

    Returns:
        (exit code, "error[<NAME>]: <description>")
    """
    code = exit_code_for(exc)
    if isinstance(exc, FileNotFoundError) and exc.filename:
        description = f"{exc.strerror or 'missing'}: {exc.filename}"
    else:
        description = str(exc) or type(exc).__name__
    return code, f"error[{EXIT_NAMES.get(code, 'UNKNOWN')}]: {description}"
