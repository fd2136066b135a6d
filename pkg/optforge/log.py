# Copyright the optforge contributors
# SPDX-License-Identifier: MIT OR Apache-2.0

"""
A central location for all logging-related configuration. Library modules
only ever do::

    logger = logging.getLogger(__name__)

and never configure handlers themselves. This module sets up the top-level
'optforge' logger (a NullHandler by default) and is imported by the
command-line entry point, which decides whether messages go to the console,
to a file, or both.

Console messages are bare; file messages use the full
'[time UTC] [name] [LEVEL] [func:line@file]' layout.
"""

import logging
import time
from typing import Optional

from securesystemslib import formats as sslib_formats

from optforge import settings

_DEFAULT_LOG_LEVEL = logging.DEBUG
_DEFAULT_CONSOLE_LOG_LEVEL = logging.INFO
_DEFAULT_FILE_LOG_LEVEL = logging.DEBUG

_FORMAT_STRING = (
    "[%(asctime)s UTC] [%(name)s] [%(levelname)s] "
    "[%(funcName)s:%(lineno)s@%(filename)s]\n%(message)s\n"
)

# All formatters talk GMT so that log lines line up across machines.
logging.Formatter.converter = time.gmtime
formatter = logging.Formatter(_FORMAT_STRING)

console_handler: Optional[logging.Handler] = None
file_handler: Optional[logging.Handler] = None

# Configure the top-level hierarchy for the package, so the logger is
# requested by name rather than with logging.getLogger(__name__).
logger = logging.getLogger("optforge")
logger.setLevel(_DEFAULT_LOG_LEVEL)
logger.addHandler(logging.NullHandler())

if settings.ENABLE_FILE_LOGGING:
    file_handler = logging.FileHandler(settings.LOG_FILENAME)
    file_handler.setLevel(_DEFAULT_FILE_LOG_LEVEL)
    file_handler.setFormatter(formatter)
    logger.addHandler(file_handler)


class ConsoleFilter(logging.Filter):
    """Replace exception tracebacks with the exception class name on the
    console. The file log keeps the full traceback."""

    def filter(self, record: logging.LogRecord) -> bool:
        if record.exc_info:
            exc_type, _, _ = record.exc_info
            if exc_type is not None:
                record.exc_text = exc_type.__name__

        return True


def set_log_level(log_level: int = _DEFAULT_LOG_LEVEL) -> None:
    """Override the level of the 'optforge' logger.

    Raises:
        securesystemslib.exceptions.FormatError: Not a logging level.
    """
    sslib_formats.LOGLEVEL_SCHEMA.check_match(log_level)
    logger.setLevel(log_level)


def set_console_log_level(log_level: int = _DEFAULT_CONSOLE_LOG_LEVEL) -> None:
    """Override the level of the console handler.

    Raises:
        RuntimeError: add_console_handler() has not been called.
    """
    sslib_formats.LOGLEVEL_SCHEMA.check_match(log_level)

    if console_handler is None:
        raise RuntimeError(
            "The console handler has not been set with add_console_handler()"
        )

    console_handler.setLevel(log_level)


def add_console_handler(log_level: int = _DEFAULT_CONSOLE_LOG_LEVEL) -> None:
    """Send 'optforge' messages at or above ``log_level`` to stderr."""
    sslib_formats.LOGLEVEL_SCHEMA.check_match(log_level)

    global console_handler  # pylint: disable=global-statement

    if console_handler is not None:
        logger.warning("We already have a console handler.")
        return

    console_handler = logging.StreamHandler()
    console_handler.setLevel(log_level)
    console_handler.setFormatter(logging.Formatter("%(message)s"))
    console_handler.addFilter(ConsoleFilter())
    logger.addHandler(console_handler)
    logger.debug("Added a console handler.")


def remove_console_handler() -> None:
    """Remove the console handler, if previously added."""
    global console_handler  # pylint: disable=global-statement

    if console_handler is None:
        logger.warning("We do not have a console handler.")
        return

    logger.removeHandler(console_handler)
    console_handler = None
    logger.debug("Removed a console handler.")


def enable_file_logging(log_filename: str = settings.LOG_FILENAME) -> None:
    """Append log messages to ``log_filename``.

    Raises:
        RuntimeError: A file handler is already set.
    """
    sslib_formats.PATH_SCHEMA.check_match(log_filename)

    global file_handler  # pylint: disable=global-statement

    if file_handler is not None:
        raise RuntimeError(
            "The file handler has already been set. A new file handler"
            " can be set by first calling disable_file_logging()"
        )

    file_handler = logging.FileHandler(log_filename)
    file_handler.setLevel(_DEFAULT_FILE_LOG_LEVEL)
    file_handler.setFormatter(formatter)
    logger.addHandler(file_handler)


def disable_file_logging() -> None:
    """Stop logging to file. The log file itself is kept."""
    global file_handler  # pylint: disable=global-statement

    if file_handler is None:
        logger.warning("A file handler has not been set.")
        return

    logger.removeHandler(file_handler)
    file_handler.close()
    file_handler = None
    logger.debug("Removed the file handler.")
