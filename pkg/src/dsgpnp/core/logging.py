"""Run and debug logs of plug-and-play reconstructions.

A reconstruction writes two logs. The run log is a table with one row per reported ADMM
iteration, echoed to the console if requested. The debug log collects operator events such as
weight freezing, clamped DSG weights or the sub-step costs of the tomography inversion. Rows of
either log are assembled from `Statistic` columns.

Classes:
    LoggerSettings: Data class storing settings for the logger
    Statistic: Labelled, formatted column of a log row
    PnPLogger: Logger for plug-and-play runs
"""

import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

_EVENT_WIDTH = 15


# ==================================================================================================
@dataclass(frozen=True)
class LoggerSettings:
    """Data class storing settings for the logger.

    Attributes:
        do_printing (bool): Echo the run table to stdout, default is True
        logfile_path (Path | None): Run log file, default is None
        debugfile_path (Path | None): Debug log file, debug events are dropped if None
        write_mode (str): "w" to overwrite or "a" to append to existing log files
        print_interval (int): Iterations between two rows of the run table, default is 1
    """

    do_printing: bool = True
    logfile_path: Path | None = None
    debugfile_path: Path | None = None
    write_mode: str = "w"
    print_interval: int = 1


# ==================================================================================================
@dataclass
class Statistic:
    """Labelled column of a log row.

    Attributes:
        label (str): Column label, padded by the caller to the column width
        spec (str): Format spec applied to the value, or to each entry of an array value
        value (float | np.ndarray | None): Current value, logged as NaN while unset
    """

    label: str
    spec: str
    value: float | np.ndarray | None = None

    def set_value(self, value: float | np.ndarray | None) -> None:
        """Replace the current value.

        Raises:
            TypeError: If the value is neither a number nor an array
        """
        if value is not None and not isinstance(value, int | float | np.number | np.ndarray):
            raise TypeError(f"Statistic {self.label.strip()!r} cannot hold {type(value).__name__}")
        self.value = value

    def formatted(self) -> str:
        """Value formatted with `spec`; arrays become a parenthesized comma-separated list."""
        if self.value is None:
            return f"{np.nan:{self.spec}}"
        if isinstance(self.value, np.ndarray):
            entries = ",".join(f"{entry:{self.spec}}" for entry in self.value.ravel())
            return f"({entries})"
        return f"{self.value:{self.spec}}"


def _is_debug_record(record: logging.LogRecord) -> bool:
    return record.levelno == logging.DEBUG


# ==================================================================================================
class PnPLogger:
    """Logger for plug-and-play runs.

    Wraps a named Python logger with three handlers: stdout and the run log receive INFO and
    above, the debug log receives DEBUG records only. Loggers are keyed by name, and constructing
    a logger with a name already in use replaces the handlers of the earlier one, so that the
    methods of one study can log one after the other within a single process.

    Methods:
        log_header: Log the header of the run table
        log_run_statistics: Log a row of the run table
        log_debug_statistics: Log labelled statistics of an operator event into the debug log
        log_debug_event: Log a single named event into the debug log
        info, debug, warning, exception: Plain messages on the respective level
        close: Detach all handlers and release the log files
    """

    def __init__(self, logger_settings: LoggerSettings, name: str = "dsgpnp") -> None:
        """Constructor of the logger.

        Args:
            logger_settings (LoggerSettings): Output targets and table interval
            name (str, optional): Name of the underlying Python logger. Defaults to "dsgpnp".
        """
        self.print_interval = logger_settings.print_interval
        self._has_debug_file = logger_settings.debugfile_path is not None
        self._pylogger = logging.getLogger(f"{__name__}.{name}")
        self._pylogger.setLevel(logging.DEBUG)
        self._pylogger.propagate = False
        self.close()

        if logger_settings.do_printing:
            self._attach(logging.StreamHandler(sys.stdout), logging.INFO)
        if logger_settings.logfile_path is not None:
            self._attach(
                self._file_handler(logger_settings.logfile_path, logger_settings.write_mode),
                logging.INFO,
            )
        if self._has_debug_file:
            handler = self._file_handler(
                logger_settings.debugfile_path, logger_settings.write_mode
            )
            handler.addFilter(_is_debug_record)
            self._attach(handler, logging.DEBUG)

    # ----------------------------------------------------------------------------------------------
    def log_header(self, statistics: dict[str, Statistic]) -> None:
        """Log the column labels of the run table, underlined with dashes."""
        header = "".join(f"{statistic.label}| " for statistic in statistics.values())
        self.info(header)
        self.info("-" * (len(header) - 1))

    def log_run_statistics(self, statistics: dict[str, Statistic]) -> None:
        """Log the current values of `statistics` as one row of the run table."""
        self.info("".join(f"{statistic.formatted()}| " for statistic in statistics.values()))

    def log_debug_statistics(self, info: str, statistics: dict[str, Statistic]) -> None:
        """Log `label: value` pairs of an operator event into the debug log.

        Args:
            info (str): Event identifier, e.g. "clamp" or "tomo-prox"
            statistics (dict[str, Statistic]): Statistics describing the event
        """
        pairs = "".join(
            f"{statistic.label}: {statistic.formatted()}| " for statistic in statistics.values()
        )
        self.log_debug_event(info, pairs)

    def log_debug_event(self, event: str, message: str = "") -> None:
        """Log a named event into the debug log, if there is one.

        Args:
            event (str): Short event identifier, e.g. "freeze"
            message (str, optional): Additional information. Defaults to "".
        """
        if self._has_debug_file:
            self.debug(f"{f'[{event}]':{_EVENT_WIDTH}} {message}")

    # ----------------------------------------------------------------------------------------------
    def info(self, message: str) -> None:
        self._pylogger.info(message)

    def debug(self, message: str) -> None:
        self._pylogger.debug(message)

    def warning(self, message: str) -> None:
        self._pylogger.warning(message)

    def exception(self, message: str) -> None:
        """Log `message` with the traceback of the exception being handled."""
        self._pylogger.exception(message)

    def close(self) -> None:
        """Close and detach all handlers, releasing open log files."""
        for handler in list(self._pylogger.handlers):
            handler.close()
            self._pylogger.removeHandler(handler)

    # ----------------------------------------------------------------------------------------------
    def _attach(self, handler: logging.Handler, level: int) -> None:
        handler.setLevel(level)
        handler.setFormatter(logging.Formatter("%(message)s"))
        self._pylogger.addHandler(handler)

    @staticmethod
    def _file_handler(path: Path, mode: str) -> logging.FileHandler:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        return logging.FileHandler(path, mode=mode)
