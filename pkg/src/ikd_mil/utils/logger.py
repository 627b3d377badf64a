"""
Loguru setup for training runs.

Loggers carry the ``:hierarchy:`` of the object they are created for. Records
follow the ``[Component|Action] key=value | ...`` layout; ``record`` builds it
from keyword fields so epochs, losses and checksums read the same everywhere.

Sinks: colorized console, a rotating process log under ``IKD_MIL_LOG_DIR`` and,
while a command runs, ``run.log`` inside the run directory.

:hierarchy: [Utils | Logging]
:relates-to:
 - uses: ["library: 'loguru'"]
:complexity: 3
"""

import inspect
import os
import re
import sys
from contextlib import contextmanager
from pathlib import Path
from typing import Any, Iterator, Optional, Union

from loguru import logger

PROCESS_LOG = "ikd_mil.log"
RUN_LOG = "run.log"
ROTATION = "10 MB"
RETENTION = "35 days"

_CONSOLE_FORMAT = (
    "<green>{time:YYYY-MM-DD HH:mm:ss}</green> | <level>{level: <8}</level> | "
    "<cyan>{extra[name]}</cyan> | <level>{message}</level>"
)
_FILE_FORMAT = "{time:YYYY-MM-DD HH:mm:ss.SSS} | {level: <8} | {extra[name]}:{function}:{line} | {message}"
_HIERARCHY = re.compile(r":hierarchy:\s*\[(.*?)\]", re.IGNORECASE)

_configured = False


def format_value(value: Any, digits: int = 5) -> str:
    """Render one field value: ``n/a`` for None, fixed digits for floats."""
    if value is None:
        return "n/a"
    if isinstance(value, float):
        return f"{value:.{digits}f}"
    return str(value)


def format_fields(digits: int = 5, **fields: Any) -> str:
    """
    ``key=value`` pairs joined by ``" | "`` in keyword order.

    :hierarchy: [Utils | Logging | Fields]
    """
    return " | ".join(f"{key}={format_value(value, digits)}" for key, value in fields.items())


class HierarchyLoggerAdapter:
    """
    Thin wrapper over the loguru logger bound to a module name.

    DEBUG messages without their own ``[..]`` tag get the hierarchy prefix.

    :hierarchy: [Utils | Logging | HierarchyLoggerAdapter]
    """

    def __init__(self, name: str, hierarchy: Optional[str] = None):
        self.name = name
        self.hierarchy = hierarchy
        self._logger = logger.bind(name=name, hierarchy=hierarchy or "")

    def debug(self, message: str, **kwargs):
        if self.hierarchy and not message.startswith("["):
            message = f"[{self.hierarchy}] {message}"
        self._logger.debug(message, **kwargs)

    def info(self, message: str, **kwargs):
        self._logger.info(message, **kwargs)

    def warning(self, message: str, **kwargs):
        self._logger.warning(message, **kwargs)

    def error(self, message: str, **kwargs):
        self._logger.error(message, **kwargs)

    def exception(self, message: str, **kwargs):
        self._logger.exception(message, **kwargs)

    def record(self, component: str, action: str, level: str = "INFO", digits: int = 5, **fields: Any) -> str:
        """
        Emit ``[component|action] key=value | ...`` and return the message.

        :hierarchy: [Utils | Logging | Record]
        """
        message = f"[{component}|{action}]"
        if fields:
            message = f"{message} {format_fields(digits, **fields)}"
        self._logger.log(level.upper(), message)
        return message


def hierarchy_of(obj: Any) -> Optional[str]:
    """Contents of the ``:hierarchy: [...]`` field of ``obj``'s docstring, if any."""
    docstring = inspect.getdoc(obj)
    if not docstring:
        return None
    match = _HIERARCHY.search(docstring)
    return match.group(1).strip() if match else None


def get_logger(name: str, obj: Optional[Any] = None) -> HierarchyLoggerAdapter:
    """
    Logger for a module, tagged with the hierarchy of ``obj`` when given.

    :hierarchy: [Utils | Logging | Factory]

    Example:
        >>> logger = get_logger(__name__, train_mil_stage)
        >>> logger.record("Engine", "MIL", epoch="1/30", loss_teacher=0.41)
        '[Engine|MIL] epoch=1/30 | loss_teacher=0.41000'
    """
    if not name.startswith("ikd_mil"):
        name = f"ikd_mil.{name}"
    return HierarchyLoggerAdapter(name, hierarchy_of(obj) if obj is not None else None)


def setup_logging(level: Optional[str] = None, log_dir: Optional[str] = None) -> None:
    """
    Replace all sinks with console plus rotating process log.

    :hierarchy: [Utils | Logging | Setup]

    Args:
        level: Console level, default ``IKD_MIL_LOG_LEVEL`` or INFO
        log_dir: Process log directory, default ``IKD_MIL_LOG_DIR`` or ./logs
    """
    global _configured

    level = (level or os.getenv("IKD_MIL_LOG_LEVEL", "INFO")).upper()
    log_dir = log_dir or os.getenv("IKD_MIL_LOG_DIR", "./logs")

    logger.remove()
    logger.configure(extra={"name": "ikd_mil", "hierarchy": ""})
    logger.add(sys.stderr, format=_CONSOLE_FORMAT, level=level, colorize=True, enqueue=True)

    target = Path(log_dir) / PROCESS_LOG
    try:
        target.parent.mkdir(parents=True, exist_ok=True)
        logger.add(
            target,
            format=_FILE_FORMAT,
            level="DEBUG",
            rotation=ROTATION,
            retention=RETENTION,
            compression="zip",
            enqueue=True,
            catch=True,
            encoding="utf-8",
        )
    except OSError as e:
        logger.warning(f"[Logging|Setup] no process log at {target}: {e}; console only")

    _configured = True
    logger.debug(f"[Logging|Setup] level={level} | log_dir={log_dir}")


@contextmanager
def run_log(run_dir: Union[str, Path], level: str = "DEBUG") -> Iterator[Path]:
    """
    Mirror every record to ``run_dir/run.log`` while the block runs.

    The sink is synchronous, so the file is complete when the block exits.

    :hierarchy: [Utils | Logging | RunLog]
    :contract:
     - post: "sink removed on exit, also when the block raises"
    """
    path = Path(run_dir) / RUN_LOG
    path.parent.mkdir(parents=True, exist_ok=True)
    sink_id = logger.add(path, format=_FILE_FORMAT, level=level, encoding="utf-8", enqueue=False)
    try:
        yield path
    finally:
        logger.remove(sink_id)


if not _configured and not os.getenv("IKD_MIL_NO_AUTO_LOG_SETUP"):
    setup_logging()
