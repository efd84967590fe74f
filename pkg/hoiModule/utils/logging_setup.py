"""
    Logging set-up for command-line runs.

    Library modules only call logging.getLogger(__name__). The command-line interface calls
    setup_logging() once, which installs a formatter writing one JSON object per line so the
    sweep harness and the trace tools can parse the run logs. Structured payloads are passed
    with `extra={"record": {...}}` and end up under the "record" key.
"""
import json
import logging
import time

# Plain-text formatter for interactive use
TEXT_FORMATTER = logging.Formatter('%(asctime)s - %(name)s - %(levelname)s - %(message)s')
_OWNED = "_hoi_handler"


class JsonLineFormatter(logging.Formatter):
    """
    Formatter emitting one JSON object per log record.

    Keys: ts (UTC, ISO 8601), level, logger, msg and, when given, record.
    """
    def format(self, record: logging.LogRecord) -> str:
        entry = {
            "ts"    : time.strftime("%Y-%m-%dT%H:%M:%S", time.gmtime(record.created))
                      + f".{int(record.msecs):03d}Z",
            "level" : record.levelname,
            "logger": record.name,
            "msg"   : record.getMessage(),
        }
        payload = getattr(record, "record", None)
        if payload is not None:
            entry["record"] = payload
        if record.exc_info:
            entry["exc"] = self.formatException(record.exc_info)
        return json.dumps(entry, default=_to_jsonable)


def _to_jsonable(value):
    """Fallback for numpy scalars and arrays inside log payloads."""
    if hasattr(value, "tolist"):
        return value.tolist()
    return str(value)


def setup_logging(level: str = "INFO", log_file: str | None = None,
                  structured: bool = True) -> logging.Logger:
    """
    Configure the root logger of the package.

    Args:
        level (str): logging level name.
        log_file (str): optional file receiving the same records as stderr.
        structured (bool): JSON lines when True, plain text otherwise.

    Returns:
        logging.Logger: the "hoiModule" logger.
    """
    numeric = logging.getLevelName(level.upper())
    if not isinstance(numeric, int):
        raise ValueError(f"Unknown logging level: {level}")
    formatter = JsonLineFormatter() if structured else TEXT_FORMATTER
    root = logging.getLogger()
    # only handlers from a previous call are replaced
    for handler in list(root.handlers):
        if getattr(handler, _OWNED, False):
            root.removeHandler(handler)
            handler.close()
    handlers = [logging.StreamHandler()]
    if log_file is not None:
        handlers.append(logging.FileHandler(log_file, encoding="utf-8"))
    for handler in handlers:
        handler.setFormatter(formatter)
        setattr(handler, _OWNED, True)
        root.addHandler(handler)
    root.setLevel(numeric)
    return logging.getLogger("hoiModule")


def progress_disabled() -> bool:
    """Progress bars are only shown when INFO records would be shown as well."""
    return not logging.getLogger("hoiModule").isEnabledFor(logging.INFO)
