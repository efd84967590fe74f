"""
Module to test the JSON-lines logging of command-line runs.
"""
import json
import logging

import numpy as np
import pytest

from hoiModule.utils.logging_setup import JsonLineFormatter, progress_disabled, setup_logging


@pytest.fixture
def restore_root():
    """Remove the handlers installed by setup_logging and restore the root level"""
    root = logging.getLogger()
    level, handlers = root.level, list(root.handlers)
    yield root
    for handler in list(root.handlers):
        if handler not in handlers:
            root.removeHandler(handler)
            handler.close()
    root.setLevel(level)


def make_record(msg, *args, **extra):
    record = logging.LogRecord("hoiModule.test", logging.INFO, __file__, 1, msg, args, None)
    for key, value in extra.items():
        setattr(record, key, value)
    return record


def test_json_line_keys():
    line = JsonLineFormatter().format(make_record("step %d", 3))
    entry = json.loads(line)
    assert set(entry) == {"ts", "level", "logger", "msg"}
    assert entry["msg"] == "step 3"
    assert entry["level"] == "INFO"
    assert entry["ts"].endswith("Z")


def test_structured_payload_with_numpy_values():
    record = make_record("cdir iteration",
                         record={"loss": np.float64(0.25), "x": np.arange(3), "n": 2})
    entry = json.loads(JsonLineFormatter().format(record))
    assert entry["record"] == {"loss": 0.25, "x": [0, 1, 2], "n": 2}


def test_setup_logging_writes_json_lines(tmp_path, restore_root):
    log_file = str(tmp_path / "run.log")
    logger = setup_logging("DEBUG", log_file)
    logging.getLogger("hoiModule.optimizer").info("Refined", extra={"record": {"n": 1}})
    for handler in restore_root.handlers:
        handler.flush()
    assert logger.name == "hoiModule"
    with open(log_file, encoding="utf-8") as f:
        entries = [json.loads(line) for line in f]
    assert entries[-1]["record"] == {"n": 1}
    assert not progress_disabled()


def test_setup_logging_replaces_only_its_own_handlers(restore_root):
    before = len(restore_root.handlers)
    setup_logging("WARNING")
    setup_logging("WARNING", structured=False)
    assert len(restore_root.handlers) == before + 1
    assert progress_disabled()


def test_unknown_level():
    with pytest.raises(ValueError):
        setup_logging("LOUD")
