"""
Unit tests for the package-level logging setup.
"""

import logging

import pytest

from ranker import LOG_FORMAT, _configure_logging


@pytest.fixture
def root_logger():
    root = logging.getLogger()
    handlers = list(root.handlers)
    level = root.level
    yield root
    for handler in root.handlers:
        if handler not in handlers:
            root.removeHandler(handler)
            handler.close()
    root.setLevel(level)


def _file_handlers(root, path):
    return [
        h
        for h in root.handlers
        if isinstance(h, logging.FileHandler) and h.baseFilename == str(path.resolve())
    ]


class TestConfigureLogging:
    def test_level_by_name(self, root_logger, monkeypatch):
        monkeypatch.setenv("LOG_LEVEL", "warning")
        monkeypatch.delenv("RANKER_LOG_FILE", raising=False)
        _configure_logging()
        assert root_logger.level == logging.WARNING

    def test_level_by_number(self, root_logger, monkeypatch):
        monkeypatch.setenv("LOG_LEVEL", "15")
        monkeypatch.delenv("RANKER_LOG_FILE", raising=False)
        _configure_logging()
        assert root_logger.level == 15

    def test_unknown_level_falls_back_to_info(self, root_logger, monkeypatch):
        monkeypatch.setenv("LOG_LEVEL", "chatty")
        monkeypatch.delenv("RANKER_LOG_FILE", raising=False)
        _configure_logging()
        assert root_logger.level == logging.INFO

    def test_no_file_handler_by_default(self, root_logger, monkeypatch):
        monkeypatch.delenv("RANKER_LOG_FILE", raising=False)
        before = [h for h in root_logger.handlers if isinstance(h, logging.FileHandler)]
        _configure_logging()
        after = [h for h in root_logger.handlers if isinstance(h, logging.FileHandler)]
        assert after == before

    def test_log_file_added_once(self, root_logger, monkeypatch, tmp_path):
        path = tmp_path / "logs" / "ranker.log"
        monkeypatch.setenv("RANKER_LOG_FILE", str(path))
        monkeypatch.setenv("LOG_LEVEL", "INFO")
        _configure_logging()
        _configure_logging()
        handlers = _file_handlers(root_logger, path)
        assert len(handlers) == 1
        assert handlers[0].formatter._fmt == LOG_FORMAT

        logging.getLogger("ranker.test").info("epoch done")
        handlers[0].flush()
        assert "ranker.test INFO: epoch done" in path.read_text()
