import logging

from config.logging_config import OUTPUT_DIR_ENV, setup_logger
from config.settings import get_settings


def file_handlers(logger):
    return [h for h in logger.handlers if isinstance(h, logging.FileHandler)]


def test_output_dir_variable(output_dir):
    assert OUTPUT_DIR_ENV == "DICON_OUTPUT_DIR"
    settings = get_settings()
    assert settings.data.output_dir == str(output_dir)
    assert settings.log.directory == str(output_dir / "logs")


def test_log_file_follows_output_dir(tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_DIR_ENV, str(tmp_path / "first"))
    logger = setup_logger("FollowDirLogger", "tests")
    logger.info("first message")

    monkeypatch.setenv(OUTPUT_DIR_ENV, str(tmp_path / "second"))
    logger = setup_logger("FollowDirLogger", "tests")
    logger.info("second message")

    assert len(file_handlers(logger)) == 1
    first = (tmp_path / "first" / "logs" / "tests" / "followdirlogger.log").read_text()
    second = (tmp_path / "second" / "logs" / "tests" / "followdirlogger.log").read_text()
    assert "first message" in first and "second message" not in first
    assert "second message" in second


def test_same_dir_keeps_handlers():
    first = setup_logger("SameDirLogger", "tests")
    handlers = list(first.handlers)
    second = setup_logger("SameDirLogger", "tests")
    assert second.handlers == handlers
    assert len(handlers) == 2


def test_stream_handler_passes_info():
    logger = setup_logger("StreamLevelLogger", "tests")
    streams = [h for h in logger.handlers if not isinstance(h, logging.FileHandler)]
    assert len(streams) == 1
    assert streams[0].level <= logging.INFO
