"""Tests for logging setup and seeded random streams."""

import logging

import numpy as np
import pytest

from utils.logger import get_log_file_path, get_logger, is_initialized, setup_logging
from utils.rng import derive_rng, stream_key


class TestLogging:
    def test_setup_creates_log_file(self, tmp_path, clean_logging):
        path = setup_logging("DEBUG", tmp_path)
        assert path == tmp_path / "run.log"
        assert is_initialized()
        assert get_log_file_path() == path
        get_logger("tests.logger").info("hello")
        for handler in logging.getLogger().handlers:
            handler.flush()
        assert "hello" in path.read_text(encoding="utf-8")

    def test_idempotent(self, tmp_path, clean_logging):
        first = setup_logging("INFO", tmp_path / "a")
        second = setup_logging("DEBUG", tmp_path / "b")
        assert first == second
        assert logging.getLogger().level == logging.INFO

    def test_unknown_level(self, tmp_path, clean_logging):
        with pytest.raises(ValueError):
            setup_logging("LOUD", tmp_path)

    def test_unwritable_directory_falls_back_to_stderr(self, tmp_path, clean_logging):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        assert setup_logging("INFO", blocker / "logs") is None
        assert is_initialized()

    def test_logger_cache(self):
        assert get_logger("tests.cache") is get_logger("tests.cache")


class TestRng:
    def test_same_key_same_stream(self):
        np.testing.assert_array_equal(derive_rng(3, "a").random(5), derive_rng(3, "a").random(5))

    def test_labels_are_independent(self):
        assert not np.array_equal(derive_rng(3, "a").random(5), derive_rng(3, "b").random(5))

    def test_seeds_are_independent(self):
        assert stream_key(1, "a") != stream_key(2, "a")

    def test_key_is_128_bit(self):
        assert 0 <= stream_key(0, "fill_random") < 2 ** 128
