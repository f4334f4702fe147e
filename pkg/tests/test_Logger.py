"""
Tests for Logger module.
"""

import json
import os
from concurrent.futures import ThreadPoolExecutor
from unittest.mock import patch

from mcfa.modules.Logger import ConsoleOutput, JsonOutput, Logger


class TestLogger:
    def test_console_output(self):
        with (
            patch("sys.stderr.write") as mock_write,
            patch("shutil.get_terminal_size", return_value=os.terminal_size((80, 25))),
        ):
            out = ConsoleOutput()
            out.status("Test Status")
            mock_write.assert_called()

            out.printline("Test Line")
            mock_write.assert_called()

    def test_console_truncates_long_status(self):
        with (
            patch("sys.stderr.write") as mock_write,
            patch("shutil.get_terminal_size", return_value=os.terminal_size((20, 25))),
        ):
            out = ConsoleOutput()
            out.status("x" * 50)
            assert mock_write.call_args[0][0] == "\r" + "x" * 16 + "..."

    def test_json_output(self, tmp_path):
        json_file = tmp_path / "run_log.json"
        out = JsonOutput(str(json_file), 10, "fold0")

        out.status("Status")
        out.printline("Log Line 1")
        out.statusValue("fold0", "dev_acc", 0.5)

        out.writeJsonFile()

        with json_file.open() as f:
            data = json.load(f)
        assert data["label"] == "fold0"
        assert data["last_status"] == "Status"
        assert data["log"] == ["Log Line 1"]
        assert data["status"]["fold0"]["dev_acc"] == 0.5

    def test_json_log_is_bounded(self, tmp_path):
        out = JsonOutput(tmp_path / "run_log.json", 2)
        for i in range(5):
            out.printline(f"line {i}")
        out.writeJsonFile()
        data = json.loads((tmp_path / "run_log.json").read_text())
        assert data["log"] == ["line 3", "line 4"]

    def test_logger_lifecycle(self, tmp_path):
        json_file = tmp_path / "run_log.json"
        logger = Logger(str(json_file), 5, quiet=True)

        logger.log("Info Message")
        logger.log_warning("Warning Message")
        logger.log_error("Error Message")
        logger.epoch("fold1", 2, 0.25, 0.75)
        logger.persistStatus()

        data = json.loads(json_file.read_text())
        assert data["log"] == ["Info Message", "Warning Warning Message", "Error Error Message"]
        assert data["status"]["fold1"] == {"last_epoch": 2, "dev_acc": 0.75}
        assert data["last_status"] == "[fold1] epoch 2: loss 0.25000, dev 75.00%"
        assert logger.warnings == ["Warning Message"]

    def test_json_disabled(self, tmp_path):
        logger = Logger(tmp_path / "run_log.json", -1, quiet=True)
        logger.log("nothing written")
        logger.persistStatus()
        assert not (tmp_path / "run_log.json").exists()

    def test_identical_runs_write_identical_files(self, tmp_path):
        for name in ("a", "b"):
            logger = Logger(tmp_path / name / "run_log.json", 10, quiet=True)
            logger.log("same line")
            logger.updateStatusValue("holdout", "best_epoch", 3)
            logger.persistStatus()
        assert (tmp_path / "a" / "run_log.json").read_bytes() == (tmp_path / "b" / "run_log.json").read_bytes()

    def test_thread_safe_logging(self, tmp_path):
        logger = Logger(tmp_path / "run_log.json", 1000, quiet=True)
        with ThreadPoolExecutor(max_workers=4) as pool:
            list(pool.map(lambda i: logger.log(f"fold{i}"), range(200)))
        logger.persistStatus()
        data = json.loads((tmp_path / "run_log.json").read_text())
        assert sorted(data["log"]) == sorted(f"fold{i}" for i in range(200))
