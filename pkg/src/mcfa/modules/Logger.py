import atexit
import datetime
import json
import shutil
import sys
import threading
import time
from collections import deque
from pathlib import Path
from typing import Any

from .Utils import format_accuracy, format_loss


class ConsoleOutput:
    def __init__(self) -> None:
        self._status: str = ""
        atexit.register(self._exit)

    def _exit(self) -> None:
        self._status += "  "  # In case the shell added a ^C
        self.status("")

    def status(self, msg: Any) -> None:
        status = str(msg)
        cols = shutil.get_terminal_size().columns
        if msg != "" and len(status) > cols:
            # truncate status, try preventing console bloating
            status = str(msg)[: cols - 4] + "..."
        update = "\r"
        update += status
        update += " " * (len(self._status) - len(status))
        update += "\b" * (len(self._status) - len(status))
        sys.stderr.write(update)
        self._status = status

    def printline(self, line: str) -> None:
        update = "\r"
        update += line + " " * (len(self._status) - len(line)) + "\n"
        update += self._status
        sys.stderr.write(update)


class JsonOutput:
    """
    Collects log lines and status values for ``run_log.json``.

    Lines are stored without timestamps so that identical runs write
    identical files.
    """

    def __init__(self, file_path: str | Path, log_limit: int, label: str = "mcfa") -> None:
        self.jsonOutputFile = Path(file_path)
        self.jsonOutput: dict[str, Any] = {"label": label, "status": {}}
        self.jsonOutputLog: deque[str] = deque(maxlen=log_limit)

    def status(self, msg: Any) -> None:
        self.jsonOutput["last_status"] = str(msg)

    def printline(self, line: str) -> None:
        self.jsonOutputLog.append(line.replace("\n", " | "))

    def statusValue(self, section: str, key: str, value: Any) -> None:
        self.jsonOutput["status"].setdefault(section, {})[key] = value

    def writeJsonFile(self) -> None:
        self.jsonOutputFile.parent.mkdir(parents=True, exist_ok=True)
        with self.jsonOutputFile.open("w", encoding="utf-8") as f:
            self.jsonOutput["log"] = list(self.jsonOutputLog)
            f.write(json.dumps(self.jsonOutput, ensure_ascii=True, sort_keys=True, indent=1))


class Logger:
    """
    Run logger shared by the data loaders, the trainer and the orchestrator.

    Console lines carry a timestamp; the JSON file, when enabled, does not.
    Safe to call from the worker threads that train folds in parallel.
    """

    def __init__(self, json_file: str | Path = "", json_log_size: int = -1, quiet: bool = False):
        self._lock = threading.Lock()
        self.console: ConsoleOutput | None = None if quiet else ConsoleOutput()
        self.json: JsonOutput | None = None
        if json_file != "" and json_log_size != -1:
            self.json = JsonOutput(json_file, json_log_size)
        self.warnings: list[str] = []

    @staticmethod
    def timestamp() -> str:
        ts = time.time()
        return datetime.datetime.fromtimestamp(ts).strftime("%Y-%m-%d %H:%M:%S")

    def _emit(self, msg: str) -> None:
        with self._lock:
            if self.console is not None:
                self.console.printline(f"{self.timestamp()} {msg}")
            if self.json is not None:
                self.json.printline(msg)

    def log(self, msg: str) -> None:
        self._emit(msg)

    def log_warning(self, msg: str) -> None:
        self.warnings.append(msg)
        self._emit(f"Warning {msg}")

    def log_error(self, msg: str) -> None:
        self._emit(f"Error {msg}")

    def status(self, msg: str) -> None:
        with self._lock:
            if self.console is not None:
                self.console.status(msg)
            if self.json is not None:
                self.json.status(msg)

    def epoch(self, run: str, epoch: int, train_loss: float, dev_acc: float) -> None:
        self.status(
            f"[{run}] epoch {epoch}: loss {format_loss(train_loss)}, dev {format_accuracy(dev_acc)}"
        )
        self.updateStatusValue(run, "last_epoch", epoch)
        self.updateStatusValue(run, "dev_acc", dev_acc)

    def updateStatusValue(self, section: str, key: str, value: Any) -> None:
        with self._lock:
            if self.json is not None:
                self.json.statusValue(section, key, value)

    def persistStatus(self) -> None:
        with self._lock:
            if self.json is not None:
                self.json.writeJsonFile()
