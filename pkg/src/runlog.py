"""
Per-command run log.

Every CLI command writes run.log inside its output directory. Records carry no
wall-clock timestamps so two identical runs leave identical output trees.
"""

import logging
from pathlib import Path

RUN_LOG_NAME = "run.log"


class RunLogger:
    """
    Attaches a file handler for the lifetime of one command.

    Example usage:
        with RunLogger(out_dir, "train"):
            ...
    """

    def __init__(self, out_dir: Path, command: str, level: int = logging.DEBUG):
        """
        Initialize the run logger.

        Args:
            out_dir: Output directory of the command
            command: Subcommand name, recorded in the session banner
            level: Minimum level written to the file
        """
        self.out_dir = Path(out_dir)
        self.command = command
        self.level = level
        self.log_file = self.out_dir / RUN_LOG_NAME

        self._file_handler: logging.FileHandler | None = None
        self._original_level: int | None = None
        self._quieted: list[logging.Handler] = []

    def setup(self) -> Path:
        """
        Start writing the run log.

        Returns:
            Path to the log file
        """
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self._file_handler = logging.FileHandler(self.log_file, mode="w", encoding="utf-8")
        self._file_handler.setLevel(self.level)
        self._file_handler.setFormatter(logging.Formatter("%(levelname)-8s | %(name)s | %(message)s"))

        root_logger = logging.getLogger()
        self._original_level = root_logger.level
        root_logger.addHandler(self._file_handler)
        # Let records reach the file even when the console is quieter
        root_logger.setLevel(min(root_logger.level or logging.WARNING, self.level))
        self._quieted = [h for h in root_logger.handlers if h is not self._file_handler and h.level == logging.NOTSET]
        for handler in self._quieted:
            handler.setLevel(self._original_level)

        logging.getLogger("PIL").setLevel(logging.WARNING)

        logger = logging.getLogger("splatcal.session")
        logger.info("=" * 80)
        logger.info(f"SESSION STARTED: {self.command}")
        logger.info("=" * 80)
        return self.log_file

    def teardown(self) -> None:
        """Detach and close the file handler."""
        logger = logging.getLogger("splatcal.session")
        logger.info("=" * 80)
        logger.info(f"SESSION ENDED: {self.command}")
        logger.info("=" * 80)

        root_logger = logging.getLogger()
        if self._file_handler:
            root_logger.removeHandler(self._file_handler)
            self._file_handler.close()
            self._file_handler = None
        if self._original_level is not None:
            root_logger.setLevel(self._original_level)
        for handler in self._quieted:
            handler.setLevel(logging.NOTSET)
        self._quieted = []

    def __enter__(self) -> "RunLogger":
        self.setup()
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        if exc is not None:
            logging.getLogger("splatcal.session").error(f"{self.command} failed: {exc}")
        self.teardown()
