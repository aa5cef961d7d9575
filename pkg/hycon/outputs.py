"""Run directories: where a command's models, tables and effective config land."""

from __future__ import annotations

import csv
import io
import logging
import threading
from pathlib import Path
from typing import Dict, Iterable, Optional, Sequence

from hycon.config import EFFECTIVE_CONFIG_NAME, ExperimentConfig, dump_config
from hycon.errors import OutputError
from hycon.model import HyconModel

logger = logging.getLogger(__name__)

PARTIAL_SUFFIX = ".partial"


class RunDirectory:
    """A class to handle result files with serialized writes and partial-file cleanup.

    Every file is written to a ``.partial`` sibling first and renamed into
    place, so readers never see half-written tables. Leftover partial files
    are removed on exit.

    Attributes:
        root (Path): Output directory
        written (Dict[str, Path]): Files written so far, by name
    """

    def __init__(self, root: Path):
        self.root = Path(root)
        self.written: Dict[str, Path] = {}
        self._lock = threading.Lock()
        self._ready = False

    def __enter__(self):
        self.setup()
        return self

    def __exit__(self, exc_type, exc_val, exc_tb):
        self.cleanup()

    def setup(self):
        """Create the directory if not already done."""
        if self._ready:
            return
        try:
            if self.root.exists() and not self.root.is_dir():
                raise OutputError(f"Output path {self.root} exists and is not a directory")
            self.root.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise OutputError(f"Failed to create output directory {self.root}: {str(e)}") from e
        logger.debug("writing results to %s", self.root)
        self._ready = True

    def cleanup(self):
        """Remove partial files left by an interrupted write."""
        if not self._ready:
            return
        for leftover in self.root.glob(f"*{PARTIAL_SUFFIX}*"):
            try:
                leftover.unlink()
            except OSError:
                pass  # Ignore cleanup errors

    def path(self, name: str) -> Path:
        return self.root / name

    def _commit(self, name: str, write) -> Path:
        if not self._ready:
            self.setup()
        target = self.path(name)
        partial = target.with_name(target.name + PARTIAL_SUFFIX)
        with self._lock:
            try:
                write(partial)
                partial.replace(target)
            except OSError as e:
                raise OutputError(f"Failed to write {target}: {str(e)}") from e
            self.written[name] = target
        return target

    def write_text(self, name: str, text: str) -> Path:
        return self._commit(name, lambda p: p.write_text(text, encoding="utf-8"))

    def write_csv(self, name: str, fieldnames: Sequence[str], rows: Iterable[dict]) -> Path:
        """Write rows as CSV with a header; floats keep their full repr."""
        buffer = io.StringIO()
        writer = csv.DictWriter(buffer, fieldnames=list(fieldnames), lineterminator="\n")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
        return self.write_text(name, buffer.getvalue())

    def save_model(self, name: str, model: HyconModel) -> Path:
        # np.savez appends .npz to names without it, so the partial name must end in .npz too.
        if not name.endswith(".npz"):
            name += ".npz"

        def write(partial: Path):
            staging = partial.with_name(partial.name + ".npz")
            model.save(staging)
            staging.replace(partial)

        return self._commit(name, write)

    def write_config(self, config: ExperimentConfig, name: Optional[str] = None) -> Path:
        return self.write_text(name or EFFECTIVE_CONFIG_NAME, dump_config(config))
