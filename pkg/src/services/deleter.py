"""Deleter service for moving previous run outputs to the trash."""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, List, Optional, Tuple, Union

from send2trash import send2trash

logger = logging.getLogger(__name__)


@dataclass
class DeleteResult:
    """Result of clearing an output directory."""

    deleted_paths: List[str] = field(default_factory=list)
    failed_paths: List[Tuple[str, str]] = field(default_factory=list)
    total_deleted: int = 0
    total_failed: int = 0


class Deleter:
    """Clears output directories by moving their entries to the trash."""

    def clear_directory(
        self,
        directory: Union[str, Path],
        progress_callback: Optional[Callable[[str, int, int], None]] = None,
    ) -> DeleteResult:
        """
        Move every entry of ``directory`` to the trash, keeping the directory.

        Args:
            directory: Output directory to clear.
            progress_callback: Optional callback for progress updates.
                Receives (path, current_index, total_count).

        Returns:
            DeleteResult with details of the operation.
        """
        result = DeleteResult()
        base = Path(directory)
        if not base.is_dir():
            return result
        entries = sorted(base.iterdir())
        total_count = len(entries)

        for index, entry in enumerate(entries):
            path = str(entry)
            try:
                send2trash(path)
                result.deleted_paths.append(path)
                result.total_deleted += 1
            except Exception as e:
                logger.warning("Failed to move %s to trash: %s", path, e)
                result.failed_paths.append((path, str(e)))
                result.total_failed += 1

            if progress_callback:
                progress_callback(path, index + 1, total_count)

        return result

    def prepare_output(self, directory: Union[str, Path], force: bool = False) -> Path:
        """
        Make ``directory`` an empty output directory.

        Args:
            directory: Output directory.
            force: Trash existing contents instead of refusing.

        Returns:
            The directory path, created if needed.

        Raises:
            FileExistsError: If the directory is nonempty and ``force`` is off,
                or if some entries could not be trashed.
        """
        base = Path(directory)
        if base.exists() and not base.is_dir():
            raise FileExistsError(f"Output path is not a directory: {base}")
        if base.is_dir() and any(base.iterdir()):
            if not force:
                raise FileExistsError(
                    f"Output directory is not empty: {base} (use --force to replace it)"
                )
            result = self.clear_directory(base)
            logger.info("Moved %d previous outputs to trash", result.total_deleted)
            if result.total_failed:
                raise FileExistsError(
                    f"Could not clear {result.total_failed} entries in {base}"
                )
        base.mkdir(parents=True, exist_ok=True)
        return base
