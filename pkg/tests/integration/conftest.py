"""Shared fixtures and helpers for integration tests."""

import tempfile
from pathlib import Path
from typing import Callable, Generator

import pytest

from src.main import EXIT_OK, main
from src.services.deleter import Deleter
from src.services.hasher import Hasher


@pytest.fixture
def temp_dir() -> Generator[Path, None, None]:
    """Create a temporary directory for run outputs."""
    with tempfile.TemporaryDirectory() as tmpdir:
        yield Path(tmpdir)


@pytest.fixture
def hasher() -> Hasher:
    """Create a Hasher instance."""
    return Hasher()


@pytest.fixture
def deleter() -> Deleter:
    """Create a Deleter instance."""
    return Deleter()


@pytest.fixture
def run_cli(tiny_ini: Path) -> Callable[..., None]:
    """Return helper running one CLI command with the tiny config."""

    def _run(command: str, *options: str) -> None:
        code = main([command, "--config", str(tiny_ini), *options])
        assert code == EXIT_OK, f"{command} exited with {code}"

    return _run
