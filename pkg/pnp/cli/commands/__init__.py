"""Command implementations and the shared config loading they rely on."""

import json
from enum import IntEnum
from pathlib import Path

import structlog
import typer
from pydantic import ValidationError
from rich.console import Console

from pnp.models import RunConfig

logger = structlog.stdlib.get_logger(__name__)

console = Console()
err_console = Console(stderr=True, soft_wrap=True)


class ExitCode(IntEnum):
    OK = 0
    CONFIG = 2
    SOLVER = 3
    CHECK_FAILED = 4


def load_run_config(path: Path) -> RunConfig:
    """Parse and validate a run configuration, exiting with code 2 on any problem."""
    try:
        data = json.loads(path.read_text())
    except OSError as e:
        err_console.print(f"cannot read {path}: {e.strerror}", style="red")
        raise typer.Exit(ExitCode.CONFIG) from e
    except json.JSONDecodeError as e:
        err_console.print(f"{path}: line {e.lineno}, column {e.colno}: {e.msg}", style="red")
        logger.warning("config_rejected", path=str(path), reason="json")
        raise typer.Exit(ExitCode.CONFIG) from e

    try:
        return RunConfig.model_validate(data)
    except ValidationError as e:
        for error in e.errors():
            location = ".".join(str(part) for part in error["loc"]) or "<root>"
            err_console.print(f"{path}: {location}: {error['msg']}", style="red")
        logger.warning("config_rejected", path=str(path), errors=e.error_count())
        raise typer.Exit(ExitCode.CONFIG) from e
