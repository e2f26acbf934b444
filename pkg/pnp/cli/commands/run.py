from pathlib import Path
from typing import Annotated

import structlog
import typer
from rich.table import Table

from pnp.cli.commands import ExitCode, console, err_console, load_run_config
from pnp.core.errors import PNPError, SolverError
from pnp.core.runner import execute_run
from pnp.logging_conf import run_context
from pnp.middleware.wide_logging import wide_run_scope

logger = structlog.stdlib.get_logger(__name__)


def run(
    config_path: Annotated[Path, typer.Argument(help="JSON run configuration.")],
    output: Annotated[
        Path | None, typer.Option("--output", "-o", help="Output directory for this run.")
    ] = None,
    dump_matrix: Annotated[
        bool, typer.Option("--dump-matrix", help="Write assembled operators as COO triplets.")
    ] = False,
) -> None:
    """Run one configuration and write its diagnostics, errors and log."""
    config = load_run_config(config_path)
    if dump_matrix:
        config = config.model_copy(update={"dump_matrix": True})

    try:
        with wide_run_scope("run", **run_context(config)) as run_id:
            result = execute_run(config, output, run_id=run_id)
    except SolverError as e:
        err_console.print(f"solver failure: {e}", style="red")
        if e.recommended_dt is not None:
            err_console.print(f"retry with dt <= {e.recommended_dt!r}")
        raise typer.Exit(ExitCode.SOLVER) from e
    except PNPError as e:
        err_console.print(f"configuration error: {e}", style="red")
        raise typer.Exit(ExitCode.CONFIG) from e

    summary = result.summary
    console.print(
        f"{summary.problem}: {summary.method} k={summary.k} N={summary.N} "
        f"dt={summary.dt:.3e} steps={summary.n_steps} -> {result.output_dir}"
    )
    if summary.errors:
        table = Table("variable", "norm", "error")
        for row in summary.errors:
            table.add_row(row.variable, row.norm, f"{row.value:.3e}")
        console.print(table)
