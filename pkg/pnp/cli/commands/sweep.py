import math
from pathlib import Path
from typing import Annotated

import typer
from rich.table import Table

from pnp.cli.commands import ExitCode, console, err_console, load_run_config
from pnp.core.config import settings
from pnp.core.errors import PNPError
from pnp.core.runner import execute_sweep
from pnp.middleware.wide_logging import wide_run_scope


def sweep(
    config_path: Annotated[Path, typer.Argument(help="Base JSON run configuration.")],
    n: Annotated[list[int], typer.Option("--n", help="Mesh sizes, doubling (repeat the flag).")],
    output: Annotated[
        Path | None, typer.Option("--output", "-o", help="Directory for sweep.csv and N* runs.")
    ] = None,
    jobs: Annotated[
        int | None, typer.Option("--jobs", "-j", min=1, help="Parallel member runs.")
    ] = None,
) -> None:
    """Run the base configuration for each N and tabulate observed orders."""
    base = load_run_config(config_path)
    name = f"{base.problem_id}_{base.method}_k{base.k}_o{base.time_order}_sweep"
    output = output or Path(settings.OUTPUT_ROOT) / name
    try:
        with wide_run_scope("sweep", problem=base.problem_id, ns=n):
            table, members = execute_sweep(base, n, output, jobs or settings.SWEEP_MAX_WORKERS)
    except PNPError as e:
        err_console.print(f"configuration error: {e}", style="red")
        raise typer.Exit(ExitCode.CONFIG) from e

    frame = table.to_frame()
    view = Table(*frame.columns, "status")
    for (_, row), member in zip(frame.iterrows(), members):
        cells = [str(int(row["N"]))]
        cells += [_fmt(column, row[column]) for column in frame.columns[1:]]
        view.add_row(*cells, "failed" if member.failed else "ok")
    console.print(view)
    console.print(f"wrote {output / 'sweep.csv'}")

    if any(m.failed for m in members):
        raise typer.Exit(ExitCode.SOLVER)


def _fmt(column: str, value: float) -> str:
    if math.isnan(value):
        return "-"
    return f"{value:.2f}" if column.startswith("R_") else f"{value:.3e}"
