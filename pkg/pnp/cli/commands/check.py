from typing import Annotated

import typer
from rich.table import Table

from pnp.cli.commands import ExitCode, console, err_console
from pnp.core.checks import SUITES, run_suites
from pnp.middleware.wide_logging import wide_run_scope


def check(
    suite: Annotated[
        list[str] | None,
        typer.Option("--suite", "-s", help=f"Suites to run (default all): {', '.join(SUITES)}."),
    ] = None,
    seed: Annotated[int, typer.Option("--seed")] = 0,
) -> None:
    """Run the invariant suites; exit code 4 if any check fails."""
    unknown = [name for name in suite or [] if name not in SUITES]
    if unknown:
        err_console.print(f"unknown suite(s): {', '.join(unknown)}", style="red")
        raise typer.Exit(ExitCode.CONFIG)

    with wide_run_scope("check", suites=suite or list(SUITES), seed=seed):
        results = run_suites(suite, seed)

    table = Table("suite", "check", "value", "result")
    for result in results:
        verdict = "[green]pass[/green]" if result.passed else "[red]FAIL[/red]"
        table.add_row(result.suite, result.name, result.detail, verdict)
    console.print(table)

    failed = [r for r in results if not r.passed]
    console.print(f"{len(results) - len(failed)}/{len(results)} checks passed")
    if failed:
        raise typer.Exit(ExitCode.CHECK_FAILED)
