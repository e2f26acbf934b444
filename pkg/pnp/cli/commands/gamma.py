from typing import Annotated

import numpy as np
import typer
from rich.table import Table

from pnp.cli.commands import ExitCode, console, err_console
from pnp.core.forms import gamma_of_beta1, gamma_sampled, superconvergent_beta1


def parse_beta1(token: str, k: int) -> float:
    if token == "superconvergent":
        return superconvergent_beta1(k)
    try:
        value = float(token)
    except ValueError:
        err_console.print(
            f"beta1 must be a number or 'superconvergent', got {token!r}", style="red"
        )
        raise typer.Exit(ExitCode.CONFIG) from None
    if value < 0:
        err_console.print(f"beta1 must be non-negative, got {value}", style="red")
        raise typer.Exit(ExitCode.CONFIG)
    return value


def gamma(
    k: Annotated[int, typer.Option("--k", min=1, help="Polynomial order.")],
    beta1: Annotated[
        list[str],
        typer.Option("--beta1", help="beta1 values, or 'superconvergent' (repeat the flag)."),
    ] = ["0", "superconvergent"],  # noqa: B006
    samples: Annotated[
        int, typer.Option("--samples", min=0, help="Random polynomials for the sampled column.")
    ] = 10_000,
    seed: Annotated[int, typer.Option("--seed")] = 0,
) -> None:
    """Tabulate Gamma(beta1) and the smallest stable beta0 for unit mobility."""
    rng = np.random.default_rng(seed)
    columns = ["beta1", "Gamma", "min beta0 (psi0=psi1=1)"]
    if samples:
        columns += ["sampled", "relative gap"]
    table = Table(*columns, title=f"k = {k}")
    for token in beta1:
        value = parse_beta1(token, k)
        exact = gamma_of_beta1(k, value)
        row = [f"{value:.6g}", f"{exact:.10g}", f"{exact:.10g}"]
        if samples:
            sampled = gamma_sampled(k, value, samples, rng)
            row += [f"{sampled:.10g}", f"{(exact - sampled) / exact:.2e}"]
        table.add_row(*row)
    console.print(table)
