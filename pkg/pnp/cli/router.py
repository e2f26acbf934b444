import typer

from pnp.cli.commands import check, gamma, run, sweep
from pnp.core.config import settings

cli_app = typer.Typer(
    name=settings.PROJECT_NAME,
    help="Gauss-Lobatto FEM/DDG solvers for the Poisson-Nernst-Planck system.",
    no_args_is_help=True,
    add_completion=False,
)

cli_app.command("run")(run.run)
cli_app.command("sweep")(sweep.sweep)
cli_app.command("gamma")(gamma.gamma)
cli_app.command("check")(check.check)
