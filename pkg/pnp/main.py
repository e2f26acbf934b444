from pnp.cli.router import cli_app
from pnp.logging_conf import configure_logging


def cli() -> None:
    configure_logging()
    cli_app()


if __name__ == "__main__":
    cli()
