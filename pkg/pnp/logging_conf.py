import logging
import sys
from collections.abc import Iterator
from contextlib import contextmanager

import numpy as np
import structlog
from structlog.typing import EventDict, WrappedLogger

from pnp.core.config import settings
from pnp.models import RunConfig


def numpy_to_builtin(_: WrappedLogger, __: str, event_dict: EventDict) -> EventDict:
    """Unwrap numpy scalars and small arrays so the JSON renderer sees plain values."""
    for key, value in event_dict.items():
        if isinstance(value, np.generic):
            event_dict[key] = value.item()
        elif isinstance(value, np.ndarray) and value.size <= 16:
            event_dict[key] = value.tolist()
        elif isinstance(value, np.ndarray):
            event_dict[key] = f"ndarray(shape={value.shape}, dtype={value.dtype})"
    return event_dict


def run_context(config: RunConfig, run_id: str = "") -> dict[str, object]:
    context: dict[str, object] = {
        "problem": config.problem_id,
        "method": config.method,
        "k": config.k,
        "N": config.N,
        "time_order": config.time_order,
    }
    if run_id:
        context["run_id"] = run_id
    return context


@contextmanager
def bound_run(config: RunConfig, run_id: str = "") -> Iterator[None]:
    """Tag every event logged inside the block with the run's identity."""
    with structlog.contextvars.bound_contextvars(**run_context(config, run_id)):
        yield


def configure_logging() -> None:
    """Configure structlog for wide structured logging on stderr."""
    shared_processors: list[structlog.types.Processor] = [
        structlog.contextvars.merge_contextvars,
        structlog.processors.TimeStamper(fmt="iso"),
        structlog.stdlib.add_log_level,
        structlog.stdlib.PositionalArgumentsFormatter(),
        numpy_to_builtin,
        structlog.processors.StackInfoRenderer(),
        structlog.processors.UnicodeDecoder(),
    ]

    if settings.ENVIRONMENT == "local":
        renderer: structlog.types.Processor = structlog.dev.ConsoleRenderer()
    else:
        renderer = structlog.processors.JSONRenderer()

    structlog.configure(
        processors=shared_processors + [structlog.stdlib.ProcessorFormatter.wrap_for_formatter],
        wrapper_class=structlog.stdlib.BoundLogger,
        context_class=dict,
        logger_factory=structlog.stdlib.LoggerFactory(),
        cache_logger_on_first_use=True,
    )

    formatter = structlog.stdlib.ProcessorFormatter(
        processor=renderer,
        foreign_pre_chain=shared_processors,
    )

    # stdout stays free for tables printed by the CLI
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(formatter)

    root = logging.getLogger()
    root.handlers.clear()
    root.addHandler(handler)
    root.setLevel(logging.DEBUG if settings.DEBUG else logging.INFO)
