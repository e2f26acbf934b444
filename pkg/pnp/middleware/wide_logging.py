import random
import time
import uuid
from collections.abc import Iterator
from contextlib import contextmanager

import structlog
from structlog.contextvars import bind_contextvars, clear_contextvars

from pnp.core.config import settings
from pnp.core.integrator import StepReport

logger = structlog.stdlib.get_logger("pnp.run")


@contextmanager
def wide_run_scope(command: str, **context: object) -> Iterator[str]:
    """Bind run context and emit a single structured event per command."""
    clear_contextvars()
    run_id = f"run_{uuid.uuid4().hex[:12]}"
    bind_contextvars(run_id=run_id, command=command, **context)
    start_time = time.perf_counter()

    status = "failed"
    try:
        yield run_id
        status = "completed"
    except BaseException as e:
        bind_contextvars(error_type=type(e).__name__, error_message=str(e))
        raise
    finally:
        duration_ms = (time.perf_counter() - start_time) * 1000
        logger.info("run_completed", status=status, duration_ms=round(duration_ms, 2))


class StepSampler:
    """Tail sampling of per-step events.

    Uses its own seeded generator so sampling never touches the numerics.
    """

    def __init__(self, seed: int = 0) -> None:
        self._rng = random.Random(seed)

    def should_log(self, report: StepReport) -> bool:
        # Always log failures and safeguard activations
        if not report.converged or report.mobility_floor_active or any(report.limiter_active):
            return True

        # Always log slow steps
        if report.duration_ms > settings.LOG_SLOW_THRESHOLD_MS:
            return True

        # random sample
        return self._rng.random() < settings.LOG_SAMPLE_RATE
