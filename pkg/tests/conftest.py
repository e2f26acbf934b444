import numpy as np
import pytest

from pnp.core.basis import FunctionSpace
from pnp.core.forms import FormConfig
from pnp.core.integrator import Integrator, SchemeConfig, SpeciesSpec
from pnp.core.mesh import BoundarySet, Dirichlet, Domain, build_mesh
from pnp.logging_conf import configure_logging


@pytest.fixture(scope="session", autouse=True)
def _logging():
    configure_logging()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def unit_interval(periodic: bool = False) -> Domain:
    return Domain((0.0,), (1.0,), (periodic,))


def unit_square() -> Domain:
    return Domain((0.0, 0.0), (1.0, 1.0))


def make_space(domain: Domain, n: int, k: int, method: str = "ddg") -> FunctionSpace:
    continuity = "continuous" if method == "fem" else "cell-local"
    return FunctionSpace.build(build_mesh(domain, n), k, continuity)


def grounded(domain: Domain) -> BoundarySet:
    return BoundarySet.uniform(domain, Dirichlet(lambda t, x: np.zeros(x.shape[:-1])))


def two_ion_integrator(
    method: str = "ddg",
    k: int = 1,
    n: int = 8,
    dt: float = 1e-3,
    *,
    time_order: int = 1,
    limiter: bool = False,
    mass: str = "lumped",
    potential_boundary: BoundarySet | None = None,
) -> Integrator:
    """Neutral pair of ions relaxing on [0, 1] toward the uniform state."""
    space = make_space(unit_interval(), n, k, method)
    species = (
        SpeciesSpec(1.0, lambda x: 1.0 + 0.25 * np.cos(np.pi * x[..., 0]), name="c1"),
        SpeciesSpec(-1.0, lambda x: 1.0 - 0.25 * np.cos(np.pi * x[..., 0]), name="c2"),
    )
    config = SchemeConfig(
        dt=dt,
        time_order=time_order,
        form=FormConfig(method, beta0=10.0, beta1=0.0),
        limiter=limiter,
        mass=mass,  # type: ignore[arg-type]
    )
    return Integrator(space, species, config, potential_boundary)
