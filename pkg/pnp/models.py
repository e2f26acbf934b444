import math
from typing import Literal, Self

from pydantic import BaseModel, ConfigDict, Field, PositiveFloat, PositiveInt, model_validator

FaceKey = Literal["x_lower", "x_upper", "y_lower", "y_upper"]


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


# Time step rules
class DtRule(StrictModel):
    """Either an absolute step or tau = coefficient * h ** power."""

    absolute: PositiveFloat | None = None
    coefficient: PositiveFloat | None = None
    power: float | None = None

    @model_validator(mode="after")
    def one_form(self) -> Self:
        scaled = self.coefficient is not None or self.power is not None
        if (self.absolute is None) == (not scaled):
            raise ValueError("give either 'absolute' or both 'coefficient' and 'power'")
        if scaled and (self.coefficient is None or self.power is None):
            raise ValueError("'coefficient' and 'power' must be given together")
        return self

    def describe(self) -> str:
        if self.absolute is not None:
            return f"dt={self.absolute:g}"
        return f"dt={self.coefficient:g}*h^{self.power:g}"

    def steps(self, h: float, t_end: float) -> tuple[int, float]:
        """Number of steps and the uniform tau = t_end / n that reaches t_end exactly."""
        if self.absolute is not None:
            dt = self.absolute
        else:
            assert self.coefficient is not None and self.power is not None
            dt = self.coefficient * h**self.power
        n_steps = max(1, math.ceil(t_end / dt * (1 - 1e-12)))
        return n_steps, t_end / n_steps


# User-defined problems
class FaceCondition(StrictModel):
    kind: Literal["zero_flux", "dirichlet"] = "zero_flux"
    value: str = "0"


class SpeciesConfig(StrictModel):
    name: str = ""
    valence: float
    diffusion: PositiveFloat = 1.0
    initial: str
    source: str | None = None
    exact: str | None = None


class UserProblemConfig(StrictModel):
    lower: list[float] = Field(min_length=1, max_length=2)
    upper: list[float] = Field(min_length=1, max_length=2)
    periodic: list[bool] | None = None
    species: list[SpeciesConfig] = Field(min_length=1)
    potential_boundary: dict[FaceKey, FaceCondition] = Field(default_factory=dict)
    potential_source: str | None = None
    exact_potential: str | None = None
    epsilon: PositiveFloat = 1.0
    t_end: PositiveFloat = 1.0
    initial_floor: PositiveFloat | None = None


# Run configuration
class RunConfig(StrictModel):
    problem: str | UserProblemConfig
    method: Literal["fem", "ddg"] = "ddg"
    k: PositiveInt = 1
    beta0: float = Field(default=4.0, ge=0)
    # a number, or "superconvergent" for 1 / (2k(k+1))
    beta1: float | Literal["superconvergent"] = 0.0
    N: PositiveInt
    time_order: Literal[1, 2] = 1
    dt: DtRule | None = None
    t_end: PositiveFloat | None = None
    limiter: bool = False
    mass: Literal["lumped", "consistent"] = "lumped"
    newton_tol: PositiveFloat = 1e-12
    newton_max_iter: PositiveInt = 50
    record_every: PositiveInt = 1
    initial_floor: PositiveFloat | None = None
    output_dir: str | None = None
    dump_matrix: bool = False
    seed: int = 0

    @model_validator(mode="after")
    def beta1_for_method(self) -> Self:
        if isinstance(self.beta1, float) and self.beta1 < 0:
            raise ValueError("beta1 must be non-negative")
        if self.method == "fem" and self.beta1 not in (0.0, "superconvergent"):
            raise ValueError("beta1 only applies to the ddg method")
        return self

    def resolved_beta1(self) -> float:
        if self.method == "fem":
            return 0.0
        if self.beta1 == "superconvergent":
            return 1.0 / (2 * self.k * (self.k + 1))
        return float(self.beta1)

    @property
    def problem_id(self) -> str:
        return self.problem if isinstance(self.problem, str) else "user"


# Outputs
class ErrorRow(BaseModel):
    variable: str
    norm: str
    value: float


class RunSummary(BaseModel):
    run_id: str
    problem: str
    method: str
    k: int
    N: int
    beta0: float
    beta1: float
    gamma: float
    stable: bool
    hypothesis: str
    dt_rule: str
    dt: float
    n_steps: int
    t_end: float
    limiter: bool
    mass: str
    status: Literal["completed", "failed"] = "completed"
    errors: list[ErrorRow] = Field(default_factory=list)
