"""Single runs and convergence sweeps, with their CSV/JSON outputs.

A run directory holds ``diagnostics.csv`` (one row per recorded step),
``errors.csv`` (variable, norm, value) when the problem has an exact
solution, ``summary.json`` and ``run_log.txt``. Failed runs also leave
``step_report.json``.
"""

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd
import structlog

from pnp.core.basis import FunctionSpace
from pnp.core.config import settings
from pnp.core.diagnostics import (
    ConvergenceTable,
    DiagnosticsRecord,
    EnergyFunctional,
    error_energy_projection,
    error_l2,
    metric_eA,
    metric_eG,
    positivity_report,
    rate_table,
    total_mass,
)
from pnp.core.errors import PNPError, SolverError
from pnp.core.forms import FormConfig, MobilityBounds, check_stability, gamma_of_beta1
from pnp.core.integrator import Integrator, SchemeConfig, SystemState
from pnp.core.mesh import build_mesh
from pnp.core.problems import ExactSolution, ProblemSpec, get_problem
from pnp.logging_conf import bound_run
from pnp.middleware.wide_logging import StepSampler
from pnp.models import ErrorRow, RunConfig, RunSummary

logger = structlog.stdlib.get_logger(__name__)


@dataclass
class RunResult:
    summary: RunSummary
    records: list[DiagnosticsRecord]
    output_dir: Path
    final_state: SystemState | None = None

    def error(self, variable: str, norm: str) -> float:
        for row in self.summary.errors:
            if row.variable == variable and row.norm == norm:
                return row.value
        return float("nan")


@dataclass
class RunPlan:
    """Everything a run derives from its configuration before stepping."""

    config: RunConfig
    problem: ProblemSpec
    space: FunctionSpace
    form: FormConfig
    scheme: SchemeConfig
    n_steps: int
    dt_rule: str
    gamma: float
    hypothesis: str
    log_lines: list[str] = field(default_factory=list)


def default_output_dir(config: RunConfig) -> Path:
    if config.output_dir:
        return Path(settings.OUTPUT_ROOT) / config.output_dir
    name = f"{config.problem_id}_{config.method}_k{config.k}_o{config.time_order}_N{config.N}"
    return Path(settings.OUTPUT_ROOT) / name


def penalty_hypothesis(beta1: float, k: int, method: str) -> str:
    if method == "fem" or beta1 == 0:
        return "beta1=0 (symmetric form: positivity and energy analysis apply)"
    if math.isclose(beta1, 1.0 / (2 * k * (k + 1))):
        return "beta1=1/(2k(k+1)) (superconvergent choice: error analysis applies)"
    return "neither analysed beta1 choice"


def plan_run(config: RunConfig) -> RunPlan:
    problem = get_problem(config.problem)
    mesh = build_mesh(problem.domain, config.N)
    form = FormConfig(config.method, config.beta0, config.resolved_beta1())
    space = FunctionSpace.build(mesh, config.k, form.continuity)
    rule = config.dt or problem.dt_rule(config.time_order)
    t_end = config.t_end or problem.t_end
    n_steps, tau = rule.steps(mesh.h, t_end)
    scheme = SchemeConfig(
        dt=tau,
        time_order=config.time_order,
        form=form,
        epsilon=problem.epsilon,
        newton_tol=config.newton_tol,
        newton_max_iter=config.newton_max_iter,
        limiter=config.limiter,
        mass=config.mass,
    )
    plan = RunPlan(
        config=config,
        problem=problem,
        space=space,
        form=form,
        scheme=scheme,
        n_steps=n_steps,
        dt_rule=rule.describe(),
        gamma=gamma_of_beta1(config.k, form.beta1),
        hypothesis=penalty_hypothesis(form.beta1, config.k, config.method),
    )
    plan.log_lines += [
        f"problem = {problem.name}",
        f"method = {config.method}",
        f"k = {config.k}",
        f"N = {config.N}",
        f"beta0 = {form.beta0!r}",
        f"beta1 = {form.beta1!r}",
        f"gamma(beta1) = {plan.gamma!r}",
        f"hypothesis = {plan.hypothesis}",
        f"dt_rule = {plan.dt_rule} with h = {mesh.h!r} (cell diameter)",
        f"dt = {tau!r}",
        f"n_steps = {n_steps}",
        f"t_end = {t_end!r}",
        f"time_order = {config.time_order}",
        f"mass = {config.mass}",
        f"limiter = {'on' if config.limiter else 'off'}",
        "e_A normalisation M = number of cells",
        f"e_G points = {config.k}-point Gauss rule per axis per cell",
        *(f"note[{key}] = {value}" for key, value in problem.notes.items()),
    ]
    return plan


def stability_verdict(plan: RunPlan, state: SystemState) -> tuple[bool, bool]:
    """(stable for unit mobility, stable for the initial mobility bounds)."""
    if plan.form.method == "fem":
        return True, True
    k, beta0, beta1 = plan.config.k, plan.form.beta0, plan.form.beta1
    unit = check_stability(beta0, beta1, k, MobilityBounds(1.0, 1.0))
    initial = all(
        check_stability(beta0, beta1, k, MobilityBounds.of(c)) for c in state.concentrations
    )
    return unit, initial


def final_errors(plan: RunPlan, state: SystemState, exact: ExactSolution) -> list[ErrorRow]:
    t = state.t
    rows: list[ErrorRow] = []
    for i, c in enumerate(state.concentrations):
        name = f"c{i + 1}"
        target = exact.concentration(i, t)
        gradient = exact.concentration_gradient(i, t)
        rows += [
            ErrorRow(variable=name, norm="L2", value=error_l2(c, target)),
            ErrorRow(variable=name, norm="E", value=error_energy_projection(c, target, plan.form)),
            ErrorRow(variable=name, norm="eA", value=metric_eA(c, gradient)),
            ErrorRow(variable=name, norm="eG", value=metric_eG(c, gradient)),
        ]
    for i, p in enumerate(state.chemical):
        rows.append(
            ErrorRow(variable=f"p{i + 1}", norm="L2", value=error_l2(p, exact.chemical(i, t)))
        )
    phi_target = exact.potential_at(t)
    phi_gradient = exact.potential_gradient_at(t)
    rows += [
        ErrorRow(variable="phi", norm="L2", value=error_l2(state.potential, phi_target)),
        ErrorRow(
            variable="phi",
            norm="E",
            value=error_energy_projection(state.potential, phi_target, plan.form),
        ),
        ErrorRow(variable="phi", norm="eA", value=metric_eA(state.potential, phi_gradient)),
        ErrorRow(variable="phi", norm="eG", value=metric_eG(state.potential, phi_gradient)),
    ]
    return rows


def _write_csv(frame: pd.DataFrame, path: Path) -> None:
    # float repr is the shortest round-trip decimal
    frame.to_csv(path, index=False, float_format=None)


def execute_run(config: RunConfig, output_dir: Path | None = None, run_id: str = "") -> RunResult:
    with bound_run(config, run_id):
        return _execute_run(config, output_dir, run_id)


def _execute_run(config: RunConfig, output_dir: Path | None, run_id: str) -> RunResult:
    plan = plan_run(config)
    problem, space, scheme = plan.problem, plan.space, plan.scheme
    output_dir = output_dir or default_output_dir(config)
    output_dir.mkdir(parents=True, exist_ok=True)

    integrator = Integrator(
        space, problem.species, scheme, problem.potential_boundary, problem.sources
    )
    floor = config.initial_floor or problem.initial_floor
    state = integrator.initial_state(initial_floor=floor)
    stable_unit, stable_initial = stability_verdict(plan, state)
    plan.log_lines += [
        f"stable(psi0=psi1=1) = {stable_unit}",
        f"stable(initial mobility bounds) = {stable_initial}",
        f"initial_floor = {floor!r}",
    ]
    logger.info(
        "run_configured",
        gamma=plan.gamma,
        stable=stable_unit,
        stable_initial=stable_initial,
        hypothesis=plan.hypothesis,
        dt=scheme.dt,
        dt_rule=plan.dt_rule,
        n_steps=plan.n_steps,
        limiter=config.limiter,
    )
    (output_dir / "run_log.txt").write_text("\n".join(plan.log_lines) + "\n")

    if config.dump_matrix:
        integrator.poisson.operator.dump(output_dir / "poisson.coo")

    energy = EnergyFunctional(space, integrator.potential_form, problem.epsilon)
    sampler = StepSampler(config.seed)

    def record(state: SystemState, iterations: int = 0, limiter_hits: int = 0) -> DiagnosticsRecord:
        positivity = positivity_report(state)
        return DiagnosticsRecord(
            t=state.t,
            mass=[total_mass(c) for c in state.concentrations],
            energy_lumped=energy(state, "lumped"),
            energy_exact=energy(state, "exact"),
            min_cell_average=positivity.min_cell_average,
            min_node=positivity.min_node,
            newton_iterations=iterations,
            limiter_hits=limiter_hits,
        )

    records = [record(state)]
    summary = RunSummary(
        run_id=run_id,
        problem=problem.name,
        method=config.method,
        k=config.k,
        N=config.N,
        beta0=plan.form.beta0,
        beta1=plan.form.beta1,
        gamma=plan.gamma,
        stable=stable_unit,
        hypothesis=plan.hypothesis,
        dt_rule=plan.dt_rule,
        dt=scheme.dt,
        n_steps=plan.n_steps,
        t_end=scheme.dt * plan.n_steps,
        limiter=config.limiter,
        mass=config.mass,
    )

    def flush() -> None:
        _write_csv(pd.DataFrame([r.flat() for r in records]), output_dir / "diagnostics.csv")
        (output_dir / "summary.json").write_text(summary.model_dump_json(indent=2))

    try:
        for m in range(plan.n_steps):
            state, report = integrator.advance(state)
            if m == 0 and config.dump_matrix:
                for i, operator in enumerate(integrator.last_operators):
                    operator.dump(output_dir / f"mobility_{i + 1}.coo")
            if sampler.should_log(report):
                logger.info("step_accepted", **report.model_dump(exclude={"residual_history"}))
            if (m + 1) % config.record_every == 0 or m + 1 == plan.n_steps:
                records.append(
                    record(state, report.newton_iterations, sum(report.limiter_active))
                )
    except SolverError as exc:
        summary.status = "failed"
        if exc.report is not None:
            (output_dir / "step_report.json").write_text(exc.report.model_dump_json(indent=2))
        logger.error("step_failed", recommended_dt=exc.recommended_dt, error=str(exc))
        flush()
        raise

    if problem.exact is not None:
        summary.errors = final_errors(plan, state, problem.exact)
        _write_csv(
            pd.DataFrame([row.model_dump() for row in summary.errors]),
            output_dir / "errors.csv",
        )
    flush()
    return RunResult(summary, records, output_dir, state)


# -- sweeps -------------------------------------------------------------------


@dataclass
class SweepMember:
    n: int
    errors: dict[str, float]
    failed: str | None = None


def _run_member(config: RunConfig, output_dir: Path) -> SweepMember:
    try:
        result = execute_run(config, output_dir)
    except PNPError as exc:
        return SweepMember(config.N, {}, failed=f"{type(exc).__name__}: {exc}")
    errors = {f"{row.variable}_{row.norm}": row.value for row in result.summary.errors}
    return SweepMember(config.N, errors)


def execute_sweep(
    base: RunConfig, ns: list[int], output_dir: Path, jobs: int = 1
) -> tuple[ConvergenceTable, list[SweepMember]]:
    """One run per N, each in its own directory; rates between doubling N."""
    ns = sorted(ns)
    rate_table([(n, {}) for n in ns])
    output_dir.mkdir(parents=True, exist_ok=True)
    configs = [base.model_copy(update={"N": n, "output_dir": None}) for n in ns]
    dirs = [output_dir / f"N{n}" for n in ns]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            members = list(pool.map(_run_member, configs, dirs))
    else:
        members = [_run_member(c, d) for c, d in zip(configs, dirs)]

    for member in members:
        if member.failed:
            logger.warning("sweep_member_failed", N=member.n, error=member.failed)
    table = rate_table([(m.n, m.errors) for m in members])
    frame = table.to_frame()
    frame["status"] = ["failed" if m.failed else "completed" for m in members]
    _write_csv(frame, output_dir / "sweep.csv")
    return table, members


def nodal_distance_to_steady_state(state: SystemState, steady: tuple[float, ...]) -> float:
    """Max nodal distance of every concentration (and phi) from a constant state."""
    values = [c.values for c in state.concentrations] + [state.potential.values]
    return float(max(np.max(np.abs(v - s)) for v, s in zip(values, steady)))
