from __future__ import annotations

import dataclasses
import math
import time
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Optional

import click
import numpy as np

from radau_refine import Direction, DirectionPolicy, RefinementAction, RunStatus, SolveStatus
from radau_refine.estimate import ErrorReport, estimate_errors, merged_errors
from radau_refine.nlp import NlpSolver, SolverOptions, solve
from radau_refine.problem import Mesh, MeshError, OcpDefinition
from radau_refine.simulate import IntegratorSpec
from radau_refine.transcription import (
    CollocationSolution,
    assemble,
    extract,
    global_taus,
    initial_guess,
    interpolate_guess,
)

if TYPE_CHECKING:
    from radau_refine.metrics import RunMetrics

# substitute for a zero error estimate when sizing a p-reduction
ZERO_ERROR_FLOOR = 1e-16
# guards ceil/floor of logarithms against rounding at exact powers of ten
_LOG_SLACK = 1e-12


@dataclass(frozen=True)
class RefinementOptions:
    n_min: int = 3
    n_max: int = 10
    mesh_tolerance: float = 1e-6
    max_iterations: int = 40
    integrator: IntegratorSpec = field(default_factory=IntegratorSpec)
    direction_policy: DirectionPolicy = DirectionPolicy.AUTO
    solver: SolverOptions = field(default_factory=SolverOptions)
    residuals: bool = True
    verbose: int = 0

    def __post_init__(self):
        if not isinstance(self.direction_policy, DirectionPolicy):
            object.__setattr__(self, "direction_policy", DirectionPolicy(self.direction_policy))
        if self.n_min < 2:
            raise ValueError(f"n_min must be at least 2, got {self.n_min}")
        if self.n_max < self.n_min:
            raise ValueError(f"n_max ({self.n_max}) must not be below n_min ({self.n_min})")
        if not self.mesh_tolerance > 0:
            raise ValueError(f"mesh_tolerance must be positive, got {self.mesh_tolerance}")
        if self.max_iterations < 1:
            raise ValueError(f"max_iterations must be at least 1, got {self.max_iterations}")


@dataclass(frozen=True)
class IntervalAction:
    """What happens to one interval; ``amount`` is P+, H or P- depending on the action."""

    action: RefinementAction
    amount: int = 0


@dataclass(frozen=True, eq=False)
class RefinementPlan:
    actions: tuple[IntervalAction, ...]
    next_mesh: Mesh
    merged_pairs: tuple[tuple[int, float], ...] = ()

    def count(self, action: RefinementAction) -> int:
        return sum(1 for a in self.actions if a.action is action)


@dataclass(frozen=True, eq=False)
class IterationRecord:
    iteration: int
    mesh: Mesh
    objective: float
    nlp_status: SolveStatus
    nlp_iterations: int
    nlp_seconds: float
    e_max: tuple[float, ...] = ()
    max_error: float = float("nan")
    max_residual: float = float("nan")
    direction_policy: DirectionPolicy = DirectionPolicy.BOTH
    simulation_failures: dict[str, int] = field(default_factory=dict)
    actions: tuple[IntervalAction, ...] = ()
    wall_seconds: float = 0.0


@dataclass(frozen=True, eq=False)
class RunResult:
    """
    Outcome of an adaptive run.

    ``solution`` and ``report`` belong to the last iteration whose NLP solve
    succeeded; ``mesh`` is that solution's mesh.
    """

    status: RunStatus
    solution: Optional[CollocationSolution]
    mesh: Mesh
    history: tuple[IterationRecord, ...]
    report: Optional[ErrorReport]
    direction_policy: DirectionPolicy
    policy_reason: str = ""
    message: str = ""

    @property
    def converged(self) -> bool:
        return self.status is RunStatus.CONVERGED


def p_refine_count(e_max: float, tolerance: float) -> int:
    """
    Number of collocation points to add, ceil(log10(e_max / tolerance)).

    Raises:
        ValueError: If the interval already meets the tolerance.
    """
    if not e_max > tolerance:
        raise ValueError(f"Error {e_max} does not exceed tolerance {tolerance}")
    return max(1, math.ceil(math.log10(e_max / tolerance) - _LOG_SLACK))


def h_refine_split(n_next: int, n_min: int, tau_left: float, tau_right: float) -> list[float]:
    """Mesh points splitting [tau_left, tau_right] into max(2, ceil(n_next / n_min)) equal subintervals."""
    if not tau_right > tau_left:
        raise MeshError(f"Cannot split degenerate interval [{tau_left}, {tau_right}]")
    pieces = max(2, -(-n_next // n_min))
    points = np.linspace(tau_left, tau_right, pieces + 1)
    points[0], points[-1] = tau_left, tau_right
    return points.tolist()


def p_reduce_count(e_max: float, tolerance: float, n_k: int, n_min: int, n_max: int) -> int:
    """
    Number of collocation points that can be removed from an interval that
    meets the tolerance: floor(log10(tolerance / e_max) / delta) with
    delta = n_min + n_max - n_k.

    Raises:
        ValueError: If the interval does not meet the tolerance.
    """
    if e_max > tolerance:
        raise ValueError(f"Error {e_max} exceeds tolerance {tolerance}")
    e_max = max(e_max, ZERO_ERROR_FLOOR)
    delta = max(n_min + n_max - n_k, 1)
    return max(0, math.floor(math.log10(tolerance / e_max) / delta + _LOG_SLACK))


def plan_merges(report: ErrorReport, merged: list[tuple[int, float]], tolerance: float) -> list[tuple[int, float]]:
    """
    Pick non-overlapping pairs to merge.

    Mergeable pairs (merged error within ``tolerance``) are taken in ascending
    order of max(e_k, e_{k+1}, merged error), lower index first on ties; an
    interval used by one merge is dropped from every other candidate.
    """
    candidates = []
    for k, error in merged:
        if error <= tolerance:
            score = max(report.e_max[k], report.e_max[k + 1], error)
            candidates.append((score, k, error))
    candidates.sort()

    consumed: set[int] = set()
    selected = []
    for _, k, error in candidates:
        if k in consumed or k + 1 in consumed:
            continue
        consumed.update((k, k + 1))
        selected.append((k, error))
    return sorted(selected)


def refine(mesh: Mesh, report: ErrorReport, merged: list[tuple[int, float]], opts: RefinementOptions) -> RefinementPlan:
    """
    Build the next mesh.

    Intervals over the tolerance gain ``P+`` points, or are split into
    subintervals with ``n_min`` points when that would exceed ``n_max``;
    intervals without any simulation are split in two. Intervals within the
    tolerance merge with their right neighbour when the pair was selected,
    otherwise drop ``P-`` points.

    Raises:
        ValueError: If every interval already meets the tolerance.
    """
    tolerance = opts.mesh_tolerance
    if not report.over(tolerance):
        raise ValueError("Mesh already meets the tolerance; nothing to refine")
    merges = dict(plan_merges(report, merged, tolerance))

    points = [mesh.mesh_points[0]]
    counts: list[int] = []
    actions: list[IntervalAction] = []
    k = 0
    while k < mesh.K:
        n_k = mesh.colloc_counts[k]
        left, right = mesh.interval(k)
        e_k = report.e_max[k]
        if k in report.failed:
            split = h_refine_split(2 * opts.n_min, opts.n_min, left, right)
            points.extend(split[1:])
            counts.extend([opts.n_min] * (len(split) - 1))
            actions.append(IntervalAction(RefinementAction.H_REFINE, len(split) - 1))
        elif e_k > tolerance:
            increase = p_refine_count(e_k, tolerance)
            if n_k + increase > opts.n_max:
                split = h_refine_split(n_k + increase, opts.n_min, left, right)
                points.extend(split[1:])
                counts.extend([opts.n_min] * (len(split) - 1))
                actions.append(IntervalAction(RefinementAction.H_REFINE, len(split) - 1))
            else:
                points.append(right)
                counts.append(n_k + increase)
                actions.append(IntervalAction(RefinementAction.P_REFINE, increase))
        elif k in merges:
            points.append(mesh.mesh_points[k + 2])
            counts.append(max(n_k, mesh.colloc_counts[k + 1]))
            actions.extend([IntervalAction(RefinementAction.MERGE), IntervalAction(RefinementAction.MERGE)])
            k += 2
            continue
        else:
            decrease = p_reduce_count(e_k, tolerance, n_k, opts.n_min, opts.n_max)
            new_count = max(opts.n_min, n_k - decrease)
            points.append(right)
            counts.append(new_count)
            action = RefinementAction.P_REDUCE if new_count < n_k else RefinementAction.NONE
            actions.append(IntervalAction(action, n_k - new_count))
        k += 1

    counts = [min(max(n, opts.n_min), opts.n_max) for n in counts]
    return RefinementPlan(tuple(actions), Mesh(tuple(points), tuple(counts)), tuple(sorted(merges.items())))


def _log(opts: RefinementOptions, level: int, message: str) -> None:
    if opts.verbose >= level:
        click.echo(message, err=True)


def _fallback(report: ErrorReport) -> tuple[Optional[DirectionPolicy], str]:
    failing = report.failed_directions()
    if Direction.BACKWARD in failing and Direction.FORWARD not in failing:
        return DirectionPolicy.FORWARD_ONLY, "tvp_failed"
    if Direction.FORWARD in failing and Direction.BACKWARD not in failing:
        return DirectionPolicy.BACKWARD_ONLY, "ivp_failed"
    return None, ""


def _failure_counts(report: ErrorReport) -> dict[str, int]:
    counts = {direction.value: 0 for direction in Direction}
    for reasons in report.skipped.values():
        for direction in reasons:
            counts[direction.value] += 1
    return counts


def run_adaptive(
    ocp: OcpDefinition,
    initial_mesh: Optional[Mesh] = None,
    opts: Optional[RefinementOptions] = None,
    solver: Optional[NlpSolver] = None,
    metrics: Optional["RunMetrics"] = None,
) -> RunResult:
    """
    Adaptive mesh refinement loop.

    Each iteration solves the collocation NLP on the current mesh, simulates
    every interval to estimate the relative error and stops once every
    interval meets ``opts.mesh_tolerance``. Otherwise the mesh is refined and
    the next NLP is warm-started from the current solution. At most
    ``opts.max_iterations`` NLPs are solved.

    With ``DirectionPolicy.AUTO`` both directions are simulated on the first
    iteration; if only one direction fails anywhere, it is dropped for the
    rest of the run.

    Parameters:
        ocp (OcpDefinition): Problem to solve.
        initial_mesh (Mesh): Starting mesh; defaults to 10 uniform intervals
            with ``n_min`` points each.
        opts (RefinementOptions): Run configuration.
        solver (NlpSolver): NLP solver; defaults to :func:`radau_refine.nlp.default_solver`
            for each NLP size.
        metrics (RunMetrics): Updated after every iteration when given.

    Returns:
        RunResult: Final status, last good solution and per-iteration history.
    """
    opts = opts or RefinementOptions()
    mesh = initial_mesh or Mesh.uniform(10, opts.n_min)
    policy = opts.direction_policy
    effective = DirectionPolicy.BOTH if policy is DirectionPolicy.AUTO else policy
    reason = ""
    guess = initial_guess(ocp, mesh)
    history: list[IterationRecord] = []
    solution: Optional[CollocationSolution] = None
    report: Optional[ErrorReport] = None
    good_mesh = mesh

    for iteration in range(opts.max_iterations):
        started = time.perf_counter()
        nlp, layout = assemble(ocp, mesh)
        outcome = solve(nlp, guess, opts.solver, solver)
        nlp_seconds = time.perf_counter() - started

        if not outcome.ok:
            record = IterationRecord(
                iteration=iteration,
                mesh=mesh,
                objective=outcome.objective,
                nlp_status=outcome.status,
                nlp_iterations=outcome.iteration_count,
                nlp_seconds=nlp_seconds,
                direction_policy=effective,
                wall_seconds=time.perf_counter() - started,
            )
            history.append(record)
            if metrics is not None:
                metrics.observe_iteration(record)
            _log(opts, 1, f"iteration {iteration}: NLP {outcome.status.value}: {outcome.message}")
            return RunResult(
                RunStatus.NLP_FAILED,
                solution,
                good_mesh,
                tuple(history),
                report,
                effective,
                reason,
                f"NLP {outcome.status.value} on iteration {iteration}: {outcome.message}",
            )

        solution = extract(outcome.z_star, layout, mesh, nlp)
        report = estimate_errors(ocp, solution, opts.integrator, effective, residuals=opts.residuals)
        good_mesh = mesh
        if policy is DirectionPolicy.AUTO and iteration == 0:
            fallback, why = _fallback(report)
            if fallback is not None:
                effective, reason = fallback, why
                report = dataclasses.replace(report, direction_policy=effective)
                _log(opts, 1, f"direction policy switched to {effective.value} ({reason})")

        record = IterationRecord(
            iteration=iteration,
            mesh=mesh,
            objective=solution.objective,
            nlp_status=outcome.status,
            nlp_iterations=outcome.iteration_count,
            nlp_seconds=nlp_seconds,
            e_max=report.e_max,
            max_error=report.max_error,
            max_residual=report.max_residual,
            direction_policy=effective,
            simulation_failures=_failure_counts(report),
        )
        _log(
            opts,
            1,
            f"iteration {iteration}: K={mesh.K} N={mesh.total_points} e_max={report.max_error:.3e}"
            f" residual={report.max_residual:.3e} objective={solution.objective:.10g} nlp={outcome.status.value}",
        )

        status = None
        if report.max_error <= opts.mesh_tolerance:
            status = RunStatus.CONVERGED
        elif iteration + 1 >= opts.max_iterations:
            status = RunStatus.MAX_ITERATIONS
        else:
            candidates = merged_errors(ocp, solution, report, opts.integrator, opts.mesh_tolerance)
            plan = refine(mesh, report, candidates, opts)
            record = dataclasses.replace(record, actions=plan.actions)
            for k in sorted(report.failed):
                _log(opts, 1, f"  interval {k}: no usable simulation, forcing a split")
            guess = interpolate_guess(solution, ocp, plan.next_mesh)
            mesh = plan.next_mesh

        record = dataclasses.replace(record, wall_seconds=time.perf_counter() - started)
        history.append(record)
        if metrics is not None:
            metrics.observe_iteration(record)
        if status is not None:
            return RunResult(status, solution, good_mesh, tuple(history), report, effective, reason)

    raise AssertionError("unreachable: the last iteration always returns")


def verify_solution(
    ocp: OcpDefinition,
    solution: CollocationSolution,
    opts: RefinementOptions,
    policy: Optional[DirectionPolicy] = None,
) -> tuple[bool, ErrorReport]:
    """
    Re-simulate every interval with a new integrator and check that the
    relative error still meets ``opts.mesh_tolerance``.
    """
    spec = dataclasses.replace(opts.integrator)
    policy = policy or opts.direction_policy
    if policy is DirectionPolicy.AUTO:
        policy = DirectionPolicy.BOTH
    report = estimate_errors(ocp, solution, spec, policy, residuals=False)
    return report.max_error <= opts.mesh_tolerance, report


def control_switches(solution: CollocationSolution, component: int, threshold: float = 0.0) -> list[float]:
    """
    Locations in tau where control ``component`` crosses ``threshold`` between
    consecutive collocation points.

    A crossing between two intervals is reported at their shared mesh point,
    one inside an interval at the midpoint of the two collocation points.
    """
    taus = global_taus(solution.mesh)[:-1]
    values = np.concatenate([block[component] for block in solution.controls])
    high = values > threshold
    switches = []
    interval = solution.mesh.locate(taus)
    for i in np.flatnonzero(high[1:] != high[:-1]):
        if interval[i] != interval[i + 1]:
            switches.append(solution.mesh.mesh_points[interval[i + 1]])
        else:
            switches.append(0.5 * (taus[i] + taus[i + 1]))
    return [float(s) for s in switches]
