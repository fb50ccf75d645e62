from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from radau_refine import Direction, DirectionPolicy
from radau_refine.basis import derivative, make_grid
from radau_refine.problem import OcpDefinition, chi, xi, zeta_to_tau
from radau_refine.simulate import (
    IntegratorSpec,
    Trajectory,
    simulate_ivp,
    simulate_merged_ivp,
    simulate_merged_tvp,
    simulate_tvp,
)
from radau_refine.transcription import CollocationSolution


class EstimationError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ErrorTrace:
    """A simulated trajectory and its scaled pointwise error against the collocated state, (n_x, m)."""

    trajectory: Trajectory
    errors: np.ndarray

    @property
    def max_error(self) -> float:
        return float(np.max(self.errors, initial=0.0))


@dataclass(frozen=True, eq=False)
class ErrorReport:
    """
    Relative error estimate for every interval of one mesh.

    ``e_max[k]`` is ``inf`` for intervals where no direction could be
    simulated; those intervals are listed in ``failed``. ``skipped`` maps an
    interval to the directions whose simulation failed and why.
    """

    gamma: np.ndarray
    e_max: tuple[float, ...]
    forward: tuple[Optional[ErrorTrace], ...]
    backward: tuple[Optional[ErrorTrace], ...]
    direction_policy: DirectionPolicy
    skipped: dict[int, dict[Direction, str]] = field(default_factory=dict)
    failed: frozenset[int] = frozenset()
    residual: tuple[float, ...] = ()

    @property
    def max_error(self) -> float:
        return max(self.e_max)

    @property
    def max_residual(self) -> float:
        return max(self.residual) if self.residual else float("nan")

    def over(self, tolerance: float) -> list[int]:
        """Intervals whose error exceeds ``tolerance``."""
        return [k for k, e in enumerate(self.e_max) if not e <= tolerance]

    def within(self, tolerance: float) -> list[int]:
        return [k for k, e in enumerate(self.e_max) if e <= tolerance]

    def failed_directions(self) -> set[Direction]:
        return {direction for reasons in self.skipped.values() for direction in reasons}


def scaling_factors(solution: CollocationSolution) -> np.ndarray:
    """
    Per-component scaling gamma_i = 1 / (1 + max |X_i|) over every support point.

    Raises:
        EstimationError: If any state value is not finite.
    """
    states = np.concatenate([np.asarray(block, dtype=float) for block in solution.states], axis=1)
    if states.size == 0:
        raise EstimationError("Solution has no state values")
    if not np.all(np.isfinite(states)):
        raise EstimationError("Solution contains non-finite state values")
    return 1.0 / (1.0 + np.max(np.abs(states), axis=1))


def trace_errors(solution: CollocationSolution, k: int, trajectory: Trajectory, gamma) -> ErrorTrace:
    interpolant = solution.state_interpolant(k)
    reference = interpolant(trajectory.points)
    errors = np.asarray(gamma, dtype=float)[:, None] * np.abs(trajectory.states - reference)
    return ErrorTrace(trajectory, errors)


def interval_error(
    solution: CollocationSolution,
    k: int,
    fwd: Optional[Trajectory],
    bwd: Optional[Trajectory],
    gamma,
) -> float:
    """
    Largest scaled difference between the simulated and collocated state on
    interval k over every available direction. Failed or missing
    trajectories contribute nothing.

    Raises:
        EstimationError: If neither direction produced a usable trajectory.
    """
    usable = [t for t in (fwd, bwd) if t is not None and t.ok]
    if not usable:
        raise EstimationError(f"No usable simulation on interval {k}")
    return max(trace_errors(solution, k, t, gamma).max_error for t in usable)


def _merged_trace(solution: CollocationSolution, k: int, trajectory: Trajectory, gamma) -> np.ndarray:
    """Scaled errors of a merged simulation of intervals k and k + 1, in the driving interval's coordinate."""
    pair = tuple(solution.mesh.mesh_points[k : k + 3])
    left, right = solution.state_interpolant(k), solution.state_interpolant(k + 1)
    points = trajectory.points
    reference = np.empty_like(trajectory.states)
    if trajectory.direction is Direction.FORWARD:
        own = points <= 1.0
        reference[:, own] = left(points[own])
        if (~own).any():
            reference[:, ~own] = right(chi(points[~own], *pair))
    else:
        own = points >= -1.0
        reference[:, own] = right(points[own])
        if (~own).any():
            reference[:, ~own] = left(xi(points[~own], *pair))
    return np.asarray(gamma, dtype=float)[:, None] * np.abs(trajectory.states - reference)


def merged_pair_error(
    solution: CollocationSolution,
    k: int,
    merged_fwd: Optional[Trajectory],
    merged_bwd: Optional[Trajectory],
    gamma,
) -> float:
    """
    Error of treating intervals k and k + 1 as one: the forward run uses
    interval k's control extrapolated into k + 1, the backward run interval
    k + 1's control extrapolated into k. A failed run makes the pair
    unmergeable (``inf``).
    """
    runs = [t for t in (merged_fwd, merged_bwd) if t is not None]
    if not runs or any(not t.ok for t in runs):
        return float("inf")
    return max(float(np.max(_merged_trace(solution, k, t, gamma), initial=0.0)) for t in runs)


def residual_error(ocp: OcpDefinition, solution: CollocationSolution, k: int, gamma=None) -> float:
    """
    Scaled dynamics residual of the state polynomial on interval k, sampled
    on the N_k + 1 point LGR grid inside the interval.
    """
    n = solution.mesh.colloc_counts[k]
    samples = make_grid(n + 1).points
    interpolant = solution.state_interpolant(k)
    states = interpolant(samples)
    controls = solution.control_interpolant(k)(samples)
    taus = zeta_to_tau(samples, *solution.mesh.interval(k))
    scale = solution.alpha * solution.mesh.beta(k)
    field = np.asarray(ocp.dynamics(states, controls, taus), dtype=float).reshape(states.shape)
    residual = np.abs(derivative(interpolant, samples) - scale * field)
    if gamma is not None:
        residual = np.asarray(gamma, dtype=float)[:, None] * residual
    return float(np.max(residual, initial=0.0))


def estimate_errors(
    ocp: OcpDefinition,
    solution: CollocationSolution,
    spec: IntegratorSpec,
    policy: DirectionPolicy = DirectionPolicy.BOTH,
    residuals: bool = True,
) -> ErrorReport:
    """
    Simulate every interval in the directions ``policy`` allows and collect
    the relative error report.

    Parameters:
        ocp (OcpDefinition): Problem whose dynamics are simulated.
        solution (CollocationSolution): Current collocation solution.
        spec (IntegratorSpec): Integrator settings.
        policy (DirectionPolicy): Directions to simulate; ``AUTO`` simulates
            both and leaves the fallback decision to the caller.
        residuals (bool): Also compute the dynamics residual diagnostic.

    Returns:
        ErrorReport: Per-interval errors, traces and failure bookkeeping.
    """
    gamma = scaling_factors(solution)
    e_max, forward, backward = [], [], []
    skipped: dict[int, dict[Direction, str]] = {}
    failed = set()
    for k in range(solution.mesh.K):
        fwd = simulate_ivp(ocp, solution, k, spec) if policy.uses(Direction.FORWARD) else None
        bwd = simulate_tvp(ocp, solution, k, spec) if policy.uses(Direction.BACKWARD) else None
        for trajectory in (fwd, bwd):
            if trajectory is not None and not trajectory.ok:
                skipped.setdefault(k, {})[trajectory.direction] = (
                    f"{trajectory.message} at zeta={trajectory.failure_location:.6g}"
                )
        forward.append(trace_errors(solution, k, fwd, gamma) if fwd is not None and fwd.ok else None)
        backward.append(trace_errors(solution, k, bwd, gamma) if bwd is not None and bwd.ok else None)
        try:
            e_max.append(interval_error(solution, k, fwd, bwd, gamma))
        except EstimationError:
            e_max.append(float("inf"))
            failed.add(k)

    residual = tuple(residual_error(ocp, solution, k, gamma) for k in range(solution.mesh.K)) if residuals else ()
    return ErrorReport(
        gamma=gamma,
        e_max=tuple(e_max),
        forward=tuple(forward),
        backward=tuple(backward),
        direction_policy=policy,
        skipped=skipped,
        failed=frozenset(failed),
        residual=residual,
    )


def merged_errors(
    ocp: OcpDefinition,
    solution: CollocationSolution,
    report: ErrorReport,
    spec: IntegratorSpec,
    tolerance: float,
) -> list[tuple[int, float]]:
    """
    Merged-pair errors for every pair (k, k + 1) with both intervals within
    ``tolerance``, simulated in the directions the report used.
    """
    within = set(report.within(tolerance))
    policy = report.direction_policy
    # a direction that already failed on single intervals is not retried here
    failing = report.failed_directions() if policy is DirectionPolicy.AUTO else set()
    result = []
    for k in range(solution.mesh.K - 1):
        if k not in within or k + 1 not in within:
            continue
        fwd = bwd = None
        if policy.uses(Direction.FORWARD) and Direction.FORWARD not in failing:
            fwd = simulate_merged_ivp(ocp, solution, k, spec)
        if policy.uses(Direction.BACKWARD) and Direction.BACKWARD not in failing:
            bwd = simulate_merged_tvp(ocp, solution, k + 1, spec)
        result.append((k, merged_pair_error(solution, k, fwd, bwd, report.gamma)))
    return result
