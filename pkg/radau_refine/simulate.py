from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.integrate import DOP853, RK45, OdeSolution

from radau_refine import Direction, IntegratorMethod, SimulationStatus
from radau_refine.basis import Interpolant, make_grid
from radau_refine.problem import OcpDefinition, chi, xi, zeta_to_tau
from radau_refine.transcription import CollocationSolution

# failure thresholds: state norm growth and smallest step relative to the span
BLOWUP_FACTOR = 1e10
MIN_STEP_FRACTION = 1e-14

_METHODS = {
    IntegratorMethod.DP54: RK45,
    IntegratorMethod.V98: DOP853,
}


@dataclass(frozen=True)
class IntegratorSpec:
    """
    Explicit embedded Runge-Kutta integrator settings.

    Attributes:
        method (IntegratorMethod): ``dp54`` (Dormand-Prince 5(4)) or ``v98``
            (the high-order pair, scipy's DOP853).
        tolerance (float): Local error tolerance used as the relative
            tolerance.
        max_steps (int): Accepted steps allowed per simulation.
        norm_control (bool): Scale the absolute tolerance by the running
            infinity norm of the state, updated before every step, so the
            error is controlled relative to the size of the solution.
    """

    method: IntegratorMethod = IntegratorMethod.DP54
    tolerance: float = 1e-6
    max_steps: int = 100_000
    norm_control: bool = True

    def __post_init__(self):
        if not isinstance(self.method, IntegratorMethod):
            object.__setattr__(self, "method", IntegratorMethod(self.method))
        if not self.tolerance > 0:
            raise ValueError(f"Integrator tolerance must be positive, got {self.tolerance}")
        if self.max_steps < 1:
            raise ValueError(f"max_steps must be at least 1, got {self.max_steps}")

    @property
    def solver_class(self):
        return _METHODS[self.method]

    def absolute_tolerance(self, y: np.ndarray) -> float:
        """Absolute tolerance for a step starting from state ``y``."""
        if not self.norm_control:
            return self.tolerance
        return self.tolerance * max(1.0, float(np.max(np.abs(y), initial=0.0)))


@dataclass(frozen=True, eq=False)
class Trajectory:
    """
    Simulated state on one interval (or a merged pair) in the local
    coordinate of the interval whose scaling and control drive it.

    ``points`` are ordered in the direction of integration, the first one
    holding the initial (forward) or terminal (backward) condition.
    ``states`` is (n_x, len(points)).
    """

    points: np.ndarray
    states: np.ndarray
    direction: Direction
    status: SimulationStatus
    interval: int
    failure_location: Optional[float] = None
    message: str = ""
    merged: bool = False

    @property
    def ok(self) -> bool:
        return self.status is SimulationStatus.OK


def control_interpolant(solution: CollocationSolution, k: int) -> Interpolant:
    """Control polynomial of interval k over its collocation points only (extrapolates past +1)."""
    return solution.control_interpolant(k)


def _vector_field(ocp: OcpDefinition, solution: CollocationSolution, k: int) -> Callable:
    """d x / d zeta on interval k with the interval's own scaling and control polynomial."""
    scale = solution.alpha * solution.mesh.beta(k)
    control = control_interpolant(solution, k)
    left, right = solution.mesh.interval(k)

    def field(zeta, y):
        u = control(zeta)[:, 0]
        tau = float(zeta_to_tau(zeta, left, right))
        return scale * np.asarray(ocp.dynamics(y, u, tau), dtype=float).ravel()

    return field


def integrate(
    field: Callable,
    y0,
    start: float,
    end: float,
    spec: IntegratorSpec,
    outputs=(),
    interval: int = 0,
    merged: bool = False,
) -> Trajectory:
    """
    Integrate ``field`` from ``start`` to ``end`` (either direction).

    The trajectory holds every accepted step plus ``outputs`` inside the span,
    the latter read from the integrator's dense output. Step-size underflow,
    non-finite states, a state norm above ``BLOWUP_FACTOR * (1 + |y0|)`` or
    running out of steps end the simulation with ``SimulationStatus.FAILED``.
    """
    y0 = np.asarray(y0, dtype=float).ravel()
    direction = Direction.FORWARD if end > start else Direction.BACKWARD
    limit = BLOWUP_FACTOR * (1.0 + float(np.max(np.abs(y0), initial=0.0)))
    min_step = MIN_STEP_FRACTION * abs(end - start)

    times, states, dense = [float(start)], [y0], []
    failure, message = None, ""
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        solver = spec.solver_class(field, start, y0, end, rtol=spec.tolerance, atol=spec.absolute_tolerance(y0))
        for _ in range(spec.max_steps):
            if spec.norm_control:
                solver.atol = spec.absolute_tolerance(solver.y)
            status = solver.step()
            if solver.status == "failed":
                failure, message = solver.t, str(status or "integrator failed")
                break
            if not np.all(np.isfinite(solver.y)) or np.max(np.abs(solver.y)) > limit:
                failure, message = solver.t, "state norm blowup"
                break
            times.append(float(solver.t))
            states.append(solver.y.copy())
            dense.append(solver.dense_output())
            if solver.status == "finished":
                break
            if solver.step_size is not None and solver.step_size < min_step:
                failure, message = solver.t, "step size underflow"
                break
        else:
            failure, message = solver.t, f"exceeded {spec.max_steps} steps"

    points = np.asarray(times)
    values = np.column_stack(states)
    if dense:
        reached = points[-1]
        sign = 1.0 if direction is Direction.FORWARD else -1.0
        extra = np.asarray([p for p in np.atleast_1d(outputs) if 0.0 <= sign * (p - start) <= sign * (reached - start)])
        extra = np.unique(extra[~np.isin(extra, points)])
        if extra.size:
            interpolated = OdeSolution(times, dense)(extra)
            points = np.concatenate([points, extra])
            values = np.column_stack([values, np.atleast_2d(interpolated).reshape(y0.size, -1)])
            order = np.argsort(sign * points, kind="stable")
            points, values = points[order], values[:, order]

    return Trajectory(
        points=points,
        states=values,
        direction=direction,
        status=SimulationStatus.OK if failure is None else SimulationStatus.FAILED,
        interval=interval,
        failure_location=None if failure is None else float(failure),
        message=message,
        merged=merged,
    )


def simulate_ivp(ocp: OcpDefinition, solution: CollocationSolution, k: int, spec: IntegratorSpec) -> Trajectory:
    """Forward simulation of interval k from its first state support point, zeta = -1 to +1."""
    grid = make_grid(solution.mesh.colloc_counts[k])
    return integrate(
        _vector_field(ocp, solution, k),
        solution.states[k][:, 0],
        -1.0,
        1.0,
        spec,
        outputs=grid.augmented_points,
        interval=k,
    )


def simulate_tvp(ocp: OcpDefinition, solution: CollocationSolution, k: int, spec: IntegratorSpec) -> Trajectory:
    """Backward simulation of interval k from its last state support point, zeta = +1 to -1."""
    grid = make_grid(solution.mesh.colloc_counts[k])
    return integrate(
        _vector_field(ocp, solution, k),
        solution.states[k][:, -1],
        1.0,
        -1.0,
        spec,
        outputs=grid.points,
        interval=k,
    )


def _pair_points(solution: CollocationSolution, k: int) -> tuple[float, float, float]:
    if not 0 <= k < solution.mesh.K - 1:
        raise ValueError(f"Interval {k} has no right neighbour on a mesh with {solution.mesh.K} intervals")
    points = solution.mesh.mesh_points
    return points[k], points[k + 1], points[k + 2]


def simulate_merged_ivp(ocp: OcpDefinition, solution: CollocationSolution, k: int, spec: IntegratorSpec) -> Trajectory:
    """
    Forward simulation across intervals k and k + 1 with interval k's scaling
    and its control polynomial extrapolated past +1. Points are in interval
    k's local coordinate; the end of interval k + 1 sits beyond +1.
    """
    pair = _pair_points(solution, k)
    right = make_grid(solution.mesh.colloc_counts[k + 1]).augmented_points
    end = float(xi(1.0, *pair))
    outputs = np.concatenate([make_grid(solution.mesh.colloc_counts[k]).augmented_points, xi(right, *pair)])
    return integrate(
        _vector_field(ocp, solution, k),
        solution.states[k][:, 0],
        -1.0,
        end,
        spec,
        outputs=outputs,
        interval=k,
        merged=True,
    )


def simulate_merged_tvp(ocp: OcpDefinition, solution: CollocationSolution, j: int, spec: IntegratorSpec) -> Trajectory:
    """
    Backward simulation across intervals j - 1 and j with interval j's
    scaling and control, from +1 in interval j's coordinate down past -1 to
    the start of interval j - 1.
    """
    pair = _pair_points(solution, j - 1)
    left = make_grid(solution.mesh.colloc_counts[j - 1]).points
    end = float(chi(-1.0, *pair))
    outputs = np.concatenate([make_grid(solution.mesh.colloc_counts[j]).points, chi(left, *pair)])
    return integrate(
        _vector_field(ocp, solution, j),
        solution.states[j][:, -1],
        1.0,
        end,
        spec,
        outputs=outputs,
        interval=j,
        merged=True,
    )
