from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

# callbacks receive column-stacked points: x is (n_x, m), u is (n_u, m) and
# tau is (m,), or 1-D vectors and a scalar for a single point
PointFunction = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]
EndpointFunction = Callable[[np.ndarray, float, np.ndarray, float], np.ndarray]


class MeshError(ValueError):
    pass


@dataclass(frozen=True)
class TimeSpec:
    """
    Initial or final time: fixed when ``lower == upper``, otherwise a bounded
    decision variable starting from ``guess`` (the midpoint when omitted).
    """

    lower: float
    upper: float
    guess: Optional[float] = None

    def __post_init__(self):
        if not (math.isfinite(self.lower) and math.isfinite(self.upper)):
            raise ValueError("Time bounds must be finite")
        if self.upper < self.lower:
            raise ValueError(f"Time upper bound {self.upper} is below lower bound {self.lower}")
        if self.guess is not None and not self.lower <= self.guess <= self.upper:
            raise ValueError(f"Time guess {self.guess} is outside [{self.lower}, {self.upper}]")

    @classmethod
    def fixed(cls, value: float) -> "TimeSpec":
        return cls(float(value), float(value))

    @classmethod
    def free(cls, lower: float, upper: float, guess: Optional[float] = None) -> "TimeSpec":
        return cls(float(lower), float(upper), None if guess is None else float(guess))

    @property
    def is_fixed(self) -> bool:
        return self.lower == self.upper

    @property
    def midpoint(self) -> float:
        return 0.5 * (self.lower + self.upper)

    @property
    def initial_guess(self) -> float:
        return self.midpoint if self.guess is None else self.guess


def _vector(values, size: int, fill: float, name: str) -> np.ndarray:
    if values is None:
        return np.full(size, fill)
    array = np.asarray(values, dtype=float).ravel()
    if array.size != size:
        raise ValueError(f"{name} has {array.size} entries, expected {size}")
    return array


@dataclass(frozen=True, eq=False)
class OcpDefinition:
    """
    Single-phase Bolza optimal control problem on the normalized domain.

    Endpoint values given in ``initial_state``/``final_state`` (NaN means
    free) become equality boundary rows and drive the straight-line initial
    guess. Additional boundary conditions go through ``boundary`` with
    ``boundary_lower``/``boundary_upper`` (defaults to ``b <= 0``). Path
    constraints follow the same convention with ``path_lower``/``path_upper``.
    State and control box bounds are applied directly to the decision
    variables.
    """

    n_x: int
    n_u: int
    dynamics: PointFunction
    lagrange: Optional[PointFunction] = None
    mayer: Optional[EndpointFunction] = None
    boundary: Optional[EndpointFunction] = None
    n_b: int = 0
    boundary_lower: Optional[Sequence[float]] = None
    boundary_upper: Optional[Sequence[float]] = None
    path: Optional[PointFunction] = None
    n_c: int = 0
    path_lower: Optional[Sequence[float]] = None
    path_upper: Optional[Sequence[float]] = None
    initial_state: Optional[Sequence[float]] = None
    final_state: Optional[Sequence[float]] = None
    state_lower: Optional[Sequence[float]] = None
    state_upper: Optional[Sequence[float]] = None
    control_lower: Optional[Sequence[float]] = None
    control_upper: Optional[Sequence[float]] = None
    t0: TimeSpec = field(default_factory=lambda: TimeSpec.fixed(0.0))
    tf: TimeSpec = field(default_factory=lambda: TimeSpec.fixed(1.0))
    name: str = "problem"
    state_names: Optional[Sequence[str]] = None
    control_names: Optional[Sequence[str]] = None

    def __post_init__(self):
        if self.n_x < 1 or self.n_u < 0:
            raise ValueError(f"Invalid dimensions n_x={self.n_x}, n_u={self.n_u}")
        if (self.boundary is None) != (self.n_b == 0):
            raise ValueError("boundary callback and n_b must be given together")
        if (self.path is None) != (self.n_c == 0):
            raise ValueError("path callback and n_c must be given together")
        if self.tf.upper <= self.t0.lower:
            raise ValueError("Final time bounds must allow tf > t0")
        # normalise every vector once so the rest of the package can index freely
        normalised = {
            "initial_state": _vector(self.initial_state, self.n_x, np.nan, "initial_state"),
            "final_state": _vector(self.final_state, self.n_x, np.nan, "final_state"),
            "state_lower": _vector(self.state_lower, self.n_x, -np.inf, "state_lower"),
            "state_upper": _vector(self.state_upper, self.n_x, np.inf, "state_upper"),
            "control_lower": _vector(self.control_lower, self.n_u, -np.inf, "control_lower"),
            "control_upper": _vector(self.control_upper, self.n_u, np.inf, "control_upper"),
            "boundary_lower": _vector(self.boundary_lower, self.n_b, -np.inf, "boundary_lower"),
            "boundary_upper": _vector(self.boundary_upper, self.n_b, 0.0, "boundary_upper"),
            "path_lower": _vector(self.path_lower, self.n_c, -np.inf, "path_lower"),
            "path_upper": _vector(self.path_upper, self.n_c, 0.0, "path_upper"),
            "state_names": tuple(self.state_names or (f"x{i}" for i in range(self.n_x))),
            "control_names": tuple(self.control_names or (f"u{i}" for i in range(self.n_u))),
        }
        for key, value in normalised.items():
            object.__setattr__(self, key, value)

    @property
    def fixed_initial(self) -> np.ndarray:
        return np.flatnonzero(~np.isnan(self.initial_state))

    @property
    def fixed_final(self) -> np.ndarray:
        return np.flatnonzero(~np.isnan(self.final_state))

    @property
    def boundary_rows(self) -> int:
        return self.fixed_initial.size + self.fixed_final.size + self.n_b

    def evaluate_boundary(self, x0, t0: float, xf, tf: float) -> np.ndarray:
        """Endpoint equalities followed by the user boundary callback, in that order."""
        x0 = np.asarray(x0, dtype=float)
        xf = np.asarray(xf, dtype=float)
        parts = [
            x0[self.fixed_initial] - self.initial_state[self.fixed_initial],
            xf[self.fixed_final] - self.final_state[self.fixed_final],
        ]
        if self.boundary is not None:
            parts.append(np.asarray(self.boundary(x0, t0, xf, tf), dtype=float).ravel())
        return np.concatenate(parts)

    def boundary_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        fixed = np.zeros(self.fixed_initial.size + self.fixed_final.size)
        return (
            np.concatenate([fixed, self.boundary_lower]),
            np.concatenate([fixed, self.boundary_upper]),
        )


@dataclass(frozen=True)
class AeroModel:
    """
    Aerodynamic/propulsion data for the supersonic climb problem.

    ``thrust`` and ``drag`` are evaluated as ``f(h, v)`` on arrays. The load
    factor bounds are not part of the published problem statement and are
    required to keep the control bounded.
    """

    thrust: Callable[[np.ndarray, np.ndarray], np.ndarray]
    drag: Callable[[np.ndarray, np.ndarray], np.ndarray]
    mass: float
    gravity: float
    load_factor_bounds: tuple[float, float] = (-3.0, 3.0)


@dataclass(frozen=True)
class Mesh:
    """Mesh points tau_0 = -1 < ... < tau_K = +1 and the collocation count of each interval."""

    mesh_points: tuple[float, ...]
    colloc_counts: tuple[int, ...]

    def __post_init__(self):
        points = tuple(float(p) for p in self.mesh_points)
        counts = tuple(int(n) for n in self.colloc_counts)
        object.__setattr__(self, "mesh_points", points)
        object.__setattr__(self, "colloc_counts", counts)
        if len(points) < 2:
            raise MeshError("A mesh needs at least two mesh points")
        if points[0] != -1.0 or points[-1] != 1.0:
            raise MeshError(f"Mesh must span [-1, +1], got [{points[0]}, {points[-1]}]")
        if any(b <= a for a, b in zip(points, points[1:])):
            raise MeshError("Mesh points must be strictly increasing")
        if len(counts) != len(points) - 1:
            raise MeshError(f"{len(points) - 1} mesh intervals but {len(counts)} collocation counts")
        if any(n < 1 for n in counts):
            raise MeshError("Every mesh interval needs at least one collocation point")

    @classmethod
    def uniform(cls, intervals: int, n: int) -> "Mesh":
        points = np.linspace(-1.0, 1.0, intervals + 1)
        points[0], points[-1] = -1.0, 1.0
        return cls(tuple(points), (n,) * intervals)

    @property
    def K(self) -> int:
        return len(self.colloc_counts)

    @property
    def total_points(self) -> int:
        return sum(self.colloc_counts)

    def interval(self, k: int) -> tuple[float, float]:
        return self.mesh_points[k], self.mesh_points[k + 1]

    def beta(self, k: int) -> float:
        left, right = self.interval(k)
        return 0.5 * (right - left)

    def locate(self, tau) -> np.ndarray:
        """Index of the interval containing each tau (right end belongs to the last interval)."""
        tau = np.atleast_1d(np.asarray(tau, dtype=float))
        index = np.searchsorted(self.mesh_points, tau, side="right") - 1
        return np.clip(index, 0, self.K - 1)


def _check_order(*points: float) -> None:
    if any(b <= a for a, b in zip(points, points[1:])):
        raise MeshError(f"Points must be strictly increasing, got {points}")


def tau_to_t(tau, t0: float, tf: float):
    """Map tau in [-1, +1] to physical time t = alpha tau + alpha_0."""
    if tf <= t0:
        raise MeshError(f"Final time {tf} must exceed initial time {t0}")
    return 0.5 * (tf - t0) * np.asarray(tau, dtype=float) + 0.5 * (tf + t0)


def t_to_tau(t, t0: float, tf: float):
    if tf <= t0:
        raise MeshError(f"Final time {tf} must exceed initial time {t0}")
    return (2.0 * np.asarray(t, dtype=float) - (tf + t0)) / (tf - t0)


def zeta_to_tau(zeta, tau_left: float, tau_right: float):
    """Map interval-local zeta in [-1, +1] to tau = beta_k zeta + beta_k0."""
    _check_order(tau_left, tau_right)
    return 0.5 * (tau_right - tau_left) * np.asarray(zeta, dtype=float) + 0.5 * (tau_right + tau_left)


def tau_to_zeta(tau, tau_left: float, tau_right: float):
    _check_order(tau_left, tau_right)
    return (2.0 * np.asarray(tau, dtype=float) - (tau_right + tau_left)) / (tau_right - tau_left)


def chi(x, tau_prev: float, tau_mid: float, tau_next: float):
    """Interval-k local coordinate to interval-(k+1) local coordinate."""
    _check_order(tau_prev, tau_mid, tau_next)
    return tau_to_zeta(zeta_to_tau(x, tau_prev, tau_mid), tau_mid, tau_next)


def xi(x, tau_prev: float, tau_mid: float, tau_next: float):
    """Inverse of :func:`chi`."""
    _check_order(tau_prev, tau_mid, tau_next)
    return tau_to_zeta(zeta_to_tau(x, tau_mid, tau_next), tau_prev, tau_mid)
