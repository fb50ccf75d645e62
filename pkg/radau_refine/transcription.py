from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp

from radau_refine.basis import Interpolant, make_grid
from radau_refine.problem import Mesh, OcpDefinition, tau_to_t, tau_to_zeta, zeta_to_tau


class AssemblyError(ValueError):
    pass


def _checked(name: str, values, shape: tuple[int, ...]) -> np.ndarray:
    array = np.asarray(values, dtype=float)
    if array.shape == shape:
        return array
    # scalar-valued callbacks may return (m,) instead of (1, m)
    if array.size == int(np.prod(shape)):
        return array.reshape(shape)
    # constant expressions come back as scalars or per-component columns
    if array.ndim < len(shape) or (array.ndim == len(shape) and array.shape[-1] == 1):
        try:
            column = array.reshape(array.shape + (1,) * (len(shape) - array.ndim))
            return np.broadcast_to(column, shape).copy()
        except ValueError:
            pass
    raise AssemblyError(f"{name} callback returned shape {array.shape}, expected {shape}")


@dataclass(frozen=True)
class DecisionLayout:
    """
    Position of every NLP unknown inside the decision vector.

    States are stored point-major over the ``total_points + 1`` global points:
    the terminal point of interval k is the initial point of interval k + 1,
    so continuity across mesh points needs no constraint rows. Controls follow
    over the ``total_points`` collocation points, then t0 and tf when free.
    """

    n_x: int
    n_u: int
    counts: tuple[int, ...]
    point_offsets: tuple[int, ...]
    t0_index: Optional[int]
    tf_index: Optional[int]
    size: int
    t0_fixed: float = 0.0
    tf_fixed: float = 1.0

    @classmethod
    def build(cls, ocp: OcpDefinition, mesh: Mesh) -> "DecisionLayout":
        offsets = tuple(int(o) for o in np.concatenate([[0], np.cumsum(mesh.colloc_counts)[:-1]]))
        size = (mesh.total_points + 1) * ocp.n_x + mesh.total_points * ocp.n_u
        t0_index = tf_index = None
        if not ocp.t0.is_fixed:
            t0_index, size = size, size + 1
        if not ocp.tf.is_fixed:
            tf_index, size = size, size + 1
        return cls(ocp.n_x, ocp.n_u, mesh.colloc_counts, offsets, t0_index, tf_index, size, ocp.t0.lower, ocp.tf.lower)

    def times(self, z) -> tuple[float, float]:
        t0 = self.t0_fixed if self.t0_index is None else float(z[self.t0_index])
        tf = self.tf_fixed if self.tf_index is None else float(z[self.tf_index])
        return t0, tf

    @property
    def total_points(self) -> int:
        return sum(self.counts)

    @property
    def state_size(self) -> int:
        return (self.total_points + 1) * self.n_x

    @property
    def control_offset(self) -> int:
        return self.state_size

    def state_index(self, point: int, component: int) -> int:
        return point * self.n_x + component

    def control_index(self, point: int, component: int) -> int:
        return self.control_offset + point * self.n_u + component

    def state_block(self, k: int) -> np.ndarray:
        """Indices of interval k's states, shaped (n_x, N_k + 1)."""
        points = self.point_offsets[k] + np.arange(self.counts[k] + 1)
        return (points[None, :] * self.n_x + np.arange(self.n_x)[:, None]).astype(int)

    def control_block(self, k: int) -> np.ndarray:
        """Indices of interval k's controls, shaped (n_u, N_k)."""
        points = self.point_offsets[k] + np.arange(self.counts[k])
        return (self.control_offset + points[None, :] * self.n_u + np.arange(self.n_u)[:, None]).astype(int)

    def time_indices(self) -> list[int]:
        return [i for i in (self.t0_index, self.tf_index) if i is not None]


@dataclass(frozen=True, eq=False)
class NlpProblem:
    """
    Finite-dimensional problem ``min objective(z)`` subject to
    ``constraint_lower <= constraints(z) <= constraint_upper`` and
    ``variable_lower <= z <= variable_upper``.

    ``sparsity`` is a boolean CSR matrix covering every structurally nonzero
    entry of the constraint Jacobian. ``row_blocks`` names contiguous row
    ranges (defect, path, boundary) for diagnostics.
    """

    size: int
    objective: Callable[[np.ndarray], float]
    constraints: Callable[[np.ndarray], np.ndarray]
    constraint_lower: np.ndarray
    constraint_upper: np.ndarray
    variable_lower: np.ndarray
    variable_upper: np.ndarray
    sparsity: sp.csr_matrix
    row_blocks: tuple[tuple[str, int, int], ...] = ()

    @property
    def n_rows(self) -> int:
        return self.constraint_lower.size

    def describe_row(self, row: int) -> str:
        for name, start, stop in self.row_blocks:
            if start <= row < stop:
                return f"{name} row {row - start}"
        return f"constraint row {row}"


@dataclass(frozen=True, eq=False)
class CollocationSolution:
    """
    Structured collocation result on one mesh.

    ``states[k]`` is n_x x (N_k + 1) on the interval's LGR points plus +1;
    ``controls[k]`` is n_u x N_k on the collocation points. The last column of
    ``states[k]`` and the first column of ``states[k + 1]`` hold the same values.
    """

    mesh: Mesh
    states: tuple[np.ndarray, ...]
    controls: tuple[np.ndarray, ...]
    t0: float
    tf: float
    objective: float = float("nan")

    def __post_init__(self):
        if not self.tf > self.t0:
            raise ValueError(f"Final time {self.tf} must exceed initial time {self.t0}")

    @property
    def n_x(self) -> int:
        return self.states[0].shape[0]

    @property
    def n_u(self) -> int:
        return self.controls[0].shape[0]

    @property
    def alpha(self) -> float:
        return 0.5 * (self.tf - self.t0)

    def state_interpolant(self, k: int) -> Interpolant:
        return Interpolant.from_values(make_grid(self.mesh.colloc_counts[k]).augmented_points, self.states[k])

    def control_interpolant(self, k: int) -> Interpolant:
        return Interpolant.from_values(make_grid(self.mesh.colloc_counts[k]).points, self.controls[k])

    def support_taus(self) -> np.ndarray:
        """Global tau of every state support point, -1 first and +1 last."""
        return global_taus(self.mesh)

    def time_points(self) -> np.ndarray:
        return tau_to_t(self.support_taus(), self.t0, self.tf)

    def sample(self, taus) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        Evaluate the piecewise state and control polynomials on a tau grid.

        Returns:
            tuple: Physical times (m,), states (n_x, m) and controls (n_u, m).
                Controls at a mesh point use the interval to its right, and at
                +1 the last interval's polynomial extrapolated to its end.
        """
        taus = np.atleast_1d(np.asarray(taus, dtype=float))
        states = np.empty((self.n_x, taus.size))
        controls = np.empty((self.n_u, taus.size))
        index = self.mesh.locate(taus)
        for k in np.unique(index):
            mask = index == k
            zeta = tau_to_zeta(taus[mask], *self.mesh.interval(int(k)))
            states[:, mask] = self.state_interpolant(int(k))(zeta)
            controls[:, mask] = self.control_interpolant(int(k))(zeta)
        return tau_to_t(taus, self.t0, self.tf), states, controls


def global_taus(mesh: Mesh) -> np.ndarray:
    parts = [zeta_to_tau(make_grid(n).points, *mesh.interval(k)) for k, n in enumerate(mesh.colloc_counts)]
    return np.concatenate(parts + [[1.0]])


def _collocation_operator(mesh: Mesh) -> tuple[sp.csr_matrix, np.ndarray, np.ndarray]:
    """Block differentiation operator (P x P+1), per-point beta and per-point quadrature weight beta_k w_i."""
    betas, weights = [], []
    total = mesh.total_points
    rows, cols, data = [], [], []
    offset = 0
    for k, n in enumerate(mesh.colloc_counts):
        grid = make_grid(n)
        r, c = np.meshgrid(np.arange(n), np.arange(n + 1), indexing="ij")
        rows.append((r + offset).ravel())
        cols.append((c + offset).ravel())
        data.append(grid.diff_matrix.ravel())
        betas.append(np.full(n, mesh.beta(k)))
        weights.append(mesh.beta(k) * grid.weights)
        offset += n
    operator = sp.csr_matrix(
        (np.concatenate(data), (np.concatenate(rows), np.concatenate(cols))),
        shape=(total, total + 1),
    )
    return operator, np.concatenate(betas), np.concatenate(weights)


def _sparsity(ocp: OcpDefinition, layout: DecisionLayout) -> sp.csr_matrix:
    n_x, n_u = ocp.n_x, ocp.n_u
    times = layout.time_indices()
    rows, cols = [], []

    def add(row, columns):
        columns = np.asarray(columns, dtype=int).ravel()
        rows.append(np.full(columns.size, row, dtype=int))
        cols.append(columns)

    row = 0
    for k, n in enumerate(layout.counts):
        block = layout.state_block(k)
        controls = layout.control_block(k)
        for i in range(n):
            point = layout.point_offsets[k] + i
            own_state = point * n_x + np.arange(n_x)
            for c in range(n_x):
                add(row, np.concatenate([block[c], own_state, controls[:, i], times]))
                row += 1

    for point in range(layout.total_points):
        columns = np.concatenate([point * n_x + np.arange(n_x), layout.control_offset + point * n_u + np.arange(n_u)])
        for _ in range(ocp.n_c):
            add(row, columns)
            row += 1

    ends = np.concatenate([np.arange(n_x), layout.total_points * n_x + np.arange(n_x), times])
    for _ in range(ocp.boundary_rows):
        add(row, ends)
        row += 1

    if not rows:
        return sp.csr_matrix((0, layout.size), dtype=bool)
    r, c = np.concatenate(rows), np.concatenate(cols)
    pattern = sp.csr_matrix((np.ones(r.size), (r, c)), shape=(row, layout.size))
    return pattern.astype(bool)


def assemble(ocp: OcpDefinition, mesh: Mesh) -> tuple[NlpProblem, DecisionLayout]:
    """
    Build the collocation NLP for ``ocp`` on ``mesh``.

    Rows are ordered defects (interval, point, component), then path
    constraints (point, component), then boundary rows. Each defect row is
    ``sum_j D_ij X_j - alpha beta_k f(X_i, U_i, tau_i)`` with
    ``alpha = (tf - t0) / 2``; the objective is the Mayer term plus
    ``alpha sum_k beta_k sum_i w_i L(X_i, U_i, tau_i)``.

    Raises:
        AssemblyError: If a callback returns an array of the wrong shape.
    """
    layout = DecisionLayout.build(ocp, mesh)
    operator, betas, quad_weights = _collocation_operator(mesh)
    taus = global_taus(mesh)[:-1]
    total, n_x, n_u = mesh.total_points, ocp.n_x, ocp.n_u
    control_stop = layout.control_offset + total * n_u

    def split(z):
        z = np.asarray(z, dtype=float)
        states = z[: layout.state_size].reshape(total + 1, n_x)
        controls = z[layout.control_offset : control_stop].reshape(total, n_u)
        return states, controls, *layout.times(z)

    def objective(z) -> float:
        states, controls, t0, tf = split(z)
        value = 0.0
        if ocp.mayer is not None:
            value += np.asarray(ocp.mayer(states[0], t0, states[-1], tf), dtype=float).item()
        if ocp.lagrange is not None:
            running = _checked("lagrange", ocp.lagrange(states[:-1].T, controls.T, taus), (total,))
            value += 0.5 * (tf - t0) * float(quad_weights @ running)
        return value

    def constraints(z) -> np.ndarray:
        states, controls, t0, tf = split(z)
        alpha = 0.5 * (tf - t0)
        field = _checked("dynamics", ocp.dynamics(states[:-1].T, controls.T, taus), (n_x, total))
        defects = operator @ states - alpha * betas[:, None] * field.T
        parts = [defects.ravel()]
        if ocp.path is not None:
            path = _checked("path", ocp.path(states[:-1].T, controls.T, taus), (ocp.n_c, total))
            parts.append(path.T.ravel())
        boundary = ocp.evaluate_boundary(states[0], t0, states[-1], tf)
        parts.append(_checked("boundary", boundary, (ocp.boundary_rows,)))
        return np.concatenate(parts)

    n_defect, n_path = total * n_x, total * ocp.n_c
    boundary_lower, boundary_upper = ocp.boundary_bounds()
    constraint_lower = np.concatenate([np.zeros(n_defect), np.tile(ocp.path_lower, total), boundary_lower])
    constraint_upper = np.concatenate([np.zeros(n_defect), np.tile(ocp.path_upper, total), boundary_upper])

    variable_lower = np.concatenate([np.tile(ocp.state_lower, total + 1), np.tile(ocp.control_lower, total)])
    variable_upper = np.concatenate([np.tile(ocp.state_upper, total + 1), np.tile(ocp.control_upper, total)])
    for index, spec in ((layout.t0_index, ocp.t0), (layout.tf_index, ocp.tf)):
        if index is not None:
            variable_lower = np.append(variable_lower, spec.lower)
            variable_upper = np.append(variable_upper, spec.upper)

    nlp = NlpProblem(
        size=layout.size,
        objective=objective,
        constraints=constraints,
        constraint_lower=constraint_lower,
        constraint_upper=constraint_upper,
        variable_lower=variable_lower,
        variable_upper=variable_upper,
        sparsity=_sparsity(ocp, layout),
        row_blocks=(
            ("defect", 0, n_defect),
            ("path", n_defect, n_defect + n_path),
            ("boundary", n_defect + n_path, n_defect + n_path + ocp.boundary_rows),
        ),
    )
    # probe every callback once so shape errors surface here, not inside the solver
    probe = initial_guess(ocp, mesh)
    nlp.constraints(probe)
    nlp.objective(probe)
    return nlp, layout


def initial_guess(ocp: OcpDefinition, mesh: Mesh) -> np.ndarray:
    """
    Straight-line guess between the endpoint values.

    Components fixed at both ends vary linearly in tau, components fixed at
    one end stay at that value, all other states and every control start at
    zero clipped to their bounds. Free times start at their guess, the
    midpoint of their bounds unless given.
    """
    layout = DecisionLayout.build(ocp, mesh)
    taus = global_taus(mesh)
    fraction = 0.5 * (taus + 1.0)
    states = np.zeros((taus.size, ocp.n_x))
    for c in range(ocp.n_x):
        start, end = ocp.initial_state[c], ocp.final_state[c]
        if not np.isnan(start) and not np.isnan(end):
            states[:, c] = start + (end - start) * fraction
        elif not np.isnan(start):
            states[:, c] = start
        elif not np.isnan(end):
            states[:, c] = end
        else:
            states[:, c] = np.clip(0.0, ocp.state_lower[c], ocp.state_upper[c])
    controls = np.tile(np.clip(np.zeros(ocp.n_u), ocp.control_lower, ocp.control_upper), mesh.total_points)

    z = np.empty(layout.size)
    z[: layout.state_size] = states.ravel()
    z[layout.control_offset : layout.control_offset + controls.size] = controls
    if layout.t0_index is not None:
        z[layout.t0_index] = ocp.t0.initial_guess
    if layout.tf_index is not None:
        z[layout.tf_index] = ocp.tf.initial_guess
    return z


def extract(z, layout: DecisionLayout, mesh: Mesh, nlp: Optional[NlpProblem] = None) -> CollocationSolution:
    """
    Unpack a decision vector into a :class:`CollocationSolution`.

    ``objective`` is filled from ``nlp`` when one is given.

    Raises:
        ValueError: If ``z`` does not have the layout's dimension.
    """
    z = np.asarray(z, dtype=float).ravel()
    if z.size != layout.size:
        raise ValueError(f"Decision vector has {z.size} entries, layout expects {layout.size}")
    states = tuple(z[layout.state_block(k)] for k in range(mesh.K))
    controls = tuple(z[layout.control_block(k)] for k in range(mesh.K))
    t0, tf = layout.times(z)
    objective = nlp.objective(z) if nlp is not None else float("nan")
    return CollocationSolution(mesh, states, controls, t0, tf, objective)


def pack(states, controls, t0: float, tf: float, layout: DecisionLayout) -> np.ndarray:
    """
    Inverse of :func:`extract`: write per-interval blocks into a decision vector.

    A shared mesh point is taken from the interval it starts; the final +1
    point comes from the last interval.
    """
    z = np.zeros(layout.size)
    # write in reverse so the interval starting at a shared point wins
    for k in reversed(range(len(layout.counts))):
        z[layout.state_block(k)] = np.asarray(states[k], dtype=float)
        z[layout.control_block(k)] = np.asarray(controls[k], dtype=float)
    if layout.t0_index is not None:
        z[layout.t0_index] = t0
    if layout.tf_index is not None:
        z[layout.tf_index] = tf
    return z


def interpolate_guess(solution: CollocationSolution, ocp: OcpDefinition, mesh: Mesh) -> np.ndarray:
    """
    Warm start on ``mesh`` from a solution on another mesh.

    States are read from the old piecewise state polynomials at the new
    support points, controls from the old control polynomials at the new
    collocation points (clipped to their bounds).
    """
    layout = DecisionLayout.build(ocp, mesh)
    taus = global_taus(mesh)
    _, states, _ = solution.sample(taus)
    _, _, controls = solution.sample(taus[:-1])
    controls = np.clip(controls.T, ocp.control_lower, ocp.control_upper)
    states = np.clip(states.T, ocp.state_lower, ocp.state_upper)

    z = np.empty(layout.size)
    z[: layout.state_size] = states.ravel()
    z[layout.control_offset : layout.control_offset + controls.size] = controls.ravel()
    if layout.t0_index is not None:
        z[layout.t0_index] = np.clip(solution.t0, ocp.t0.lower, ocp.t0.upper)
    if layout.tf_index is not None:
        z[layout.tf_index] = np.clip(solution.tf, ocp.tf.lower, ocp.tf.upper)
    return z
