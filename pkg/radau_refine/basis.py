from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

# queries closer than this to a node return the nodal value
NODE_TOLERANCE = 1e-15
MAX_NEWTON_ITERATIONS = 100


class GridError(ValueError):
    pass


def _frozen(array) -> np.ndarray:
    array = np.array(array, dtype=float)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class CollocationGrid:
    """
    Legendre-Gauss-Radau collocation data for one mesh interval.

    Attributes:
        n (int): Number of collocation points.
        points (np.ndarray): The n LGR points on [-1, +1), starting at -1.
        augmented_points (np.ndarray): ``points`` followed by the
            noncollocated +1 (length n + 1). These are the support points of
            the state polynomial.
        weights (np.ndarray): The n LGR quadrature weights.
        diff_matrix (np.ndarray): n x (n + 1) matrix whose entry (i, j) is the
            derivative of the j-th Lagrange basis polynomial on
            ``augmented_points`` evaluated at ``points[i]``.
    """

    n: int
    points: np.ndarray
    augmented_points: np.ndarray
    weights: np.ndarray
    diff_matrix: np.ndarray


@dataclass(frozen=True, eq=False)
class Interpolant:
    """
    Vector-valued Lagrange interpolating polynomial in barycentric form.

    ``values`` holds one row per vector component and one column per node.
    Evaluation outside the node range is allowed (extrapolation).
    """

    nodes: np.ndarray
    values: np.ndarray
    barycentric_weights: np.ndarray

    @classmethod
    def from_values(cls, nodes, values) -> "Interpolant":
        nodes = np.asarray(nodes, dtype=float).ravel()
        values = np.atleast_2d(np.asarray(values, dtype=float))
        if nodes.size == 0:
            raise GridError("Interpolant needs at least one node")
        if values.shape[1] != nodes.size:
            raise GridError(f"Interpolant values have {values.shape[1]} columns, expected one per node ({nodes.size})")
        if nodes.size > 1 and np.min(np.diff(np.sort(nodes))) <= NODE_TOLERANCE:
            raise GridError("Interpolant nodes must be distinct")
        return cls(_frozen(nodes), _frozen(values), _frozen(barycentric_weights(nodes)))

    @property
    def components(self) -> int:
        return self.values.shape[0]

    def __call__(self, queries) -> np.ndarray:
        return evaluate(self, queries)


def legendre_pair(x, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Return (P_{n-1}(x), P_n(x)) from the three-term recurrence."""
    x = np.asarray(x, dtype=float)
    previous = np.ones_like(x)
    current = x.copy()
    for k in range(2, n + 1):
        previous, current = current, ((2 * k - 1) * x * current - (k - 1) * previous) / k
    return previous, current


def radau_points_weights(n: int) -> tuple[np.ndarray, np.ndarray]:
    """
    Compute the n flipped LGR points (roots of P_{n-1} + P_n) and weights.

    The free points are found by Newton iteration seeded with
    -cos(2 pi j / (2n - 1)); the weights use the closed form
    w_0 = 2 / n^2, w_j = (1 - x_j) / (n P_{n-1}(x_j))^2.
    """
    if n == 1:
        return np.array([-1.0]), np.array([2.0])

    x = -np.cos(2.0 * np.pi * np.arange(n) / (2 * n - 1))
    x[0] = -1.0
    for _ in range(MAX_NEWTON_ITERATIONS):
        p_prev, p_curr = legendre_pair(x[1:], n)
        step = ((1.0 - x[1:]) / n) * (p_prev + p_curr) / (p_prev - p_curr)
        x[1:] -= step
        if np.max(np.abs(step)) < 1e-15:
            break
    x.sort()

    weights = np.empty(n)
    weights[0] = 2.0 / n**2
    p_prev, _ = legendre_pair(x[1:], n)
    weights[1:] = (1.0 - x[1:]) / (n * p_prev) ** 2
    return x, weights


def barycentric_weights(nodes) -> np.ndarray:
    nodes = np.asarray(nodes, dtype=float)
    diff = np.subtract.outer(nodes, nodes)
    np.fill_diagonal(diff, 1.0)
    return 1.0 / np.prod(diff, axis=1)


def differentiation_matrix(nodes) -> np.ndarray:
    """Square barycentric differentiation matrix on ``nodes`` (rows sum to zero)."""
    nodes = np.asarray(nodes, dtype=float)
    w = barycentric_weights(nodes)
    diff = np.subtract.outer(nodes, nodes)
    np.fill_diagonal(diff, 1.0)
    matrix = (w[None, :] / w[:, None]) / diff
    np.fill_diagonal(matrix, 0.0)
    np.fill_diagonal(matrix, -matrix.sum(axis=1))
    return matrix


@lru_cache(maxsize=None)
def _cached_grid(n: int) -> CollocationGrid:
    points, weights = radau_points_weights(n)
    augmented = np.append(points, 1.0)
    diff_matrix = differentiation_matrix(augmented)[:n, :]
    return CollocationGrid(
        n=n,
        points=_frozen(points),
        augmented_points=_frozen(augmented),
        weights=_frozen(weights),
        diff_matrix=_frozen(diff_matrix),
    )


def make_grid(n: int) -> CollocationGrid:
    """
    Return the LGR collocation grid with ``n`` points.

    Grids are cached and read-only, so the same object is shared by every
    mesh interval with the same collocation count.

    Raises:
        GridError: If ``n`` is not a positive integer.
    """
    if isinstance(n, bool) or not isinstance(n, (int, np.integer)) or n < 1:
        raise GridError(f"Invalid grid size {n!r}: need a positive integer number of collocation points")
    return _cached_grid(int(n))


def evaluate(interp: Interpolant, queries) -> np.ndarray:
    """Evaluate ``interp`` at each query; returns (components, len(queries))."""
    queries = np.atleast_1d(np.asarray(queries, dtype=float))
    diff = queries[:, None] - interp.nodes[None, :]
    exact = np.abs(diff) <= NODE_TOLERANCE
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = interp.barycentric_weights[None, :] / diff
        result = (ratio @ interp.values.T) / ratio.sum(axis=1)[:, None]
    rows, cols = np.nonzero(exact)
    result[rows] = interp.values.T[cols]
    return result.T


def interpolate(interp: Interpolant, query: float) -> np.ndarray:
    """Value of the interpolating polynomial at a single ``query`` (vector)."""
    return evaluate(interp, [query])[:, 0]


def derivative(interp: Interpolant, queries) -> np.ndarray:
    """Derivative of the interpolating polynomial at each query; (components, len(queries))."""
    queries = np.atleast_1d(np.asarray(queries, dtype=float))
    nodes, w, values = interp.nodes, interp.barycentric_weights, interp.values
    out = np.empty((values.shape[0], queries.size))
    if nodes.size == 1:
        out[:] = 0.0
        return out

    diff = queries[:, None] - nodes[None, :]
    exact = np.abs(diff) <= NODE_TOLERANCE
    on_node = exact.any(axis=1)

    off = ~on_node
    if off.any():
        d = diff[off]
        ratio = w[None, :] / d
        p = (ratio @ values.T) / ratio.sum(axis=1)[:, None]
        # sum_j r_j (p - f_j) / (x - x_j) over sum_j r_j
        spread = p[:, :, None] - values[None, :, :]
        numer = np.einsum("qj,qcj->qc", ratio / d, spread)
        out[:, off] = (numer / ratio.sum(axis=1)[:, None]).T

    for q in np.flatnonzero(on_node):
        i = int(np.flatnonzero(exact[q])[0])
        others = np.arange(nodes.size) != i
        coeff = (w[others] / w[i]) / (nodes[i] - nodes[others])
        out[:, q] = (values[:, others] - values[:, [i]]) @ coeff
    return out


def differentiate(grid: CollocationGrid, nodal_values) -> np.ndarray:
    """
    Apply the grid's differentiation matrix to values on its augmented points.

    Parameters:
        grid (CollocationGrid): Grid whose ``diff_matrix`` is used.
        nodal_values: Array of shape (n + 1,) or (components, n + 1).

    Returns:
        np.ndarray: Derivatives at the n collocation points, shaped (n,) or
            (components, n) to match the input.

    Raises:
        GridError: If the number of columns is not n + 1.
    """
    values = np.asarray(nodal_values, dtype=float)
    if values.shape[-1] != grid.n + 1:
        raise GridError(f"Expected {grid.n + 1} nodal values per component, got {values.shape[-1]}")
    return values @ grid.diff_matrix.T
