from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Protocol

import click
import numpy as np
import scipy.sparse as sp
from scipy.optimize import BFGS, Bounds, NonlinearConstraint, lsq_linear, minimize

from radau_refine import SolveStatus
from radau_refine.transcription import NlpProblem

try:
    import cyipopt
except ImportError:  # installed with the "ipopt" extra
    cyipopt = None

DEFAULT_STEP = np.finfo(float).eps ** (1.0 / 3.0)

# a bound or constraint row within this relative distance is treated as active
ACTIVE_TOLERANCE = 1e-6
# NLPs with more variables go to a sparse solver
DENSE_VARIABLE_LIMIT = 200
# multiplier fits with more matrix entries than this use an iterative least-squares solver
DENSE_MULTIPLIER_LIMIT = 4_000_000
# Ipopt treats bounds beyond this magnitude as infinite
IPOPT_INFINITY = 1e20

# scipy SLSQP exit modes
_SLSQP_INCOMPATIBLE = 4
_SLSQP_ITERATION_LIMIT = 9
# trust-constr and Ipopt iteration limit statuses
_TRUST_CONSTR_ITERATION_LIMIT = 0
_IPOPT_ITERATION_LIMIT = -1
_IPOPT_INFEASIBLE = 2

# SLSQP objective-change tolerances tried in turn until the KKT check passes
_SLSQP_POLISH_FACTORS = (1.0, 1e-4, 1e-8)

# _steps side codes
_CENTRAL, _FORWARD, _BACKWARD, _PINNED = 0, 1, -1, 2


class NumericFailure(ArithmeticError):
    """A callback produced a non-finite value; the message names the row."""


@dataclass(frozen=True)
class SolverOptions:
    kkt_tolerance: float = 1e-8
    feasibility_tolerance: float = 1e-8
    max_iterations: int = 1000
    finite_difference_step: float = DEFAULT_STEP
    verbose: int = 0

    def __post_init__(self):
        if not self.kkt_tolerance > 0:
            raise ValueError(f"kkt_tolerance must be positive, got {self.kkt_tolerance}")
        if not self.feasibility_tolerance > 0:
            raise ValueError(f"feasibility_tolerance must be positive, got {self.feasibility_tolerance}")
        if self.max_iterations < 1:
            raise ValueError(f"max_iterations must be at least 1, got {self.max_iterations}")
        if not self.finite_difference_step > 0:
            raise ValueError(f"finite_difference_step must be positive, got {self.finite_difference_step}")


@dataclass(frozen=True, eq=False)
class SolveOutcome:
    """
    Result of one NLP solve.

    ``kkt_residual`` is the stationarity error of the returned point (see
    :func:`kkt_residual`). ``merit_history`` holds the l1 merit
    ``f + sum(violation)`` of every accepted iterate, starting with the guess.
    """

    z_star: np.ndarray
    objective: float
    status: SolveStatus
    kkt_residual: float
    constraint_violation: float
    iteration_count: int
    message: str = ""
    merit_history: tuple[float, ...] = ()

    @property
    def ok(self) -> bool:
        return self.status is SolveStatus.OPTIMAL


class NlpSolver(Protocol):
    def solve(self, nlp: NlpProblem, guess: np.ndarray, opts: SolverOptions) -> SolveOutcome: ...


def _perturbation_sides(z, lower, upper, h) -> np.ndarray:
    """0 central, +1 forward only, -1 backward only, per variable."""
    sides = np.full(z.size, _CENTRAL, dtype=int)
    sides[z + h > upper] = _BACKWARD
    sides[z - h < lower] = _FORWARD
    return sides


def _steps(z: np.ndarray, lower: np.ndarray, upper: np.ndarray, step: float) -> tuple[np.ndarray, np.ndarray]:
    h = step * (1.0 + np.abs(z))
    sides = _perturbation_sides(z, lower, upper, h)
    # both sides blocked: shrink to the larger room
    squeezed = (z + h > upper) & (z - h < lower)
    if squeezed.any():
        room_up = upper[squeezed] - z[squeezed]
        room_down = z[squeezed] - lower[squeezed]
        sides[squeezed] = np.where(room_up >= room_down, _FORWARD, _BACKWARD)
        h[squeezed] = np.maximum(room_up, room_down)
    # a zero-width box pins the variable; it is never perturbed
    pinned = ~(upper > lower)
    sides[pinned] = _PINNED
    h[pinned] = 0.0
    return h, sides


def group_columns(pattern: sp.spmatrix) -> list[np.ndarray]:
    """
    Greedy partition of the columns of ``pattern`` into structurally
    orthogonal groups (no two columns in a group share a nonzero row).
    """
    csc = sp.csc_matrix(pattern, dtype=bool)
    n_rows, n_cols = csc.shape
    occupied: list[np.ndarray] = []
    members: list[list[int]] = []
    for col in range(n_cols):
        rows = csc.indices[csc.indptr[col] : csc.indptr[col + 1]]
        for taken, cols in zip(occupied, members):
            if not taken[rows].any():
                taken[rows] = True
                cols.append(col)
                break
        else:
            taken = np.zeros(n_rows, dtype=bool)
            taken[rows] = True
            occupied.append(taken)
            members.append([col])
    return [np.asarray(cols, dtype=int) for cols in members]


def _finite(values: np.ndarray, nlp: NlpProblem, what: str) -> np.ndarray:
    bad = np.flatnonzero(~np.isfinite(values))
    if bad.size:
        raise NumericFailure(f"Non-finite {what} in {nlp.describe_row(int(bad[0]))}")
    return values


def fd_jacobian(
    nlp: NlpProblem,
    z,
    step: float = DEFAULT_STEP,
    groups: Optional[list[np.ndarray]] = None,
    base: Optional[np.ndarray] = None,
) -> sp.csr_matrix:
    """
    Sparse finite-difference Jacobian of ``nlp.constraints`` at ``z``.

    Columns are perturbed together in structurally orthogonal groups; inside
    a group, variables with room on both sides use central differences and
    variables at a bound use a one-sided difference into the feasible box.
    Variables pinned by equal bounds get an empty column. Only entries in
    ``nlp.sparsity`` are returned.

    Raises:
        NumericFailure: If a perturbed evaluation is not finite.
    """
    z = np.asarray(z, dtype=float)
    pattern = sp.csc_matrix(nlp.sparsity, dtype=bool)
    if groups is None:
        groups = group_columns(pattern)
    if base is None:
        base = _finite(nlp.constraints(z), nlp, "constraint value")
    h, sides = _steps(z, nlp.variable_lower, nlp.variable_upper, step)

    rows_out, cols_out, data_out = [], [], []
    for group in groups:
        for side in (_CENTRAL, _FORWARD, _BACKWARD):
            cols = group[sides[group] == side]
            if cols.size == 0:
                continue
            delta = np.zeros_like(z)
            delta[cols] = h[cols]
            if side == _CENTRAL:
                diff = (nlp.constraints(z + delta) - nlp.constraints(z - delta)) / 2.0
            elif side == _FORWARD:
                diff = nlp.constraints(z + delta) - base
            else:
                diff = base - nlp.constraints(z - delta)
            _finite(diff, nlp, "constraint derivative")
            for col in cols:
                rows = pattern.indices[pattern.indptr[col] : pattern.indptr[col + 1]]
                rows_out.append(rows)
                cols_out.append(np.full(rows.size, col))
                data_out.append(diff[rows] / h[col])

    shape = (nlp.n_rows, nlp.size)
    if not rows_out:
        return sp.csr_matrix(shape)
    return sp.csr_matrix(
        (np.concatenate(data_out), (np.concatenate(rows_out), np.concatenate(cols_out))),
        shape=shape,
    )


def fd_gradient(nlp: NlpProblem, z, step: float = DEFAULT_STEP) -> np.ndarray:
    """Finite-difference gradient of ``nlp.objective``, one-sided at variable bounds and zero for pinned variables."""
    z = np.asarray(z, dtype=float)
    h, sides = _steps(z, nlp.variable_lower, nlp.variable_upper, step)
    base = nlp.objective(z)
    gradient = np.zeros(z.size)
    for i in np.flatnonzero(sides != _PINNED):
        up = z.copy()
        down = z.copy()
        up[i] += h[i]
        down[i] -= h[i]
        if sides[i] == _CENTRAL:
            gradient[i] = (nlp.objective(up) - nlp.objective(down)) / (2.0 * h[i])
        elif sides[i] == _FORWARD:
            gradient[i] = (nlp.objective(up) - base) / h[i]
        else:
            gradient[i] = (base - nlp.objective(down)) / h[i]
    if not np.all(np.isfinite(gradient)):
        bad = int(np.flatnonzero(~np.isfinite(gradient))[0])
        raise NumericFailure(f"Non-finite objective gradient at variable {bad}")
    return gradient


def undeclared_nonzeros(
    nlp: NlpProblem, z, step: float = DEFAULT_STEP, tolerance: float = 1e-8
) -> list[tuple[int, int]]:
    """
    Compare a dense column-by-column finite-difference Jacobian with the
    declared sparsity pattern and return every (row, column) that is nonzero
    but not declared.
    """
    z = np.asarray(z, dtype=float)
    h, _ = _steps(z, np.full(z.size, -np.inf), np.full(z.size, np.inf), step)
    dense = np.empty((nlp.n_rows, nlp.size))
    for col in range(nlp.size):
        up = z.copy()
        down = z.copy()
        up[col] += h[col]
        down[col] -= h[col]
        dense[:, col] = (nlp.constraints(up) - nlp.constraints(down)) / (2.0 * h[col])
    declared = sp.csr_matrix(nlp.sparsity, dtype=bool).toarray()
    scale = 1.0 + np.max(np.abs(dense), initial=0.0)
    rows, cols = np.nonzero((np.abs(dense) > tolerance * scale) & ~declared)
    return list(zip(rows.tolist(), cols.tolist()))


def constraint_violation(nlp: NlpProblem, values: np.ndarray) -> float:
    """Largest violation of the constraint row bounds."""
    if values.size == 0:
        return 0.0
    excess = np.maximum(nlp.constraint_lower - values, values - nlp.constraint_upper)
    return float(max(np.max(excess), 0.0))


def _near(values: np.ndarray, bound: np.ndarray) -> np.ndarray:
    finite = np.isfinite(bound)
    near = np.zeros(values.shape, dtype=bool)
    near[finite] = np.abs(values[finite] - bound[finite]) <= ACTIVE_TOLERANCE * (1.0 + np.abs(bound[finite]))
    return near


def _multiplier_bounds(lower, upper, values) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Active set and sign bounds of the multipliers for ``lower <= values <= upper``."""
    fixed = ~(upper > lower)
    at_lower = _near(values, lower)
    at_upper = _near(values, upper)
    active = fixed | at_lower | at_upper
    low = np.where(at_lower & ~at_upper & ~fixed, 0.0, -np.inf)
    high = np.where(at_upper & ~at_lower & ~fixed, 0.0, np.inf)
    return active, low[active], high[active]


def kkt_residual(nlp: NlpProblem, z, gradient: np.ndarray, jacobian: sp.spmatrix) -> float:
    """
    Stationarity error of ``z``: the smallest
    ``||grad f - J_A^T lam - mu||_inf / max(1, ||grad f||_inf)`` over
    multipliers ``lam`` of the equality and active constraint rows and ``mu``
    of the active variable bounds, each with the sign that makes it a valid
    KKT multiplier (nonnegative at a lower bound, nonpositive at an upper
    bound, free for equalities). The multipliers come from a bounded
    least-squares fit.
    """
    z = np.asarray(z, dtype=float)
    gradient = np.asarray(gradient, dtype=float)
    rows, row_low, row_high = _multiplier_bounds(nlp.constraint_lower, nlp.constraint_upper, nlp.constraints(z))
    variables, var_low, var_high = _multiplier_bounds(nlp.variable_lower, nlp.variable_upper, z)
    scale = max(1.0, float(np.max(np.abs(gradient), initial=0.0)))
    blocks = []
    if rows.any():
        blocks.append(sp.csr_matrix(jacobian)[np.flatnonzero(rows)].T)
    if variables.any():
        blocks.append(sp.identity(z.size, format="csr")[:, np.flatnonzero(variables)])
    if not blocks:
        return float(np.max(np.abs(gradient), initial=0.0)) / scale
    matrix = sp.hstack(blocks, format="csr")

    low = np.concatenate([row_low, var_low])
    high = np.concatenate([row_high, var_high])
    if matrix.shape[0] * matrix.shape[1] <= DENSE_MULTIPLIER_LIMIT:
        dense = matrix.toarray()
        fit = lsq_linear(dense, gradient, bounds=(low, high), method="bvls")
        residual = dense @ fit.x - gradient
    else:
        fit = lsq_linear(matrix, gradient, bounds=(low, high), method="trf", lsq_solver="lsmr", tol=1e-12)
        residual = matrix @ fit.x - gradient
    return float(np.max(np.abs(residual), initial=0.0)) / scale


def diagnose(nlp: NlpProblem, z_star: np.ndarray, opts: SolverOptions, hit_limit: bool, infeasible: bool = False):
    """
    Classify a final iterate: ``optimal`` needs both the KKT residual and the
    constraint violation within tolerance; otherwise the iteration limit, an
    infeasibility report or a remaining violation decide, and a feasible
    point that is not stationary is a numeric failure.

    Returns:
        tuple: (SolveStatus, kkt residual, constraint violation).
    """
    values = _finite(nlp.constraints(z_star), nlp, "constraint value")
    violation = constraint_violation(nlp, values)
    gradient = fd_gradient(nlp, z_star, opts.finite_difference_step)
    jacobian = fd_jacobian(nlp, z_star, opts.finite_difference_step, base=values)
    kkt = kkt_residual(nlp, z_star, gradient, jacobian)
    if violation <= opts.feasibility_tolerance and kkt <= opts.kkt_tolerance:
        status = SolveStatus.OPTIMAL
    elif hit_limit:
        status = SolveStatus.MAX_ITERATIONS
    elif infeasible or violation > opts.feasibility_tolerance:
        status = SolveStatus.INFEASIBLE
    else:
        status = SolveStatus.NUMERIC_FAILURE
    return status, kkt, violation


class _Evaluator:
    """Caches constraint values and Jacobian at the last point the solver asked for."""

    def __init__(self, nlp: NlpProblem, opts: SolverOptions, dense: bool = True):
        self.nlp = nlp
        self.opts = opts
        self.dense = dense
        self.groups = group_columns(nlp.sparsity)
        self._key: Optional[bytes] = None
        self._values: Optional[np.ndarray] = None
        self._jacobian = None

    def _load(self, z: np.ndarray) -> None:
        key = np.asarray(z, dtype=float).tobytes()
        if key != self._key:
            self._key = key
            self._values = _finite(self.nlp.constraints(z), self.nlp, "constraint value")
            self._jacobian = None

    def values(self, z: np.ndarray) -> np.ndarray:
        self._load(z)
        return self._values

    def jacobian(self, z: np.ndarray):
        self._load(z)
        if self._jacobian is None:
            jacobian = fd_jacobian(self.nlp, z, self.opts.finite_difference_step, self.groups, self._values)
            self._jacobian = jacobian.toarray() if self.dense else jacobian
        return self._jacobian

    def objective(self, z: np.ndarray) -> float:
        value = float(self.nlp.objective(z))
        if not math.isfinite(value):
            raise NumericFailure("Non-finite objective value")
        return value

    def gradient(self, z: np.ndarray) -> np.ndarray:
        return fd_gradient(self.nlp, z, self.opts.finite_difference_step)

    def merit(self, z: np.ndarray) -> float:
        values = self.values(z)
        lower, upper = self.nlp.constraint_lower, self.nlp.constraint_upper
        excess = np.maximum(np.maximum(lower - values, values - upper), 0.0)
        return self.objective(z) + float(np.sum(excess))


class _IterationLog:
    """Merit of every accepted iterate, echoed at verbosity 2."""

    def __init__(self, evaluator: _Evaluator, z0: np.ndarray, opts: SolverOptions):
        self.evaluator = evaluator
        self.opts = opts
        self.last = z0
        self.merits = [evaluator.merit(z0)]

    def __call__(self, z) -> None:
        z = np.array(z, dtype=float)
        step = float(np.linalg.norm(z - self.last))
        self.last = z
        self.merits.append(self.evaluator.merit(z))
        if self.opts.verbose >= 2:
            violation = constraint_violation(self.evaluator.nlp, self.evaluator.values(z))
            click.echo(
                f"  nlp iter {len(self.merits) - 1:4d}  merit {self.merits[-1]: .10e}  step {step:.3e}"
                f"  violation {violation:.3e}",
                err=True,
            )


def _failure(z: np.ndarray, error: NumericFailure, log: Optional[_IterationLog]) -> SolveOutcome:
    return SolveOutcome(
        z_star=z,
        objective=float("nan"),
        status=SolveStatus.NUMERIC_FAILURE,
        kkt_residual=float("inf"),
        constraint_violation=float("inf"),
        iteration_count=0 if log is None else len(log.merits) - 1,
        message=str(error),
        merit_history=() if log is None else tuple(log.merits),
    )


def _outcome(nlp, z_star, opts, log, iterations, message, hit_limit, infeasible=False) -> SolveOutcome:
    status, kkt, violation = diagnose(nlp, z_star, opts, hit_limit, infeasible)
    if status is SolveStatus.NUMERIC_FAILURE:
        message = f"{message} (stationarity {kkt:.3e} above tolerance)"
    if opts.verbose >= 2:
        click.echo(f"  nlp {status.value}: kkt {kkt:.3e}  violation {violation:.3e}", err=True)
    return SolveOutcome(
        z_star=z_star,
        objective=float(nlp.objective(z_star)),
        status=status,
        kkt_residual=kkt,
        constraint_violation=violation,
        iteration_count=int(iterations),
        message=message,
        merit_history=tuple(log.merits),
    )


class SlsqpSolver:
    """
    Dense solver: scipy's SLSQP (sequential quadratic programming with an l1
    merit line search, damped BFGS Hessian and dense QP subproblems) fed with
    sparse finite-difference derivatives.

    A run that stops on a small objective change but fails the KKT check is
    restarted from its last iterate with a tighter change tolerance.
    """

    def solve(self, nlp: NlpProblem, guess, opts: SolverOptions) -> SolveOutcome:
        z = np.clip(np.asarray(guess, dtype=float), nlp.variable_lower, nlp.variable_upper)
        evaluator = _Evaluator(nlp, opts)
        lower, upper = nlp.constraint_lower, nlp.constraint_upper
        equal = np.flatnonzero(lower == upper)
        above = np.flatnonzero((lower != upper) & np.isfinite(lower))
        below = np.flatnonzero((lower != upper) & np.isfinite(upper))

        constraints = []
        if equal.size:
            constraints.append(
                {
                    "type": "eq",
                    "fun": lambda z: evaluator.values(z)[equal] - lower[equal],
                    "jac": lambda z: evaluator.jacobian(z)[equal],
                }
            )
        if above.size or below.size:
            constraints.append(
                {
                    "type": "ineq",
                    "fun": lambda z: np.concatenate(
                        [evaluator.values(z)[above] - lower[above], upper[below] - evaluator.values(z)[below]]
                    ),
                    "jac": lambda z: np.vstack([evaluator.jacobian(z)[above], -evaluator.jacobian(z)[below]]),
                }
            )

        log = None
        iterations = 0
        try:
            log = _IterationLog(evaluator, z, opts)
            for factor in _SLSQP_POLISH_FACTORS:
                result = minimize(
                    evaluator.objective,
                    z,
                    jac=evaluator.gradient,
                    method="SLSQP",
                    bounds=Bounds(nlp.variable_lower, nlp.variable_upper),
                    constraints=constraints,
                    callback=log,
                    options={
                        "maxiter": max(opts.max_iterations - iterations, 1),
                        "ftol": max(opts.kkt_tolerance * factor, np.finfo(float).eps),
                        "disp": False,
                    },
                )
                iterations += int(result.nit)
                z = np.clip(result.x, nlp.variable_lower, nlp.variable_upper)
                hit_limit = result.status == _SLSQP_ITERATION_LIMIT or iterations >= opts.max_iterations
                outcome = _outcome(
                    nlp,
                    z,
                    opts,
                    log,
                    iterations,
                    str(result.message),
                    hit_limit,
                    infeasible=result.status == _SLSQP_INCOMPATIBLE,
                )
                if outcome.ok or hit_limit or result.status == _SLSQP_INCOMPATIBLE:
                    break
            return outcome
        except NumericFailure as error:
            return _failure(log.last if log is not None else z, error, log)


class _PinnedReduction:
    """Maps between the full decision vector and the variables not pinned by equal bounds."""

    def __init__(self, nlp: NlpProblem, z: np.ndarray):
        self.free = np.flatnonzero(nlp.variable_upper > nlp.variable_lower)
        self.template = np.array(z, dtype=float)

    def expand(self, x) -> np.ndarray:
        z = self.template.copy()
        z[self.free] = x
        return z

    def wrap(self, function: Callable) -> Callable:
        return lambda x: function(self.expand(x))


class TrustConstrSolver:
    """
    Sparse solver: scipy's trust-constr (trust-region interior point) on the
    sparse finite-difference Jacobian, with BFGS approximations of the
    objective and constraint Hessians.
    """

    def solve(self, nlp: NlpProblem, guess, opts: SolverOptions) -> SolveOutcome:
        z0 = np.clip(np.asarray(guess, dtype=float), nlp.variable_lower, nlp.variable_upper)
        evaluator = _Evaluator(nlp, opts, dense=False)
        reduced = _PinnedReduction(nlp, z0)
        free = reduced.free

        constraints = []
        if nlp.n_rows:
            constraints.append(
                NonlinearConstraint(
                    reduced.wrap(evaluator.values),
                    nlp.constraint_lower,
                    nlp.constraint_upper,
                    jac=lambda x: evaluator.jacobian(reduced.expand(x))[:, free],
                    hess=BFGS(),
                )
            )

        log = None
        try:
            log = _IterationLog(evaluator, z0, opts)

            def record(x, state) -> bool:
                log(reduced.expand(x))
                return False

            result = minimize(
                reduced.wrap(evaluator.objective),
                z0[free],
                jac=lambda x: evaluator.gradient(reduced.expand(x))[free],
                hess=BFGS(),
                method="trust-constr",
                bounds=Bounds(nlp.variable_lower[free], nlp.variable_upper[free]),
                constraints=constraints,
                callback=record,
                options={"maxiter": opts.max_iterations, "gtol": opts.kkt_tolerance, "verbose": 0},
            )
            z_star = np.clip(reduced.expand(result.x), nlp.variable_lower, nlp.variable_upper)
            hit_limit = result.status == _TRUST_CONSTR_ITERATION_LIMIT
            return _outcome(nlp, z_star, opts, log, result.nit, str(result.message), hit_limit)
        except NumericFailure as error:
            return _failure(log.last if log is not None else z0, error, log)


class _IpoptProblem:
    """cyipopt problem interface over an :class:`NlpProblem`."""

    def __init__(self, evaluator: _Evaluator, log: _IterationLog):
        self.evaluator = evaluator
        self.log = log
        pattern = sp.coo_matrix(evaluator.nlp.sparsity)
        self.rows = pattern.row.astype(int)
        self.cols = pattern.col.astype(int)
        self.iterations = 0

    def objective(self, z):
        return self.evaluator.objective(z)

    def gradient(self, z):
        return self.evaluator.gradient(z)

    def constraints(self, z):
        return self.evaluator.values(z)

    def jacobianstructure(self):
        return self.rows, self.cols

    def jacobian(self, z):
        return np.asarray(self.evaluator.jacobian(z)[self.rows, self.cols]).ravel()

    def intermediate(self, alg_mod, iter_count, obj_value, inf_pr, inf_du, mu, d_norm, *args):
        self.iterations = int(iter_count)
        if iter_count == 0:
            return True
        self.log.merits.append(float(obj_value) + float(inf_pr))
        if self.evaluator.opts.verbose >= 2:
            click.echo(
                f"  nlp iter {iter_count:4d}  objective {obj_value: .10e}  step {d_norm:.3e}"
                f"  violation {inf_pr:.3e}  dual {inf_du:.3e}",
                err=True,
            )
        return True


class IpoptSolver:
    """
    Sparse solver: Ipopt through cyipopt, with a limited-memory Hessian
    approximation and the sparse finite-difference Jacobian. Available when
    the ``ipopt`` extra is installed.
    """

    def __init__(self):
        if cyipopt is None:
            raise RuntimeError("IpoptSolver needs cyipopt: install radau-refine[ipopt]")

    def solve(self, nlp: NlpProblem, guess, opts: SolverOptions) -> SolveOutcome:
        z0 = np.clip(np.asarray(guess, dtype=float), nlp.variable_lower, nlp.variable_upper)
        evaluator = _Evaluator(nlp, opts, dense=False)
        log = None
        try:
            log = _IterationLog(evaluator, z0, opts)
            interface = _IpoptProblem(evaluator, log)
            problem = cyipopt.Problem(
                n=nlp.size,
                m=nlp.n_rows,
                problem_obj=interface,
                lb=np.clip(nlp.variable_lower, -IPOPT_INFINITY, IPOPT_INFINITY),
                ub=np.clip(nlp.variable_upper, -IPOPT_INFINITY, IPOPT_INFINITY),
                cl=np.clip(nlp.constraint_lower, -IPOPT_INFINITY, IPOPT_INFINITY),
                cu=np.clip(nlp.constraint_upper, -IPOPT_INFINITY, IPOPT_INFINITY),
            )
            problem.add_option("hessian_approximation", "limited-memory")
            problem.add_option("tol", opts.kkt_tolerance)
            problem.add_option("constr_viol_tol", opts.feasibility_tolerance)
            problem.add_option("max_iter", opts.max_iterations)
            problem.add_option("print_level", 0)
            problem.add_option("sb", "yes")
            z_star, info = problem.solve(z0)
            z_star = np.clip(np.asarray(z_star, dtype=float), nlp.variable_lower, nlp.variable_upper)
            status = int(info["status"])
            message = info["status_msg"]
            if isinstance(message, bytes):
                message = message.decode()
            return _outcome(
                nlp,
                z_star,
                opts,
                log,
                interface.iterations,
                str(message),
                hit_limit=status == _IPOPT_ITERATION_LIMIT,
                infeasible=status == _IPOPT_INFEASIBLE,
            )
        except NumericFailure as error:
            return _failure(log.last if log is not None else z0, error, log)


def default_solver(nlp: NlpProblem) -> NlpSolver:
    """SLSQP up to ``DENSE_VARIABLE_LIMIT`` variables; above it Ipopt when installed, else trust-constr."""
    if nlp.size <= DENSE_VARIABLE_LIMIT:
        return SlsqpSolver()
    if cyipopt is not None:
        return IpoptSolver()
    return TrustConstrSolver()


def solve(
    nlp: NlpProblem, guess, opts: Optional[SolverOptions] = None, solver: Optional[NlpSolver] = None
) -> SolveOutcome:
    """
    Solve ``nlp`` from ``guess`` (clipped into the variable bounds).

    Parameters:
        nlp (NlpProblem): Problem to solve.
        guess: Starting decision vector.
        opts (SolverOptions): Tolerances and limits; defaults when omitted.
        solver (NlpSolver): Any object with a conforming ``solve`` method;
            defaults to :func:`default_solver` for the problem size.

    Returns:
        SolveOutcome: Final iterate and diagnosis. ``optimal`` means the KKT
            residual and the constraint violation are both within tolerance.
            Non-finite callback values give ``SolveStatus.NUMERIC_FAILURE``
            with the offending row named in ``message``.
    """
    opts = opts or SolverOptions()
    return (solver or default_solver(nlp)).solve(nlp, guess, opts)
