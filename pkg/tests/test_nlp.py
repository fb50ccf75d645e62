"""
Tests for radau_refine.nlp module
"""

import unittest
from unittest.mock import Mock, patch

import numpy as np
import scipy.sparse as sp

from radau_refine import SolveStatus
from radau_refine.nlp import (
    IpoptSolver,
    NumericFailure,
    SlsqpSolver,
    SolveOutcome,
    SolverOptions,
    TrustConstrSolver,
    constraint_violation,
    cyipopt,
    default_solver,
    diagnose,
    fd_gradient,
    fd_jacobian,
    group_columns,
    kkt_residual,
    solve,
    undeclared_nonzeros,
)
from radau_refine.transcription import NlpProblem


def make_nlp(objective, constraints, n, lower=(), upper=(), var_lower=None, var_upper=None, pattern=None, blocks=()):
    """Small NlpProblem from plain callables"""
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    if pattern is None:
        pattern = np.ones((lower.size, n), dtype=bool)
    return NlpProblem(
        size=n,
        objective=objective,
        constraints=lambda z: np.asarray(constraints(z), dtype=float),
        constraint_lower=lower,
        constraint_upper=upper,
        variable_lower=np.full(n, -np.inf) if var_lower is None else np.asarray(var_lower, dtype=float),
        variable_upper=np.full(n, np.inf) if var_upper is None else np.asarray(var_upper, dtype=float),
        sparsity=sp.csr_matrix(np.asarray(pattern, dtype=bool)),
        row_blocks=blocks,
    )


def pinned_problem():
    """min (x - 1)^2 + (y - 2)^2 s.t. x + y >= 0 with y fixed at 0.5"""
    return make_nlp(
        lambda z: (z[0] - 1) ** 2 + (z[1] - 2) ** 2,
        lambda z: [z[0] + z[1]],
        2,
        lower=[0.0],
        upper=[np.inf],
        var_lower=[-np.inf, 0.5],
        var_upper=[np.inf, 0.5],
    )


class TestSolverOptions(unittest.TestCase):
    """Test SolverOptions validation"""

    def test_defaults(self):
        """Test default tolerances"""
        opts = SolverOptions()
        self.assertEqual(opts.kkt_tolerance, 1e-8)
        self.assertEqual(opts.feasibility_tolerance, 1e-8)

    def test_invalid(self):
        """Test non-positive values are rejected"""
        with self.assertRaises(ValueError):
            SolverOptions(kkt_tolerance=0.0)
        with self.assertRaises(ValueError):
            SolverOptions(feasibility_tolerance=-1.0)
        with self.assertRaises(ValueError):
            SolverOptions(max_iterations=0)
        with self.assertRaises(ValueError):
            SolverOptions(finite_difference_step=0.0)


class TestSolve(unittest.TestCase):
    """Test the built-in SLSQP solver"""

    def test_active_bound(self):
        """Test min x^2 s.t. x >= 1"""
        nlp = make_nlp(lambda z: z[0] ** 2, lambda z: [z[0]], 1, lower=[1.0], upper=[np.inf])
        outcome = solve(nlp, [3.0])
        self.assertEqual(outcome.status, SolveStatus.OPTIMAL)
        self.assertAlmostEqual(outcome.z_star[0], 1.0, places=6)
        self.assertAlmostEqual(outcome.objective, 1.0, places=5)

    def test_rosenbrock(self):
        """Test the unconstrained Rosenbrock minimiser from (-1.2, 1)"""
        nlp = make_nlp(lambda z: (1 - z[0]) ** 2 + 100 * (z[1] - z[0] ** 2) ** 2, lambda z: [], 2)
        outcome = solve(nlp, [-1.2, 1.0], SolverOptions(kkt_tolerance=1e-6, max_iterations=1000))
        self.assertEqual(outcome.status, SolveStatus.OPTIMAL)
        self.assertLessEqual(outcome.kkt_residual, 1e-6)
        np.testing.assert_allclose(outcome.z_star, [1.0, 1.0], atol=5e-3)

    def test_equality_constraint(self):
        """Test min x^2 + y^2 s.t. x + y = 1"""
        nlp = make_nlp(lambda z: z @ z, lambda z: [z[0] + z[1]], 2, lower=[1.0], upper=[1.0])
        outcome = solve(nlp, [2.0, -3.0])
        self.assertEqual(outcome.status, SolveStatus.OPTIMAL)
        np.testing.assert_allclose(outcome.z_star, [0.5, 0.5], atol=1e-6)
        self.assertLessEqual(outcome.constraint_violation, 1e-8)
        self.assertLessEqual(outcome.kkt_residual, 1e-8)
        # stationarity of x^2 + y^2 on x + y = 1 means x = y
        self.assertLessEqual(abs(outcome.z_star[0] - outcome.z_star[1]), 1e-8)
        self.assertGreater(outcome.iteration_count, 0)

    def test_guess_clipped_to_bounds(self):
        """Test a guess outside the box is clipped before solving"""
        nlp = make_nlp(lambda z: (z[0] - 5.0) ** 2, lambda z: [], 1, var_lower=[0.0], var_upper=[2.0])
        outcome = solve(nlp, [10.0])
        self.assertAlmostEqual(outcome.z_star[0], 2.0, places=6)

    def test_non_finite_row_is_named(self):
        """Test a NaN constraint row gives numeric_failure naming the row"""
        nlp = make_nlp(
            lambda z: z[0] ** 2,
            lambda z: [z[0], np.nan],
            1,
            lower=[-1.0, -1.0],
            upper=[1.0, 1.0],
            blocks=(("path", 0, 2),),
        )
        outcome = solve(nlp, [0.5])
        self.assertEqual(outcome.status, SolveStatus.NUMERIC_FAILURE)
        self.assertIn("path row 1", outcome.message)
        self.assertFalse(outcome.ok)

    def test_infeasible(self):
        """Test contradictory constraints are not reported optimal"""
        nlp = make_nlp(lambda z: z[0] ** 2, lambda z: [z[0], z[0]], 1, lower=[1.0, -np.inf], upper=[np.inf, -1.0])
        outcome = solve(nlp, [0.0])
        self.assertNotEqual(outcome.status, SolveStatus.OPTIMAL)

    def test_pinned_variable(self):
        """Test a variable with equal bounds keeps its value and the rest is optimal"""
        outcome = solve(pinned_problem(), [0.0, 0.5])
        self.assertEqual(outcome.status, SolveStatus.OPTIMAL)
        np.testing.assert_allclose(outcome.z_star, [1.0, 0.5], atol=1e-6)

    def test_merit_decreases_on_bounded_quadratic(self):
        """Test the merit never rises across accepted iterates"""
        boxed = make_nlp(lambda z: (z[0] - 1) ** 2 + 10 * (z[1] - 2) ** 2, lambda z: [], 2, var_upper=[0.5, 5.0])
        problems = (
            (boxed, [-3.0, 4.0]),
            (make_nlp(lambda z: z[0] ** 2, lambda z: [z[0]], 1, lower=[1.0], upper=[np.inf]), [3.0]),
        )
        for nlp, guess in problems:
            outcome = solve(nlp, guess)
            self.assertEqual(outcome.status, SolveStatus.OPTIMAL)
            merits = np.asarray(outcome.merit_history)
            self.assertGreater(merits.size, 1)
            slack = 1e-12 * (1.0 + np.abs(merits[:-1]))
            self.assertTrue(np.all(np.diff(merits) <= slack), msg=f"merits {merits}")

    def test_pluggable_solver(self):
        """Test solve delegates to a supplied solver"""
        nlp = make_nlp(lambda z: 0.0, lambda z: [], 1)
        expected = SolveOutcome(np.zeros(1), 0.0, SolveStatus.OPTIMAL, 0.0, 0.0, 0)
        solver = Mock()
        solver.solve.return_value = expected
        self.assertIs(solve(nlp, [0.0], solver=solver), expected)
        solver.solve.assert_called_once()


class TestFiniteDifferences(unittest.TestCase):
    """Test finite-difference derivatives and column grouping"""

    def test_linear_jacobian_exact(self):
        """Test an affine map gives its matrix"""
        matrix = np.array([[1.0, 0.0, 2.0], [0.0, -3.0, 0.0], [4.0, 5.0, 0.0]])
        nlp = make_nlp(
            lambda z: 0.0, lambda z: matrix @ z + 1.0, 3, lower=np.zeros(3), upper=np.zeros(3), pattern=matrix != 0
        )
        jacobian = fd_jacobian(nlp, np.array([0.3, -1.0, 2.0]))
        np.testing.assert_allclose(jacobian.toarray(), matrix, atol=1e-10)

    def test_quadratic_entry(self):
        """Test d(z^2)/dz at 3 is 6"""
        nlp = make_nlp(lambda z: 0.0, lambda z: [z[0] ** 2], 1, lower=[0.0], upper=[0.0])
        jacobian = fd_jacobian(nlp, np.array([3.0]), step=1e-4)
        self.assertAlmostEqual(jacobian[0, 0], 6.0, delta=1e-7)

    def test_one_sided_at_bound(self):
        """Test a variable at its upper bound is only perturbed downwards"""
        seen = []

        def constraints(z):
            seen.append(z[0])
            return [z[0] ** 2]

        nlp = make_nlp(lambda z: 0.0, constraints, 1, lower=[0.0], upper=[0.0], var_upper=[3.0])
        jacobian = fd_jacobian(nlp, np.array([3.0]), step=1e-4)
        self.assertLessEqual(max(seen), 3.0)
        self.assertAlmostEqual(jacobian[0, 0], 6.0, delta=1e-3)

    def test_gradient(self):
        """Test the objective gradient of a quadratic"""
        nlp = make_nlp(lambda z: z[0] ** 2 + 3 * z[1], lambda z: [], 2)
        np.testing.assert_allclose(fd_gradient(nlp, np.array([2.0, 1.0])), [4.0, 3.0], atol=1e-6)

    def test_gradient_non_finite(self):
        """Test a non-finite objective raises NumericFailure"""
        nlp = make_nlp(lambda z: np.log(z[0]), lambda z: [], 1)
        with self.assertRaises(NumericFailure):
            fd_gradient(nlp, np.array([-1.0]))

    def test_group_columns(self):
        """Test grouping keeps structurally orthogonal columns together"""
        diagonal = sp.identity(5, format="csr", dtype=bool)
        self.assertEqual(len(group_columns(diagonal)), 1)
        dense_row = np.ones((1, 4), dtype=bool)
        self.assertEqual(len(group_columns(dense_row)), 4)
        banded = sp.diags([1, 1, 1], [-1, 0, 1], shape=(6, 6), dtype=bool)
        groups = group_columns(banded)
        csc = sp.csc_matrix(banded)
        for group in groups:
            rows = np.concatenate([csc.indices[csc.indptr[c] : csc.indptr[c + 1]] for c in group])
            self.assertEqual(rows.size, np.unique(rows).size)
        self.assertEqual(sorted(np.concatenate(groups).tolist()), list(range(6)))

    def test_undeclared_nonzero_detected(self):
        """Test a falsely declared zero is reported"""
        pattern = np.array([[True, False], [False, True]])
        nlp = make_nlp(lambda z: 0.0, lambda z: [z[0] + z[1], z[1]], 2, lower=[0, 0], upper=[0, 0], pattern=pattern)
        self.assertEqual(undeclared_nonzeros(nlp, np.zeros(2)), [(0, 1)])

    def test_pinned_variable_derivatives(self):
        """Test a variable with equal bounds gets an empty column and a zero gradient"""
        nlp = pinned_problem()
        z = np.array([0.3, 0.5])
        jacobian = fd_jacobian(nlp, z).toarray()
        self.assertFalse(np.isnan(jacobian).any())
        self.assertAlmostEqual(jacobian[0, 0], 1.0, delta=1e-8)
        self.assertEqual(jacobian[0, 1], 0.0)
        gradient = fd_gradient(nlp, z)
        self.assertAlmostEqual(gradient[0], -1.4, delta=1e-8)
        self.assertEqual(gradient[1], 0.0)

    def test_constraint_violation(self):
        """Test the largest bound excess"""
        nlp = make_nlp(lambda z: 0.0, lambda z: [], 1, lower=[0.0, -np.inf], upper=[1.0, 2.0])
        self.assertEqual(constraint_violation(nlp, np.array([-0.5, 2.25])), 0.5)
        self.assertEqual(constraint_violation(nlp, np.array([0.5, 0.0])), 0.0)


def stationarity(nlp, z):
    z = np.asarray(z, dtype=float)
    return kkt_residual(nlp, z, fd_gradient(nlp, z), fd_jacobian(nlp, z))


class TestOptimality(unittest.TestCase):
    """Test the KKT residual and the final status diagnosis"""

    def test_kkt_lower_bound_multiplier_sign(self):
        """Test min x s.t. x >= 1 is stationary at 1 and min -x is not"""
        minimise = make_nlp(lambda z: z[0], lambda z: [z[0]], 1, lower=[1.0], upper=[np.inf])
        maximise = make_nlp(lambda z: -z[0], lambda z: [z[0]], 1, lower=[1.0], upper=[np.inf])
        self.assertAlmostEqual(stationarity(minimise, [1.0]), 0.0, delta=1e-8)
        self.assertAlmostEqual(stationarity(maximise, [1.0]), 1.0, delta=1e-6)

    def test_kkt_upper_variable_bound(self):
        """Test a variable held at its upper bound absorbs a negative gradient"""
        nlp = make_nlp(lambda z: (z[0] - 5.0) ** 2, lambda z: [], 1, var_lower=[0.0], var_upper=[2.0])
        self.assertAlmostEqual(stationarity(nlp, [2.0]), 0.0, delta=1e-8)
        # interior point: no multiplier, the scaled gradient remains
        self.assertAlmostEqual(stationarity(nlp, [1.0]), 1.0, delta=1e-6)

    def test_kkt_unconstrained(self):
        """Test the residual is the gradient when no constraint is active"""
        nlp = make_nlp(lambda z: 0.25 * z @ z, lambda z: [], 2)
        self.assertAlmostEqual(stationarity(nlp, [1.0, -0.5]), 0.5, delta=1e-8)
        self.assertAlmostEqual(stationarity(nlp, [0.0, 0.0]), 0.0, delta=1e-10)

    def test_kkt_equality_needs_parallel_gradient(self):
        """Test a feasible point off the minimiser of x^2 + y^2 on x + y = 1 is not stationary"""
        nlp = make_nlp(lambda z: z @ z, lambda z: [z[0] + z[1]], 2, lower=[1.0], upper=[1.0])
        self.assertAlmostEqual(stationarity(nlp, [0.5, 0.5]), 0.0, delta=1e-8)
        self.assertGreater(stationarity(nlp, [0.6, 0.4]), 0.1)

    def test_diagnose(self):
        """Test each status reached from a final iterate"""
        opts = SolverOptions()
        nlp = make_nlp(lambda z: z[0] ** 2, lambda z: [z[0]], 1, lower=[-1.0], upper=[2.0])
        self.assertEqual(diagnose(nlp, np.array([0.0]), opts, hit_limit=False)[0], SolveStatus.OPTIMAL)
        self.assertEqual(diagnose(nlp, np.array([1.0]), opts, hit_limit=False)[0], SolveStatus.NUMERIC_FAILURE)
        self.assertEqual(diagnose(nlp, np.array([1.0]), opts, hit_limit=True)[0], SolveStatus.MAX_ITERATIONS)
        self.assertEqual(diagnose(nlp, np.array([3.0]), opts, hit_limit=False)[0], SolveStatus.INFEASIBLE)
        self.assertEqual(
            diagnose(nlp, np.array([1.0]), opts, hit_limit=False, infeasible=True)[0], SolveStatus.INFEASIBLE
        )

    def test_stalled_solver_is_not_optimal(self):
        """Test a solver stopping on a feasible non-stationary point is not reported optimal"""
        nlp = make_nlp(lambda z: z @ z, lambda z: [z[0] + z[1]], 2, lower=[1.0], upper=[1.0])
        outcome = solve(nlp, [2.0, -3.0], SolverOptions(max_iterations=1))
        self.assertNotEqual(outcome.status, SolveStatus.OPTIMAL)
        self.assertGreater(outcome.kkt_residual, SolverOptions().kkt_tolerance)


class TestSparseSolvers(unittest.TestCase):
    """Test the sparse solvers and solver selection"""

    def test_trust_constr_equality(self):
        """Test min x^2 + y^2 s.t. x + y = 1 with trust-constr"""
        nlp = make_nlp(lambda z: z @ z, lambda z: [z[0] + z[1]], 2, lower=[1.0], upper=[1.0])
        outcome = TrustConstrSolver().solve(nlp, [2.0, -3.0], SolverOptions(kkt_tolerance=1e-6))
        self.assertEqual(outcome.status, SolveStatus.OPTIMAL)
        np.testing.assert_allclose(outcome.z_star, [0.5, 0.5], atol=1e-5)
        self.assertGreater(len(outcome.merit_history), 1)

    def test_trust_constr_active_bound(self):
        """Test min x^2 s.t. x >= 1 with trust-constr"""
        nlp = make_nlp(lambda z: z[0] ** 2, lambda z: [z[0]], 1, lower=[1.0], upper=[np.inf])
        outcome = TrustConstrSolver().solve(nlp, [3.0], SolverOptions(kkt_tolerance=1e-6))
        self.assertEqual(outcome.status, SolveStatus.OPTIMAL)
        self.assertAlmostEqual(outcome.z_star[0], 1.0, delta=1e-5)

    def test_trust_constr_pinned_variable(self):
        """Test pinned variables are removed before trust-constr sees them"""
        outcome = TrustConstrSolver().solve(pinned_problem(), [0.0, 0.5], SolverOptions(kkt_tolerance=1e-6))
        self.assertEqual(outcome.status, SolveStatus.OPTIMAL)
        np.testing.assert_allclose(outcome.z_star, [1.0, 0.5], atol=1e-5)
        self.assertEqual(outcome.z_star[1], 0.5)

    def test_trust_constr_non_finite_row(self):
        """Test a NaN constraint row gives numeric_failure"""
        nlp = make_nlp(
            lambda z: z[0] ** 2, lambda z: [np.nan], 1, lower=[-1.0], upper=[1.0], blocks=(("path", 0, 1),)
        )
        outcome = TrustConstrSolver().solve(nlp, [0.5], SolverOptions())
        self.assertEqual(outcome.status, SolveStatus.NUMERIC_FAILURE)
        self.assertIn("path row 0", outcome.message)

    def test_default_solver_small(self):
        """Test small problems use SLSQP"""
        self.assertIsInstance(default_solver(make_nlp(lambda z: 0.0, lambda z: [], 200)), SlsqpSolver)

    def test_default_solver_large(self):
        """Test large problems use Ipopt when installed and trust-constr otherwise"""
        nlp = make_nlp(lambda z: 0.0, lambda z: [], 201)
        with patch("radau_refine.nlp.cyipopt", None):
            self.assertIsInstance(default_solver(nlp), TrustConstrSolver)
            with self.assertRaises(RuntimeError):
                IpoptSolver()
        with patch("radau_refine.nlp.cyipopt", Mock()):
            self.assertIsInstance(default_solver(nlp), IpoptSolver)

    @unittest.skipIf(cyipopt is None, "cyipopt not installed")
    def test_ipopt_equality(self):
        """Test min x^2 + y^2 s.t. x + y = 1 with Ipopt"""
        nlp = make_nlp(lambda z: z @ z, lambda z: [z[0] + z[1]], 2, lower=[1.0], upper=[1.0])
        outcome = IpoptSolver().solve(nlp, [2.0, -3.0], SolverOptions())
        self.assertEqual(outcome.status, SolveStatus.OPTIMAL)
        np.testing.assert_allclose(outcome.z_star, [0.5, 0.5], atol=1e-6)



if __name__ == "__main__":
    unittest.main()
