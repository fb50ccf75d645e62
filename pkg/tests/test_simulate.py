"""
Tests for radau_refine.simulate module
"""

import unittest
from unittest.mock import PropertyMock, patch

import numpy as np
from scipy.integrate import DOP853, RK45

from radau_refine import Direction, IntegratorMethod, SimulationStatus
from radau_refine.basis import make_grid
from radau_refine.benchmarks import hyper_sensitive
from radau_refine.problem import Mesh, OcpDefinition
from radau_refine.simulate import (
    IntegratorSpec,
    control_interpolant,
    integrate,
    simulate_ivp,
    simulate_merged_ivp,
    simulate_merged_tvp,
    simulate_tvp,
)
from radau_refine.transcription import CollocationSolution


def linear_problem(rate):
    """x' = rate * x"""
    return OcpDefinition(n_x=1, n_u=0, dynamics=lambda x, u, tau: rate * np.asarray(x))


def control_problem():
    """x' = u"""
    return OcpDefinition(n_x=1, n_u=1, dynamics=lambda x, u, tau: np.asarray(u, dtype=float))


def single_interval(n, state, control=None, tf=1.0):
    """Solution on one interval with the given state and control profiles at the support points"""
    mesh = Mesh((-1.0, 1.0), (n,))
    grid = make_grid(n)
    states = np.atleast_2d(state(grid.augmented_points))
    controls = np.atleast_2d(control(grid.points)) if control else np.zeros((0, n))
    return CollocationSolution(mesh, (states,), (controls,), 0.0, tf)


def two_intervals(value_at_tau):
    """Solution on mesh {-1, 0, 1} with two points per interval and t in [0, 2]"""
    mesh = Mesh((-1.0, 0.0, 1.0), (2, 2))
    grid = make_grid(2)
    states, controls = [], []
    for k in range(2):
        left, right = mesh.interval(k)
        taus = left + 0.5 * (grid.augmented_points + 1.0) * (right - left)
        states.append(np.atleast_2d(value_at_tau(taus)))
        controls.append(np.ones((1, 2)))
    return CollocationSolution(mesh, tuple(states), tuple(controls), 0.0, 2.0)


class TestIntegratorSpec(unittest.TestCase):
    """Test integrator settings"""

    def test_methods(self):
        """Test method names map onto scipy integrators"""
        self.assertIs(IntegratorSpec().solver_class, RK45)
        spec = IntegratorSpec(method="v98")
        self.assertIs(spec.method, IntegratorMethod.V98)
        self.assertIs(spec.solver_class, DOP853)

    def test_invalid(self):
        """Test bad tolerances and step limits are rejected"""
        with self.assertRaises(ValueError):
            IntegratorSpec(tolerance=0.0)
        with self.assertRaises(ValueError):
            IntegratorSpec(max_steps=0)
        with self.assertRaises(ValueError):
            IntegratorSpec(method="euler")

    def test_absolute_tolerance(self):
        """Test norm control scales by the state norm"""
        spec = IntegratorSpec(tolerance=1e-6)
        self.assertEqual(spec.absolute_tolerance(np.array([0.5])), 1e-6)
        self.assertAlmostEqual(spec.absolute_tolerance(np.array([-20.0, 3.0])), 2e-5)
        self.assertEqual(IntegratorSpec(tolerance=1e-6, norm_control=False).absolute_tolerance(np.array([20.0])), 1e-6)


def fixed_step_error(solver_class, h):
    """Global error at t = 1 of y' = -y, y(0) = 1 taken with constant steps h"""
    # loose tolerances accept every step; max_step keeps it at h
    solver = solver_class(lambda t, y: -y, 0.0, [1.0], 1.0, first_step=h, max_step=h, rtol=1e3, atol=1e3)
    while solver.status == "running":
        solver.step()
    return abs(solver.y[0] - np.exp(-1.0))


class RecordingRK45(RK45):
    """RK45 that records the absolute tolerance used by each step"""

    tolerances = []

    def _step_impl(self):
        RecordingRK45.tolerances.append(self.atol)
        return super()._step_impl()


class TestIntegratorOrder(unittest.TestCase):
    """Test observed convergence orders and running norm control"""

    def test_dp54_order(self):
        """Test halving h divides the dp54 error by about 2^5"""
        solver_class = IntegratorSpec(method="dp54").solver_class
        order = np.log2(fixed_step_error(solver_class, 0.1) / fixed_step_error(solver_class, 0.05))
        self.assertGreaterEqual(order, 2.5)
        self.assertLessEqual(order, 10.0)

    def test_v98_order(self):
        """Test the v98 error falls with a high order under step halving"""
        solver_class = IntegratorSpec(method="v98").solver_class
        order = np.log2(fixed_step_error(solver_class, 0.25) / fixed_step_error(solver_class, 0.125))
        self.assertGreaterEqual(order, 4.5)
        self.assertLessEqual(order, 18.0)

    def test_norm_control_follows_state(self):
        """Test the absolute tolerance grows with the state during x' = x"""
        RecordingRK45.tolerances = []
        with patch.object(IntegratorSpec, "solver_class", new_callable=PropertyMock, return_value=RecordingRK45):
            trajectory = integrate(lambda t, y: y, [1.0], 0.0, 5.0, IntegratorSpec(tolerance=1e-6))
        self.assertTrue(trajectory.ok)
        self.assertEqual(RecordingRK45.tolerances[0], 1e-6)
        self.assertGreater(RecordingRK45.tolerances[-1], 20e-6)
        self.assertTrue(np.all(np.diff(RecordingRK45.tolerances) >= 0))
        self.assertAlmostEqual(trajectory.states[0, -1], np.exp(5.0), delta=1e-4 * np.exp(5.0))

    def test_fixed_tolerance_without_norm_control(self):
        """Test the absolute tolerance stays put when norm control is off"""
        RecordingRK45.tolerances = []
        spec = IntegratorSpec(tolerance=1e-6, norm_control=False)
        with patch.object(IntegratorSpec, "solver_class", new_callable=PropertyMock, return_value=RecordingRK45):
            integrate(lambda t, y: y, [1.0], 0.0, 5.0, spec)
        self.assertEqual(set(np.atleast_1d(RecordingRK45.tolerances).tolist()), {1e-6})


class TestIntegrate(unittest.TestCase):
    """Test the raw step loop"""

    def test_accuracy(self):
        """Test both methods reach exp(-2) on x' = -x over [-1, 1]"""
        for method in IntegratorMethod:
            spec = IntegratorSpec(method=method, tolerance=1e-10)
            trajectory = integrate(lambda t, y: -y, [1.0], -1.0, 1.0, spec)
            self.assertTrue(trajectory.ok)
            self.assertEqual(trajectory.points[-1], 1.0)
            self.assertAlmostEqual(trajectory.states[0, -1], np.exp(-2.0), delta=1e-8, msg=method.value)

    def test_reversible(self):
        """Test backward integration undoes forward integration"""
        spec = IntegratorSpec(tolerance=1e-10)
        forward = integrate(lambda t, y: -y, [1.0], -1.0, 1.0, spec)
        backward = integrate(lambda t, y: -y, forward.states[:, -1], 1.0, -1.0, spec)
        self.assertIs(backward.direction, Direction.BACKWARD)
        self.assertAlmostEqual(backward.states[0, -1], 1.0, delta=1e-7)

    def test_dense_outputs_ordered(self):
        """Test requested points are included and ordered along the direction"""
        outputs = np.array([0.5, -0.5, 0.0, 3.0])
        trajectory = integrate(lambda t, y: np.ones_like(y), [0.0], 1.0, -1.0, IntegratorSpec(), outputs=outputs)
        for p in (0.5, -0.5, 0.0):
            self.assertIn(p, trajectory.points)
        self.assertNotIn(3.0, trajectory.points)
        self.assertTrue(np.all(np.diff(trajectory.points) < 0))
        np.testing.assert_allclose(trajectory.states[0], trajectory.points - 1.0, atol=1e-10)

    def test_step_limit(self):
        """Test running out of steps fails"""
        trajectory = integrate(lambda t, y: -y, [1.0], 0.0, 100.0, IntegratorSpec(max_steps=1))
        self.assertIs(trajectory.status, SimulationStatus.FAILED)
        self.assertIn("exceeded", trajectory.message)
        self.assertIsNotNone(trajectory.failure_location)

    def test_blowup(self):
        """Test finite-time blowup of x' = x^2 is detected"""
        trajectory = integrate(lambda t, y: y**2, [1.0], 0.0, 2.0, IntegratorSpec())
        self.assertFalse(trajectory.ok)
        self.assertLess(trajectory.failure_location, 1.0 + 1e-6)


class TestIntervalSimulation(unittest.TestCase):
    """Test single interval IVP and TVP simulation"""

    def test_forward_decay(self):
        """Test x' = -x on t in [0, 1] ends at exp(-1)"""
        solution = single_interval(3, lambda z: np.exp(-(z + 1.0) / 2.0))
        trajectory = simulate_ivp(linear_problem(-1.0), solution, 0, IntegratorSpec(tolerance=1e-10))
        self.assertIs(trajectory.direction, Direction.FORWARD)
        self.assertEqual(trajectory.points[0], -1.0)
        self.assertAlmostEqual(trajectory.states[0, -1], np.exp(-1.0), delta=1e-8)
        for point in make_grid(3).augmented_points:
            self.assertIn(point, trajectory.points)

    def test_backward_growth(self):
        """Test x' = x from x(1) = e backwards gives 1 at t = 0"""
        solution = single_interval(3, lambda z: np.exp((z + 1.0) / 2.0))
        trajectory = simulate_tvp(linear_problem(1.0), solution, 0, IntegratorSpec(tolerance=1e-10))
        self.assertIs(trajectory.direction, Direction.BACKWARD)
        self.assertEqual(trajectory.points[0], 1.0)
        self.assertEqual(trajectory.points[-1], -1.0)
        self.assertAlmostEqual(trajectory.states[0, -1], 1.0, delta=1e-8)

    def test_control_extrapolation(self):
        """Test the control polynomial is extrapolated past the last collocation point"""
        solution = single_interval(2, lambda z: np.zeros_like(z), lambda z: 0.75 * (z + 1.0), tf=2.0)
        self.assertAlmostEqual(control_interpolant(solution, 0)(1.0)[0, 0], 1.5, places=13)
        trajectory = simulate_ivp(control_problem(), solution, 0, IntegratorSpec(tolerance=1e-10))
        self.assertAlmostEqual(trajectory.states[0, -1], 1.5, delta=1e-8)

    def test_hyper_sensitive_backward_fails(self):
        """Test the unstable backward run fails while the forward run succeeds"""
        mesh = Mesh.uniform(10, 2)
        solution = CollocationSolution(
            mesh,
            tuple(np.ones((1, 3)) for _ in range(10)),
            tuple(np.zeros((1, 2)) for _ in range(10)),
            0.0,
            10000.0,
        )
        ocp = hyper_sensitive()
        self.assertTrue(simulate_ivp(ocp, solution, 0, IntegratorSpec()).ok)
        backward = simulate_tvp(ocp, solution, 0, IntegratorSpec())
        self.assertIs(backward.status, SimulationStatus.FAILED)
        self.assertEqual(backward.interval, 0)


class TestMergedSimulation(unittest.TestCase):
    """Test simulations across a pair of intervals"""

    def test_merged_forward(self):
        """Test x' = 1 from interval 0 runs to xi(+1) = 3"""
        solution = two_intervals(lambda tau: tau + 1.0)
        trajectory = simulate_merged_ivp(control_problem(), solution, 0, IntegratorSpec(tolerance=1e-10))
        self.assertTrue(trajectory.merged)
        self.assertAlmostEqual(trajectory.points[-1], 3.0, places=12)
        self.assertAlmostEqual(trajectory.states[0, -1], 2.0, delta=1e-8)
        index = int(np.argmin(np.abs(trajectory.points - 7.0 / 3.0)))
        self.assertAlmostEqual(trajectory.points[index], 7.0 / 3.0, places=12)
        self.assertAlmostEqual(trajectory.states[0, index], 5.0 / 3.0, delta=1e-8)

    def test_merged_backward(self):
        """Test x' = 1 from the end of interval 1 runs back to chi(-1) = -3"""
        solution = two_intervals(lambda tau: tau + 1.0)
        trajectory = simulate_merged_tvp(control_problem(), solution, 1, IntegratorSpec(tolerance=1e-10))
        self.assertEqual(trajectory.interval, 1)
        self.assertAlmostEqual(trajectory.points[-1], -3.0, places=12)
        self.assertAlmostEqual(trajectory.states[0, -1], 0.0, delta=1e-8)

    def test_no_neighbour(self):
        """Test the last interval cannot be merged forward"""
        solution = two_intervals(lambda tau: tau + 1.0)
        with self.assertRaises(ValueError):
            simulate_merged_ivp(control_problem(), solution, 1, IntegratorSpec())
        with self.assertRaises(ValueError):
            simulate_merged_tvp(control_problem(), solution, 0, IntegratorSpec())


if __name__ == "__main__":
    unittest.main()
