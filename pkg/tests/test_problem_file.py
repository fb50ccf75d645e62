"""
Tests for radau_refine.problem_file module
"""

import json
import tempfile
import unittest
from pathlib import Path

import numpy as np

from radau_refine.problem_file import ProblemFileError, load_problem, parse_problem, row_bounds

DOUBLE_INTEGRATOR = {
    "name": "double_integrator",
    "states": ["x", "v"],
    "controls": ["u"],
    "dynamics": ["v", "u"],
    "lagrange": "u**2 / 2",
    "mayer": "tf",
    "initial_state": {"x": 0, "v": 0},
    "final_state": {"x": 1, "v": 0},
    "state_bounds": {"v": [-2, 2]},
    "control_bounds": {"u": [-10, 10]},
    "path": [{"expr": "x + v", "upper": 3}],
    "boundary": [{"expr": "x_f - x_0", "lower": 1, "upper": 1}],
    "t0": 0,
    "tf": [0.5, 5],
}


class TestParseProblem(unittest.TestCase):
    """Test building problems from documents"""

    def test_double_integrator(self):
        """Test dimensions, bounds, times and callbacks"""
        ocp = parse_problem(DOUBLE_INTEGRATOR)
        self.assertEqual(ocp.name, "double_integrator")
        self.assertEqual((ocp.n_x, ocp.n_u), (2, 1))
        self.assertEqual(ocp.state_names, ("x", "v"))
        np.testing.assert_array_equal(ocp.state_lower, [-np.inf, -2.0])
        np.testing.assert_array_equal(ocp.control_upper, [10.0])
        self.assertTrue(ocp.t0.is_fixed)
        self.assertEqual((ocp.tf.lower, ocp.tf.upper), (0.5, 5.0))

        x = np.array([[0.0, 1.0, 2.0], [3.0, 4.0, 5.0]])
        u = np.array([[2.0, -2.0, 0.0]])
        tau = np.array([-1.0, 0.0, 0.5])
        np.testing.assert_allclose(ocp.dynamics(x, u, tau), [[3.0, 4.0, 5.0], [2.0, -2.0, 0.0]])
        np.testing.assert_allclose(ocp.lagrange(x, u, tau), [2.0, 2.0, 0.0])
        np.testing.assert_allclose(ocp.path(x, u, tau), [[3.0, 5.0, 7.0]])
        self.assertEqual(ocp.mayer([0.0, 0.0], 0.0, [1.0, 0.0], 2.5), 2.5)
        np.testing.assert_allclose(ocp.boundary([0.5, 0.0], 0.0, [2.0, 0.0], 1.0), [1.5])

    def test_single_point_evaluation(self):
        """Test callbacks accept one point at a time"""
        ocp = parse_problem(DOUBLE_INTEGRATOR)
        np.testing.assert_allclose(ocp.dynamics(np.array([1.0, 2.0]), np.array([3.0]), 0.2), [2.0, 3.0])

    def test_constant_expression_broadcast(self):
        """Test an expression without variables fills every point"""
        ocp = parse_problem({"states": ["x"], "dynamics": ["1"]})
        value = ocp.dynamics(np.zeros((1, 4)), np.zeros((0, 4)), np.linspace(-1.0, 1.0, 4))
        np.testing.assert_array_equal(value, np.ones((1, 4)))

    def test_single_variable_path_rows_become_bounds(self):
        """Test rows a * v + b tighten the box bounds and other rows stay path constraints"""
        document = dict(
            DOUBLE_INTEGRATOR,
            path=[
                {"expr": "2*u - 1", "lower": -3, "upper": 5},
                {"expr": "-v", "upper": 1.5},
                {"expr": "x + v", "upper": 3},
                {"expr": "tau", "upper": 1},
            ],
        )
        ocp = parse_problem(document)
        np.testing.assert_array_equal(ocp.control_lower, [-1.0])
        np.testing.assert_array_equal(ocp.control_upper, [3.0])
        np.testing.assert_array_equal(ocp.state_lower, [-np.inf, -1.5])
        np.testing.assert_array_equal(ocp.state_upper, [np.inf, 2.0])
        self.assertEqual(ocp.n_c, 2)
        np.testing.assert_array_equal(ocp.path_upper, [3.0, 1.0])
        x = np.array([[1.0], [2.0]])
        np.testing.assert_allclose(ocp.path(x, np.array([[0.0]]), np.array([0.5])), [[3.0], [0.5]])

    def test_free_time_guess(self):
        """Test a third tf entry sets the starting value"""
        ocp = parse_problem(dict(DOUBLE_INTEGRATOR, tf=[0.5, 5, 2]))
        self.assertEqual(ocp.tf.initial_guess, 2.0)
        with self.assertRaises(ProblemFileError):
            parse_problem(dict(DOUBLE_INTEGRATOR, tf=[0.5, 5, 7]))

    def test_defaults(self):
        """Test missing keys give an unconstrained problem on [0, 1]"""
        ocp = parse_problem({"states": ["x"], "dynamics": ["tau + 1"]}, default_name="quadratic")
        self.assertEqual(ocp.name, "quadratic")
        self.assertEqual(ocp.n_u, 0)
        self.assertEqual((ocp.t0.lower, ocp.tf.lower), (0.0, 1.0))
        self.assertIsNone(ocp.lagrange)
        self.assertIsNone(ocp.mayer)
        self.assertTrue(np.all(np.isnan(ocp.initial_state)))

    def test_invalid_documents(self):
        """Test malformed documents raise ProblemFileError"""
        cases = [
            {"dynamics": ["1"]},
            {"states": ["x"], "dynamics": ["1", "2"]},
            {"states": ["x"], "dynamics": ["y"]},
            {"states": ["x"], "dynamics": ["x +"]},
            {"states": ["x"], "dynamics": ["x"], "initial_state": {"y": 1}},
            {"states": ["x"], "dynamics": ["x"], "state_bounds": {"y": [0, 1]}},
            {"states": ["x"], "dynamics": ["x"], "tf": [2, 1]},
            {"states": ["x"], "dynamics": ["x"], "mayer": "x"},
        ]
        for document in cases:
            with self.assertRaises(ProblemFileError, msg=json.dumps(document)):
                parse_problem(document)

    def test_row_bounds(self):
        """Test a row without bounds means expr <= 0"""
        lower, upper = row_bounds([{"expr": "x"}, {"expr": "x", "lower": 1}])
        self.assertEqual(lower, [-np.inf, 1.0])
        self.assertEqual(upper, [0.0, np.inf])


class TestLoadProblem(unittest.TestCase):
    """Test reading problem files"""

    def test_load(self):
        """Test the file stem is the default name"""
        with tempfile.TemporaryDirectory() as directory:
            path = Path(directory) / "ramp.json"
            path.write_text(json.dumps({"states": ["x"], "dynamics": ["tau + 1"], "initial_state": {"x": 0}}))
            ocp = load_problem(path)
        self.assertEqual(ocp.name, "ramp")
        self.assertEqual(ocp.initial_state[0], 0.0)

    def test_unreadable(self):
        """Test missing files, invalid JSON and non-objects are rejected"""
        with tempfile.TemporaryDirectory() as directory:
            with self.assertRaises(ProblemFileError):
                load_problem(Path(directory) / "missing.json")
            broken = Path(directory) / "broken.json"
            broken.write_text("{not json")
            with self.assertRaises(ProblemFileError):
                load_problem(broken)
            array = Path(directory) / "array.json"
            array.write_text("[1, 2]")
            with self.assertRaises(ProblemFileError):
                load_problem(array)


if __name__ == "__main__":
    unittest.main()
