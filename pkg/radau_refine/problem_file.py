"""
Declarative problem files.

A problem file is a JSON object::

    {
      "name": "double_integrator",
      "states": ["x", "v"],
      "controls": ["u"],
      "dynamics": ["v", "u"],
      "lagrange": "u**2 / 2",
      "mayer": "0",
      "initial_state": {"x": 0, "v": 0},
      "final_state": {"x": 1, "v": 0},
      "state_bounds": {"v": [-2, 2]},
      "control_bounds": {"u": [-10, 10]},
      "path": [{"expr": "x + v", "upper": 3}],
      "boundary": [{"expr": "x_f - x_0", "lower": 1, "upper": 1}],
      "t0": 0,
      "tf": [0.5, 5]
    }

Dynamics, Lagrange and path expressions may use the state and control names
and ``tau``. Mayer and boundary expressions may use ``<state>_0``,
``<state>_f``, ``t0`` and ``tf``. A time given as a number is fixed, a
``[lower, upper]`` pair makes it free and ``[lower, upper, guess]`` also
sets its starting value.
"""

from __future__ import annotations

import json
from pathlib import Path
from tokenize import TokenError
from typing import Optional

import numpy as np
import sympy
from sympy.parsing.sympy_parser import parse_expr, standard_transformations

from radau_refine.problem import OcpDefinition, TimeSpec


class ProblemFileError(ValueError):
    pass


def _parse(text, symbols: dict[str, sympy.Symbol], where: str) -> sympy.Expr:
    try:
        expr = parse_expr(str(text), local_dict=dict(symbols), transformations=standard_transformations)
    except (SyntaxError, TokenError, TypeError, ValueError, sympy.SympifyError) as error:
        raise ProblemFileError(f"Cannot parse {where} expression {text!r}: {error}") from error
    unknown = {s.name for s in getattr(expr, "free_symbols", set())} - set(symbols)
    if unknown:
        raise ProblemFileError(f"Unknown symbols {sorted(unknown)} in {where} expression {text!r}")
    return expr


def _point_function(exprs, states, controls, tau):
    """Vectorised callable f(x, u, tau) returning one row per expression."""
    compiled = sympy.lambdify([*states, *controls, tau], list(exprs), modules="numpy")

    def function(x, u, t):
        values = compiled(*np.asarray(x, dtype=float), *np.asarray(u, dtype=float), t)
        reference = np.zeros_like(np.asarray(t, dtype=float))
        return np.array(np.broadcast_arrays(*[np.asarray(v, dtype=float) for v in values], reference)[:-1])

    return function


def _scalar_point_function(expr, states, controls, tau):
    vector = _point_function([expr], states, controls, tau)
    return lambda x, u, t: vector(x, u, t)[0]


def _endpoint_function(exprs, initial, t0, final, tf):
    compiled = sympy.lambdify([*initial, t0, *final, tf], list(exprs), modules="numpy")

    def function(x0, start, xf, end):
        return np.asarray(compiled(*np.asarray(x0, dtype=float), start, *np.asarray(xf, dtype=float), end), dtype=float)

    return function


def _named_vector(data, names: list[str], fill: float, where: str) -> list[float]:
    if data is None:
        return [fill] * len(names)
    if isinstance(data, list):
        if len(data) != len(names):
            raise ProblemFileError(f"{where} has {len(data)} entries, expected {len(names)}")
        return [fill if v is None else float(v) for v in data]
    unknown = set(data) - set(names)
    if unknown:
        raise ProblemFileError(f"{where} names unknown variables {sorted(unknown)}")
    return [fill if data.get(n) is None else float(data[n]) for n in names]


def _bounds(data, names: list[str], where: str) -> tuple[list[float], list[float]]:
    data = data or {}
    unknown = set(data) - set(names)
    if unknown:
        raise ProblemFileError(f"{where} names unknown variables {sorted(unknown)}")
    lower, upper = [], []
    for name in names:
        lo, hi = data.get(name, [None, None])
        lower.append(-np.inf if lo is None else float(lo))
        upper.append(np.inf if hi is None else float(hi))
    return lower, upper


def row_bounds(rows: list[dict]) -> tuple[list[float], list[float]]:
    """Bounds of constraint rows; a row with neither bound means ``expr <= 0``."""
    lower, upper = [], []
    for row in rows:
        lo, hi = row.get("lower"), row.get("upper")
        if lo is None and hi is None:
            hi = 0.0
        lower.append(-np.inf if lo is None else float(lo))
        upper.append(np.inf if hi is None else float(hi))
    return lower, upper


def _time(data, default: float, where: str) -> TimeSpec:
    if data is None:
        return TimeSpec.fixed(default)
    try:
        if isinstance(data, list):
            return TimeSpec.free(*data)
        return TimeSpec.fixed(data)
    except (TypeError, ValueError) as error:
        raise ProblemFileError(f"Invalid {where}: {error}") from error


def _variable_bound(expr, variables) -> Optional[tuple[sympy.Symbol, float, float]]:
    """``(v, a, b)`` when ``expr`` is ``a * v + b`` in a single state or control ``v``."""
    symbols = expr.free_symbols
    if len(symbols) != 1:
        return None
    (variable,) = symbols
    if variable not in variables:
        return None
    poly = expr.as_poly(variable)
    if poly is None or poly.degree() != 1:
        return None
    slope, offset = (float(c) for c in poly.all_coeffs())
    return variable, slope, offset


def parse_problem(document: dict, default_name: str = "problem") -> OcpDefinition:
    """
    Build an :class:`OcpDefinition` from a parsed problem document.

    Raises:
        ProblemFileError: On missing keys, unknown symbols, unparsable
            expressions or inconsistent dimensions.
    """
    try:
        state_names = [str(n) for n in document["states"]]
        dynamics_text = list(document["dynamics"])
    except (KeyError, TypeError) as error:
        raise ProblemFileError(f"Problem file needs 'states' and 'dynamics': missing {error}") from error
    control_names = [str(n) for n in document.get("controls", [])]
    if len(dynamics_text) != len(state_names):
        raise ProblemFileError(f"{len(dynamics_text)} dynamics expressions for {len(state_names)} states")

    states = [sympy.Symbol(n) for n in state_names]
    controls = [sympy.Symbol(n) for n in control_names]
    tau = sympy.Symbol("tau")
    point_symbols = {s.name: s for s in [*states, *controls, tau]}
    initial = [sympy.Symbol(f"{n}_0") for n in state_names]
    final = [sympy.Symbol(f"{n}_f") for n in state_names]
    t0, tf = sympy.Symbol("t0"), sympy.Symbol("tf")
    endpoint_symbols = {s.name: s for s in [*initial, *final, t0, tf]}

    dynamics = _point_function(
        [_parse(text, point_symbols, f"dynamics[{i}]") for i, text in enumerate(dynamics_text)],
        states,
        controls,
        tau,
    )
    lagrange = None
    if document.get("lagrange") is not None:
        lagrange_expr = _parse(document["lagrange"], point_symbols, "lagrange")
        lagrange = _scalar_point_function(lagrange_expr, states, controls, tau)
    mayer = None
    if document.get("mayer") is not None:
        endpoint_cost = _endpoint_function(
            [_parse(document["mayer"], endpoint_symbols, "mayer")], initial, t0, final, tf
        )

        def mayer(x0, start, xf, end):
            return float(endpoint_cost(x0, start, xf, end)[0])

    state_lower, state_upper = _bounds(document.get("state_bounds"), state_names, "state_bounds")
    control_lower, control_upper = _bounds(document.get("control_bounds"), control_names, "control_bounds")

    # rows of the form a * v + b in one state or control become box bounds
    path_rows = document.get("path", [])
    path_exprs, path_lower, path_upper = [], [], []
    for i, (row, lo, hi) in enumerate(zip(path_rows, *row_bounds(path_rows))):
        expr = _parse(row["expr"], point_symbols, f"path[{i}]")
        found = _variable_bound(expr, [*states, *controls])
        if found is None:
            path_exprs.append(expr)
            path_lower.append(lo)
            path_upper.append(hi)
            continue
        variable, slope, offset = found
        low, high = sorted(((lo - offset) / slope, (hi - offset) / slope))
        if variable in states:
            lower, upper, index = state_lower, state_upper, states.index(variable)
        else:
            lower, upper, index = control_lower, control_upper, controls.index(variable)
        lower[index] = max(lower[index], low)
        upper[index] = min(upper[index], high)
    path = _point_function(path_exprs, states, controls, tau) if path_exprs else None

    boundary_rows = document.get("boundary", [])
    boundary = None
    if boundary_rows:
        boundary = _endpoint_function(
            [_parse(row["expr"], endpoint_symbols, f"boundary[{i}]") for i, row in enumerate(boundary_rows)],
            initial,
            t0,
            final,
            tf,
        )
    boundary_lower, boundary_upper = row_bounds(boundary_rows)

    try:
        return OcpDefinition(
            n_x=len(state_names),
            n_u=len(control_names),
            dynamics=dynamics,
            lagrange=lagrange,
            mayer=mayer,
            boundary=boundary,
            n_b=len(boundary_rows),
            boundary_lower=boundary_lower,
            boundary_upper=boundary_upper,
            path=path,
            n_c=len(path_exprs),
            path_lower=path_lower,
            path_upper=path_upper,
            initial_state=_named_vector(document.get("initial_state"), state_names, np.nan, "initial_state"),
            final_state=_named_vector(document.get("final_state"), state_names, np.nan, "final_state"),
            state_lower=state_lower,
            state_upper=state_upper,
            control_lower=control_lower,
            control_upper=control_upper,
            t0=_time(document.get("t0"), 0.0, "t0"),
            tf=_time(document.get("tf"), 1.0, "tf"),
            name=str(document.get("name", default_name)),
            state_names=state_names,
            control_names=control_names,
        )
    except ValueError as error:
        raise ProblemFileError(str(error)) from error


def load_problem(path) -> OcpDefinition:
    """
    Read a JSON problem file.

    Raises:
        ProblemFileError: If the file cannot be read or does not describe a
            valid problem.
    """
    path = Path(path)
    try:
        document = json.loads(path.read_text())
    except OSError as error:
        raise ProblemFileError(f"Cannot read problem file {path}: {error}") from error
    except json.JSONDecodeError as error:
        raise ProblemFileError(f"Problem file {path} is not valid JSON: {error}") from error
    if not isinstance(document, dict):
        raise ProblemFileError(f"Problem file {path} must contain a JSON object")
    return parse_problem(document, default_name=path.stem)
