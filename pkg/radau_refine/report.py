from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from radau_refine import Direction, DirectionPolicy, IntegratorMethod, __project__, __version__
from radau_refine.benchmarks import BENCHMARKS
from radau_refine.nlp import SolverOptions
from radau_refine.problem import OcpDefinition, zeta_to_tau
from radau_refine.refinement import RefinementOptions, RunResult
from radau_refine.simulate import IntegratorSpec

FORMATS = frozenset({"json", "csv", "prom"})
REPORT_SCHEMA = "radau-refine/report/1"
SAMPLE_POINTS = 1000


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    problem: str
    n_min: int = 3
    n_max: int = 10
    integrator: IntegratorMethod = IntegratorMethod.DP54
    mesh_tol: float = 1e-6
    ode_tol: float = 1e-6
    nlp_tol: float = 1e-8
    max_iters: int = 40
    direction: DirectionPolicy = DirectionPolicy.AUTO
    output_dir: Path = Path("out")
    formats: frozenset[str] = frozenset({"json", "csv"})
    hyper_tf: float = 10000.0
    verbose: int = 0

    def __post_init__(self):
        object.__setattr__(self, "output_dir", Path(self.output_dir))
        object.__setattr__(self, "formats", frozenset(self.formats))
        if not isinstance(self.integrator, IntegratorMethod):
            object.__setattr__(self, "integrator", IntegratorMethod(self.integrator))
        if not isinstance(self.direction, DirectionPolicy):
            object.__setattr__(self, "direction", DirectionPolicy(self.direction))

        if self.problem.startswith("file:"):
            if not Path(self.problem_path).is_file():
                raise ConfigError(f"Problem file {self.problem_path} does not exist")
        elif self.problem not in BENCHMARKS:
            raise ConfigError(f"Unknown problem {self.problem!r}; expected one of {sorted(BENCHMARKS)} or file:<path>")
        if self.n_min < 2:
            raise ConfigError(f"nmin must be at least 2, got {self.n_min}")
        if self.n_max < self.n_min:
            raise ConfigError(f"nmax ({self.n_max}) must not be below nmin ({self.n_min})")
        for name in ("mesh_tol", "ode_tol", "nlp_tol", "hyper_tf"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.max_iters < 1:
            raise ConfigError(f"max_iters must be at least 1, got {self.max_iters}")
        unknown = self.formats - FORMATS
        if unknown:
            raise ConfigError(f"Unknown output formats {sorted(unknown)}; expected a subset of {sorted(FORMATS)}")

    @property
    def problem_path(self) -> Path:
        return Path(self.problem[len("file:") :])

    def refinement_options(self) -> RefinementOptions:
        return RefinementOptions(
            n_min=self.n_min,
            n_max=self.n_max,
            mesh_tolerance=self.mesh_tol,
            max_iterations=self.max_iters,
            integrator=IntegratorSpec(method=self.integrator, tolerance=self.ode_tol),
            direction_policy=self.direction,
            solver=SolverOptions(kkt_tolerance=self.nlp_tol, feasibility_tolerance=self.nlp_tol, verbose=self.verbose),
            verbose=self.verbose,
        )

    def prepare_output(self) -> None:
        """
        Create the output directory when files will be written.

        Raises:
            ConfigError: If the directory cannot be created or written to.
        """
        if not self.formats:
            return
        try:
            self.output_dir.mkdir(parents=True, exist_ok=True)
        except OSError as error:
            raise ConfigError(f"Cannot create output directory {self.output_dir}: {error}") from error
        if not os.access(self.output_dir, os.W_OK):
            raise ConfigError(f"Output directory {self.output_dir} is not writable")

    def to_dict(self) -> dict:
        return {
            "problem": self.problem,
            "n_min": self.n_min,
            "n_max": self.n_max,
            "integrator": self.integrator.value,
            "mesh_tol": self.mesh_tol,
            "ode_tol": self.ode_tol,
            "nlp_tol": self.nlp_tol,
            "max_iters": self.max_iters,
            "direction": self.direction.value,
            "formats": sorted(self.formats),
            "hyper_tf": self.hyper_tf,
        }


def _number(value) -> Optional[float]:
    """Finite floats pass through (serialised with repr, which round-trips); inf and nan become null."""
    value = float(value)
    return value if math.isfinite(value) else None


def _numbers(values) -> list:
    return [_number(v) for v in np.asarray(values, dtype=float).ravel()]


def _iteration_rows(result: RunResult) -> list[dict]:
    rows = []
    for record in result.history:
        actions: dict[str, int] = {}
        for interval_action in record.actions:
            actions[interval_action.action.value] = actions.get(interval_action.action.value, 0) + 1
        rows.append(
            {
                "iteration": record.iteration,
                "N": record.mesh.total_points,
                "K": record.mesh.K,
                "e_max": _number(record.max_error),
                "residual_max": _number(record.max_residual),
                "objective": _number(record.objective),
                "nlp_status": record.nlp_status.value,
                "nlp_iterations": record.nlp_iterations,
                "direction_policy": record.direction_policy.value,
                "simulation_failures": dict(sorted(record.simulation_failures.items())),
                "actions": dict(sorted(actions.items())),
                "wall_seconds": record.wall_seconds,
            }
        )
    return rows


def _traces(result: RunResult) -> list[dict]:
    if result.report is None or result.solution is None:
        return []
    solution = result.solution
    traces = []
    directions = ((Direction.FORWARD, result.report.forward), (Direction.BACKWARD, result.report.backward))
    for direction, traces_by_interval in directions:
        for k, trace in enumerate(traces_by_interval):
            if trace is None:
                continue
            points = trace.trajectory.points
            traces.append(
                {
                    "interval": k,
                    "direction": direction.value,
                    "tau": _numbers(zeta_to_tau(points, *solution.mesh.interval(k))),
                    "simulated": [_numbers(row) for row in trace.trajectory.states],
                    "collocated": [_numbers(row) for row in solution.state_interpolant(k)(points)],
                    "e_max": _number(trace.max_error),
                }
            )
    return traces


def build_report(
    result: RunResult,
    config: RunConfig,
    ocp: Optional[OcpDefinition] = None,
    certified: Optional[bool] = None,
) -> dict:
    """
    Assemble the JSON-ready run report.

    Top-level keys: ``schema``, ``project``, ``version``, ``config``,
    ``status``, ``message``, ``direction_policy``, ``direction_policy_reason``,
    ``certified``, ``iterations``, ``final`` and ``traces``. Non-finite numbers
    are written as null.
    """
    report = {
        "schema": REPORT_SCHEMA,
        "project": __project__,
        "version": __version__,
        "config": config.to_dict(),
        "status": result.status.value,
        "message": result.message,
        "direction_policy": result.direction_policy.value,
        "direction_policy_reason": result.policy_reason,
        "certified": certified,
        "iterations": _iteration_rows(result),
        "final": None,
        "traces": _traces(result),
    }
    solution = result.solution
    if solution is not None:
        state_names = list(ocp.state_names) if ocp else [f"x{i}" for i in range(solution.n_x)]
        control_names = list(ocp.control_names) if ocp else [f"u{i}" for i in range(solution.n_u)]
        taus = np.linspace(-1.0, 1.0, SAMPLE_POINTS)
        times, states, controls = solution.sample(taus)
        report["final"] = {
            "objective": _number(solution.objective),
            "t0": _number(solution.t0),
            "tf": _number(solution.tf),
            "e_max": _number(result.report.max_error) if result.report else None,
            "mesh": {
                "mesh_points": _numbers(solution.mesh.mesh_points),
                "colloc_counts": list(solution.mesh.colloc_counts),
            },
            "solution": {
                "tau": _numbers(taus),
                "t": _numbers(times),
                "states": {name: _numbers(row) for name, row in zip(state_names, states)},
                "controls": {name: _numbers(row) for name, row in zip(control_names, controls)},
            },
        }
    return report


def emit_history(result: RunResult, directory) -> list[Path]:
    """
    Write the mesh history: ``history.csv`` with one ``iteration,tau`` row per
    mesh point and ``meshes.json`` with every iteration's mesh.
    """
    directory = Path(directory)
    history_path = directory / "history.csv"
    with history_path.open("w", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(["iteration", "tau"])
        for record in result.history:
            for tau in record.mesh.mesh_points:
                writer.writerow([record.iteration, repr(float(tau))])

    meshes_path = directory / "meshes.json"
    meshes = [
        {
            "iteration": record.iteration,
            "mesh_points": list(record.mesh.mesh_points),
            "colloc_counts": list(record.mesh.colloc_counts),
        }
        for record in result.history
    ]
    meshes_path.write_text(json.dumps(meshes, indent=2) + "\n")
    return [history_path, meshes_path]


def write_report(report: dict, result: RunResult, directory, formats) -> list[Path]:
    """Write ``report.json`` and/or the history files depending on ``formats``; returns the written paths."""
    directory = Path(directory)
    written = []
    if "json" in formats:
        path = directory / "report.json"
        path.write_text(json.dumps(report, indent=2, allow_nan=False) + "\n")
        written.append(path)
    if "csv" in formats:
        written.extend(emit_history(result, directory))
    return written


SWEEP_COLUMNS = (
    "problem",
    "variant",
    "n_min",
    "n_max",
    "integrator",
    "status",
    "N",
    "K",
    "M",
    "e_max",
    "residual_max",
    "objective",
    "seconds",
)
# variant label of the row measured on the unrefined initial mesh
BASELINE_VARIANT = "none"


def sweep_row(variant: str, config: RunConfig, result: RunResult, seconds: float) -> dict:
    """
    One row of the variant comparison table: final mesh size ``N``/``K``,
    number of NLPs solved ``M``, the largest relative error and residual
    estimates on the final mesh and the objective.
    """
    report = result.report
    return {
        "problem": config.problem,
        "variant": variant,
        "n_min": config.n_min,
        "n_max": config.n_max,
        "integrator": config.integrator.value,
        "status": result.status.value,
        "N": result.mesh.total_points,
        "K": result.mesh.K,
        "M": len(result.history),
        "e_max": None if report is None else _number(report.max_error),
        "residual_max": None if report is None else _number(report.max_residual),
        "objective": None if result.solution is None else _number(result.solution.objective),
        "seconds": round(float(seconds), 3),
    }


def write_sweep(rows: list[dict], directory, formats) -> list[Path]:
    """Write ``sweep.json`` and/or ``sweep.csv``; missing values are null in JSON and empty in CSV."""
    directory = Path(directory)
    written = []
    if "json" in formats:
        path = directory / "sweep.json"
        path.write_text(json.dumps(rows, indent=2, allow_nan=False) + "\n")
        written.append(path)
    if "csv" in formats:
        path = directory / "sweep.csv"
        with path.open("w", newline="") as handle:
            writer = csv.DictWriter(handle, fieldnames=SWEEP_COLUMNS, lineterminator="\n")
            writer.writeheader()
            writer.writerows(rows)
        written.append(path)
    return written
