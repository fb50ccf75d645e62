from __future__ import annotations

from typing import TYPE_CHECKING

from prometheus_client import CollectorRegistry, Counter, Gauge, Histogram, write_to_textfile

from radau_refine import Direction, RefinementAction

if TYPE_CHECKING:
    from radau_refine.refinement import IterationRecord


class RunMetrics:
    prefix = "radau_refine"

    def __init__(self, registry=None) -> None:
        """
        Create the run gauges and counters.

        Parameters:
            registry (CollectorRegistry): Registry to register metrics with.
                Defaults to a fresh registry owned by this object, so several
                runs in one process do not collide.
        """
        self.registry = registry or CollectorRegistry()
        self.iteration = Gauge(
            f"{self.prefix}_mesh_iteration",
            "Index of the latest mesh iteration",
            registry=self.registry,
        )
        self.intervals = Gauge(
            f"{self.prefix}_mesh_intervals",
            "Mesh intervals in the latest iteration",
            registry=self.registry,
        )
        self.points = Gauge(
            f"{self.prefix}_collocation_points",
            "Collocation points in the latest iteration",
            registry=self.registry,
        )
        self.max_error = Gauge(
            f"{self.prefix}_max_relative_error",
            "Largest simulation-based relative error estimate",
            registry=self.registry,
        )
        self.max_residual = Gauge(
            f"{self.prefix}_max_residual_error",
            "Largest scaled dynamics residual",
            registry=self.registry,
        )
        self.objective = Gauge(
            f"{self.prefix}_objective",
            "Objective value of the latest solution",
            registry=self.registry,
        )
        # Counter appends the _total suffix on exposition
        self.nlp_iterations = Counter(
            f"{self.prefix}_nlp_iterations",
            "NLP solver iterations over the whole run",
            registry=self.registry,
        )
        self.simulation_failures = Counter(
            f"{self.prefix}_simulation_failures",
            "Interval simulations that failed",
            ["direction"],
            registry=self.registry,
        )
        self.refinement_actions = Counter(
            f"{self.prefix}_refinement_actions",
            "Refinement actions applied to mesh intervals",
            ["action"],
            registry=self.registry,
        )
        self.nlp_seconds = Histogram(
            f"{self.prefix}_nlp_solve_seconds",
            "Wall time of each NLP assembly and solve",
            registry=self.registry,
        )
        # expose every label combination from the start
        for direction in Direction:
            self.simulation_failures.labels(direction=direction.value)
        for action in RefinementAction:
            self.refinement_actions.labels(action=action.value)

    def observe_iteration(self, record: "IterationRecord") -> None:
        self.iteration.set(record.iteration)
        self.intervals.set(record.mesh.K)
        self.points.set(record.mesh.total_points)
        self.objective.set(record.objective)
        self.max_error.set(record.max_error)
        self.max_residual.set(record.max_residual)
        self.nlp_iterations.inc(record.nlp_iterations)
        self.nlp_seconds.observe(record.nlp_seconds)
        for direction, count in record.simulation_failures.items():
            if count:
                self.simulation_failures.labels(direction=direction).inc(count)
        for interval_action in record.actions:
            self.refinement_actions.labels(action=interval_action.action.value).inc()

    def write(self, path) -> None:
        """Write the registry in the Prometheus text format (atomically, via a temporary file)."""
        write_to_textfile(str(path), self.registry)
