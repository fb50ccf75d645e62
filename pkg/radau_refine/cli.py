import dataclasses
import sys
import time

import click

from radau_refine import DirectionPolicy, IntegratorMethod, RunStatus, __project__, __version__
from radau_refine.benchmarks import BENCHMARKS, demo_aero_model, hyper_sensitive, supersonic_climb
from radau_refine.metrics import RunMetrics
from radau_refine.problem_file import ProblemFileError, load_problem
from radau_refine.refinement import run_adaptive, verify_solution
from radau_refine.report import (
    BASELINE_VARIANT,
    ConfigError,
    RunConfig,
    build_report,
    sweep_row,
    write_report,
    write_sweep,
)

EXIT_CODES = {
    RunStatus.CONVERGED: 0,
    RunStatus.MAX_ITERATIONS: 2,
    RunStatus.NLP_FAILED: 1,
}


class Timer:
    def __init__(self):
        self.reset()

    def reset(self):
        self.start_time = time.time()

    def time_elapsed(self):
        now_time = time.time()
        return now_time - self.start_time


def build_problem(config: RunConfig):
    """
    Resolve the configured problem name to an OcpDefinition.

    ``file:<path>`` loads a declarative problem file; the supersonic climb
    uses the built-in demonstration aero model.
    """
    if config.problem.startswith("file:"):
        return load_problem(config.problem_path)
    if config.problem == "hyper_sensitive":
        return hyper_sensitive(config.hyper_tf)
    if config.problem == "supersonic_climb":
        return supersonic_climb(demo_aero_model())
    return BENCHMARKS[config.problem]()


def _formats(value: str) -> frozenset:
    return frozenset(part.strip() for part in value.split(",") if part.strip())


@click.group()
@click.version_option(prog_name=__project__, version=__version__)
def cli():
    """Direct LGR collocation with simulation-based adaptive mesh refinement."""


@cli.command()
@click.option(
    "--problem",
    envvar="PROBLEM",
    type=str,
    required=True,
    help=f"Benchmark name ({', '.join(sorted(BENCHMARKS))}) or file:<path> to a JSON problem file.",
)
@click.option("--nmin", envvar="NMIN", type=int, default=3, help="Minimum collocation points per interval.")
@click.option("--nmax", envvar="NMAX", type=int, default=10, help="Maximum collocation points per interval.")
@click.option(
    "--integrator",
    envvar="INTEGRATOR",
    type=click.Choice([m.value for m in IntegratorMethod]),
    default=IntegratorMethod.DP54.value,
    help="Explicit Runge-Kutta pair used for the error estimate.",
)
@click.option("--mesh-tol", envvar="MESH_TOL", type=float, default=1e-6, help="Mesh relative error tolerance.")
@click.option("--ode-tol", envvar="ODE_TOL", type=float, default=1e-6, help="Integrator tolerance.")
@click.option("--nlp-tol", envvar="NLP_TOL", type=float, default=1e-8, help="NLP optimality and feasibility tolerance.")
@click.option("--max-iters", envvar="MAX_ITERS", type=int, default=40, help="Maximum number of mesh iterations.")
@click.option(
    "--direction",
    envvar="DIRECTION",
    type=click.Choice([p.value for p in DirectionPolicy]),
    default=DirectionPolicy.AUTO.value,
    help="Simulation directions; auto drops a direction that fails on the first mesh.",
)
@click.option("--out", envvar="OUT", type=click.Path(file_okay=False), default="out", help="Output directory.")
@click.option(
    "--format",
    "formats",
    envvar="FORMAT",
    type=str,
    default="json,csv",
    help="Comma-separated output formats: json, csv, prom. Empty writes nothing.",
)
@click.option(
    "--hyper-tf",
    envvar="HYPER_TF",
    type=float,
    default=10000.0,
    help="Final time of the hyper-sensitive benchmark.",
)
@click.option(
    "-v",
    "--verbose",
    envvar="VERBOSE",
    count=True,
    help="Log mesh iterations (-v) and NLP iterations (-vv).",
)
def solve(
    problem, nmin, nmax, integrator, mesh_tol, ode_tol, nlp_tol, max_iters, direction, out, formats, hyper_tf, verbose
):
    """
    Solve a problem with adaptive mesh refinement and write the run report.

    Exits 0 when the mesh converged, 2 when the iteration limit was reached
    and 1 on NLP failure or invalid configuration.
    """
    try:
        config = RunConfig(
            problem=problem,
            n_min=nmin,
            n_max=nmax,
            integrator=IntegratorMethod(integrator),
            mesh_tol=mesh_tol,
            ode_tol=ode_tol,
            nlp_tol=nlp_tol,
            max_iters=max_iters,
            direction=DirectionPolicy(direction),
            output_dir=out,
            formats=_formats(formats),
            hyper_tf=hyper_tf,
            verbose=verbose,
        )
        ocp = build_problem(config)
        config.prepare_output()
    except (ConfigError, ProblemFileError) as e:
        click.echo(f"Error: {e}", err=True)
        sys.exit(1)

    sys.exit(run(config, ocp))


def run(config: RunConfig, ocp=None) -> int:
    """
    Solve the configured problem, write the requested outputs and print a summary.

    Parameters:
        config (RunConfig): Validated run configuration.
        ocp (OcpDefinition): Problem to solve; resolved from ``config`` when omitted.

    Returns:
        int: Process exit code for the run status.
    """
    if ocp is None:
        ocp = build_problem(config)
        config.prepare_output()

    options = config.refinement_options()
    metrics = RunMetrics()
    t = Timer()
    result = run_adaptive(ocp, opts=options, metrics=metrics)
    elapsed = t.time_elapsed()

    certified = None
    if result.converged:
        certified, _ = verify_solution(ocp, result.solution, options, result.direction_policy)

    report = build_report(result, config, ocp, certified)
    for path in write_report(report, result, config.output_dir, config.formats):
        click.echo(f"Wrote {path}")
    if "prom" in config.formats:
        metrics_path = config.output_dir / "metrics.prom"
        metrics.write(metrics_path)
        click.echo(f"Wrote {metrics_path}")

    if result.policy_reason:
        click.echo(f"Direction policy {result.direction_policy.value} ({result.policy_reason})", err=True)
    summary = f"{ocp.name}: {result.status.value} after {len(result.history)} iterations in {elapsed:.1f}s"
    if result.solution is not None:
        summary += f", objective {result.solution.objective:.10g}"
    if result.message:
        summary += f" ({result.message})"
    click.echo(summary)
    return EXIT_CODES[result.status]

def _point_range(value: str) -> tuple[int, int]:
    """Parse ``NMIN:NMAX``."""
    try:
        low, high = value.split(":")
        return int(low), int(high)
    except ValueError as error:
        raise ConfigError(f"Point range must look like NMIN:NMAX, got {value!r}") from error


@cli.command()
@click.option(
    "--problem",
    envvar="PROBLEM",
    type=str,
    required=True,
    help=f"Benchmark name ({', '.join(sorted(BENCHMARKS))}) or file:<path> to a JSON problem file.",
)
@click.option(
    "--points",
    envvar="SWEEP_POINTS",
    multiple=True,
    default=("3:10",),
    show_default=True,
    help="NMIN:NMAX collocation point range; repeat for several variants.",
)
@click.option(
    "--integrator",
    "integrators",
    envvar="SWEEP_INTEGRATORS",
    multiple=True,
    type=click.Choice([m.value for m in IntegratorMethod]),
    default=(IntegratorMethod.DP54.value,),
    help="Integrator used for the error estimate; repeat for several variants.",
)
@click.option("--mesh-tol", envvar="MESH_TOL", type=float, default=1e-6, help="Mesh relative error tolerance.")
@click.option("--ode-tol", envvar="ODE_TOL", type=float, default=1e-6, help="Integrator tolerance.")
@click.option("--nlp-tol", envvar="NLP_TOL", type=float, default=1e-8, help="NLP optimality and feasibility tolerance.")
@click.option("--max-iters", envvar="MAX_ITERS", type=int, default=40, help="Maximum number of mesh iterations.")
@click.option(
    "--direction",
    envvar="DIRECTION",
    type=click.Choice([p.value for p in DirectionPolicy]),
    default=DirectionPolicy.AUTO.value,
    help="Simulation directions; auto drops a direction that fails on the first mesh.",
)
@click.option("--out", envvar="OUT", type=click.Path(file_okay=False), default="out", help="Output directory.")
@click.option(
    "--format",
    "formats",
    envvar="FORMAT",
    type=str,
    default="json,csv",
    help="Comma-separated table formats: json, csv.",
)
@click.option(
    "--hyper-tf",
    envvar="HYPER_TF",
    type=float,
    default=10000.0,
    help="Final time of the hyper-sensitive benchmark.",
)
@click.option(
    "-v",
    "--verbose",
    envvar="VERBOSE",
    count=True,
    help="Log mesh iterations (-v) and NLP iterations (-vv).",
)
def sweep(
    problem, points, integrators, mesh_tol, ode_tol, nlp_tol, max_iters, direction, out, formats, hyper_tf, verbose
):
    """
    Compare refinement variants on one problem.

    Runs every point range with every integrator, plus a baseline row with
    the error on the unrefined initial mesh, and writes sweep.json and
    sweep.csv. Exits 0 when every variant converged.
    """
    try:
        selected = _formats(formats)
        if selected - {"json", "csv"}:
            raise ConfigError(f"sweep writes json and csv tables only, got {sorted(selected)}")
        configs = [
            RunConfig(
                problem=problem,
                n_min=n_min,
                n_max=n_max,
                integrator=IntegratorMethod(method),
                mesh_tol=mesh_tol,
                ode_tol=ode_tol,
                nlp_tol=nlp_tol,
                max_iters=max_iters,
                direction=DirectionPolicy(direction),
                output_dir=out,
                formats=selected,
                hyper_tf=hyper_tf,
                verbose=verbose,
            )
            for n_min, n_max in map(_point_range, points)
            for method in integrators
        ]
        if not configs:
            raise ConfigError("sweep needs at least one point range and one integrator")
        ocp = build_problem(configs[0])
        configs[0].prepare_output()
    except (ConfigError, ProblemFileError) as e:
        click.echo(f"Error: {e}", err=True)
        sys.exit(1)

    sys.exit(run_sweep(configs, ocp))


def run_sweep(configs: list[RunConfig], ocp) -> int:
    """
    Run the baseline and every configured variant, write the table and print
    one line per row.

    The baseline solves the NLP once on the initial mesh of the first
    configuration and reports its error without refining.

    Returns:
        int: 0 when every variant converged, otherwise the largest variant exit code.
    """
    first = configs[0]
    t = Timer()
    baseline = run_adaptive(ocp, opts=dataclasses.replace(first.refinement_options(), max_iterations=1))
    rows = [sweep_row(BASELINE_VARIANT, first, baseline, t.time_elapsed())]

    codes = []
    for config in configs:
        t.reset()
        result = run_adaptive(ocp, opts=config.refinement_options())
        variant = f"{config.n_min}:{config.n_max}/{config.integrator.value}"
        rows.append(sweep_row(variant, config, result, t.time_elapsed()))
        codes.append(EXIT_CODES[result.status])

    for row in rows:
        e_max = "-" if row["e_max"] is None else f"{row['e_max']:.3e}"
        click.echo(
            f"{row['variant']:>16}  {row['status']:<14} N={row['N']:<5} K={row['K']:<4} M={row['M']:<3} e_max={e_max}"
        )
    for path in write_sweep(rows, first.output_dir, first.formats):
        click.echo(f"Wrote {path}")
    return max(codes)


if __name__ == "__main__":
    cli()
