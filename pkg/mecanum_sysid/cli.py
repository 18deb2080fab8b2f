"""Command-line entry point.

Subcommands write their results under the configured output directory
(``--out`` overrides it). Exit status is 0 on success, 1 when a solver did
not converge (results are still written) and 2 on input errors.
"""
import argparse
import json
import logging
import os
import sys

from dataclasses import asdict
from typing import Any
from typing import Callable
from typing import Dict
from typing import List
from typing import Optional
from typing import Sequence

import numpy as np

from baseplate.lib.config import ConfigurationError

from mecanum_sysid.config import ExperimentConfig
from mecanum_sysid.config import load_experiment_config
from mecanum_sysid.control import PlanOptions
from mecanum_sysid.control import ReferenceCurve
from mecanum_sysid.control import plan_controls
from mecanum_sysid.control import rollout
from mecanum_sysid.frictionnet import Mlp
from mecanum_sysid.frictionnet import TrainingDivergedError
from mecanum_sysid.frictionnet import baseline_rollout
from mecanum_sysid.frictionnet import predict_friction
from mecanum_sysid.frictionnet import representative_command
from mecanum_sysid.frictionnet import train_baseline
from mecanum_sysid.frictionnet import train_friction_net
from mecanum_sysid.io import read_controls
from mecanum_sysid.io import read_ground_truth
from mecanum_sysid.io import read_vertices
from mecanum_sysid.io import write_table
from mecanum_sysid.io import write_trajectory
from mecanum_sysid.loss import Recording
from mecanum_sysid.model import FrictionCoeffs
from mecanum_sysid.model import Pose
from mecanum_sysid.model import simulate
from mecanum_sysid.optimize import IdentificationProblem
from mecanum_sysid.optimize import SolveReport
from mecanum_sysid.optimize import data_efficiency_sweep
from mecanum_sysid.optimize import gradient_check
from mecanum_sysid.optimize import identify
from mecanum_sysid.optimize import identify_each
from mecanum_sysid.svg import Series
from mecanum_sysid.svg import write_svg


logger = logging.getLogger(__name__)


EXIT_OK = 0
EXIT_NOT_CONVERGED = 1
EXIT_INPUT_ERROR = 2


class InputError(Exception):
    pass


def _write_json(path: str, document: Dict[str, Any]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(document, f, indent=2, sort_keys=True)
        f.write("\n")


def _output_dir(args: argparse.Namespace, cfg: ExperimentConfig) -> str:
    outdir = args.out if args.out else cfg.output_dir
    os.makedirs(outdir, exist_ok=True)
    return outdir


def _load_config(args: argparse.Namespace) -> ExperimentConfig:
    if args.config:
        return load_experiment_config(args.config)
    return ExperimentConfig()


def _recordings(cfg: ExperimentConfig, names: Optional[Sequence[str]]) -> List[Recording]:
    selected = list(names) if names else sorted(cfg.trajectories)
    if not selected:
        raise InputError("no trajectories configured")
    recordings = []
    for name in selected:
        if name not in cfg.trajectories:
            raise InputError(f"unknown trajectory {name!r}")
        source = cfg.trajectories[name]
        schedule = read_controls(source.controls, cfg.robot.omega_max)
        track = read_ground_truth(source.ground_truth)
        recordings.append(Recording(schedule, track, name=name))
    return recordings


def _problem(cfg: ExperimentConfig, names: Optional[Sequence[str]]) -> IdentificationProblem:
    return IdentificationProblem(
        _recordings(cfg, names), cfg.robot, cfg.weights, cfg.identify.lower, cfg.identify.upper
    )


def _solver_options(cfg: ExperimentConfig, solver: str) -> object:
    return {
        "qn": cfg.identify.quasi_newton,
        "nm": cfg.nelder_mead,
        "cmaes": cfg.cmaes,
    }[solver]


def cmd_simulate(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    outdir = _output_dir(args, cfg)
    mu = FrictionCoeffs(args.mu if args.mu else np.zeros(4))
    schedule = read_controls(args.controls, cfg.robot.omega_max)
    trajectory = simulate(cfg.robot, mu, schedule, Pose(*args.start))
    write_trajectory(os.path.join(outdir, "simulate.csv"), trajectory)
    write_svg(
        os.path.join(outdir, "simulate.svg"),
        [Series("predicted", trajectory.xy)],
        title="Predicted trajectory",
    )
    return EXIT_OK


def _overlay(path: str, cfg: ExperimentConfig, recording: Recording, mu: FrictionCoeffs) -> None:
    identified = simulate(cfg.robot, mu, recording.schedule, recording.start)
    frictionless = simulate(
        cfg.robot, FrictionCoeffs.frictionless(), recording.schedule, recording.start
    )
    write_svg(
        path,
        [
            Series("ground truth", recording.track.xy),
            Series("identified model", identified.xy),
            Series("frictionless model", frictionless.xy),
        ],
        title=f"Identification of {recording.name}",
    )


def _run_entry(report: SolveReport, timings: bool) -> Dict[str, Any]:
    entry = report.to_dict(include_timing=timings)
    entry["mu_hat"] = report.mu_hat.to_list()
    return entry


def cmd_identify(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    outdir = _output_dir(args, cfg)
    solver = args.solver or cfg.identify.solver
    options = _solver_options(cfg, solver)
    problem = _problem(cfg, args.trajectory)
    joint = args.joint or cfg.identify.joint

    if joint:
        reports = {"joint": identify(problem, solver, cfg.identify.x0, options)}
    else:
        jobs = args.jobs or cfg.identify.jobs
        each = identify_each(problem, solver, cfg.identify.x0, options, jobs=jobs)
        reports = {r.name: report for r, report in zip(problem.recordings, each)}

    for name, report in reports.items():
        write_table(
            os.path.join(outdir, f"{name}_loss_curve.csv"),
            {
                "iteration": [i for i, _ in report.loss_curve],
                "loss": [loss for _, loss in report.loss_curve],
            },
        )
    for recording in problem.recordings:
        report = reports["joint"] if joint else reports[recording.name]
        path = os.path.join(outdir, f"{recording.name}_overlay.svg")
        _overlay(path, cfg, recording, report.mu_hat)

    mu_hat = np.mean([report.mu_hat.mu for report in reports.values()], axis=0)
    _write_json(
        os.path.join(outdir, "identify.json"),
        {
            "solver": solver,
            "joint": joint,
            "mu_hat": [float(v) for v in mu_hat],
            "runs": {name: _run_entry(report, args.timings) for name, report in reports.items()},
        },
    )
    converged = all(report.converged for report in reports.values())
    return EXIT_OK if converged else EXIT_NOT_CONVERGED


def cmd_gradcheck(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    outdir = _output_dir(args, cfg)
    problem = _problem(cfg, args.trajectory)
    if args.mu:
        x = np.asarray(args.mu, dtype=float)
    else:
        x = np.random.default_rng(cfg.seed).uniform(0.1, 1.9, size=4)
    check = gradient_check(problem, x, h=args.h)
    write_table(
        os.path.join(outdir, "gradcheck.csv"),
        {
            "component": list(range(1, 5)),
            "analytic": check.analytic,
            "numeric": check.numeric,
            "rel_err": check.rel_err,
        },
    )
    print("component      analytic       numeric       rel_err")
    for j in range(4):
        row = (j + 1, check.analytic[j], check.numeric[j], check.rel_err[j])
        print("%9d %13.6e %13.6e %13.3e" % row)
    passed = check.passed(args.tolerance)
    print("PASS" if passed else "FAIL")
    return EXIT_OK if passed else EXIT_NOT_CONVERGED


def _reference_curve(args: argparse.Namespace, cfg: ExperimentConfig) -> ReferenceCurve:
    if args.curve == "file":
        if not args.vertices:
            raise InputError("--curve file needs --vertices")
        return ReferenceCurve(
            "polyline",
            duration=cfg.control.duration,
            rate=cfg.control.rate,
            vertices=read_vertices(args.vertices),
        )
    if args.curve in cfg.curves:
        return cfg.curves[args.curve]
    if args.curve in ("circle", "eight"):
        return ReferenceCurve(args.curve, duration=cfg.control.duration, rate=cfg.control.rate)
    raise InputError(f"unknown curve {args.curve!r}")


def _load_mu_file(path: str) -> FrictionCoeffs:
    try:
        with open(path, encoding="utf-8") as f:
            document = json.load(f)
        return FrictionCoeffs(document.get("mu_hat", document.get("mu")))
    except (OSError, json.JSONDecodeError, TypeError) as exc:
        raise InputError(f"cannot read friction from {path}: {exc}")


def _net_path(args: argparse.Namespace, cfg: ExperimentConfig) -> str:
    path = args.net or cfg.follow.net_file
    if not path or not os.path.exists(path):
        raise InputError(f"friction net file not found: {path}")
    return path


def cmd_follow(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    outdir = _output_dir(args, cfg)
    curve = _reference_curve(args, cfg)
    options = PlanOptions(
        steps_per_segment=cfg.control.steps_per_segment,
        omega_limit=cfg.control.omega_limit,
        mode=cfg.control.mode,
        weights=cfg.weights,
        solver=cfg.identify.quasi_newton,
    )

    if args.mu_source == "net":
        net = Mlp.load(_net_path(args, cfg))
        # the friction depends on the commands: predict, plan, then predict from the plan
        mu = predict_friction(net, np.zeros(4))
        plan, report = plan_controls(cfg.robot, mu, curve, options=options)
        mu = predict_friction(net, representative_command(plan.schedule()))
    elif args.mu_source == "file":
        path = args.mu_file or cfg.follow.mu_file
        if not path:
            raise InputError("--mu-source file needs --mu-file or follow.mu_file")
        mu = _load_mu_file(path)
    else:
        if cfg.follow.mu is None:
            raise InputError("--mu-source config needs follow.mu")
        mu = FrictionCoeffs(cfg.follow.mu)
    plan, report = plan_controls(cfg.robot, mu, curve, options=options)

    mu_true = FrictionCoeffs(args.mu_true) if args.mu_true else mu
    trajectory, tracking = rollout(cfg.robot, mu_true, plan)

    segments = plan.omega_s
    write_table(
        os.path.join(outdir, "plan.csv"),
        {
            "t": plan.segment_times[:-1],
            "w1": segments[:, 0],
            "w2": segments[:, 1],
            "w3": segments[:, 2],
            "w4": segments[:, 3],
        },
    )
    write_trajectory(os.path.join(outdir, "rollout.csv"), trajectory)
    series = [
        Series("reference", plan.waypoints.xy, "#ff7f0e"),
        Series("predicted", plan.predicted.xy, "#1f77b4"),
        Series("rollout", trajectory.xy, "#2ca02c"),
    ]
    summary: Dict[str, Any] = {
        "mu": mu.to_list(),
        "mu_true": mu_true.to_list(),
        "plan": report.to_dict(include_timing=args.timings),
        "predicted": asdict(plan.tracking),
        "rollout": asdict(tracking),
    }
    if args.baseline_net:
        baseline = Mlp.load(args.baseline_net)
        _, baseline_trajectory = baseline_rollout(
            baseline,
            cfg.robot,
            mu_true,
            plan.waypoints,
            plan.predicted.pose(0),
            options.steps_per_segment,
        )
        series.append(Series("data-driven baseline", baseline_trajectory.xy, "#d62728"))
        write_trajectory(os.path.join(outdir, "baseline.csv"), baseline_trajectory)
    write_svg(os.path.join(outdir, "follow.svg"), series, title="Path following")
    _write_json(os.path.join(outdir, "follow.json"), summary)
    return EXIT_OK if report.converged else EXIT_NOT_CONVERGED


def cmd_sweep(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    outdir = _output_dir(args, cfg)
    problem = _problem(cfg, args.trajectory)
    fractions = args.fractions or cfg.sweep_fractions
    points = data_efficiency_sweep(problem, fractions, cfg.identify.x0, cfg.identify.quasi_newton)
    write_table(
        os.path.join(outdir, "sweep.csv"),
        {
            "fraction": [p.fraction for p in points],
            "final_loss": [p.final_loss for p in points],
            "samples": [p.samples for p in points],
            "iterations": [p.report.iterations for p in points],
        },
    )
    if points:
        write_svg(
            os.path.join(outdir, "sweep.svg"),
            [Series("full-data loss", np.array([[p.fraction, p.final_loss] for p in points]))],
            title="Loss against fraction of training data",
            equal_aspect=False,
        )
    converged = all(p.report.converged for p in points)
    return EXIT_OK if converged else EXIT_NOT_CONVERGED


def cmd_train_net(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    outdir = _output_dir(args, cfg)
    problem = _problem(cfg, args.trajectory)
    schedules = [r.schedule for r in problem.recordings]
    if args.baseline:
        result = train_baseline(
            schedules,
            [r.track for r in problem.recordings],
            cfg.robot.omega_max,
            1.0 / cfg.control.rate,
            cfg.frictionnet,
        )
        path = os.path.join(outdir, "baseline_net.json")
    else:
        reports = identify_each(
            problem, "qn", cfg.identify.x0, cfg.identify.quasi_newton, cfg.identify.jobs
        )
        estimates = [r.mu_hat for r in reports]
        result = train_friction_net(cfg.robot, schedules, estimates, cfg.frictionnet)
        path = os.path.join(outdir, "friction_net.json")
    result.net.save(path)
    write_table(
        os.path.join(outdir, os.path.basename(path).replace(".json", "_history.csv")),
        {"epoch": list(range(len(result.history))), "loss": result.history},
    )
    return EXIT_OK


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="experiment configuration (JSON)")
    parser.add_argument("--out", help="output directory, overrides output_dir")


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mecanum-sysid",
        description="Friction identification and path following for a mecanum robot.",
    )
    parser.add_argument(
        "--log-level",
        default="WARNING",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="logging verbosity (default WARNING)",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    simulate_parser = subparsers.add_parser(
        "simulate", help="predict a trajectory from a control file"
    )
    _add_common(simulate_parser)
    simulate_parser.add_argument("--controls", required=True, help="control CSV")
    simulate_parser.add_argument(
        "--mu", type=float, nargs=4, help="friction coefficients (default 0)"
    )
    simulate_parser.add_argument(
        "--start", type=float, nargs=3, default=[0.0, 0.0, 0.0], metavar=("X", "Y", "THETA")
    )
    simulate_parser.set_defaults(handler=cmd_simulate)

    identify_parser = subparsers.add_parser("identify", help="identify friction coefficients")
    _add_common(identify_parser)
    identify_parser.add_argument("--solver", choices=["qn", "nm", "cmaes"])
    identify_parser.add_argument("--trajectory", action="append", help="configured trajectory name")
    identify_parser.add_argument(
        "--joint", action="store_true", help="one estimate for all trajectories"
    )
    identify_parser.add_argument("--jobs", type=int, help="parallel identifications")
    identify_parser.add_argument("--timings", action="store_true", help="include wall times")
    identify_parser.set_defaults(handler=cmd_identify)

    gradcheck_parser = subparsers.add_parser(
        "gradcheck", help="compare analytic and numeric gradients"
    )
    _add_common(gradcheck_parser)
    gradcheck_parser.add_argument("--trajectory", action="append")
    gradcheck_parser.add_argument(
        "--mu", type=float, nargs=4, help="point to check (default random)"
    )
    gradcheck_parser.add_argument("--h", type=float, default=1e-6, help="finite-difference step")
    gradcheck_parser.add_argument("--tolerance", type=float, default=1e-4)
    gradcheck_parser.set_defaults(handler=cmd_gradcheck)

    follow_parser = subparsers.add_parser("follow", help="plan and roll out controls for a curve")
    _add_common(follow_parser)
    follow_parser.add_argument(
        "--curve", default="circle", help="configured curve name, circle, eight or file"
    )
    follow_parser.add_argument("--vertices", help="x,y CSV for --curve file")
    follow_parser.add_argument("--mu-source", choices=["config", "file", "net"], default="config")
    follow_parser.add_argument("--mu-file", help="JSON with mu_hat, e.g. identify.json")
    follow_parser.add_argument("--net", help="friction net JSON")
    follow_parser.add_argument(
        "--mu-true", type=float, nargs=4, help="friction used for the rollout"
    )
    follow_parser.add_argument("--baseline-net", help="also roll out this data-driven baseline")
    follow_parser.add_argument("--timings", action="store_true")
    follow_parser.set_defaults(handler=cmd_follow)

    sweep_parser = subparsers.add_parser("sweep", help="data-efficiency sweep")
    _add_common(sweep_parser)
    sweep_parser.add_argument("--trajectory", action="append")
    sweep_parser.add_argument("--fractions", type=float, nargs="+")
    sweep_parser.set_defaults(handler=cmd_sweep)

    train_parser = subparsers.add_parser("train-net", help="train the friction net or the baseline")
    _add_common(train_parser)
    train_parser.add_argument("--trajectory", action="append")
    train_parser.add_argument(
        "--baseline", action="store_true", help="train the data-driven baseline"
    )
    train_parser.set_defaults(handler=cmd_train_net)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = make_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level))
    handler: Callable[[argparse.Namespace], int] = args.handler
    try:
        return handler(args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
    except TrainingDivergedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NOT_CONVERGED
    except (InputError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
    return EXIT_INPUT_ERROR


if __name__ == "__main__":
    sys.exit(main())
