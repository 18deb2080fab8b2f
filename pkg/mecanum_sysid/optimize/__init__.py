"""Friction identification solvers and the experiments built on them."""
import logging

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable
from typing import Dict
from typing import List
from typing import Optional
from typing import Sequence
from typing import Type

import numpy as np

from mecanum_sysid.model import ArrayLike
from mecanum_sysid.optimize.base import DEFAULT_X0
from mecanum_sysid.optimize.base import IdentificationProblem
from mecanum_sysid.optimize.base import SolveReport
from mecanum_sysid.optimize.base import Solver
from mecanum_sysid.optimize.cmaes import CmaesOptions
from mecanum_sysid.optimize.cmaes import CmaesSolver
from mecanum_sysid.optimize.nelder_mead import NelderMeadOptions
from mecanum_sysid.optimize.nelder_mead import NelderMeadSolver
from mecanum_sysid.optimize.quasi_newton import QuasiNewtonOptions
from mecanum_sysid.optimize.quasi_newton import QuasiNewtonSolver
from mecanum_sysid.optimize.quasi_newton import minimize_box
from mecanum_sysid.prometheus_metrics import record_solve

logger = logging.getLogger(__name__)


__all__ = [
    "CmaesOptions",
    "CmaesSolver",
    "DEFAULT_X0",
    "GradientCheck",
    "IdentificationProblem",
    "NelderMeadOptions",
    "NelderMeadSolver",
    "QuasiNewtonOptions",
    "QuasiNewtonSolver",
    "SolveReport",
    "Solver",
    "SweepPoint",
    "data_efficiency_sweep",
    "gradient_check",
    "identify",
    "identify_cmaes",
    "identify_each",
    "identify_nelder_mead",
    "identify_quasi_newton",
    "minimize_box",
    "solver_class_map",
    "truncate_problem",
]


solver_class_map: Dict[str, Type[Solver]] = {
    "qn": QuasiNewtonSolver,
    "nm": NelderMeadSolver,
    "cmaes": CmaesSolver,
}


def make_solver(name: str, options: Optional[object] = None) -> Solver:
    """Build the solver registered under ``name``, with its default options unless given."""
    try:
        solver_class = solver_class_map[name]
    except KeyError:
        raise ValueError(f"Unknown solver {name!r}, expected one of {sorted(solver_class_map)}")
    if options is None:
        return solver_class()
    return solver_class(options)  # type: ignore


def identify(
    problem: IdentificationProblem,
    solver: str = "qn",
    x0: ArrayLike = DEFAULT_X0,
    options: Optional[object] = None,
) -> SolveReport:
    """Identify friction coefficients for ``problem`` with the named solver."""
    report = make_solver(solver, options).solve(problem, x0)
    record_solve(report.solver, report.converged, report.wall_time)
    logger.info(
        "%s on %r: %d iterations, %d function / %d gradient evaluations, loss %.6g, converged=%s",
        report.solver,
        problem,
        report.iterations,
        report.function_evals,
        report.gradient_evals,
        report.final_loss,
        report.converged,
    )
    return report


def identify_quasi_newton(
    problem: IdentificationProblem,
    x0: ArrayLike = DEFAULT_X0,
    options: QuasiNewtonOptions = QuasiNewtonOptions(),
) -> SolveReport:
    return identify(problem, "qn", x0, options)


def identify_nelder_mead(
    problem: IdentificationProblem,
    x0: ArrayLike = DEFAULT_X0,
    options: NelderMeadOptions = NelderMeadOptions(),
) -> SolveReport:
    return identify(problem, "nm", x0, options)


def identify_cmaes(
    problem: IdentificationProblem,
    x0: ArrayLike = DEFAULT_X0,
    options: CmaesOptions = CmaesOptions(),
) -> SolveReport:
    return identify(problem, "cmaes", x0, options)


def identify_each(
    problem: IdentificationProblem,
    solver: str = "qn",
    x0: ArrayLike = DEFAULT_X0,
    options: Optional[object] = None,
    jobs: int = 1,
) -> List[SolveReport]:
    """Identify every recording of ``problem`` separately.

    Reports come back in recording order. With ``jobs > 1`` the runs share
    a thread pool; solvers hold no shared state.
    """
    problems = problem.split()
    if jobs <= 1:
        return [identify(p, solver, x0, options) for p in problems]
    with ThreadPoolExecutor(max_workers=jobs) as executor:
        return list(executor.map(lambda p: identify(p, solver, x0, options), problems))


@dataclass(frozen=True)
class GradientCheck:
    analytic: np.ndarray
    numeric: np.ndarray
    rel_err: np.ndarray
    h: float

    @property
    def max_rel_err(self) -> float:
        return float(np.max(self.rel_err))

    def passed(self, tolerance: float = 1e-4) -> bool:
        return self.max_rel_err <= tolerance


def gradient_check(
    problem: IdentificationProblem,
    x: ArrayLike,
    h: float = 1e-6,
    gradient: Optional[Callable[[np.ndarray], np.ndarray]] = None,
) -> GradientCheck:
    """Compare the analytic gradient with central differences of the loss.

    ``rel_err`` is ``|a - n| / max(|a|, |n|, 1e-3)``, so components near
    zero are compared in absolute terms.

    :param gradient: Replaces the analytic gradient under test.
    """
    x = np.asarray(x, dtype=float)
    if np.any(x - h < problem.lower) or np.any(x + h > problem.upper):
        raise ValueError(f"Point {x} must lie inside the bounds by more than h={h}")
    if gradient is None:
        analytic = problem.loss_and_gradient(x)[1]
    else:
        analytic = np.asarray(gradient(x), dtype=float)
    numeric = np.empty_like(x)
    for j in range(x.size):
        step = np.zeros_like(x)
        step[j] = h
        numeric[j] = (problem.loss(x + step) - problem.loss(x - step)) / (2.0 * h)
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-3)
    return GradientCheck(analytic, numeric, np.abs(analytic - numeric) / scale, h)


def truncate_problem(
    problem: IdentificationProblem, fraction: float
) -> Optional[IdentificationProblem]:
    return problem.truncated(fraction)


@dataclass(frozen=True)
class SweepPoint:
    fraction: float
    final_loss: float
    samples: int
    report: SolveReport


def data_efficiency_sweep(
    problem: IdentificationProblem,
    fractions: Sequence[float],
    x0: ArrayLike = DEFAULT_X0,
    options: QuasiNewtonOptions = QuasiNewtonOptions(),
) -> List[SweepPoint]:
    """Identify from the earliest part of the data and score on all of it.

    For every fraction the quasi-Newton solver runs on the truncated problem
    and its estimate is evaluated on the full problem. Fractions leaving no
    usable samples are skipped. Points are sorted by fraction.
    """
    points = []
    for fraction in sorted(set(float(f) for f in fractions)):
        truncated = truncate_problem(problem, fraction)
        if truncated is None:
            logger.warning("No ground-truth samples left at fraction %s, skipping it", fraction)
            continue
        report = identify_quasi_newton(truncated, x0, options)
        full_loss = problem.loss(report.solution)
        points.append(SweepPoint(fraction, full_loss, truncated.samples, report))
    return points
