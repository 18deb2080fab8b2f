"""Limited-memory BFGS with projection onto a box.

Thin wrapper over scipy's L-BFGS-B that adds evaluation counting, a per
iteration loss curve and normalized stop reasons. The line search enforces
sufficient decrease together with a curvature condition; when no step along
the search direction satisfies it the run ends unconverged with the last
accepted iterate.
"""
import logging
import time

from dataclasses import dataclass
from typing import Callable
from typing import Dict
from typing import Tuple

import numpy as np

from scipy.optimize import minimize

from mecanum_sysid.model import ArrayLike
from mecanum_sysid.optimize.base import DEFAULT_X0
from mecanum_sysid.optimize.base import IdentificationProblem
from mecanum_sysid.optimize.base import SolveReport
from mecanum_sysid.optimize.base import Solver


logger = logging.getLogger(__name__)


FunctionAndGradient = Callable[[np.ndarray], Tuple[float, np.ndarray]]

# Keywords of scipy stop messages mapped to stable reasons.
STOP_REASONS = (
    ("PROJECTED", "projected gradient below tolerance"),
    ("REDUCTION", "relative loss decrease below tolerance"),
    ("ABNORMAL", "line search failed"),
    ("LNSRCH", "line search failed"),
    ("ITERATIONS", "iteration limit reached"),
    ("EVALUATIONS", "evaluation limit reached"),
)


@dataclass(frozen=True)
class QuasiNewtonOptions:
    memory: int = 10
    max_iterations: int = 200
    pgtol: float = 1e-8
    ftol: float = 1e7 * float(np.finfo(float).eps)
    max_backtracks: int = 20
    max_evaluations: int = 15000

    def __post_init__(self) -> None:
        if self.memory < 1:
            raise ValueError("memory must be at least 1")
        if self.max_iterations < 0:
            raise ValueError("max_iterations must be non-negative")
        if self.max_backtracks < 1:
            raise ValueError("max_backtracks must be at least 1")


def _stop_reason(message: object) -> str:
    if isinstance(message, bytes):
        message = message.decode("ascii", "replace")
    text = str(message).upper()
    for keyword, reason in STOP_REASONS:
        if keyword in text:
            return reason
    return str(message).lower()


class _CountingObjective:
    """Counts evaluations and remembers the loss of every point visited."""

    def __init__(self, fun: FunctionAndGradient):
        self.fun = fun
        self.evals = 0
        self.losses: Dict[bytes, float] = {}

    def __call__(self, x: np.ndarray) -> Tuple[float, np.ndarray]:
        f, g = self.fun(np.array(x, dtype=float))
        self.evals += 1
        f = float(f)
        self.losses[np.asarray(x, dtype=float).tobytes()] = f
        return f, np.asarray(g, dtype=float)

    def loss(self, x: np.ndarray) -> float:
        key = np.asarray(x, dtype=float).tobytes()
        if key not in self.losses:
            self(x)
        return self.losses[key]


def minimize_box(
    fun: FunctionAndGradient,
    x0: ArrayLike,
    lower: ArrayLike,
    upper: ArrayLike,
    options: QuasiNewtonOptions = QuasiNewtonOptions(),
    name: str = "qn",
) -> SolveReport:
    """Minimize ``fun`` over the box ``[lower, upper]``.

    :param fun: Returns the objective and its gradient at a point.
    :param x0: Starting point; clipped into the box.
    """
    start = time.perf_counter()
    lower = np.broadcast_to(np.asarray(lower, dtype=float), np.shape(x0))
    upper = np.broadcast_to(np.asarray(upper, dtype=float), np.shape(x0))
    x = np.clip(np.asarray(x0, dtype=float), lower, upper)
    objective = _CountingObjective(fun)
    curve = [(0, objective.loss(x))]

    if options.max_iterations == 0:
        return SolveReport(
            solution=x,
            final_loss=curve[0][1],
            iterations=0,
            function_evals=objective.evals,
            gradient_evals=objective.evals,
            wall_time=time.perf_counter() - start,
            loss_curve=curve,
            converged=False,
            solver=name,
            message="iteration limit reached",
        )

    def record(xk: np.ndarray) -> None:
        curve.append((len(curve), objective.loss(xk)))
        logger.debug("%s iteration %d: loss %.12g", name, len(curve) - 1, curve[-1][1])

    result = minimize(
        objective,
        x,
        method="L-BFGS-B",
        jac=True,
        bounds=list(zip(lower.ravel(), upper.ravel())),
        callback=record,
        options={
            "maxcor": options.memory,
            "maxiter": options.max_iterations,
            "maxfun": options.max_evaluations,
            "gtol": options.pgtol,
            "ftol": options.ftol,
            "maxls": options.max_backtracks,
        },
    )
    solution = np.clip(np.asarray(result.x, dtype=float).reshape(x.shape), lower, upper)
    message = _stop_reason(result.message)
    converged = result.status == 0
    if message == "line search failed":
        logger.warning("%s line search failed after %d iterations", name, len(curve) - 1)

    return SolveReport(
        solution=solution,
        final_loss=objective.loss(solution),
        iterations=int(result.nit),
        function_evals=objective.evals,
        gradient_evals=objective.evals,
        wall_time=time.perf_counter() - start,
        loss_curve=curve,
        converged=bool(converged),
        solver=name,
        message=message,
    )


class QuasiNewtonSolver(Solver):
    """Box-constrained L-BFGS on the analytic friction gradient."""

    name = "qn"

    def __init__(self, options: QuasiNewtonOptions = QuasiNewtonOptions()):
        self.options = options

    def solve(self, problem: IdentificationProblem, x0: ArrayLike = DEFAULT_X0) -> SolveReport:
        x0 = self._check_start(problem, x0)
        return minimize_box(
            problem.loss_and_gradient, x0, problem.lower, problem.upper, self.options, self.name
        )
