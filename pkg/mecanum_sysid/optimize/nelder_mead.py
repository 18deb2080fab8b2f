import logging
import time

from dataclasses import dataclass
from typing import List
from typing import Tuple

import numpy as np

from scipy.optimize import minimize
from scipy.special import expit
from scipy.special import logit

from mecanum_sysid.model import ArrayLike
from mecanum_sysid.model import MU_UPPER
from mecanum_sysid.optimize.base import DEFAULT_X0
from mecanum_sysid.optimize.base import IdentificationProblem
from mecanum_sysid.optimize.base import SolveReport
from mecanum_sysid.optimize.base import Solver


logger = logging.getLogger(__name__)


SIGMOID_MARGIN = 1e-9


def to_raw(mu: ArrayLike) -> np.ndarray:
    """Unconstrained variable whose ``2 * sigmoid`` is ``mu``."""
    fraction = np.asarray(mu, dtype=float) / MU_UPPER
    return logit(np.clip(fraction, SIGMOID_MARGIN, 1 - SIGMOID_MARGIN))


def from_raw(raw: ArrayLike) -> np.ndarray:
    return MU_UPPER * expit(np.asarray(raw, dtype=float))


class BestSoFar:
    """Objective wrapper keeping the lowest loss seen and its point."""

    def __init__(self, problem: IdentificationProblem):
        self.problem = problem
        self.evals = 0
        self.best = np.inf
        self.best_raw = np.zeros(problem.dimension)

    def __call__(self, raw: np.ndarray) -> float:
        self.evals += 1
        loss = self.problem.loss(from_raw(raw))
        if loss < self.best:
            self.best = loss
            self.best_raw = np.array(raw, dtype=float)
        return loss


@dataclass(frozen=True)
class NelderMeadOptions:
    edge: float = 0.25
    max_evals: int = 2000
    xatol: float = 1e-8


class NelderMeadSolver(Solver):
    """Simplex search on the sigmoid-mapped coefficients.

    The search runs in the unconstrained variable ``mu_raw`` with
    ``mu = 2 * sigmoid(mu_raw)``, so any simplex vertex is a valid friction
    vector. It stops once every vertex lies within ``xatol`` of the best one.
    """

    name = "nm"

    def __init__(self, options: NelderMeadOptions = NelderMeadOptions()):
        self.options = options

    def solve(self, problem: IdentificationProblem, x0: ArrayLike = DEFAULT_X0) -> SolveReport:
        start = time.perf_counter()
        raw0 = to_raw(self._check_start(problem, x0))
        simplex = np.vstack((raw0, raw0 + self.options.edge * np.eye(raw0.size)))
        objective = BestSoFar(problem)
        curve: List[Tuple[int, float]] = []

        def record(_: np.ndarray) -> None:
            curve.append((len(curve) + 1, objective.best))

        objective(raw0)
        curve.append((0, objective.best))
        result = minimize(
            objective,
            raw0,
            method="Nelder-Mead",
            callback=record,
            options={
                "initial_simplex": simplex,
                "xatol": self.options.xatol,
                "fatol": np.inf,
                "maxfev": self.options.max_evals,
                "maxiter": self.options.max_evals,
                "adaptive": False,
            },
        )
        if not result.success:
            logger.warning("Nelder-Mead did not converge: %s", result.message)
        return SolveReport(
            solution=from_raw(objective.best_raw),
            final_loss=objective.best,
            iterations=int(result.nit),
            function_evals=objective.evals,
            gradient_evals=0,
            wall_time=time.perf_counter() - start,
            loss_curve=curve,
            converged=bool(result.success),
            solver=self.name,
            message=str(result.message),
        )
