"""Covariance matrix adaptation evolution strategy on the sigmoid-mapped coefficients.

A (mu/mu_w, lambda) strategy with cumulative step-size adaptation and rank-one
plus rank-mu covariance updates.
"""
import logging
import time

from dataclasses import dataclass
from typing import List
from typing import Tuple

import numpy as np

from mecanum_sysid.model import ArrayLike
from mecanum_sysid.optimize.base import DEFAULT_X0
from mecanum_sysid.optimize.base import IdentificationProblem
from mecanum_sysid.optimize.base import SolveReport
from mecanum_sysid.optimize.base import Solver
from mecanum_sysid.optimize.nelder_mead import BestSoFar
from mecanum_sysid.optimize.nelder_mead import from_raw
from mecanum_sysid.optimize.nelder_mead import to_raw


logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class CmaesOptions:
    population: int = 8
    sigma0: float = 0.3
    max_evals: int = 5000
    tolfun: float = 1e-10
    seed: int = 42

    def __post_init__(self) -> None:
        if self.population < 2:
            raise ValueError("population must be at least 2")
        if self.sigma0 <= 0:
            raise ValueError("sigma0 must be positive")


class CmaesSolver(Solver):
    name = "cmaes"

    def __init__(self, options: CmaesOptions = CmaesOptions()):
        self.options = options

    def solve(self, problem: IdentificationProblem, x0: ArrayLike = DEFAULT_X0) -> SolveReport:
        start = time.perf_counter()
        options = self.options
        rng = np.random.default_rng(options.seed)
        objective = BestSoFar(problem)

        n = problem.dimension
        popsize = options.population
        parents = popsize // 2
        weights = np.log(parents + 0.5) - np.log(np.arange(1, parents + 1))
        weights /= np.sum(weights)
        mueff = np.sum(weights) ** 2 / np.sum(weights ** 2)

        cc = (4.0 + mueff / n) / (n + 4.0 + 2.0 * mueff / n)
        cs = (mueff + 2.0) / (n + mueff + 5.0)
        c1 = 2.0 / ((n + 1.3) ** 2 + mueff)
        cmu = min(1.0 - c1, 2.0 * (mueff - 2.0 + 1.0 / mueff) / ((n + 2.0) ** 2 + mueff))
        damps = 1.0 + 2.0 * max(0.0, np.sqrt((mueff - 1.0) / (n + 1.0)) - 1.0) + cs
        chin = np.sqrt(n) * (1.0 - 1.0 / (4.0 * n) + 1.0 / (21.0 * n ** 2))

        xmean = to_raw(self._check_start(problem, x0))
        sigma = options.sigma0
        pc = np.zeros(n)
        ps = np.zeros(n)
        B = np.eye(n)
        D = np.ones(n)
        C = np.eye(n)
        invsqrtC = np.eye(n)
        eigeneval = 0

        curve: List[Tuple[int, float]] = []
        generation = 0
        converged = False
        message = "evaluation budget exhausted"
        while objective.evals + popsize <= options.max_evals:
            generation += 1
            z = rng.standard_normal((popsize, n))
            arx = xmean + sigma * (z * D) @ B.T
            fitness = np.array([objective(x) for x in arx])
            order = np.argsort(fitness, kind="stable")
            xold = xmean
            xmean = weights @ arx[order[:parents]]
            curve.append((generation, objective.best))

            step = invsqrtC @ (xmean - xold) / sigma
            ps = (1.0 - cs) * ps + np.sqrt(cs * (2.0 - cs) * mueff) * step
            decay = 1.0 - (1.0 - cs) ** (2.0 * objective.evals / popsize)
            norm_ps = np.linalg.norm(ps) / np.sqrt(decay)
            hsig = norm_ps / chin < 1.4 + 2.0 / (n + 1.0)
            pc = (1.0 - cc) * pc
            if hsig:
                pc += np.sqrt(cc * (2.0 - cc) * mueff) * (xmean - xold) / sigma

            artmp = (arx[order[:parents]] - xold) / sigma
            rank_mu = artmp.T @ np.diag(weights) @ artmp
            rank_one = np.outer(pc, pc)
            if not hsig:
                rank_one += cc * (2.0 - cc) * C
            C = (1.0 - c1 - cmu) * C + c1 * rank_one + cmu * rank_mu
            sigma *= np.exp((cs / damps) * (np.linalg.norm(ps) / chin - 1.0))

            if objective.evals - eigeneval > popsize / (c1 + cmu) / n / 10.0:
                eigeneval = objective.evals
                C = np.triu(C) + np.triu(C, 1).T
                D, B = np.linalg.eigh(C)
                D = np.sqrt(np.maximum(D, 1e-300))
                invsqrtC = B @ np.diag(1.0 / D) @ B.T

            logger.debug(
                "cmaes generation %d: best %.12g, sigma %.3g", generation, objective.best, sigma
            )
            if fitness[order[-1]] - fitness[order[0]] < options.tolfun:
                converged = True
                message = "population loss spread below tolerance"
                break

        return SolveReport(
            solution=from_raw(objective.best_raw),
            final_loss=objective.best,
            iterations=generation,
            function_evals=objective.evals,
            gradient_evals=0,
            wall_time=time.perf_counter() - start,
            loss_curve=curve,
            converged=converged,
            solver=self.name,
            message=message,
        )
