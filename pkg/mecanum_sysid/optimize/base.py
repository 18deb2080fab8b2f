import logging

from dataclasses import dataclass
from dataclasses import field
from typing import Any
from typing import Dict
from typing import List
from typing import Optional
from typing import Sequence
from typing import Tuple

import numpy as np

from mecanum_sysid.grad import recording_gradient_mu
from mecanum_sysid.loss import LossReport
from mecanum_sysid.loss import LossWeights
from mecanum_sysid.loss import Recording
from mecanum_sysid.loss import evaluate_loss
from mecanum_sysid.model import ArrayLike
from mecanum_sysid.model import FrictionCoeffs
from mecanum_sysid.model import MU_LOWER
from mecanum_sysid.model import MU_UPPER
from mecanum_sysid.model import NUM_WHEELS
from mecanum_sysid.model import RobotParams


logger = logging.getLogger(__name__)


DEFAULT_X0 = (1.0, 1.0, 1.0, 1.0)
MIN_SAMPLES = 2


class IdentificationProblem:
    """Friction identification over one or more recordings.

    The loss of a multi-recording problem is the sum of the per-recording
    losses, and so is its gradient.

    :param recordings: The (schedule, track) pairs to fit.
    :param params: Robot constants shared by every recording.
    :param weights: Spline and ground-truth weights of the loss.
    :param lower: Lower bound of every coefficient, scalar or 4-vector.
    :param upper: Upper bound of every coefficient, scalar or 4-vector.
    """

    def __init__(
        self,
        recordings: Sequence[Recording],
        params: RobotParams,
        weights: LossWeights = LossWeights(),
        lower: ArrayLike = MU_LOWER,
        upper: ArrayLike = MU_UPPER,
    ):
        if not recordings:
            raise ValueError("An identification problem needs at least one recording")
        self.recordings = list(recordings)
        self.params = params
        self.weights = weights
        self.lower = np.broadcast_to(np.asarray(lower, dtype=float), (NUM_WHEELS,)).copy()
        self.upper = np.broadcast_to(np.asarray(upper, dtype=float), (NUM_WHEELS,)).copy()
        if np.any(self.lower >= self.upper):
            raise ValueError(f"Lower bounds {self.lower} must be below upper bounds {self.upper}")
        if np.any(self.lower < MU_LOWER) or np.any(self.upper > MU_UPPER):
            raise ValueError(f"Bounds must lie inside [{MU_LOWER}, {MU_UPPER}]")

    def __repr__(self) -> str:
        names = ", ".join(r.name or "?" for r in self.recordings)
        return f"<IdentificationProblem [{names}]>"

    @property
    def dimension(self) -> int:
        return NUM_WHEELS

    @property
    def samples(self) -> int:
        return sum(len(r.track) for r in self.recordings)

    def project(self, x: ArrayLike) -> np.ndarray:
        return np.clip(np.asarray(x, dtype=float), self.lower, self.upper)

    def loss_report(self, x: ArrayLike) -> LossReport:
        mu = FrictionCoeffs(self.project(x))
        reports = [evaluate_loss(r, self.params, mu, self.weights) for r in self.recordings]
        total = reports[0]
        for report in reports[1:]:
            total = total + report
        return total

    def loss(self, x: ArrayLike) -> float:
        return self.loss_report(x).total

    def loss_and_gradient(self, x: ArrayLike) -> Tuple[float, np.ndarray]:
        mu = self.project(x)
        loss = 0.0
        gradient = np.zeros(NUM_WHEELS)
        for recording in self.recordings:
            report, g = recording_gradient_mu(recording, self.params, mu, self.weights)
            loss += report.total
            gradient += g
        return loss, gradient

    def with_recordings(self, recordings: Sequence[Recording]) -> "IdentificationProblem":
        return IdentificationProblem(recordings, self.params, self.weights, self.lower, self.upper)

    def split(self) -> List["IdentificationProblem"]:
        """One single-recording problem per recording."""
        return [self.with_recordings([r]) for r in self.recordings]

    def truncated(self, fraction: float) -> Optional["IdentificationProblem"]:
        """Keep the earliest ``fraction`` of every recording's ground-truth samples.

        Recordings left with fewer than two samples are dropped; returns
        None when none is left.
        """
        if not 0.0 < fraction <= 1.0:
            raise ValueError(f"Fraction must lie in (0, 1], got {fraction}")
        recordings = []
        for recording in self.recordings:
            count = int(np.floor(fraction * len(recording.track) + 1e-9))
            if count < MIN_SAMPLES:
                logger.warning(
                    "Fraction %s keeps %d samples of recording %r, skipping it",
                    fraction,
                    count,
                    recording.name,
                )
                continue
            if count < len(recording.track):
                recording = recording.prefix(count)
            recordings.append(recording)
        if not recordings:
            return None
        return self.with_recordings(recordings)


@dataclass(frozen=True)
class SolveReport:
    """Outcome of one solver run.

    ``solution`` is expressed in the problem's own variables (friction
    coefficients for identification, segment controls for planning).
    ``loss_curve`` holds ``(iteration, best loss so far)`` pairs.
    """

    solution: np.ndarray
    final_loss: float
    iterations: int
    function_evals: int
    gradient_evals: int
    wall_time: float
    loss_curve: List[Tuple[int, float]]
    converged: bool
    solver: str
    message: str = ""
    extra: Dict[str, Any] = field(default_factory=dict)

    @property
    def mu_hat(self) -> FrictionCoeffs:
        return FrictionCoeffs(np.clip(self.solution, MU_LOWER, MU_UPPER))

    def to_dict(self, include_timing: bool = False) -> Dict[str, Any]:
        """JSON-ready summary; ``wall_time`` only with ``include_timing``."""
        result: Dict[str, Any] = {
            "solver": self.solver,
            "solution": [float(v) for v in self.solution],
            "final_loss": float(self.final_loss),
            "iterations": self.iterations,
            "function_evals": self.function_evals,
            "gradient_evals": self.gradient_evals,
            "converged": self.converged,
            "message": self.message,
        }
        if include_timing:
            result["wall_time"] = self.wall_time
        return result


class Solver:
    """Base interface for identification solvers."""

    name = ""

    def solve(self, problem: IdentificationProblem, x0: ArrayLike = DEFAULT_X0) -> SolveReport:
        """Minimize the problem's loss starting from ``x0``.

        Never raises on non-convergence; the returned report carries
        ``converged=False`` instead.

        :param problem: The problem to solve.
        :param x0: Starting friction coefficients, inside the problem's box.
        """
        raise NotImplementedError

    def _check_start(self, problem: IdentificationProblem, x0: ArrayLike) -> np.ndarray:
        x0 = np.asarray(x0, dtype=float).reshape(-1)
        if x0.shape != (problem.dimension,):
            raise ValueError(f"Expected {problem.dimension} starting values, got {x0.size}")
        if np.any(x0 < problem.lower) or np.any(x0 > problem.upper):
            raise ValueError(f"Starting point {x0} lies outside the bounds")
        return x0
