"""Path following by optimizing piecewise-constant wheel commands.

A reference curve is cut into waypoints that are evenly spaced in time. The
control is constant between consecutive waypoints, and all segment controls
are optimized together so that the simulated robot passes the waypoints,
reusing the identification loss with the waypoints as ground truth.
"""
import logging
import math

from dataclasses import dataclass
from dataclasses import field
from typing import Optional
from typing import Tuple
from typing import Union

import numpy as np

from typing_extensions import Literal

from mecanum_sysid.grad import recording_gradient_controls
from mecanum_sysid.grad import segment_index
from mecanum_sysid.loss import LossWeights
from mecanum_sysid.loss import Recording
from mecanum_sysid.loss import SplinePath
from mecanum_sysid.loss import fit_spline
from mecanum_sysid.model import ArrayLike
from mecanum_sysid.model import ControlSchedule
from mecanum_sysid.model import FrictionCoeffs
from mecanum_sysid.model import GroundTruthTrack
from mecanum_sysid.model import NUM_WHEELS
from mecanum_sysid.model import Pose
from mecanum_sysid.model import RobotParams
from mecanum_sysid.model import Trajectory
from mecanum_sysid.model import kinematic_matrix
from mecanum_sysid.model import simulate
from mecanum_sysid.model import steady_state_omega
from mecanum_sysid.optimize import QuasiNewtonOptions
from mecanum_sysid.optimize import SolveReport
from mecanum_sysid.optimize import minimize_box
from mecanum_sysid.prometheus_metrics import record_solve


logger = logging.getLogger(__name__)


CurveKind = Literal["circle", "eight", "polyline"]
PlanMode = Literal["joint", "sequential"]


class CurveError(ValueError):
    pass


@dataclass(frozen=True)
class ReferenceCurve:
    """A planar curve driven in ``duration`` seconds past ``rate`` waypoints per second.

    * ``circle``: ``radius`` around ``center``, starting at ``start_angle``
      and sweeping the signed angle ``span`` (counter-clockwise when
      positive) at a constant angular rate.
    * ``eight``: a lemniscate of Gerono ``x = a cos t``, ``y = a sin t cos t``
      of scale ``a``, shifted to ``center``. It starts at the crossing,
      drives the right lobe then the left lobe, each lobe taking half of
      the duration; a reversed lobe is driven with decreasing ``t``.
    * ``polyline``: the ``vertices`` at a constant speed along their length.
    """

    kind: CurveKind = "circle"
    duration: float = 8.0
    rate: float = 4.0
    radius: float = 1.0
    center: Tuple[float, float] = (0.0, 0.0)
    start_angle: float = -math.pi / 2
    span: float = 2 * math.pi
    scale: float = 0.5
    right_lobe_reversed: bool = True
    left_lobe_reversed: bool = False
    vertices: Optional[np.ndarray] = field(default=None, compare=False)

    def __post_init__(self) -> None:
        if self.kind not in ("circle", "eight", "polyline"):
            raise CurveError(f"Unknown curve kind {self.kind!r}")
        if self.duration < 0 or self.rate <= 0:
            raise CurveError("Curve duration must be non-negative and rate positive")
        if self.kind == "circle" and self.radius <= 0:
            raise CurveError("Circle radius must be positive")
        if self.kind == "eight" and self.scale <= 0:
            raise CurveError("Figure-eight scale must be positive")
        if self.kind == "polyline":
            if self.vertices is None:
                raise CurveError("A polyline curve needs vertices")
            vertices = np.array(self.vertices, dtype=float).reshape(-1, 2)
            if vertices.shape[0] < 2:
                raise CurveError("need >= 2 waypoints")
            vertices.setflags(write=False)
            object.__setattr__(self, "vertices", vertices)

    @property
    def waypoint_count(self) -> int:
        return int(round(self.rate * self.duration)) + 1

    def position(self, progress: ArrayLike) -> np.ndarray:
        """Points at fractions ``progress`` in ``[0, 1]`` of the drive, shape ``(n, 2)``."""
        s = np.atleast_1d(np.asarray(progress, dtype=float))
        center = np.asarray(self.center, dtype=float)
        if self.kind == "circle":
            angle = self.start_angle + self.span * s
            return center + self.radius * np.column_stack((np.cos(angle), np.sin(angle)))
        if self.kind == "eight":
            return center + self._gerono(self._eight_parameter(s))
        return self._along_vertices(s)

    def _eight_parameter(self, s: np.ndarray) -> np.ndarray:
        right = 2.0 * np.minimum(s, 0.5)
        left = 2.0 * np.maximum(s - 0.5, 0.0)
        if self.right_lobe_reversed:
            t_right = math.pi / 2 - math.pi * right
        else:
            t_right = -math.pi / 2 + math.pi * right
        if self.left_lobe_reversed:
            t_left = 3 * math.pi / 2 - math.pi * left
        else:
            t_left = math.pi / 2 + math.pi * left
        return np.where(s <= 0.5, t_right, t_left)

    def _gerono(self, t: np.ndarray) -> np.ndarray:
        a = self.scale
        return np.column_stack((a * np.cos(t), a * np.sin(t) * np.cos(t)))

    def _along_vertices(self, s: np.ndarray) -> np.ndarray:
        assert self.vertices is not None
        lengths = np.concatenate(([0.0], np.cumsum(np.hypot(*np.diff(self.vertices, axis=0).T))))
        target = s * lengths[-1]
        return np.column_stack(
            (
                np.interp(target, lengths, self.vertices[:, 0]),
                np.interp(target, lengths, self.vertices[:, 1]),
            )
        )


def discretize(curve: ReferenceCurve, t0: float = 0.0) -> GroundTruthTrack:
    """Waypoints uniform in time, ``round(rate * duration) + 1`` of them."""
    count = curve.waypoint_count
    if count < 2:
        raise CurveError("need >= 2 waypoints")
    progress = np.linspace(0.0, 1.0, count)
    timestamps = t0 + progress * curve.duration
    return GroundTruthTrack(timestamps, curve.position(progress))


@dataclass(frozen=True)
class PlanOptions:
    steps_per_segment: int = 8
    omega_limit: Optional[float] = None
    mode: PlanMode = "joint"
    weights: LossWeights = LossWeights()
    solver: QuasiNewtonOptions = QuasiNewtonOptions()

    def __post_init__(self) -> None:
        if self.steps_per_segment < 1:
            raise ValueError("steps_per_segment must be at least 1")
        if self.omega_limit is not None and self.omega_limit <= 0:
            raise ValueError("omega_limit must be positive")
        if self.mode not in ("joint", "sequential"):
            raise ValueError(f"Unknown planning mode {self.mode!r}")


@dataclass(frozen=True)
class TrackingReport:
    """How closely a trajectory follows a reference.

    Deviations are distances from every pose to the closest point of the
    reference spline. ``waypoint_distance`` is the mean distance to the
    waypoint due at the same time. ``final_speed`` is the body speed held
    over the last interval; it is not driven to zero.
    """

    mean_deviation: float
    max_deviation: float
    waypoint_distance: float
    final_speed: float


@dataclass(frozen=True)
class ControlPlan:
    segment_times: np.ndarray
    omega_s: np.ndarray
    omega_limit: float
    steps_per_segment: int
    waypoints: GroundTruthTrack
    predicted: Trajectory
    tracking: TrackingReport

    @property
    def segments(self) -> int:
        return self.omega_s.shape[0]

    def schedule(self) -> ControlSchedule:
        return _plan_schedule(self.segment_times, self.omega_s, self.steps_per_segment)


def _plan_timestamps(segment_times: np.ndarray, steps_per_segment: int) -> np.ndarray:
    fractions = np.arange(steps_per_segment) / steps_per_segment
    inner = segment_times[:-1, None] + np.diff(segment_times)[:, None] * fractions
    return np.append(inner.ravel(), segment_times[-1])


def _plan_schedule(
    segment_times: np.ndarray, omega_s: np.ndarray, steps_per_segment: int
) -> ControlSchedule:
    return ControlSchedule(
        _plan_timestamps(segment_times, steps_per_segment),
        np.repeat(omega_s, steps_per_segment, axis=0),
    )


def tracking_report(
    params: RobotParams,
    mu: Union[FrictionCoeffs, ArrayLike],
    trajectory: Trajectory,
    schedule: ControlSchedule,
    waypoints: GroundTruthTrack,
    reference: Optional[SplinePath] = None,
) -> TrackingReport:
    reference = reference if reference is not None else fit_spline(waypoints)
    closest, _ = reference.closest_points(trajectory.xy)
    deviation = np.hypot(*(trajectory.xy - closest).T)
    due = np.searchsorted(trajectory.timestamps, waypoints.timestamps - 1e-9)
    due = np.clip(due, 0, len(trajectory) - 1)
    waypoint_distance = np.hypot(*(trajectory.xy[due] - waypoints.xy).T)
    velocity = kinematic_matrix(params) @ steady_state_omega(params, mu, schedule.omega_s[-1])
    return TrackingReport(
        mean_deviation=float(np.mean(deviation)),
        max_deviation=float(np.max(deviation)),
        waypoint_distance=float(np.mean(waypoint_distance)),
        final_speed=float(np.hypot(velocity[0], velocity[1])),
    )


class _SegmentObjective:
    """Loss and gradient over the flattened segment controls."""

    def __init__(
        self, params: RobotParams, mu: np.ndarray, recording: Recording, options: PlanOptions
    ):
        self.params = params
        self.mu = mu
        self.recording = recording
        self.options = options
        self.segment_times = recording.track.timestamps
        self.segments = segment_index(recording.schedule, self.segment_times)

    def __call__(self, x: np.ndarray) -> Tuple[float, np.ndarray]:
        omega_s = x.reshape(-1, NUM_WHEELS)
        schedule = _plan_schedule(self.segment_times, omega_s, self.options.steps_per_segment)
        report, g = recording_gradient_controls(
            self.recording.with_schedule(schedule),
            self.params,
            self.mu,
            self.segments,
            self.options.weights,
        )
        return report.total, g


def _objective(
    params: RobotParams,
    mu: np.ndarray,
    waypoints: GroundTruthTrack,
    start: Pose,
    options: PlanOptions,
) -> _SegmentObjective:
    segments = len(waypoints) - 1
    schedule = _plan_schedule(
        waypoints.timestamps, np.zeros((segments, NUM_WHEELS)), options.steps_per_segment
    )
    return _SegmentObjective(params, mu, Recording(schedule, waypoints, start=start), options)


def plan_controls(
    params: RobotParams,
    mu: Union[FrictionCoeffs, ArrayLike],
    curve: Union[ReferenceCurve, GroundTruthTrack],
    start: Optional[Pose] = None,
    options: PlanOptions = PlanOptions(),
) -> Tuple[ControlPlan, SolveReport]:
    """Optimize the segment controls that drive the model along ``curve``.

    The robot starts at the first waypoint with heading 0 unless ``start``
    is given. Every control lies in ``[-omega_limit, omega_limit]``,
    ``params.omega_max`` by default. The initial guess is all zeros. In
    ``sequential`` mode each segment is first solved alone with the earlier
    ones fixed, then all segments are polished together.
    """
    waypoints = discretize(curve) if isinstance(curve, ReferenceCurve) else curve
    if len(waypoints) < 2:
        raise CurveError("need >= 2 waypoints")
    mu = mu.mu if isinstance(mu, FrictionCoeffs) else FrictionCoeffs(mu).mu
    if start is None:
        start = Pose(float(waypoints.xy[0, 0]), float(waypoints.xy[0, 1]), 0.0)
    start = Pose(*start)
    limit = options.omega_limit if options.omega_limit is not None else params.omega_max
    segments = len(waypoints) - 1

    x0 = np.zeros(segments * NUM_WHEELS)
    warm_evals = 0
    if options.mode == "sequential":
        x0, warm_evals = _warm_start(params, mu, waypoints, start, options, limit)

    objective = _objective(params, mu, waypoints, start, options)
    report = minimize_box(objective, x0, -limit, limit, options.solver, name="plan")
    if warm_evals:
        report.extra["warm_start_evals"] = warm_evals
    record_solve(report.solver, report.converged, report.wall_time)
    logger.info(
        "Planned %d segments: %d iterations, loss %.6g, converged=%s",
        segments,
        report.iterations,
        report.final_loss,
        report.converged,
    )

    omega_s = report.solution.reshape(segments, NUM_WHEELS)
    schedule = _plan_schedule(waypoints.timestamps, omega_s, options.steps_per_segment)
    predicted = simulate(params, mu, schedule, start)
    plan = ControlPlan(
        segment_times=waypoints.timestamps,
        omega_s=omega_s,
        omega_limit=limit,
        steps_per_segment=options.steps_per_segment,
        waypoints=waypoints,
        predicted=predicted,
        tracking=tracking_report(params, mu, predicted, schedule, waypoints),
    )
    return plan, report


def _warm_start(
    params: RobotParams,
    mu: np.ndarray,
    waypoints: GroundTruthTrack,
    start: Pose,
    options: PlanOptions,
    limit: float,
) -> Tuple[np.ndarray, int]:
    """Solve one segment at a time against the waypoints reached so far."""
    segments = len(waypoints) - 1
    solved = np.zeros((segments, NUM_WHEELS))
    evals = 0
    for k in range(segments):
        objective = _objective(params, mu, waypoints.prefix(k + 2), start, options)
        fixed = solved[: k + 1].copy()

        def one_segment(u: np.ndarray) -> Tuple[float, np.ndarray]:
            fixed[k] = u
            loss, g = objective(fixed.ravel())
            return loss, g[k * NUM_WHEELS :]

        guess = solved[k - 1] if k else np.zeros(NUM_WHEELS)
        report = minimize_box(
            one_segment, guess, -limit, limit, options.solver, name="plan-segment"
        )
        solved[k] = report.solution
        evals += report.function_evals
    return solved.ravel(), evals


def rollout(
    params: RobotParams,
    mu_true: Union[FrictionCoeffs, ArrayLike],
    plan: ControlPlan,
    start: Optional[Pose] = None,
) -> Tuple[Trajectory, TrackingReport]:
    """Drive the plan under ``mu_true`` and measure how well it tracks the waypoints."""
    start = Pose(*start) if start is not None else plan.predicted.pose(0)
    schedule = plan.schedule()
    trajectory = simulate(params, mu_true, schedule, start)
    return trajectory, tracking_report(params, mu_true, trajectory, schedule, plan.waypoints)
