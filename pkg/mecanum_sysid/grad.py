"""Analytic loss gradients by forward accumulation of pose sensitivities.

The sensitivity ``J[k]`` of pose ``k`` with respect to a parameter vector is
carried alongside the Euler integration. Heading sensitivities only depend on
earlier body-velocity sensitivities, so every row is a running sum and the
whole history is computed without a Python loop over steps.

The closest spline point is held constant when differentiating the spline
term.
"""
import logging

from dataclasses import dataclass
from typing import Optional
from typing import Tuple
from typing import Union

import numpy as np

from scipy.special import expit
from typing_extensions import Literal

from mecanum_sysid.loss import LossReport
from mecanum_sysid.loss import LossWeights
from mecanum_sysid.loss import Recording
from mecanum_sysid.loss import ZERO_DISTANCE
from mecanum_sysid.loss import distances
from mecanum_sysid.loss import loss_from_positions
from mecanum_sysid.model import ArrayLike
from mecanum_sysid.model import ControlSchedule
from mecanum_sysid.model import FrictionCoeffs
from mecanum_sysid.model import GroundTruthTrack
from mecanum_sysid.model import NUM_WHEELS
from mecanum_sysid.model import Pose
from mecanum_sysid.model import RobotParams
from mecanum_sysid.model import as_mu
from mecanum_sysid.model import friction_factor
from mecanum_sysid.model import integrate
from mecanum_sysid.model import kinematic_matrix


logger = logging.getLogger(__name__)


Variable = Literal["mu", "mu_raw", "omega_s"]


@dataclass(frozen=True)
class GradVector:
    """Derivative of the loss with respect to one group of variables.

    For ``omega_s`` the vector holds ``4 * segments`` entries, segment-major.
    """

    g: np.ndarray
    variable: Variable = "mu"
    segments: int = 1

    def __post_init__(self) -> None:
        g = np.array(self.g, dtype=float).reshape(-1)
        if g.size != NUM_WHEELS * self.segments:
            raise ValueError(
                f"Expected {NUM_WHEELS * self.segments} gradient entries, got {g.size}"
            )
        if not np.all(np.isfinite(g)):
            raise ValueError(f"Gradient is not finite: {g}")
        g.setflags(write=False)
        object.__setattr__(self, "g", g)

    def per_segment(self) -> np.ndarray:
        return self.g.reshape(self.segments, NUM_WHEELS)


@dataclass(frozen=True)
class PoseJacobian:
    """Sensitivities of every pose, shape ``(n + 1, 3, P)``.

    Rows are ``(x, y, theta)``. ``J[0]`` is zero since the start pose does
    not depend on the parameters.
    """

    J: np.ndarray

    def __len__(self) -> int:
        return self.J.shape[0]

    def at(self, k: int) -> np.ndarray:
        return self.J[k]


def domega_dmu(
    params: RobotParams, omega_s: ArrayLike, mu: Optional[Union[FrictionCoeffs, ArrayLike]] = None
) -> np.ndarray:
    """Per-wheel derivative of the steady-state wheel speed in its own mu.

    Cross-wheel terms are zero. When ``mu`` is given, wheels whose friction
    factor is clamped at zero get a zero derivative.
    """
    d = -np.asarray(omega_s, dtype=float) * params.friction_gain
    if mu is not None:
        clamped = 1.0 - as_mu(mu) * params.friction_gain <= 0.0
        d = np.where(clamped, 0.0, d)
    return d


def pose_sensitivities(
    schedule: ControlSchedule, poses: np.ndarray, velocities: np.ndarray, dvelocity: np.ndarray
) -> PoseJacobian:
    """Accumulate pose sensitivities over a schedule.

    :param poses: The ``(n + 1, 3)`` simulated poses.
    :param velocities: Body velocities per interval, ``(n, 3)``.
    :param dvelocity: Body-velocity sensitivities per interval, ``(n, 3, P)``.
    """
    dt = schedule.dt[:, None]
    c = np.cos(poses[:-1, 2])[:, None]
    s = np.sin(poses[:-1, 2])[:, None]
    vx = velocities[:, 0:1]
    vy = velocities[:, 1:2]
    dvx = dvelocity[:, 0, :]
    dvy = dvelocity[:, 1, :]
    dvz = dvelocity[:, 2, :]

    zero = np.zeros((1, dvelocity.shape[2]))
    jtheta = np.concatenate((zero, np.cumsum(dt * dvz, axis=0)))
    before = jtheta[:-1]
    # d/dp of the x and y increments, using the heading at the start of each step
    dx = dt * ((dvx * c - dvy * s) + (-vx * s - vy * c) * before)
    dy = dt * ((dvx * s + dvy * c) + (vx * c - vy * s) * before)
    jx = np.concatenate((zero, np.cumsum(dx, axis=0)))
    jy = np.concatenate((zero, np.cumsum(dy, axis=0)))
    return PoseJacobian(np.stack((jx, jy, jtheta), axis=1))


def _accumulate(
    recording: Recording,
    positions: np.ndarray,
    jacobian: PoseJacobian,
    weights: LossWeights,
    literal_ordering: bool,
) -> np.ndarray:
    delta_gt, d_gt, delta_sp, d_sp = distances(recording, positions)
    unit_gt = np.zeros_like(delta_gt)
    unit_sp = np.zeros_like(delta_sp)
    np.divide(delta_gt, d_gt[:, None], out=unit_gt, where=d_gt[:, None] >= ZERO_DISTANCE)
    np.divide(delta_sp, d_sp[:, None], out=unit_sp, where=d_sp[:, None] >= ZERO_DISTANCE)
    residual = weights.w_spline * unit_sp + weights.w_ground_truth * unit_gt

    steps = recording.sample_steps
    if literal_ordering:
        # sensitivities one step ahead of the pose they are applied to
        steps = np.minimum(steps + 1, len(jacobian) - 1)
    return np.einsum("kr,krp->p", residual, jacobian.J[steps, :2, :])


def recording_gradient_mu(
    recording: Recording,
    params: RobotParams,
    mu: Union[FrictionCoeffs, ArrayLike],
    weights: LossWeights = LossWeights(),
    literal_ordering: bool = False,
) -> Tuple[LossReport, np.ndarray]:
    mu = as_mu(mu)
    schedule = recording.schedule
    B = kinematic_matrix(params)
    velocities = (schedule.omega_s * friction_factor(params, mu)) @ B.T
    poses = integrate(recording.start, schedule.dt, velocities)

    domega = domega_dmu(params, schedule.omega_s, mu)
    # diagonal in the wheel index: dv[k, r, j] = B[r, j] * domega[k, j]
    dvelocity = B[None, :, :] * domega[:, None, :]
    jacobian = pose_sensitivities(schedule, poses, velocities, dvelocity)

    positions = poses[recording.sample_steps, :2]
    report = loss_from_positions(recording, positions, weights)
    g = _accumulate(recording, positions, jacobian, weights, literal_ordering)
    return report, g


def loss_gradient_mu(
    params: RobotParams,
    mu: Union[FrictionCoeffs, ArrayLike],
    schedule: ControlSchedule,
    track: GroundTruthTrack,
    weights: LossWeights = LossWeights(),
    start: Optional[Pose] = None,
    literal_ordering: bool = False,
) -> Tuple[LossReport, GradVector]:
    """Loss and its derivative in the four friction coefficients.

    With ``literal_ordering`` the sensitivities are updated before the loss
    is accumulated at each step while the pose is updated after, so each
    sample is paired with the sensitivity of the following pose. This is
    kept only for comparison; the default is the exact derivative.
    """
    recording = Recording(schedule, track, start=start)
    report, g = recording_gradient_mu(recording, params, mu, weights, literal_ordering)
    return report, GradVector(g, "mu")


def segment_index(schedule: ControlSchedule, boundaries: np.ndarray) -> np.ndarray:
    """Segment of every control interval, given the segment boundary times.

    An interval belongs to the segment in which it starts.
    """
    boundaries = np.asarray(boundaries, dtype=float)
    half_step = 0.5 * float(np.min(schedule.dt))
    index = np.searchsorted(boundaries, schedule.timestamps[:-1] + half_step, side="right") - 1
    return np.clip(index, 0, max(boundaries.size - 2, 0))


def recording_gradient_controls(
    recording: Recording,
    params: RobotParams,
    mu: Union[FrictionCoeffs, ArrayLike],
    segments: np.ndarray,
    weights: LossWeights = LossWeights(),
) -> Tuple[LossReport, np.ndarray]:
    """Loss and derivative in the per-segment commanded speeds.

    :param segments: Segment index of each control interval of the
        recording's schedule. The schedule's controls must be constant within
        a segment.
    """
    schedule = recording.schedule
    count = int(segments.max()) + 1
    B = kinematic_matrix(params)
    factor = friction_factor(params, mu)
    velocities = (schedule.omega_s * factor) @ B.T
    poses = integrate(recording.start, schedule.dt, velocities)

    # dv[k, r, 4s + j] = B[r, j] * factor[j] for the segment s holding step k
    dvelocity = np.zeros((len(schedule), 3, count * NUM_WHEELS))
    columns = segments[:, None] * NUM_WHEELS + np.arange(NUM_WHEELS)
    rows = np.arange(len(schedule))[:, None]
    for r in range(3):
        dvelocity[rows, r, columns] = B[r] * factor
    jacobian = pose_sensitivities(schedule, poses, velocities, dvelocity)

    positions = poses[recording.sample_steps, :2]
    report = loss_from_positions(recording, positions, weights)
    g = _accumulate(recording, positions, jacobian, weights, literal_ordering=False)
    return report, g


def loss_gradient_controls(
    params: RobotParams,
    mu: Union[FrictionCoeffs, ArrayLike],
    schedule: ControlSchedule,
    waypoints: GroundTruthTrack,
    weights: LossWeights = LossWeights(),
    start: Optional[Pose] = None,
) -> Tuple[LossReport, GradVector]:
    """Loss against a waypoint track and its derivative in the segment controls.

    Segments run between consecutive waypoint timestamps. A segment's control
    reaches every later pose through the accumulated heading and position.
    """
    recording = Recording(schedule, waypoints, start=start)
    segments = segment_index(schedule, waypoints.timestamps)
    report, g = recording_gradient_controls(recording, params, mu, segments, weights)
    return report, GradVector(g, "omega_s", int(segments.max()) + 1)


@dataclass(frozen=True)
class SigmoidFriction:
    """Friction from an unconstrained variable, ``mu = 2 * sigmoid(mu_raw)``.

    ``factor`` equals ``1 - sigma * M g R / (2 Ts)``, the friction factor of
    ``mu``. ``dsigma`` is ``sigma * (1 - sigma)``; chain a gradient in ``mu``
    through :py:meth:`chain`.
    """

    mu: FrictionCoeffs
    sigma: np.ndarray
    factor: np.ndarray
    dsigma: np.ndarray

    def chain(self, grad_mu: np.ndarray) -> np.ndarray:
        return 2.0 * self.dsigma * np.asarray(grad_mu, dtype=float)


def sigmoid_reparam(params: RobotParams, mu_raw: ArrayLike) -> SigmoidFriction:
    sigma = expit(np.asarray(mu_raw, dtype=float).reshape(-1))
    if sigma.shape != (NUM_WHEELS,):
        raise ValueError(f"Expected {NUM_WHEELS} raw friction values, got {sigma.size}")
    gain = params.mass * params.gravity * params.wheel_radius / (2.0 * params.stall_torque)
    return SigmoidFriction(
        mu=FrictionCoeffs(2.0 * sigma),
        sigma=sigma,
        factor=1.0 - sigma * gain,
        dsigma=sigma * (1.0 - sigma),
    )
