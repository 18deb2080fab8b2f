"""Forward model of a four-wheel mecanum robot with Coulomb wheel friction.

Wheels are indexed in the column order of the kinematic matrix:
front-left, front-right, rear-left, rear-right. The robot drives "forward"
along its body +Y axis.
"""
import logging
import math

from dataclasses import dataclass
from typing import NamedTuple
from typing import Optional
from typing import Sequence
from typing import Union

import numpy as np


logger = logging.getLogger(__name__)


NUM_WHEELS = 4
MU_LOWER = 0.0
MU_UPPER = 2.0

ArrayLike = Union[Sequence[float], np.ndarray]


class ScheduleError(ValueError):
    pass


def _frozen(values: np.ndarray) -> np.ndarray:
    values.setflags(write=False)
    return values


@dataclass(frozen=True)
class RobotParams:
    """Physical constants of the robot.

    :param mass: Robot mass M in kg. Its weight is assumed to rest evenly on
        the four wheels.
    :param gravity: Gravitational acceleration g in m/s^2.
    :param wheel_radius: Wheel radius R in m.
    :param stall_torque: Motor stall torque Ts in N*m.
    :param half_length: Half of the wheelbase, la, in m.
    :param half_width: Half of the track width, lb, in m.
    :param wheel_inertia: Wheel inertia J about the motor shaft in kg*m^2.
        Only the transient wheel model uses it.
    :param omega_max: Wheel speed in rad/s commanded by a duty cycle of 1.
    """

    mass: float = 4.0
    gravity: float = 9.8
    wheel_radius: float = 0.03
    stall_torque: float = 0.6
    half_length: float = 0.1
    half_width: float = 0.1
    wheel_inertia: float = 0.001
    omega_max: float = 10.0

    def __post_init__(self) -> None:
        for name in self.__dataclass_fields__:
            value = getattr(self, name)
            if not math.isfinite(value) or value <= 0:
                raise ValueError(f"{name} must be strictly positive, got {value}")

    @property
    def l_ab(self) -> float:
        return self.half_length + self.half_width

    @property
    def friction_gain(self) -> float:
        """Fraction of commanded wheel speed lost per unit friction coefficient."""
        return self.mass * self.gravity * self.wheel_radius / (4.0 * self.stall_torque)


@dataclass(frozen=True)
class FrictionCoeffs:
    """Per-wheel friction coefficients, each inside ``[MU_LOWER, MU_UPPER]``."""

    mu: np.ndarray

    def __post_init__(self) -> None:
        mu = np.array(self.mu, dtype=float).reshape(-1)
        if mu.shape != (NUM_WHEELS,):
            raise ValueError(f"Expected {NUM_WHEELS} friction coefficients, got {mu.size}")
        if not np.all(np.isfinite(mu)):
            raise ValueError(f"Friction coefficients must be finite: {mu}")
        if np.any(mu < MU_LOWER) or np.any(mu > MU_UPPER):
            raise ValueError(f"Friction coefficients must lie in [{MU_LOWER}, {MU_UPPER}]: {mu}")
        object.__setattr__(self, "mu", _frozen(mu))

    @classmethod
    def frictionless(cls) -> "FrictionCoeffs":
        return cls(np.zeros(NUM_WHEELS))

    def to_list(self) -> list:
        return [float(v) for v in self.mu]


class Pose(NamedTuple):
    x: float
    y: float
    theta: float


class BodyVelocity(NamedTuple):
    vx: float
    vy: float
    omega_z: float


@dataclass(frozen=True)
class ControlSchedule:
    """Piecewise-constant commanded wheel speeds.

    ``omega_s[i]`` (rad/s, one column per wheel) is held from
    ``timestamps[i]`` until ``timestamps[i + 1]``.
    """

    timestamps: np.ndarray
    omega_s: np.ndarray

    def __post_init__(self) -> None:
        timestamps = np.array(self.timestamps, dtype=float).reshape(-1)
        omega_s = np.array(self.omega_s, dtype=float)
        if omega_s.ndim == 1 and omega_s.size == 0:
            omega_s = omega_s.reshape(0, NUM_WHEELS)
        if omega_s.ndim != 2 or omega_s.shape[1] != NUM_WHEELS:
            raise ScheduleError(f"Controls must have shape (n, {NUM_WHEELS}), got {omega_s.shape}")
        if timestamps.size != omega_s.shape[0] + 1:
            raise ScheduleError(
                f"Expected {omega_s.shape[0] + 1} timestamps for {omega_s.shape[0]} "
                f"control intervals, got {timestamps.size}"
            )
        if not np.all(np.isfinite(timestamps)) or not np.all(np.isfinite(omega_s)):
            raise ScheduleError("Control schedule contains non-finite values")
        steps = np.diff(timestamps)
        if np.any(steps <= 0):
            index = int(np.argmax(steps <= 0)) + 1
            raise ScheduleError(
                f"Timestamps must be strictly increasing (index {index}, t={timestamps[index]})"
            )
        object.__setattr__(self, "timestamps", _frozen(timestamps))
        object.__setattr__(self, "omega_s", _frozen(omega_s))

    def __len__(self) -> int:
        return self.omega_s.shape[0]

    @property
    def dt(self) -> np.ndarray:
        return np.diff(self.timestamps)

    @property
    def duration(self) -> float:
        return float(self.timestamps[-1] - self.timestamps[0])

    @classmethod
    def from_duty(
        cls, timestamps: ArrayLike, duty: ArrayLike, omega_max: float
    ) -> "ControlSchedule":
        return cls(timestamps, duty_to_omega(duty, omega_max))

    @classmethod
    def constant(
        cls, omega_s: ArrayLike, duration: float, rate: float, t0: float = 0.0
    ) -> "ControlSchedule":
        """Hold one control vector for ``duration`` seconds at ``rate`` Hz."""
        steps = int(round(duration * rate))
        if steps < 1:
            raise ScheduleError("Schedule must contain at least one control interval")
        timestamps = t0 + np.arange(steps + 1) / rate
        return cls(timestamps, np.tile(np.asarray(omega_s, dtype=float), (steps, 1)))

    def prefix(self, steps: int) -> "ControlSchedule":
        """Return the schedule restricted to its first ``steps`` intervals."""
        return ControlSchedule(self.timestamps[: steps + 1], self.omega_s[:steps])


@dataclass(frozen=True)
class Trajectory:
    """Poses ``(x, y, theta)`` at every schedule timestamp."""

    timestamps: np.ndarray
    poses: np.ndarray

    def __post_init__(self) -> None:
        timestamps = np.array(self.timestamps, dtype=float).reshape(-1)
        poses = np.array(self.poses, dtype=float).reshape(-1, 3)
        if timestamps.size != poses.shape[0]:
            raise ValueError("Trajectory needs one pose per timestamp")
        if np.any(np.diff(timestamps) <= 0):
            raise ValueError("Trajectory timestamps must be strictly increasing")
        object.__setattr__(self, "timestamps", _frozen(timestamps))
        object.__setattr__(self, "poses", _frozen(poses))

    def __len__(self) -> int:
        return self.poses.shape[0]

    @property
    def xy(self) -> np.ndarray:
        return self.poses[:, :2]

    @property
    def final(self) -> Pose:
        return Pose(*(float(v) for v in self.poses[-1]))

    def pose(self, index: int) -> Pose:
        return Pose(*(float(v) for v in self.poses[index]))

    def transformed(self, dx: float, dy: float, dtheta: float) -> "Trajectory":
        return Trajectory(self.timestamps, transform_poses(self.poses, dx, dy, dtheta))


@dataclass(frozen=True)
class GroundTruthTrack:
    """Timestamped planar positions recorded by an external tracker.

    ``theta`` is optional; when it is missing the starting heading is
    estimated from the first two positions.
    """

    timestamps: np.ndarray
    xy: np.ndarray
    theta: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        timestamps = np.array(self.timestamps, dtype=float).reshape(-1)
        xy = np.array(self.xy, dtype=float).reshape(-1, 2)
        if timestamps.size != xy.shape[0]:
            raise ValueError("Ground-truth track needs one position per timestamp")
        if not np.all(np.isfinite(timestamps)) or not np.all(np.isfinite(xy)):
            raise ValueError("Ground-truth track contains non-finite values")
        if np.any(np.diff(timestamps) <= 0):
            raise ValueError("Ground-truth timestamps must be strictly increasing")
        object.__setattr__(self, "timestamps", _frozen(timestamps))
        object.__setattr__(self, "xy", _frozen(xy))
        if self.theta is not None:
            theta = np.array(self.theta, dtype=float).reshape(-1)
            if theta.size != timestamps.size:
                raise ValueError("Ground-truth headings must match the timestamps")
            object.__setattr__(self, "theta", _frozen(theta))

    def __len__(self) -> int:
        return self.timestamps.size

    def start_pose(self) -> Pose:
        if self.theta is not None:
            theta0 = float(self.theta[0])
        else:
            theta0 = estimate_heading(self.xy)
        return Pose(float(self.xy[0, 0]), float(self.xy[0, 1]), theta0)

    def prefix(self, count: int) -> "GroundTruthTrack":
        theta = None if self.theta is None else self.theta[:count]
        return GroundTruthTrack(self.timestamps[:count], self.xy[:count], theta)

    def subset(self, indices: np.ndarray) -> "GroundTruthTrack":
        theta = None if self.theta is None else self.theta[indices]
        return GroundTruthTrack(self.timestamps[indices], self.xy[indices], theta)

    def transformed(self, dx: float, dy: float, dtheta: float) -> "GroundTruthTrack":
        xy = transform_points(self.xy, dx, dy, dtheta)
        theta = None if self.theta is None else self.theta + dtheta
        return GroundTruthTrack(self.timestamps, xy, theta)


def estimate_heading(xy: np.ndarray) -> float:
    """Heading that points the body +Y axis from the first position to the next distinct one."""
    xy = np.asarray(xy, dtype=float)
    for later in xy[1:]:
        delta = later - xy[0]
        if np.hypot(*delta) > 1e-12:
            return float(math.atan2(-delta[0], delta[1]))
    logger.warning("Cannot estimate heading from a stationary track, assuming 0")
    return 0.0


def as_mu(mu: Union[FrictionCoeffs, ArrayLike]) -> np.ndarray:
    if isinstance(mu, FrictionCoeffs):
        return mu.mu
    values = np.asarray(mu, dtype=float).reshape(-1)
    if values.shape != (NUM_WHEELS,):
        raise ValueError(f"Expected {NUM_WHEELS} friction coefficients, got {values.size}")
    return values


def duty_to_omega(duty: ArrayLike, omega_max: float) -> np.ndarray:
    """Map duty cycles in [-1, 1] linearly to commanded wheel speeds."""
    duty = np.asarray(duty, dtype=float)
    if np.any(np.abs(duty) > 1.0):
        raise ScheduleError("Duty cycles must lie in [-1, 1]")
    return duty * omega_max


def friction_factor(params: RobotParams, mu: Union[FrictionCoeffs, ArrayLike]) -> np.ndarray:
    """Steady-state ratio between achieved and commanded wheel speed.

    Floored at zero: friction slows a wheel down but never reverses it.
    """
    return np.maximum(1.0 - as_mu(mu) * params.friction_gain, 0.0)


def steady_state_omega(
    params: RobotParams, mu: Union[FrictionCoeffs, ArrayLike], omega_s: ArrayLike
) -> np.ndarray:
    """Wheel speeds once the motor transient has decayed.

    ``omega_s`` may be a single 4-vector or an ``(n, 4)`` array of them.
    """
    return np.asarray(omega_s, dtype=float) * friction_factor(params, mu)


def transient_omega(params: RobotParams, mu_j: float, omega_s_j: float, t: float) -> float:
    """Speed of one wheel ``t`` seconds after a command applied from rest.

    Not used for identification. The decay rate uses ``|omega_s_j|`` so a
    reverse command settles the same way a forward one does.
    """
    if omega_s_j == 0:
        raise ValueError("Transient wheel speed is undefined for a zero commanded speed")
    if t < 0:
        raise ValueError(f"Time must be non-negative, got {t}")
    factor = max(1.0 - mu_j * params.friction_gain, 0.0)
    rate = params.stall_torque / (params.wheel_inertia * abs(omega_s_j))
    return omega_s_j * factor * (1.0 - math.exp(-rate * t))


def kinematic_matrix(params: RobotParams) -> np.ndarray:
    """The 3x4 matrix B mapping wheel speeds to body velocity ``(vx, vy, omega_z)``."""
    l_ab = params.l_ab
    return (params.wheel_radius / (4.0 * l_ab)) * np.array(
        [
            [-l_ab, l_ab, -l_ab, l_ab],
            [l_ab, l_ab, l_ab, l_ab],
            [1.0, -1.0, -1.0, 1.0],
        ]
    )


def body_velocity(B: np.ndarray, omega: ArrayLike) -> BodyVelocity:
    omega = np.asarray(omega, dtype=float)
    if omega.shape != (B.shape[1],):
        raise ValueError(f"Expected {B.shape[1]} wheel speeds, got shape {omega.shape}")
    return BodyVelocity(*(float(v) for v in B @ omega))


def step_pose(pose: Pose, vel: BodyVelocity, dt: float) -> Pose:
    """One explicit Euler step, rotating the body velocity by the starting heading."""
    if dt <= 0:
        raise ValueError(f"Time step must be positive, got {dt}")
    c = math.cos(pose.theta)
    s = math.sin(pose.theta)
    return Pose(
        pose.x + dt * (vel.vx * c - vel.vy * s),
        pose.y + dt * (vel.vx * s + vel.vy * c),
        pose.theta + dt * vel.omega_z,
    )


def body_velocities(
    params: RobotParams, mu: Union[FrictionCoeffs, ArrayLike], schedule: ControlSchedule
) -> np.ndarray:
    """Body velocity for every control interval, shape ``(n, 3)``."""
    omega = steady_state_omega(params, mu, schedule.omega_s)
    return omega @ kinematic_matrix(params).T


def integrate(start: Pose, dt: np.ndarray, velocities: np.ndarray) -> np.ndarray:
    """Chain explicit Euler steps; returns ``(n + 1, 3)`` poses starting at ``start``.

    The heading never depends on position, so it is a running sum, and the
    positions are running sums of the rotated body velocities.
    """
    theta = start.theta + np.concatenate(([0.0], np.cumsum(dt * velocities[:, 2])))
    c = np.cos(theta[:-1])
    s = np.sin(theta[:-1])
    dx = dt * (velocities[:, 0] * c - velocities[:, 1] * s)
    dy = dt * (velocities[:, 0] * s + velocities[:, 1] * c)
    x = start.x + np.concatenate(([0.0], np.cumsum(dx)))
    y = start.y + np.concatenate(([0.0], np.cumsum(dy)))
    return np.column_stack((x, y, theta))


def simulate(
    params: RobotParams,
    mu: Union[FrictionCoeffs, ArrayLike],
    schedule: ControlSchedule,
    start: Pose,
) -> Trajectory:
    """Predict the trajectory produced by ``schedule`` from ``start``."""
    if len(schedule) == 0:
        raise ScheduleError("Cannot simulate an empty control schedule")
    velocities = body_velocities(params, mu, schedule)
    return Trajectory(schedule.timestamps, integrate(Pose(*start), schedule.dt, velocities))


def refine_schedule(schedule: ControlSchedule) -> ControlSchedule:
    """Split every control interval in two, keeping the controls unchanged."""
    midpoints = schedule.timestamps[:-1] + 0.5 * schedule.dt
    timestamps = np.empty(2 * len(schedule) + 1)
    timestamps[0::2] = schedule.timestamps
    timestamps[1::2] = midpoints
    return ControlSchedule(timestamps, np.repeat(schedule.omega_s, 2, axis=0))


def transform_points(xy: np.ndarray, dx: float, dy: float, dtheta: float) -> np.ndarray:
    """Rotate points about the origin by ``dtheta`` then translate by ``(dx, dy)``."""
    c = math.cos(dtheta)
    s = math.sin(dtheta)
    xy = np.asarray(xy, dtype=float)
    return np.column_stack((c * xy[:, 0] - s * xy[:, 1] + dx, s * xy[:, 0] + c * xy[:, 1] + dy))


def transform_poses(poses: np.ndarray, dx: float, dy: float, dtheta: float) -> np.ndarray:
    poses = np.asarray(poses, dtype=float)
    return np.column_stack((transform_points(poses[:, :2], dx, dy, dtheta), poses[:, 2] + dtheta))


def transform_pose(pose: Pose, dx: float, dy: float, dtheta: float) -> Pose:
    moved = transform_poses(np.array([pose]), dx, dy, dtheta)[0]
    return Pose(*(float(v) for v in moved))
