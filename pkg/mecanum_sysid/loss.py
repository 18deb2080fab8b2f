"""Simulation-reality gap between a predicted trajectory and a recorded track.

The loss sums, over every control step that carries a ground-truth sample,
``w_spline * d_sp + w_ground_truth * d_gt`` where ``d_gt`` is the distance to
the synchronous ground-truth position and ``d_sp`` the distance to the
closest point of a spline fitted through the whole track. The spline term
forgives a prediction that lags behind while staying on the right path.
"""
import copy
import logging
import math

from dataclasses import dataclass
from typing import Callable
from typing import Iterator
from typing import NamedTuple
from typing import Optional
from typing import Tuple
from typing import Union

import numpy as np

from scipy.interpolate import CubicSpline
from scipy.interpolate import make_interp_spline
from scipy.spatial import cKDTree

from mecanum_sysid.model import ArrayLike
from mecanum_sysid.model import ControlSchedule
from mecanum_sysid.model import FrictionCoeffs
from mecanum_sysid.model import GroundTruthTrack
from mecanum_sysid.model import Pose
from mecanum_sysid.model import RobotParams
from mecanum_sysid.model import simulate


logger = logging.getLogger(__name__)


SAMPLES_PER_SEGMENT = 50
PARAMETER_TOLERANCE = 1e-9
ZERO_DISTANCE = 1e-12
# along-curve residue left by the closest-point search
TANGENT_TOLERANCE = 1e-8
_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


class TrackTooShortError(ValueError):
    pass


class EmptyTrackError(ValueError):
    pass


class AlignmentError(ValueError):
    """A ground-truth sample has no control timestamp within half a control step."""

    def __init__(self, timestamp: float, index: int):
        self.timestamp = timestamp
        self.index = index
        super().__init__(
            f"Ground-truth sample {index} at t={timestamp!r} "
            "does not align with any control timestamp"
        )


@dataclass(frozen=True)
class LossWeights:
    w_spline: float = 0.8
    w_ground_truth: float = 0.2

    def __post_init__(self) -> None:
        if self.w_spline < 0 or self.w_ground_truth < 0:
            raise ValueError("Loss weights must be non-negative")
        if self.w_spline + self.w_ground_truth <= 0:
            raise ValueError("At least one loss weight must be positive")


class SampleTerm(NamedTuple):
    k: int
    d_gt: float
    d_sp: float


@dataclass(frozen=True)
class LossReport:
    """Loss value with its two components and the per-sample distances.

    ``steps[k]`` is the trajectory index that was compared with ground-truth
    sample ``k``.
    """

    total: float
    l_gt: float
    l_sp: float
    d_gt: np.ndarray
    d_sp: np.ndarray
    steps: np.ndarray
    weights: LossWeights

    @property
    def terms(self) -> Iterator[SampleTerm]:
        for k, (d_gt, d_sp) in enumerate(zip(self.d_gt, self.d_sp)):
            yield SampleTerm(k, float(d_gt), float(d_sp))

    def __add__(self, other: "LossReport") -> "LossReport":
        return LossReport(
            total=self.total + other.total,
            l_gt=self.l_gt + other.l_gt,
            l_sp=self.l_sp + other.l_sp,
            d_gt=np.concatenate((self.d_gt, other.d_gt)),
            d_sp=np.concatenate((self.d_sp, other.d_sp)),
            steps=np.concatenate((self.steps, other.steps)),
            weights=self.weights,
        )


class SplinePath:
    """Planar curve through the ground-truth positions, parameterized by chord length.

    Immutable once built. Closest-point queries start from the nearest of
    ``samples_per_segment`` dense samples per segment and refine it with a
    golden-section search on the neighbouring parameter interval.
    """

    def __init__(
        self,
        knots: np.ndarray,
        points: np.ndarray,
        curve: Callable[[np.ndarray], np.ndarray],
        samples_per_segment: int = SAMPLES_PER_SEGMENT,
        velocity: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    ):
        self.knots = knots
        self.points = points
        self._curve = curve
        self._velocity = velocity
        self.samples_per_segment = samples_per_segment

        fractions = np.arange(samples_per_segment) / samples_per_segment
        dense = (knots[:-1, None] + np.diff(knots)[:, None] * fractions).ravel()
        self._dense_u = np.append(dense, knots[-1])
        self._dense_xy = self(self._dense_u)
        # segment endpoints are sampled exactly so the knots stay on the curve
        self._dense_xy[::samples_per_segment] = points
        self._tree = cKDTree(self._dense_xy)

    @property
    def length(self) -> float:
        return float(self.knots[-1])

    def __call__(self, u: ArrayLike) -> np.ndarray:
        u = np.clip(np.asarray(u, dtype=float), self.knots[0], self.knots[-1])
        return np.asarray(self._curve(u), dtype=float)

    def closest_point(self, q: ArrayLike) -> np.ndarray:
        points, _ = self.closest_points(np.asarray(q, dtype=float).reshape(1, 2))
        return points[0]

    def closest_points(self, queries: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Closest curve point and its parameter for each row of ``queries``."""
        queries = np.asarray(queries, dtype=float).reshape(-1, 2)
        if queries.shape[0] == 0:
            return np.empty((0, 2)), np.empty(0)
        _, nearest = self._tree.query(queries)
        last = self._dense_u.size - 1
        a = self._dense_u[np.maximum(nearest - 1, 0)]
        b = self._dense_u[np.minimum(nearest + 1, last)]

        def sq_dist(u: np.ndarray) -> np.ndarray:
            return np.sum((self(u) - queries) ** 2, axis=1)

        width = float(np.max(b - a))
        iterations = 0
        if width > PARAMETER_TOLERANCE:
            iterations = int(math.ceil(math.log(width / PARAMETER_TOLERANCE) / -math.log(_INVPHI)))
        c = b - _INVPHI * (b - a)
        d = a + _INVPHI * (b - a)
        fc = sq_dist(c)
        fd = sq_dist(d)
        for _ in range(iterations):
            left = fc < fd
            a, b = np.where(left, a, c), np.where(left, d, b)
            probe = np.where(left, b - _INVPHI * (b - a), a + _INVPHI * (b - a))
            fp = sq_dist(probe)
            c, d = np.where(left, probe, d), np.where(left, c, probe)
            fc, fd = np.where(left, fp, fd), np.where(left, fc, fp)

        refined_u = 0.5 * (a + b)
        refined = self(refined_u)
        sampled = self._dense_xy[nearest]
        use_sample = np.sum((sampled - queries) ** 2, axis=1) < np.sum(
            (refined - queries) ** 2, axis=1
        )
        points = np.where(use_sample[:, None], sampled, refined)
        params = np.where(use_sample, self._dense_u[nearest], refined_u)
        return points, params

    def offsets(self, queries: np.ndarray) -> np.ndarray:
        """Vector from the closest curve point to each query.

        Inside the curve the true offset is normal to it, so a tangential part
        below ``TANGENT_TOLERANCE`` is search residue and is removed.
        """
        queries = np.asarray(queries, dtype=float).reshape(-1, 2)
        closest, params = self.closest_points(queries)
        delta = queries - closest
        if self._velocity is None or queries.shape[0] == 0:
            return delta
        tangent = np.asarray(self._velocity(params), dtype=float).reshape(-1, 2)
        speed = np.hypot(*tangent.T)
        interior = (params > self.knots[0]) & (params < self.knots[-1]) & (speed > ZERO_DISTANCE)
        unit = np.zeros_like(tangent)
        np.divide(tangent, speed[:, None], out=unit, where=interior[:, None])
        along = np.sum(delta * unit, axis=1)
        residue = interior & (np.abs(along) <= TANGENT_TOLERANCE)
        return delta - np.where(residue, along, 0.0)[:, None] * unit


def fit_spline(
    track: Union[GroundTruthTrack, np.ndarray], samples_per_segment: int = SAMPLES_PER_SEGMENT
) -> SplinePath:
    """Fit a natural cubic spline per coordinate over cumulative chord length.

    Consecutive duplicate positions are dropped first. Fewer than four
    distinct points give a piecewise linear path.
    """
    xy = track.xy if isinstance(track, GroundTruthTrack) else np.asarray(track, dtype=float)
    xy = xy.reshape(-1, 2)
    if xy.shape[0] == 0:
        raise TrackTooShortError("track too short")
    chords = np.hypot(*np.diff(xy, axis=0).T)
    keep = np.concatenate(([True], chords > ZERO_DISTANCE))
    xy = xy[keep]
    if xy.shape[0] < 2:
        raise TrackTooShortError("track too short")
    knots = np.concatenate(([0.0], np.cumsum(np.hypot(*np.diff(xy, axis=0).T))))
    if xy.shape[0] < 4:
        curve = make_interp_spline(knots, xy, k=1, axis=0)
    else:
        curve = CubicSpline(knots, xy, bc_type="natural", axis=0)
    return SplinePath(knots, xy, curve, samples_per_segment, curve.derivative(1))


def closest_point(path: SplinePath, q: ArrayLike) -> np.ndarray:
    return path.closest_point(q)


def align_samples(
    track_timestamps: np.ndarray, control_timestamps: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """Indices of the ground-truth samples kept and the trajectory index of each.

    A control timestamp matches a sample when they are closer than half of
    the control step around it. A control timestamp serves at most one
    sample: the first match wins and later samples on the same timestamp are
    skipped.
    """
    track_timestamps = np.asarray(track_timestamps, dtype=float)
    control_timestamps = np.asarray(control_timestamps, dtype=float)
    if track_timestamps.size == 0:
        raise EmptyTrackError("Ground-truth track is empty")
    steps = np.diff(control_timestamps)
    if steps.size == 0:
        raise AlignmentError(float(track_timestamps[0]), 0)
    # half of the narrower control step on either side of each timestamp
    left = np.concatenate(([steps[0]], steps))
    right = np.concatenate((steps, [steps[-1]]))
    tolerance = 0.5 * np.minimum(left, right)

    upper = np.searchsorted(control_timestamps, track_timestamps)
    upper = np.clip(upper, 0, control_timestamps.size - 1)
    lower = np.maximum(upper - 1, 0)
    pick_lower = np.abs(control_timestamps[lower] - track_timestamps) < np.abs(
        control_timestamps[upper] - track_timestamps
    )
    nearest = np.where(pick_lower, lower, upper)
    aligned = np.abs(control_timestamps[nearest] - track_timestamps) < tolerance[nearest]
    orphans = np.flatnonzero(~aligned)
    if orphans.size:
        first = int(orphans[0])
        raise AlignmentError(float(track_timestamps[first]), first)
    # nearest is non-decreasing, so repeats are adjacent
    taken = np.concatenate(([False], nearest[1:] == nearest[:-1]))
    for index in np.flatnonzero(taken):
        logger.warning(
            "Skipping ground-truth sample %d at t=%r: control step %d already matched",
            index,
            float(track_timestamps[index]),
            int(nearest[index]),
        )
    kept = np.flatnonzero(~taken)
    return kept, nearest[kept]


def match_samples(track_timestamps: np.ndarray, control_timestamps: np.ndarray) -> np.ndarray:
    """Trajectory index of each ground-truth sample that is kept."""
    _, steps = align_samples(track_timestamps, control_timestamps)
    return steps


class Recording:
    """A control schedule paired with the ground-truth track it produced.

    Matches the samples and fits the spline once, so that repeated loss
    evaluations only simulate.
    """

    def __init__(
        self,
        schedule: ControlSchedule,
        track: GroundTruthTrack,
        start: Optional[Pose] = None,
        name: str = "",
    ):
        if len(track) == 0:
            raise EmptyTrackError("Ground-truth track is empty")
        self.schedule = schedule
        self.name = name
        self.start = Pose(*start) if start is not None else track.start_pose()
        kept, self.sample_steps = align_samples(track.timestamps, schedule.timestamps)
        self.path = fit_spline(track)
        # skipped samples still shape the spline
        self.track = track if kept.size == len(track) else track.subset(kept)

    def __repr__(self) -> str:
        return f"<Recording {self.name!r}: {len(self.schedule)} steps, {len(self.track)} samples>"

    def with_schedule(self, schedule: ControlSchedule) -> "Recording":
        """Same track, alignment and spline with other controls on the same timestamps."""
        if not np.array_equal(schedule.timestamps, self.schedule.timestamps):
            raise ValueError("Replacement schedule must keep the timestamps")
        clone = copy.copy(self)
        clone.schedule = schedule
        return clone

    def prefix(self, samples: int) -> "Recording":
        """The earliest ``samples`` ground-truth samples and the controls up to the last one."""
        track = self.track.prefix(samples)
        steps = int(self.sample_steps[samples - 1])
        schedule = self.schedule.prefix(max(steps, 1))
        return Recording(schedule, track, start=self.start, name=self.name)


def distances(
    recording: Recording, positions: np.ndarray
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Residuals to the ground truth and to the spline, with their lengths.

    ``positions`` are the predicted positions at the matched steps.
    """
    delta_gt = positions - recording.track.xy
    delta_sp = recording.path.offsets(positions)
    return delta_gt, np.hypot(*delta_gt.T), delta_sp, np.hypot(*delta_sp.T)


def evaluate_loss(
    recording: Recording,
    params: RobotParams,
    mu: Union[FrictionCoeffs, ArrayLike],
    weights: LossWeights = LossWeights(),
) -> LossReport:
    trajectory = simulate(params, mu, recording.schedule, recording.start)
    return loss_from_positions(recording, trajectory.xy[recording.sample_steps], weights)


def loss_from_positions(
    recording: Recording, positions: np.ndarray, weights: LossWeights
) -> LossReport:
    _, d_gt, _, d_sp = distances(recording, positions)
    l_gt = float(np.sum(d_gt))
    l_sp = float(np.sum(d_sp))
    return LossReport(
        total=weights.w_spline * l_sp + weights.w_ground_truth * l_gt,
        l_gt=l_gt,
        l_sp=l_sp,
        d_gt=d_gt,
        d_sp=d_sp,
        steps=recording.sample_steps,
        weights=weights,
    )


def compute_loss(
    params: RobotParams,
    mu: Union[FrictionCoeffs, ArrayLike],
    schedule: ControlSchedule,
    track: GroundTruthTrack,
    weights: LossWeights = LossWeights(),
    start: Optional[Pose] = None,
) -> LossReport:
    """Loss of the trajectory predicted with ``mu`` against a recorded track.

    The simulation starts at the first ground-truth pose unless ``start`` is
    given. The pose compared with a sample is the one at the sample's
    control timestamp, before that step's update.
    """
    return evaluate_loss(Recording(schedule, track, start=start), params, mu, weights)
