"""CSV ingestion and emission of trajectories and control schedules.

Ground truth: header ``t,x,y,theta`` (``theta`` optional), SI units.
Controls: header ``t,w1,w2,w3,w4`` in rad/s or ``t,d1,d2,d3,d4`` as duty
cycles in ``[-1, 1]``. Row ``i`` holds the command applied from its ``t``
until the next row's; the final row only marks the end time and its command
columns are ignored (they are written as a repeat of the previous row).

Files are UTF-8 with LF line endings. Floats are written with 17 significant
digits so that a file read back reproduces the values bit for bit.
"""
import logging
import math

from typing import Dict
from typing import Optional
from typing import Sequence

import numpy as np
import pandas as pd

from mecanum_sysid.model import ControlSchedule
from mecanum_sysid.model import GroundTruthTrack
from mecanum_sysid.model import ScheduleError
from mecanum_sysid.model import Trajectory
from mecanum_sysid.model import duty_to_omega


logger = logging.getLogger(__name__)


FLOAT_FORMAT = "%.17g"
GROUND_TRUTH_COLUMNS = ["t", "x", "y", "theta"]
SPEED_COLUMNS = ["t", "w1", "w2", "w3", "w4"]
DUTY_COLUMNS = ["t", "d1", "d2", "d3", "d4"]


class TrajectoryFileError(ValueError):
    """A malformed trajectory or control file; ``line`` is 1-based, header included."""

    def __init__(self, path: str, line: Optional[int], message: str):
        self.path = path
        self.line = line
        location = f"{path}:{line}" if line is not None else path
        super().__init__(f"{location}: {message}")


def _read_table(path: str) -> pd.DataFrame:
    try:
        return pd.read_csv(path, dtype=str, keep_default_na=False, skipinitialspace=True)
    except FileNotFoundError:
        raise TrajectoryFileError(path, None, "file not found")
    except (pd.errors.ParserError, pd.errors.EmptyDataError, UnicodeDecodeError) as exc:
        raise TrajectoryFileError(path, None, f"cannot parse CSV: {exc}")


def _parse_float(text: str) -> float:
    # exact decimal to double conversion
    try:
        return float(text)
    except ValueError:
        return math.nan


def _numeric(
    path: str, frame: pd.DataFrame, columns: Sequence[str], rows: Optional[int] = None
) -> np.ndarray:
    """Parse ``columns`` of the first ``rows`` rows, naming the first bad cell's line."""
    frame = frame if rows is None else frame.iloc[:rows]
    values = np.empty((len(frame), len(columns)))
    for j, column in enumerate(columns):
        parsed = frame[column].str.strip().map(_parse_float).to_numpy(dtype=float)
        bad = ~np.isfinite(parsed)
        if bad.any():
            index = int(np.argmax(bad))
            cell = frame[column].iloc[index]
            raise TrajectoryFileError(
                path, index + 2, f"column {column!r} has non-numeric or non-finite value {cell!r}"
            )
        values[:, j] = parsed
    return values


def _check_increasing(path: str, t: np.ndarray) -> None:
    steps = np.diff(t)
    if np.any(steps <= 0):
        index = int(np.argmax(steps <= 0)) + 1
        raise TrajectoryFileError(
            path, index + 2, f"timestamps must be strictly increasing (t={t[index]!r})"
        )


def read_ground_truth(path: str) -> GroundTruthTrack:
    frame = _read_table(path)
    columns = list(frame.columns)
    if columns not in (GROUND_TRUTH_COLUMNS, GROUND_TRUTH_COLUMNS[:3]):
        got = ",".join(columns)
        raise TrajectoryFileError(path, 1, f"expected header t,x,y[,theta], got {got}")
    if len(frame) == 0:
        raise TrajectoryFileError(path, None, "no samples")
    values = _numeric(path, frame, columns)
    _check_increasing(path, values[:, 0])
    theta = values[:, 3] if len(columns) == 4 else None
    return GroundTruthTrack(values[:, 0], values[:, 1:3], theta)


def read_controls(path: str, omega_max: float) -> ControlSchedule:
    """Read a control file; duty-cycle columns are scaled by ``omega_max``."""
    frame = _read_table(path)
    columns = list(frame.columns)
    if columns not in (SPEED_COLUMNS, DUTY_COLUMNS):
        got = ",".join(columns)
        raise TrajectoryFileError(path, 1, f"expected header t,w1..w4 or t,d1..d4, got {got}")
    if len(frame) < 2:
        raise TrajectoryFileError(path, None, "need at least one control interval (two rows)")
    t = _numeric(path, frame, ["t"])[:, 0]
    _check_increasing(path, t)
    commands = _numeric(path, frame, columns[1:], rows=len(frame) - 1)
    if columns == DUTY_COLUMNS:
        try:
            commands = duty_to_omega(commands, omega_max)
        except ScheduleError:
            index = int(np.argmax(np.any(np.abs(commands) > 1.0, axis=1)))
            raise TrajectoryFileError(path, index + 2, "duty cycles must lie in [-1, 1]")
    return ControlSchedule(t, commands)


def write_table(path: str, columns: Dict[str, Sequence[float]]) -> None:
    pd.DataFrame(columns).to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")


def write_trajectory(path: str, trajectory: Trajectory) -> None:
    write_table(
        path,
        {
            "t": trajectory.timestamps,
            "x": trajectory.poses[:, 0],
            "y": trajectory.poses[:, 1],
            "theta": trajectory.poses[:, 2],
        },
    )


def write_ground_truth(path: str, track: GroundTruthTrack) -> None:
    columns: Dict[str, Sequence[float]] = {
        "t": track.timestamps,
        "x": track.xy[:, 0],
        "y": track.xy[:, 1],
    }
    if track.theta is not None:
        columns["theta"] = track.theta
    write_table(path, columns)


def write_controls(path: str, schedule: ControlSchedule) -> None:
    commands = np.vstack((schedule.omega_s, schedule.omega_s[-1:]))
    columns: Dict[str, Sequence[float]] = {"t": schedule.timestamps}
    for j, name in enumerate(SPEED_COLUMNS[1:]):
        columns[name] = commands[:, j]
    write_table(path, columns)


def read_vertices(path: str) -> np.ndarray:
    """Polyline vertices from a CSV with header ``x,y``."""
    frame = _read_table(path)
    if list(frame.columns) != ["x", "y"]:
        raise TrajectoryFileError(path, 1, f"expected header x,y, got {','.join(frame.columns)}")
    return _numeric(path, frame, ["x", "y"])


def read_trajectory(path: str) -> Trajectory:
    frame = _read_table(path)
    if list(frame.columns) != GROUND_TRUTH_COLUMNS:
        got = ",".join(frame.columns)
        raise TrajectoryFileError(path, 1, f"expected header t,x,y,theta, got {got}")
    values = _numeric(path, frame, GROUND_TRUTH_COLUMNS)
    _check_increasing(path, values[:, 0])
    return Trajectory(values[:, 0], values[:, 1:])
