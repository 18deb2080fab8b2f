"""Differentiable mecanum-robot model with friction identification and path following."""
from mecanum_sysid.model import BodyVelocity
from mecanum_sysid.model import ControlSchedule
from mecanum_sysid.model import FrictionCoeffs
from mecanum_sysid.model import GroundTruthTrack
from mecanum_sysid.model import Pose
from mecanum_sysid.model import RobotParams
from mecanum_sysid.model import Trajectory
from mecanum_sysid.model import simulate

__all__ = [
    "BodyVelocity",
    "ControlSchedule",
    "FrictionCoeffs",
    "GroundTruthTrack",
    "Pose",
    "RobotParams",
    "Trajectory",
    "simulate",
]
