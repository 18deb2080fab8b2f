"""Synthetic recordings generated by the forward model.

These are stand-ins for camera-tracked runs of a real robot. Each fixture
drives a piecewise-constant random command (``phases`` phases, every duty
cycle of magnitude in ``[0.4, 1]`` with a random sign) at ``control_rate``
Hz, simulates it with the fixture's true friction from the origin, and
keeps every ``stride``-th pose as ground truth. Optional Gaussian noise is
added to the ground-truth positions. A fixture may instead spell out its
duty table, one row per phase.

The two small fixtures committed under ``tests/fixtures`` are regenerated with::

    python -m mecanum_sysid.synthetic tests/fixtures --shipped
"""
import argparse
import dataclasses
import json
import logging
import os
import sys

from dataclasses import dataclass
from typing import Dict
from typing import List
from typing import Optional
from typing import Sequence
from typing import Tuple

import numpy as np

from mecanum_sysid.io import write_controls
from mecanum_sysid.io import write_ground_truth
from mecanum_sysid.model import ControlSchedule
from mecanum_sysid.model import GroundTruthTrack
from mecanum_sysid.model import NUM_WHEELS
from mecanum_sysid.model import Pose
from mecanum_sysid.model import RobotParams
from mecanum_sysid.model import simulate


logger = logging.getLogger(__name__)


MU_TRUE = (0.3, 0.5, 0.7, 0.9)


@dataclass(frozen=True)
class FixtureSpec:
    name: str
    seed: int
    mu_true: Tuple[float, ...] = MU_TRUE
    duration: float = 4.0
    control_rate: float = 240.0
    stride: int = 4
    phases: int = 4
    noise: float = 0.0
    omega_max: float = 10.0
    constant: bool = False
    duty: Optional[Tuple[Tuple[float, ...], ...]] = None


FIXTURES = [FixtureSpec(f"fixture{seed}", seed) for seed in range(1, 9)]

SHIPPED_FIXTURES = [
    FixtureSpec(
        "sample1",
        0,
        duration=2.0,
        duty=(
            (0.8, 0.6, 0.9, 0.5),
            (-0.7, 0.9, 0.6, -0.8),
            (0.5, -0.6, 0.9, 0.7),
            (-0.9, -0.5, -0.6, -1.0),
        ),
    ),
    FixtureSpec(
        "sample2",
        0,
        duration=2.0,
        duty=(
            (0.6, 1.0, -0.5, 0.8),
            (0.9, -0.7, 0.8, 0.4),
            (-0.6, 0.5, 0.7, -0.9),
            (1.0, 0.8, 0.4, 0.6),
        ),
    ),
]


def random_duty(rng: np.random.Generator, count: int) -> np.ndarray:
    magnitude = rng.uniform(0.4, 1.0, size=(count, NUM_WHEELS))
    sign = rng.choice([-1.0, 1.0], size=(count, NUM_WHEELS))
    return magnitude * sign


def make_fixture(
    spec: FixtureSpec, params: Optional[RobotParams] = None
) -> Tuple[ControlSchedule, GroundTruthTrack]:
    """Build the fixture's schedule and ground-truth track in memory."""
    params = params if params is not None else RobotParams(omega_max=spec.omega_max)
    rng = np.random.default_rng(spec.seed)
    steps = int(round(spec.duration * spec.control_rate))
    if spec.duty is not None:
        duty = np.array(spec.duty, dtype=float).reshape(-1, NUM_WHEELS)
        phases = duty.shape[0]
    else:
        phases = 1 if spec.constant else spec.phases
    if steps % (phases * spec.stride):
        raise ValueError("Steps must split evenly into phases and ground-truth strides")
    if spec.duty is None:
        duty = random_duty(rng, phases)
    timestamps = np.arange(steps + 1) / spec.control_rate
    omega_s = np.repeat(duty * params.omega_max, steps // phases, axis=0)
    schedule = ControlSchedule(timestamps, omega_s)
    trajectory = simulate(params, spec.mu_true, schedule, Pose(0.0, 0.0, 0.0))
    keep = np.arange(0, steps + 1, spec.stride)
    xy = trajectory.xy[keep]
    if spec.noise > 0:
        xy = xy + rng.normal(0.0, spec.noise, size=xy.shape)
    return schedule, GroundTruthTrack(timestamps[keep], xy, trajectory.poses[keep, 2])


def constant_fixtures(
    count: int = 8, duration: float = 2.0, omega_max: float = 10.0
) -> List[FixtureSpec]:
    """Constant-command runs, the training set of the data-driven baseline."""
    return [
        FixtureSpec(f"constant{seed}", seed, duration=duration, omega_max=omega_max, constant=True)
        for seed in range(1, count + 1)
    ]


def write_fixture(spec: FixtureSpec, outdir: str) -> Dict[str, str]:
    """Write ``<name>_gt.csv``, ``<name>_controls.csv`` and ``<name>.json``."""
    schedule, track = make_fixture(spec)
    paths = {
        "ground_truth": os.path.join(outdir, f"{spec.name}_gt.csv"),
        "controls": os.path.join(outdir, f"{spec.name}_controls.csv"),
        "meta": os.path.join(outdir, f"{spec.name}.json"),
    }
    write_ground_truth(paths["ground_truth"], track)
    write_controls(paths["controls"], schedule)
    meta = {
        "name": spec.name,
        "synthetic": True,
        "seed": spec.seed,
        "mu_true": list(spec.mu_true),
        "omega_max": spec.omega_max,
        "noise": spec.noise,
        "duration": spec.duration,
        "control_rate": spec.control_rate,
        "stride": spec.stride,
    }
    if spec.duty is not None:
        meta["duty"] = [list(row) for row in spec.duty]
    with open(paths["meta"], "w", encoding="utf-8", newline="\n") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
        f.write("\n")
    return paths


def write_fixtures(outdir: str, specs: Sequence[FixtureSpec] = FIXTURES) -> str:
    """Write every fixture and an experiment configuration naming them; returns its path."""
    os.makedirs(outdir, exist_ok=True)
    trajectories = {}
    for spec in specs:
        paths = write_fixture(spec, outdir)
        trajectories[spec.name] = {
            "ground_truth": os.path.basename(paths["ground_truth"]),
            "controls": os.path.basename(paths["controls"]),
        }
    document = {
        "seed": 42,
        "output_dir": "out",
        "robot": {"omega_max": specs[0].omega_max},
        "control": {"omega_limit": 100.0},
        "trajectories": trajectories,
        "curves": {
            "circle": {"kind": "circle", "radius": 1.0},
            "eight": {"kind": "eight", "scale": 0.5},
        },
    }
    path = os.path.join(outdir, "experiment.json")
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(document, f, indent=2, sort_keys=True)
        f.write("\n")
    logger.info("Wrote %d synthetic fixtures to %s", len(specs), outdir)
    return path


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = argparse.ArgumentParser(description="Write the synthetic identification fixtures.")
    parser.add_argument("outdir", help="directory to write into")
    parser.add_argument("--noise", type=float, default=0.0, help="position noise std-dev in m")
    parser.add_argument(
        "--shipped", action="store_true", help="write the small fixtures kept with the tests"
    )
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO)
    chosen = SHIPPED_FIXTURES if args.shipped else FIXTURES
    specs = [dataclasses.replace(s, noise=args.noise) for s in chosen]
    print(write_fixtures(args.outdir, specs))
    return 0


if __name__ == "__main__":
    sys.exit(main())
