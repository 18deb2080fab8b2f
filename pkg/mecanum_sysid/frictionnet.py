"""Small multilayer perceptrons trained with plain backpropagation.

Two networks are built from :py:class:`Mlp`:

* the friction predictor (4-16-4) mapping applied wheel commands to the
  coefficients identified for them, squashed into ``[0, 2]``;
* the data-driven baseline (3-32-4) mapping a desired pose change to duty
  cycles in ``[-1, 1]``, used as a point of comparison for the planner.

Weights serialize to JSON::

    {
        "sizes": [4, 16, 4],
        "output": "sigmoid2",
        "input_scale": 0.1,
        "weights": [[[...], ...], ...],   # one (fan_in, fan_out) matrix per layer, row-major
        "biases": [[...], ...]
    }
"""
import json
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

from scipy.special import expit
from typing_extensions import Literal

from mecanum_sysid.model import ArrayLike
from mecanum_sysid.model import ControlSchedule
from mecanum_sysid.model import FrictionCoeffs
from mecanum_sysid.model import GroundTruthTrack
from mecanum_sysid.model import MU_LOWER
from mecanum_sysid.model import MU_UPPER
from mecanum_sysid.model import NUM_WHEELS
from mecanum_sysid.model import Pose
from mecanum_sysid.model import RobotParams
from mecanum_sysid.model import Trajectory
from mecanum_sysid.model import simulate


logger = logging.getLogger(__name__)


OutputTransform = Literal["identity", "sigmoid2", "tanh"]

FRICTION_SIZES = (NUM_WHEELS, 16, NUM_WHEELS)
BASELINE_SIZES = (3, 32, NUM_WHEELS)
BASELINE_INPUT_SCALE = 10.0
DIVERGENCE_LOSS = 1e6


class ShapeMismatchError(ValueError):
    pass


class TrainingDivergedError(RuntimeError):
    """Training loss blew up; ``history`` holds the losses seen so far."""

    def __init__(self, history: List[float]):
        self.history = history
        super().__init__(f"Training diverged after {len(history)} epochs (loss {history[-1]!r})")


def _apply_output(z: np.ndarray, output: str) -> Tuple[np.ndarray, np.ndarray]:
    """Transformed output and its elementwise derivative."""
    if output == "sigmoid2":
        s = expit(z)
        return 2.0 * s, 2.0 * s * (1.0 - s)
    if output == "tanh":
        t = np.tanh(z)
        return t, 1.0 - t ** 2
    return z, np.ones_like(z)


@dataclass
class Mlp:
    """Fully connected network with tanh hidden layers.

    Inputs are multiplied by ``input_scale`` before the first layer.
    """

    weights: List[np.ndarray]
    biases: List[np.ndarray]
    output: OutputTransform = "identity"
    input_scale: float = 1.0

    def __post_init__(self) -> None:
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ShapeMismatchError("Every layer needs one weight matrix and one bias vector")
        self.weights = [np.array(w, dtype=float) for w in self.weights]
        self.biases = [np.array(b, dtype=float).reshape(-1) for b in self.biases]
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or w.shape[1] != b.size:
                raise ShapeMismatchError(
                    f"Layer {i}: weights {w.shape} do not match biases {b.shape}"
                )
            if i and self.weights[i - 1].shape[1] != w.shape[0]:
                raise ShapeMismatchError(f"Layer {i} expects {w.shape[0]} inputs")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise ValueError(f"Layer {i} has non-finite parameters")
        if self.output not in ("identity", "sigmoid2", "tanh"):
            raise ValueError(f"Unknown output transform {self.output!r}")

    @property
    def sizes(self) -> Tuple[int, ...]:
        return (self.weights[0].shape[0],) + tuple(w.shape[1] for w in self.weights)

    @classmethod
    def zeros(
        cls, sizes: Sequence[int], output: OutputTransform = "identity", input_scale: float = 1.0
    ) -> "Mlp":
        return cls(
            [np.zeros((a, b)) for a, b in zip(sizes[:-1], sizes[1:])],
            [np.zeros(b) for b in sizes[1:]],
            output,
            input_scale,
        )

    @classmethod
    def initialize(
        cls,
        sizes: Sequence[int],
        output: OutputTransform = "identity",
        input_scale: float = 1.0,
        seed: int = 42,
    ) -> "Mlp":
        """Weights uniform in ``+-1/sqrt(fan_in)``, biases zero."""
        rng = np.random.default_rng(seed)
        weights = []
        for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        return cls(weights, [np.zeros(b) for b in sizes[1:]], output, input_scale)

    def copy(self) -> "Mlp":
        return Mlp(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.output,
            self.input_scale,
        )

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        batch = x.reshape(-1, x.shape[-1]) if x.ndim else x.reshape(1, 1)
        if batch.shape[1] != self.sizes[0]:
            raise ShapeMismatchError(f"Expected {self.sizes[0]} inputs, got {batch.shape[1]}")
        return batch

    def _forward(self, x: np.ndarray) -> Tuple[List[np.ndarray], np.ndarray, np.ndarray]:
        activations = [x * self.input_scale]
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            activations.append(np.tanh(activations[-1] @ w + b))
        z = activations[-1] @ self.weights[-1] + self.biases[-1]
        y, dy = _apply_output(z, self.output)
        return activations, y, dy

    def forward(self, x: ArrayLike) -> np.ndarray:
        """Network output for one input vector or a batch of row vectors."""
        x = np.asarray(x, dtype=float)
        y = self._forward(self._check_input(x))[1]
        return y[0] if x.ndim == 1 else y

    def to_dict(self) -> Dict[str, Any]:
        return {
            "sizes": list(self.sizes),
            "output": self.output,
            "input_scale": self.input_scale,
            "weights": [w.tolist() for w in self.weights],
            "biases": [b.tolist() for b in self.biases],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Mlp":
        input_scale = float(data.get("input_scale", 1.0))
        net = cls(data["weights"], data["biases"], data["output"], input_scale)
        if list(net.sizes) != list(data["sizes"]):
            raise ShapeMismatchError(
                f"Declared sizes {data['sizes']} do not match weights {net.sizes}"
            )
        return net

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")

    @classmethod
    def load(cls, path: str) -> "Mlp":
        with open(path, encoding="utf-8") as f:
            return cls.from_dict(json.load(f))


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    epochs: int = 20000
    batch_size: Optional[int] = None
    seed: int = 42
    l2: float = 0.0

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.l2 < 0:
            raise ValueError("l2 must be non-negative")


@dataclass
class TrainResult:
    net: Mlp
    history: List[float] = field(default_factory=list)

    @property
    def final_loss(self) -> float:
        return self.history[-1]


def loss_and_gradients(
    net: Mlp, inputs: np.ndarray, targets: np.ndarray, l2: float = 0.0
) -> Tuple[float, List[np.ndarray], List[np.ndarray]]:
    """Mean squared error ``0.5 * mean_k |y_k - t_k|^2`` and its parameter gradients.

    The L2 penalty ``0.5 * l2 * sum |W|^2`` covers weights only.
    """
    inputs = net._check_input(inputs)
    targets = np.asarray(targets, dtype=float).reshape(inputs.shape[0], -1)
    if targets.shape[1] != net.sizes[-1]:
        raise ShapeMismatchError(f"Expected {net.sizes[-1]} targets, got {targets.shape[1]}")
    count = inputs.shape[0]
    activations, y, dy = net._forward(inputs)
    error = y - targets
    loss = 0.5 * float(np.sum(error ** 2)) / count
    loss += 0.5 * l2 * sum(float(np.sum(w ** 2)) for w in net.weights)

    grad_w: List[np.ndarray] = [np.empty(0)] * len(net.weights)
    grad_b: List[np.ndarray] = [np.empty(0)] * len(net.biases)
    delta = error * dy / count
    for layer in range(len(net.weights) - 1, -1, -1):
        grad_w[layer] = activations[layer].T @ delta + l2 * net.weights[layer]
        grad_b[layer] = np.sum(delta, axis=0)
        if layer:
            delta = (delta @ net.weights[layer].T) * (1.0 - activations[layer] ** 2)
    return loss, grad_w, grad_b


def train(
    net: Mlp, inputs: ArrayLike, targets: ArrayLike, cfg: TrainConfig = TrainConfig()
) -> TrainResult:
    """Gradient descent on the squared error; full batch unless ``batch_size`` is set.

    The input net is left untouched. ``history`` holds the training loss
    before every epoch's update.
    """
    inputs = net._check_input(np.asarray(inputs, dtype=float))
    targets = np.asarray(targets, dtype=float).reshape(inputs.shape[0], -1)
    if inputs.shape[0] == 0:
        raise ValueError("Cannot train on an empty dataset")
    trained = net.copy()
    rng = np.random.default_rng(cfg.seed)
    history: List[float] = []
    count = inputs.shape[0]
    batch = count if cfg.batch_size is None else min(cfg.batch_size, count)
    for epoch in range(cfg.epochs):
        order = np.arange(count) if batch == count else rng.permutation(count)
        epoch_loss = loss_and_gradients(trained, inputs, targets, cfg.l2)[0]
        history.append(epoch_loss)
        if not np.isfinite(epoch_loss) or epoch_loss > DIVERGENCE_LOSS:
            raise TrainingDivergedError(history)
        for first in range(0, count, batch):
            rows = order[first : first + batch]
            _, grad_w, grad_b = loss_and_gradients(trained, inputs[rows], targets[rows], cfg.l2)
            for layer in range(len(trained.weights)):
                trained.weights[layer] -= cfg.learning_rate * grad_w[layer]
                trained.biases[layer] -= cfg.learning_rate * grad_b[layer]
        if epoch % 1000 == 0:
            logger.debug("Epoch %d: loss %.6g", epoch, epoch_loss)
    logger.info(
        "Trained %s net for %d epochs, final loss %.6g", trained.sizes, cfg.epochs, history[-1]
    )
    return TrainResult(trained, history)


def _expect_sizes(net: Mlp, sizes: Tuple[int, ...]) -> None:
    if net.sizes != sizes:
        raise ShapeMismatchError(f"Expected a {sizes} network, got {net.sizes}")


def friction_net(params: RobotParams, seed: int = 42) -> Mlp:
    """Untrained 4-16-4 friction predictor with inputs normalized by ``omega_max``."""
    return Mlp.initialize(FRICTION_SIZES, "sigmoid2", 1.0 / params.omega_max, seed)


def predict_friction(net: Mlp, omega_s: ArrayLike) -> FrictionCoeffs:
    _expect_sizes(net, FRICTION_SIZES)
    omega_s = np.asarray(omega_s, dtype=float)
    if omega_s.shape != (NUM_WHEELS,):
        raise ShapeMismatchError(
            f"Expected {NUM_WHEELS} commanded speeds, got shape {omega_s.shape}"
        )
    return FrictionCoeffs(np.clip(net.forward(omega_s), MU_LOWER, MU_UPPER))


def baseline_net(seed: int = 42) -> Mlp:
    """Untrained 3-32-4 baseline mapping a pose change to duty cycles."""
    return Mlp.initialize(BASELINE_SIZES, "tanh", BASELINE_INPUT_SCALE, seed)


def predict_controls_baseline(net: Mlp, delta_pose: ArrayLike) -> np.ndarray:
    """Duty cycles in ``[-1, 1]``; scale by ``omega_max`` to get wheel speeds."""
    _expect_sizes(net, BASELINE_SIZES)
    delta_pose = np.asarray(delta_pose, dtype=float)
    if delta_pose.shape != (3,):
        raise ShapeMismatchError(f"Expected a 3-element pose change, got shape {delta_pose.shape}")
    return np.clip(net.forward(delta_pose), -1.0, 1.0)


def representative_command(schedule: ControlSchedule) -> np.ndarray:
    """Time-weighted mean commanded speed of each wheel."""
    return np.average(schedule.omega_s, axis=0, weights=schedule.dt)


def build_friction_dataset(
    schedules: Sequence[ControlSchedule], estimates: Sequence[FrictionCoeffs]
) -> Tuple[np.ndarray, np.ndarray]:
    """Pair each trajectory's representative command with the friction identified on it."""
    if len(schedules) != len(estimates) or not schedules:
        raise ValueError("Need one friction estimate per schedule")
    inputs = np.array([representative_command(s) for s in schedules])
    targets = np.array([e.mu for e in estimates])
    return inputs, targets


def build_baseline_dataset(
    schedules: Sequence[ControlSchedule],
    tracks: Sequence[GroundTruthTrack],
    omega_max: float,
    horizon: float,
) -> Tuple[np.ndarray, np.ndarray]:
    """Pose changes over ``horizon`` seconds paired with the duty cycle applied at their start.

    Pose changes are world-frame ``(dx, dy, dtheta)`` between ground-truth
    samples ``horizon`` apart. Tracks without headings contribute zero
    ``dtheta``.
    """
    inputs = []
    targets = []
    for schedule, track in zip(schedules, tracks):
        theta = track.theta if track.theta is not None else np.zeros(len(track))
        poses = np.column_stack((track.xy, theta))
        ahead = np.searchsorted(track.timestamps, track.timestamps + horizon - 1e-9)
        for i, j in enumerate(ahead):
            if j >= len(track):
                break
            step = np.searchsorted(schedule.timestamps, track.timestamps[i], side="right") - 1
            step = min(step, len(schedule) - 1)
            inputs.append(poses[j] - poses[i])
            targets.append(schedule.omega_s[max(step, 0)] / omega_max)
    if not inputs:
        raise ValueError(f"No sample pair is {horizon} s apart")
    return np.array(inputs), np.clip(np.array(targets), -1.0, 1.0)


def train_baseline(
    schedules: Sequence[ControlSchedule],
    tracks: Sequence[GroundTruthTrack],
    omega_max: float,
    horizon: float,
    cfg: TrainConfig = TrainConfig(),
) -> TrainResult:
    inputs, targets = build_baseline_dataset(schedules, tracks, omega_max, horizon)
    return train(baseline_net(cfg.seed), inputs, targets, cfg)


def train_friction_net(
    params: RobotParams,
    schedules: Sequence[ControlSchedule],
    estimates: Sequence[FrictionCoeffs],
    cfg: TrainConfig = TrainConfig(),
) -> TrainResult:
    inputs, targets = build_friction_dataset(schedules, estimates)
    return train(friction_net(params, cfg.seed), inputs, targets, cfg)


def baseline_rollout(
    net: Mlp,
    params: RobotParams,
    mu_true: FrictionCoeffs,
    waypoints: GroundTruthTrack,
    start: Pose,
    steps_per_segment: int = 8,
) -> Tuple[ControlSchedule, Trajectory]:
    """Drive the true model towards each waypoint in turn with the baseline net.

    At every waypoint interval the net sees the world-frame change from the
    current pose to the next waypoint (heading change zero) and its duty
    cycles are held for the interval. Returns the applied schedule and the
    resulting trajectory.
    """
    pose = Pose(*start)
    timestamps = [float(waypoints.timestamps[0])]
    controls = []
    poses = [np.array(pose)]
    for k in range(1, len(waypoints)):
        target = waypoints.xy[k]
        duty = predict_controls_baseline(net, [target[0] - pose.x, target[1] - pose.y, 0.0])
        t0 = float(waypoints.timestamps[k - 1])
        dt = (float(waypoints.timestamps[k]) - t0) / steps_per_segment
        segment = ControlSchedule(
            t0 + dt * np.arange(steps_per_segment + 1),
            np.tile(duty * params.omega_max, (steps_per_segment, 1)),
        )
        trajectory = simulate(params, mu_true, segment, pose)
        pose = trajectory.final
        timestamps.extend(segment.timestamps[1:])
        controls.extend(segment.omega_s)
        poses.extend(trajectory.poses[1:])
    schedule = ControlSchedule(timestamps, controls)
    return schedule, Trajectory(schedule.timestamps, np.array(poses))
