"""Experiment configuration.

The configuration is a JSON document. It is flattened into dotted keys
(``{"robot": {"mass": 4}}`` becomes ``robot.mass = "4"``, lists become
comma-separated values) and parsed with :py:func:`baseplate.lib.config.parse_config`.
Keys outside the schema are rejected. Example::

    {
        "seed": 42,
        "output_dir": "out",
        "robot": {"omega_max": 100},
        "identify": {"solver": "qn", "x0": [1, 1, 1, 1]},
        "trajectories": {
            "run1": {"ground_truth": "run1_gt.csv", "controls": "run1_controls.csv"}
        },
        "curves": {"circle": {"kind": "circle", "radius": 1.0}},
        "follow": {"mu_file": "identify.json"}
    }

Relative paths are resolved against the directory of the configuration file
and must exist. The ``MECANUM_SEED`` environment variable overrides ``seed``.
"""
import json
import logging
import os
import re

from dataclasses import dataclass
from dataclasses import field
from typing import Any
from typing import Callable
from typing import Dict
from typing import List
from typing import Mapping
from typing import Optional
from typing import Tuple

from baseplate.lib import config
from baseplate.lib.config import ConfigurationError

from mecanum_sysid.control import PlanMode
from mecanum_sysid.control import ReferenceCurve
from mecanum_sysid.frictionnet import TrainConfig
from mecanum_sysid.io import TrajectoryFileError
from mecanum_sysid.io import read_vertices
from mecanum_sysid.loss import LossWeights
from mecanum_sysid.model import RobotParams
from mecanum_sysid.optimize import CmaesOptions
from mecanum_sysid.optimize import NelderMeadOptions
from mecanum_sysid.optimize import QuasiNewtonOptions


logger = logging.getLogger(__name__)


SEED_ENVIRONMENT_VARIABLE = "MECANUM_SEED"
DEFAULT_SEED = 42

# named sections whose second key component is a user-chosen name
NAMED_SECTIONS = ("trajectories", "curves")
TRAJECTORY_FIELDS = frozenset(["ground_truth", "controls"])
CURVE_FIELDS = frozenset(
    [
        "kind",
        "radius",
        "center",
        "start_angle",
        "span",
        "scale",
        "right_lobe_reversed",
        "left_lobe_reversed",
        "vertices_file",
        "duration",
        "rate",
    ]
)


@dataclass(frozen=True)
class IdentifyConfig:
    solver: str = "qn"
    x0: Tuple[float, ...] = (1.0, 1.0, 1.0, 1.0)
    lower: Tuple[float, ...] = (0.0, 0.0, 0.0, 0.0)
    upper: Tuple[float, ...] = (2.0, 2.0, 2.0, 2.0)
    joint: bool = False
    jobs: int = 1
    quasi_newton: QuasiNewtonOptions = QuasiNewtonOptions()


@dataclass(frozen=True)
class ControlConfig:
    duration: float = 8.0
    rate: float = 4.0
    steps_per_segment: int = 8
    omega_limit: Optional[float] = None
    mode: PlanMode = "joint"


@dataclass(frozen=True)
class TrajectorySource:
    ground_truth: str
    controls: str


@dataclass(frozen=True)
class FollowConfig:
    mu: Optional[Tuple[float, ...]] = None
    mu_file: Optional[str] = None
    net_file: Optional[str] = None


@dataclass(frozen=True)
class ExperimentConfig:
    robot: RobotParams = RobotParams()
    weights: LossWeights = LossWeights()
    identify: IdentifyConfig = IdentifyConfig()
    cmaes: CmaesOptions = CmaesOptions()
    nelder_mead: NelderMeadOptions = NelderMeadOptions()
    control: ControlConfig = ControlConfig()
    frictionnet: TrainConfig = TrainConfig()
    sweep_fractions: Tuple[float, ...] = (0.2, 0.4, 0.6, 0.8, 1.0)
    trajectories: Dict[str, TrajectorySource] = field(default_factory=dict)
    curves: Dict[str, ReferenceCurve] = field(default_factory=dict)
    follow: FollowConfig = FollowConfig()
    seed: int = DEFAULT_SEED
    output_dir: str = "."


def ExistingPath(base_dir: str) -> Callable[[str], str]:
    """Parser resolving a path against ``base_dir`` and requiring that it exists."""

    def parse(text: str) -> str:
        path = os.path.normpath(os.path.join(base_dir, text))
        if not os.path.exists(path):
            raise ValueError(f"file not found: {path}")
        return path

    return parse


def _spec(base_dir: str) -> Dict[str, Any]:
    path = ExistingPath(base_dir)
    optional_path = config.Optional(path)
    floats = config.TupleOf(config.Float)
    return {
        "seed": config.Optional(config.Integer, default=DEFAULT_SEED),
        "output_dir": config.Optional(config.String, default="."),
        "robot": {
            "mass": config.Optional(config.Float, default=4.0),
            "gravity": config.Optional(config.Float, default=9.8),
            "wheel_radius": config.Optional(config.Float, default=0.03),
            "stall_torque": config.Optional(config.Float, default=0.6),
            "half_length": config.Optional(config.Float, default=0.1),
            "half_width": config.Optional(config.Float, default=0.1),
            "wheel_inertia": config.Optional(config.Float, default=0.001),
            "omega_max": config.Optional(config.Float, default=10.0),
        },
        "loss": {
            "w_spline": config.Optional(config.Float, default=0.8),
            "w_ground_truth": config.Optional(config.Float, default=0.2),
        },
        "identify": {
            "solver": config.Optional(config.OneOf(qn="qn", nm="nm", cmaes="cmaes"), default="qn"),
            "x0": config.Optional(floats, default=[1.0, 1.0, 1.0, 1.0]),
            "lower": config.Optional(floats, default=[0.0, 0.0, 0.0, 0.0]),
            "upper": config.Optional(floats, default=[2.0, 2.0, 2.0, 2.0]),
            "max_iterations": config.Optional(config.Integer, default=200),
            "memory": config.Optional(config.Integer, default=10),
            "joint": config.Optional(config.Boolean, default=False),
            "jobs": config.Optional(config.Integer, default=1),
        },
        "cmaes": {
            "population": config.Optional(config.Integer, default=8),
            "sigma0": config.Optional(config.Float, default=0.3),
            "max_evals": config.Optional(config.Integer, default=5000),
        },
        "nelder_mead": {
            "edge": config.Optional(config.Float, default=0.25),
            "max_evals": config.Optional(config.Integer, default=2000),
        },
        "control": {
            "duration": config.Optional(config.Float, default=8.0),
            "rate": config.Optional(config.Float, default=4.0),
            "steps_per_segment": config.Optional(config.Integer, default=8),
            "omega_limit": config.Optional(config.Float),
            "mode": config.Optional(
                config.OneOf(joint="joint", sequential="sequential"), default="joint"
            ),
        },
        "frictionnet": {
            "learning_rate": config.Optional(config.Float, default=0.01),
            "epochs": config.Optional(config.Integer, default=20000),
            "l2": config.Optional(config.Float, default=0.0),
        },
        "sweep": {
            "fractions": config.Optional(floats, default=[0.2, 0.4, 0.6, 0.8, 1.0]),
        },
        "trajectories": config.DictOf({"ground_truth": path, "controls": path}),
        "curves": config.DictOf(
            {
                "kind": config.OneOf(circle="circle", eight="eight", polyline="polyline"),
                "radius": config.Optional(config.Float),
                "center": config.Optional(floats),
                "start_angle": config.Optional(config.Float),
                "span": config.Optional(config.Float),
                "scale": config.Optional(config.Float),
                "right_lobe_reversed": config.Optional(config.Boolean),
                "left_lobe_reversed": config.Optional(config.Boolean),
                "vertices_file": optional_path,
                "duration": config.Optional(config.Float),
                "rate": config.Optional(config.Float),
            }
        ),
        "follow": {
            "mu": config.Optional(floats),
            "mu_file": optional_path,
            "net_file": optional_path,
        },
    }


def _stringify(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (list, tuple)):
        return ", ".join(_stringify(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def flatten(document: Mapping[str, Any], prefix: str = "") -> Dict[str, str]:
    """Flatten nested JSON objects into dotted keys with string values."""
    flat: Dict[str, str] = {}
    for key, value in document.items():
        path = f"{prefix}{key}"
        if isinstance(value, Mapping):
            flat.update(flatten(value, path + "."))
        elif value is not None:
            flat[path] = _stringify(value)
    return flat


def _known_keys(spec: Mapping[str, Any], prefix: str = "") -> List[str]:
    keys = []
    for key, item in spec.items():
        if isinstance(item, Mapping):
            keys.extend(_known_keys(item, f"{prefix}{key}."))
        else:
            keys.append(f"{prefix}{key}")
    return keys


def _check_unknown_keys(raw: Mapping[str, str], spec: Mapping[str, Any]) -> None:
    known = set(_known_keys({k: v for k, v in spec.items() if k not in NAMED_SECTIONS}))
    named = {"trajectories": TRAJECTORY_FIELDS, "curves": CURVE_FIELDS}
    for key in sorted(raw):
        if key in known:
            continue
        match = re.match(r"^([^.]+)\.([^.]+)\.([^.]+)$", key)
        if match and match.group(1) in named and match.group(3) in named[match.group(1)]:
            continue
        raise ConfigurationError(key, "unknown key")


def _section(build: Callable[..., Any], key: str, **kwargs: Any) -> Any:
    try:
        return build(**kwargs)
    except ValueError as exc:
        raise ConfigurationError(key, str(exc))


def _curve(name: str, raw: Mapping[str, Any], control: ControlConfig) -> ReferenceCurve:
    options = {k: v for k, v in raw.items() if v is not None and k != "vertices_file"}
    options.setdefault("duration", control.duration)
    options.setdefault("rate", control.rate)
    if "center" in options:
        options["center"] = tuple(options["center"])
    if raw.get("vertices_file"):
        try:
            options["vertices"] = read_vertices(raw["vertices_file"])
        except TrajectoryFileError as exc:
            raise ConfigurationError(f"curves.{name}.vertices_file", str(exc))
    return _section(ReferenceCurve, f"curves.{name}", **options)


def parse_experiment_config(
    document: Mapping[str, Any], base_dir: str = ".", environ: Optional[Mapping[str, str]] = None
) -> ExperimentConfig:
    """Validate a configuration document and build the typed configuration."""
    environ = os.environ if environ is None else environ
    raw = flatten(document)
    spec = _spec(base_dir)
    _check_unknown_keys(raw, spec)
    cfg = config.parse_config(raw, spec)

    seed = cfg.seed
    if environ.get(SEED_ENVIRONMENT_VARIABLE):
        try:
            seed = int(environ[SEED_ENVIRONMENT_VARIABLE])
        except ValueError:
            raise ConfigurationError(SEED_ENVIRONMENT_VARIABLE, "must be an integer")

    robot = _section(RobotParams, "robot", **dict(cfg.robot))
    weights = _section(LossWeights, "loss", **dict(cfg.loss))
    quasi_newton = _section(
        QuasiNewtonOptions,
        "identify",
        memory=cfg.identify.memory,
        max_iterations=cfg.identify.max_iterations,
    )
    for key in ("x0", "lower", "upper"):
        if len(cfg.identify[key]) != 4:
            raise ConfigurationError(f"identify.{key}", "expected 4 values")
    identify = IdentifyConfig(
        solver=cfg.identify.solver,
        x0=tuple(cfg.identify.x0),
        lower=tuple(cfg.identify.lower),
        upper=tuple(cfg.identify.upper),
        joint=cfg.identify.joint,
        jobs=max(cfg.identify.jobs, 1),
        quasi_newton=quasi_newton,
    )
    control = ControlConfig(**dict(cfg.control))
    if cfg.follow.mu is not None and len(cfg.follow.mu) != 4:
        raise ConfigurationError("follow.mu", "expected 4 values")

    return ExperimentConfig(
        robot=robot,
        weights=weights,
        identify=identify,
        cmaes=_section(CmaesOptions, "cmaes", seed=seed, **dict(cfg.cmaes)),
        nelder_mead=_section(NelderMeadOptions, "nelder_mead", **dict(cfg.nelder_mead)),
        control=control,
        frictionnet=_section(TrainConfig, "frictionnet", seed=seed, **dict(cfg.frictionnet)),
        sweep_fractions=tuple(sorted(cfg.sweep.fractions)),
        trajectories={
            name: TrajectorySource(source.ground_truth, source.controls)
            for name, source in sorted(cfg.trajectories.items())
        },
        curves={
            name: _curve(name, dict(raw_curve), control)
            for name, raw_curve in sorted(cfg.curves.items())
        },
        follow=FollowConfig(
            mu=tuple(cfg.follow.mu) if cfg.follow.mu is not None else None,
            mu_file=cfg.follow.mu_file,
            net_file=cfg.follow.net_file,
        ),
        seed=seed,
        output_dir=os.path.normpath(os.path.join(base_dir, cfg.output_dir)),
    )


def load_experiment_config(
    path: str, environ: Optional[Mapping[str, str]] = None
) -> ExperimentConfig:
    try:
        with open(path, encoding="utf-8") as f:
            document = json.load(f)
    except FileNotFoundError:
        raise ConfigurationError(path, "file not found")
    except json.JSONDecodeError as exc:
        raise ConfigurationError(path, f"invalid JSON: {exc}")
    if not isinstance(document, dict):
        raise ConfigurationError(path, "expected a JSON object")
    return parse_experiment_config(document, os.path.dirname(os.path.abspath(path)), environ)
