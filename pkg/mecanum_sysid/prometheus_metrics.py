from typing import Callable
from typing import cast

from importlib.metadata import PackageNotFoundError
from importlib.metadata import version as pkg_version

from prometheus_client import Counter
from prometheus_client import Histogram

try:
    _pkg_version = cast(Callable[[str], str], pkg_version)("mecanum-sysid")
except PackageNotFoundError:
    _pkg_version = ""

solver_runs_counter = Counter(
    "mecanum_sysid_solver_runs_total",
    "Count of identification and planning solver runs by solver and convergence",
    ["solver", "converged", "pkg_version"],
)

solver_seconds = Histogram(
    "mecanum_sysid_solver_seconds",
    "Wall time of solver runs in seconds",
    ["solver"],
)


def record_solve(solver: str, converged: bool, wall_time: float) -> None:
    solver_runs_counter.labels(
        solver=solver,
        converged=str(converged).lower(),
        pkg_version=_pkg_version,
    ).inc()
    solver_seconds.labels(solver=solver).observe(wall_time)
