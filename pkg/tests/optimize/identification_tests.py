import unittest

import numpy as np

from prometheus_client import REGISTRY

from mecanum_sysid.loss import LossWeights
from mecanum_sysid.loss import Recording
from mecanum_sysid.model import ControlSchedule
from mecanum_sysid.model import GroundTruthTrack
from mecanum_sysid.model import Pose
from mecanum_sysid.model import RobotParams
from mecanum_sysid.optimize import IdentificationProblem
from mecanum_sysid.optimize import NelderMeadOptions
from mecanum_sysid.optimize import QuasiNewtonSolver
from mecanum_sysid.optimize import data_efficiency_sweep
from mecanum_sysid.optimize import gradient_check
from mecanum_sysid.optimize import identify
from mecanum_sysid.optimize import identify_each
from mecanum_sysid.optimize import identify_quasi_newton
from mecanum_sysid.optimize import solver_class_map
from mecanum_sysid.optimize import truncate_problem
from mecanum_sysid.optimize.base import Solver
from mecanum_sysid.prometheus_metrics import _pkg_version
from mecanum_sysid.synthetic import FixtureSpec
from mecanum_sysid.synthetic import make_fixture

PARAMS = RobotParams()
MU_TRUE = (0.3, 0.5, 0.7, 0.9)


def create_recording(seed, duration=2.0, noise=0.0):
    spec = FixtureSpec(f"fixture{seed}", seed, duration=duration, noise=noise)
    schedule, track = make_fixture(spec, PARAMS)
    return Recording(schedule, track, name=spec.name)


def create_problem(*seeds, **kwargs):
    return IdentificationProblem([create_recording(seed, **kwargs) for seed in seeds], PARAMS)


class IdentificationProblemTests(unittest.TestCase):
    def test_sums_recordings(self):
        problem = create_problem(1, 2)
        x = np.array([1.0, 0.8, 1.2, 0.6])
        first, second = problem.split()
        self.assertAlmostEqual(problem.loss(x), first.loss(x) + second.loss(x), places=9)
        loss, gradient = problem.loss_and_gradient(x)
        self.assertAlmostEqual(loss, problem.loss(x), places=9)
        np.testing.assert_allclose(
            gradient, first.loss_and_gradient(x)[1] + second.loss_and_gradient(x)[1]
        )
        self.assertEqual(problem.samples, first.samples + second.samples)

    def test_bounds(self):
        recording = create_recording(1)
        with self.assertRaises(ValueError):
            IdentificationProblem([], PARAMS)
        with self.assertRaises(ValueError):
            IdentificationProblem([recording], PARAMS, lower=1.0, upper=1.0)
        with self.assertRaises(ValueError):
            IdentificationProblem([recording], PARAMS, upper=3.0)
        narrow = IdentificationProblem([recording], PARAMS, lower=0.2, upper=1.5)
        np.testing.assert_array_equal(narrow.project([0.0, 1.0, 2.0, 0.3]), [0.2, 1.0, 1.5, 0.3])

    def test_truncated(self):
        problem = create_problem(1)
        half = truncate_problem(problem, 0.5)
        self.assertEqual(half.samples, len(problem.recordings[0].track) // 2)
        self.assertIs(truncate_problem(problem, 1.0).recordings[0], problem.recordings[0])
        self.assertIsNone(truncate_problem(problem, 0.001))
        with self.assertRaises(ValueError):
            truncate_problem(problem, 0.0)


class IdentifyTests(unittest.TestCase):
    def test_solver_registry(self):
        self.assertEqual(sorted(solver_class_map), ["cmaes", "nm", "qn"])
        for name, solver_class in solver_class_map.items():
            self.assertTrue(issubclass(solver_class, Solver))
            self.assertEqual(solver_class.name, name)
        with self.assertRaises(ValueError):
            identify(create_problem(1), "lbfgs")

    def test_base_solver(self):
        with self.assertRaises(NotImplementedError):
            Solver().solve(create_problem(1))

    def test_records_metrics(self):
        labels = {"solver": "qn", "converged": "true", "pkg_version": _pkg_version}
        before = REGISTRY.get_sample_value("mecanum_sysid_solver_runs_total", labels) or 0.0
        report = identify(create_problem(1), "qn")
        self.assertTrue(report.converged)
        after = REGISTRY.get_sample_value("mecanum_sysid_solver_runs_total", labels)
        self.assertEqual(after, before + 1)

    def test_options_by_name(self):
        report = identify(create_problem(1), "nm", options=NelderMeadOptions(max_evals=40))
        self.assertLessEqual(report.function_evals, 50)

    def test_identify_each(self):
        problem = create_problem(1, 2, 3)
        serial = identify_each(problem, "qn")
        parallel = identify_each(problem, "qn", jobs=3)
        self.assertEqual(len(serial), 3)
        for a, b in zip(serial, parallel):
            np.testing.assert_array_equal(a.solution, b.solution)
            self.assertLess(np.max(np.abs(a.solution - MU_TRUE)), 1e-3)

    def test_joint_matches_separate(self):
        problem = create_problem(1, 2)
        joint = identify_quasi_newton(problem)
        self.assertLess(np.max(np.abs(joint.solution - MU_TRUE)), 1e-3)

    def test_solver_instance(self):
        report = QuasiNewtonSolver().solve(create_problem(4), (1.5, 1.5, 1.5, 1.5))
        self.assertLess(np.max(np.abs(report.mu_hat.mu - MU_TRUE)), 1e-3)
        summary = report.to_dict()
        self.assertNotIn("wall_time", summary)
        self.assertIn("wall_time", report.to_dict(include_timing=True))


class GradientCheckTests(unittest.TestCase):
    def test_passes(self):
        rng = np.random.default_rng(8)
        problem = create_problem(5)
        check = gradient_check(problem, rng.uniform(0.1, 1.9, size=4))
        self.assertLess(check.max_rel_err, 1e-5)
        self.assertTrue(check.passed())

    def test_motionless(self):
        schedule = ControlSchedule.constant([0, 0, 0, 0], duration=1.0, rate=240.0)
        timestamps = schedule.timestamps[::4]
        track = GroundTruthTrack(timestamps, np.column_stack((timestamps, timestamps)))
        problem = IdentificationProblem([Recording(schedule, track, start=Pose(0, 0, 0))], PARAMS)
        check = gradient_check(problem, [0.5, 0.5, 0.5, 0.5])
        np.testing.assert_array_equal(check.analytic, 0.0)
        np.testing.assert_array_equal(check.numeric, 0.0)
        self.assertTrue(check.passed())

    def test_detects_sign_flip(self):
        problem = create_problem(6)
        x = np.array([0.9, 1.1, 0.5, 1.3])

        def flipped(point):
            g = problem.loss_and_gradient(point)[1].copy()
            g[2] = -g[2]
            return g

        check = gradient_check(problem, x, gradient=flipped)
        self.assertGreater(check.rel_err[2], 0.1)
        self.assertFalse(check.passed())

    def test_coarse_step(self):
        problem = create_problem(5)
        x = np.array([0.9, 1.1, 0.5, 1.3])
        coarse = gradient_check(problem, x, h=1e-2)
        self.assertTrue(np.all(np.isfinite(coarse.rel_err)))
        self.assertEqual(coarse.h, 1e-2)

    def test_too_close_to_bounds(self):
        with self.assertRaises(ValueError):
            gradient_check(create_problem(5), [0.0, 1.0, 1.0, 1.0])


class DataEfficiencyTests(unittest.TestCase):
    def test_full_fraction_matches_identification(self):
        problem = create_problem(1)
        (point,) = data_efficiency_sweep(problem, [1.0])
        baseline = identify_quasi_newton(problem)
        self.assertEqual(point.fraction, 1.0)
        np.testing.assert_array_equal(point.report.solution, baseline.solution)
        self.assertAlmostEqual(point.final_loss, baseline.final_loss, places=12)

    def test_sorted_and_skips_empty(self):
        problem = create_problem(1)
        points = data_efficiency_sweep(problem, [1.0, 0.6, 0.001, 0.4, 0.6])
        self.assertEqual([p.fraction for p in points], [0.4, 0.6, 1.0])
        samples = [p.samples for p in points]
        self.assertEqual(samples, sorted(samples))

    def test_partial_data_is_enough(self):
        problem = create_problem(1)
        points = {p.fraction: p for p in data_efficiency_sweep(problem, [0.4, 1.0])}
        self.assertLess(np.max(np.abs(points[0.4].report.solution - MU_TRUE)), 1e-2)
        self.assertLess(points[0.4].final_loss, points[1.0].final_loss + 0.05)

    def test_custom_weights_flow_through(self):
        recording = create_recording(2)
        problem = IdentificationProblem([recording], PARAMS, weights=LossWeights(0.0, 1.0))
        report = identify_quasi_newton(problem)
        self.assertLess(np.max(np.abs(report.solution - MU_TRUE)), 1e-3)
