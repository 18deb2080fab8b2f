import contextlib
import io
import json
import os
import tempfile
import unittest

import numpy as np

from mecanum_sysid.config import load_experiment_config
from mecanum_sysid.io import read_controls
from mecanum_sysid.io import read_ground_truth
from mecanum_sysid.model import Pose
from mecanum_sysid.model import RobotParams
from mecanum_sysid.model import simulate
from mecanum_sysid.synthetic import FIXTURES
from mecanum_sysid.synthetic import SHIPPED_FIXTURES
from mecanum_sysid.synthetic import FixtureSpec
from mecanum_sysid.synthetic import constant_fixtures
from mecanum_sysid.synthetic import main
from mecanum_sysid.synthetic import make_fixture
from mecanum_sysid.synthetic import write_fixtures

PARAMS = RobotParams()
FIXTURE_DIR = os.path.join(os.path.dirname(__file__), "fixtures")


class MakeFixtureTests(unittest.TestCase):
    def test_layout(self):
        schedule, track = make_fixture(FixtureSpec("a", 1), PARAMS)
        self.assertEqual(len(schedule), 960)
        self.assertEqual(len(track), 241)
        np.testing.assert_allclose(np.diff(schedule.timestamps), 1 / 240.0)
        self.assertEqual(len(np.unique(schedule.omega_s, axis=0)), 4)
        magnitudes = np.abs(schedule.omega_s)
        self.assertTrue(np.all((magnitudes >= 4.0) & (magnitudes <= 10.0)))

    def test_track_follows_model(self):
        spec = FixtureSpec("a", 2, duration=1.0)
        schedule, track = make_fixture(spec, PARAMS)
        trajectory = simulate(PARAMS, spec.mu_true, schedule, Pose(0.0, 0.0, 0.0))
        np.testing.assert_array_equal(track.xy, trajectory.xy[::4])
        np.testing.assert_array_equal(track.theta, trajectory.poses[::4, 2])
        self.assertEqual(track.start_pose(), Pose(0.0, 0.0, 0.0))

    def test_deterministic(self):
        first = make_fixture(FixtureSpec("a", 3), PARAMS)
        second = make_fixture(FixtureSpec("a", 3), PARAMS)
        np.testing.assert_array_equal(first[0].omega_s, second[0].omega_s)
        np.testing.assert_array_equal(first[1].xy, second[1].xy)

    def test_noise(self):
        clean = make_fixture(FixtureSpec("a", 4), PARAMS)
        noisy = make_fixture(FixtureSpec("a", 4, noise=0.01), PARAMS)
        np.testing.assert_array_equal(clean[0].omega_s, noisy[0].omega_s)
        offset = noisy[1].xy - clean[1].xy
        self.assertGreater(np.std(offset), 0.005)
        self.assertLess(np.std(offset), 0.02)

    def test_constant(self):
        (spec,) = constant_fixtures(1)
        schedule, _ = make_fixture(spec, PARAMS)
        self.assertEqual(len(np.unique(schedule.omega_s, axis=0)), 1)
        self.assertEqual(schedule.duration, 2.0)

    def test_duty_table(self):
        spec = SHIPPED_FIXTURES[0]
        schedule, track = make_fixture(spec, PARAMS)
        self.assertEqual(len(schedule), 480)
        self.assertEqual(len(track), 121)
        np.testing.assert_array_equal(schedule.omega_s[0], [8.0, 6.0, 9.0, 5.0])
        np.testing.assert_array_equal(schedule.omega_s[-1], [-9.0, -5.0, -6.0, -10.0])
        self.assertEqual(len(np.unique(schedule.omega_s, axis=0)), 4)

    def test_uneven_split(self):
        with self.assertRaises(ValueError):
            make_fixture(FixtureSpec("a", 1, duration=1.0, control_rate=10.0), PARAMS)


class WriteFixturesTests(unittest.TestCase):
    def test_writes_loadable_experiment(self):
        specs = [FixtureSpec("one", 1, duration=1.0), FixtureSpec("two", 2, duration=1.0)]
        with tempfile.TemporaryDirectory() as tmpdir:
            path = write_fixtures(tmpdir, specs)
            cfg = load_experiment_config(path, environ={})
            self.assertEqual(sorted(cfg.trajectories), ["one", "two"])
            self.assertEqual(sorted(cfg.curves), ["circle", "eight"])
            self.assertEqual(cfg.control.omega_limit, 100.0)

            schedule, track = make_fixture(specs[0], PARAMS)
            source = cfg.trajectories["one"]
            np.testing.assert_array_equal(read_ground_truth(source.ground_truth).xy, track.xy)
            loaded = read_controls(source.controls, cfg.robot.omega_max)
            np.testing.assert_array_equal(loaded.omega_s, schedule.omega_s)

            with open(os.path.join(tmpdir, "one.json"), encoding="utf-8") as f:
                meta = json.load(f)
        self.assertTrue(meta["synthetic"])
        self.assertEqual(meta["mu_true"], [0.3, 0.5, 0.7, 0.9])

    def test_main(self):
        stdout = io.StringIO()
        with tempfile.TemporaryDirectory() as tmpdir:
            with contextlib.redirect_stdout(stdout):
                self.assertEqual(main([tmpdir]), 0)
            names = sorted(os.listdir(tmpdir))
        self.assertEqual(stdout.getvalue().strip(), os.path.join(tmpdir, "experiment.json"))
        self.assertEqual(len(names), 3 * len(FIXTURES) + 1)


class ShippedFixturesTests(unittest.TestCase):
    def test_regeneration_reproduces_committed_files(self):
        with tempfile.TemporaryDirectory() as tmpdir:
            with contextlib.redirect_stdout(io.StringIO()):
                self.assertEqual(main([tmpdir, "--shipped"]), 0)
            self.assertEqual(sorted(os.listdir(tmpdir)), sorted(os.listdir(FIXTURE_DIR)))
            for name in sorted(os.listdir(FIXTURE_DIR)):
                fresh = os.path.join(tmpdir, name)
                committed = os.path.join(FIXTURE_DIR, name)
                if name.endswith(".json"):
                    with open(fresh, encoding="utf-8") as f, open(committed, encoding="utf-8") as g:
                        self.assertEqual(json.load(f), json.load(g), name)
                    continue
                with open(fresh, encoding="utf-8") as f, open(committed, encoding="utf-8") as g:
                    self.assertEqual(f.readline(), g.readline(), name)
                np.testing.assert_allclose(
                    np.loadtxt(fresh, delimiter=",", skiprows=1),
                    np.loadtxt(committed, delimiter=",", skiprows=1),
                    rtol=0,
                    atol=1e-10,
                    err_msg=name,
                )

    def test_committed_files_load(self):
        cfg = load_experiment_config(os.path.join(FIXTURE_DIR, "experiment.json"), environ={})
        self.assertEqual(sorted(cfg.trajectories), ["sample1", "sample2"])
        for spec in SHIPPED_FIXTURES:
            schedule, track = make_fixture(spec, PARAMS)
            source = cfg.trajectories[spec.name]
            loaded = read_ground_truth(source.ground_truth)
            np.testing.assert_allclose(loaded.xy, track.xy, rtol=0, atol=1e-10)
            controls = read_controls(source.controls, cfg.robot.omega_max)
            np.testing.assert_array_equal(controls.omega_s, schedule.omega_s)
