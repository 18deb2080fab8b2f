import math
import unittest

import numpy as np

from mecanum_sysid.model import BodyVelocity
from mecanum_sysid.model import ControlSchedule
from mecanum_sysid.model import FrictionCoeffs
from mecanum_sysid.model import GroundTruthTrack
from mecanum_sysid.model import Pose
from mecanum_sysid.model import RobotParams
from mecanum_sysid.model import ScheduleError
from mecanum_sysid.model import body_velocity
from mecanum_sysid.model import duty_to_omega
from mecanum_sysid.model import estimate_heading
from mecanum_sysid.model import friction_factor
from mecanum_sysid.model import kinematic_matrix
from mecanum_sysid.model import refine_schedule
from mecanum_sysid.model import simulate
from mecanum_sysid.model import steady_state_omega
from mecanum_sysid.model import step_pose
from mecanum_sysid.model import transform_pose
from mecanum_sysid.model import transient_omega

PARAMS = RobotParams()
MU_TRUE = (0.3, 0.5, 0.7, 0.9)
RATE = 240.0


def random_schedule(seed, steps=240, rate=RATE, scale=10.0):
    rng = np.random.default_rng(seed)
    timestamps = np.arange(steps + 1) / rate
    return ControlSchedule(timestamps, rng.uniform(-scale, scale, size=(steps, 4)))


def reference_simulate(params, mu, schedule, start):
    """Straight-line re-implementation of the forward model, one step at a time."""
    gain = params.mass * params.gravity * params.wheel_radius / (4.0 * params.stall_torque)
    r = params.wheel_radius
    l_ab = params.half_length + params.half_width
    x, y, theta = start
    poses = [(x, y, theta)]
    for i in range(len(schedule)):
        w = [schedule.omega_s[i][j] * max(1.0 - mu[j] * gain, 0.0) for j in range(4)]
        vx = r / 4.0 * (-w[0] + w[1] - w[2] + w[3])
        vy = r / 4.0 * (w[0] + w[1] + w[2] + w[3])
        wz = r / (4.0 * l_ab) * (w[0] - w[1] - w[2] + w[3])
        dt = schedule.timestamps[i + 1] - schedule.timestamps[i]
        x, y, theta = (
            x + dt * (vx * math.cos(theta) - vy * math.sin(theta)),
            y + dt * (vx * math.sin(theta) + vy * math.cos(theta)),
            theta + dt * wz,
        )
        poses.append((x, y, theta))
    return np.array(poses)


class RobotParamsTests(unittest.TestCase):
    def test_defaults(self):
        self.assertAlmostEqual(PARAMS.friction_gain, 0.49)
        self.assertAlmostEqual(PARAMS.l_ab, 0.2)
        self.assertEqual(PARAMS.omega_max, 10.0)

    def test_rejects_non_positive(self):
        with self.assertRaises(ValueError):
            RobotParams(mass=0.0)
        with self.assertRaises(ValueError):
            RobotParams(wheel_radius=-0.03)
        with self.assertRaises(ValueError):
            RobotParams(stall_torque=float("nan"))


class FrictionCoeffsTests(unittest.TestCase):
    def test_bounds(self):
        FrictionCoeffs([0.0, 2.0, 1.0, 0.5])
        with self.assertRaises(ValueError):
            FrictionCoeffs([-0.1, 0.0, 0.0, 0.0])
        with self.assertRaises(ValueError):
            FrictionCoeffs([0.0, 2.1, 0.0, 0.0])
        with self.assertRaises(ValueError):
            FrictionCoeffs([0.0, 0.0, 0.0])

    def test_immutable(self):
        mu = FrictionCoeffs(MU_TRUE)
        with self.assertRaises(ValueError):
            mu.mu[0] = 1.0
        self.assertEqual(mu.to_list(), list(MU_TRUE))


class ControlScheduleTests(unittest.TestCase):
    def test_shape_and_order(self):
        with self.assertRaises(ScheduleError):
            ControlSchedule([0.0, 0.1], np.zeros((2, 4)))
        with self.assertRaises(ScheduleError):
            ControlSchedule([0.0, 0.1, 0.1], np.zeros((2, 4)))
        with self.assertRaises(ScheduleError):
            ControlSchedule([0.0, 0.1], np.zeros((1, 3)))

    def test_duty_mapping(self):
        np.testing.assert_allclose(duty_to_omega([0.5, -1.0, 0.0, 1.0], 10.0), [5, -10, 0, 10])
        with self.assertRaises(ScheduleError):
            duty_to_omega([1.5, 0, 0, 0], 10.0)
        schedule = ControlSchedule.from_duty([0.0, 1.0], [[0.1, 0.2, 0.3, 0.4]], 10.0)
        np.testing.assert_allclose(schedule.omega_s, [[1, 2, 3, 4]])

    def test_constant_and_prefix(self):
        schedule = ControlSchedule.constant([1, 2, 3, 4], duration=1.0, rate=RATE)
        self.assertEqual(len(schedule), 240)
        self.assertAlmostEqual(schedule.duration, 1.0)
        head = schedule.prefix(10)
        self.assertEqual(len(head), 10)
        self.assertEqual(head.timestamps.size, 11)

    def test_refine(self):
        schedule = random_schedule(3, steps=10)
        fine = refine_schedule(schedule)
        self.assertEqual(len(fine), 20)
        np.testing.assert_array_equal(fine.timestamps[::2], schedule.timestamps)
        np.testing.assert_array_equal(fine.omega_s[1::2], schedule.omega_s)


class WheelModelTests(unittest.TestCase):
    def test_zero_friction_is_identity(self):
        np.testing.assert_allclose(steady_state_omega(PARAMS, [0, 0, 0, 0], [5, 5, 5, 5]), 5.0)

    def test_upper_bound_friction(self):
        np.testing.assert_allclose(
            steady_state_omega(PARAMS, [2, 2, 2, 2], [10, 10, 10, 10]), 0.2, atol=1e-12
        )

    def test_single_wheel_friction(self):
        np.testing.assert_allclose(
            steady_state_omega(PARAMS, [1, 0, 0, 0], [10, 10, 10, 10]),
            [5.1, 10, 10, 10],
            atol=1e-12,
        )

    def test_factor_never_reverses(self):
        heavy = RobotParams(mass=10.0)
        np.testing.assert_array_equal(steady_state_omega(heavy, [2, 2, 2, 2], [10, -10, 5, 5]), 0)

    def test_factor_monotone_in_mu(self):
        mu = np.linspace(0.0, 2.0, 201)
        factors = np.array([friction_factor(PARAMS, [m, 0.0, 0.0, 0.0])[0] for m in mu])
        self.assertTrue(np.all(np.diff(factors) < 0.0))
        heavy = RobotParams(mass=10.0)
        clamped = np.array([friction_factor(heavy, [m, 0.0, 0.0, 0.0])[0] for m in mu])
        self.assertTrue(np.all(np.diff(clamped) <= 0.0))
        self.assertEqual(clamped[-1], 0.0)

    def test_speed_decreases_with_own_friction_only(self):
        omega_s = np.array([7.0, 0.0, 3.0, 10.0])
        low = steady_state_omega(PARAMS, [0.2, 0.2, 0.2, 0.2], omega_s)
        for j in range(4):
            mu = np.full(4, 0.2)
            mu[j] = 1.4
            high = steady_state_omega(PARAMS, mu, omega_s)
            if omega_s[j] > 0:
                self.assertLess(high[j], low[j])
            else:
                self.assertEqual(high[j], 0.0)
            np.testing.assert_array_equal(np.delete(high, j), np.delete(low, j))

    def test_transient(self):
        self.assertEqual(transient_omega(PARAMS, 0.0, 10.0, 0.0), 0.0)
        self.assertAlmostEqual(
            transient_omega(PARAMS, 0.0, 10.0, 0.01), 10.0 * (1.0 - math.exp(-0.6)), places=12
        )
        self.assertAlmostEqual(
            transient_omega(PARAMS, 1.0, 10.0, 10.0),
            float(steady_state_omega(PARAMS, [1, 0, 0, 0], [10, 0, 0, 0])[0]),
            places=9,
        )
        self.assertAlmostEqual(transient_omega(PARAMS, 0.0, -10.0, 10.0), -10.0, places=9)

    def test_transient_matches_ode(self):
        # d(omega)/dt = Ts / J * (1 - omega / omega_s) - friction torque / J
        mu_j, omega_s, dt = 0.5, 10.0, 1e-6
        friction = mu_j * PARAMS.mass * PARAMS.gravity * PARAMS.wheel_radius / 4.0
        omega = 0.0
        for _ in range(10000):
            torque = PARAMS.stall_torque * (1.0 - omega / omega_s) - friction
            omega += dt * torque / PARAMS.wheel_inertia
        self.assertAlmostEqual(transient_omega(PARAMS, mu_j, omega_s, 0.01), omega, places=3)

    def test_transient_errors(self):
        with self.assertRaises(ValueError):
            transient_omega(PARAMS, 0.0, 0.0, 1.0)
        with self.assertRaises(ValueError):
            transient_omega(PARAMS, 0.0, 1.0, -1.0)


class KinematicsTests(unittest.TestCase):
    def test_matrix(self):
        B = kinematic_matrix(PARAMS)
        self.assertEqual(B.shape, (3, 4))
        np.testing.assert_allclose(B[1], [0.0075] * 4)

    def test_body_velocity(self):
        B = kinematic_matrix(PARAMS)
        self.assertEqual(body_velocity(B, [0, 0, 0, 0]), BodyVelocity(0.0, 0.0, 0.0))
        np.testing.assert_allclose(body_velocity(B, [5, 5, 5, 5]), (0, 0.15, 0), atol=1e-15)
        np.testing.assert_allclose(body_velocity(B, [-5, 5, 5, -5]), (0, 0, -0.75), atol=1e-15)
        with self.assertRaises(ValueError):
            body_velocity(B, [1, 2, 3])

    def test_body_velocity_linear_in_wheel_speeds(self):
        B = kinematic_matrix(PARAMS)
        rng = np.random.default_rng(4)
        for _ in range(10):
            w1, w2 = rng.uniform(-10.0, 10.0, size=(2, 4))
            a, b = rng.uniform(-3.0, 3.0, size=2)
            combined = body_velocity(B, a * w1 + b * w2)
            expected = a * np.array(body_velocity(B, w1)) + b * np.array(body_velocity(B, w2))
            np.testing.assert_allclose(combined, expected, atol=1e-12)

    def test_step_pose(self):
        moved = step_pose(Pose(0, 0, 0), BodyVelocity(1, 0, 0), 0.1)
        self.assertAlmostEqual(moved.x, 0.1)
        self.assertEqual((moved.y, moved.theta), (0.0, 0.0))

        turned = step_pose(Pose(0, 0, math.pi / 2), BodyVelocity(1, 0, 0), 0.1)
        self.assertAlmostEqual(turned.x, 0.0, places=12)
        self.assertAlmostEqual(turned.y, 0.1, places=12)

        forward = step_pose(Pose(0, 0, 0), BodyVelocity(0, 0.15, 0), 1 / 240)
        self.assertAlmostEqual(forward.y, 0.000625, places=15)

        with self.assertRaises(ValueError):
            step_pose(Pose(0, 0, 0), BodyVelocity(1, 0, 0), 0.0)


class SimulateTests(unittest.TestCase):
    def test_zero_controls(self):
        schedule = ControlSchedule.constant([0, 0, 0, 0], duration=1.0, rate=RATE)
        trajectory = simulate(PARAMS, MU_TRUE, schedule, Pose(1.0, 2.0, 0.5))
        self.assertEqual(len(trajectory), 241)
        np.testing.assert_array_equal(trajectory.poses, np.tile([1.0, 2.0, 0.5], (241, 1)))

    def test_straight_line(self):
        schedule = ControlSchedule.constant([5, 5, 5, 5], duration=1.0, rate=RATE)
        final = simulate(PARAMS, FrictionCoeffs.frictionless(), schedule, Pose(0, 0, 0)).final
        np.testing.assert_allclose(final, (0.0, 0.15, 0.0), atol=1e-12)

    def test_matches_reference(self):
        start = Pose(0.2, -0.1, 0.3)
        for seed in range(3):
            schedule = random_schedule(seed)
            trajectory = simulate(PARAMS, MU_TRUE, schedule, start)
            expected = reference_simulate(PARAMS, MU_TRUE, schedule, start)
            np.testing.assert_allclose(trajectory.poses, expected, rtol=0, atol=1e-10)

    def test_step_pose_chain(self):
        schedule = random_schedule(7, steps=20)
        trajectory = simulate(PARAMS, MU_TRUE, schedule, Pose(0, 0, 0))
        B = kinematic_matrix(PARAMS)
        pose = Pose(0, 0, 0)
        for i in range(len(schedule)):
            omega = steady_state_omega(PARAMS, MU_TRUE, schedule.omega_s[i])
            pose = step_pose(pose, body_velocity(B, omega), schedule.dt[i])
        np.testing.assert_allclose(trajectory.final, pose, atol=1e-12)

    def test_refinement_is_first_order_on_curves(self):
        schedule = ControlSchedule.constant([4.0, 8.0, 6.0, 10.0], duration=2.0, rate=60.0)
        finals = []
        for _ in range(3):
            finals.append(np.array(simulate(PARAMS, MU_TRUE, schedule, Pose(0, 0, 0)).final))
            schedule = refine_schedule(schedule)
        coarse = np.linalg.norm(finals[0][:2] - finals[1][:2])
        fine = np.linalg.norm(finals[1][:2] - finals[2][:2])
        self.assertGreater(coarse, 1e-6)
        # halving dt halves the change
        self.assertAlmostEqual(coarse / fine, 2.0, delta=0.2)
        # the heading is integrated exactly
        self.assertAlmostEqual(finals[0][2], finals[2][2], places=12)

    def test_refinement_leaves_straight_motion_unchanged(self):
        schedule = ControlSchedule.constant([6.0, 6.0, 6.0, 6.0], duration=2.0, rate=60.0)
        mu = (0.6, 0.6, 0.6, 0.6)
        coarse = simulate(PARAMS, mu, schedule, Pose(0.5, -0.2, 0.7)).final
        fine = simulate(PARAMS, mu, refine_schedule(schedule), Pose(0.5, -0.2, 0.7)).final
        np.testing.assert_allclose(fine, coarse, rtol=0, atol=1e-12)

    def test_empty_schedule(self):
        with self.assertRaises(ScheduleError):
            simulate(PARAMS, MU_TRUE, ControlSchedule([0.0], np.zeros((0, 4))), Pose(0, 0, 0))


class FrameTests(unittest.TestCase):
    def test_heading_from_track(self):
        self.assertAlmostEqual(estimate_heading(np.array([[0, 0], [0, 1]])), 0.0)
        self.assertAlmostEqual(estimate_heading(np.array([[0, 0], [0, 0], [-1, 0]])), math.pi / 2)
        self.assertEqual(estimate_heading(np.zeros((3, 2))), 0.0)

    def test_track_start_pose(self):
        track = GroundTruthTrack([0.0, 0.1], [[1.0, 1.0], [2.0, 1.0]])
        self.assertAlmostEqual(track.start_pose().theta, -math.pi / 2)
        with_theta = GroundTruthTrack([0.0, 0.1], [[1.0, 1.0], [2.0, 1.0]], theta=[0.25, 0.25])
        self.assertEqual(with_theta.start_pose(), Pose(1.0, 1.0, 0.25))

    def test_simulation_is_frame_equivariant(self):
        schedule = random_schedule(11, steps=50)
        start = Pose(0.1, 0.2, 0.3)
        moved_start = transform_pose(start, 1.0, -2.0, 0.7)
        moved = simulate(PARAMS, MU_TRUE, schedule, moved_start)
        expected = simulate(PARAMS, MU_TRUE, schedule, start).transformed(1.0, -2.0, 0.7)
        np.testing.assert_allclose(moved.poses, expected.poses, atol=1e-12)
