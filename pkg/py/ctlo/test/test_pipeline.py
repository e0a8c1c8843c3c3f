import os
import shutil
import tempfile
import unittest
from contextlib import redirect_stdout
from io import StringIO

import numpy as np
import numpy.testing as nt

from ..io import make_points, point_xyz, read_tum, table_poses
from ..liegroup import Pose
from ..trajectory import OutOfWindowError
from ..pipeline import (InitializationError, Odometry, OdometryConfig, PRESETS, split_scans)
from ..voxelmap import voxel_keys
from ..winwarning import WindowWarningMask

from . import util


def _stationary_stream(t0=0.0, t1=0.6, rate=20000, step=0.2):
    """Box points cycled in a fixed order; the first 0.3 s already hold every point."""
    t = np.arange(t0, t1, 1.0/rate)
    pts = util.box_points(step=step)
    return make_points(t, np.resize(pts, (len(t), 3)), 0)


def _scans(times, positions, step=0.2):
    """One distortion-free scan of the box per time, taken at a translated position."""
    pts = util.box_points(step=step)
    return [make_points(np.full(len(pts), t), pts - np.asarray(p), 0)
            for t, p in zip(times, positions)]


class TestConfig(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.testDir = tempfile.mkdtemp()

    @classmethod
    def tearDownClass(cls):
        if os.path.exists(cls.testDir):
            shutil.rmtree(cls.testDir)

    def test_defaults(self):
        config = OdometryConfig()
        self.assertEqual(config.segments, 4)
        self.assertAlmostEqual(config.dt, 0.03)
        self.assertAlmostEqual(config.sigma_r, 0.1)
        self.assertAlmostEqual(config.sigma_v, 0.05)
        self.assertAlmostEqual(config.init_duration, 0.3)
        self.assertEqual(config.mode, 'continuous')
        self.assertEqual(len(config.extrinsics), 1)
        self.assertEqual(config.rig().nsensors, 1)

    def test_invalid(self):
        for kwargs in (dict(segments=0), dict(dt=0.0), dict(sigma_r=-1.0), dict(voxel_size=0.0),
                       dict(neighbors=2), dict(mode='batch'), dict(extrinsics=[]),
                       dict(max_outer=0), dict(init_duration=-0.1), dict(bogus=1)):
            with self.assertRaises(ValueError):
                OdometryConfig(**kwargs)

    def test_presets(self):
        for name in PRESETS:
            OdometryConfig.preset(name)
        config = OdometryConfig.preset('aggressive', segments=6)
        self.assertAlmostEqual(config.dt, 0.01)
        self.assertAlmostEqual(config.voxel_size, 0.2)
        self.assertEqual(config.segments, 6)
        self.assertAlmostEqual(OdometryConfig.preset('outdoor').voxel_size, 0.8)
        with self.assertRaises(ValueError):
            OdometryConfig.preset('underwater')
        copy = config.copy(dt=0.02)
        self.assertAlmostEqual(copy.dt, 0.02)
        self.assertEqual(copy.segments, 6)

    def test_read(self):
        filename = os.path.join(self.testDir, 'ctlo.cfg')
        with open(filename, 'w') as fx:
            fx.write("# two sensor rig\n"
                     "preset = outdoor\n"
                     "segments = 6   # more segments\n"
                     "huber = none\n"
                     "live_smoothness = false\n"
                     "extrinsic_0 = 0 0 0 0 0 0 1\n"
                     "extrinsic_1 = 0.1 0 0 0.7071067811865476 0 0 0.7071067811865476\n")
        config = OdometryConfig.read(filename, dt=0.05)
        self.assertEqual(config.segments, 6)
        self.assertAlmostEqual(config.voxel_size, 0.8)
        self.assertAlmostEqual(config.dt, 0.05)
        self.assertIsNone(config.huber)
        self.assertFalse(config.live_smoothness)
        self.assertEqual(len(config.extrinsics), 2)
        nt.assert_allclose(config.extrinsics[1].translation, [0.1, 0, 0])
        nt.assert_allclose(config.extrinsics[1].act([0, 1, 0]), [0.1, 0, 1], atol=1e-12)

    def test_read_errors(self):
        for i, text in enumerate(("segments 4\n", "segments = 4\nsegments = 5\n",
                                  "colour = blue\n", "extrinsic_1 = 0 0 0 0 0 0 1\n",
                                  "extrinsic_0 = 0 0 0\n", "live_smoothness = maybe\n",
                                  "segments = 0\n")):
            filename = os.path.join(self.testDir, 'bad{}.cfg'.format(i))
            with open(filename, 'w') as fx:
                fx.write(text)
            with self.assertRaises(ValueError):
                OdometryConfig.read(filename)


class TestOdometry(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.testDir = tempfile.mkdtemp()

    @classmethod
    def tearDownClass(cls):
        if os.path.exists(cls.testDir):
            shutil.rmtree(cls.testDir)

    def test_initialize(self):
        odometry = Odometry()
        records = util.stationary_records(0.0, 0.3, rate=1000 / 0.3)
        vmap, traj = odometry.initialize(records)
        self.assertGreater(len(vmap), 0)
        self.assertEqual(len(vmap), _capacity_count(records, odometry.config))
        self.assertAlmostEqual(traj.t0, 0.3)
        self.assertEqual(traj.nsegments, 4)
        for T in traj.controls:
            self.assertTrue(T.allclose(Pose.identity(), atol=0))
        with self.assertRaises(InitializationError):
            Odometry().initialize(make_points([], np.zeros((0, 3))))
        with self.assertRaises(InitializationError):
            Odometry().finish()

    def test_ingest(self):
        odometry = Odometry()
        odometry.initialize(util.stationary_records(0.0, 0.3), t_start=0.0)
        dt = odometry.config.dt
        t0 = odometry.trajectory.t0
        batch = make_points([0.2, t0, t0 + 1.5*dt, t0 + 5.5*dt], np.ones((4, 3)), 0)
        nt.assert_array_equal(odometry.ingest(batch), [0, 1, 2, 6])
        self.assertEqual(odometry.dropped, 1)
        self.assertTrue(odometry.ready())

    def test_ingest_initializes(self):
        odometry = Odometry()
        records = util.stationary_records(0.0, 0.5)
        self.assertEqual(np.count_nonzero(odometry.ingest(records[:200])), 0)
        self.assertFalse(odometry.initialized)
        segments = odometry.ingest(records[200:])
        self.assertTrue(odometry.initialized)
        self.assertAlmostEqual(odometry.trajectory.t0, 0.3)
        t = records['t'][200:]
        self.assertTrue(np.all(segments[t < 0.3] == 0))
        self.assertTrue(np.all(segments[t >= 0.3] >= 1))
        self.assertEqual(odometry.dropped, 0)

    def test_ready_waits_for_every_sensor(self):
        config = OdometryConfig(extrinsics=[Pose.identity(), Pose.identity()])
        odometry = Odometry(config)
        odometry.initialize(util.stationary_records(0.0, 0.3), t_start=0.0)
        odometry.ingest(make_points(np.linspace(0.3, 0.5, 10), np.ones((10, 3)), 0))
        odometry.ingest(make_points([0.3, 0.35], np.ones((2, 3)), 1))
        self.assertFalse(odometry.ready())
        odometry.ingest(make_points([0.45], np.ones((1, 3)), 1))
        self.assertTrue(odometry.ready())
        with self.assertRaises(ValueError):
            odometry.ingest(make_points([0.5], np.ones((1, 3)), 2))

    def test_stationary_run(self):
        config = OdometryConfig(max_points_per_voxel=50)
        odometry = Odometry(config)
        records = _stationary_stream()
        output = odometry.run([records[:5000], records[5000:9000], records[9000:]])
        self.assertGreater(len(output), 10)
        self.assertEqual(odometry.dropped, 0)
        self.assertLess(np.max(np.abs(output.positions())), 1e-3)
        self.assertTrue(np.all(np.abs(np.asarray(output.knots['qw'])) > 1.0 - 1e-6))
        self.assertFalse(output.diverged)
        self.assertTrue(np.all(np.diff(output.times) > 0))
        nt.assert_allclose(np.diff(output.times), config.dt, rtol=1e-9)
        self.assertAlmostEqual(output.times[0], 0.3)
        self.assertEqual(len(output.status), len(output) - config.segments)
        self.assertGreater(len(output.diagnostics), 0)

        #- queries on the finalized history
        T = odometry.query_pose(output.times[3])
        self.assertTrue(T.allclose(table_poses(output.knots[3:4])[0], atol=1e-9))
        T = odometry.query_pose(0.5 * (output.times[1] + output.times[2]))
        self.assertTrue(T.allclose(Pose.identity(), atol=1e-3))
        with self.assertRaises(OutOfWindowError):
            odometry.query_pose(output.times[-1] + 1.0)
        table = odometry.query_poses(output.times[:3])
        self.assertEqual(len(table), 3)

        filename = os.path.join(self.testDir, 'stationary.tum')
        output.write(filename)
        tum = read_tum(filename)
        nt.assert_array_equal(tum['t'], output.knots['t'])
        self.assertEqual(len(odometry.finish()), len(output))

    def test_deskewed_pair(self):
        config = OdometryConfig(mode='deskewed', init_duration=0.0, max_points_per_voxel=50)
        odometry = Odometry(config)
        scans = _scans([0.0, 0.1], [(0, 0, 0), (0, 0, 0)])
        output = odometry.run([np.concatenate(scans)])
        self.assertEqual(len(output), 1)
        self.assertAlmostEqual(output.times[0], 0.1)
        self.assertLess(np.max(np.abs(output.positions())), 1e-3)
        self.assertTrue(odometry.query_pose(0.1).allclose(Pose.identity(), atol=1e-3))

    def test_deskewed_translation(self):
        config = OdometryConfig(mode='deskewed', init_duration=0.0, max_points_per_voxel=50)
        times = 0.1 * np.arange(10)
        positions = [(0.5 * t, 0.0, 0.0) for t in times]
        output = Odometry(config).deskewed_mode_process(_scans(times, positions))
        self.assertEqual(len(output), 9)
        nt.assert_allclose(output.times, times[1:], atol=1e-12)
        nt.assert_allclose(output.positions(), np.array(positions)[1:], atol=1e-3)
        self.assertFalse(output.diverged)

    def test_split_scans(self):
        records = make_points([0.0, 0.0, 1.0, 1.0, 1.0, 2.0], np.zeros((6, 3)))
        scans = split_scans(records[::-1])
        self.assertEqual([len(s) for s in scans], [2, 3, 1])
        self.assertEqual(split_scans(records[:0]), [])

    def test_status_flags(self):
        #- a stream that never sees the map again is flagged, not fatal
        config = OdometryConfig()
        odometry = Odometry(config, verbose=False)
        odometry.initialize(util.stationary_records(0.0, 0.3), t_start=0.0)
        t = np.arange(0.3, 0.5, 1e-3)
        out = StringIO()
        with redirect_stdout(out):
            odometry.ingest(make_points(t, np.full((len(t), 3), 50.0), 0))
            output = odometry.finish()
        flags = np.asarray(output.status['flags'])
        self.assertTrue(np.all(flags & WindowWarningMask.NO_CORRESPONDENCES))
        self.assertTrue(np.all(flags & WindowWarningMask.UNDERCONSTRAINED))
        self.assertFalse(output.diverged)
        self.assertTrue(np.all(output.bad_windows))
        #- warnings are printed without verbose
        self.assertIn("WARNING: window 0 ", out.getvalue())


def _capacity_count(records, config):
    """Number of records a fresh map keeps under its voxel capacity."""
    keys = voxel_keys(point_xyz(records), config.voxel_size)
    _, counts = np.unique(keys, axis=0, return_counts=True)
    return int(np.sum(np.minimum(counts, config.max_points_per_voxel)))


if __name__ == '__main__':
    unittest.main()
