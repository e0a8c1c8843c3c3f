import os
import shutil
import tempfile
import unittest

import numpy as np
import numpy.testing as nt

from ..io import (POINT_DTYPE, POINTS_HEADER, PointFileError, make_points, read_all_points,
                  read_config, read_points, read_tum, table_poses, tum_table, write_points,
                  write_tum)

from . import util


class TestIO(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.testDir = tempfile.mkdtemp()

    @classmethod
    def tearDownClass(cls):
        if os.path.exists(cls.testDir):
            shutil.rmtree(cls.testDir)

    def setUp(self):
        self.rng = np.random.RandomState(8)

    def _records(self, n=1000, nsensors=2):
        t = np.sort(self.rng.uniform(0.0, 1.0, size=n))
        return make_points(t, self.rng.normal(scale=10.0, size=(n, 3)),
                           self.rng.randint(0, nsensors, size=n))

    def test_points_binary(self):
        records = self._records()
        filename = os.path.join(self.testDir, 'points.bin')
        write_points(filename, records)
        self.assertEqual(os.path.getsize(filename), POINTS_HEADER + 24 * len(records))
        nt.assert_array_equal(read_all_points(filename), records)
        blocks = list(read_points(filename, chunksize=300))
        self.assertEqual([len(b) for b in blocks], [300, 300, 300, 100])
        self.assertTrue(all(b.dtype.isnative for b in blocks))

    def test_points_csv(self):
        records = self._records(50)
        filename = os.path.join(self.testDir, 'points.csv')
        write_points(filename, records)
        out = read_all_points(filename)
        self.assertEqual(out.dtype, POINT_DTYPE)
        nt.assert_array_equal(out, records)

    def test_points_empty(self):
        filename = os.path.join(self.testDir, 'empty.bin')
        write_points(filename, make_points([], np.zeros((0, 3))))
        self.assertEqual(len(read_all_points(filename)), 0)

    def test_points_corrupt(self):
        records = self._records(100)
        records['y'][42] = np.nan
        filename = os.path.join(self.testDir, 'nan.bin')
        write_points(filename, records)
        with self.assertRaises(PointFileError) as cm:
            read_all_points(filename)
        self.assertEqual(cm.exception.offset, POINTS_HEADER + 42 * 24)

        records = self._records(100)
        filename = os.path.join(self.testDir, 'truncated.bin')
        write_points(filename, records)
        with open(filename, 'ab') as fx:
            fx.write(b'\x00' * 10)
        with self.assertRaises(PointFileError) as cm:
            read_all_points(filename)
        self.assertEqual(cm.exception.offset, POINTS_HEADER + 100 * 24)

        filename = os.path.join(self.testDir, 'bad.bin')
        with open(filename, 'wb') as fx:
            fx.write(b'NOTPOINTS' * 8)
        with self.assertRaises(PointFileError) as cm:
            read_all_points(filename)
        self.assertEqual(cm.exception.offset, 0)

    def test_points_regression(self):
        #- each sensor keeps its own clock
        records = make_points([0.0, 0.5, 0.2, 0.6], np.zeros((4, 3)), [0, 0, 1, 1])
        filename = os.path.join(self.testDir, 'interleaved.bin')
        write_points(filename, records)
        self.assertEqual(len(read_all_points(filename)), 4)

        records = make_points([0.0, 0.5, 0.4, 0.6], np.zeros((4, 3)), 0)
        filename = os.path.join(self.testDir, 'regression.bin')
        write_points(filename, records)
        with self.assertRaises(PointFileError) as cm:
            read_all_points(filename)
        self.assertEqual(cm.exception.offset, POINTS_HEADER + 2 * 24)

    def test_tum(self):
        poses = [util.random_pose(self.rng, 3.0, 10.0) for _ in range(20)]
        times = 1e9 + 0.05 * np.arange(20)
        filename = os.path.join(self.testDir, 'traj.tum')
        write_tum(filename, tum_table(times, poses))
        table = read_tum(filename)
        nt.assert_array_equal(table['t'], times)
        for T, T0 in zip(table_poses(table), poses):
            self.assertTrue(T.allclose(T0, atol=1e-12))
        with self.assertRaises(ValueError):
            tum_table(times[:3], poses)

    def test_tum_errors(self):
        filename = os.path.join(self.testDir, 'short.tum')
        with open(filename, 'w') as fx:
            fx.write("0.0 1 2 3 0 0 0\n")
        with self.assertRaises(ValueError):
            read_tum(filename)
        filename = os.path.join(self.testDir, 'quat.tum')
        with open(filename, 'w') as fx:
            fx.write("# t tx ty tz qx qy qz qw\n0.0 1 2 3 0 0 0 2\n")
        with self.assertRaises(ValueError):
            read_tum(filename)

    def test_config(self):
        filename = os.path.join(self.testDir, 'plain.cfg')
        with open(filename, 'w') as fx:
            fx.write("# comment\n\nsegments = 4\ndt=0.05  # seconds\nmode = deskewed\n")
        values = read_config(filename)
        self.assertEqual(list(values.keys()), ['segments', 'dt', 'mode'])
        self.assertEqual(values['dt'], '0.05')
        for i, text in enumerate(("segments\n", "= 4\n", "dt = 1\ndt = 2\n")):
            filename = os.path.join(self.testDir, 'bad{}.cfg'.format(i))
            with open(filename, 'w') as fx:
                fx.write(text)
            with self.assertRaises(ValueError):
                read_config(filename)


if __name__ == '__main__':
    unittest.main()
