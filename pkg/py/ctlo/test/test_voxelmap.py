import os
import shutil
import tempfile
import unittest

import numpy as np
import numpy.testing as nt

from ..simulator import GroundTruth, ScanPattern, room, simulate
from ..voxelmap import NEIGHBOR_OFFSETS, VoxelMap, encode_keys, voxel_key, voxel_keys

from . import util


class TestVoxelMap(unittest.TestCase):

    @classmethod
    def setUpClass(cls):
        cls.testDir = tempfile.mkdtemp()

    @classmethod
    def tearDownClass(cls):
        if os.path.exists(cls.testDir):
            shutil.rmtree(cls.testDir)

    def setUp(self):
        self.rng = np.random.RandomState(3)

    def test_voxel_key(self):
        self.assertEqual(voxel_key((0, 0, 0), 0.8), (0, 0, 0))
        self.assertEqual(voxel_key((1.0, -0.1, 2.5), 0.8), (1, -1, 3))
        #- faces belong to the upper cell
        self.assertEqual(voxel_key((1.6, 0.0, -0.8), 0.8), (2, 0, -1))
        with self.assertRaises(ValueError):
            voxel_key((0, 0, 0), 0.0)
        p = self.rng.uniform(-50, 50, size=(100, 3))
        keys = voxel_keys(p, 0.4)
        for x, key in zip(p, keys):
            self.assertEqual(voxel_key(x, 0.4), tuple(key))

    def test_encode_keys(self):
        keys = self.rng.randint(-1000, 1000, size=(500, 3))
        codes = encode_keys(keys)
        self.assertEqual(len(np.unique(codes)), len(np.unique(keys, axis=0)))

    def test_capacity(self):
        vmap = VoxelMap(0.8)
        pts = 0.1 + 0.5 * self.rng.uniform(size=(25, 3))
        self.assertEqual(vmap.insert(pts), 20)
        self.assertEqual(len(vmap), 20)
        self.assertEqual(vmap.nvoxels, 1)
        #- the first arrivals are kept
        nt.assert_array_equal(vmap.cell((0, 0, 0)), pts[:20])
        self.assertEqual(vmap.insert(pts[:1]), 0)
        self.assertEqual(len(vmap), 20)

    def test_insert_empty(self):
        vmap = VoxelMap(0.8)
        self.assertEqual(vmap.insert(np.zeros((0, 3))), 0)
        self.assertEqual(len(vmap), 0)
        self.assertEqual(vmap.nvoxels, 0)
        self.assertEqual(len(vmap.nearest_neighbors((0, 0, 0), 5)), 0)

    def test_two_points(self):
        vmap = VoxelMap(0.8)
        a = np.array([0.1, 0.1, 0.1])
        b = np.array([5.1, 0.1, 0.1])
        self.assertEqual(vmap.insert([a, b]), 2)
        nt.assert_array_equal(vmap.nearest_neighbors(a + 0.01, 5), [a])
        nt.assert_array_equal(vmap.nearest_neighbors(b - 0.01, 5), [b])
        self.assertEqual(len(vmap.nearest_neighbors((20.0, 20.0, 20.0), 5)), 0)

    def test_search_against_brute_force(self):
        vmap = VoxelMap(0.5, max_points=1000)
        pts = self.rng.uniform(-2, 2, size=(3000, 3))
        vmap.insert(pts)
        queries = self.rng.uniform(-2.5, 2.5, size=(200, 3))
        n = 5
        found, count, d2 = vmap.search(queries, n)
        pkeys = voxel_keys(pts, 0.5)
        for i, q in enumerate(queries):
            qkey = voxel_key(q, 0.5)
            near = np.zeros(len(pts), dtype=bool)
            for off in NEIGHBOR_OFFSETS:
                near |= np.all(pkeys == np.asarray(qkey) + off, axis=1)
            cand = pts[near]
            dist = np.sum((cand - q)**2, axis=1)
            order = np.argsort(dist)[:n]
            self.assertEqual(count[i], len(order))
            nt.assert_allclose(found[i, :count[i]], cand[order])
            nt.assert_allclose(d2[i, :count[i]], dist[order])
            self.assertTrue(np.all(np.isnan(found[i, count[i]:])))

    def test_fit_plane(self):
        vmap = VoxelMap(0.8)
        pts = np.array([[0.1, 0.1, 0.0], [0.3, 0.1, 0.0], [0.1, 0.3, 0.0],
                        [0.3, 0.3, 0.0], [0.2, 0.25, 0.0]])
        vmap.insert(pts)
        plane = vmap.fit_plane((0.2, 0.2, 0.05))
        self.assertIsNotNone(plane)
        self.assertAlmostEqual(abs(plane.normal[2]), 1.0)
        self.assertLess(plane.planarity, 1e-12)
        nt.assert_allclose(plane.point, [0.2, 0.25, 0.0])
        self.assertAlmostEqual(abs(plane.distance([0.7, -0.3, 0.4])), 0.4)

    def test_fit_plane_degenerate(self):
        vmap = VoxelMap(0.8)
        vmap.insert([[0.1, 0.1, 0.0], [0.3, 0.1, 0.0], [0.1, 0.3, 0.0]])
        self.assertIsNone(vmap.fit_plane((0.2, 0.2, 0.0)))

        vmap = VoxelMap(0.8)
        x = np.linspace(0.05, 0.75, 5)
        line = np.column_stack([x, 0.4 + 1e-5 * self.rng.normal(size=5),
                                0.4 + 1e-5 * self.rng.normal(size=5)])
        vmap.insert(line)
        self.assertIsNone(vmap.fit_plane((0.4, 0.4, 0.4)))

    def test_fit_plane_ring(self):
        """A ring arc thickened by range noise is not a plane"""
        vmap = VoxelMap(0.8)
        x = np.linspace(0.05, 0.35, 5)
        arc = np.column_stack([x, 0.4 + np.array([0.02, -0.02, 0.02, -0.02, 0.0]),
                               np.full(5, 0.4)])
        vmap.insert(arc)
        self.assertIsNone(vmap.fit_plane((0.2, 0.4, 0.4)))

    def test_fit_planes_scanned_room(self):
        """Planes fitted to a scanned room follow its walls"""
        run = simulate(room(), GroundTruth(), ScanPattern(), duration=0.4, seed=2)
        world = run.world_points()
        later = run.points['t'] >= 0.3
        vmap = VoxelMap(0.4)
        vmap.insert(world[~later])
        valid, normals, _, _ = vmap.fit_planes(world[later])
        self.assertGreater(np.count_nonzero(valid), 200)
        truth = run.scene.normals[run.planes[later]]
        agree = np.abs(np.sum(normals[valid] * truth[valid], axis=1)) > 0.9
        self.assertGreater(np.mean(agree), 0.9)

    def test_fit_planes_box(self):
        vmap = util.box_map()
        queries = np.array([[2.98, 0.15, 0.25], [0.15, -2.97, -0.25], [0.55, 0.35, 1.48]])
        valid, normals, anchors, planarity = vmap.fit_planes(queries)
        self.assertTrue(np.all(valid))
        nt.assert_allclose(np.abs(normals), np.eye(3), atol=1e-9)
        nt.assert_allclose(np.abs(np.sum(normals * (queries - anchors), axis=1)),
                           [0.02, 0.03, 0.02], atol=1e-9)
        valid, normals, _, _ = vmap.fit_planes([[20.0, 0.0, 0.0]])
        self.assertFalse(valid[0])
        self.assertTrue(np.all(np.isnan(normals[0])))

    def test_cull(self):
        vmap = VoxelMap(0.8, max_range=100.0)
        vmap.insert([[1.0, 2.0, 0.5], [50.0, 0.0, 0.0]])
        self.assertEqual(vmap.cull((0, 0, 0)), 0)
        self.assertEqual(vmap.nvoxels, 2)
        vmap.insert([[150.0, 0.0, 0.0]])
        self.assertEqual(vmap.cull((0, 0, 0)), 1)
        self.assertEqual(vmap.nvoxels, 2)
        self.assertEqual(len(vmap), 2)
        self.assertEqual(len(vmap.nearest_neighbors((150.0, 0.0, 0.0))), 0)

    def test_write_ply(self):
        vmap = util.box_map()
        filename = os.path.join(self.testDir, 'map.ply')
        vmap.write_ply(filename)
        with open(filename) as fx:
            lines = fx.readlines()
        self.assertEqual(lines[0].strip(), 'ply')
        header = lines.index('end_header\n')
        self.assertEqual(len(lines) - header - 1, len(vmap))

    def test_bad_arguments(self):
        with self.assertRaises(ValueError):
            VoxelMap(-1.0)
        with self.assertRaises(ValueError):
            VoxelMap(1.0, max_points=0)
        with self.assertRaises(ValueError):
            VoxelMap(1.0).search(np.zeros((1, 3)), 0)


if __name__ == '__main__':
    unittest.main()
