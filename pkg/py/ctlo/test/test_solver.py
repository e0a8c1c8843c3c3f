import unittest

import numpy as np
import numpy.testing as nt

from ..liegroup import Pose, exp, ominus
from ..trajectory import Trajectory, constant
from ..factors import (GeometricFactorSet, MarginalizationPrior, SensorRig,
                       kinematic_eval, kinematic_factors)
from ..pipeline import OdometryConfig
from ..solver import (WindowPoints, WindowState, assemble, associate, diagnostics_table,
                      marginalize, optimize, schur_complement, step, total_energy)
from ..winwarning import WindowWarningMask

from . import util


def _random_factors(rng, n, K):
    normals = rng.normal(size=(n, 3))
    normals /= np.linalg.norm(normals, axis=1)[:, None]
    return GeometricFactorSet(rng.normal(scale=3, size=(n, 3)), rng.randint(1, K + 1, size=n),
                              rng.uniform(size=n), normals, rng.normal(size=(n, 3)))


def _spd(rng, n):
    A = rng.normal(size=(n, n))
    return A.dot(A.T) + n * np.eye(n)


def _moving_window(K=4, dt=0.03, xi=(0.5, 0.2, 0.0, 0.0, 0.0, 0.5), npoints=800, seed=0):
    """Constant-velocity window over the box map, with exact body-frame points."""
    rng = np.random.RandomState(seed)
    vmap = util.box_map()
    xi = np.asarray(xi, dtype=np.float64)
    truth = Trajectory(0.0, dt, [exp(k * dt * xi) for k in range(K + 1)])
    world = vmap.points()
    world = world[rng.choice(len(world), size=npoints, replace=False)]
    t = np.sort(rng.uniform(0.0, K * dt * (1.0 - 1e-6), size=npoints))
    body = np.array([exp(ti * xi).inverse().act(p) for ti, p in zip(t, world)])
    return vmap, truth, WindowPoints(t, body), dt * xi


class TestSolver(unittest.TestCase):

    def setUp(self):
        self.rng = np.random.RandomState(5)

    def test_assemble_empty(self):
        state = WindowState(constant(0.0, 0.1, 4))
        eqs = assemble(state)
        nt.assert_array_equal(eqs.H, np.zeros((30, 30)))
        nt.assert_array_equal(eqs.b, np.zeros(30))
        self.assertEqual(eqs.energy['total'], 0.0)
        self.assertEqual(eqs.flags, 0)

    def test_assemble_single_factor(self):
        traj = util.chain(0.0, 0.1, [util.random_twist(self.rng, 0.3, 0.3) for _ in range(4)])
        geo = _random_factors(self.rng, 1, 4)
        geo.segment[:] = 2
        eqs = assemble(WindowState(traj, geometric=geo))
        self.assertLessEqual(np.linalg.matrix_rank(eqs.H), 1)
        mask = np.zeros(30, dtype=bool)
        mask[6:18] = True
        self.assertEqual(np.count_nonzero(eqs.H[~mask]), 0)
        self.assertEqual(np.count_nonzero(eqs.H[:, ~mask]), 0)
        self.assertGreater(np.count_nonzero(eqs.H[mask][:, mask]), 0)

    def test_assemble_dense(self):
        """Scattered blocks equal J^T W J over the stacked residuals"""
        K = 4
        traj = util.chain(0.0, 0.1, [util.random_twist(self.rng, 0.3, 0.3) for _ in range(K)],
                          first=util.random_pose(self.rng, 1.0, 2.0))
        geo = _random_factors(self.rng, 40, K)
        kine = kinematic_factors(K, 0.05, self.rng.normal(scale=0.1, size=(K, 6)))
        prior = MarginalizationPrior(_spd(self.rng, 6), self.rng.normal(size=6),
                                     [util.random_pose(self.rng, 0.1, 0.1).compose(traj[0])])
        state = WindowState(traj, prior=prior, kinematic=kine, geometric=geo)
        eqs = assemble(state)

        n = 6 * (K + 1)
        rows = list()
        weights = list()
        residuals = list()
        e, J_prev, J_next = geo.evaluate(traj)
        for i in range(len(e)):
            row = np.zeros(n)
            k = geo.segment[i]
            row[6*(k - 1):6*k] = J_prev[i]
            row[6*k:6*(k + 1)] = J_next[i]
            rows.append(row)
            weights.append(geo.weight)
            residuals.append(e[i])
        controls = traj.controls
        for f in kine:
            r, J = kinematic_eval(f, *[controls[i] for i in f.indices])
            block = np.zeros((6, n))
            for i, Ji in zip(f.indices, J):
                block[:, 6*i:6*i + 6] = Ji
            rows.extend(block)
            weights.extend([f.weight] * 6)
            residuals.extend(r)
        J = np.array(rows)
        W = np.diag(weights)
        H = J.T.dot(W).dot(J)
        b = J.T.dot(W).dot(residuals)
        d = ominus(traj[0], prior.lin_point[0])
        H[:6, :6] += prior.H
        b[:6] += prior.H.dot(d) + prior.b

        nt.assert_allclose(eqs.H, H, rtol=1e-10, atol=1e-6)
        nt.assert_allclose(eqs.b, b, rtol=1e-10, atol=1e-6)
        self.assertAlmostEqual(eqs.energy['total'] / total_energy(state), 1.0, places=12)

    def test_step_zero_gradient(self):
        state = WindowState(constant(0.0, 0.1, 4, util.random_pose(self.rng)))
        eqs = assemble(state)
        new, norm, damping, accepted = step(eqs)
        self.assertTrue(accepted)
        self.assertEqual(norm, 0.0)
        self.assertIs(new, state)

    def test_step_quadratic(self):
        """One undamped step on a quadratic prior lands on its minimum"""
        traj = util.chain(0.0, 0.1, [util.random_twist(self.rng, 0.3, 0.3) for _ in range(4)])
        H = _spd(self.rng, 30)
        b = self.rng.normal(size=30)
        prior = MarginalizationPrior(H, b, traj.controls)
        state = WindowState(traj, prior=prior)
        new, norm, _, accepted = step(assemble(state), damping=0.0)
        self.assertTrue(accepted)
        xi = -np.linalg.solve(H, b)
        self.assertAlmostEqual(norm, np.linalg.norm(xi), places=9)
        nt.assert_allclose(assemble(new).b, np.zeros(30), atol=1e-9)
        self.assertLess(total_energy(new), total_energy(state))

    def test_optimize_stationary(self):
        vmap = util.box_map()
        pts = vmap.points()[::5]
        t = np.linspace(0.0, 0.119, len(pts))
        traj = constant(0.0, 0.03, 4)
        state = WindowState(traj, kinematic=kinematic_factors(4), points=WindowPoints(t, pts))
        diagnostics = list()
        out = optimize(state, vmap, diagnostics=diagnostics)
        for T in out.trajectory.controls:
            self.assertTrue(T.allclose(Pose.identity(), atol=1e-8))
        self.assertFalse(out.flags & WindowWarningMask.MAXITER)
        self.assertFalse(out.flags & WindowWarningMask.NO_CORRESPONDENCES)
        self.assertGreater(len(out.geometric), 0)
        self.assertGreater(len(diagnostics), 0)
        table = diagnostics_table(diagnostics)
        self.assertEqual(len(table), len(diagnostics))
        self.assertTrue(np.all(table['accepted']))

    def test_associate(self):
        vmap, truth, points, _ = _moving_window()
        state = associate(WindowState(truth, points=points), vmap)
        e, _, _ = state.geometric.evaluate(truth)
        self.assertGreater(len(e), 0.8 * len(points))
        nt.assert_allclose(e, 0.0, atol=1e-9)
        #- nothing within reach of the map
        far = WindowPoints(points.t, points.points + 50.0)
        state = associate(WindowState(truth, points=far), vmap)
        self.assertEqual(len(state.geometric), 0)
        eqs = assemble(state)
        self.assertTrue(eqs.flags & WindowWarningMask.NO_CORRESPONDENCES)
        self.assertTrue(eqs.flags & WindowWarningMask.UNDERCONSTRAINED)

    def test_optimize_constant_velocity(self):
        vmap, truth, points, tau = _moving_window()
        K = truth.nsegments
        start = truth.with_controls([T.compose(exp(util.random_twist(self.rng, 2e-3, 2e-3)))
                                     for T in truth.controls])
        state = WindowState(start, kinematic=kinematic_factors(K, references=[tau] * K),
                            points=points)
        out = optimize(state, vmap)
        for T, T0 in zip(out.trajectory.controls, truth.controls):
            d = ominus(T, T0)
            self.assertLess(np.max(np.abs(d[:3])), 1e-4)
            self.assertLess(np.max(np.abs(d[3:])), 1e-4)
        self.assertFalse(out.flags & WindowWarningMask.MAXITER)

    def test_step_energy(self):
        """Accepted steps never raise the energy"""
        vmap, truth, points, tau = _moving_window()
        K = truth.nsegments
        start = truth.with_controls([T.compose(exp(util.random_twist(self.rng, 0.02, 0.02)))
                                     for T in truth.controls])
        state = associate(WindowState(start, kinematic=kinematic_factors(K, references=[tau] * K),
                                      points=points), vmap)
        energy = [total_energy(state)]
        damping = 1e-4
        naccepted = 0
        for _ in range(10):
            state, norm, damping, accepted = step(assemble(state), state, damping)
            if accepted and norm > 0:
                naccepted += 1
                self.assertLessEqual(total_energy(state), energy[-1] * (1.0 + 1e-12))
                energy.append(total_energy(state))
        self.assertGreater(naccepted, 0)
        self.assertLess(energy[-1], energy[0])

    def test_sigma_r_scale(self):
        """Scaling the point noise alone does not move the minimum"""
        vmap, truth, points, _ = _moving_window()
        start = truth.with_controls([T.compose(exp(util.random_twist(self.rng, 2e-3, 2e-3)))
                                     for T in truth.controls])
        out = [optimize(WindowState(start, points=points), vmap, OdometryConfig(sigma_r=s))
               for s in (0.1, 0.2)]
        for T1, T2 in zip(out[0].trajectory.controls, out[1].trajectory.controls):
            nt.assert_allclose(ominus(T2, T1), 0.0, atol=1e-6)

    def test_split_rig(self):
        """A point's residual does not depend on which sensor of the rig saw it"""
        vmap, truth, points, _ = _moving_window()
        start = truth.with_controls([T.compose(exp(util.random_twist(self.rng, 5e-3, 5e-3)))
                                     for T in truth.controls])
        ext = Pose(util.rotz(np.pi/2), [0.1, 0.0, 0.05])
        rig = SensorRig([Pose.identity(), ext])
        sensor = np.arange(len(points)) % 2
        raw = points.points.copy()
        raw[sensor == 1] = ext.inverse().act(raw[sensor == 1])
        split = WindowPoints(points.t, rig.to_body(raw, sensor), sensor)

        single = associate(WindowState(start, points=points), vmap)
        both = associate(WindowState(start, points=split), vmap)
        self.assertEqual(len(both.geometric), len(single.geometric))
        self.assertEqual(set(both.geometric.sensor), {0, 1})
        e_single, _, _ = single.geometric.evaluate(start)
        e_both, _, _ = both.geometric.evaluate(start)
        nt.assert_allclose(e_both, e_single, atol=1e-12)

    def test_schur_complement(self):
        H = _spd(self.rng, 18)
        b = self.rng.normal(size=18)
        H_m, b_m, regularized = schur_complement(H, b, 6)
        self.assertFalse(regularized)
        nt.assert_allclose(H_m, np.linalg.inv(np.linalg.inv(H)[6:, 6:]), rtol=1e-9, atol=1e-9)
        x = np.linalg.solve(H, -b)
        nt.assert_allclose(np.linalg.solve(H_m, -b_m), x[6:], rtol=1e-9, atol=1e-9)

        H[:6, :] = 0.0
        H[:, :6] = 0.0
        H_m, b_m, regularized = schur_complement(H, np.zeros(18), 6)
        self.assertTrue(regularized)
        nt.assert_allclose(H_m, H[6:, 6:])

    def test_schur_linear_gaussian(self):
        """Eliminating the first block leaves the batch solution of the rest"""
        for _ in range(50):
            n = 6 * self.rng.randint(2, 7)
            H = _spd(self.rng, n)
            b = self.rng.normal(size=n)
            H_m, b_m, _ = schur_complement(H, b, 6)
            nt.assert_allclose(np.linalg.solve(H_m, -b_m), np.linalg.solve(H, -b)[6:],
                               rtol=1e-7, atol=1e-9)

    def test_marginalize_decoupled(self):
        traj = util.chain(0.0, 0.1, [util.random_twist(self.rng, 0.3, 0.3) for _ in range(4)])
        geo = _random_factors(self.rng, 30, 4)
        geo.segment[:] = self.rng.randint(2, 5, size=30)
        state = WindowState(traj, geometric=geo)
        prior, flags = marginalize(state)
        nt.assert_array_equal(prior.H, np.zeros((6, 6)))
        nt.assert_array_equal(prior.b, np.zeros(6))
        self.assertTrue(flags & WindowWarningMask.SINGULAR_MARGINAL)
        self.assertTrue(prior.lin_point[0].allclose(traj[1], atol=0))

    def test_marginalize(self):
        K = 4
        traj = util.chain(0.0, 0.1, [util.random_twist(self.rng, 0.3, 0.3) for _ in range(K)])
        geo = _random_factors(self.rng, 60, K)
        kine = kinematic_factors(K, 0.05, self.rng.normal(scale=0.1, size=(K, 6)))
        old = MarginalizationPrior(_spd(self.rng, 6), self.rng.normal(size=6), [traj[0]])
        state = WindowState(traj, prior=old, kinematic=kine, geometric=geo)
        prior, flags = marginalize(state)
        self.assertEqual(flags, 0)

        #- the same terms assembled over the whole window
        first = WindowState(traj, prior=old, kinematic=[kine[0]],
                            geometric=geo.subset(geo.segment == 1))
        eqs = assemble(first)
        H_m, b_m, _ = schur_complement(eqs.H[:12, :12], eqs.b[:12], 6)
        nt.assert_allclose(prior.H, H_m, rtol=1e-10, atol=1e-8)
        nt.assert_allclose(prior.b, b_m, rtol=1e-10, atol=1e-8)
        self.assertGreater(prior.min_eigenvalue(), -1e-6)

    def test_window_points(self):
        traj = util.chain(0.0, 0.1, [util.random_twist(self.rng, 0.3, 0.3) for _ in range(2)])
        pts = WindowPoints([0.0, 0.05, 0.15], self.rng.normal(size=(3, 3)))
        k, alpha = pts.locate(traj)
        nt.assert_array_equal(k, [1, 1, 2])
        world = pts.world(traj)
        for i, t in enumerate(pts.t):
            nt.assert_allclose(world[i], traj.pose_at(t).act(pts.points[i]), atol=1e-12)
        fixed = WindowPoints([0.0, 0.1], np.zeros((2, 3)), segment=[1, 2], alpha=[0.0, 0.0])
        nt.assert_array_equal(fixed.locate(traj)[0], [1, 2])


if __name__ == '__main__':
    unittest.main()
