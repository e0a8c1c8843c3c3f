"""
ctlo.checks
===========

Finite-difference verification of the analytic Jacobians.

Every Jacobian is compared with central differences taken through the
same right perturbation ``T (+) (h e_i)`` that the solver uses.
"""

from __future__ import absolute_import, division, print_function

import numpy as np
from astropy.table import Table

from .liegroup import exp, ominus, oplus
from .factors import (GeometricFactor, KinematicFactor, Measurement, SensorRig,
                      geometric_eval, interpolation_jacobians, kinematic_eval)
from .voxelmap import PlaneFit

fd_step = 1e-6
threshold = 1e-5


def relative_error(analytic, numeric):
    """``max|a - fd| / max(max|fd|, 1e-8)``."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    return float(np.max(np.abs(analytic - numeric)) / max(np.max(np.abs(numeric)), 1e-8))


def numeric_jacobian(func, poses, index, step=fd_step):
    """Central-difference Jacobian of ``func(poses)`` w.r.t. ``poses[index]``.

    ``func`` returns a vector (or scalar) residual; perturbations are
    applied on the right.
    """
    r0 = np.atleast_1d(func(poses))
    J = np.zeros((len(r0), 6))
    for i in range(6):
        d = np.zeros(6)
        d[i] = step
        plus = list(poses)
        minus = list(poses)
        plus[index] = oplus(poses[index], d)
        minus[index] = oplus(poses[index], -d)
        J[:, i] = (np.atleast_1d(func(plus)) - np.atleast_1d(func(minus))) / (2*step)
    return J


def random_pose(rng, angle=1.0, distance=2.0):
    """Pose with a rotation angle below ``angle`` and translation below ``distance``."""
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    theta = axis * rng.uniform(0.0, angle)
    return exp(np.concatenate([rng.uniform(-distance, distance, size=3), theta]))


def _random_pair(rng):
    T_prev = random_pose(rng, angle=np.pi/2, distance=5.0)
    T_next = T_prev.compose(random_pose(rng))
    return T_prev, T_next


def check_geometric(rng):
    T_prev, T_next = _random_pair(rng)
    n = rng.normal(size=3)
    n /= np.linalg.norm(n)
    plane = PlaneFit(n, rng.normal(size=3), 0.0)
    ext = random_pose(rng, angle=0.5, distance=0.3)
    rig = SensorRig([ext])
    f = GeometricFactor(Measurement(rng.uniform(-10, 10, size=3), 0.0, 0), plane,
                        1, rng.uniform(0.0, 1.0))

    def residual(poses):
        return geometric_eval(f, poses[0], poses[1], rig)[0]

    _, J_prev, J_next = geometric_eval(f, T_prev, T_next, rig)
    fd = [numeric_jacobian(residual, [T_prev, T_next], i)[0] for i in range(2)]
    return relative_error(np.concatenate([J_prev, J_next]), np.concatenate(fd))


def check_kinematic(rng):
    #- frozen pair
    T_a, T_b = _random_pair(rng)
    f = KinematicFactor(1, pseudo_twist=rng.normal(scale=0.3, size=6))
    _, J = kinematic_eval(f, T_a, T_b)
    fd = [numeric_jacobian(lambda poses: kinematic_eval(f, *poses)[0], [T_a, T_b], i)
          for i in range(2)]
    worst = relative_error(np.hstack(J), np.hstack(fd))
    #- live triple
    T_c = T_b.compose(random_pose(rng))
    f = KinematicFactor(2)
    _, J = kinematic_eval(f, T_a, T_b, T_c)
    fd = [numeric_jacobian(lambda poses: kinematic_eval(f, *poses)[0], [T_a, T_b, T_c], i)
          for i in range(3)]
    return max(worst, relative_error(np.hstack(J), np.hstack(fd)))


def check_interpolation(rng):
    T_prev, T_next = _random_pair(rng)
    alpha = rng.uniform(0.0, 1.0)
    phi0 = oplus(T_prev, alpha * ominus(T_next, T_prev))

    def residual(poses):
        phi = oplus(poses[0], alpha * ominus(poses[1], poses[0]))
        return ominus(phi, phi0)

    Jp, Jn = interpolation_jacobians(ominus(T_next, T_prev), alpha)
    fd = [numeric_jacobian(residual, [T_prev, T_next], i) for i in range(2)]
    return relative_error(np.hstack([Jp, Jn]), np.hstack(fd))


CHECKS = (('geometric', check_geometric),
          ('kinematic', check_kinematic),
          ('interpolation', check_interpolation))


def check_jacobians(trials=200, seed=0):
    """Run every check on ``trials`` random configurations.

    Returns:
        Table: one row per factor type with columns ``factor``, ``trials``,
        ``max_rel_error`` and ``passed``.

    """
    rng = np.random.RandomState(seed)
    table = Table(names=('factor', 'trials', 'max_rel_error', 'passed'),
                  dtype=('U16', 'i4', 'f8', 'bool'))
    for name, check in CHECKS:
        worst = max([check(rng) for _ in range(trials)]) if trials > 0 else 0.0
        table.add_row((name, trials, worst, worst < threshold))
    return table
