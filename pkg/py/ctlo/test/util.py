#- Utility functions for testing

from __future__ import division, print_function

import numpy as np

from ..liegroup import Pose, exp
from ..io import make_points
from ..trajectory import Trajectory
from ..voxelmap import VoxelMap


def random_twist(rng, angle=1.0, distance=2.0):
    """Twist with rotation angle below ``angle`` and translation below ``distance``."""
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    return np.concatenate([rng.uniform(-distance, distance, size=3),
                           axis * rng.uniform(0.0, angle)])


def random_pose(rng, angle=1.0, distance=2.0):
    return exp(random_twist(rng, angle, distance))


def rotz(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def box_points(half=(3.0, 3.0, 1.5), step=0.1):
    """Points on the 6 faces of an axis-aligned box centered at the origin."""
    hx, hy, hz = half
    faces = list()
    ex, ey, ez = np.eye(3)
    for sign in (1.0, -1.0):
        faces.append(_rect(sign*hx*ex, ey, ez, hy, hz, step))
        faces.append(_rect(sign*hy*ey, ex, ez, hx, hz, step))
        faces.append(_rect(sign*hz*ez, ex, ey, hx, hy, step))
    return np.concatenate(faces)


def _rect(center, u, v, hu, hv, step):
    su = np.arange(-hu, hu + step/2, step)
    sv = np.arange(-hv, hv + step/2, step)
    a, b = np.meshgrid(su, sv)
    return center + a.reshape(-1, 1) * u + b.reshape(-1, 1) * v


def box_map(voxel_size=0.4, step=0.1, max_points=20):
    """Voxel map of a box room sampled on a regular grid."""
    vmap = VoxelMap(voxel_size, max_points=max_points)
    vmap.insert(box_points(step=step))
    return vmap


def stationary_records(t0=0.0, t1=1.0, rate=2000, seed=0):
    """Point records sampled on the box faces, seen from the origin."""
    rng = np.random.RandomState(seed)
    pts = box_points(step=0.1)
    t = np.arange(t0, t1, 1.0/rate)
    xyz = pts[rng.randint(len(pts), size=len(t))]
    return make_points(t, xyz, 0)


def chain(t0, dt, twists, first=None):
    """Trajectory with controls built by successive twists."""
    controls = [Pose.identity() if first is None else first]
    for tau in twists:
        controls.append(controls[-1].compose(exp(tau)))
    return Trajectory(t0, dt, controls)
