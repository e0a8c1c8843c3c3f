"""
ctlo.simulator
==============

Raycasting LiDAR simulator over planar scenes and closed-form ground
truth trajectories.

Scenes are sets of bounded rectangles.  Ground truth poses are analytic
functions of time: stationary until ``start``, then a smooth blend of a
constant twist and per-axis sinusoids, continuous with its first
derivative everywhere.  Scan patterns emit points one at a time (a
spinning multi-channel head, or a programmable direction table), so
every point of a moving sensor sees its own pose.
"""

from __future__ import absolute_import, division, print_function

import numpy as np
import numba

from . import constants
from .io import POINT_DTYPE, make_points, point_xyz, tum_table
from .liegroup import Pose, so3_exp, so3_left_jacobian


@numba.jit(nopython=True)
def _raycast_kernel(origins, directions, centers, normals, uaxes, vaxes, half,
                    ranges, hits):
    '''
    Numba kernel: nearest positive intersection of each ray with a set of
    bounded planes.  `ranges` is pre-filled with inf and `hits` with -1;
    on return they hold the distance and the index of the plane hit.
    '''
    nray = origins.shape[0]
    nplane = centers.shape[0]
    for i in range(nray):
        for j in range(nplane):
            denom = (normals[j, 0]*directions[i, 0] + normals[j, 1]*directions[i, 1]
                     + normals[j, 2]*directions[i, 2])
            if abs(denom) < 1e-12:
                continue
            s = (normals[j, 0]*(centers[j, 0] - origins[i, 0])
                 + normals[j, 1]*(centers[j, 1] - origins[i, 1])
                 + normals[j, 2]*(centers[j, 2] - origins[i, 2])) / denom
            if s <= 1e-9 or s >= ranges[i]:
                continue
            hx = origins[i, 0] + s*directions[i, 0] - centers[j, 0]
            hy = origins[i, 1] + s*directions[i, 1] - centers[j, 1]
            hz = origins[i, 2] + s*directions[i, 2] - centers[j, 2]
            u = hx*uaxes[j, 0] + hy*uaxes[j, 1] + hz*uaxes[j, 2]
            v = hx*vaxes[j, 0] + hy*vaxes[j, 1] + hz*vaxes[j, 2]
            if abs(u) <= half[j, 0] and abs(v) <= half[j, 1]:
                ranges[i] = s
                hits[i] = j


class Scene(object):
    """Bounded planar rectangles.

    Args:
        centers (array): (P, 3) rectangle centers, meters.
        normals (array): (P, 3) normals.
        uaxes (array): (P, 3) in-plane axes; the second axis is n x u.
        half (array): (P, 2) half extents along u and v, meters.

    """
    def __init__(self, centers, normals, uaxes, half):
        self.centers = np.ascontiguousarray(np.asarray(centers, dtype=np.float64).reshape(-1, 3))
        n = np.asarray(normals, dtype=np.float64).reshape(-1, 3)
        self.normals = np.ascontiguousarray(n / np.linalg.norm(n, axis=1, keepdims=True))
        u = np.asarray(uaxes, dtype=np.float64).reshape(-1, 3)
        u = u - np.sum(u * self.normals, axis=1, keepdims=True) * self.normals
        self.uaxes = np.ascontiguousarray(u / np.linalg.norm(u, axis=1, keepdims=True))
        self.vaxes = np.ascontiguousarray(np.cross(self.normals, self.uaxes))
        self.half = np.ascontiguousarray(np.asarray(half, dtype=np.float64).reshape(-1, 2))

    def __len__(self):
        return len(self.centers)

    def extend(self, other):
        return Scene(np.vstack([self.centers, other.centers]),
                     np.vstack([self.normals, other.normals]),
                     np.vstack([self.uaxes, other.uaxes]),
                     np.vstack([self.half, other.half]))

    def cast(self, origins, directions):
        """Batched raycast.

        Returns:
            tuple: ``(ranges, planes)``; inf and -1 for misses.

        """
        origins = np.ascontiguousarray(np.asarray(origins, dtype=np.float64).reshape(-1, 3))
        directions = np.ascontiguousarray(np.asarray(directions, dtype=np.float64).reshape(-1, 3))
        if len(origins) == 1 and len(directions) > 1:
            origins = np.ascontiguousarray(np.repeat(origins, len(directions), axis=0))
        ranges = np.full(len(directions), np.inf)
        hits = np.full(len(directions), -1, dtype=np.int64)
        _raycast_kernel(origins, directions, self.centers, self.normals, self.uaxes,
                        self.vaxes, self.half, ranges, hits)
        return ranges, hits

    def plane_distance(self, points, planes):
        """Signed distance of points to the (unbounded) planes they hit."""
        return np.sum((points - self.centers[planes]) * self.normals[planes], axis=1)


def box(center, size, inward=True):
    """The 6 faces of an axis-aligned box."""
    center = np.asarray(center, dtype=np.float64)
    hx, hy, hz = 0.5 * np.asarray(size, dtype=np.float64)
    sign = -1.0 if inward else 1.0
    centers, normals, uaxes, half = [], [], [], []
    for axis, h, (a, b), (ha, hb) in ((0, hx, (1, 2), (hy, hz)),
                                      (1, hy, (0, 2), (hx, hz)),
                                      (2, hz, (0, 1), (hx, hy))):
        for side in (1.0, -1.0):
            c = center.copy()
            c[axis] += side * h
            n = np.zeros(3)
            n[axis] = sign * side
            u = np.zeros(3)
            u[a] = 1.0
            centers.append(c)
            normals.append(n)
            uaxes.append(u)
            half.append((ha, hb))
    return Scene(centers, normals, uaxes, half)


def room(size=(10.0, 10.0, 3.0)):
    """Closed box room centered at the origin."""
    return box((0.0, 0.0, 0.0), size)


def manhattan(size=(12.0, 10.0, 3.0)):
    """Room with two free-standing blocks; every axis is constrained."""
    scene = room(size)
    scene = scene.extend(box((2.5, 1.5, -0.75), (1.0, 2.0, 1.5), inward=False))
    scene = scene.extend(box((-3.0, -2.0, 0.0), (1.5, 1.0, 3.0), inward=False))
    return scene


def corridor(length=40.0, width=3.0, height=6.0):
    """Long corridor along x, closed at both ends."""
    return box((0.0, 0.0, 0.0), (length, width, height))


def wall(distance=5.0, size=20.0):
    """A single wall facing the origin, normal along -x."""
    return Scene([[distance, 0.0, 0.0]], [[-1.0, 0.0, 0.0]], [[0.0, 1.0, 0.0]],
                 [[0.5*size, 0.5*size]])


def raycast(scene, origin, direction):
    """Distance to the nearest plane hit, or None on a miss.

    Raises:
        ValueError: ``direction`` is not unit norm.
    """
    direction = np.asarray(direction, dtype=np.float64)
    if abs(np.linalg.norm(direction) - 1.0) > 1e-9:
        raise ValueError("ray direction must be unit norm")
    ranges, _ = scene.cast(origin, direction)
    if not np.isfinite(ranges[0]):
        return None
    return float(ranges[0])


def _ramp(s, tau):
    """``s - tau (1 - exp(-s/tau))`` for s > 0, else 0; C1 at s = 0."""
    s = np.maximum(s, 0.0)
    if tau <= 0:
        return s, np.where(s > 0, 1.0, 0.0)
    e = np.exp(-s / tau)
    return s - tau * (1.0 - e), 1.0 - e


class GroundTruth(object):
    """Closed-form body trajectory.

    For ``s = t - start > 0``::

        p(s)     = p0 + v * ramp(s) + A * (1 - cos(w s + 0))
        theta(s) = omega * ramp(s) + B * (1 - cos(f s))
        R(s)     = R0 Exp(theta(s))

    with ``ramp(s) = s - tau (1 - exp(-s/tau))``.  Before ``start`` the
    pose is ``(R0, p0)``.

    Args:
        start (float): end of the stationary period, seconds.
        velocity (array): asymptotic linear velocity, m/s.
        angular (array): asymptotic angular rate vector, rad/s.
        amplitude (array): per-axis translation amplitude A, m.
        frequency (array): per-axis translation frequency w, rad/s.
        rot_amplitude (array): per-axis rotation amplitude B, rad.
        rot_frequency (array): per-axis rotation frequency f, rad/s.
        ramp (float): time constant tau of the start ramp, s.
        origin (Pose): pose while stationary.

    """
    def __init__(self, start=0.0, velocity=None, angular=None, amplitude=None,
                 frequency=None, rot_amplitude=None, rot_frequency=None, ramp=0.5,
                 origin=None):
        z = np.zeros(3)
        self.start = float(start)
        self.velocity = z if velocity is None else np.asarray(velocity, dtype=np.float64)
        self.angular = z if angular is None else np.asarray(angular, dtype=np.float64)
        self.amplitude = z if amplitude is None else np.asarray(amplitude, dtype=np.float64)
        self.frequency = z if frequency is None else np.asarray(frequency, dtype=np.float64)
        self.rot_amplitude = z if rot_amplitude is None else np.asarray(rot_amplitude, dtype=np.float64)
        self.rot_frequency = z if rot_frequency is None else np.asarray(rot_frequency, dtype=np.float64)
        self.ramp = float(ramp)
        self.origin = Pose.identity() if origin is None else origin

    def _curves(self, t):
        s = np.maximum(np.asarray(t, dtype=np.float64).reshape(-1) - self.start, 0.0)
        r, dr = _ramp(s, self.ramp)
        moving = (s > 0)[:, None]
        ws = s[:, None] * self.frequency
        fs = s[:, None] * self.rot_frequency
        p = r[:, None] * self.velocity + self.amplitude * (1.0 - np.cos(ws))
        dp = dr[:, None] * self.velocity + self.amplitude * self.frequency * np.sin(ws)
        th = r[:, None] * self.angular + self.rot_amplitude * (1.0 - np.cos(fs))
        dth = dr[:, None] * self.angular + self.rot_amplitude * self.rot_frequency * np.sin(fs)
        return (np.where(moving, p, 0.0), np.where(moving, dp, 0.0),
                np.where(moving, th, 0.0), np.where(moving, dth, 0.0))

    def poses(self, t):
        """Batched poses: rotations (N, 3, 3) and positions (N, 3)."""
        p, _, th, _ = self._curves(t)
        R0 = self.origin.rotation
        R = R0 @ so3_exp(th)
        pos = self.origin.translation + p.dot(R0.T)
        return R, pos

    def pose(self, t):
        R, p = self.poses([t])
        return Pose(R[0], p[0])

    def twist(self, t):
        """Body-frame twist ``(v_body, omega_body)`` at time t."""
        p, dp, th, dth = self._curves([t])
        R, _ = self.poses([t])
        v_world = self.origin.rotation.dot(dp[0])
        omega = so3_left_jacobian(-th[0]).dot(dth[0])
        return np.concatenate([R[0].T.dot(v_world), omega])

    def table(self, t0, t1, rate=200.0):
        """TUM table sampled at ``rate`` Hz on ``[t0, t1]``."""
        times = np.arange(t0, t1 + 0.5/rate, 1.0/rate)
        R, p = self.poses(times)
        return tum_table(times, [Pose(r, x) for r, x in zip(R, p)])


_GOLDEN = 0.5 * (np.sqrt(5.0) - 1.0)


class ScanPattern(object):
    """Emission schedule of one LiDAR.

    Points are fired one after another at ``rate`` points per second.  A
    spinning head fires ``channels`` elevations per column and turns at
    ``rev_rate`` revolutions per second, and successive revolutions are
    offset in elevation and azimuth so the rings are never retraced.  A
    direction table overrides the spinning geometry and is cycled.

    Args:
        channels (int): number of elevation rings.
        fov (tuple): (min, max) elevation in degrees.
        rev_rate (float): revolutions per second.
        rate (float): points per second.
        directions (array): optional (M, 3) unit emission directions.
        global_shutter (bool): all points of a sweep share the sweep start
            time, producing distortion-free scans.
        sensor (int): sensor index written to the records.
        extrinsic (Pose): sensor pose in the body frame.

    """
    def __init__(self, channels=16, fov=(-30.0, 30.0), rev_rate=10.0, rate=20000.0,
                 directions=None, global_shutter=False, sensor=0, extrinsic=None):
        self.channels = int(channels)
        self.fov = (float(fov[0]), float(fov[1]))
        self.rev_rate = float(rev_rate)
        self.rate = float(rate)
        self.directions = None
        if directions is not None:
            d = np.asarray(directions, dtype=np.float64).reshape(-1, 3)
            self.directions = d / np.linalg.norm(d, axis=1, keepdims=True)
        self.global_shutter = bool(global_shutter)
        self.sensor = int(sensor)
        self.extrinsic = Pose.identity() if extrinsic is None else extrinsic

    def emit(self, t0, t1):
        """Emission times and sensor-frame directions on ``[t0, t1)``."""
        n0 = int(np.ceil(t0 * self.rate - 1e-9))
        n1 = int(np.ceil(t1 * self.rate - 1e-9))
        index = np.arange(n0, n1)
        t = index / self.rate
        if self.directions is not None:
            d = self.directions[index % len(self.directions)]
        else:
            column = (index // self.channels) * self.channels / self.rate
            rev = np.floor(column * self.rev_rate + 1e-9)
            shift = np.mod(rev * _GOLDEN, 1.0)
            ring = index % self.channels
            #- each revolution shifts every ring by a golden-ratio fraction of the ring spacing
            if self.channels > 1:
                elev = self.fov[0] + (self.fov[1] - self.fov[0]) * (ring + shift) / self.channels
            else:
                elev = np.full(len(index), 0.5 * (self.fov[0] + self.fov[1]))
            elev = np.radians(elev)
            #- and by the same fraction of a column in azimuth
            step = 2.0 * np.pi * self.rev_rate * self.channels / self.rate
            azim = 2.0 * np.pi * self.rev_rate * column + step * shift
            d = np.column_stack([np.cos(elev) * np.cos(azim), np.cos(elev) * np.sin(azim),
                                 np.sin(elev)])
        if self.global_shutter:
            period = 1.0 / self.rev_rate
            t = np.floor(t / period + 1e-9) * period
        return t, d


class SimulatedRun(object):
    """Output of :func:`simulate`.

    Attributes:
        points (array): point records sorted by time.
        truth (GroundTruth): the trajectory used.
        scene (Scene): the scene used.
        patterns (list): scan patterns used.
        planes (array): index of the plane hit by each point.
        xyz (array): (N, 3) float64 sensor-frame coordinates before they
            are packed into float32 records.

    """
    def __init__(self, points, truth, scene, patterns, planes, duration, xyz=None):
        self.points = points
        self.xyz = point_xyz(points) if xyz is None else xyz
        self.truth = truth
        self.scene = scene
        self.patterns = patterns
        self.planes = planes
        self.duration = duration

    def truth_table(self, rate=200.0):
        return self.truth.table(0.0, self.duration, rate)

    def world_points(self):
        """Noise-carrying points placed by the true pose at their own time."""
        out = np.zeros((len(self.points), 3))
        xyz = self.xyz
        R, p = self.truth.poses(self.points['t'])
        for pattern in self.patterns:
            ii = self.points['sensor'] == pattern.sensor
            body = pattern.extrinsic.act(xyz[ii])
            out[ii] = np.einsum('nij,nj->ni', R[ii], body) + p[ii]
        return out


def simulate(scene, truth, patterns, sigma=constants.range_noise, duration=1.0, seed=0,
             blackout=None, block=0.1):
    """Generate a timestamped point stream.

    Args:
        scene (Scene): planar world.
        truth (GroundTruth): body trajectory.
        patterns (list): one :class:`ScanPattern` per sensor.
        sigma (float): Gaussian range noise in meters.
        duration (float): seconds, starting at t = 0.
        seed (int): random seed.
        blackout (list): ``(t0, t1, planes)`` tuples; between t0 and t1
            only returns from the listed plane indices are kept.
        block (float): generation block length in seconds.

    Returns:
        SimulatedRun: records sorted by time plus the ground truth.

    """
    if sigma < 0:
        raise ValueError("range noise must not be negative")
    if isinstance(patterns, ScanPattern):
        patterns = [patterns]
    rng = np.random.RandomState(seed)
    records, planes, coords = [], [], []
    for pattern in patterns:
        ext = pattern.extrinsic
        for b0 in np.arange(0.0, duration, block):
            t, d = pattern.emit(b0, min(b0 + block, duration))
            if len(t) == 0:
                continue
            R, p = truth.poses(t)
            Rs = R @ ext.rotation
            origins = np.einsum('nij,j->ni', R, ext.translation) + p
            dirs = np.einsum('nij,nj->ni', Rs, d)
            ranges, hit = scene.cast(origins, dirs)
            ok = np.isfinite(ranges)
            if blackout:
                for (q0, q1, keep) in blackout:
                    inside = (t >= q0) & (t < q1)
                    ok &= ~inside | np.isin(hit, keep)
            r = ranges[ok]
            if sigma > 0:
                r = r + rng.normal(scale=sigma, size=len(r))
            xyz = d[ok] * r[:, None]
            records.append(make_points(t[ok], xyz, pattern.sensor))
            planes.append(hit[ok])
            coords.append(xyz)
    if len(records) == 0:
        return SimulatedRun(np.zeros(0, dtype=POINT_DTYPE), truth, scene, patterns,
                            np.zeros(0, dtype=np.int64), duration)
    points = np.concatenate(records)
    planes = np.concatenate(planes)
    coords = np.concatenate(coords)
    order = np.argsort(points['t'], kind='stable')
    return SimulatedRun(points[order], truth, scene, patterns, planes[order], duration,
                        coords[order])


#- presets: name -> dict(scene, truth, patterns, duration, sigma, config)

def _handheld(start):
    return GroundTruth(start=start, amplitude=(1.0, 0.8, 0.2), frequency=(0.9, 1.1, 1.3),
                       rot_amplitude=(0.25, 0.25, 0.8), rot_frequency=(0.7, 0.9, 1.0))


def preset(name, init_duration=constants.init_duration):
    """Scenario presets used by the closed-loop tests and the CLI.

    Returns:
        dict: ``scene``, ``truth``, ``patterns``, ``duration``, ``sigma``
        and ``config`` (keyword overrides for
        :class:`~ctlo.pipeline.OdometryConfig`).

    """
    start = init_duration
    vertical = Pose(so3_exp([0.5*np.pi, 0.0, 0.0]))
    if name == 'stationary':
        return dict(scene=room(), truth=GroundTruth(start=start),
                    patterns=[ScanPattern()], duration=2.0, sigma=0.0, config=dict())
    if name == 'constant-velocity':
        truth = GroundTruth(start=start, velocity=(0.8, 0.3, 0.0), angular=(0.0, 0.0, 0.3),
                            ramp=0.3)
        return dict(scene=room(), truth=truth, patterns=[ScanPattern()], duration=5.0,
                    sigma=constants.range_noise, config=dict())
    if name == 'handheld':
        return dict(scene=room(), truth=_handheld(start), patterns=[ScanPattern()],
                    duration=30.0, sigma=constants.range_noise, config=dict())
    if name == 'spin':
        truth = GroundTruth(start=start, angular=(0.0, 0.0, 15.0), ramp=0.5,
                            amplitude=(0.3, 0.3, 0.0), frequency=(1.0, 1.3, 0.0))
        return dict(scene=manhattan(), truth=truth, patterns=[ScanPattern()],
                    duration=6.0, sigma=constants.range_noise,
                    config=dict(dt=constants.aggressive_dt,
                                voxel_size=constants.voxel_size_aggressive))
    if name in ('corridor-single', 'corridor-dual'):
        truth = GroundTruth(start=start, velocity=(1.0, 0.0, 0.0), amplitude=(0.0, 0.3, 0.3),
                            frequency=(0.0, 0.8, 1.1), rot_amplitude=(0.05, 0.05, 0.1),
                            rot_frequency=(0.6, 0.7, 0.5))
        patterns = [ScanPattern(fov=(-2.0, 2.0))]
        extrinsics = [Pose.identity()]
        if name == 'corridor-dual':
            ext = Pose(vertical.rotation, (0.1, 0.0, 0.0))
            patterns.append(ScanPattern(fov=(-2.0, 2.0), sensor=1, extrinsic=ext))
            extrinsics.append(ext)
        return dict(scene=corridor(), truth=truth, patterns=patterns, duration=15.0,
                    sigma=constants.range_noise, config=dict(extrinsics=extrinsics))
    if name == 'wall-gap':
        truth = GroundTruth(start=start, velocity=(0.5, 0.2, 0.0), angular=(0.0, 0.0, 0.2))
        #- only the +x wall (plane 0 of the room) is seen for 0.2 s
        return dict(scene=room(), truth=truth, patterns=[ScanPattern()], duration=4.0,
                    sigma=constants.range_noise, config=dict(),
                    blackout=[(start + 1.5, start + 1.7, [0])])
    if name == 'global-shutter':
        truth = GroundTruth(start=start, velocity=(0.5, 0.2, 0.0), angular=(0.0, 0.0, 0.2),
                            ramp=0.0)
        return dict(scene=manhattan(), truth=truth,
                    patterns=[ScanPattern(global_shutter=True)], duration=3.0,
                    sigma=0.0, config=dict(dt=0.1))
    raise ValueError("unknown simulator preset {}; choose from {}".format(name, ', '.join(PRESETS)))


PRESETS = ('stationary', 'constant-velocity', 'handheld', 'spin', 'corridor-single',
           'corridor-dual', 'wall-gap', 'global-shutter')


def simulate_preset(name, seed=0, duration=None):
    """Run a named preset.

    Returns:
        tuple: ``(run, config_overrides)``.
    """
    p = preset(name)
    if duration is None:
        duration = p['duration']
    run = simulate(p['scene'], p['truth'], p['patterns'], sigma=p['sigma'],
                   duration=duration, seed=seed, blackout=p.get('blackout'))
    return run, p['config']
