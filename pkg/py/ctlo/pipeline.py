"""
ctlo.pipeline
=============

End-to-end odometry.

The stream starts stationary: points of the first ``init_duration``
seconds seed the map in the body frame at the identity pose.  The first
window begins right after; init points are not registered again.

Each window covers K segments.  Once every sensor has delivered data past
the window end, the window is optimized, its oldest segment is
marginalized into a prior, the points of that segment are committed to
the map with the converged poses, the map is culled around the newest
control, and the window slides by one segment with a constant-velocity
prediction for the new control.
"""

from __future__ import absolute_import, division, print_function

import sys
import time

import numpy as np
from astropy.table import Table

from . import constants
from .io import POINT_DTYPE, point_xyz, read_config, tum_table, write_tum
from .liegroup import Pose
from .trajectory import Trajectory, OutOfWindowError, constant
from .voxelmap import VoxelMap
from .factors import SensorRig, kinematic_factors
from .solver import (ConvergenceError, WindowPoints, WindowState, energy_terms,
                     marginalize, optimize, diagnostics_table)
from .utils import uniform_subsample
from .winwarning import WindowWarningMask, badwindow_mask

MODES = ('continuous', 'deskewed')


class InitializationError(ValueError):
    """No data to build the initial map from."""
    pass


class OdometryConfig(object):
    """Options of the odometry pipeline.

    Any field can be given as a keyword; unknown keywords are an error.
    ``extrinsics`` is a list of :class:`~ctlo.liegroup.Pose`, one per
    sensor.  ``max_correspondence`` defaults to two voxel sizes.
    """

    def __init__(self, **kwargs):
        for name, (kind, default) in _FIELDS.items():
            setattr(self, name, default)
        self.extrinsics = [Pose.identity()]
        for name, value in kwargs.items():
            if name == 'extrinsics':
                self.extrinsics = list(value)
            elif name in _FIELDS:
                setattr(self, name, value)
            else:
                raise ValueError("unknown config option {}".format(name))
        self.validate()

    @classmethod
    def preset(cls, name, **overrides):
        """Config from a named preset: indoor, outdoor or aggressive."""
        if name not in PRESETS:
            raise ValueError("unknown preset {}; choose from {}".format(
                name, ', '.join(sorted(PRESETS))))
        args = dict(PRESETS[name])
        args.update(overrides)
        return cls(**args)

    def copy(self, **overrides):
        args = dict((name, getattr(self, name)) for name in _FIELDS)
        args['extrinsics'] = list(self.extrinsics)
        args.update(overrides)
        return OdometryConfig(**args)

    def validate(self):
        """Raise ValueError on inconsistent options."""
        if int(self.segments) != self.segments or self.segments < 1:
            raise ValueError("segments must be an integer >= 1, got {}".format(self.segments))
        for name in ('dt', 'sigma_r', 'sigma_v', 'voxel_size', 'max_range',
                     'tolerance', 'planarity'):
            if not getattr(self, name) > 0:
                raise ValueError("{} must be positive, got {}".format(name, getattr(self, name)))
        for name in ('init_duration', 'huber', 'damping'):
            if getattr(self, name) is not None and getattr(self, name) < 0:
                raise ValueError("{} must not be negative".format(name))
        for name in ('max_points_per_voxel', 'neighbors', 'max_outer', 'max_inner'):
            if getattr(self, name) < 1:
                raise ValueError("{} must be at least 1".format(name))
        if self.neighbors < 3:
            raise ValueError("plane fits need at least 3 neighbors")
        if self.mode not in MODES:
            raise ValueError("mode must be one of {}, got {}".format(MODES, self.mode))
        if len(self.extrinsics) < 1:
            raise ValueError("at least one sensor extrinsic is required")

    def rig(self):
        return SensorRig(self.extrinsics)

    @classmethod
    def read(cls, filename, **overrides):
        """Config from a ``key = value`` file.

        ``preset = <name>`` selects the starting values; sensor extrinsics
        are given as ``extrinsic_<j> = tx ty tz qx qy qz qw``.
        """
        raw = read_config(filename)
        args = dict()
        preset = raw.pop('preset', None)
        extrinsics = dict()
        for key, value in raw.items():
            if key.startswith('extrinsic_'):
                try:
                    j = int(key[len('extrinsic_'):])
                    numbers = [float(x) for x in value.split()]
                except ValueError:
                    raise ValueError("{}: bad extrinsic entry {} = {}".format(filename, key, value))
                if len(numbers) != 7:
                    raise ValueError("{}: {} needs 7 numbers tx ty tz qx qy qz qw".format(
                        filename, key))
                extrinsics[j] = Pose.from_quaternion(numbers[3:], numbers[:3])
            elif key in _FIELDS:
                args[key] = _parse(key, value)
            else:
                raise ValueError("{}: unknown key {}".format(filename, key))
        if extrinsics:
            if sorted(extrinsics) != list(range(len(extrinsics))):
                raise ValueError("{}: extrinsics must be numbered 0..{}".format(
                    filename, len(extrinsics) - 1))
            args['extrinsics'] = [extrinsics[j] for j in range(len(extrinsics))]
        args.update(overrides)
        if preset is not None:
            return cls.preset(preset, **args)
        return cls(**args)

    def __repr__(self):
        items = ', '.join('{}={}'.format(name, getattr(self, name)) for name in _FIELDS)
        return 'OdometryConfig({}, sensors={})'.format(items, len(self.extrinsics))


#- name: (type, default)
_FIELDS = dict([
    ('segments', (int, constants.segments)),
    ('dt', (float, constants.segment_dt)),
    ('sigma_r', (float, constants.sigma_r)),
    ('sigma_v', (float, constants.sigma_v)),
    ('voxel_size', (float, constants.voxel_size_indoor)),
    ('max_range', (float, constants.max_range)),
    ('init_duration', (float, constants.init_duration)),
    ('huber', (float, constants.huber_threshold)),
    ('mode', (str, 'continuous')),
    ('max_points_per_voxel', (int, constants.max_points_per_voxel)),
    ('neighbors', (int, constants.plane_neighbors)),
    ('planarity', (float, constants.max_planarity)),
    ('max_correspondence', (float, None)),
    ('segment_budget', (int, constants.segment_budget)),
    ('min_correspondences', (int, constants.min_correspondences)),
    ('max_outer', (int, constants.max_outer)),
    ('max_inner', (int, constants.max_inner)),
    ('tolerance', (float, constants.tolerance)),
    ('damping', (float, constants.damping_init)),
    ('live_smoothness', (bool, True)),
])

PRESETS = {
    'indoor': dict(voxel_size=constants.voxel_size_indoor),
    'outdoor': dict(voxel_size=constants.voxel_size_outdoor),
    'aggressive': dict(dt=constants.aggressive_dt, voxel_size=constants.voxel_size_aggressive),
}


def _parse(key, value):
    kind = _FIELDS[key][0]
    if value.lower() in ('none', ''):
        return None
    if kind is bool:
        if value.lower() in ('1', 'true', 'yes', 'on'):
            return True
        if value.lower() in ('0', 'false', 'no', 'off'):
            return False
        raise ValueError("{} must be a boolean, got {}".format(key, value))
    if kind is int:
        return int(value)
    return kind(value)


class OdometryOutput(object):
    """Finalized odometry results.

    Attributes:
        knots (Table): one TUM row per finalized control pose.
        status (Table): one row per processed window.
        diagnostics (Table): one row per Gauss-Newton step.
        residuals (Table): per window and sensor residual statistics.

    """
    def __init__(self, knots, status, diagnostics, residuals):
        self.knots = knots
        self.status = status
        self.diagnostics = diagnostics
        self.residuals = residuals

    def __len__(self):
        return len(self.knots)

    @property
    def times(self):
        return np.asarray(self.knots['t'])

    def positions(self):
        return np.column_stack([self.knots[c] for c in ('tx', 'ty', 'tz')])

    @property
    def diverged(self):
        return bool(np.any(np.asarray(self.status['flags']) & WindowWarningMask.DIVERGED))

    @property
    def bad_windows(self):
        """Boolean mask of windows whose estimate should not be trusted."""
        return (np.asarray(self.status['flags']) & badwindow_mask) != 0

    def write(self, filename):
        write_tum(filename, self.knots)


def _status_table(rows):
    names = ('window', 't0', 'flags', 'ncorr', 'min_segment_corr', 'iterations',
             'E_reg', 'E_kine', 'E_marg', 'converged', 'elapsed')
    dtype = ('i4', 'f8', 'i4', 'i4', 'i4', 'i4', 'f8', 'f8', 'f8', 'bool', 'f8')
    table = Table(names=names, dtype=dtype)
    for row in rows:
        table.add_row([row[name] for name in names])
    return table


def _residual_table(rows):
    table = Table(names=('window', 'sensor', 'n', 'mean', 'rms'),
                  dtype=('i4', 'i4', 'i4', 'f8', 'f8'))
    for row in rows:
        table.add_row(row)
    return table


class Odometry(object):
    """Streaming continuous-time odometry.

    Args:
        config (OdometryConfig): options, defaults if None.
        verbose (bool): print progress and per-window warnings.

    """
    def __init__(self, config=None, verbose=False):
        if config is None:
            config = OdometryConfig()
        self.config = config
        self.verbose = verbose
        self.rig = config.rig()
        self.map = VoxelMap(config.voxel_size, config.max_points_per_voxel, config.max_range)
        self.trajectory = None
        self.prior = None
        self.references = None
        self.dropped = 0

        self._pending = list()
        self._stream_start = None
        self._t = np.zeros(0)
        self._pb = np.zeros((0, 3))
        self._sensor = np.zeros(0, dtype=np.int64)
        self._latest = dict()
        self._finished = False

        self._knots = list()
        self._knot_origin = None
        self._knot_start = None
        self._knot_dt = None
        self._status = list()
        self._diagnostics = list()
        self._residuals = list()

    @property
    def initialized(self):
        return self.trajectory is not None

    #- initialization

    def initialize(self, points, t_start=None):
        """Seed the map with stationary points.

        Args:
            points (array): point records of the initialization period.
            t_start (float): stream start, earliest point time if None.

        Returns:
            tuple: ``(map, trajectory)``; all controls are the identity and
            the first knot is ``t_start + init_duration``.

        Raises:
            InitializationError: no points.

        """
        if len(points) == 0:
            raise InitializationError("no points in the initialization period")
        if t_start is None:
            t_start = float(np.min(points['t']))
        pb = self.rig.to_body(point_xyz(points), points['sensor'])
        n = self.map.insert(pb)
        cfg = self.config
        self.trajectory = constant(t_start + cfg.init_duration, cfg.dt, cfg.segments)
        self.references = np.zeros((cfg.segments, 6))
        self._knot_origin = self.trajectory.origin
        self._knot_start = self.trajectory.start
        self._knot_dt = cfg.dt
        if self.verbose:
            print("INFO: initialized map with {} of {} points in {} voxels".format(
                n, len(points), self.map.nvoxels))
            sys.stdout.flush()
        return self.map, self.trajectory

    #- streaming

    def ingest(self, batch):
        """Buffer a block of point records.

        Returns:
            array: segment index of every record relative to the current
            window (values above K belong to later windows, 0 marks records
            dropped for being older than the window or used for
            initialization).

        """
        batch = np.asarray(batch)
        segments = np.zeros(len(batch), dtype=np.int64)
        if len(batch) == 0:
            return segments
        for s in np.unique(batch['sensor']):
            ts = batch['t'][batch['sensor'] == s]
            self._latest[int(s)] = max(self._latest.get(int(s), -np.inf), float(ts.max()))
            self.rig.extrinsic(int(s))

        t = np.asarray(batch['t'], dtype=np.float64)
        keep = np.ones(len(batch), dtype=bool)
        if not self.initialized:
            if self._stream_start is None:
                self._stream_start = float(t.min())
            self._pending.append(batch)
            init_end = self._stream_start + self.config.init_duration
            if max(self._latest.values()) < init_end:
                return segments
            pending = np.concatenate(self._pending)
            self._pending = list()
            early = pending['t'] < init_end
            self.initialize(pending[early], self._stream_start)
            later = pending[~early]
            if len(later) == 0:
                return segments
            keep = t >= init_end
            t = t[keep]
            batch = batch[keep]

        traj = self.trajectory
        old = t < traj.t0
        self.dropped += int(np.count_nonzero(old))
        seg = np.floor((t - traj.t0) / traj.dt).astype(np.int64) + 1
        seg[old] = 0
        ok = ~old
        self._t = np.concatenate([self._t, t[ok]])
        self._pb = np.concatenate([self._pb, self.rig.to_body(point_xyz(batch[ok]),
                                                              batch['sensor'][ok])])
        self._sensor = np.concatenate([self._sensor,
                                       np.asarray(batch['sensor'][ok], dtype=np.int64)])
        segments[np.flatnonzero(keep)] = seg
        return segments

    def ready(self):
        """True when every sensor has delivered data past the window end."""
        if not self.initialized or len(self._latest) == 0:
            return False
        return min(self._latest.values()) >= self.trajectory.tK

    def process_available(self):
        """Process every window whose data is complete; returns the count."""
        n = 0
        while self.ready():
            self.process_window()
            n += 1
        return n

    def _window_points(self, traj):
        k, _ = traj.locate(self._t)
        inwin = (k >= 1) & (k <= traj.nsegments)
        t = self._t[inwin]
        pb = self._pb[inwin]
        sensor = self._sensor[inwin]
        k = k[inwin]
        keep = list()
        for s in range(1, traj.nsegments + 1):
            ii = np.flatnonzero(k == s)
            keep.append(ii[uniform_subsample(len(ii), self.config.segment_budget)])
        keep = np.concatenate(keep) if keep else np.zeros(0, dtype=np.int64)
        return WindowPoints(t[keep], pb[keep], sensor[keep])

    def _optimize(self, state):
        """Optimize with one retry at doubled damping."""
        cfg = self.config
        rows = list()
        try:
            result = optimize(state, self.map, cfg, diagnostics=rows)
        except ConvergenceError as err:
            print("WARNING: window at t={:.3f} failed ({}); retrying with damping {:.3g}".format(
                state.trajectory.t0, err, 2*cfg.damping))
            sys.stdout.flush()
            rows = list()
            try:
                result = optimize(state.replace(flags=state.flags | WindowWarningMask.RETRIED),
                                  self.map, cfg, diagnostics=rows, damping=2*cfg.damping)
            except ConvergenceError as err:
                print("WARNING: window at t={:.3f} diverged ({}); keeping prediction".format(
                    state.trajectory.t0, err))
                sys.stdout.flush()
                result = state.replace(flags=state.flags | WindowWarningMask.RETRIED
                                       | WindowWarningMask.DIVERGED)
        window = len(self._status)
        for row in rows:
            row['window'] = window
        self._diagnostics.extend(rows)
        return result

    def _finish_window(self, state, timer):
        """Bookkeeping shared by both modes after a window is optimized."""
        cfg = self.config
        traj = state.trajectory
        window = len(self._status)
        geo = state.geometric
        counts = geo.counts(traj.nsegments) if geo is not None else np.zeros(traj.nsegments, int)
        if state.flags & WindowWarningMask.UNDERCONSTRAINED:
            print("WARNING: window {} at t={:.3f} has segments with fewer than {} "
                  "correspondences: {}".format(window, traj.t0, cfg.min_correspondences,
                                               counts.tolist()))
            sys.stdout.flush()
        energy = energy_terms(state) if geo is not None else dict(E_reg=0.0, E_kine=0.0, E_marg=0.0)

        if geo is not None and len(geo) > 0:
            e, _, _ = geo.evaluate(traj, jacobians=False)
            for s in np.unique(geo.sensor):
                es = e[geo.sensor == s]
                self._residuals.append((window, int(s), len(es), float(np.mean(es)),
                                        float(np.sqrt(np.mean(es**2)))))

        self._status.append(dict(
            window=window, t0=traj.t0, flags=state.flags, ncorr=int(np.sum(counts)),
            min_segment_corr=int(np.min(counts)) if len(counts) else 0,
            iterations=state.iterations, E_reg=energy['E_reg'], E_kine=energy['E_kine'],
            E_marg=energy['E_marg'],
            converged=not (state.flags & (WindowWarningMask.MAXITER | WindowWarningMask.DIVERGED)),
            elapsed=time.time() - timer))

    def _slide(self, state):
        """Marginalize, emit T_0 and advance the window."""
        traj = state.trajectory
        prior, mflags = marginalize(state)
        if mflags:
            self._status[-1]['flags'] |= mflags
        self.prior = prior
        self.references = traj.segment_twists()
        self._knots.append(traj[0])
        self.trajectory = traj.advance(traj.predict_next())

    def _build_state(self, points):
        cfg = self.config
        K = self.trajectory.nsegments
        kin = kinematic_factors(K, cfg.sigma_v, self.references, cfg.live_smoothness)
        return WindowState(self.trajectory, prior=self.prior, kinematic=kin, points=points)

    def process_window(self):
        """Optimize the current window and slide it by one segment.

        Returns:
            Pose: the finalized control ``T_0``.

        """
        timer = time.time()
        traj = self.trajectory
        state = self._optimize(self._build_state(self._window_points(traj)))
        self._finish_window(state, timer)

        #- commit the points leaving the window
        k, _ = state.trajectory.locate(self._t)
        leaving = k <= 1
        if np.any(leaving):
            wp = WindowPoints(self._t[leaving], self._pb[leaving])
            self.map.insert(wp.world(state.trajectory))
        self.map.cull(state.trajectory[-1].translation)
        self._t = self._t[~leaving]
        self._pb = self._pb[~leaving]
        self._sensor = self._sensor[~leaving]

        self._slide(state)
        return self._knots[-1]

    def finish(self):
        """Process what is left of the stream and emit the final controls.

        Returns:
            OdometryOutput: everything finalized so far.

        Raises:
            InitializationError: the stream never delivered a point.

        """
        if self._finished:
            return self.export()
        if not self.initialized:
            if len(self._pending) == 0:
                raise InitializationError("stream contained no points")
            pending = np.concatenate(self._pending)
            self._pending = list()
            self.initialize(pending, self._stream_start)

        self.process_available()
        while len(self._t) > 0:
            self.process_window()
        #- the last optimized window's remaining controls
        if len(self._status) > 0:
            self._knots.extend(self.trajectory.controls[:-1])
        self._finished = True
        return self.export()

    def run(self, stream):
        """Run over an iterable of point record blocks."""
        if self.config.mode == 'deskewed':
            blocks = [np.asarray(b) for b in stream]
            points = np.concatenate(blocks) if blocks else np.zeros(0, dtype=POINT_DTYPE)
            return self.deskewed_mode_process(split_scans(points))
        for batch in stream:
            self.ingest(batch)
            self.process_available()
        return self.finish()

    #- deskewed input

    def deskewed_mode_process(self, scans):
        """Discrete odometry over motion-compensated scans.

        One control pose per scan; scan i of a window is registered at
        control i (segment i+1 with alpha 0, the last scan at segment K
        with alpha 1).  Smoothness factors tie consecutive scan poses.

        Args:
            scans (list): record arrays, each with a single timestamp.

        Returns:
            OdometryOutput: one knot per registered scan.

        """
        cfg = self.config
        scans = sorted([s for s in scans if len(s) > 0], key=lambda s: float(s['t'][0]))
        if len(scans) == 0:
            raise InitializationError("no scans")
        times = np.array([float(s['t'][0]) for s in scans])
        ninit = max(1, int(np.count_nonzero(times < times[0] + cfg.init_duration)))
        self.initialize(np.concatenate(scans[:ninit]), times[0])
        scans = scans[ninit:]
        times = times[ninit:]
        if len(scans) == 0:
            self._finished = True
            return self.export()

        dt = float(np.median(np.diff(times))) if len(times) > 1 else cfg.dt
        K = cfg.segments
        self.trajectory = constant(times[0], dt, K)
        self._knot_origin = times[0]
        self._knot_start = 0
        self._knot_dt = dt
        bodies = [self.rig.to_body(point_xyz(s), s['sensor']) for s in scans]

        j = 0
        n = len(scans)
        while j < n:
            timer = time.time()
            last = min(j + K, n - 1)
            t, pb, sensor, seg, alpha = [], [], [], [], []
            for i in range(j, last + 1):
                local = i - j
                m = len(bodies[i])
                t.append(np.full(m, times[i]))
                pb.append(bodies[i])
                sensor.append(np.asarray(scans[i]['sensor'], dtype=np.int64))
                seg.append(np.full(m, min(local + 1, K), dtype=np.int64))
                alpha.append(np.full(m, 0.0 if local < K else 1.0))
            points = WindowPoints(np.concatenate(t), np.concatenate(pb), np.concatenate(sensor),
                                  np.concatenate(seg), np.concatenate(alpha))
            state = self._optimize(self._build_state(points))
            self._finish_window(state, timer)
            if last == n - 1:
                self._knots.extend(state.trajectory.controls[:last - j + 1])
                break
            self.map.insert(state.trajectory[0].act(bodies[j]))
            self.map.cull(state.trajectory[-1].translation)
            self._slide(state)
            j += 1

        self._finished = True
        return self.export()

    #- results

    def knot_times(self):
        return self._knot_origin + (self._knot_start + np.arange(len(self._knots))) * self._knot_dt

    def query_pose(self, t):
        """Interpolated pose over the finalized controls.

        Raises:
            OutOfWindowError: ``t`` outside the finalized span.
        """
        if len(self._knots) == 0:
            raise OutOfWindowError("no finalized poses yet")
        if len(self._knots) == 1:
            if t == self.knot_times()[0]:
                return self._knots[0]
            raise OutOfWindowError("time {} outside the finalized span".format(t))
        history = Trajectory(self._knot_origin, self._knot_dt, self._knots,
                             start=self._knot_start)
        return history.pose_at(t, allow_end=True)

    def query_poses(self, times):
        """TUM table of interpolated poses, e.g. one per scan."""
        return tum_table(times, [self.query_pose(t) for t in times])

    def export(self):
        """Finalized knots and per-window tables.

        Returns:
            OdometryOutput: knots, status, diagnostics, residuals.
        """
        knots = tum_table(self.knot_times() if self._knots else np.zeros(0), self._knots)
        return OdometryOutput(knots, _status_table(self._status),
                              diagnostics_table(self._diagnostics),
                              _residual_table(self._residuals))


def split_scans(points):
    """Group point records into scans by identical timestamp."""
    if len(points) == 0:
        return list()
    order = np.argsort(points['t'], kind='stable')
    points = points[order]
    edges = np.flatnonzero(np.diff(points['t']) != 0) + 1
    return np.split(points, edges)
