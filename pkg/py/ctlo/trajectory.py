"""
ctlo.trajectory
===============

Piecewise-linear continuous-time trajectory.

K+1 control poses ``T_0 ... T_K`` at equidistant knots ``t_k = t0 + k*dt``
define the pose at any time inside the window ``[t0, tK)``::

    phi_k(t) = T_{k-1} (+) (alpha * tau_k),  alpha = (t - t_{k-1}) / dt
    tau_k    = T_k (-) T_{k-1}

The final knot ``tK`` belongs to the next window; it is only queryable
with ``allow_end=True``, which is how the finalized history is read back.
"""

from __future__ import absolute_import, division, print_function

import numpy as np

from . import constants
from .liegroup import Pose, exp, log, oplus, se3_exp


class OutOfWindowError(ValueError):
    """A time or segment index lies outside the trajectory window."""
    pass


class Trajectory(object):
    """Immutable window of K+1 control poses.

    Knot times are kept as ``origin + (start + k) * dt`` so that a slid
    window reproduces bit-identical knot times.

    Args:
        t0 (float): time of the first knot in seconds.
        dt (float): uniform segment length in seconds.
        controls (list): K+1 :class:`~ctlo.liegroup.Pose` values.
        start (int): knot counter of ``controls[0]`` relative to ``t0``.

    """
    def __init__(self, t0, dt, controls, start=0):
        controls = list(controls)
        if len(controls) < 2:
            raise ValueError("a trajectory needs at least 2 control poses, "
                             "got {}".format(len(controls)))
        if not dt > 0:
            raise ValueError("segment length must be positive, got {}".format(dt))
        self._origin = float(t0)
        self._dt = float(dt)
        self._start = int(start)
        self._controls = tuple(controls)

    @property
    def dt(self):
        return self._dt

    @property
    def t0(self):
        return self.knot_time(0)

    @property
    def tK(self):
        return self.knot_time(self.nsegments)

    @property
    def origin(self):
        return self._origin

    @property
    def start(self):
        return self._start

    @property
    def nsegments(self):
        """Number of segments K."""
        return len(self._controls) - 1

    @property
    def controls(self):
        return list(self._controls)

    def __len__(self):
        return len(self._controls)

    def __getitem__(self, k):
        return self._controls[k]

    def knot_time(self, k):
        return self._origin + (self._start + k) * self._dt

    def knot_times(self):
        return self._origin + (self._start + np.arange(len(self))) * self._dt

    def with_controls(self, controls):
        """Same knots, new control values."""
        return Trajectory(self._origin, self._dt, controls, start=self._start)

    def locate(self, t, allow_end=False):
        """Unchecked segment indices and fractions of an array of times.

        Indices outside [1, K] mark times outside the window.
        """
        t = np.asarray(t, dtype=np.float64)
        u = (t - self._origin) / self._dt - self._start
        j = np.floor(u)
        frac = u - j
        #- snap to knots
        up = frac > 1.0 - constants.knot_snap
        j = np.where(up, j + 1, j)
        frac = np.where(up | (frac < constants.knot_snap), 0.0, frac)
        k = j.astype(np.int64) + 1
        if allow_end:
            end = (k == self.nsegments + 1) & (frac == 0.0)
            k = np.where(end, self.nsegments, k)
            frac = np.where(end, 1.0, frac)
        return k, frac

    def contains(self, t):
        """Boolean mask of times inside ``[t0, tK)``."""
        k, _ = self.locate(t)
        return (k >= 1) & (k <= self.nsegments)

    def segment_of(self, t, allow_end=False):
        """Segment index and interpolation fraction for times.

        Args:
            t (float or array): absolute times in seconds.
            allow_end (bool): accept ``t == tK`` (segment K, alpha 1).

        Returns:
            tuple: ``(k, alpha)``, integer segment in [1, K] and fraction in
            [0, 1); knots hit alpha == 0 exactly.

        Raises:
            OutOfWindowError: any time outside ``[t0, tK)``.

        """
        scalar = np.ndim(t) == 0
        t = np.atleast_1d(np.asarray(t, dtype=np.float64))
        k, alpha = self.locate(t, allow_end=allow_end)
        bad = (k < 1) | (k > self.nsegments)
        if np.any(bad):
            raise OutOfWindowError("time {} outside window [{}, {})".format(
                t[bad][0], self.t0, self.tK))
        if scalar:
            return int(k[0]), float(alpha[0])
        return k, alpha

    def segment_twist(self, k):
        """Twist ``tau_k = T_k (-) T_{k-1}`` of segment k in [1, K]."""
        if k < 1 or k > self.nsegments:
            raise OutOfWindowError("segment {} outside [1, {}]".format(k, self.nsegments))
        return log(self._controls[k - 1].inverse().compose(self._controls[k]))

    def segment_twists(self):
        """(K, 6) array of all segment twists."""
        return np.array([self.segment_twist(k) for k in range(1, len(self))])

    def velocity(self, k):
        """Generalized velocity of segment k, ``tau_k / dt``."""
        return self.segment_twist(k) / self._dt

    def pose_at(self, t, allow_end=False):
        """Interpolated pose at a single time.

        Raises:
            OutOfWindowError: ``t`` outside ``[t0, tK)``.
        """
        k, alpha = self.segment_of(t, allow_end=allow_end)
        if alpha == 0.0:
            return self._controls[k - 1]
        if alpha == 1.0:
            return self._controls[k]
        return oplus(self._controls[k - 1], alpha * self.segment_twist(k))

    def poses_at(self, t, allow_end=False):
        """Interpolated poses for an array of times.

        Returns:
            tuple: ``(R, p, k, alpha)``: rotations (N, 3, 3), translations
            (N, 3), segment indices and fractions.

        """
        k, alpha = self.segment_of(np.atleast_1d(t), allow_end=allow_end)
        R, p = self.interpolate(k, alpha)
        return R, p, k, alpha

    def interpolate(self, k, alpha):
        """Batched ``T_{k-1} (+) (alpha * tau_k)``.

        Args:
            k (array): (N,) segment indices in [1, K].
            alpha (array): (N,) fractions in [0, 1].

        Returns:
            tuple: rotations (N, 3, 3) and translations (N, 3).

        """
        k = np.asarray(k, dtype=np.int64).reshape(-1)
        alpha = np.asarray(alpha, dtype=np.float64).reshape(-1)
        if len(k) == 0:
            return np.zeros((0, 3, 3)), np.zeros((0, 3))
        twists = self.segment_twists()
        Rs = np.array([T.rotation for T in self._controls])
        ts = np.array([T.translation for T in self._controls])
        dR, dt = se3_exp(alpha[:, None] * twists[k - 1])
        R0 = Rs[k - 1]
        R = R0 @ dR
        p = np.einsum('nij,nj->ni', R0, dt) + ts[k - 1]
        return R, p

    def advance(self, predicted):
        """Slide the window by one segment.

        Drops ``T_0``, shifts the first knot by dt and appends ``predicted``
        as the new final control.
        """
        controls = list(self._controls[1:]) + [predicted]
        return Trajectory(self._origin, self._dt, controls, start=self._start + 1)

    def predict_next(self):
        """Constant-velocity extrapolation ``T_K (+) tau_K``."""
        return oplus(self._controls[-1], self.segment_twist(self.nsegments))

    def retract(self, xi):
        """Apply a stacked increment ``xi`` (6(K+1),) by right-oplus.

        Rotations are renormalized after the update.
        """
        xi = np.asarray(xi, dtype=np.float64).reshape(len(self), 6)
        controls = [oplus(T, x).renormalized() for T, x in zip(self._controls, xi)]
        return self.with_controls(controls)

    def __repr__(self):
        return 'Trajectory(t0={:.6f}, dt={}, K={})'.format(self.t0, self._dt, self.nsegments)


def constant(t0, dt, nsegments, pose=None):
    """Trajectory with every control equal to ``pose`` (identity by default)."""
    if pose is None:
        pose = Pose.identity()
    return Trajectory(t0, dt, [pose] * (nsegments + 1))


def constant_velocity(t0, dt, first, tau, nsegments):
    """Trajectory whose controls advance by the same twist every segment."""
    controls = [first]
    step = exp(tau)
    for _ in range(nsegments):
        controls.append(controls[-1].compose(step))
    return Trajectory(t0, dt, controls)
