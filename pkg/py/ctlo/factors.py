"""
ctlo.factors
============

Residuals and analytic Jacobians of the three energy terms:

* geometric: point-to-plane distance of a point placed by the
  interpolated pose at its own timestamp,
* kinematic: difference of consecutive segment twists,
* marginalization prior: quadratic left over from older windows.

Every term enters the total energy as ``0.5 * w * e^2`` (``w = 1/sigma^2``)
so the normal equations are ``H = sum J^T w J`` and ``b = sum J^T w e``.
"""

from __future__ import absolute_import, division, print_function

import numpy as np

from . import constants
from .liegroup import (Pose, jacobians, ominus, oplus,
                       se3_right_jacobian, se3_right_jacobian_inverse,
                       se3_left_jacobian_inverse)
from .voxelmap import PlaneFit


class Measurement(object):
    """One LiDAR return.

    Args:
        p (array): point in the sensor frame, meters.
        t (float): absolute timestamp in seconds.
        sensor (int): index of the LiDAR in the rig.

    """
    def __init__(self, p, t, sensor=0):
        self.p = np.asarray(p, dtype=np.float64).reshape(3)
        self.t = float(t)
        self.sensor = int(sensor)

    def __repr__(self):
        return 'Measurement(t={:.6f}, sensor={}, p={})'.format(self.t, self.sensor, self.p)


class SensorRig(object):
    """Fixed extrinsics ``T^B_{L_j}`` of every LiDAR in the body frame.

    Args:
        extrinsics (list): one :class:`~ctlo.liegroup.Pose` per sensor;
            a single identity sensor if None.

    """
    def __init__(self, extrinsics=None):
        if extrinsics is None:
            extrinsics = [Pose.identity()]
        self._extrinsics = tuple(extrinsics)
        if len(self._extrinsics) == 0:
            raise ValueError("a sensor rig needs at least one sensor")

    @property
    def nsensors(self):
        return len(self._extrinsics)

    def extrinsic(self, j):
        if j < 0 or j >= len(self._extrinsics):
            raise ValueError("sensor index {} not in rig of {} sensors".format(
                j, len(self._extrinsics)))
        return self._extrinsics[j]

    def to_body(self, points, sensors):
        """Transform (N, 3) sensor-frame points to the body frame."""
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        sensors = np.asarray(sensors).reshape(-1)
        out = np.empty_like(points)
        for j in np.unique(sensors):
            ii = sensors == j
            out[ii] = self.extrinsic(int(j)).act(points[ii])
        return out


#-------------------------------------------------------------------------
#- robust loss

def robust_weights(e, threshold):
    """Huber IRLS weights; all ones when ``threshold`` is None or 0."""
    e = np.abs(np.asarray(e, dtype=np.float64))
    if not threshold:
        return np.ones_like(e)
    return np.where(e <= threshold, 1.0, threshold / np.maximum(e, threshold))


def robust_cost(e, threshold):
    """Huber cost per residual, ``0.5 e^2`` inside the threshold."""
    e = np.abs(np.asarray(e, dtype=np.float64))
    if not threshold:
        return 0.5 * e * e
    return np.where(e <= threshold, 0.5 * e * e, threshold * e - 0.5 * threshold**2)


#-------------------------------------------------------------------------
#- geometric term

class GeometricFactor(object):
    """Point-to-plane factor of a single measurement.

    Args:
        measurement (Measurement): the return.
        plane (PlaneFit): local plane around its world position.
        segment (int): segment index k in [1, K].
        alpha (float): interpolation fraction ``(t - t_{k-1}) / dt``.
        weight (float): ``1 / sigma_r^2``.

    """
    def __init__(self, measurement, plane, segment, alpha,
                 weight=1.0/constants.sigma_r**2):
        self.measurement = measurement
        self.plane = plane
        self.segment = int(segment)
        self.alpha = float(alpha)
        self.weight = float(weight)


def interpolation_jacobians(tau, alpha):
    """Right-perturbation Jacobians of ``T_{k-1} (+) (alpha * tau_k)``.

    Args:
        tau (array): (6,) or (N, 6) segment twists.
        alpha (float or array): interpolation fractions.

    Returns:
        tuple: ``(J_prev, J_next)``, each (6, 6) or (N, 6, 6).

    """
    tau = np.asarray(tau, dtype=np.float64)
    alpha = np.asarray(alpha, dtype=np.float64)[..., None]
    Jr_inv = se3_right_jacobian_inverse(tau)
    Jl_inv = se3_left_jacobian_inverse(tau)
    J_next = alpha[..., None] * (se3_right_jacobian(alpha * tau) @ Jr_inv)
    J_prev = (1.0 - alpha)[..., None] * (se3_right_jacobian((alpha - 1.0) * tau) @ Jl_inv)
    return J_prev, J_next


def geometric_eval(f, T_prev, T_next, rig):
    """Residual and Jacobians of one geometric factor.

    Args:
        f (GeometricFactor): the factor.
        T_prev (Pose): control ``T_{k-1}``.
        T_next (Pose): control ``T_k``.
        rig (SensorRig): extrinsics.

    Returns:
        tuple: ``(residual, J_prev, J_next)`` with 6-vector Jacobian rows.

    """
    alpha = f.alpha
    tau = ominus(T_next, T_prev)
    phi = oplus(T_prev, alpha * tau)
    pb = rig.extrinsic(f.measurement.sensor).act(f.measurement.p)
    n = f.plane.normal
    residual = n.dot(phi.act(pb) - f.plane.point)

    a = phi.rotation.T.dot(n)
    row = np.concatenate([a, np.cross(pb, a)])
    Jp, Jn = interpolation_jacobians(tau, alpha)
    J_prev = row.dot(Jp)
    J_next = row.dot(Jn)
    return residual, J_prev, J_next


class GeometricFactorSet(object):
    """All geometric factors of a window in array form.

    Args:
        points (array): (N, 3) body-frame points ``T^B_L p``.
        segment (array): (N,) segment indices in [1, K].
        alpha (array): (N,) interpolation fractions.
        normals (array): (N, 3) plane normals.
        anchors (array): (N, 3) plane points ``q``.
        weight (float): ``1 / sigma_r^2``.
        huber (float): Huber threshold in meters, None for plain least squares.
        sensor (array): (N,) sensor index of each point, informational.

    """
    def __init__(self, points, segment, alpha, normals, anchors,
                 weight=1.0/constants.sigma_r**2, huber=None, sensor=None):
        self.points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        self.segment = np.asarray(segment, dtype=np.int64).reshape(-1)
        self.alpha = np.asarray(alpha, dtype=np.float64).reshape(-1)
        self.normals = np.asarray(normals, dtype=np.float64).reshape(-1, 3)
        self.anchors = np.asarray(anchors, dtype=np.float64).reshape(-1, 3)
        self.weight = float(weight)
        self.huber = huber
        if sensor is None:
            sensor = np.zeros(len(self.points), dtype=np.int64)
        self.sensor = np.asarray(sensor).reshape(-1)
        n = len(self.points)
        for name in ('segment', 'alpha', 'normals', 'anchors', 'sensor'):
            if len(getattr(self, name)) != n:
                raise ValueError("{} has {} rows, expected {}".format(
                    name, len(getattr(self, name)), n))

    def __len__(self):
        return len(self.points)

    @classmethod
    def empty(cls, weight=1.0/constants.sigma_r**2, huber=None):
        z3 = np.zeros((0, 3))
        return cls(z3, np.zeros(0, dtype=np.int64), np.zeros(0), z3, z3, weight, huber)

    def subset(self, mask):
        return GeometricFactorSet(self.points[mask], self.segment[mask], self.alpha[mask],
                                  self.normals[mask], self.anchors[mask], self.weight,
                                  self.huber, self.sensor[mask])

    def counts(self, nsegments):
        """Number of factors per segment, index 0 is segment 1."""
        return np.bincount(self.segment - 1, minlength=nsegments)[:nsegments]

    def factor(self, i):
        """The i-th factor as a :class:`GeometricFactor` (body-frame point)."""
        m = Measurement(self.points[i], np.nan, 0)
        return GeometricFactor(m, PlaneFit(self.normals[i], self.anchors[i], 0.0),
                               self.segment[i], self.alpha[i], self.weight)

    def evaluate(self, trajectory, jacobians=True):
        """Residuals and Jacobian rows against a trajectory.

        Returns:
            tuple: ``(e, J_prev, J_next)``; the Jacobians are (N, 6), or
            None when ``jacobians`` is False.

        """
        n = len(self.points)
        if n == 0:
            return np.zeros(0), np.zeros((0, 6)), np.zeros((0, 6))

        k = self.segment
        alpha = self.alpha
        R, p = trajectory.interpolate(k, alpha)
        x = np.einsum('nij,nj->ni', R, self.points) + p
        e = np.sum(self.normals * (x - self.anchors), axis=1)
        if not jacobians:
            return e, None, None

        a = np.einsum('nji,nj->ni', R, self.normals)
        row = np.concatenate([a, np.cross(self.points, a)], axis=1)
        twists = trajectory.segment_twists()
        Jp, Jn = interpolation_jacobians(twists[k - 1], alpha)
        J_prev = np.einsum('ni,nij->nj', row, Jp)
        J_next = np.einsum('ni,nij->nj', row, Jn)
        return e, J_prev, J_next

    def energy(self, trajectory):
        """Robust energy ``sum w rho(e)``."""
        e, _, _ = self.evaluate(trajectory, jacobians=False)
        return self.weight * np.sum(robust_cost(e, self.huber))


#-------------------------------------------------------------------------
#- kinematic term

class KinematicFactor(object):
    """Smoothness between consecutive segment twists.

    With ``pseudo_twist`` set, the factor compares ``tau_k`` with that
    frozen twist and touches ``(T_{k-1}, T_k)``; otherwise it compares
    ``tau_k`` with the live ``tau_{k-1}`` and touches
    ``(T_{k-2}, T_{k-1}, T_k)``.

    Args:
        k (int): segment index in [1, K].
        weight (float): ``1 / sigma_v^2`` applied to every component.
        pseudo_twist (array): frozen previous twist, or None.

    """
    def __init__(self, k, weight=1.0/constants.sigma_v**2, pseudo_twist=None):
        self.k = int(k)
        self.weight = float(weight)
        if pseudo_twist is not None:
            pseudo_twist = np.array(pseudo_twist, dtype=np.float64).reshape(6)
            pseudo_twist.flags.writeable = False
        elif self.k < 2:
            raise ValueError("a live smoothness factor needs k >= 2, got {}".format(k))
        self.pseudo_twist = pseudo_twist

    @property
    def frozen(self):
        return self.pseudo_twist is not None

    @property
    def indices(self):
        """Control indices touched by the factor."""
        if self.frozen:
            return (self.k - 1, self.k)
        return (self.k - 2, self.k - 1, self.k)

    def __repr__(self):
        return 'KinematicFactor(k={}, frozen={})'.format(self.k, self.frozen)


def kinematic_eval(f, T_a, T_b, T_c=None):
    """Residual and Jacobians of a smoothness factor.

    Args:
        f (KinematicFactor): the factor.
        T_a, T_b (Pose): ``T_{k-1}, T_k`` for a frozen factor, or
            ``T_{k-2}, T_{k-1}`` for a live one.
        T_c (Pose): ``T_k`` of a live factor.

    Returns:
        tuple: ``(residual, [J per pose])``, 6-vector and 6x6 blocks in
        the order the poses were given.

    Raises:
        AngleAtPiError: a relative rotation reaches pi.

    """
    if f.frozen:
        if T_c is not None:
            raise ValueError("frozen smoothness factor takes two poses")
        tau = ominus(T_b, T_a)
        J = jacobians(tau)
        return tau - f.pseudo_twist, [-J['Jl_inv'], J['Jr_inv']]

    if T_c is None:
        raise ValueError("live smoothness factor takes three poses")
    tau_prev = ominus(T_b, T_a)
    tau = ominus(T_c, T_b)
    Jp = jacobians(tau_prev)
    J = jacobians(tau)
    return tau - tau_prev, [Jp['Jl_inv'], -J['Jl_inv'] - Jp['Jr_inv'], J['Jr_inv']]


def kinematic_factors(nsegments, sigma_v=constants.sigma_v, references=None, live=True):
    """Smoothness factors of a window.

    Segment 1 bridges into the previous window through ``references[0]``;
    segments 2..K are live triples when ``live`` is True, else compared
    with ``references[k-1]``.

    Args:
        nsegments (int): K.
        sigma_v (float): smoothness noise; inf disables the term.
        references (array): (K, 6) previous-window twists; zeros if None.
        live (bool): in-window segments use live triples.

    Returns:
        list: :class:`KinematicFactor` objects.

    """
    if not np.isfinite(sigma_v):
        return list()
    weight = 1.0 / sigma_v**2
    if references is None:
        references = np.zeros((nsegments, 6))
    references = np.asarray(references, dtype=np.float64).reshape(-1, 6)
    factors = [KinematicFactor(1, weight, pseudo_twist=references[0])]
    for k in range(2, nsegments + 1):
        if live:
            factors.append(KinematicFactor(k, weight))
        else:
            factors.append(KinematicFactor(k, weight, pseudo_twist=references[k - 1]))
    return factors


#-------------------------------------------------------------------------
#- marginalization prior

class MarginalizationPrior(object):
    """Quadratic ``0.5 d^T H d + b^T d`` with ``d = s (-) s_lin``.

    Args:
        H (array): (6m, 6m) symmetric information matrix.
        b (array): (6m,) gradient at the linearization point.
        lin_point (list): m frozen poses, covering controls 0..m-1.

    """
    def __init__(self, H, b, lin_point):
        lin_point = list(lin_point)
        m = 6 * len(lin_point)
        H = np.array(H, dtype=np.float64)
        b = np.array(b, dtype=np.float64).reshape(-1)
        if H.shape != (m, m) or b.shape != (m,):
            raise ValueError("prior over {} poses needs H ({}, {}) and b ({},), got {} and {}".format(
                len(lin_point), m, m, m, H.shape, b.shape))
        H = 0.5 * (H + H.T)
        H.flags.writeable = False
        b.flags.writeable = False
        self.H = H
        self.b = b
        self.lin_point = tuple(lin_point)

    @property
    def npose(self):
        return len(self.lin_point)

    def min_eigenvalue(self):
        return np.linalg.eigvalsh(self.H)[0]


def prior_deviation(prior, current):
    if len(current) != prior.npose:
        raise ValueError("prior covers {} poses, got {}".format(prior.npose, len(current)))
    return np.concatenate([ominus(T, T0) for T, T0 in zip(current, prior.lin_point)])


def prior_eval(prior, current):
    """Energy, gradient and Hessian of the marginalization prior.

    The Jacobian of ``d`` with respect to the current poses is taken at the
    linearization point, where it is the identity, so the Hessian
    contribution is always ``H``.

    Args:
        prior (MarginalizationPrior): the prior.
        current (list): current values of the retained poses.

    Returns:
        tuple: ``(energy, gradient, hessian)``.

    """
    d = prior_deviation(prior, current)
    Hd = prior.H.dot(d)
    energy = 0.5 * d.dot(Hd) + prior.b.dot(d)
    return energy, Hd + prior.b, prior.H
