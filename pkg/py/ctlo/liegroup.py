"""
ctlo.liegroup
=============

Rotation and rigid-body groups SO(3) and SE(3).

Twists are 6-vectors ordered translation first, ``tau = (rho, theta)``,
and every perturbation is applied on the right::

    T (+) tau = T * Exp(tau)
    T1 (-) T2 = Log(T2^-1 * T1)

The ``*_batch`` style functions (``so3_exp``, ``se3_right_jacobian``, ...)
accept arrays with arbitrary leading dimensions so that the registration
code can evaluate all points of a window at once.
"""

from __future__ import absolute_import, division, print_function

import numpy as np
from scipy.spatial.transform import Rotation

from . import constants


class AngleAtPiError(ValueError):
    """Raised when the logarithm of a rotation by pi is requested."""
    pass


def skew(v):
    """Cross-product matrices of (..., 3) vectors.

    Args:
        v (array): (..., 3) vectors.

    Returns:
        array: (..., 3, 3) skew-symmetric matrices with ``skew(a) @ b = a x b``.

    """
    v = np.asarray(v, dtype=np.float64)
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1] = -v[..., 2]
    out[..., 0, 2] = v[..., 1]
    out[..., 1, 0] = v[..., 2]
    out[..., 1, 2] = -v[..., 0]
    out[..., 2, 0] = -v[..., 1]
    out[..., 2, 1] = v[..., 0]
    return out


def _angle(theta):
    return np.sqrt(np.sum(theta * theta, axis=-1))


def _coefficients(a):
    """Scalar coefficients shared by exp and the Jacobians.

    Returns ``(A, B, C)`` with ``A = sin(a)/a``, ``B = (1 - cos a)/a^2`` and
    ``C = (a - sin a)/a^3``, each broadcast over ``a``.
    """
    a = np.asarray(a, dtype=np.float64)
    a2 = a * a
    tiny = a < constants.small_angle
    series = a < constants.series_angle
    safe = np.where(tiny, 1.0, a)

    A = np.where(tiny, 1.0 - a2 / 6.0, np.sin(safe) / safe)
    half = np.sin(0.5 * safe) / safe
    B = np.where(tiny, 0.5 - a2 / 24.0, 2.0 * half * half)
    C_series = 1.0/6.0 - a2/120.0 + a2*a2/5040.0 - a2*a2*a2/362880.0
    C = np.where(series, C_series, (safe - np.sin(safe)) / safe**3)
    return A, B, C


def so3_exp(theta):
    """Rodrigues' formula.

    Args:
        theta (array): (..., 3) rotation vectors in radians.

    Returns:
        array: (..., 3, 3) rotation matrices.

    """
    theta = np.asarray(theta, dtype=np.float64)
    K = skew(theta)
    A, B, _ = _coefficients(_angle(theta))
    R = np.eye(3) + A[..., None, None] * K + B[..., None, None] * (K @ K)
    return R


def so3_left_jacobian(theta):
    """Left Jacobian of SO(3), ``Jl(theta) = Jr(-theta)``."""
    theta = np.asarray(theta, dtype=np.float64)
    K = skew(theta)
    _, B, C = _coefficients(_angle(theta))
    return np.eye(3) + B[..., None, None] * K + C[..., None, None] * (K @ K)


def so3_left_jacobian_inverse(theta):
    """Inverse of :func:`so3_left_jacobian`."""
    theta = np.asarray(theta, dtype=np.float64)
    K = skew(theta)
    a = _angle(theta)
    a2 = a * a
    series = a < constants.series_angle
    safe = np.where(series, 1.0, a)
    D_series = 1.0/12.0 + a2/720.0 + a2*a2/30240.0 + a2*a2*a2/1209600.0
    D = np.where(series, D_series,
                 1.0/safe**2 - 1.0/(2.0*safe*np.tan(0.5*safe)))
    return np.eye(3) - 0.5 * K + D[..., None, None] * (K @ K)


def so3_log(R):
    """Rotation vector of a single rotation matrix.

    Args:
        R (array): 3x3 rotation matrix.

    Returns:
        array: rotation vector with angle in [0, pi).

    Raises:
        AngleAtPiError: the rotation angle is pi.

    """
    R = np.asarray(R, dtype=np.float64)
    c = np.clip(0.5 * (np.trace(R) - 1.0), -1.0, 1.0)
    v = 0.5 * np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    s = np.sqrt(v.dot(v))
    a = np.arctan2(s, c)

    if np.pi - a < constants.pi_tolerance:
        raise AngleAtPiError("rotation angle is pi; logarithm is not unique")

    if np.pi - a < constants.near_pi_angle:
        #- axis from the symmetric part, sign from the antisymmetric part
        B = 0.5 * (R + R.T) - c * np.eye(3)
        i = np.argmax(np.diag(B))
        u = B[:, i] / np.sqrt(B[i, i] * (1.0 - c))
        if u.dot(v) < 0:
            u = -u
        return a * u

    if s < 1e-300:
        return v
    return v * (a / s)


def _q_block(rho, theta):
    """Coupling block of the SE(3) left Jacobian, broadcast over stacks."""
    a = _angle(theta)
    a2 = a * a
    series = a < constants.series_angle
    safe = np.where(series, 1.0, a)
    _, B, C = _coefficients(a)
    c2 = np.where(series,
                  -1.0/24.0 + a2/720.0 - a2*a2/40320.0 + a2*a2*a2/3628800.0,
                  (B - 0.5) / safe**2)
    c3 = np.where(series,
                  -1.0/120.0 + a2/5040.0 - a2*a2/362880.0 + a2*a2*a2/39916800.0,
                  (C - 1.0/6.0) / safe**2)
    c4 = -0.5 * (c2 - 3.0 * c3)

    P = skew(rho)
    W = skew(theta)
    WP = W @ P
    PW = P @ W
    WPW = WP @ W
    WWP = W @ WP
    PWW = PW @ W
    Q = (0.5 * P
         + C[..., None, None] * (WP + PW + WPW)
         - c2[..., None, None] * (WWP + PWW - 3.0 * WPW)
         + c4[..., None, None] * (WPW @ W + W @ WPW))
    return Q


def se3_left_jacobian(tau):
    """Left Jacobian of SE(3) for (..., 6) twists."""
    tau = np.asarray(tau, dtype=np.float64)
    rho, theta = tau[..., :3], tau[..., 3:]
    J = np.zeros(tau.shape[:-1] + (6, 6))
    Jl = so3_left_jacobian(theta)
    J[..., :3, :3] = Jl
    J[..., 3:, 3:] = Jl
    J[..., :3, 3:] = _q_block(rho, theta)
    return J


def se3_right_jacobian(tau):
    """Right Jacobian of SE(3), ``Jr(tau) = Jl(-tau)``."""
    return se3_left_jacobian(-np.asarray(tau, dtype=np.float64))


def se3_left_jacobian_inverse(tau):
    """Inverse of :func:`se3_left_jacobian` in closed form."""
    tau = np.asarray(tau, dtype=np.float64)
    rho, theta = tau[..., :3], tau[..., 3:]
    Jinv = so3_left_jacobian_inverse(theta)
    Q = _q_block(rho, theta)
    J = np.zeros(tau.shape[:-1] + (6, 6))
    J[..., :3, :3] = Jinv
    J[..., 3:, 3:] = Jinv
    J[..., :3, 3:] = -(Jinv @ Q @ Jinv)
    return J


def se3_right_jacobian_inverse(tau):
    """Inverse of :func:`se3_right_jacobian`."""
    return se3_left_jacobian_inverse(-np.asarray(tau, dtype=np.float64))


def se3_exp(tau):
    """Exponential map for stacks of twists.

    Args:
        tau (array): (..., 6) twists.

    Returns:
        tuple: ``(R, t)`` with shapes (..., 3, 3) and (..., 3).

    """
    tau = np.asarray(tau, dtype=np.float64)
    rho, theta = tau[..., :3], tau[..., 3:]
    R = so3_exp(theta)
    t = np.einsum('...ij,...j->...i', so3_left_jacobian(theta), rho)
    return R, t


def renormalize(R):
    """Nearest orthonormal matrix with positive determinant."""
    U, _, Vt = np.linalg.svd(R)
    D = np.eye(3)
    D[2, 2] = np.sign(np.linalg.det(U @ Vt))
    return U @ D @ Vt


class Pose(object):
    """Rigid transform ``p -> R p + t``.

    Pose values are immutable; every operation returns a new Pose.

    Args:
        rotation (array): 3x3 rotation matrix, identity if None.
        translation (array): 3-vector in meters, zero if None.

    """
    def __init__(self, rotation=None, translation=None):
        if rotation is None:
            R = np.eye(3)
        else:
            R = np.array(rotation, dtype=np.float64).reshape(3, 3)
        if translation is None:
            t = np.zeros(3)
        else:
            t = np.array(translation, dtype=np.float64).reshape(3)
        R.flags.writeable = False
        t.flags.writeable = False
        self._R = R
        self._t = t

    @classmethod
    def identity(cls):
        return cls()

    @classmethod
    def from_matrix(cls, M):
        """Pose from a 4x4 homogeneous matrix."""
        M = np.asarray(M, dtype=np.float64)
        return cls(M[:3, :3], M[:3, 3])

    @classmethod
    def from_quaternion(cls, quat, translation=None):
        """Pose from a scalar-last quaternion ``(qx, qy, qz, qw)``."""
        return cls(Rotation.from_quat(quat).as_matrix(), translation)

    @property
    def rotation(self):
        return self._R

    @property
    def translation(self):
        return self._t

    def matrix(self):
        M = np.eye(4)
        M[:3, :3] = self._R
        M[:3, 3] = self._t
        return M

    def quaternion(self):
        """Scalar-last unit quaternion ``(qx, qy, qz, qw)`` with qw >= 0."""
        q = Rotation.from_matrix(self._R).as_quat()
        if q[3] < 0:
            q = -q
        return q

    def inverse(self):
        Rt = self._R.T
        return Pose(Rt, -Rt.dot(self._t))

    def compose(self, other):
        return Pose(self._R.dot(other._R), self._R.dot(other._t) + self._t)

    def __mul__(self, other):
        return self.compose(other)

    def act(self, p):
        """Transform points given as a 3-vector or an (N, 3) array."""
        p = np.asarray(p, dtype=np.float64)
        return p.dot(self._R.T) + self._t

    def adjoint(self):
        """6x6 adjoint for (rho, theta) ordered twists."""
        A = np.zeros((6, 6))
        A[:3, :3] = self._R
        A[3:, 3:] = self._R
        A[:3, 3:] = skew(self._t).dot(self._R)
        return A

    def renormalized(self):
        return Pose(renormalize(self._R), self._t)

    def allclose(self, other, atol=1e-9):
        return (np.allclose(self._R, other._R, rtol=0, atol=atol) and
                np.allclose(self._t, other._t, rtol=0, atol=atol))

    def __repr__(self):
        return 'Pose(t={}, q={})'.format(np.array2string(self._t, precision=6),
                                         np.array2string(self.quaternion(), precision=6))


def exp(tau):
    """SE(3) exponential of a single twist ``(rho, theta)``."""
    R, t = se3_exp(np.asarray(tau, dtype=np.float64).reshape(6))
    return Pose(R, t)


def log(T):
    """SE(3) logarithm on the principal branch.

    Raises:
        AngleAtPiError: the rotation angle of ``T`` is pi.
    """
    theta = so3_log(T.rotation)
    rho = so3_left_jacobian_inverse(theta).dot(T.translation)
    return np.concatenate([rho, theta])


def oplus(T, tau):
    """``T * Exp(tau)``."""
    return T.compose(exp(tau))


def ominus(T1, T2):
    """``Log(T2^-1 * T1)``, so that ``oplus(T2, ominus(T1, T2)) == T1``."""
    return log(T2.inverse().compose(T1))


def act(T, p):
    return T.act(p)


def compose(T1, T2):
    return T1.compose(T2)


def jacobians(tau):
    """All four SE(3) Jacobians of a twist.

    Args:
        tau (array): 6-vector with rotation angle below pi.

    Returns:
        dict: 6x6 matrices under keys ``Jr``, ``Jl``, ``Jr_inv``, ``Jl_inv``.

    Raises:
        AngleAtPiError: the rotation angle is pi or larger.

    """
    tau = np.asarray(tau, dtype=np.float64).reshape(6)
    if np.pi - _angle(tau[3:]) < constants.pi_tolerance:
        raise AngleAtPiError("Jacobian inverses are singular at rotation angle pi")
    return dict(Jr=se3_right_jacobian(tau),
                Jl=se3_left_jacobian(tau),
                Jr_inv=se3_right_jacobian_inverse(tau),
                Jl_inv=se3_left_jacobian_inverse(tau))
