"""
ctlo.evaluate
=============

Trajectory metrics on TUM tables.

The absolute trajectory error aligns the estimate to the reference with
the best rigid transform (no scale) over matched positions.  The relative
translational error follows the KITTI odometry convention: for every start
pose and every segment length, the translation error of the relative
motion over that path length, divided by the length, in percent.
"""

from __future__ import absolute_import, division, print_function

import os

import numpy as np
from scipy.spatial.transform import Rotation

from . import constants
from .liegroup import Pose


class InsufficientOverlapError(ValueError):
    """Too few matched poses, or a trajectory too short, to evaluate."""
    pass


def associate(est_times, ref_times, tolerance=constants.association_tolerance):
    """Match every estimate time to the nearest reference time.

    Args:
        est_times (array): estimate timestamps.
        ref_times (array): sorted reference timestamps.
        tolerance (float): largest accepted time difference in seconds.

    Returns:
        tuple: index arrays ``(i_est, i_ref)`` of matched pairs.

    """
    est_times = np.asarray(est_times, dtype=np.float64)
    ref_times = np.asarray(ref_times, dtype=np.float64)
    if len(est_times) == 0 or len(ref_times) == 0:
        return np.zeros(0, dtype=int), np.zeros(0, dtype=int)
    j = np.clip(np.searchsorted(ref_times, est_times), 1, max(len(ref_times) - 1, 1))
    j0 = np.clip(j - 1, 0, len(ref_times) - 1)
    j1 = np.clip(j, 0, len(ref_times) - 1)
    d0 = np.abs(est_times - ref_times[j0])
    d1 = np.abs(est_times - ref_times[j1])
    nearest = np.where(d1 < d0, j1, j0)
    dist = np.minimum(d0, d1)
    ok = dist <= tolerance
    return np.flatnonzero(ok), nearest[ok]


def align(est, ref):
    """Rigid transform mapping points ``est`` onto ``ref`` in least squares.

    Args:
        est (array): (N, 3) positions.
        ref (array): (N, 3) positions.

    Returns:
        Pose: ``G`` minimizing ``sum |G est_i - ref_i|^2``.

    """
    est = np.asarray(est, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    mu_e = est.mean(axis=0)
    mu_r = ref.mean(axis=0)
    S = (ref - mu_r).T.dot(est - mu_e)
    U, _, Vt = np.linalg.svd(S)
    D = np.eye(3)
    D[2, 2] = np.sign(np.linalg.det(U.dot(Vt)))
    if D[2, 2] == 0:
        D[2, 2] = 1.0
    R = U.dot(D).dot(Vt)
    return Pose(R, mu_r - R.dot(mu_e))


def _positions(table):
    return np.column_stack([np.asarray(table[c], dtype=np.float64) for c in ('tx', 'ty', 'tz')])


def _rotations(table):
    quat = np.column_stack([np.asarray(table[c], dtype=np.float64)
                            for c in ('qx', 'qy', 'qz', 'qw')])
    return Rotation.from_quat(quat).as_matrix().reshape(-1, 3, 3)


def matched(est, ref, tolerance=constants.association_tolerance):
    """Aligned matched positions of two TUM tables.

    Returns:
        tuple: ``(times, est_aligned, ref_positions, G)``.

    Raises:
        InsufficientOverlapError: fewer than 3 matched pairs.

    """
    ie, ir = associate(est['t'], ref['t'], tolerance)
    if len(ie) < 3:
        raise InsufficientOverlapError("only {} matched poses within {} s; need at least 3".format(
            len(ie), tolerance))
    pe = _positions(est)[ie]
    pr = _positions(ref)[ir]
    G = align(pe, pr)
    return np.asarray(est['t'])[ie], G.act(pe), pr, G


def compute_ate(est, ref, tolerance=constants.association_tolerance):
    """Absolute trajectory error after rigid alignment.

    Args:
        est (Table): estimated TUM trajectory.
        ref (Table): reference TUM trajectory.
        tolerance (float): time association tolerance in seconds.

    Returns:
        dict: ``rmse``, ``mean``, ``max`` and ``n``, plus per-axis
        ``rmse_x``, ``rmse_y``, ``rmse_z`` in meters.

    Raises:
        InsufficientOverlapError: fewer than 3 matched pairs.

    """
    _, pe, pr, _ = matched(est, ref, tolerance)
    d = pe - pr
    err = np.sqrt(np.sum(d**2, axis=1))
    axis = np.sqrt(np.mean(d**2, axis=0))
    return dict(rmse=float(np.sqrt(np.mean(err**2))), mean=float(np.mean(err)),
                max=float(np.max(err)), n=len(err), rmse_x=float(axis[0]),
                rmse_y=float(axis[1]), rmse_z=float(axis[2]))


def compute_rte(est, ref, lengths=constants.rte_lengths,
                tolerance=constants.association_tolerance, step=1):
    """KITTI-style relative translational error.

    Path length is measured along the reference.  For each matched start
    pose i and length L, the end pose j is the first one at least L meters
    further along the path; the error of the relative motion
    ``(ref_i^-1 ref_j)^-1 (est_i^-1 est_j)`` contributes its translation
    norm divided by L.

    Args:
        est (Table): estimated TUM trajectory.
        ref (Table): reference TUM trajectory.
        lengths (tuple): segment lengths in meters.
        tolerance (float): time association tolerance in seconds.
        step (int): stride between start poses.

    Returns:
        dict: ``rte`` (percent, averaged over all segments), ``n`` segments,
        and ``rte_<L>`` per length for lengths that fit.

    Raises:
        InsufficientOverlapError: the matched path is shorter than the
            shortest segment length.

    """
    ie, ir = associate(est['t'], ref['t'], tolerance)
    if len(ie) < 2:
        raise InsufficientOverlapError("only {} matched poses; need at least 2".format(len(ie)))
    pe = _positions(est)[ie]
    Re = _rotations(est)[ie]
    pr = _positions(ref)[ir]
    Rr = _rotations(ref)[ir]

    dist = np.concatenate([[0.0], np.cumsum(np.sqrt(np.sum(np.diff(pr, axis=0)**2, axis=1)))])
    if dist[-1] < min(lengths):
        raise InsufficientOverlapError("path length {:.2f} m is shorter than {} m".format(
            dist[-1], min(lengths)))

    result = dict()
    errors = list()
    first = np.arange(0, len(dist), step)
    for L in lengths:
        j = np.searchsorted(dist, dist[first] + L)
        ok = j < len(dist)
        i = first[ok]
        j = j[ok]
        if len(i) == 0:
            continue
        #- relative motions expressed in the start frame
        dr = np.einsum('nji,nj->ni', Rr[i], pr[j] - pr[i])
        de = np.einsum('nji,nj->ni', Re[i], pe[j] - pe[i])
        #- translation of (ref rel)^-1 (est rel); its norm does not depend on the rotation
        err = np.sqrt(np.sum((de - dr)**2, axis=1)) / L
        errors.append(err)
        result['rte_{}'.format(L)] = 100.0 * float(np.mean(err))
    if len(errors) == 0:
        raise InsufficientOverlapError("no segment of length {} m fits the path".format(
            min(lengths)))
    errors = np.concatenate(errors)
    result['rte'] = 100.0 * float(np.mean(errors))
    result['n'] = len(errors)
    return result


def write_xy(filename, est, ref, tolerance=constants.association_tolerance):
    """Gnuplot-friendly dump of aligned positions.

    Columns are ``t x_est y_est z_est x_ref y_ref z_ref``.
    """
    t, pe, pr, _ = matched(est, ref, tolerance)
    filename = os.path.expandvars(filename)
    data = np.column_stack([t, pe, pr])
    np.savetxt(filename, data, fmt='%.9g', header='t x_est y_est z_est x_ref y_ref z_ref')
