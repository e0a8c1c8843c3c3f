"""
ctlo.solver
===========

Sliding-window Gauss-Newton over the K+1 control poses of a window.

The state is small (6(K+1) unknowns), so the normal equations are dense
and solved by Cholesky.  Levenberg damping ``lambda * diag(H)`` is added
to each step; a step is accepted only if the total energy does not
increase.  Correspondences are refreshed once per outer iteration and
kept fixed for the inner steps.

After a window has converged, :func:`marginalize` folds every term that
touches ``T_0`` into a quadratic prior on ``T_1`` by Schur complement.
"""

from __future__ import absolute_import, division, print_function

import numpy as np
import scipy.linalg
from astropy.table import Table

from . import constants
from .liegroup import AngleAtPiError
from .factors import (GeometricFactorSet, MarginalizationPrior, kinematic_eval,
                      prior_eval, robust_cost, robust_weights)
from .winwarning import WindowWarningMask


class ConvergenceError(RuntimeError):
    """The damped normal equations could not be solved."""
    pass


def _option(config, name, default):
    if config is None:
        return default
    return getattr(config, name, default)


class WindowPoints(object):
    """Measurements of one window, already in the body frame.

    Args:
        t (array): (N,) timestamps in seconds.
        points (array): (N, 3) body-frame points ``T^B_L p``.
        sensor (array): (N,) sensor indices.
        segment (array): optional fixed segment indices.
        alpha (array): optional fixed interpolation fractions; used by the
            deskewed mode where every scan sits on a knot.

    """
    def __init__(self, t, points, sensor=None, segment=None, alpha=None):
        self.t = np.asarray(t, dtype=np.float64).reshape(-1)
        self.points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        if sensor is None:
            sensor = np.zeros(len(self.t), dtype=np.int64)
        self.sensor = np.asarray(sensor, dtype=np.int64).reshape(-1)
        self.segment = None if segment is None else np.asarray(segment, dtype=np.int64)
        self.alpha = None if alpha is None else np.asarray(alpha, dtype=np.float64)

    def __len__(self):
        return len(self.t)

    def locate(self, trajectory):
        """Segment indices and fractions of every point."""
        if self.segment is not None:
            return self.segment, self.alpha
        return trajectory.segment_of(self.t)

    def world(self, trajectory):
        """World-frame positions through the interpolated poses."""
        k, alpha = self.locate(trajectory)
        R, p = trajectory.interpolate(k, alpha)
        return np.einsum('nij,nj->ni', R, self.points) + p


class WindowState(object):
    """Everything the optimizer needs for one window.

    Args:
        trajectory (Trajectory): current control poses.
        prior (MarginalizationPrior): prior on the leading controls, or None.
        kinematic (list): :class:`~ctlo.factors.KinematicFactor` objects.
        geometric (GeometricFactorSet): current correspondences.
        points (WindowPoints): raw measurements for re-association.
        flags (int): :class:`~ctlo.winwarning.WindowWarningMask` bits.

    """
    def __init__(self, trajectory, prior=None, kinematic=None, geometric=None,
                 points=None, flags=0, iterations=0):
        self.trajectory = trajectory
        self.prior = prior
        self.kinematic = list() if kinematic is None else list(kinematic)
        self.geometric = geometric
        self.points = points
        self.flags = int(flags)
        self.iterations = int(iterations)

    def replace(self, **kwargs):
        args = dict(trajectory=self.trajectory, prior=self.prior,
                    kinematic=self.kinematic, geometric=self.geometric,
                    points=self.points, flags=self.flags, iterations=self.iterations)
        args.update(kwargs)
        return WindowState(**args)

    @property
    def dim(self):
        return 6 * len(self.trajectory)


class NormalEquations(object):
    """Linearized window ``H xi = -b``.

    Attributes:
        H (array): 6(K+1) square symmetric matrix.
        b (array): gradient of the energy.
        energy (dict): ``E_reg``, ``E_kine``, ``E_marg`` and ``total``.
        counts (array): valid correspondences per segment.
        flags (int): warnings raised while assembling.
        state (WindowState): the state the system was built from.

    """
    def __init__(self, H, b, energy, counts, flags, state):
        self.H = H
        self.b = b
        self.energy = energy
        self.counts = counts
        self.flags = flags
        self.state = state


def associate(state, vmap, config=None):
    """Find a plane for every window point in the frozen map.

    Points are placed with the current trajectory; fits with too few
    neighbors, non-planar support or a nearest neighbor farther than
    ``max_correspondence`` are dropped.

    Returns:
        WindowState: copy with a fresh :class:`GeometricFactorSet`.

    """
    sigma_r = _option(config, 'sigma_r', constants.sigma_r)
    huber = _option(config, 'huber', constants.huber_threshold)
    pts = state.points
    if pts is None or len(pts) == 0:
        return state.replace(geometric=GeometricFactorSet.empty(1.0/sigma_r**2, huber))

    neighbors = _option(config, 'neighbors', constants.plane_neighbors)
    planarity = _option(config, 'planarity', constants.max_planarity)
    maxdist = _option(config, 'max_correspondence', None)
    if maxdist is None:
        maxdist = constants.correspondence_voxels * vmap.voxel_size

    k, alpha = pts.locate(state.trajectory)
    world = pts.world(state.trajectory)
    valid, normals, anchors, _ = vmap.fit_planes(world, neighbors, planarity)
    dist = np.sqrt(np.sum((world - np.where(valid[:, None], anchors, 0.0))**2, axis=1))
    valid &= dist <= maxdist

    geo = GeometricFactorSet(pts.points[valid], k[valid], alpha[valid], normals[valid],
                             anchors[valid], 1.0/sigma_r**2, huber, pts.sensor[valid])
    return state.replace(geometric=geo)


def energy_terms(state):
    """Energy breakdown of a state with fixed correspondences.

    Returns:
        dict: ``E_reg``, ``E_kine``, ``E_marg`` and their sum ``total``.

    """
    traj = state.trajectory
    E_reg = 0.0
    if state.geometric is not None and len(state.geometric) > 0:
        E_reg = float(state.geometric.energy(traj))

    E_kine = 0.0
    controls = traj.controls
    for f in state.kinematic:
        r, _ = kinematic_eval(f, *[controls[i] for i in f.indices])
        E_kine += 0.5 * f.weight * r.dot(r)

    E_marg = 0.0
    if state.prior is not None:
        E_marg, _, _ = prior_eval(state.prior, controls[:state.prior.npose])
        E_marg = float(E_marg)

    return dict(E_reg=E_reg, E_kine=E_kine, E_marg=E_marg,
                total=E_reg + E_kine + E_marg)


def total_energy(state):
    return energy_terms(state)['total']


def _add_geometric(H, b, geo, traj, segments=None):
    """Scatter-add the geometric blocks, returns the robust energy."""
    e, J_prev, J_next = geo.evaluate(traj)
    if len(e) == 0:
        return 0.0
    w = geo.weight * robust_weights(e, geo.huber)
    if segments is None:
        segments = range(1, traj.nsegments + 1)
    for k in segments:
        m = geo.segment == k
        if not np.any(m):
            continue
        J = np.hstack([J_prev[m], J_next[m]])
        s = slice(6*(k - 1), 6*(k + 1))
        H[s, s] += J.T.dot(w[m, None] * J)
        b[s] += J.T.dot(w[m] * e[m])
    return float(geo.weight * np.sum(robust_cost(e, geo.huber)))


def _add_kinematic(H, b, state, factors):
    controls = state.trajectory.controls
    energy = 0.0
    for f in factors:
        r, J = kinematic_eval(f, *[controls[i] for i in f.indices])
        for i, Ji in zip(f.indices, J):
            si = slice(6*i, 6*i + 6)
            b[si] += f.weight * Ji.T.dot(r)
            for j, Jj in zip(f.indices, J):
                H[si, 6*j:6*j + 6] += f.weight * Ji.T.dot(Jj)
        energy += 0.5 * f.weight * r.dot(r)
    return energy


def _add_prior(H, b, prior, controls):
    energy, g, Hp = prior_eval(prior, controls[:prior.npose])
    m = 6 * prior.npose
    H[:m, :m] += Hp
    b[:m] += g
    return float(energy)


def assemble(state, vmap=None, config=None):
    """Build the normal equations of a window.

    Args:
        state (WindowState): the window.
        vmap (VoxelMap): if given, correspondences are refreshed first.
        config (OdometryConfig): solver options, defaults if None.

    Returns:
        NormalEquations: ``H``, ``b``, energies and per-segment counts.

    """
    if vmap is not None:
        state = associate(state, vmap, config)

    traj = state.trajectory
    K = traj.nsegments
    n = 6 * (K + 1)
    H = np.zeros((n, n))
    b = np.zeros(n)

    E_reg = 0.0
    counts = np.zeros(K, dtype=np.int64)
    geo = state.geometric
    if geo is not None and len(geo) > 0:
        E_reg = _add_geometric(H, b, geo, traj)
        counts = geo.counts(K)
    E_kine = _add_kinematic(H, b, state, state.kinematic)
    E_marg = 0.0
    if state.prior is not None:
        E_marg = _add_prior(H, b, state.prior, traj.controls)

    H = 0.5 * (H + H.T)

    flags = 0
    if state.points is not None and len(state.points) > 0:
        min_corr = _option(config, 'min_correspondences', constants.min_correspondences)
        if np.any(counts < min_corr):
            flags |= WindowWarningMask.UNDERCONSTRAINED
        if np.sum(counts) == 0:
            flags |= WindowWarningMask.NO_CORRESPONDENCES

    energy = dict(E_reg=E_reg, E_kine=E_kine, E_marg=E_marg,
                  total=E_reg + E_kine + E_marg)
    return NormalEquations(H, b, energy, counts, flags, state)


def step(eqs, state=None, damping=constants.damping_init,
         max_retries=constants.max_damping_retries):
    """One damped Gauss-Newton step.

    Solves ``(H + damping * diag(H)) xi = -b``, applies ``xi`` to every
    control by right-oplus and keeps the result if the energy did not
    increase; otherwise the damping grows by 10 and the step is retried.

    Args:
        eqs (NormalEquations): linearized window.
        state (WindowState): state to update, ``eqs.state`` if None.
        damping (float): current Levenberg damping.
        max_retries (int): number of damping increases before giving up.

    Returns:
        tuple: ``(state, increment_norm, damping, accepted)``.

    Raises:
        ConvergenceError: the damped system could never be factorized.

    """
    if state is None:
        state = eqs.state
    if not np.any(eqs.b):
        return state, 0.0, damping, True

    H = eqs.H
    #- no floor: a control that no factor touches keeps a zero row and fails to factorize
    D = np.diag(H).copy()
    E0 = eqs.energy['total']
    factorized = False
    for _ in range(max_retries + 1):
        try:
            cho = scipy.linalg.cho_factor(H + damping * np.diag(D))
        except np.linalg.LinAlgError:
            damping = max(damping, constants.damping_init) * constants.damping_up
            continue
        factorized = True
        xi = -scipy.linalg.cho_solve(cho, eqs.b)
        if np.all(np.isfinite(xi)):
            try:
                trial = state.replace(trajectory=state.trajectory.retract(xi))
                E1 = total_energy(trial)
            except AngleAtPiError:
                E1 = np.inf
            if np.isfinite(E1) and E1 <= E0 + 1e-12 * abs(E0):
                return trial, float(np.linalg.norm(xi)), damping / constants.damping_down, True
        damping = max(damping, constants.damping_init) * constants.damping_up

    if not factorized:
        raise ConvergenceError("normal equations singular up to damping {:.3g}".format(damping))
    return state, 0.0, damping, False


def optimize(state, vmap=None, config=None, diagnostics=None, damping=None):
    """Minimize the window energy.

    The outer loop re-associates points with the map, the inner loop runs
    Gauss-Newton steps on fixed correspondences.  The run stops when the
    first step after a re-association is below ``tolerance`` or when the
    iteration caps are reached (``MAXITER`` flag).

    Args:
        state (WindowState): initial window.
        vmap (VoxelMap): frozen map, None to keep the current correspondences.
        config (OdometryConfig): solver options, defaults if None.
        diagnostics (list): if given, one dict per step is appended.
        damping (float): initial damping, ``config.damping`` if None.

    Returns:
        WindowState: the converged window with updated ``flags``.

    Raises:
        ConvergenceError: the system could not be solved or the result is
            not finite.

    """
    max_outer = _option(config, 'max_outer', constants.max_outer)
    max_inner = _option(config, 'max_inner', constants.max_inner)
    tol = _option(config, 'tolerance', constants.tolerance)
    if damping is None:
        damping = _option(config, 'damping', constants.damping_init)

    flags = state.flags
    converged = False
    iterations = state.iterations
    for outer in range(max_outer):
        if vmap is not None:
            state = associate(state, vmap, config)
        for inner in range(max_inner):
            eqs = assemble(state, config=config)
            if inner == 0:
                flags |= eqs.flags
            state, norm, damping, accepted = step(eqs, state, damping)
            iterations += 1
            if diagnostics is not None:
                diagnostics.append(dict(iteration=iterations, outer=outer,
                                        E_reg=eqs.energy['E_reg'],
                                        E_kine=eqs.energy['E_kine'],
                                        E_marg=eqs.energy['E_marg'],
                                        increment=norm, damping=damping,
                                        accepted=accepted))
            if not accepted or norm < tol:
                break
        if not accepted:
            flags |= WindowWarningMask.NO_DECREASE
        if (inner == 0 or vmap is None) and (norm < tol or not accepted):
            converged = True
            break

    if not converged:
        flags |= WindowWarningMask.MAXITER

    for T in state.trajectory.controls:
        if not (np.all(np.isfinite(T.rotation)) and np.all(np.isfinite(T.translation))):
            raise ConvergenceError("non-finite control pose after optimization")

    return state.replace(flags=flags, iterations=iterations)


def schur_complement(H, b, nmarg, regularization=constants.marginal_regularization):
    """Eliminate the first ``nmarg`` variables of ``H x = -b``.

    Args:
        H (array): symmetric system matrix.
        b (array): right-hand side gradient.
        nmarg (int): number of leading variables to remove.
        regularization (float): added to the diagonal of the removed block
            when it cannot be factorized.

    Returns:
        tuple: ``(H_m, b_m, regularized)``.

    """
    H = np.asarray(H, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    H00 = H[:nmarg, :nmarg]
    H01 = H[:nmarg, nmarg:]
    H11 = H[nmarg:, nmarg:]
    regularized = False
    try:
        cho = scipy.linalg.cho_factor(H00)
    except np.linalg.LinAlgError:
        cho = scipy.linalg.cho_factor(H00 + regularization * np.eye(nmarg))
        regularized = True
    X = scipy.linalg.cho_solve(cho, np.column_stack([H01, b[:nmarg]]))
    H_m = H11 - H01.T.dot(X[:, :-1])
    b_m = b[nmarg:] - H01.T.dot(X[:, -1])
    return 0.5 * (H_m + H_m.T), b_m, regularized


def marginalize(state):
    """Prior on ``T_1`` from every term that touches ``T_0``.

    Builds the joint quadratic over ``(T_0, T_1)`` from the segment-1
    geometric factors, smoothness factors confined to the two poses and the
    existing prior, linearized at the converged values, then removes
    ``T_0``.  The live smoothness factor of segment 2 is not included; the
    next window carries it as its bridge factor against the converged
    ``tau_1``.

    Args:
        state (WindowState): converged window.

    Returns:
        tuple: ``(prior, flags)``, the new :class:`MarginalizationPrior`
        with linearization point ``T_1`` and warning bits.

    """
    traj = state.trajectory
    controls = traj.controls
    H = np.zeros((12, 12))
    b = np.zeros(12)

    geo = state.geometric
    if geo is not None and len(geo) > 0:
        first = geo.subset(geo.segment == 1)
        if len(first) > 0:
            _add_geometric(H, b, first, traj, segments=[1])

    bridge = [f for f in state.kinematic if max(f.indices) <= 1]
    _add_kinematic(H, b, state, bridge)

    if state.prior is not None:
        if state.prior.npose > 2:
            raise ValueError("cannot marginalize a prior over {} poses".format(state.prior.npose))
        _add_prior(H, b, state.prior, controls)

    H_m, b_m, regularized = schur_complement(0.5 * (H + H.T), b, 6)
    flags = WindowWarningMask.SINGULAR_MARGINAL if regularized else 0
    return MarginalizationPrior(H_m, b_m, [controls[1]]), flags


def diagnostics_table(rows):
    """Per-step diagnostics as an astropy Table."""
    names = ('window', 'iteration', 'outer', 'E_reg', 'E_kine', 'E_marg',
             'increment', 'damping', 'accepted')
    table = Table(names=names, dtype=('i4', 'i4', 'i4', 'f8', 'f8', 'f8', 'f8', 'f8', 'bool'))
    for row in rows:
        table.add_row([row.get(name, -1) for name in names])
    return table
