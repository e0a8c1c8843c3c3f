"""
ctlo.voxelmap
=============

World-frame point map on a spatial hash of cubic voxels.

Each voxel keeps at most ``max_points`` points; points arriving at a full
voxel are discarded, so the oldest geometry is preserved.  Neighbor
searches look at the query voxel and its 6 face neighbors.

The map is written between optimizations (:meth:`VoxelMap.insert`,
:meth:`VoxelMap.cull`) and only read during them.  Reads go through a
packed snapshot (sorted voxel codes, offsets, points) that is rebuilt
lazily after every write and searched by a numba kernel.
"""

from __future__ import absolute_import, division, print_function

import os
import numpy as np
import numba

from . import constants
from .io import write_ply

#- offsets of the 7 searched voxels: center + 6 faces
NEIGHBOR_OFFSETS = np.array([[0, 0, 0],
                             [1, 0, 0], [-1, 0, 0],
                             [0, 1, 0], [0, -1, 0],
                             [0, 0, 1], [0, 0, -1]], dtype=np.int64)

_KEY_BITS = 21
_KEY_BIAS = 1 << (_KEY_BITS - 1)


def voxel_key(p, voxel_size):
    """Integer lattice coordinates ``floor(p / voxel_size)``.

    Args:
        p (array): 3-vector in meters.
        voxel_size (float): voxel edge length in meters.

    Returns:
        tuple: ``(ix, iy, iz)`` Python ints.

    """
    if not voxel_size > 0:
        raise ValueError("voxel size must be positive, got {}".format(voxel_size))
    ix, iy, iz = np.floor(np.asarray(p, dtype=np.float64) / voxel_size).astype(np.int64)
    return (int(ix), int(iy), int(iz))


def voxel_keys(points, voxel_size):
    """(N, 3) int64 lattice coordinates of (N, 3) points."""
    return np.floor(np.asarray(points, dtype=np.float64) / voxel_size).astype(np.int64)


def encode_keys(keys):
    """Pack (N, 3) lattice coordinates into sortable int64 codes."""
    keys = np.asarray(keys, dtype=np.int64) + _KEY_BIAS
    return (keys[..., 0] << (2 * _KEY_BITS)) | (keys[..., 1] << _KEY_BITS) | keys[..., 2]


@numba.jit(nopython=True)
def _encode(ix, iy, iz):
    return (((ix + _KEY_BIAS) << (2 * _KEY_BITS)) | ((iy + _KEY_BIAS) << _KEY_BITS)
            | (iz + _KEY_BIAS))


@numba.jit(nopython=True)
def _knn_search(queries, qkeys, codes, offsets, points, offs, out_idx, out_d2):
    '''
    Numba kernel for the 7-voxel nearest neighbor search.

    `codes` are sorted voxel codes, points of voxel c are
    points[offsets[c]:offsets[c+1]].  `out_idx` (N, n) and `out_d2` (N, n)
    are pre-filled with -1 and inf and receive the n nearest candidates in
    ascending distance; ties keep the earlier stored point.
    '''
    nq = queries.shape[0]
    n = out_idx.shape[1]
    ncodes = codes.shape[0]
    for i in range(nq):
        for o in range(offs.shape[0]):
            code = _encode(qkeys[i, 0] + offs[o, 0], qkeys[i, 1] + offs[o, 1],
                           qkeys[i, 2] + offs[o, 2])
            c = np.searchsorted(codes, code)
            if c >= ncodes or codes[c] != code:
                continue
            for j in range(offsets[c], offsets[c + 1]):
                dx = points[j, 0] - queries[i, 0]
                dy = points[j, 1] - queries[i, 1]
                dz = points[j, 2] - queries[i, 2]
                d2 = dx*dx + dy*dy + dz*dz
                if d2 >= out_d2[i, n - 1]:
                    continue
                #- insertion into the sorted top-n list
                m = n - 1
                while m > 0 and out_d2[i, m - 1] > d2:
                    out_d2[i, m] = out_d2[i, m - 1]
                    out_idx[i, m] = out_idx[i, m - 1]
                    m -= 1
                out_d2[i, m] = d2
                out_idx[i, m] = j


class PlaneFit(object):
    """Local plane around a query point.

    Args:
        normal (array): unit normal.
        point (array): nearest map neighbor ``q``.
        planarity (float): smallest over middle eigenvalue of the neighbor
            covariance.

    """
    def __init__(self, normal, point, planarity):
        self.normal = np.asarray(normal, dtype=np.float64)
        self.point = np.asarray(point, dtype=np.float64)
        self.planarity = float(planarity)

    def distance(self, p):
        """Signed point-to-plane distance."""
        return self.normal.dot(np.asarray(p) - self.point)

    def __repr__(self):
        return 'PlaneFit(normal={}, planarity={:.3g})'.format(self.normal, self.planarity)


def plane_eigen(neighbors):
    """Eigen-decomposition of neighbor covariances.

    Args:
        neighbors (array): (N, n, 3) neighbor points.

    Returns:
        tuple: ``(evals, evecs)``, ascending eigenvalues (N, 3) and
        eigenvectors (N, 3, 3) as columns.

    """
    centered = neighbors - neighbors.mean(axis=1, keepdims=True)
    cov = np.einsum('nki,nkj->nij', centered, centered) / neighbors.shape[1]
    return np.linalg.eigh(cov)


def planes_valid(evals, max_planarity=constants.max_planarity):
    """Planarity and degeneracy gates for ascending eigenvalue triples.

    Returns:
        tuple: ``(valid, planarity)`` boolean mask and eigenvalue ratios.

    """
    lmin, lmid, lmax = evals[:, 0], evals[:, 1], evals[:, 2]
    with np.errstate(divide='ignore', invalid='ignore'):
        planarity = np.where(lmid > 0, lmin / np.where(lmid > 0, lmid, 1.0), np.inf)
    valid = (lmax > 0) & (lmid >= constants.min_line_ratio * lmax) & (planarity <= max_planarity)
    return valid, planarity


class VoxelMap(object):
    """Spatial-hash point map.

    Args:
        voxel_size (float): voxel edge length in meters.
        max_points (int): capacity of each voxel.
        max_range (float): culling radius in meters.

    """
    def __init__(self, voxel_size, max_points=constants.max_points_per_voxel,
                 max_range=constants.max_range):
        if not voxel_size > 0:
            raise ValueError("voxel size must be positive, got {}".format(voxel_size))
        if max_points < 1:
            raise ValueError("voxel capacity must be at least 1")
        self._voxel_size = float(voxel_size)
        self._max_points = int(max_points)
        self._max_range = float(max_range)
        self._cells = dict()
        self._npoints = 0
        self._snapshot = None

    @property
    def voxel_size(self):
        return self._voxel_size

    @property
    def max_points(self):
        return self._max_points

    @property
    def max_range(self):
        return self._max_range

    @property
    def nvoxels(self):
        return len(self._cells)

    def __len__(self):
        return self._npoints

    def cell(self, key):
        """Points stored under a lattice key, (m, 3); empty if absent."""
        return self._cells.get(tuple(key), np.zeros((0, 3)))

    def keys(self):
        return list(self._cells.keys())

    def points(self):
        """All stored points as an (N, 3) array in insertion order of voxels."""
        if self._npoints == 0:
            return np.zeros((0, 3))
        return np.concatenate(list(self._cells.values()))

    def insert(self, points):
        """Add world-frame points.

        Points that land in a voxel already holding ``max_points`` points
        are dropped.

        Args:
            points (array): (N, 3) points in meters.

        Returns:
            int: number of points actually stored.

        """
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        if len(points) == 0:
            return 0

        keys = voxel_keys(points, self._voxel_size)
        ukeys, first, inverse = np.unique(keys, axis=0, return_index=True,
                                          return_inverse=True)
        inverse = inverse.ravel()
        order = np.argsort(inverse, kind='stable')
        bounds = np.searchsorted(inverse[order], np.arange(len(ukeys) + 1))

        stored = 0
        #- visit voxels in first-arrival order so dict order is deterministic
        for u in np.argsort(first, kind='stable'):
            key = tuple(int(x) for x in ukeys[u])
            old = self._cells.get(key)
            nold = 0 if old is None else len(old)
            room = self._max_points - nold
            if room <= 0:
                continue
            new = points[order[bounds[u]:bounds[u + 1]][:room]]
            self._cells[key] = new if old is None else np.concatenate([old, new])
            stored += len(new)

        self._npoints += stored
        if stored > 0:
            self._snapshot = None
        return stored

    def cull(self, center):
        """Remove voxels whose center is farther than ``max_range`` from
        ``center``.

        Returns:
            int: number of removed voxels.

        """
        center = np.asarray(center, dtype=np.float64)
        if len(self._cells) == 0:
            return 0
        keys = np.array(list(self._cells.keys()), dtype=np.int64)
        centers = (keys + 0.5) * self._voxel_size
        far = np.sum((centers - center)**2, axis=1) > self._max_range**2
        for key in keys[far]:
            cell = self._cells.pop(tuple(int(x) for x in key))
            self._npoints -= len(cell)
        nremoved = int(np.count_nonzero(far))
        if nremoved > 0:
            self._snapshot = None
        return nremoved

    def _packed(self):
        if self._snapshot is None:
            if len(self._cells) == 0:
                self._snapshot = (np.zeros(0, dtype=np.int64),
                                  np.zeros(1, dtype=np.int64), np.zeros((0, 3)))
            else:
                keys = np.array(list(self._cells.keys()), dtype=np.int64)
                codes = encode_keys(keys)
                order = np.argsort(codes)
                cells = list(self._cells.values())
                sizes = np.array([len(cells[i]) for i in order], dtype=np.int64)
                offsets = np.zeros(len(order) + 1, dtype=np.int64)
                offsets[1:] = np.cumsum(sizes)
                pts = np.ascontiguousarray(np.concatenate([cells[i] for i in order]))
                self._snapshot = (codes[order], offsets, pts)
        return self._snapshot

    def search(self, queries, n=constants.plane_neighbors):
        """Batched nearest neighbor search.

        Args:
            queries (array): (N, 3) world-frame points.
            n (int): neighbors per query.

        Returns:
            tuple: ``(points, count, d2)``: neighbors (N, n, 3) sorted by
            distance (unused slots are nan), number found per query and
            squared distances (inf where unused).

        """
        if n < 1:
            raise ValueError("n must be at least 1")
        queries = np.ascontiguousarray(np.asarray(queries, dtype=np.float64).reshape(-1, 3))
        nq = len(queries)
        idx = np.full((nq, n), -1, dtype=np.int64)
        d2 = np.full((nq, n), np.inf)
        codes, offsets, pts = self._packed()
        if nq > 0 and len(codes) > 0:
            qkeys = voxel_keys(queries, self._voxel_size)
            _knn_search(queries, qkeys, codes, offsets, pts, NEIGHBOR_OFFSETS, idx, d2)
        found = idx >= 0
        out = np.full((nq, n, 3), np.nan)
        out[found] = pts[idx[found]]
        return out, found.sum(axis=1), d2

    def nearest_neighbors(self, p, n=constants.plane_neighbors):
        """Up to n stored points nearest to p among the 7 searched voxels.

        Returns:
            array: (m, 3) points sorted by distance, m <= n.

        """
        out, count, _ = self.search(np.asarray(p).reshape(1, 3), n)
        return out[0, :count[0]]

    def fit_planes(self, queries, n=constants.plane_neighbors,
                   max_planarity=constants.max_planarity):
        """Batched local plane fits.

        Returns:
            tuple: ``(valid, normals, anchors, planarity)``; ``anchors`` are
            the nearest neighbors, rows with ``valid == False`` are nan.

        """
        neighbors, count, _ = self.search(queries, n)
        nq = len(neighbors)
        normals = np.full((nq, 3), np.nan)
        planarity = np.full(nq, np.inf)
        valid = count >= n
        if np.any(valid):
            evals, evecs = plane_eigen(neighbors[valid])
            ok, ratio = planes_valid(evals, max_planarity)
            sub = np.flatnonzero(valid)
            normals[sub] = evecs[:, :, 0]
            planarity[sub] = ratio
            valid[sub[~ok]] = False
        anchors = np.where(valid[:, None], neighbors[:, 0], np.nan)
        normals[~valid] = np.nan
        return valid, normals, anchors, planarity

    def fit_plane(self, p, n=constants.plane_neighbors,
                  max_planarity=constants.max_planarity):
        """Plane through the n nearest neighbors of p.

        Returns:
            PlaneFit or None: None when fewer than n neighbors exist or the
            neighbors are not planar.

        """
        valid, normals, anchors, planarity = self.fit_planes(
            np.asarray(p).reshape(1, 3), n, max_planarity)
        if not valid[0]:
            return None
        return PlaneFit(normals[0], anchors[0], planarity[0])

    def write_ply(self, filename):
        """Dump the map points as an ASCII PLY file (x y z per vertex)."""
        write_ply(os.path.expandvars(filename), self.points())
