"""
ctlo.io
=======

File formats: binary point streams, TUM trajectories, key-value config
files and PLY point dumps.

Point files are little-endian: an 8 byte magic ``CTLOPTS\\0``, a uint32
format version, then packed 24 byte records::

    t (f8) | x, y, z (f4) | sensor (u1) | 3 pad bytes

A CSV fallback with columns ``t,x,y,z,sensor`` is read when the file name
ends in ``.csv``.
"""

from __future__ import absolute_import, division, print_function

import os
from collections import OrderedDict

import numpy as np
from astropy.table import Table

from .liegroup import Pose
from .utils import native_endian

POINTS_MAGIC = b'CTLOPTS\x00'
POINTS_VERSION = 1
POINTS_HEADER = len(POINTS_MAGIC) + 4

POINT_DTYPE = np.dtype({'names': ['t', 'x', 'y', 'z', 'sensor'],
                        'formats': ['<f8', '<f4', '<f4', '<f4', 'u1'],
                        'offsets': [0, 8, 12, 16, 20],
                        'itemsize': 24})

TUM_COLUMNS = ('t', 'tx', 'ty', 'tz', 'qx', 'qy', 'qz', 'qw')


class PointFileError(IOError):
    """Malformed point file.

    Args:
        message (str): description.
        offset (int): byte offset of the offending record.

    """
    def __init__(self, message, offset=None):
        if offset is not None:
            message = '{} at byte offset {}'.format(message, offset)
        super(PointFileError, self).__init__(message)
        self.offset = offset


def make_points(t, xyz, sensor=0):
    """Pack timestamps, coordinates and sensor indices into records."""
    t = np.asarray(t, dtype=np.float64).reshape(-1)
    xyz = np.asarray(xyz).reshape(-1, 3)
    points = np.zeros(len(t), dtype=POINT_DTYPE)
    points['t'] = t
    points['x'] = xyz[:, 0]
    points['y'] = xyz[:, 1]
    points['z'] = xyz[:, 2]
    points['sensor'] = sensor
    return points


def point_xyz(points):
    """(N, 3) float64 coordinates of point records."""
    return np.column_stack([points['x'], points['y'], points['z']]).astype(np.float64)


def _atomic(filename):
    filename = os.path.expandvars(filename)
    outdir = os.path.dirname(os.path.abspath(filename))
    if not os.path.exists(outdir):
        os.makedirs(outdir)
    return filename, filename + '.tmp'


def write_points(filename, points):
    """Write point records to a binary point file.

    Args:
        filename (str): output path; ``.csv`` writes the text fallback.
        points (array): records with fields t, x, y, z, sensor.

    """
    filename, tempfile = _atomic(filename)
    records = np.zeros(len(points), dtype=POINT_DTYPE)
    for name in POINT_DTYPE.names:
        records[name] = points[name]

    if filename.endswith('.csv'):
        table = Table([records[name] for name in POINT_DTYPE.names],
                      names=POINT_DTYPE.names)
        for name in ('x', 'y', 'z'):
            table[name].info.format = '.9g'
        table['t'].info.format = '.17g'
        table.write(tempfile, format='ascii.csv', overwrite=True)
    else:
        with open(tempfile, 'wb') as fx:
            fx.write(POINTS_MAGIC)
            fx.write(np.array([POINTS_VERSION], dtype='<u4').tobytes())
            fx.write(records.tobytes())
    os.rename(tempfile, filename)


def _check_records(records, offset, last_t):
    """Validate a block of records; ``last_t`` holds the latest time per sensor."""
    bad = ~np.isfinite(records['t'])
    for name in ('x', 'y', 'z'):
        bad |= ~np.isfinite(records[name])
    if np.any(bad):
        i = np.flatnonzero(bad)[0]
        raise PointFileError("non-finite value in record {}".format(
            (offset - POINTS_HEADER) // POINT_DTYPE.itemsize + i), offset + i*POINT_DTYPE.itemsize)

    sensor = records['sensor']
    t = records['t']
    for s in np.unique(sensor):
        ii = np.flatnonzero(sensor == s)
        ts = np.concatenate([[last_t[s]], t[ii]])
        back = np.flatnonzero(np.diff(ts) < 0)
        if len(back) > 0:
            i = ii[back[0]]
            raise PointFileError("timestamp regression for sensor {}".format(s),
                                 offset + i*POINT_DTYPE.itemsize)
        last_t[s] = ts[-1]


def read_points(filename, chunksize=65536):
    """Iterate over a point file in blocks.

    Args:
        filename (str): binary point file, or ``.csv`` text fallback.
        chunksize (int): records per yielded block.

    Yields:
        array: blocks of records with fields t, x, y, z, sensor.

    Raises:
        PointFileError: bad header, truncated or non-finite record, or a
            timestamp going backwards for one sensor.

    """
    filename = os.path.expandvars(filename)
    last_t = np.full(256, -np.inf)
    if filename.endswith('.csv'):
        table = Table.read(filename, format='ascii.csv')
        missing = [name for name in POINT_DTYPE.names if name not in table.colnames]
        if missing:
            raise PointFileError("{} is missing columns {}".format(filename, missing))
        records = make_points(table['t'], np.column_stack([table['x'], table['y'], table['z']]),
                              np.asarray(table['sensor']))
        for i in range(0, len(records), chunksize):
            block = records[i:i + chunksize]
            _check_records(block, i*POINT_DTYPE.itemsize, last_t)
            yield block
        return

    with open(filename, 'rb') as fx:
        header = fx.read(POINTS_HEADER)
        if len(header) < POINTS_HEADER or header[:len(POINTS_MAGIC)] != POINTS_MAGIC:
            raise PointFileError("{} is not a point file".format(filename), 0)
        version = np.frombuffer(header[len(POINTS_MAGIC):], dtype='<u4')[0]
        if version != POINTS_VERSION:
            raise PointFileError("unsupported point file version {}".format(version),
                                 len(POINTS_MAGIC))

        offset = POINTS_HEADER
        while True:
            buf = fx.read(chunksize * POINT_DTYPE.itemsize)
            if len(buf) == 0:
                break
            nrec = len(buf) // POINT_DTYPE.itemsize
            records = native_endian(np.frombuffer(buf, dtype=POINT_DTYPE, count=nrec).copy())
            _check_records(records, offset, last_t)
            if nrec * POINT_DTYPE.itemsize != len(buf):
                raise PointFileError("truncated record", offset + nrec*POINT_DTYPE.itemsize)
            yield records
            offset += len(buf)


def read_all_points(filename):
    """Whole point file as one record array."""
    blocks = list(read_points(filename))
    if len(blocks) == 0:
        return np.zeros(0, dtype=POINT_DTYPE)
    return np.concatenate(blocks)


def tum_table(times, poses):
    """TUM trajectory table from times and :class:`~ctlo.liegroup.Pose` values."""
    times = np.asarray(times, dtype=np.float64).reshape(-1)
    if len(times) != len(poses):
        raise ValueError("{} times for {} poses".format(len(times), len(poses)))
    xyz = np.array([T.translation for T in poses]).reshape(-1, 3)
    quat = np.array([T.quaternion() for T in poses]).reshape(-1, 4)
    cols = [times] + [xyz[:, i] for i in range(3)] + [quat[:, i] for i in range(4)]
    return Table(cols, names=TUM_COLUMNS)


def table_poses(table):
    """List of :class:`~ctlo.liegroup.Pose` from a TUM table."""
    quat = np.column_stack([table[c] for c in ('qx', 'qy', 'qz', 'qw')])
    xyz = np.column_stack([table[c] for c in ('tx', 'ty', 'tz')])
    return [Pose.from_quaternion(q, t) for q, t in zip(quat, xyz)]


def write_tum(filename, table):
    """Write a TUM trajectory, one ``t tx ty tz qx qy qz qw`` line per pose."""
    filename, tempfile = _atomic(filename)
    data = np.column_stack([np.asarray(table[c], dtype=np.float64) for c in TUM_COLUMNS])
    np.savetxt(tempfile, data.reshape(-1, 8), fmt='%.17g')
    os.rename(tempfile, filename)


def read_tum(filename):
    """Read a TUM trajectory file.

    Returns:
        Table: columns t, tx, ty, tz, qx, qy, qz, qw with unit quaternions.

    Raises:
        ValueError: wrong column count or a quaternion far from unit norm.

    """
    filename = os.path.expandvars(filename)
    data = np.loadtxt(filename, comments='#', ndmin=2)
    if data.size == 0:
        data = np.zeros((0, 8))
    if data.shape[1] != 8:
        raise ValueError("{}: expected 8 columns, got {}".format(filename, data.shape[1]))
    norm = np.sqrt(np.sum(data[:, 4:]**2, axis=1))
    if np.any(np.abs(norm - 1.0) > 1e-3):
        i = np.flatnonzero(np.abs(norm - 1.0) > 1e-3)[0]
        raise ValueError("{}: quaternion on line {} is not unit norm".format(filename, i + 1))
    data[:, 4:] /= norm[:, None]
    return Table([data[:, i] for i in range(8)], names=TUM_COLUMNS)


def read_config(filename):
    """Read a flat ``key = value`` config file.

    Blank lines and text after ``#`` are ignored.

    Returns:
        OrderedDict: raw string values keyed by name.

    Raises:
        ValueError: malformed line or duplicate key.

    """
    filename = os.path.expandvars(filename)
    values = OrderedDict()
    with open(filename, encoding='utf-8') as fx:
        for lineno, line in enumerate(fx, 1):
            line = line.split('#', 1)[0].strip()
            if len(line) == 0:
                continue
            if '=' not in line:
                raise ValueError("{}:{}: expected 'key = value'".format(filename, lineno))
            key, value = [x.strip() for x in line.split('=', 1)]
            if len(key) == 0:
                raise ValueError("{}:{}: empty key".format(filename, lineno))
            if key in values:
                raise ValueError("{}:{}: duplicate key {}".format(filename, lineno, key))
            values[key] = value
    return values


def write_ply(filename, points):
    """ASCII PLY with one ``x y z`` vertex per point."""
    filename, tempfile = _atomic(filename)
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    header = '\n'.join(['ply', 'format ascii 1.0',
                        'element vertex {}'.format(len(points)),
                        'property float x', 'property float y', 'property float z',
                        'end_header'])
    np.savetxt(tempfile, points, fmt='%.6f', header=header, comments='')
    os.rename(tempfile, filename)
