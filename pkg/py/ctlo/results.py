"""
ctlo.results
============

Functions for reading and writing full odometry results to HDF5.
"""

from __future__ import absolute_import, division, print_function

import os
import os.path

import numpy as np
from astropy.table import Table

from .pipeline import OdometryOutput, _FIELDS


def write_details(filename, output, config=None, clobber=False):
    """Writes odometry results to a file.

    The tables of an :class:`~ctlo.pipeline.OdometryOutput` map to
    datasets of the HDF5 file::

        /knots[n]           TUM rows t, tx, ty, tz, qx, qy, qz, qw
        /status[nwin]       per-window flags, counts and energies
        /diagnostics[nstep] per Gauss-Newton step
        /residuals[nres]    per window and sensor residual statistics

    Config values, if given, are stored as attributes of the root group.

    Args:
        filename (str): the output file path.
        output (OdometryOutput): results of a run.
        config (OdometryConfig): options used for the run.
        clobber (bool): if True, delete the file if it exists.

    """
    import h5py
    filename = os.path.expandvars(filename)
    if clobber and os.path.exists(filename):
        os.remove(filename)
    elif os.path.exists(filename):
        raise IOError("{} exists; use clobber=True to overwrite".format(filename))

    outdir = os.path.dirname(os.path.abspath(filename))
    if not os.path.exists(outdir):
        os.makedirs(outdir)

    tempfile = filename + '.tmp'
    with h5py.File(tempfile, mode='w') as fx:
        fx['knots'] = np.asarray(output.knots.as_array())
        fx['status'] = np.asarray(output.status.as_array())
        fx['diagnostics'] = np.asarray(output.diagnostics.as_array())
        fx['residuals'] = np.asarray(output.residuals.as_array())
        if config is not None:
            for name in _FIELDS:
                value = getattr(config, name)
                fx.attrs[name] = 'None' if value is None else value
            fx.attrs['nsensors'] = len(config.extrinsics)

    os.rename(tempfile, filename)


def read_details(filename):
    """Read odometry results written by :func:`write_details`.

    Returns:
        tuple: ``(output, attrs)``, an :class:`~ctlo.pipeline.OdometryOutput`
        and a dict of the stored config values.

    """
    import h5py
    with h5py.File(os.path.expandvars(filename), mode='r') as fx:
        tables = [Table(fx[name][()]) for name in ('knots', 'status', 'diagnostics',
                                                   'residuals')]
        attrs = dict()
        for key, value in fx.attrs.items():
            if isinstance(value, bytes):
                value = value.decode()
            if isinstance(value, np.generic):
                value = value.item()
            attrs[key] = None if value == 'None' else value
    return OdometryOutput(*tables), attrs
