"""
ctlo.utils
==========

Utility functions.
"""

from __future__ import absolute_import, division, print_function

import sys
import time

import numpy as np


def native_endian(data):
    """Convert numpy array data to native endianness if needed.

    Returns new array if endianness is swapped, otherwise returns input data.
    The point files are little-endian on disk; numba kernels want native
    order.

    Args:
        data (array): input array

    Returns:
        array: original array if input in native endianness, otherwise a copy
            with the bytes swapped.

    """
    if data.dtype.isnative:
        return data
    else:
        return data.byteswap().view(data.dtype.newbyteorder())


def elapsed(timer, prefix, verbose=True):
    """Get and print the elapsed time.

    If timer is None, compute the start time and return.  Otherwise, find the
    elapsed time and print a message before returning the new start time.

    Args:
        timer (float): time in seconds for some arbitrary epoch.  If "None",
            get the current time and return.
        prefix (str): string to print before the elapsed time.
        verbose (bool): print the message.

    Returns:
        float: the new start time in seconds.

    """
    cur = time.time()
    if timer is not None and verbose:
        print("{}: {:0.1f} seconds".format(prefix, cur - timer))
        sys.stdout.flush()

    return cur


def uniform_subsample(n, budget):
    """Indices of an evenly strided subset of ``n`` items.

    Args:
        n (int): number of items.
        budget (int): maximum number to keep; None or 0 keeps all.

    Returns:
        array: sorted integer indices.

    """
    if budget is None or budget <= 0 or n <= budget:
        return np.arange(n)
    return np.floor(np.arange(budget) * (n / budget)).astype(np.int64)
