"""
ctlo.winwarning
===============

Mask bit definitions for the per-window status word.
"""

class WindowWarningMask(object):
    UNDERCONSTRAINED   = 2**0  #- a segment has fewer valid correspondences than required
    NO_CORRESPONDENCES = 2**1  #- no geometric factor at all in the window
    MAXITER            = 2**2  #- iteration caps reached before the increment fell below tolerance
    NO_DECREASE        = 2**3  #- damping exhausted without lowering the energy
    RETRIED            = 2**4  #- first optimization failed, window re-run with doubled damping
    DIVERGED           = 2**5  #- optimization failed twice; predicted controls kept
    SINGULAR_MARGINAL  = 2**6  #- marginalized block regularized before the Schur complement

    @classmethod
    def flags(cls):
        flagmask = list()
        for key, value in cls.__dict__.items():
            if not key.startswith('_') and key.isupper():
                flagmask.append((key, value))

        import numpy as np
        isort = np.argsort([x[1] for x in flagmask])
        flagmask = [flagmask[i] for i in isort]
        return flagmask

    @classmethod
    def names(cls, value):
        """Return the names of the bits set in ``value``."""
        return [key for key, bit in cls.flags() if value & bit]

#- mask of warnings that mean the window estimate should not be trusted
badwindow_mask = WindowWarningMask.DIVERGED
badwindow_mask |= WindowWarningMask.NO_CORRESPONDENCES
