"""Independent FSIM reference built on phasepack's port of Kovesi's phase congruency.

phasepack follows a later revision of the PC code (different angular
spread and noise model), so absolute values differ from slidepair's
FSIM-specific variant. It serves as an oracle for orderings, not values.
"""

import warnings

import numpy as np
from scipy import ndimage

with warnings.catch_warnings():
    warnings.simplefilter("ignore")
    from phasepack import phasecong

T1, T2 = 0.85, 160.0


def _pc(y):
    _, _, _, _, pcs, _, _ = phasecong(y, nscale=4, norient=4, minWaveLength=6, mult=2, sigmaOnf=0.55)
    return np.sum(pcs, axis=0) / len(pcs)


def _gm(y):
    k = np.array([[3, 0, -3], [10, 0, -10], [3, 0, -3]], float) / 16
    return np.hypot(ndimage.convolve(y, k), ndimage.convolve(y, k.T))


def fsim_reference(x, y):
    """FSIM of two 2D luminance arrays in [0, 1]."""
    x, y = x * 255.0, y * 255.0
    p1, p2 = _pc(x), _pc(y)
    g1, g2 = _gm(x), _gm(y)
    s = ((2 * p1 * p2 + T1) / (p1 ** 2 + p2 ** 2 + T1)) * ((2 * g1 * g2 + T2) / (g1 ** 2 + g2 ** 2 + T2))
    pcm = np.maximum(p1, p2)
    return float((s * pcm).sum() / pcm.sum())
