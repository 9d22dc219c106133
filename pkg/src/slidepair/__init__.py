"""Adjacent-section pairing for multi-stain renal histology.

Four stages turn a group of serial whole-slide rasters (H&E plus PAS,
PASM and Masson) into registered, similarity-filtered patch pairs:
rotation pre-alignment, glomerulus matching, keypoint affine
registration, and tiling with FSIM/SSIM gating. ``slidepair.losses``
holds reference arithmetic for the adjacency-guided training losses.
"""

__version__ = "0.1.0"

from .errors import PairingError
from .imaging import DisplacementField, RasterImage, TissueMask
from .transform import AffineTransform2D, compose, invert

__all__ = [
    "AffineTransform2D",
    "DisplacementField",
    "PairingError",
    "RasterImage",
    "TissueMask",
    "__version__",
    "compose",
    "invert",
]
