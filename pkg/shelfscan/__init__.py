"""
shelfscan
~~~~~~~~~

Multi-instance product pattern detection for shelf photographs.

:license: MIT, see LICENSE for more details.
"""

__license__ = "MIT License"
__version__ = "1.0.0"

from shelfscan.engine.imagecore import RasterImage, load_image, save_png
from shelfscan.engine.features import extract_features, read_features, write_features
from shelfscan.engine.pipeline import Detector, run_multi_product, run_two_phase
