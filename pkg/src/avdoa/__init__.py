"""Multi-speaker direction-of-arrival estimation with audio-visual fusion.

Synthesizes multichannel array audio and geometry-derived face detections,
extracts GCC-PHAT and per-axis Gaussian visual features, trains fusion
networks (plain concatenation and adaptive weighting) from scratch, and
evaluates MAE/ACC robustness under audio-noise and detection-swap
degradation.
"""

__version__ = "0.1.0"

from . import audio, dataset, evaluation, geom, nn, store, visual  # noqa: F401
from .errors import AvdoaError  # noqa: F401
