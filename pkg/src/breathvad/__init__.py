"""Voice activity detection from video-extracted respiration patterns.

The pipeline: grayscale frames -> normalized directional optical flow ->
dominant singular vector (the respiration pattern) -> band-pass ->
window-to-window sequence models -> per-sample speech probabilities.
"""

__version__ = "0.1.0"
