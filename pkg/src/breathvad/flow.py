"""Normalized directional optical flow and the stacked flow matrix.

Per frame, the flow at a pixel is the temporal intensity difference scaled
onto the spatial gradient direction: D * G / ||G||^2. Flattened flow fields
for all frames stack into a 2P x N matrix (P pixels, N frames) whose
dominant singular structure carries the common motion.
"""

from __future__ import annotations

import struct

import numpy as np

from .video_io import FrameSequence

DEFAULT_EPS = 1e-8  # squared-gradient guard on [0,1]-scaled intensities

_MATRIX_MAGIC = 0x464C4D58  # "FLMX"
_MATRIX_VERSION = 1


def spatial_gradient(frame: np.ndarray) -> np.ndarray:
    """Forward-difference spatial gradient, shape (H, W, 2).

    Component 0 is horizontal (x), component 1 vertical (y). Pixels in the
    last row or column, where the forward difference is undefined, get (0, 0).
    """
    frame = np.asarray(frame, dtype=np.float64)
    if frame.ndim != 2 or frame.shape[0] < 2 or frame.shape[1] < 2:
        raise ValueError("frame must be at least 2x2")
    g = np.zeros(frame.shape + (2,), dtype=np.float64)
    g[:-1, :-1, 0] = frame[:-1, 1:] - frame[:-1, :-1]
    g[:-1, :-1, 1] = frame[1:, :-1] - frame[:-1, :-1]
    return g


def temporal_diff(curr: np.ndarray, prev: np.ndarray) -> np.ndarray:
    """Elementwise intensity difference between consecutive frames."""
    curr = np.asarray(curr, dtype=np.float64)
    prev = np.asarray(prev, dtype=np.float64)
    if curr.shape != prev.shape:
        raise ValueError(f"shape mismatch: {curr.shape} vs {prev.shape}")
    return curr - prev


def normalized_flow(diff: np.ndarray, grad: np.ndarray, eps: float = DEFAULT_EPS) -> np.ndarray:
    """Per-pixel flow D*G/||G||^2, flattened to a length-2P vector.

    Pixels with ||G||^2 < eps get zero flow. Flattening is row-major over
    pixels with the horizontal component before the vertical one.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    diff = np.asarray(diff, dtype=np.float64)
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != diff.shape + (2,):
        raise ValueError(f"shape mismatch: diff {diff.shape}, grad {grad.shape}")
    norm2 = grad[..., 0] ** 2 + grad[..., 1] ** 2
    scale = np.where(norm2 >= eps, diff / np.where(norm2 >= eps, norm2, 1.0), 0.0)
    return (grad * scale[..., None]).reshape(-1)


def build_flow_matrix(seq: FrameSequence, eps: float = DEFAULT_EPS) -> np.ndarray:
    """Stack flattened normalized flow fields into a (2P, N) matrix.

    Column t (t >= 1) is the flow between frames t-1 and t, with the spatial
    gradient evaluated at frame t. Column 0 is zero so the matrix keeps one
    column per frame.
    """
    n = seq.n_frames
    two_p = 2 * seq.height * seq.width
    f = np.zeros((two_p, n), dtype=np.float64)
    for t in range(1, n):
        d = temporal_diff(seq.frames[t], seq.frames[t - 1])
        g = spatial_gradient(seq.frames[t])
        f[:, t] = normalized_flow(d, g, eps)
    if not np.isfinite(f).all():
        raise FloatingPointError("flow matrix contains non-finite entries")
    return f


def write_matrix(matrix: np.ndarray, path: str) -> None:
    """Debug dump: 8 little-endian int64 header, then row-major float64 data."""
    matrix = np.ascontiguousarray(matrix, dtype=np.float64)
    rows, cols = matrix.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack("<8q", _MATRIX_MAGIC, _MATRIX_VERSION, rows, cols, 0, 0, 0, 0))
        fh.write(matrix.astype("<f8").tobytes())


def read_matrix(path: str) -> np.ndarray:
    with open(path, "rb") as fh:
        header = struct.unpack("<8q", fh.read(64))
        if header[0] != _MATRIX_MAGIC:
            raise ValueError(f"bad matrix magic 0x{header[0]:x}")
        if header[1] != _MATRIX_VERSION:
            raise ValueError(f"unsupported matrix version {header[1]}")
        rows, cols = header[2], header[3]
        data = np.frombuffer(fh.read(rows * cols * 8), dtype="<f8")
    if data.size != rows * cols:
        raise ValueError("truncated matrix data")
    return data.reshape(rows, cols).astype(np.float64)
