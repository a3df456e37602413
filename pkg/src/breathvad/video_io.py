"""Grayscale frame-sequence storage: binary PGM frames plus a text manifest.

Frames live on disk as one 8-bit binary portable graymap (P5) per frame.
A manifest is a plain ``key = value`` text file binding the frame files to
their dimensions, frame rate and speech-interval labels.
"""

from __future__ import annotations

import glob
import os
import re
from dataclasses import dataclass, field

import numpy as np


class FrameLoadError(Exception):
    """Raised when a frame file is missing, malformed or inconsistent.

    frame_index is the 1-based position of the offending frame file.
    """

    def __init__(self, message: str, frame_index: int | None = None):
        if frame_index is not None:
            message = f"frame {frame_index}: {message}"
        super().__init__(message)
        self.frame_index = frame_index


@dataclass
class FrameSequence:
    """Ordered grayscale frames, intensities in [0, 1]."""

    frames: np.ndarray  # (N, H, W) float64
    fps: float

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 3:
            raise ValueError("frames must be a (N, H, W) array")
        n, h, w = self.frames.shape
        if n < 2:
            raise ValueError(f"need at least 2 frames, got {n}")
        if h < 2 or w < 2:
            raise ValueError(f"frame dimensions must be >= 2x2, got {h}x{w}")
        if self.fps <= 0:
            raise ValueError("fps must be positive")
        if not np.isfinite(self.frames).all():
            raise ValueError("frame intensities must be finite")
        lo, hi = self.frames.min(), self.frames.max()
        if lo < 0.0 or hi > 1.0:
            raise ValueError(f"intensities outside [0, 1]: min={lo}, max={hi}")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def height(self) -> int:
        return self.frames.shape[1]

    @property
    def width(self) -> int:
        return self.frames.shape[2]

    @property
    def duration_s(self) -> float:
        return self.n_frames / self.fps


@dataclass
class Manifest:
    """Binds a frame-file pattern to dimensions, rate and speech labels."""

    frame_source: str
    width: int
    height: int
    fps: float
    speech_intervals: list[tuple[float, float]] = field(default_factory=list)
    root: str | None = None  # directory relative patterns resolve against

    def __post_init__(self):
        if self.width < 2 or self.height < 2:
            raise ValueError("width and height must be >= 2")
        if self.fps <= 0:
            raise ValueError("fps must be positive")
        prev_end = -1.0
        for start, end in self.speech_intervals:
            if not 0.0 <= start < end:
                raise ValueError(f"bad speech interval ({start}, {end})")
            if start < prev_end:
                raise ValueError("speech intervals must be sorted and non-overlapping")
            prev_end = end


def read_manifest(path: str) -> Manifest:
    """Parse a ``key = value`` manifest file."""
    values: dict[str, str] = {}
    intervals: list[tuple[float, float]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'key = value'")
            key, _, value = line.partition("=")
            key, value = key.strip(), value.strip()
            if key == "speech_interval":
                try:
                    start_s, end_s = (float(v) for v in value.split(","))
                except ValueError:
                    raise ValueError(f"{path}:{lineno}: bad speech_interval '{value}'")
                intervals.append((start_s, end_s))
            else:
                values[key] = value
    missing = {"frames", "width", "height", "fps"} - values.keys()
    if missing:
        raise ValueError(f"{path}: missing manifest keys: {sorted(missing)}")
    return Manifest(
        frame_source=values["frames"],
        width=int(values["width"]),
        height=int(values["height"]),
        fps=float(values["fps"]),
        speech_intervals=intervals,
        root=os.path.dirname(os.path.abspath(path)),
    )


def write_manifest(manifest: Manifest, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"frames = {manifest.frame_source}\n")
        fh.write(f"width = {manifest.width}\n")
        fh.write(f"height = {manifest.height}\n")
        fh.write(f"fps = {manifest.fps!r}\n")
        for start, end in manifest.speech_intervals:
            fh.write(f"speech_interval = {start!r},{end!r}\n")


_PGM_TOKEN = re.compile(rb"^\s*(?:#[^\n]*\n\s*)*(\S+)")


def _pgm_tokens(data: bytes, count: int) -> tuple[list[bytes], int]:
    """Read `count` whitespace/comment-delimited header tokens; return offset."""
    tokens = []
    pos = 0
    for _ in range(count):
        m = _PGM_TOKEN.match(data[pos:])
        if m is None:
            raise ValueError("truncated header")
        tokens.append(m.group(1))
        pos += m.end(1)
    return tokens, pos


def read_pgm(path: str) -> np.ndarray:
    """Read a binary (P5) 8-bit PGM into a [0, 1] float array."""
    with open(path, "rb") as fh:
        data = fh.read()
    tokens, pos = _pgm_tokens(data, 4)
    if tokens[0] != b"P5":
        raise ValueError(f"not a binary PGM (magic {tokens[0]!r})")
    width, height, maxval = (int(t) for t in tokens[1:])
    if not 0 < maxval <= 255:
        raise ValueError(f"unsupported maxval {maxval}")
    pos += 1  # single whitespace byte after maxval
    raster = data[pos : pos + width * height]
    if len(raster) != width * height:
        raise ValueError("truncated pixel data")
    pixels = np.frombuffer(raster, dtype=np.uint8).reshape(height, width)
    return pixels.astype(np.float64) / maxval


def write_pgm(frame: np.ndarray, path: str) -> None:
    """Write a [0, 1] float array as an 8-bit binary PGM."""
    height, width = frame.shape
    quantized = np.rint(np.clip(frame, 0.0, 1.0) * 255.0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (width, height))
        fh.write(quantized.tobytes())


def load_frames(manifest: Manifest) -> FrameSequence:
    """Load the manifest's frames, in lexicographic order of the expanded pattern."""
    pattern = manifest.frame_source
    if manifest.root is not None and not os.path.isabs(pattern):
        pattern = os.path.join(manifest.root, pattern)
    paths = sorted(glob.glob(pattern))
    if not paths:
        raise FrameLoadError(f"no frame files match pattern '{pattern}'")
    frames = np.empty((len(paths), manifest.height, manifest.width), dtype=np.float64)
    for i, frame_path in enumerate(paths):
        try:
            frame = read_pgm(frame_path)
        except OSError as exc:
            raise FrameLoadError(f"cannot read '{frame_path}': {exc}", i + 1)
        except ValueError as exc:
            raise FrameLoadError(f"'{frame_path}': {exc}", i + 1)
        if frame.shape != (manifest.height, manifest.width):
            raise FrameLoadError(
                f"'{frame_path}' is {frame.shape[1]}x{frame.shape[0]}, "
                f"manifest says {manifest.width}x{manifest.height}",
                i + 1,
            )
        frames[i] = frame
    return FrameSequence(frames=frames, fps=manifest.fps)


def write_frames(seq: FrameSequence, dir_path: str) -> None:
    """Write one PGM per frame into `dir_path` as frame_00000.pgm, ...

    Loading the written frames back reproduces `seq` to within one 8-bit
    quantization step per pixel.
    """
    os.makedirs(dir_path, exist_ok=True)
    for i in range(seq.n_frames):
        write_pgm(seq.frames[i], os.path.join(dir_path, f"frame_{i:05d}.pgm"))


def frame_pattern() -> str:
    """Glob pattern matching the files written by write_frames."""
    return "frame_*.pgm"
