"""Seeded synthetic data with known ground truth.

Two generators: a video of a textured surface translated vertically by a
known breathing displacement d(t), and a labeled respiration-pattern
dataset where speech episodes distort an otherwise clean sinusoid. Both
stand in for real recordings when verifying the pipeline, so everything
is a pure function of its seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dataset import LabeledSequence, label_from_intervals
from .respiration import DEFAULT_HIGH_BPM, DEFAULT_LOW_BPM, RespirationPattern
from .video_io import FrameSequence

_BAND_LO_HZ = DEFAULT_LOW_BPM / 60.0
_BAND_HI_HZ = DEFAULT_HIGH_BPM / 60.0


@dataclass
class SynthVideoParams:
    width: int = 64
    height: int = 64
    n_frames: int = 900
    fps: float = 30.0
    amplitude_px: float = 1.5  # may be sub-pixel
    freq_hz: float = 0.2
    texture_scale: float = 3.0  # carrier coarseness, pixels
    noise_sigma: float = 0.005
    seed: int = 0

    def __post_init__(self):
        if self.width < 2 or self.height < 2 or self.n_frames < 2:
            raise ValueError("need at least 2x2 frames and 2 of them")
        if not 0.0 < self.freq_hz < self.fps / 2.0:
            raise ValueError("freq_hz must sit below Nyquist")
        if not _BAND_LO_HZ <= self.freq_hz <= _BAND_HI_HZ:
            raise ValueError("freq_hz outside the plausible breathing band")
        if self.amplitude_px < 0:
            raise ValueError("amplitude_px must be >= 0")
        if self.noise_sigma < 0 or self.texture_scale <= 0:
            raise ValueError("noise_sigma >= 0 and texture_scale > 0 required")


def synth_video(p: SynthVideoParams) -> tuple[FrameSequence, np.ndarray]:
    """Video of a fixed texture shifted vertically by d(t), plus d itself.

    d(t) = A sin(2 pi f t / fps). Sub-pixel shifts use linear row
    interpolation into an oversized texture, then per-pixel gaussian noise
    is added and intensities are clipped to [0, 1].

    The texture is a vertical triangle wave riding on a static horizontal
    sawtooth, both with seeded offsets and periods set by texture_scale.
    The sawtooth keeps the gradient norm bounded below at every pixel (the
    horizontal sampling grid never moves, so its steps are never blended
    away), which keeps the per-pixel flow normalization from amplifying
    sensor noise at flat spots; the triangle carries the vertical motion
    without intensity jumps, so sub-pixel sampling stays exact.
    """
    rng = np.random.default_rng(p.seed)
    margin = int(math.ceil(p.amplitude_px)) + 2
    period_y = max(4.0, 2.0 * p.texture_scale + 2.0)
    period_x = max(2.0, p.texture_scale + 1.0)
    rows = np.arange(p.height + 2 * margin)[:, None] + period_y * rng.uniform()
    cols = np.arange(p.width)[None, :] + period_x * rng.uniform()
    tri = 1.0 - np.abs(2.0 * ((rows % period_y) / period_y) - 1.0)
    saw = (cols % period_x) / period_x
    tex = 0.05 + 0.55 * tri + 0.35 * saw  # peak 0.95, clear of the clip range

    t = np.arange(p.n_frames)
    d = p.amplitude_px * np.sin(2.0 * np.pi * p.freq_hz * t / p.fps)

    frames = np.empty((p.n_frames, p.height, p.width))
    for k in range(p.n_frames):
        offset = margin - d[k]
        base = int(math.floor(offset))
        frac = offset - base
        frames[k] = (1.0 - frac) * tex[base: base + p.height] + frac * tex[
            base + 1: base + 1 + p.height
        ]
    if p.noise_sigma > 0:
        frames += rng.normal(0.0, p.noise_sigma, frames.shape)
    np.clip(frames, 0.0, 1.0, out=frames)
    return FrameSequence(frames=frames, fps=p.fps), d


@dataclass
class SynthRPParams:
    n_speakers: int = 32
    duration_s: float = 40.0
    fps: float = 10.0
    freq_range_hz: tuple[float, float] = (0.15, 0.4)
    episode_count: int = 3
    episode_duration_range_s: tuple[float, float] = (2.0, 9.0)
    distortion: float = 1.0  # 0 disables every speech effect (null control)
    noise_sigma: float = 0.02
    seed: int = 0

    def __post_init__(self):
        lo, hi = self.freq_range_hz
        if not _BAND_LO_HZ <= lo <= hi <= _BAND_HI_HZ:
            raise ValueError("freq_range_hz must lie inside the breathing band")
        if hi >= self.fps / 2.0:
            raise ValueError("freq_range_hz must sit below Nyquist")
        dlo, dhi = self.episode_duration_range_s
        if not 0.0 < dlo <= dhi:
            raise ValueError("bad episode duration range")
        if self.episode_count * dhi > self.duration_s:
            raise ValueError("episodes cannot fit in the recording")
        if self.n_speakers < 1 or self.duration_s <= 0 or self.fps <= 0:
            raise ValueError("n_speakers, duration_s and fps must be positive")
        if self.noise_sigma < 0 or not 0.0 <= self.distortion:
            raise ValueError("noise_sigma and distortion must be >= 0")

    @property
    def speech_fraction(self) -> float:
        """Expected fraction of speech samples, from mean episode length."""
        dlo, dhi = self.episode_duration_range_s
        return self.episode_count * 0.5 * (dlo + dhi) / self.duration_s


def _episodes(rng: np.random.Generator, p: SynthRPParams) -> list[tuple[float, float]]:
    """Non-overlapping speech intervals; leftover time split into random gaps."""
    dlo, dhi = p.episode_duration_range_s
    durations = rng.uniform(dlo, dhi, p.episode_count)
    free = p.duration_s - durations.sum()
    gaps = rng.random(p.episode_count + 1)
    gaps = gaps / gaps.sum() * free
    intervals = []
    cursor = 0.0
    for dur, gap in zip(durations, gaps):
        start = cursor + gap
        intervals.append((start, start + dur))
        cursor = start + dur
    return intervals


def synth_rp_dataset(p: SynthRPParams) -> list[LabeledSequence]:
    """Labeled per-speaker respiration patterns with distorted speech spans.

    Baseline: unit sinusoid at a speaker-specific frequency and phase.
    Inside each episode (scaled by the distortion strength): the amplitude
    drops, the falling half-cycle flattens toward a plateau, and a faster
    ripple rides on top. Gaussian noise covers the whole recording, so at
    distortion 0 speech spans are statistically identical to the rest.
    """
    n = int(round(p.duration_s * p.fps))
    t = np.arange(n) / p.fps
    streams = np.random.SeedSequence(p.seed).spawn(p.n_speakers)
    out = []
    for k in range(p.n_speakers):
        rng = np.random.default_rng(streams[k])
        freq = rng.uniform(*p.freq_range_hz)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        ripple_phase = rng.uniform(0.0, 2.0 * np.pi)
        intervals = _episodes(rng, p)
        labels = label_from_intervals(intervals, n, p.fps)

        theta = 2.0 * np.pi * freq * t + phase
        base = np.sin(theta)
        s = p.distortion

        # distortion weight: 1 inside episodes, 0 outside, 0.3 s edge ramps
        w = np.zeros(n)
        ramp = 0.3
        for start, end in intervals:
            rise = np.clip((t - start) / ramp, 0.0, 1.0)
            fall = np.clip((end - t) / ramp, 0.0, 1.0)
            w = np.maximum(w, np.minimum(rise, fall))
        w *= s

        distorted = (1.0 - 0.5 * w) * base
        falling = np.cos(theta) < 0.0  # expiration half-cycle
        plateau = np.where(falling, 0.1, distorted)
        distorted = (1.0 - 0.7 * w) * distorted + 0.7 * w * plateau
        distorted += 0.15 * w * np.sin(2.0 * np.pi * 1.0 * t + ripple_phase)

        samples = distorted + rng.normal(0.0, p.noise_sigma, n)
        rp = RespirationPattern(samples=samples, fps=p.fps, filtered=True)
        out.append(LabeledSequence(rp=rp, labels=labels, speaker_id=f"spk{k:03d}"))
    return out
