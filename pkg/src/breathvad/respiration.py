"""Respiration-pattern extraction from the flow matrix.

The pattern is the unit vector maximizing ||F R||^2, i.e. the top right
singular vector of F, found by power iteration on the N x N Gram matrix
F^T F (N frames is far smaller than 2P pixels). A zero-phase band-pass
restricted to the plausible respiration band cleans the raw pattern.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import butter, sosfiltfilt

DEFAULT_TOL = 1e-10
DEFAULT_MAX_ITER = 10_000
DEFAULT_LOW_BPM = 5.0
DEFAULT_HIGH_BPM = 30.0

_FILTER_ORDER = 4  # two pole pairs


class DegenerateInputError(Exception):
    """Raised when the flow matrix carries no motion (all zeros)."""


class ConvergenceError(Exception):
    """Power iteration failed to reach tolerance; carries the last residual."""

    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


@dataclass
class SingularTriplet:
    """Top singular triplet of F: F v = sigma u, plus solver diagnostics."""

    sigma: float
    u: np.ndarray  # (2P,), unit norm
    v: np.ndarray  # (N,), unit norm
    iterations: int
    residual: float  # ||F^T F v - sigma^2 v|| at exit
    gap_ratio: float  # sigma_2 / sigma_1 estimate; near 1 means degenerate


@dataclass
class RespirationPattern:
    """Scalar respiration time series with its sampling rate."""

    samples: np.ndarray  # (N,)
    fps: float
    filtered: bool = False

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1:
            raise ValueError("samples must be one-dimensional")
        if self.fps <= 0:
            raise ValueError("fps must be positive")
        if not np.isfinite(self.samples).all():
            raise ValueError("samples must be finite")
        if not self.filtered:
            norm = np.linalg.norm(self.samples)
            if abs(norm - 1.0) > 1e-9:
                raise ValueError(f"raw pattern must have unit norm, got {norm!r}")

    def __len__(self) -> int:
        return self.samples.shape[0]


def top_singular_triplet(
    f: np.ndarray,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    seed: int = 0,
) -> SingularTriplet:
    """Dominant singular triplet of `f` via power iteration on F^T F.

    Converged when ||F^T F v - lambda v|| <= tol * lambda. Raises
    DegenerateInputError for an all-zero matrix and ConvergenceError if
    max_iter iterations do not reach tolerance (retry with another seed).
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    f = np.asarray(f, dtype=np.float64)
    if not np.any(f):
        raise DegenerateInputError("flow matrix is all zeros (no motion)")

    gram = f.T @ f
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(gram.shape[0])
    v /= np.linalg.norm(v)

    lam = 0.0
    residual = np.inf
    iterations = 0
    for iterations in range(1, max_iter + 1):
        w = gram @ v
        norm_w = np.linalg.norm(w)
        if norm_w == 0.0:  # started orthogonal to the range; reseed
            v = rng.standard_normal(v.shape)
            v /= np.linalg.norm(v)
            continue
        v = w / norm_w
        gv = gram @ v
        lam = float(v @ gv)
        residual = float(np.linalg.norm(gv - lam * v))
        if residual <= tol * lam:
            break
    else:
        raise ConvergenceError(
            f"power iteration did not converge in {max_iter} iterations "
            f"(residual {residual:.3e}, tol {tol:.3e})",
            residual,
        )

    fv = f @ v
    sigma = float(np.linalg.norm(fv))
    u = fv / sigma
    gap = _second_eigenvalue_estimate(gram, v, rng)
    gap_ratio = float(np.sqrt(max(gap, 0.0) / lam)) if lam > 0 else 1.0
    return SingularTriplet(
        sigma=sigma,
        u=u,
        v=v,
        iterations=iterations,
        residual=residual,
        gap_ratio=min(gap_ratio, 1.0),
    )


def _second_eigenvalue_estimate(
    gram: np.ndarray, v1: np.ndarray, rng: np.random.Generator, iters: int = 50
) -> float:
    """Cheap deflated power iteration for the spectral-gap diagnostic."""
    w = rng.standard_normal(v1.shape[0])
    w -= (w @ v1) * v1
    norm = np.linalg.norm(w)
    if norm == 0.0:
        return 0.0
    w /= norm
    for _ in range(iters):
        w = gram @ w
        w -= (w @ v1) * v1  # re-project; fights drift back toward v1
        norm = np.linalg.norm(w)
        if norm == 0.0:
            return 0.0
        w /= norm
    return float(w @ (gram @ w))


def extract_rp(
    f: np.ndarray,
    fps: float,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    seed: int = 0,
) -> RespirationPattern:
    """Raw (unfiltered, unit-norm) respiration pattern from a flow matrix.

    The singular-vector sign is arbitrary; it is fixed so the pattern
    correlates non-negatively with the cumulative motion magnitude (the
    running sum of flow-column norms), falling back to a positive first
    nonzero sample when that statistic vanishes.
    """
    triplet = top_singular_triplet(f, tol=tol, max_iter=max_iter, seed=seed)
    v = triplet.v.copy()
    ramp = np.cumsum(np.linalg.norm(np.asarray(f, dtype=np.float64), axis=0))
    stat = float((v - v.mean()) @ (ramp - ramp.mean()))
    if stat < 0.0:
        v = -v
    elif stat == 0.0:
        nonzero = np.flatnonzero(v)
        if nonzero.size and v[nonzero[0]] < 0.0:
            v = -v
    return RespirationPattern(samples=v, fps=fps, filtered=False)


def bandpass(
    rp: RespirationPattern,
    low_bpm: float = DEFAULT_LOW_BPM,
    high_bpm: float = DEFAULT_HIGH_BPM,
) -> RespirationPattern:
    """Zero-phase band-pass onto the respiration band (defaults 5-30 bpm).

    Fourth-order recursive band-pass run forward then backward, with odd
    reflective padding of one filter length at each edge. The output keeps
    the input length and is not renormalized.
    """
    if not 0.0 < low_bpm < high_bpm:
        raise ValueError("need 0 < low_bpm < high_bpm")
    low_hz, high_hz = low_bpm / 60.0, high_bpm / 60.0
    if high_hz >= rp.fps / 2.0:
        raise ValueError(
            f"passband edge {high_hz:g} Hz is at or above Nyquist ({rp.fps / 2.0:g} Hz)"
        )
    sos = butter(_FILTER_ORDER // 2, [low_hz, high_hz], btype="bandpass", fs=rp.fps, output="sos")
    padlen = min(_FILTER_ORDER + 1, len(rp) - 1)
    filtered = sosfiltfilt(sos, rp.samples, padtype="odd", padlen=padlen)
    return RespirationPattern(samples=np.asarray(filtered), fps=rp.fps, filtered=True)


def write_rp_csv(rp: RespirationPattern, path: str) -> None:
    """Write `index,time_s,value` rows, 9 significant digits."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("index,time_s,value\n")
        for i, value in enumerate(rp.samples):
            fh.write(f"{i},{i / rp.fps:.9g},{value:.9g}\n")


def read_rp_csv(path: str, fps: float | None = None, filtered: bool = True) -> RespirationPattern:
    """Read an RP CSV; fps is inferred from the time column unless given."""
    values = []
    times = []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != "index,time_s,value":
            raise ValueError(f"{path}: unexpected header {header!r}")
        for line in fh:
            _, time_s, value = line.strip().split(",")
            times.append(float(time_s))
            values.append(float(value))
    if fps is None:
        if len(times) < 2 or times[-1] <= 0:
            raise ValueError(f"{path}: cannot infer fps, pass it explicitly")
        # times carry 9 significant digits; rounding recovers the true rate
        fps = round((len(times) - 1) / times[-1], 6)
    return RespirationPattern(samples=np.array(values), fps=fps, filtered=filtered)
