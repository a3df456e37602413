"""Labeled sequences, fixed-width chunking, class weights, speaker splits.

Sequences are cut into width-w windows either back to back (non_overlap,
stride w, tail zero-padded) or densely (overlap, stride 1, no padding when
the sequence is long enough). Padded positions are tracked so they can be
masked out of losses and metrics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .respiration import RespirationPattern

MODE_OVERLAP = "overlap"
MODE_NON_OVERLAP = "non_overlap"

DATASET_HEADER = "speaker_id,index,rp_value,label"


@dataclass
class LabeledSequence:
    """A respiration pattern with per-sample binary speech labels."""

    rp: RespirationPattern
    labels: np.ndarray  # (N,) of 0/1
    speaker_id: str

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.labels.ndim != 1 or self.labels.shape[0] != len(self.rp):
            raise ValueError("labels length must equal pattern length")
        if not np.isin(self.labels, (0, 1)).all():
            raise ValueError("labels must be binary")

    def __len__(self) -> int:
        return len(self.rp)


@dataclass
class ChunkSet:
    """Width-w windows over one sequence, plus enough metadata to undo it."""

    inputs: np.ndarray  # (n_chunks, w)
    labels: np.ndarray  # (n_chunks, w)
    offsets: np.ndarray  # (n_chunks,) source index of each window start
    width: int
    mode: str
    stride: int
    pad_count: int  # zero-filled samples in the final chunk

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.offsets = np.asarray(self.offsets, dtype=np.int64)
        if self.mode not in (MODE_OVERLAP, MODE_NON_OVERLAP):
            raise ValueError(f"unknown mode {self.mode!r}")
        expected_stride = 1 if self.mode == MODE_OVERLAP else self.width
        if self.stride != expected_stride:
            raise ValueError(f"{self.mode} mode requires stride {expected_stride}")
        if self.inputs.shape != self.labels.shape or self.inputs.shape[1] != self.width:
            raise ValueError("chunk arrays must be (n_chunks, width)")
        if self.offsets.shape[0] != self.inputs.shape[0]:
            raise ValueError("one offset per chunk required")
        if np.any(np.diff(self.offsets) != self.stride):
            raise ValueError("offsets must increase by the stride")
        if not 0 <= self.pad_count < self.width:
            raise ValueError("pad_count must lie in [0, width)")

    @property
    def n_chunks(self) -> int:
        return self.inputs.shape[0]

    def mask(self) -> np.ndarray:
        """Boolean (n_chunks, w); False marks zero-padded positions."""
        valid = np.ones_like(self.inputs, dtype=bool)
        if self.pad_count:
            valid[-1, self.width - self.pad_count:] = False
        return valid


def label_from_intervals(intervals, n: int, fps: float) -> np.ndarray:
    """Binary vector: 1 where sample time i/fps falls in some [start, end)."""
    if n < 0:
        raise ValueError("n must be non-negative")
    if fps <= 0:
        raise ValueError("fps must be positive")
    labels = np.zeros(n, dtype=np.int64)
    times = np.arange(n) / fps
    for start, end in intervals:
        labels[(times >= start) & (times < end)] = 1
    return labels


def chunk(seq: LabeledSequence, width: int, mode: str) -> ChunkSet:
    """Cut a sequence into width-w windows.

    non_overlap: ceil(N/w) windows at offsets 0, w, 2w, ...; the last is
    zero-padded (values and labels) and the pad size recorded. overlap:
    N-w+1 windows at stride 1 with no padding; an N < w sequence yields a
    single zero-padded window in either mode.
    """
    if width < 1:
        raise ValueError("width must be >= 1")
    values = seq.rp.samples
    labels = seq.labels
    n = len(seq)
    if n < 1:
        raise ValueError("sequence must be non-empty")

    if mode == MODE_OVERLAP and n >= width:
        n_chunks = n - width + 1
        idx = np.arange(width)[None, :] + np.arange(n_chunks)[:, None]
        return ChunkSet(
            inputs=values[idx],
            labels=labels[idx],
            offsets=np.arange(n_chunks),
            width=width,
            mode=mode,
            stride=1,
            pad_count=0,
        )

    if mode not in (MODE_OVERLAP, MODE_NON_OVERLAP):
        raise ValueError(f"unknown mode {mode!r}")

    n_chunks = max(1, math.ceil(n / width)) if mode == MODE_NON_OVERLAP else 1
    stride = width if mode == MODE_NON_OVERLAP else 1
    padded = n_chunks * width
    inputs = np.zeros((n_chunks, width))
    labs = np.zeros((n_chunks, width), dtype=np.int64)
    flat_in = np.zeros(padded)
    flat_lab = np.zeros(padded, dtype=np.int64)
    flat_in[:n] = values
    flat_lab[:n] = labels
    for c in range(n_chunks):
        inputs[c] = flat_in[c * width:(c + 1) * width]
        labs[c] = flat_lab[c * width:(c + 1) * width]
    return ChunkSet(
        inputs=inputs,
        labels=labs,
        offsets=np.arange(n_chunks) * stride,
        width=width,
        mode=mode,
        stride=stride,
        pad_count=padded - n,
    )


def reassemble(chunks: ChunkSet, n: int, values: np.ndarray | None = None) -> np.ndarray:
    """Undo chunking for a length-n source sequence.

    `values` is an (n_chunks, w) array of per-window outputs to merge
    (defaults to the stored inputs). non_overlap concatenates and drops the
    padded tail; overlap averages every window covering each position.
    """
    if values is None:
        values = chunks.inputs
    values = np.asarray(values, dtype=np.float64)
    if values.shape != (chunks.n_chunks, chunks.width):
        raise ValueError("values must be (n_chunks, width)")
    _check_consistent(chunks, n)

    if chunks.mode == MODE_NON_OVERLAP:
        return values.reshape(-1)[:n].copy()

    out = np.zeros(n)
    cover = np.zeros(n)
    for c, off in enumerate(chunks.offsets):
        hi = min(off + chunks.width, n)
        out[off:hi] += values[c, : hi - off]
        cover[off:hi] += 1.0
    return out / cover


def _check_consistent(chunks: ChunkSet, n: int) -> None:
    if n < 1:
        raise ValueError("n must be >= 1")
    if chunks.mode == MODE_NON_OVERLAP:
        want = math.ceil(n / chunks.width)
        pad = want * chunks.width - n
    elif n >= chunks.width:
        want, pad = n - chunks.width + 1, 0
    else:
        want, pad = 1, chunks.width - n
    if chunks.n_chunks != want or chunks.pad_count != pad:
        raise ValueError(
            f"chunk set ({chunks.n_chunks} chunks, pad {chunks.pad_count}) "
            f"inconsistent with n={n}"
        )


def class_weights(labels: np.ndarray) -> tuple[float, float]:
    """Balanced inverse-frequency weights (w_pos, w_neg): N/(2 N_c).

    Requires both classes present; class_weights on a single-class label
    set is an error because the weighted loss would be degenerate.
    """
    labels = np.asarray(labels).reshape(-1)
    n_pos = int(np.count_nonzero(labels == 1))
    n_neg = int(np.count_nonzero(labels == 0))
    if n_pos == 0 or n_neg == 0:
        raise ValueError(
            "class_weights needs both classes in the training labels; got "
            f"{n_pos} positive and {n_neg} negative"
        )
    total = n_pos + n_neg
    return total / (2.0 * n_pos), total / (2.0 * n_neg)


def split_speakers(
    sequences: list[LabeledSequence], n_splits: int, seed: int = 0
) -> list[tuple[list[LabeledSequence], list[LabeledSequence]]]:
    """Speaker-disjoint (train, test) partitions, one per test fold.

    Unique speaker ids are sorted, shuffled by the seed, and dealt into
    n_splits folds round-robin, so fold sizes differ by at most one.
    """
    if n_splits < 2:
        raise ValueError("n_splits must be >= 2")
    ids = sorted({s.speaker_id for s in sequences})
    if len(ids) < n_splits:
        raise ValueError(f"need at least {n_splits} speakers, got {len(ids)}")
    rng = np.random.default_rng(seed)
    order = [ids[i] for i in rng.permutation(len(ids))]
    folds: list[list[str]] = [[] for _ in range(n_splits)]
    for i, speaker in enumerate(order):
        folds[i % n_splits].append(speaker)

    out = []
    for fold in folds:
        test_ids = set(fold)
        train = [s for s in sequences if s.speaker_id not in test_ids]
        test = [s for s in sequences if s.speaker_id in test_ids]
        out.append((train, test))
    return out


def write_splits(partitions, path: str) -> None:
    """One line per fold: `fold <k>: id,id,...` listing the test speakers."""
    with open(path, "w", encoding="utf-8") as fh:
        for k, (_, test) in enumerate(partitions):
            ids = sorted({s.speaker_id for s in test})
            fh.write(f"fold {k}: {','.join(ids)}\n")


def read_splits(path: str) -> list[list[str]]:
    """Test-fold speaker ids, in file order."""
    folds = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            head, _, rest = line.partition(":")
            if not head.startswith("fold"):
                raise ValueError(f"{path}: bad fold line {line!r}")
            folds.append([s for s in rest.strip().split(",") if s])
    return folds


def partitions_from_folds(
    sequences: list[LabeledSequence], folds: list[list[str]]
) -> list[tuple[list[LabeledSequence], list[LabeledSequence]]]:
    """Rebuild (train, test) partitions from stored test folds."""
    out = []
    for fold in folds:
        test_ids = set(fold)
        train = [s for s in sequences if s.speaker_id not in test_ids]
        test = [s for s in sequences if s.speaker_id in test_ids]
        out.append((train, test))
    return out


def write_dataset_csv(sequences: list[LabeledSequence], path: str) -> None:
    """Per-sample CSV rows `speaker_id,index,rp_value,label`."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(DATASET_HEADER + "\n")
        for seq in sequences:
            for i, (value, label) in enumerate(zip(seq.rp.samples, seq.labels)):
                fh.write(f"{seq.speaker_id},{i},{value:.9g},{int(label)}\n")


def read_dataset_csv(path: str, fps: float) -> list[LabeledSequence]:
    """Rebuild sequences from a dataset CSV; fps is not stored in the file."""
    per_speaker: dict[str, list[tuple[int, float, int]]] = {}
    order: list[str] = []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != DATASET_HEADER:
            raise ValueError(f"{path}: unexpected header {header!r}")
        for line in fh:
            line = line.strip()
            if not line:
                continue
            speaker, index, value, label = line.split(",")
            if speaker not in per_speaker:
                per_speaker[speaker] = []
                order.append(speaker)
            per_speaker[speaker].append((int(index), float(value), int(label)))

    sequences = []
    for speaker in order:
        rows = sorted(per_speaker[speaker])
        indices = [r[0] for r in rows]
        if indices != list(range(len(rows))):
            raise ValueError(f"{path}: speaker {speaker} has non-contiguous indices")
        rp = RespirationPattern(
            samples=np.array([r[1] for r in rows]), fps=fps, filtered=True
        )
        sequences.append(
            LabeledSequence(rp=rp, labels=np.array([r[2] for r in rows]), speaker_id=speaker)
        )
    return sequences
