"""The four window-to-window VAD architectures, training, and inference.

Every model maps a width-w window of the respiration pattern to w speech
probabilities. Whole sequences are handled by chunking, running the model
per window, and reassembling (concatenation or overlap averaging).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import dataset as ds
from . import nn

ARCHS = ("mlp", "cnn1d", "bilstm", "convlstm")

DEFAULT_WIDTH = 100
CNN_REPEAT = 30
THRESHOLD = 0.5

PREDICTION_HEADER = "index,time_s,probability,binary"


@dataclass
class ModelSpec:
    arch: str
    width: int = DEFAULT_WIDTH

    def __post_init__(self):
        if self.arch not in ARCHS:
            raise ValueError(f"unknown arch {self.arch!r}, expected one of {ARCHS}")
        if self.width < 1:
            raise ValueError("width must be >= 1")


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 32
    lr: float = 1e-3
    seed: int = 0
    w_pos: float | None = None  # derived from the training labels when unset
    w_neg: float | None = None
    chunk_mode: str = ds.MODE_OVERLAP
    # optional cap on minibatches per epoch; trades coverage for wall time
    max_batches_per_epoch: int | None = None

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.lr <= 0:
            raise ValueError("epochs, batch_size and lr must be positive")
        if self.chunk_mode not in (ds.MODE_OVERLAP, ds.MODE_NON_OVERLAP):
            raise ValueError(f"unknown chunk mode {self.chunk_mode!r}")
        if self.max_batches_per_epoch is not None and self.max_batches_per_epoch < 1:
            raise ValueError("max_batches_per_epoch must be >= 1 when set")


class _BroadcastSteps(nn.Layer):
    """(batch, 1) -> (batch, w); the gradient sums over the copies."""

    def __init__(self, width: int):
        super().__init__()
        self.width = width

    def forward(self, x, remember=True):
        return np.repeat(x, self.width, axis=1)

    def backward(self, dy):
        return dy.sum(axis=1, keepdims=True)


class _ToSteps(nn.Layer):
    """(batch, w) -> (batch, w, 1)."""

    def forward(self, x, remember=True):
        return x[..., None]

    def backward(self, dy):
        return dy[..., 0]


class _FromSteps(nn.Layer):
    """(batch, w, 1) -> (batch, w)."""

    def forward(self, x, remember=True):
        return x[..., 0]

    def backward(self, dy):
        return dy[..., None]


class _RepeatFeatures(nn.Layer):
    """(batch, w) -> (batch, w, r, 1): each step's scalar repeated r times."""

    def __init__(self, repeat: int):
        super().__init__()
        self.repeat = repeat

    def forward(self, x, remember=True):
        return np.repeat(x[:, :, None], self.repeat, axis=2)[..., None]

    def backward(self, dy):
        return dy[..., 0].sum(axis=2)


class _MergeTrailing(nn.Layer):
    """(batch, w, a, b) -> (batch, w, a*b)."""

    def __init__(self):
        super().__init__()
        self._shape = None

    def forward(self, x, remember=True):
        if remember:
            self._shape = x.shape
        return x.reshape(*x.shape[:2], -1)

    def backward(self, dy):
        return dy.reshape(self._shape)


class Model:
    """An ordered layer stack with named parameters for checkpointing."""

    def __init__(self, spec: ModelSpec, layers: list[nn.Layer]):
        self.spec = spec
        self.layers = layers

    def forward(self, x: np.ndarray, remember: bool = True) -> np.ndarray:
        for layer in self.layers:
            x = layer.forward(x, remember)
        return x

    def backward(self, dy: np.ndarray) -> np.ndarray:
        for layer in reversed(self.layers):
            dy = layer.backward(dy)
        return dy

    def zero_grads(self) -> None:
        for layer in self.layers:
            layer.zero_grads()

    def named_params(self) -> dict[str, np.ndarray]:
        return self._named("params")

    def named_grads(self) -> dict[str, np.ndarray]:
        return self._named("grads")

    def _named(self, kind: str) -> dict[str, np.ndarray]:
        out: dict[str, np.ndarray] = {}
        for i, layer in enumerate(self.layers):
            for prefix, leaf in layer.leaves():
                for name, arr in getattr(leaf, kind).items():
                    out[f"l{i:02d}.{prefix}{name}"] = arr
        return out


def build_model(spec: ModelSpec, seed: int = 0) -> Model:
    """Deterministically initialized model for one of the four architectures.

    mlp: the whole window through a shared dense stack, one probability
    broadcast to every step. cnn1d: each step's scalar repeated 30 times,
    convolved per step, then a shared dense head. bilstm: two stacked
    bidirectional recurrent layers over the window. convlstm: dilated
    temporal convolutions feeding the same recurrent stack.
    """
    rng = np.random.default_rng(seed)
    w = spec.width

    if spec.arch == "mlp":
        layers = [
            nn.Dense(w, 128, rng), nn.Relu(),
            nn.Dense(128, 64, rng), nn.Relu(),
            nn.Dense(64, 64, rng), nn.Relu(),
            nn.Dense(64, 64, rng), nn.Relu(),
            nn.Dense(64, 1, rng), nn.Sigmoid(),
            _BroadcastSteps(w),
        ]
    elif spec.arch == "cnn1d":
        layers = [
            _RepeatFeatures(CNN_REPEAT),
            nn.TimeDistributed(nn.Conv1D(1, 32, 3, 1, rng)), nn.Tanh(),
            nn.TimeDistributed(nn.Conv1D(32, 32, 3, 1, rng)), nn.Tanh(),
            _MergeTrailing(),
            nn.Dense(CNN_REPEAT * 32, 64, rng), nn.Relu(),
            nn.Dense(64, 128, rng), nn.Relu(),
            nn.Dense(128, 1, rng), nn.Sigmoid(),
            _FromSteps(),
        ]
    elif spec.arch == "bilstm":
        layers = [
            _ToSteps(),
            nn.Bidirectional(nn.LSTM(1, 128, rng), nn.LSTM(1, 128, rng)),
            nn.Bidirectional(nn.LSTM(256, 128, rng), nn.LSTM(256, 128, rng)),
            nn.Dense(256, 32, rng), nn.Relu(),
            nn.Dense(32, 1, rng), nn.Sigmoid(),
            _FromSteps(),
        ]
    elif spec.arch == "convlstm":
        layers = [
            _ToSteps(),
            nn.Conv1D(1, 16, 5, 3, rng), nn.Tanh(),
            nn.Conv1D(16, 16, 5, 3, rng), nn.Tanh(),
            nn.Bidirectional(nn.LSTM(16, 128, rng), nn.LSTM(16, 128, rng)),
            nn.Bidirectional(nn.LSTM(256, 128, rng), nn.LSTM(256, 128, rng)),
            nn.Dense(256, 32, rng), nn.Relu(),
            nn.Dense(32, 1, rng), nn.Sigmoid(),
            _FromSteps(),
        ]
    else:  # unreachable; ModelSpec validates
        raise ValueError(spec.arch)
    return Model(spec, layers)


def _stack_chunks(chunks) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Concatenate one or more ChunkSets into (inputs, labels, valid_mask)."""
    if isinstance(chunks, ds.ChunkSet):
        chunks = [chunks]
    if not chunks:
        raise ValueError("no chunks to train on")
    widths = {c.width for c in chunks}
    if len(widths) != 1:
        raise ValueError(f"mixed chunk widths {sorted(widths)}")
    x = np.concatenate([c.inputs for c in chunks])
    y = np.concatenate([c.labels for c in chunks]).astype(np.float64)
    m = np.concatenate([c.mask() for c in chunks])
    return x, y, m


def train(model: Model, chunks, cfg: TrainConfig) -> tuple[Model, list[float]]:
    """Minibatch weighted-BCE training; returns per-epoch mean losses.

    Padded window positions are masked out of the loss. Shuffling draws
    from cfg.seed only, so identical inputs give identical histories.
    """
    x, y, mask = _stack_chunks(chunks)
    if x.shape[1] != model.spec.width:
        raise ValueError(f"chunk width {x.shape[1]} != model width {model.spec.width}")
    w_pos, w_neg = ds.class_weights(y[mask])
    if cfg.w_pos is not None:
        w_pos = cfg.w_pos
    if cfg.w_neg is not None:
        w_neg = cfg.w_neg

    rng = np.random.default_rng(cfg.seed)
    state = nn.AdamState()
    params = model.named_params()
    history: list[float] = []
    n = x.shape[0]
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        if cfg.max_batches_per_epoch is not None:
            order = order[: cfg.max_batches_per_epoch * cfg.batch_size]
        loss_sum = 0.0
        valid_sum = 0
        for start in range(0, order.shape[0], cfg.batch_size):
            idx = order[start: start + cfg.batch_size]
            mb = mask[idx]
            n_valid = int(np.count_nonzero(mb))
            if n_valid == 0:
                continue
            model.zero_grads()
            pred = model.forward(x[idx])
            loss, dpred = nn.weighted_bce(pred, y[idx], w_pos, w_neg, mb)
            model.backward(dpred)
            nn.adam_step(params, model.named_grads(), state, lr=cfg.lr)
            loss_sum += loss * n_valid
            valid_sum += n_valid
        history.append(loss_sum / valid_sum)
    return model, history


def predict_sequence(model: Model, rp, mode: str, batch_size: int = 256) -> np.ndarray:
    """Per-sample speech probabilities for a whole respiration pattern.

    The pattern is chunked at the model width, each window scored, and the
    windows reassembled: overlap mode averages every window covering a
    sample, non_overlap concatenates and drops the padded tail.
    """
    n = len(rp)
    seq = ds.LabeledSequence(rp=rp, labels=np.zeros(n, dtype=np.int64), speaker_id="_query")
    chunks = ds.chunk(seq, model.spec.width, mode)
    probs = np.empty_like(chunks.inputs)
    for start in range(0, chunks.n_chunks, batch_size):
        stop = min(start + batch_size, chunks.n_chunks)
        probs[start:stop] = model.forward(chunks.inputs[start:stop], remember=False)
    return ds.reassemble(chunks, n, values=probs)


def save_model(model: Model, path: str) -> None:
    nn.write_checkpoint(path, model.spec.arch, model.spec.width, model.named_params())


def load_model(path: str) -> Model:
    """Rebuild a model from a checkpoint, bit-exact parameter restore."""
    arch, width, tensors = nn.read_checkpoint(path)
    model = build_model(ModelSpec(arch=arch, width=width), seed=0)
    params = model.named_params()
    if set(params) != set(tensors):
        raise ValueError(f"{path}: checkpoint tensors do not match arch {arch!r}")
    for name, arr in params.items():
        if arr.shape != tensors[name].shape:
            raise ValueError(f"{path}: shape mismatch for {name}")
        arr[...] = tensors[name]
    return model


def write_predictions(probs: np.ndarray, fps: float, path: str) -> None:
    """CSV rows `index,time_s,probability,binary` (binary: prob >= 0.5)."""
    probs = np.asarray(probs)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(PREDICTION_HEADER + "\n")
        for i, p in enumerate(probs):
            fh.write(f"{i},{i / fps:.9g},{float(p)!r},{int(p >= THRESHOLD)}\n")


def read_predictions(path: str) -> tuple[np.ndarray, np.ndarray, float]:
    """Read a prediction CSV back; returns (probs, binary, fps)."""
    probs = []
    binary = []
    times = []
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if header != PREDICTION_HEADER:
            raise ValueError(f"{path}: unexpected header {header!r}")
        for line in fh:
            _, time_s, prob, flag = line.strip().split(",")
            times.append(float(time_s))
            probs.append(float(prob))
            binary.append(int(flag))
    if len(times) < 2 or times[-1] <= 0:
        raise ValueError(f"{path}: too short to recover the sampling rate")
    fps = round((len(times) - 1) / times[-1], 6)  # undo 9-sig-digit truncation
    return np.array(probs), np.array(binary, dtype=np.int64), fps
