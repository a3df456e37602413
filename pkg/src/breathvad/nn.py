"""Tiny float64 neural-net toolkit with hand-derived backward passes.

Layers cache whatever their backward pass needs on forward, accumulate
parameter gradients into `grads`, and return the input gradient from
`backward`. Everything runs on plain numpy arrays; a finiteness tripwire
after each op turns silent NaN/Inf into an immediate error.
"""

from __future__ import annotations

import struct

import numpy as np

CLAMP_LO = 1e-7
CLAMP_HI = 1.0 - 1e-7

_CKPT_MAGIC = 0x4256434B50543031  # "BVCKPT01"
_CKPT_VERSION = 1


def _finite(name: str, arr: np.ndarray) -> np.ndarray:
    if not np.isfinite(arr).all():
        raise FloatingPointError(f"non-finite values out of {name}")
    return arr


def _uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Layer:
    """Base layer: named params and matching accumulated gradients."""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def forward(self, x: np.ndarray, remember: bool = True) -> np.ndarray:
        raise NotImplementedError

    def backward(self, dy: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def zero_grads(self) -> None:
        for k, p in self.params.items():
            self.grads[k] = np.zeros_like(p)

    def leaves(self) -> list[tuple[str, "Layer"]]:
        """(prefix, sublayer) pairs for every parameter-bearing piece."""
        return [("", self)] if self.params else []


class Dense(Layer):
    """y = x @ W^T + b over the trailing axis; leading axes pass through."""

    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator):
        super().__init__()
        self.n_in, self.n_out = n_in, n_out
        self.params = {"W": _uniform(rng, (n_out, n_in), n_in), "b": np.zeros(n_out)}
        self.zero_grads()
        self._x = None

    def forward(self, x, remember=True):
        if x.shape[-1] != self.n_in:
            raise ValueError(f"dense expects trailing dim {self.n_in}, got {x.shape}")
        if remember:
            self._x = x
        return _finite("dense", x @ self.params["W"].T + self.params["b"])

    def backward(self, dy):
        x2 = self._x.reshape(-1, self.n_in)
        dy2 = dy.reshape(-1, self.n_out)
        self.grads["W"] += dy2.T @ x2
        self.grads["b"] += dy2.sum(axis=0)
        return _finite("dense.bwd", (dy2 @ self.params["W"]).reshape(self._x.shape))


class Conv1D(Layer):
    """Same-padded 1-D convolution with dilation over (batch, length, ch).

    Output length equals input length; the receptive field (k-1)*dilation+1
    is zero-padded half-and-half at the edges.
    """

    def __init__(self, in_channels: int, filters: int, kernel: int, dilation: int,
                 rng: np.random.Generator):
        super().__init__()
        if kernel < 1 or dilation < 1:
            raise ValueError("kernel and dilation must be >= 1")
        self.in_channels, self.filters = in_channels, filters
        self.kernel, self.dilation = kernel, dilation
        span = (kernel - 1) * dilation
        self.pad_left = span // 2
        self.pad_right = span - self.pad_left
        self.params = {
            "K": _uniform(rng, (filters, kernel, in_channels), kernel * in_channels),
            "b": np.zeros(filters),
        }
        self.zero_grads()
        self._x = None

    def _taps(self, x: np.ndarray) -> np.ndarray:
        # (B, T, k, C): tap j reads the padded input at offset j*dilation
        b, t, _ = x.shape
        xp = np.pad(x, ((0, 0), (self.pad_left, self.pad_right), (0, 0)))
        d = self.dilation
        return np.stack([xp[:, j * d: j * d + t, :] for j in range(self.kernel)], axis=2)

    def forward(self, x, remember=True):
        if x.ndim != 3 or x.shape[-1] != self.in_channels:
            raise ValueError(f"conv1d expects (batch, length, {self.in_channels}), got {x.shape}")
        if remember:
            self._x = x
        y = np.tensordot(self._taps(x), self.params["K"], axes=([2, 3], [1, 2]))
        return _finite("conv1d", y + self.params["b"])

    def backward(self, dy):
        x = self._x
        b, t, _ = x.shape
        taps = self._taps(x)  # rebuilt rather than cached; it is k copies of x
        self.grads["K"] += np.tensordot(dy, taps, axes=([0, 1], [0, 1]))
        self.grads["b"] += dy.sum(axis=(0, 1))
        dtaps = np.tensordot(dy, self.params["K"], axes=([2], [0]))  # (B,T,k,C)
        dxp = np.zeros((b, t + self.pad_left + self.pad_right, self.in_channels))
        d = self.dilation
        for j in range(self.kernel):
            dxp[:, j * d: j * d + t, :] += dtaps[:, :, j, :]
        return _finite("conv1d.bwd", dxp[:, self.pad_left: self.pad_left + t, :])


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class LSTM(Layer):
    """Unidirectional LSTM over (batch, time, features), zero initial state.

    Gate layout along the last weight axis is input, forget, candidate,
    output; the forget bias starts at 1.0 so early training does not flush
    the cell. Backward is full backpropagation through time.
    """

    def __init__(self, n_in: int, units: int, rng: np.random.Generator):
        super().__init__()
        self.n_in, self.units = n_in, units
        self.params = {
            "Wx": _uniform(rng, (n_in, 4 * units), n_in),
            "Wh": _uniform(rng, (units, 4 * units), units),
            "b": np.concatenate(
                [np.zeros(units), np.ones(units), np.zeros(2 * units)]
            ),
        }
        self.zero_grads()
        self._cache = None

    def forward(self, x, remember=True):
        if x.ndim != 3 or x.shape[-1] != self.n_in:
            raise ValueError(f"lstm expects (batch, time, {self.n_in}), got {x.shape}")
        b, t, _ = x.shape
        u = self.units
        p = self.params
        xw = x.reshape(b * t, self.n_in) @ p["Wx"]
        xw = xw.reshape(b, t, 4 * u) + p["b"]

        gates = np.empty((b, t, 4 * u))
        cells = np.empty((b, t, u))
        tanhc = np.empty((b, t, u))
        h_seq = np.empty((b, t, u))
        h = np.zeros((b, u))
        c = np.zeros((b, u))
        for step in range(t):
            z = xw[:, step] + h @ p["Wh"]
            i = _sigmoid(z[:, :u])
            f = _sigmoid(z[:, u:2 * u])
            g = np.tanh(z[:, 2 * u:3 * u])
            o = _sigmoid(z[:, 3 * u:])
            c = f * c + i * g
            tc = np.tanh(c)
            h = o * tc
            gates[:, step, :u] = i
            gates[:, step, u:2 * u] = f
            gates[:, step, 2 * u:3 * u] = g
            gates[:, step, 3 * u:] = o
            cells[:, step] = c
            tanhc[:, step] = tc
            h_seq[:, step] = h
        if remember:
            self._cache = (x, gates, cells, tanhc, h_seq)
        return _finite("lstm", h_seq)

    def backward(self, dy):
        x, gates, cells, tanhc, h_seq = self._cache
        b, t, _ = x.shape
        u = self.units
        p = self.params
        wh_t = p["Wh"].T

        dz_all = np.empty((b, t, 4 * u))
        dh_next = np.zeros((b, u))
        dc_next = np.zeros((b, u))
        for step in range(t - 1, -1, -1):
            i = gates[:, step, :u]
            f = gates[:, step, u:2 * u]
            g = gates[:, step, 2 * u:3 * u]
            o = gates[:, step, 3 * u:]
            tc = tanhc[:, step]
            c_prev = cells[:, step - 1] if step > 0 else np.zeros((b, u))

            dh = dy[:, step] + dh_next
            dc = dh * o * (1.0 - tc * tc) + dc_next
            dz = dz_all[:, step]
            dz[:, :u] = dc * g * i * (1.0 - i)
            dz[:, u:2 * u] = dc * c_prev * f * (1.0 - f)
            dz[:, 2 * u:3 * u] = dc * i * (1.0 - g * g)
            dz[:, 3 * u:] = dh * tc * o * (1.0 - o)
            dh_next = dz @ wh_t
            dc_next = dc * f

        h_prev = np.concatenate([np.zeros((b, 1, u)), h_seq[:, :-1]], axis=1)
        dz2 = dz_all.reshape(b * t, 4 * u)
        self.grads["Wx"] += x.reshape(b * t, self.n_in).T @ dz2
        self.grads["Wh"] += h_prev.reshape(b * t, u).T @ dz2
        self.grads["b"] += dz2.sum(axis=0)
        dx = (dz2 @ p["Wx"].T).reshape(b, t, self.n_in)
        return _finite("lstm.bwd", dx)


class Bidirectional(Layer):
    """Runs two independent recurrent layers, one on the reversed sequence.

    Output concatenates forward features first, so width doubles.
    """

    def __init__(self, forward_layer: LSTM, backward_layer: LSTM):
        super().__init__()
        if forward_layer.units != backward_layer.units:
            raise ValueError("direction widths differ")
        self.fwd = forward_layer
        self.bwd = backward_layer

    @property
    def units(self) -> int:
        return self.fwd.units

    def forward(self, x, remember=True):
        hf = self.fwd.forward(x, remember)
        hb = self.bwd.forward(x[:, ::-1], remember)[:, ::-1]
        return np.concatenate([hf, hb], axis=-1)

    def backward(self, dy):
        u = self.units
        dxf = self.fwd.backward(dy[..., :u])
        dxb = self.bwd.backward(dy[:, ::-1, u:])[:, ::-1]
        return dxf + dxb

    def zero_grads(self):
        self.fwd.zero_grads()
        self.bwd.zero_grads()

    def leaves(self):
        return [("fwd." + p, l) for p, l in self.fwd.leaves()] + [
            ("bwd." + p, l) for p, l in self.bwd.leaves()
        ]


class TimeDistributed(Layer):
    """Applies the wrapped layer independently per time step.

    (batch, time, *rest) is folded to (batch*time, *rest), run through the
    inner layer, and unfolded.
    """

    def __init__(self, inner: Layer):
        super().__init__()
        self.inner = inner
        self._lead = None

    def forward(self, x, remember=True):
        if x.ndim < 3:
            raise ValueError("time-distributed input needs (batch, time, ...)")
        self._lead = x.shape[:2]
        y = self.inner.forward(x.reshape(-1, *x.shape[2:]), remember)
        return y.reshape(*self._lead, *y.shape[1:])

    def backward(self, dy):
        dx = self.inner.backward(dy.reshape(-1, *dy.shape[2:]))
        return dx.reshape(*self._lead, *dx.shape[1:])

    def zero_grads(self):
        self.inner.zero_grads()

    def leaves(self):
        return self.inner.leaves()


class Relu(Layer):
    def __init__(self):
        super().__init__()
        self._pos = None

    def forward(self, x, remember=True):
        pos = x > 0
        if remember:
            self._pos = pos
        return np.where(pos, x, 0.0)

    def backward(self, dy):
        return np.where(self._pos, dy, 0.0)


class Tanh(Layer):
    def __init__(self):
        super().__init__()
        self._y = None

    def forward(self, x, remember=True):
        y = np.tanh(x)
        if remember:
            self._y = y
        return y

    def backward(self, dy):
        return dy * (1.0 - self._y * self._y)


class Sigmoid(Layer):
    def __init__(self):
        super().__init__()
        self._y = None

    def forward(self, x, remember=True):
        y = _sigmoid(x)
        if remember:
            self._y = y
        return y

    def backward(self, dy):
        return dy * self._y * (1.0 - self._y)


def weighted_bce(
    pred: np.ndarray,
    target: np.ndarray,
    w_pos: float = 1.0,
    w_neg: float = 1.0,
    mask: np.ndarray | None = None,
) -> tuple[float, np.ndarray]:
    """Class-weighted binary cross entropy, averaged over unmasked samples.

    Predictions are clamped to [1e-7, 1 - 1e-7] before the logs; samples
    where the clamp binds get zero gradient (the clamp is flat there).
    Returns (loss, dloss/dpred).
    """
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError("pred and target shapes differ")
    if mask is None:
        mask = np.ones(pred.shape, dtype=bool)
    if mask.shape != pred.shape:
        raise ValueError("mask shape differs")
    n = int(np.count_nonzero(mask))
    if n == 0:
        raise ValueError("empty mask: no samples to average over")

    inside = (pred > CLAMP_LO) & (pred < CLAMP_HI)
    p = np.clip(pred, CLAMP_LO, CLAMP_HI)
    term = w_pos * target * np.log(p) + w_neg * (1.0 - target) * np.log1p(-p)
    loss = -float(term[mask].sum()) / n

    dpred = np.zeros_like(p)
    live = mask & inside
    dpred[live] = (
        -w_pos * target[live] / p[live] + w_neg * (1.0 - target[live]) / (1.0 - p[live])
    ) / n
    _finite("weighted_bce", dpred)
    return loss, dpred


class AdamState:
    """First/second moment estimates plus the shared step counter."""

    def __init__(self):
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t: int = 0


def adam_step(
    params: dict[str, np.ndarray],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> AdamState:
    """One in-place adaptive-moment update with bias correction."""
    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    for name, p in params.items():
        g = grads[name]
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
        _finite("adam", p)
    return state


def write_checkpoint(path: str, arch: str, width: int, tensors: dict[str, np.ndarray]) -> None:
    """Versioned binary dump of named float64 tensors; round-trips bit-exactly."""
    arch_b = arch.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<qqq", _CKPT_MAGIC, _CKPT_VERSION, width))
        fh.write(struct.pack("<q", len(arch_b)))
        fh.write(arch_b)
        fh.write(struct.pack("<q", len(tensors)))
        for name, tensor in tensors.items():
            name_b = name.encode("utf-8")
            # asarray keeps rank-0 tensors rank 0; ascontiguousarray would not
            arr = np.asarray(tensor, dtype="<f8", order="C")
            fh.write(struct.pack("<q", len(name_b)))
            fh.write(name_b)
            fh.write(struct.pack("<q", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}q", *arr.shape))
            fh.write(arr.tobytes())


def read_checkpoint(path: str) -> tuple[str, int, dict[str, np.ndarray]]:
    """Inverse of write_checkpoint; returns (arch, width, tensors)."""
    with open(path, "rb") as fh:
        magic, version, width = struct.unpack("<qqq", fh.read(24))
        if magic != _CKPT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        if version != _CKPT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        (arch_len,) = struct.unpack("<q", fh.read(8))
        arch = fh.read(arch_len).decode("utf-8")
        (n_tensors,) = struct.unpack("<q", fh.read(8))
        tensors = {}
        for _ in range(n_tensors):
            (name_len,) = struct.unpack("<q", fh.read(8))
            name = fh.read(name_len).decode("utf-8")
            (rank,) = struct.unpack("<q", fh.read(8))
            shape = struct.unpack(f"<{rank}q", fh.read(8 * rank))
            count = int(np.prod(shape)) if rank else 1
            data = np.frombuffer(fh.read(8 * count), dtype="<f8").reshape(shape)
            tensors[name] = data.astype(np.float64).copy()
        return arch, width, tensors
