"""Small dense numerical core with hand-written backward passes.

Everything works on batches: vectors are rows of a ``(B, n)`` array.  Each
forward function has a ``*_backward`` partner that consumes the cache the
forward returned, accumulates parameter gradients in place and returns
input gradients.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping

import numpy as np

DEFAULT_DTYPE = np.float32


def sigmoid(x):
    # tanh form is overflow-free for any |x|.
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def softmax(logits, axis=-1):
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(logits, axis=-1):
    z = logits - logits.max(axis=axis, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


class Parameter:
    """A value tensor with its gradient and Adam moment buffers."""

    __slots__ = ("value", "grad", "adam_m", "adam_v", "step_count")

    def __init__(self, value):
        self.value = value
        self.grad = np.zeros_like(value)
        self.adam_m = np.zeros_like(value)
        self.adam_v = np.zeros_like(value)
        self.step_count = 0

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad.fill(0)

    def astype(self, dtype):
        p = Parameter(self.value.astype(dtype))
        p.adam_m = self.adam_m.astype(dtype)
        p.adam_v = self.adam_v.astype(dtype)
        p.step_count = self.step_count
        return p


def init_uniform(rng, shape, fan_in, dtype=DEFAULT_DTYPE):
    bound = 1.0 / np.sqrt(fan_in)
    return Parameter(rng.uniform(-bound, bound, size=shape).astype(dtype))


def init_zeros(shape, dtype=DEFAULT_DTYPE):
    return Parameter(np.zeros(shape, dtype=dtype))


# ---------------------------------------------------------------- linear

@dataclass
class Linear:
    W: Parameter
    b: Parameter

    @classmethod
    def create(cls, rng, n_in, n_out, dtype=DEFAULT_DTYPE):
        return cls(init_uniform(rng, (n_in, n_out), n_in, dtype), init_zeros((n_out,), dtype))

    def params(self):
        return {"W": self.W, "b": self.b}


def linear(x, p: Linear):
    return x @ p.W.value + p.b.value, x


def linear_backward(dy, x, p: Linear):
    p.W.grad += x.T @ dy
    p.b.grad += dy.sum(axis=0)
    return dy @ p.W.value.T


# ---------------------------------------------------------------- embedding

def embedding_lookup(table: Parameter, idx):
    return table.value[idx]


def embedding_backward(dout, idx, table: Parameter):
    np.add.at(table.grad, idx.reshape(-1), dout.reshape(-1, dout.shape[-1]))


# ---------------------------------------------------------------- recurrent cells

@dataclass
class RecurrentCellParams:
    kind: str
    input_size: int
    hidden_size: int
    Wx: Parameter
    Wh: Parameter
    b: Parameter

    @property
    def n_gates(self):
        return 4 if self.kind == "lstm" else 3

    @classmethod
    def create(cls, kind, input_size, hidden_size, rng, dtype=DEFAULT_DTYPE):
        kind = kind.lower()
        if kind not in ("lstm", "gru"):
            raise ValueError(f"unknown cell kind {kind!r}")
        g = 4 if kind == "lstm" else 3
        fan_in = input_size + hidden_size
        Wx = init_uniform(rng, (input_size, g * hidden_size), fan_in, dtype)
        Wh = init_uniform(rng, (hidden_size, g * hidden_size), fan_in, dtype)
        b = init_zeros((g * hidden_size,), dtype)
        if kind == "lstm":
            b.value[hidden_size:2 * hidden_size] = 1.0  # forget gate
        return cls(kind, input_size, hidden_size, Wx, Wh, b)

    def params(self):
        return {"Wx": self.Wx, "Wh": self.Wh, "b": self.b}

    def _check(self, x, h):
        if x.shape[-1] != self.input_size or h.shape[-1] != self.hidden_size:
            raise ValueError(
                f"dimension mismatch: x {x.shape[-1]} vs {self.input_size}, "
                f"h {h.shape[-1]} vs {self.hidden_size}")


def lstm_forward(x, h, c, p: RecurrentCellParams):
    """One LSTM step; gate order input, forget, candidate, output."""
    p._check(x, h)
    H = p.hidden_size
    z = x @ p.Wx.value + h @ p.Wh.value + p.b.value
    i = sigmoid(z[..., :H])
    f = sigmoid(z[..., H:2 * H])
    g = np.tanh(z[..., 2 * H:3 * H])
    o = sigmoid(z[..., 3 * H:])
    c_new = f * c + i * g
    tc = np.tanh(c_new)
    h_new = o * tc
    return h_new, c_new, (x, h, c, i, f, g, o, tc)


def lstm_step(x, h, c, p: RecurrentCellParams):
    h_new, c_new, _ = lstm_forward(x, h, c, p)
    return h_new, c_new


def lstm_backward(dh, dc, cache, p: RecurrentCellParams):
    """Returns (dx, dh_prev, dc_prev)."""
    x, h, c, i, f, g, o, tc = cache
    do = dh * tc
    dc = dc + dh * o * (1.0 - tc * tc)
    di = dc * g
    df = dc * c
    dg = dc * i
    dc_prev = dc * f
    dz = np.concatenate(
        [di * i * (1 - i), df * f * (1 - f), dg * (1 - g * g), do * o * (1 - o)], axis=-1)
    p.Wx.grad += x.T @ dz
    p.Wh.grad += h.T @ dz
    p.b.grad += dz.sum(axis=0)
    return dz @ p.Wx.value.T, dz @ p.Wh.value.T, dc_prev


def gru_forward(x, h, p: RecurrentCellParams):
    """One GRU step: h' = (1 - u) * n + u * h, n = tanh(x Wn + (r * h) Un + bn)."""
    p._check(x, h)
    H = p.hidden_size
    zx = x @ p.Wx.value + p.b.value
    zh = h @ p.Wh.value[:, :2 * H]
    r = sigmoid(zx[..., :H] + zh[..., :H])
    u = sigmoid(zx[..., H:2 * H] + zh[..., H:])
    rh = r * h
    n = np.tanh(zx[..., 2 * H:] + rh @ p.Wh.value[:, 2 * H:])
    h_new = (1 - u) * n + u * h
    return h_new, (x, h, r, u, rh, n)


def gru_step(x, h, p: RecurrentCellParams):
    return gru_forward(x, h, p)[0]


def gru_backward(dh, cache, p: RecurrentCellParams):
    """Returns (dx, dh_prev)."""
    x, h, r, u, rh, n = cache
    H = p.hidden_size
    Un = p.Wh.value[:, 2 * H:]
    dn = dh * (1 - u)
    du = dh * (h - n)
    dh_prev = dh * u
    dzn = dn * (1 - n * n)
    drh = dzn @ Un.T
    dr = drh * h
    dh_prev = dh_prev + drh * r
    dzr = dr * r * (1 - r)
    dzu = du * u * (1 - u)
    dz_ru = np.concatenate([dzr, dzu], axis=-1)
    dzx = np.concatenate([dz_ru, dzn], axis=-1)
    p.Wx.grad += x.T @ dzx
    p.b.grad += dzx.sum(axis=0)
    p.Wh.grad[:, :2 * H] += h.T @ dz_ru
    p.Wh.grad[:, 2 * H:] += rh.T @ dzn
    dh_prev = dh_prev + dz_ru @ p.Wh.value[:, :2 * H].T
    return dzx @ p.Wx.value.T, dh_prev


# ---------------------------------------------------------------- losses

def softmax_cross_entropy(logits, target):
    """Loss and gradient for a single logit vector and class index."""
    logits = np.asarray(logits, dtype=np.float64)
    if not 0 <= target < logits.shape[-1]:
        raise IndexError(f"target {target} out of range for {logits.shape[-1]} classes")
    lp = log_softmax(logits)
    grad = np.exp(lp)
    grad[target] -= 1.0
    return float(-lp[target]), grad


def batch_softmax_cross_entropy(logits, targets, weights=None):
    """Weighted sum of per-row cross-entropy and its gradient w.r.t. logits.

    ``weights`` (per row) doubles as a padding mask.
    """
    n = logits.shape[0]
    lp = log_softmax(logits)
    rows = np.arange(n)
    nll = -lp[rows, targets]
    w = np.ones(n, dtype=logits.dtype) if weights is None else weights.astype(logits.dtype)
    grad = np.exp(lp)
    grad[rows, targets] -= 1.0
    grad *= w[:, None]
    return float((nll * w).sum()), grad, nll


def sigmoid_binary_cross_entropy(logits, targets, weights=None):
    """Elementwise BCE with logits; returns (weighted sum, grad)."""
    t = targets.astype(logits.dtype)
    loss = np.maximum(logits, 0) - logits * t + np.log1p(np.exp(-np.abs(logits)))
    grad = sigmoid(logits) - t
    if weights is not None:
        loss = loss * weights
        grad = grad * weights
    return float(loss.sum()), grad


# ---------------------------------------------------------------- optimisation

@dataclass
class AdamConfig:
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ValueError("Adam betas must lie in (0, 1)")


def adam_update(p: Parameter, cfg: AdamConfig):
    p.step_count += 1
    g = p.grad
    p.adam_m *= cfg.beta1
    p.adam_m += (1 - cfg.beta1) * g
    p.adam_v *= cfg.beta2
    p.adam_v += (1 - cfg.beta2) * g * g
    mhat = p.adam_m / (1 - cfg.beta1 ** p.step_count)
    vhat = p.adam_v / (1 - cfg.beta2 ** p.step_count)
    p.value -= (cfg.learning_rate * mhat / (np.sqrt(vhat) + cfg.epsilon)).astype(p.value.dtype)
    p.grad.fill(0)
    return p


def sgd_update(p: Parameter, learning_rate: float):
    p.step_count += 1
    p.value -= (learning_rate * p.grad).astype(p.value.dtype)
    p.grad.fill(0)
    return p


def global_norm(grads: Iterable[np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.vdot(g, g)) for g in grads)))


def clip_grad_norm(grads: Iterable[np.ndarray], max_norm: float = 1.0) -> float:
    """Scale ``grads`` in place so their global L2 norm is at most ``max_norm``."""
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    grads = list(grads)
    norm = global_norm(grads)
    if norm <= max_norm:
        return 1.0
    scale = max_norm / norm
    for g in grads:
        g *= scale
    return scale


# ---------------------------------------------------------------- gradient checking

@dataclass
class GradCheckReport:
    max_rel_error: float
    worst: tuple = ()
    n_checked: int = 0
    errors: dict = field(default_factory=dict)

    def passed(self, tol):
        return self.max_rel_error < tol


def grad_check(f: Callable[[], float], params: Mapping[str, np.ndarray],
               analytic: Mapping[str, np.ndarray], eps: float = 1e-5,
               max_per_param: int | None = None, seed: int = 0,
               floor: float = 1e-6) -> GradCheckReport:
    """Compare analytic gradients with central differences.

    ``f`` recomputes the scalar loss from the current contents of the arrays
    in ``params``, which are perturbed in place and restored.  Relative error
    is ``|a - n| / max(|a| + |n|, floor)``.
    """
    rng = np.random.default_rng(seed)
    worst = 0.0
    where = ()
    per = {}
    n = 0
    for name, arr in params.items():
        if arr.dtype != np.float64:
            raise TypeError(f"grad_check needs float64 parameters ({name} is {arr.dtype})")
        flat = arr.reshape(-1)
        grad = np.asarray(analytic[name]).reshape(-1)
        idx = np.arange(flat.size)
        if max_per_param is not None and flat.size > max_per_param:
            idx = np.sort(rng.choice(flat.size, size=max_per_param, replace=False))
        pw = 0.0
        for i in idx:
            old = flat[i]
            flat[i] = old + eps
            fp = f()
            flat[i] = old - eps
            fm = f()
            flat[i] = old
            if not (np.isfinite(fp) and np.isfinite(fm)):
                raise FloatingPointError(f"non-finite loss while perturbing {name}[{i}]")
            num = (fp - fm) / (2 * eps)
            rel = abs(grad[i] - num) / max(abs(grad[i]) + abs(num), floor)
            pw = max(pw, rel)
            if rel > worst:
                worst, where = rel, (name, int(i), float(grad[i]), float(num))
            n += 1
        per[name] = pw
    return GradCheckReport(worst, where, n, per)


# ---------------------------------------------------------------- checkpoints

MAGIC = b"PLEMBT\x00\x01"
FORMAT_VERSION = 1
_DTYPES = {"f4": np.float32, "f8": np.float64, "i4": np.int32, "i8": np.int64, "u1": np.uint8}
_CODES = {np.dtype(v): k for k, v in _DTYPES.items()}


def save_tensors(path, tensors: Mapping[str, np.ndarray], meta: dict | None = None):
    """Write named tensors plus a JSON metadata blob.

    Layout: magic, u16 version, u32 meta length, meta (UTF-8 JSON), u32
    tensor count, then per tensor: u16 name length, name, 2-byte dtype code,
    u8 ndim, u64 dims, little-endian payload.
    """
    meta_b = json.dumps(meta or {}, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<HI", FORMAT_VERSION, len(meta_b)))
        fh.write(meta_b)
        fh.write(struct.pack("<I", len(tensors)))
        for name, arr in tensors.items():
            arr = np.asarray(arr)
            code = _CODES.get(arr.dtype)
            if code is None:
                raise TypeError(f"unsupported dtype {arr.dtype} for {name}")
            nb = name.encode("utf-8")
            fh.write(struct.pack("<H", len(nb)))
            fh.write(nb)
            fh.write(code.encode("ascii"))
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<")).tobytes())


def load_tensors(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        data = fh.read()
    if data[:len(MAGIC)] != MAGIC:
        raise ValueError(f"{path}: not a tensor file")
    off = len(MAGIC)
    version, meta_len = struct.unpack_from("<HI", data, off)
    if version != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported format version {version}")
    off += 6
    meta = json.loads(data[off:off + meta_len].decode("utf-8"))
    off += meta_len
    (count,) = struct.unpack_from("<I", data, off)
    off += 4
    out = {}
    for _ in range(count):
        (nl,) = struct.unpack_from("<H", data, off)
        off += 2
        name = data[off:off + nl].decode("utf-8")
        off += nl
        dt = np.dtype(_DTYPES[data[off:off + 2].decode("ascii")]).newbyteorder("<")
        off += 2
        (ndim,) = struct.unpack_from("<B", data, off)
        off += 1
        shape = struct.unpack_from(f"<{ndim}Q", data, off)
        off += 8 * ndim
        size = int(np.prod(shape)) * dt.itemsize
        out[name] = np.frombuffer(data, dtype=dt, count=int(np.prod(shape)), offset=off).reshape(shape).astype(dt.newbyteorder("="))
        off += size
    return out, meta
