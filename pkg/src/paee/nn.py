"""GRU / dense building blocks with hand-written backward passes, and the hybrid model.

All arrays are float64.  Recurrent inputs are batched as (batch, time, features).
The GRU cell uses

    z = sigmoid(x W_z + h U_z + b_z)
    r = sigmoid(x W_r + h U_r + b_r)
    c = tanh(x W_h + (r * h) U_h + b_h)
    h' = (1 - z) * h + z * c
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from numba import njit

from .errors import FormatError, MissingCache, ShapeMismatch, StaticBranchMissing

RELU = "relu"
LINEAR = "linear"
HIDDEN_ACTIVATION = RELU

FORMAT_VERSION = 1


# ---------------------------------------------------------------------------
# GRU layer


@dataclass
class GruParams:
    W_z: np.ndarray
    W_r: np.ndarray
    W_h: np.ndarray
    U_z: np.ndarray
    U_r: np.ndarray
    U_h: np.ndarray
    b_z: np.ndarray
    b_r: np.ndarray
    b_h: np.ndarray

    NAMES = ("W_z", "W_r", "W_h", "U_z", "U_r", "U_h", "b_z", "b_r", "b_h")

    def __post_init__(self):
        i, h = self.W_z.shape
        for name in self.NAMES:
            arr = getattr(self, name)
            want = (i, h) if name[0] == "W" else (h, h) if name[0] == "U" else (h,)
            if arr.shape != want:
                raise ShapeMismatch(f"GRU {name} has shape {arr.shape}, expected {want}")

    @property
    def in_dim(self) -> int:
        return self.W_z.shape[0]

    @property
    def hidden(self) -> int:
        return self.W_z.shape[1]

    @classmethod
    def zeros(cls, in_dim: int, hidden: int) -> "GruParams":
        return cls(
            *(np.zeros((in_dim, hidden)) for _ in range(3)),
            *(np.zeros((hidden, hidden)) for _ in range(3)),
            *(np.zeros(hidden) for _ in range(3)),
        )

    def arrays(self) -> dict[str, np.ndarray]:
        return {n: getattr(self, n) for n in self.NAMES}


@dataclass
class GruCache:
    params: GruParams
    x: np.ndarray  # (B, T, in)
    hs: np.ndarray  # time-major states (T + 1, B, H); hs[t] enters step t
    zr: np.ndarray  # update and reset gates, (T, B, 2H)
    c: np.ndarray  # candidate states, (T, B, H)


def _gru_scan(xw, U_zr, U_h, h0):
    T, B, H3 = xw.shape
    H = H3 // 3
    hs = np.empty((T + 1, B, H))
    zr = np.empty((T, B, 2 * H))
    cs = np.empty((T, B, H))
    hs[0] = h0
    for t in range(T):
        h, g, c, a = hs[t], zr[t], cs[t], xw[t]
        np.matmul(h, U_zr, out=g)
        g += a[:, : 2 * H]
        # sigmoid via tanh: numpy vectorises tanh, and it beats expit on small arrays
        g *= 0.5
        np.tanh(g, out=g)
        g += 1.0
        g *= 0.5
        np.matmul(g[:, H:] * h, U_h, out=c)
        c += a[:, 2 * H :]
        np.tanh(c, out=c)
        hn = hs[t + 1]
        # (1 - z) * h + z * c, written as h + z * (c - h)
        np.subtract(c, h, out=hn)
        hn *= g[:, :H]
        hn += h
    return hs, zr, cs


@njit(cache=True)
def _gru_scan_grad(g_seq, dh_last, hs, zr, cs, U_zr_T, U_h_T):
    T, B, H = cs.shape
    da = np.empty((T, B, 3 * H))
    dh = dh_last.copy()
    drh_in = np.empty((B, H))
    for t in range(T - 1, -1, -1):
        if g_seq.shape[0] > 0:
            dh += g_seq[t]
        for i in range(B):
            for j in range(H):
                z = zr[t, i, j]
                c = cs[t, i, j]
                da[t, i, 2 * H + j] = dh[i, j] * z * (1.0 - c * c)
                da[t, i, j] = dh[i, j] * (c - hs[t, i, j]) * z * (1.0 - z)
        drh = np.dot(np.ascontiguousarray(da[t, :, 2 * H :]), U_h_T)
        for i in range(B):
            for j in range(H):
                r = zr[t, i, H + j]
                da[t, i, H + j] = drh[i, j] * hs[t, i, j] * r * (1.0 - r)
                dh[i, j] = dh[i, j] * (1.0 - zr[t, i, j]) + drh[i, j] * r
        dh += np.dot(np.ascontiguousarray(da[t, :, : 2 * H]), U_zr_T)
    return da, dh


def gru_forward(params: GruParams, inputs: np.ndarray, h0: np.ndarray | None = None, training: bool = True):
    """Run the layer over a (B, T, in) sequence; returns (hidden sequence, cache).

    The cache is None when ``training`` is false.
    """
    x = np.asarray(inputs, dtype=np.float64)
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    B, T, d = x.shape
    if d != params.in_dim:
        raise ShapeMismatch(f"GRU expects {params.in_dim} input features, got {d}")
    H = params.hidden
    W = np.concatenate([params.W_z, params.W_r, params.W_h], axis=1)
    b = np.concatenate([params.b_z, params.b_r, params.b_h])
    U_zr = np.concatenate([params.U_z, params.U_r], axis=1)
    xw = np.ascontiguousarray(x.transpose(1, 0, 2)) @ W  # (T, B, 3H)
    xw += b
    h = np.zeros((B, H)) if h0 is None else np.broadcast_to(np.asarray(h0, dtype=np.float64), (B, H)).copy()
    hs, zr, cs = _gru_scan(xw, U_zr, np.ascontiguousarray(params.U_h), h)
    out = hs[1:].transpose(1, 0, 2)
    cache = GruCache(params, x, hs, zr, cs) if training else None
    return (out[0] if squeeze else out), cache


def gru_backward(cache: GruCache | None, grad_out: np.ndarray):
    """Backpropagation through time.

    ``grad_out`` is either the gradient w.r.t. the whole hidden sequence
    (B, T, H) or only w.r.t. the last hidden state (B, H).  Returns
    (parameter gradients as a dict, input gradient (B, T, in), h0 gradient (B, H)).
    """
    if cache is None:
        raise MissingCache("gru_backward needs the cache of a training-mode forward pass")
    p = cache.params
    T, B, H = cache.c.shape
    g = np.asarray(grad_out, dtype=np.float64)
    if g.shape == (B, H):
        g_seq, dh = np.zeros((0, B, H)), g
    elif g.shape == (B, T, H):
        g_seq, dh = np.ascontiguousarray(g.transpose(1, 0, 2)), np.zeros((B, H))
    else:
        raise ShapeMismatch(f"upstream gradient shape {g.shape} does not match ({B}, {T}, {H})")
    U_zr_T = np.ascontiguousarray(np.concatenate([p.U_z, p.U_r], axis=1).T)
    da, dh0 = _gru_scan_grad(g_seq, np.ascontiguousarray(dh), cache.hs, cache.zr, cache.c, U_zr_T, np.ascontiguousarray(p.U_h.T))
    h_prev = cache.hs[:-1].reshape(T * B, H)
    r = cache.zr[..., H:].reshape(T * B, H)
    x2 = cache.x.transpose(1, 0, 2).reshape(T * B, -1)
    da2 = da.reshape(T * B, 3 * H)
    dW = x2.T @ da2
    db = da2.sum(axis=0)
    dU_zr = h_prev.T @ da2[:, : 2 * H]
    dU_h = (r * h_prev).T @ da2[:, 2 * H :]
    W = np.concatenate([p.W_z, p.W_r, p.W_h], axis=1)
    dx = (da @ W.T).transpose(1, 0, 2)
    grads = {
        "W_z": dW[:, :H], "W_r": dW[:, H : 2 * H], "W_h": dW[:, 2 * H :],
        "U_z": dU_zr[:, :H], "U_r": dU_zr[:, H:], "U_h": dU_h,
        "b_z": db[:H], "b_r": db[H : 2 * H], "b_h": db[2 * H :],
    }  # fmt: skip
    return grads, dx, dh0


# ---------------------------------------------------------------------------
# dense, dropout, concat, loss


@dataclass
class DenseParams:
    W: np.ndarray
    b: np.ndarray
    activation: str = RELU

    def __post_init__(self):
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[1],):
            raise ShapeMismatch(f"dense W {self.W.shape} and b {self.b.shape} are inconsistent")
        if self.activation not in (RELU, LINEAR):
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def in_dim(self) -> int:
        return self.W.shape[0]

    @property
    def out_dim(self) -> int:
        return self.W.shape[1]

    @classmethod
    def zeros(cls, in_dim: int, out_dim: int, activation: str = RELU) -> "DenseParams":
        return cls(np.zeros((in_dim, out_dim)), np.zeros(out_dim), activation)

    def arrays(self) -> dict[str, np.ndarray]:
        return {"W": self.W, "b": self.b}


def dense_forward(params: DenseParams, x: np.ndarray):
    if x.shape[-1] != params.in_dim:
        raise ShapeMismatch(f"dense layer expects {params.in_dim} inputs, got {x.shape[-1]}")
    pre = x @ params.W + params.b
    out = np.maximum(pre, 0.0) if params.activation == RELU else pre
    return out, (params, x, pre)


def dense_backward(cache, dy: np.ndarray):
    params, x, pre = cache
    if params.activation == RELU:
        dy = dy * (pre > 0)
    return {"W": x.T @ dy, "b": dy.sum(axis=0)}, dy @ params.W.T


def dropout_forward(x: np.ndarray, p: float, training: bool, rng: np.random.Generator | None = None):
    """Inverted dropout; returns (output, mask).  Identity with mask None at inference."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability {p} outside [0, 1)")
    if not training or p == 0.0:
        return x, None
    if rng is None:
        raise ValueError("training-mode dropout needs a random generator")
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    return x * mask, mask


def dropout_backward(mask: np.ndarray | None, dy: np.ndarray) -> np.ndarray:
    return dy if mask is None else dy * mask


def concat_forward(a: np.ndarray, b: np.ndarray):
    return np.concatenate([a, b], axis=-1), a.shape[-1]


def concat_backward(split: int, dy: np.ndarray):
    return dy[..., :split], dy[..., split:]


def mse_loss(pred, target):
    """Mean squared error and its gradient w.r.t. ``pred``."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeMismatch(f"prediction shape {pred.shape} != target shape {target.shape}")
    resid = pred - target
    return float(np.mean(resid * resid)), 2.0 * resid / resid.size


# ---------------------------------------------------------------------------
# hybrid model


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int = 6
    static_dim: int = 0  # 0 disables the static branch
    gru_sizes: tuple = (32, 256, 32)
    static_hidden: int = 32
    head_sizes: tuple = (32, 16)
    dropout: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "gru_sizes", tuple(int(s) for s in self.gru_sizes))
        object.__setattr__(self, "head_sizes", tuple(int(s) for s in self.head_sizes))
        if self.input_dim < 1 or self.static_dim < 0 or not self.gru_sizes or min(self.gru_sizes) < 1:
            raise ShapeMismatch(f"invalid model dimensions {self}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout {self.dropout} outside [0, 1)")

    @property
    def has_static(self) -> bool:
        return self.static_dim > 0

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "static_dim": self.static_dim,
            "gru_sizes": list(self.gru_sizes),
            "static_hidden": self.static_hidden,
            "head_sizes": list(self.head_sizes),
            "dropout": self.dropout,
        }


PAPER_MODEL = ModelConfig()


@dataclass
class HybridModel:
    config: ModelConfig
    grus: list[GruParams]
    head: list[DenseParams]
    static: DenseParams | None = None
    seed_lineage: tuple = ()

    @classmethod
    def zeros(cls, config: ModelConfig) -> "HybridModel":
        grus, d = [], config.input_dim
        for h in config.gru_sizes:
            grus.append(GruParams.zeros(d, h))
            d = h
        static = None
        if config.has_static:
            static = DenseParams.zeros(config.static_dim, config.static_hidden, HIDDEN_ACTIVATION)
            d += config.static_hidden
        head = []
        for h in config.head_sizes:
            head.append(DenseParams.zeros(d, h, HIDDEN_ACTIVATION))
            d = h
        head.append(DenseParams.zeros(d, 1, LINEAR))
        return cls(config, grus, head, static)

    def parameters(self) -> dict[str, np.ndarray]:
        """Name -> array views; updating them in place updates the model."""
        out = {}
        for i, g in enumerate(self.grus):
            out.update({f"gru{i}.{k}": v for k, v in g.arrays().items()})
        if self.static is not None:
            out.update({f"static.{k}": v for k, v in self.static.arrays().items()})
        for i, d in enumerate(self.head):
            out.update({f"head{i}.{k}": v for k, v in d.arrays().items()})
        return out

    def n_parameters(self) -> int:
        return sum(v.size for v in self.parameters().values())

    def copy(self) -> "HybridModel":
        m = HybridModel.zeros(self.config)
        m.load_parameters(self.parameters())
        m.seed_lineage = self.seed_lineage
        return m

    def load_parameters(self, values: dict[str, np.ndarray]) -> None:
        own = self.parameters()
        if set(values) != set(own):
            raise ShapeMismatch("parameter names do not match the model configuration")
        for k, v in own.items():
            if v.shape != np.shape(values[k]):
                raise ShapeMismatch(f"{k}: shape {np.shape(values[k])} != {v.shape}")
            v[...] = values[k]


def _glorot(rng, fan_in, fan_out):
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def _orthogonal(rng, n):
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


def init_params(config: ModelConfig, seed) -> HybridModel:
    """Glorot-uniform input weights, orthogonal recurrent weights, zero biases."""
    lineage = tuple(int(s) for s in np.atleast_1d(seed))
    rng = np.random.default_rng(list(lineage))
    model = HybridModel.zeros(config)
    for g in model.grus:
        for name in ("W_z", "W_r", "W_h"):
            getattr(g, name)[...] = _glorot(rng, g.in_dim, g.hidden)
        for name in ("U_z", "U_r", "U_h"):
            getattr(g, name)[...] = _orthogonal(rng, g.hidden)
    if model.static is not None:
        model.static.W[...] = _glorot(rng, model.static.in_dim, model.static.out_dim)
    for d in model.head:
        d.W[...] = _glorot(rng, d.in_dim, d.out_dim)
    model.seed_lineage = lineage
    return model


@dataclass
class ForwardCache:
    gru: list
    masks: list
    static: tuple | None
    head: list
    split: int | None
    seq_len: int


def _unpack_inputs(inputs, static):
    if hasattr(inputs, "input_matrix"):  # TrainingExample
        x = inputs.input_matrix()[None]
        s = None if inputs.static is None else np.asarray(inputs.static)[None]
        return x, s
    if hasattr(inputs, "x") and hasattr(inputs, "y"):  # Batch
        return inputs.x, inputs.static
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim == 2:
        x = x[None]
        if static is not None:
            static = np.asarray(static, dtype=np.float64)[None]
    return x, static


def model_forward(model: HybridModel, inputs, training: bool = False, rng: np.random.Generator | None = None, static=None):
    """Predict EEm for an example, a Batch, or a raw (B, T, C) array plus static features.

    Returns (predictions of shape (B,), cache); the cache is None at inference.
    """
    x, s = _unpack_inputs(inputs, static)
    if x.shape[-1] != model.config.input_dim:
        raise ShapeMismatch(f"model expects {model.config.input_dim} input channels, got {x.shape[-1]}")
    if (s is not None) != (model.static is not None):
        raise StaticBranchMissing(
            "example has static features but the model has no static branch"
            if s is not None
            else "model has a static branch but the example carries no static features"
        )
    p = model.config.dropout
    h = x
    gru_caches, masks = [], []
    for g in model.grus:
        h, c = gru_forward(g, h, training=training)
        h, mask = dropout_forward(h, p, training, rng)
        gru_caches.append(c)
        masks.append(mask)
    feat = h[:, -1]
    static_cache, split = None, None
    if model.static is not None:
        if s.shape[-1] != model.static.in_dim:
            raise ShapeMismatch(f"model expects {model.static.in_dim} static features, got {s.shape[-1]}")
        sv, static_cache = dense_forward(model.static, s)
        feat, split = concat_forward(feat, sv)
    head_caches = []
    for d in model.head:
        feat, c = dense_forward(d, feat)
        head_caches.append(c)
    pred = feat[:, 0]
    if not training:
        return pred, None
    return pred, ForwardCache(gru_caches, masks, static_cache, head_caches, split, x.shape[1])


def model_backward(model: HybridModel, cache: ForwardCache | None, dpred: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss w.r.t. every parameter, given dloss/dprediction."""
    if cache is None:
        raise MissingCache("model_backward needs the cache of a training-mode forward pass")
    grads = {}
    dy = np.asarray(dpred, dtype=np.float64).reshape(-1, 1)
    for i in range(len(model.head) - 1, -1, -1):
        g, dy = dense_backward(cache.head[i], dy)
        grads[f"head{i}.W"], grads[f"head{i}.b"] = g["W"], g["b"]
    if model.static is not None:
        dy, ds = concat_backward(cache.split, dy)
        g, _ = dense_backward(cache.static, ds)
        grads["static.W"], grads["static.b"] = g["W"], g["b"]
    dh = dy
    for i in range(len(model.grus) - 1, -1, -1):
        mask = cache.masks[i]
        if dh.ndim == 2:  # gradient reaches only the last step of the top layer
            if mask is not None:
                dh = dh * mask[:, -1]
        else:
            dh = dropout_backward(mask, dh)
        g, dh, _ = gru_backward(cache.gru[i], dh)
        grads.update({f"gru{i}.{k}": v for k, v in g.items()})
    return grads


def predict(model: HybridModel, batch, chunk: int = 1024) -> np.ndarray:
    """Inference-mode predictions for a Batch, in chunks to bound memory."""
    n = len(batch)
    out = np.empty(n)
    for i in range(0, n, chunk):
        sub = batch.take(slice(i, i + chunk))
        out[i : i + chunk], _ = model_forward(model, sub, training=False)
    return out


# ---------------------------------------------------------------------------
# serialisation: .npz with little-endian float64 arrays and a JSON header


def save_model(path, model: HybridModel, meta: dict | None = None) -> None:
    header = {
        "format": "paee-hybrid",
        "version": FORMAT_VERSION,
        "config": model.config.to_dict(),
        "seed_lineage": list(model.seed_lineage),
        "meta": meta or {},
    }
    arrays = {k: np.ascontiguousarray(v, dtype="<f8") for k, v in model.parameters().items()}
    arrays["__header__"] = np.frombuffer(json.dumps(header, sort_keys=True).encode("utf-8"), dtype=np.uint8)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_model(path) -> tuple[HybridModel, dict]:
    with np.load(Path(path), allow_pickle=False) as data:
        if "__header__" not in data:
            raise FormatError(f"{path}: not a paee model file")
        header = json.loads(bytes(data["__header__"]).decode("utf-8"))
        if header.get("format") != "paee-hybrid" or header.get("version") != FORMAT_VERSION:
            raise FormatError(f"{path}: unsupported model format {header.get('format')} v{header.get('version')}")
        model = HybridModel.zeros(ModelConfig(**header["config"]))
        model.load_parameters({k: data[k].astype(np.float64) for k in model.parameters()})
    model.seed_lineage = tuple(header["seed_lineage"])
    return model, header["meta"]
