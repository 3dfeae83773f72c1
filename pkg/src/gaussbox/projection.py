"""Two-head projection network mapping text embeddings to boxes.

Each head is a two-layer perceptron over the input vector: one produces the
box center, the other produces pre-offsets pushed through softplus so offsets
stay strictly positive.  Dropout is the inverted kind, applied to hidden
activations in train mode only.  Backprop is written out by hand; traces
captured in the forward pass carry everything the backward pass needs.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass

import numpy as np
from scipy.special import erf, expit

from gaussbox.geometry import Box

CHECKPOINT_MAGIC = b"GBXT"
CHECKPOINT_VERSION = 1

# order matters: checkpoints store arrays in exactly this sequence
PARAM_FIELDS = ("w1_c", "b1_c", "w2_c", "b2_c", "w1_o", "b1_o", "w2_o", "b2_o")


class CheckpointError(ValueError):
    """Unreadable or corrupted checkpoint file."""


def _relu(x):
    return np.maximum(x, 0.0)


def _relu_deriv(x):
    return (x > 0.0).astype(np.float64)


_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def _gelu(x):
    return 0.5 * x * (1.0 + erf(x * _INV_SQRT2))


def _gelu_deriv(x):
    phi_cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))
    phi_pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
    return phi_cdf + x * phi_pdf


ACTIVATIONS = {"relu": (_relu, _relu_deriv), "gelu": (_gelu, _gelu_deriv)}


def _softplus(x):
    return np.logaddexp(0.0, x)


@dataclass
class ProjectionParams:
    """Weights of both heads plus the settings they were built with."""

    w1_c: np.ndarray
    b1_c: np.ndarray
    w2_c: np.ndarray
    b2_c: np.ndarray
    w1_o: np.ndarray
    b1_o: np.ndarray
    w2_o: np.ndarray
    b2_o: np.ndarray
    dropout: float = 0.2
    activation: str = "relu"
    config_hash: str = ""

    def __post_init__(self) -> None:
        for name in PARAM_FIELDS:
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        if self.activation not in ACTIVATIONS:
            raise ValueError(
                f"unknown activation {self.activation!r}, expected one of {sorted(ACTIVATIONS)}"
            )
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must lie in [0, 1), got {self.dropout}")

    @property
    def in_dim(self) -> int:
        return self.w1_c.shape[0]

    @property
    def hidden(self) -> int:
        return self.w1_c.shape[1]

    @property
    def out_dim(self) -> int:
        return self.w2_c.shape[1]

    def copy(self) -> "ProjectionParams":
        return ProjectionParams(
            **{name: getattr(self, name).copy() for name in PARAM_FIELDS},
            dropout=self.dropout,
            activation=self.activation,
            config_hash=self.config_hash,
        )

    def as_list(self) -> list[np.ndarray]:
        return [getattr(self, name) for name in PARAM_FIELDS]


@dataclass
class ParamGrads:
    w1_c: np.ndarray
    b1_c: np.ndarray
    w2_c: np.ndarray
    b2_c: np.ndarray
    w1_o: np.ndarray
    b1_o: np.ndarray
    w2_o: np.ndarray
    b2_o: np.ndarray

    def as_list(self) -> list[np.ndarray]:
        return [getattr(self, name) for name in PARAM_FIELDS]


@dataclass
class ForwardTrace:
    """Intermediate values kept for backprop; all arrays are (B, ...)."""

    inputs: np.ndarray
    pre1_c: np.ndarray
    hidden_c: np.ndarray
    mask_c: np.ndarray | None
    pre1_o: np.ndarray
    hidden_o: np.ndarray
    mask_o: np.ndarray | None
    pre2_o: np.ndarray


def init_params(
    in_dim: int,
    hidden: int,
    out_dim: int,
    rng_seed: int,
    dropout: float = 0.2,
    activation: str = "relu",
) -> ProjectionParams:
    """Glorot-uniform weights, zero biases, except the offset head's final
    bias which is set so a zero input yields offsets of exactly 0.5."""
    if min(in_dim, hidden, out_dim) < 1:
        raise ValueError("all dimensions must be at least 1")
    rng = np.random.default_rng(rng_seed)

    def glorot(fan_in, fan_out):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-bound, bound, size=(fan_in, fan_out))

    return ProjectionParams(
        w1_c=glorot(in_dim, hidden),
        b1_c=np.zeros(hidden),
        w2_c=glorot(hidden, out_dim),
        b2_c=np.zeros(out_dim),
        w1_o=glorot(in_dim, hidden),
        b1_o=np.zeros(hidden),
        w2_o=glorot(hidden, out_dim),
        b2_o=np.full(out_dim, np.log(np.expm1(0.5))),
        dropout=dropout,
        activation=activation,
    )


def num_params(p: ProjectionParams) -> int:
    return int(sum(a.size for a in p.as_list()))


def forward_batch(p: ProjectionParams, X, mode: str = "eval", rng=None):
    """Project rows of X to (centers, offsets); in train mode also a trace.

    Train mode samples fresh inverted-dropout masks from `rng`, which is
    required whenever the dropout rate is nonzero.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != p.in_dim:
        raise ValueError(f"input must have shape (B, {p.in_dim}), got {X.shape}")
    act, _ = ACTIVATIONS[p.activation]

    dropping = mode == "train" and p.dropout > 0.0
    if dropping and rng is None:
        raise ValueError("train-mode forward with dropout needs an rng")

    def head(w1, b1, w2, b2):
        pre1 = X @ w1 + b1
        h = act(pre1)
        mask = None
        if dropping:
            keep = 1.0 - p.dropout
            mask = (rng.random(h.shape) < keep).astype(np.float64) / keep
            h = h * mask
        return pre1, h, mask, h @ w2 + b2

    pre1_c, h_c, mask_c, centers = head(p.w1_c, p.b1_c, p.w2_c, p.b2_c)
    pre1_o, h_o, mask_o, pre2_o = head(p.w1_o, p.b1_o, p.w2_o, p.b2_o)
    # softplus may underflow to exactly zero for very negative inputs; keep
    # offsets strictly positive
    offsets = np.maximum(_softplus(pre2_o), 1e-300)

    trace = None
    if mode == "train":
        trace = ForwardTrace(X, pre1_c, h_c, mask_c, pre1_o, h_o, mask_o, pre2_o)
    return centers, offsets, trace


def forward(p: ProjectionParams, x, mode: str = "eval", rng=None):
    """Single-vector projection; returns (Box, trace-or-None)."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ValueError(f"input must be a vector, got shape {x.shape}")
    centers, offsets, trace = forward_batch(p, x[None, :], mode=mode, rng=rng)
    return Box(center=centers[0], offset=offsets[0]), trace


def backward_batch(p: ProjectionParams, trace: ForwardTrace, d_center, d_offset) -> ParamGrads:
    """Parameter gradients summed over the batch rows of the trace.

    d_center and d_offset are the upstream gradients w.r.t. the produced
    centers and offsets, shape (B, out_dim).
    """
    if trace is None:
        raise ValueError("backward needs the trace from a train-mode forward")
    d_center = np.asarray(d_center, dtype=np.float64)
    d_offset = np.asarray(d_offset, dtype=np.float64)
    _, deriv = ACTIVATIONS[p.activation]
    X = trace.inputs

    def head(w2, pre1, h, mask, g_out):
        dw2 = h.T @ g_out
        db2 = g_out.sum(0)
        g_h = g_out @ w2.T
        if mask is not None:
            g_h = g_h * mask
        g_pre1 = g_h * deriv(pre1)
        dw1 = X.T @ g_pre1
        db1 = g_pre1.sum(0)
        return dw1, db1, dw2, db2

    dw1_c, db1_c, dw2_c, db2_c = head(p.w2_c, trace.pre1_c, trace.hidden_c, trace.mask_c, d_center)
    # softplus' = sigmoid
    g_pre2 = d_offset * expit(trace.pre2_o)
    dw1_o, db1_o, dw2_o, db2_o = head(p.w2_o, trace.pre1_o, trace.hidden_o, trace.mask_o, g_pre2)

    return ParamGrads(dw1_c, db1_c, dw2_c, db2_c, dw1_o, db1_o, dw2_o, db2_o)


def backward(p: ProjectionParams, trace: ForwardTrace, d_center, d_offset) -> ParamGrads:
    """Single-sample wrapper around backward_batch."""
    d_center = np.asarray(d_center, dtype=np.float64)
    d_offset = np.asarray(d_offset, dtype=np.float64)
    return backward_batch(p, trace, d_center[None, :], d_offset[None, :])


# ---------------------------------------------------------------------------
# checkpoints


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


class _Reader:
    def __init__(self, blob: bytes):
        self.blob = blob
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.blob):
            raise CheckpointError("truncated checkpoint file")
        out = self.blob[self.pos : self.pos + n]
        self.pos += n
        return out

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def f64(self) -> float:
        return struct.unpack("<d", self.take(8))[0]

    def string(self) -> str:
        return self.take(self.u32()).decode("utf-8")

    def array(self, shape) -> np.ndarray:
        n = int(np.prod(shape))
        raw = self.take(8 * n)
        return np.frombuffer(raw, dtype="<f8").reshape(shape).copy()


def save_params(p: ProjectionParams, path) -> None:
    """Binary checkpoint: little-endian header, row-major float64 arrays in
    declaration order, trailing CRC32 of all preceding bytes."""
    parts = [
        CHECKPOINT_MAGIC,
        struct.pack("<I", CHECKPOINT_VERSION),
        struct.pack("<III", p.in_dim, p.hidden, p.out_dim),
        struct.pack("<d", p.dropout),
        _pack_str(p.activation),
        _pack_str(p.config_hash),
    ]
    for arr in p.as_list():
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    body = b"".join(parts)
    with open(path, "wb") as f:
        f.write(body + struct.pack("<I", zlib.crc32(body)))


def load_params(path) -> ProjectionParams:
    with open(path, "rb") as f:
        blob = f.read()
    if len(blob) < 4 or blob[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad magic bytes, not a checkpoint")
    if len(blob) < 8:
        raise CheckpointError(f"{path}: truncated checkpoint file")
    stored_crc = struct.unpack("<I", blob[-4:])[0]
    if zlib.crc32(blob[:-4]) != stored_crc:
        raise CheckpointError(f"{path}: checksum mismatch, file is corrupted")

    r = _Reader(blob[:-4])
    r.take(4)  # magic
    version = r.u32()
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}"
        )
    k, h, d = r.u32(), r.u32(), r.u32()
    dropout = r.f64()
    activation = r.string()
    config_hash = r.string()
    shapes = {
        "w1_c": (k, h), "b1_c": (h,), "w2_c": (h, d), "b2_c": (d,),
        "w1_o": (k, h), "b1_o": (h,), "w2_o": (h, d), "b2_o": (d,),
    }
    arrays = {name: r.array(shapes[name]) for name in PARAM_FIELDS}
    if r.pos != len(r.blob):
        raise CheckpointError(f"{path}: trailing bytes after parameter arrays")
    return ProjectionParams(**arrays, dropout=dropout, activation=activation, config_hash=config_hash)


def check_dims(p: ProjectionParams, in_dim: int | None = None, out_dim: int | None = None) -> None:
    """Raise if the checkpoint's dimensions disagree with the data's."""
    if in_dim is not None and p.in_dim != in_dim:
        raise CheckpointError(
            f"checkpoint expects input dimension {p.in_dim}, data provides {in_dim}"
        )
    if out_dim is not None and p.out_dim != out_dim:
        raise CheckpointError(
            f"checkpoint produces box dimension {p.out_dim}, configuration asks for {out_dim}"
        )
