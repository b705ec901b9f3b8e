"""Small fully convolutional 1-D network for two-class window scoring.

The network is a stack of ``conv -> batch-norm -> ReLU -> max-pool`` blocks,
followed by two 1x1 convolutions and a global average over time that yields
two logits. Forward and backward passes are written out by hand on top of
:mod:`streamadapt.kernels`.
"""

from __future__ import annotations

import copy
import io
import json
import math
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from .errors import InvalidConfigError, InvalidInputError, TrainingDivergedError

LN2 = math.log(2.0)
BN_EPS = 1e-5
BN_MOMENTUM = 0.1


@dataclass
class BlockSpec:
    out_channels: int
    kernel: int = 5
    stride: int = 1
    pool: int = 2


@dataclass
class Architecture:
    in_channels: int
    input_length: int
    blocks: list = field(default_factory=list)
    head_hidden: int = 16
    batch_norm: bool = True
    activation: str = "relu"
    param_budget: int | None = None

    def __post_init__(self):
        self.blocks = [b if isinstance(b, BlockSpec) else BlockSpec(**b) for b in self.blocks]
        if self.activation not in ("relu", "linear"):
            raise InvalidConfigError(f"unknown activation {self.activation!r}")
        length = self.input_length
        for b in self.blocks:
            if b.kernel < 1 or b.stride < 1 or b.pool < 1:
                raise InvalidConfigError(f"invalid block {b}")
            length = kernels.conv_out_len(length, b.kernel, b.stride, b.kernel // 2) // b.pool
            if length < 1:
                raise InvalidConfigError("input too short for this architecture")

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def desk_architecture(in_channels: int = 4, input_length: int = 256) -> Architecture:
    """Default reference size: 8 -> 16 -> 16 channels, kernel 5, pool 2."""
    return Architecture(
        in_channels,
        input_length,
        [BlockSpec(8, 5, 1, 2), BlockSpec(16, 5, 1, 2), BlockSpec(16, 5, 1, 2)],
        head_hidden=16,
    )


def wide_architecture(in_channels: int = 18, input_length: int = 1024) -> Architecture:
    """Roughly 300K parameters at 18 channels, 4 s at 256 Hz."""
    return Architecture(
        in_channels,
        input_length,
        [BlockSpec(64, 9, 1, 2), BlockSpec(128, 9, 1, 2), BlockSpec(128, 9, 1, 2)],
        head_hidden=256,
    )


@dataclass
class Prediction:
    logits: tuple
    probs: tuple
    entropy: float
    label: int


def softmax(logits) -> np.ndarray:
    """Max-shifted softmax along the last axis, evaluated in float64."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def entropy(probs) -> np.ndarray | float:
    """Shannon entropy in nats, with ``0 * ln 0 = 0``."""
    p = np.asarray(probs, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, -p * np.log(np.where(p > 0, p, 1.0)), 0.0)
    h = terms.sum(axis=-1)
    return float(h) if h.ndim == 0 else h


def predict_label(probs) -> np.ndarray | int:
    # ties resolve to class 0
    p = np.asarray(probs, dtype=np.float64)
    lab = (p[..., 1] > p[..., 0]).astype(np.int64)
    return int(lab) if lab.ndim == 0 else lab


def _log_softmax(z):
    z = np.asarray(z, dtype=np.float64)
    m = z.max(axis=-1, keepdims=True)
    return z - m - np.log(np.exp(z - m).sum(axis=-1, keepdims=True))


class Classifier:
    """Parameters, running batch-norm statistics and a train/eval mode flag."""

    def __init__(self, arch: Architecture, seed: int = 0, dtype=np.float32):
        self.arch = arch
        self.dtype = np.dtype(dtype)
        self.mode = "eval"
        self.params: dict[str, np.ndarray] = {}
        self.stats: dict[str, np.ndarray] = {}
        rng = np.random.default_rng(seed)
        c_in = arch.in_channels
        for i, b in enumerate(arch.blocks):
            bound = math.sqrt(1.0 / (c_in * b.kernel))
            self.params[f"block{i}.weight"] = rng.uniform(-bound, bound, (b.out_channels, c_in, b.kernel))
            self.params[f"block{i}.bias"] = rng.uniform(-bound, bound, b.out_channels)
            if arch.batch_norm:
                self.params[f"block{i}.bn_gamma"] = np.ones(b.out_channels)
                self.params[f"block{i}.bn_beta"] = np.zeros(b.out_channels)
                self.stats[f"block{i}.bn_mean"] = np.zeros(b.out_channels)
                self.stats[f"block{i}.bn_var"] = np.ones(b.out_channels)
            c_in = b.out_channels
        bound = math.sqrt(1.0 / c_in)
        self.params["head1.weight"] = rng.uniform(-bound, bound, (arch.head_hidden, c_in))
        self.params["head1.bias"] = rng.uniform(-bound, bound, arch.head_hidden)
        bound = math.sqrt(1.0 / arch.head_hidden)
        self.params["head2.weight"] = rng.uniform(-bound, bound, (2, arch.head_hidden))
        self.params["head2.bias"] = rng.uniform(-bound, bound, 2)
        for d in (self.params, self.stats):
            for k in d:
                d[k] = np.ascontiguousarray(d[k], dtype=self.dtype)
        if arch.param_budget is not None and self.n_params > arch.param_budget:
            raise InvalidConfigError(
                f"{self.n_params} parameters exceed the budget of {arch.param_budget}"
            )

    # -- bookkeeping -------------------------------------------------------

    @property
    def n_params(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def train(self):
        self.mode = "train"
        return self

    def eval(self):
        self.mode = "eval"
        return self

    def copy(self) -> "Classifier":
        return copy.deepcopy(self)

    def state(self) -> dict:
        return {k: v.copy() for d in (self.params, self.stats) for k, v in d.items()}

    def load_state(self, state: dict) -> None:
        for k in self.params:
            self.params[k][...] = state[k]
        for k in self.stats:
            self.stats[k][...] = state[k]

    def zero_(self):
        for d in (self.params, self.stats):
            for v in d.values():
                v[...] = 0
        return self

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for d in (self.params, self.stats) for v in d.values())

    # -- forward / backward ------------------------------------------------

    def _check_input(self, x):
        x = np.asarray(x)
        if x.ndim == 2:
            x = x[None]
        a = self.arch
        if x.ndim != 3 or x.shape[1] != a.in_channels or x.shape[2] != a.input_length:
            raise InvalidInputError(
                f"expected windows of shape (*, {a.in_channels}, {a.input_length}), got {x.shape}"
            )
        return np.ascontiguousarray(x, dtype=self.dtype)

    def _forward(self, x, cache):
        a = self.arch
        train = self.mode == "train"
        relu = a.activation == "relu"
        h = x
        for i, b in enumerate(a.blocks):
            w = self.params[f"block{i}.weight"]
            pad = b.kernel // 2
            if cache is not None:
                z, cols = kernels.conv1d_forward(h, w, self.params[f"block{i}.bias"], b.stride,
                                                 pad, return_cols=True)
            else:
                z, cols = kernels.conv1d_forward(h, w, self.params[f"block{i}.bias"], b.stride,
                                                 pad), None
            entry = {"in": h, "cols": cols, "z_len": z.shape[2]}
            if a.batch_norm:
                gamma = self.params[f"block{i}.bn_gamma"]
                beta = self.params[f"block{i}.bn_beta"]
                if train:
                    mu = z.mean(axis=(0, 2), dtype=np.float64)
                    var = z.var(axis=(0, 2), dtype=np.float64)
                    m = z.shape[0] * z.shape[2]
                    unbiased = var * m / max(m - 1, 1)
                    rm = self.stats[f"block{i}.bn_mean"]
                    rv = self.stats[f"block{i}.bn_var"]
                    rm[...] = (1 - BN_MOMENTUM) * rm + BN_MOMENTUM * mu
                    rv[...] = (1 - BN_MOMENTUM) * rv + BN_MOMENTUM * unbiased
                else:
                    mu = self.stats[f"block{i}.bn_mean"]
                    var = self.stats[f"block{i}.bn_var"]
                inv = (1.0 / np.sqrt(var + BN_EPS)).astype(self.dtype)
                zhat = (z - mu.astype(self.dtype)[None, :, None]) * inv[None, :, None]
                z = zhat * gamma[None, :, None] + beta[None, :, None]
                entry["zhat"] = zhat
                entry["inv"] = inv
            if relu:
                z = np.maximum(z, 0)
                entry["act"] = z
            h, arg = kernels.maxpool_forward(z, b.pool)
            entry["arg"] = arg
            if cache is not None:
                cache.append(entry)
        w1 = self.params["head1.weight"]
        u = np.matmul(w1, h) + self.params["head1.bias"][None, :, None]
        r = np.maximum(u, 0) if relu else u
        mean_r = r.mean(axis=2)
        logits = mean_r @ self.params["head2.weight"].T + self.params["head2.bias"]
        if cache is not None:
            cache.append({"h": h, "u": u, "mean_r": mean_r})
        return logits

    def logits(self, x) -> np.ndarray:
        """Logits ``(N, 2)`` for a batch ``(N, C, L)``."""
        return self._forward(self._check_input(x), None)

    def loss_and_grad(self, x, y):
        """Mean cross-entropy over the batch and its gradient w.r.t. every parameter.

        Runs in the current mode; call :meth:`train` first for training
        semantics (batch statistics, running-stat updates).
        """
        x = self._check_input(x)
        y = np.asarray(y, dtype=np.int64).reshape(-1)
        if len(y) != x.shape[0] or len(y) == 0:
            raise InvalidInputError("need one label per window and a nonempty batch")
        cache = []
        logits = self._forward(x, cache)
        logp = _log_softmax(logits)
        n = len(y)
        loss = float(-logp[np.arange(n), y].mean())
        if not math.isfinite(loss):
            raise TrainingDivergedError(f"non-finite loss {loss}")
        d = np.exp(logp)
        d[np.arange(n), y] -= 1.0
        d = (d / n).astype(self.dtype)
        grads = self._backward(d, cache)
        return loss, grads

    def _backward(self, dlogits, cache):
        a = self.arch
        relu = a.activation == "relu"
        grads = {}
        head = cache.pop()
        grads["head2.weight"] = dlogits.T @ head["mean_r"]
        grads["head2.bias"] = dlogits.sum(axis=0)
        dmean = dlogits @ self.params["head2.weight"]
        length = head["u"].shape[2]
        du = np.broadcast_to((dmean / length)[:, :, None], head["u"].shape)
        if relu:
            du = du * (head["u"] > 0)
        grads["head1.weight"] = np.tensordot(du, head["h"], axes=([0, 2], [0, 2]))
        grads["head1.bias"] = du.sum(axis=(0, 2))
        dh = np.matmul(self.params["head1.weight"].T, du)
        for i in range(len(a.blocks) - 1, -1, -1):
            b = a.blocks[i]
            entry = cache[i]
            dz = kernels.maxpool_backward(np.ascontiguousarray(dh), entry["arg"], b.pool,
                                          entry["z_len"])
            if relu:
                dz = dz * (entry["act"] > 0)
            if a.batch_norm:
                zhat = entry["zhat"]
                gamma = self.params[f"block{i}.bn_gamma"]
                grads[f"block{i}.bn_gamma"] = (dz * zhat).sum(axis=(0, 2))
                grads[f"block{i}.bn_beta"] = dz.sum(axis=(0, 2))
                if self.mode == "train":
                    dxhat = dz * gamma[None, :, None]
                    m = dz.shape[0] * dz.shape[2]
                    s1 = dxhat.sum(axis=(0, 2), keepdims=True)
                    s2 = (dxhat * zhat).sum(axis=(0, 2), keepdims=True)
                    dz = (entry["inv"][None, :, None] / m) * (m * dxhat - s1 - zhat * s2)
                else:
                    dz = dz * (gamma * entry["inv"])[None, :, None]
            dx, dw, db = kernels.conv1d_backward(
                entry["in"], self.params[f"block{i}.weight"], dz.astype(self.dtype),
                b.stride, b.kernel // 2, cols=entry["cols"], need_dx=i > 0,
            )
            grads[f"block{i}.weight"] = dw
            grads[f"block{i}.bias"] = db
            dh = dx
        return {k: np.asarray(grads[k], dtype=self.dtype) for k in self.params}

    def activation_pattern(self, x) -> bytes:
        """Fingerprint of every ReLU sign and max-pool argmax for batch ``x``.

        Two parameter settings with equal fingerprints lie on the same linear
        piece of the network, which is what finite-difference checks need.
        Running statistics are left untouched.
        """
        saved = {k: v.copy() for k, v in self.stats.items()}
        cache = []
        self._forward(self._check_input(x), cache)
        for k, v in saved.items():
            self.stats[k][...] = v
        parts = []
        for entry in cache[:-1]:
            if "act" in entry:
                parts.append(np.packbits(entry["act"] > 0).tobytes())
            if entry["arg"] is not None:
                parts.append(np.asarray(entry["arg"]).tobytes())
        parts.append(np.packbits(cache[-1]["u"] > 0).tobytes())
        return b"".join(parts)

    # -- serialisation -----------------------------------------------------

    def to_bytes(self) -> bytes:
        return dumps_checkpoint(self)


def forward(c: Classifier, w) -> np.ndarray:
    """Logits for one window (returns shape ``(2,)``) or a batch (``(N, 2)``)."""
    data = getattr(w, "data", w)
    single = np.asarray(data).ndim == 2
    out = c.logits(data)
    return out[0] if single else out


def predict(c: Classifier, w) -> Prediction:
    logits = forward(c, w)
    probs = softmax(logits)
    return Prediction(
        logits=tuple(float(v) for v in logits),
        probs=tuple(float(v) for v in probs),
        entropy=entropy(probs),
        label=predict_label(probs),
    )


def predict_batch(c: Classifier, x, chunk: int = 2048):
    """Vectorised :func:`predict`: ``(logits, probs, entropy, labels)`` arrays."""
    x = np.asarray(x)
    outs = [c.logits(x[i : i + chunk]) for i in range(0, len(x), chunk)]
    logits = np.concatenate(outs) if outs else np.zeros((0, 2), dtype=c.dtype)
    probs = softmax(logits)
    return logits, probs, entropy(probs), predict_label(probs)


def backward(c: Classifier, batch, labels=None):
    """Gradient of mean cross-entropy; ``batch`` is windows plus labels.

    Accepts either an array ``(N, C, L)`` with ``labels``, or a sequence of
    ``(window, label)`` pairs. Returns ``(grads, loss)``.
    """
    if labels is None:
        pairs = list(batch)
        x = np.stack([np.asarray(getattr(w, "data", w)) for w, _ in pairs])
        labels = [lab for _, lab in pairs]
    else:
        x = batch
    loss, grads = c.loss_and_grad(x, labels)
    return grads, loss


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

MAGIC = b"SADPTCKP"
VERSION = 1


def _ordered_arrays(c: Classifier):
    names = []
    for i in range(len(c.arch.blocks)):
        for suffix in ("weight", "bias", "bn_gamma", "bn_beta", "bn_mean", "bn_var"):
            names.append(f"block{i}.{suffix}")
    names += ["head1.weight", "head1.bias", "head2.weight", "head2.bias"]
    merged = {**c.params, **c.stats}
    return [(n, merged[n]) for n in names if n in merged]


def dumps_checkpoint(c: Classifier) -> bytes:
    desc = json.dumps(c.arch.to_dict(), sort_keys=True).encode("utf-8")
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", VERSION, len(desc)))
    buf.write(desc)
    for _, arr in _ordered_arrays(c):
        buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    return buf.getvalue()


def loads_checkpoint(raw: bytes, dtype=np.float32) -> Classifier:
    if raw[: len(MAGIC)] != MAGIC:
        raise InvalidInputError("not a classifier checkpoint")
    off = len(MAGIC)
    version, n = struct.unpack_from("<II", raw, off)
    if version != VERSION:
        raise InvalidInputError(f"unsupported checkpoint version {version}")
    off += 8
    arch = Architecture.from_dict(json.loads(raw[off : off + n].decode("utf-8")))
    off += n
    c = Classifier(arch, seed=0, dtype=dtype)
    for name, arr in _ordered_arrays(c):
        size = arr.size
        vals = np.frombuffer(raw, dtype="<f4", count=size, offset=off)
        arr[...] = vals.reshape(arr.shape)
        off += 4 * size
    if off != len(raw):
        raise InvalidInputError("trailing bytes in checkpoint")
    return c


def save_checkpoint(c: Classifier, path) -> None:
    from .util import atomic_write_bytes

    atomic_write_bytes(path, dumps_checkpoint(c))


def load_checkpoint(path, dtype=np.float32) -> Classifier:
    with open(path, "rb") as fh:
        return loads_checkpoint(fh.read(), dtype)
