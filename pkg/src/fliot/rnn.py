"""Elman RNN autoencoder for per-step anomaly scoring.

    h_t    = f(U x_t + W h_{t-1} + b),  h_0 = 0
    xhat_t = V h_t + c

Sequences are processed in batches of shape ``(B, T, F)``. Batches mixing
sequence lengths are split into equal-length groups; the loss is always the
mean over samples of the per-sample loss, so grouping does not change it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import RandomStream
from .errors import ParameterError, ShapeError

ACTIVATIONS = ("tanh", "relu")
LOSS_KINDS = ("reconstruction_mse", "supervised_cross_entropy")


@dataclass
class RnnParams:
    """Weights of the autoencoder. Also used as the container for gradients."""

    U: np.ndarray  # H x F
    W: np.ndarray  # H x H
    b: np.ndarray  # H
    V: np.ndarray  # O x H
    c: np.ndarray  # O
    activation: str = "tanh"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ParameterError(f"activation must be one of {ACTIVATIONS}")
        H, F = self.U.shape
        O = self.V.shape[0]
        if self.W.shape != (H, H) or self.b.shape != (H,) or self.V.shape != (O, H) or self.c.shape != (O,):
            raise ShapeError(
                f"inconsistent shapes U{self.U.shape} W{self.W.shape} b{self.b.shape} "
                f"V{self.V.shape} c{self.c.shape}"
            )

    @property
    def hidden_size(self) -> int:
        return self.U.shape[0]

    @property
    def n_features(self) -> int:
        return self.U.shape[1]

    @property
    def out_dim(self) -> int:
        return self.V.shape[0]

    @property
    def size(self) -> int:
        return param_count(self.n_features, self.hidden_size, self.out_dim)

    def tensors(self):
        return (self.U, self.W, self.b, self.V, self.c)

    def flatten(self) -> np.ndarray:
        return np.concatenate([t.ravel() for t in self.tensors()])

    @classmethod
    def unflatten(cls, flat, n_features: int, hidden_size: int, out_dim: Optional[int] = None,
                  activation: str = "tanh") -> "RnnParams":
        F, H = n_features, hidden_size
        O = F if out_dim is None else out_dim
        flat = np.asarray(flat, dtype=np.float64)
        if flat.shape != (param_count(F, H, O),):
            raise ShapeError(f"flat vector of length {flat.size} does not fit F={F}, H={H}, O={O}")
        shapes = [(H, F), (H, H), (H,), (O, H), (O,)]
        parts, pos = [], 0
        for s in shapes:
            n = int(np.prod(s))
            parts.append(flat[pos:pos + n].reshape(s).copy())
            pos += n
        return cls(*parts, activation=activation)

    def like(self, flat) -> "RnnParams":
        return RnnParams.unflatten(flat, self.n_features, self.hidden_size, self.out_dim, self.activation)

    def zeros_like(self) -> "RnnParams":
        return self.like(np.zeros(self.size))

    def copy(self) -> "RnnParams":
        return self.like(self.flatten())

    def __eq__(self, other):
        if not isinstance(other, RnnParams):
            return NotImplemented
        return self.activation == other.activation and all(
            a.shape == b.shape and np.array_equal(a, b) for a, b in zip(self.tensors(), other.tensors())
        )


def param_count(F: int, H: int, O: Optional[int] = None) -> int:
    O = F if O is None else O
    return H * F + H * H + H + O * H + O


def init_params(n_features: int, hidden_size: int, stream: RandomStream, out_dim: Optional[int] = None,
                activation: str = "tanh", scale: float = 0.08) -> RnnParams:
    """Uniform init in ``[-scale, scale]``."""
    O = n_features if out_dim is None else out_dim
    flat = stream.uniform(-scale, scale, size=param_count(n_features, hidden_size, O))
    return RnnParams.unflatten(flat, n_features, hidden_size, O, activation)


@dataclass
class TrainingConfig:
    eta0: float = 0.5
    local_epochs: int = 5
    batch_size: int = 4
    loss_kind: str = "reconstruction_mse"
    clip_norm: Optional[float] = None

    def __post_init__(self):
        if not (math.isfinite(self.eta0) and self.eta0 >= 0):
            raise ParameterError("eta0 must be finite and non-negative")
        if self.local_epochs < 1:
            raise ParameterError("local_epochs must be >= 1")
        if self.batch_size < 1:
            raise ParameterError("batch_size must be >= 1")
        if self.loss_kind not in LOSS_KINDS:
            raise ParameterError(f"loss_kind must be one of {LOSS_KINDS}")
        if self.clip_norm is not None and not self.clip_norm > 0:
            raise ParameterError("clip_norm must be positive")


@dataclass(frozen=True)
class AnomalyThreshold:
    epsilon: float
    calibration_percentile: float = 99.0

    def __post_init__(self):
        if not self.epsilon >= 0:
            raise ParameterError("epsilon must be non-negative")


@dataclass
class ReconstructionTrace:
    errors: np.ndarray
    flags: np.ndarray = field(default=None)
    epsilon: Optional[float] = None

    @property
    def sequence_flag(self) -> int:
        return int(self.flags.any())


def _group(data):
    """Return list of (x, y) stacks, one per sequence length, in first-seen order."""
    if isinstance(data, np.ndarray):
        x = data[None] if data.ndim == 2 else data
        return [(x, None)], x.shape[0]
    if hasattr(data, "x"):
        data = [data]
    groups: dict[int, tuple[list, list]] = {}
    n = 0
    for s in data:
        xs, ys = groups.setdefault(s.x.shape[0], ([], []))
        xs.append(s.x)
        ys.append(s.labels)
        n += 1
    return [(np.stack(xs), np.stack(ys).astype(np.float64)) for xs, ys in groups.values()], n


def _activate(a, activation):
    return np.tanh(a) if activation == "tanh" else np.maximum(a, 0.0)


def _forward_batch(params: RnnParams, x: np.ndarray):
    B, T, F = x.shape
    if F != params.n_features:
        raise ShapeError(f"sequence has {F} features, model expects {params.n_features}")
    H = params.hidden_size
    hs = np.empty((B, T, H))
    pre = np.empty((B, T, H))
    h = np.zeros((B, H))
    xu = x @ params.U.T + params.b
    for t in range(T):
        a = xu[:, t] + h @ params.W.T
        h = _activate(a, params.activation)
        pre[:, t] = a
        hs[:, t] = h
    out = hs @ params.V.T + params.c
    return hs, pre, out


def forward(params: RnnParams, sequence):
    """Hidden states and outputs for one sequence ``(T, F)`` or a batch ``(B, T, F)``.

    Returns arrays shaped like the input: ``(T, H), (T, O)`` for a single
    sequence.
    """
    x = sequence.x if hasattr(sequence, "x") else np.asarray(sequence, dtype=np.float64)
    single = x.ndim == 2
    if x.ndim not in (2, 3):
        raise ShapeError(f"expected (T, F) or (B, T, F), got {x.shape}")
    hs, _, out = _forward_batch(params, x[None] if single else x)
    return (hs[0], out[0]) if single else (hs, out)


def reconstruction_error(x_t, xhat_t) -> float:
    x_t = np.asarray(x_t, dtype=np.float64)
    xhat_t = np.asarray(xhat_t, dtype=np.float64)
    if x_t.shape != xhat_t.shape:
        raise ShapeError(f"length mismatch {x_t.shape} vs {xhat_t.shape}")
    return float(np.linalg.norm(x_t - xhat_t))


def step_errors(params: RnnParams, sequences) -> list[np.ndarray]:
    """Per-step reconstruction errors, one array per sequence, input order kept."""
    seqs = [sequences] if hasattr(sequences, "x") else list(sequences)
    out: list = [None] * len(seqs)
    by_len: dict[int, list[int]] = {}
    for i, s in enumerate(seqs):
        by_len.setdefault(s.x.shape[0], []).append(i)
    for idx in by_len.values():
        x = np.stack([seqs[i].x for i in idx])
        _, _, xhat = _forward_batch(params, x)
        err = np.sqrt(((x - xhat) ** 2).sum(axis=2))
        for j, i in enumerate(idx):
            out[i] = err[j]
    return out


def classify_step(e_t: float, threshold: AnomalyThreshold) -> int:
    return 1 if e_t > threshold.epsilon else 0


def score_sequence(params: RnnParams, sequence, threshold: AnomalyThreshold) -> ReconstructionTrace:
    err = step_errors(params, [sequence])[0]
    return ReconstructionTrace(err, (err > threshold.epsilon).astype(np.uint8), threshold.epsilon)


def _softplus(z):
    return np.logaddexp(0.0, z)


def _sigmoid(z):
    return np.exp(-np.logaddexp(0.0, -z))


def _check_loss_kind(params: RnnParams, loss_kind: str):
    if loss_kind == "reconstruction_mse" and params.out_dim != params.n_features:
        raise ShapeError("reconstruction loss needs out_dim == n_features")
    if loss_kind == "supervised_cross_entropy" and params.out_dim != 1:
        raise ShapeError("supervised loss needs out_dim == 1")


def _group_loss(out, x, y, loss_kind):
    if loss_kind == "reconstruction_mse":
        return float(np.mean((out - x) ** 2))
    if y is None:
        raise ParameterError("supervised loss needs labelled sequences")
    z = out[..., 0]
    return float(np.mean(_softplus(z) - y * z))


def loss(params: RnnParams, data, cfg: TrainingConfig) -> float:
    """Mean over samples of the per-sample loss (mean over steps and outputs)."""
    _check_loss_kind(params, cfg.loss_kind)
    groups, n = _group(data)
    if n == 0:
        raise ParameterError("loss of an empty dataset")
    total = 0.0
    for x, y in groups:
        _, _, out = _forward_batch(params, x)
        total += x.shape[0] / n * _group_loss(out, x, y, cfg.loss_kind)
    return total


def loss_and_gradients(params: RnnParams, batch, cfg: TrainingConfig) -> tuple[float, RnnParams]:
    """Loss and its exact gradient by backpropagation through time."""
    _check_loss_kind(params, cfg.loss_kind)
    groups, n = _group(batch)
    if n == 0:
        raise ParameterError("gradient of an empty batch")
    U, W, V = params.U, params.W, params.V
    gU, gW, gb = np.zeros_like(U), np.zeros_like(W), np.zeros_like(params.b)
    gV, gc = np.zeros_like(V), np.zeros_like(params.c)
    total = 0.0
    for x, y in groups:
        B, T, _ = x.shape
        weight = B / n
        hs, pre, out = _forward_batch(params, x)
        total += weight * _group_loss(out, x, y, cfg.loss_kind)
        if cfg.loss_kind == "reconstruction_mse":
            dout = weight * 2.0 * (out - x) / out.size
        else:
            dout = np.zeros_like(out)
            dout[..., 0] = weight * (_sigmoid(out[..., 0]) - y) / (B * T)
        gV += np.einsum("bto,bth->oh", dout, hs)
        gc += dout.sum(axis=(0, 1))
        dh_out = dout @ V
        if params.activation == "tanh":
            dact = 1.0 - hs ** 2
        else:
            dact = (pre > 0).astype(np.float64)
        da = np.empty_like(hs)
        dh_next = np.zeros((B, params.hidden_size))
        for t in range(T - 1, -1, -1):
            da[:, t] = (dh_out[:, t] + dh_next) * dact[:, t]
            dh_next = da[:, t] @ W
        H = params.hidden_size
        h_prev = np.concatenate([np.zeros((B, 1, H)), hs[:, :-1]], axis=1)
        flat_da = da.reshape(-1, H)
        gU += flat_da.T @ x.reshape(-1, x.shape[2])
        gW += flat_da.T @ h_prev.reshape(-1, H)
        gb += flat_da.sum(axis=0)
    grad = RnnParams(gU, gW, gb, gV, gc, activation=params.activation)
    return total, grad


def bptt_gradients(params: RnnParams, batch, cfg: TrainingConfig) -> RnnParams:
    return loss_and_gradients(params, batch, cfg)[1]


def sgd_step(params: RnnParams, grad: RnnParams, eta: float) -> RnnParams:
    if not math.isfinite(eta):
        raise ParameterError("eta must be finite")
    if params.size != grad.size or any(a.shape != g.shape for a, g in zip(params.tensors(), grad.tensors())):
        raise ShapeError("gradient shape does not match parameters")
    return RnnParams(*(p - eta * g for p, g in zip(params.tensors(), grad.tensors())), activation=params.activation)


def adaptive_lr(eta0: float, t: int) -> float:
    """Learning rate decayed as ``eta0 / sqrt(t + 1)``."""
    if not eta0 > 0:
        raise ParameterError("eta0 must be positive")
    if t < 0:
        raise ParameterError("step index must be non-negative")
    return eta0 / math.sqrt(t + 1)


def forward_flops(F: int, H: int, O: int) -> int:
    """Approximate floating-point operations for one time step of the forward pass."""
    return 2 * H * F + 2 * H * H + 2 * H + 2 * O * H + O


def train_flops(F: int, H: int, O: int, sample_steps: int) -> int:
    """Forward plus backward (counted as twice the forward) over ``sample_steps``."""
    return 3 * forward_flops(F, H, O) * sample_steps


@dataclass
class LocalTrainResult:
    params: RnnParams
    losses: list
    steps: int
    sample_steps: int


def local_train(params: RnnParams, data: Sequence, cfg: TrainingConfig, dp=None,
                stream: Optional[RandomStream] = None) -> LocalTrainResult:
    """Mini-batch SGD for ``cfg.local_epochs`` epochs starting from ``params``.

    The step counter for the decayed learning rate starts at zero on every
    call. ``losses`` holds the mean batch loss of each epoch. When ``dp`` is
    given, each flattened gradient passes through
    :func:`fliot.privacy.noisy_gradient` before the update.
    """
    from .privacy import noisy_gradient, clip_gradient

    data = list(data)
    if not data:
        raise ParameterError("local_train needs a non-empty dataset")
    stream = stream or RandomStream(0)
    order_stream = stream.child("shuffle")
    noise_stream = stream.child("dp")
    cur = params.copy()
    losses = []
    step = 0
    sample_steps = 0
    for _ in range(cfg.local_epochs):
        order = order_stream.permutation(len(data))
        batch_losses = []
        for s in range(0, len(data), cfg.batch_size):
            batch = [data[i] for i in order[s:s + cfg.batch_size]]
            value, grad = loss_and_gradients(cur, batch, cfg)
            batch_losses.append(value)
            sample_steps += sum(seq.T for seq in batch)
            if cfg.clip_norm is not None or dp is not None:
                flat = grad.flatten()
                if cfg.clip_norm is not None:
                    flat = clip_gradient(flat, cfg.clip_norm)
                if dp is not None:
                    flat = noisy_gradient(flat, dp, noise_stream)
                grad = cur.like(flat)
            if cfg.eta0 > 0:
                cur = sgd_step(cur, grad, adaptive_lr(cfg.eta0, step))
            step += 1
        losses.append(float(np.mean(batch_losses)))
    return LocalTrainResult(cur, losses, step, sample_steps)


def calibrate_threshold(errors: Sequence[float], percentile: float = 99.0) -> AnomalyThreshold:
    """Nearest-rank percentile of ``errors``."""
    errs = np.sort(np.asarray(errors, dtype=np.float64).ravel())
    if errs.size == 0:
        raise ParameterError("cannot calibrate on an empty error list")
    if not 0 < percentile <= 100:
        raise ParameterError("percentile must lie in (0, 100]")
    rank = max(1, math.ceil(percentile * errs.size / 100.0))
    return AnomalyThreshold(float(errs[rank - 1]), percentile)
