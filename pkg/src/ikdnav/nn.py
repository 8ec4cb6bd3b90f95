"""Feed-forward inverse kinodynamic network with hand-written backpropagation.

Architecture: an IMU encoder (600 -> 256 -> 256 -> 2) whose embedding is
concatenated with the desired (v, c) and fed to a head (4 -> 32 -> 32 -> 2).
The ablated variant drops the encoder and the head sees only (v, c).
All arithmetic is float64.
"""

from __future__ import annotations

import hashlib
import json
import logging
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

WINDOW_LEN = 100
CHANNELS = 6
WINDOW_DIM = WINDOW_LEN * CHANNELS

PARAM_MAGIC = b"IKDPARAM"
PARAM_VERSION = 1


class NetworkFault(RuntimeError):
    """Shape mismatch or non-finite value inside the network."""


class TrainingDivergence(NetworkFault):
    pass


@dataclass(frozen=True)
class NetworkSpec:
    encoder_layers: tuple[int, ...] = (WINDOW_DIM, 256, 256, 2)
    head_layers: tuple[int, ...] = (4, 32, 32, 2)
    activation: str = "relu"
    use_encoder: bool = True

    def __post_init__(self):
        object.__setattr__(self, "encoder_layers", tuple(int(n) for n in self.encoder_layers))
        object.__setattr__(self, "head_layers", tuple(int(n) for n in self.head_layers))
        if self.activation != "relu":
            raise ValueError(f"unsupported activation {self.activation!r}")
        if self.head_layers[-1] != 2:
            raise ValueError("head must output the 2 control dimensions")
        expected = 2 + (self.encoder_layers[-1] if self.use_encoder else 0)
        if self.head_layers[0] != expected:
            raise ValueError(f"head input must be {expected}, got {self.head_layers[0]}")
        if self.use_encoder and self.encoder_layers[0] != WINDOW_DIM:
            raise ValueError(f"encoder input must be {WINDOW_DIM}")

    @classmethod
    def ablated(cls) -> "NetworkSpec":
        return cls(head_layers=(2, 32, 32, 2), use_encoder=False)

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @property
    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class NormStats:
    """Zero-mean/unit-variance statistics; windows are normalized per channel."""

    in_mean: np.ndarray = field(default_factory=lambda: np.zeros(2))
    in_std: np.ndarray = field(default_factory=lambda: np.ones(2))
    win_mean: np.ndarray = field(default_factory=lambda: np.zeros(CHANNELS))
    win_std: np.ndarray = field(default_factory=lambda: np.ones(CHANNELS))
    out_mean: np.ndarray = field(default_factory=lambda: np.zeros(2))
    out_std: np.ndarray = field(default_factory=lambda: np.ones(2))

    FIELDS = ("in_mean", "in_std", "win_mean", "win_std", "out_mean", "out_std")

    @classmethod
    def fit(cls, inputs, labels, windows=None) -> "NormStats":
        def std(a, axis):
            s = np.std(a, axis=axis)
            return np.where(s > 1e-8, s, 1.0)

        inputs = np.asarray(inputs, dtype=float)
        labels = np.asarray(labels, dtype=float)
        st = cls(inputs.mean(0), std(inputs, 0), out_mean=labels.mean(0), out_std=std(labels, 0))
        if windows is not None:
            w = np.asarray(windows, dtype=float).reshape(len(windows), CHANNELS, WINDOW_LEN)
            st.win_mean = w.mean(axis=(0, 2))
            st.win_std = std(w.transpose(1, 0, 2).reshape(CHANNELS, -1), 1)
        return st


@dataclass
class ParameterSet:
    spec: NetworkSpec
    encoder: list  # [(W, b), ...], W has shape (fan_in, fan_out)
    head: list
    norm: NormStats = field(default_factory=NormStats)
    metadata: dict = field(default_factory=dict)

    def arrays(self) -> list[np.ndarray]:
        out = []
        for W, b in list(self.encoder) + list(self.head):
            out += [W, b]
        return out

    def copy(self) -> "ParameterSet":
        return ParameterSet(
            self.spec,
            [(W.copy(), b.copy()) for W, b in self.encoder],
            [(W.copy(), b.copy()) for W, b in self.head],
            NormStats(*(getattr(self.norm, f).copy() for f in NormStats.FIELDS)),
            json.loads(json.dumps(self.metadata)),
        )

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in self.arrays())


def _layers(sizes, rng, zero=False):
    out = []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        if zero:
            W = np.zeros((fan_in, fan_out))
        else:
            W = rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in)
        out.append((W, np.zeros(fan_out)))
    return out


def init_params(spec: NetworkSpec, seed: int = 0, zero: bool = False) -> ParameterSet:
    rng = np.random.default_rng(seed)
    enc = _layers(spec.encoder_layers, rng, zero) if spec.use_encoder else []
    head = _layers(spec.head_layers, rng, zero)
    return ParameterSet(spec, enc, head, metadata={"spec_hash": spec.hash, "seed": seed})


def zero_params(spec: NetworkSpec) -> ParameterSet:
    return init_params(spec, zero=True)


def _mlp(layers, x, cache):
    n = len(layers)
    for i, (W, b) in enumerate(layers):
        z = x @ W + b
        x = np.maximum(z, 0.0) if i < n - 1 else z
        cache.append((z, x))
    return x


def _check_inputs(params: ParameterSet, inputs, windows):
    inputs = np.atleast_2d(np.asarray(inputs, dtype=float))
    if inputs.shape[1] != 2:
        raise NetworkFault(f"expected (B, 2) inputs, got {inputs.shape}")
    if params.spec.use_encoder:
        if windows is None:
            raise NetworkFault("observation window required by the encoder")
        windows = np.atleast_2d(np.asarray(windows, dtype=float))
        if windows.shape != (inputs.shape[0], WINDOW_DIM):
            raise NetworkFault(f"expected ({inputs.shape[0]}, {WINDOW_DIM}) windows, got {windows.shape}")
    else:
        windows = None
    return inputs, windows


def _normalize(params, inputs, windows):
    st = params.norm
    xin = (inputs - st.in_mean) / st.in_std
    xw = None
    if windows is not None:
        w = windows.reshape(len(windows), CHANNELS, WINDOW_LEN)
        xw = ((w - st.win_mean[None, :, None]) / st.win_std[None, :, None]).reshape(len(windows), WINDOW_DIM)
    return xin, xw


def _forward_norm(params, xin, xw):
    enc_cache, head_cache = [], []
    if params.spec.use_encoder:
        emb = _mlp(params.encoder, xw, enc_cache)
        h_in = np.concatenate([xin, emb], axis=1)
    else:
        h_in = xin
    out = _mlp(params.head, h_in, head_cache)
    return out, (xin, xw, h_in, enc_cache, head_cache)


def forward_batch(params: ParameterSet, inputs, windows=None) -> np.ndarray:
    """Predicted commands (B, 2) in physical units; not clamped."""
    inputs, windows = _check_inputs(params, inputs, windows)
    xin, xw = _normalize(params, inputs, windows)
    out, _ = _forward_norm(params, xin, xw)
    return out * params.norm.out_std + params.norm.out_mean


def forward(params: ParameterSet, v_r: float, c_r: float, window=None) -> tuple[float, float]:
    """Single query: desired (v_r, c_r) and, for the full model, a 600-vector window."""
    w = None if window is None or not params.spec.use_encoder else np.asarray(window, dtype=float).reshape(1, -1)
    out = forward_batch(params, [[v_r, c_r]], w)
    return float(out[0, 0]), float(out[0, 1])


@dataclass(frozen=True)
class LossWeights:
    H: np.ndarray = field(default_factory=lambda: np.diag([1.0, 4.0]))

    def __post_init__(self):
        H = np.asarray(self.H, dtype=float)
        object.__setattr__(self, "H", H)
        if H.shape != (2, 2) or not np.allclose(H, H.T):
            raise ValueError("H must be a symmetric 2x2 matrix")
        if not (H[0, 0] > 0 and np.linalg.det(H) > 0):
            raise ValueError("H must be positive definite")


def loss(params: ParameterSet, inputs, labels, windows=None, H: LossWeights | None = None) -> float:
    """Mean over the batch of e^T H e with e = label - prediction."""
    H = (H or LossWeights()).H
    e = np.asarray(labels, dtype=float) - forward_batch(params, inputs, windows)
    return float(np.mean(np.einsum("bi,ij,bj->b", e, H, e)))


def backward(params: ParameterSet, inputs, labels, windows=None, H: LossWeights | None = None):
    """Loss and gradients, in the order of :meth:`ParameterSet.arrays`."""
    H = (H or LossWeights()).H
    inputs, windows = _check_inputs(params, inputs, windows)
    labels = np.atleast_2d(np.asarray(labels, dtype=float))
    B = len(inputs)
    xin, xw = _normalize(params, inputs, windows)
    out, (xin, xw, h_in, enc_cache, head_cache) = _forward_norm(params, xin, xw)
    st = params.norm
    e = labels - (out * st.out_std + st.out_mean)
    value = float(np.mean(np.einsum("bi,ij,bj->b", e, H, e)))
    if not np.isfinite(value):
        raise NetworkFault("non-finite loss")

    g = -(e @ (H + H.T)) / B * st.out_std
    head_grads = _backprop(params.head, head_cache, h_in, g, "head")
    grads = []
    if params.spec.use_encoder:
        g_emb = head_grads.pop()[:, 2:]
        enc_grads = _backprop(params.encoder, enc_cache, xw, g_emb, "encoder")
        enc_grads.pop()
        grads += enc_grads
    else:
        head_grads.pop()
    grads += head_grads
    return value, grads


def _backprop(layers, cache, x0, g, name):
    """Returns [dW1, db1, ..., dWn, dbn, d_input]."""
    n = len(layers)
    out = [None] * (2 * n)
    for i in range(n - 1, -1, -1):
        z, _ = cache[i]
        if i < n - 1:
            g = g * (z > 0)
        a_prev = cache[i - 1][1] if i > 0 else x0
        out[2 * i] = a_prev.T @ g
        out[2 * i + 1] = g.sum(axis=0)
        g = g @ layers[i][0].T
        if not np.all(np.isfinite(g)):
            raise NetworkFault(f"non-finite gradient in {name} layer {i}")
    out.append(g)
    return out


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 64
    epochs: int = 50
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    optimizer: str = "adam"  # or "sgd"
    validation_fraction: float = 0.1
    rng_seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0 < self.validation_fraction < 0.5:
            raise ValueError("validation_fraction must lie in (0, 0.5)")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass
class TrainResult:
    params: ParameterSet
    train_loss: list
    val_loss: list
    best_epoch: int

    def write_loss_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("epoch,train_loss,val_loss\n")
            for i, (a, b) in enumerate(zip(self.train_loss, self.val_loss)):
                fh.write(f"{i},{a!r},{b!r}\n")


def _batched_loss(params, X, Y, W, H, chunk=4096):
    total = 0.0
    for i in range(0, len(X), chunk):
        sl = slice(i, i + chunk)
        total += loss(params, X[sl], Y[sl], None if W is None else W[sl], H) * len(X[sl])
    return total / len(X)


def train(dataset, spec: NetworkSpec, H: LossWeights | None = None, cfg: TrainConfig | None = None) -> TrainResult:
    """Fit the network; returns the parameters with the best validation loss.

    Epoch 0 in the loss curves is the initialization.
    """
    from .data import split  # local import: data depends on nothing here

    H = H or LossWeights()
    cfg = cfg or TrainConfig()
    if len(dataset) < 1000:
        raise ValueError(f"training needs at least 1000 samples, got {len(dataset)}")
    tr, va = split(dataset, cfg.validation_fraction, cfg.rng_seed)
    X, Y = tr.inputs.astype(float), tr.labels.astype(float)
    Xv, Yv = va.inputs.astype(float), va.labels.astype(float)
    W = tr.windows.astype(float) if spec.use_encoder else None
    Wv = va.windows.astype(float) if spec.use_encoder else None

    params = init_params(spec, cfg.rng_seed)
    params.norm = NormStats.fit(X, Y, W)
    params.metadata.update({"training_seed": cfg.rng_seed, "n_train": len(X), "n_val": len(Xv)})
    rng = np.random.default_rng(cfg.rng_seed)

    train_curve = [_batched_loss(params, X, Y, W, H)]
    val_curve = [_batched_loss(params, Xv, Yv, Wv, H)]
    best, best_val, best_epoch = params.copy(), val_curve[0], 0
    arrays = params.arrays()
    m = [np.zeros_like(a) for a in arrays]
    v = [np.zeros_like(a) for a in arrays]
    t = 0
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(X))
        for i in range(0, len(X), cfg.batch_size):
            idx = order[i: i + cfg.batch_size]
            try:
                with np.errstate(over="ignore", invalid="ignore"):
                    _, grads = backward(params, X[idx], Y[idx], None if W is None else W[idx], H)
            except NetworkFault as exc:
                raise TrainingDivergence(f"{exc} at epoch {epoch}; try a smaller learning_rate") from exc
            t += 1
            for a, g, mi, vi in zip(arrays, grads, m, v):
                if cfg.optimizer == "sgd":
                    a -= cfg.learning_rate * g
                    continue
                mi *= cfg.beta1
                mi += (1 - cfg.beta1) * g
                vi *= cfg.beta2
                vi += (1 - cfg.beta2) * g * g
                mhat = mi / (1 - cfg.beta1 ** t)
                vhat = vi / (1 - cfg.beta2 ** t)
                a -= cfg.learning_rate * mhat / (np.sqrt(vhat) + cfg.eps)
        with np.errstate(over="ignore", invalid="ignore"):
            tl = _batched_loss(params, X, Y, W, H)
            vl = _batched_loss(params, Xv, Yv, Wv, H)
        if not (np.isfinite(tl) and np.isfinite(vl)):
            raise TrainingDivergence(f"loss became non-finite at epoch {epoch}; try a smaller learning_rate")
        train_curve.append(tl)
        val_curve.append(vl)
        log.debug("epoch %d train %.5f val %.5f", epoch, tl, vl)
        if vl < best_val:
            best, best_val, best_epoch = params.copy(), vl, epoch
    best.metadata["best_epoch"] = best_epoch
    best.metadata["best_val_loss"] = best_val
    return TrainResult(best, train_curve, val_curve, best_epoch)


def grad_check(spec: NetworkSpec, seed: int = 0, n_params: int = 100, batch: int = 8,
               step: float = 1e-6, backward_fn=None) -> float:
    """Max relative error between analytic and central-difference gradients.

    Relative error is |a - n| / max(|a|, |n|, 1e-6) over ``n_params`` entries
    drawn uniformly by array, then by position. ``backward_fn`` lets tests
    inject a faulty gradient.
    """
    backward_fn = backward_fn or backward
    rng = np.random.default_rng(seed)
    params = init_params(spec, seed)
    for b in (b for _, b in params.encoder + params.head):
        b[:] = rng.normal(0, 0.1, b.shape)
    params.norm = NormStats(
        rng.normal(0, 1, 2), rng.uniform(0.5, 2, 2), rng.normal(0, 1, CHANNELS),
        rng.uniform(0.5, 2, CHANNELS), rng.normal(0, 1, 2), rng.uniform(0.5, 2, 2))
    X = rng.normal(0, 1, (batch, 2))
    Y = rng.normal(0, 1, (batch, 2))
    Wn = rng.normal(0, 1, (batch, WINDOW_DIM)) if spec.use_encoder else None
    H = LossWeights(np.array([[1.0, 0.3], [0.3, 4.0]]))
    _, grads = backward_fn(params, X, Y, Wn, H)
    arrays = params.arrays()
    worst = 0.0
    for _ in range(n_params):
        k = int(rng.integers(len(arrays)))
        pos = tuple(int(rng.integers(n)) for n in arrays[k].shape)
        orig = arrays[k][pos]
        arrays[k][pos] = orig + step
        lp = loss(params, X, Y, Wn, H)
        arrays[k][pos] = orig - step
        lm = loss(params, X, Y, Wn, H)
        arrays[k][pos] = orig
        num = (lp - lm) / (2 * step)
        ana = grads[k][pos]
        worst = max(worst, abs(ana - num) / max(abs(ana), abs(num), 1e-6))
    return worst


def save_params(params: ParameterSet, path) -> None:
    arrays = params.arrays() + [getattr(params.norm, f) for f in NormStats.FIELDS]
    header = {
        "spec": params.spec.to_dict(),
        "spec_hash": params.spec.hash,
        "metadata": params.metadata,
        "shapes": [list(a.shape) for a in arrays],
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(PARAM_MAGIC)
        fh.write(struct.pack("<HI", PARAM_VERSION, len(blob)))
        fh.write(blob)
        for a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f8").tobytes())


def load_params(path) -> ParameterSet:
    data = Path(path).read_bytes()
    if data[:8] != PARAM_MAGIC:
        raise NetworkFault(f"{path}: not a parameter file (bad magic)")
    version, n = struct.unpack_from("<HI", data, 8)
    if version != PARAM_VERSION:
        raise NetworkFault(f"{path}: unsupported parameter file version {version}")
    header = json.loads(data[14: 14 + n])
    spec = NetworkSpec(**header["spec"])
    if spec.hash != header["spec_hash"]:
        raise NetworkFault(f"{path}: spec hash mismatch")
    off = 14 + n
    arrays = []
    for shape in header["shapes"]:
        count = int(np.prod(shape)) if shape else 1
        arrays.append(np.frombuffer(data, "<f8", count, off).reshape(shape).astype(np.float64))
        off += 8 * count
    norm = NormStats(*arrays[-6:])
    layer_arrays = arrays[:-6]
    pairs = list(zip(layer_arrays[0::2], layer_arrays[1::2]))
    n_enc = len(spec.encoder_layers) - 1 if spec.use_encoder else 0
    return ParameterSet(spec, pairs[:n_enc], pairs[n_enc:], norm, header["metadata"])
