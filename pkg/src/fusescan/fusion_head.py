"""The trainable part of the detector.

Backbone embeddings are concatenated into one fused vector and scored by a
small ReLU MLP with a single logit output, trained with binary cross-entropy
and AdamW. The numerics are written out by hand (no autograd) so the exact
update rule is inspectable and checkable against finite differences. Labels
follow the convention real=0, fake=1, and a score at or above the threshold
counts as fake.

Checkpoints are little-endian binary files starting with the magic ``FDHEAD``
and a format version, followed by the layer configuration and raw float32
weight blobs, so a head trained on one machine scores identically on another.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    CorruptCheckpoint,
    DivergenceDetected,
    EmptyClass,
    NonFiniteInput,
    NonFiniteLogit,
    ShapeMismatch,
    VersionMismatch,
)

CHECKPOINT_MAGIC = b"FDHEAD"
CHECKPOINT_VERSION = 1

_ACTIVATION_IDS = {"relu": 0}
_ACTIVATION_NAMES = {v: k for k, v in _ACTIVATION_IDS.items()}

#: Hidden widths used when only a depth is given; depth d keeps the first
#: d-1 entries, so depth 4 is the default 1024/256/64 taper plus the output.
_WIDTH_TAPER = (1024, 256, 64, 16)

MAX_LAYERS = 5


def default_hidden_widths(depth: int) -> tuple:
    """Hidden widths for an MLP of ``depth`` total linear layers (1..5)."""
    if not 1 <= depth <= MAX_LAYERS:
        raise ValueError(f"depth must be in [1, {MAX_LAYERS}], got {depth}")
    return _WIDTH_TAPER[: depth - 1]


def fuse(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Concatenate two embeddings into one fused float32 vector.

    Order matters and nothing is scaled or re-normalized, so both inputs
    survive bit-for-bit and the output length is the sum of the input
    lengths.
    """
    a = np.asarray(a, dtype=np.float32).ravel()
    b = np.asarray(b, dtype=np.float32).ravel()
    if a.size == 0 or b.size == 0:
        raise ShapeMismatch("cannot fuse an empty embedding")
    if not np.isfinite(a).all() or not np.isfinite(b).all():
        raise NonFiniteInput("embeddings must be finite to fuse")
    return np.concatenate([a, b])


@dataclass(frozen=True)
class MlpConfig:
    """Architecture of the head: input width plus hidden layer widths."""

    input_dim: int
    hidden_widths: tuple = (1024, 256, 64)
    activation: str = "relu"

    def __post_init__(self):
        if self.input_dim < 1:
            raise ValueError(f"input_dim must be positive, got {self.input_dim}")
        widths = tuple(int(w) for w in self.hidden_widths)
        object.__setattr__(self, "hidden_widths", widths)
        if any(w < 1 for w in widths):
            raise ValueError("hidden widths must be positive")
        if not 1 <= self.layers <= MAX_LAYERS:
            raise ValueError(f"layer count must be in [1, {MAX_LAYERS}], got {self.layers}")
        if self.activation not in _ACTIVATION_IDS:
            raise ValueError(f"unknown activation '{self.activation}'")

    @property
    def layers(self) -> int:
        return len(self.hidden_widths) + 1

    @property
    def dims(self) -> tuple:
        """Layer width chain including input and the single logit output."""
        return (self.input_dim, *self.hidden_widths, 1)


@dataclass
class MlpParams:
    """Weights and biases per layer; ``weights[i]`` is (out, in), ``biases[i]`` is (out,)."""

    config: MlpConfig
    weights: list
    biases: list

    def copy(self) -> "MlpParams":
        return MlpParams(self.config, [w.copy() for w in self.weights],
                         [b.copy() for b in self.biases])

    def astype(self, dtype) -> "MlpParams":
        return MlpParams(self.config, [w.astype(dtype) for w in self.weights],
                         [b.astype(dtype) for b in self.biases])


def init_params(config: MlpConfig, seed: int, dtype=np.float32) -> MlpParams:
    """He-uniform fan-in initialization with zero biases, fixed by the seed."""
    return _init_with_rng(config, np.random.default_rng(seed), dtype)


def _init_with_rng(config, rng, dtype=np.float32):
    dims = config.dims
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = np.sqrt(6.0 / fan_in)
        weights.append(rng.uniform(-limit, limit, size=(fan_out, fan_in)).astype(dtype))
        biases.append(np.zeros(fan_out, dtype=dtype))
    return MlpParams(config, weights, biases)


def _check_features(params, Z):
    Z = np.asarray(Z)
    if Z.ndim != 2 or Z.shape[1] != params.config.input_dim:
        raise ShapeMismatch(
            f"features must be (n, {params.config.input_dim}), got {Z.shape}"
        )
    if not np.isfinite(Z).all():
        raise NonFiniteInput("feature matrix contains non-finite values")
    return Z.astype(params.weights[0].dtype, copy=False)


def forward_batch(params: MlpParams, features: np.ndarray) -> np.ndarray:
    """Logits for a batch of fused features, shape (n,)."""
    a = _check_features(params, features)
    last = len(params.weights) - 1
    for i, (W, b) in enumerate(zip(params.weights, params.biases)):
        a = a @ W.T + b
        if i != last:
            a = np.maximum(a, 0)
    return a[:, 0]


def forward(params: MlpParams, z: np.ndarray) -> float:
    """Logit for a single fused feature vector."""
    return float(forward_batch(params, np.asarray(z)[None, :])[0])


def sigmoid(x):
    """Numerically stable logistic function; exact 0.5 at 0."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out if out.ndim else float(out)


# Extreme logits underflow the raw f64 sigmoid to exactly 0 or 1; reported
# probabilities are clamped just inside the open interval instead.
_P_FLOOR = np.finfo(np.float64).tiny
_P_CEIL = float(np.nextafter(1.0, 0.0))


def predict_proba(params: MlpParams, z: np.ndarray) -> float:
    """Probability that a single input is fake, strictly inside (0, 1)."""
    return float(min(max(sigmoid(forward(params, z)), _P_FLOOR), _P_CEIL))


def predict_proba_batch(params: MlpParams, features: np.ndarray) -> np.ndarray:
    return np.clip(sigmoid(forward_batch(params, features)), _P_FLOOR, _P_CEIL)


def bce_with_logits(logit: float, label) -> float:
    """Binary cross-entropy of one logit against a {0, 1} label.

    Uses the rearrangement max(x, 0) - x*y + log1p(exp(-|x|)), which never
    exponentiates a positive argument and so stays finite for any logit
    magnitude a float can square.
    """
    x = float(logit)
    if not np.isfinite(x):
        raise NonFiniteLogit(f"logit is {x}")
    y = float(label)
    if y not in (0.0, 1.0):
        raise ValueError(f"label must be 0 or 1, got {label}")
    return max(x, 0.0) - x * y + float(np.log1p(np.exp(-abs(x))))


def mean_bce_with_logits(logits: np.ndarray, labels: np.ndarray) -> float:
    """Mean binary cross-entropy over a batch of logits."""
    x = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if x.shape != y.shape:
        raise ShapeMismatch(f"logits {x.shape} and labels {y.shape} differ")
    if x.size == 0:
        raise ValueError("cannot average a loss over zero examples")
    if not np.isfinite(x).all():
        raise NonFiniteLogit("batch contains a non-finite logit")
    losses = np.maximum(x, 0.0) - x * y + np.log1p(np.exp(-np.abs(x)))
    return float(losses.mean())


def backward(params: MlpParams, features: np.ndarray, labels: np.ndarray):
    """Analytic gradients of the mean BCE loss w.r.t. every weight and bias.

    Returns ``(weight_grads, bias_grads)`` shaped exactly like
    ``params.weights`` and ``params.biases``.
    """
    Z = _check_features(params, features)
    y = np.asarray(labels, dtype=Z.dtype)
    n = Z.shape[0]
    if y.shape != (n,):
        raise ShapeMismatch(f"labels must be ({n},), got {y.shape}")

    # Forward pass, caching layer inputs and pre-activations.
    inputs = [Z]
    preacts = []
    a = Z
    last = len(params.weights) - 1
    for i, (W, b) in enumerate(zip(params.weights, params.biases)):
        pre = a @ W.T + b
        preacts.append(pre)
        if i != last:
            a = np.maximum(pre, 0)
            inputs.append(a)

    logits = preacts[-1][:, 0]
    probs = sigmoid(logits).astype(Z.dtype)
    delta = ((probs - y) / n)[:, None]

    weight_grads = [None] * len(params.weights)
    bias_grads = [None] * len(params.biases)
    for i in range(last, -1, -1):
        weight_grads[i] = delta.T @ inputs[i]
        bias_grads[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ params.weights[i]) * (preacts[i - 1] > 0)
    return weight_grads, bias_grads


@dataclass
class AdamWState:
    """Optimizer state: step counter plus first/second moment accumulators."""

    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    step: int = 0
    m_weights: list = field(default_factory=list)
    v_weights: list = field(default_factory=list)
    m_biases: list = field(default_factory=list)
    v_biases: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params: MlpParams, **hyper) -> "AdamWState":
        state = cls(**hyper)
        state.m_weights = [np.zeros_like(w) for w in params.weights]
        state.v_weights = [np.zeros_like(w) for w in params.weights]
        state.m_biases = [np.zeros_like(b) for b in params.biases]
        state.v_biases = [np.zeros_like(b) for b in params.biases]
        return state


def adamw_step(state: AdamWState, params: MlpParams, grads):
    """One decoupled-weight-decay Adam update, in place.

    The step counter increments first, so bias correction at step t uses
    1 - beta^t. Weight decay multiplies the parameter itself and is not part
    of the moment accumulators. Returns the same (state, params) pair.
    """
    weight_grads, bias_grads = grads
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t

    def update(param, grad, m, v):
        m *= state.beta1
        m += (1.0 - state.beta1) * grad
        v *= state.beta2
        v += (1.0 - state.beta2) * np.square(grad)
        m_hat = m / bc1
        v_hat = v / bc2
        param -= state.lr * (m_hat / (np.sqrt(v_hat) + state.eps)
                             + state.weight_decay * param)

    for i in range(len(params.weights)):
        update(params.weights[i], weight_grads[i], state.m_weights[i], state.v_weights[i])
        update(params.biases[i], bias_grads[i], state.m_biases[i], state.v_biases[i])
    return state, params


@dataclass(frozen=True)
class TrainConfig:
    """Knobs for the training loop; all defaults are deliberately mild."""

    epochs: int = 10
    batch_size: int = 256
    lr: float = 1e-4
    weight_decay: float = 0.01
    seed: int = 0
    # Recorded as part of the recipe; the perturbation itself is applied while
    # images are embedded, not here (the loop only ever sees fused features).
    augment_probability: float = 0.10

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if not 0.0 <= self.augment_probability <= 1.0:
            raise ValueError("augment_probability must be within [0, 1]")


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    loss: float
    accuracy: float


def train(features, labels, cfg: TrainConfig, arch: MlpConfig = None):
    """Train a head on fused features. Returns ``(params, history)``.

    ``history`` holds one :class:`EpochStats` per epoch: the sample-weighted
    mean of the batch losses seen during the epoch and the full-pass train
    accuracy afterward. Shuffling, init, and therefore the entire run are
    fixed by ``cfg.seed``.
    """
    Z = np.asarray(features, dtype=np.float32)
    y = np.asarray(labels)
    if Z.ndim != 2 or Z.shape[0] == 0:
        raise ShapeMismatch(f"features must be a non-empty (n, d) matrix, got {Z.shape}")
    if y.shape != (Z.shape[0],):
        raise ShapeMismatch(f"labels must be ({Z.shape[0]},), got {y.shape}")
    if not np.isfinite(Z).all():
        raise NonFiniteInput("feature matrix contains non-finite values")
    present = set(np.unique(y).tolist())
    if not present <= {0, 1}:
        raise ValueError(f"labels must be 0 (real) or 1 (fake), got {sorted(present)}")
    for cls_value, name in ((0, "real"), (1, "fake")):
        if cls_value not in present:
            raise EmptyClass(f"training data has no {name} examples")

    if arch is None:
        arch = MlpConfig(input_dim=Z.shape[1])
    elif arch.input_dim != Z.shape[1]:
        raise ShapeMismatch(
            f"architecture expects input_dim {arch.input_dim}, features have {Z.shape[1]}"
        )

    rng = np.random.default_rng(cfg.seed)
    params = _init_with_rng(arch, rng)
    state = AdamWState.for_params(params, lr=cfg.lr, weight_decay=cfg.weight_decay)
    y_f = y.astype(np.float32)
    n = Z.shape[0]

    history = []
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        loss_sum = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            logits = forward_batch(params, Z[idx])
            if not np.isfinite(logits).all():
                raise DivergenceDetected(
                    f"non-finite logit at epoch {epoch}, batch {start // cfg.batch_size}"
                )
            loss = mean_bce_with_logits(logits, y_f[idx])
            grads = backward(params, Z[idx], y_f[idx])
            adamw_step(state, params, grads)
            loss_sum += loss * idx.size
        full_logits = forward_batch(params, Z)
        accuracy = float(np.mean((full_logits >= 0) == (y == 1)))
        history.append(EpochStats(epoch=epoch, loss=loss_sum / n, accuracy=accuracy))
    return params, history


# --- checkpoint serialization ----------------------------------------------

def checkpoint_save(params: MlpParams, path) -> None:
    """Write a head checkpoint; weights are stored as little-endian float32."""
    cfg = params.config
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<HBIH", CHECKPOINT_VERSION,
                            _ACTIVATION_IDS[cfg.activation],
                            cfg.input_dim, len(cfg.hidden_widths)))
        for w in cfg.hidden_widths:
            f.write(struct.pack("<I", w))
        for W, b in zip(params.weights, params.biases):
            out_dim, in_dim = W.shape
            f.write(struct.pack("<II", out_dim, in_dim))
            f.write(np.ascontiguousarray(W, dtype="<f4").tobytes())
            f.write(np.ascontiguousarray(b, dtype="<f4").tobytes())


def checkpoint_load(path):
    """Read a checkpoint back; returns ``(params, config)``.

    A wrong magic, truncation, or trailing garbage raises
    :class:`CorruptCheckpoint`; an unsupported version or a layer block whose
    declared dims contradict the configuration raises
    :class:`VersionMismatch`.
    """
    with open(path, "rb") as f:
        blob = f.read()

    view = memoryview(blob)
    pos = 0

    def take(nbytes, what):
        nonlocal pos
        if pos + nbytes > len(view):
            raise CorruptCheckpoint(f"{path}: truncated while reading {what}")
        chunk = view[pos:pos + nbytes]
        pos += nbytes
        return chunk

    if bytes(take(len(CHECKPOINT_MAGIC), "magic")) != CHECKPOINT_MAGIC:
        raise CorruptCheckpoint(f"{path}: not a head checkpoint (bad magic)")
    version, act_id, input_dim, n_hidden = struct.unpack("<HBIH", take(9, "header"))
    if version != CHECKPOINT_VERSION:
        raise VersionMismatch(
            f"{path}: checkpoint version {version}, this build reads {CHECKPOINT_VERSION}"
        )
    if act_id not in _ACTIVATION_NAMES:
        raise VersionMismatch(f"{path}: unknown activation id {act_id}")
    widths = tuple(
        struct.unpack("<I", take(4, "hidden widths"))[0] for _ in range(n_hidden)
    )
    try:
        config = MlpConfig(input_dim=input_dim, hidden_widths=widths,
                           activation=_ACTIVATION_NAMES[act_id])
    except ValueError as exc:
        raise VersionMismatch(f"{path}: {exc}") from exc

    dims = config.dims
    weights, biases = [], []
    for layer, (fan_in, fan_out) in enumerate(zip(dims[:-1], dims[1:])):
        out_dim, in_dim = struct.unpack("<II", take(8, f"layer {layer} dims"))
        if (out_dim, in_dim) != (fan_out, fan_in):
            raise VersionMismatch(
                f"{path}: layer {layer} declares ({out_dim}, {in_dim}), "
                f"configuration requires ({fan_out}, {fan_in})"
            )
        w_bytes = take(4 * out_dim * in_dim, f"layer {layer} weights")
        b_bytes = take(4 * out_dim, f"layer {layer} biases")
        weights.append(np.frombuffer(w_bytes, dtype="<f4").reshape(out_dim, in_dim).copy())
        biases.append(np.frombuffer(b_bytes, dtype="<f4").copy())
    if pos != len(view):
        raise CorruptCheckpoint(f"{path}: {len(view) - pos} trailing bytes after last layer")
    return MlpParams(config, weights, biases), config
