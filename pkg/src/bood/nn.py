"""Dense MLP with exact analytic gradients, SGD + cosine decay, gradient checking.

All math is float64. Forward/backward cover exactly the fixed compositions the
pipeline needs (MLP body + a pluggable loss head); there is no general autodiff.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Callable, Iterator, Protocol, Sequence

import numpy as np

CHECKPOINT_MAGIC = b"BOODCKPT"
CHECKPOINT_VERSION = 1

ACTIVATIONS = ("relu", "tanh")


@dataclass(frozen=True)
class MlpSpec:
    """Architecture: layer widths (input first, output last) and hidden activation.

    The output layer is always linear.
    """

    layer_widths: tuple[int, ...]
    activation: str = "relu"

    def __post_init__(self):
        if len(self.layer_widths) < 2:
            raise ValueError("MlpSpec needs at least an input and an output width")
        if any(w < 1 for w in self.layer_widths):
            raise ValueError(f"all layer widths must be >= 1, got {self.layer_widths}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}, expected one of {ACTIVATIONS}")

    @property
    def input_width(self) -> int:
        return self.layer_widths[0]

    @property
    def output_width(self) -> int:
        return self.layer_widths[-1]


@dataclass
class MlpParams:
    """Per-layer weights (fan_in, fan_out) and biases (fan_out,), plus the activation."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activation: str = "relu"

    def spec(self) -> MlpSpec:
        widths = [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]
        return MlpSpec(tuple(widths), self.activation)

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases], self.activation)

    def n_params(self) -> int:
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)


@dataclass(frozen=True)
class TrainConfig:
    """SGD schedule knobs shared by every training loop in the pipeline."""

    epochs: int
    batch_size: int
    lr_init: float
    lr_min: float = 0.0
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not (self.lr_init >= self.lr_min >= 0.0):
            raise ValueError("need lr_init >= lr_min >= 0")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")


class LossHead(Protocol):
    """Loss attached on top of MLP outputs; returns mean loss and d(loss)/d(outputs)."""

    def loss_and_dout(self, outputs: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]: ...


def init_params(spec: MlpSpec, rng: np.random.Generator) -> MlpParams:
    """Scaled uniform fan-in init: U(-b, b) with b = sqrt(6 / (fan_in + fan_out))."""
    weights, biases = [], []
    for fan_in, fan_out in zip(spec.layer_widths[:-1], spec.layer_widths[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MlpParams(weights, biases, spec.activation)


def _activate(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0.0)
    return np.tanh(z)


def _activate_deriv(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return (z > 0.0).astype(np.float64)
    t = np.tanh(z)
    return 1.0 - t * t


def _check_input(params: MlpParams, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ValueError(f"expected a 2-D batch, got shape {x.shape}")
    expected = params.weights[0].shape[0]
    if x.shape[1] != expected:
        raise ValueError(f"input has {x.shape[1]} columns but the first layer expects {expected}")
    return x


@dataclass
class ForwardTrace:
    """Intermediate values kept for backprop: per-layer inputs and hidden pre-activations."""

    inputs: list[np.ndarray]
    preacts: list[np.ndarray]
    output: np.ndarray


def forward_trace(params: MlpParams, x: np.ndarray) -> ForwardTrace:
    x = _check_input(params, x)
    inputs = [x]
    preacts = []
    h = x
    n_layers = len(params.weights)
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = h @ w + b
        if i < n_layers - 1:
            preacts.append(z)
            h = _activate(z, params.activation)
            inputs.append(h)
        else:
            h = z
    return ForwardTrace(inputs, preacts, h)


def mlp_forward(params: MlpParams, x: np.ndarray) -> np.ndarray:
    """Evaluate the MLP on a (batch, in) matrix. Pure and deterministic."""
    out = forward_trace(params, x).output
    if not np.all(np.isfinite(out)):
        raise FloatingPointError("non-finite values in MLP output")
    return out


def backprop(params: MlpParams, trace: ForwardTrace, d_out: np.ndarray) -> tuple[MlpParams, np.ndarray]:
    """Propagate d(loss)/d(output) back through the trace.

    Returns gradients shaped exactly like ``params`` plus the gradient with
    respect to the input batch.
    """
    grads_w = [np.empty(0)] * len(params.weights)
    grads_b = [np.empty(0)] * len(params.biases)
    d = np.asarray(d_out, dtype=np.float64)
    for i in range(len(params.weights) - 1, -1, -1):
        grads_w[i] = trace.inputs[i].T @ d
        grads_b[i] = d.sum(axis=0)
        d = d @ params.weights[i].T
        if i > 0:
            d = d * _activate_deriv(trace.preacts[i - 1], params.activation)
    return MlpParams(grads_w, grads_b, params.activation), d


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax_ce(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean softmax cross-entropy and its gradient w.r.t. the logits."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    if logits.ndim != 2:
        raise ValueError(f"expected 2-D logits, got shape {logits.shape}")
    n, v = logits.shape
    if n == 0:
        raise ValueError("empty batch")
    if labels.shape != (n,):
        raise ValueError(f"labels shape {labels.shape} does not match batch size {n}")
    if labels.min() < 0 or labels.max() >= v:
        raise ValueError(f"label out of range [0, {v})")
    logp = log_softmax(logits)
    loss = -logp[np.arange(n), labels].mean()
    d_logits = softmax(logits)
    d_logits[np.arange(n), labels] -= 1.0
    return float(loss), d_logits / n


def loss_and_grads(
    params: MlpParams,
    batch_x: np.ndarray,
    batch_labels: np.ndarray,
    head: LossHead | str = "softmax_ce",
) -> tuple[float, MlpParams, np.ndarray]:
    """Mean loss over the batch plus gradients for all parameters and the input.

    ``head`` is either the built-in ``"softmax_ce"`` over the MLP outputs or any
    object with a ``loss_and_dout(outputs, labels)`` method (used to compose the
    anchor-alignment and detector losses onto the same backprop core).
    """
    if len(np.asarray(batch_x)) == 0:
        raise ValueError("empty batch")
    trace = forward_trace(params, batch_x)
    if head == "softmax_ce":
        loss, d_out = softmax_ce(trace.output, batch_labels)
    else:
        loss, d_out = head.loss_and_dout(trace.output, batch_labels)
    grads, d_input = backprop(params, trace, d_out)
    if not np.isfinite(loss):
        raise FloatingPointError("non-finite loss")
    return loss, grads, d_input


def cosine_lr(step: int, total_steps: int, lr_init: float, lr_min: float) -> float:
    """lr_min + 0.5 (lr_init - lr_min) (1 + cos(pi step/total)); nonincreasing in step."""
    return lr_min + 0.5 * (lr_init - lr_min) * (1.0 + np.cos(np.pi * step / total_steps))


def sgd_step(params: MlpParams, grads: MlpParams, lr: float) -> MlpParams:
    """params - lr * grads, elementwise, as a new parameter set."""
    if [w.shape for w in params.weights] != [g.shape for g in grads.weights]:
        raise ValueError("gradient shapes do not match parameter shapes")
    return MlpParams(
        [w - lr * g for w, g in zip(params.weights, grads.weights)],
        [b - lr * g for b, g in zip(params.biases, grads.biases)],
        params.activation,
    )


def epoch_batches(n_rows: int, batch_size: int, rng: np.random.Generator, shuffle: bool = True) -> Iterator[np.ndarray]:
    """Index batches for one epoch: seeded shuffle, last partial batch kept."""
    order = rng.permutation(n_rows) if shuffle else np.arange(n_rows)
    for start in range(0, n_rows, batch_size):
        yield order[start : start + batch_size]


# --- gradient checking -------------------------------------------------------

@dataclass
class FiniteDiffReport:
    max_rel_error: float
    worst_entry: tuple[int, str, int]  # (layer, "W"|"b"|"x", flat index)
    tolerance: float
    passed: bool = field(init=False)

    def __post_init__(self):
        self.passed = self.max_rel_error < self.tolerance


def central_diff_grad(f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central finite-difference gradient of a scalar function, entry by entry."""
    g = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2.0 * h)
    return g


def rel_errors(analytic: np.ndarray, numeric: np.ndarray, scale: float) -> np.ndarray:
    """Per-entry relative error with a floor tied to the gradient scale.

    The floor keeps finite-difference noise on near-zero entries from
    registering as disagreement while still flagging absolute errors that
    matter at the gradient's magnitude.
    """
    floor = 1e-3 * (1.0 + scale)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def finite_diff_check(
    params: MlpParams,
    batch_x: np.ndarray,
    batch_labels: np.ndarray,
    head: LossHead | str = "softmax_ce",
    tolerance: float = 1e-4,
    h: float = 1e-6,
    analytic: tuple[MlpParams, np.ndarray] | None = None,
    check_input: bool = True,
) -> FiniteDiffReport:
    """Compare analytic gradients against central differences over every entry.

    Covers all parameters and, optionally, the input batch. ``analytic``
    overrides the gradients being checked (used to verify that a deliberately
    corrupted gradient is flagged at the right entry).
    """
    if params.n_params() >= 10_000:
        raise ValueError("finite_diff_check is meant for small nets (< 10k parameters)")
    batch_x = np.asarray(batch_x, dtype=np.float64).copy()
    if analytic is None:
        _, a_grads, a_dx = loss_and_grads(params, batch_x, batch_labels, head)
    else:
        a_grads, a_dx = analytic

    scale = max(
        max((np.abs(w).max() for w in a_grads.weights), default=0.0),
        max((np.abs(b).max() for b in a_grads.biases), default=0.0),
        float(np.abs(a_dx).max()) if a_dx.size else 0.0,
    )

    worst = (0, "W", 0)
    worst_err = 0.0

    def consider(err: np.ndarray, layer: int, kind: str):
        nonlocal worst, worst_err
        idx = int(np.argmax(err))
        if err.reshape(-1)[idx] > worst_err:
            worst_err = float(err.reshape(-1)[idx])
            worst = (layer, kind, idx)

    work = params.copy()

    def loss_at(_arr: np.ndarray) -> float:
        loss, _, _ = loss_and_grads(work, batch_x, batch_labels, head)
        return loss

    for i in range(len(work.weights)):
        num = central_diff_grad(loss_at, work.weights[i], h)
        consider(rel_errors(a_grads.weights[i], num, scale), i, "W")
        num = central_diff_grad(loss_at, work.biases[i], h)
        consider(rel_errors(a_grads.biases[i], num, scale), i, "b")

    if check_input:
        def loss_at_x(arr: np.ndarray) -> float:
            loss, _, _ = loss_and_grads(params, arr, batch_labels, head)
            return loss

        num = central_diff_grad(loss_at_x, batch_x, h)
        consider(rel_errors(a_dx, num, scale), -1, "x")

    return FiniteDiffReport(worst_err, worst, tolerance)


# --- checkpoint file ---------------------------------------------------------

def save_checkpoint(path, params: MlpParams) -> None:
    """Versioned little-endian binary: magic, version, layer count, widths, then
    per-layer float64 weights (row-major) and biases."""
    widths = params.spec().layer_widths
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", CHECKPOINT_VERSION, len(widths)))
        fh.write(struct.pack(f"<{len(widths)}I", *widths))
        for w, b in zip(params.weights, params.biases):
            fh.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def load_checkpoint(path, activation: str = "relu") -> MlpParams:
    """Read a checkpoint written by :func:`save_checkpoint`.

    The file stores shapes and values only; the activation comes from the
    caller's config.
    """
    with open(path, "rb") as fh:
        magic = fh.read(len(CHECKPOINT_MAGIC))
        if magic != CHECKPOINT_MAGIC:
            raise ValueError(f"bad checkpoint magic {magic!r}")
        version, n_widths = struct.unpack("<II", fh.read(8))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {version}")
        widths = struct.unpack(f"<{n_widths}I", fh.read(4 * n_widths))
        weights, biases = [], []
        for fan_in, fan_out in zip(widths[:-1], widths[1:]):
            buf = fh.read(8 * fan_in * fan_out)
            weights.append(np.frombuffer(buf, dtype="<f8").reshape(fan_in, fan_out).copy())
            buf = fh.read(8 * fan_out)
            biases.append(np.frombuffer(buf, dtype="<f8").copy())
        trailing = fh.read(1)
        if trailing:
            raise ValueError("trailing bytes after checkpoint payload")
    return MlpParams(weights, biases, activation)
