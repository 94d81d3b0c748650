"""Energy-regularized OOD detector: classifier backbone plus a learned energy score.

The backbone is a standard softmax classifier over the input space. Its energy
E = -logsumexp(logits) feeds a small scalar MLP whose output, squashed through
a logistic, is the ID-vs-OOD score. Training combines classification
cross-entropy on ID data with a binary logistic term that pushes the score up
on ID samples and down on synthesized outliers, weighted by beta.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import nn
from .rng import make_rng

DETECTOR_MODES = ("decoded", "latent")


@dataclass
class EnergyHead:
    """Scalar-to-scalar MLP applied to the energy; 3 weight layers by default."""

    params: nn.MlpParams

    def __post_init__(self):
        spec = self.params.spec()
        if spec.input_width != 1 or spec.output_width != 1:
            raise ValueError("energy head must map a scalar to a scalar")

    def apply(self, e: np.ndarray) -> np.ndarray:
        e = np.asarray(e, dtype=np.float64)
        return nn.mlp_forward(self.params, e.reshape(-1, 1))[:, 0]


@dataclass
class DetectorModel:
    """Backbone logits plus the energy head; mode records which space it consumes.

    decoded: inputs are input-space vectors (OOD training samples come from the
    toy decoder). latent: the backbone consumes latent features directly.
    """

    backbone: nn.MlpParams
    head: EnergyHead
    mode: str = "decoded"

    def __post_init__(self):
        if self.mode not in DETECTOR_MODES:
            raise ValueError(f"unknown detector mode {self.mode!r}")

    @property
    def class_count(self) -> int:
        return self.backbone.spec().output_width

    @property
    def input_dim(self) -> int:
        return self.backbone.spec().input_width

    def logits(self, x: np.ndarray) -> np.ndarray:
        return nn.mlp_forward(self.backbone, np.atleast_2d(x))


@dataclass(frozen=True)
class DetectorTrainConfig:
    beta: float = 2.5
    epochs: int = 30
    batch_size: int = 160
    lr_init: float = 0.1
    lr_min: float = 0.0
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("bad epochs/batch_size")
        if not (self.lr_init >= self.lr_min >= 0.0):
            raise ValueError("need lr_init >= lr_min >= 0")


def build_detector(
    input_dim: int,
    class_count: int,
    hidden: tuple[int, ...],
    activation: str = "relu",
    energy_hidden: int = 16,
    mode: str = "decoded",
    seed: int = 0,
) -> DetectorModel:
    """Fresh detector with fan-in initialized backbone and energy head.

    The head always uses tanh: its input (the energy) is strictly negative for
    confident logits, and a relu head can initialize with every first-layer
    unit dead, which would freeze it for the whole run.
    """
    backbone = nn.init_params(
        nn.MlpSpec((input_dim, *hidden, class_count), activation), make_rng(seed, "detector-init")
    )
    head = EnergyHead(
        nn.init_params(nn.MlpSpec((1, energy_hidden, energy_hidden, 1), "tanh"), make_rng(seed, "energy-head-init"))
    )
    return DetectorModel(backbone, head, mode)


def energy(logits: np.ndarray) -> float | np.ndarray:
    """E = -log sum_k exp(logit_k), computed with max subtraction; temperature 1.

    Accepts a single logit vector (returns a float) or a batch (returns one
    energy per row). Adding a constant c to all logits shifts E by exactly -c.
    """
    logits = np.asarray(logits, dtype=np.float64)
    single = logits.ndim == 1
    batch = np.atleast_2d(logits)
    m = batch.max(axis=1)
    e = -(m + np.log(np.exp(batch - m[:, None]).sum(axis=1)))
    return float(e[0]) if single else e


def sigmoid(u: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(u, dtype=np.float64)))


def _softplus(u: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, u)


def _score_logit(model: DetectorModel, x: np.ndarray) -> np.ndarray:
    return model.head.apply(energy(model.logits(x)))


def ood_loss(model: DetectorModel, id_batch: np.ndarray, ood_batch: np.ndarray) -> float:
    """Binary logistic loss on the energy-head output u = head(E(logits)).

    mean over ID of -log sigmoid(u) plus mean over OOD of -log(1 - sigmoid(u)),
    evaluated in softplus form for stability.
    """
    id_batch, ood_batch = np.atleast_2d(id_batch), np.atleast_2d(ood_batch)
    if len(id_batch) == 0 or len(ood_batch) == 0:
        raise ValueError("empty batch")
    u_id = _score_logit(model, id_batch)
    u_ood = _score_logit(model, ood_batch)
    return float(_softplus(-u_id).mean() + _softplus(u_ood).mean())


def objective_and_grads(
    model: DetectorModel,
    id_x: np.ndarray,
    id_y: np.ndarray,
    ood_x: np.ndarray,
    beta: float,
) -> tuple[float, float, nn.MlpParams, nn.MlpParams]:
    """(ce_loss, ood_loss, backbone grads, head grads) of CE + beta * OOD loss.

    The OOD term backpropagates through the energy head, the energy, and the
    backbone; at beta = 0 the backbone gradients reduce exactly to plain CE and
    the head gradients vanish.
    """
    id_x, ood_x = np.atleast_2d(id_x), np.atleast_2d(ood_x)
    if len(id_x) == 0 or len(ood_x) == 0:
        raise ValueError("empty batch")
    if id_x.shape[1] != model.input_dim or ood_x.shape[1] != model.input_dim:
        raise ValueError(
            f"batch dim {id_x.shape[1]}/{ood_x.shape[1]} does not match detector input dim {model.input_dim}"
        )
    n_id, n_ood = len(id_x), len(ood_x)

    trace_id = nn.forward_trace(model.backbone, id_x)
    trace_ood = nn.forward_trace(model.backbone, ood_x)
    ce, d_ce = nn.softmax_ce(trace_id.output, id_y)

    e_all = np.concatenate([energy(trace_id.output), energy(trace_ood.output)])
    trace_head = nn.forward_trace(model.head.params, e_all.reshape(-1, 1))
    u = trace_head.output[:, 0]
    u_id, u_ood = u[:n_id], u[n_id:]
    l_ood = float(_softplus(-u_id).mean() + _softplus(u_ood).mean())

    d_u = np.concatenate([(sigmoid(u_id) - 1.0) / n_id, sigmoid(u_ood) / n_ood])
    head_grads, d_e = nn.backprop(model.head.params, trace_head, d_u.reshape(-1, 1))
    # dE/dlogits = -softmax(logits)
    d_logits_id = d_e[:n_id] * (-nn.softmax(trace_id.output))
    d_logits_ood = d_e[n_id:] * (-nn.softmax(trace_ood.output))

    g_id, _ = nn.backprop(model.backbone, trace_id, d_ce + beta * d_logits_id)
    g_ood, _ = nn.backprop(model.backbone, trace_ood, d_logits_ood)
    backbone_grads = nn.MlpParams(
        [a + beta * b for a, b in zip(g_id.weights, g_ood.weights)],
        [a + beta * b for a, b in zip(g_id.biases, g_ood.biases)],
        model.backbone.activation,
    )
    head_grads = nn.MlpParams(
        [beta * w for w in head_grads.weights],
        [beta * b for b in head_grads.biases],
        model.head.params.activation,
    )
    return ce, l_ood, backbone_grads, head_grads


class _CyclingBatches:
    """Deterministic endless permuted index stream over the outlier pool."""

    def __init__(self, n: int, rng: np.random.Generator):
        self.n = n
        self.rng = rng
        self.perm = rng.permutation(n)
        self.pos = 0

    def take(self, k: int) -> np.ndarray:
        out = []
        while k > 0:
            if self.pos >= self.n:
                self.perm = self.rng.permutation(self.n)
                self.pos = 0
            grab = min(k, self.n - self.pos)
            out.append(self.perm[self.pos : self.pos + grab])
            self.pos += grab
            k -= grab
        return np.concatenate(out)


def train_detector(
    id_dataset,
    ood_inputs: np.ndarray,
    model: DetectorModel,
    config: DetectorTrainConfig,
) -> tuple[DetectorModel, list[dict]]:
    """SGD on CE + beta * OOD loss with cosine learning-rate decay.

    Each ID batch is paired with an equally sized batch cycled from the outlier
    pool (separate RNG streams, so the ID batch order is independent of the
    pairing and a beta=0 run updates exactly like plain CE training). Returns
    the trained model and per-epoch (ce_loss, ood_loss, id_acc) history.
    """
    ood_inputs = np.atleast_2d(np.asarray(ood_inputs, dtype=np.float64))
    labels = np.asarray(id_dataset.labels)
    if len(ood_inputs) == 0:
        raise ValueError("empty outlier pool")
    if id_dataset.rows.shape[1] != model.input_dim or ood_inputs.shape[1] != model.input_dim:
        raise ValueError(
            f"detector in {model.mode!r} mode expects input dim {model.input_dim}, got "
            f"id={id_dataset.rows.shape[1]} ood={ood_inputs.shape[1]}"
        )
    if labels.max() >= model.class_count or labels.min() < 0:
        raise ValueError("label out of range for the detector backbone")

    backbone = model.backbone.copy()
    head_params = model.head.params.copy()
    history: list[dict] = []
    if config.epochs == 0:
        return DetectorModel(backbone, EnergyHead(head_params), model.mode), history

    rng_id = make_rng(config.seed, "detector-shuffle")
    ood_stream = _CyclingBatches(len(ood_inputs), make_rng(config.seed, "detector-ood"))
    n = len(labels)
    batches_per_epoch = (n + config.batch_size - 1) // config.batch_size
    total_steps = config.epochs * batches_per_epoch
    step = 0
    for epoch in range(config.epochs):
        ce_sum = 0.0
        ood_sum = 0.0
        correct = 0
        for idx in nn.epoch_batches(n, config.batch_size, rng_id, config.shuffle):
            bx, by = id_dataset.rows[idx], labels[idx]
            bo = ood_inputs[ood_stream.take(len(idx))]
            lr = nn.cosine_lr(step, total_steps, config.lr_init, config.lr_min)
            work = DetectorModel(backbone, EnergyHead(head_params), model.mode)
            ce, l_ood, g_backbone, g_head = objective_and_grads(work, bx, by, bo, config.beta)
            preds = np.argmax(nn.mlp_forward(backbone, bx), axis=1)
            backbone = nn.sgd_step(backbone, g_backbone, lr)
            head_params = nn.sgd_step(head_params, g_head, lr)
            step += 1
            ce_sum += ce * len(idx)
            ood_sum += l_ood * len(idx)
            correct += int((preds == by).sum())
        history.append(
            {"epoch": epoch, "ce_loss": ce_sum / n, "ood_loss": ood_sum / n, "id_acc": correct / n}
        )
    return DetectorModel(backbone, EnergyHead(head_params), model.mode), history


def ood_score(model: DetectorModel, x: np.ndarray) -> float | np.ndarray:
    """sigmoid(head(E(logits(x)))) in (0, 1); higher means more ID-like."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    s = sigmoid(_score_logit(model, np.atleast_2d(x)))
    return float(s[0]) if single else s
