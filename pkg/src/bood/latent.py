"""Class-anchored latent space: anchor embeddings, encoder training, cosine classifier.

Each class gets a fixed unit-norm anchor vector. The encoder is trained so that
the normalized feature of a sample aligns with its class anchor (softmax
cross-entropy over anchor dot products at temperature t), and classification is
by maximal cosine similarity to the anchors.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from typing import TYPE_CHECKING

import numpy as np

from . import nn
from .rng import make_rng

if TYPE_CHECKING:
    from .data import Dataset

NORM_EPS = 1e-9

ANCHOR_MODES = ("random_orthonormal", "from_file")


@dataclass
class AnchorSet:
    """One unit-norm anchor vector per class."""

    class_names: list[str]
    vectors: np.ndarray  # (V, n), unit rows

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2 or len(self.vectors) != len(self.class_names):
            raise ValueError("anchor matrix inconsistent with class names")
        if len(self.class_names) < 2:
            raise ValueError("need at least 2 classes")
        if len(set(self.class_names)) != len(self.class_names):
            raise ValueError("duplicate class names in anchor set")
        norms = np.linalg.norm(self.vectors, axis=1)
        if np.any(np.abs(norms - 1.0) > 1e-12):
            raise ValueError("anchors must be unit norm")
        for i in range(len(self.vectors)):
            for j in range(i + 1, len(self.vectors)):
                if np.array_equal(self.vectors[i], self.vectors[j]):
                    raise ValueError(
                        f"anchors for {self.class_names[i]!r} and {self.class_names[j]!r} coincide"
                    )

    @property
    def class_count(self) -> int:
        return len(self.class_names)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


def make_anchors(
    mode: str,
    class_count: int | None = None,
    dim: int | None = None,
    seed: int | None = None,
    path=None,
    class_names: list[str] | None = None,
) -> AnchorSet:
    """Build the per-class anchor set.

    ``random_orthonormal`` draws pairwise-orthogonal unit vectors (requires
    dim >= class_count); ``from_file`` reads a name,components CSV and
    normalizes each row.
    """
    if mode == "random_orthonormal":
        if class_count is None or dim is None or seed is None:
            raise ValueError("random_orthonormal needs class_count, dim and seed")
        if dim < class_count:
            raise ValueError(f"orthonormal anchors need dim >= class_count ({dim} < {class_count})")
        rng = make_rng(seed, "anchors")
        q, _ = np.linalg.qr(rng.standard_normal((dim, class_count)))
        names = class_names or [f"class_{i}" for i in range(class_count)]
        return AnchorSet(names, q.T[:class_count])
    if mode == "from_file":
        if path is None:
            raise ValueError("from_file needs a path")
        return load_anchors_csv(path)
    raise ValueError(f"unknown anchor mode {mode!r}, expected one of {ANCHOR_MODES}")


def load_anchors_csv(path) -> AnchorSet:
    names: list[str] = []
    rows: list[list[float]] = []
    with open(path, newline="") as fh:
        for lineno, rec in enumerate(csv.reader(fh), start=1):
            if not rec:
                continue
            if len(rec) < 2:
                raise ValueError(f"line {lineno}: need a class name plus components")
            if rows and len(rec) - 1 != len(rows[0]):
                raise ValueError(f"line {lineno}: ragged anchor row")
            names.append(rec[0])
            try:
                rows.append([float(v) for v in rec[1:]])
            except ValueError as exc:
                raise ValueError(f"line {lineno}: non-numeric anchor component ({exc})") from None
    if not rows:
        raise ValueError(f"{path}: empty anchor file")
    vecs = np.array(rows)
    norms = np.linalg.norm(vecs, axis=1, keepdims=True)
    if np.any(norms <= NORM_EPS):
        raise ValueError("anchor row with (near-)zero norm")
    return AnchorSet(names, vecs / norms)


def save_anchors_csv(anchors: AnchorSet, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for name, vec in zip(anchors.class_names, anchors.vectors):
            writer.writerow([name] + [repr(float(v)) for v in vec])


@dataclass
class EncoderModel:
    """MLP encoder plus its anchor set and the softmax temperature."""

    params: nn.MlpParams
    anchors: AnchorSet
    temperature: float = 1.0

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        out_width = self.params.spec().output_width
        if out_width != self.anchors.dim:
            raise ValueError(f"encoder output width {out_width} != anchor dim {self.anchors.dim}")

    def encode(self, x: np.ndarray) -> np.ndarray:
        """Raw (un-normalized) encoder features for a batch."""
        return nn.mlp_forward(self.params, x)

    def logits(self, x: np.ndarray) -> np.ndarray:
        """Cosine logits of raw inputs: encode then compare to anchors."""
        return cosine_logits_batch(self, self.encode(x))


@dataclass
class LatentFeature:
    """A feature vector in the anchor-aligned latent space, tagged with its origin."""

    z: np.ndarray
    label: int
    source_index: int


def build_encoder(
    anchors: AnchorSet,
    hidden: tuple[int, ...],
    input_dim: int,
    activation: str = "relu",
    temperature: float = 1.0,
    seed: int = 0,
) -> EncoderModel:
    spec = nn.MlpSpec((input_dim, *hidden, anchors.dim), activation)
    params = nn.init_params(spec, make_rng(seed, "encoder-init"))
    return EncoderModel(params, anchors, temperature)


def _unit_rows(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(z, axis=-1, keepdims=True)
    if np.any(norms <= NORM_EPS):
        raise ValueError("degenerate feature with near-zero norm")
    return z / norms, norms


def cosine_logits_batch(model: EncoderModel, z: np.ndarray) -> np.ndarray:
    z = np.atleast_2d(np.asarray(z, dtype=np.float64))
    if z.shape[1] != model.anchors.dim:
        raise ValueError(f"feature dim {z.shape[1]} != anchor dim {model.anchors.dim}")
    zn, _ = _unit_rows(z)
    return zn @ model.anchors.vectors.T


def cosine_logits(model: EncoderModel, z: np.ndarray) -> np.ndarray:
    """Cosine similarity of one feature vector to every class anchor, in [-1, 1]."""
    return cosine_logits_batch(model, z)[0]


def predict(model: EncoderModel, z: np.ndarray) -> int:
    """argmax of the cosine logits; ties break to the lowest class index."""
    return int(np.argmax(cosine_logits(model, z)))


class CosineAnchorHead:
    """Loss head: softmax CE over (anchor . normalized-feature / t).

    Provides the gradient w.r.t. the RAW encoder outputs, chaining through the
    row normalization.
    """

    def __init__(self, anchors: AnchorSet, temperature: float):
        self.anchors = anchors
        self.temperature = temperature

    def loss_and_dout(self, outputs: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
        zn, norms = _unit_rows(outputs)
        logits = zn @ self.anchors.vectors.T / self.temperature
        loss, d_logits = nn.softmax_ce(logits, labels)
        d_zn = d_logits @ self.anchors.vectors / self.temperature
        radial = (zn * d_zn).sum(axis=1, keepdims=True)
        d_out = (d_zn - radial * zn) / norms
        return loss, d_out


def latent_loss(model: EncoderModel, batch_x: np.ndarray, labels: np.ndarray) -> float:
    """Mean anchor-alignment loss of a batch under the current encoder."""
    head = CosineAnchorHead(model.anchors, model.temperature)
    z = model.encode(np.atleast_2d(batch_x))
    loss, _ = head.loss_and_dout(z, np.asarray(labels))
    return loss


def train_encoder(
    dataset: "Dataset",
    model: EncoderModel,
    config: nn.TrainConfig,
) -> tuple[EncoderModel, list[dict]]:
    """SGD with cosine learning-rate decay on the anchor-alignment loss.

    Returns the trained model and a per-epoch history of mean loss and
    training accuracy. ``epochs=0`` returns the parameters untouched.
    """
    labels = np.asarray(dataset.labels)
    if len(labels) == 0:
        raise ValueError("empty dataset")
    if labels.min() < 0 or labels.max() >= model.anchors.class_count:
        raise ValueError("dataset label outside the anchor set")
    params = model.params.copy()
    history: list[dict] = []
    if config.epochs == 0:
        return replace(model, params=params), history

    head = CosineAnchorHead(model.anchors, model.temperature)
    rng = make_rng(config.seed, "encoder-shuffle")
    n = len(labels)
    batches_per_epoch = (n + config.batch_size - 1) // config.batch_size
    total_steps = config.epochs * batches_per_epoch
    step = 0
    for epoch in range(config.epochs):
        loss_sum = 0.0
        correct = 0
        for idx in nn.epoch_batches(n, config.batch_size, rng, config.shuffle):
            bx, by = dataset.rows[idx], labels[idx]
            lr = nn.cosine_lr(step, total_steps, config.lr_init, config.lr_min)
            z = nn.forward_trace(params, bx)
            loss, d_out = head.loss_and_dout(z.output, by)
            grads, _ = nn.backprop(params, z, d_out)
            params = nn.sgd_step(params, grads, lr)
            step += 1
            loss_sum += loss * len(idx)
            zn, _ = _unit_rows(z.output)
            preds = np.argmax(zn @ model.anchors.vectors.T, axis=1)
            correct += int((preds == by).sum())
        history.append({"epoch": epoch, "loss": loss_sum / n, "acc": correct / n})
    return replace(model, params=params), history


def encode_dataset(model: EncoderModel, dataset: "Dataset") -> list[LatentFeature]:
    """One latent feature per dataset row, order preserved, raw encoder outputs."""
    z = model.encode(dataset.rows)
    norms = np.linalg.norm(z, axis=1)
    if np.any(norms <= NORM_EPS):
        bad = int(np.argmin(norms))
        raise ValueError(f"encoder produced a degenerate feature at row {bad}")
    return [LatentFeature(z[i].copy(), int(dataset.labels[i]), i) for i in range(len(z))]
