"""Synthetic benchmark datasets, OOD test-set generators, and the toy linear decoder.

The class structure lives in a low-dimensional "structure" space (circle of
Gaussian blobs by default), is embedded into the input space by an orthonormal
mixing matrix, and gets isotropic input-space noise. The toy decoder is a
least-squares linear map from encoder latents back to the input space; it
stands in for a generative image decoder so the detector can train on decoded
outliers in the same space as the ID data.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .rng import derive_seed, make_rng

DATASET_KINDS = ("gaussian_mixture", "two_rings", "from_csv")
OOD_SHIFT_KINDS = ("held_out_classes", "radial_shift", "uniform_box")

# held-out class centers sit between the ID directions, this factor further out
HELD_OUT_RADIUS_FACTOR = 1.5


@dataclass(frozen=True)
class DatasetSpec:
    kind: str = "gaussian_mixture"
    classes: int = 8
    input_dim: int = 16
    train_per_class: int = 500
    test_per_class: int = 200
    class_center_scale: float = 3.0
    noise_sigma: float = 0.2
    structure_dim: int = 2
    seed: int = 0
    mixing_seed: int | None = None  # defaults to a stream derived from `seed`
    path: str | None = None  # for kind="from_csv"

    def __post_init__(self):
        if self.kind not in DATASET_KINDS:
            raise ValueError(f"unknown dataset kind {self.kind!r}")
        if self.kind != "from_csv":
            if self.classes < 2:
                raise ValueError("need at least 2 classes")
            if self.train_per_class < 1 or self.test_per_class < 1:
                raise ValueError("need at least 1 sample per class and split")
            if self.noise_sigma < 0:
                raise ValueError("noise_sigma must be >= 0")
            if self.structure_dim < 1 or self.input_dim < self.structure_dim:
                raise ValueError("need input_dim >= structure_dim >= 1")
        elif not self.path:
            raise ValueError("kind='from_csv' requires a path")


@dataclass
class Dataset:
    """Rows (m, D) with integer labels and a split tag."""

    rows: np.ndarray
    labels: np.ndarray
    split: str = "train"

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.rows.ndim != 2 or len(self.rows) != len(self.labels):
            raise ValueError("rows and labels are inconsistent")

    def __len__(self) -> int:
        return len(self.rows)


@dataclass
class GeneratorRecord:
    """Everything needed to reproduce / reason about one generated benchmark."""

    seed: int
    centers: np.ndarray  # (V, structure_dim)
    mixing: np.ndarray  # (D, structure_dim), orthonormal columns
    noise_sigma: float
    margins: dict[str, float] = field(default_factory=dict)

    def input_space_centers(self) -> np.ndarray:
        return self.centers @ self.mixing.T

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "centers": self.centers.tolist(),
            "W": self.mixing.tolist(),
            "noise_sigma": self.noise_sigma,
            "margins": self.margins,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorRecord":
        return cls(
            seed=int(d["seed"]),
            centers=np.asarray(d["centers"], dtype=np.float64),
            mixing=np.asarray(d["W"], dtype=np.float64),
            noise_sigma=float(d["noise_sigma"]),
            margins=dict(d.get("margins", {})),
        )


def _structure_centers(spec: DatasetSpec, rng: np.random.Generator) -> np.ndarray:
    if spec.structure_dim == 2 and spec.classes <= 8:
        angles = 2.0 * np.pi * np.arange(spec.classes) / spec.classes
        return spec.class_center_scale * np.column_stack([np.cos(angles), np.sin(angles)])
    return spec.class_center_scale * rng.standard_normal((spec.classes, spec.structure_dim))


def _mixing_matrix(spec: DatasetSpec) -> np.ndarray:
    if spec.input_dim == spec.structure_dim:
        return np.eye(spec.input_dim)
    seed = spec.mixing_seed if spec.mixing_seed is not None else derive_seed(spec.seed, "mixing")
    rng = np.random.default_rng(seed)
    q, _ = np.linalg.qr(rng.standard_normal((spec.input_dim, spec.structure_dim)))
    return q  # orthonormal columns: the embedding is an isometry


def _sample_classes(
    structure_points: np.ndarray,
    labels: np.ndarray,
    mixing: np.ndarray,
    sigma: float,
    rng: np.random.Generator,
    split: str,
) -> Dataset:
    x = structure_points @ mixing.T
    if sigma > 0:
        x = x + sigma * rng.standard_normal(x.shape)
    return Dataset(x, labels, split=split)


def gen_gaussian_mixture(spec: DatasetSpec) -> tuple[Dataset, Dataset, GeneratorRecord]:
    """Seeded Gaussian-mixture benchmark: (train, id_test, generator record).

    Deterministic per spec; ``noise_sigma=0`` collapses every sample onto its
    class center.
    """
    if spec.kind == "two_rings":
        return _gen_two_rings(spec)
    if spec.kind != "gaussian_mixture":
        raise ValueError(f"gen_gaussian_mixture cannot generate kind {spec.kind!r}")
    rng_centers = make_rng(spec.seed, "centers")
    centers = _structure_centers(spec, rng_centers)
    mixing = _mixing_matrix(spec)
    record = GeneratorRecord(spec.seed, centers, mixing, spec.noise_sigma)

    def split(count_per_class: int, name: str) -> Dataset:
        labels = np.repeat(np.arange(spec.classes), count_per_class)
        pts = centers[labels]
        return _sample_classes(pts, labels, mixing, spec.noise_sigma, make_rng(spec.seed, f"data-{name}"), name)

    return split(spec.train_per_class, "train"), split(spec.test_per_class, "id_test"), record


def _gen_two_rings(spec: DatasetSpec) -> tuple[Dataset, Dataset, GeneratorRecord]:
    """Two concentric rings (V=2) in the structure plane, for quick 2-class smoke runs."""
    if spec.classes != 2 or spec.structure_dim != 2:
        raise ValueError("two_rings requires classes=2 and structure_dim=2")
    mixing = _mixing_matrix(spec)
    radii = np.array([0.5 * spec.class_center_scale, spec.class_center_scale])
    centers = np.column_stack([radii, np.zeros(2)])  # representative points, one per ring
    record = GeneratorRecord(spec.seed, centers, mixing, spec.noise_sigma)

    def split(count_per_class: int, name: str) -> Dataset:
        rng = make_rng(spec.seed, f"data-{name}")
        labels = np.repeat(np.arange(2), count_per_class)
        theta = rng.uniform(0.0, 2.0 * np.pi, size=len(labels))
        r = radii[labels]
        pts = np.column_stack([r * np.cos(theta), r * np.sin(theta)])
        return _sample_classes(pts, labels, mixing, spec.noise_sigma, rng, name)

    return split(spec.train_per_class, "train"), split(spec.test_per_class, "id_test"), record


def gen_ood_testset(
    spec: DatasetSpec,
    shift_kind: str,
    n_samples: int | None = None,
    factor: float = 2.0,
) -> tuple[Dataset, dict[str, float]]:
    """OOD test samples disjoint from the ID class supports by construction.

    held_out_classes: extra mixture components between and beyond the ID
    directions; radial_shift: ID-like samples scaled outward by ``factor``
    (must be >= 2, anything less would overlap the ID region); uniform_box:
    uniform samples outside the ID bounding box inflated by 1.5x.

    Returns the dataset plus margin info to merge into the generator record.
    """
    if shift_kind not in OOD_SHIFT_KINDS:
        raise ValueError(f"unknown OOD shift kind {shift_kind!r}")
    if n_samples is None:
        n_samples = spec.classes * spec.test_per_class
    rng = make_rng(spec.seed, f"ood-{shift_kind}")
    centers = _structure_centers(spec, make_rng(spec.seed, "centers"))
    mixing = _mixing_matrix(spec)
    sigma = spec.noise_sigma
    id_centers_x = centers @ mixing.T

    if shift_kind == "held_out_classes":
        declared_margin = 6.0 * sigma
        ood_centers = _held_out_centers(spec, centers, declared_margin, rng)
        comp = rng.integers(0, len(ood_centers), size=n_samples)
        pts = ood_centers[comp]
        ds = _sample_classes(pts, np.zeros(n_samples, dtype=np.int64), mixing, sigma, rng, "ood_test")
        min_center_dist = float(
            np.linalg.norm(ood_centers[:, None, :] - centers[None, :, :], axis=2).min()
        )
        _assert_outside_id_balls(ds.rows, id_centers_x, 3.0 * sigma)
        info = {"declared_margin": declared_margin, "min_center_distance": min_center_dist}
        return ds, info

    if shift_kind == "radial_shift":
        if factor < 2.0:
            raise ValueError("radial_shift factor must be >= 2 (smaller factors overlap the ID region)")
        labels = rng.integers(0, spec.classes, size=n_samples)
        pts = centers[labels] + sigma * rng.standard_normal((n_samples, spec.structure_dim))
        pts = factor * pts
        ds = _sample_classes(pts, np.zeros(n_samples, dtype=np.int64), mixing, sigma, rng, "ood_test")
        return ds, {"radial_factor": factor}

    # uniform_box
    lo = centers.min(axis=0) - 3.0 * sigma
    hi = centers.max(axis=0) + 3.0 * sigma
    extent = hi - lo
    if np.all(extent <= 0.0):
        raise ValueError("degenerate ID bounding box: complement has zero volume")
    mid = 0.5 * (lo + hi)
    inner_half = 0.75 * extent  # 1.5x inflation
    outer_half = 1.5 * extent  # sampling region, 3x inflation
    pts = np.empty((0, spec.structure_dim))
    tries = 0
    while len(pts) < n_samples:
        tries += 1
        if tries > 200:
            raise ValueError("uniform_box rejection sampling failed; box complement too small")
        cand = mid + rng.uniform(-1.0, 1.0, size=(n_samples, spec.structure_dim)) * outer_half
        inside = np.all(np.abs(cand - mid) <= inner_half, axis=1)
        pts = np.concatenate([pts, cand[~inside]])
    pts = pts[:n_samples]
    ds = _sample_classes(pts, np.zeros(n_samples, dtype=np.int64), mixing, sigma, rng, "ood_test")
    return ds, {"box_inflation": 1.5}


def _held_out_centers(
    spec: DatasetSpec, centers: np.ndarray, margin: float, rng: np.random.Generator
) -> np.ndarray:
    if spec.structure_dim == 2 and spec.classes <= 8:
        angles = 2.0 * np.pi * (np.arange(spec.classes) + 0.5) / spec.classes
        r = HELD_OUT_RADIUS_FACTOR * spec.class_center_scale
        ood = r * np.column_stack([np.cos(angles), np.sin(angles)])
    else:
        ood = np.empty((0, spec.structure_dim))
        tries = 0
        while len(ood) < spec.classes:
            tries += 1
            if tries > 1000:
                raise ValueError("could not place held-out centers at the declared margin")
            cand = HELD_OUT_RADIUS_FACTOR * spec.class_center_scale * rng.standard_normal((1, spec.structure_dim))
            if np.linalg.norm(cand - centers, axis=1).min() >= margin:
                ood = np.concatenate([ood, cand])
    dists = np.linalg.norm(ood[:, None, :] - centers[None, :, :], axis=2)
    if dists.min() < margin:
        raise ValueError("held-out centers violate the declared margin")
    return ood


def _assert_outside_id_balls(rows: np.ndarray, id_centers: np.ndarray, radius: float) -> None:
    d = np.linalg.norm(rows[:, None, :] - id_centers[None, :, :], axis=2).min(axis=1)
    if d.min() <= radius:
        raise RuntimeError("generated OOD sample fell inside an ID 3-sigma ball")


# --- toy linear decoder ------------------------------------------------------

@dataclass
class ToyDecoder:
    """Linear latent-to-input map x = W z + bias; the stand-in for a generative decoder."""

    weight: np.ndarray  # (D, n)
    bias: np.ndarray  # (D,)

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ValueError("inconsistent decoder shapes")
        smin = np.linalg.svd(self.weight, compute_uv=False).min()
        if smin <= 1e-8:
            raise ValueError(f"decoder weight is rank deficient (smallest singular value {smin:.3g})")


def fit_toy_decoder(latents: np.ndarray, inputs: np.ndarray) -> ToyDecoder:
    """Least-squares linear map from latent features to their source inputs."""
    z = np.asarray(latents, dtype=np.float64)
    x = np.asarray(inputs, dtype=np.float64)
    if z.ndim != 2 or x.ndim != 2 or len(z) != len(x):
        raise ValueError("latents and inputs must be matching 2-D batches")
    design = np.column_stack([z, np.ones(len(z))])
    coef, *_ = np.linalg.lstsq(design, x, rcond=None)
    return ToyDecoder(coef[:-1].T, coef[-1])


def toy_decode(decoder: ToyDecoder, z: np.ndarray) -> np.ndarray:
    """Decode one latent vector or a batch of them into input space."""
    z = np.asarray(z, dtype=np.float64)
    n = decoder.weight.shape[1]
    if z.shape[-1] != n:
        raise ValueError(f"latent has dim {z.shape[-1]}, decoder expects {n}")
    return z @ decoder.weight.T + decoder.bias


# --- CSV ingestion / serialization -------------------------------------------

def load_embeddings_csv(path) -> tuple[Dataset, list[str]]:
    """Load a label,components CSV; labels become dense indices in first-appearance order."""
    names: list[str] = []
    index: dict[str, int] = {}
    rows: list[list[float]] = []
    labels: list[int] = []
    width = None
    with open(path, newline="") as fh:
        for lineno, rec in enumerate(csv.reader(fh), start=1):
            if not rec:
                continue
            if width is None:
                width = len(rec)
                if width < 2:
                    raise ValueError(f"line {lineno}: need a label plus at least one component")
            elif len(rec) != width:
                raise ValueError(f"line {lineno}: ragged row ({len(rec)} fields, expected {width})")
            name = rec[0]
            if name not in index:
                index[name] = len(names)
                names.append(name)
            labels.append(index[name])
            try:
                rows.append([float(v) for v in rec[1:]])
            except ValueError as exc:
                raise ValueError(f"line {lineno}: non-numeric field ({exc})") from None
    if not rows:
        raise ValueError(f"{path}: empty embeddings file")
    return Dataset(np.array(rows), np.array(labels), split="train"), names


def save_dataset_csv(dataset: Dataset, path, class_names: list[str] | None = None) -> None:
    """Write label,components rows; floats use shortest round-trip decimal form."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for label, row in zip(dataset.labels, dataset.rows):
            name = class_names[label] if class_names else str(int(label))
            writer.writerow([name] + [repr(float(v)) for v in row])


def save_generator_record(record: GeneratorRecord, path) -> None:
    Path(path).write_text(json.dumps(record.to_dict(), indent=2))


def load_generator_record(path) -> GeneratorRecord:
    return GeneratorRecord.from_dict(json.loads(Path(path).read_text()))


def load_features(path):
    """Loader side of the outlier feature file format (see the synthesis module)."""
    from .synthesis import read_features

    return read_features(path)
