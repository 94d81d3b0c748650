"""Outlier feature synthesis: push boundary features across the decision boundary.

A selected feature is perturbed by signed-gradient ascent against its own label
until the cosine classifier's prediction switches, then for a configurable
number of extra steps so the result sits clear of the boundary. Synthesized
features are exported in a binary format (with a JSON-lines sibling) for
hand-off to external decoders.
"""

from __future__ import annotations

import json
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .boundary import perturb_step
from .latent import EncoderModel, LatentFeature, cosine_logits

FEATURE_MAGIC = b"BOODFEAT"
FEATURE_VERSION = 1

EXPORT_FORMATS = ("binary", "jsonl", "both")


class MisclassifiedFeatureError(Exception):
    """The input feature is already predicted as another class (selection should give k >= 1)."""


class UnreachableBoundaryError(Exception):
    """The prediction never flipped within the step budget."""


@dataclass(frozen=True)
class SynthesisConfig:
    alpha: float = 0.015
    extra_steps: int = 2  # steps taken after the prediction flips
    max_steps: int = 100  # safety cap on the pre-flip loop

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.extra_steps < 0:
            raise ValueError("extra_steps must be >= 0")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")


@dataclass
class SynthesizedOutlier:
    z_ood: np.ndarray
    origin_index: int
    origin_label: int
    flip_step: int
    trajectory: list[np.ndarray] | None = None


@dataclass
class BatchResult:
    outliers: list[SynthesizedOutlier]
    errors: list[tuple[int, str]] = field(default_factory=list)


def _walk(
    model: EncoderModel,
    feature: LatentFeature,
    config: SynthesisConfig,
    depths: list[int],
    keep_trajectory: bool,
) -> list[SynthesizedOutlier]:
    """Ascend until the flip, then keep stepping; snapshot at each requested depth."""
    y = feature.label
    cur = np.asarray(feature.z, dtype=np.float64).copy()
    if int(np.argmax(cosine_logits(model, cur))) != y:
        raise MisclassifiedFeatureError(
            f"feature {feature.source_index} is already misclassified; selection should give k >= 1"
        )
    trajectory = [cur.copy()] if keep_trajectory else None
    flip_step = None
    for k in range(1, config.max_steps + 1):
        nxt = perturb_step(model, cur, y, config.alpha)
        if np.array_equal(nxt, cur):
            break  # stuck: zero gradient sign, the boundary is unreachable
        cur = nxt
        if trajectory is not None:
            trajectory.append(cur.copy())
        if int(np.argmax(cosine_logits(model, cur))) != y:
            flip_step = k
            break
    if flip_step is None:
        raise UnreachableBoundaryError(
            f"feature {feature.source_index} did not cross the boundary within {config.max_steps} steps"
        )
    outliers = []
    max_depth = max(depths)
    for extra in range(max_depth + 1):
        if extra > 0:
            cur = perturb_step(model, cur, y, config.alpha)
            if trajectory is not None:
                trajectory.append(cur.copy())
        if extra in depths:
            outliers.append(
                SynthesizedOutlier(
                    cur.copy(),
                    feature.source_index,
                    y,
                    flip_step,
                    list(trajectory) if trajectory is not None else None,
                )
            )
    return outliers


def synthesize_ood(
    model: EncoderModel,
    feature: LatentFeature,
    config: SynthesisConfig,
    keep_trajectory: bool = False,
) -> SynthesizedOutlier:
    """Perturb one boundary feature across the boundary plus ``extra_steps`` more."""
    return _walk(model, feature, config, [config.extra_steps], keep_trajectory)[0]


def synthesize_batch(
    model: EncoderModel,
    features: list[LatentFeature],
    config: SynthesisConfig,
    per_origin_count: int = 1,
    keep_trajectory: bool = False,
    threads: int = 1,
) -> BatchResult:
    """Synthesize outliers for every selected feature, ordered by origin index.

    With per_origin_count > 1, each origin yields several outliers by
    continuing the post-flip walk one step deeper per extra outlier
    (continuation depths c, c+1, ...). Per-feature failures are collected into
    the error report instead of aborting the batch.
    """
    if not features:
        raise ValueError("empty selection")
    if per_origin_count < 1:
        raise ValueError("per_origin_count must be >= 1")
    ordered = sorted(features, key=lambda f: f.source_index)
    depths = [config.extra_steps + i for i in range(per_origin_count)]

    def one(f: LatentFeature):
        try:
            return _walk(model, f, config, depths, keep_trajectory), None
        except (MisclassifiedFeatureError, UnreachableBoundaryError) as exc:
            return None, (f.source_index, str(exc))

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one, ordered))
    else:
        results = [one(f) for f in ordered]

    out = BatchResult([])
    for produced, err in results:
        if err is not None:
            out.errors.append(err)
        else:
            out.outliers.extend(produced)
    return out


def flip_back_rate(model: EncoderModel, outliers: list[SynthesizedOutlier]) -> float:
    """Fraction of outliers whose final prediction returned to the origin label."""
    if not outliers:
        return 0.0
    back = sum(
        1 for o in outliers if int(np.argmax(cosine_logits(model, o.z_ood))) == o.origin_label
    )
    return back / len(outliers)


# --- feature export ----------------------------------------------------------

def export_features(outliers: list[SynthesizedOutlier], path, format: str = "both") -> None:
    """Write synthesized features for external decoding.

    Binary layout (little-endian): magic, version u32, count u64, dim u32, then
    per record origin_index u64, origin_label u32, flip_step u32 and the dim
    float64 components. The JSON-lines sibling (``<path>.jsonl``) carries the
    same records.
    """
    if format not in EXPORT_FORMATS:
        raise ValueError(f"unknown export format {format!r}")
    if not outliers:
        raise ValueError("nothing to export: empty outlier list")
    dim = len(outliers[0].z_ood)
    if any(len(o.z_ood) != dim for o in outliers):
        raise ValueError("inconsistent feature dimensions across outliers")
    if format in ("binary", "both"):
        with open(path, "wb") as fh:
            fh.write(FEATURE_MAGIC)
            fh.write(struct.pack("<IQI", FEATURE_VERSION, len(outliers), dim))
            for o in outliers:
                fh.write(struct.pack("<QII", o.origin_index, o.origin_label, o.flip_step))
                fh.write(np.ascontiguousarray(o.z_ood, dtype="<f8").tobytes())
    if format in ("jsonl", "both"):
        jsonl_path = str(path) + ".jsonl" if format == "both" else path
        with open(jsonl_path, "w") as fh:
            for o in outliers:
                fh.write(
                    json.dumps(
                        {
                            "origin_index": o.origin_index,
                            "origin_label": o.origin_label,
                            "flip_step": o.flip_step,
                            "z": [float(v) for v in o.z_ood],
                        }
                    )
                    + "\n"
                )


def read_features(path) -> list[SynthesizedOutlier]:
    """Read a binary feature file back; exact round trip of the exported vectors."""
    with open(path, "rb") as fh:
        magic = fh.read(len(FEATURE_MAGIC))
        if magic != FEATURE_MAGIC:
            raise ValueError(f"bad feature file magic {magic!r}")
        version, count, dim = struct.unpack("<IQI", fh.read(16))
        if version != FEATURE_VERSION:
            raise ValueError(f"unsupported feature file version {version}")
        outliers = []
        for _ in range(count):
            origin_index, origin_label, flip_step = struct.unpack("<QII", fh.read(16))
            z = np.frombuffer(fh.read(8 * dim), dtype="<f8").copy()
            if len(z) != dim:
                raise ValueError("truncated feature file")
            outliers.append(SynthesizedOutlier(z, origin_index, origin_label, flip_step))
    return outliers
