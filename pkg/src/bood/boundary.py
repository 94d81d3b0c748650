"""Boundary-distance estimation: signed-gradient ascent steps until the prediction flips.

A feature's distance to the decision boundary is taken to be the minimal number
of fixed-size signed-gradient steps (ascending the classification loss against
the feature's own label) after which the cosine classifier no longer predicts
that label. Features that never flip within the step budget carry a
never-crossed sentinel and are excluded from selection.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .latent import CosineAnchorHead, EncoderModel, LatentFeature, cosine_logits


class NoBoundaryFeaturesError(Exception):
    """Every feature in the table carries the never-crossed sentinel."""


@dataclass(frozen=True)
class BoundaryConfig:
    alpha: float = 0.015
    max_steps: int = 100
    select_percent: float = 5.0

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if not (0.0 < self.select_percent <= 100.0):
            raise ValueError("select_percent must be in (0, 100]")


@dataclass
class DistanceRecord:
    """Distance-table row: steps is None when the feature never crossed."""

    source_index: int
    label: int
    steps: int | None
    final_z: np.ndarray

    @property
    def crossed(self) -> bool:
        return self.steps is not None


DistanceTable = list[DistanceRecord]


def feature_loss_grad(model: EncoderModel, z: np.ndarray, y: int) -> tuple[float, np.ndarray]:
    """Classification loss of a single latent feature and its input gradient."""
    if not (0 <= y < model.anchors.class_count):
        raise ValueError(f"label {y} out of range")
    head = CosineAnchorHead(model.anchors, model.temperature)
    loss, d = head.loss_and_dout(np.asarray(z, dtype=np.float64)[None, :], np.array([y]))
    return loss, d[0]


def perturb_step(model: EncoderModel, z: np.ndarray, y: int, alpha: float) -> np.ndarray:
    """One ascent step: z + alpha * sign(grad), with sign(0) = 0 componentwise."""
    _, grad = feature_loss_grad(model, z, y)
    return np.asarray(z, dtype=np.float64) + alpha * np.sign(grad)


def estimate_distance(
    model: EncoderModel, z: np.ndarray, y: int, config: BoundaryConfig
) -> tuple[int | None, np.ndarray]:
    """Minimal step count at which the prediction leaves y, and the feature there.

    Returns (0, z) for an already-misclassified feature, and (None, z_after_K)
    when the prediction never flips within the budget.
    """
    cur = np.asarray(z, dtype=np.float64).copy()
    if int(np.argmax(cosine_logits(model, cur))) != y:
        return 0, cur
    for k in range(1, config.max_steps + 1):
        nxt = perturb_step(model, cur, y, config.alpha)
        if np.array_equal(nxt, cur):
            # zero gradient sign: the iteration is stuck, stop early
            return None, cur
        cur = nxt
        if int(np.argmax(cosine_logits(model, cur))) != y:
            return k, cur
    return None, cur


def estimate_table(
    model: EncoderModel,
    features: list[LatentFeature],
    config: BoundaryConfig,
    threads: int = 1,
) -> DistanceTable:
    """Distance records for every feature, in source_index order.

    Per-feature estimation is independent; with threads > 1 the features are
    mapped across a pool, and the table order (hence the result) does not
    depend on scheduling.
    """
    if not features:
        raise ValueError("empty feature list")

    def one(f: LatentFeature) -> DistanceRecord:
        steps, final_z = estimate_distance(model, f.z, f.label, config)
        return DistanceRecord(f.source_index, f.label, steps, final_z)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(one, features))
    return [one(f) for f in features]


def select_boundary(table: DistanceTable, select_percent: float) -> list[DistanceRecord]:
    """The smallest-distance fraction of the table.

    Sentinel (never-crossed) entries are excluded; the rest sort by
    (steps, source_index) and the first ceil(r% of the non-sentinel count) are
    returned. Raises when nothing ever crossed.
    """
    if not table:
        raise ValueError("empty distance table")
    if not (0.0 < select_percent <= 100.0):
        raise ValueError("select_percent must be in (0, 100]")
    crossed = [rec for rec in table if rec.crossed]
    if not crossed:
        raise NoBoundaryFeaturesError("no boundary features: nothing crossed within the step budget")
    crossed.sort(key=lambda rec: (rec.steps, rec.source_index))
    n_select = math.ceil(select_percent / 100.0 * len(crossed))
    return crossed[:n_select]


def export_distances(table: DistanceTable, path) -> None:
    """CSV columns source_index,label,steps,crossed; steps is blank for sentinels."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["source_index", "label", "steps", "crossed"])
        for rec in table:
            writer.writerow(
                [rec.source_index, rec.label, "" if rec.steps is None else rec.steps, int(rec.crossed)]
            )


def load_distances(path) -> DistanceTable:
    """Read a distance CSV back; final_z is not persisted and loads as empty."""
    table: DistanceTable = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["source_index", "label", "steps", "crossed"]:
            raise ValueError(f"unexpected distance CSV header {header}")
        for rec in reader:
            steps = None if rec[2] == "" else int(rec[2])
            table.append(DistanceRecord(int(rec[0]), int(rec[1]), steps, np.empty(0)))
    return table
