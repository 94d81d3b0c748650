"""Stage orchestration: gen-data through eval, run manifests, hyperparameter sweeps.

Every stage persists its artifacts under the run's output directory, so stages
can be re-run in isolation and a failure leaves the completed prefix on disk.
All randomness flows from the single run seed through named sub-streams.
"""

from __future__ import annotations

import csv
import json
import time
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import boundary as bnd
from . import data as dat
from . import detector as det
from . import latent as lat
from . import metrics as met
from . import nn, svgplot, synthesis
from ._version import __version__
from .config import RunConfig, SweepSpec, apply_sweep_value
from .rng import derive_seed

OOD_SET_NAMES = ("held_out_classes", "radial_shift", "uniform_box")


class StageError(Exception):
    """A pipeline stage failed (CLI exit code 3); partial artifacts persist."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


@dataclass
class RunPaths:
    root: Path

    def __post_init__(self):
        self.root = Path(self.root)

    def dataset_csv(self, split: str) -> Path:
        return self.root / f"{split}.csv"

    def ood_csv(self, name: str) -> Path:
        return self.root / f"ood_{name}.csv"

    @property
    def generator_record(self) -> Path:
        return self.root / "generator_record.json"

    @property
    def anchors_csv(self) -> Path:
        return self.root / "anchors.csv"

    @property
    def encoder_ckpt(self) -> Path:
        return self.root / "encoder.ckpt"

    @property
    def encoder_history(self) -> Path:
        return self.root / "encoder_history.json"

    @property
    def distances_csv(self) -> Path:
        return self.root / "distances.csv"

    @property
    def selected_csv(self) -> Path:
        return self.root / "selected.csv"

    @property
    def outliers_feat(self) -> Path:
        return self.root / "outliers.feat"

    @property
    def decoder_json(self) -> Path:
        return self.root / "decoder.json"

    @property
    def ood_train_csv(self) -> Path:
        return self.root / "ood_train.csv"

    @property
    def detector_ckpt(self) -> Path:
        return self.root / "detector.ckpt"

    @property
    def energy_head_ckpt(self) -> Path:
        return self.root / "energy_head.ckpt"

    @property
    def detector_history(self) -> Path:
        return self.root / "detector_history.json"

    def scores_csv(self, name: str) -> Path:
        return self.root / f"scores_{name}.csv"

    @property
    def metrics_json(self) -> Path:
        return self.root / "metrics.json"

    @property
    def latent_points_csv(self) -> Path:
        return self.root / "latent_points.csv"

    @property
    def trajectories_jsonl(self) -> Path:
        return self.root / "trajectories.jsonl"

    @property
    def projection_json(self) -> Path:
        return self.root / "projection.json"

    @property
    def latent2d_svg(self) -> Path:
        return self.root / "latent2d.svg"

    @property
    def score_hist_svg(self) -> Path:
        return self.root / "score_hist.svg"

    @property
    def manifest_json(self) -> Path:
        return self.root / "manifest.json"


@dataclass
class RunManifest:
    """Everything needed to reproduce and summarize one pipeline run."""

    tool_version: str
    seed: int
    config: dict
    stage_seconds: dict = field(default_factory=dict)
    encoder_history: list = field(default_factory=list)
    distance_summary: dict = field(default_factory=dict)
    synthesis_summary: dict = field(default_factory=dict)
    detector_history: list = field(default_factory=list)
    metrics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "tool_version": self.tool_version,
            "seed": self.seed,
            "config": self.config,
            "stage_seconds": self.stage_seconds,
            "encoder_history": self.encoder_history,
            "distance_summary": self.distance_summary,
            "synthesis_summary": self.synthesis_summary,
            "detector_history": self.detector_history,
            "metrics": self.metrics,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunManifest":
        return cls(**{k: d[k] for k in (
            "tool_version", "seed", "config", "stage_seconds", "encoder_history",
            "distance_summary", "synthesis_summary", "detector_history", "metrics",
        )})

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path) -> "RunManifest":
        return cls.from_dict(json.loads(Path(path).read_text()))


MANIFEST_REQUIRED = {
    "tool_version": None,
    "seed": None,
    "config": {"data": None, "anchors": None, "encoder": None, "boundary": None,
               "synthesis": None, "detector": None, "eval": None, "seed": None},
    "stage_seconds": None,
    "encoder_history": None,
    "distance_summary": {"histogram": None, "never_crossed": None, "count": None},
    "synthesis_summary": {"n_outliers": None, "n_errors": None, "flip_back_rate": None},
    "detector_history": None,
    "metrics": {"detector": None, "baselines": None},
}


def validate_manifest(d: dict) -> None:
    """Check that every field required for reproduction is present."""

    def walk(required, got, where):
        for key, sub in required.items():
            if key not in got:
                raise ValueError(f"manifest missing {where}{key}")
            if isinstance(sub, dict):
                walk(sub, got[key], f"{where}{key}.")

    walk(MANIFEST_REQUIRED, d, "")


@contextmanager
def _stage(name: str, timings: dict):
    t0 = time.perf_counter()
    try:
        yield
    except (StageError, OSError):
        raise  # I/O problems keep their own exit code
    except Exception as exc:
        raise StageError(name, exc) from exc
    finally:
        timings[name] = time.perf_counter() - t0


# --- individual stages --------------------------------------------------------

def stage_gen_data(cfg: RunConfig, paths: RunPaths):
    """Generate train/id_test plus the three OOD test sets and persist them."""
    if cfg.data.kind == "from_csv":
        raise ValueError(
            "run-all needs a generated dataset kind; ingest CSV embeddings through the library instead"
        )
    spec = cfg.data.spec(derive_seed(cfg.seed, "data"))
    train, id_test, record = dat.gen_gaussian_mixture(spec)
    ood_sets: dict[str, dat.Dataset] = {}
    for name in OOD_SET_NAMES:
        ds, info = dat.gen_ood_testset(spec, name)
        ood_sets[name] = ds
        for k, v in info.items():
            record.margins[f"{name}.{k}"] = v
    dat.save_dataset_csv(train, paths.dataset_csv("train"))
    dat.save_dataset_csv(id_test, paths.dataset_csv("id_test"))
    for name, ds in ood_sets.items():
        dat.save_dataset_csv(ds, paths.ood_csv(name))
    dat.save_generator_record(record, paths.generator_record)
    return train, id_test, ood_sets, record


def load_dataset_csv(path, split: str) -> dat.Dataset:
    """Read back a dataset CSV written by the gen-data stage (integer labels)."""
    rows, labels = [], []
    with open(path, newline="") as fh:
        for rec in csv.reader(fh):
            if not rec:
                continue
            labels.append(int(rec[0]))
            rows.append([float(v) for v in rec[1:]])
    if not rows:
        raise ValueError(f"{path}: empty dataset file")
    return dat.Dataset(np.array(rows), np.array(labels), split=split)


def load_run_datasets(cfg: RunConfig, paths: RunPaths):
    train = load_dataset_csv(paths.dataset_csv("train"), "train")
    id_test = load_dataset_csv(paths.dataset_csv("id_test"), "id_test")
    ood_sets = {
        name: load_dataset_csv(paths.ood_csv(name), "ood_test")
        for name in OOD_SET_NAMES
        if paths.ood_csv(name).exists()
    }
    return train, id_test, ood_sets


def stage_train_encoder(cfg: RunConfig, paths: RunPaths, train: dat.Dataset):
    anchors = lat.make_anchors(
        cfg.anchors.mode,
        class_count=cfg.data.classes,
        dim=cfg.anchors.dim,
        seed=derive_seed(cfg.seed, "anchors"),
        path=cfg.anchors.path,
    )
    model = lat.build_encoder(
        anchors,
        cfg.encoder.hidden,
        input_dim=train.rows.shape[1],
        activation=cfg.encoder.activation,
        temperature=cfg.encoder.temperature,
        seed=derive_seed(cfg.seed, "encoder"),
    )
    tc = nn.TrainConfig(
        epochs=cfg.encoder.epochs,
        batch_size=cfg.encoder.batch_size,
        lr_init=cfg.encoder.lr_init,
        lr_min=cfg.encoder.lr_min,
        seed=derive_seed(cfg.seed, "encoder"),
    )
    model, history = lat.train_encoder(train, model, tc)
    lat.save_anchors_csv(model.anchors, paths.anchors_csv)
    nn.save_checkpoint(paths.encoder_ckpt, model.params)
    paths.encoder_history.write_text(json.dumps(history, indent=2))
    return model, history


def load_encoder(cfg: RunConfig, paths: RunPaths) -> lat.EncoderModel:
    anchors = lat.load_anchors_csv(paths.anchors_csv)
    params = nn.load_checkpoint(paths.encoder_ckpt, activation=cfg.encoder.activation)
    return lat.EncoderModel(params, anchors, cfg.encoder.temperature)


def stage_distances(cfg: RunConfig, paths: RunPaths, encoder, train, threads: int = 1):
    features = lat.encode_dataset(encoder, train)
    table = bnd.estimate_table(encoder, features, cfg.boundary, threads=threads)
    bnd.export_distances(table, paths.distances_csv)
    return features, table


def distance_summary(table: list[bnd.DistanceRecord]) -> dict:
    crossed = [rec.steps for rec in table if rec.crossed]
    hist: dict[str, int] = {}
    for k in crossed:
        hist[str(k)] = hist.get(str(k), 0) + 1
    return {
        "histogram": hist,
        "never_crossed": len(table) - len(crossed),
        "count": len(table),
        "mean_steps": float(np.mean(crossed)) if crossed else None,
    }


def stage_select(cfg: RunConfig, paths: RunPaths, table):
    selected = bnd.select_boundary(table, cfg.boundary.select_percent)
    with open(paths.selected_csv, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["source_index", "label", "steps"])
        for rec in selected:
            writer.writerow([rec.source_index, rec.label, rec.steps])
    return selected


def load_selected(paths: RunPaths) -> list[tuple[int, int, int]]:
    out = []
    with open(paths.selected_csv, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for rec in reader:
            out.append((int(rec[0]), int(rec[1]), int(rec[2])))
    return out


def stage_synthesize(cfg: RunConfig, paths: RunPaths, encoder, features, selected, threads: int = 1):
    scfg = synthesis.SynthesisConfig(
        alpha=cfg.synthesis.alpha, extra_steps=cfg.synthesis.c, max_steps=cfg.synthesis.K
    )
    origin = [features[rec.source_index] for rec in selected]
    result = synthesis.synthesize_batch(
        encoder, origin, scfg,
        per_origin_count=cfg.synthesis.per_origin_count,
        keep_trajectory=True,
        threads=threads,
    )
    if not result.outliers:
        raise RuntimeError(f"synthesis produced no outliers ({len(result.errors)} rejections)")
    synthesis.export_features(result.outliers, paths.outliers_feat, format="both")
    return result


def stage_decode(cfg: RunConfig, paths: RunPaths, encoder, train, features, outliers):
    """Map synthesized latent outliers into the detector's input space.

    decoded mode fits the toy linear decoder on (latent, input) pairs of the
    train split; latent mode passes the latent vectors through unchanged.
    """
    z_ood = np.stack([o.z_ood for o in outliers])
    if cfg.detector.mode == "latent":
        ood_inputs = z_ood
        decoder = None
    else:
        latents = np.stack([f.z for f in features])
        decoder = dat.fit_toy_decoder(latents, train.rows)
        ood_inputs = dat.toy_decode(decoder, z_ood)
        paths.decoder_json.write_text(
            json.dumps({"W": decoder.weight.tolist(), "bias": decoder.bias.tolist()})
        )
    ood_ds = dat.Dataset(ood_inputs, np.array([o.origin_label for o in outliers]), split="ood_train")
    dat.save_dataset_csv(ood_ds, paths.ood_train_csv)
    return ood_inputs, decoder


def stage_train_detector(cfg: RunConfig, paths: RunPaths, train, features, ood_inputs):
    if cfg.detector.mode == "latent":
        id_rows = np.stack([f.z for f in features])
        id_ds = dat.Dataset(id_rows, train.labels, split="train")
    else:
        id_ds = train
    model = det.build_detector(
        input_dim=id_ds.rows.shape[1],
        class_count=cfg.data.classes,
        hidden=cfg.detector.hidden,
        activation=cfg.detector.activation,
        energy_hidden=cfg.detector.energy_hidden,
        mode=cfg.detector.mode,
        seed=derive_seed(cfg.seed, "detector"),
    )
    dcfg = det.DetectorTrainConfig(
        beta=cfg.detector.beta,
        epochs=cfg.detector.epochs,
        batch_size=cfg.detector.batch_size,
        lr_init=cfg.detector.lr_init,
        lr_min=cfg.detector.lr_min,
        seed=derive_seed(cfg.seed, "detector"),
    )
    model, history = det.train_detector(id_ds, ood_inputs, model, dcfg)
    nn.save_checkpoint(paths.detector_ckpt, model.backbone)
    nn.save_checkpoint(paths.energy_head_ckpt, model.head.params)
    paths.detector_history.write_text(json.dumps(history, indent=2))
    return model, history


def load_detector(cfg: RunConfig, paths: RunPaths) -> det.DetectorModel:
    backbone = nn.load_checkpoint(paths.detector_ckpt, activation=cfg.detector.activation)
    head = det.EnergyHead(nn.load_checkpoint(paths.energy_head_ckpt, activation=cfg.detector.activation))
    return det.DetectorModel(backbone, head, cfg.detector.mode)


def stage_eval(cfg: RunConfig, paths: RunPaths, detector, encoder, id_test, ood_sets):
    """Score the detector and the MSP / raw-energy baselines on every OOD set."""
    if cfg.detector.mode == "latent":
        id_rows = np.stack([f.z for f in lat.encode_dataset(encoder, id_test)])
        ood_rows = {
            name: np.stack([f.z for f in lat.encode_dataset(encoder, ds)])
            for name, ds in ood_sets.items() if len(ds) > 0
        }
        id_eval_ds = dat.Dataset(id_rows, id_test.labels, split="id_test")
    else:
        id_rows = id_test.rows
        ood_rows = {name: ds.rows for name, ds in ood_sets.items() if len(ds) > 0}
        id_eval_ds = id_test

    id_scores = np.atleast_1d(det.ood_score(detector, id_rows))
    ood_scores = {name: np.atleast_1d(det.ood_score(detector, rows)) for name, rows in ood_rows.items()}
    id_acc = met.id_accuracy(detector, id_eval_ds)
    report = met.report_from_scores(id_scores, ood_scores, id_acc, cfg.eval.tpr_target)

    baselines = {}
    for kind in met.BASELINE_KINDS:
        b_id = met.baseline_scores(kind, detector, id_rows)
        b_ood = {name: met.baseline_scores(kind, detector, rows) for name, rows in ood_rows.items()}
        baselines[kind] = met.report_from_scores(b_id, b_ood, id_acc, cfg.eval.tpr_target).to_dict()

    for name, scores in ood_scores.items():
        with open(paths.scores_csv(name), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["sample_id", "split", "score"])
            for i, s in enumerate(id_scores):
                writer.writerow([i, "id_test", repr(float(s))])
            for i, s in enumerate(scores):
                writer.writerow([i, "ood_test", repr(float(s))])

    metrics_doc = {"detector": report.to_dict(), "baselines": baselines}
    paths.metrics_json.write_text(json.dumps(metrics_doc, indent=2))
    return metrics_doc, id_scores, ood_scores


def _projection(features_z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """2-D view of the latent space: identity for n=2, else the top-2 PCA plane."""
    if features_z.shape[1] == 2:
        return np.zeros(2), np.eye(2)
    mean = features_z.mean(axis=0)
    _, _, vt = np.linalg.svd(features_z - mean, full_matrices=False)
    return mean, vt[:2].T  # (n, 2) basis


def stage_plots(paths: RunPaths, features, selected, outliers, id_scores, ood_scores):
    z = np.stack([f.z for f in features])
    labels = np.array([f.label for f in features])
    mean, basis = _projection(z)
    pts = (z - mean) @ basis
    selected_idx = {rec.source_index for rec in selected}
    sel_pts = pts[sorted(selected_idx)] if selected_idx else None

    paths.projection_json.write_text(json.dumps({"mean": mean.tolist(), "basis": basis.tolist()}))
    with open(paths.latent_points_csv, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "y", "label", "selected"])
        for p, lab, i in zip(pts, labels, range(len(pts))):
            writer.writerow([repr(float(p[0])), repr(float(p[1])), int(lab), int(i in selected_idx)])

    trajectories = []
    with open(paths.trajectories_jsonl, "w") as fh:
        for o in outliers:
            if o.trajectory is None:
                continue
            proj = (np.stack(o.trajectory) - mean) @ basis
            trajectories.append(proj)
            fh.write(json.dumps({"origin_index": o.origin_index, "points": proj.tolist()}) + "\n")

    svgplot.plot_latent2d(pts, labels, paths.latent2d_svg, selected=sel_pts, trajectories=trajectories)
    all_ood = np.concatenate(list(ood_scores.values()))
    svgplot.plot_score_hist(id_scores, all_ood, paths.score_hist_svg)


# --- orchestration ------------------------------------------------------------

def run_all(cfg: RunConfig, threads: int = 1) -> RunManifest:
    """Run the whole pipeline and write the manifest; deterministic per seed."""
    cfg.validate()
    paths = RunPaths(Path(cfg.output_dir))
    paths.root.mkdir(parents=True, exist_ok=True)
    timings: dict[str, float] = {}

    with _stage("gen-data", timings):
        train, id_test, ood_sets, _record = stage_gen_data(cfg, paths)
    with _stage("train-encoder", timings):
        encoder, enc_history = stage_train_encoder(cfg, paths, train)
    with _stage("distances", timings):
        features, table = stage_distances(cfg, paths, encoder, train, threads)
    with _stage("select", timings):
        selected = stage_select(cfg, paths, table)
    with _stage("synthesize", timings):
        batch = stage_synthesize(cfg, paths, encoder, features, selected, threads)
    with _stage("decode", timings):
        ood_inputs, _decoder = stage_decode(cfg, paths, encoder, train, features, batch.outliers)
    with _stage("train-detector", timings):
        detector, det_history = stage_train_detector(cfg, paths, train, features, ood_inputs)
    with _stage("eval", timings):
        metrics_doc, id_scores, ood_scores = stage_eval(cfg, paths, detector, encoder, id_test, ood_sets)
        stage_plots(paths, features, selected, batch.outliers, id_scores, ood_scores)

    manifest = RunManifest(
        tool_version=__version__,
        seed=cfg.seed,
        config=cfg.to_dict(),
        stage_seconds=timings,
        encoder_history=enc_history,
        distance_summary=distance_summary(table),
        synthesis_summary={
            "n_outliers": len(batch.outliers),
            "n_errors": len(batch.errors),
            "errors": [list(e) for e in batch.errors],
            "flip_back_rate": synthesis.flip_back_rate(encoder, batch.outliers),
        },
        detector_history=det_history,
        metrics=metrics_doc,
    )
    validate_manifest(manifest.to_dict())
    manifest.save(paths.manifest_json)
    return manifest


def run_sweep(spec: SweepSpec, threads: int = 1) -> list[dict]:
    """One full run per swept value (shared base seed); failures recorded, not fatal.

    Emits sweep_<parameter>.csv and a line-plot SVG next to the per-value run
    directories.
    """
    base_dir = Path(spec.base.output_dir)
    base_dir.mkdir(parents=True, exist_ok=True)
    rows: list[dict] = []
    for value in spec.values:
        cfg_v = apply_sweep_value(spec.base, spec.parameter, value)
        cfg_v = replace(cfg_v, output_dir=str(base_dir / f"{spec.parameter}_{value}"))
        row = {"value": value, "fpr95_avg": None, "auroc_avg": None, "id_acc": None,
               "mean_steps": None, "error": ""}
        try:
            manifest = run_all(cfg_v, threads)
            detector_metrics = manifest.metrics["detector"]
            row.update(
                fpr95_avg=detector_metrics["average"]["fpr95"],
                auroc_avg=detector_metrics["average"]["auroc"],
                id_acc=detector_metrics["id_acc"],
                mean_steps=manifest.distance_summary.get("mean_steps"),
            )
        except Exception as exc:
            row["error"] = str(exc)
        rows.append(row)

    csv_path = base_dir / f"sweep_{spec.parameter}.csv"
    with open(csv_path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)

    ok = [r for r in rows if not r["error"]]
    if ok:
        svgplot.plot_sweep_line(
            [float(r["value"]) for r in ok],
            {"fpr95_avg": [r["fpr95_avg"] for r in ok], "auroc_avg": [r["auroc_avg"] for r in ok]},
            base_dir / f"sweep_{spec.parameter}.svg",
            xlabel=spec.parameter,
            title=f"sweep over {spec.parameter}",
        )
    return rows
