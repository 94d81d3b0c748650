"""Command-line front end: pipeline stages as subcommands.

Exit codes: 0 success, 2 config error, 3 stage failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import boundary as bnd
from . import data as dat
from . import pipeline as pipe
from . import svgplot, synthesis
from ._version import __version__
from .config import SWEEP_PARAMETERS, ConfigError, SweepSpec, load_config

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_STAGE = 3
EXIT_IO = 4


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bood", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("--config", help="TOML config file (flag > file > default)")
    p.add_argument("--seed", type=int, help="override the run seed")
    p.add_argument("--out", help="override the output directory")
    p.add_argument("--threads", type=int, default=1,
                   help="parallelism for the per-feature distance/synthesis loops")
    sub = p.add_subparsers(dest="command", required=True)

    for name, hlp in [
        ("gen-data", "generate train/test splits and the OOD test sets"),
        ("train-encoder", "train the anchor-aligned encoder"),
        ("distances", "estimate per-feature boundary distances"),
        ("select", "select the smallest-distance boundary features"),
        ("synthesize", "perturb selected features across the boundary"),
        ("decode", "map synthesized features into detector input space"),
        ("train-detector", "train the energy-regularized detector"),
        ("eval", "score the detector and write metrics"),
        ("run-all", "run the whole pipeline and write the manifest"),
    ]:
        sub.add_parser(name, help=hlp)

    sw = sub.add_parser("sweep", help="re-run the pipeline over a hyperparameter grid")
    sw.add_argument("--param", required=True, choices=SWEEP_PARAMETERS)
    sw.add_argument("--values", required=True,
                    help="comma-separated values, e.g. 0.5,1.0,2.5")

    pl = sub.add_parser("plot", help="re-emit an SVG plot from run artifacts")
    pl.add_argument("kind", choices=["latent2d", "score_hist", "sweep_line"])
    pl.add_argument("--set", dest="ood_set", help="OOD set name for score_hist")
    pl.add_argument("--param", help="swept parameter for sweep_line")
    pl.add_argument("--path", help="output SVG path (defaults inside the run directory)")
    return p


def _load_features_and_encoder(cfg, paths):
    encoder = pipe.load_encoder(cfg, paths)
    train = pipe.load_dataset_csv(paths.dataset_csv("train"), "train")
    from .latent import encode_dataset

    return encoder, train, encode_dataset(encoder, train)


def _cmd_stage(args, cfg) -> None:
    paths = pipe.RunPaths(Path(cfg.output_dir))
    paths.root.mkdir(parents=True, exist_ok=True)
    timings: dict[str, float] = {}
    cmd = args.command

    if cmd == "gen-data":
        with pipe._stage("gen-data", timings):
            pipe.stage_gen_data(cfg, paths)
        return
    if cmd == "train-encoder":
        with pipe._stage("train-encoder", timings):
            train = pipe.load_dataset_csv(paths.dataset_csv("train"), "train")
            pipe.stage_train_encoder(cfg, paths, train)
        return
    if cmd == "distances":
        with pipe._stage("distances", timings):
            encoder, train, _ = _load_features_and_encoder(cfg, paths)
            pipe.stage_distances(cfg, paths, encoder, train, threads=args.threads)
        return
    if cmd == "select":
        with pipe._stage("select", timings):
            table = bnd.load_distances(paths.distances_csv)
            pipe.stage_select(cfg, paths, table)
        return
    if cmd == "synthesize":
        with pipe._stage("synthesize", timings):
            encoder, _train, features = _load_features_and_encoder(cfg, paths)
            selected = [
                bnd.DistanceRecord(i, label, steps, np.empty(0))
                for i, label, steps in pipe.load_selected(paths)
            ]
            pipe.stage_synthesize(cfg, paths, encoder, features, selected, threads=args.threads)
        return
    if cmd == "decode":
        with pipe._stage("decode", timings):
            encoder, train, features = _load_features_and_encoder(cfg, paths)
            outliers = synthesis.read_features(paths.outliers_feat)
            pipe.stage_decode(cfg, paths, encoder, train, features, outliers)
        return
    if cmd == "train-detector":
        with pipe._stage("train-detector", timings):
            encoder, train, features = _load_features_and_encoder(cfg, paths)
            ood_train = pipe.load_dataset_csv(paths.ood_train_csv, "ood_train")
            pipe.stage_train_detector(cfg, paths, train, features, ood_train.rows)
        return
    if cmd == "eval":
        with pipe._stage("eval", timings):
            encoder, _train, features = _load_features_and_encoder(cfg, paths)
            _, id_test, ood_sets = pipe.load_run_datasets(cfg, paths)
            detector = pipe.load_detector(cfg, paths)
            metrics_doc, id_scores, ood_scores = pipe.stage_eval(
                cfg, paths, detector, encoder, id_test, ood_sets
            )
            selected = [
                bnd.DistanceRecord(i, label, steps, np.empty(0))
                for i, label, steps in pipe.load_selected(paths)
            ]
            outliers = synthesis.read_features(paths.outliers_feat)
            pipe.stage_plots(paths, features, selected, outliers, id_scores, ood_scores)
            print(json.dumps(metrics_doc["detector"]["average"], indent=2))
        return
    raise ConfigError(f"unknown command {cmd}")


def _cmd_plot(args, cfg) -> None:
    paths = pipe.RunPaths(Path(cfg.output_dir))
    if args.kind == "latent2d":
        pts, labels, selected = [], [], []
        with open(paths.latent_points_csv, newline="") as fh:
            reader = csv.reader(fh)
            next(reader)
            for rec in reader:
                pts.append([float(rec[0]), float(rec[1])])
                labels.append(int(rec[2]))
                if int(rec[3]):
                    selected.append([float(rec[0]), float(rec[1])])
        trajectories = []
        if paths.trajectories_jsonl.exists():
            with open(paths.trajectories_jsonl) as fh:
                for line in fh:
                    trajectories.append(np.array(json.loads(line)["points"]))
        out = args.path or paths.latent2d_svg
        svgplot.plot_latent2d(
            np.array(pts), np.array(labels), out,
            selected=np.array(selected) if selected else None,
            trajectories=trajectories,
        )
    elif args.kind == "score_hist":
        names = [args.ood_set] if args.ood_set else [
            n for n in pipe.OOD_SET_NAMES if paths.scores_csv(n).exists()
        ]
        if not names:
            raise ConfigError("no score dumps found; run eval first")
        id_scores, ood_scores = [], []
        for name in names:
            with open(paths.scores_csv(name), newline="") as fh:
                reader = csv.reader(fh)
                next(reader)
                for rec in reader:
                    (id_scores if rec[1] == "id_test" else ood_scores).append(float(rec[2]))
        id_scores = id_scores[: len(id_scores) // len(names)]  # the ID block repeats per file
        out = args.path or paths.score_hist_svg
        svgplot.plot_score_hist(np.array(id_scores), np.array(ood_scores), out)
    else:  # sweep_line
        if not args.param:
            raise ConfigError("plot sweep_line needs --param")
        csv_path = paths.root / f"sweep_{args.param}.csv"
        xs, fpr, auc = [], [], []
        with open(csv_path, newline="") as fh:
            for row in csv.DictReader(fh):
                if row["error"]:
                    continue
                xs.append(float(row["value"]))
                fpr.append(float(row["fpr95_avg"]))
                auc.append(float(row["auroc_avg"]))
        if not xs:
            raise ConfigError(f"no successful sweep rows in {csv_path}")
        out = args.path or (paths.root / f"sweep_{args.param}.svg")
        svgplot.plot_sweep_line(xs, {"fpr95_avg": fpr, "auroc_avg": auc}, out, xlabel=args.param)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = load_config(args.config, seed=args.seed, output_dir=args.out)
        if args.command == "run-all":
            manifest = pipe.run_all(cfg, threads=args.threads)
            print(json.dumps(manifest.metrics["detector"]["average"], indent=2))
        elif args.command == "sweep":
            values = tuple(v.strip() for v in args.values.split(",") if v.strip())
            typed = tuple(int(v) if args.param in ("c", "K") else float(v) for v in values)
            spec = SweepSpec(args.param, typed, cfg)
            rows = pipe.run_sweep(spec, threads=args.threads)
            for row in rows:
                status = row["error"] or f"fpr95={row['fpr95_avg']:.4f} auroc={row['auroc_avg']:.4f}"
                print(f"{args.param}={row['value']}: {status}")
        elif args.command == "plot":
            _cmd_plot(args, cfg)
        else:
            _cmd_stage(args, cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except pipe.StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
