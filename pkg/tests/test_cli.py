import json
from dataclasses import replace

import numpy as np
import pytest

from bood import pipeline, svgplot
from bood.cli import main
from bood.config import ConfigError, RunConfig, SweepSpec, load_config, write_default_config
from bood.pipeline import RunManifest, RunPaths, validate_manifest


def write_mini_toml(path, out_dir, seed=5):
    path.write_text(f"""
seed = {seed}
output_dir = "{out_dir}"

[data]
classes = 4
input_dim = 8
train_per_class = 40
test_per_class = 20

[anchors]
dim = 6

[encoder]
hidden = [24, 24]
epochs = 8
batch_size = 32

[boundary]
alpha = 0.015
K = 80
r = 5.0

[synthesis]
alpha = 0.015
c = 2
K = 80
per_origin_count = 1

[detector]
hidden = [24, 24]
epochs = 10
batch_size = 32

[eval]
tpr_target = 0.95
""")


# --- config ------------------------------------------------------------------------------

def test_default_config_file_roundtrip(tmp_path):
    p = tmp_path / "default.toml"
    write_default_config(p)
    cfg = load_config(p)
    assert cfg == RunConfig()


def test_flag_overrides_file(tmp_path):
    p = tmp_path / "c.toml"
    write_mini_toml(p, tmp_path / "run", seed=5)
    cfg = load_config(p, seed=99, output_dir=str(tmp_path / "other"))
    assert cfg.seed == 99
    assert cfg.output_dir == str(tmp_path / "other")
    assert cfg.boundary.max_steps == 80  # file beats default


def test_unknown_key_rejected(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text("[boundary]\nalpha = 0.01\nstep_size = 2\n")
    with pytest.raises(ConfigError, match="step_size"):
        load_config(p)


def test_invalid_value_rejected(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text("[boundary]\nr = 250\n")
    with pytest.raises(ConfigError):
        load_config(p)


def test_missing_config_file():
    with pytest.raises(ConfigError, match="not found"):
        load_config("/nonexistent/conf.toml")


# --- exit codes ----------------------------------------------------------------------------

def test_exit_code_config_error(tmp_path):
    p = tmp_path / "bad.toml"
    p.write_text("this is : not toml [")
    assert main(["--config", str(p), "run-all"]) == 2


def test_exit_code_stage_failure(tmp_path):
    # alpha so small that nothing ever crosses: select aborts with no boundary features
    p = tmp_path / "c.toml"
    p.write_text(f"""
seed = 5
output_dir = "{tmp_path / 'run'}"
[data]
classes = 4
input_dim = 8
train_per_class = 10
test_per_class = 5
[anchors]
dim = 6
[encoder]
hidden = [8]
epochs = 2
batch_size = 16
[boundary]
alpha = 1e-12
K = 2
""")
    assert main(["--config", str(p), "run-all"]) == 3
    # the completed stages persist their artifacts
    assert (tmp_path / "run" / "train.csv").exists()
    assert (tmp_path / "run" / "distances.csv").exists()


def test_exit_code_io_error(tmp_path):
    p = tmp_path / "c.toml"
    write_mini_toml(p, tmp_path / "fresh")
    # distances needs the encoder checkpoint, which does not exist yet
    assert main(["--config", str(p), "distances"]) == 4


# --- run-all -----------------------------------------------------------------------------------

def test_run_all_writes_everything(mini_cfg):
    manifest = pipeline.run_all(mini_cfg)
    paths = RunPaths(mini_cfg.output_dir)
    for f in [
        paths.dataset_csv("train"), paths.dataset_csv("id_test"), paths.ood_csv("radial_shift"),
        paths.generator_record, paths.anchors_csv, paths.encoder_ckpt, paths.distances_csv,
        paths.selected_csv, paths.outliers_feat, paths.decoder_json, paths.ood_train_csv,
        paths.detector_ckpt, paths.energy_head_ckpt, paths.metrics_json,
        paths.scores_csv("held_out_classes"), paths.latent2d_svg, paths.score_hist_svg,
        paths.manifest_json,
    ]:
        assert f.exists(), f
    validate_manifest(manifest.to_dict())
    reloaded = RunManifest.load(paths.manifest_json)
    assert reloaded.to_dict() == manifest.to_dict()
    assert manifest.metrics["detector"]["per_set"]


def test_stagewise_equals_run_all(mini_cfg, tmp_path):
    """Running each subcommand in sequence reproduces run-all's metrics exactly."""
    whole = pipeline.run_all(mini_cfg)

    staged_dir = tmp_path / "staged"
    toml = tmp_path / "staged.toml"
    write_mini_toml(toml, staged_dir, seed=mini_cfg.seed)
    for cmd in ["gen-data", "train-encoder", "distances", "select",
                "synthesize", "decode", "train-detector", "eval"]:
        assert main(["--config", str(toml), cmd]) == 0, cmd

    staged = json.loads((staged_dir / "metrics.json").read_text())
    assert staged == whole.metrics


def test_run_all_deterministic(mini_cfg):
    m1 = pipeline.run_all(mini_cfg)
    m2 = pipeline.run_all(replace(mini_cfg, output_dir=mini_cfg.output_dir + "_b"))
    assert json.dumps(m1.metrics, sort_keys=True) == json.dumps(m2.metrics, sort_keys=True)


def test_run_all_latent_mode(mini_cfg):
    """Latent mode skips the decoder and feeds the detector latent features."""
    cfg = replace(mini_cfg, output_dir=mini_cfg.output_dir + "_lat",
                  detector=replace(mini_cfg.detector, mode="latent"))
    manifest = pipeline.run_all(cfg)
    paths = RunPaths(cfg.output_dir)
    assert not paths.decoder_json.exists()
    assert paths.ood_train_csv.exists()
    assert manifest.metrics["detector"]["per_set"]
    # detector consumed latent-width inputs
    from bood import nn

    backbone = nn.load_checkpoint(paths.detector_ckpt, activation=cfg.detector.activation)
    assert backbone.spec().input_width == cfg.anchors.dim


def test_run_all_independent_of_thread_count(mini_cfg):
    m1 = pipeline.run_all(mini_cfg, threads=1)
    m2 = pipeline.run_all(replace(mini_cfg, output_dir=mini_cfg.output_dir + "_t3"), threads=3)
    assert json.dumps(m1.metrics, sort_keys=True) == json.dumps(m2.metrics, sort_keys=True)


# --- sweep ---------------------------------------------------------------------------------------

def test_sweep_rows_and_artifacts(mini_cfg, tmp_path):
    spec = SweepSpec("c", (0, 1, 2), replace(mini_cfg, output_dir=str(tmp_path / "sw")))
    rows = pipeline.run_sweep(spec)
    assert len(rows) == 3
    assert all(r["error"] == "" for r in rows)
    assert (tmp_path / "sw" / "sweep_c.csv").exists()
    assert (tmp_path / "sw" / "sweep_c.svg").exists()


def test_sweep_single_value_equals_run_all(mini_cfg, tmp_path):
    from bood.config import apply_sweep_value

    spec = SweepSpec("beta", (1.5,), replace(mini_cfg, output_dir=str(tmp_path / "sw1")))
    rows = pipeline.run_sweep(spec)
    direct = pipeline.run_all(
        replace(apply_sweep_value(mini_cfg, "beta", 1.5), output_dir=str(tmp_path / "direct"))
    )
    assert rows[0]["fpr95_avg"] == direct.metrics["detector"]["average"]["fpr95"]
    assert rows[0]["auroc_avg"] == direct.metrics["detector"]["average"]["auroc"]


def test_sweep_validates_values(mini_cfg):
    with pytest.raises(ConfigError):
        SweepSpec("r", (250.0,), mini_cfg)
    with pytest.raises(ConfigError):
        SweepSpec("gamma", (1.0,), mini_cfg)


def test_sweep_records_failures(mini_cfg, tmp_path):
    # K=1 at tiny alpha: select stage fails for that value, sweep continues
    base = replace(mini_cfg, output_dir=str(tmp_path / "swf"),
                   boundary=replace(mini_cfg.boundary, alpha=1e-12),
                   synthesis=replace(mini_cfg.synthesis, alpha=1e-12))
    rows = pipeline.run_sweep(SweepSpec("K", (1,), base))
    assert rows[0]["error"] != ""


# --- plots ------------------------------------------------------------------------------------------

def test_plot_empty_scores_error(tmp_path):
    with pytest.raises(ValueError, match="empty"):
        svgplot.plot_score_hist(np.array([]), np.array([1.0]), tmp_path / "h.svg")


def test_latent2d_palette_has_all_class_colors(tmp_path):
    rng = np.random.default_rng(0)
    pts = rng.standard_normal((30, 2))
    labels = np.repeat([0, 1, 2], 10)
    out = tmp_path / "l.svg"
    svgplot.plot_latent2d(pts, labels, out)
    text = out.read_text()
    for color in svgplot.PALETTE[:3]:
        assert color in text
    assert text.startswith("<svg")


def test_latent2d_rejects_bad_shapes(tmp_path):
    with pytest.raises(ValueError, match="m, 2"):
        svgplot.plot_latent2d(np.zeros((4, 3)), np.zeros(4), tmp_path / "x.svg")
    with pytest.raises(ValueError, match="no points"):
        svgplot.plot_latent2d(np.zeros((0, 2)), np.zeros(0), tmp_path / "x.svg")


def test_plot_subcommands_regenerate(mini_cfg, tmp_path):
    toml = tmp_path / "c.toml"
    write_mini_toml(toml, mini_cfg.output_dir, seed=mini_cfg.seed)
    pipeline.run_all(mini_cfg)
    paths = RunPaths(mini_cfg.output_dir)
    paths.latent2d_svg.unlink()
    paths.score_hist_svg.unlink()
    assert main(["--config", str(toml), "plot", "latent2d"]) == 0
    assert main(["--config", str(toml), "plot", "score_hist"]) == 0
    assert paths.latent2d_svg.exists()
    assert paths.score_hist_svg.exists()


def test_plot_sweep_line_subcommand(mini_cfg, tmp_path):
    sweep_dir = tmp_path / "sw"
    toml = tmp_path / "c.toml"
    write_mini_toml(toml, sweep_dir, seed=mini_cfg.seed)
    pipeline.run_sweep(SweepSpec("c", (0, 2), replace(mini_cfg, output_dir=str(sweep_dir))))
    svg = sweep_dir / "sweep_c.svg"
    svg.unlink()
    assert main(["--config", str(toml), "plot", "sweep_line", "--param", "c"]) == 0
    assert svg.exists()


def test_score_dump_format(mini_cfg):
    """Score CSVs carry the declared columns and split tags; scores are probabilities."""
    pipeline.run_all(mini_cfg)
    paths = RunPaths(mini_cfg.output_dir)
    import csv as _csv

    with open(paths.scores_csv("held_out_classes"), newline="") as fh:
        reader = _csv.reader(fh)
        assert next(reader) == ["sample_id", "split", "score"]
        splits = set()
        for rec in reader:
            splits.add(rec[1])
            assert 0.0 < float(rec[2]) < 1.0
    assert splits == {"id_test", "ood_test"}
