"""Run configuration: TOML sections mirroring the pipeline stages, plus sweeps.

Precedence is flag > file > default. One global seed deterministically derives
every per-stage stream, so stages re-run in isolation reproduce exactly.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib

from .boundary import BoundaryConfig
from .data import DATASET_KINDS, DatasetSpec
from .detector import DETECTOR_MODES
from .latent import ANCHOR_MODES
from .nn import ACTIVATIONS

SWEEP_PARAMETERS = ("alpha", "c", "r", "beta", "K")


class ConfigError(Exception):
    """Invalid configuration file or values (CLI exit code 2)."""


@dataclass(frozen=True)
class DataConfig:
    kind: str = "gaussian_mixture"
    classes: int = 8
    input_dim: int = 16
    train_per_class: int = 500
    test_per_class: int = 200
    class_center_scale: float = 3.0
    noise_sigma: float = 0.2
    structure_dim: int = 2
    path: str | None = None

    def spec(self, seed: int) -> DatasetSpec:
        return DatasetSpec(
            kind=self.kind,
            classes=self.classes,
            input_dim=self.input_dim,
            train_per_class=self.train_per_class,
            test_per_class=self.test_per_class,
            class_center_scale=self.class_center_scale,
            noise_sigma=self.noise_sigma,
            structure_dim=self.structure_dim,
            seed=seed,
            path=self.path,
        )


@dataclass(frozen=True)
class AnchorConfig:
    mode: str = "random_orthonormal"
    dim: int = 8
    path: str | None = None


@dataclass(frozen=True)
class EncoderConfig:
    hidden: tuple[int, ...] = (64, 64)
    activation: str = "relu"
    temperature: float = 1.0
    epochs: int = 30
    batch_size: int = 160
    lr_init: float = 0.1
    lr_min: float = 0.0


@dataclass(frozen=True)
class SynthesisStageConfig:
    alpha: float = 0.015
    c: int = 2
    K: int = 100
    per_origin_count: int = 3


@dataclass(frozen=True)
class DetectorStageConfig:
    mode: str = "decoded"
    beta: float = 2.5
    hidden: tuple[int, ...] = (64, 64)
    activation: str = "tanh"
    energy_hidden: int = 16
    epochs: int = 100
    batch_size: int = 160
    lr_init: float = 0.1
    lr_min: float = 0.0


@dataclass(frozen=True)
class EvalConfig:
    tpr_target: float = 0.95


@dataclass(frozen=True)
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    anchors: AnchorConfig = field(default_factory=AnchorConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    boundary: BoundaryConfig = field(default_factory=BoundaryConfig)
    synthesis: SynthesisStageConfig = field(default_factory=SynthesisStageConfig)
    detector: DetectorStageConfig = field(default_factory=DetectorStageConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    seed: int = 7
    output_dir: str = "runs/out"

    def to_dict(self) -> dict:
        d = asdict(self)
        d["encoder"]["hidden"] = list(self.encoder.hidden)
        d["detector"]["hidden"] = list(self.detector.hidden)
        return d

    def validate(self) -> None:
        try:
            if self.data.kind not in DATASET_KINDS:
                raise ValueError(f"unknown data kind {self.data.kind!r}")
            if self.anchors.mode not in ANCHOR_MODES:
                raise ValueError(f"unknown anchor mode {self.anchors.mode!r}")
            if self.anchors.mode == "from_file" and not self.anchors.path:
                raise ValueError("anchors.mode='from_file' requires anchors.path")
            if self.encoder.activation not in ACTIVATIONS or self.detector.activation not in ACTIVATIONS:
                raise ValueError("unknown activation")
            if self.encoder.temperature <= 0:
                raise ValueError("temperature must be positive")
            if self.detector.mode not in DETECTOR_MODES:
                raise ValueError(f"unknown detector mode {self.detector.mode!r}")
            if self.detector.beta < 0:
                raise ValueError("beta must be >= 0")
            if self.synthesis.alpha <= 0 or self.synthesis.c < 0 or self.synthesis.K < 1:
                raise ValueError("bad synthesis section")
            if self.synthesis.per_origin_count < 1:
                raise ValueError("per_origin_count must be >= 1")
            if not (0.0 < self.eval.tpr_target <= 1.0):
                raise ValueError("tpr_target must be in (0, 1]")
            if self.data.kind != "from_csv":
                self.data.spec(self.seed)  # triggers DatasetSpec validation
            BoundaryConfig(self.boundary.alpha, self.boundary.max_steps, self.boundary.select_percent)
        except ValueError as exc:
            raise ConfigError(str(exc)) from None


_SECTION_KEYS = {
    "data": {
        "kind", "classes", "input_dim", "train_per_class", "test_per_class",
        "class_center_scale", "noise_sigma", "structure_dim", "path",
    },
    "anchors": {"mode", "dim", "path"},
    "encoder": {"hidden", "activation", "temperature", "epochs", "batch_size", "lr_init", "lr_min"},
    "boundary": {"alpha", "K", "r"},
    "synthesis": {"alpha", "c", "K", "per_origin_count"},
    "detector": {
        "mode", "beta", "hidden", "activation", "energy_hidden",
        "epochs", "batch_size", "lr_init", "lr_min",
    },
    "eval": {"tpr_target"},
}


def _check_keys(section: str, table: dict) -> dict:
    allowed = _SECTION_KEYS[section]
    unknown = set(table) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) {sorted(unknown)} in [{section}] (allowed: {sorted(allowed)})")
    return dict(table)


def config_from_dict(doc: dict) -> RunConfig:
    """Build a RunConfig from a parsed TOML document."""
    top_allowed = {"seed", "output_dir"} | set(_SECTION_KEYS)
    unknown = set(doc) - top_allowed
    if unknown:
        raise ConfigError(f"unknown top-level key(s) {sorted(unknown)}")
    base = RunConfig()
    try:
        d = _check_keys("data", doc.get("data", {}))
        a = _check_keys("anchors", doc.get("anchors", {}))
        e = _check_keys("encoder", doc.get("encoder", {}))
        b = _check_keys("boundary", doc.get("boundary", {}))
        s = _check_keys("synthesis", doc.get("synthesis", {}))
        det = _check_keys("detector", doc.get("detector", {}))
        ev = _check_keys("eval", doc.get("eval", {}))
        if "hidden" in e:
            e["hidden"] = tuple(e["hidden"])
        if "hidden" in det:
            det["hidden"] = tuple(det["hidden"])
        boundary = BoundaryConfig(
            alpha=b.get("alpha", base.boundary.alpha),
            max_steps=b.get("K", base.boundary.max_steps),
            select_percent=b.get("r", base.boundary.select_percent),
        )
        cfg = RunConfig(
            data=replace(base.data, **d),
            anchors=replace(base.anchors, **a),
            encoder=replace(base.encoder, **e),
            boundary=boundary,
            synthesis=replace(base.synthesis, **s),
            detector=replace(base.detector, **det),
            eval=replace(base.eval, **ev),
            seed=int(doc.get("seed", base.seed)),
            output_dir=str(doc.get("output_dir", base.output_dir)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    cfg.validate()
    return cfg


def load_config(path=None, seed: int | None = None, output_dir: str | None = None) -> RunConfig:
    """Load a TOML config (or defaults) and apply CLI overrides."""
    if path is None:
        cfg = RunConfig()
    else:
        try:
            with open(path, "rb") as fh:
                doc = tomllib.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"invalid TOML in {path}: {exc}") from None
        cfg = config_from_dict(doc)
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    if output_dir is not None:
        cfg = replace(cfg, output_dir=str(output_dir))
    cfg.validate()
    return cfg


def apply_sweep_value(cfg: RunConfig, parameter: str, value) -> RunConfig:
    """Substitute one swept hyperparameter; alpha and K apply to both the
    boundary and synthesis stages, which share them."""
    if parameter == "alpha":
        return replace(
            cfg,
            boundary=replace(cfg.boundary, alpha=float(value)),
            synthesis=replace(cfg.synthesis, alpha=float(value)),
        )
    if parameter == "K":
        return replace(
            cfg,
            boundary=replace(cfg.boundary, max_steps=int(value)),
            synthesis=replace(cfg.synthesis, K=int(value)),
        )
    if parameter == "c":
        return replace(cfg, synthesis=replace(cfg.synthesis, c=int(value)))
    if parameter == "r":
        return replace(cfg, boundary=replace(cfg.boundary, select_percent=float(value)))
    if parameter == "beta":
        return replace(cfg, detector=replace(cfg.detector, beta=float(value)))
    raise ConfigError(f"unknown sweep parameter {parameter!r}, expected one of {SWEEP_PARAMETERS}")


@dataclass(frozen=True)
class SweepSpec:
    parameter: str
    values: tuple
    base: RunConfig

    def __post_init__(self):
        if self.parameter not in SWEEP_PARAMETERS:
            raise ConfigError(f"unknown sweep parameter {self.parameter!r}")
        if not self.values:
            raise ConfigError("sweep needs at least one value")
        for v in self.values:
            try:
                # constructing the config validates the value's legal range
                apply_sweep_value(self.base, self.parameter, v).validate()
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"sweep value {v!r} for {self.parameter}: {exc}") from None


def write_default_config(path) -> None:
    """Emit a fully commented default config file."""
    cfg = RunConfig()
    text = f"""# pipeline configuration (flag > file > default)
seed = {cfg.seed}
output_dir = "{cfg.output_dir}"

[data]
kind = "{cfg.data.kind}"            # gaussian_mixture | two_rings | from_csv
classes = {cfg.data.classes}
input_dim = {cfg.data.input_dim}
train_per_class = {cfg.data.train_per_class}
test_per_class = {cfg.data.test_per_class}
class_center_scale = {cfg.data.class_center_scale}
noise_sigma = {cfg.data.noise_sigma}
structure_dim = {cfg.data.structure_dim}

[anchors]
mode = "{cfg.anchors.mode}"  # random_orthonormal | from_file
dim = {cfg.anchors.dim}

[encoder]
hidden = [{", ".join(str(w) for w in cfg.encoder.hidden)}]
activation = "{cfg.encoder.activation}"
temperature = {cfg.encoder.temperature}
epochs = {cfg.encoder.epochs}
batch_size = {cfg.encoder.batch_size}
lr_init = {cfg.encoder.lr_init}
lr_min = {cfg.encoder.lr_min}

[boundary]
alpha = {cfg.boundary.alpha}
K = {cfg.boundary.max_steps}
r = {cfg.boundary.select_percent}

[synthesis]
alpha = {cfg.synthesis.alpha}
c = {cfg.synthesis.c}
K = {cfg.synthesis.K}
per_origin_count = {cfg.synthesis.per_origin_count}

[detector]
mode = "{cfg.detector.mode}"         # decoded | latent
beta = {cfg.detector.beta}
hidden = [{", ".join(str(w) for w in cfg.detector.hidden)}]
activation = "{cfg.detector.activation}"
energy_hidden = {cfg.detector.energy_hidden}
epochs = {cfg.detector.epochs}
batch_size = {cfg.detector.batch_size}
lr_init = {cfg.detector.lr_init}
lr_min = {cfg.detector.lr_min}

[eval]
tpr_target = {cfg.eval.tpr_target}
"""
    Path(path).write_text(text)
