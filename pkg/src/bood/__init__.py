"""Boundary-crossing outlier synthesis for energy-regularized OOD detection.

Pipeline: learn an anchor-aligned latent space over ID data, rank ID features
by signed-gradient step count to the decision boundary, push the nearest ones
across the boundary to synthesize outlier features, decode them, train a
detector with energy regularization on them, and evaluate with FPR95/AUROC.
"""

from ._version import __version__
from .boundary import (
    BoundaryConfig,
    DistanceRecord,
    NoBoundaryFeaturesError,
    estimate_distance,
    estimate_table,
    perturb_step,
    select_boundary,
)
from .config import ConfigError, RunConfig, SweepSpec, load_config
from .data import (
    Dataset,
    DatasetSpec,
    GeneratorRecord,
    ToyDecoder,
    fit_toy_decoder,
    gen_gaussian_mixture,
    gen_ood_testset,
    load_embeddings_csv,
    toy_decode,
)
from .detector import (
    DetectorModel,
    DetectorTrainConfig,
    EnergyHead,
    build_detector,
    energy,
    ood_loss,
    ood_score,
    train_detector,
)
from .latent import (
    AnchorSet,
    EncoderModel,
    LatentFeature,
    build_encoder,
    cosine_logits,
    encode_dataset,
    latent_loss,
    make_anchors,
    train_encoder,
)
from .metrics import (
    EvalReport,
    MetricsReport,
    ScoreSet,
    auroc,
    baseline_scores,
    evaluate_run,
    fpr_at_tpr,
    id_accuracy,
)
from .nn import MlpParams, MlpSpec, TrainConfig, cosine_lr, finite_diff_check, loss_and_grads, mlp_forward, sgd_step
from .pipeline import RunManifest, StageError, run_all, run_sweep, validate_manifest
from .synthesis import (
    MisclassifiedFeatureError,
    SynthesisConfig,
    SynthesizedOutlier,
    UnreachableBoundaryError,
    export_features,
    read_features,
    synthesize_batch,
    synthesize_ood,
)

__all__ = [name for name in dir() if not name.startswith("_")]
