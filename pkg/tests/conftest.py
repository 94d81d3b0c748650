import numpy as np
import pytest
from dataclasses import replace

from bood import latent, nn
from bood.config import RunConfig


def identity_encoder(anchors: latent.AnchorSet, temperature: float = 1.0) -> latent.EncoderModel:
    """Single linear layer with identity weights: encode(x) = x."""
    n = anchors.dim
    params = nn.MlpParams([np.eye(n)], [np.zeros(n)], "relu")
    return latent.EncoderModel(params, anchors, temperature)


@pytest.fixture
def toy2d() -> latent.EncoderModel:
    """2-class 2-D toy: anchors e1/e2, identity encoder, t=1. Boundary at 45 degrees."""
    return identity_encoder(latent.AnchorSet(["a", "b"], np.eye(2)))


@pytest.fixture
def mini_cfg(tmp_path) -> RunConfig:
    """Small, fast pipeline config for CLI and orchestration tests (~1 s per run)."""
    cfg = RunConfig(output_dir=str(tmp_path / "run"), seed=5)
    return replace(
        cfg,
        data=replace(cfg.data, classes=4, input_dim=8, train_per_class=40, test_per_class=20),
        anchors=replace(cfg.anchors, dim=6),
        encoder=replace(cfg.encoder, hidden=(24, 24), epochs=8, batch_size=32),
        boundary=replace(cfg.boundary, max_steps=80),
        synthesis=replace(cfg.synthesis, K=80, per_origin_count=1),
        detector=replace(cfg.detector, hidden=(24, 24), epochs=10, batch_size=32),
    )
