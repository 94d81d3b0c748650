import numpy as np
import pytest
from scipy.stats import spearmanr

from bood import boundary, latent
from bood.boundary import BoundaryConfig, DistanceRecord, NoBoundaryFeaturesError
from bood.latent import LatentFeature
from bood.rng import make_rng
from conftest import identity_encoder


# --- independent reference: own derivation of the ascent step ------------------------

def oracle_grad(anchors: np.ndarray, z: np.ndarray, y: int, t: float) -> np.ndarray:
    """Gradient of CE(cosine logits / t, y) w.r.t. z, derived and coded separately."""
    norm = np.linalg.norm(z)
    zh = z / norm
    logits = anchors @ zh / t
    e = np.exp(logits - logits.max())
    p = e / e.sum()
    dlog = p.copy()
    dlog[y] -= 1.0
    g = anchors.T @ dlog / t
    return (g - (zh @ g) * zh) / norm


def oracle_walk(anchors, z0, y, alpha, max_steps, t=1.0):
    """Step-by-step reference simulation of the flip search."""
    z = z0.astype(float).copy()
    if int(np.argmax(anchors @ (z / np.linalg.norm(z)))) != y:
        return 0, z
    for k in range(1, max_steps + 1):
        z = z + alpha * np.sign(oracle_grad(anchors, z, y, t))
        if int(np.argmax(anchors @ (z / np.linalg.norm(z)))) != y:
            return k, z
    return None, z


# --- perturb_step ---------------------------------------------------------------------

def test_perturb_step_golden(toy2d):
    """At z=(1,0) the gradient x-component is exactly zero and y is positive."""
    z1 = boundary.perturb_step(toy2d, np.array([1.0, 0.0]), 0, 0.015)
    assert np.array_equal(z1, [1.0, 0.015])
    g = oracle_grad(np.eye(2), np.array([1.0, 0.0]), 0, 1.0)
    assert g[0] == 0.0 and g[1] > 0.0


def test_perturb_step_zero_alpha(toy2d):
    z = np.array([0.3, 0.1])
    assert np.array_equal(boundary.perturb_step(toy2d, z, 0, 0.0), z)


def zero_grad_model():
    """Anchors -e2/e2 with z on the axis: the projected gradient is exactly zero."""
    anchors = latent.AnchorSet(["neg", "pos"], np.array([[0.0, -1.0], [0.0, 1.0]]))
    return identity_encoder(anchors)


def test_perturb_step_sign_zero_no_movement():
    model = zero_grad_model()
    z = np.array([0.0, 2.0])  # correctly classified as "pos"
    assert np.array_equal(boundary.perturb_step(model, z, 1, 0.015), z)


def test_perturb_step_rejects_zero_norm(toy2d):
    with pytest.raises(ValueError, match="norm"):
        boundary.perturb_step(toy2d, np.zeros(2), 0, 0.015)


# --- estimate_distance -------------------------------------------------------------------

def test_misclassified_is_distance_zero(toy2d):
    z = np.array([0.1, 0.9])  # labeled 0 but predicted 1
    k, zf = boundary.estimate_distance(toy2d, z, 0, BoundaryConfig())
    assert k == 0
    assert np.array_equal(zf, z)


def test_stuck_feature_is_sentinel():
    model = zero_grad_model()
    k, zf = boundary.estimate_distance(model, np.array([0.0, 2.0]), 1, BoundaryConfig(max_steps=10))
    assert k is None
    assert np.array_equal(zf, [0.0, 2.0])


def test_estimate_distance_matches_reference_simulation(toy2d):
    cfg = BoundaryConfig(alpha=0.015, max_steps=100)
    k, zf = boundary.estimate_distance(toy2d, np.array([1.0, 0.0]), 0, cfg)
    k_ref, z_ref = oracle_walk(np.eye(2), np.array([1.0, 0.0]), 0, 0.015, 100)
    assert k == k_ref
    assert 30 <= k <= 40
    assert np.allclose(zf, z_ref, atol=1e-9)


def test_estimate_distance_reference_on_random_features(toy2d):
    cfg = BoundaryConfig(alpha=0.015, max_steps=100)
    rng = make_rng(13, "features")
    for _ in range(25):
        theta = rng.uniform(0, np.pi / 2)
        z = np.array([np.cos(theta), np.sin(theta)]) * rng.uniform(0.5, 2.0)
        y = int(rng.integers(0, 2))
        k, _ = boundary.estimate_distance(toy2d, z, y, cfg)
        k_ref, _ = oracle_walk(np.eye(2), z, y, 0.015, 100)
        assert k == k_ref


def test_estimate_distance_deterministic(toy2d):
    cfg = BoundaryConfig()
    z = np.array([0.8, 0.3])
    a = boundary.estimate_distance(toy2d, z, 0, cfg)
    b = boundary.estimate_distance(toy2d, z, 0, cfg)
    assert a[0] == b[0]
    assert np.array_equal(a[1], b[1])


def test_monotone_in_angular_margin(toy2d):
    """Features closer to the 45-degree boundary need fewer steps."""
    cfg = BoundaryConfig(alpha=0.015, max_steps=100)
    rng = make_rng(50, "angles")
    thetas = np.sort(rng.uniform(np.radians(1), np.radians(44), size=50))
    ks = []
    for theta in thetas:
        z = np.array([np.cos(theta), np.sin(theta)])
        k, _ = boundary.estimate_distance(toy2d, z, 0, cfg)
        assert k is not None and k >= 1
        ks.append(k)
    margins = np.degrees(np.pi / 4 - thetas)
    rho, _ = spearmanr(margins, ks)
    assert rho >= 0.9
    # k nonincreasing as the angle approaches the boundary
    assert all(a >= b for a, b in zip(ks, ks[1:]))


def test_every_step_increases_loss_on_linear_toy(toy2d):
    cfg = BoundaryConfig(alpha=0.015, max_steps=100)
    rng = make_rng(51, "angles")
    increases = 0
    total = 0
    for _ in range(20):
        theta = rng.uniform(np.radians(2), np.radians(43))
        z = np.array([np.cos(theta), np.sin(theta)])
        prev_loss, _ = boundary.feature_loss_grad(toy2d, z, 0)
        for _ in range(cfg.max_steps):
            z2 = boundary.perturb_step(toy2d, z, 0, cfg.alpha)
            if np.array_equal(z2, z):
                break
            loss, _ = boundary.feature_loss_grad(toy2d, z2, 0)
            total += 1
            if loss > prev_loss:
                increases += 1
            prev_loss, z = loss, z2
            if int(np.argmax(latent.cosine_logits(toy2d, z))) != 0:
                break
    assert total > 0
    assert increases / total >= 0.98


def test_k_zero_iff_misclassified(toy2d):
    cfg = BoundaryConfig(max_steps=60)
    rng = make_rng(52, "z")
    for _ in range(40):
        z = rng.standard_normal(2)
        if np.linalg.norm(z) < 1e-3:
            continue
        y = int(rng.integers(0, 2))
        k, _ = boundary.estimate_distance(toy2d, z, y, cfg)
        mis = int(np.argmax(latent.cosine_logits(toy2d, z))) != y
        assert (k == 0) == mis


# --- table + selection ----------------------------------------------------------------

def make_table(steps_list):
    return [DistanceRecord(i, 0, s, np.zeros(2)) for i, s in enumerate(steps_list)]


def test_select_boundary_quantile():
    selected = boundary.select_boundary(make_table([5, 1, 3, 2, 4]), 40)
    assert [rec.source_index for rec in selected] == [1, 3]


def test_select_boundary_all():
    selected = boundary.select_boundary(make_table([5, 1, None, 2, 4]), 100)
    assert [rec.source_index for rec in selected] == [1, 3, 4, 0]


def test_select_boundary_tie_break():
    selected = boundary.select_boundary(make_table([2, 2, 2]), 34)
    assert [rec.source_index for rec in selected] == [0, 1]


def test_select_boundary_all_sentinel():
    with pytest.raises(NoBoundaryFeaturesError):
        boundary.select_boundary(make_table([None, None]), 50)


def test_select_boundary_empty_table():
    with pytest.raises(ValueError, match="empty"):
        boundary.select_boundary([], 50)


def test_estimate_table_orders_and_threads(toy2d):
    rng = make_rng(53, "z")
    features = [
        LatentFeature(rng.standard_normal(2) + np.array([2.0, 0.0]), 0, i) for i in range(12)
    ]
    cfg = BoundaryConfig(max_steps=60)
    t1 = boundary.estimate_table(toy2d, features, cfg, threads=1)
    t3 = boundary.estimate_table(toy2d, features, cfg, threads=3)
    assert [r.source_index for r in t1] == list(range(12))
    for a, b in zip(t1, t3):
        assert a.steps == b.steps
        assert np.array_equal(a.final_z, b.final_z)


def test_distance_csv_roundtrip(tmp_path, toy2d):
    table = make_table([3, None, 0])
    path = tmp_path / "d.csv"
    boundary.export_distances(table, path)
    loaded = boundary.load_distances(path)
    assert [(r.source_index, r.label, r.steps, r.crossed) for r in loaded] == [
        (0, 0, 3, True), (1, 0, None, False), (2, 0, 0, True),
    ]
