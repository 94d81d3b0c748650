import numpy as np
import pytest

from bood import data
from bood.data import DatasetSpec, ToyDecoder
from bood.rng import make_rng


def spec(**kw):
    base = dict(classes=4, input_dim=6, train_per_class=50, test_per_class=20,
                noise_sigma=0.2, structure_dim=2, seed=3)
    base.update(kw)
    return DatasetSpec(**base)


# --- gaussian mixture -----------------------------------------------------------------

def test_zero_noise_collapses_to_centers():
    train, _, record = data.gen_gaussian_mixture(spec(noise_sigma=0.0))
    centers_x = record.input_space_centers()
    for row, label in zip(train.rows, train.labels):
        assert np.allclose(row, centers_x[label], atol=1e-12)


def test_same_seed_bit_identical():
    a_train, a_test, _ = data.gen_gaussian_mixture(spec())
    b_train, b_test, _ = data.gen_gaussian_mixture(spec())
    assert np.array_equal(a_train.rows, b_train.rows)
    assert np.array_equal(a_test.rows, b_test.rows)
    assert np.array_equal(a_train.labels, b_train.labels)


def test_class_means_near_centers():
    s = spec(train_per_class=500, noise_sigma=0.2)
    train, _, record = data.gen_gaussian_mixture(s)
    centers_x = record.input_space_centers()
    tol = 3 * 0.2 / np.sqrt(500)
    for v in range(s.classes):
        mean = train.rows[train.labels == v].mean(axis=0)
        # per-coordinate deviation of the sample mean
        assert np.all(np.abs(mean - centers_x[v]) < 3.5 * tol)


def test_mixing_is_isometric():
    _, _, record = data.gen_gaussian_mixture(spec())
    w = record.mixing
    assert np.allclose(w.T @ w, np.eye(2), atol=1e-12)


def test_two_rings_smoke():
    s = DatasetSpec(kind="two_rings", classes=2, input_dim=4, train_per_class=30,
                    test_per_class=10, noise_sigma=0.05, structure_dim=2, seed=1)
    train, id_test, _ = data.gen_gaussian_mixture(s)
    assert len(train) == 60 and len(id_test) == 20


def test_spec_validation():
    with pytest.raises(ValueError):
        DatasetSpec(kind="nope")
    with pytest.raises(ValueError):
        spec(noise_sigma=-1.0)
    with pytest.raises(ValueError):
        DatasetSpec(kind="from_csv")  # needs a path


# --- OOD test sets ---------------------------------------------------------------------

def test_radial_shift_factor_below_two_rejected():
    with pytest.raises(ValueError, match="factor"):
        data.gen_ood_testset(spec(), "radial_shift", factor=1.0)


def test_radial_shift_pushes_outward():
    s = spec()
    ds, info = data.gen_ood_testset(s, "radial_shift", n_samples=64)
    _, _, record = data.gen_gaussian_mixture(s)
    radii = np.linalg.norm(ds.rows @ record.mixing, axis=1)
    assert info["radial_factor"] == 2.0
    assert radii.min() > s.class_center_scale * 1.5


def test_held_out_margin_recorded_and_respected():
    s = spec()
    ds, info = data.gen_ood_testset(s, "held_out_classes", n_samples=128)
    assert info["min_center_distance"] >= info["declared_margin"]
    _, _, record = data.gen_gaussian_mixture(s)
    centers_x = record.input_space_centers()
    d = np.linalg.norm(ds.rows[:, None, :] - centers_x[None, :, :], axis=2).min(axis=1)
    assert d.min() > 3 * s.noise_sigma  # outside every ID 3-sigma ball


def test_uniform_box_outside_inflated_box():
    s = spec()
    ds, _ = data.gen_ood_testset(s, "uniform_box", n_samples=128)
    centers = data.gen_gaussian_mixture(s)[2].centers
    lo = centers.min(axis=0) - 3 * s.noise_sigma
    hi = centers.max(axis=0) + 3 * s.noise_sigma
    mid, half = 0.5 * (lo + hi), 0.75 * (hi - lo)
    structure_pts = ds.rows @ data.gen_gaussian_mixture(s)[2].mixing
    # input-space noise can only wiggle points slightly; none should sit deep inside
    inside = np.all(np.abs(structure_pts - mid) <= half * 0.9, axis=1)
    assert not inside.any()


def test_uniform_box_degenerate_errors():
    degenerate = spec(class_center_scale=0.0, noise_sigma=0.0)
    with pytest.raises(ValueError, match="degenerate"):
        data.gen_ood_testset(degenerate, "uniform_box")


def test_unknown_shift_kind():
    with pytest.raises(ValueError, match="shift"):
        data.gen_ood_testset(spec(), "sideways")


def test_ood_generation_deterministic():
    a, _ = data.gen_ood_testset(spec(), "held_out_classes", n_samples=50)
    b, _ = data.gen_ood_testset(spec(), "held_out_classes", n_samples=50)
    assert np.array_equal(a.rows, b.rows)


# --- toy decoder ------------------------------------------------------------------------

def test_toy_decode_identity():
    dec = ToyDecoder(np.eye(3), np.zeros(3))
    z = np.array([1.0, -2.0, 0.5])
    assert np.array_equal(data.toy_decode(dec, z), z)


def test_toy_decode_linearity():
    rng = make_rng(5, "w")
    dec = ToyDecoder(rng.standard_normal((5, 3)), rng.standard_normal(5))
    z = rng.standard_normal(3)
    lhs = data.toy_decode(dec, 2.5 * z) - dec.bias
    rhs = 2.5 * (data.toy_decode(dec, z) - dec.bias)
    assert np.allclose(lhs, rhs, atol=1e-12)


def test_toy_decode_pinv_roundtrip():
    """Independent route back: Moore-Penrose pseudo-inverse recovers the latent."""
    rng = make_rng(6, "w")
    dec = ToyDecoder(rng.standard_normal((6, 3)), rng.standard_normal(6))
    for _ in range(10):
        z = rng.standard_normal(3)
        back = np.linalg.pinv(dec.weight) @ (data.toy_decode(dec, z) - dec.bias)
        assert np.allclose(back, z, atol=1e-10)


def test_fit_toy_decoder_recovers_linear_map():
    rng = make_rng(7, "w")
    w0 = rng.standard_normal((6, 3))
    b0 = rng.standard_normal(6)
    z = rng.standard_normal((40, 3))
    x = z @ w0.T + b0
    dec = data.fit_toy_decoder(z, x)
    assert np.allclose(dec.weight, w0, atol=1e-9)
    assert np.allclose(dec.bias, b0, atol=1e-9)


def test_rank_deficient_decoder_rejected():
    w = np.zeros((4, 2))
    w[:, 0] = 1.0
    with pytest.raises(ValueError, match="rank"):
        ToyDecoder(w, np.zeros(4))


def test_toy_decode_dimension_mismatch():
    dec = ToyDecoder(np.eye(3), np.zeros(3))
    with pytest.raises(ValueError, match="dim"):
        data.toy_decode(dec, np.zeros(4))


# --- CSV ingestion -----------------------------------------------------------------------

def test_load_embeddings_ragged_row_names_line(tmp_path):
    p = tmp_path / "e.csv"
    p.write_text("a,1,2,3\nb,1,2\n")
    with pytest.raises(ValueError, match="line 2"):
        data.load_embeddings_csv(p)


def test_load_embeddings_first_appearance_labels(tmp_path):
    p = tmp_path / "e.csv"
    p.write_text("cat,1,0\ndog,0,1\ncat,2,2\n")
    ds, names = data.load_embeddings_csv(p)
    assert names == ["cat", "dog"]
    assert ds.labels.tolist() == [0, 1, 0]


def test_load_embeddings_non_numeric(tmp_path):
    p = tmp_path / "e.csv"
    p.write_text("a,1,x\n")
    with pytest.raises(ValueError, match="non-numeric"):
        data.load_embeddings_csv(p)


def test_load_embeddings_empty_file(tmp_path):
    p = tmp_path / "e.csv"
    p.write_text("")
    with pytest.raises(ValueError, match="empty"):
        data.load_embeddings_csv(p)


def test_dataset_csv_roundtrip(tmp_path):
    train, _, _ = data.gen_gaussian_mixture(spec(train_per_class=10))
    p = tmp_path / "d.csv"
    data.save_dataset_csv(train, p, class_names=[f"c{i}" for i in range(4)])
    loaded, names = data.load_embeddings_csv(p)
    assert names == ["c0", "c1", "c2", "c3"]
    assert np.all(np.abs(loaded.rows - train.rows) < 1e-12)
    assert np.array_equal(loaded.labels, train.labels)


def test_generator_record_roundtrip(tmp_path):
    _, _, record = data.gen_gaussian_mixture(spec())
    record.margins["x"] = 1.5
    p = tmp_path / "rec.json"
    data.save_generator_record(record, p)
    loaded = data.load_generator_record(p)
    assert np.array_equal(loaded.centers, record.centers)
    assert np.array_equal(loaded.mixing, record.mixing)
    assert loaded.margins == record.margins
