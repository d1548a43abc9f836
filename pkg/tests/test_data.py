import json

import numpy as np
import pytest

from zslrac.data import (Dataset, Manifest, SyntheticConfig, class_means, l2_normalize_rows,
                         load_dataset, save_dataset, synthesize_dataset, synthetic_maps,
                         validate_dataset)
from zslrac.errors import DataError


def _tiny():
    m = Manifest("tiny", 2, 3, [10, 20, 30], [10, 20], [30])
    feats = np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 7.0], [0.1, 0.2]])
    labels = [10, 10, 20, 30]
    desc = np.arange(9, dtype=float).reshape(3, 3)
    return Dataset(m, feats, labels, desc, sample_ids=[4, 5, 6, 7])


def test_class_means_hand_values():
    ds = _tiny()
    np.testing.assert_array_equal(class_means(ds, [20, 10]), [[5.0, 7.0], [2.0, 3.0]])


def test_class_means_missing_class():
    with pytest.raises(DataError, match="class 99"):
        class_means(_tiny(), [99])


def test_dataset_arrays_are_read_only():
    ds = _tiny()
    with pytest.raises(ValueError):
        ds.features[0, 0] = 1.0


def test_descriptors_for_follows_request_order():
    ds = _tiny()
    np.testing.assert_array_equal(ds.descriptors_for([30, 10]), [[6, 7, 8], [0, 1, 2]])
    with pytest.raises(DataError):
        ds.descriptors_for([11])


@pytest.mark.parametrize("binary", [False, True])
def test_round_trip_is_bit_exact(tmp_path, binary):
    train, _ = synthesize_dataset(SyntheticConfig(seed=3, descriptor_noise=0.01))
    path = save_dataset(train, tmp_path, "train.json", binary=binary)
    back = load_dataset(path)
    assert back.manifest.class_ids == train.manifest.class_ids
    np.testing.assert_array_equal(back.features, train.features)
    np.testing.assert_array_equal(back.descriptors, train.descriptors)
    np.testing.assert_array_equal(back.labels, train.labels)
    np.testing.assert_array_equal(back.sample_ids, train.sample_ids)


def test_normalize_flag(tmp_path):
    path = save_dataset(_tiny(), tmp_path)
    ds = load_dataset(path, normalize=True)
    np.testing.assert_allclose(np.linalg.norm(ds.features, axis=1), 1.0)
    np.testing.assert_allclose(np.linalg.norm(ds.descriptors[1:], axis=1), 1.0)


def test_l2_normalize_keeps_zero_rows():
    out = l2_normalize_rows(np.array([[0.0, 0.0], [3.0, 4.0]]))
    np.testing.assert_allclose(out, [[0, 0], [0.6, 0.8]])


def test_missing_manifest(tmp_path):
    with pytest.raises(DataError, match="not found"):
        load_dataset(tmp_path / "nope.json")


def test_missing_referenced_file(tmp_path):
    path = save_dataset(_tiny(), tmp_path)
    (tmp_path / "features.csv").unlink()
    with pytest.raises(DataError, match="features.csv"):
        load_dataset(path)


def test_dimension_mismatch_is_reported(tmp_path):
    path = save_dataset(_tiny(), tmp_path)
    raw = json.loads(path.read_text())
    raw["feature_dim"] = 3
    path.write_text(json.dumps(raw))
    with pytest.raises(DataError, match="feature_dim=3"):
        load_dataset(path)


def test_unknown_label_names_row(tmp_path):
    path = save_dataset(_tiny(), tmp_path)
    lines = (tmp_path / "features.csv").read_text().splitlines()
    lines[2] = lines[2].replace("5,10,", "5,99,", 1)
    (tmp_path / "features.csv").write_text("\n".join(lines) + "\n")
    with pytest.raises(DataError, match="row 1: label 99"):
        load_dataset(path)


def test_non_finite_value_names_cell(tmp_path):
    path = save_dataset(_tiny(), tmp_path)
    lines = (tmp_path / "descriptors.csv").read_text().splitlines()
    parts = lines[2].split(",")
    parts[2] = "nan"
    lines[2] = ",".join(parts)
    (tmp_path / "descriptors.csv").write_text("\n".join(lines) + "\n")
    with pytest.raises(DataError, match="row 1 column 1: non-finite"):
        load_dataset(path)


def test_validate_reports_every_problem():
    m = Manifest("bad", 2, 1, [1, 2], [1, 2], [2])
    ds = Dataset(m, [[0.0, np.inf]], [3], [[0.0], [1.0]])
    findings = validate_dataset(ds)
    assert any("both seen and unseen" in f for f in findings)
    assert any("label 3" in f for f in findings)
    assert any("non-finite" in f for f in findings)


def test_synthetic_split_shapes():
    cfg = SyntheticConfig()
    train, test = synthesize_dataset(cfg)
    assert train.features.shape == (5 * 30, 16)
    assert test.features.shape == (8 * 30, 16)
    assert set(train.labels.tolist()) == {0, 1, 2, 3, 4}
    assert set(test.labels.tolist()) == set(range(8))
    assert train.descriptors.shape == (8, 8)
    assert validate_dataset(train) == [] and validate_dataset(test) == []


def test_synthetic_is_seeded():
    a, _ = synthesize_dataset(SyntheticConfig(seed=9))
    b, _ = synthesize_dataset(SyntheticConfig(seed=9))
    c, _ = synthesize_dataset(SyntheticConfig(seed=10))
    np.testing.assert_array_equal(a.features, b.features)
    assert not np.array_equal(a.features, c.features)


def test_synthetic_descriptor_map_is_invertible():
    cfg = SyntheticConfig(seed=4)
    maps = synthetic_maps(cfg)
    train, _ = synthesize_dataset(cfg)
    np.testing.assert_allclose(maps.to_center(train.descriptors), maps.centers, atol=1e-10)
    np.testing.assert_allclose(class_means(train, range(5)), maps.centers[:5], atol=0.05)


def test_synthetic_config_rejects_bad_sizes():
    with pytest.raises(ValueError):
        SyntheticConfig(seen_classes=0)
    with pytest.raises(ValueError):
        SyntheticConfig(cluster_spread=-1)
