import numpy as np
import pytest

from onlinenorm.config import ConfigError, parse_config, serialize_config
from onlinenorm.datasets import DatasetSpec, generate_dataset, make_blobs
from onlinenorm.idx import (
    IdxCountMismatchError,
    IdxMagicError,
    IdxTruncatedError,
    read_idx,
    read_idx_images,
    read_idx_labels,
    write_idx_images,
    write_idx_labels,
)


# ------------------------------------------------------------------- config


def test_empty_config_gives_defaults():
    cfg, spec = parse_config("")
    assert cfg.alpha_f == 0.999
    assert cfg.alpha_b == 0.99
    assert cfg.normalizer == "online"
    assert spec.kind == "gaussian-blobs"


def test_out_of_range_value_reports_line():
    text = "eta = 0.1\nalpha_f = 1.5\n"
    with pytest.raises(ConfigError) as err:
        parse_config(text)
    assert err.value.line == 2
    assert "alpha_f" in str(err.value) or "decay" in str(err.value)


def test_unknown_key_reports_line():
    with pytest.raises(ConfigError) as err:
        parse_config("# comment\n\nbogus_key = 3\n")
    assert err.value.line == 3
    assert "bogus_key" in str(err.value)


def test_bad_value_type_reports_line():
    with pytest.raises(ConfigError) as err:
        parse_config("epochs = three")
    assert err.value.line == 1


def test_missing_equals_reports_line():
    with pytest.raises(ConfigError) as err:
        parse_config("eta 0.1")
    assert err.value.line == 1


def test_comments_and_blanks_ignored():
    cfg, _ = parse_config("# full line comment\n\neta = 0.25  # trailing comment\n")
    assert cfg.eta == 0.25


def test_round_trip_reparses_to_equal_config():
    text = (
        "eta = 0.03\nmomentum = 0.8\nl2 = 2e-4\nbatch_size = 16\nepochs = 3\n"
        "seed = 11\nnormalizer = batch\nalpha_f = 0.997\nalpha_b = 0.95\n"
        "hidden = 24\ndataset = synthetic-images\nclasses = 5\nsamples = 128\n"
        "image_side = 6\nbrightness = 1.5\n"
    )
    cfg, spec = parse_config(text)
    cfg2, spec2 = parse_config(serialize_config(cfg, spec))
    assert cfg == cfg2
    assert spec == spec2


def test_unknown_normalizer_rejected():
    with pytest.raises(ConfigError):
        parse_config("normalizer = groupnorm")


def test_unknown_dataset_kind_rejected():
    with pytest.raises(ConfigError):
        parse_config("dataset = cifar")


# ---------------------------------------------------------------------- idx


def test_idx_fixture_round_trips_exact_pixels(tmp_path):
    images = np.array(
        [[[0, 51], [102, 255]], [[255, 0], [10, 20]]], dtype=np.uint8
    )
    labels = np.array([1, 0], dtype=np.uint8)
    ip, lp = tmp_path / "img.idx", tmp_path / "lab.idx"
    write_idx_images(ip, images)
    write_idx_labels(lp, labels)
    got = read_idx_images(ip)
    assert got.shape == (2, 2, 2)
    assert np.array_equal(got, images.astype(np.float64) / 255.0)
    assert got.min() >= 0.0 and got.max() <= 1.0
    assert np.array_equal(read_idx_labels(lp), np.array([1, 0]))
    data = read_idx(ip, lp)
    assert data.n == 2 and data.dim == 4 and data.n_classes == 2


def test_idx_count_mismatch_errors(tmp_path):
    ip, lp = tmp_path / "img.idx", tmp_path / "lab.idx"
    write_idx_images(ip, np.zeros((3, 2, 2), dtype=np.uint8))
    write_idx_labels(lp, np.zeros(2, dtype=np.uint8))
    with pytest.raises(IdxCountMismatchError):
        read_idx(ip, lp)


def test_idx_bad_magic_errors(tmp_path):
    ip = tmp_path / "img.idx"
    write_idx_images(ip, np.zeros((1, 2, 2), dtype=np.uint8))
    blob = bytearray(ip.read_bytes())
    blob[0:4] = blob[3::-1]  # byte-reversed magic
    ip.write_bytes(bytes(blob))
    with pytest.raises(IdxMagicError):
        read_idx_images(ip)
    lp = tmp_path / "lab.idx"
    write_idx_labels(lp, np.zeros(1, dtype=np.uint8))
    with pytest.raises(IdxMagicError):
        read_idx_images(lp)  # label magic is not an image magic


def test_idx_truncated_errors(tmp_path):
    ip = tmp_path / "img.idx"
    write_idx_images(ip, np.zeros((2, 3, 3), dtype=np.uint8))
    blob = ip.read_bytes()
    ip.write_bytes(blob[:-5])
    with pytest.raises(IdxTruncatedError):
        read_idx_images(ip)
    ip.write_bytes(blob[:10])
    with pytest.raises(IdxTruncatedError):
        read_idx_images(ip)


# ----------------------------------------------------------------- datasets


def test_generation_is_deterministic():
    spec = DatasetSpec(kind="gaussian-blobs", classes=4, samples=100, dim=5)
    a = generate_dataset(spec, 9)
    b = generate_dataset(spec, 9)
    assert np.array_equal(a.x, b.x)
    assert np.array_equal(a.labels, b.labels)
    c = generate_dataset(spec, 10)
    assert not np.array_equal(a.x, c.x)


def test_zero_variance_blobs_solved_by_nearest_mean():
    spec = DatasetSpec(kind="gaussian-blobs", classes=3, samples=60, dim=4, noise=0.0)
    data = generate_dataset(spec, 0)
    means = np.stack([data.x[data.labels == c].mean(axis=0) for c in range(3)])
    pred = np.argmin(((data.x[:, None, :] - means[None]) ** 2).sum(axis=2), axis=1)
    assert (pred == data.labels).mean() == 1.0


def test_default_blobs_solved_by_logistic_oracle():
    from helpers import logistic_oracle

    data = make_blobs(DatasetSpec(kind="gaussian-blobs"), seed=3)
    assert logistic_oracle(data) > 0.95


def test_synthetic_images_shapes_and_determinism():
    spec = DatasetSpec(kind="synthetic-images", classes=10, samples=32, image_side=8)
    a = generate_dataset(spec, 1)
    assert a.x.shape == (32, 64)
    assert a.n_classes == 10
    assert np.array_equal(a.x, generate_dataset(spec, 1).x)


def test_degenerate_spec_errors():
    with pytest.raises(ValueError):
        generate_dataset(DatasetSpec(kind="gaussian-blobs", classes=0), 0)
    with pytest.raises(ValueError):
        generate_dataset(DatasetSpec(kind="gaussian-blobs", samples=0), 0)
    with pytest.raises(ValueError):
        generate_dataset(DatasetSpec(kind="idx-file"), 0)


def test_split_partitions_all_samples():
    data = generate_dataset(DatasetSpec(samples=100), 2)
    tr, val = data.split(0.25, 0)
    assert tr.n == 75 and val.n == 25
    joined = np.vstack([tr.x, val.x])
    assert joined.shape == data.x.shape
