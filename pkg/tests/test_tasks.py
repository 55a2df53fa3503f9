import hashlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hybrid_ens.blocks import ConfigurationError
from hybrid_ens.metrics import batch_psnr
from hybrid_ens.tasks import (TASKS, TaskSpec, clean_image, degrade, generate_dataset, line_kernel, load_dataset,
                              random_crops, save_dataset, task_manifest)


def test_zero_noise_is_identity():
    deg, clean = generate_dataset(TaskSpec("denoise", size=16, sigma=0.0), "train", 4, 0)
    assert np.array_equal(deg, clean)


@pytest.mark.parametrize("kind", TASKS)
def test_same_seed_same_dataset(kind):
    a = generate_dataset(TaskSpec(kind, size=16), "val", 3, 5)
    b = generate_dataset(TaskSpec(kind, size=16), "val", 3, 5)
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


@pytest.mark.parametrize("kind", TASKS)
def test_clean_images_in_unit_range(kind):
    _, clean = generate_dataset(TaskSpec(kind, size=16), "train", 6, 1)
    assert clean.min() >= 0.0 and clean.max() <= 1.0


def test_splits_are_disjoint():
    spec = TaskSpec(size=16)
    train = generate_dataset(spec, "train", 8, 0)[1]
    test = generate_dataset(spec, "test", 8, 0)[1]
    for a in train:
        assert not any(np.array_equal(a, b) for b in test)


def test_denoise_sigma_01_is_20db():
    deg, clean = generate_dataset(TaskSpec("denoise", size=32, sigma=0.1), "test", 64, 3)
    assert abs(batch_psnr(deg, clean, clamp=False) - 20.0) < 0.2


def test_line_kernel_normalised():
    rng = np.random.default_rng(0)
    for length in range(3, 8):
        k = line_kernel(rng, length)
        assert k.shape == (length, length) and k.min() >= 0 and k.sum() == pytest.approx(1.0)


def test_deblur_preserves_constant_image():
    rng = np.random.default_rng(2)
    flat = np.full((3, 16, 16), 0.4)
    assert np.allclose(degrade(rng, flat, TaskSpec("deblur", size=16)), flat)


def test_derain_only_brightens():
    rng = np.random.default_rng(3)
    img = clean_image(rng, 16)
    out = degrade(rng, img, TaskSpec("derain", size=16))
    assert (out >= img).all() and (out > img).any()


@settings(max_examples=15, deadline=None)
@given(st.sampled_from(TASKS), st.integers(0, 2**31 - 1))
def test_degradation_deterministic_given_seed(kind, seed):
    spec = TaskSpec(kind, size=8)
    a = degrade(np.random.default_rng(seed), np.full((3, 8, 8), 0.5), spec)
    b = degrade(np.random.default_rng(seed), np.full((3, 8, 8), 0.5), spec)
    assert np.array_equal(a, b)


@pytest.mark.parametrize("kwargs", [dict(kind="inpaint"), dict(size=12), dict(sigma=-0.1)])
def test_task_spec_validation(kwargs):
    with pytest.raises(ConfigurationError):
        TaskSpec(**kwargs)


def test_generate_validation():
    with pytest.raises(ConfigurationError):
        generate_dataset(TaskSpec(size=8), "train", 0, 0)
    with pytest.raises(ConfigurationError):
        generate_dataset(TaskSpec(size=8), "holdout", 1, 0)


def test_random_crops():
    deg, clean = generate_dataset(TaskSpec(size=16), "train", 3, 0)
    x, y = random_crops(np.random.default_rng(0), deg, clean, 5, 8)
    assert x.shape == y.shape == (5, 3, 8, 8)
    with pytest.raises(ConfigurationError):
        random_crops(np.random.default_rng(0), deg, clean, 1, 24)


def test_dataset_cache_round_trip(tmp_path):
    spec = TaskSpec("deblur", size=16)
    deg, clean = generate_dataset(spec, "val", 3, 9)
    manifest = save_dataset(tmp_path, "val", deg, clean, task_manifest(spec, "val", 3, 9))
    d2, c2, meta = load_dataset(tmp_path, "val")
    assert np.array_equal(d2, deg) and np.array_equal(c2, clean)
    assert meta["kind"] == "deblur" and meta["seed"] == 9 and meta["arrays"]["clean"]["shape"] == [3, 3, 16, 16]
    raw = (tmp_path / "val_degraded.bin").read_bytes()
    assert len(raw) == deg.size * 8
    assert meta["arrays"]["degraded"]["sha256"] == hashlib.sha256(raw).hexdigest()
    assert manifest.name == "val.json"
