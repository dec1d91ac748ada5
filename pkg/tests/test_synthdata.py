"""Synthetic dataset generator, persistence, pre-processing, augmentation."""

import json

import numpy as np
import pytest
from PIL import Image

from surfcdm.errors import CorruptSampleError, InvalidSizeError, InvalidSpecError
from surfcdm.metrics import dsc
from surfcdm.polar import compute_centroid, is_star_shaped
from surfcdm.synthdata import (
    BACKGROUND_LEVEL,
    CLEAN,
    OBJECT_LEVEL,
    DatasetManifest,
    DropoutArc,
    ImageDegradationSpec,
    ShapeSpec,
    apply_augment,
    augment,
    gen_sample,
    load_sample,
    load_split,
    make_dataset,
    preprocess,
    random_shape_spec,
    rasterize_shape,
    resize_bilinear,
    resize_nearest,
    save_mask_png,
)


def _disk_spec(cx=32.0, cy=32.0, r=12.0):
    return ShapeSpec(center=(cx, cy), base_radius=r)


class TestShapeSpec:
    def test_zero_harmonics_is_exact_disk(self):
        mask = rasterize_shape(_disk_spec(), (64, 64))
        ys, xs = np.mgrid[0:64, 0:64].astype(float)
        expected = ((xs - 32.0) ** 2 + (ys - 32.0) ** 2 < 12.0**2).astype(np.uint8)
        assert np.array_equal(mask, expected)

    def test_radius_at_matches_harmonic_sum(self):
        spec = ShapeSpec((0.0, 0.0), 10.0, amplitudes=(2.0, 1.0), phases=(0.5, 1.5))
        theta = np.array([0.0, 1.0])
        expected = 10.0 + 2.0 * np.sin(theta + 0.5) + 1.0 * np.sin(2 * theta + 1.5)
        assert np.allclose(spec.radius_at(theta), expected)

    def test_negative_radius_rejected(self):
        spec = ShapeSpec((32.0, 32.0), 5.0, amplitudes=(6.0,), phases=(0.0,))
        with pytest.raises(InvalidSpecError):
            spec.validate()

    def test_mismatched_harmonics_rejected(self):
        with pytest.raises(InvalidSpecError):
            ShapeSpec((0, 0), 5.0, amplitudes=(1.0,), phases=()).validate()

    def test_random_specs_are_star_shaped(self):
        rng = np.random.default_rng(17)
        for _ in range(20):
            spec = random_shape_spec(rng, (128, 128))
            mask = rasterize_shape(spec, (128, 128))
            assert is_star_shaped(mask, compute_centroid(mask))


class TestGenSample:
    def test_clean_spec_is_two_level(self):
        image, mask, _ = gen_sample(_disk_spec(), CLEAN, (64, 64), seed=0)
        assert set(np.unique(image)) == {OBJECT_LEVEL, BACKGROUND_LEVEL}
        assert np.array_equal(image == OBJECT_LEVEL, mask.astype(bool))

    def test_deterministic_in_seed(self):
        deg = ImageDegradationSpec()
        a = gen_sample(_disk_spec(), deg, (64, 64), seed=9)
        b = gen_sample(_disk_spec(), deg, (64, 64), seed=9)
        assert np.array_equal(a[0], b[0])
        assert np.array_equal(a[1], b[1])
        c = gen_sample(_disk_spec(), deg, (64, 64), seed=10)
        assert not np.array_equal(a[0], c[0])

    def test_intensity_range(self):
        image, _, _ = gen_sample(_disk_spec(), ImageDegradationSpec(speckle=0.3), (64, 64), 3)
        assert image.min() >= 0.0 and image.max() <= 1.0

    def test_centroid_matches_mask(self):
        _, mask, centroid = gen_sample(_disk_spec(), CLEAN, (64, 64), 0)
        expected = compute_centroid(mask)
        assert centroid == expected

    def test_dropout_arc_kills_boundary_gradient(self):
        # [from the module contract] mean |grad| across the boundary inside the
        # arc must fall below half of the mean outside it
        spec = _disk_spec(64.0, 64.0, 30.0)
        arc = DropoutArc(start=0.0, width=np.pi / 2, attenuation=1.0)
        deg = ImageDegradationSpec(speckle=0.05, gradient_strength=0.0, blur_sigma=1.5,
                                   dropout_arcs=(arc,))
        image, mask, centroid = gen_sample(spec, deg, (128, 128), seed=4)
        gy, gx = np.gradient(image)
        grad = np.hypot(gx, gy)
        from surfcdm.metrics import boundary_pixels

        pts = boundary_pixels(mask)
        theta = np.mod(np.arctan2(pts[:, 1] - centroid.b, pts[:, 0] - centroid.a), 2 * np.pi)
        margin = np.pi / 12
        inside = (theta > margin) & (theta < np.pi / 2 - margin)
        outside = (theta > np.pi / 2 + margin) & (theta < 2 * np.pi - margin)
        g = grad[pts[:, 1].astype(int), pts[:, 0].astype(int)]
        assert g[inside].mean() < 0.5 * g[outside].mean()

    def test_arc_validation(self):
        bad = ImageDegradationSpec(dropout_arcs=(DropoutArc(0.0, 1.0, 1.5),))
        with pytest.raises(InvalidSpecError):
            bad.validate()


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("ds")
    manifest = make_dataset(24, seed=5, out_dir=root, size=(64, 64), frames_per_group=4)
    return root, manifest


@pytest.fixture(scope="module")
def dataset_for_corruption(tmp_path_factory):
    root = tmp_path_factory.mktemp("ds2")
    manifest = make_dataset(12, seed=8, out_dir=root, size=(64, 64), frames_per_group=4)
    return root, manifest


class TestMakeDataset:
    def test_counts_and_layout(self, dataset):
        root, manifest = dataset
        assert len(manifest.entries) == 24
        assert (root / "manifest.json").exists()
        for entry in manifest.entries:
            assert (root / entry.image_path).exists()
            assert (root / entry.mask_path).exists()
            assert entry.split in ("train", "val", "test")

    def test_groups_do_not_straddle_splits(self, dataset):
        _, manifest = dataset
        by_group = {}
        for e in manifest.entries:
            by_group.setdefault(e.group, set()).add(e.split)
        assert all(len(s) == 1 for s in by_group.values())
        splits = {e.split for e in manifest.entries}
        assert splits == {"train", "val", "test"}

    def test_split_ratio_roughly_70_10_20(self):
        labels = []
        from surfcdm.synthdata import _split_groups

        labels = _split_groups(50)
        assert labels.count("train") == 35
        assert labels.count("val") == 5
        assert labels.count("test") == 10

    def test_manifest_round_trip(self, dataset):
        root, manifest = dataset
        loaded = DatasetManifest.load(root)
        assert loaded.size == manifest.size
        assert loaded.seed == manifest.seed
        assert loaded.entries == manifest.entries

    def test_byte_identical_regeneration(self, dataset, tmp_path):
        root, manifest = dataset
        other = tmp_path / "again"
        make_dataset(24, seed=5, out_dir=other, size=(64, 64), frames_per_group=4)
        assert (other / "manifest.json").read_bytes() == (root / "manifest.json").read_bytes()
        for entry in manifest.entries:
            assert (other / entry.image_path).read_bytes() == (root / entry.image_path).read_bytes()

    def test_masks_are_strict_binary_pngs(self, dataset):
        root, manifest = dataset
        raw = np.asarray(Image.open(root / manifest.entries[0].mask_path))
        assert set(np.unique(raw)) <= {0, 255}

    def test_too_few_samples_rejected(self, tmp_path):
        with pytest.raises(InvalidSpecError):
            make_dataset(5, seed=0, out_dir=tmp_path / "tiny")


class TestLoadSample:
    def test_load_round_trip(self, dataset_for_corruption):
        root, manifest = dataset_for_corruption
        entry = manifest.entries[0]
        sample = load_sample(manifest, entry.id)
        assert sample.id == entry.id
        assert sample.image.shape == (64, 64)
        assert set(np.unique(sample.mask)) <= {0, 1}
        assert sample.centroid.a == pytest.approx(entry.centroid[0])

    def test_load_split_returns_all(self, dataset_for_corruption):
        _, manifest = dataset_for_corruption
        train = load_split(manifest, "train")
        assert len(train) == len(manifest.split("train"))

    def test_unknown_id(self, dataset_for_corruption):
        _, manifest = dataset_for_corruption
        with pytest.raises(KeyError):
            load_sample(manifest, "nope")

    def test_non_binary_mask_rejected(self, dataset_for_corruption):
        root, manifest = dataset_for_corruption
        entry = manifest.entries[0]
        grey = np.full((64, 64), 7, np.uint8)
        grey[20:40, 20:40] = 255
        Image.fromarray(grey, mode="L").save(root / entry.mask_path)
        with pytest.raises(CorruptSampleError, match="binary"):
            load_sample(manifest, entry.id)

    def test_empty_mask_rejected(self, dataset_for_corruption):
        root, manifest = dataset_for_corruption
        entry = manifest.entries[1]
        save_mask_png(np.zeros((64, 64), np.uint8), root / entry.mask_path)
        with pytest.raises(CorruptSampleError, match="empty"):
            load_sample(manifest, entry.id)

    def test_disconnected_mask_rejected(self, dataset_for_corruption):
        root, manifest = dataset_for_corruption
        entry = manifest.entries[2]
        two = np.zeros((64, 64), np.uint8)
        two[5:15, 5:15] = 1
        two[40:50, 40:50] = 1
        save_mask_png(two, root / entry.mask_path)
        with pytest.raises(CorruptSampleError, match="connected"):
            load_sample(manifest, entry.id)

    def test_non_star_mask_warns(self, dataset_for_corruption):
        root, manifest = dataset_for_corruption
        entry = manifest.entries[3]
        # a C shape: connected but not star-shaped about its centroid
        c_shape = np.zeros((64, 64), np.uint8)
        c_shape[10:54, 10:20] = 1
        c_shape[10:20, 10:54] = 1
        c_shape[44:54, 10:54] = 1
        save_mask_png(c_shape, root / entry.mask_path)
        with pytest.warns(UserWarning, match="star"):
            load_sample(manifest, entry.id)


class TestPreprocess:
    def test_identity_at_same_size(self):
        rng = np.random.default_rng(0)
        image = rng.random((32, 32))
        mask = (rng.random((32, 32)) < 0.5).astype(np.uint8)
        out_img, out_mask = preprocess(image, mask, (32, 32))
        assert np.allclose(out_img, image)
        assert np.array_equal(out_mask, mask)

    def test_downscale_disk_keeps_shape(self):
        mask = rasterize_shape(_disk_spec(64.0, 64.0, 40.0), (128, 128))
        image = mask.astype(float)
        _, small = preprocess(image, mask, (64, 64))
        expected = rasterize_shape(_disk_spec(31.75, 31.75, 20.0), (64, 64))
        assert dsc(small, expected) >= 0.97

    def test_eight_bit_rescale(self):
        image = np.full((20, 20), 128.0)
        mask = np.ones((20, 20), np.uint8)
        out, _ = preprocess(image, mask, (20, 20))
        assert out.max() == pytest.approx(128.0 / 255.0)

    def test_target_size_floor(self):
        with pytest.raises(InvalidSizeError):
            preprocess(np.zeros((20, 20)), np.zeros((20, 20), np.uint8), (8, 20))

    def test_mask_stays_binary_after_resize(self):
        mask = rasterize_shape(_disk_spec(), (64, 64))
        _, out = preprocess(mask.astype(float), mask, (48, 40))
        assert set(np.unique(out)) <= {0, 1}

    def test_resize_bilinear_identity(self):
        rng = np.random.default_rng(1)
        img = rng.random((17, 23))
        assert np.allclose(resize_bilinear(img, (23, 17)), img)

    def test_resize_nearest_identity(self):
        rng = np.random.default_rng(2)
        m = (rng.random((9, 7)) < 0.5).astype(np.uint8)
        assert np.array_equal(resize_nearest(m, (7, 9)), m)


class TestAugment:
    def test_apply_identity(self):
        rng = np.random.default_rng(0)
        image = rng.random((16, 16))
        mask = (rng.random((16, 16)) < 0.5).astype(np.uint8)
        out_img, out_mask = apply_augment(image, mask, 0.0, False)
        assert np.array_equal(out_img, image)
        assert np.array_equal(out_mask, mask)

    def test_flip_is_involution(self):
        rng = np.random.default_rng(1)
        image = rng.random((16, 16))
        mask = (rng.random((16, 16)) < 0.5).astype(np.uint8)
        once = apply_augment(image, mask, 0.0, True)
        twice = apply_augment(once[0], once[1], 0.0, True)
        assert np.array_equal(twice[0], image)
        assert np.array_equal(twice[1], mask)

    def test_offset_clipped(self):
        image = np.full((8, 8), 0.95)
        out, _ = apply_augment(image, np.ones((8, 8), np.uint8), 0.2, False)
        assert out.max() <= 1.0

    def test_seeded_augment_deterministic(self):
        rng = np.random.default_rng(5)
        image = rng.random((16, 16))
        mask = (rng.random((16, 16)) < 0.5).astype(np.uint8)
        a = augment(image, mask, 123)
        b = augment(image, mask, 123)
        assert np.array_equal(a[0], b[0])
        assert np.array_equal(a[1], b[1])

    def test_augment_preserves_mask_area(self):
        rng = np.random.default_rng(6)
        image = rng.random((16, 16))
        mask = (rng.random((16, 16)) < 0.5).astype(np.uint8)
        _, out_mask = augment(image, mask, 7)
        assert out_mask.sum() == mask.sum()
