import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from binfuse.image_io import (
    ImageFormatError,
    ImageTensor,
    ReferenceBatch,
    flatten,
    load_image,
    rgb_to_y,
    save_image,
    unflatten,
)


def _write_png(path, array, mode="RGB"):
    Image.fromarray(np.asarray(array, dtype=np.uint8), mode=mode).save(path)


class TestLoadImage:
    def test_black_pixel(self, tmp_path):
        p = tmp_path / "black.png"
        _write_png(p, np.zeros((1, 1, 3)))
        img = load_image(p)
        assert flatten(img).tolist() == [0.0, 0.0, 0.0]

    def test_white_pixel(self, tmp_path):
        p = tmp_path / "white.png"
        _write_png(p, np.full((1, 1, 3), 255))
        assert flatten(load_image(p)).tolist() == [255.0, 255.0, 255.0]

    def test_flatten_order_is_row_major_interleaved(self, tmp_path):
        p = tmp_path / "two.png"
        _write_png(p, np.array([[[10, 20, 30], [40, 50, 60]]]))
        assert flatten(load_image(p)).tolist() == [10, 20, 30, 40, 50, 60]

    def test_grayscale_promoted_by_replication(self, tmp_path):
        p = tmp_path / "gray.png"
        _write_png(p, np.array([[7, 200]], dtype=np.uint8), mode="L")
        img = load_image(p)
        assert img.data.shape == (1, 2, 3)
        assert np.array_equal(img.data[0, 0], [7, 7, 7])
        assert np.array_equal(img.data[0, 1], [200, 200, 200])

    def test_palette_expanded(self, tmp_path):
        p = tmp_path / "pal.png"
        rgb = Image.fromarray(np.array([[[10, 20, 30], [40, 50, 60]]], dtype=np.uint8))
        rgb.convert("P", palette=Image.ADAPTIVE).save(p)
        img = load_image(p)
        assert img.data.shape == (1, 2, 3)
        assert set(np.unique(img.data)) <= set(range(256))

    def test_16bit_rejected(self, tmp_path):
        p = tmp_path / "deep.png"
        deep = Image.new("I;16", (2, 1))
        deep.putpixel((0, 0), 1000)
        deep.save(p)
        with pytest.raises(ImageFormatError, match="unsupported"):
            load_image(p)

    def test_rgba_rejected(self, tmp_path):
        p = tmp_path / "alpha.png"
        Image.fromarray(np.zeros((2, 2, 4), dtype=np.uint8), mode="RGBA").save(p)
        with pytest.raises(ImageFormatError, match="unsupported"):
            load_image(p)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_image(tmp_path / "nope.png")


class TestSaveImage:
    def test_half_rounds_up(self, tmp_path):
        p = tmp_path / "img.png"
        save_image(np.full((1, 1, 3), 127.5), p)
        assert load_image(p).data[0, 0, 0] == 128.0

    def test_negative_noise_clamped(self, tmp_path):
        p = tmp_path / "img.png"
        save_image(np.full((1, 1, 3), -0.4), p)
        assert load_image(p).data[0, 0, 0] == 0.0

    def test_rounding_near_top(self, tmp_path):
        p = tmp_path / "img.png"
        save_image(np.full((1, 1, 3), 254.6), p)
        assert load_image(p).data[0, 0, 0] == 255.0

    def test_roundtrip_integer_image(self, tmp_path):
        rng = np.random.default_rng(7)
        img = ImageTensor(rng.integers(0, 256, size=(9, 5, 3)).astype(np.float64))
        p = tmp_path / "rt.png"
        save_image(img, p)
        assert np.array_equal(load_image(p).data, img.data)


class TestImageTensor:
    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            ImageTensor(np.full((1, 1, 3), 256.0))
        with pytest.raises(ValueError):
            ImageTensor(np.full((1, 1, 3), -0.1))

    def test_rejects_bad_shape(self):
        with pytest.raises(ValueError):
            ImageTensor(np.zeros((2, 2)))
        with pytest.raises(ValueError):
            ImageTensor(np.zeros((0, 4, 3)))

    def test_rejects_non_finite(self):
        data = np.zeros((1, 1, 3))
        data[0, 0, 0] = np.nan
        with pytest.raises(ValueError):
            ImageTensor(data)

    @given(
        h=st.integers(0, 7),
        w=st.integers(0, 4),
        c=st.integers(0, 2),
    )
    def test_flatten_index_formula(self, h, w, c):
        rng = np.random.default_rng(11)
        img = ImageTensor(rng.integers(0, 256, size=(8, 5, 3)).astype(np.float64))
        flat = flatten(img)
        assert flat[(h * 5 + w) * 3 + c] == img.data[h, w, c]

    def test_unflatten_inverts_flatten(self):
        rng = np.random.default_rng(3)
        img = ImageTensor(rng.uniform(0, 255, size=(6, 4, 3)))
        again = unflatten(flatten(img), 6, 4)
        assert np.array_equal(again.data, img.data)


class TestRgbToY:
    def test_black_maps_to_floor(self):
        assert rgb_to_y(ImageTensor(np.zeros((1, 1, 3))))[0, 0] == 16.0

    def test_white_maps_to_ceiling(self):
        y = rgb_to_y(ImageTensor(np.full((1, 1, 3), 255.0)))[0, 0]
        assert y == pytest.approx(235.0, abs=1e-9)

    def test_pure_red(self):
        y = rgb_to_y(ImageTensor(np.array([[[255.0, 0.0, 0.0]]])))[0, 0]
        assert y == pytest.approx(16.0 + 65.481, abs=1e-12)

    @settings(max_examples=30)
    @given(a=st.floats(0.0, 1.0))
    def test_affine_in_pixel_values(self, a):
        rng = np.random.default_rng(5)
        p = rng.uniform(0, 255, size=(3, 3, 3))
        q = rng.uniform(0, 255, size=(3, 3, 3))
        mixed = rgb_to_y(ImageTensor(a * p + (1 - a) * q))
        expected = a * rgb_to_y(ImageTensor(p)) + (1 - a) * rgb_to_y(ImageTensor(q))
        np.testing.assert_allclose(mixed, expected, atol=1e-9)


class TestReferenceBatch:
    def test_concatenates_flat_vectors(self):
        gt = [ImageTensor(np.full((1, 2, 3), 10.0)), ImageTensor(np.full((2, 2, 3), 20.0))]
        preds = [[ImageTensor(np.full((1, 2, 3), 1.0)), ImageTensor(np.full((2, 2, 3), 2.0))]]
        batch = ReferenceBatch.from_images(gt, preds)
        assert batch.total_pixels == 6 + 12
        assert batch.num_models == 1
        assert batch.num_samples == 2

    def test_shape_mismatch_within_sample(self):
        gt = [ImageTensor(np.zeros((2, 2, 3)))]
        preds = [[ImageTensor(np.zeros((2, 3, 3)))]]
        with pytest.raises(ValueError, match="does not match"):
            ReferenceBatch.from_images(gt, preds)

    def test_empty_reference_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            ReferenceBatch.from_images([], [[]])
