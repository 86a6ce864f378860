import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from denobench.data import (DatasetCacheError, ImageSample, NoiseConfig,
                            add_gaussian_noise, decode_image, generate_phantoms,
                            load_images, read_dataset_cache, resize_bilinear,
                            split_dataset, write_dataset_cache, write_image_png)
from denobench.metrics import psnr

PHANTOM_MEAN_5_32_123 = 0.23367972671985626  # frozen: generate_phantoms(5, 32, seed=123)


class TestDecodeAndLoad:
    def test_gray_png_values_exact(self, tmp_path):
        Image.fromarray(np.full((8, 8), 128, np.uint8), "L").save(tmp_path / "a.png")
        (sample,) = load_images(tmp_path, target_size=8)
        assert sample.id == "a"
        assert sample.pixels.shape == (1, 1, 8, 8)
        assert sample.pixels.dtype == np.float32
        np.testing.assert_array_equal(sample.pixels, np.float32(128 / 255))

    def test_16bit_png_scaled_by_65535(self, tmp_path):
        arr = np.full((8, 8), 32768, np.uint16)
        Image.fromarray(arr).save(tmp_path / "deep.png")  # infers I;16
        deep = decode_image(tmp_path / "deep.png")
        np.testing.assert_allclose(deep, 32768 / 65535, rtol=1e-6)

    def test_rgb_collapses_to_channel_mean(self, tmp_path):
        rgb = np.zeros((8, 8, 3), np.uint8)
        rgb[..., 0] = 255  # pure red: mean of (1, 0, 0)
        Image.fromarray(rgb, "RGB").save(tmp_path / "red.png")
        np.testing.assert_allclose(decode_image(tmp_path / "red.png"), 1 / 3, atol=1e-6)

    def test_pgm_supported(self, tmp_path):
        Image.fromarray(np.full((8, 8), 51, np.uint8), "L").save(tmp_path / "x.pgm")
        (sample,) = load_images(tmp_path, target_size=8)
        np.testing.assert_allclose(sample.pixels, 51 / 255, atol=1e-7)

    def test_order_is_lexicographic_by_stem(self, tmp_path):
        for name in ("c.png", "a.png", "b.pgm"):
            Image.fromarray(np.zeros((8, 8), np.uint8), "L").save(tmp_path / name)
        assert [s.id for s in load_images(tmp_path, 8)] == ["a", "b", "c"]

    def test_corrupt_file_skipped_with_warning(self, tmp_path, caplog):
        Image.fromarray(np.zeros((8, 8), np.uint8), "L").save(tmp_path / "ok.png")
        (tmp_path / "bad.png").write_bytes(b"this is not a png")
        with caplog.at_level(logging.WARNING):
            samples = load_images(tmp_path, 8)
        assert [s.id for s in samples] == ["ok"]
        assert "bad.png" in caplog.text

    def test_empty_directory_raises(self, tmp_path):
        with pytest.raises(ValueError, match="no loadable images"):
            load_images(tmp_path, 8)

    def test_missing_directory_raises(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_images(tmp_path / "nope", 8)

    def test_resized_to_target(self, tmp_path):
        Image.fromarray(np.zeros((10, 14), np.uint8), "L").save(tmp_path / "r.png")
        (sample,) = load_images(tmp_path, target_size=16)
        assert sample.pixels.shape == (1, 1, 16, 16)


class TestResizeBilinear:
    def test_identity_size_is_exact(self, rng):
        img = rng.random((9, 7), dtype=np.float32)
        np.testing.assert_array_equal(resize_bilinear(img, 9, 7), img)

    def test_constant_stays_constant(self):
        img = np.full((5, 5), 0.37, np.float32)
        out = resize_bilinear(img, 12, 3)
        np.testing.assert_allclose(out, 0.37, atol=1e-7)

    def test_upsample_2x2_plane(self):
        # src z = 2y + x is a plane, so bilinear output is exactly the plane
        # sampled at half-pixel centers [0, .25, .75, 1] (edges clamped).
        src = np.array([[0.0, 1.0], [2.0, 3.0]], np.float32)
        coords = np.array([0.0, 0.25, 0.75, 1.0])
        want = 2.0 * coords[:, None] + coords[None, :]
        np.testing.assert_allclose(resize_bilinear(src, 4, 4), want, atol=1e-6)

    def test_downsample_4x4_plane(self):
        y, x = np.mgrid[0:4, 0:4]
        src = (y + x).astype(np.float32)
        want = np.array([[1.0, 3.0], [3.0, 5.0]])  # centers at 0.5 and 2.5
        np.testing.assert_allclose(resize_bilinear(src, 2, 2), want, atol=1e-6)

    def test_rank_validated(self):
        with pytest.raises(ValueError, match="2D"):
            resize_bilinear(np.zeros((2, 3, 4), np.float32), 4, 4)


class TestPhantoms:
    def test_count_ids_shape_range(self):
        phantoms = generate_phantoms(5, 32, seed=123)
        assert [p.id for p in phantoms] == [f"phantom_{i:04d}" for i in range(5)]
        stack = np.stack([p.pixels for p in phantoms])
        assert stack.shape == (5, 1, 1, 32, 32)
        assert stack.dtype == np.float32
        assert stack.min() >= 0.0 and stack.max() <= 1.0

    def test_deterministic_and_seed_sensitive(self):
        a = generate_phantoms(3, 16, seed=7)
        b = generate_phantoms(3, 16, seed=7)
        c = generate_phantoms(3, 16, seed=8)
        for pa, pb in zip(a, b):
            np.testing.assert_array_equal(pa.pixels, pb.pixels)
        assert not np.array_equal(a[0].pixels, c[0].pixels)

    def test_frozen_mean(self):
        stack = np.stack([p.pixels for p in generate_phantoms(5, 32, seed=123)])
        assert abs(float(stack.mean()) - PHANTOM_MEAN_5_32_123) < 1e-12

    def test_images_differ_from_each_other(self):
        phantoms = generate_phantoms(8, 32, seed=0)
        means = [float(p.pixels.mean()) for p in phantoms]
        assert len(set(means)) == len(means)

    def test_argument_validation(self):
        with pytest.raises(ValueError):
            generate_phantoms(0, 32, seed=0)
        with pytest.raises(ValueError):
            generate_phantoms(3, 8, seed=0)


class TestSplit:
    @pytest.mark.parametrize("n,sizes", [
        (100, (68, 12, 20)),
        (10, (7, 1, 2)),
        (13, (8, 2, 3)),   # val: round(1.5) rounds half to even
        (17, (12, 2, 3)),
        (30, (20, 4, 6)),
    ])
    def test_exact_sizes(self, n, sizes):
        split = split_dataset([f"s{i:04d}" for i in range(n)], seed=42)
        assert (len(split.train), len(split.val), len(split.test)) == sizes

    @settings(max_examples=60, deadline=None)
    @given(n=st.integers(10, 300), seed=st.integers(0, 2**31 - 1))
    def test_partition_property(self, n, seed):
        ids = [f"s{i:04d}" for i in range(n)]
        split = split_dataset(ids, seed=seed)
        combined = list(split.train) + list(split.val) + list(split.test)
        assert sorted(combined) == ids
        assert abs(len(split.test) - n / 5) <= 0.5
        remainder = n - len(split.test)
        assert abs(len(split.val) - 0.15 * remainder) <= 0.5
        again = split_dataset(ids, seed=seed)
        assert again == split

    def test_seed_changes_assignment(self):
        ids = [f"s{i}" for i in range(30)]
        partitions = {split_dataset(ids, seed=s).test for s in range(20)}
        assert len(partitions) > 1

    def test_too_few_or_duplicate_ids(self):
        with pytest.raises(ValueError, match="at least 10"):
            split_dataset([f"s{i}" for i in range(9)])
        with pytest.raises(ValueError, match="unique"):
            split_dataset(["a"] * 5 + [f"s{i}" for i in range(5)])


class TestNoise:
    def flat_sample(self, value=0.5, size=64, sid="img"):
        return ImageSample(sid, np.full((1, 1, size, size), value, np.float32))

    def test_reproducible_bitwise(self):
        cfg = NoiseConfig(sigma_raw=15, seed=4)
        a = add_gaussian_noise(self.flat_sample(), cfg)
        b = add_gaussian_noise(self.flat_sample(), cfg)
        np.testing.assert_array_equal(a.noisy, b.noisy)

    def test_independent_of_processing_order(self):
        cfg = NoiseConfig(sigma_raw=10, seed=1)
        alone = add_gaussian_noise(self.flat_sample(sid="c"), cfg)
        for sid in ("a", "b"):
            add_gaussian_noise(self.flat_sample(sid=sid), cfg)
        after = add_gaussian_noise(self.flat_sample(sid="c"), cfg)
        np.testing.assert_array_equal(alone.noisy, after.noisy)

    def test_noise_scale_matches_sigma(self):
        # sigma_raw=10 -> sigma_norm=0.1; a 0.5 background keeps clipping
        # negligible, so the sample std should sit within ~5% of 0.1.
        cfg = NoiseConfig(sigma_raw=10, seed=3)
        pair = add_gaussian_noise(self.flat_sample(), cfg)
        delta = pair.noisy - pair.clean
        assert 0.095 < float(delta.std()) < 0.105
        assert abs(float(delta.mean())) < 0.01

    def test_sigma_norm_is_over_100(self):
        assert NoiseConfig(10).sigma_norm == 0.1
        assert NoiseConfig(15).sigma_norm == 0.15
        assert NoiseConfig(25).sigma_norm == 0.25

    def test_clip_bounds(self):
        cfg = NoiseConfig(sigma_raw=100, seed=0)
        pair = add_gaussian_noise(self.flat_sample(), cfg)
        assert pair.noisy.min() >= 0.0 and pair.noisy.max() <= 1.0
        unclipped = add_gaussian_noise(self.flat_sample(),
                                       NoiseConfig(sigma_raw=100, clip=False, seed=0))
        assert unclipped.noisy.min() < 0.0 or unclipped.noisy.max() > 1.0

    def test_vanishing_sigma_returns_clean_bitwise(self):
        pair = add_gaussian_noise(self.flat_sample(),
                                  NoiseConfig(sigma_raw=1e-12, seed=0))
        np.testing.assert_array_equal(pair.noisy, pair.clean)

    def test_clean_never_modified(self):
        sample = self.flat_sample()
        keep = sample.pixels.copy()
        add_gaussian_noise(sample, NoiseConfig(sigma_raw=25, seed=0))
        np.testing.assert_array_equal(sample.pixels, keep)

    def test_sigma_and_seed_sensitivity(self):
        base = add_gaussian_noise(self.flat_sample(), NoiseConfig(10, seed=0))
        other_sigma = add_gaussian_noise(self.flat_sample(), NoiseConfig(15, seed=0))
        other_seed = add_gaussian_noise(self.flat_sample(), NoiseConfig(10, seed=1))
        assert not np.array_equal(base.noisy, other_sigma.noisy)
        assert not np.array_equal(base.noisy, other_seed.noisy)

    def test_psnr_monotone_in_sigma(self):
        (phantom,) = generate_phantoms(1, 64, seed=5)
        values = []
        for sigma in (10, 15, 25):
            pair = add_gaussian_noise(phantom, NoiseConfig(sigma, seed=2))
            values.append(psnr(pair.clean, pair.noisy))
        assert values[0] > values[1] > values[2]

    def test_positive_sigma_required(self):
        with pytest.raises(ValueError):
            NoiseConfig(0)
        with pytest.raises(ValueError):
            NoiseConfig(-5)

    @settings(max_examples=25, deadline=None)
    @given(sigma=st.integers(1, 99), seed=st.integers(0, 2**31 - 1))
    def test_noise_determinism_property(self, sigma, seed):
        sample = self.flat_sample(size=16)
        cfg = NoiseConfig(sigma_raw=sigma, seed=seed)
        a = add_gaussian_noise(sample, cfg)
        b = add_gaussian_noise(sample, cfg)
        np.testing.assert_array_equal(a.noisy, b.noisy)
        assert a.noisy.dtype == np.float32


class TestPngRoundTrip:
    def test_half_gray_quantizes_to_128(self, tmp_path):
        write_image_png(tmp_path / "g.png", np.full((4, 4), 0.5, np.float32))
        arr = np.asarray(Image.open(tmp_path / "g.png"))
        np.testing.assert_array_equal(arr, 128)  # rint(127.5) rounds half to even

    def test_extremes(self, tmp_path):
        img = np.array([[0.0, 1.0], [2.0, -1.0]], np.float32)  # out-of-range clipped
        write_image_png(tmp_path / "e.png", img)
        arr = np.asarray(Image.open(tmp_path / "e.png"))
        np.testing.assert_array_equal(arr, [[0, 255], [255, 0]])

    def test_round_trip_error_bounded_by_half_step(self, tmp_path, rng):
        img = rng.random((16, 16), dtype=np.float32)
        write_image_png(tmp_path / "r.png", img)
        back = decode_image(tmp_path / "r.png")
        assert np.abs(back - img).max() <= 0.5 / 255 + 1e-7

    def test_accepts_nchw(self, tmp_path):
        write_image_png(tmp_path / "n.png", np.full((1, 1, 4, 4), 1.0, np.float32))
        arr = np.asarray(Image.open(tmp_path / "n.png"))
        np.testing.assert_array_equal(arr, 255)


class TestDatasetCache:
    def entries(self, rng):
        sample = ImageSample("s1", rng.random((1, 1, 8, 8), dtype=np.float32))
        noisy = {10: rng.random((1, 1, 8, 8), dtype=np.float32),
                 25: rng.random((1, 1, 8, 8), dtype=np.float32)}
        return [(sample, noisy)]

    def test_round_trip_bitwise(self, tmp_path, rng):
        entries = self.entries(rng)
        path = tmp_path / "d.dnbd"
        write_dataset_cache(path, entries)
        back = read_dataset_cache(path)
        assert len(back) == 1
        sample, noisy = back[0]
        assert sample.id == "s1"
        np.testing.assert_array_equal(sample.pixels, entries[0][0].pixels)
        assert sorted(noisy) == [10, 25]
        for sigma in (10, 25):
            np.testing.assert_array_equal(noisy[sigma], entries[0][1][sigma])

    def test_empty_cache_round_trip(self, tmp_path):
        path = tmp_path / "empty.dnbd"
        write_dataset_cache(path, [])
        assert read_dataset_cache(path) == []

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.dnbd"
        path.write_bytes(b"JUNKxxxxxxxxxxxx")
        with pytest.raises(DatasetCacheError, match="magic"):
            read_dataset_cache(path)

    def test_unsupported_version(self, tmp_path, rng):
        path = tmp_path / "v9.dnbd"
        write_dataset_cache(path, self.entries(rng))
        raw = bytearray(path.read_bytes())
        raw[4] = 99  # version field starts right after the 4-byte magic
        path.write_bytes(bytes(raw))
        with pytest.raises(DatasetCacheError, match="version"):
            read_dataset_cache(path)

    def test_truncated(self, tmp_path, rng):
        path = tmp_path / "t.dnbd"
        write_dataset_cache(path, self.entries(rng))
        path.write_bytes(path.read_bytes()[:-10])
        with pytest.raises(DatasetCacheError, match="truncated"):
            read_dataset_cache(path)
