"""Image ingestion, phantom synthesis, splitting, and Gaussian corruption.

All stages are deterministic given their seeds. Noise is derived per
(seed, sample id), so a sample's corruption does not depend on load order,
split membership, or how many other samples exist.
"""

from __future__ import annotations

import hashlib
import logging
import struct
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError

from .tensor import Tensor

__all__ = [
    "ImageSample",
    "NoiseConfig",
    "NoisyPair",
    "DatasetSplit",
    "load_images",
    "decode_image",
    "resize_bilinear",
    "generate_phantoms",
    "split_dataset",
    "add_gaussian_noise",
    "write_image_png",
    "write_dataset_cache",
    "read_dataset_cache",
    "DatasetCacheError",
]

log = logging.getLogger(__name__)

_IMAGE_SUFFIXES = (".png", ".pgm")


@dataclass
class ImageSample:
    """One clean image: id (filename stem or synthetic index) and (1,1,H,W) pixels in [0,1]."""

    id: str
    pixels: np.ndarray

    def as_tensor(self) -> Tensor:
        return Tensor(self.pixels)


@dataclass(frozen=True)
class NoiseConfig:
    """Gaussian corruption level. sigma_norm is sigma_raw/100 exactly.

    The benchmark grid uses sigma_raw in {10, 15, 25}; any positive level is
    accepted so custom sigma lists keep working.
    """

    sigma_raw: float
    clip: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.sigma_raw <= 0:
            raise ValueError(f"sigma_raw must be positive, got {self.sigma_raw}")

    @property
    def sigma_norm(self) -> float:
        return self.sigma_raw / 100.0


@dataclass
class NoisyPair:
    """A frozen corruption of one sample; the clean target is never modified."""

    id: str
    sigma_raw: float
    noisy: np.ndarray
    clean: np.ndarray


@dataclass(frozen=True)
class DatasetSplit:
    """Disjoint train/val/test id lists; regeneration with the seed is identical."""

    train: tuple[str, ...]
    val: tuple[str, ...]
    test: tuple[str, ...]
    seed: int


def resize_bilinear(image: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resample with half-pixel center alignment, edges clamped.

    Source coordinate of output pixel i is (i + 0.5) * in/out - 0.5, so an
    identity-size resize reproduces the input exactly.
    """
    if image.ndim != 2:
        raise ValueError(f"resize_bilinear expects a 2D image, got shape {image.shape}")
    if out_h < 1 or out_w < 1:
        raise ValueError("output size must be positive")
    h, w = image.shape
    src = image.astype(np.float32, copy=False)

    def axis_coords(n_in: int, n_out: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        pos = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
        pos = np.clip(pos, 0.0, n_in - 1.0)
        lo = np.floor(pos).astype(np.int64)
        hi = np.minimum(lo + 1, n_in - 1)
        return lo, hi, (pos - lo).astype(np.float32)

    y0, y1, wy = axis_coords(h, out_h)
    x0, x1, wx = axis_coords(w, out_w)
    top = src[np.ix_(y0, x0)] * (1.0 - wx) + src[np.ix_(y0, x1)] * wx
    bot = src[np.ix_(y1, x0)] * (1.0 - wx) + src[np.ix_(y1, x1)] * wx
    return (top * (1.0 - wy[:, None]) + bot * wy[:, None]).astype(np.float32)


def decode_image(path) -> np.ndarray:
    """Read a PNG/PGM file to a 2D float32 array in [0,1] (color reduced by channel mean)."""
    with Image.open(path) as img:
        if img.mode == "P":
            img = img.convert("RGB")
        arr = np.asarray(img)
    # Pick the scale off the storage dtype before any channel reduction
    # turns the array float.
    if arr.dtype == np.uint8:
        scale = 255.0
    elif arr.dtype == np.uint16:
        scale = 65535.0
    else:  # PGM with maxval > 255 loads as int32
        scale = float(max(arr.max(), 1))
    if arr.ndim == 3:
        arr = arr.mean(axis=2)
    return (arr.astype(np.float32) / np.float32(scale)).clip(0.0, 1.0)


def load_images(directory, target_size: int) -> list[ImageSample]:
    """Load every PNG/PGM under ``directory``, normalized and resized.

    Unreadable files are skipped with a warning; an empty directory (or one
    where nothing loads) is an error. Ordering is lexicographic by id.
    """
    root = Path(directory)
    if not root.is_dir():
        raise FileNotFoundError(f"data directory not found: {root}")
    paths = sorted((p for p in root.iterdir() if p.suffix.lower() in _IMAGE_SUFFIXES),
                   key=lambda p: p.stem)
    samples: list[ImageSample] = []
    skipped = 0
    for path in paths:
        try:
            flat = decode_image(path)
        except (OSError, UnidentifiedImageError, ValueError) as exc:
            skipped += 1
            log.warning("skipping unreadable image %s: %s", path.name, exc)
            continue
        resized = resize_bilinear(flat, target_size, target_size)
        samples.append(ImageSample(path.stem, resized[None, None]))
    if not samples:
        raise ValueError(
            f"no loadable images in {root} ({skipped} unreadable, "
            f"looked for {'/'.join(_IMAGE_SUFFIXES)})"
        )
    if skipped:
        log.warning("skipped %d unreadable file(s) under %s", skipped, root)
    return samples


def generate_phantoms(count: int, size: int, seed: int) -> list[ImageSample]:
    """Synthesize piecewise-smooth test images: 2-6 soft ellipses on a dark field.

    Purely a data substitute for dataset-free runs; deterministic per seed.
    """
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    if size < 16:
        raise ValueError(f"size must be >= 16, got {size}")
    rng = np.random.default_rng(seed)
    axis = np.linspace(-1.0, 1.0, size, dtype=np.float32)
    yy, xx = np.meshgrid(axis, axis, indexing="ij")
    samples = []
    for i in range(count):
        img = np.full((size, size), rng.uniform(0.01, 0.05), dtype=np.float32)
        for _ in range(int(rng.integers(2, 7))):
            cy, cx = rng.uniform(-0.55, 0.55, size=2)
            ax_a, ax_b = rng.uniform(0.15, 0.75, size=2)
            theta = rng.uniform(0.0, np.pi)
            amplitude = rng.uniform(0.15, 0.65)
            edge = rng.uniform(0.04, 0.15)
            cos_t, sin_t = np.cos(theta), np.sin(theta)
            u = (xx - cx) * cos_t + (yy - cy) * sin_t
            v = -(xx - cx) * sin_t + (yy - cy) * cos_t
            r2 = (u / ax_a) ** 2 + (v / ax_b) ** 2
            # Soft edge: logistic falloff around the unit ellipse boundary.
            z = np.clip((r2 - 1.0) / edge, -60.0, 60.0).astype(np.float32)
            img += np.float32(amplitude) / (1.0 + np.exp(z))
        np.clip(img, 0.0, 1.0, out=img)
        samples.append(ImageSample(f"phantom_{i:04d}", img[None, None]))
    return samples


def split_dataset(ids: list[str], seed: int = 42) -> DatasetSplit:
    """Shuffle and carve test (20% of N) then val (15% of the remainder).

    Sizes follow round() on the exact rational fractions, evaluated with
    Fraction so float representation never shifts a boundary.
    """
    n = len(ids)
    if n < 10:
        raise ValueError(f"need at least 10 samples to split, got {n}")
    if len(set(ids)) != n:
        raise ValueError("sample ids must be unique")
    rng = np.random.default_rng(seed)
    order = [ids[int(i)] for i in rng.permutation(n)]
    n_test = round(Fraction(20, 100) * n)
    n_val = round(Fraction(15, 100) * (n - n_test))
    test = tuple(order[:n_test])
    val = tuple(order[n_test:n_test + n_val])
    train = tuple(order[n_test + n_val:])
    return DatasetSplit(train=train, val=val, test=test, seed=seed)


def _sample_rng(seed: int, sample_id: str) -> np.random.Generator:
    # Stable id -> entropy mapping so noise is independent of sample order.
    digest = hashlib.blake2b(sample_id.encode("utf-8"), digest_size=8).digest()
    return np.random.default_rng(
        np.random.SeedSequence([int(seed), int.from_bytes(digest, "little")]))


def add_gaussian_noise(sample: ImageSample, cfg: NoiseConfig) -> NoisyPair:
    """Corrupt one sample with N(0, sigma_norm^2) noise, clipped to [0,1] if configured."""
    rng = _sample_rng(cfg.seed, sample.id)
    field = rng.standard_normal(sample.pixels.shape, dtype=np.float32)
    noisy = sample.pixels + np.float32(cfg.sigma_norm) * field
    if cfg.clip:
        np.clip(noisy, 0.0, 1.0, out=noisy)
    return NoisyPair(id=sample.id, sigma_raw=cfg.sigma_raw, noisy=noisy,
                     clean=sample.pixels)


def write_image_png(path, image: np.ndarray) -> None:
    """Write a 2D [0,1] array as 8-bit grayscale PNG (x255, rounded half-to-even)."""
    if image.ndim == 4:
        image = image[0, 0]
    quantized = np.rint(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(quantized, mode="L").save(Path(path), format="PNG")


# ---------------------------------------------------------------------------
# Dataset cache: magic "DNBD", version, then per sample the clean image and
# one noisy field per sigma. All integers little-endian; pixel data raw f32.

_CACHE_MAGIC = b"DNBD"
_CACHE_VERSION = 1


class DatasetCacheError(ValueError):
    """Malformed dataset cache file."""


def _write_str(fh, text: str) -> None:
    raw = text.encode("utf-8")
    fh.write(struct.pack("<I", len(raw)))
    fh.write(raw)


def _read_exact(fh, n: int) -> bytes:
    raw = fh.read(n)
    if len(raw) != n:
        raise DatasetCacheError(f"truncated dataset cache: wanted {n} bytes, got {len(raw)}")
    return raw


def _read_str(fh) -> str:
    (n,) = struct.unpack("<I", _read_exact(fh, 4))
    return _read_exact(fh, n).decode("utf-8")


def write_dataset_cache(path, entries: list[tuple[ImageSample, dict[int, np.ndarray]]]) -> None:
    """Persist samples plus their per-sigma noisy fields.

    ``entries`` pairs each sample with {sigma_raw: noisy (1,1,H,W)}.
    """
    with open(path, "wb") as fh:
        fh.write(_CACHE_MAGIC)
        fh.write(struct.pack("<I", _CACHE_VERSION))
        fh.write(struct.pack("<Q", len(entries)))
        for sample, noisy_by_sigma in entries:
            h, w = sample.pixels.shape[2], sample.pixels.shape[3]
            _write_str(fh, sample.id)
            fh.write(struct.pack("<II", h, w))
            fh.write(np.ascontiguousarray(sample.pixels, dtype="<f4").tobytes())
            fh.write(struct.pack("<H", len(noisy_by_sigma)))
            for sigma_raw in sorted(noisy_by_sigma):
                fh.write(struct.pack("<H", int(sigma_raw)))
                fh.write(np.ascontiguousarray(noisy_by_sigma[sigma_raw], dtype="<f4").tobytes())


def read_dataset_cache(path) -> list[tuple[ImageSample, dict[int, np.ndarray]]]:
    with open(path, "rb") as fh:
        if _read_exact(fh, 4) != _CACHE_MAGIC:
            raise DatasetCacheError("not a dataset cache (bad magic)")
        (version,) = struct.unpack("<I", _read_exact(fh, 4))
        if version != _CACHE_VERSION:
            raise DatasetCacheError(f"unsupported dataset cache version {version}")
        (count,) = struct.unpack("<Q", _read_exact(fh, 8))
        entries = []
        for _ in range(count):
            sample_id = _read_str(fh)
            h, w = struct.unpack("<II", _read_exact(fh, 8))
            nbytes = h * w * 4
            clean = np.frombuffer(_read_exact(fh, nbytes), dtype="<f4").reshape(1, 1, h, w)
            (n_sigma,) = struct.unpack("<H", _read_exact(fh, 2))
            noisy_by_sigma = {}
            for _ in range(n_sigma):
                (sigma_raw,) = struct.unpack("<H", _read_exact(fh, 2))
                noisy = np.frombuffer(_read_exact(fh, nbytes), dtype="<f4").reshape(1, 1, h, w)
                noisy_by_sigma[sigma_raw] = noisy.copy()
            entries.append((ImageSample(sample_id, clean.copy()), noisy_by_sigma))
    return entries
