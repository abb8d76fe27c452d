"""Procedural corpus: structured grayscale "faces" and forgery operators.

Real samples are 1x32x32 images built from a smooth gradient background,
layered axis-aligned ellipses, two eye blobs and a mouth bar, all jittered
per seed. Fake samples apply one of five deterministic artifact operators to
a fresh real image. Operator intensities live in one versioned table so
regenerated corpora stay stable across releases.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .seeding import derive_rng, derive_seed

IMAGE_HW = 32
NUM_ARTIFACT_TYPES = 5
TRAIN_FRACTION = 0.7

# Versioned artifact-intensity table (v1). Changing any value changes every
# regenerated corpus, so treat edits as a format bump.
ARTIFACT_PARAMS = {
    0: {},                                    # quadrant transplant
    1: {"sigma": 1.4, "patch": 12},           # local blur patch
    2: {"amplitude": 0.04},                   # additive checkerboard
    3: {"max_shift": 2.5, "band": (19, 28)},  # mouth-region elastic warp
    4: {"keep": 4},                           # 8x8 DCT coefficient truncation
}


@dataclass
class Sample:
    """One labelled image. ``artifact_type`` is None exactly for reals."""

    image: np.ndarray
    label: int
    artifact_type: int | None
    seed: int

    def __post_init__(self):
        if (self.label == 0) != (self.artifact_type is None):
            raise ValueError("label 0 must pair with artifact_type None and vice versa")


@dataclass
class ProtocolSplit:
    train: list[Sample]
    test: list[Sample]
    protocol: str
    holdout_type: int | None


def gen_real(seed: int) -> Sample:
    """Deterministic structured image with label 0."""
    rng = derive_rng(seed, "real")
    yy, xx = np.mgrid[0:IMAGE_HW, 0:IMAGE_HW].astype(np.float64)
    img = (rng.uniform(0.20, 0.50)
           + rng.uniform(-0.25, 0.25) * xx / (IMAGE_HW - 1)
           + rng.uniform(-0.25, 0.25) * yy / (IMAGE_HW - 1))

    cy = 15.5 + rng.uniform(-1.5, 1.5)
    cx = 15.5 + rng.uniform(-1.5, 1.5)
    ry = rng.uniform(10.0, 13.0)
    rx = rng.uniform(8.0, 11.0)
    face = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
    img[face] += rng.uniform(0.15, 0.40)

    ry2 = ry * rng.uniform(0.45, 0.65)
    rx2 = rx * rng.uniform(0.45, 0.65)
    cy2 = cy + rng.uniform(-2.0, 2.0)
    inner = ((yy - cy2) / ry2) ** 2 + ((xx - cx) / rx2) ** 2 <= 1.0
    img[inner] += rng.uniform(-0.15, 0.15)

    for side in (-4.5, 4.5):
        ey = cy - 4.0 + rng.uniform(-1.0, 1.0)
        ex = cx + side + rng.uniform(-1.0, 1.0)
        sig = rng.uniform(1.0, 1.6)
        img -= rng.uniform(0.20, 0.45) * np.exp(
            -((yy - ey) ** 2 + (xx - ex) ** 2) / (2.0 * sig * sig))

    my = int(round(cy + 6.0 + rng.uniform(-1.0, 1.0)))
    mh = int(rng.integers(2, 4))
    mw = int(rng.integers(8, 13))
    mx0 = max(0, int(round(cx - mw / 2)))
    img[my:my + mh, mx0:mx0 + mw] -= rng.uniform(0.15, 0.35)

    img = np.clip(img, 0.0, 1.0).astype(np.float32)[None, :, :]
    return Sample(image=img, label=0, artifact_type=None, seed=seed)


# ---------------------------------------------------------------------------
# artifact operators (image -> image, deterministic given seed)


def _op_quadrant_swap(img: np.ndarray, seed: int) -> np.ndarray:
    """Transplant two quadrants; applying twice with the same seed restores."""
    rng = derive_rng(seed, "artifact0")
    a, b = rng.permutation(4)[:2]
    half = IMAGE_HW // 2
    boxes = [(0, 0), (0, half), (half, 0), (half, half)]
    (ay, ax), (by, bx) = boxes[a], boxes[b]
    out = img.copy()
    tmp = out[ay:ay + half, ax:ax + half].copy()
    out[ay:ay + half, ax:ax + half] = out[by:by + half, bx:bx + half]
    out[by:by + half, bx:bx + half] = tmp
    return out


def _gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    radius = 2
    taps = np.exp(-0.5 * (np.arange(-radius, radius + 1) / sigma) ** 2)
    taps /= taps.sum()
    padded = np.pad(img, radius, mode="reflect")
    tmp = np.zeros_like(img)
    for k in range(2 * radius + 1):
        tmp += taps[k] * padded[k:k + IMAGE_HW, radius:radius + IMAGE_HW]
    padded = np.pad(tmp, radius, mode="reflect")
    out = np.zeros_like(img)
    for k in range(2 * radius + 1):
        out += taps[k] * padded[radius:radius + IMAGE_HW, k:k + IMAGE_HW]
    return out


def _op_blur_patch(img: np.ndarray, seed: int, sigma: float, patch: int) -> np.ndarray:
    rng = derive_rng(seed, "artifact1")
    cy = int(rng.integers(8, IMAGE_HW - 8))
    cx = int(rng.integers(8, IMAGE_HW - 8))
    half = patch // 2
    y0, y1 = max(0, cy - half), min(IMAGE_HW, cy + half)
    x0, x1 = max(0, cx - half), min(IMAGE_HW, cx + half)
    blurred = _gaussian_blur(img, sigma)
    out = img.copy()
    out[y0:y1, x0:x1] = blurred[y0:y1, x0:x1]
    return out


def _op_checkerboard(img: np.ndarray, seed: int, amplitude: float) -> np.ndarray:
    yy, xx = np.mgrid[0:IMAGE_HW, 0:IMAGE_HW]
    pattern = np.where((yy + xx) % 2 == 0, 1.0, -1.0)
    return np.clip(img + amplitude * pattern, 0.0, 1.0)


def _op_mouth_warp(img: np.ndarray, seed: int, max_shift: float,
                   band: tuple[int, int]) -> np.ndarray:
    rng = derive_rng(seed, "artifact3")
    phase = rng.uniform(0.0, 2.0 * np.pi)
    gain = rng.uniform(0.6, 1.0)
    y0, y1 = band
    xs = np.arange(IMAGE_HW, dtype=np.float64)
    out = img.copy()
    for r in range(y0, y1):
        shift = gain * max_shift * np.sin(2.0 * np.pi * (r - y0) / (y1 - y0) + phase)
        out[r] = np.interp(xs + shift, xs, img[r])
    return out


def _dct_matrix(n: int = 8) -> np.ndarray:
    k = np.arange(n)[:, None]
    m = np.arange(n)[None, :]
    d = np.cos(np.pi * (2 * m + 1) * k / (2 * n)) * np.sqrt(2.0 / n)
    d[0] /= np.sqrt(2.0)
    return d


_DCT8 = _dct_matrix(8)


def _op_dct_truncate(img: np.ndarray, seed: int, keep: int) -> np.ndarray:
    """Zero all 8x8 DCT coefficients with u+v >= keep (seed unused)."""
    u, v = np.mgrid[0:8, 0:8]
    mask = (u + v < keep).astype(np.float64)
    blocks = img.reshape(4, 8, 4, 8).transpose(0, 2, 1, 3)
    coeffs = np.einsum("ij,abjk,lk->abil", _DCT8, blocks, _DCT8)
    coeffs *= mask
    rec = np.einsum("ji,abjk,kl->abil", _DCT8, coeffs, _DCT8)
    out = rec.transpose(0, 2, 1, 3).reshape(IMAGE_HW, IMAGE_HW)
    return np.clip(out, 0.0, 1.0)


_OPERATORS = {
    0: _op_quadrant_swap,
    1: _op_blur_patch,
    2: _op_checkerboard,
    3: _op_mouth_warp,
    4: _op_dct_truncate,
}


def artifact_image(image: np.ndarray, artifact_type: int, seed: int,
                   **overrides) -> np.ndarray:
    """Apply one artifact operator to a (1, 32, 32) image, returning a new image."""
    if artifact_type not in _OPERATORS:
        raise ValueError(f"unknown artifact type {artifact_type}, expected 0..{NUM_ARTIFACT_TYPES - 1}")
    params = dict(ARTIFACT_PARAMS[artifact_type])
    params.update(overrides)
    flat = image[0].astype(np.float64)
    out = _OPERATORS[artifact_type](flat, seed, **params)
    return np.clip(out, 0.0, 1.0).astype(np.float32)[None, :, :]


def apply_artifact(sample: Sample, artifact_type: int, seed: int) -> Sample:
    """Turn a real sample into a fake one via the given operator."""
    if sample.label != 0:
        raise ValueError("apply_artifact expects a real (label 0) sample")
    img = artifact_image(sample.image, artifact_type, seed)
    return Sample(image=img, label=1, artifact_type=artifact_type, seed=seed)


# ---------------------------------------------------------------------------
# protocol construction


def _make_fake(sample_seed: int, artifact_type: int) -> Sample:
    base = gen_real(derive_seed(sample_seed, "fake-base"))
    return apply_artifact(base, artifact_type, sample_seed)


def build_protocol(protocol: str, n_train: int | None = None, n_test: int | None = None,
                   holdout_type: int | None = None, seed: int = 0,
                   total: int | None = None) -> ProtocolSplit:
    """Generate a balanced train/test split for one evaluation protocol.

    ``hybrid`` mixes all artifact types into both splits; ``generalized``
    withholds ``holdout_type`` from training and makes it the only fake type
    in the test set. Passing ``total`` instead of explicit sizes applies the
    7:3 train:test ratio.
    """
    if protocol not in ("hybrid", "generalized"):
        raise ValueError(f"unknown protocol '{protocol}'")
    if total is not None:
        if n_train is not None or n_test is not None:
            raise ValueError("pass either total or explicit n_train/n_test, not both")
        n_train = int(round(total * TRAIN_FRACTION))
        n_test = total - n_train
    if n_train is None or n_test is None:
        raise ValueError("n_train and n_test (or total) are required")
    if n_train < 2 or n_test < 2 or n_train % 2 or n_test % 2:
        raise ValueError(
            f"train/test sizes must be even and >= 2 for balanced classes, "
            f"got {n_train}/{n_test}")
    if protocol == "generalized":
        if holdout_type is None:
            raise ValueError("generalized protocol requires holdout_type")
        if holdout_type not in range(NUM_ARTIFACT_TYPES):
            raise ValueError(f"holdout_type must be in [0, {NUM_ARTIFACT_TYPES})")
        train_types = [t for t in range(NUM_ARTIFACT_TYPES) if t != holdout_type]
        test_types = [holdout_type]
    else:
        if holdout_type is not None:
            raise ValueError("holdout_type is only valid with the generalized protocol")
        train_types = list(range(NUM_ARTIFACT_TYPES))
        test_types = list(range(NUM_ARTIFACT_TYPES))

    def build(split: str, n: int, fake_types: list[int]) -> list[Sample]:
        samples: list[Sample] = []
        half = n // 2
        for i in range(half):
            samples.append(gen_real(derive_seed(seed, split, "real", i)))
        for i in range(half):
            s = derive_seed(seed, split, "fake", i)
            samples.append(_make_fake(s, fake_types[i % len(fake_types)]))
        return samples

    return ProtocolSplit(train=build("train", n_train, train_types),
                         test=build("test", n_test, test_types),
                         protocol=protocol, holdout_type=holdout_type)


def samples_to_arrays(samples: list[Sample]) -> tuple[np.ndarray, np.ndarray]:
    images = np.stack([s.image for s in samples])
    labels = np.array([s.label for s in samples], dtype=np.int64)
    return images, labels


def artifact_types_present(samples: list[Sample]) -> set[int]:
    return {s.artifact_type for s in samples if s.artifact_type is not None}


# ---------------------------------------------------------------------------
# export


def to_pgm(image: np.ndarray) -> bytes:
    """Encode a (1, 32, 32) [0,1] image as binary PGM (P5, maxval 255)."""
    pixels = np.clip(np.rint(image[0] * 255.0), 0, 255).astype(np.uint8)
    header = f"P5\n{IMAGE_HW} {IMAGE_HW}\n255\n".encode("ascii")
    return header + pixels.tobytes()


def export_corpus(samples: list[Sample], out_dir: str | Path) -> Path:
    """Write every sample as a PGM file plus a manifest.csv alongside."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["filename", "label", "artifact_type", "seed"])
    for i, s in enumerate(samples):
        name = f"sample_{i:05d}.pgm"
        (out / name).write_bytes(to_pgm(s.image))
        art = "" if s.artifact_type is None else s.artifact_type
        writer.writerow([name, s.label, art, s.seed])
    manifest = out / "manifest.csv"
    manifest.write_text(buf.getvalue())
    return manifest
