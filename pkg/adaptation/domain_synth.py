"""Seeded toy image datasets and the blur / affine domain shifts applied to them.

Images are stored one per column (row-major pixels). Convolutions use
half-sample symmetric ("reflect") padding, Gaussian kernels are truncated at
3 sigma, and motion kernels sample the line through the kernel center at the
nearest pixel of each row or column. Gaussian and axis-aligned motion blurs keep
every image mean exactly; an oblique motion kernel moves it slightly, and only
through the four corner blocks that reflect padding folds unevenly.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy import ndimage

from .exceptions import ContractError, ParameterError
from .numerics import as_matrix, read_matrix, write_matrix


logger = logging.getLogger(__name__)

NOISE_SIGMA = 0.05
GAIN_RANGE = (0.7, 1.3)
BUMPS_PER_CLASS = 3
# Bump widths as a fraction of the shorter image side, never below MIN_SPREAD pixels.
SPREAD_RANGE = (0.05, 0.12)
MIN_SPREAD = 0.75


@dataclass(frozen=True, eq=False)
class ToyImageDataset:
    images: np.ndarray
    labels: np.ndarray
    height: int
    width: int
    seed: int | None = None

    def __post_init__(self):
        images = as_matrix(self.images, name='images')
        labels = np.asarray(self.labels, dtype=np.int64).ravel()
        if images.shape[0] != self.height * self.width:
            raise ContractError(f'images have {images.shape[0]} pixels, expected {self.height}x{self.width}')
        if labels.shape[0] != images.shape[1]:
            raise ContractError(f'{labels.shape[0]} labels for {images.shape[1]} images')
        object.__setattr__(self, 'images', images)
        object.__setattr__(self, 'labels', labels)

    @property
    def count(self) -> int:
        return self.images.shape[1]

    def image(self, index: int) -> np.ndarray:
        return self.images[:, index].reshape(self.height, self.width)

    def with_images(self, images) -> ToyImageDataset:
        return replace(self, images=images)


@dataclass(frozen=True, eq=False)
class BlurKernel:
    taps: np.ndarray
    kind: str

    def __post_init__(self):
        taps = np.asarray(self.taps, dtype=np.float64)
        if taps.ndim != 2:
            raise ContractError('kernel taps must be 2-D')
        if np.any(taps < 0) or abs(taps.sum() - 1.0) > 1e-12:
            raise ContractError('kernel taps must be non-negative and sum to 1')
        if self.kind not in ('gaussian', 'motion'):
            raise ParameterError(f'unknown kernel kind {self.kind!r}')
        object.__setattr__(self, 'taps', taps)


# ---------- TOY DATA ----------
def _class_template(rng: np.random.Generator, h: int, w: int) -> np.ndarray:
    rows, cols = np.mgrid[0:h, 0:w]
    template = np.zeros((h, w))
    for _ in range(BUMPS_PER_CLASS):
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        spread = max(rng.uniform(*SPREAD_RANGE) * min(h, w), MIN_SPREAD)
        amplitude = rng.uniform(0.5, 1.0)
        template += amplitude * np.exp(-((rows - cy) ** 2 + (cols - cx) ** 2) / (2.0 * spread ** 2))
    return template / template.max()


def make_toy_dataset(classes: int, per_class: int, h: int, w: int, seed, sample_seed=None) -> ToyImageDataset:
    """Per-class templates of narrow Gaussian bumps plus gain and pixel noise, clipped to [0, 1].

    Templates depend on ``seed`` only; ``sample_seed`` (default ``seed``) draws
    the per-sample gain and noise, so two draws share classes but not samples.
    """
    if classes < 2 or per_class < 2:
        raise ParameterError(f'need at least 2 classes and 2 samples per class, got {classes}/{per_class}')
    if h < 1 or w < 1:
        raise ParameterError(f'image size must be positive, got {h}x{w}')

    template_rng = np.random.default_rng(seed)
    templates = [_class_template(template_rng, h, w) for _ in range(classes)]
    sample_rng = np.random.default_rng(seed if sample_seed is None else [seed, sample_seed])

    images = np.empty((h * w, classes * per_class))
    labels = np.repeat(np.arange(classes), per_class)
    for i, label in enumerate(labels):
        gain = sample_rng.uniform(*GAIN_RANGE)
        noise = sample_rng.normal(0.0, NOISE_SIGMA, size=(h, w))
        images[:, i] = np.clip(gain * templates[label] + noise, 0.0, 1.0).ravel()
    return ToyImageDataset(images=images, labels=labels, height=h, width=w, seed=seed)


# ---------- KERNELS ----------
def gaussian_kernel(sigma: float) -> BlurKernel:
    if sigma < 0:
        raise ParameterError(f'sigma must be non-negative, got {sigma}')
    if sigma == 0:
        return BlurKernel(np.ones((1, 1)), 'gaussian')
    radius = int(math.ceil(3.0 * sigma))
    offsets = np.arange(-radius, radius + 1)
    profile = np.exp(-offsets ** 2 / (2.0 * sigma ** 2))
    taps = np.outer(profile, profile)
    return BlurKernel(taps / taps.sum(), 'gaussian')


def motion_kernel(length: int, theta_deg: float) -> BlurKernel:
    """``length`` taps on the line through the center at ``theta_deg``, one per pixel along its dominant axis."""
    if length < 1 or length % 2 == 0:
        raise ParameterError(f'motion blur length must be a positive odd number, got {length}')
    center = (length - 1) // 2
    taps = np.zeros((length, length))
    theta = math.radians(theta_deg)
    dx, dy = math.cos(theta), math.sin(theta)
    reach = max(abs(dx), abs(dy))
    for step in range(-center, center + 1):
        # Row axis points down, so a positive angle moves up the image.
        row = center + int(np.rint(-step * dy / reach))
        col = center + int(np.rint(step * dx / reach))
        taps[row, col] += 1.0
    return BlurKernel(taps / taps.sum(), 'motion')


def convolve_images(ds: ToyImageDataset, kernel: BlurKernel) -> ToyImageDataset:
    if kernel.taps.shape == (1, 1):
        return ds.with_images(ds.images.copy())
    out = np.empty_like(ds.images)
    for i in range(ds.count):
        out[:, i] = ndimage.convolve(ds.image(i), kernel.taps, mode='reflect').ravel()
    return ds.with_images(out)


# ---------- SHIFTS ----------
def gaussian_blur_shift(ds: ToyImageDataset, sigma: float) -> ToyImageDataset:
    return convolve_images(ds, gaussian_kernel(sigma))


def motion_blur_shift(ds: ToyImageDataset, length: int, theta_deg: float) -> ToyImageDataset:
    return convolve_images(ds, motion_kernel(length, theta_deg))


def linear_shift(x, a, b) -> np.ndarray:
    x = as_matrix(x, name='x')
    a = as_matrix(a, name='a')
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.shape[0] != a.shape[1]:
        raise ContractError(f'a must be square, got {a.shape}')
    if a.shape[1] != x.shape[0] or b.shape[0] != x.shape[0]:
        raise ContractError(f'a is {a.shape}, b has length {b.shape[0]}, x has {x.shape[0]} rows')
    return a @ x + b[:, None]


def random_affine(d: int, mix: float, offset: float, seed) -> tuple[np.ndarray, np.ndarray]:
    """Blend of the identity with a seeded random rotation, plus a Gaussian offset."""
    rng = np.random.default_rng(seed)
    q, r = np.linalg.qr(rng.normal(size=(d, d)))
    q = q * np.sign(np.diag(r))
    a = (1.0 - mix) * np.eye(d) + mix * q
    b = offset * rng.normal(size=d)
    return a, b


# ---------- FILES ----------
def write_dataset(directory, ds: ToyImageDataset, stem: str = 'images') -> tuple[Path, Path]:
    directory = Path(directory)
    matrix_path = write_matrix(directory / f'{stem}.mat', ds.images)
    labels_path = directory / f'{stem}_labels.csv'
    with open(labels_path, 'w', newline='') as f:
        writer = csv.writer(f)
        writer.writerow(['index', 'label'])
        for i, label in enumerate(ds.labels):
            writer.writerow([i, int(label)])
    return matrix_path, labels_path


def read_labels(path) -> np.ndarray:
    path = Path(path)
    if not path.exists():
        raise ContractError(f'labels file not found: {path}')
    with open(path, newline='') as f:
        rows = list(csv.DictReader(f))
    try:
        pairs = sorted((int(r['index']), int(r['label'])) for r in rows)
    except (KeyError, TypeError, ValueError) as exc:
        raise ContractError(f'{path} is not an index,label CSV') from exc
    if [i for i, _ in pairs] != list(range(len(pairs))):
        raise ContractError(f'{path} indices are not 0..{len(pairs) - 1}')
    return np.array([label for _, label in pairs], dtype=np.int64)


def read_dataset(matrix_path, labels_path, height: int | None = None, width: int | None = None) -> ToyImageDataset:
    images = read_matrix(matrix_path)
    labels = read_labels(labels_path)
    if height is None or width is None:
        height, width = images.shape[0], 1
    return ToyImageDataset(images=images, labels=labels, height=height, width=width)
