"""Image datasets: loading, normalisation, splitting, augmentation, synthetic data."""

from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image, UnidentifiedImageError
from scipy import ndimage

from .errors import DatasetError, ValidationError

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff", ".gif", ".pgm", ".ppm"}
DATASET_FORMAT = "bcsnn-dataset"
DATASET_VERSION = 1
MAX_ROTATION_DEG = 30.0


@dataclass
class Dataset:
    """Images shaped ``(N, 3, H, W)`` with values in [0, 1] and integer labels."""

    images: np.ndarray
    labels: np.ndarray
    class_names: list[str]
    provenance: str = ""

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4 or self.images.shape[1] != 3:
            raise DatasetError(f"images must be shaped (N, 3, H, W), got {self.images.shape}")
        if len(self.images) != len(self.labels):
            raise DatasetError("images and labels differ in length")
        if self.images.size and (self.images.min() < 0.0 or self.images.max() > 1.0):
            raise DatasetError("pixel values must lie in [0, 1]")
        if self.labels.size and (self.labels.min() < 0 or self.labels.max() >= len(self.class_names)):
            raise DatasetError("labels out of range of class_names")

    def __len__(self):
        return len(self.labels)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def image_shape(self) -> tuple:
        return tuple(self.images.shape[1:])

    def subset(self, indices, provenance: str | None = None) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        return Dataset(self.images[idx], self.labels[idx], list(self.class_names),
                       self.provenance if provenance is None else provenance)


@dataclass
class SplitSpec:
    train: float = 0.8
    test: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.train <= 0 or self.test <= 0 or not math.isclose(self.train + self.test, 1.0, abs_tol=1e-9):
            raise ValidationError("split fractions must be positive and sum to 1")


def normalize_image(img) -> np.ndarray:
    """Linear min-max rescale to [0, 1]; constant images become all zeros."""
    img = np.asarray(img, dtype=np.float64)
    lo, hi = img.min(), img.max()
    if hi <= lo:
        return np.zeros_like(img)
    return np.clip((img - lo) / (hi - lo), 0.0, 1.0)


def _resize(chw, size: int) -> np.ndarray:
    c, h, w = chw.shape
    if (h, w) == (size, size):
        return chw
    return ndimage.zoom(chw, (1, size / h, size / w), order=1, mode="nearest", grid_mode=True)


def read_image(path, input_size: int) -> np.ndarray:
    """Decode one file into a normalised ``(3, size, size)`` array."""
    with Image.open(path) as im:
        if im.mode in ("RGB", "RGBA", "P", "CMYK", "YCbCr"):
            arr = np.asarray(im.convert("RGB"), dtype=np.float64).transpose(2, 0, 1)
            if np.array_equal(arr[0], arr[1]) and np.array_equal(arr[1], arr[2]):
                arr = arr[:1]
        else:
            if im.mode in ("1", "L", "P", "LA"):
                im = im.convert("L")
            arr = np.asarray(im, dtype=np.float64)[None]
    if arr.shape[0] == 1:
        arr = np.repeat(arr, 3, axis=0)
    return normalize_image(_resize(arr, input_size))


def load_image_dataset(root, input_size: int = 128) -> Dataset:
    """Read a class-per-subdirectory image tree.

    Unreadable files are skipped with a warning; an empty class directory is
    an error. Classes are ordered by directory name.
    """
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"dataset root {root} is not a directory")
    class_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not class_dirs:
        raise DatasetError(f"no class directories under {root}")
    images, labels = [], []
    for label, cdir in enumerate(class_dirs):
        files = sorted(p for p in cdir.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)
        count = 0
        for f in files:
            try:
                images.append(read_image(f, input_size))
            except (OSError, UnidentifiedImageError, ValueError) as exc:
                warnings.warn(f"skipping unreadable image {f}: {exc}")
                continue
            labels.append(label)
            count += 1
        if count == 0:
            raise DatasetError(f"class directory {cdir} holds no readable images")
    return Dataset(np.stack(images), np.array(labels), [p.name for p in class_dirs], str(root))


def split(dataset: Dataset, spec: SplitSpec | None = None) -> tuple[Dataset, Dataset]:
    """Seeded shuffle then cut; the train count is rounded down."""
    spec = spec or SplitSpec()
    n = len(dataset)
    if n == 0:
        raise DatasetError("cannot split an empty dataset")
    order = np.random.default_rng(spec.seed).permutation(n)
    n_train = int(math.floor(spec.train * n + 1e-9))
    return dataset.subset(order[:n_train]), dataset.subset(order[n_train:])


def train_validation_split(train: Dataset, val_fraction: float = 0.1, seed: int = 0) -> tuple[Dataset, Dataset | None]:
    """Carve a validation subset out of the training bucket."""
    if val_fraction <= 0:
        return train, None
    return split(train, SplitSpec(1.0 - val_fraction, val_fraction, seed))


def random_transform(image, rng: np.random.Generator) -> np.ndarray:
    """Rotate by U(-30, 30) degrees (bilinear, zero fill), then flip each axis with p=0.5."""
    angle = rng.uniform(-MAX_ROTATION_DEG, MAX_ROTATION_DEG)
    flip_h = rng.random() < 0.5
    flip_v = rng.random() < 0.5
    out = ndimage.rotate(image, angle, axes=(2, 1), reshape=False, order=1, mode="constant", cval=0.0)
    if flip_h:
        out = out[:, :, ::-1]
    if flip_v:
        out = out[:, ::-1, :]
    return np.clip(out, 0.0, 1.0)


def augment(dataset: Dataset, factor: int = 5, seed: int = 0) -> Dataset:
    """Each original followed by ``factor - 1`` randomly transformed copies."""
    if int(factor) != factor or factor < 1:
        raise ValidationError("augmentation factor must be an integer >= 1")
    factor = int(factor)
    if factor == 1:
        return dataset.subset(np.arange(len(dataset)))
    rng = np.random.default_rng(seed)
    n = len(dataset)
    images = np.empty((n * factor,) + dataset.image_shape)
    labels = np.repeat(dataset.labels, factor)
    for i in range(n):
        base = i * factor
        images[base] = dataset.images[i]
        for j in range(1, factor):
            images[base + j] = random_transform(dataset.images[i], rng)
    logger.info("augmented %d images x%d -> %d", n, factor, len(labels))
    return Dataset(images, labels, list(dataset.class_names),
                   f"{dataset.provenance}|augment(x{factor}, seed={seed})")


SHAPES = ("disc", "ring", "bar")


def _draw_shape(kind: str, size: int, rng: np.random.Generator) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64)
    cy, cx = size / 2 + rng.uniform(-0.12, 0.12, 2) * size
    radius = size * rng.uniform(0.22, 0.32)
    r = np.hypot(yy - cy, xx - cx)
    if kind == "disc":
        img = (r <= radius).astype(np.float64)
    elif kind == "ring":
        width = max(1.5, radius * 0.3)
        img = (np.abs(r - radius) <= width / 2).astype(np.float64)
    else:
        angle = rng.uniform(0, np.pi)
        along = (xx - cx) * np.cos(angle) + (yy - cy) * np.sin(angle)
        across = -(xx - cx) * np.sin(angle) + (yy - cy) * np.cos(angle)
        img = ((np.abs(along) <= radius * 1.2) & (np.abs(across) <= max(1.5, radius * 0.25))).astype(np.float64)
    return img * rng.uniform(0.7, 1.0)


def synthetic_dataset(num_classes: int = 2, per_class: int = 100, image_size: int = 32,
                      seed: int = 0, noise: float = 0.1) -> Dataset:
    """Filled discs vs. rings (vs. bars) with position/size jitter and pixel noise.

    Samples are interleaved by class and normalised like loaded images.
    """
    if num_classes not in (2, 3):
        raise ValidationError("synthetic data supports 2 or 3 classes")
    rng = np.random.default_rng(seed)
    images = np.empty((num_classes * per_class, 3, image_size, image_size))
    labels = np.empty(num_classes * per_class, dtype=np.int64)
    k = 0
    for _ in range(per_class):
        for c in range(num_classes):
            gray = _draw_shape(SHAPES[c], image_size, rng)
            gray = gray + noise * rng.standard_normal(gray.shape)
            images[k] = normalize_image(np.broadcast_to(gray, (3,) + gray.shape))
            labels[k] = c
            k += 1
    return Dataset(images, labels, list(SHAPES[:num_classes]),
                   f"synthetic(classes={num_classes}, per_class={per_class}, size={image_size}, seed={seed})")


def save_dataset(path, dataset: Dataset) -> Path:
    path = Path(path)
    meta = {"format": DATASET_FORMAT, "version": DATASET_VERSION,
            "class_names": dataset.class_names, "provenance": dataset.provenance}
    with open(path, "wb") as fh:
        np.savez_compressed(fh, images=dataset.images, labels=dataset.labels,
                            meta=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8))
    return path


def load_dataset(path) -> Dataset:
    try:
        with np.load(path, allow_pickle=False) as data:
            meta = json.loads(bytes(data["meta"]).decode())
            images, labels = data["images"], data["labels"]
    except (OSError, KeyError, ValueError) as exc:
        raise DatasetError(f"cannot read dataset file {path}: {exc}") from exc
    if meta.get("format") != DATASET_FORMAT or meta.get("version") != DATASET_VERSION:
        raise DatasetError(f"{path} is not a version-{DATASET_VERSION} dataset file")
    return Dataset(images, labels, meta["class_names"], meta["provenance"])
