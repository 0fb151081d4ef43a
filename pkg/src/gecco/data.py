"""Grayscale dataset loading (IDX files, binary PGM directories), resizing and batching."""
from __future__ import annotations

import gzip
import os
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .model import vectorize

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    images: np.ndarray  # N x H x W float32 in [0, 1]
    labels: np.ndarray  # N int64
    class_names: tuple[str, ...]

    def __post_init__(self):
        if self.images.ndim != 3:
            raise DataError(f"images must be N x H x W, got {self.images.shape}")
        if len(self.images) != len(self.labels):
            raise DataError(f"{len(self.images)} images but {len(self.labels)} labels")
        if len(self.labels) and (self.labels.min() < 0 or self.labels.max() >= len(self.class_names)):
            raise DataError("label outside the class-name table")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    @property
    def image_shape(self) -> tuple[int, int]:
        return self.images.shape[1], self.images.shape[2]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.images[idx], self.labels[idx], self.class_names)

    def resized(self, out_h: int, out_w: int, method: str = "bilinear") -> "Dataset":
        if self.image_shape == (out_h, out_w):
            return self
        fn = resize_bilinear if method == "bilinear" else resize_nearest
        imgs = np.stack([fn(im, out_h, out_w) for im in self.images]) if len(self) else \
            np.zeros((0, out_h, out_w), np.float32)
        return Dataset(imgs.astype(np.float32), self.labels, self.class_names)

    def remap_to(self, class_names) -> "Dataset":
        """Relabel so that label i means ``class_names[i]``."""
        class_names = tuple(class_names)
        if set(class_names) != set(self.class_names):
            raise DataError(f"class names {self.class_names} do not match {class_names}")
        lookup = np.array([class_names.index(n) for n in self.class_names], dtype=np.int64)
        return Dataset(self.images, lookup[self.labels], class_names)


@dataclass(frozen=True)
class Batch:
    x: np.ndarray  # B x (H*W)
    labels: np.ndarray


def _read_bytes(path) -> bytes:
    path = os.fspath(path)
    opener = gzip.open if path.endswith(".gz") else open
    with opener(path, "rb") as f:
        return f.read()


def _parse_idx(raw: bytes, magic: int, ndim: int, path) -> np.ndarray:
    if len(raw) < 4:
        raise DataError(f"{path}: truncated IDX header")
    found = struct.unpack(">I", raw[:4])[0]
    if found != magic:
        raise DataError(f"{path}: bad IDX magic 0x{found:08x}, expected 0x{magic:08x}")
    if len(raw) < 4 + 4 * ndim:
        raise DataError(f"{path}: truncated IDX header")
    dims = struct.unpack(f">{ndim}I", raw[4 : 4 + 4 * ndim])
    if dims[0] == 0:
        raise DataError(f"{path}: IDX file holds no items")
    body = raw[4 + 4 * ndim :]
    need = int(np.prod(dims))
    if len(body) < need:
        raise DataError(f"{path}: truncated IDX body ({len(body)} of {need} bytes)")
    return np.frombuffer(body, dtype=np.uint8, count=need).reshape(dims)


def load_idx(images_path, labels_path, class_names=None) -> Dataset:
    images = _parse_idx(_read_bytes(images_path), IDX_IMAGES_MAGIC, 3, images_path)
    labels = _parse_idx(_read_bytes(labels_path), IDX_LABELS_MAGIC, 1, labels_path)
    if len(images) != len(labels):
        raise DataError(f"{len(images)} images in {images_path} but {len(labels)} labels in {labels_path}")
    labels = labels.astype(np.int64)
    if class_names is None:
        class_names = tuple(str(i) for i in range(int(labels.max()) + 1))
    return Dataset(images.astype(np.float32) / 255.0, labels, tuple(class_names))


def write_idx(images_path, labels_path, images: np.ndarray, labels: np.ndarray) -> None:
    """Write uint8 images (N x H x W) and labels (N) as an IDX pair."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, h, w = images.shape
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGES_MAGIC, n, h, w))
        f.write(images.tobytes())
    with open(labels_path, "wb") as f:
        f.write(struct.pack(">II", IDX_LABELS_MAGIC, len(labels)))
        f.write(labels.tobytes())


def read_pgm(path) -> np.ndarray:
    """Decode a binary (P5) PGM with maxval <= 255 into floats in [0, 1]."""
    raw = _read_bytes(path)
    if raw[:2] != b"P5":
        raise DataError(f"{path}: not a binary PGM (magic {raw[:2]!r})")
    tokens, pos = [], 2
    while len(tokens) < 3:
        while pos < len(raw) and raw[pos : pos + 1].isspace():
            pos += 1
        if pos < len(raw) and raw[pos : pos + 1] == b"#":
            while pos < len(raw) and raw[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise DataError(f"{path}: truncated PGM header")
        tokens.append(raw[start:pos])
    pos += 1  # exactly one whitespace byte before the raster
    try:
        width, height, maxval = (int(t) for t in tokens)
    except ValueError:
        raise DataError(f"{path}: malformed PGM header") from None
    if not 0 < maxval <= 255:
        raise DataError(f"{path}: maxval {maxval} not supported (must be 1..255)")
    if width < 1 or height < 1:
        raise DataError(f"{path}: empty image")
    body = raw[pos : pos + width * height]
    if len(body) < width * height:
        raise DataError(f"{path}: truncated PGM raster")
    pixels = np.frombuffer(body, dtype=np.uint8).reshape(height, width)
    return pixels.astype(np.float32) / maxval


def write_pgm(path, pixels: np.ndarray, maxval: int = 255) -> None:
    pixels = np.asarray(pixels, dtype=np.uint8)
    h, w = pixels.shape
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n%d\n" % (w, h, maxval))
        f.write(pixels.tobytes())


def load_pgm_dir(root, size: tuple[int, int] | None = None, method: str = "bilinear") -> Dataset:
    """One subdirectory per class; label = rank of the directory name.

    With ``size`` unset every image must share the first image's dimensions.
    """
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"{root}: not a directory")
    class_dirs = sorted(p for p in root.iterdir() if p.is_dir())
    if not class_dirs:
        raise DataError(f"{root}: no class subdirectories")
    images, labels = [], []
    resize = resize_bilinear if method == "bilinear" else resize_nearest
    for label, d in enumerate(class_dirs):
        for f in sorted(p for p in d.iterdir() if p.is_file()):
            img = read_pgm(f)
            if size is not None and img.shape != tuple(size):
                img = resize(img, *size)
            elif images and img.shape != images[0].shape:
                raise DataError(f"{f}: size {img.shape} differs from {images[0].shape}; pass a resize target")
            images.append(img)
            labels.append(label)
    if not images:
        raise DataError(f"{root}: no images found")
    return Dataset(np.stack(images).astype(np.float32), np.array(labels, dtype=np.int64),
                   tuple(d.name for d in class_dirs))


def _check_target(out_h: int, out_w: int) -> None:
    if out_h < 1 or out_w < 1:
        raise DataError(f"resize target must be positive, got {out_h}x{out_w}")


def _source_coords(n_out: int, n_in: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # half-pixel centres (align_corners=False), clamped at the border
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0, n_in - 1)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, (src - lo).astype(np.float64)


def resize_bilinear(image, out_h: int, out_w: int) -> np.ndarray:
    _check_target(out_h, out_w)
    img = np.asarray(image, dtype=np.float64)
    y0, y1, fy = _source_coords(out_h, img.shape[0])
    x0, x1, fx = _source_coords(out_w, img.shape[1])
    top = img[y0][:, x0] * (1 - fx) + img[y0][:, x1] * fx
    bottom = img[y1][:, x0] * (1 - fx) + img[y1][:, x1] * fx
    out = top * (1 - fy)[:, None] + bottom * fy[:, None]
    return np.clip(out, img.min(), img.max()).astype(np.float32)


def resize_nearest(image, out_h: int, out_w: int) -> np.ndarray:
    _check_target(out_h, out_w)
    img = np.asarray(image, dtype=np.float32)
    ys = np.minimum((np.arange(out_h) * img.shape[0]) // out_h, img.shape[0] - 1)
    xs = np.minimum((np.arange(out_w) * img.shape[1]) // out_w, img.shape[1] - 1)
    return img[ys][:, xs]


def batches(dataset: Dataset, batch_size: int, shuffle_seed: int | None = None, drop_last: bool = False) -> list[Batch]:
    if batch_size < 1:
        raise DataError(f"batch_size must be >= 1, got {batch_size}")
    n = len(dataset)
    if drop_last and batch_size > n:
        raise DataError(f"batch_size {batch_size} exceeds dataset size {n} with drop_last")
    order = np.arange(n) if shuffle_seed is None else np.random.default_rng(shuffle_seed).permutation(n)
    stop = n - n % batch_size if drop_last else n
    out = []
    for start in range(0, stop, batch_size):
        idx = order[start : start + batch_size]
        out.append(Batch(vectorize(dataset.images[idx]), dataset.labels[idx]))
    return out
