"""Image I/O, bicubic degradation, dihedral augmentation and patch sampling.

Images are float64 arrays shaped (H, W, 3) with values in [0, 1].
"""

from __future__ import annotations

import logging
import math
import queue
import threading
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import ContractError, DataError

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".bmp")
BICUBIC_A = -0.5


# ---------------------------------------------------------------- file I/O

def load_image(path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    except (OSError, UnidentifiedImageError) as exc:
        raise DataError(f"cannot read image {path}: {exc}") from None
    return arr / 255.0


def save_image(path, img: np.ndarray) -> None:
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[-1] != 3:
        raise ContractError(f"save_image expects (H, W, 3), got {img.shape}")
    data = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    try:
        Image.fromarray(data, "RGB").save(path)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot write image {path}: {exc}") from None


def list_images(root) -> list[Path]:
    root = Path(root)
    if not root.is_dir():
        raise DataError(f"image directory {root} does not exist")
    return sorted(p for p in root.rglob("*") if p.suffix.lower() in IMAGE_SUFFIXES)


def read_manifest(path) -> list[Path]:
    """Plain-text list of image paths, one per line; relative paths resolve against the manifest."""
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read manifest {path}: {exc}") from None
    out = []
    for line in lines:
        line = line.split("#", 1)[0].strip()
        if line:
            p = Path(line)
            out.append(p if p.is_absolute() else path.parent / p)
    return out


def image_paths(source) -> list[Path]:
    """A directory is scanned; any other path is read as a manifest."""
    return list_images(source) if Path(source).is_dir() else read_manifest(source)


def to_nchw(img: np.ndarray, dtype=np.float32) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(img).transpose(2, 0, 1)[None], dtype=dtype)


def from_nchw(batch: np.ndarray, index: int = 0) -> np.ndarray:
    return np.asarray(batch[index], dtype=np.float64).transpose(1, 2, 0)


# ---------------------------------------------------------------- bicubic

def cubic(x, a: float = BICUBIC_A):
    """Keys cubic convolution kernel."""
    x = np.abs(np.asarray(x, dtype=np.float64))
    x2, x3 = x * x, x * x * x
    near = (a + 2) * x3 - (a + 3) * x2 + 1
    far = a * x3 - 5 * a * x2 + 8 * a * x - 4 * a
    return np.where(x <= 1, near, np.where(x < 2, far, 0.0))


def resize_matrix(n_in: int, n_out: int, factor: float) -> np.ndarray:
    """(n_out, n_in) bicubic weights; the kernel is widened by 1/factor when shrinking."""
    stretch = min(factor, 1.0)
    support = 2.0 / stretch
    centre = (np.arange(n_out) + 0.5) / factor - 0.5
    left = np.floor(centre - support).astype(int) + 1
    taps = left[:, None] + np.arange(int(math.ceil(2 * support)) + 1)[None, :]
    w = stretch * cubic((centre[:, None] - taps) * stretch)
    w /= w.sum(axis=1, keepdims=True)
    # symmetric boundary: -1 -> 0, n -> n-1
    period = 2 * n_in
    idx = np.mod(taps, period)
    idx = np.where(idx >= n_in, period - 1 - idx, idx)
    m = np.zeros((n_out, n_in))
    np.add.at(m, (np.repeat(np.arange(n_out), taps.shape[1]), idx.ravel()), w.ravel())
    return m


def bicubic_resize(img: np.ndarray, factor: float) -> np.ndarray:
    """Resize an (H, W, C) image by ``factor``; output size is ceil(H * factor)."""
    if factor <= 0:
        raise ContractError(f"resize factor must be positive, got {factor}")
    H, W = img.shape[:2]
    ho, wo = int(math.ceil(H * factor - 1e-9)), int(math.ceil(W * factor - 1e-9))
    if ho < 1 or wo < 1:
        raise ContractError(f"resizing {H}x{W} by {factor} leaves an empty image")
    ry, rx = resize_matrix(H, ho, factor), resize_matrix(W, wo, factor)
    return np.einsum("yh,hwc,xw->yxc", ry, np.asarray(img, np.float64), rx, optimize=True)


def degrade(hr: np.ndarray, scale: int) -> tuple[np.ndarray, np.ndarray]:
    """Crop HR to a multiple of ``scale`` and bicubic-downscale it; returns (lr, hr)."""
    H, W = hr.shape[:2]
    hr = hr[: H - H % scale, : W - W % scale]
    if hr.shape[0] < scale or hr.shape[1] < scale:
        raise ContractError(f"image {H}x{W} is smaller than the scale {scale}")
    return np.clip(bicubic_resize(hr, 1.0 / scale), 0.0, 1.0), hr


# ---------------------------------------------------------------- augmentation

def dihedral(img: np.ndarray, k: int) -> np.ndarray:
    """One of the 8 symmetries of the square: k % 4 quarter turns, then a flip if k >= 4."""
    out = np.rot90(img, k % 4, axes=(0, 1))
    return np.ascontiguousarray(out[:, ::-1] if k >= 4 else out)


def dihedral_inverse(k: int) -> int:
    return k if k >= 4 else (4 - k) % 4


# ---------------------------------------------------------------- patches

def patch_sampler(pairs: list[tuple[np.ndarray, np.ndarray]], patch: int, scale: int,
                  augment: bool = True, seed: int = 0) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Endless stream of aligned (LR patch x patch, HR patch*scale square) pairs.

    ``pairs`` holds (lr, hr) images. LR pixel (i, j) covers HR pixels
    [i*s, (i+1)*s), so an LR corner (y, x) maps to HR corner (y*s, x*s).
    """
    usable = []
    for n, (lr, hr) in enumerate(pairs):
        if lr.shape[0] < patch or lr.shape[1] < patch:
            log.warning("skipping image %d: %dx%d is smaller than the %d px patch", n, lr.shape[0], lr.shape[1], patch)
            continue
        if hr.shape[0] < lr.shape[0] * scale or hr.shape[1] < lr.shape[1] * scale:
            raise ContractError(f"image {n}: HR {hr.shape[:2]} does not cover LR {lr.shape[:2]} at x{scale}")
        usable.append((lr, hr))
    if not usable:
        raise DataError("no image is large enough for the requested patch size")
    rng = np.random.default_rng(seed)
    while True:
        lr, hr = usable[rng.integers(len(usable))]
        y = int(rng.integers(lr.shape[0] - patch + 1))
        x = int(rng.integers(lr.shape[1] - patch + 1))
        lp = lr[y:y + patch, x:x + patch]
        hp = hr[y * scale:(y + patch) * scale, x * scale:(x + patch) * scale]
        if augment:
            k = int(rng.integers(8))
            lp, hp = dihedral(lp, k), dihedral(hp, k)
        yield lp, hp


def batches(stream: Iterator, batch: int) -> Iterator[tuple[np.ndarray, np.ndarray]]:
    """Group a patch stream into NCHW float32 batches."""
    while True:
        items = [next(stream) for _ in range(batch)]
        lr = np.stack([to_nchw(a)[0] for a, _ in items])
        hr = np.stack([to_nchw(b)[0] for _, b in items])
        yield lr, hr


class Prefetcher:
    """Runs an iterator on a worker thread behind a bounded queue.

    Exceptions raised by the producer are re-raised in the consumer.
    """

    _END = object()

    def __init__(self, source: Iterable, maxsize: int = 4):
        self._queue: queue.Queue = queue.Queue(maxsize)
        self._stop = threading.Event()
        self._thread = threading.Thread(target=self._run, args=(iter(source),), daemon=True)
        self._thread.start()

    def _run(self, it):
        try:
            for item in it:
                while not self._stop.is_set():
                    try:
                        self._queue.put(item, timeout=0.1)
                        break
                    except queue.Full:
                        continue
                if self._stop.is_set():
                    return
            self._put_final(self._END)
        except BaseException as exc:  # handed to the consumer
            self._put_final(exc)

    def _put_final(self, item):
        while not self._stop.is_set():
            try:
                self._queue.put(item, timeout=0.1)
                return
            except queue.Full:
                continue

    def __iter__(self):
        return self

    def __next__(self):
        item = self._queue.get()
        if item is self._END:
            raise StopIteration
        if isinstance(item, BaseException):
            raise item
        return item

    def close(self):
        self._stop.set()
        self._thread.join(timeout=1.0)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()
