"""Image and mask value types, PNG/JPEG codecs and synthetic edit pairs.

Images are held as ``(height, width, channels)`` uint8 arrays, which is the
row-major interleaved layout used on disk. Masks are ``(height, width)``
boolean arrays tagged with the pixel edge length of one cell.
"""

from __future__ import annotations

import os
import tempfile
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np
from PIL import Image, UnidentifiedImageError

PathLike = Union[str, os.PathLike]

SUPPORTED_FORMATS = ("PNG", "JPEG")

# Added (mod 256) to every channel of an edited pixel, so |ref - tgt| == 128.
RECOLOR_SHIFT = 128


class ImageError(Exception):
    """Base class for image I/O failures."""


class DecodeError(ImageError):
    pass


class UnsupportedFormatError(ImageError):
    pass


def _frozen(array: np.ndarray) -> np.ndarray:
    array = np.ascontiguousarray(array)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class ImageBuffer:
    """Decoded 8-bit raster with 1 or 3 channels."""

    data: np.ndarray

    def __post_init__(self) -> None:
        data = np.asarray(self.data)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3 or data.shape[2] not in (1, 3):
            raise ValueError(f"expected (H, W, 1|3) samples, got shape {data.shape}")
        if data.dtype != np.uint8:
            raise ValueError(f"expected uint8 samples, got {data.dtype}")
        if data.shape[0] < 1 or data.shape[1] < 1:
            raise ValueError("image must be at least 1x1")
        object.__setattr__(self, "data", _frozen(data))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ImageBuffer):
            return NotImplemented
        return self.data.shape == other.data.shape and bool(np.array_equal(self.data, other.data))

    def tobytes(self) -> bytes:
        return self.data.tobytes()


@dataclass(frozen=True, eq=False)
class BinaryMask:
    """Per-cell edited flags; ``cell_scale`` is the pixel edge of one cell."""

    values: np.ndarray
    cell_scale: int = 1

    def __post_init__(self) -> None:
        values = np.asarray(self.values)
        if values.ndim != 2:
            raise ValueError(f"mask must be 2-D, got shape {values.shape}")
        if values.shape[0] < 1 or values.shape[1] < 1:
            raise ValueError("mask must be at least 1x1")
        if self.cell_scale < 1:
            raise ValueError(f"cell_scale must be >= 1, got {self.cell_scale}")
        object.__setattr__(self, "values", _frozen(values.astype(bool, copy=False)))

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def count(self) -> int:
        return int(np.count_nonzero(self.values))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, BinaryMask):
            return NotImplemented
        return (
            self.cell_scale == other.cell_scale
            and self.values.shape == other.values.shape
            and bool(np.array_equal(self.values, other.values))
        )


# -- geometry -----------------------------------------------------------------


@dataclass(frozen=True)
class Rect:
    """Half-open pixel rectangle ``[x0, x1) x [y0, y1)``."""

    x0: int
    y0: int
    x1: int
    y1: int

    def within(self, width: int, height: int) -> bool:
        return 0 <= self.x0 < self.x1 <= width and 0 <= self.y0 < self.y1 <= height

    def rasterize(self, width: int, height: int) -> np.ndarray:
        out = np.zeros((height, width), dtype=bool)
        out[self.y0 : self.y1, self.x0 : self.x1] = True
        return out

    @property
    def area(self) -> int:
        return (self.x1 - self.x0) * (self.y1 - self.y0)


@dataclass(frozen=True)
class Ellipse:
    """Axis-aligned ellipse; a pixel is inside when its center is."""

    cx: float
    cy: float
    rx: float
    ry: float

    def within(self, width: int, height: int) -> bool:
        return (
            self.rx > 0
            and self.ry > 0
            and self.cx - self.rx >= 0
            and self.cy - self.ry >= 0
            and self.cx + self.rx <= width
            and self.cy + self.ry <= height
        )

    def rasterize(self, width: int, height: int) -> np.ndarray:
        ys = (np.arange(height) + 0.5 - self.cy) / self.ry
        xs = (np.arange(width) + 0.5 - self.cx) / self.rx
        return ys[:, None] ** 2 + xs[None, :] ** 2 <= 1.0


Region = Union[Rect, Ellipse]


@dataclass(frozen=True)
class SynthSpec:
    """Recipe for one synthetic (reference, target) pair.

    ``edit_region=None`` yields an unedited pair. Each speckle blob is a small
    rectangle recolored like the edit but absent from the ground truth; its
    area must stay below ``speckle_area_bound``.
    """

    width: int
    height: int
    edit_region: Region | None = None
    noise_amplitude: int = 0
    speckle: tuple[Rect, ...] = ()
    speckle_area_bound: int = 64
    channels: int = 3

    def __post_init__(self) -> None:
        if self.width < 1 or self.height < 1:
            raise ValueError("synthetic image must be at least 1x1")
        if self.channels not in (1, 3):
            raise ValueError(f"channels must be 1 or 3, got {self.channels}")
        if self.noise_amplitude < 0:
            raise ValueError(f"noise_amplitude must be >= 0, got {self.noise_amplitude}")
        if self.edit_region is not None and not self.edit_region.within(self.width, self.height):
            raise ValueError(f"edit region {self.edit_region} lies outside {self.width}x{self.height}")
        object.__setattr__(self, "speckle", tuple(self.speckle))
        for blob in self.speckle:
            if not blob.within(self.width, self.height):
                raise ValueError(f"speckle {blob} lies outside {self.width}x{self.height}")
            if blob.area >= self.speckle_area_bound:
                raise ValueError(f"speckle {blob} has area {blob.area} >= bound {self.speckle_area_bound}")


# -- randomness ---------------------------------------------------------------


def counter_rng(seed: int, stream: int = 0) -> np.random.Generator:
    """Philox (counter-based) generator keyed by ``(seed, stream)``.

    Output depends only on the two integers, never on global state, so every
    consumer that asks for the same key replays the same numbers.
    """
    if not 0 <= seed < 2**64 or not 0 <= stream < 2**64:
        raise ValueError("seed and stream must lie in [0, 2**64)")
    return np.random.Generator(np.random.Philox(key=seed | (stream << 64)))


def scatter_speckle(
    width: int,
    height: int,
    count: int,
    rng: np.random.Generator,
    avoid: np.ndarray | None = None,
    spacing: int = 6,
    max_tries: int = 10_000,
) -> tuple[Rect, ...]:
    """Place ``count`` single-pixel speckles at least ``spacing`` apart.

    Spacing is Chebyshev distance, measured against each other and against
    ``avoid`` (typically the edit region). Fewer than ``count`` are returned
    when the image is too crowded.
    """
    blocked = np.zeros((height, width), dtype=bool) if avoid is None else avoid.copy()
    placed: list[Rect] = []
    tries = 0
    while len(placed) < count and tries < max_tries:
        tries += 1
        x = int(rng.integers(0, width))
        y = int(rng.integers(0, height))
        y0, y1 = max(0, y - spacing), min(height, y + spacing + 1)
        x0, x1 = max(0, x - spacing), min(width, x + spacing + 1)
        if blocked[y0:y1, x0:x1].any():
            continue
        blocked[y, x] = True
        placed.append(Rect(x, y, x + 1, y + 1))
    return tuple(placed)


def synth_pair(spec: SynthSpec, seed: int) -> tuple[ImageBuffer, ImageBuffer, BinaryMask]:
    """Deterministic synthetic edit pair and its exact ground-truth mask."""
    rng = counter_rng(seed)
    shape = (spec.height, spec.width, spec.channels)
    reference = rng.integers(0, 256, size=shape, dtype=np.uint8)

    if spec.edit_region is None:
        truth = np.zeros((spec.height, spec.width), dtype=bool)
    else:
        truth = spec.edit_region.rasterize(spec.width, spec.height)
    recolor = truth.copy()
    for blob in spec.speckle:
        recolor[blob.y0 : blob.y1, blob.x0 : blob.x1] = True

    target = reference.copy()
    target[recolor] = target[recolor] + np.uint8(RECOLOR_SHIFT)  # wraps mod 256

    # Noise is drawn even at amplitude 0 so the stream layout is fixed.
    a = spec.noise_amplitude
    noise = rng.integers(-a, a + 1, size=shape, dtype=np.int16)
    target = np.clip(target.astype(np.int16) + noise, 0, 255).astype(np.uint8)

    return ImageBuffer(reference), ImageBuffer(target), BinaryMask(truth, 1)


# -- codecs -------------------------------------------------------------------


def load_image(path: PathLike) -> ImageBuffer:
    """Decode a PNG or JPEG into a 1- or 3-channel buffer (alpha dropped)."""
    path = Path(path)
    try:
        with Image.open(path) as img:
            fmt = img.format
            if fmt not in SUPPORTED_FORMATS:
                raise UnsupportedFormatError(f"unsupported format {fmt!r}: {path}")
            img.load()
            converted = _normalize_mode(img, path)
    except FileNotFoundError:
        raise
    except UnidentifiedImageError as exc:
        raise DecodeError(f"decode failure: {path}") from exc
    except (OSError, SyntaxError, ValueError) as exc:
        raise DecodeError(f"decode failure: {path}: {exc}") from exc

    if converted.width == 0 or converted.height == 0:
        raise DecodeError(f"decode failure: zero-dimension image {path}")
    return ImageBuffer(np.asarray(converted, dtype=np.uint8))


def _normalize_mode(img: Image.Image, path: Path) -> Image.Image:
    mode = img.mode
    if mode in ("L", "RGB"):
        return img
    if mode in ("LA", "RGBA", "PA") or (mode == "P" and "transparency" in img.info):
        warnings.warn(f"dropping alpha channel of {path}", stacklevel=3)
        return img.convert("L" if mode == "LA" else "RGB")
    if mode == "1":
        return img.convert("L")
    if mode in ("P", "CMYK", "YCbCr"):
        return img.convert("RGB")
    raise UnsupportedFormatError(f"unsupported pixel mode {mode!r}: {path}")


def save_image(image: ImageBuffer, path: PathLike) -> None:
    data = image.data[:, :, 0] if image.channels == 1 else image.data
    _atomic_png(Image.fromarray(data, mode="L" if image.channels == 1 else "RGB"), Path(path))


def save_mask(mask: BinaryMask, path: PathLike) -> None:
    """Write the mask as a single-channel PNG (edited 255, unedited 0)."""
    pixels = np.where(mask.values, np.uint8(255), np.uint8(0))
    _atomic_png(Image.fromarray(pixels, mode="L"), Path(path))


def load_mask(path: PathLike, cell_scale: int = 1) -> BinaryMask:
    image = load_image(path)
    return BinaryMask(image.data[:, :, 0] > 127, cell_scale)


def _atomic_png(img: Image.Image, path: Path) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            img.save(fh, format="PNG")
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


__all__ = [
    "BinaryMask",
    "DecodeError",
    "Ellipse",
    "ImageBuffer",
    "ImageError",
    "Rect",
    "SynthSpec",
    "UnsupportedFormatError",
    "counter_rng",
    "load_image",
    "load_mask",
    "save_image",
    "save_mask",
    "scatter_speckle",
    "synth_pair",
]
