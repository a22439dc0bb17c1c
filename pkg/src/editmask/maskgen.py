"""Edit-mask extraction from a (reference, target) pair.

The pipeline runs four steps in a fixed order:

1. per-pixel differencing against a tolerance,
2. square dilation,
3. removal of small connected components,
4. max-pool downsampling onto a coarse grid.

The pooled mask is the authoritative edit region; the edited area is
measured on it and rescaled to pixel units.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import ndimage

from .imagecore import BinaryMask, ImageBuffer

DEFAULT_TOLERANCE = 12
DEFAULT_DILATION_RADIUS = 2
DEFAULT_MIN_COMPONENT_AREA = 64
DEFAULT_CONNECTIVITY = 8
DEFAULT_POOL_KERNEL = 16

_STRUCTURES = {
    4: ndimage.generate_binary_structure(2, 1),
    8: ndimage.generate_binary_structure(2, 2),
}


class PairMismatchError(ValueError):
    """Reference and target differ in width, height or channel count."""


@dataclass(frozen=True)
class MaskGenConfig:
    tolerance: int = DEFAULT_TOLERANCE
    dilation_radius: int = DEFAULT_DILATION_RADIUS
    min_component_area: int = DEFAULT_MIN_COMPONENT_AREA
    connectivity: int = DEFAULT_CONNECTIVITY
    pool_kernel: int = DEFAULT_POOL_KERNEL

    def __post_init__(self) -> None:
        if not 0 <= self.tolerance <= 255:
            raise ValueError(f"tolerance must be in [0, 255], got {self.tolerance}")
        if self.dilation_radius < 0:
            raise ValueError(f"dilation_radius must be >= 0, got {self.dilation_radius}")
        if self.min_component_area < 0:
            raise ValueError(f"min_component_area must be >= 0, got {self.min_component_area}")
        if self.connectivity not in _STRUCTURES:
            raise ValueError(f"connectivity must be 4 or 8, got {self.connectivity}")
        if self.pool_kernel < 1:
            raise ValueError(f"pool_kernel must be >= 1, got {self.pool_kernel}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class EditStats:
    a_edit: int
    a_total: int
    x: float | None
    degenerate_no_edit: bool
    degenerate_full_edit: bool

    @classmethod
    def from_area(cls, a_edit: int, a_total: int) -> "EditStats":
        if a_total < 1 or not 0 <= a_edit <= a_total:
            raise ValueError(f"need 0 <= a_edit <= a_total, got {a_edit}, {a_total}")
        return cls(
            a_edit=a_edit,
            a_total=a_total,
            x=a_total / a_edit if a_edit > 0 else None,
            degenerate_no_edit=a_edit == 0,
            degenerate_full_edit=a_edit == a_total,
        )


@dataclass(frozen=True)
class MaskSteps:
    """Intermediate masks of one pipeline run, kept for inspection."""

    diff: BinaryMask
    dilated: BinaryMask
    filtered: BinaryMask
    pooled: BinaryMask


def _require_full_resolution(mask: BinaryMask) -> None:
    if mask.cell_scale != 1:
        raise ValueError(f"expected a full-resolution mask, got cell_scale={mask.cell_scale}")


def pixel_diff(reference: ImageBuffer, target: ImageBuffer, tolerance: int) -> BinaryMask:
    """Mark pixels whose largest per-channel |difference| exceeds ``tolerance``."""
    if reference.data.shape != target.data.shape:
        raise PairMismatchError(
            f"pair shape mismatch: reference {reference.data.shape} vs target {target.data.shape}"
        )
    delta = np.abs(reference.data.astype(np.int16) - target.data.astype(np.int16))
    return BinaryMask(delta.max(axis=2) > tolerance, 1)


def _window_any(values: np.ndarray, radius: int, axis: int) -> np.ndarray:
    pad = [(0, 0), (0, 0)]
    pad[axis] = (radius, radius)
    padded = np.pad(values, pad, constant_values=False)
    return sliding_window_view(padded, 2 * radius + 1, axis=axis).any(axis=-1)


def dilate(mask: BinaryMask, radius: int) -> BinaryMask:
    """Dilate with a (2r+1) x (2r+1) square structuring element."""
    _require_full_resolution(mask)
    if radius < 0:
        raise ValueError(f"radius must be >= 0, got {radius}")
    if radius == 0:
        return mask
    # square element is separable: rows then columns
    grown = _window_any(_window_any(mask.values, radius, axis=1), radius, axis=0)
    return BinaryMask(grown, 1)


def filter_components(mask: BinaryMask, min_component_area: int, connectivity: int = 8) -> BinaryMask:
    """Clear every connected component smaller than ``min_component_area``."""
    _require_full_resolution(mask)
    if connectivity not in _STRUCTURES:
        raise ValueError(f"connectivity must be 4 or 8, got {connectivity}")
    if min_component_area <= 1 or not mask.values.any():
        return mask
    labels, _ = ndimage.label(mask.values, structure=_STRUCTURES[connectivity])
    sizes = np.bincount(labels.ravel())
    keep = sizes >= min_component_area
    keep[0] = False
    return BinaryMask(keep[labels], 1)


def maxpool(mask: BinaryMask, pool_kernel: int) -> BinaryMask:
    """Non-overlapping k x k max-pool; edge windows are clipped, not dropped."""
    _require_full_resolution(mask)
    k = pool_kernel
    if k < 1:
        raise ValueError(f"pool_kernel must be >= 1, got {k}")
    if k == 1:
        return mask
    h, w = mask.values.shape
    ph, pw = -(-h // k), -(-w // k)
    padded = np.zeros((ph * k, pw * k), dtype=bool)
    padded[:h, :w] = mask.values
    pooled = padded.reshape(ph, k, pw, k).any(axis=(1, 3))
    return BinaryMask(pooled, k)


def pooled_area(mask: BinaryMask, a_total: int) -> int:
    """Edited area in pixels: true cells times k^2, clamped to the image area."""
    return min(mask.count() * mask.cell_scale**2, a_total)


def run_steps(reference: ImageBuffer, target: ImageBuffer, config: MaskGenConfig) -> MaskSteps:
    diff = pixel_diff(reference, target, config.tolerance)
    dilated = dilate(diff, config.dilation_radius)
    filtered = filter_components(dilated, config.min_component_area, config.connectivity)
    pooled = maxpool(filtered, config.pool_kernel)
    return MaskSteps(diff, dilated, filtered, pooled)


def generate_mask(
    reference: ImageBuffer, target: ImageBuffer, config: MaskGenConfig | None = None
) -> tuple[BinaryMask, EditStats]:
    config = config or MaskGenConfig()
    steps = run_steps(reference, target, config)
    a_total = reference.width * reference.height
    return steps.pooled, EditStats.from_area(pooled_area(steps.pooled, a_total), a_total)


def stats_for(pooled: BinaryMask, width: int, height: int) -> EditStats:
    a_total = width * height
    return EditStats.from_area(pooled_area(pooled, a_total), a_total)


__all__ = [
    "EditStats",
    "MaskGenConfig",
    "MaskSteps",
    "PairMismatchError",
    "dilate",
    "filter_components",
    "generate_mask",
    "maxpool",
    "pixel_diff",
    "pooled_area",
    "run_steps",
    "stats_for",
]
