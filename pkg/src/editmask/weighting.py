"""Area-ratio loss weights for edited regions.

Every weight function satisfies w(1) = 1, so a pair whose edit covers the
whole image gets uniform weighting. Unedited cells always weigh 1.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .imagecore import BinaryMask
from .maskgen import EditStats

DEFAULT_X_CAP = 4096.0


class WeightFunctionKind(str, enum.Enum):
    LINEAR = "linear"
    EXPONENTIAL_ROOT = "exp-root"
    LOGARITHMIC = "log"
    QUADRATIC_ROOT = "quad-root"

    @classmethod
    def parse(cls, value: "str | WeightFunctionKind") -> "WeightFunctionKind":
        if isinstance(value, cls):
            return value
        try:
            return cls(value)
        except ValueError:
            names = ", ".join(k.value for k in cls)
            raise ValueError(f"unknown weight function {value!r} (expected one of {names})") from None


DEFAULT_KIND = WeightFunctionKind.LOGARITHMIC


def evaluate(kind: WeightFunctionKind | str, x: float) -> float:
    """Weight for area ratio ``x = A_total / A_edit`` (x >= 1)."""
    kind = WeightFunctionKind.parse(kind)
    if not x >= 1.0:  # also rejects NaN
        raise ValueError(f"area ratio must be >= 1, got {x}")
    if kind is WeightFunctionKind.LINEAR:
        return float(x)
    if kind is WeightFunctionKind.EXPONENTIAL_ROOT:
        return 2.0 ** (math.sqrt(x) - 1.0)
    if kind is WeightFunctionKind.LOGARITHMIC:
        return math.log2(x) + 1.0
    return (math.sqrt(x) - 1.0) ** 2 + 1.0


@dataclass(frozen=True)
class WeightSpec:
    kind: WeightFunctionKind
    x: float | None
    w: float
    x_cap: float | None = DEFAULT_X_CAP
    degenerate_no_edit: bool = False

    @classmethod
    def for_ratio(
        cls, kind: WeightFunctionKind | str, x: float | None, x_cap: float | None = DEFAULT_X_CAP
    ) -> "WeightSpec":
        kind = WeightFunctionKind.parse(kind)
        if x is None:
            return cls(kind, None, 1.0, x_cap, degenerate_no_edit=True)
        effective = x if x_cap is None else min(x, x_cap)
        return cls(kind, x, evaluate(kind, effective), x_cap)


@dataclass(frozen=True, eq=False)
class WeightMap:
    """Per-cell weights on the pooled grid plus the mask they came from."""

    values: np.ndarray
    edited: np.ndarray

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


class StatsMismatchError(ValueError):
    pass


def build_weight_map(
    mask: BinaryMask,
    stats: EditStats,
    kind: WeightFunctionKind | str = DEFAULT_KIND,
    x_cap: float | None = DEFAULT_X_CAP,
) -> tuple[WeightMap, WeightSpec]:
    """Edited cells get w(min(x, x_cap)); everything else gets 1."""
    expected = min(mask.count() * mask.cell_scale**2, stats.a_total)
    if expected != stats.a_edit:
        raise StatsMismatchError(
            f"stats report a_edit={stats.a_edit} but mask implies {expected}"
        )
    spec = WeightSpec.for_ratio(kind, stats.x, x_cap)
    values = np.where(mask.values, np.float32(spec.w), np.float32(1.0))
    return WeightMap(values, mask.values.copy()), spec


def reconstruct_weight_map(mask: BinaryMask, w: float) -> np.ndarray:
    """Rebuild a stored weight map as ``1 + (w - 1) * mask``."""
    return (1.0 + (np.float32(w) - 1.0) * mask.values).astype(np.float32)


def weight_summary(weights: WeightMap) -> dict[str, float]:
    values = weights.values.astype(np.float64)
    return {
        "mean": float(values.mean()),
        "max": float(values.max()),
        "edited_fraction": float(np.count_nonzero(weights.edited)) / weights.edited.size,
    }


__all__ = [
    "DEFAULT_KIND",
    "DEFAULT_X_CAP",
    "StatsMismatchError",
    "WeightFunctionKind",
    "WeightMap",
    "WeightSpec",
    "build_weight_map",
    "evaluate",
    "reconstruct_weight_map",
    "weight_summary",
]
