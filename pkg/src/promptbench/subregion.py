"""Boundary / margin / center decomposition of binary masks.

A foreground mask splits into three disjoint sub-regions using average
pooling: a voxel whose 3-kernel window average differs from its own value is
boundary; a voxel whose 7-kernel window average differs (and is not already
boundary) is margin; everything else is center. Pooling uses zero padding
outside the volume, so every nonempty mask has a nonempty boundary.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, Iterable

import numpy as np

from .volume import Mask, Volume3, like, mask_array

__all__ = [
    "SubRegions",
    "avg_pool",
    "decompose",
    "union_region",
    "region_tag",
    "BOUNDARY_KERNEL",
    "MARGIN_KERNEL",
]

BOUNDARY_KERNEL = 3
MARGIN_KERNEL = 7

# |value - window average| of a fully-surrounded voxel is exactly 0, but a
# threshold slightly above 0 absorbs any float dust from separable summation.
_THRESHOLD_EPS = 1e-12

_REGION_ORDER = ("B", "M", "C")


@dataclass(frozen=True)
class SubRegions:
    """Disjoint boundary/margin/center partition of a foreground mask."""

    boundary: Mask
    margin: Mask
    center: Mask
    source: Mask

    def counts(self) -> Dict[str, int]:
        return {
            "B": int(self.boundary.data.sum()),
            "M": int(self.margin.data.sum()),
            "C": int(self.center.data.sum()),
        }

    def by_tag(self, tag: str) -> Mask:
        try:
            return {"B": self.boundary, "M": self.margin, "C": self.center}[tag]
        except KeyError:
            raise ValueError(f"unknown sub-region tag {tag!r}") from None


def _window_sum_1d(arr: np.ndarray, k: int, axis: int) -> np.ndarray:
    # zero-padded sliding sum of odd width k along one axis, via prefix sums
    n = arr.shape[axis]
    h = k // 2
    pad = [(0, 0)] * arr.ndim
    pad[axis] = (1, 0)
    csum = np.pad(np.cumsum(arr, axis=axis), pad)
    hi = np.minimum(np.arange(n) + h + 1, n)
    lo = np.clip(np.arange(n) - h, 0, None)
    return np.take(csum, hi, axis=axis) - np.take(csum, lo, axis=axis)


def window_counts(mask: Mask, k: int) -> np.ndarray:
    """Integer k^3 window sums of a binary mask, zero padded, as int64."""
    if k < 1 or k % 2 == 0:
        raise ValueError(f"kernel size must be odd and positive, got {k}")
    counts = mask_array(mask).astype(np.int64)
    for axis in range(3):
        counts = _window_sum_1d(counts, k, axis)
    return counts


def avg_pool(mask: Mask, k: int) -> Volume3:
    """Average of the mask over the k^3 window centered at each voxel.

    Positions outside the volume count as 0 (zero padding); the window may
    exceed the volume. Computed with separable integer sums, so results are
    exact multiples of 1/k^3.
    """
    return like(mask, window_counts(mask, k) / float(k**3))


def decompose(mask: Mask) -> SubRegions:
    """Split a binary mask into boundary, margin, and center sub-regions.

    The three outputs partition the input: they are pairwise disjoint and
    their union equals the source. An empty mask yields three empty regions.
    """
    fg = mask_array(mask)
    s = fg.astype(np.float64)
    near3 = s * np.abs(s - avg_pool(mask, BOUNDARY_KERNEL).data) > _THRESHOLD_EPS
    near7 = s * np.abs(s - avg_pool(mask, MARGIN_KERNEL).data) > _THRESHOLD_EPS
    boundary = near3
    margin = near7 & ~boundary
    center = fg & ~margin & ~boundary
    return SubRegions(
        boundary=like(mask, boundary.astype(np.uint8)),
        margin=like(mask, margin.astype(np.uint8)),
        center=like(mask, center.astype(np.uint8)),
        source=like(mask, fg.astype(np.uint8)),
    )


def region_tag(selector: Iterable[str]) -> str:
    """Canonical tag for a sub-region selection, e.g. ("M", "B") -> "B+M"."""
    sel = tuple(selector)
    if sel == ("whole",):
        return "whole"
    bad = [t for t in sel if t not in _REGION_ORDER]
    if bad:
        raise ValueError(f"unknown sub-region selector(s) {bad}")
    if not sel:
        raise ValueError("empty sub-region selector")
    return "+".join(t for t in _REGION_ORDER if t in sel)


def union_region(subregions: SubRegions, selector: Iterable[str]) -> Mask:
    """Voxel-wise union of the selected sub-regions (subset of {B, M, C})."""
    sel = tuple(selector)
    tag = region_tag(sel)
    if tag == "whole":
        return subregions.source
    acc = np.zeros(subregions.source.dims, dtype=bool)
    for t in _REGION_ORDER:
        if t in sel:
            acc |= subregions.by_tag(t).data != 0
    return like(subregions.source, acc.astype(np.uint8))
