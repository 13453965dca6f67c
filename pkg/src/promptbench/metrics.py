"""Segmentation quality metrics: Dice, surfaces, distance transforms, NSD.

Surfaces are defined on voxel centers with 6-connectivity: a foreground voxel
is on the surface if any face neighbor is background or outside the volume.
Distances are Euclidean between voxel centers in millimeters, honoring
anisotropic spacing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .volume import Mask, Volume3, like, mask_array

__all__ = ["MetricRecord", "dice", "surface_voxels", "edt", "nsd"]


@dataclass(frozen=True)
class MetricRecord:
    """Dice and normalized surface Dice of one prediction, with the tolerance used."""

    dice: float
    nsd: float
    tau_mm: float

    def __post_init__(self):
        if not (0.0 <= self.dice <= 1.0 and 0.0 <= self.nsd <= 1.0):
            raise ValueError(f"metrics out of [0, 1]: dice={self.dice}, nsd={self.nsd}")


def dice(pred: Mask, gt: Mask) -> float:
    """Volumetric overlap 2|P∩G| / (|P|+|G|); 1.0 when both masks are empty."""
    if pred.dims != gt.dims:
        raise ValueError(f"dim mismatch: {pred.dims} vs {gt.dims}")
    p = mask_array(pred, "pred")
    g = mask_array(gt, "gt")
    total = int(p.sum()) + int(g.sum())
    if total == 0:
        return 1.0
    return 2.0 * int((p & g).sum()) / total


def _surface(fg: np.ndarray) -> np.ndarray:
    # 6-connectivity; volume faces count as background
    interior = np.ones_like(fg)
    interior[1:, :, :] &= fg[:-1, :, :]
    interior[:-1, :, :] &= fg[1:, :, :]
    interior[:, 1:, :] &= fg[:, :-1, :]
    interior[:, :-1, :] &= fg[:, 1:, :]
    interior[:, :, 1:] &= fg[:, :, :-1]
    interior[:, :, :-1] &= fg[:, :, 1:]
    interior[0, :, :] = False
    interior[-1, :, :] = False
    interior[:, 0, :] = False
    interior[:, -1, :] = False
    interior[:, :, 0] = False
    interior[:, :, -1] = False
    return fg & ~interior


def surface_voxels(mask: Mask) -> Mask:
    """Mask of foreground voxels with a background (or out-of-volume) face neighbor."""
    fg = mask_array(mask)
    return like(mask, _surface(fg).astype(np.uint8))


def _distance_to(fg: np.ndarray, spacing) -> np.ndarray:
    # exact euclidean distance in mm from every voxel to the nearest True voxel
    return ndimage.distance_transform_edt(~fg, sampling=spacing)


def edt(mask: Mask) -> Volume3:
    """Exact Euclidean distance (mm) from every voxel to the nearest foreground voxel."""
    fg = mask_array(mask)
    if not fg.any():
        raise ValueError("edt of an empty mask is undefined")
    return like(mask, _distance_to(fg, mask.spacing))


def nsd(pred: Mask, gt: Mask, tau_mm: float) -> float:
    """Normalized surface Dice at tolerance ``tau_mm``.

    Fraction of surface voxels (both directions pooled) lying within
    ``tau_mm`` of the opposite surface. Conventions: 1.0 when both masks are
    empty, 0.0 when exactly one is.
    """
    if pred.dims != gt.dims:
        raise ValueError(f"dim mismatch: {pred.dims} vs {gt.dims}")
    if pred.spacing != gt.spacing:
        raise ValueError(f"spacing mismatch: {pred.spacing} vs {gt.spacing}")
    if tau_mm < 0:
        raise ValueError(f"tolerance must be >= 0, got {tau_mm}")
    p = mask_array(pred, "pred")
    g = mask_array(gt, "gt")
    p_any, g_any = bool(p.any()), bool(g.any())
    if not p_any and not g_any:
        return 1.0
    if p_any != g_any:
        return 0.0
    surf_p = _surface(p)
    surf_g = _surface(g)
    dist_to_g = _distance_to(surf_g, gt.spacing)
    dist_to_p = _distance_to(surf_p, gt.spacing)
    hits = int((dist_to_g[surf_p] <= tau_mm).sum()) + int((dist_to_p[surf_g] <= tau_mm).sum())
    return hits / (int(surf_p.sum()) + int(surf_g.sum()))
