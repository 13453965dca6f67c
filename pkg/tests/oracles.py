"""Independent brute-force oracles the test suite checks the package against.

Everything here is deliberately naive: direct window sums instead of
separable passes, all-pairs distances instead of transforms, heap Dijkstra
instead of sparse-graph shortest paths, numeric integration instead of
special functions. None of it imports the implementation being tested.
"""

import heapq
import math

import numpy as np
from scipy.integrate import quad
from scipy.spatial.distance import cdist

_NEIGHBORS6 = (
    (1, 0, 0),
    (-1, 0, 0),
    (0, 1, 0),
    (0, -1, 0),
    (0, 0, 1),
    (0, 0, -1),
)


def avg_pool_direct(mask: np.ndarray, k: int) -> np.ndarray:
    """Direct k^3 window average with zero padding: sum of shifted copies."""
    h = k // 2
    padded = np.pad(mask.astype(np.int64), h)
    total = np.zeros(mask.shape, dtype=np.int64)
    nx, ny, nz = mask.shape
    for dx in range(k):
        for dy in range(k):
            for dz in range(k):
                total += padded[dx : dx + nx, dy : dy + ny, dz : dz + nz]
    return total / float(k**3)


def decompose_direct(mask: np.ndarray):
    """Boundary/margin/center via the direct pooling oracle."""
    s = mask.astype(np.float64)
    b = (s * np.abs(s - avg_pool_direct(mask, 3))) > 0
    near7 = (s * np.abs(s - avg_pool_direct(mask, 7))) > 0
    m = near7 & ~b
    c = (mask != 0) & ~m & ~b
    return b, m, c


def surface_direct(mask: np.ndarray) -> np.ndarray:
    """Foreground voxels with a background or out-of-volume face neighbor."""
    nx, ny, nz = mask.shape
    out = np.zeros(mask.shape, dtype=bool)
    for x, y, z in np.argwhere(mask):
        for dx, dy, dz in _NEIGHBORS6:
            xx, yy, zz = x + dx, y + dy, z + dz
            if not (0 <= xx < nx and 0 <= yy < ny and 0 <= zz < nz) or not mask[xx, yy, zz]:
                out[x, y, z] = True
                break
    return out


def edt_allpairs(mask: np.ndarray, spacing) -> np.ndarray:
    """Distance of every voxel to the nearest foreground voxel, all pairs."""
    fg = np.argwhere(mask).astype(np.float64) * np.asarray(spacing)
    all_coords = np.argwhere(np.ones(mask.shape, dtype=bool)).astype(np.float64)
    all_coords *= np.asarray(spacing)
    d = cdist(all_coords, fg).min(axis=1)
    return d.reshape(mask.shape)


def dice_setcount(pred: np.ndarray, gt: np.ndarray) -> float:
    p = {tuple(v) for v in np.argwhere(pred)}
    g = {tuple(v) for v in np.argwhere(gt)}
    if not p and not g:
        return 1.0
    return 2.0 * len(p & g) / (len(p) + len(g))


def nsd_pairwise(pred: np.ndarray, gt: np.ndarray, spacing, tau: float) -> float:
    """NSD from explicit pairwise surface-to-surface distances."""
    p_any, g_any = bool(pred.any()), bool(gt.any())
    if not p_any and not g_any:
        return 1.0
    if p_any != g_any:
        return 0.0
    sp = np.argwhere(surface_direct(pred)).astype(np.float64) * np.asarray(spacing)
    sg = np.argwhere(surface_direct(gt)).astype(np.float64) * np.asarray(spacing)
    d = cdist(sp, sg)
    hits = int((d.min(axis=1) <= tau).sum()) + int((d.min(axis=0) <= tau).sum())
    return hits / (len(sp) + len(sg))


def geodesic_dijkstra(mask: np.ndarray, source, spacing) -> dict:
    """Shortest 6-connected path lengths inside the mask, heap Dijkstra."""
    nx, ny, nz = mask.shape
    sx, sy, sz = spacing
    weights = {(1, 0, 0): sx, (-1, 0, 0): sx, (0, 1, 0): sy, (0, -1, 0): sy,
               (0, 0, 1): sz, (0, 0, -1): sz}
    dist = {tuple(source): 0.0}
    pq = [(0.0, tuple(source))]
    while pq:
        d, (x, y, z) = heapq.heappop(pq)
        if d > dist.get((x, y, z), math.inf):
            continue
        for (dx, dy, dz), w in weights.items():
            xx, yy, zz = x + dx, y + dy, z + dz
            if 0 <= xx < nx and 0 <= yy < ny and 0 <= zz < nz and mask[xx, yy, zz]:
                nd = d + w
                if nd < dist.get((xx, yy, zz), math.inf):
                    dist[(xx, yy, zz)] = nd
                    heapq.heappush(pq, (nd, (xx, yy, zz)))
    return dist


def boundary_distance_allpairs(mask: np.ndarray, voxel, spacing) -> float:
    """Distance from a voxel to the nearest background voxel center.

    The one-voxel shell outside the volume counts as background; the nearest
    outside center always lies within that shell.
    """
    padded = np.pad(mask, 1)
    bg = np.argwhere(~padded.astype(bool)).astype(np.float64) - 1.0
    point = np.asarray(voxel, dtype=np.float64)
    return float(np.min(np.linalg.norm((bg - point) * np.asarray(spacing), axis=1)))


def student_t_tail_numint(t: float, df: int) -> float:
    """Two-tailed p-value by numeric integration of the t density."""

    def pdf(x):
        return math.exp(
            math.lgamma((df + 1) / 2.0)
            - math.lgamma(df / 2.0)
            - 0.5 * math.log(df * math.pi)
            - (df + 1) / 2.0 * math.log1p(x * x / df)
        )

    tail, _ = quad(pdf, abs(t), math.inf)
    return 2.0 * tail


def percentile_linear(values, pct: float) -> float:
    """Linear-interpolation percentile from sorted order statistics, by hand."""
    v = sorted(float(x) for x in values)
    if not v:
        raise ValueError("empty values")
    h = (len(v) - 1) * pct / 100.0
    lo = math.floor(h)
    hi = math.ceil(h)
    if lo == hi:
        return v[int(h)]
    return v[lo] + (h - lo) * (v[hi] - v[lo])


def random_blob(rng: np.random.Generator, dims, max_voxels: int = 4096) -> np.ndarray:
    """Random connected-ish blob: a few overlapping boxes and balls, clipped."""
    mask = np.zeros(dims, dtype=bool)
    n_parts = int(rng.integers(1, 4))
    for _ in range(n_parts):
        kind = rng.integers(0, 2)
        center = np.array([rng.integers(0, d) for d in dims])
        r = int(rng.integers(1, max(2, min(dims) // 3)))
        x, y, z = np.indices(dims)
        if kind == 0:
            mask |= (
                (np.abs(x - center[0]) <= r)
                & (np.abs(y - center[1]) <= r)
                & (np.abs(z - center[2]) <= r)
            )
        else:
            mask |= (x - center[0]) ** 2 + (y - center[1]) ** 2 + (z - center[2]) ** 2 <= r * r
    if mask.sum() > max_voxels:
        keep = np.argwhere(mask)[:max_voxels]
        trimmed = np.zeros(dims, dtype=bool)
        trimmed[keep[:, 0], keep[:, 1], keep[:, 2]] = True
        mask = trimmed
    if not mask.any():
        mask[tuple(d // 2 for d in dims)] = True
    return mask
