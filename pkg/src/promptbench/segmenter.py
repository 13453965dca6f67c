"""Segmentation backends: a deterministic synthetic oracle and a subprocess protocol.

The synthetic oracle stands in for a trained interactive model at desk scale.
Each positive prompt grows a geodesic ball inside the ground truth whose
radius increases with the prompt's distance to the boundary, so prompts deep
in the target recover more of it than prompts near the edge.

The external protocol talks to any real model through files in a work
directory: the command is invoked as ``<cmd> --input <dir>`` and must write a
``pred`` volume with the same dims as the input image.
"""

from __future__ import annotations

import hashlib
import json
import subprocess
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

from .sampling import PromptSet, prompt_set_to_json
from .volume import Mask, Volume3, like, load_volume, mask_array, save_volume

__all__ = [
    "OracleParams",
    "ProtocolError",
    "synthetic_segment",
    "external_segment",
    "SyntheticOracleBackend",
    "ExternalProcessBackend",
    "backend_from_json",
    "backend_to_json",
]


class ProtocolError(RuntimeError):
    """External segmenter failed: bad exit, timeout, or ill-formed output."""

    def __init__(self, message: str, *, returncode: Optional[int] = None, stderr: str = ""):
        super().__init__(message)
        self.returncode = returncode
        self.stderr = stderr


@dataclass(frozen=True)
class OracleParams:
    """Reach parameters of the synthetic oracle.

    A positive prompt p covers the gt voxels within geodesic distance
    ``r_base + alpha * d_boundary(p)`` of p, where d_boundary is the Euclidean
    distance (mm) from p to the nearest non-foreground voxel (the region
    outside the volume counts as background). Negative prompts carve geodesic
    balls of radius ``r_neg``.
    """

    r_base: float = 1.0
    alpha: float = 1.0
    r_neg: float = 0.0

    def __post_init__(self):
        if self.r_base < 0 or self.alpha < 0 or self.r_neg < 0:
            raise ValueError("oracle parameters must all be >= 0")


# ---------------------------------------------------------------------------
# Geodesic machinery
# ---------------------------------------------------------------------------

# foreground graphs are expensive to build relative to a single query, and the
# experiment grid queries the same gt thousands of times
_GRAPH_CACHE: Dict[tuple, tuple] = {}
_GRAPH_CACHE_MAX = 16


def _foreground_graph(gt: Mask):
    """CSR graph over foreground voxels, 6-connected, edges weighted by spacing.

    Nodes are numbered in the canonical x-fastest enumeration order. Edge
    arrays are assembled in a fixed order (+x, +y, +z, then the reverse
    directions) so the graph, and therefore every shortest-path distance, is
    reproducible across runs and implementations.
    """
    key = (gt.dims, gt.spacing, hashlib.sha1(gt.data.tobytes()).digest())
    hit = _GRAPH_CACHE.get(key)
    if hit is not None:
        return hit

    fg = mask_array(gt)
    nx, ny, nz = fg.shape
    node = np.full(fg.size, -1, dtype=np.int64)
    flat = np.flatnonzero(fg.ravel(order="F"))
    node[flat] = np.arange(len(flat))
    node = node.reshape(fg.shape, order="F")

    rows, cols, weights = [], [], []
    sx, sy, sz = gt.spacing
    for axis, w in ((0, sx), (1, sy), (2, sz)):
        shifted = [slice(None)] * 3
        base = [slice(None)] * 3
        shifted[axis] = slice(1, None)
        base[axis] = slice(None, -1)
        both = fg[tuple(base)] & fg[tuple(shifted)]
        u = node[tuple(base)][both]
        v = node[tuple(shifted)][both]
        rows.append(u)
        cols.append(v)
        weights.append(np.full(len(u), w))
    # symmetric closure, fixed order
    row = np.concatenate(rows + cols)
    col = np.concatenate(cols + rows)
    w = np.concatenate(weights + weights)
    graph = csr_matrix((w, (row, col)), shape=(len(flat), len(flat)))

    coords_x = flat % nx
    coords_y = (flat // nx) % ny
    coords_z = flat // (nx * ny)
    entry = (graph, node, np.stack([coords_x, coords_y, coords_z], axis=1))
    if len(_GRAPH_CACHE) >= _GRAPH_CACHE_MAX:
        _GRAPH_CACHE.pop(next(iter(_GRAPH_CACHE)))
    _GRAPH_CACHE[key] = entry
    return entry


def _boundary_distance(gt: Mask) -> np.ndarray:
    # distance to the nearest background voxel, outside-volume counts as background
    fg = mask_array(gt)
    padded = np.pad(fg, 1)
    dist = ndimage.distance_transform_edt(padded, sampling=gt.spacing)
    return dist[1:-1, 1:-1, 1:-1]


def synthetic_segment(gt: Mask, prompts: PromptSet, params: OracleParams) -> Mask:
    """Deterministic stand-in segmenter driven by prompt depth.

    Output is the union over positive prompts of geodesic balls of radius
    ``r_base + alpha * d_boundary(p)``, minus geodesic balls of radius
    ``r_neg`` around negative prompts that lie inside the ground truth.
    Always a subset of the ground truth; zero positive prompts yield an
    empty mask.
    """
    fg = mask_array(gt, "gt")
    if not fg.any():
        raise ValueError("synthetic oracle requires a nonempty ground truth")
    for p in prompts.positives():
        x, y, z = p.voxel
        if not (0 <= x < fg.shape[0] and 0 <= y < fg.shape[1] and 0 <= z < fg.shape[2]):
            raise ValueError(f"prompt voxel {p.voxel} outside volume dims {gt.dims}")
        if not fg[x, y, z]:
            raise ValueError(f"positive prompt {p.voxel} lies outside the ground truth")

    out = np.zeros(fg.shape, dtype=bool)
    positives = prompts.positives()
    negatives = [p for p in prompts.prompts if p.label == "neg" and fg[p.voxel]]
    if not positives and not negatives:
        return like(gt, out.astype(np.uint8))

    graph, node, coords = _foreground_graph(gt)
    d_boundary = _boundary_distance(gt)

    sources = [node[p.voxel] for p in positives] + [node[p.voxel] for p in negatives]
    dists = dijkstra(graph, directed=True, indices=np.asarray(sources, dtype=np.int64))
    dists = np.atleast_2d(dists)

    for i, p in enumerate(positives):
        radius = params.r_base + params.alpha * d_boundary[p.voxel]
        ball = coords[dists[i] <= radius]
        out[ball[:, 0], ball[:, 1], ball[:, 2]] = True
    for i, p in enumerate(negatives, start=len(positives)):
        carve = coords[dists[i] <= params.r_neg]
        out[carve[:, 0], carve[:, 1], carve[:, 2]] = False
    return like(gt, out.astype(np.uint8))


# ---------------------------------------------------------------------------
# External process protocol
# ---------------------------------------------------------------------------


def _volume_paths(workdir: Path, stem: str, file_format: str) -> Path:
    return workdir / (f"{stem}.nii" if file_format == "nii" else f"{stem}.raw")


def external_segment(
    image: Volume3,
    prompts: PromptSet,
    command: Sequence[str],
    workdir,
    *,
    tau_mm: float = 1.0,
    case_id: str = "case",
    timeout_s: Optional[float] = None,
    file_format: str = "nii",
    gt: Optional[Mask] = None,
    extra_files: Optional[Dict[str, dict]] = None,
) -> Mask:
    """Run one external segmentation through the file protocol.

    Writes ``image``, ``prompts.json`` and ``request.json`` into ``workdir``,
    invokes ``command --input workdir``, and reads back ``pred``. ``gt`` and
    ``extra_files`` (JSON payloads by filename, e.g. a stub config) are
    optional additions for reference-segmenter testing.

    Raises:
        ProtocolError: nonzero exit, timeout, missing or ill-formed output,
            or output dims that do not match the image.
    """
    if file_format not in ("nii", "raw"):
        raise ValueError(f"file_format must be 'nii' or 'raw', got {file_format!r}")
    workdir = Path(workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    save_volume(image, _volume_paths(workdir, "image", file_format))
    if gt is not None:
        save_volume(gt, _volume_paths(workdir, "gt", file_format))
    (workdir / "prompts.json").write_text(json.dumps(prompt_set_to_json(prompts)))
    (workdir / "request.json").write_text(
        json.dumps({"tau_mm": tau_mm, "case_id": case_id})
    )
    if extra_files:
        for name, payload in extra_files.items():
            (workdir / name).write_text(json.dumps(payload))

    argv = list(command) + ["--input", str(workdir)]
    try:
        proc = subprocess.run(
            argv, capture_output=True, text=True, timeout=timeout_s
        )
    except subprocess.TimeoutExpired as e:
        raise ProtocolError(
            f"segmenter command timed out after {timeout_s}s: {argv}"
        ) from e
    except OSError as e:
        raise ProtocolError(f"cannot execute segmenter command {argv}: {e}") from e
    if proc.returncode != 0:
        raise ProtocolError(
            f"segmenter command failed with exit code {proc.returncode}",
            returncode=proc.returncode,
            stderr=proc.stderr,
        )

    pred_path = _volume_paths(workdir, "pred", file_format)
    if not pred_path.exists():
        raise ProtocolError(f"segmenter produced no {pred_path.name}", stderr=proc.stderr)
    try:
        pred = load_volume(pred_path)
    except Exception as e:
        raise ProtocolError(f"unreadable prediction {pred_path}: {e}", stderr=proc.stderr) from e
    if pred.dims != image.dims:
        raise ProtocolError(
            f"prediction dims {pred.dims} do not match image dims {image.dims}",
            stderr=proc.stderr,
        )
    try:
        mask_array(pred, "prediction")
    except ValueError as e:
        raise ProtocolError(str(e), stderr=proc.stderr) from e
    return pred


# ---------------------------------------------------------------------------
# Backend objects used by the experiment runner
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SyntheticOracleBackend:
    """In-process synthetic oracle; needs only the ground truth."""

    params: OracleParams = field(default_factory=OracleParams)
    kind: str = "synthetic-oracle"

    def segment(self, *, gt: Mask, prompts: PromptSet, image=None, workdir=None,
                tau_mm: float = 1.0, case_id: str = "case") -> Mask:
        return synthetic_segment(gt, prompts, self.params)


@dataclass(frozen=True)
class ExternalProcessBackend:
    """File-protocol subprocess backend; needs an image per subject."""

    command: Tuple[str, ...]
    timeout_s: Optional[float] = None
    file_format: str = "nii"
    include_gt: bool = False
    stub_config: Optional[dict] = None
    kind: str = "external-process"

    def segment(self, *, gt: Mask, prompts: PromptSet, image: Volume3, workdir,
                tau_mm: float = 1.0, case_id: str = "case") -> Mask:
        extra = {"stub_config.json": self.stub_config} if self.stub_config else None
        return external_segment(
            image,
            prompts,
            self.command,
            workdir,
            tau_mm=tau_mm,
            case_id=case_id,
            timeout_s=self.timeout_s,
            file_format=self.file_format,
            gt=gt if self.include_gt else None,
            extra_files=extra,
        )


def backend_to_json(backend) -> dict:
    if isinstance(backend, SyntheticOracleBackend):
        return {
            "kind": "synthetic-oracle",
            "r_base": backend.params.r_base,
            "alpha": backend.params.alpha,
            "r_neg": backend.params.r_neg,
        }
    if isinstance(backend, ExternalProcessBackend):
        obj = {
            "kind": "external-process",
            "command": list(backend.command),
            "file_format": backend.file_format,
            "include_gt": backend.include_gt,
        }
        if backend.timeout_s is not None:
            obj["timeout_s"] = backend.timeout_s
        if backend.stub_config is not None:
            obj["stub_config"] = backend.stub_config
        return obj
    raise TypeError(f"not a backend: {backend!r}")


def backend_from_json(obj: dict):
    kind = obj.get("kind")
    if kind == "synthetic-oracle":
        return SyntheticOracleBackend(
            params=OracleParams(
                r_base=float(obj.get("r_base", 1.0)),
                alpha=float(obj.get("alpha", 1.0)),
                r_neg=float(obj.get("r_neg", 0.0)),
            )
        )
    if kind == "external-process":
        command = obj.get("command")
        if not command:
            raise ValueError("backend.command: required for external-process backends")
        return ExternalProcessBackend(
            command=tuple(command),
            timeout_s=obj.get("timeout_s"),
            file_format=obj.get("file_format", "nii"),
            include_gt=bool(obj.get("include_gt", False)),
            stub_config=obj.get("stub_config"),
        )
    raise ValueError(f"backend.kind: unknown value {kind!r}")
