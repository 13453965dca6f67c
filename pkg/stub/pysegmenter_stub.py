#!/usr/bin/env python3
"""Reference external segmenter for the promptbench file protocol.

Invoked as ``pysegmenter-stub --input <dir>`` (or ``python pysegmenter_stub.py
--input <dir>``). The input directory must contain an image volume
(``image.nii`` or ``image.raw`` + ``image.json``), ``prompts.json`` and
``request.json``; the stub writes a binary ``pred`` volume in the same format
and exits 0. Configuration comes from an optional ``stub_config.json``:

    {"mode": "dilate", "radius_mm": 2.0}
    {"mode": "oracle-mirror", "r_base": 1.0, "alpha": 1.0, "r_neg": 0.0}

Dilate mode grows Euclidean balls of the given radius around positive
prompts. Oracle-mirror mode reproduces the harness's synthetic oracle
bit-exactly (it needs a ``gt`` volume in the input directory) and exists to
prove the protocol carries enough information for a real model: swap the
body of ``predict`` for actual inference and the wiring stays the same.

This script deliberately touches nothing outside the input directory and
speaks to the harness only through protocol files.
"""

import argparse
import json
import struct
import sys
from pathlib import Path

import numpy as np
from scipy import ndimage
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import dijkstra

EXIT_OK = 0
EXIT_PROTOCOL = 2


class ProtocolFault(Exception):
    """Missing or malformed protocol file; maps to exit code 2."""


# ---------------------------------------------------------------------------
# Volume I/O (NIfTI-1 subset and raw+JSON, matching the protocol spec)
# ---------------------------------------------------------------------------

_DT_UINT8 = 2
_DT_FLOAT32 = 16


def _read_nifti(path: Path):
    raw = path.read_bytes()
    if len(raw) < 352:
        raise ProtocolFault(f"{path.name}: not a NIfTI-1 file")
    (sizeof_hdr,) = struct.unpack_from("<i", raw, 0)
    if sizeof_hdr != 348:
        raise ProtocolFault(f"{path.name}: unsupported header (sizeof_hdr={sizeof_hdr})")
    magic = raw[344:348].rstrip(b"\x00")
    if magic != b"n+1":
        raise ProtocolFault(f"{path.name}: unsupported magic {magic!r}")
    dim = struct.unpack_from("<8h", raw, 40)
    dims = tuple(int(d) for d in dim[1:4])
    (datatype,) = struct.unpack_from("<h", raw, 70)
    pixdim = struct.unpack_from("<8f", raw, 76)
    spacing = tuple(float(p) for p in pixdim[1:4])
    (vox_offset,) = struct.unpack_from("<f", raw, 108)
    srow_x = struct.unpack_from("<4f", raw, 280)
    srow_y = struct.unpack_from("<4f", raw, 296)
    srow_z = struct.unpack_from("<4f", raw, 312)
    (sform_code,) = struct.unpack_from("<h", raw, 254)
    if sform_code > 0:
        origin = (float(srow_x[3]), float(srow_y[3]), float(srow_z[3]))
    else:
        origin = (0.0, 0.0, 0.0)
    if datatype == _DT_UINT8:
        dtype = np.dtype("u1")
    elif datatype == _DT_FLOAT32:
        dtype = np.dtype("<f4")
    else:
        raise ProtocolFault(f"{path.name}: unsupported datatype {datatype}")
    count = dims[0] * dims[1] * dims[2]
    data = np.frombuffer(raw, dtype=dtype, count=count, offset=int(vox_offset))
    return data.reshape(dims, order="F"), spacing, origin


def _write_nifti(path: Path, data: np.ndarray, spacing, origin):
    hdr = bytearray(348)
    struct.pack_into("<i", hdr, 0, 348)
    struct.pack_into("<8h", hdr, 40, 3, *data.shape, 1, 1, 1, 1)
    if data.dtype == np.uint8:
        struct.pack_into("<h", hdr, 70, _DT_UINT8)
        struct.pack_into("<h", hdr, 72, 8)
        blob = data.ravel(order="F").astype("u1").tobytes()
    else:
        struct.pack_into("<h", hdr, 70, _DT_FLOAT32)
        struct.pack_into("<h", hdr, 72, 32)
        blob = data.ravel(order="F").astype("<f4").tobytes()
    struct.pack_into("<8f", hdr, 76, 1.0, *spacing, 0.0, 0.0, 0.0, 0.0)
    struct.pack_into("<f", hdr, 108, 352.0)
    struct.pack_into("<f", hdr, 112, 1.0)  # scl_slope
    struct.pack_into("<h", hdr, 254, 1)  # sform_code
    struct.pack_into("<4f", hdr, 280, spacing[0], 0.0, 0.0, origin[0])
    struct.pack_into("<4f", hdr, 296, 0.0, spacing[1], 0.0, origin[1])
    struct.pack_into("<4f", hdr, 312, 0.0, 0.0, spacing[2], origin[2])
    struct.pack_into("<4s", hdr, 344, b"n+1\x00")
    path.write_bytes(bytes(hdr) + b"\x00" * 4 + blob)


def _read_raw(blob_path: Path, json_path: Path):
    if not json_path.exists():
        raise ProtocolFault(f"missing sidecar {json_path.name}")
    header = json.loads(json_path.read_text())
    dims = tuple(int(d) for d in header["dims"])
    spacing = tuple(float(s) for s in header["spacing"])
    origin = tuple(float(o) for o in header.get("origin", (0.0, 0.0, 0.0)))
    dtype = np.dtype("u1") if header.get("dtype") == "u8" else np.dtype("<f4")
    raw = blob_path.read_bytes()
    expected = dims[0] * dims[1] * dims[2] * dtype.itemsize
    if len(raw) != expected:
        raise ProtocolFault(f"{blob_path.name}: {len(raw)} bytes, expected {expected}")
    return np.frombuffer(raw, dtype=dtype).reshape(dims, order="F"), spacing, origin


def _write_raw(blob_path: Path, json_path: Path, data: np.ndarray, spacing, origin):
    if data.dtype == np.uint8:
        blob, tag = data.ravel(order="F").astype("u1"), "u8"
    else:
        blob, tag = data.ravel(order="F").astype("<f4"), "f32"
    blob_path.write_bytes(blob.tobytes())
    json_path.write_text(
        json.dumps(
            {
                "dims": list(data.shape),
                "spacing": list(spacing),
                "origin": list(origin),
                "dtype": tag,
            }
        )
    )


def read_volume(directory: Path, stem: str):
    """Read ``<stem>.nii`` or ``<stem>.raw``+``<stem>.json``; returns format too."""
    nii = directory / f"{stem}.nii"
    if nii.exists():
        data, spacing, origin = _read_nifti(nii)
        return data, spacing, origin, "nii"
    blob = directory / f"{stem}.raw"
    if blob.exists():
        data, spacing, origin = _read_raw(blob, directory / f"{stem}.json")
        return data, spacing, origin, "raw"
    raise ProtocolFault(f"missing volume {stem}.nii or {stem}.raw in {directory}")


def write_volume(directory: Path, stem: str, data, spacing, origin, fmt: str):
    if fmt == "nii":
        _write_nifti(directory / f"{stem}.nii", data, spacing, origin)
    else:
        _write_raw(directory / f"{stem}.raw", directory / f"{stem}.json",
                   data, spacing, origin)


# ---------------------------------------------------------------------------
# Prediction modes
# ---------------------------------------------------------------------------


def load_prompts(directory: Path):
    path = directory / "prompts.json"
    if not path.exists():
        raise ProtocolFault("missing prompts.json")
    try:
        obj = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ProtocolFault(f"prompts.json: {e}") from e
    prompts = []
    for p in obj.get("prompts", []):
        voxel = tuple(int(v) for v in p["voxel"])
        prompts.append((voxel, p.get("label", "pos")))
    return prompts


def load_config(directory: Path):
    path = directory / "stub_config.json"
    if not path.exists():
        return {"mode": "dilate", "radius_mm": 0.0}
    try:
        cfg = json.loads(path.read_text())
    except json.JSONDecodeError as e:
        raise ProtocolFault(f"stub_config.json: {e}") from e
    mode = cfg.get("mode")
    if mode not in ("dilate", "oracle-mirror"):
        raise ProtocolFault(f"stub_config.json: unknown mode {mode!r}")
    return cfg


def predict_dilate(shape, spacing, prompts, radius_mm: float):
    """Union of Euclidean balls around positive prompts, clipped to bounds."""
    out = np.zeros(shape, dtype=bool)
    if radius_mm < 0:
        raise ProtocolFault(f"radius_mm must be >= 0, got {radius_mm}")
    coords = np.indices(shape).astype(np.float64)
    r2 = radius_mm * radius_mm
    for voxel, label in prompts:
        if label != "pos":
            continue
        if not all(0 <= v < s for v, s in zip(voxel, shape)):
            raise ProtocolFault(f"prompt voxel {voxel} outside image dims {shape}")
        d2 = (
            ((coords[0] - voxel[0]) * spacing[0]) ** 2
            + ((coords[1] - voxel[1]) * spacing[1]) ** 2
            + ((coords[2] - voxel[2]) * spacing[2]) ** 2
        )
        out |= d2 <= r2
    return out.astype(np.uint8)


def _foreground_graph(fg: np.ndarray, spacing):
    # nodes in x-fastest order; edges per axis, forward then backward; this
    # construction is part of the protocol contract for oracle-mirror mode
    node = np.full(fg.size, -1, dtype=np.int64)
    flat = np.flatnonzero(fg.ravel(order="F"))
    node[flat] = np.arange(len(flat))
    node = node.reshape(fg.shape, order="F")
    rows, cols, weights = [], [], []
    for axis, w in ((0, spacing[0]), (1, spacing[1]), (2, spacing[2])):
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[axis] = slice(None, -1)
        hi[axis] = slice(1, None)
        both = fg[tuple(lo)] & fg[tuple(hi)]
        rows.append(node[tuple(lo)][both])
        cols.append(node[tuple(hi)][both])
        weights.append(np.full(int(both.sum()), w))
    row = np.concatenate(rows + cols)
    col = np.concatenate(cols + rows)
    w = np.concatenate(weights + weights)
    nx, ny, _ = fg.shape
    coords = np.stack([flat % nx, (flat // nx) % ny, flat // (nx * ny)], axis=1)
    return csr_matrix((w, (row, col)), shape=(len(flat), len(flat))), node, coords


def predict_oracle_mirror(gt: np.ndarray, spacing, prompts, cfg):
    """The harness's synthetic oracle, reimplemented over protocol files.

    Positive prompts grow geodesic balls of radius r_base + alpha * d, where
    d is the Euclidean distance to the nearest background voxel (outside the
    volume counts as background); negative prompts inside the gt carve balls
    of radius r_neg.
    """
    r_base = float(cfg.get("r_base", 1.0))
    alpha = float(cfg.get("alpha", 1.0))
    r_neg = float(cfg.get("r_neg", 0.0))
    fg = gt != 0
    if not fg.any():
        raise ProtocolFault("oracle-mirror: gt volume is empty")
    positives = [v for v, label in prompts if label == "pos"]
    negatives = [v for v, label in prompts if label == "neg" and fg[v]]
    for v in positives:
        if not fg[v]:
            raise ProtocolFault(f"oracle-mirror: positive prompt {v} outside gt")
    out = np.zeros(fg.shape, dtype=bool)
    if not positives and not negatives:
        return out.astype(np.uint8)

    d_boundary = ndimage.distance_transform_edt(np.pad(fg, 1), sampling=spacing)
    d_boundary = d_boundary[1:-1, 1:-1, 1:-1]
    graph, node, coords = _foreground_graph(fg, spacing)
    sources = [node[v] for v in positives] + [node[v] for v in negatives]
    dists = np.atleast_2d(
        dijkstra(graph, directed=True, indices=np.asarray(sources, dtype=np.int64))
    )
    for i, v in enumerate(positives):
        radius = r_base + alpha * d_boundary[v]
        ball = coords[dists[i] <= radius]
        out[ball[:, 0], ball[:, 1], ball[:, 2]] = True
    for i, v in enumerate(negatives, start=len(positives)):
        carve = coords[dists[i] <= r_neg]
        out[carve[:, 0], carve[:, 1], carve[:, 2]] = False
    return out.astype(np.uint8)


def predict(directory: Path):
    image, spacing, origin, fmt = read_volume(directory, "image")
    prompts = load_prompts(directory)
    cfg = load_config(directory)
    if cfg["mode"] == "dilate":
        pred = predict_dilate(image.shape, spacing, prompts, float(cfg.get("radius_mm", 0.0)))
    else:
        gt, gt_spacing, _, _ = read_volume(directory, "gt")
        if gt.shape != image.shape:
            raise ProtocolFault(f"gt dims {gt.shape} do not match image dims {image.shape}")
        pred = predict_oracle_mirror(gt, gt_spacing, prompts, cfg)
    if pred.shape != image.shape:
        raise ProtocolFault("internal: prediction dims drifted from image dims")
    write_volume(directory, "pred", pred, spacing, origin, fmt)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="pysegmenter-stub",
        description="Reference external segmenter speaking the promptbench file protocol.",
    )
    parser.add_argument("--input", required=True, help="protocol input directory")
    args = parser.parse_args(argv)
    directory = Path(args.input)
    if not directory.is_dir():
        print(f"error: input directory not found: {directory}", file=sys.stderr)
        return EXIT_PROTOCOL
    try:
        predict(directory)
    except ProtocolFault as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_PROTOCOL
    except Exception as e:  # malformed volumes, json structure surprises
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_PROTOCOL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
