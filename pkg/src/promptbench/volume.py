"""Dense 3D volumes with physical spacing: representation, file I/O, preprocessing.

A :class:`Volume3` is an immutable scalar grid indexed ``[x, y, z]`` with voxel
spacing in millimeters. The canonical flat layout everywhere (files, voxel
enumeration) is x-fastest: flat index ``i`` maps to
``x = i % nx, y = (i // nx) % ny, z = i // (nx * ny)``.

Two on-disk formats are supported: an uncompressed NIfTI-1 subset
(single-file ``.nii``, float32 or uint8, no extensions, diagonal orientation)
and a raw little-endian blob with a JSON sidecar header.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Tuple

import numpy as np

__all__ = [
    "Volume3",
    "Mask",
    "VolumeIOError",
    "like",
    "make_mask",
    "mask_array",
    "load_volume",
    "save_volume",
    "preprocess_intensity",
]


class VolumeIOError(RuntimeError):
    """Unreadable, unsupported, or inconsistent volume file."""


_KEPT_DTYPES = (np.uint8, np.float32, np.float64)


@dataclass(frozen=True)
class Volume3:
    """Immutable dense 3D scalar grid with physical spacing.

    Attributes:
        data: array of shape (nx, ny, nz), indexed [x, y, z].
        spacing: voxel size (sx, sy, sz) in mm, all > 0.
        origin: world position (ox, oy, oz) of voxel (0, 0, 0) in mm.

    Spacing and origin are stored at float32 precision, matching what the
    NIfTI-1 header can represent, so save/load round-trips are exact.
    """

    data: np.ndarray
    spacing: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    origin: Tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3:
            raise ValueError(f"expected 3-d data, got shape {data.shape}")
        if any(s < 1 for s in data.shape):
            raise ValueError(f"all dims must be >= 1, got {data.shape}")
        if data.dtype == np.bool_:
            data = data.astype(np.uint8)
        elif data.dtype not in _KEPT_DTYPES:
            data = data.astype(np.float32)
        if data.flags.writeable:
            data = data.copy()
            data.setflags(write=False)
        object.__setattr__(self, "data", data)

        spacing = tuple(float(np.float32(s)) for s in self.spacing)
        if len(spacing) != 3 or any(s <= 0 for s in spacing):
            raise ValueError(f"spacing must be 3 positive reals, got {self.spacing}")
        object.__setattr__(self, "spacing", spacing)

        origin = tuple(float(np.float32(o)) for o in self.origin)
        if len(origin) != 3:
            raise ValueError(f"origin must have 3 components, got {self.origin}")
        object.__setattr__(self, "origin", origin)

    @property
    def dims(self) -> Tuple[int, int, int]:
        return tuple(self.data.shape)

    @property
    def n_voxels(self) -> int:
        return int(self.data.size)

    def flat(self) -> np.ndarray:
        """Data flattened in the canonical x-fastest order."""
        return self.data.ravel(order="F")

    def same_grid(self, other: "Volume3") -> bool:
        return self.dims == other.dims and self.spacing == other.spacing


# A Mask is a Volume3 whose voxels are exactly 0 or 1.
Mask = Volume3


def like(vol: Volume3, data: np.ndarray) -> Volume3:
    """New volume on the same grid (spacing/origin) as ``vol``."""
    return Volume3(data, vol.spacing, vol.origin)


def make_mask(arr: np.ndarray, spacing=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0)) -> Mask:
    """Binary mask volume from any 0/1 (or boolean) array."""
    a = np.asarray(arr)
    if a.dtype != np.bool_:
        if not np.logical_or(a == 0, a == 1).all():
            raise ValueError("mask values must all be 0 or 1")
        a = a != 0
    return Volume3(a.astype(np.uint8), spacing, origin)


def mask_array(vol: Mask, name: str = "mask") -> np.ndarray:
    """Validated boolean array of a binary volume."""
    d = vol.data
    if d.dtype != np.uint8 and not np.logical_or(d == 0, d == 1).all():
        raise ValueError(f"{name} is not binary")
    if d.dtype == np.uint8 and not (d <= 1).all():
        raise ValueError(f"{name} is not binary")
    return d != 0


# ---------------------------------------------------------------------------
# Raw blob + JSON sidecar
# ---------------------------------------------------------------------------

_SIDE_DTYPES = {"f32": np.dtype("<f4"), "u8": np.dtype("u1")}


def _raw_pair(path: Path) -> Tuple[Path, Path]:
    if path.suffix == ".json":
        return path.with_suffix(".raw"), path
    return path, path.with_suffix(".json")


def _save_raw(vol: Volume3, path: Path) -> None:
    blob_path, json_path = _raw_pair(path)
    if vol.data.dtype == np.uint8:
        blob, tag = vol.data.ravel(order="F").astype("u1"), "u8"
    else:
        blob, tag = vol.data.ravel(order="F").astype("<f4"), "f32"
    header = {
        "dims": list(vol.dims),
        "spacing": list(vol.spacing),
        "origin": list(vol.origin),
        "dtype": tag,
    }
    blob_path.write_bytes(blob.tobytes())
    json_path.write_text(json.dumps(header))


def _load_raw(path: Path) -> Volume3:
    blob_path, json_path = _raw_pair(path)
    if not json_path.exists():
        raise VolumeIOError(f"missing sidecar header {json_path}")
    if not blob_path.exists():
        raise VolumeIOError(f"missing raw blob {blob_path}")
    try:
        header = json.loads(json_path.read_text())
    except json.JSONDecodeError as e:
        raise VolumeIOError(f"unparseable sidecar {json_path}: {e}") from e
    for key in ("dims", "spacing", "origin", "dtype"):
        if key not in header:
            raise VolumeIOError(f"sidecar {json_path} missing field {key!r}")
    if header["dtype"] not in _SIDE_DTYPES:
        raise VolumeIOError(f"unsupported sidecar dtype {header['dtype']!r}")
    dims = tuple(int(d) for d in header["dims"])
    if len(dims) != 3 or any(d < 1 for d in dims):
        raise VolumeIOError(f"bad dims in sidecar: {header['dims']}")
    dtype = _SIDE_DTYPES[header["dtype"]]
    raw = blob_path.read_bytes()
    expected = dims[0] * dims[1] * dims[2] * dtype.itemsize
    if len(raw) != expected:
        raise VolumeIOError(
            f"{blob_path}: blob has {len(raw)} bytes, header implies {expected}"
        )
    data = np.frombuffer(raw, dtype=dtype).reshape(dims, order="F")
    return Volume3(data, tuple(header["spacing"]), tuple(header["origin"]))


# ---------------------------------------------------------------------------
# NIfTI-1 subset (single-file .nii, little-endian, no extensions)
# ---------------------------------------------------------------------------

_NIFTI1_HEADER = np.dtype(
    [
        ("sizeof_hdr", "<i4"),
        ("data_type", "S10"),
        ("db_name", "S18"),
        ("extents", "<i4"),
        ("session_error", "<i2"),
        ("regular", "S1"),
        ("dim_info", "u1"),
        ("dim", "<i2", (8,)),
        ("intent_p1", "<f4"),
        ("intent_p2", "<f4"),
        ("intent_p3", "<f4"),
        ("intent_code", "<i2"),
        ("datatype", "<i2"),
        ("bitpix", "<i2"),
        ("slice_start", "<i2"),
        ("pixdim", "<f4", (8,)),
        ("vox_offset", "<f4"),
        ("scl_slope", "<f4"),
        ("scl_inter", "<f4"),
        ("slice_end", "<i2"),
        ("slice_code", "u1"),
        ("xyzt_units", "u1"),
        ("cal_max", "<f4"),
        ("cal_min", "<f4"),
        ("slice_duration", "<f4"),
        ("toffset", "<f4"),
        ("glmax", "<i4"),
        ("glmin", "<i4"),
        ("descrip", "S80"),
        ("aux_file", "S24"),
        ("qform_code", "<i2"),
        ("sform_code", "<i2"),
        ("quatern_b", "<f4"),
        ("quatern_c", "<f4"),
        ("quatern_d", "<f4"),
        ("qoffset_x", "<f4"),
        ("qoffset_y", "<f4"),
        ("qoffset_z", "<f4"),
        ("srow_x", "<f4", (4,)),
        ("srow_y", "<f4", (4,)),
        ("srow_z", "<f4", (4,)),
        ("intent_name", "S16"),
        ("magic", "S4"),
    ]
)
assert _NIFTI1_HEADER.itemsize == 348

_NIFTI_DT_UINT8 = 2
_NIFTI_DT_FLOAT32 = 16


def _save_nifti(vol: Volume3, path: Path) -> None:
    hdr = np.zeros((), dtype=_NIFTI1_HEADER)
    hdr["sizeof_hdr"] = 348
    hdr["dim"][0] = 3
    hdr["dim"][1:4] = vol.dims
    hdr["dim"][4:] = 1
    if vol.data.dtype == np.uint8:
        hdr["datatype"], hdr["bitpix"] = _NIFTI_DT_UINT8, 8
        blob = vol.data.ravel(order="F").astype("u1")
    else:
        hdr["datatype"], hdr["bitpix"] = _NIFTI_DT_FLOAT32, 32
        blob = vol.data.ravel(order="F").astype("<f4")
    hdr["pixdim"][0] = 1.0
    hdr["pixdim"][1:4] = vol.spacing
    hdr["vox_offset"] = 352.0
    hdr["scl_slope"] = 1.0
    hdr["xyzt_units"] = 2  # NIFTI_UNITS_MM
    hdr["sform_code"] = 1
    hdr["srow_x"] = (vol.spacing[0], 0.0, 0.0, vol.origin[0])
    hdr["srow_y"] = (0.0, vol.spacing[1], 0.0, vol.origin[1])
    hdr["srow_z"] = (0.0, 0.0, vol.spacing[2], vol.origin[2])
    hdr["magic"] = b"n+1"
    with open(path, "wb") as f:
        f.write(hdr.tobytes())
        f.write(b"\x00\x00\x00\x00")  # no extensions
        f.write(blob.tobytes())


def _load_nifti(path: Path) -> Volume3:
    raw = path.read_bytes()
    if len(raw) < 352:
        raise VolumeIOError(f"{path}: too short to be a NIfTI-1 file")
    hdr = np.frombuffer(raw[:348], dtype=_NIFTI1_HEADER)[0]
    if int(hdr["sizeof_hdr"]) != 348:
        raise VolumeIOError(
            f"{path}: sizeof_hdr={int(hdr['sizeof_hdr'])}, expected 348 "
            "(big-endian files are unsupported)"
        )
    magic = bytes(hdr["magic"]).rstrip(b"\x00")
    if magic != b"n+1":
        raise VolumeIOError(f"{path}: unsupported magic {magic!r} (need single-file n+1)")
    if any(raw[348:352]):
        raise VolumeIOError(f"{path}: header extensions are unsupported")
    dt = int(hdr["datatype"])
    if dt == _NIFTI_DT_UINT8:
        dtype = np.dtype("u1")
    elif dt == _NIFTI_DT_FLOAT32:
        dtype = np.dtype("<f4")
    else:
        raise VolumeIOError(f"{path}: unsupported datatype code {dt}")
    ndim = int(hdr["dim"][0])
    if not 3 <= ndim <= 7:
        raise VolumeIOError(f"{path}: dim[0]={ndim} out of range")
    if any(int(d) != 1 for d in hdr["dim"][4 : ndim + 1]):
        raise VolumeIOError(f"{path}: only single-frame volumes are supported")
    dims = tuple(int(d) for d in hdr["dim"][1:4])
    if any(d < 1 for d in dims):
        raise VolumeIOError(f"{path}: non-positive dims {dims}")
    spacing = tuple(float(p) for p in hdr["pixdim"][1:4])
    if any(s <= 0 for s in spacing):
        raise VolumeIOError(f"{path}: non-positive pixdim {spacing}")
    slope, inter = float(hdr["scl_slope"]), float(hdr["scl_inter"])
    if slope not in (0.0, 1.0) or inter != 0.0:
        raise VolumeIOError(f"{path}: scaled data (scl_slope/scl_inter) unsupported")

    if int(hdr["sform_code"]) > 0:
        rows = np.stack([hdr["srow_x"], hdr["srow_y"], hdr["srow_z"]])
        offdiag = rows[:, :3] - np.diag(np.diag(rows[:, :3]))
        if np.any(offdiag != 0):
            raise VolumeIOError(f"{path}: non-diagonal sform is unsupported")
        origin = tuple(float(v) for v in rows[:, 3])
    elif int(hdr["qform_code"]) > 0:
        quat = (float(hdr["quatern_b"]), float(hdr["quatern_c"]), float(hdr["quatern_d"]))
        if quat != (0.0, 0.0, 0.0):
            raise VolumeIOError(f"{path}: rotated qform is unsupported")
        origin = (float(hdr["qoffset_x"]), float(hdr["qoffset_y"]), float(hdr["qoffset_z"]))
    else:
        origin = (0.0, 0.0, 0.0)

    offset = int(hdr["vox_offset"])
    if offset < 352:
        raise VolumeIOError(f"{path}: vox_offset {offset} < 352")
    count = dims[0] * dims[1] * dims[2]
    expected = offset + count * dtype.itemsize
    if len(raw) < expected:
        raise VolumeIOError(f"{path}: file has {len(raw)} bytes, header implies {expected}")
    data = np.frombuffer(raw, dtype=dtype, count=count, offset=offset)
    return Volume3(data.reshape(dims, order="F"), spacing, origin)


# ---------------------------------------------------------------------------
# Public I/O and preprocessing
# ---------------------------------------------------------------------------


def load_volume(path) -> Volume3:
    """Load a volume from ``.nii`` or raw-blob (``.raw``/``.json``) storage.

    Raises:
        VolumeIOError: missing file, unsupported format, or header/data
            size mismatch.
    """
    p = Path(path)
    if p.suffix not in (".nii", ".raw", ".json"):
        raise VolumeIOError(f"unsupported volume format: {p.name!r} (use .nii, .raw or .json)")
    if p.suffix == ".nii":
        if not p.exists():
            raise VolumeIOError(f"no such file: {p}")
        return _load_nifti(p)
    return _load_raw(p)


def save_volume(vol: Volume3, path) -> None:
    """Save a volume so that :func:`load_volume` reads back identical content.

    Float data is stored as float32, masks as uint8. The format follows the
    file suffix (``.nii`` vs ``.raw``/``.json``).
    """
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    if p.suffix == ".nii":
        _save_nifti(vol, p)
    elif p.suffix in (".raw", ".json"):
        _save_raw(vol, p)
    else:
        raise VolumeIOError(f"unsupported volume format: {p.name!r} (use .nii, .raw or .json)")


def preprocess_intensity(vol: Volume3, fg: Mask, lo_pct: float, hi_pct: float) -> Volume3:
    """Clip to foreground percentiles, then z-score with foreground statistics.

    Percentiles use linear interpolation between order statistics over the
    foreground voxels. After clipping the whole volume into [P_lo, P_hi],
    every voxel is normalized by the mean and population std of the clipped
    foreground. A foreground std below 1e-8 divides by 1 instead, so constant
    volumes map to zeros rather than NaN.
    """
    if vol.dims != fg.dims:
        raise ValueError(f"volume dims {vol.dims} != foreground dims {fg.dims}")
    if not 0 <= lo_pct < hi_pct <= 100:
        raise ValueError(f"need 0 <= lo < hi <= 100, got ({lo_pct}, {hi_pct})")
    fg_bool = mask_array(fg, "foreground")
    if not fg_bool.any():
        raise ValueError("empty foreground")
    values = vol.data.astype(np.float64)
    fg_vals = values[fg_bool]
    p_lo, p_hi = np.percentile(fg_vals, [lo_pct, hi_pct], method="linear")
    clipped = np.clip(values, p_lo, p_hi)
    mu = float(clipped[fg_bool].mean())
    sigma = float(clipped[fg_bool].std())
    if sigma < 1e-8:
        sigma = 1.0
    return like(vol, (clipped - mu) / sigma)
