import json
import struct

import numpy as np
import pytest

from promptbench import (
    Volume3,
    VolumeIOError,
    like,
    load_volume,
    make_mask,
    mask_array,
    preprocess_intensity,
    save_volume,
)

from oracles import percentile_linear


def test_volume_basic_invariants():
    data = np.arange(24, dtype=np.float32).reshape(2, 3, 4)
    vol = Volume3(data, spacing=(1.0, 0.5, 2.0), origin=(1.0, -2.0, 3.0))
    assert vol.dims == (2, 3, 4)
    assert vol.n_voxels == 24
    assert not vol.data.flags.writeable
    # canonical flat order is x-fastest
    assert vol.flat()[1] == vol.data[1, 0, 0]


def test_volume_rejects_bad_shapes_and_spacing():
    with pytest.raises(ValueError):
        Volume3(np.zeros((2, 2)))
    with pytest.raises(ValueError):
        Volume3(np.zeros((2, 2, 2)), spacing=(1.0, 0.0, 1.0))
    with pytest.raises(ValueError):
        Volume3(np.zeros((2, 2, 2)), spacing=(1.0, -1.0, 1.0))


def test_mask_array_validates_binary():
    ok = make_mask(np.ones((2, 2, 2), dtype=np.uint8))
    assert mask_array(ok).all()
    bad = Volume3(np.full((2, 2, 2), 3.0, dtype=np.float32))
    with pytest.raises(ValueError, match="binary"):
        mask_array(bad)


@pytest.mark.parametrize("ext", [".nii", ".raw"])
def test_round_trip_identity(tmp_path, ext):
    rng = np.random.default_rng(0)
    vol = Volume3(
        rng.normal(size=(5, 4, 3)).astype(np.float32),
        spacing=(0.75, 1.0, 2.5),
        origin=(-1.5, 0.0, 4.25),
    )
    path = tmp_path / f"vol{ext}"
    save_volume(vol, path)
    back = load_volume(path)
    assert back.dims == vol.dims
    assert back.spacing == vol.spacing
    assert back.origin == vol.origin
    assert np.array_equal(back.data, vol.data)
    # second round trip is bit-identical too
    path2 = tmp_path / f"vol2{ext}"
    save_volume(back, path2)
    assert np.array_equal(load_volume(path2).data, vol.data)


@pytest.mark.parametrize("ext", [".nii", ".raw"])
def test_round_trip_mask_and_single_voxel(tmp_path, ext):
    cube = np.zeros((9, 9, 9), dtype=np.uint8)
    cube[1:8, 1:8, 1:8] = 1
    mask = make_mask(cube)
    save_volume(mask, tmp_path / f"m{ext}")
    back = load_volume(tmp_path / f"m{ext}")
    assert back.data.dtype == np.uint8
    assert np.array_equal(back.data, mask.data)

    one = Volume3(np.full((1, 1, 1), 7.5, dtype=np.float32))
    save_volume(one, tmp_path / f"one{ext}")
    reloaded = load_volume(tmp_path / f"one{ext}")
    assert reloaded.dims == (1, 1, 1)
    assert reloaded.data[0, 0, 0] == 7.5


def test_raw_blob_layout_is_x_fastest(tmp_path):
    values = np.arange(8, dtype=np.float32)
    vol = Volume3(values.reshape(2, 2, 2, order="F"))
    save_volume(vol, tmp_path / "v.raw")
    blob = (tmp_path / "v.raw").read_bytes()
    assert struct.unpack("<8f", blob) == tuple(values)
    header = json.loads((tmp_path / "v.json").read_text())
    assert header == {
        "dims": [2, 2, 2],
        "spacing": [1.0, 1.0, 1.0],
        "origin": [0.0, 0.0, 0.0],
        "dtype": "f32",
    }


def test_load_raw_from_handwritten_sidecar(tmp_path):
    # a 2x2x2 raw file with sidecar header, written without the library
    values = [float(v) for v in range(8)]
    (tmp_path / "hand.raw").write_bytes(struct.pack("<8f", *values))
    (tmp_path / "hand.json").write_text(
        '{"dims":[2,2,2],"spacing":[1.0,1.0,1.0],"origin":[0.0,0.0,0.0],"dtype":"f32"}'
    )
    vol = load_volume(tmp_path / "hand.raw")
    assert vol.dims == (2, 2, 2)
    assert list(vol.flat()) == values
    assert vol.data[1, 0, 0] == 1.0 and vol.data[0, 1, 0] == 2.0 and vol.data[0, 0, 1] == 4.0


def _handcrafted_nifti(tmp_path):
    """Minimal NIfTI-1 file authored byte-by-byte against the public layout."""
    hdr = bytearray(348)
    struct.pack_into("<i", hdr, 0, 348)  # sizeof_hdr
    struct.pack_into("<8h", hdr, 40, 3, 2, 2, 2, 1, 1, 1, 1)  # dim
    struct.pack_into("<h", hdr, 70, 16)  # datatype = float32
    struct.pack_into("<h", hdr, 72, 32)  # bitpix
    struct.pack_into("<8f", hdr, 76, 1.0, 1.0, 1.0, 1.0, 0, 0, 0, 0)  # pixdim
    struct.pack_into("<f", hdr, 108, 352.0)  # vox_offset
    struct.pack_into("<4s", hdr, 344, b"n+1\x00")  # magic
    values = [0.5, 1.5, 2.5, 3.5, 4.5, 5.5, 6.5, 7.5]
    path = tmp_path / "hand.nii"
    path.write_bytes(bytes(hdr) + b"\x00" * 4 + struct.pack("<8f", *values))
    return path, values


def test_load_handcrafted_minimal_nifti(tmp_path):
    path, values = _handcrafted_nifti(tmp_path)
    vol = load_volume(path)
    assert vol.dims == (2, 2, 2)
    assert vol.spacing == (1.0, 1.0, 1.0)
    assert list(vol.flat()) == values


def test_nifti_rejects_malformed_files(tmp_path):
    path, _ = _handcrafted_nifti(tmp_path)
    raw = bytearray(path.read_bytes())

    bad = tmp_path / "bad.nii"

    bad.write_bytes(raw[:100])  # truncated header
    with pytest.raises(VolumeIOError):
        load_volume(bad)

    big_endian = bytearray(raw)
    struct.pack_into(">i", big_endian, 0, 348)
    bad.write_bytes(bytes(big_endian))
    with pytest.raises(VolumeIOError, match="sizeof_hdr"):
        load_volume(bad)

    wrong_dtype = bytearray(raw)
    struct.pack_into("<h", wrong_dtype, 70, 4)  # int16: unsupported
    bad.write_bytes(bytes(wrong_dtype))
    with pytest.raises(VolumeIOError, match="datatype"):
        load_volume(bad)

    with_ext = bytearray(raw)
    with_ext[348] = 1  # extension flag
    bad.write_bytes(bytes(with_ext))
    with pytest.raises(VolumeIOError, match="extension"):
        load_volume(bad)

    truncated = raw[:-4]  # header promises more data than present
    bad.write_bytes(bytes(truncated))
    with pytest.raises(VolumeIOError, match="bytes"):
        load_volume(bad)

    wrong_magic = bytearray(raw)
    struct.pack_into("<4s", wrong_magic, 344, b"ni1\x00")
    bad.write_bytes(bytes(wrong_magic))
    with pytest.raises(VolumeIOError, match="magic"):
        load_volume(bad)


def test_load_errors(tmp_path):
    with pytest.raises(VolumeIOError, match="no such file"):
        load_volume(tmp_path / "missing.nii")
    with pytest.raises(VolumeIOError, match="format"):
        load_volume(tmp_path / "volume.xyz")
    # raw blob whose sidecar disagrees on size
    (tmp_path / "short.raw").write_bytes(b"\x00" * 8)
    (tmp_path / "short.json").write_text(
        '{"dims":[2,2,2],"spacing":[1,1,1],"origin":[0,0,0],"dtype":"f32"}'
    )
    with pytest.raises(VolumeIOError, match="header implies"):
        load_volume(tmp_path / "short.raw")


def test_load_raw_via_json_path(tmp_path):
    vol = Volume3(np.arange(8, dtype=np.float32).reshape(2, 2, 2))
    save_volume(vol, tmp_path / "v.raw")
    via_json = load_volume(tmp_path / "v.json")
    assert np.array_equal(via_json.data, vol.data)


def test_preprocess_constant_volume_is_all_zeros():
    vol = Volume3(np.full((4, 4, 4), 5.0))
    fg = make_mask(np.ones((4, 4, 4)))
    out = preprocess_intensity(vol, fg, 0.5, 99.5)
    assert np.all(out.data == 0.0)


def test_preprocess_matches_hand_computed_statistics():
    # foreground values 1..100 in a 100-voxel column; background stays put
    data = np.zeros((100, 1, 2))
    data[:, 0, 0] = np.arange(1, 101)
    data[:, 0, 1] = 1000.0  # background, should be clipped + shifted like the rest
    fg = np.zeros((100, 1, 2), dtype=np.uint8)
    fg[:, 0, 0] = 1
    vol = Volume3(data)
    out = preprocess_intensity(vol, make_mask(fg), 0.0, 100.0)

    values = list(range(1, 101))
    p_lo = percentile_linear(values, 0.0)
    p_hi = percentile_linear(values, 100.0)
    assert (p_lo, p_hi) == (1.0, 100.0)
    mu = sum(values) / len(values)
    sigma = (sum((v - mu) ** 2 for v in values) / len(values)) ** 0.5
    assert mu == 50.5
    assert out.data[0, 0, 0] == pytest.approx((1 - mu) / sigma, abs=1e-12)
    assert out.data[99, 0, 0] == pytest.approx((100 - mu) / sigma, abs=1e-12)
    # background voxel was clipped to p_hi before normalization
    assert out.data[0, 0, 1] == pytest.approx((100 - mu) / sigma, abs=1e-12)


def test_preprocess_interior_percentiles_clip():
    rng = np.random.default_rng(3)
    data = rng.normal(size=(8, 8, 8)) * 40 + 10
    fg = rng.random((8, 8, 8)) < 0.7
    fg[4, 4, 4] = True
    vol = Volume3(data)
    out = preprocess_intensity(vol, make_mask(fg), 5.0, 95.0)

    p_lo = percentile_linear(data[fg], 5.0)
    p_hi = percentile_linear(data[fg], 95.0)
    clipped = np.clip(data, p_lo, p_hi)
    mu, sigma = clipped[fg].mean(), clipped[fg].std()
    # no value, before normalization, lies outside the clip bounds
    restored = out.data * sigma + mu
    assert restored.min() >= p_lo - 1e-9
    assert restored.max() <= p_hi + 1e-9
    # foreground is standardized
    assert abs(out.data[fg].mean()) < 1e-9
    assert abs(out.data[fg].std() - 1.0) < 1e-9


def test_preprocess_standardizes_foreground_on_random_volumes():
    rng = np.random.default_rng(11)
    for _ in range(10):
        data = rng.normal(loc=rng.uniform(-5, 5), scale=rng.uniform(0.1, 20), size=(6, 6, 6))
        fg = rng.random((6, 6, 6)) < rng.uniform(0.2, 0.9)
        if not fg.any():
            fg[0, 0, 0] = True
        out = preprocess_intensity(Volume3(data), make_mask(fg), 0.5, 99.5)
        assert abs(out.data[fg].mean()) < 1e-9
        std = out.data[fg].std()
        assert std == pytest.approx(1.0, abs=1e-9) or std == 0.0


def test_preprocess_precondition_errors():
    vol = Volume3(np.zeros((2, 2, 2)))
    fg = make_mask(np.ones((2, 2, 2)))
    with pytest.raises(ValueError):
        preprocess_intensity(vol, fg, 50.0, 50.0)  # lo == hi
    with pytest.raises(ValueError, match="empty foreground"):
        preprocess_intensity(vol, make_mask(np.zeros((2, 2, 2))), 0.5, 99.5)
    with pytest.raises(ValueError, match="dims"):
        preprocess_intensity(vol, make_mask(np.ones((3, 3, 3))), 0.5, 99.5)


def test_like_preserves_grid():
    vol = Volume3(np.zeros((2, 3, 4)), spacing=(1.0, 2.0, 3.0), origin=(5.0, 6.0, 7.0))
    out = like(vol, np.ones((2, 3, 4)))
    assert out.spacing == vol.spacing and out.origin == vol.origin
