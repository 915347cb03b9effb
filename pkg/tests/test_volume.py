import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lasesa.volume import (
    LabelMask,
    Volume,
    VolumeError,
    crop_centered,
    linear_index,
    load_mask,
    load_volume,
    mask_centroid,
    save_volume,
    zscore_normalize,
)


def write_nifti(path, data, datatype, slope=0.0, inter=0.0, pixdim=(1.0, 1.0, 1.0), vox_offset=352):
    codes = {2: "<u1", 4: "<i2", 8: "<i4", 16: "<f4", 64: "<f8"}
    arr = np.asarray(data, dtype=codes[datatype])
    hdr = bytearray(348)
    struct.pack_into("<i", hdr, 0, 348)
    struct.pack_into("<8h", hdr, 40, 3, *arr.shape, 1, 1, 1, 1)
    struct.pack_into("<2h", hdr, 70, datatype, arr.itemsize * 8)
    struct.pack_into("<8f", hdr, 76, 1.0, *pixdim, 0, 0, 0, 0)
    struct.pack_into("<f", hdr, 108, float(vox_offset))
    struct.pack_into("<2f", hdr, 112, slope, inter)
    hdr[344:348] = b"n+1\0"
    body = bytes(hdr) + bytes(vox_offset - 348) + arr.tobytes(order="F")
    path.write_bytes(body)


def test_native_zero_volume(tmp_path):
    save_volume(Volume(np.zeros((4, 4, 4))), tmp_path / "z.vol")
    vol = load_volume(tmp_path / "z.vol")
    assert vol.dims == (4, 4, 4)
    assert vol.spacing == (1.0, 1.0, 1.0)
    assert vol.data.size == 64 and not vol.data.any()


def test_random_volume_round_trips_bit_exactly(tmp_path):
    rng = np.random.default_rng(3)
    vol = Volume(rng.standard_normal((8, 8, 8)), (0.5, 1.25, 2.0))
    save_volume(vol, tmp_path / "r.vol")
    back = load_volume(tmp_path / "r.vol")
    assert back.data.tobytes() == vol.data.tobytes()
    assert back.spacing == vol.spacing


def test_mask_round_trips(tmp_path):
    empty = LabelMask(np.zeros((5, 6, 7), dtype=bool))
    save_volume(empty, tmp_path / "e.vol")
    assert not load_mask(tmp_path / "e.vol").data.any()

    m = np.zeros((5, 6, 7), dtype=bool)
    m[1, 2, 3] = True
    save_volume(LabelMask(m), tmp_path / "m.vol")
    back = load_mask(tmp_path / "m.vol")
    assert np.argwhere(back.data).tolist() == [[1, 2, 3]]


def test_payload_is_x_fastest(tmp_path):
    data = np.arange(24, dtype=np.float64).reshape(2, 3, 4)
    save_volume(Volume(data), tmp_path / "o.vol")
    raw = (tmp_path / "o.vol").read_bytes()
    payload = np.frombuffer(raw[69:], dtype="<f8")
    assert payload[1] == data[1, 0, 0]
    assert payload[linear_index((1, 2, 3), data.shape)] == data[1, 2, 3]


def test_native_header_errors(tmp_path):
    save_volume(Volume(np.ones((2, 2, 2))), tmp_path / "a.vol")
    raw = (tmp_path / "a.vol").read_bytes()
    (tmp_path / "short.vol").write_bytes(raw[:-8])
    with pytest.raises(VolumeError, match="payload"):
        load_volume(tmp_path / "short.vol")
    bad_tag = bytearray(raw)
    bad_tag[68] = 7
    (tmp_path / "tag.vol").write_bytes(bytes(bad_tag))
    with pytest.raises(VolumeError, match="datatype"):
        load_volume(tmp_path / "tag.vol")
    zero_dim = bytearray(raw)
    struct.pack_into("<I", zero_dim, 32, 0)
    (tmp_path / "dim.vol").write_bytes(bytes(zero_dim))
    with pytest.raises(VolumeError):
        load_volume(tmp_path / "dim.vol")
    with pytest.raises(VolumeError):
        load_volume(tmp_path / "missing.vol")


def test_nifti_scaling(tmp_path):
    # raw 3 with slope 2 and intercept 1 -> 3*2 + 1 = 7
    write_nifti(tmp_path / "s.nii", np.full((2, 2, 2), 3), 4, slope=2.0, inter=1.0)
    vol = load_volume(tmp_path / "s.nii")
    assert np.all(vol.data == 7.0)


@pytest.mark.parametrize("datatype", [2, 4, 8, 16, 64])
def test_nifti_datatypes_and_geometry(tmp_path, datatype):
    data = np.arange(2 * 3 * 4).reshape(2, 3, 4)
    write_nifti(tmp_path / "d.nii", data, datatype, pixdim=(0.625, 1.0, 2.5))
    vol = load_volume(tmp_path / "d.nii")
    assert vol.dims == (2, 3, 4)
    assert vol.spacing == (0.625, 1.0, 2.5)
    assert vol.data.dtype == np.float64
    np.testing.assert_array_equal(vol.data, data)


def test_nifti_slope_zero_means_identity(tmp_path):
    write_nifti(tmp_path / "z.nii", np.full((2, 2, 2), 5), 4, slope=0.0, inter=4.0)
    assert np.all(load_volume(tmp_path / "z.nii").data == 9.0)


def test_nifti_rejections(tmp_path):
    write_nifti(tmp_path / "ok.nii", np.zeros((2, 2, 2)), 16)
    raw = bytearray((tmp_path / "ok.nii").read_bytes())
    bad = bytearray(raw)
    struct.pack_into("<h", bad, 70, 128)  # RGB24
    (tmp_path / "rgb.nii").write_bytes(bytes(bad))
    with pytest.raises(VolumeError, match="datatype"):
        load_volume(tmp_path / "rgb.nii")
    (tmp_path / "trunc.nii").write_bytes(bytes(raw[:-4]))
    with pytest.raises(VolumeError):
        load_volume(tmp_path / "trunc.nii")
    four_d = bytearray(raw)
    struct.pack_into("<8h", four_d, 40, 4, 2, 2, 2, 3, 1, 1, 1)
    (tmp_path / "4d.nii").write_bytes(bytes(four_d))
    with pytest.raises(VolumeError):
        load_volume(tmp_path / "4d.nii")
    (tmp_path / "c.nii.gz").write_bytes(b"\x1f\x8b" + bytes(400))
    with pytest.raises(VolumeError):
        load_volume(tmp_path / "c.nii.gz")


def test_zscore_two_points():
    vol = Volume(np.array([0.0, 2.0]).reshape(2, 1, 1))
    np.testing.assert_array_equal(zscore_normalize(vol).data.ravel(), [-1.0, 1.0])


def test_zscore_constant_rejected():
    with pytest.raises(VolumeError):
        zscore_normalize(Volume(np.ones((2, 2, 1))))


def test_zscore_moments_by_two_pass():
    rng = np.random.default_rng(11)
    out = zscore_normalize(Volume(rng.uniform(-3, 9, (6, 6, 6)))).data.ravel().tolist()
    n = len(out)
    mean = 0.0
    for v in out:
        mean += v
    mean /= n
    var = 0.0
    for v in out:
        var += (v - mean) ** 2
    assert abs(mean) < 1e-9
    assert abs(np.sqrt(var / n) - 1.0) < 1e-9


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_zscore_idempotent(seed):
    rng = np.random.default_rng(seed)
    vol = Volume(rng.standard_normal((3, 4, 5)) * rng.uniform(0.1, 10) + rng.uniform(-5, 5))
    once = zscore_normalize(vol)
    twice = zscore_normalize(once)
    np.testing.assert_allclose(twice.data, once.data, atol=1e-9)


def test_crop_identity_and_constant():
    rng = np.random.default_rng(0)
    vol = Volume(rng.random((4, 4, 4)), (1.0, 2.0, 3.0))
    same = crop_centered(vol, (4, 4, 4), (2, 2, 2))
    np.testing.assert_array_equal(same.data, vol.data)
    assert same.spacing == vol.spacing
    fives = Volume(np.full((6, 6, 6), 5.0))
    assert np.all(crop_centered(fives, (2, 2, 2), (3, 3, 3)).data == 5.0)


def test_crop_corner_pads_zeros():
    # ramp value = 1 + linear index, so zero only where padding happened
    ramp = Volume(1.0 + np.arange(64, dtype=np.float64).reshape(4, 4, 4, order="F"))
    out = crop_centered(ramp, (4, 4, 4), (0, 0, 0)).data
    # box spans source indices -2..1 on each axis
    for i in range(4):
        for j in range(4):
            for k in range(4):
                src = (i - 2, j - 2, k - 2)
                if min(src) < 0:
                    assert out[i, j, k] == 0.0
                else:
                    assert out[i, j, k] == ramp.data[src]


@settings(max_examples=40, deadline=None)
@given(
    st.tuples(st.integers(1, 6), st.integers(1, 6), st.integers(1, 6)),
    st.tuples(st.integers(-4, 9), st.integers(-4, 9), st.integers(-4, 9)),
)
def test_crop_preserves_in_range_values(size, center):
    src = np.arange(5 * 6 * 7, dtype=np.float64).reshape(5, 6, 7) + 1
    out = crop_centered(Volume(src), size, center).data
    assert out.shape == size
    for idx in np.ndindex(*size):
        s = tuple(c - n // 2 + i for c, n, i in zip(center, size, idx))
        inside = all(0 <= a < d for a, d in zip(s, src.shape))
        assert out[idx] == (src[s] if inside else 0.0)


def test_crop_works_on_masks():
    m = np.zeros((4, 4, 4), dtype=bool)
    m[1, 1, 1] = True
    out = crop_centered(LabelMask(m), (2, 2, 2), (1, 1, 1))
    assert isinstance(out, LabelMask)
    assert out.data[1, 1, 1] and out.count == 1


def test_centroid():
    m = np.zeros((8, 8, 8), dtype=bool)
    m[3, 4, 5] = True
    assert mask_centroid(LabelMask(m)) == (3, 4, 5)
    m = np.zeros((4, 4, 4), dtype=bool)
    m[0, 0, 0] = m[2, 0, 0] = True
    assert mask_centroid(LabelMask(m)) == (1, 0, 0)
    with pytest.raises(VolumeError):
        mask_centroid(LabelMask(np.zeros((2, 2, 2), dtype=bool)))


def test_centroid_matches_coordinate_average():
    rng = np.random.default_rng(5)
    m = np.zeros((10, 10, 10), dtype=bool)
    flat = rng.choice(1000, 50, replace=False)
    m.ravel()[flat] = True
    sx = sy = sz = 0
    n = 0
    for x in range(10):
        for y in range(10):
            for z in range(10):
                if m[x, y, z]:
                    sx, sy, sz, n = sx + x, sy + y, sz + z, n + 1
    assert mask_centroid(LabelMask(m)) == tuple(int(round(s / n)) for s in (sx, sy, sz))


def test_invalid_geometry():
    with pytest.raises(VolumeError):
        Volume(np.zeros((2, 2, 2)), (1.0, 0.0, 1.0))
    with pytest.raises(VolumeError):
        Volume(np.full((2, 2, 2), np.nan))
    with pytest.raises(VolumeError):
        LabelMask(np.full((2, 2, 2), 2))
