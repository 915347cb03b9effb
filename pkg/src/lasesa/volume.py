"""Volume containers, preprocessing and file I/O.

Arrays are indexed ``data[x, y, z]``. On disk the payload is written with x
varying fastest (Fortran order), which is also the convention used for
"linear index" everywhere in the package (see :func:`linear_index`).

Native file layout (all little-endian)::

    offset  size  field
    0       8     magic b"LASESAVL"
    8       4     u32 format version (currently 1)
    12      20    reserved, zero
    32      12    u32[3] dims (nx, ny, nz)
    44      24    f64[3] spacing in mm
    68      1     u8 datatype tag: 0 = f64, 1 = u8
    69      ...   payload, nx*ny*nz elements, x fastest
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"LASESAVL"
VERSION = 1
HEADER_SIZE = 69
TAG_F64 = 0
TAG_U8 = 1


class VolumeError(ValueError):
    """Raised for malformed volumes and unreadable volume files."""


def _check_geometry(shape, spacing):
    if len(shape) != 3 or any(int(n) < 1 for n in shape):
        raise VolumeError(f"dims must be three positive integers, got {tuple(shape)}")
    spacing = tuple(float(s) for s in spacing)
    if len(spacing) != 3 or not all(np.isfinite(s) and s > 0 for s in spacing):
        raise VolumeError(f"spacing must be three positive numbers, got {spacing}")
    return spacing


@dataclass(frozen=True, eq=False)
class Volume:
    """3D scalar image in double precision with physical voxel spacing (mm)."""

    data: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        spacing = _check_geometry(data.shape, self.spacing)
        if not np.all(np.isfinite(data)):
            raise VolumeError("volume contains NaN or Inf")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", spacing)

    @property
    def dims(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size


@dataclass(frozen=True, eq=False)
class LabelMask:
    """Binary 3D mask; same geometry contract as :class:`Volume`."""

    data: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        raw = np.asarray(self.data)
        if raw.dtype != bool:
            if not np.all((raw == 0) | (raw == 1)):
                raise VolumeError("label mask values must be 0 or 1")
            raw = raw.astype(bool)
        spacing = _check_geometry(raw.shape, self.spacing)
        object.__setattr__(self, "data", raw)
        object.__setattr__(self, "spacing", spacing)

    @property
    def dims(self):
        return self.data.shape

    @property
    def count(self):
        return int(self.data.sum())

    def any(self):
        return bool(self.data.any())

    def is_full(self):
        return bool(self.data.all())

    def with_data(self, data):
        return LabelMask(data, self.spacing)


def linear_index(index, dims):
    """Linear (x fastest) index of voxel ``index`` in a grid of ``dims``."""
    return int(np.ravel_multi_index(tuple(index), dims, order="F"))


# -- native format ---------------------------------------------------------

def save_volume(vol, path):
    """Write a Volume (f64 payload) or LabelMask (u8 payload) in native format."""
    path = Path(path)
    if isinstance(vol, LabelMask):
        tag, payload = TAG_U8, vol.data.astype(np.uint8)
    elif isinstance(vol, Volume):
        tag, payload = TAG_F64, vol.data.astype("<f8")
    else:
        raise TypeError(f"expected Volume or LabelMask, got {type(vol).__name__}")
    header = MAGIC + struct.pack("<I", VERSION) + bytes(20)
    header += struct.pack("<3I", *vol.dims)
    header += struct.pack("<3d", *vol.spacing)
    header += struct.pack("<B", tag)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.asfortranarray(payload).tobytes(order="F"))


def _read_native(path):
    raw = Path(path).read_bytes()
    if len(raw) < HEADER_SIZE or raw[:8] != MAGIC:
        raise VolumeError(f"{path}: not a native volume file")
    (version,) = struct.unpack_from("<I", raw, 8)
    if version != VERSION:
        raise VolumeError(f"{path}: unsupported format version {version}")
    dims = struct.unpack_from("<3I", raw, 32)
    spacing = struct.unpack_from("<3d", raw, 44)
    (tag,) = struct.unpack_from("<B", raw, 68)
    if tag == TAG_F64:
        dtype = np.dtype("<f8")
    elif tag == TAG_U8:
        dtype = np.dtype("u1")
    else:
        raise VolumeError(f"{path}: unsupported datatype tag {tag}")
    _check_geometry(dims, spacing)
    n = int(np.prod(dims))
    if len(raw) - HEADER_SIZE != n * dtype.itemsize:
        raise VolumeError(
            f"{path}: payload has {len(raw) - HEADER_SIZE} bytes, header implies {n * dtype.itemsize}"
        )
    data = np.frombuffer(raw, dtype=dtype, offset=HEADER_SIZE, count=n)
    return data.reshape(dims, order="F"), spacing, tag


# -- NIfTI-1 (read only) ---------------------------------------------------

_NIFTI_DTYPES = {2: "u1", 4: "i2", 8: "i4", 16: "f4", 64: "f8"}


def _read_nifti(path):
    raw = Path(path).read_bytes()
    if len(raw) < 348:
        raise VolumeError(f"{path}: too short for a NIfTI-1 header")
    for endian in "<>":
        (sizeof_hdr,) = struct.unpack_from(endian + "i", raw, 0)
        if sizeof_hdr == 348:
            break
    else:
        raise VolumeError(f"{path}: bad sizeof_hdr, not NIfTI-1")
    if raw[344:347] == b"ni1":
        raise VolumeError(f"{path}: detached .hdr/.img pairs are not supported")
    if raw[344:347] != b"n+1":
        raise VolumeError(f"{path}: missing NIfTI-1 magic")
    dim = struct.unpack_from(endian + "8h", raw, 40)
    datatype, _bitpix = struct.unpack_from(endian + "2h", raw, 70)
    pixdim = struct.unpack_from(endian + "8f", raw, 76)
    (vox_offset,) = struct.unpack_from(endian + "f", raw, 108)
    slope, inter = struct.unpack_from(endian + "2f", raw, 112)

    ndim = dim[0]
    if not 1 <= ndim <= 7:
        raise VolumeError(f"{path}: invalid dim[0]={ndim}")
    dims = tuple(int(dim[i]) if i <= ndim else 1 for i in (1, 2, 3))
    if any(n <= 0 for n in dims):
        raise VolumeError(f"{path}: non-positive dimension {dims}")
    if ndim > 3 and any(dim[i] > 1 for i in range(4, ndim + 1)):
        raise VolumeError(f"{path}: multi-volume/multi-channel NIfTI not supported")
    if datatype not in _NIFTI_DTYPES:
        raise VolumeError(f"{path}: unsupported NIfTI datatype code {datatype}")
    spacing = tuple(abs(float(pixdim[i])) or 1.0 for i in (1, 2, 3))

    dtype = np.dtype(_NIFTI_DTYPES[datatype]).newbyteorder(endian)
    offset = max(int(vox_offset), 348)
    n = int(np.prod(dims))
    if len(raw) - offset != n * dtype.itemsize:
        raise VolumeError(
            f"{path}: body has {len(raw) - offset} bytes, header implies {n * dtype.itemsize}"
        )
    data = np.frombuffer(raw, dtype=dtype, offset=offset, count=n).astype(np.float64)
    # slope 0 (or NaN) means "no scaling" in NIfTI-1
    if not np.isfinite(slope) or slope == 0:
        slope = 1.0
    if not np.isfinite(inter):
        inter = 0.0
    data = data * float(slope) + float(inter)
    return data.reshape(dims, order="F"), spacing


def load_volume(path):
    """Load a native or uncompressed NIfTI-1 file as a double precision Volume."""
    path = Path(path)
    try:
        head = path.open("rb").read(8)
    except OSError as exc:
        raise VolumeError(f"cannot read {path}: {exc}") from exc
    if head == MAGIC:
        data, spacing, _ = _read_native(path)
        return Volume(data.astype(np.float64), spacing)
    if path.name.endswith(".nii.gz"):
        raise VolumeError(f"{path}: compressed NIfTI is not supported")
    data, spacing = _read_nifti(path)
    return Volume(data, spacing)


def load_mask(path):
    """Load a file as a LabelMask; nonbinary payloads are rejected."""
    vol = load_volume(path)
    return LabelMask(vol.data, vol.spacing)


# -- preprocessing ---------------------------------------------------------

def zscore_normalize(vol):
    """Shift/scale to zero mean and unit population standard deviation."""
    mean = vol.data.mean()
    std = vol.data.std()
    if not std > 0:
        raise VolumeError("cannot z-score a constant volume")
    return Volume((vol.data - mean) / std, vol.spacing)


def crop_centered(vol, size, center):
    """Crop a ``size`` box centred on voxel ``center``; out-of-range voxels are zero.

    For even sizes the box spans ``center - size//2 .. center + size - size//2 - 1``.
    Works for both Volume and LabelMask inputs and returns the same type.
    """
    size = tuple(int(s) for s in size)
    if len(size) != 3 or any(s < 1 for s in size):
        raise VolumeError(f"crop size must be three positive integers, got {size}")
    src = vol.data
    out = np.zeros(size, dtype=src.dtype)
    src_sl, dst_sl = [], []
    for axis in range(3):
        lo = int(center[axis]) - size[axis] // 2
        hi = lo + size[axis]
        s0, s1 = max(lo, 0), min(hi, src.shape[axis])
        if s1 <= s0:
            return type(vol)(out, vol.spacing)
        src_sl.append(slice(s0, s1))
        dst_sl.append(slice(s0 - lo, s1 - lo))
    out[tuple(dst_sl)] = src[tuple(src_sl)]
    return type(vol)(out, vol.spacing)


def mask_centroid(mask):
    """Rounded mean voxel coordinate of the foreground."""
    coords = np.argwhere(mask.data)
    if len(coords) == 0:
        raise VolumeError("centroid of an empty mask is undefined")
    return tuple(int(c) for c in np.rint(coords.mean(axis=0)))
