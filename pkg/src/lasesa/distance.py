"""Exact Euclidean distance transforms and the distance-derived targets.

The fast transform is the separable lower-envelope-of-parabolas algorithm
(Felzenszwalb & Huttenlocher): one exact 1D pass per axis over squared
distances, with the voxel spacing entering each pass as a squared step weight.
With integer spacing every intermediate value is an exactly representable
integer, so :func:`edt` and :func:`edt_brute_force` agree bit for bit.
"""

from __future__ import annotations

from typing import NamedTuple

import numba
import numpy as np

from .surface import extract_boundary
from .volume import LabelMask, Volume, VolumeError


class DistanceField(Volume):
    """Real-valued field in mm (or mm**beta); stored like a Volume."""


class ProbabilityPair(NamedTuple):
    """Per-voxel class probabilities ``[p_normal, p_scar]`` as two arrays."""

    normal: np.ndarray
    scar: np.ndarray


@numba.njit(cache=True)
def _envelope_pass(lines, w2):
    # lines: (n_lines, n) squared distances, inf where no source; updated in place
    n_lines, n = lines.shape
    v = np.empty(n, dtype=np.int64)
    z = np.empty(n + 1, dtype=np.float64)
    f = np.empty(n, dtype=np.float64)
    for r in range(n_lines):
        for q in range(n):
            f[q] = lines[r, q]
        k = -1
        for q in range(n):
            if f[q] == np.inf:
                continue
            if k < 0:
                k = 0
                v[0] = q
                z[0] = -np.inf
                z[1] = np.inf
                continue
            fq = f[q] + w2 * q * q
            while True:
                p = v[k]
                s = (fq - (f[p] + w2 * p * p)) / (2.0 * w2 * (q - p))
                if s <= z[k]:
                    k -= 1
                    if k < 0:
                        break
                else:
                    break
            k += 1
            v[k] = q
            z[k] = -np.inf if k == 0 else s
            z[k + 1] = np.inf
        if k < 0:
            continue  # line has no finite source; stays inf
        j = 0
        for q in range(n):
            while z[j + 1] < q:
                j += 1
            d = q - v[j]
            lines[r, q] = w2 * d * d + f[v[j]]


def edt_squared(mask, spacing=None):
    """Squared Euclidean distance (mm^2) from every voxel to the nearest foreground voxel."""
    if isinstance(mask, LabelMask):
        spacing = mask.spacing if spacing is None else spacing
        mask = mask.data
    spacing = (1.0, 1.0, 1.0) if spacing is None else spacing
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise VolumeError("distance transform of an empty mask is undefined")
    out = np.where(mask, 0.0, np.inf)
    for axis in range(out.ndim):
        moved = np.ascontiguousarray(np.moveaxis(out, axis, -1))
        lines = moved.reshape(-1, moved.shape[-1])
        _envelope_pass(lines, float(spacing[axis]) ** 2)
        out = np.moveaxis(lines.reshape(moved.shape), -1, axis)
    return np.ascontiguousarray(out)


def edt(mask):
    """Exact Euclidean distance (mm) to the nearest foreground voxel centre; 0 on foreground."""
    return DistanceField(np.sqrt(edt_squared(mask)), mask.spacing)


def edt_squared_brute_force(mask, spacing=None, chunk=2048):
    if isinstance(mask, LabelMask):
        spacing = mask.spacing if spacing is None else spacing
        mask = mask.data
    spacing = np.asarray((1.0, 1.0, 1.0) if spacing is None else spacing, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    src = np.argwhere(mask).astype(np.float64) * spacing
    if len(src) == 0:
        raise VolumeError("distance transform of an empty mask is undefined")
    grid = np.indices(mask.shape).reshape(3, -1).T.astype(np.float64) * spacing
    out = np.empty(len(grid))
    for start in range(0, len(grid), chunk):
        diff = grid[start:start + chunk, None, :] - src[None, :, :]
        sq = diff[..., 0] ** 2 + diff[..., 1] ** 2 + diff[..., 2] ** 2
        out[start:start + chunk] = sq.min(axis=1)
    return out.reshape(mask.shape)


def edt_brute_force(mask):
    """Reference transform by exhaustive minimisation over all foreground voxels.

    O(N * |foreground|); meant as a test oracle for grids up to about 16^3.
    """
    return DistanceField(np.sqrt(edt_squared_brute_force(mask)), mask.spacing)


def signed_dtm(mask, beta=1.0):
    """Signed distance map to the boundary set S, with distances raised to ``beta``.

    Negative inside the structure (excluding S), zero on S, positive outside.
    Distances are measured to the nearest S voxel, so interior voxels adjacent
    to S sit at -1 (unit spacing), not 0.
    """
    if not beta > 0:
        raise ValueError(f"beta must be positive, got {beta}")
    surface = extract_boundary(mask)
    d = np.sqrt(edt_squared(surface))
    mag = d ** beta
    phi = np.where(mask.data, -mag, mag)
    phi[surface.data] = 0.0
    return DistanceField(phi, mask.spacing)


def volume_diagonal(dims, spacing):
    return float(np.sqrt(sum((n * s) ** 2 for n, s in zip(dims, spacing))))


def distance_probability_maps(scar, wall):
    """Soft class targets ``exp(-d')`` for normal wall and scar.

    ``d'`` is zero inside the class region and the Euclidean distance to it
    elsewhere. An empty class gets the constant ``exp(-D)`` with ``D`` the
    physical volume diagonal.
    """
    if scar.dims != wall.dims:
        raise VolumeError("scar and wall masks differ in shape")
    if not wall.any():
        raise VolumeError("wall mask is empty")
    if np.any(scar.data & ~wall.data):
        raise VolumeError("scar mask is not contained in the wall mask")
    normal = wall.data & ~scar.data
    floor = np.exp(-volume_diagonal(wall.dims, wall.spacing))
    maps = []
    for region in (normal, scar.data):
        if region.any():
            maps.append(np.exp(-np.sqrt(edt_squared(region, wall.spacing))))
        else:
            maps.append(np.full(wall.dims, floor))
    return ProbabilityPair(*maps)
