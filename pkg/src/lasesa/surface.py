"""Boundary and attention masks, scar binarisation, and projection onto the LA surface."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree

from .volume import LabelMask, VolumeError

NORMAL = 0
SCAR = 1
_LABEL_NAMES = {NORMAL: "normal", SCAR: "scar"}

_SIX = ndimage.generate_binary_structure(3, 1)


def _check_boundary_input(mask):
    if not mask.any():
        raise VolumeError("mask is empty; it has no boundary")
    if mask.is_full():
        raise VolumeError("mask fills the whole volume; it has no boundary")


def extract_boundary(mask):
    """Foreground voxels with at least one 6-connected background neighbour.

    Voxels on the volume border count as touching background.
    """
    _check_boundary_input(mask)
    interior = ndimage.binary_erosion(mask.data, structure=_SIX, border_value=0)
    return mask.with_data(mask.data & ~interior)


def attention_mask(la_mask, thickness=1):
    """Band of voxels within Chebyshev distance ``thickness`` of the LA boundary."""
    thickness = int(thickness)
    if thickness < 0:
        raise ValueError("thickness must be nonnegative")
    boundary = extract_boundary(la_mask)
    if thickness == 0:
        return boundary
    cube = np.ones((2 * thickness + 1,) * 3, dtype=bool)
    return la_mask.with_data(ndimage.binary_dilation(boundary.data, structure=cube))


def binarize_scar(pred, spacing=(1.0, 1.0, 1.0)):
    """Scar wherever ``p_scar > p_normal``; exact ties go to normal wall."""
    normal, scar = (np.asarray(a) for a in pred)
    if normal.shape != scar.shape:
        raise VolumeError("probability maps differ in shape")
    return LabelMask(scar > normal, spacing)


@dataclass(frozen=True, eq=False)
class SurfaceLabeling:
    """Class label (NORMAL/SCAR) for each voxel of an LA boundary set.

    ``indices`` is an (n, 3) array of voxel coordinates sorted by linear
    (x fastest) index; ``labels`` holds one uint8 per row.
    """

    indices: np.ndarray
    labels: np.ndarray
    dims: tuple
    spacing: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64).reshape(-1, 3)
        lab = np.asarray(self.labels, dtype=np.uint8).reshape(-1)
        if len(idx) == 0:
            raise VolumeError("surface labeling needs a nonempty surface")
        if len(idx) != len(lab):
            raise VolumeError("one label per surface voxel is required")
        if not np.all(np.isin(lab, (NORMAL, SCAR))):
            raise VolumeError("labels must be NORMAL (0) or SCAR (1)")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "labels", lab)
        object.__setattr__(self, "dims", tuple(int(n) for n in self.dims))
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))

    @classmethod
    def from_masks(cls, surface, scar_on_surface=None):
        idx = _sorted_indices(surface.data)
        labels = np.zeros(len(idx), dtype=np.uint8)
        if scar_on_surface is not None:
            labels[scar_on_surface.data[tuple(idx.T)]] = SCAR
        return cls(idx, labels, surface.dims, surface.spacing)

    @property
    def n_scar(self):
        return int((self.labels == SCAR).sum())

    def same_surface(self, other):
        return self.dims == other.dims and np.array_equal(self.indices, other.indices)

    def to_masks(self):
        """(surface mask, scar-on-surface mask) for visualisation or reuse."""
        surface = np.zeros(self.dims, dtype=bool)
        scar = np.zeros(self.dims, dtype=bool)
        surface[tuple(self.indices.T)] = True
        scar[tuple(self.indices[self.labels == SCAR].T)] = True
        return LabelMask(surface, self.spacing), LabelMask(scar, self.spacing)


def _sorted_indices(mask):
    # argwhere on the transposed array yields z-major (x fastest) order
    zyx = np.argwhere(np.asarray(mask).T)
    return zyx[:, ::-1].copy()


def nearest_surface_index(points, surface_idx, spacing):
    """Row of ``surface_idx`` nearest to each point; ties go to the lowest row.

    Rows of ``surface_idx`` are assumed sorted by linear index, so the lowest
    row is also the smallest linear index.
    """
    spacing = np.asarray(spacing, dtype=np.float64)
    pts = np.asarray(points, dtype=np.float64) * spacing
    surf = surface_idx.astype(np.float64) * spacing
    tree = cKDTree(surf)
    dist, nearest = tree.query(pts, k=1)
    out = np.asarray(nearest, dtype=np.int64).copy()
    # re-check every candidate at (numerically) the same distance
    candidates = tree.query_ball_point(pts, r=dist * (1 + 1e-9) + 1e-9)
    for i, cand in enumerate(candidates):
        if len(cand) > 1:
            cand = np.asarray(cand)
            sq = ((surf[cand] - pts[i]) ** 2).sum(axis=1)
            best = cand[sq == sq.min()]
            out[i] = best.min()
    return out, dist


def project_to_surface(scar, la_mask, d_max=5.0):
    """Label each LA boundary voxel scar if a scar voxel within ``d_max`` mm maps to it.

    Every scar voxel is assigned to its nearest boundary voxel (spacing aware,
    ties to the smallest linear index); assignments farther than ``d_max`` are
    dropped.
    """
    if not d_max > 0:
        raise ValueError("d_max must be positive")
    if scar.dims != la_mask.dims:
        raise VolumeError("scar and LA masks differ in shape")
    surface = extract_boundary(la_mask)
    surf_idx = _sorted_indices(surface.data)
    labels = np.zeros(len(surf_idx), dtype=np.uint8)
    pts = np.argwhere(scar.data)
    if len(pts):
        nearest, dist = nearest_surface_index(pts, surf_idx, la_mask.spacing)
        labels[nearest[dist <= d_max]] = SCAR
    return SurfaceLabeling(surf_idx, labels, la_mask.dims, la_mask.spacing)


def save_labeling(labeling, path):
    """Write ``x,y,z,label`` rows; dims and spacing go in ``<path>.hdr``."""
    path = Path(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "y", "z", "label"])
        for (x, y, z), lab in zip(labeling.indices.tolist(), labeling.labels.tolist()):
            writer.writerow([x, y, z, _LABEL_NAMES[lab]])
    sidecar = Path(str(path) + ".hdr")
    sidecar.write_text(
        "dims = {} {} {}\nspacing = {!r} {!r} {!r}\n".format(*labeling.dims, *labeling.spacing)
    )


def load_labeling(path):
    path = Path(path)
    header = {}
    for line in Path(str(path) + ".hdr").read_text().splitlines():
        if "=" in line:
            key, value = line.split("=", 1)
            header[key.strip()] = value.split()
    dims = tuple(int(v) for v in header["dims"])
    spacing = tuple(float(v) for v in header["spacing"])
    codes = {name: code for code, name in _LABEL_NAMES.items()}
    idx, labels = [], []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            idx.append((int(row["x"]), int(row["y"]), int(row["z"])))
            labels.append(codes[row["label"]])
    return SurfaceLabeling(np.array(idx), np.array(labels), dims, spacing)
