"""Synthetic LGE-like phantoms with gold LA, wall and scar labels.

The LA cavity is a perturbed ellipsoid; the wall is the part of the LA
attention band lying outside the cavity; scars are angular patches of that
wall. Confounder blobs with blood-pool intensity sit well outside the LA to
provoke disconnected false positives.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .distance import edt_squared
from .surface import attention_mask
from .volume import LabelMask, Volume, VolumeError, save_volume


@dataclass(frozen=True)
class PhantomConfig:
    dims: tuple = (32, 32, 32)
    spacing: tuple = (1.0, 1.0, 1.0)
    radii_frac: tuple = (0.28, 0.25, 0.22)  # LA semi-axes as fractions of dims
    radius_jitter: float = 0.08
    center_jitter: float = 1.0  # voxels
    perturbation: float = 0.08  # amplitude of the low-order radial perturbation
    wall_thickness: int = 1
    n_scar: tuple = (1, 4)
    scar_angle: tuple = (0.3, 0.6)  # angular radius of a scar patch, radians
    scar_fraction: tuple = (0.05, 0.5)  # accepted scar share of the wall
    n_confounders: tuple = (0, 3)
    confounder_radius: tuple = (1.5, 2.5)
    confounder_margin: float = 3.0  # mm between a blob and the outer wall
    mu_background: float = 0.25
    mu_blood: float = 0.45
    mu_wall: float = 0.2
    intensity_sigma: float = 0.15  # contrast unit for the scar
    scar_k: float = 3.0
    mu_confounder: float = 0.45
    noise_sigma: float = 0.05

    def __post_init__(self):
        dims = tuple(int(n) for n in self.dims)
        if len(dims) != 3 or any(n < 8 or n % 4 for n in dims):
            raise VolumeError(f"phantom dims must be >= 8 and divisible by 4, got {dims}")
        object.__setattr__(self, "dims", dims)
        for name in ("spacing", "radii_frac", "n_scar", "scar_angle", "scar_fraction",
                     "n_confounders", "confounder_radius"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if self.wall_thickness < 1:
            raise ValueError("wall_thickness must be >= 1")

    @property
    def mu_scar(self):
        return self.mu_wall + self.scar_k * self.intensity_sigma

    def hash(self):
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


class PhantomCase(NamedTuple):
    image: Volume
    la: LabelMask
    wall: LabelMask
    scar: LabelMask


def _unit_vectors(rng, n):
    v = rng.standard_normal((n, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _la_mask(cfg, rng, coords):
    dims = np.array(cfg.dims, dtype=np.float64)
    center = (dims - 1) / 2 + rng.uniform(-cfg.center_jitter, cfg.center_jitter, 3)
    radii = np.array(cfg.radii_frac) * dims
    radii = radii * (1 + rng.uniform(-cfg.radius_jitter, cfg.radius_jitter, 3))
    rel = (coords - center) / radii
    rho = np.linalg.norm(rel, axis=-1)
    u = rel / np.maximum(rho, 1e-12)[..., None]
    # first and second order angular terms, normalised so the amplitude is ~cfg.perturbation
    lin = rng.standard_normal(3)
    quad = rng.standard_normal((3, 3))
    quad = (quad + quad.T) / 2
    shape = u @ lin + np.einsum("...i,ij,...j->...", u, quad, u)
    scale = np.abs(lin).sum() + np.abs(quad).sum()
    bound = 1 + cfg.perturbation * shape / scale
    return rho <= bound, center


def _scar_mask(cfg, rng, wall, center, coords):
    wall_idx = np.argwhere(wall)
    d = (wall_idx * np.array(cfg.spacing) - center * np.array(cfg.spacing)).astype(np.float64)
    d /= np.maximum(np.linalg.norm(d, axis=1, keepdims=True), 1e-12)
    for _ in range(100):
        n = int(rng.integers(cfg.n_scar[0], cfg.n_scar[1] + 1))
        dirs = _unit_vectors(rng, n)
        angles = rng.uniform(cfg.scar_angle[0], cfg.scar_angle[1], n)
        hit = np.zeros(len(wall_idx), dtype=bool)
        for v, a in zip(dirs, angles):
            hit |= d @ v >= np.cos(a)
        frac = hit.mean()
        if cfg.scar_fraction[0] <= frac <= cfg.scar_fraction[1]:
            scar = np.zeros(cfg.dims, dtype=bool)
            scar[tuple(wall_idx[hit].T)] = True
            return scar
    raise VolumeError("could not place scar patches within the configured fraction range")


def _confounders(cfg, rng, la_and_wall, coords):
    spacing = np.array(cfg.spacing)
    far = np.sqrt(edt_squared(la_and_wall, cfg.spacing))
    blobs = np.zeros(cfg.dims, dtype=bool)
    n = int(rng.integers(cfg.n_confounders[0], cfg.n_confounders[1] + 1))
    for _ in range(n):
        r = rng.uniform(*cfg.confounder_radius)
        # blob centres whose whole ball keeps the margin and stays inside the volume
        ok = far >= cfg.confounder_margin + r
        for axis in range(3):
            lo = int(np.ceil(r / spacing[axis]))
            sl = [slice(None)] * 3
            sl[axis] = slice(0, lo)
            ok[tuple(sl)] = False
            sl[axis] = slice(cfg.dims[axis] - lo, None)
            ok[tuple(sl)] = False
        cand = np.argwhere(ok)
        if len(cand) == 0:
            break
        c = cand[rng.integers(len(cand))]
        dist = np.linalg.norm((coords - c) * spacing, axis=-1)
        blobs |= dist <= r
    return blobs


def generate_phantom(cfg=None, seed=0):
    """Return a :class:`PhantomCase` (image, LA, wall, scar); deterministic in ``seed``."""
    cfg = cfg or PhantomConfig()
    rng = np.random.default_rng(seed)
    coords = np.stack(np.indices(cfg.dims), axis=-1).astype(np.float64)
    la, center = _la_mask(cfg, rng, coords)
    if not la.any():
        raise VolumeError("phantom LA is empty; radii too small for the grid")
    la_mask = LabelMask(la, cfg.spacing)
    wall = attention_mask(la_mask, cfg.wall_thickness).data & ~la
    scar = _scar_mask(cfg, rng, wall, center, coords)
    blobs = _confounders(cfg, rng, la | wall, coords)

    img = np.full(cfg.dims, cfg.mu_background)
    img[blobs] = cfg.mu_confounder
    img[la] = cfg.mu_blood
    img[wall] = cfg.mu_wall
    img[scar] = cfg.mu_scar
    if cfg.noise_sigma > 0:
        img = img + cfg.noise_sigma * rng.standard_normal(cfg.dims)
    return PhantomCase(
        Volume(img, cfg.spacing),
        la_mask,
        LabelMask(wall, cfg.spacing),
        LabelMask(scar, cfg.spacing),
    )


def generate_dataset(n, cfg=None, seed=0, out_dir=None):
    """Generate ``n`` cases with seeds ``seed + i``; optionally write them to ``out_dir``.

    Returns ``(cases, manifest)`` where ``manifest`` is a flat dict of strings.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    cfg = cfg or PhantomConfig()
    cases = [generate_phantom(cfg, seed + i) for i in range(n)]
    manifest = {
        "n_cases": str(n),
        "seed": str(seed),
        "config_hash": cfg.hash(),
        "config": json.dumps(asdict(cfg), sort_keys=True),
    }
    if out_dir is not None:
        write_dataset(cases, manifest, out_dir)
    return cases, manifest


CASE_PARTS = ("image", "la", "wall", "scar")


def case_path(out_dir, i, part):
    return Path(out_dir) / f"case{i:03d}_{part}.vol"


def write_dataset(cases, manifest, out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for i, case in enumerate(cases):
        for part, obj in zip(CASE_PARTS, case):
            save_volume(obj, case_path(out_dir, i, part))
    lines = [f"{k} = {v}" for k, v in manifest.items()]
    (out_dir / "manifest.txt").write_text("\n".join(lines) + "\n")


def read_manifest(path):
    out = {}
    for line in Path(path).read_text().splitlines():
        if " = " in line:
            k, v = line.split(" = ", 1)
            out[k] = v
    return out


def split_dataset(cases, k):
    """First ``k`` cases for training, the rest for testing."""
    if not 0 <= k <= len(cases):
        raise ValueError("k out of range")
    return list(cases[:k]), list(cases[k:])
