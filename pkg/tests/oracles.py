"""Slow, independent reference implementations used by the test suite."""

import itertools

import numpy as np


def rel_err(a, b, floor=1e-6):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor))


def central_diff(f, x, idx, h=1e-6):
    """d f / d x[idx] by central differences; ``x`` is modified in place and restored."""
    old = x[idx]
    x[idx] = old + h
    up = f()
    x[idx] = old - h
    down = f()
    x[idx] = old
    return (up - down) / (2 * h)


def boundary_points(mask, spacing):
    """Physical coordinates of 6-connected boundary voxels, by explicit neighbour scan."""
    pts = []
    X, Y, Z = mask.shape
    for x, y, z in itertools.product(range(X), range(Y), range(Z)):
        if not mask[x, y, z]:
            continue
        on_edge = False
        for dx, dy, dz in ((1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)):
            a, b, c = x + dx, y + dy, z + dz
            if not (0 <= a < X and 0 <= b < Y and 0 <= c < Z) or not mask[a, b, c]:
                on_edge = True
                break
        if on_edge:
            pts.append((x * spacing[0], y * spacing[1], z * spacing[2]))
    return np.array(pts, dtype=float)


def directed(a_pts, b_pts):
    out = []
    for p in a_pts:
        out.append(np.sqrt(((b_pts - p) ** 2).sum(axis=1)).min())
    return np.array(out)


def asd_brute(a, b, spacing=(1.0, 1.0, 1.0)):
    pa, pb = boundary_points(a, spacing), boundary_points(b, spacing)
    d = np.concatenate([directed(pa, pb), directed(pb, pa)])
    return d.sum() / d.size


def hd_brute(a, b, spacing=(1.0, 1.0, 1.0)):
    pa, pb = boundary_points(a, spacing), boundary_points(b, spacing)
    return max(directed(pa, pb).max(), directed(pb, pa).max())


def otsu_exhaustive(hist):
    """Cut k maximising between-class variance; class 0 is bins < k. First maximum wins."""
    hist = np.asarray(hist, dtype=float)
    n = hist.size
    total = hist.sum()
    best_k, best = None, -1.0
    for k in range(1, n):
        w0 = hist[:k].sum() / total
        w1 = hist[k:].sum() / total
        if w0 == 0 or w1 == 0:
            continue
        mu0 = (np.arange(k) * hist[:k]).sum() / hist[:k].sum()
        mu1 = (np.arange(k, n) * hist[k:]).sum() / hist[k:].sum()
        var = w0 * w1 * (mu0 - mu1) ** 2
        if var > best * (1 + 1e-12):
            best_k, best = k, var
    return best_k


def dilate_brute(mask, t):
    """Chebyshev-radius dilation by direct enumeration."""
    out = np.zeros_like(mask)
    X, Y, Z = mask.shape
    for x, y, z in np.argwhere(mask):
        out[max(0, x - t):x + t + 1, max(0, y - t):y + t + 1, max(0, z - t):z + t + 1] = True
    return out


def toy_case(n=8, seed=0):
    """Small hand-built LA / wall / scar case (ball LA, scar on the +x half of the wall)."""
    from lasesa.surface import attention_mask
    from lasesa.volume import LabelMask, Volume

    rng = np.random.default_rng(seed)
    idx = np.indices((n, n, n)) - (n - 1) / 2
    la = LabelMask((idx ** 2).sum(axis=0) <= (0.3 * n) ** 2)
    wall = attention_mask(la, 1).data & ~la.data
    scar = wall & (idx[0] > 0)
    image = 0.25 + 0.2 * la.data + 0.4 * scar + 0.05 * rng.standard_normal((n, n, n))
    return Volume(image), la, LabelMask(wall), LabelMask(scar)
