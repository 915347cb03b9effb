"""Classical intensity baselines for scar classification on an LA wall band.

Both baselines classify band voxels by intensity alone and then reuse the
network pipeline's surface projection, so their labelings are directly
comparable with network predictions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .surface import project_to_surface
from .volume import LabelMask

VARIANCE_FLOOR = 1e-6


class BaselineError(ValueError):
    pass


def otsu_threshold(histogram):
    """Cut index ``k`` maximising between-class variance of ``hist[:k]`` vs ``hist[k:]``.

    Bin indices serve as intensities. Ties resolve to the lowest ``k``.
    """
    h = np.asarray(histogram, dtype=np.float64)
    if h.ndim != 1 or np.any(h < 0):
        raise BaselineError("histogram must be a 1D array of nonnegative counts")
    if np.count_nonzero(h) < 2:
        raise BaselineError("histogram needs mass in at least two bins")
    bins = np.arange(len(h), dtype=np.float64)
    total = h.sum()
    c0 = np.cumsum(h)[:-1]  # mass below cut k = 1..n-1
    s0 = np.cumsum(h * bins)[:-1]
    c1 = total - c0
    s1 = (h * bins).sum() - s0
    with np.errstate(invalid="ignore", divide="ignore"):
        score = (c0 / total) * (c1 / total) * (s1 / c1 - s0 / c0) ** 2
    score[(c0 == 0) | (c1 == 0)] = -np.inf
    return int(np.argmax(score)) + 1


def intensity_bins(values, n_bins=256):
    """Map values linearly onto ``0 .. n_bins-1`` using their own min and max."""
    values = np.asarray(values, dtype=np.float64)
    lo, hi = values.min(), values.max()
    if hi == lo:
        return np.zeros(len(values), dtype=np.int64)
    b = np.floor((values - lo) / (hi - lo) * n_bins).astype(np.int64)
    return np.clip(b, 0, n_bins - 1)


def otsu_scar(vol, band, la_mask, d_max=5.0):
    """Otsu on band intensities (256 bins); bright side is scar, then projected."""
    if not band.any():
        raise BaselineError("wall band is empty")
    b = intensity_bins(vol.data[band.data])
    k = otsu_threshold(np.bincount(b, minlength=256))
    scar = np.zeros(band.dims, dtype=bool)
    scar[band.data] = b >= k
    return project_to_surface(LabelMask(scar, band.spacing), la_mask, d_max)


@dataclass
class GmmParams:
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray
    log_likelihood: list = field(default_factory=list)

    @property
    def K(self):
        return len(self.means)

    def log_joint(self, x):
        """(n, K) array of log(weight_k * N(x | mean_k, var_k))."""
        x = np.asarray(x, dtype=np.float64)[:, None]
        with np.errstate(divide="ignore"):
            logw = np.log(self.weights)
        return (
            logw
            - 0.5 * np.log(2 * np.pi * self.variances)
            - 0.5 * (x - self.means) ** 2 / self.variances
        )

    def predict(self, x):
        return np.argmax(self.log_joint(x), axis=1)


def em_fit(samples, K=4, seed=0, max_iter=200, tol=1e-8, jitter=0.0):
    """Fit a 1D Gaussian mixture by EM.

    Initialisation sorts the samples into K equal-count groups; ``jitter``
    (in units of the sample std) optionally perturbs the initial means using
    ``seed``. Iteration stops when the log-likelihood gain drops below ``tol``.
    """
    x = np.asarray(samples, dtype=np.float64).ravel()
    if K < 2:
        raise BaselineError("K must be at least 2")
    if len(x) < 10 * K:
        raise BaselineError(f"need at least {10 * K} samples for K={K}, got {len(x)}")

    groups = np.array_split(np.sort(x), K)
    means = np.array([g.mean() for g in groups])
    variances = np.maximum([g.var() for g in groups], VARIANCE_FLOOR)
    weights = np.array([len(g) for g in groups], dtype=np.float64) / len(x)
    if jitter:
        rng = np.random.default_rng(seed)
        means = means + jitter * x.std() * rng.standard_normal(K)
    params = GmmParams(weights, means, variances)

    for _ in range(max_iter):
        lj = params.log_joint(x)
        norm = logsumexp(lj, axis=1)
        params.log_likelihood.append(float(norm.sum()))
        if len(params.log_likelihood) > 1:
            if params.log_likelihood[-1] - params.log_likelihood[-2] < tol:
                break
        resp = np.exp(lj - norm[:, None])
        nk = resp.sum(axis=0)
        alive = nk > 0
        # a component that lost every sample keeps its old parameters with zero weight
        means = params.means.copy()
        variances = params.variances.copy()
        means[alive] = (resp[:, alive] * x[:, None]).sum(axis=0) / nk[alive]
        variances[alive] = (resp[:, alive] * (x[:, None] - means[alive]) ** 2).sum(axis=0) / nk[alive]
        params = GmmParams(
            nk / nk.sum(),
            means,
            np.maximum(variances, VARIANCE_FLOOR),
            params.log_likelihood,
        )
    return params


def mgmm_scar(vol, band, la_mask, K=4, n_scar_components=1, d_max=5.0, seed=0,
              return_params=False):
    """MGMM baseline: the ``n_scar_components`` brightest components are scar.

    With ``return_params`` the fitted :class:`GmmParams` come back as well.
    """
    if not 1 <= n_scar_components <= K:
        raise BaselineError("n_scar_components must be in 1..K")
    if not band.any():
        raise BaselineError("wall band is empty")
    values = vol.data[band.data]
    params = em_fit(values, K=K, seed=seed)
    scar_components = np.argsort(params.means, kind="stable")[K - n_scar_components:]
    assigned = params.predict(values)
    scar = np.zeros(band.dims, dtype=bool)
    scar[band.data] = np.isin(assigned, scar_components)
    labeling = project_to_surface(LabelMask(scar, band.spacing), la_mask, d_max)
    return (labeling, params) if return_params else labeling
