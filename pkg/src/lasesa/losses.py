"""Segmentation losses with analytic gradients w.r.t. the network outputs.

All losses are sums over voxels (not means). Reductions use ``math.fsum``
over a C-ordered flattening, so scalars are exact roundings of the true sum
and do not depend on BLAS or thread count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from .distance import ProbabilityPair

EPS = 1e-7


class LossValue(NamedTuple):
    """Scalar loss plus its gradient(s), shaped like the prediction(s)."""

    scalar: float
    grad: object


@dataclass(frozen=True)
class LambdaSet:
    lambda_la: float = 0.01
    lambda_scar: float = 10.0
    lambda_m1: float = 0.01
    lambda_m2: float = 0.001
    iteration: int = 0

    def __post_init__(self):
        for name in ("lambda_la", "lambda_scar", "lambda_m1", "lambda_m2"):
            if not getattr(self, name) >= 0:
                raise ValueError(f"{name} must be nonnegative")


def _arr(x):
    return np.asarray(getattr(x, "data", x), dtype=np.float64)


def _same_shape(*arrays):
    shape = arrays[0].shape
    for a in arrays[1:]:
        if a.shape != shape:
            raise ValueError(f"shape mismatch: {shape} vs {a.shape}")


def _sum(a):
    return math.fsum(np.ravel(a).tolist())


def bce_loss(pred, target):
    """Negated Bernoulli log-likelihood, summed over voxels.

    ``pred`` is clamped to [EPS, 1-EPS] before the logs; the gradient is
    evaluated at the clamped value.
    """
    p = np.clip(_arr(pred), EPS, 1.0 - EPS)
    y = _arr(target)
    _same_shape(p, y)
    terms = y * np.log(p) + (1.0 - y) * np.log1p(-p)
    grad = -(y / p - (1.0 - y) / (1.0 - p))
    return LossValue(-_sum(terms), grad)


def se_loss_la(pred, phi):
    """Spatially encoded LA term: sum of (pred - 0.5) * phi."""
    p = _arr(pred)
    phi = _arr(phi)
    _same_shape(p, phi)
    return LossValue(_sum((p - 0.5) * phi), phi.copy())


def se_loss_scar(pred, target):
    """Squared error between predicted and target distance-probability maps."""
    pn, ps = _arr(pred[0]), _arr(pred[1])
    tn, ts = _arr(target[0]), _arr(target[1])
    _same_shape(pn, ps, tn, ts)
    rn, rs = pn - tn, ps - ts
    return LossValue(_sum(rn * rn) + _sum(rs * rs), ProbabilityPair(2.0 * rn, 2.0 * rs))


def sa_loss(pred, target, mask):
    """Masked squared error on the class-probability difference normal - scar."""
    pn, ps = _arr(pred[0]), _arr(pred[1])
    tn, ts = _arr(target[0]), _arr(target[1])
    m = _arr(mask)
    _same_shape(pn, ps, tn, ts, m)
    r = m * ((pn - ps) - (tn - ts))
    g = 2.0 * m * r
    return LossValue(_sum(r * r), ProbabilityPair(g, -g))


class TotalLoss(NamedTuple):
    scalar: float
    grad_la: np.ndarray
    grad_scar: ProbabilityPair
    components: dict


def total_loss(y_pred, y, phi, p_pred, p, m1, m2, lambdas):
    """Weighted objective over both heads.

    ``m2`` may be None (predicted LA empty or full); its term then contributes
    zero. Component values are returned unweighted in ``components``.
    """
    bce = bce_loss(y_pred, y)
    se_la = se_loss_la(y_pred, phi)
    se_scar = se_loss_scar(p_pred, p)
    sa1 = sa_loss(p_pred, p, m1)
    if m2 is None:
        zero = np.zeros_like(_arr(p_pred[0]))
        sa2 = LossValue(0.0, ProbabilityPair(zero, zero))
    else:
        sa2 = sa_loss(p_pred, p, m2)

    lam = lambdas
    scalar = bce.scalar
    scalar += lam.lambda_la * se_la.scalar
    scalar += lam.lambda_scar * se_scar.scalar
    scalar += lam.lambda_m1 * sa1.scalar
    scalar += lam.lambda_m2 * sa2.scalar

    grad_la = bce.grad + lam.lambda_la * se_la.grad
    grad_scar = ProbabilityPair(
        *(
            lam.lambda_scar * se_scar.grad[c]
            + lam.lambda_m1 * sa1.grad[c]
            + lam.lambda_m2 * sa2.grad[c]
            for c in range(2)
        )
    )
    components = {
        "bce": bce.scalar,
        "se_la": se_la.scalar,
        "se_scar": se_scar.scalar,
        "sa_m1": sa1.scalar,
        "sa_m2": sa2.scalar,
    }
    return TotalLoss(scalar, grad_la, grad_scar, components)


def lambda_schedule(base, iteration, factor=1.1, every=200):
    """Grow lambda_la and lambda_m2 by ``factor`` every ``every`` iterations."""
    if iteration < 0:
        raise ValueError("iteration must be nonnegative")
    g = factor ** (iteration // every)
    return replace(
        base,
        lambda_la=base.lambda_la * g,
        lambda_m2=base.lambda_m2 * g,
        iteration=iteration,
    )


def soft_dice_loss(pred, target, smooth=1.0):
    """1 - soft Dice; only used by the Dice-objective comparison variant."""
    p = _arr(pred)
    g = _arr(target)
    _same_shape(p, g)
    inter = _sum(p * g)
    denom = _sum(p) + _sum(g) + smooth
    num = 2.0 * inter + smooth
    grad = -(2.0 * g * denom - num) / (denom * denom)
    return LossValue(1.0 - num / denom, grad)
