"""SGD training of the two-decoder network, prediction, and checkpoints.

Loss variants select the objective per head:

=================  ===============  =====================
variant            LA head          scar head
=================  ===============  =====================
single-task-BCE    BCE              BCE (normal + scar)
single-task-SE     BCE + SE         SE
single-task-Dice   BCE              soft Dice
MTL-BCE            BCE              BCE (normal + scar)
MTL-SE             BCE + SE         SE
MTL-SESA           BCE + SE         SE + SA(M1) + SA(M2)
=================  ===============  =====================

Single-task variants train one network per head; MTL variants one network
with both heads.
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np

from . import losses
from .distance import ProbabilityPair, distance_probability_maps, signed_dtm
from .losses import LambdaSet, lambda_schedule
from .network import (
    NetworkConfig,
    backward,
    build_network,
    forward,
    forward_with_cache,
    make_views,
)
from .surface import SurfaceLabeling, attention_mask, binarize_scar, project_to_surface
from .volume import LabelMask, zscore_normalize

LA_LOSSES = ("bce", "bce+se")
SCAR_LOSSES = ("bce", "dice", "se", "sesa")

VARIANTS = {
    "single-task-BCE": (False, "bce", "bce"),
    "single-task-SE": (False, "bce+se", "se"),
    "single-task-Dice": (False, "bce", "dice"),
    "MTL-BCE": (True, "bce", "bce"),
    "MTL-SE": (True, "bce+se", "se"),
    "MTL-SESA": (True, "bce+se", "sesa"),
}


class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 0.001
    lr_decay_every: int = 4000
    lr_decay_factor: float = 10.0
    momentum: float = 0.9
    weight_decay: float = 1e-4
    lambdas: LambdaSet = field(default_factory=LambdaSet)
    lambda_factor: float = 1.1
    lambda_every: int = 200
    iterations: int = 1000
    seed: int = 0
    la_loss: Optional[str] = "bce+se"
    scar_loss: Optional[str] = "sesa"
    beta: float = 1.0
    thickness: int = 1
    clip_norm: Optional[float] = None  # cap on the L2 norm of each loss gradient

    def __post_init__(self):
        if isinstance(self.lambdas, dict):
            object.__setattr__(self, "lambdas", LambdaSet(**self.lambdas))
        if not self.lr0 > 0:
            raise ValueError("lr0 must be positive")
        if self.clip_norm is not None and not self.clip_norm > 0:
            raise ValueError("clip_norm must be positive or None")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.la_loss is not None and self.la_loss not in LA_LOSSES:
            raise ValueError(f"la_loss must be one of {LA_LOSSES} or None")
        if self.scar_loss is not None and self.scar_loss not in SCAR_LOSSES:
            raise ValueError(f"scar_loss must be one of {SCAR_LOSSES} or None")

    def lr(self, t):
        return self.lr0 * self.lr_decay_factor ** (-(t // self.lr_decay_every))


def variant_configs(variant, net_cfg, train_cfg):
    """(NetworkConfig, TrainConfig) pairs needed to train ``variant``."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; choose from {sorted(VARIANTS)}")
    mtl, la_loss, scar_loss = VARIANTS[variant]
    if mtl:
        return [(replace(net_cfg, heads=("la", "scar")),
                 replace(train_cfg, la_loss=la_loss, scar_loss=scar_loss))]
    return [
        (replace(net_cfg, heads=("la",)), replace(train_cfg, la_loss=la_loss, scar_loss=None)),
        (replace(net_cfg, heads=("scar",)), replace(train_cfg, la_loss=None, scar_loss=scar_loss)),
    ]


class TrainingCase(NamedTuple):
    image: np.ndarray  # z-scored intensities
    la: LabelMask
    scar: LabelMask
    normal: LabelMask  # wall minus scar
    phi: np.ndarray
    probs: ProbabilityPair
    m1: LabelMask


def prepare_case(image, la, wall, scar, beta=1.0, thickness=1):
    """Precompute the static targets of one case (they depend only on gold labels)."""
    norm = zscore_normalize(image)
    return TrainingCase(
        image=norm.data,
        la=la,
        scar=scar,
        normal=wall.with_data(wall.data & ~scar.data),
        phi=signed_dtm(la, beta).data,
        probs=distance_probability_maps(scar, wall),
        m1=attention_mask(la, thickness),
    )


def predicted_attention(y_hat, spacing, thickness):
    """M2 from the current prediction, or None when the prediction has no boundary."""
    la = y_hat > 0.5
    if not la.any() or la.all():
        return None
    return attention_mask(LabelMask(la, spacing), thickness)


def objective(cfg, case, y_hat, p_hat, lambdas, m2=None):
    """Scalar objective, output gradients and unweighted components for one case.

    ``m2`` is treated as a constant (no gradient flows through its construction).
    """
    comp = dict.fromkeys(("bce", "se_la", "se_scar", "sa_m1", "sa_m2", "bce_scar", "dice_scar"), 0.0)
    total = 0.0
    grad_y = grad_p = None

    if cfg.la_loss is not None:
        bce = losses.bce_loss(y_hat, case.la)
        comp["bce"] = bce.scalar
        total += bce.scalar
        grad_y = bce.grad
        if cfg.la_loss == "bce+se":
            se = losses.se_loss_la(y_hat, case.phi)
            comp["se_la"] = se.scalar
            total += lambdas.lambda_la * se.scalar
            grad_y = grad_y + lambdas.lambda_la * se.grad

    if cfg.scar_loss in ("bce", "dice"):
        fn = losses.bce_loss if cfg.scar_loss == "bce" else losses.soft_dice_loss
        parts = [fn(p_hat.normal, case.normal), fn(p_hat.scar, case.scar)]
        value = parts[0].scalar + parts[1].scalar
        comp["bce_scar" if cfg.scar_loss == "bce" else "dice_scar"] = value
        total += value
        grad_p = ProbabilityPair(parts[0].grad, parts[1].grad)
    elif cfg.scar_loss in ("se", "sesa"):
        se = losses.se_loss_scar(p_hat, case.probs)
        comp["se_scar"] = se.scalar
        total += lambdas.lambda_scar * se.scalar
        gn = lambdas.lambda_scar * se.grad.normal
        gs = lambdas.lambda_scar * se.grad.scar
        if cfg.scar_loss == "sesa":
            sa1 = losses.sa_loss(p_hat, case.probs, case.m1)
            comp["sa_m1"] = sa1.scalar
            total += lambdas.lambda_m1 * sa1.scalar
            gn = gn + lambdas.lambda_m1 * sa1.grad.normal
            gs = gs + lambdas.lambda_m1 * sa1.grad.scar
            if m2 is not None:
                sa2 = losses.sa_loss(p_hat, case.probs, m2)
                comp["sa_m2"] = sa2.scalar
                total += lambdas.lambda_m2 * sa2.scalar
                gn = gn + lambdas.lambda_m2 * sa2.grad.normal
                gs = gs + lambdas.lambda_m2 * sa2.grad.scar
        grad_p = ProbabilityPair(gn, gs)
    comp["total"] = total
    return total, grad_y, grad_p, comp


def sgd_step(net, grads, t, cfg):
    """Momentum SGD with L2 weight decay folded into the gradient.

    With ``cfg.clip_norm`` set, a loss gradient longer than that is rescaled
    to that length first; the weight-decay term is added unclipped.
    """
    if not np.all(np.isfinite(grads)):
        bad = [name for name, view in make_views(net.config, grads).items() if not np.all(np.isfinite(view))]
        raise TrainingError(f"non-finite gradient at iteration {t} in: {', '.join(bad)}")
    if cfg.clip_norm is not None:
        norm = np.linalg.norm(grads)
        if norm > cfg.clip_norm:
            grads = grads * (cfg.clip_norm / norm)
    net.velocity *= cfg.momentum
    net.velocity += grads + cfg.weight_decay * net.theta
    net.theta -= cfg.lr(t) * net.velocity


LOG_COLUMNS = ("iteration", "case", "lr", "lambda_la", "lambda_scar", "lambda_m1", "lambda_m2",
               "bce", "se_la", "se_scar", "sa_m1", "sa_m2", "bce_scar", "dice_scar", "total")


def scar_targets(case, scar_loss):
    """(normal, scar) target fields the scar head is fitted to under ``scar_loss``."""
    if scar_loss in ("bce", "dice"):
        return case.normal.data.astype(float), case.scar.data.astype(float)
    return case.probs.normal, case.probs.scar


def init_scar_prior(net, dataset, scar_loss):
    """Set the scar-head bias to the logit of the mean training target.

    With summed squared error behind a logistic output, a randomly biased head
    is pushed towards zero everywhere (most targets are ~0) and then sits in
    the saturated region where the gradient vanishes. Starting at the target
    prior avoids that first collapse.
    """
    means = np.array([np.mean([scar_targets(c, scar_loss)[k].mean() for c in dataset]) for k in (0, 1)])
    means = np.clip(means, 1e-3, 1 - 1e-3)
    net.views["scar.out.b"][...] = np.log(means / (1 - means))


def train(dataset, cfg, net_cfg, net=None):
    """Train on a list of :class:`TrainingCase`; returns ``(net, log_rows)``.

    One case per iteration, visited in a seeded permutation that is redrawn
    every epoch. Deterministic given (dataset order, cfg, net_cfg). A fresh
    network with a scar head starts from :func:`init_scar_prior`.
    """
    if not dataset:
        raise TrainingError("empty training set")
    rng = np.random.default_rng(cfg.seed)
    if net is None:
        net = build_network(net_cfg, cfg.seed)
        if "scar" in net_cfg.heads and cfg.scar_loss is not None:
            init_scar_prior(net, dataset, cfg.scar_loss)
    log = []
    order = []
    for t in range(cfg.iterations):
        if not order:
            order = list(rng.permutation(len(dataset)))
        i = int(order.pop(0))
        case = dataset[i]
        lam = lambda_schedule(cfg.lambdas, t, cfg.lambda_factor, cfg.lambda_every)
        y_hat, p_hat, cache = forward_with_cache(net, case.image)
        m2 = None
        if cfg.scar_loss == "sesa" and y_hat is not None:
            m2 = predicted_attention(y_hat, case.la.spacing, cfg.thickness)
        total, grad_y, grad_p, comp = objective(cfg, case, y_hat, p_hat, lam, m2)
        if not np.isfinite(total):
            raise TrainingError(f"non-finite loss at iteration {t}: {comp}")
        grads = backward(net, case.image, grad_y, grad_p, cache=cache)
        sgd_step(net, grads, t, cfg)
        row = {"iteration": t, "case": i, "lr": cfg.lr(t), "lambda_la": lam.lambda_la,
               "lambda_scar": lam.lambda_scar, "lambda_m1": lam.lambda_m1, "lambda_m2": lam.lambda_m2}
        row.update(comp)
        log.append(row)
    return net, log


class Prediction(NamedTuple):
    la: Optional[LabelMask]
    scar: Optional[LabelMask]
    labeling: Optional[SurfaceLabeling]


def wall_band(la, thickness=1):
    """Attention band of ``la`` with the cavity removed: where the wall can be."""
    band = attention_mask(la, thickness)
    return band.with_data(band.data & ~la.data)


def predict(net, vol, d_max=5.0, surface_la=None, band_thickness=1):
    """Threshold the heads and project scar onto an LA surface.

    ``net`` is one network or a list whose heads are combined (the two
    networks of a single-task variant). LA is ``y_hat > 0.5``. Scar is the comparison rule restricted to the wall
    band (attention band minus cavity) of the predicted LA, or of
    ``surface_la`` for a scar-only network. Scar is projected onto
    ``surface_la`` when given, else onto the predicted LA. Outputs that need
    an LA boundary are None when none exists. ``vol`` must already be
    normalised the way training inputs were.
    """
    spacing = getattr(vol, "spacing", (1.0, 1.0, 1.0))
    y_hat = p_hat = None
    for n in (net if isinstance(net, (list, tuple)) else [net]):
        y, p = forward(n, vol)
        y_hat = y if y is not None else y_hat
        p_hat = p if p is not None else p_hat
    la = None
    if y_hat is not None:
        la = LabelMask(y_hat > 0.5, spacing)
    band_source = la if la is not None else surface_la
    if band_source is None or not band_source.any() or band_source.is_full():
        return Prediction(la, None, None)
    if p_hat is None:
        return Prediction(la, None, None)
    band = wall_band(band_source, band_thickness)
    scar = binarize_scar(p_hat, spacing)
    scar = scar.with_data(scar.data & band.data)
    target = surface_la if surface_la is not None else la
    return Prediction(la, scar, project_to_surface(scar, target, d_max))


# -- checkpoints --------------------------------------------------------------
#
# Layout (little-endian):
#   8 bytes  magic b"LASESACK"
#   u32      version (1)
#   u64      iteration counter
#   u32      length of the UTF-8 JSON config blob, then the blob
#            ({"network": NetworkConfig fields, "train": TrainConfig fields})
#   u32      number of tensors, then per tensor:
#            u16 name length, name (UTF-8), u8 ndim, u32[ndim] shape,
#            f64 values (C order)
#   then the same tensor list again for the momentum buffers.

CKPT_MAGIC = b"LASESACK"
CKPT_VERSION = 1


def _config_blob(net_cfg, train_cfg):
    blob = {"network": asdict(net_cfg)}
    if train_cfg is not None:
        blob["train"] = asdict(train_cfg)
    return json.dumps(blob, sort_keys=True).encode()


def _write_tensors(buf, net, flat):
    views = make_views(net.config, flat)
    buf.write(struct.pack("<I", len(views)))
    for name, arr in views.items():
        raw = name.encode()
        buf.write(struct.pack("<H", len(raw)) + raw)
        buf.write(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def checkpoint_bytes(net, iteration=0, train_cfg=None):
    buf = io.BytesIO()
    buf.write(CKPT_MAGIC + struct.pack("<IQ", CKPT_VERSION, iteration))
    blob = _config_blob(net.config, train_cfg)
    buf.write(struct.pack("<I", len(blob)) + blob)
    _write_tensors(buf, net, net.theta)
    _write_tensors(buf, net, net.velocity)
    return buf.getvalue()


def save_checkpoint(net, path, iteration=0, train_cfg=None):
    data = checkpoint_bytes(net, iteration, train_cfg)
    Path(path).write_bytes(data)
    return hashlib.sha256(data).hexdigest()


def _read_tensors(raw, pos, net, flat):
    views = make_views(net.config, flat)
    (count,) = struct.unpack_from("<I", raw, pos)
    pos += 4
    if count != len(views):
        raise TrainingError("checkpoint tensor count does not match its config")
    for _ in range(count):
        (n,) = struct.unpack_from("<H", raw, pos)
        name = raw[pos + 2:pos + 2 + n].decode()
        pos += 2 + n
        (ndim,) = struct.unpack_from("<B", raw, pos)
        shape = struct.unpack_from(f"<{ndim}I", raw, pos + 1)
        pos += 1 + 4 * ndim
        size = int(np.prod(shape))
        if name not in views or views[name].shape != tuple(shape):
            raise TrainingError(f"checkpoint tensor {name} {shape} does not fit the network")
        views[name][...] = np.frombuffer(raw, dtype="<f8", count=size, offset=pos).reshape(shape)
        pos += 8 * size
    return pos


def load_checkpoint(path):
    """Return ``(net, iteration, train_cfg_dict_or_None)``."""
    raw = Path(path).read_bytes()
    if raw[:8] != CKPT_MAGIC:
        raise TrainingError(f"{path}: not a checkpoint file")
    version, iteration = struct.unpack_from("<IQ", raw, 8)
    if version != CKPT_VERSION:
        raise TrainingError(f"{path}: unsupported checkpoint version {version}")
    pos = 20
    (n,) = struct.unpack_from("<I", raw, pos)
    blob = json.loads(raw[pos + 4:pos + 4 + n].decode())
    pos += 4 + n
    net = build_network(NetworkConfig(**blob["network"]), 0)
    net.theta[...] = 0.0
    pos = _read_tensors(raw, pos, net, net.theta)
    _read_tensors(raw, pos, net, net.velocity)
    return net, iteration, blob.get("train")
