"""A small 3D U-Net with one shared encoder and one decoder per task, in plain numpy.

Layout for depth ``L`` and base width ``C`` (width at level l is ``C * 2**l``)::

    encoder level l = 0..L : [avgpool2 if l > 0] conv3 -> relu -> conv3 -> relu
    decoder level l = L-1..0 (per head) : upsample2(level l+1) ++ skip_l -> conv3 -> relu
    head : conv1 -> logistic   (LA: 1 channel, scar: 2 channels [normal, scar])

Every conv uses zero "same" padding. Parameters live in one flat float64
vector; ``Network.views`` exposes named reshaped views into it, and parameter
gradients use the same flat layout.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .distance import ProbabilityPair

HEAD_CHANNELS = {"la": 1, "scar": 2}


class NetworkError(ValueError):
    pass


@dataclass(frozen=True)
class NetworkConfig:
    dims: tuple = (32, 32, 32)
    base_channels: int = 8
    depth: int = 2
    heads: tuple = ("la", "scar")
    in_channels: int = 1
    zero_heads: bool = False

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(n) for n in self.dims))
        object.__setattr__(self, "heads", tuple(self.heads))
        if self.base_channels < 1 or self.depth < 0:
            raise NetworkError("base_channels must be >= 1 and depth >= 0")
        if any(n % (2 ** self.depth) for n in self.dims):
            raise NetworkError(f"dims {self.dims} not divisible by 2**depth = {2 ** self.depth}")
        if not self.heads or any(h not in HEAD_CHANNELS for h in self.heads):
            raise NetworkError(f"heads must be a nonempty subset of {tuple(HEAD_CHANNELS)}")

    def width(self, level):
        return self.base_channels * 2 ** level


def parameter_layout(cfg):
    """Ordered list of (name, shape) for every parameter tensor."""
    layout = []

    def conv(name, cin, cout, k=3):
        layout.append((name + ".W", (cout, cin, k, k, k)))
        layout.append((name + ".b", (cout,)))

    cin = cfg.in_channels
    for l in range(cfg.depth + 1):
        conv(f"enc{l}.conv1", cin, cfg.width(l))
        conv(f"enc{l}.conv2", cfg.width(l), cfg.width(l))
        cin = cfg.width(l)
    for head in cfg.heads:
        for l in reversed(range(cfg.depth)):
            conv(f"{head}.dec{l}", cfg.width(l + 1) + cfg.width(l), cfg.width(l))
        layout.append((f"{head}.out.W", (HEAD_CHANNELS[head], cfg.width(0))))
        layout.append((f"{head}.out.b", (HEAD_CHANNELS[head],)))
    return layout


def parameter_count(cfg):
    return sum(int(np.prod(shape)) for _, shape in parameter_layout(cfg))


@dataclass(eq=False)
class Network:
    config: NetworkConfig
    theta: np.ndarray
    velocity: np.ndarray
    views: dict = field(default_factory=dict)

    def __post_init__(self):
        self.views = make_views(self.config, self.theta)

    def copy(self):
        return Network(self.config, self.theta.copy(), self.velocity.copy())


def make_views(cfg, flat):
    views = {}
    offset = 0
    for name, shape in parameter_layout(cfg):
        n = int(np.prod(shape))
        views[name] = flat[offset:offset + n].reshape(shape)
        offset += n
    if offset != flat.size:
        raise NetworkError(f"parameter vector has {flat.size} entries, layout needs {offset}")
    return views


def build_network(cfg, seed=0):
    """Fan-in scaled uniform init (He-style bound sqrt(6 / fan_in)); biases zero."""
    rng = np.random.default_rng(seed)
    theta = np.zeros(parameter_count(cfg))
    net = Network(cfg, theta, np.zeros_like(theta))
    for name, shape in parameter_layout(cfg):
        if not name.endswith(".W"):
            continue
        if cfg.zero_heads and ".out." in name:
            continue
        fan_in = int(np.prod(shape[1:]))
        bound = np.sqrt(6.0 / fan_in)
        net.views[name][...] = rng.uniform(-bound, bound, size=shape)
    return net


# -- layer primitives --------------------------------------------------------

def _im2col(x):
    c, X, Y, Z = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (1, 1)))
    cols = np.empty((c, 27, X, Y, Z))
    k = 0
    for i in range(3):
        for j in range(3):
            for l in range(3):
                cols[:, k] = xp[:, i:i + X, j:j + Y, l:l + Z]
                k += 1
    return cols.reshape(c * 27, X * Y * Z)


def _col2im(dcols, shape):
    c, X, Y, Z = shape
    dcols = dcols.reshape(c, 27, X, Y, Z)
    dxp = np.zeros((c, X + 2, Y + 2, Z + 2))
    k = 0
    for i in range(3):
        for j in range(3):
            for l in range(3):
                dxp[:, i:i + X, j:j + Y, l:l + Z] += dcols[:, k]
                k += 1
    return dxp[:, 1:-1, 1:-1, 1:-1]


def conv3_forward(x, W, b):
    cols = _im2col(x)
    y = W.reshape(W.shape[0], -1) @ cols + b[:, None]
    return y.reshape((W.shape[0],) + x.shape[1:]), cols


def conv3_backward(dy, cols, W, x_shape):
    dy2 = dy.reshape(dy.shape[0], -1)
    dW = (dy2 @ cols.T).reshape(W.shape)
    db = dy2.sum(axis=1)
    dx = _col2im(W.reshape(W.shape[0], -1).T @ dy2, x_shape)
    return dx, dW, db


def avgpool2(x):
    c, X, Y, Z = x.shape
    return x.reshape(c, X // 2, 2, Y // 2, 2, Z // 2, 2).mean(axis=(2, 4, 6))


def avgpool2_backward(dy):
    return upsample2(dy) / 8.0


def upsample2(x):
    return x.repeat(2, axis=1).repeat(2, axis=2).repeat(2, axis=3)


def upsample2_backward(dy):
    c, X, Y, Z = dy.shape
    return dy.reshape(c, X // 2, 2, Y // 2, 2, Z // 2, 2).sum(axis=(2, 4, 6))


def sigmoid(z):
    # split form avoids overflow in exp for large |z|
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


# -- network forward / backward ---------------------------------------------

def _input_array(cfg, vol):
    x = np.asarray(getattr(vol, "data", vol), dtype=np.float64)
    if x.shape != cfg.dims:
        raise NetworkError(f"input dims {x.shape} do not match network dims {cfg.dims}")
    return x[None]


def forward_with_cache(net, vol):
    cfg = net.config
    P = net.views
    cache = {}
    h = _input_array(cfg, vol)
    skips = []
    for l in range(cfg.depth + 1):
        if l > 0:
            h = avgpool2(h)
        for conv in ("conv1", "conv2"):
            name = f"enc{l}.{conv}"
            pre, cols = conv3_forward(h, P[name + ".W"], P[name + ".b"])
            cache[name] = (cols, h.shape)
            h = np.maximum(pre, 0.0)
            cache[name + ".relu"] = h
        skips.append(h)

    outputs = {}
    for head in cfg.heads:
        h = skips[cfg.depth]
        for l in reversed(range(cfg.depth)):
            name = f"{head}.dec{l}"
            z = np.concatenate([upsample2(h), skips[l]], axis=0)
            pre, cols = conv3_forward(z, P[name + ".W"], P[name + ".b"])
            cache[name] = (cols, z.shape)
            h = np.maximum(pre, 0.0)
            cache[name + ".relu"] = h
        W, b = P[f"{head}.out.W"], P[f"{head}.out.b"]
        cache[f"{head}.out"] = h
        logits = np.tensordot(W, h, axes=(1, 0)) + b[:, None, None, None]
        outputs[head] = sigmoid(logits)

    y_hat = outputs["la"][0] if "la" in outputs else None
    p_hat = ProbabilityPair(outputs["scar"][0], outputs["scar"][1]) if "scar" in outputs else None
    cache["outputs"] = outputs
    return y_hat, p_hat, cache


def forward(net, vol):
    """Return ``(y_hat, p_hat)``; a missing head yields None in its slot."""
    y_hat, p_hat, _ = forward_with_cache(net, vol)
    return y_hat, p_hat


def backward(net, vol, grad_y, grad_p, cache=None):
    """Gradient of ``sum(grad_y * y_hat) + sum(grad_p * p_hat)`` w.r.t. all parameters.

    ``grad_y`` / ``grad_p`` are gradients w.r.t. the logistic outputs; either
    may be None (treated as zero). Returns a flat vector laid out like ``theta``.
    """
    cfg = net.config
    P = net.views
    if cache is None:
        _, _, cache = forward_with_cache(net, vol)
    grad = np.zeros_like(net.theta)
    G = make_views(cfg, grad)
    outputs = cache["outputs"]

    head_grads = {}
    if "la" in cfg.heads and grad_y is not None:
        head_grads["la"] = np.asarray(grad_y, dtype=np.float64)[None]
    if "scar" in cfg.heads and grad_p is not None:
        head_grads["scar"] = np.stack([np.asarray(g, dtype=np.float64) for g in grad_p])
    for head, g in head_grads.items():
        if g.shape != outputs[head].shape:
            raise NetworkError(f"{head} gradient shape {g.shape} != output {outputs[head].shape}")

    d_skips = [None] * (cfg.depth + 1)

    def add_skip(l, d):
        d_skips[l] = d if d_skips[l] is None else d_skips[l] + d

    for head in cfg.heads:
        if head not in head_grads:
            continue
        s = outputs[head]
        dlogit = head_grads[head] * s * (1.0 - s)
        h = cache[f"{head}.out"]
        G[f"{head}.out.W"][...] = np.tensordot(dlogit, h, axes=([1, 2, 3], [1, 2, 3]))
        G[f"{head}.out.b"][...] = dlogit.sum(axis=(1, 2, 3))
        dh = np.tensordot(P[f"{head}.out.W"], dlogit, axes=(0, 0))
        for l in range(cfg.depth):
            name = f"{head}.dec{l}"
            dpre = dh * (cache[name + ".relu"] > 0)
            cols, z_shape = cache[name]
            dz, dW, db = conv3_backward(dpre, cols, P[name + ".W"], z_shape)
            G[name + ".W"][...] = dW
            G[name + ".b"][...] = db
            c_up = cfg.width(l + 1)
            add_skip(l, dz[c_up:])
            dh = upsample2_backward(dz[:c_up])
        add_skip(cfg.depth, dh)

    dh = None
    for l in reversed(range(cfg.depth + 1)):
        if d_skips[l] is not None:
            dh = d_skips[l] if dh is None else dh + d_skips[l]
        if dh is None:
            continue
        for conv in ("conv2", "conv1"):
            name = f"enc{l}.{conv}"
            dpre = dh * (cache[name + ".relu"] > 0)
            cols, x_shape = cache[name]
            dh, dW, db = conv3_backward(dpre, cols, P[name + ".W"], x_shape)
            G[name + ".W"][...] = dW
            G[name + ".b"][...] = db
        if l > 0:
            dh = avgpool2_backward(dh)
    return grad
