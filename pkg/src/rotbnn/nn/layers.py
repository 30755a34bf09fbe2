"""Layers with explicit forward caches and manual backward passes.

Every layer's ``forward(x, ctx)`` returns ``(y, cache)`` and
``backward(gy, cache)`` returns ``(gx, param_grads)``. Parameters live in the
``params`` dict as float64 arrays and are updated in place by the optimizer.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..quantize import ApproxSchedule, approx_backward, approx_forward, ste_backward
from ..rotation import RotationPair, rotate_flat, rotate_flat_adjoint, sign
from ..linalg import ShapeError


class ContractError(RuntimeError):
    """A layer was driven outside its calling contract (e.g. backward without a cache)."""


@dataclass(frozen=True)
class Variant:
    """Which ingredients are active: approximation (T), rotation (R), adjustment (A).

    ``scale`` multiplies the binary weights by the XNOR factor ``mean |w~|``;
    the full RBNN composition binarizes to pure +-1.
    """

    name: str
    approx: bool = False
    rotate: bool = False
    adjust: bool = False
    scale: bool = True


VARIANTS = {
    "B": Variant("B"),
    "B+R": Variant("B+R", rotate=True),
    "B+T": Variant("B+T", approx=True),
    "B+T+R": Variant("B+T+R", approx=True, rotate=True),
    "B+T+R+A": Variant("B+T+R+A", approx=True, rotate=True, adjust=True, scale=False),
}
VARIANT_ALIASES = {"rbnn": "B+T+R+A", "baseline-xnor": "B", "xnor": "B"}


def get_variant(name: str) -> Variant:
    key = VARIANT_ALIASES.get(name, name)
    try:
        return VARIANTS[key]
    except KeyError:
        choices = sorted(VARIANTS) + sorted(VARIANT_ALIASES)
        raise ValueError(f"unknown variant {name!r}; choose from {choices}") from None


@dataclass
class Context:
    """Per-forward settings shared by all layers."""

    variant: Variant
    sched: ApproxSchedule | None = None
    train: bool = True
    batch_stats: bool | None = None

    @property
    def use_approx(self) -> bool:
        return self.train and self.variant.approx and self.sched is not None

    @property
    def use_batch_stats(self) -> bool:
        return self.train if self.batch_stats is None else self.batch_stats


class Layer:
    kind = "layer"
    binarized = False

    def __init__(self, name: str):
        self.name = name
        self.params: dict[str, np.ndarray] = {}

    def forward(self, x, ctx: Context):
        raise NotImplementedError

    def backward(self, gy, cache):
        raise NotImplementedError

    @staticmethod
    def _need(cache):
        if cache is None:
            raise ContractError("backward called without a forward cache")
        return cache


# ---------------------------------------------------------------- binarization


def _binarize_input(x, ctx: Context):
    if ctx.use_approx:
        return approx_forward(x, ctx.sched)
    return sign(x)


def _input_grad(gxb, x, ctx: Context):
    if ctx.variant.approx and ctx.sched is not None:
        return gxb * approx_backward(x, ctx.sched)
    return gxb * ste_backward(x)


class BinaryWeightMixin:
    """Shared weight path of binarized layers.

    Latent weights ``w`` are rotated (``R1^T W R2`` on the balanced reshape),
    blended as ``w~ = w + (rotated - w) * alpha`` and binarized to
    ``lambda * F(w~)`` in training or ``lambda * sign(w~)`` at evaluation, with
    ``lambda = mean |w~|`` for scaled variants and 1 otherwise.
    """

    binarized = True
    rotation: RotationPair | None
    params: dict

    def _init_binary_state(self, beta_init: float):
        self.rotation = None
        self.params["beta"] = np.array([beta_init], dtype=np.float64)
        self.init_sign = sign(self.params["weight"]).ravel()

    @property
    def alpha(self) -> float:
        return abs(math.sin(float(self.params["beta"][0])))

    def adjusted(self, variant: Variant) -> tuple[np.ndarray, np.ndarray | None, float]:
        """Return ``(w~, rotated, alpha)`` for the current latent weights."""
        w = self.params["weight"].ravel()
        if variant.rotate and self.rotation is not None:
            rot = rotate_flat(w, self.rotation)
            alpha = self.alpha if variant.adjust else 1.0
            return w + (rot - w) * alpha, rot, alpha
        return w, None, 0.0

    def binary_weights(self, variant: Variant) -> np.ndarray:
        """Evaluation-mode binary weights ``sign(w~)`` (without scale), flat."""
        return sign(self.adjusted(variant)[0])

    def _weight_forward(self, ctx: Context):
        w = self.params["weight"].ravel()
        wt, rot, alpha = self.adjusted(ctx.variant)
        fw = approx_forward(wt, ctx.sched) if ctx.use_approx else sign(wt)
        lam = float(np.mean(np.abs(wt))) if ctx.variant.scale else 1.0
        q = (lam * fw).reshape(self.params["weight"].shape)
        return q, (w, wt, rot, alpha, fw, lam)

    def _weight_backward(self, gq, wcache, ctx: Context):
        w, wt, rot, alpha, fw, lam = wcache
        gq = gq.ravel()
        if ctx.variant.approx and ctx.sched is not None:
            dfw = approx_backward(wt, ctx.sched)
        else:
            dfw = ste_backward(wt)
        gwt = gq * lam * dfw
        if ctx.variant.scale:
            gwt += float(gq @ fw) * sign(wt) / wt.size
        grads = {}
        if rot is not None:
            gw = (1.0 - alpha) * gwt + alpha * rotate_flat_adjoint(gwt, self.rotation)
            if ctx.variant.adjust:
                b = float(self.params["beta"][0])
                dalpha = float(gwt @ (rot - w))
                grads["beta"] = np.array([dalpha * math.copysign(1.0, math.sin(b)) * math.cos(b)])
        else:
            gw = gwt
        grads.setdefault("beta", np.zeros(1))
        grads["weight"] = gw.reshape(self.params["weight"].shape)
        return grads


# ---------------------------------------------------------------- dense


class Dense(Layer):
    kind = "dense"

    def __init__(self, name, fan_in, fan_out, rng, bias=True):
        super().__init__(name)
        self.fan_in, self.fan_out = fan_in, fan_out
        std = math.sqrt(2.0 / fan_in)
        self.params["weight"] = rng.standard_normal((fan_out, fan_in)) * std
        if bias:
            self.params["bias"] = np.zeros(fan_out)

    def _check(self, x):
        if x.ndim != 2 or x.shape[1] != self.fan_in:
            raise ShapeError(f"{self.name}: expected (N, {self.fan_in}) input, got {x.shape}")

    def forward(self, x, ctx):
        self._check(x)
        y = x @ self.params["weight"].T
        if "bias" in self.params:
            y = y + self.params["bias"]
        return y, (x,)

    def backward(self, gy, cache):
        (x,) = self._need(cache)
        grads = {"weight": gy.T @ x}
        if "bias" in self.params:
            grads["bias"] = gy.sum(axis=0)
        return gy @ self.params["weight"], grads


class BinaryDense(BinaryWeightMixin, Dense):
    def __init__(self, name, fan_in, fan_out, rng, beta_init):
        Dense.__init__(self, name, fan_in, fan_out, rng, bias=False)
        self._init_binary_state(beta_init)

    def forward(self, x, ctx):
        self._check(x)
        xb = _binarize_input(x, ctx)
        q, wcache = self._weight_forward(ctx)
        return xb @ q.T, (x, xb, q, wcache, ctx)

    def backward(self, gy, cache):
        x, xb, q, wcache, ctx = self._need(cache)
        gx = _input_grad(gy @ q, x, ctx)
        return gx, self._weight_backward(gy.T @ xb, wcache, ctx)


# ---------------------------------------------------------------- convolution


def _im2col(x, kh, kw, stride, pad):
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]  # N, C, Ho, Wo, kh, kw
    n, c, ho, wo = win.shape[:4]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n * ho * wo, c * kh * kw)
    return cols, ho, wo


def _col2im(dcols, x_shape, kh, kw, stride, pad, ho, wo):
    n, c, h, w = x_shape
    dx = np.zeros((n, c, h + 2 * pad, w + 2 * pad))
    d = dcols.reshape(n, ho, wo, c, kh, kw)
    for i in range(kh):
        for j in range(kw):
            dx[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += d[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    if pad:
        dx = dx[:, :, pad:-pad, pad:-pad]
    return dx


class Conv2d(Layer):
    kind = "conv2d"

    def __init__(self, name, c_in, c_out, kernel, rng, stride=1, pad=None, bias=False):
        super().__init__(name)
        self.c_in, self.c_out, self.kernel, self.stride = c_in, c_out, kernel, stride
        self.pad = kernel // 2 if pad is None else pad
        std = math.sqrt(2.0 / (c_in * kernel * kernel))
        self.params["weight"] = rng.standard_normal((c_out, c_in, kernel, kernel)) * std
        if bias:
            self.params["bias"] = np.zeros(c_out)

    def _check(self, x):
        if x.ndim != 4 or x.shape[1] != self.c_in:
            raise ShapeError(f"{self.name}: expected (N, {self.c_in}, H, W) input, got {x.shape}")

    def _conv(self, x, wmat):
        k = self.kernel
        cols, ho, wo = _im2col(x, k, k, self.stride, self.pad)
        y = cols @ wmat.reshape(self.c_out, -1).T
        y = y.reshape(x.shape[0], ho, wo, self.c_out).transpose(0, 3, 1, 2)
        return y, cols, ho, wo

    def _conv_backward(self, gy, x_shape, cols, ho, wo, wmat):
        k = self.kernel
        g2 = gy.transpose(0, 2, 3, 1).reshape(-1, self.c_out)
        gw = (g2.T @ cols).reshape(wmat.shape)
        dcols = g2 @ wmat.reshape(self.c_out, -1)
        gx = _col2im(dcols, x_shape, k, k, self.stride, self.pad, ho, wo)
        return gx, gw, g2

    def forward(self, x, ctx):
        self._check(x)
        y, cols, ho, wo = self._conv(x, self.params["weight"])
        if "bias" in self.params:
            y = y + self.params["bias"][None, :, None, None]
        return y, (x.shape, cols, ho, wo)

    def backward(self, gy, cache):
        x_shape, cols, ho, wo = self._need(cache)
        gx, gw, g2 = self._conv_backward(gy, x_shape, cols, ho, wo, self.params["weight"])
        grads = {"weight": gw}
        if "bias" in self.params:
            grads["bias"] = g2.sum(axis=0)
        return gx, grads


class BinaryConv2d(BinaryWeightMixin, Conv2d):
    def __init__(self, name, c_in, c_out, kernel, rng, beta_init, stride=1, pad=None):
        Conv2d.__init__(self, name, c_in, c_out, kernel, rng, stride=stride, pad=pad, bias=False)
        self._init_binary_state(beta_init)

    def forward(self, x, ctx):
        self._check(x)
        xb = _binarize_input(x, ctx)
        q, wcache = self._weight_forward(ctx)
        y, cols, ho, wo = self._conv(xb, q)
        return y, (x, q, cols, ho, wo, wcache, ctx)

    def backward(self, gy, cache):
        x, q, cols, ho, wo, wcache, ctx = self._need(cache)
        gxb, gq, _ = self._conv_backward(gy, x.shape, cols, ho, wo, q)
        return _input_grad(gxb, x, ctx), self._weight_backward(gq, wcache, ctx)


# ---------------------------------------------------------------- normalization and friends


class BatchNorm(Layer):
    kind = "batchnorm"

    def __init__(self, name, features, momentum=0.1, eps=1e-5):
        super().__init__(name)
        self.features, self.momentum, self.eps = features, momentum, eps
        self.params["scale"] = np.ones(features)
        self.params["shift"] = np.zeros(features)
        self.running_mean = np.zeros(features)
        self.running_var = np.ones(features)

    def _axes(self, x):
        if x.ndim == 2:
            return (0,), (1, -1)
        if x.ndim == 4:
            return (0, 2, 3), (1, -1, 1, 1)
        raise ShapeError(f"{self.name}: unsupported input rank {x.ndim}")

    def forward(self, x, ctx):
        axes, shape = self._axes(x)
        if x.shape[1] != self.features:
            raise ShapeError(f"{self.name}: expected {self.features} features, got {x.shape[1]}")
        if ctx.use_batch_stats:
            mean = x.mean(axis=axes)
            var = x.var(axis=axes)
            if ctx.train:
                m = x.size // self.features
                unbiased = var * m / max(m - 1, 1)
                self.running_mean = (1 - self.momentum) * self.running_mean + self.momentum * mean
                self.running_var = (1 - self.momentum) * self.running_var + self.momentum * unbiased
        else:
            mean, var = self.running_mean, self.running_var
        inv = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mean.reshape(shape)) * inv.reshape(shape)
        y = xhat * self.params["scale"].reshape(shape) + self.params["shift"].reshape(shape)
        return y, (xhat, inv, axes, shape, ctx.use_batch_stats)

    def backward(self, gy, cache):
        xhat, inv, axes, shape, batch_stats = self._need(cache)
        grads = {"scale": (gy * xhat).sum(axis=axes), "shift": gy.sum(axis=axes)}
        gxhat = gy * self.params["scale"].reshape(shape)
        if batch_stats:
            mean_g = gxhat.mean(axis=axes, keepdims=True)
            mean_gx = (gxhat * xhat).mean(axis=axes, keepdims=True)
            gx = (gxhat - mean_g - xhat * mean_gx) * inv.reshape(shape)
        else:
            gx = gxhat * inv.reshape(shape)
        return gx, grads


class Pool(Layer):
    """``mode`` is ``max`` or ``avg`` over ``size x size`` windows, or ``global`` average."""

    kind = "pool"

    def __init__(self, name, mode="max", size=2):
        super().__init__(name)
        if mode not in ("max", "avg", "global"):
            raise ValueError(f"unknown pool mode {mode!r}")
        self.mode, self.size = mode, size

    def forward(self, x, ctx):
        if x.ndim != 4:
            raise ShapeError(f"{self.name}: pooling needs (N, C, H, W), got {x.shape}")
        if self.mode == "global":
            return x.mean(axis=(2, 3)), (x.shape,)
        s = self.size
        n, c, h, w = x.shape
        ho, wo = h // s, w // s
        xr = x[:, :, :ho * s, :wo * s].reshape(n, c, ho, s, wo, s)
        if self.mode == "avg":
            return xr.mean(axis=(3, 5)), (x.shape,)
        y = xr.max(axis=(3, 5))
        mask = xr == y[:, :, :, None, :, None]
        # route the gradient to the first maximum only
        flat = mask.transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, s * s)
        first = np.zeros_like(flat)
        np.put_along_axis(first, flat.argmax(axis=-1)[..., None], True, axis=-1)
        mask = first.reshape(n, c, ho, wo, s, s).transpose(0, 1, 2, 4, 3, 5)
        return y, (x.shape, mask)

    def backward(self, gy, cache):
        cache = self._need(cache)
        shape = cache[0]
        n, c, h, w = shape
        if self.mode == "global":
            return np.broadcast_to(gy[:, :, None, None] / (h * w), shape).copy(), {}
        s = self.size
        ho, wo = h // s, w // s
        gx = np.zeros(shape)
        if self.mode == "avg":
            g = np.broadcast_to(gy[:, :, :, None, :, None] / (s * s), (n, c, ho, s, wo, s))
        else:
            g = cache[1] * gy[:, :, :, None, :, None]
        gx[:, :, :ho * s, :wo * s] = g.reshape(n, c, ho * s, wo * s)
        return gx, {}


class Flatten(Layer):
    kind = "flatten"

    def forward(self, x, ctx):
        return x.reshape(x.shape[0], -1), (x.shape,)

    def backward(self, gy, cache):
        (shape,) = self._need(cache)
        return gy.reshape(shape), {}


class ShortcutAdd(Layer):
    """Adds the output of an earlier layer (index ``source``; -1 is the network input)."""

    kind = "shortcut-add"

    def __init__(self, name, source: int):
        super().__init__(name)
        self.source = source

    def forward(self, x, ctx):  # pragma: no cover - handled by Network
        raise ContractError("ShortcutAdd is evaluated by the network, not standalone")

    def backward(self, gy, cache):  # pragma: no cover
        raise ContractError("ShortcutAdd is evaluated by the network, not standalone")


@dataclass
class LayerSpec:
    kind: str
    name: str
    dims: dict = field(default_factory=dict)
    binarized: bool = False
