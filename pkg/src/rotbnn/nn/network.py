"""Network container, architecture builders and the epoch-boundary rotation hook."""
from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ..linalg import ShapeError
from ..quantize import ApproxSchedule
from .. import seeds
from ..rotation import DEFAULT_CYCLES, RotationPair, align, reshape_to_block
from .layers import (
    BatchNorm,
    BinaryConv2d,
    BinaryDense,
    Context,
    ContractError,
    Conv2d,
    Dense,
    Flatten,
    Layer,
    LayerSpec,
    Pool,
    ShortcutAdd,
    Variant,
    get_variant,
)

log = logging.getLogger(__name__)

DEFAULT_BETA_INIT = math.pi / 2 - 0.3


class NonFiniteError(FloatingPointError):
    def __init__(self, layer: str, epoch: int | None = None, step: int | None = None):
        where = f" (epoch {epoch}, step {step})" if epoch is not None else ""
        super().__init__(f"activations became non-finite first in layer {layer!r}{where}")
        self.layer, self.epoch, self.step = layer, epoch, step


# ---------------------------------------------------------------- architectures


def parse_arch(arch: str) -> list[LayerSpec]:
    """Layer specs for an architecture string.

    ``mlp:784-256-256-10``
        dense, batchnorm, then binarized dense + batchnorm per hidden pair,
        then a full-precision classifier.
    ``cnn:1x28x28-16-32-10``
        full-precision stem conv, binarized convs with 2x2 max pooling,
        global average pooling and a full-precision classifier.
    ``resnet:3x32x32-16x3-10``
        stem conv then N binarized conv blocks, each with a real-valued
        shortcut around it (Bi-Real style).
    """
    try:
        family, body = arch.split(":", 1)
        parts = body.split("-")
        if family == "mlp":
            sizes = [int(p) for p in parts]
            if len(sizes) < 3:
                raise ValueError
            return _mlp_specs(sizes)
        in_shape = tuple(int(p) for p in parts[0].split("x"))
        if len(in_shape) != 3:
            raise ValueError
        if family == "cnn":
            return _cnn_specs(in_shape, [int(p) for p in parts[1:-1]], int(parts[-1]))
        if family == "resnet":
            width, blocks = (int(p) for p in parts[1].split("x"))
            return _resnet_specs(in_shape, width, blocks, int(parts[2]))
    except (ValueError, IndexError):
        pass
    raise ValueError(f"cannot parse architecture {arch!r}")


def _mlp_specs(sizes):
    specs = [LayerSpec("flatten", "flatten")]
    specs.append(LayerSpec("dense", "dense1", {"in": sizes[0], "out": sizes[1], "bias": False}))
    specs.append(LayerSpec("batchnorm", "bn1", {"features": sizes[1]}))
    for i in range(1, len(sizes) - 2):
        specs.append(LayerSpec("dense", f"dense{i + 1}", {"in": sizes[i], "out": sizes[i + 1]}, binarized=True))
        specs.append(LayerSpec("batchnorm", f"bn{i + 1}", {"features": sizes[i + 1]}))
    last = len(sizes) - 1
    specs.append(LayerSpec("dense", f"dense{last}", {"in": sizes[-2], "out": sizes[-1], "bias": True}))
    return specs


def _cnn_specs(in_shape, widths, classes):
    if not widths:
        raise ValueError
    c = in_shape[0]
    specs = [LayerSpec("conv2d", "conv1", {"in": c, "out": widths[0], "kernel": 3}),
             LayerSpec("batchnorm", "bn1", {"features": widths[0]})]
    prev = widths[0]
    for i, wdt in enumerate(widths[1:], start=2):
        specs.append(LayerSpec("conv2d", f"conv{i}", {"in": prev, "out": wdt, "kernel": 3}, binarized=True))
        specs.append(LayerSpec("batchnorm", f"bn{i}", {"features": wdt}))
        specs.append(LayerSpec("pool", f"pool{i}", {"mode": "max", "size": 2}))
        prev = wdt
    specs.append(LayerSpec("pool", "gap", {"mode": "global"}))
    specs.append(LayerSpec("dense", "fc", {"in": prev, "out": classes, "bias": True}))
    return specs


def _resnet_specs(in_shape, width, blocks, classes):
    specs = [LayerSpec("conv2d", "conv1", {"in": in_shape[0], "out": width, "kernel": 3}),
             LayerSpec("batchnorm", "bn1", {"features": width})]
    for b in range(blocks):
        src = len(specs) - 1
        specs.append(LayerSpec("conv2d", f"block{b}.conv", {"in": width, "out": width, "kernel": 3}, binarized=True))
        specs.append(LayerSpec("batchnorm", f"block{b}.bn", {"features": width}))
        specs.append(LayerSpec("shortcut-add", f"block{b}.add", {"source": src}))
    specs.append(LayerSpec("pool", "gap", {"mode": "global"}))
    specs.append(LayerSpec("dense", "fc", {"in": width, "out": classes, "bias": True}))
    return specs


def build_layer(spec: LayerSpec, rng, beta_init) -> Layer:
    d = spec.dims
    if spec.kind == "dense":
        if spec.binarized:
            return BinaryDense(spec.name, d["in"], d["out"], rng, beta_init)
        return Dense(spec.name, d["in"], d["out"], rng, bias=d.get("bias", True))
    if spec.kind == "conv2d":
        if spec.binarized:
            return BinaryConv2d(spec.name, d["in"], d["out"], d["kernel"], rng, beta_init,
                                stride=d.get("stride", 1))
        return Conv2d(spec.name, d["in"], d["out"], d["kernel"], rng, stride=d.get("stride", 1),
                      bias=d.get("bias", False))
    if spec.kind == "batchnorm":
        return BatchNorm(spec.name, d["features"])
    if spec.kind == "pool":
        return Pool(spec.name, d.get("mode", "max"), d.get("size", 2))
    if spec.kind == "flatten":
        return Flatten(spec.name)
    if spec.kind == "shortcut-add":
        return ShortcutAdd(spec.name, d["source"])
    raise ValueError(f"unknown layer kind {spec.kind!r}")


# ---------------------------------------------------------------- network


@dataclass
class ForwardCache:
    caches: list
    outputs: list
    ctx: Context


@dataclass
class AlignmentReport:
    """Per-layer outcome of the latest epoch-boundary rotation."""

    cos_before: float
    cos_after: float
    objective_trace: list = field(default_factory=list)
    error: str | None = None


class Network:
    def __init__(self, specs: list[LayerSpec], variant: Variant | str = "rbnn", seed: int = 0,
                 beta_init: float = DEFAULT_BETA_INIT, arch: str = ""):
        self.specs = specs
        self.variant = get_variant(variant) if isinstance(variant, str) else variant
        self.seed = seed
        self.arch = arch
        self.epoch = 0
        rng = seeds.purpose_rng(seed, seeds.INIT)
        self.layers = [build_layer(s, rng, beta_init) for s in specs]
        self.alignment: dict[str, AlignmentReport] = {}
        weight_layers = [l for l in self.layers if "weight" in l.params]
        if not weight_layers:
            raise ValueError("network has no weight layers")
        if weight_layers[0].binarized or weight_layers[-1].binarized:
            raise ValueError("first and last weight layers must stay full precision")
        for i, l in enumerate(self.layers):
            if isinstance(l, ShortcutAdd) and not -1 <= l.source < i:
                raise ValueError(f"{l.name}: shortcut source {l.source} must precede the layer")

    @classmethod
    def from_arch(cls, arch: str, **kw) -> "Network":
        return cls(parse_arch(arch), arch=arch, **kw)

    @property
    def binarized_layers(self) -> list:
        return [l for l in self.layers if l.binarized]

    def named_params(self):
        for layer in self.layers:
            for pname, arr in layer.params.items():
                yield f"{layer.name}.{pname}", arr

    # ------------------------------------------------------------ passes

    def forward(self, x, sched: ApproxSchedule | None = None, mode: str = "train",
                batch_stats: bool | None = None) -> tuple[np.ndarray, ForwardCache]:
        if mode not in ("train", "eval"):
            raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
        ctx = Context(self.variant, sched, train=mode == "train", batch_stats=batch_stats)
        outputs = [np.asarray(x, dtype=np.float64)]
        caches = []
        for layer in self.layers:
            if isinstance(layer, ShortcutAdd):
                other = outputs[layer.source + 1]
                if other.shape != outputs[-1].shape:
                    raise ShapeError(f"{layer.name}: shortcut shape {other.shape} != {outputs[-1].shape}")
                y, cache = outputs[-1] + other, None
            else:
                y, cache = layer.forward(outputs[-1], ctx)
            outputs.append(y)
            caches.append(cache)
        return outputs[-1], ForwardCache(caches, outputs, ctx)

    def first_nonfinite_layer(self, cache: ForwardCache) -> str | None:
        for layer, out in zip(self.layers, cache.outputs[1:]):
            if not np.all(np.isfinite(out)):
                return layer.name
        return None

    def backward(self, cache: ForwardCache | None, loss_grad: np.ndarray) -> dict[str, np.ndarray]:
        """Parameter gradients keyed ``"<layer>.<param>"``."""
        if cache is None or len(cache.caches) != len(self.layers):
            raise ContractError("backward needs the cache from a forward pass of this network")
        gout: list = [None] * (len(self.layers) + 1)
        gout[-1] = loss_grad
        grads = {}
        for i in range(len(self.layers) - 1, -1, -1):
            layer, g = self.layers[i], gout[i + 1]
            if g is None:
                continue
            if isinstance(layer, ShortcutAdd):
                gx = g
                src = layer.source + 1
                gout[src] = g if gout[src] is None else gout[src] + g
            else:
                gx, pg = layer.backward(g, cache.caches[i])
                for pname, arr in pg.items():
                    grads[f"{layer.name}.{pname}"] = arr
            gout[i] = gx if gout[i] is None else gout[i] + gx
        return grads

    # ------------------------------------------------------------ rotation hook

    def epoch_begin_rotate(self, cycles: int = DEFAULT_CYCLES, init: str = "random",
                           workers: int = 1) -> "Network":
        """Re-align every binarized layer's rotations to its current latent weights.

        The first call starts from a seeded random orthogonal pair (``init="random"``)
        or the identity; later calls warm-start from the stored rotations. Latent
        weights are not modified. A failing layer keeps its previous rotation and
        the failure is recorded in ``self.alignment``.
        """
        if not self.variant.rotate:
            return self
        layers = self.binarized_layers

        def job(idx_layer):
            idx, layer = idx_layer
            w = layer.params["weight"]
            block = reshape_to_block(w.ravel(), w.shape, layer.name)
            warm = layer.rotation
            if warm is None:
                n1, n2 = block.matrix.shape
                if init == "random":
                    warm = RotationPair.random(n1, n2, seeds.purpose_rng(self.seed, seeds.ROTATION, idx))
                else:
                    warm = RotationPair.identity(n1, n2)
            return align(block, cycles=cycles, warm_start=warm)

        items = list(enumerate(layers))
        if workers > 1 and len(items) > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                futures = [pool.submit(job, it) for it in items]
                outcomes = []
                for f in futures:
                    try:
                        outcomes.append(f.result())
                    except Exception as exc:  # noqa: BLE001 - reported per layer
                        outcomes.append(exc)
        else:
            outcomes = []
            for it in items:
                try:
                    outcomes.append(job(it))
                except Exception as exc:  # noqa: BLE001
                    outcomes.append(exc)

        for layer, res in zip(layers, outcomes):
            if isinstance(res, Exception):
                log.warning("alignment failed for %s: %s", layer.name, res)
                self.alignment[layer.name] = AlignmentReport(float("nan"), float("nan"), [], str(res))
                continue
            if not res.skipped:
                layer.rotation = res.rotation
            self.alignment[layer.name] = AlignmentReport(res.cos_before, res.cos_after, res.objective_trace)
        return self


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient w.r.t. the logits."""
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = logits.shape[0]
    loss = -float(logp[np.arange(n), labels].mean())
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n
