"""SGD training loop with epoch-boundary rotation and per-epoch diagnostics."""
from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, fields
from typing import Callable

import numpy as np

from .. import seeds
from ..data import Dataset, augment, batches
from ..metrics import LayerMetrics, MetricsRecord, flip_rate
from ..quantize import T_MAX, T_MIN, ApproxSchedule, quantization_error
from ..rotation import DEFAULT_CYCLES, cosine_of, sign
from .layers import get_variant
from .network import DEFAULT_BETA_INIT, Network, NonFiniteError, softmax_cross_entropy

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    arch: str = "mlp:784-256-256-10"
    variant: str = "rbnn"
    epochs: int = 10
    batch_size: int = 128
    lr: float = 0.1
    lr_schedule: str = "cosine"
    momentum: float = 0.9
    weight_decay: float = 1e-4
    seed: int = 0
    cycles: int = DEFAULT_CYCLES
    rotation_init: str = "random"
    beta_init: float = DEFAULT_BETA_INIT
    t_min: float = T_MIN
    t_max: float = T_MAX
    augment: bool = False
    workers: int = 1
    eval_batch_size: int = 1000

    def __post_init__(self):
        get_variant(self.variant)
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.lr_schedule not in ("cosine", "constant"):
            raise ValueError(f"lr_schedule must be 'cosine' or 'constant', got {self.lr_schedule!r}")
        if self.rotation_init not in ("random", "identity"):
            raise ValueError(f"rotation_init must be 'random' or 'identity', got {self.rotation_init!r}")

    @classmethod
    def field_types(cls) -> dict[str, type]:
        return {f.name: type(getattr(cls(), f.name)) for f in fields(cls)}

    def to_dict(self) -> dict:
        return asdict(self)


class SGD:
    """Momentum SGD; weight decay applies to ``*.weight`` tensors only."""

    def __init__(self, net: Network, lr: float, momentum: float = 0.9, weight_decay: float = 0.0):
        self.net, self.lr, self.momentum, self.weight_decay = net, lr, momentum, weight_decay
        self.buffers = {name: np.zeros_like(p) for name, p in net.named_params()}

    def step(self, grads: dict[str, np.ndarray], lr: float | None = None):
        lr = self.lr if lr is None else lr
        for name, p in self.net.named_params():
            g = grads.get(name)
            if g is None:
                continue
            if self.weight_decay and name.endswith(".weight"):
                g = g + self.weight_decay * p
            buf = self.buffers[name]
            buf *= self.momentum
            buf += g
            p -= lr * buf


def _lr_at(cfg: TrainConfig, step: int, total: int) -> float:
    if cfg.lr_schedule == "constant" or total <= 0:
        return cfg.lr
    return cfg.lr * 0.5 * (1.0 + math.cos(math.pi * step / total))


def evaluate(net: Network, ds: Dataset, batch_size: int = 1000) -> float:
    correct = 0
    for xb, yb in batches(ds, batch_size, 0, 0, shuffle=False):
        logits, _ = net.forward(xb, mode="eval")
        correct += int(np.sum(logits.argmax(axis=1) == yb))
    return correct / max(len(ds), 1)


def layer_metrics(net: Network) -> list[LayerMetrics]:
    """Diagnostics for every binarized layer at the current weights.

    Cosines come from the latest epoch-boundary alignment (the unrotated
    cosine twice when the variant does not rotate); quantization errors are
    the optimal-scale residuals of the latent weights and of the adjusted
    weights; the flip rate compares initialization signs with ``sign(w~)``.
    """
    out = []
    for layer in net.binarized_layers:
        w = layer.params["weight"].ravel()
        wt, _, alpha = layer.adjusted(net.variant)
        rep = net.alignment.get(layer.name)
        if rep is not None and net.variant.rotate:
            cb, ca = rep.cos_before, rep.cos_after
        else:
            cb = ca = cosine_of(w)
        out.append(LayerMetrics(
            layer_id=layer.name,
            cos_before=cb,
            cos_after=ca,
            qerr_base=quantization_error(w).error,
            qerr_rot=quantization_error(wt).error,
            flip_rate=flip_rate(layer.init_sign, sign(wt)),
            alpha=alpha if net.variant.rotate else 0.0,
            n=w.size,
        ))
    return out


def train(cfg: TrainConfig, train_ds: Dataset, test_ds: Dataset | None = None,
          on_record: Callable[[MetricsRecord], None] | None = None,
          net: Network | None = None) -> tuple[Network, list[MetricsRecord]]:
    """Run ``cfg.epochs`` epochs; returns the trained network and one record per epoch.

    Raises
    ------
    NonFiniteError
        If the loss or any activation becomes NaN/Inf; names the first layer whose
        output went non-finite.
    """
    if net is None:
        net = Network.from_arch(cfg.arch, variant=cfg.variant, seed=cfg.seed, beta_init=cfg.beta_init)
    records: list[MetricsRecord] = []
    if cfg.epochs == 0:
        return net, records

    opt = SGD(net, cfg.lr, cfg.momentum, cfg.weight_decay)
    steps_per_epoch = math.ceil(len(train_ds) / cfg.batch_size)
    total = steps_per_epoch * cfg.epochs
    step = 0
    for epoch in range(net.epoch, cfg.epochs):
        net.epoch = epoch
        # epochs count from 1 here so the last one trains at e / E = 1
        sched = ApproxSchedule(cfg.epochs, epoch + 1, cfg.t_min, cfg.t_max)
        net.epoch_begin_rotate(cycles=cfg.cycles, init=cfg.rotation_init, workers=cfg.workers)
        aug_rng = seeds.purpose_rng(cfg.seed, seeds.AUGMENT, epoch) if cfg.augment else None

        loss_sum, correct, seen = 0.0, 0, 0
        for bi, (xb, yb) in enumerate(batches(train_ds, cfg.batch_size, cfg.seed, epoch)):
            if aug_rng is not None:
                xb = augment(xb, aug_rng)
            logits, cache = net.forward(xb, sched, mode="train")
            loss, gl = softmax_cross_entropy(logits, yb)
            # sign() maps NaN to -1, so a finite loss can still hide non-finite activations
            bad = net.first_nonfinite_layer(cache)
            if bad is not None or not math.isfinite(loss):
                raise NonFiniteError(bad or "loss", epoch, bi)
            grads = net.backward(cache, gl)
            opt.step(grads, _lr_at(cfg, step, total))
            step += 1
            loss_sum += loss * len(yb)
            correct += int(np.sum(logits.argmax(axis=1) == yb))
            seen += len(yb)

        test_acc = evaluate(net, test_ds, cfg.eval_batch_size) if test_ds is not None else float("nan")
        rec = MetricsRecord(epoch, layer_metrics(net), loss_sum / seen, correct / seen, test_acc)
        log.info("epoch %d loss %.4f train %.4f test %.4f", epoch, rec.loss, rec.train_acc, test_acc)
        records.append(rec)
        if on_record is not None:
            on_record(rec)
    net.epoch = cfg.epochs
    return net, records
