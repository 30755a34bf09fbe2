"""Central finite-difference check of every network parameter gradient."""
import numpy as np

from rotbnn.nn import Network, softmax_cross_entropy
from rotbnn.nn.layers import BinaryConv2d, BinaryDense, LayerSpec
from rotbnn.quantize import ApproxSchedule
from rotbnn.rotation import RotationPair, balanced_factorization

EPS = 1e-5
REL_TOL = 1e-4
ABS_FLOOR = 1e-8


def toy_network(variant="rbnn", seed=0, beta=0.9) -> Network:
    specs = [
        LayerSpec("dense", "fc1", {"in": 5, "out": 6, "bias": True}),
        LayerSpec("batchnorm", "bn1", {"features": 6}),
        LayerSpec("dense", "fc2", {"in": 6, "out": 6}, binarized=True),
        LayerSpec("batchnorm", "bn2", {"features": 6}),
        LayerSpec("dense", "fc3", {"in": 6, "out": 3, "bias": True}),
    ]
    net = Network(specs, variant=variant, seed=seed, beta_init=beta)
    rng = np.random.default_rng(seed + 100)
    for layer in net.layers:
        for arr in layer.params.values():
            if arr.ndim == 1 and layer.kind == "batchnorm":
                arr += 0.3 * rng.standard_normal(arr.shape)
            elif arr.ndim == 1 and not layer.binarized:
                arr += 0.1 * rng.standard_normal(arr.shape)
        if layer.binarized and net.variant.rotate:
            n1, n2 = balanced_factorization(layer.params["weight"].size)
            layer.rotation = RotationPair.random(n1, n2, rng)
    return net


def _kink_pattern(net: Network, cache, sched: ApproxSchedule):
    """Which side of every F / sign kink each binarized input and weight sits on."""
    edge = sched.edge
    pats = []
    for layer, c in zip(net.layers, cache.caches):
        if isinstance(layer, (BinaryDense, BinaryConv2d)):
            x = c[0]
            wt = c[-2][1]
            for v in (x, wt):
                pats.append(np.signbit(v).tobytes() + (np.abs(v) < edge).tobytes())
    return pats


def loss_of(net, x, y, sched):
    logits, cache = net.forward(x, sched, mode="train")
    loss, gl = softmax_cross_entropy(logits, y)
    return loss, gl, cache


def check_gradients(net: Network, x, y, sched: ApproxSchedule, eps=EPS):
    """Return ``(worst_violation, checked, skipped)`` over all parameter entries.

    A violation is ``|fd - analytic| - (REL_TOL * max(|fd|, |analytic|) + ABS_FLOOR)``;
    entries whose perturbation crosses a kink are skipped.
    """
    loss, gl, cache = loss_of(net, x, y, sched)
    grads = net.backward(cache, gl)
    base = _kink_pattern(net, cache, sched)
    worst, checked, skipped = -np.inf, 0, 0
    for name, p in net.named_params():
        g = grads[name]
        flat = p.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            lp, _, cp = loss_of(net, x, y, sched)
            pp = _kink_pattern(net, cp, sched)
            flat[i] = orig - eps
            lm, _, cm = loss_of(net, x, y, sched)
            pm = _kink_pattern(net, cm, sched)
            flat[i] = orig
            if pp != base or pm != base:
                skipped += 1
                continue
            fd = (lp - lm) / (2 * eps)
            an = float(g.reshape(-1)[i])
            worst = max(worst, abs(fd - an) - (REL_TOL * max(abs(fd), abs(an)) + ABS_FLOOR))
            checked += 1
    return worst, checked, skipped
