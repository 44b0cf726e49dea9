"""Central finite-difference checks of the hand-written backward passes."""

from __future__ import annotations

import numpy as np

from .nn import ModelConfig, build_network
from .trainer import cross_entropy

# absolute scale below which differences are judged absolutely; finite-difference
# round-off on O(1) losses is ~1e-10
REL_FLOOR = 1e-3
STEP = 1e-6


def relative_error(analytic, numeric, floor=REL_FLOOR):
    """Element-wise ``|a - n| / max(|a|, |n|, floor)``."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def _central(fn, param, idx, step):
    old = param[idx]
    center = fn()
    param[idx] = old + step
    plus = fn()
    param[idx] = old - step
    minus = fn()
    param[idx] = old
    return (plus - minus) / (2.0 * step), (plus - center) / step, (center - minus) / step


def numeric_gradient(fn, param, step=STEP, refinements=2):
    """Central differences of scalar ``fn()`` w.r.t. every entry of ``param`` (perturbed in place).

    When the two one-sided slopes disagree the interval straddles a kink
    (a max-pool switch or a leaky-ReLU corner), and the step is shrunk tenfold,
    up to ``refinements`` times.
    """
    grad = np.zeros(param.shape, dtype=np.float64)
    for idx in np.ndindex(param.shape):
        h = step
        for _ in range(refinements + 1):
            central, fwd, bwd = _central(fn, param, idx, h)
            if abs(fwd - bwd) <= 1e-2 * max(abs(central), REL_FLOOR):
                break
            h /= 10.0
        grad[idx] = central
    return grad


TINY = ModelConfig(mode="sinc", sample_rate=16000, input_samples=96, n_filters=4, filter_length=17,
                   conv_channels=(2,), conv_lengths=(5,), pool_widths=(3, 3), fc_sizes=(8,),
                   dtype="float64")


def tiny_problem(seed, n_classes=3, batch=4, config=TINY):
    """A seeded tiny network with randomized cutoffs plus a random batch."""
    rng = np.random.default_rng(seed)
    net = build_network(config, n_classes, seed=seed)
    sinc = net.first_layer()
    if config.mode == "sinc":
        f1 = rng.uniform(0.01, 0.2, config.n_filters)
        sinc.params["f1_raw"][:] = f1 * rng.choice([-1.0, 1.0], config.n_filters)
        sinc.params["f2_raw"][:] = f1 + rng.uniform(0.02, 0.25, config.n_filters)
    for layer in net.layers:
        if hasattr(layer, "need_input_grad"):
            layer.need_input_grad = True
    x = rng.standard_normal((batch, config.input_samples))
    y = rng.integers(0, n_classes, batch)
    return net, x, y


def check_network(seed, config=TINY):
    """Max relative error per parameter tensor between backprop and finite differences."""
    net, x, y = tiny_problem(seed, config=config)

    def loss():
        return cross_entropy(net.forward(x, training=True), y)[0]

    _, grad = cross_entropy(net.forward(x, training=True), y)
    net.backward(grad)
    analytic = {k: v.copy() for k, v in net.gradients().items()}
    errors = {}
    for key, _, _, param in net.named_parameters():
        numeric = numeric_gradient(loss, param)
        errors[key] = float(relative_error(analytic[key], numeric).max())
    return errors


def run_gradcheck(seed, n_networks=20, threshold=1e-4):
    """Check ``n_networks`` tiny networks seeded from ``seed``; returns ``(max_error, passed)``."""
    seeds = np.random.default_rng(seed).integers(0, 2**31, n_networks)
    worst = 0.0
    for s in seeds:
        worst = max(worst, max(check_network(int(s)).values()))
    return worst, worst < threshold
