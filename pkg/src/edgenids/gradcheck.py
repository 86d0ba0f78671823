"""Central finite-difference checks of :func:`trainer.backward`.

Each check builds a small float64 network around one layer kind, draws
fan-in-scaled parameters inside ``[-1, 1]``, and compares every analytic gradient element with
``(L(t + eps) - L(t - eps)) / (2 eps)``. Configurations where a ReLU input or
a max-pool runner-up lies close enough to a kink for an ``eps`` step to cross
it are redrawn, since the loss is not differentiable there; so are
configurations whose softmax saturates into the probability clip.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .models import LayerSpec, Network
from .trainer import PROB_FLOOR, _pool_windows, backward, conv2d_forward, forward_logits, loss_sparse_ce, softmax

KINDS = ("dense", "conv2d", "maxpool", "softmax_ce")
DEFAULT_TOL = 1e-4
DEFAULT_EPS = 1e-4
# Relative error uses max(|analytic|, |numeric|, ERR_FLOOR) as denominator;
# below the floor the comparison is effectively absolute.
ERR_FLOOR = 1e-7


@dataclass
class GradCheckResult:
    kind: str
    config: int
    max_rel_error: float
    n_params: int

    def passed(self, tol: float = DEFAULT_TOL) -> bool:
        return self.max_rel_error < tol


def _random_case(kind: str, rng: np.random.Generator):
    batch = int(rng.integers(2, 4))
    if kind == "dense":
        a, h = int(rng.integers(2, 9)), int(rng.integers(2, 9))
        layers = [LayerSpec.dense(a, h), LayerSpec.dense(h, 2, "softmax")]
        shape = (a,)
    elif kind == "softmax_ce":
        a = int(rng.integers(2, 9))
        layers = [LayerSpec.dense(a, 2, "softmax")]
        shape = (a,)
    elif kind == "conv2d":
        k, cin, cout = int(rng.integers(2, 6)), int(rng.integers(1, 4)), int(rng.integers(1, 4))
        layers = [LayerSpec.conv2d(k, cin, cout), LayerSpec.flatten(), LayerSpec.dense(64 * cout, 2, "softmax")]
        shape = (8, 8, cin)
    elif kind == "maxpool":
        k, cout = int(rng.integers(2, 6)), int(rng.integers(1, 4))
        layers = [LayerSpec.conv2d(k, 1, cout), LayerSpec.maxpool(), LayerSpec.flatten(),
                  LayerSpec.dense(16 * cout, 2, "softmax")]
        shape = (8, 8, 1)
    else:
        raise ValueError(kind)
    params = []
    for spec in layers:
        if spec.has_params:
            wshape = spec.weight_shape()
            # fan-in scaling keeps logits O(1); magnitudes stay within 1
            scale = min(1.0, float(np.sqrt(3.0 / np.prod(wshape[:-1]))))
            params.append((scale * rng.uniform(-1, 1, wshape), rng.uniform(-0.5, 0.5, spec.bias_shape())))
        else:
            params.append(None)
    net = Network(tuple(layers), tuple(params), shape)
    x = rng.uniform(-1, 1, (batch,) + shape)
    y = rng.integers(0, 2, batch)
    cw = tuple(rng.uniform(0.5, 2.0, 2))
    return net, x, y, cw


def _near_kink(net: Network, x: np.ndarray, margin: float) -> bool:
    h = x
    for spec, p in zip(net.layers, net.params):
        if spec.kind in ("dense", "conv2d"):
            z = h @ p[0] + p[1] if spec.kind == "dense" else conv2d_forward(h, p[0], p[1])[0]
            if spec.activation == "relu":
                if np.abs(z).min() < margin:
                    return True
                z = np.maximum(z, 0)
            h = z
        elif spec.kind == "maxpool2x2":
            win = np.sort(_pool_windows(h), axis=-1)
            if (win[..., -1] - win[..., -2]).min() < margin:
                return True
            h = win[..., -1]
        elif spec.kind == "flatten":
            h = h.reshape(h.shape[0], -1)
    return False


def _saturated(net: Network, x, y) -> bool:
    # the loss clips p[label] at PROB_FLOOR; the fused gradient does not
    logits, _ = forward_logits(net, x)
    return softmax(logits)[np.arange(len(y)), y].min() < 1e3 * PROB_FLOOR


def _loss(net: Network, x, y, cw) -> float:
    logits, _ = forward_logits(net, x)
    return loss_sparse_ce(softmax(logits), y, cw)


def check_case(net: Network, x, y, cw, eps: float = DEFAULT_EPS) -> float:
    """Max relative error over every parameter element of ``net``."""
    _, grads = backward(net, x, y, cw)
    worst = 0.0
    params = [None if p is None else [p[0].copy(), p[1].copy()] for p in net.params]
    for i, p in enumerate(params):
        if p is None:
            continue
        for k in (0, 1):
            flat = p[k].reshape(-1)
            analytic = grads[i][k].reshape(-1)
            for j in range(flat.size):
                orig = flat[j]
                flat[j] = orig + eps
                up = _loss(net.with_params(params), x, y, cw)
                flat[j] = orig - eps
                down = _loss(net.with_params(params), x, y, cw)
                flat[j] = orig
                numeric = (up - down) / (2 * eps)
                denom = max(abs(analytic[j]), abs(numeric), ERR_FLOOR)
                worst = max(worst, abs(analytic[j] - numeric) / denom)
    return worst


def run_gradcheck(n_configs: int = 50, seed: int = 0, eps: float = DEFAULT_EPS,
                  kinds=KINDS) -> list[GradCheckResult]:
    """``n_configs`` random float64 configurations per layer kind."""
    rng = np.random.default_rng(seed)
    results = []
    for kind in kinds:
        for c in range(n_configs):
            for _ in range(1000):
                net, x, y, cw = _random_case(kind, rng)
                # one eps step moves a first-layer pre-activation by at most eps*max|x|
                margin = 4 * eps * max(1.0, float(np.abs(x).max()))
                if not _near_kink(net, x, margin) and not _saturated(net, x, y):
                    break
            else:
                raise RuntimeError(f"could not draw a kink-free {kind} configuration")
            err = check_case(net, x, y, cw, eps)
            results.append(GradCheckResult(kind, c, err, sum(s.param_count() for s in net.layers)))
    return results
