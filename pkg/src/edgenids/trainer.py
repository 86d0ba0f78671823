"""Float forward/backward passes, mini-batch SGD training and evaluation.

Loss is class-weighted sparse categorical cross-entropy; the softmax and the
loss are differentiated together, so the gradient at the logits is
``(p - onehot(y)) * w[y] / batch``.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .dataset import FeatureMatrix, INPUT_WIDTH, reshape_grids
from .errors import Diverged, InvalidParam, ShapeMismatch
from .models import LayerSpec, Network

logger = logging.getLogger(__name__)

PROB_FLOOR = 1e-12
EVAL_CHUNK = 4096


# -- layer kernels -----------------------------------------------------------

def same_padding(k: int) -> tuple[int, int]:
    before = (k - 1) // 2
    return before, k - 1 - before


def im2col(x: np.ndarray, k: int) -> np.ndarray:
    """``(B, H, W, C)`` -> ``(B, H, W, k*k*C)`` patches under same padding."""
    before, after = same_padding(k)
    xp = np.pad(x, ((0, 0), (before, after), (before, after), (0, 0)))
    win = sliding_window_view(xp, (k, k), axis=(1, 2))  # B, H, W, C, k, k
    b, h, w, c = x.shape
    return win.transpose(0, 1, 2, 4, 5, 3).reshape(b, h, w, k * k * c)


def col2im(cols: np.ndarray, k: int, c: int) -> np.ndarray:
    """Adjoint of :func:`im2col`."""
    b, h, w, _ = cols.shape
    before, after = same_padding(k)
    cols = cols.reshape(b, h, w, k, k, c)
    out = np.zeros((b, h + k - 1, w + k - 1, c), dtype=cols.dtype)
    for i in range(k):
        for j in range(k):
            out[:, i:i + h, j:j + w, :] += cols[:, :, :, i, j, :]
    return out[:, before:before + h, before:before + w, :]


def conv2d_forward(x, w, b):
    k, cin, cout = w.shape[0], w.shape[2], w.shape[3]
    cols = im2col(x, k)
    out = cols.reshape(-1, k * k * cin) @ w.reshape(-1, cout) + b
    return out.reshape(x.shape[0], x.shape[1], x.shape[2], cout), cols


def conv2d_backward(dout, cols, w):
    k, cin, cout = w.shape[0], w.shape[2], w.shape[3]
    d2 = dout.reshape(-1, cout)
    dw = (cols.reshape(-1, k * k * cin).T @ d2).reshape(w.shape)
    db = d2.sum(axis=0)
    dcols = (d2 @ w.reshape(-1, cout).T).reshape(cols.shape)
    return col2im(dcols, k, cin), dw, db


def _pool_windows(x):
    b, h, w, c = x.shape
    ho, wo = h // 2, w // 2
    t = x[:, :2 * ho, :2 * wo, :].reshape(b, ho, 2, wo, 2, c)
    return t.transpose(0, 1, 3, 5, 2, 4).reshape(b, ho, wo, c, 4)


def maxpool_forward(x):
    win = _pool_windows(x)
    arg = win.argmax(axis=-1)
    return win.max(axis=-1), arg


def maxpool_backward(dout, arg, in_shape):
    b, h, w, c = in_shape
    ho, wo = h // 2, w // 2
    dwin = np.zeros((b, ho, wo, c, 4), dtype=dout.dtype)
    np.put_along_axis(dwin, arg[..., None], dout[..., None], axis=-1)
    dwin = dwin.reshape(b, ho, wo, c, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(b, 2 * ho, 2 * wo, c)
    dx = np.zeros(in_shape, dtype=dout.dtype)
    dx[:, :2 * ho, :2 * wo, :] = dwin
    return dx


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


# -- whole-network passes ----------------------------------------------------

def prepare_batch(net: Network, batch) -> np.ndarray:
    """Reshape 39-wide rows to grids for CNNs and validate the batch shape."""
    x = np.asarray(batch)
    if net.is_cnn and x.ndim == 2 and x.shape[1] == INPUT_WIDTH:
        x = reshape_grids(x)
    if x.shape[1:] != tuple(net.input_shape):
        raise ShapeMismatch(f"batch shape {x.shape} does not match input {net.input_shape}")
    return x


def forward_logits(net: Network, x: np.ndarray, keep: bool = False):
    caches = []
    h = x
    for spec, p in zip(net.layers, net.params):
        if spec.kind == "dense":
            w, b = p
            inp = h
            h = h @ w + b
            if spec.activation == "relu":
                h = np.maximum(h, 0)
            caches.append(inp if keep else None)
        elif spec.kind == "conv2d":
            w, b = p
            h, cols = conv2d_forward(h, w, b)
            h = np.maximum(h, 0)
            caches.append(cols if keep else None)
        elif spec.kind == "maxpool2x2":
            shape = h.shape
            h, arg = maxpool_forward(h)
            caches.append((arg, shape) if keep else None)
        elif spec.kind == "flatten":
            shape = h.shape
            h = h.reshape(h.shape[0], -1)
            caches.append(shape)
        caches[-1] = (caches[-1], h) if keep else None
    return h, caches


def forward(net: Network, batch) -> np.ndarray:
    """Class probabilities, shape ``(n, 2)``."""
    x = prepare_batch(net, batch)
    if not net.layers:
        raise ShapeMismatch("network has no layers")
    out = []
    for start in range(0, max(len(x), 1), EVAL_CHUNK):
        logits, _ = forward_logits(net, x[start:start + EVAL_CHUNK])
        out.append(softmax(logits))
    return np.concatenate(out) if out else np.zeros((0, 2))


def loss_sparse_ce(probs, labels, class_weights=(1.0, 1.0)) -> float:
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    w = np.asarray(class_weights, dtype=np.float64)[labels]
    p = np.clip(probs[np.arange(len(labels)), labels], PROB_FLOOR, None)
    return float(np.mean(-w * np.log(p)))


def backward(net: Network, batch, labels, class_weights=(1.0, 1.0)):
    """Return ``(loss, grads)``; ``grads[i]`` is ``(dW, db)`` or ``None``."""
    x = prepare_batch(net, batch)
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (x.shape[0],):
        raise ShapeMismatch("labels do not match batch rows")
    logits, caches = forward_logits(net, x, keep=True)
    probs = softmax(logits)
    cw = np.asarray(class_weights, dtype=logits.dtype)
    loss = loss_sparse_ce(probs, labels, class_weights)
    n = x.shape[0]
    delta = probs.copy()
    delta[np.arange(n), labels] -= 1
    delta *= (cw[labels] / n)[:, None]

    grads: list = [None] * len(net.layers)
    for i in range(len(net.layers) - 1, -1, -1):
        spec: LayerSpec = net.layers[i]
        cache, out = caches[i]
        if spec.kind == "dense":
            w, _ = net.params[i]
            if spec.activation == "relu":
                delta = delta * (out > 0)
            grads[i] = (cache.T @ delta, delta.sum(axis=0))
            delta = delta @ w.T
        elif spec.kind == "conv2d":
            w, _ = net.params[i]
            delta = delta * (out > 0)
            delta, dw, db = conv2d_backward(delta, cache, w)
            grads[i] = (dw, db)
        elif spec.kind == "maxpool2x2":
            arg, shape = cache
            delta = maxpool_backward(delta, arg, shape)
        elif spec.kind == "flatten":
            delta = delta.reshape(cache)
    return loss, grads


# -- evaluation --------------------------------------------------------------

@dataclass
class EvalReport:
    precision: tuple[float, float]
    recall: tuple[float, float]
    f1: tuple[float, float]
    macro_f1: float
    accuracy: float
    confusion: np.ndarray  # rows: true class, columns: predicted class

    @property
    def n(self) -> int:
        return int(self.confusion.sum())


def report_from_predictions(y_true, y_pred) -> EvalReport:
    y_true = np.asarray(y_true, dtype=np.int64)
    y_pred = np.asarray(y_pred, dtype=np.int64)
    cm = np.zeros((2, 2), dtype=np.int64)
    np.add.at(cm, (y_true, y_pred), 1)
    prec, rec, f1 = [], [], []
    for c in (0, 1):
        tp = cm[c, c]
        pp = cm[:, c].sum()
        ap = cm[c, :].sum()
        p = tp / pp if pp else 0.0
        r = tp / ap if ap else 0.0
        prec.append(float(p))
        rec.append(float(r))
        f1.append(float(2 * p * r / (p + r)) if p + r else 0.0)
    acc = float(np.trace(cm) / cm.sum()) if cm.sum() else 0.0
    return EvalReport(tuple(prec), tuple(rec), tuple(f1), (f1[0] + f1[1]) / 2, acc, cm)


def predict(net: Network, batch) -> np.ndarray:
    # argmax keeps the first maximum, so ties go to class 0
    return forward(net, batch).argmax(axis=1)


def evaluate(net: Network, data: FeatureMatrix) -> EvalReport:
    if len(data) == 0:
        raise InvalidParam("evaluation set is empty")
    return report_from_predictions(data.labels, predict(net, data.data))


# -- training ----------------------------------------------------------------

@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 256
    learning_rate: float = 0.01
    optimizer: str = "sgd_momentum"  # or "sgd"
    momentum: float = 0.9
    class_weights: tuple[float, float] | None = None  # None: inverse frequency
    balanced: bool = True
    seed: int = 0
    early_stop_patience: int = 5
    dtype: str = "float32"
    max_train_rows: int | None = None

    def __post_init__(self):
        if self.learning_rate < 0 or not np.isfinite(self.learning_rate):
            raise InvalidParam("learning_rate must be finite and >= 0")
        if self.batch_size < 1 or self.epochs < 0:
            raise InvalidParam("batch_size >= 1 and epochs >= 0 required")
        if self.optimizer not in ("sgd", "sgd_momentum"):
            raise InvalidParam(f"unknown optimizer {self.optimizer!r}")
        if self.class_weights is not None:
            cw = tuple(float(v) for v in self.class_weights)
            if len(cw) != 2 or not all(np.isfinite(v) and v > 0 for v in cw):
                raise InvalidParam("class_weights must be two positive finite numbers")
            self.class_weights = cw

    def resolve_class_weights(self, labels: np.ndarray) -> tuple[float, float]:
        if self.class_weights is not None:
            return self.class_weights
        if not self.balanced:
            return (1.0, 1.0)
        n = len(labels)
        counts = np.bincount(labels, minlength=2).astype(np.float64)
        counts = np.maximum(counts, 1.0)
        return tuple(float(n / (2.0 * c)) for c in counts)


@dataclass
class TrainResult:
    net: Network
    history: list[tuple[int, float, float]] = field(default_factory=list)
    best_epoch: int = 0
    best_val_f1: float = 0.0
    class_weights: tuple[float, float] = (1.0, 1.0)


def cast_network(net: Network, dtype) -> Network:
    params = [None if p is None else (p[0].astype(dtype), p[1].astype(dtype)) for p in net.params]
    return net.with_params(params)


def train(net: Network, train_data: FeatureMatrix, val_data: FeatureMatrix,
          cfg: TrainConfig | None = None) -> TrainResult:
    """Mini-batch SGD; returns the parameters with the best validation macro-F1."""
    cfg = cfg or TrainConfig()
    if len(train_data) == 0 or len(val_data) == 0:
        raise InvalidParam("training and validation data must be nonempty")
    dtype = np.dtype(cfg.dtype)
    rng = np.random.default_rng(cfg.seed)
    if cfg.max_train_rows is not None and len(train_data) > cfg.max_train_rows:
        keep = np.sort(rng.choice(len(train_data), cfg.max_train_rows, replace=False))
        train_data = train_data.take(keep)
    x_all = prepare_batch(net, train_data.data.astype(dtype))
    y_all = train_data.labels
    cw = cfg.resolve_class_weights(y_all)

    net = cast_network(net, dtype)
    params = [None if p is None else [p[0].copy(), p[1].copy()] for p in net.params]
    velocity = [None if p is None else [np.zeros_like(p[0]), np.zeros_like(p[1])] for p in params]
    beta = cfg.momentum if cfg.optimizer == "sgd_momentum" else 0.0
    lr = dtype.type(cfg.learning_rate)

    def snapshot():
        return net.with_params([None if p is None else (p[0].copy(), p[1].copy()) for p in params])

    best = snapshot()
    best_f1 = evaluate(best, val_data).macro_f1
    result = TrainResult(best, [], 0, best_f1, cw)
    stale = 0
    n = len(y_all)
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n)
        total, seen = 0.0, 0
        for bi, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            cur = net.with_params([None if p is None else (p[0], p[1]) for p in params])
            loss, grads = backward(cur, x_all[idx], y_all[idx], cw)
            if not np.isfinite(loss):
                raise Diverged(epoch, bi)
            total += loss * len(idx)
            seen += len(idx)
            for p, v, g in zip(params, velocity, grads):
                if p is None:
                    continue
                for k in (0, 1):
                    v[k] *= beta
                    v[k] -= lr * g[k].astype(dtype, copy=False)
                    p[k] += v[k]
        current = snapshot()
        val_f1 = evaluate(current, val_data).macro_f1
        result.history.append((epoch, total / max(seen, 1), val_f1))
        logger.info("epoch %d loss %.5f val_macro_f1 %.4f", epoch, total / max(seen, 1), val_f1)
        if val_f1 > result.best_val_f1:
            result.net, result.best_val_f1, result.best_epoch = current, val_f1, epoch
            stale = 0
        else:
            stale += 1
            if stale >= cfg.early_stop_patience:
                break
    return result


def write_history(history, path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "train_loss", "val_macro_f1"])
        for epoch, loss, f1 in history:
            w.writerow([epoch, repr(float(loss)), repr(float(f1))])
