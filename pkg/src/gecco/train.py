"""Loss, hand-derived backward pass, Adam, and the training loop."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .data import Dataset, batches
from .model import GeccoModel, ForwardTrace, forward

PROB_FLOOR = 1e-12


def _check_labels(labels, num_classes: int) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ValueError(f"labels must lie in [0, {num_classes}), got range "
                         f"[{labels.min()}, {labels.max()}]")
    return labels


def cross_entropy(probabilities, labels) -> float:
    """Mean of -log p[b, label_b], with p clamped below at 1e-12."""
    p = T.as_tensor(probabilities)
    labels = _check_labels(labels, p.shape[1])
    if labels.shape[0] != p.shape[0]:
        raise T.ShapeError(f"{labels.shape[0]} labels for {p.shape[0]} rows")
    picked = np.maximum(p[np.arange(p.shape[0]), labels], PROB_FLOOR)
    return float(-np.log(picked).mean())


def backward(model: GeccoModel, trace: ForwardTrace, labels) -> dict[str, np.ndarray]:
    """Gradients of mean cross-entropy with respect to every trainable tensor.

    Keys and shapes match ``model.parameters()``.
    """
    params = model.parameters()
    probs = trace.probabilities
    labels = _check_labels(labels, probs.shape[1])
    n = probs.shape[0]
    if labels.shape[0] != n or trace.x1.shape[1] != model.w1.shape[0]:
        raise T.ShapeError("trace does not match the model or the labels")
    grads: dict[str, np.ndarray] = {}

    d_logits = probs.copy()
    d_logits[np.arange(n), labels] -= 1
    d_logits /= n
    grads["w_cls"] = trace.x6.T @ d_logits
    grads["b_cls"] = d_logits.sum(axis=0, keepdims=True)
    d_x6 = d_logits @ model.w_cls.T

    if not trace.graph_active:
        d_x3 = _maxpool_backward(d_x6, trace.pool_argmax, trace.x3.shape)
    else:
        x4 = trace.x4
        if trace.attention is not None:
            m, s = trace.attention, trace.similarity
            # x6 = m @ x4 + x4, and m itself depends on x4 through s
            d_x4 = d_x6 + m.T @ d_x6
            d_m = d_x6 @ x4.T
            col = s.sum(axis=0, keepdims=True)
            d_s = (d_m - (d_m * m).sum(axis=0, keepdims=True)) / col
            d_q = d_s * s * (1 - s)
            d_x4 += (d_q + d_q.T) @ x4
        else:
            d_x4 = d_x6
        d_bn = _maxpool_backward(d_x4, trace.pool_argmax, trace.x4_bn.shape)

        cache = trace.bn_cache
        grads["bn_gamma"] = (d_bn * cache.x_hat).sum(axis=0, keepdims=True)
        grads["bn_beta"] = d_bn.sum(axis=0, keepdims=True)
        d_xhat = d_bn * model.bn_gamma
        if cache.mode != "eval":
            d_h = cache.inv_std * (
                d_xhat
                - d_xhat.mean(axis=0, keepdims=True)
                - cache.x_hat * (d_xhat * cache.x_hat).mean(axis=0, keepdims=True)
            )
        else:
            d_h = d_xhat * cache.inv_std

        a = trace.adjacency
        for i in reversed(range(len(model.w2))):
            s = trace.gcn_sigmoids[i]
            d_z = d_h * s * (1 - s)
            grads[f"w2.{i}"] = trace.gcn_aggregates[i].T @ d_z
            d_in = a.T @ (d_z @ model.w2[i].T)
            if model.config.gcn_residual:
                d_in += d_h
            d_h = d_in
        d_x3 = d_h

    d_x2_dropped = d_x3 * (trace.x2_dropped > 0)
    d_x2 = d_x2_dropped if trace.dropout_mask is None else d_x2_dropped * trace.dropout_mask
    d_z1 = d_x2 * (trace.z1 > 0)
    grads["w1"] = trace.x1.T @ d_z1
    grads["b1"] = d_z1.sum(axis=0, keepdims=True)

    out = {}
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            # parameters the graph path never touched (B == 1 bypass)
            g = np.zeros_like(p)
        out[name] = T._finite(np.ascontiguousarray(g, dtype=p.dtype), f"gradient of {name}")
    return out


def _maxpool_backward(d_out: np.ndarray, argmax: np.ndarray, in_shape) -> np.ndarray:
    d_in = np.zeros(in_shape, dtype=d_out.dtype)
    rows = np.arange(in_shape[0])[:, None]
    d_in[rows, argmax] = d_out
    return d_in


def loss_fn(model: GeccoModel, x, labels) -> float:
    """Loss as a pure function of the parameters: no dropout, running stats untouched."""
    trace = forward(model, x, update_running=False)
    return cross_entropy(trace.probabilities, labels)


def finite_difference_gradients(model: GeccoModel, x, labels, h: float = 1e-3) -> dict[str, np.ndarray]:
    """Central differences of :func:`loss_fn` for every parameter entry.

    The model must have dropout disabled (``dropout_rate == 0``); batch-norm
    running statistics are left untouched so each evaluation is the same
    function of the parameters.
    """
    if model.mode == "train" and model.config.dropout_rate > 0:
        raise ValueError("finite differences need dropout off")
    grads = {}
    for name, p in model.parameters().items():
        g = np.zeros_like(p)
        flat, gflat = p.reshape(-1), g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = loss_fn(model, x, labels)
            flat[i] = orig - h
            down = loss_fn(model, x, labels)
            flat[i] = orig
            gflat[i] = (up - down) / (2 * h)
        grads[name] = g
    return grads


def gradient_relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """||a - n|| / max(||a||, ||n||), zero when both vanish."""
    diff = np.linalg.norm((analytic - numeric).ravel())
    scale = max(np.linalg.norm(analytic.ravel()), np.linalg.norm(numeric.ravel()))
    return 0.0 if scale == 0 else float(diff / scale)


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_update(state: AdamState, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
    """In-place bias-corrected Adam step on a dict of arrays."""
    state.step += 1
    t = state.step
    c1 = 1 - state.beta1 ** t
    c2 = 1 - state.beta2 ** t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise T.ShapeError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        m = state.m.setdefault(name, np.zeros_like(p))
        v = state.v.setdefault(name, np.zeros_like(p))
        m *= state.beta1
        m += (1 - state.beta1) * g
        v *= state.beta2
        v += (1 - state.beta2) * g * g
        p -= (state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype)


def adam_step(state: AdamState, model: GeccoModel, grads: dict[str, np.ndarray]) -> GeccoModel:
    adam_update(state, model.parameters(), grads)
    return model


@dataclass
class TrainReport:
    loss: list[float] = field(default_factory=list)
    train_accuracy: list[float] = field(default_factory=list)
    eval_accuracy: list[float | None] = field(default_factory=list)
    seconds: list[float] = field(default_factory=list)

    @property
    def epochs(self) -> int:
        return len(self.loss)

    def rows(self):
        for i in range(self.epochs):
            yield i + 1, self.loss[i], self.train_accuracy[i], self.eval_accuracy[i], self.seconds[i]


def evaluate(model: GeccoModel, dataset: Dataset, batch_size: int | None = None) -> tuple[float, np.ndarray]:
    """Eval-mode accuracy over the whole dataset (ragged last batch kept).

    Returns (accuracy, predictions).
    """
    if len(dataset) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    mode = model.mode
    model.eval()
    try:
        preds = []
        for b in batches(dataset, batch_size or model.config.batch_size, drop_last=False):
            preds.append(forward(model, b.x).probabilities.argmax(axis=1))
    finally:
        model.mode = mode
    preds = np.concatenate(preds)
    return float((preds == dataset.labels).mean()), preds


def train_loop(
    model: GeccoModel,
    train_data: Dataset,
    eval_data: Dataset | None = None,
    epochs: int = 10,
    seed: int = 0,
    lr: float = 1e-3,
    log=None,
) -> TrainReport:
    """Train in place with Adam; everything random derives from ``seed``.

    The trailing partial batch is dropped while training because the batch
    graph and batch norm depend on batch size.
    """
    if len(train_data) == 0:
        raise ValueError("training set is empty")
    cfg = model.config
    shuffle_seeds, dropout_seeds = np.random.SeedSequence(seed).spawn(2)
    shuffle_rng = np.random.default_rng(shuffle_seeds)
    dropout_rng = np.random.default_rng(dropout_seeds)
    state = AdamState(lr=lr)
    report = TrainReport()
    for epoch in range(epochs):
        start = time.perf_counter()
        model.train()
        losses = []
        epoch_seed = int(shuffle_rng.integers(2**63))
        for b in batches(train_data, cfg.batch_size, shuffle_seed=epoch_seed, drop_last=True):
            trace = forward(model, b.x, rng=dropout_rng)
            losses.append(cross_entropy(trace.probabilities, b.labels))
            adam_step(state, model, backward(model, trace, b.labels))
        train_acc, _ = evaluate(model, train_data)
        eval_acc = evaluate(model, eval_data)[0] if eval_data is not None and len(eval_data) else None
        report.loss.append(float(np.mean(losses)))
        report.train_accuracy.append(train_acc)
        report.eval_accuracy.append(eval_acc)
        report.seconds.append(time.perf_counter() - start)
        if log is not None:
            log(epoch + 1, report)
    model.eval()
    return report
