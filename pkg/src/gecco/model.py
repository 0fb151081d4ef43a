"""Forward pass of the vectorize -> FC -> batch graph conv -> batch attention classifier."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T

BN_EPS = 1e-5
BN_MOMENTUM = 0.1
ADJACENCY_MODES = ("all-ones", "row-normalized")
BN_INFERENCE_MODES = ("batch", "running")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    image_h: int = 28
    image_w: int = 28
    d_out: int = 86
    num_classes: int = 10
    batch_size: int = 64
    dropout_rate: float = 0.5
    gcn_layers: int = 1
    use_gcn: bool = True
    use_attention: bool = True
    adjacency_mode: str = "all-ones"
    # X4 = sigmoid(A X3 W2) + X3; False gives the bare formula (see README)
    gcn_residual: bool = True
    # statistics batch norm uses outside training: the inference batch's own, or running averages
    bn_inference: str = "batch"

    def __post_init__(self):
        if self.image_h < 1 or self.image_w < 1:
            raise ConfigError(f"image size must be positive, got {self.image_h}x{self.image_w}")
        if self.d_out < 2:
            raise ConfigError(f"d_out must be >= 2 (max-pool halves it), got {self.d_out}")
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        if self.gcn_layers < 0:
            raise ConfigError(f"gcn_layers must be >= 0, got {self.gcn_layers}")
        if self.adjacency_mode not in ADJACENCY_MODES:
            raise ConfigError(f"adjacency_mode must be one of {ADJACENCY_MODES}")
        if self.bn_inference not in BN_INFERENCE_MODES:
            raise ConfigError(f"bn_inference must be one of {BN_INFERENCE_MODES}")

    @property
    def input_dim(self) -> int:
        return self.image_h * self.image_w

    @property
    def pooled_dim(self) -> int:
        return self.d_out // 2

    @property
    def n_graph_layers(self) -> int:
        return self.gcn_layers if self.use_gcn else 0

    def replace(self, **changes) -> "ModelConfig":
        return dataclasses.replace(self, **changes)


def mstar_config(**overrides) -> ModelConfig:
    """128x128 inputs, feature length 86, 10 classes, batch 64."""
    base = dict(image_h=128, image_w=128, d_out=86, num_classes=10, batch_size=64)
    base.update(overrides)
    return ModelConfig(**base)


def cxr_config(**overrides) -> ModelConfig:
    """224x224 inputs, feature length 112, 2 classes, batch 64."""
    base = dict(image_h=224, image_w=224, d_out=112, num_classes=2, batch_size=64)
    base.update(overrides)
    return ModelConfig(**base)


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(np.float32)


@dataclass
class GeccoModel:
    config: ModelConfig
    w1: np.ndarray
    b1: np.ndarray
    w2: list[np.ndarray]
    bn_gamma: np.ndarray | None
    bn_beta: np.ndarray | None
    bn_running_mean: np.ndarray | None
    bn_running_var: np.ndarray | None
    w_cls: np.ndarray
    b_cls: np.ndarray
    mode: str = "train"

    @classmethod
    def init(cls, config: ModelConfig, seed: int | np.random.Generator = 0) -> "GeccoModel":
        rng = np.random.default_rng(seed)
        d, p = config.d_out, config.pooled_dim
        w1 = _glorot(rng, config.input_dim, d)
        w2 = [_glorot(rng, d, d) for _ in range(config.n_graph_layers)]
        w_cls = _glorot(rng, p, config.num_classes)
        has_bn = config.n_graph_layers > 0
        ones, zeros = np.ones((1, d), np.float32), np.zeros((1, d), np.float32)
        return cls(
            config=config,
            w1=w1,
            b1=np.zeros((1, d), np.float32),
            w2=w2,
            bn_gamma=ones.copy() if has_bn else None,
            bn_beta=zeros.copy() if has_bn else None,
            bn_running_mean=zeros.copy() if has_bn else None,
            bn_running_var=ones.copy() if has_bn else None,
            w_cls=w_cls,
            b_cls=np.zeros((1, config.num_classes), np.float32),
        )

    def parameters(self) -> dict[str, np.ndarray]:
        """Trainable tensors by name, in a fixed order."""
        params = {"w1": self.w1, "b1": self.b1}
        for i, w in enumerate(self.w2):
            params[f"w2.{i}"] = w
        if self.bn_gamma is not None:
            params["bn_gamma"] = self.bn_gamma
            params["bn_beta"] = self.bn_beta
        params["w_cls"] = self.w_cls
        params["b_cls"] = self.b_cls
        return params

    def buffers(self) -> dict[str, np.ndarray]:
        if self.bn_running_mean is None:
            return {}
        return {"bn_running_mean": self.bn_running_mean, "bn_running_var": self.bn_running_var}

    def set_tensor(self, name: str, value: np.ndarray) -> None:
        """Replace a parameter or buffer, keeping its shape and dtype."""
        current = {**self.parameters(), **self.buffers()}.get(name)
        if current is None:
            raise KeyError(name)
        value = np.array(value, dtype=current.dtype)
        if value.shape != current.shape:
            raise ValueError(f"{name}: expected shape {current.shape}, got {value.shape}")
        if name.startswith("w2."):
            self.w2[int(name[3:])] = value
        else:
            setattr(self, name, value)

    def train(self) -> "GeccoModel":
        self.mode = "train"
        return self

    def eval(self) -> "GeccoModel":
        self.mode = "eval"
        return self

    def copy(self, dtype=None) -> "GeccoModel":
        def cp(a):
            return None if a is None else np.array(a, dtype=dtype or a.dtype)

        return GeccoModel(
            config=self.config,
            w1=cp(self.w1),
            b1=cp(self.b1),
            w2=[cp(w) for w in self.w2],
            bn_gamma=cp(self.bn_gamma),
            bn_beta=cp(self.bn_beta),
            bn_running_mean=cp(self.bn_running_mean),
            bn_running_var=cp(self.bn_running_var),
            w_cls=cp(self.w_cls),
            b_cls=cp(self.b_cls),
            mode=self.mode,
        )


@dataclass
class BatchNormCache:
    mode: str
    mean: np.ndarray
    inv_std: np.ndarray
    x_hat: np.ndarray


@dataclass
class ForwardTrace:
    """Every intermediate of one forward pass, kept for backprop and inspection."""

    x1: np.ndarray
    z1: np.ndarray
    x2: np.ndarray
    dropout_mask: np.ndarray | None
    x2_dropped: np.ndarray
    x3: np.ndarray
    graph_active: bool
    adjacency: np.ndarray | None = None
    gcn_inputs: list[np.ndarray] = field(default_factory=list)
    gcn_aggregates: list[np.ndarray] = field(default_factory=list)
    gcn_sigmoids: list[np.ndarray] = field(default_factory=list)
    x4_conv: np.ndarray | None = None
    x4_bn: np.ndarray | None = None
    bn_cache: BatchNormCache | None = None
    pool_argmax: np.ndarray | None = None
    x4: np.ndarray | None = None
    similarity: np.ndarray | None = None
    attention: np.ndarray | None = None
    x5: np.ndarray | None = None
    x6: np.ndarray | None = None
    logits: np.ndarray | None = None
    probabilities: np.ndarray | None = None


def vectorize(images) -> np.ndarray:
    """Flatten a B x H x W stack to B x (H*W), each row in row-major scan order."""
    try:
        arr = np.asarray(images, dtype=np.float32) if not isinstance(images, np.ndarray) else images
    except ValueError as exc:
        raise T.ShapeError(f"ragged image batch: {exc}") from None
    if arr.dtype == object or arr.ndim != 3:
        raise T.ShapeError(f"expected a B x H x W image batch, got shape {np.shape(arr)}")
    dtype = arr.dtype if arr.dtype in (np.float32, np.float64) else np.float32
    return T.as_tensor(arr.reshape(arr.shape[0], -1), dtype=dtype)


def adjacency(batch: int, mode: str, dtype=np.float32) -> np.ndarray:
    a = np.ones((batch, batch), dtype=dtype)
    if mode == "row-normalized":
        a /= batch
    return a


def _similarity_and_mixing(x4):
    s = T.sigmoid(T.matmul(x4, T.transpose(x4)))
    return s, s / T.column_sums(s)


def attention_mixing_matrix(x4) -> np.ndarray:
    """sigmoid(X4 X4^T) with every column divided by its own sum."""
    return _similarity_and_mixing(x4)[1]


def dropout(x: np.ndarray, rate: float, rng: np.random.Generator):
    """Inverted dropout. Returns (output, mask) with the 1/(1-rate) scale folded into mask."""
    keep = rng.random(x.shape) >= rate
    mask = keep.astype(x.dtype) / x.dtype.type(1.0 - rate)
    return x * mask, mask


def batchnorm(x, gamma, beta, running_mean, running_var, mode: str, update_running: bool = True):
    """Per-feature batch norm. Returns (output, cache).

    ``mode`` is "train" (batch statistics, running averages updated in place
    unless ``update_running`` is False), "batch" (batch statistics, nothing
    updated) or "eval" (running averages).
    """
    x = T.as_tensor(x)
    if mode not in ("train", "batch", "eval"):
        raise ValueError(f"unknown batch-norm mode {mode!r}")
    if mode != "eval":
        n = x.shape[0]
        if n < 2:
            raise ConfigError(
                "batch norm needs at least 2 rows for batch statistics; use running statistics (eval) or a larger batch"
            )
        mean = x.mean(axis=0, keepdims=True)
        var = ((x - mean) ** 2).mean(axis=0, keepdims=True)
        if mode == "train" and update_running:
            unbiased = var * (n / (n - 1))
            running_mean *= 1 - BN_MOMENTUM
            running_mean += BN_MOMENTUM * mean.astype(running_mean.dtype)
            running_var *= 1 - BN_MOMENTUM
            running_var += BN_MOMENTUM * unbiased.astype(running_var.dtype)
    else:
        mean, var = running_mean, running_var
    inv_std = (1.0 / np.sqrt(var + BN_EPS)).astype(x.dtype)
    x_hat = (x - mean) * inv_std
    out = T.row_broadcast_add(x_hat * gamma, beta)
    return out, BatchNormCache(mode=mode, mean=mean, inv_std=inv_std, x_hat=x_hat)


def _as_rng(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    if rng is None:
        raise ConfigError("train-mode forward with dropout needs an rng seed")
    return np.random.default_rng(rng)


def forward(model: GeccoModel, x, rng=None, update_running: bool = True) -> ForwardTrace:
    """Run one batch. ``x`` is B x (H*W); ``rng`` seeds dropout in train mode."""
    cfg = model.config
    x1 = T.as_tensor(x, dtype=model.w1.dtype)
    if x1.shape[1] != cfg.input_dim:
        raise T.ShapeError(f"input has {x1.shape[1]} features, config expects {cfg.input_dim}")
    batch = x1.shape[0]
    train = model.mode == "train"

    z1 = T.row_broadcast_add(T.matmul(x1, model.w1), model.b1)
    x2 = T.relu(z1)
    mask = None
    if train and cfg.dropout_rate > 0:
        x2_dropped, mask = dropout(x2, cfg.dropout_rate, _as_rng(rng))
    else:
        x2_dropped = x2
    x3 = T.relu(x2_dropped)

    graph_active = cfg.n_graph_layers > 0 and batch > 1
    trace = ForwardTrace(
        x1=x1, z1=z1, x2=x2, dropout_mask=mask, x2_dropped=x2_dropped, x3=x3,
        graph_active=graph_active,
    )

    if not graph_active:
        # no graph to build: pooled X3 goes straight to the classifier
        trace.pool_argmax = T.maxpool_argmax(x3, 2)
        x6 = T.maxpool_features(x3, 2)
    else:
        a = adjacency(batch, cfg.adjacency_mode, dtype=x3.dtype)
        trace.adjacency = a
        h = x3
        for w in model.w2:
            trace.gcn_inputs.append(h)
            agg = T.matmul(a, h)
            s = T.sigmoid(T.matmul(agg, w))
            trace.gcn_aggregates.append(agg)
            trace.gcn_sigmoids.append(s)
            h = T.add(s, h) if cfg.gcn_residual else s
        trace.x4_conv = h
        if train:
            bn_mode = "train"
        else:
            bn_mode = "batch" if cfg.bn_inference == "batch" else "eval"
        x4_bn, trace.bn_cache = batchnorm(
            h, model.bn_gamma, model.bn_beta, model.bn_running_mean, model.bn_running_var,
            bn_mode, update_running=update_running,
        )
        trace.x4_bn = x4_bn
        trace.pool_argmax = T.maxpool_argmax(x4_bn, 2)
        x4 = T.maxpool_features(x4_bn, 2)
        trace.x4 = x4
        if cfg.use_attention:
            trace.similarity, trace.attention = _similarity_and_mixing(x4)
            trace.x5 = T.matmul(trace.attention, x4)
            x6 = T.add(trace.x5, x4)
        else:
            x6 = x4
    trace.x6 = x6
    trace.logits = T.row_broadcast_add(T.matmul(x6, model.w_cls), model.b_cls)
    trace.probabilities = T.softmax_rows(trace.logits)
    return trace


def predict(model: GeccoModel, x) -> np.ndarray:
    """Eval-mode class predictions for one batch."""
    mode = model.mode
    model.eval()
    try:
        return forward(model, x).probabilities.argmax(axis=1)
    finally:
        model.mode = mode
