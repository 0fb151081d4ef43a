"""``key = value`` run configuration files.

UTF-8, one assignment per line, ``#`` starts a comment. Unknown keys are
rejected; missing ones fall back to the defaults below and are reported.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass

from .model import ConfigError, ModelConfig


@dataclass
class RunConfig:
    train_images: str | None = None
    train_labels: str | None = None
    eval_images: str | None = None
    eval_labels: str | None = None
    train_dir: str | None = None
    eval_dir: str | None = None
    image_h: int = 28
    image_w: int = 28
    d_out: int = 86
    classes: int = 10
    batch_size: int = 64
    dropout: float = 0.5
    gcn_layers: int = 1
    use_gcn: bool = True
    use_attention: bool = True
    adjacency: str = "all-ones"
    gcn_residual: bool = True
    bn_inference: str = "batch"
    resize: str = "bilinear"
    epochs: int = 15
    lr: float = 1e-3
    seed: int = 0

    def model_config(self) -> ModelConfig:
        return ModelConfig(
            image_h=self.image_h, image_w=self.image_w, d_out=self.d_out,
            num_classes=self.classes, batch_size=self.batch_size, dropout_rate=self.dropout,
            gcn_layers=self.gcn_layers, use_gcn=self.use_gcn, use_attention=self.use_attention,
            adjacency_mode=self.adjacency, gcn_residual=self.gcn_residual,
            bn_inference=self.bn_inference,
        )


PATH_KEYS = ("train_images", "train_labels", "eval_images", "eval_labels", "train_dir", "eval_dir")
_FIELDS = {f.name: f for f in dataclasses.fields(RunConfig)}
_TRUE, _FALSE = {"true", "yes", "on", "1"}, {"false", "no", "off", "0"}


def _convert(key: str, raw: str):
    default = _FIELDS[key].default
    if key in PATH_KEYS:
        return raw
    if isinstance(default, bool):
        low = raw.lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    try:
        return type(default)(raw)
    except ValueError:
        raise ConfigError(f"{key}: expected {type(default).__name__}, got {raw!r}") from None


def parse_run_config(text: str) -> tuple[RunConfig, list[str]]:
    """Returns the config and the keys that were left at their defaults."""
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = _convert(key, raw)
    defaulted = [k for k in _FIELDS if k not in values and k not in PATH_KEYS]
    cfg = RunConfig(**values)
    cfg.model_config()  # validates
    return cfg, defaulted


def load_run_config(path) -> tuple[RunConfig, list[str]]:
    with open(path, encoding="utf-8") as f:
        return parse_run_config(f.read())


def format_run_config(cfg: RunConfig) -> str:
    lines = []
    for key in _FIELDS:
        value = getattr(cfg, key)
        if value is None:
            continue
        if isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
