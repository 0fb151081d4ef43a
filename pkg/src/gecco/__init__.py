"""Shallow batch-graph grayscale classifier with complexity, scheduling and timing tools."""
from .model import GeccoModel, ModelConfig, forward, vectorize

__all__ = ["GeccoModel", "ModelConfig", "forward", "vectorize"]
