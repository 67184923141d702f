"""Dual-memory video anomaly detection trained with a few labeled anomalies."""

from .config import RunConfig, load_config
from .memory import Branch, MemoryBank, QueryGrid, init_bank, read, update
from .network import DreamNet, ModelConfig

__version__ = "0.1.0"

__all__ = [
    "Branch",
    "DreamNet",
    "MemoryBank",
    "ModelConfig",
    "QueryGrid",
    "RunConfig",
    "init_bank",
    "load_config",
    "read",
    "update",
]
