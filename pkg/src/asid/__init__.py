"""Lightweight attention-sharing super-resolution network on a numpy autodiff core."""

from .errors import (AsidError, ConfigError, ContractError, CorruptStoreError, DataError, DimensionError,
                     NumericError, OrderingError, ShareError)
from .network import ASID, PRESETS, ModelConfig, build

__all__ = [
    "ASID", "ModelConfig", "PRESETS", "build",
    "AsidError", "ConfigError", "ContractError", "CorruptStoreError", "DataError", "DimensionError",
    "NumericError", "OrderingError", "ShareError",
]
__version__ = "0.1.0"
