"""Small shared numeric helpers."""

from __future__ import annotations

import numpy as np

from .errors import ConfigurationError


def frozen_array(value, shape=None, name="array"):
    """Copy ``value`` into a read-only float array, checking shape and finiteness."""
    arr = np.array(value, dtype=float)
    if shape is not None and arr.shape != shape:
        raise ConfigurationError(f"{name}: expected shape {shape}, got {arr.shape}")
    if arr.size and not np.all(np.isfinite(arr)):
        raise ConfigurationError(f"{name}: non-finite entries")
    arr.setflags(write=False)
    return arr


def softmax_rows(logits):
    """Row-wise softmax with max subtraction; rows must be non-empty."""
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)
