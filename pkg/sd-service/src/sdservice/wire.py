"""Tensor wire codec: shape-prefixed base64 little-endian float32.

This mirrors the client's format from the protocol side. The shape is
authoritative; a payload whose byte count disagrees is malformed, as is
anything non-finite. All failures raise WireError so the HTTP layer can
turn them into 400s uniformly.
"""

from __future__ import annotations

import base64
import binascii
import math

import numpy as np

WIRE_DTYPE = "f32"


class WireError(ValueError):
    """Malformed tensor payload."""


def encode_tensor(grid: np.ndarray) -> dict:
    a = np.ascontiguousarray(grid, dtype="<f4")
    if not np.isfinite(a).all():
        raise WireError("tensor contains non-finite values")
    return {
        "shape": [int(s) for s in a.shape],
        "dtype": WIRE_DTYPE,
        "data": base64.b64encode(a.tobytes()).decode("ascii"),
    }


def decode_tensor(payload) -> np.ndarray:
    if not isinstance(payload, dict):
        raise WireError(f"tensor payload must be an object, got {type(payload).__name__}")
    for key in ("shape", "dtype", "data"):
        if key not in payload:
            raise WireError(f"tensor payload missing {key!r}")
    if payload["dtype"] != WIRE_DTYPE:
        raise WireError(f"unsupported wire dtype {payload['dtype']!r}")
    try:
        shape = tuple(int(s) for s in payload["shape"])
    except (TypeError, ValueError) as exc:
        raise WireError(f"bad shape {payload['shape']!r}") from exc
    if any(s < 0 for s in shape):
        raise WireError(f"negative dimension in shape {shape}")
    try:
        raw = base64.b64decode(payload["data"], validate=True)
    except (binascii.Error, ValueError, TypeError) as exc:
        raise WireError(f"tensor data is not valid base64: {exc}") from exc
    expected = math.prod(shape) * 4
    if len(raw) != expected:
        raise WireError(f"shape {shape} implies {expected} bytes, payload has {len(raw)}")
    grid = np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float64)
    if not np.isfinite(grid).all():
        raise WireError("tensor contains non-finite values")
    return grid
