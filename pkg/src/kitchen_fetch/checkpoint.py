"""Binary checkpoints: network spec, flat parameters, optional Adam moments.

Layout (little-endian)::

    8s   magic b"KFETCHPP"
    u32  format version
    u32  input_channels, window, n_conv, then (out, kernel, stride) per conv
    u32  hidden_units, context_units, action_count
    u64  parameter count P
    f64  P parameters
    u8   1 if optimizer state follows
    u64  Adam step count, then f64 beta1, beta2, eps, then P first and P second moments
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Optional

import numpy as np

from .policy import NetworkSpec, PolicyParams
from .ppo import AdamState

MAGIC = b"KFETCHPP"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def encode_checkpoint(params: PolicyParams, adam: Optional[AdamState] = None) -> bytes:
    spec = params.spec
    parts = [MAGIC, struct.pack("<I", FORMAT_VERSION)]
    parts.append(struct.pack("<III", spec.input_channels, spec.window, len(spec.conv_layers)))
    for layer in spec.conv_layers:
        parts.append(struct.pack("<III", *layer))
    parts.append(struct.pack("<III", spec.hidden_units, spec.context_units, spec.action_count))
    parts.append(struct.pack("<Q", params.parameter_count))
    parts.append(params.flat.astype("<f8").tobytes())
    if adam is None:
        parts.append(b"\x00")
    else:
        parts.append(b"\x01" + struct.pack("<Qddd", adam.t, adam.beta1, adam.beta2, adam.eps))
        parts.append(adam.m.astype("<f8").tobytes())
        parts.append(adam.v.astype("<f8").tobytes())
    return b"".join(parts)


def decode_checkpoint(data: bytes) -> tuple[PolicyParams, Optional[AdamState], int]:
    """Returns (params, optimizer state or None, format version)."""
    pos = 0

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(data):
            raise CheckpointError("truncated checkpoint")
        vals = struct.unpack_from(fmt, data, pos)
        pos += size
        return vals

    def floats(n):
        nonlocal pos
        if pos + 8 * n > len(data):
            raise CheckpointError("truncated checkpoint")
        arr = np.frombuffer(data, dtype="<f8", count=n, offset=pos).astype(np.float64)
        pos += 8 * n
        return arr

    if data[:8] != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic)")
    pos = 8
    (version,) = take("<I")
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    channels, window, n_conv = take("<III")
    convs = tuple(take("<III") for _ in range(n_conv))
    hidden, context, actions = take("<III")
    try:
        spec = NetworkSpec(channels, window, convs, hidden, context, actions)
    except ValueError as e:
        raise CheckpointError(f"invalid network spec in checkpoint: {e}") from None
    (count,) = take("<Q")
    if count != spec.parameter_count:
        raise CheckpointError(f"checkpoint holds {count} parameters, spec implies {spec.parameter_count}")
    params = PolicyParams(spec, floats(count))
    (flag,) = take("<B")
    adam = None
    if flag:
        t, b1, b2, eps = take("<Qddd")
        adam = AdamState(floats(count), floats(count), t, b1, b2, eps)
    if pos != len(data):
        raise CheckpointError("trailing bytes after checkpoint")
    return params, adam, version


def save_checkpoint(path, params: PolicyParams, adam: Optional[AdamState] = None) -> None:
    Path(path).write_bytes(encode_checkpoint(params, adam))


def load_checkpoint(path) -> tuple[PolicyParams, Optional[AdamState]]:
    params, adam, _ = decode_checkpoint(Path(path).read_bytes())
    return params, adam
