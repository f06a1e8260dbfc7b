"""Binary model checkpoints.

Layout (little-endian throughout):
  magic ``CAPS1\\0``
  12 x u32        one per ModelConfig integer, in declaration order
  5 tensors       conv1_kernels, conv1_bias, pc_kernels, pc_bias, W;
                  each as u32 rank, u32 dims..., then f64 values in C order

Round-trips are byte-exact.
"""

import struct
from pathlib import Path

import numpy as np

from ..errors import ParseError
from .model import CONFIG_FIELDS, ModelConfig, ModelParams, PARAM_FIELDS

MAGIC = b"CAPS1\0"


def save_checkpoint(path, params: ModelParams, config: ModelConfig) -> None:
    blob = bytearray(MAGIC)
    for name in CONFIG_FIELDS:
        blob += struct.pack("<I", getattr(config, name))
    for name in PARAM_FIELDS:
        arr = np.ascontiguousarray(getattr(params, name), dtype="<f8")
        blob += struct.pack("<I", arr.ndim)
        blob += struct.pack(f"<{arr.ndim}I", *arr.shape)
        blob += arr.tobytes()
    Path(path).write_bytes(bytes(blob))


def load_checkpoint(path):
    """Read a checkpoint; returns (params as float64, config)."""
    raw = Path(path).read_bytes()
    if raw[: len(MAGIC)] != MAGIC:
        raise ParseError(f"{path}: not a model checkpoint (bad magic)")
    off = len(MAGIC)

    def take(fmt):
        nonlocal off
        size = struct.calcsize(fmt)
        if off + size > len(raw):
            raise ParseError(f"{path}: truncated checkpoint")
        vals = struct.unpack_from(fmt, raw, off)
        off += size
        return vals

    cfg_vals = take(f"<{len(CONFIG_FIELDS)}I")
    config = ModelConfig(**dict(zip(CONFIG_FIELDS, cfg_vals)))

    tensors = {}
    for name in PARAM_FIELDS:
        (rank,) = take("<I")
        shape = take(f"<{rank}I")
        count = int(np.prod(shape)) if rank else 1
        nbytes = count * 8
        if off + nbytes > len(raw):
            raise ParseError(f"{path}: truncated tensor {name}")
        arr = np.frombuffer(raw, dtype="<f8", count=count, offset=off).reshape(shape)
        off += nbytes
        tensors[name] = arr.copy()
    if off != len(raw):
        raise ParseError(f"{path}: trailing bytes after parameters")
    return ModelParams(**tensors), config
