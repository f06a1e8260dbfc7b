"""Feature-image binary format.

Layout (little-endian):
  magic ``FIMG1\\0``
  u32 channels, u32 height, u32 width
  u32 label (0 = HC, 1 = PD)
  u32 subject-id byte length, then that many UTF-8 bytes
  u32 epoch index
  channels * height * width f32 values, channel-major, row-major

Round-trips are byte-exact; pixel values are stored at f32 precision.
"""

import struct
from pathlib import Path

import numpy as np

from .errors import ParseError
from .topomap import FULL_CHANNEL_ORDER, FeatureImage

MAGIC = b"FIMG1\0"

GROUP_OF_LABEL = {0: "HC", 1: "PD"}


def write_fimg(path, image: FeatureImage) -> None:
    data = np.ascontiguousarray(image.data, dtype="<f4")
    subject = image.subject_id.encode("utf-8")
    blob = bytearray(MAGIC)
    blob += struct.pack("<3I", *data.shape)
    blob += struct.pack("<I", image.label)
    blob += struct.pack("<I", len(subject)) + subject
    blob += struct.pack("<I", image.epoch_index)
    blob += data.tobytes()
    Path(path).write_bytes(bytes(blob))


def read_fimg(path) -> FeatureImage:
    raw = Path(path).read_bytes()
    if raw[: len(MAGIC)] != MAGIC:
        raise ParseError(f"{path}: not a feature image (bad magic)")
    off = len(MAGIC)

    def take(fmt):
        nonlocal off
        size = struct.calcsize(fmt)
        if off + size > len(raw):
            raise ParseError(f"{path}: truncated feature image")
        vals = struct.unpack_from(fmt, raw, off)
        off += size
        return vals

    channels, height, width = take("<3I")
    (label,) = take("<I")
    if label not in GROUP_OF_LABEL:
        raise ParseError(f"{path}: unknown label {label}")
    (subject_len,) = take("<I")
    if off + subject_len > len(raw):
        raise ParseError(f"{path}: truncated subject id")
    subject = raw[off:off + subject_len].decode("utf-8")
    off += subject_len
    (epoch_index,) = take("<I")
    count = channels * height * width
    if off + 4 * count != len(raw):
        raise ParseError(f"{path}: pixel payload has wrong size")
    data = np.frombuffer(raw, dtype="<f4", count=count, offset=off)
    data = data.reshape(channels, height, width).copy()
    order = FULL_CHANNEL_ORDER if channels == len(FULL_CHANNEL_ORDER) else None
    return FeatureImage(
        data=data,
        subject_id=subject,
        group=GROUP_OF_LABEL[label],
        epoch_index=epoch_index,
        channel_order=order,
    )


def image_filename(image: FeatureImage) -> str:
    return f"{image.subject_id}_e{image.epoch_index:04d}.fimg"


def write_image_dir(directory, images) -> list:
    """Write every image into ``directory``; returns the paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for image in images:
        path = directory / image_filename(image)
        write_fimg(path, image)
        paths.append(path)
    return paths


def load_image_dir(directory) -> list:
    """Read all ``*.fimg`` files under ``directory`` in sorted name order."""
    directory = Path(directory)
    paths = sorted(directory.glob("*.fimg"))
    if not paths:
        raise ParseError(f"{directory}: no .fimg files found")
    return [read_fimg(p) for p in paths]
