"""Versioned binary model file.

Layout (all integers little-endian):

- magic bytes ``MLRF``
- u32 format version (currently 1)
- u32 in_channels, u32 hidden_channels, u32 kernel_size
- u32 count + that many u32 stage-1 dilations
- u32 count + that many u32 stage-2 dilations
- u64 parameter count
- parameter data: float64 little-endian, canonical layout order
  (see ``RefinerArchitecture.param_layout``)
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from ..errors import DataError
from .network import RefinerArchitecture, RefinerModel

MAGIC = b"MLRF"
VERSION = 1


def save_model(model: RefinerModel, path) -> None:
    arch = model.architecture
    parts = [MAGIC, struct.pack("<I", VERSION)]
    parts.append(struct.pack("<III", arch.in_channels, arch.hidden_channels, arch.kernel_size))
    for dil in (arch.stage1_dilations, arch.stage2_dilations):
        parts.append(struct.pack("<I", len(dil)))
        parts.append(struct.pack(f"<{len(dil)}I", *dil))
    flat = model.flat()
    parts.append(struct.pack("<Q", flat.size))
    parts.append(flat.astype("<f8").tobytes())
    Path(path).write_bytes(b"".join(parts))


def load_model(path) -> RefinerModel:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as e:
        raise DataError(f"cannot read model file {path}: {e}") from e
    try:
        if raw[:4] != MAGIC:
            raise DataError(f"{path}: bad magic {raw[:4]!r}, expected {MAGIC!r}")
        (version,) = struct.unpack_from("<I", raw, 4)
        if version != VERSION:
            raise DataError(f"{path}: unsupported model format version {version}")
        pos = 8
        in_ch, hidden, kernel = struct.unpack_from("<III", raw, pos)
        pos += 12
        dilations = []
        for _ in range(2):
            (count,) = struct.unpack_from("<I", raw, pos)
            pos += 4
            dilations.append(struct.unpack_from(f"<{count}I", raw, pos))
            pos += 4 * count
        (n_params,) = struct.unpack_from("<Q", raw, pos)
        pos += 8
        arch = RefinerArchitecture(
            in_channels=in_ch,
            hidden_channels=hidden,
            kernel_size=kernel,
            stage1_dilations=tuple(dilations[0]),
            stage2_dilations=tuple(dilations[1]),
        )
        if n_params != arch.n_params:
            raise DataError(
                f"{path}: parameter count {n_params} does not match the "
                f"architecture ({arch.n_params})"
            )
        try:
            data = np.frombuffer(raw, dtype="<f8", count=n_params, offset=pos)
        except ValueError as e:
            raise DataError(f"{path}: truncated parameter data ({e})") from e
        return RefinerModel.from_flat(arch, np.asarray(data, dtype=np.float64))
    except struct.error as e:
        raise DataError(f"{path}: truncated model file ({e})") from e
