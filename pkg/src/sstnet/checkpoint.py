"""Binary model checkpoints.

Layout (little-endian)::

    8 bytes   magic b"SSTCKPT\\0"
    u32       version (1)
    u32 + n   SstConfig as ``key = value`` text (UTF-8)
    u32 + n   free-form metadata text (UTF-8, may be empty)
    u32       tensor count
    per tensor:
      u16 + n name (UTF-8)
      u8      rank
      u32*rank dims
      f32*     payload, row-major
"""

import os
import struct
from collections import OrderedDict
from pathlib import Path

import numpy as np

from .autodiff import Tensor
from .errors import FormatError
from .sst import SstConfig, SstModel

MAGIC = b"SSTCKPT\0"
VERSION = 1


def save_checkpoint(model, path, metadata=""):
    path = Path(path)
    chunks = [MAGIC, struct.pack("<I", VERSION)]
    for text in (model.config.to_text(), metadata):
        raw = text.encode("utf-8")
        chunks += [struct.pack("<I", len(raw)), raw]
    chunks.append(struct.pack("<I", len(model.params)))
    for name, t in model.params.items():
        nm = name.encode("utf-8")
        chunks += [struct.pack("<H", len(nm)), nm, struct.pack("<B", t.ndim)]
        chunks.append(struct.pack(f"<{t.ndim}I", *t.shape))
        chunks.append(np.ascontiguousarray(t.data, dtype="<f4").tobytes())
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(b"".join(chunks))
    os.replace(tmp, path)


class _Reader:
    def __init__(self, raw, path):
        self.raw, self.pos, self.path = raw, 0, path

    def take(self, n, what):
        if self.pos + n > len(self.raw):
            raise FormatError(f"{self.path}: truncated while reading {what}", offset=self.pos)
        out = self.raw[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt, what):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def load_checkpoint(path, dtype=np.float32):
    """Return ``(model, metadata_text)``."""
    r = _Reader(Path(path).read_bytes(), path)
    if r.take(len(MAGIC), "magic") != MAGIC:
        raise FormatError(f"{path}: not an sstnet checkpoint", offset=0)
    (version,) = r.unpack("<I", "version")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported checkpoint version {version}", offset=len(MAGIC))
    texts = []
    for what in ("config", "metadata"):
        (n,) = r.unpack("<I", what + " length")
        texts.append(r.take(n, what).decode("utf-8"))
    config = SstConfig.from_text(texts[0])
    (count,) = r.unpack("<I", "tensor count")
    params = OrderedDict()
    for _ in range(count):
        (n,) = r.unpack("<H", "name length")
        name = r.take(n, "name").decode("utf-8")
        (rank,) = r.unpack("<B", f"{name} rank")
        shape = r.unpack(f"<{rank}I", f"{name} dims")
        size = int(np.prod(shape)) if rank else 1
        data = np.frombuffer(r.take(4 * size, f"{name} payload"), dtype="<f4").reshape(shape)
        params[name] = Tensor(data.astype(dtype), requires_grad=True, name=name)
    if r.pos != len(r.raw):
        raise FormatError(f"{path}: trailing bytes after last tensor", offset=r.pos)
    return SstModel(config, dtype=dtype, params=params), texts[1]
