"""Named tensor store and the ``.edtw`` binary container.

Layout (all integers little-endian)::

    b"EDTW"  u32 version (=1)  u32 tensor_count
    repeated tensor_count times:
        u16 name_len  name (UTF-8)  u8 ndim  ndim * u32 extents  float32 data

The float payload is raw little-endian IEEE-754, so a save/load round trip is
bit-exact.
"""

from __future__ import annotations

from collections import OrderedDict
from collections.abc import Iterator, Mapping
import math
import os
import struct
import zlib

import numpy as np

from .errors import (
    BadMagicError,
    DuplicateNameError,
    MissingWeightError,
    TruncatedFileError,
    VersionMismatchError,
    WeightFormatError,
)

MAGIC = b"EDTW"
VERSION = 1
MAX_NDIM = 32  # numpy 1.x array limit
_LE_F32 = np.dtype("<f4")


class WeightStore(Mapping):
    """Ordered ``name -> float32 tensor`` map with a provenance tag.

    ``provenance`` is ``("seeded", seed)`` or ``("loaded", path)``; anything else
    built in code carries ``("manual", None)``.
    """

    def __init__(self, tensors=None, provenance=("manual", None)):
        self._t: OrderedDict[str, np.ndarray] = OrderedDict()
        self.provenance = provenance
        if tensors is not None:
            items = tensors.items() if isinstance(tensors, Mapping) else tensors
            for name, value in items:
                self.add(name, value)

    def add(self, name: str, value) -> None:
        if name in self._t:
            raise DuplicateNameError(f"duplicate tensor name {name!r}")
        arr = np.array(value, dtype=np.float32, copy=True)
        arr.flags.writeable = False
        self._t[name] = arr

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            return self._t[name]
        except KeyError:
            raise MissingWeightError(name) from None

    def __iter__(self) -> Iterator[str]:
        return iter(self._t)

    def __len__(self) -> int:
        return len(self._t)

    def require(self, names, mechanism: str | None = None) -> None:
        for n in names:
            if n not in self._t:
                raise MissingWeightError(n, mechanism)

    def get_for(self, name: str, mechanism: str | None = None) -> np.ndarray:
        if name not in self._t:
            raise MissingWeightError(name, mechanism)
        return self._t[name]

    def __repr__(self) -> str:
        return f"WeightStore({len(self)} tensors, provenance={self.provenance!r})"


def _name_stream(seed: int, name: str) -> np.random.Generator:
    # one independent stream per tensor so manifest order does not matter
    return np.random.default_rng([seed & 0xFFFFFFFFFFFFFFFF, zlib.crc32(name.encode())])


def seeded_tensor(seed: int, name: str, shape, fan_in: int, init: str = "uniform") -> np.ndarray:
    """Deterministic initializer.

    ``uniform`` draws from ``U(-1/sqrt(fan_in), 1/sqrt(fan_in))``; ``ones``,
    ``zeros`` and ``mean`` (every entry ``1/fan_in``) are constant fills.
    """
    shape = tuple(int(s) for s in shape)
    if init == "ones":
        return np.ones(shape, np.float32)
    if init == "zeros":
        return np.zeros(shape, np.float32)
    if init == "mean":
        return np.full(shape, 1.0 / fan_in, np.float32)
    if init != "uniform":
        raise ValueError(f"unknown init {init!r}")
    bound = 1.0 / np.sqrt(max(fan_in, 1))
    return _name_stream(seed, name).uniform(-bound, bound, size=shape).astype(np.float32)


def save(store: Mapping, path) -> None:
    chunks = [MAGIC, struct.pack("<II", VERSION, len(store))]
    for name, value in store.items():
        raw = name.encode("utf-8")
        arr = np.asarray(value, dtype=np.float32)
        if len(raw) > 0xFFFF:
            raise WeightFormatError(f"tensor name too long: {name[:40]!r}...")
        if arr.ndim > MAX_NDIM:
            raise WeightFormatError(f"tensor {name!r} has too many dims")
        chunks.append(struct.pack("<H", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack(f"<B{arr.ndim}I", arr.ndim, *arr.shape))
        chunks.append(arr.astype(_LE_F32, copy=False).tobytes(order="C"))
    with open(path, "wb") as fh:
        fh.write(b"".join(chunks))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        end = self.pos + n
        if end > len(self.buf):
            raise TruncatedFileError(
                f"file truncated reading {what}: need {n} bytes at offset {self.pos}, "
                f"{len(self.buf) - self.pos} left"
            )
        out = self.buf[self.pos:end]
        self.pos = end
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def loads(buf: bytes, source=None) -> WeightStore:
    r = _Reader(buf)
    if len(buf) < len(MAGIC):
        raise TruncatedFileError("file shorter than the magic header")
    if r.take(4, "magic") != MAGIC:
        raise BadMagicError(f"bad magic {buf[:4]!r}, expected {MAGIC!r}")
    (version,) = r.unpack("<I", "version")
    if version != VERSION:
        raise VersionMismatchError(f"container version {version}, reader supports {VERSION}")
    (count,) = r.unpack("<I", "tensor count")
    store = WeightStore(provenance=("loaded", source))
    for i in range(count):
        (nlen,) = r.unpack("<H", f"name length of tensor {i}")
        try:
            name = r.take(nlen, f"name of tensor {i}").decode("utf-8")
        except UnicodeDecodeError as e:
            raise WeightFormatError(f"tensor {i} name is not UTF-8") from e
        (ndim,) = r.unpack("<B", f"ndim of {name!r}")
        shape = r.unpack(f"<{ndim}I", f"extents of {name!r}")
        if ndim > MAX_NDIM:
            raise WeightFormatError(f"tensor {name!r} has {ndim} dims, at most {MAX_NDIM} supported")
        size = math.prod(shape)
        data = r.take(4 * size, f"data of {name!r}")
        if name in store:
            raise DuplicateNameError(f"duplicate tensor name {name!r}")
        store.add(name, np.frombuffer(data, dtype=_LE_F32).reshape(shape))
    if r.pos != len(buf):
        raise WeightFormatError(f"{len(buf) - r.pos} trailing bytes after {count} tensors")
    return store


def load(path) -> WeightStore:
    with open(path, "rb") as fh:
        buf = fh.read()
    return loads(buf, source=os.fspath(path))
