"""Dense 4-D tensors, convolution geometry and the binary dump format.

Activations are NCHW and filters KCRS. Every tensor carries exactly one
element kind; the backing numpy array is made read-only on construction so
tensors can be shared between trial workers.
"""

from __future__ import annotations

import enum
import struct
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np


class ElemKind(enum.Enum):
    I8 = (0, "int8", 8)
    I32 = (1, "int32", 32)
    I64 = (2, "int64", 64)
    F32 = (3, "float32", 32)

    def __init__(self, tag: int, dtype: str, bits: int):
        self.tag = tag
        self.dtype = np.dtype(dtype)
        self.bits = bits

    @property
    def is_int(self) -> bool:
        return self is not ElemKind.F32

    @property
    def min(self) -> int:
        return int(np.iinfo(self.dtype).min)

    @property
    def max(self) -> int:
        return int(np.iinfo(self.dtype).max)

    @classmethod
    def from_tag(cls, tag: int) -> "ElemKind":
        for kind in cls:
            if kind.tag == tag:
                return kind
        raise ValueError(f"unknown element kind tag {tag}")

    @classmethod
    def from_dtype(cls, dtype) -> "ElemKind":
        dtype = np.dtype(dtype)
        for kind in cls:
            if kind.dtype == dtype:
                return kind
        raise TypeError(f"no element kind for dtype {dtype}")


Dims = tuple[int, int, int, int]


class Tensor4D:
    """A 4-D tensor of a single element kind, row-major with d0 outermost."""

    __slots__ = ("_array", "kind")

    def __init__(self, array: np.ndarray, kind: ElemKind | None = None):
        array = np.asarray(array)
        if array.ndim != 4:
            raise ValueError(f"expected 4 dimensions, got {array.ndim}")
        if any(d < 1 for d in array.shape):
            raise ValueError(f"all extents must be >= 1, got {array.shape}")
        if kind is None:
            kind = ElemKind.from_dtype(array.dtype)
        elif array.dtype != kind.dtype:
            if kind.is_int and np.issubdtype(array.dtype, np.integer):
                if array.size and (array.min() < kind.min or array.max() > kind.max):
                    raise OverflowError(f"values do not fit {kind.name}")
            array = array.astype(kind.dtype)
        array = np.ascontiguousarray(array, dtype=kind.dtype).copy()
        array.flags.writeable = False
        self._array = array
        self.kind = kind

    @property
    def array(self) -> np.ndarray:
        return self._array

    @property
    def dims(self) -> Dims:
        return tuple(int(d) for d in self._array.shape)  # type: ignore[return-value]

    @property
    def data(self) -> np.ndarray:
        """Flat read-only view of the element buffer."""
        return self._array.reshape(-1)

    @property
    def size(self) -> int:
        return int(self._array.size)

    def flat_index(self, a: int, b: int, c: int, d: int) -> int:
        d0, d1, d2, d3 = self.dims
        for i, n in zip((a, b, c, d), self.dims):
            if not 0 <= i < n:
                raise IndexError(f"coordinate {(a, b, c, d)} outside {self.dims}")
        return ((a * d1 + b) * d2 + c) * d3 + d

    def __getitem__(self, idx):
        return self._array[idx]

    def widen(self, kind: ElemKind) -> "Tensor4D":
        return Tensor4D(self._array.astype(kind.dtype), kind)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Tensor4D):
            return NotImplemented
        return self.kind is other.kind and np.array_equal(self._array, other._array)

    def __repr__(self) -> str:
        return f"Tensor4D(dims={self.dims}, kind={self.kind.name})"


def new_filled(dims: Sequence[int], kind: ElemKind, value) -> Tensor4D:
    if len(dims) != 4 or any(int(d) < 1 for d in dims):
        raise ValueError(f"need four extents >= 1, got {tuple(dims)}")
    if kind.is_int:
        if int(value) != value or not kind.min <= int(value) <= kind.max:
            raise OverflowError(f"{value!r} not representable as {kind.name}")
    elif not np.isfinite(np.float32(value)):
        raise OverflowError(f"{value!r} not representable as {kind.name}")
    return Tensor4D(np.full(tuple(int(d) for d in dims), value, dtype=kind.dtype), kind)


@dataclass(frozen=True)
class LayerShape:
    n: int
    c: int
    h: int
    w: int
    k: int
    r: int
    s: int
    stride_h: int = 1
    stride_w: int = 1
    pad_h: int = 0
    pad_w: int = 0
    p: int = field(init=False)
    q: int = field(init=False)

    def __post_init__(self):
        for name in ("n", "c", "h", "w", "k", "r", "s", "stride_h", "stride_w"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.pad_h < 0 or self.pad_w < 0:
            raise ValueError("padding must be non-negative")
        if self.r > self.h + 2 * self.pad_h or self.s > self.w + 2 * self.pad_w:
            raise ValueError("filter larger than padded input")
        object.__setattr__(self, "p", (self.h + 2 * self.pad_h - self.r) // self.stride_h + 1)
        object.__setattr__(self, "q", (self.w + 2 * self.pad_w - self.s) // self.stride_w + 1)

    @property
    def crs(self) -> int:
        return self.c * self.r * self.s

    @property
    def npq(self) -> int:
        return self.n * self.p * self.q

    @property
    def input_dims(self) -> Dims:
        return (self.n, self.c, self.h, self.w)

    @property
    def filter_dims(self) -> Dims:
        return (self.k, self.c, self.r, self.s)

    @property
    def output_dims(self) -> Dims:
        return (self.n, self.k, self.p, self.q)

    def with_batch(self, n: int) -> "LayerShape":
        return self.replace(n=n)

    def replace(self, **changes) -> "LayerShape":
        fields = dict(
            n=self.n, c=self.c, h=self.h, w=self.w, k=self.k, r=self.r, s=self.s,
            stride_h=self.stride_h, stride_w=self.stride_w, pad_h=self.pad_h, pad_w=self.pad_w,
        )
        fields.update(changes)
        return LayerShape(**fields)

    def check_input(self, t: Tensor4D) -> None:
        if t.dims != self.input_dims:
            raise ValueError(f"input dims {t.dims} do not match layer {self.input_dims}")

    def check_filters(self, t: Tensor4D) -> None:
        if t.dims != self.filter_dims:
            raise ValueError(f"filter dims {t.dims} do not match layer {self.filter_dims}")


def patch_accumulate_view(
    inp: Tensor4D, shape: LayerShape, n: int, p: int, q: int
) -> Iterator[tuple[int, int, int, int]]:
    """Yield ``(c, r, s, value)`` for the input window feeding output ``(n, p, q)``.

    Coordinates in the zero-padding halo yield 0.
    """
    shape.check_input(inp)
    if not (0 <= n < shape.n and 0 <= p < shape.p and 0 <= q < shape.q):
        raise IndexError(f"output position {(n, p, q)} outside {(shape.n, shape.p, shape.q)}")
    arr = inp.array
    h0 = p * shape.stride_h - shape.pad_h
    w0 = q * shape.stride_w - shape.pad_w
    for c in range(shape.c):
        for r in range(shape.r):
            hi = h0 + r
            for s in range(shape.s):
                wi = w0 + s
                if 0 <= hi < shape.h and 0 <= wi < shape.w:
                    yield c, r, s, int(arr[n, c, hi, wi])
                else:
                    yield c, r, s, 0


def padded(arr: np.ndarray, shape: LayerShape) -> np.ndarray:
    if shape.pad_h == 0 and shape.pad_w == 0:
        return arr
    return np.pad(arr, ((0, 0), (0, 0), (shape.pad_h, shape.pad_h), (shape.pad_w, shape.pad_w)))


def windows(arr: np.ndarray, shape: LayerShape) -> np.ndarray:
    """Strided window view of shape (N, C, P, Q, R, S) over the zero-padded input."""
    x = padded(arr, shape)
    view = np.lib.stride_tricks.sliding_window_view(x, (shape.r, shape.s), axis=(2, 3))
    return view[:, :, :: shape.stride_h, :: shape.stride_w][:, :, : shape.p, : shape.q]


# -- serialization -----------------------------------------------------------

MAGIC = b"ABED"
_HEADER = struct.Struct("<4sB4I")

# High nibble of the kind byte is a layout tag; 0 = NCHW/KCRS, the only layout
# written today.
LAYOUT_NCHW = 0


def serialize(t: Tensor4D) -> bytes:
    header = _HEADER.pack(MAGIC, (LAYOUT_NCHW << 4) | t.kind.tag, *t.dims)
    return header + t.array.astype(t.kind.dtype.newbyteorder("<"), copy=False).tobytes()


def deserialize(buf: bytes) -> Tensor4D:
    if len(buf) < _HEADER.size:
        raise ValueError("truncated header")
    magic, tag, *dims = _HEADER.unpack_from(buf)
    if magic != MAGIC:
        raise ValueError(f"bad magic {magic!r}")
    if tag >> 4 != LAYOUT_NCHW:
        raise ValueError(f"unsupported layout tag {tag >> 4}")
    kind = ElemKind.from_tag(tag & 0x0F)
    if any(d < 1 for d in dims):
        raise ValueError(f"bad extents {dims}")
    count = dims[0] * dims[1] * dims[2] * dims[3]
    payload = buf[_HEADER.size:]
    if len(payload) != count * kind.dtype.itemsize:
        raise ValueError(
            f"payload is {len(payload)} bytes, expected {count * kind.dtype.itemsize}"
        )
    arr = np.frombuffer(payload, dtype=kind.dtype.newbyteorder("<")).astype(kind.dtype)
    return Tensor4D(arr.reshape(dims), kind)


def save(t: Tensor4D, path) -> None:
    with open(path, "wb") as fh:
        fh.write(serialize(t))


def load(path) -> Tensor4D:
    with open(path, "rb") as fh:
        return deserialize(fh.read())
