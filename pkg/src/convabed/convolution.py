"""Reference integer convolution, the fused epilog, and an im2col/GEMM lowering.

Integer products are evaluated with a float64 GEMM whenever the worst-case
magnitude of every partial sum stays below 2**53, which makes the result exact
regardless of summation order. Wider cases fall back to int64 numpy matmul.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .tensor import ElemKind, LayerShape, Tensor4D, windows

MAX_INT32_CRS = 65536
_FLOAT64_EXACT = 2**53


class PrecisionError(ValueError):
    """An accumulator kind is too narrow for the requested computation."""


class Activation(enum.Enum):
    RELU = "relu"
    IDENTITY = "identity"


@dataclass(frozen=True)
class EpilogParams:
    scale: float
    bias: tuple[float, ...]
    activation: Activation = Activation.RELU
    output_kind: ElemKind = ElemKind.I8

    def __post_init__(self):
        object.__setattr__(self, "bias", tuple(float(b) for b in self.bias))
        if not math.isfinite(self.scale) or not all(math.isfinite(b) for b in self.bias):
            raise ValueError("scale and bias must be finite")
        if self.output_kind not in (ElemKind.I8, ElemKind.F32):
            raise ValueError("epilog output must be I8 or F32")

    @classmethod
    def uniform(cls, k: int, scale: float = 1.0, bias: float = 0.0, **kw) -> "EpilogParams":
        return cls(scale=scale, bias=(bias,) * k, **kw)


class Matrix:
    """Row-major 2-D matrix with a single element kind."""

    __slots__ = ("_array", "kind")

    def __init__(self, array: np.ndarray, kind: ElemKind | None = None):
        array = np.asarray(array)
        if array.ndim != 2:
            raise ValueError(f"expected 2 dimensions, got {array.ndim}")
        if kind is None:
            kind = ElemKind.from_dtype(array.dtype)
        arr = np.ascontiguousarray(array, dtype=kind.dtype).copy()
        arr.flags.writeable = False
        self._array = arr
        self.kind = kind

    @property
    def array(self) -> np.ndarray:
        return self._array

    @property
    def rows(self) -> int:
        return self._array.shape[0]

    @property
    def cols(self) -> int:
        return self._array.shape[1]

    @property
    def data(self) -> np.ndarray:
        return self._array.reshape(-1)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Matrix):
            return NotImplemented
        return self.kind is other.kind and np.array_equal(self._array, other._array)

    def __repr__(self) -> str:
        return f"Matrix({self.rows}x{self.cols}, kind={self.kind.name})"


def _magnitude(arr: np.ndarray) -> int:
    if arr.size == 0:
        return 0
    return max(abs(int(arr.min())), abs(int(arr.max())))


def required_bits(a: np.ndarray, b: np.ndarray, inner: int) -> int:
    """Signed bit width that holds any dot product of length ``inner`` of these operands."""
    bound = _magnitude(a) * _magnitude(b) * inner
    return bound.bit_length() + 1


def exact_matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Exact integer product of two integer 2-D arrays, returned as int64."""
    bound = _magnitude(a) * _magnitude(b) * a.shape[1]
    if bound < _FLOAT64_EXACT:
        out = a.astype(np.float64) @ b.astype(np.float64)
        return out.astype(np.int64)
    if bound >= 2**63:
        raise PrecisionError("product does not fit a 64-bit accumulator")
    return a.astype(np.int64) @ b.astype(np.int64)


def narrow(values: np.ndarray, kind: ElemKind) -> np.ndarray:
    if values.size and (values.min() < kind.min or values.max() > kind.max):
        raise PrecisionError(f"result exceeds {kind.name}")
    return values.astype(kind.dtype)


# -- convolution ----------------------------------------------------------------


def patch_matrix(arr: np.ndarray, shape: LayerShape) -> np.ndarray:
    """Flattened input windows, (C*R*S) x (N*P*Q), in the input's dtype."""
    win = windows(arr, shape)  # N C P Q R S
    return win.transpose(1, 4, 5, 0, 2, 3).reshape(shape.crs, shape.npq)


def conv_accumulate(inp: np.ndarray, filt: np.ndarray, shape: LayerShape) -> np.ndarray:
    """Exact int64 NKPQ convolution of raw integer arrays."""
    k = filt.shape[0]
    cols = patch_matrix(inp, shape)
    out = exact_matmul(filt.reshape(k, -1), cols)
    return out.reshape(k, shape.n, shape.p, shape.q).transpose(1, 0, 2, 3)


def conv_direct(inp: Tensor4D, filters: Tensor4D, shape: LayerShape) -> Tensor4D:
    """int8 x int8 convolution accumulated exactly into int32 (NKPQ)."""
    shape.check_input(inp)
    shape.check_filters(filters)
    if inp.kind is not ElemKind.I8 or filters.kind is not ElemKind.I8:
        raise TypeError("conv_direct takes int8 input and filters")
    if shape.crs > MAX_INT32_CRS:
        raise PrecisionError(
            f"CRS={shape.crs} exceeds {MAX_INT32_CRS}; int32 accumulation is not guaranteed"
        )
    out = conv_accumulate(inp.array, filters.array, shape)
    return Tensor4D(out.astype(np.int32), ElemKind.I32)


def conv_float(inp: Tensor4D, filters: Tensor4D, shape: LayerShape) -> Tensor4D:
    """float32 convolution (float32 operands and accumulation)."""
    shape.check_input(inp)
    shape.check_filters(filters)
    cols = patch_matrix(inp.array.astype(np.float32), shape)
    out = filters.array.astype(np.float32).reshape(shape.k, -1) @ cols
    out = out.reshape(shape.k, shape.n, shape.p, shape.q).transpose(1, 0, 2, 3)
    return Tensor4D(out, ElemKind.F32)


def im2col(inp: Tensor4D, shape: LayerShape) -> Matrix:
    shape.check_input(inp)
    return Matrix(patch_matrix(inp.array, shape), inp.kind)


def filter_matrix(filters: Tensor4D) -> Matrix:
    k = filters.dims[0]
    return Matrix(filters.array.reshape(k, -1), filters.kind)


def gemm(a: Matrix, b: Matrix, acc_kind: ElemKind = ElemKind.I32) -> Matrix:
    if a.cols != b.rows:
        raise ValueError(f"inner dimensions differ: {a.cols} vs {b.rows}")
    if not (a.kind.is_int and b.kind.is_int and acc_kind.is_int):
        raise TypeError("gemm is integer-only")
    need = required_bits(a.array, b.array, a.cols)
    if need > acc_kind.bits:
        raise PrecisionError(f"product needs {need} bits, {acc_kind.name} holds {acc_kind.bits}")
    return Matrix(exact_matmul(a.array, b.array).astype(acc_kind.dtype), acc_kind)


def conv_via_gemm(inp: Tensor4D, filters: Tensor4D, shape: LayerShape) -> Tensor4D:
    out = gemm(filter_matrix(filters), im2col(inp, shape), ElemKind.I32).array
    out = out.reshape(shape.k, shape.n, shape.p, shape.q).transpose(1, 0, 2, 3)
    return Tensor4D(out, ElemKind.I32)


# -- epilog ------------------------------------------------------------------------


def epilog(convout: Tensor4D, params: EpilogParams) -> Tensor4D:
    """Scale, add bias, activate; for int8 output clamp then truncate toward zero."""
    k = convout.dims[1]
    if len(params.bias) != k:
        raise ValueError(f"bias has {len(params.bias)} entries for {k} channels")
    bias = np.asarray(params.bias, dtype=np.float32).reshape(1, k, 1, 1)
    v = convout.array.astype(np.float32) * np.float32(params.scale) + bias
    if params.activation is Activation.RELU:
        v = np.maximum(v, np.float32(0))
    if params.output_kind is ElemKind.F32:
        return Tensor4D(v, ElemKind.F32)
    v = np.trunc(np.clip(v, -128, 127))
    return Tensor4D(v.astype(np.int8), ElemKind.I8)


class OutputTap(enum.Enum):
    NONE = "none"
    TOTAL = "total"  # one int64 over all of ConvOut (FIC, FR)
    CHANNEL = "channel"  # per-(n,p,q) sum over K (FC, FR)


@dataclass(frozen=True)
class ChecksumTaps:
    output: OutputTap = OutputTap.NONE
    next_layer: LayerShape | None = None  # AF: emit the next layer's input checksum


@dataclass
class FusedResult:
    output: Tensor4D
    output_checksum: int | Tensor4D | None = None
    next_input_checksum: object | None = None


def fused_conv_epilog(
    inp: Tensor4D,
    filters: Tensor4D,
    shape: LayerShape,
    params: EpilogParams,
    taps: ChecksumTaps = ChecksumTaps(),
) -> FusedResult:
    convout = conv_direct(inp, filters, shape)
    out = epilog(convout, params)
    result = FusedResult(out)
    # output checksums always come from ConvOut, never from the epilog result
    if taps.output is OutputTap.TOTAL:
        result.output_checksum = int(convout.array.sum(dtype=np.int64))
    elif taps.output is OutputTap.CHANNEL:
        sums = convout.array.sum(axis=1, keepdims=True, dtype=np.int64)
        result.output_checksum = Tensor4D(sums, ElemKind.I64)
    if taps.next_layer is not None:
        if out.kind is not ElemKind.I8:
            raise TypeError("next-layer input checksum needs int8 epilog output")
        from .abed import gen_input_checksum

        result.next_input_checksum = gen_input_checksum(out, taps.next_layer)
    return result

