"""Checksum-based error detection for integer convolutions.

Three schemes are supported:

* FC: the K filters are summed into one checksum filter. Convolving the input
  with it gives an extra output fmap that must equal the per-position channel
  sum of the real output.
* IC: the input is reduced to a checksum the size of one filter; its dot
  product with each filter must equal that filter's output summed over
  N, P and Q. A batch variant instead appends one summed batch.
* FIC: the filter checksum dotted with the input checksum must equal the sum
  of every output element.

All comparisons are bit-exact in integer mode. Wraparound is prevented by
choosing storage widths with :func:`plan_precision`, never detected at runtime.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .convolution import (
    PrecisionError,
    conv_accumulate,
    conv_direct,
    conv_float,
    exact_matmul,
    narrow,
)
from .tensor import ElemKind, LayerShape, Tensor4D, windows


class Scheme(enum.Enum):
    FC = "fc"
    IC = "ic"
    ICBATCH = "icbatch"
    FIC = "fic"


class Status(enum.Enum):
    PASS = "pass"
    MISMATCH = "mismatch"


@dataclass(frozen=True)
class VerifyOutcome:
    status: Status
    locus: Optional[tuple[int, ...]] = None
    lhs: Optional[float] = None
    rhs: Optional[float] = None

    @property
    def ok(self) -> bool:
        return self.status is Status.PASS


def _compare(lhs: np.ndarray, rhs: np.ndarray) -> VerifyOutcome:
    """Element-wise bit-equality; reports the first differing coordinate."""
    diff = lhs != rhs
    if not diff.any():
        return VerifyOutcome(Status.PASS)
    first = np.unravel_index(int(np.argmax(diff)), diff.shape)
    return VerifyOutcome(
        Status.MISMATCH, tuple(int(i) for i in first), int(lhs[first]), int(rhs[first])
    )


def ceil_log2(x: int) -> int:
    if x < 1:
        raise ValueError("log of non-positive count")
    return (x - 1).bit_length()


# -- precision plan ------------------------------------------------------------


@dataclass(frozen=True)
class PrecisionPlan:
    b: int
    bits_output_fmap: int
    bits_reduced_fc: int
    bits_reduced_fic: int
    bits_filter_checksum: int
    bits_input_checksum: int
    output_fmap_kind: ElemKind
    reduced_fc_kind: ElemKind
    reduced_fic_kind: ElemKind
    filter_checksum_kind: ElemKind
    input_checksum_kind: ElemKind


def _storage_for(bits: int) -> ElemKind:
    if bits <= 32:
        return ElemKind.I32
    if bits <= 64:
        return ElemKind.I64
    raise PrecisionError(f"{bits} bits exceed int64")


def plan_precision(shape: LayerShape, b: int = 8) -> PrecisionPlan:
    """Worst-case widths for every value on the checksum paths of an int-b layer.

    Filter checksums sum K operands and input checksums sum PQN operands.
    """
    if b not in (4, 8):
        raise ValueError("operand width must be 4 or 8 bits")
    crs = shape.crs
    npq = shape.npq
    out = 2 * b + ceil_log2(crs)
    red_fc = 2 * b + ceil_log2(crs * shape.k)
    red_fic = 2 * b + ceil_log2(npq * shape.k * crs)
    if red_fic > 64:
        raise PrecisionError(
            f"FIC reduction needs {red_fic} bits; modular reduction is not supported"
        )
    fcs = b + ceil_log2(shape.k)
    ics = b + ceil_log2(npq)
    return PrecisionPlan(
        b=b,
        bits_output_fmap=out,
        bits_reduced_fc=red_fc,
        bits_reduced_fic=red_fic,
        bits_filter_checksum=fcs,
        bits_input_checksum=ics,
        output_fmap_kind=_storage_for(out),
        reduced_fc_kind=_storage_for(red_fc),
        reduced_fic_kind=_storage_for(red_fic),
        filter_checksum_kind=_storage_for(fcs),
        input_checksum_kind=_storage_for(ics),
    )


# -- filter checksum -------------------------------------------------------------


@dataclass(frozen=True)
class FilterChecksum:
    sums: Tensor4D
    decomposed: Optional[tuple[Tensor4D, Tensor4D, Tensor4D, Tensor4D]] = None


def gen_filter_checksum(filters: Tensor4D, decompose: bool = True) -> FilterChecksum:
    if filters.kind is not ElemKind.I8:
        raise TypeError("filter checksums are defined for int8 filters")
    sums = filters.array.sum(axis=0, keepdims=True, dtype=np.int64)
    fc = FilterChecksum(Tensor4D(narrow(sums, ElemKind.I32), ElemKind.I32))
    if decompose:
        fc = FilterChecksum(fc.sums, decompose_checksum_filters(fc))
    return fc


def decompose_checksum_filters(fc: FilterChecksum) -> tuple[Tensor4D, ...]:
    """Split each int32 sum into four little-endian bytes, stored as int8 bit patterns.

    Planes 0-2 are the low bytes and are consumed as unsigned digits; plane 3
    holds the two's-complement top byte and is consumed as signed.
    """
    raw = fc.sums.array
    planes = []
    for i in range(4):
        byte = ((raw >> (8 * i)) & 0xFF).astype(np.uint8)
        planes.append(Tensor4D(byte.view(np.int8), ElemKind.I8))
    return tuple(planes)


def plane_digits(planes) -> list[np.ndarray]:
    """Integer value each plane contributes per element (unsigned low bytes, signed top)."""
    digits = [p.array.view(np.uint8).astype(np.int64) for p in planes[:3]]
    digits.append(planes[3].array.astype(np.int64))
    return digits


def recombine_checksum_planes(planes) -> Tensor4D:
    """Inverse of :func:`decompose_checksum_filters` on the checksum values themselves."""
    # the digits occupy disjoint bit ranges, so OR-ing them is their sum
    total = planes[3].array.astype(np.int32) << 24
    for i, p in enumerate(planes[:3]):
        total |= p.array.view(np.uint8).astype(np.int32) << (8 * i)
    return Tensor4D(total, ElemKind.I32)


def conv_checksum_planes(inp: Tensor4D, planes, shape: LayerShape) -> tuple[Tensor4D, ...]:
    """Convolve the input with each checksum plane: four N x 1 x P x Q int32 fmaps."""
    shape.check_input(inp)
    stacked = np.concatenate(plane_digits(planes), axis=0)
    out = conv_accumulate(inp.array, stacked, shape)
    return tuple(Tensor4D(narrow(out[:, i : i + 1], ElemKind.I32), ElemKind.I32) for i in range(4))


def recombine_extra_fmaps(extra) -> Tensor4D:
    """Shift plane i's fmap left by 8*i bits and add (shifts 0, 8, 16, 24)."""
    if len(extra) != 4:
        raise ValueError("need exactly four extra fmaps")
    dims = extra[0].dims
    if any(e.dims != dims for e in extra):
        raise ValueError("extra fmaps differ in shape")
    total = np.zeros(dims, dtype=np.int64)
    for i, e in enumerate(extra):
        total += e.array.astype(np.int64) << (8 * i)
    return Tensor4D(total, ElemKind.I64)


def fc_verify(convout: Tensor4D, extra_fmap: Tensor4D, k: Optional[int] = None) -> VerifyOutcome:
    """Channel-sum every (n, p, q) of ConvOut and compare with the extra fmap.

    ``k`` limits the reduction to the first k channels so zero filler filters
    appended for kernel efficiency never take part.
    """
    n, kk, p, q = convout.dims
    if extra_fmap.dims != (n, 1, p, q):
        raise ValueError(f"extra fmap dims {extra_fmap.dims} do not match {(n, 1, p, q)}")
    k = kk if k is None else k
    reduced = convout.array[:, :k].sum(axis=1, dtype=np.int64)
    outcome = _compare(reduced, extra_fmap.array[:, 0].astype(np.int64))
    return outcome


# -- input checksum ------------------------------------------------------------------


@dataclass(frozen=True)
class InputChecksum:
    sums: Tensor4D


def gen_input_checksum(inp: Tensor4D, shape: LayerShape, b: int = 8) -> InputChecksum:
    shape.check_input(inp)
    if b + ceil_log2(shape.npq) > 32:
        raise PrecisionError("input checksum exceeds int32; escalate the precision plan")
    sums = windows(inp.array, shape).sum(axis=(0, 2, 3), dtype=np.int64)[None]
    return InputChecksum(Tensor4D(narrow(sums, ElemKind.I32), ElemKind.I32))


def fic_dot(fc: FilterChecksum, ic: InputChecksum) -> int:
    if fc.sums.dims != ic.sums.dims:
        raise ValueError(f"checksum dims differ: {fc.sums.dims} vs {ic.sums.dims}")
    a = fc.sums.array.reshape(1, -1)
    b = ic.sums.array.reshape(-1, 1)
    return int(exact_matmul(a, b)[0, 0])


def fic_verify(convout: Tensor4D, expected: int, acc_kind: ElemKind = ElemKind.I64) -> VerifyOutcome:
    """Reduce all of ConvOut in ``acc_kind`` and compare with ``expected``.

    Anything but I64 is only meant for demonstrating wraparound.
    """
    reduced = int(convout.array.sum(dtype=acc_kind.dtype))
    if reduced == expected:
        return VerifyOutcome(Status.PASS, None, reduced, expected)
    return VerifyOutcome(Status.MISMATCH, None, reduced, expected)


def ic_verify_k(convout: Tensor4D, filters: Tensor4D, ic: InputChecksum) -> VerifyOutcome:
    k = filters.dims[0]
    if convout.dims[1] != k:
        raise ValueError("filter count does not match ConvOut channels")
    lhs = convout.array.sum(axis=(0, 2, 3), dtype=np.int64)
    rhs = exact_matmul(filters.array.reshape(k, -1), ic.sums.array.reshape(-1, 1))[:, 0]
    return _compare(lhs, rhs)


def ic_batch_checksum(inp: Tensor4D) -> Tensor4D:
    sums = inp.array.sum(axis=0, keepdims=True, dtype=np.int64)
    return Tensor4D(narrow(sums, ElemKind.I32), ElemKind.I32)


def conv_checksum_batch(batch: Tensor4D, filters: Tensor4D, shape: LayerShape) -> Tensor4D:
    """Convolve the 1 x C x H x W checksum batch; the result is kept in int64."""
    one = shape.with_batch(1)
    one.check_input(batch)
    return Tensor4D(conv_accumulate(batch.array, filters.array, one), ElemKind.I64)


def ic_batch_verify(convout: Tensor4D, extra_batch_out: Tensor4D) -> VerifyOutcome:
    """Compare the batch-reduced ConvOut with the checksum batch's output; locus is (k, p, q)."""
    lhs = convout.array.sum(axis=0, dtype=np.int64)
    rhs = extra_batch_out.array[0].astype(np.int64)
    if lhs.shape != rhs.shape:
        raise ValueError("checksum batch output does not match ConvOut")
    return _compare(lhs, rhs)


# -- float mode ------------------------------------------------------------------------


def float_verify(lhs: float, rhs: float, tau: float) -> VerifyOutcome:
    if tau < 0:
        raise ValueError("threshold must be non-negative")
    status = Status.PASS if abs(lhs - rhs) <= tau else Status.MISMATCH
    return VerifyOutcome(status, None, float(lhs), float(rhs))


def fic_float_values(inp: Tensor4D, filters: Tensor4D, shape: LayerShape, convout: Tensor4D | None = None):
    """Reduced output and checksum dot product for a float32 layer.

    Checksums and the final reduction run in float64, the convolution itself
    in float32. Returns ``(reduced, expected)``.
    """
    if convout is None:
        convout = conv_float(inp, filters, shape)
    reduced = float(convout.array.astype(np.float64).sum())
    fsum = filters.array.astype(np.float64).sum(axis=0).reshape(-1)
    isum = windows(inp.array.astype(np.float64), shape).sum(axis=(0, 2, 3)).reshape(-1)
    return reduced, float(fsum @ isum)


# -- scheme pipeline ---------------------------------------------------------------------


@dataclass
class ChecksumBundle:
    """Checksum artifacts produced from trusted operands, ahead of the convolution."""

    scheme: Scheme
    shape: LayerShape
    filter_checksum: Optional[FilterChecksum] = None
    input_checksum: Optional[InputChecksum] = None
    checksum_batch: Optional[Tensor4D] = None
    expected: Optional[int] = None
    plan: Optional[PrecisionPlan] = field(default=None, repr=False)


def prepare(scheme: Scheme, inp: Tensor4D, filters: Tensor4D, shape: LayerShape) -> ChecksumBundle:
    bundle = ChecksumBundle(scheme, shape, plan=plan_precision(shape))
    if scheme in (Scheme.FC, Scheme.FIC):
        bundle.filter_checksum = gen_filter_checksum(filters, decompose=scheme is Scheme.FC)
    if scheme in (Scheme.IC, Scheme.FIC):
        bundle.input_checksum = gen_input_checksum(inp, shape)
    if scheme is Scheme.ICBATCH:
        bundle.checksum_batch = ic_batch_checksum(inp)
    if scheme is Scheme.FIC:
        bundle.expected = fic_dot(bundle.filter_checksum, bundle.input_checksum)
    return bundle


def redundant_output(bundle: ChecksumBundle, conv_input: Tensor4D, conv_filters: Tensor4D):
    """The value the convolution is checked against, computed from the operands as read.

    FC convolves the (possibly faulty) input with the stored checksum planes;
    IC and IC-batch reuse the filters the convolution read. FIC needs nothing
    beyond the bundle.
    """
    s = bundle.scheme
    if s is Scheme.FC:
        extra = conv_checksum_planes(conv_input, bundle.filter_checksum.decomposed, bundle.shape)
        return recombine_extra_fmaps(extra)
    if s is Scheme.ICBATCH:
        return conv_checksum_batch(bundle.checksum_batch, conv_filters, bundle.shape)
    if s is Scheme.IC:
        return conv_filters
    return bundle.expected


def check(bundle: ChecksumBundle, convout: Tensor4D, redundant, k: Optional[int] = None) -> VerifyOutcome:
    s = bundle.scheme
    if s is Scheme.FC:
        return fc_verify(convout, redundant, k)
    if s is Scheme.ICBATCH:
        return ic_batch_verify(convout, redundant)
    if s is Scheme.IC:
        return ic_verify_k(convout, redundant, bundle.input_checksum)
    return fic_verify(convout, redundant)


def verify_layer(scheme: Scheme, inp: Tensor4D, filters: Tensor4D, shape: LayerShape) -> VerifyOutcome:
    """Fault-free run of one scheme on one layer."""
    bundle = prepare(scheme, inp, filters, shape)
    convout = conv_direct(inp, filters, shape)
    return check(bundle, convout, redundant_output(bundle, inp, filters))
