"""Logical operation and data-movement counts per scheme and implementation option.

Counting conventions:

* the epilog costs four per-element ops (scale as ``mul``, bias as ``add``,
  activation, cast);
* checksum comparisons are counted as adds;
* FC convolves four checksum planes; ``pad_to_8`` additionally moves four
  all-zero filler filters through the convolution's filter read;
* byte overheads are relative to the fused convolution + epilog baseline.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, fields
from typing import Iterable, Optional, Sequence

from .abed import Scheme
from .networks import NetworkConfig
from .tensor import LayerShape

FC_PLANES = 4
FILLER_FILTERS = 4


class ImplOption(enum.Enum):
    UF = "uf"
    FR = "fr"
    AF = "af"


@dataclass(frozen=True)
class OpCounts:
    fma: int = 0
    add: int = 0
    mul: int = 0
    activation_eval: int = 0
    cast: int = 0

    def __add__(self, other: "OpCounts") -> "OpCounts":
        return OpCounts(*(getattr(self, f.name) + getattr(other, f.name) for f in fields(self)))

    @property
    def total(self) -> int:
        return self.fma + self.add + self.mul + self.activation_eval + self.cast


def baseline_ops(shape: LayerShape, activation: bool = True) -> OpCounts:
    out = shape.n * shape.k * shape.p * shape.q
    return OpCounts(
        fma=out * shape.crs, add=out, mul=out,
        activation_eval=out if activation else 0, cast=out,
    )


def extra_ops(shape: LayerShape, scheme: Scheme, planes: int = FC_PLANES) -> OpCounts:
    npq, crs, k = shape.npq, shape.crs, shape.k
    if scheme is Scheme.FC:
        return OpCounts(fma=planes * npq * crs, add=npq * k)
    if scheme is Scheme.FIC:
        return OpCounts(fma=crs, add=npq * crs + npq * k)
    if scheme is Scheme.IC:
        return OpCounts(fma=crs * k, add=npq * crs + npq * k)
    if scheme is Scheme.ICBATCH:
        chw = shape.c * shape.h * shape.w
        kpq = k * shape.p * shape.q
        return OpCounts(fma=kpq * crs, add=shape.n * chw + shape.n * kpq)
    raise ValueError(f"unknown scheme {scheme}")


def count_ops(shape: LayerShape, scheme: Optional[Scheme], activation: bool = True,
              planes: int = FC_PLANES) -> OpCounts:
    """Baseline conv + epilog ops, plus the scheme's checksum work (``None`` = baseline)."""
    base = baseline_ops(shape, activation)
    return base if scheme is None else base + extra_ops(shape, scheme, planes)


# -- bytes ---------------------------------------------------------------------------


@dataclass(frozen=True)
class KernelTraffic:
    kernel: str
    read: int
    write: int


@dataclass(frozen=True)
class ByteCounts:
    kernels: tuple[KernelTraffic, ...]

    @property
    def read_bytes(self) -> int:
        return sum(k.read for k in self.kernels)

    @property
    def write_bytes(self) -> int:
        return sum(k.write for k in self.kernels)

    @property
    def total(self) -> int:
        return self.read_bytes + self.write_bytes


def count_bytes(
    shape: LayerShape,
    scheme: Optional[Scheme],
    option: ImplOption,
    next_shapes: Sequence[LayerShape] = (),
    input_checksum_fused: bool = False,
    pad_to_8: bool = False,
) -> ByteCounts:
    """Kernel-by-kernel input/output traffic of one layer.

    ``next_shapes`` are the convolutions consuming this layer's output (AF
    writes their input checksums); ``input_checksum_fused`` means this layer's
    input checksum was already produced by its producer under AF.
    """
    n, k, crs = shape.n, shape.k, shape.crs
    nchw = n * shape.c * shape.h * shape.w
    nkpq = n * k * shape.p * shape.q
    kcrs = k * crs
    kern: list[KernelTraffic] = []

    if option is ImplOption.AF:
        if scheme not in (Scheme.FIC, Scheme.IC):
            raise ValueError("AF applies to schemes with an input checksum (fic, ic)")
        if not next_shapes:
            raise ValueError("AF applies only when the next layer is a convolution")

    if scheme is None:
        if option is ImplOption.UF:
            kern += [KernelTraffic("conv", kcrs + nchw, 4 * nkpq),
                     KernelTraffic("epilog", 4 * nkpq, nkpq)]
        else:
            kern.append(KernelTraffic("conv+epilog", kcrs + nchw, nkpq))
        return ByteCounts(tuple(kern))

    if scheme is Scheme.FC:
        extra = FC_PLANES + (FILLER_FILTERS if pad_to_8 else 0)
        conv_read = (k + extra) * crs + nchw
        if option is ImplOption.UF:
            kern += [
                KernelTraffic("conv", conv_read, 4 * n * (k + extra) * shape.p * shape.q),
                KernelTraffic("epilog", 4 * nkpq, nkpq),
                KernelTraffic("verify", 4 * n * (k + FC_PLANES) * shape.p * shape.q, 4),
            ]
        else:
            kern.append(KernelTraffic("conv+epilog+verify", conv_read, nkpq + 4))
        return ByteCounts(tuple(kern))

    if scheme is Scheme.ICBATCH:
        chw = shape.c * shape.h * shape.w
        kpq = k * shape.p * shape.q
        kern.append(KernelTraffic("batch checksum", nchw, 4 * chw))
        conv_read = kcrs + nchw + 4 * chw
        if option is ImplOption.UF:
            kern += [
                KernelTraffic("conv", conv_read, 4 * (nkpq + kpq)),
                KernelTraffic("epilog", 4 * nkpq, nkpq),
                KernelTraffic("verify", 4 * (nkpq + kpq), 4),
            ]
        else:
            kern.append(KernelTraffic("conv+epilog+verify", conv_read, nkpq + 4))
        return ByteCounts(tuple(kern))

    # FIC and IC share the input-checksum structure
    if not input_checksum_fused:
        kern.append(KernelTraffic("icg", nchw, 4 * crs))
    ocg_write = 8 if scheme is Scheme.FIC else 8 * k
    if option is ImplOption.UF:
        kern += [
            KernelTraffic("conv", kcrs + nchw, 4 * nkpq),
            KernelTraffic("epilog", 4 * nkpq, nkpq),
            KernelTraffic("ocg", 4 * nkpq, ocg_write),
        ]
    else:
        write = nkpq + ocg_write
        if option is ImplOption.AF:
            write += sum(4 * s.crs for s in next_shapes)
        kern.append(KernelTraffic("conv+epilog+ocg" + ("+icg" if option is ImplOption.AF else ""),
                                  kcrs + nchw, write))
    if scheme is Scheme.FIC:
        kern.append(KernelTraffic("dot", 2 * 4 * crs, 8))
    else:
        kern.append(KernelTraffic("dot", kcrs + 4 * crs, 8 * k))
    return ByteCounts(tuple(kern))


# -- network aggregation -----------------------------------------------------------------

CSV_COLUMNS = (
    "network", "layer", "scheme", "option", "fma", "add", "mul", "act", "cast",
    "read_bytes", "write_bytes", "op_overhead_pct", "byte_overhead_pct",
)


@dataclass(frozen=True)
class LayerCost:
    layer: str
    ops: OpCounts
    baseline_ops: OpCounts
    bytes: ByteCounts
    baseline_bytes: ByteCounts

    @property
    def op_overhead(self) -> float:
        return self.ops.total / self.baseline_ops.total - 1.0

    @property
    def byte_overhead(self) -> float:
        return self.bytes.total / self.baseline_bytes.total - 1.0


@dataclass(frozen=True)
class CostReport:
    network: str
    scheme: Optional[Scheme]
    option: ImplOption
    layers: tuple[LayerCost, ...]

    @property
    def ops(self) -> OpCounts:
        return _sum_ops(l.ops for l in self.layers)

    @property
    def baseline_ops(self) -> OpCounts:
        return _sum_ops(l.baseline_ops for l in self.layers)

    @property
    def read_bytes(self) -> int:
        return sum(l.bytes.read_bytes for l in self.layers)

    @property
    def write_bytes(self) -> int:
        return sum(l.bytes.write_bytes for l in self.layers)

    @property
    def total_bytes(self) -> int:
        return self.read_bytes + self.write_bytes

    @property
    def baseline_bytes(self) -> int:
        return sum(l.baseline_bytes.total for l in self.layers)

    @property
    def op_overhead(self) -> float:
        return self.ops.total / self.baseline_ops.total - 1.0

    @property
    def byte_overhead(self) -> float:
        return self.total_bytes / self.baseline_bytes - 1.0

    def _row(self, layer: str, ops: OpCounts, rb: int, wb: int, op_ov: float, byte_ov: float) -> dict:
        return {
            "network": self.network, "layer": layer,
            "scheme": self.scheme.value if self.scheme else "baseline",
            "option": self.option.value,
            "fma": ops.fma, "add": ops.add, "mul": ops.mul,
            "act": ops.activation_eval, "cast": ops.cast,
            "read_bytes": rb, "write_bytes": wb,
            "op_overhead_pct": round(100 * op_ov, 6),
            "byte_overhead_pct": round(100 * byte_ov, 6),
        }

    def rows(self) -> list[dict]:
        rows = [
            self._row(l.layer, l.ops, l.bytes.read_bytes, l.bytes.write_bytes,
                      l.op_overhead, l.byte_overhead)
            for l in self.layers
        ]
        rows.append(self._row("total", self.ops, self.read_bytes, self.write_bytes,
                              self.op_overhead, self.byte_overhead))
        return rows


def _sum_ops(items: Iterable[OpCounts]) -> OpCounts:
    total = OpCounts()
    for o in items:
        total = total + o
    return total


def aggregate_network(
    config: NetworkConfig,
    scheme: Optional[Scheme],
    option: ImplOption,
    planes: int = FC_PLANES,
    pad_to_8: bool = False,
) -> CostReport:
    included = config.included()
    included_ids = {s.id for s in included}
    costs = []
    for spec in included:
        shape = spec.shape
        act = spec.activation.value == "relu"
        next_shapes: list[LayerShape] = []
        fused_in = False
        if option is ImplOption.AF:
            next_shapes = [c.shape for c in config.consumers(spec.id)
                           if c.pool is None and c.id in included_ids]
            i = config.layers.index(spec)
            prod = config.producer(i)
            fused_in = prod is not None and spec.pool is None and prod.id in included_ids
        layer_option = option
        if option is ImplOption.AF and not next_shapes:
            # no convolution consumes this output; the tail behaves like FR
            layer_option = ImplOption.FR
        costs.append(LayerCost(
            spec.id,
            count_ops(shape, scheme, act, planes),
            count_ops(shape, None, act),
            count_bytes(shape, scheme, layer_option, next_shapes, fused_in, pad_to_8),
            count_bytes(shape, None, ImplOption.FR),
        ))
    return CostReport(config.name, scheme, option, tuple(costs))
