"""Row/column checksum ABFT for integer GEMM, detection only.

The augmented product follows the usual task list: allocate larger buffers (1),
copy the inputs in (2), generate input checksums (3), run the larger GEMM (4),
regenerate and compare output checksums (5), copy the result out (6). Tasks
(2)-(6) are instrumented with operation and traffic counts.

Traffic convention: task (3) streams the original inputs once, so the reads
of the copy-in are charged there and task (2) only writes the augmented
buffers. Copy-out reads the m x n block of the augmented output and writes it
back, so the copy tasks together move m*k + k*n + 2*m*n elements.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .abed import Status, VerifyOutcome, ceil_log2
from .convolution import Matrix, PrecisionError, gemm
from .tensor import ElemKind

CHECKSUM_BYTES = 4
FLAG_BYTES = 4


@dataclass(frozen=True)
class TaskCost:
    task: int
    name: str
    ops: int
    elements_read: int
    elements_written: int
    bytes_read: int
    bytes_written: int

    @property
    def bytes_total(self) -> int:
        return self.bytes_read + self.bytes_written


@dataclass(frozen=True)
class AugmentedGemm:
    a_aug: Matrix
    b_aug: Matrix
    c_aug: Matrix
    task_costs: tuple[TaskCost, ...]


@dataclass(frozen=True)
class AbftResult:
    c: Matrix
    outcome: VerifyOutcome
    bad_rows: tuple[int, ...]
    bad_cols: tuple[int, ...]
    aug: AugmentedGemm

    @property
    def costs(self) -> tuple[TaskCost, ...]:
        return self.aug.task_costs


def accumulator_kind(m: int, n: int, k: int, b: int = 8) -> ElemKind:
    """Narrowest kind holding every entry of the augmented product, corner included."""
    bits = 2 * b + ceil_log2(k) + ceil_log2(m) + ceil_log2(n)
    if bits <= 32:
        return ElemKind.I32
    if bits <= 64:
        return ElemKind.I64
    raise PrecisionError(f"ABFT accumulator needs {bits} bits")


def task_costs(m: int, n: int, k: int, acc_bytes: int, single_pass: bool = False) -> tuple[TaskCost, ...]:
    mk_kn = m * k + k * n
    passes = 1 if single_pass else 2
    return (
        TaskCost(2, "copy-in", 0, 0, mk_kn, 0, mk_kn),
        TaskCost(3, "input checksums", mk_kn, mk_kn, 2 * k, mk_kn, 2 * k * CHECKSUM_BYTES),
        TaskCost(
            4, "augmented gemm", (m + 1) * (n + 1) * k,
            (m + 1) * k + k * (n + 1), (m + 1) * (n + 1),
            mk_kn + 2 * k * CHECKSUM_BYTES, (m + 1) * (n + 1) * acc_bytes,
        ),
        TaskCost(
            5, "output checksums", passes * m * n + m + n,
            passes * m * n + m + n, 1,
            (passes * m * n + m + n) * acc_bytes, FLAG_BYTES,
        ),
        TaskCost(6, "copy-out", 0, m * n, m * n, m * n * acc_bytes, m * n * acc_bytes),
    )


def copy_share(costs: tuple[TaskCost, ...]) -> tuple[int, int, float]:
    """Elements moved by the copy tasks, their bytes, and their share of all task bytes."""
    copies = [c for c in costs if c.task in (2, 6)]
    elements = sum(c.elements_read + c.elements_written for c in copies)
    copy_bytes = sum(c.bytes_total for c in copies)
    return elements, copy_bytes, copy_bytes / sum(c.bytes_total for c in costs)


def augment(a: Matrix, b: Matrix) -> tuple[Matrix, Matrix]:
    a_aug = np.vstack([a.array.astype(np.int64), a.array.sum(axis=0, dtype=np.int64)[None, :]])
    b_aug = np.hstack([b.array.astype(np.int64), b.array.sum(axis=1, dtype=np.int64)[:, None]])
    return Matrix(a_aug, ElemKind.I32), Matrix(b_aug, ElemKind.I32)


def check_augmented(c_aug: np.ndarray) -> tuple[VerifyOutcome, tuple[int, ...], tuple[int, ...]]:
    """Compare recomputed row and column sums of the m x n block with the GEMM's extras."""
    block = c_aug[:-1, :-1].astype(np.int64)
    row_sums = block.sum(axis=1)
    col_sums = block.sum(axis=0)
    bad_rows = tuple(int(i) for i in np.flatnonzero(row_sums != c_aug[:-1, -1]))
    bad_cols = tuple(int(j) for j in np.flatnonzero(col_sums != c_aug[-1, :-1]))
    if not bad_rows and not bad_cols:
        return VerifyOutcome(Status.PASS), bad_rows, bad_cols
    if bad_rows:
        i = bad_rows[0]
        lhs, rhs = int(row_sums[i]), int(c_aug[i, -1])
    else:
        i = bad_cols[0]
        lhs, rhs = int(col_sums[i]), int(c_aug[-1, i])
    locus = (bad_rows[0] if bad_rows else -1, bad_cols[0] if bad_cols else -1)
    return VerifyOutcome(Status.MISMATCH, locus, lhs, rhs), bad_rows, bad_cols


def abft_gemm(
    a: Matrix,
    b: Matrix,
    corrupt: Optional[tuple[int, int, int]] = None,
    single_pass: bool = False,
) -> AbftResult:
    """Checksum-augmented GEMM.

    ``corrupt=(i, j, bit)`` flips one bit of interior output element (i, j)
    after the GEMM and before the checksum comparison.
    """
    if a.cols != b.rows:
        raise ValueError(f"inner dimensions differ: {a.cols} vs {b.rows}")
    if a.kind is not ElemKind.I8 or b.kind is not ElemKind.I8:
        raise TypeError("abft_gemm takes int8 operands")
    m, k = a.rows, a.cols
    n = b.cols
    acc = accumulator_kind(m, n, k)
    a_aug, b_aug = augment(a, b)
    c_aug = gemm(a_aug, b_aug, acc).array.copy()
    if corrupt is not None:
        i, j, bit = corrupt
        if not (0 <= i < m and 0 <= j < n and 0 <= bit < acc.bits):
            raise IndexError(f"corruption {corrupt} outside the {m}x{n} output")
        raw = c_aug.view(np.dtype(f"u{acc.dtype.itemsize}"))
        raw[i, j] ^= raw.dtype.type(1 << bit)
    outcome, bad_rows, bad_cols = check_augmented(c_aug)
    costs = task_costs(m, n, k, acc.dtype.itemsize, single_pass)
    aug = AugmentedGemm(a_aug, b_aug, Matrix(c_aug, acc), costs)
    return AbftResult(Matrix(c_aug[:m, :n], acc), outcome, bad_rows, bad_cols, aug)
