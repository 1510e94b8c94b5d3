"""Command-line entry point: verify, inject, cost, abft.

Exit codes: 0 success, 1 usage or I/O error, 2 verification mismatch.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import abed, faults, tensor
from .abed import Scheme
from .abftgemm import abft_gemm, copy_share
from .convolution import EpilogParams, Matrix, PrecisionError, conv_direct, conv_float
from .costmodel import CSV_COLUMNS, ImplOption, aggregate_network
from .faults import CampaignConfig, InjectionTarget, LayerUnderTest, make_operands
from .networks import (
    IMAGE_SIZES,
    NETWORKS,
    apply_pruning,
    builtin_config,
    cap_spatial,
    load_config,
    load_pruned,
    resolve_config,
)
from .tensor import ElemKind, Tensor4D

EXIT_OK, EXIT_USAGE, EXIT_MISMATCH = 0, 1, 2

log = logging.getLogger("convabed")


class UsageError(Exception):
    pass


def _emit(args, rows: list[dict], columns, extra: dict | None = None, tables=None) -> None:
    if args.json:
        doc = dict(extra or {})
        doc["rows"] = rows
        if tables:
            doc.update({name: t for name, (_, t) in tables.items()})
        text = json.dumps(doc, indent=2) + "\n"
    else:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=list(columns), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
        for cols, t in (tables or {}).values():
            buf.write("\n")
            w = csv.DictWriter(buf, fieldnames=list(cols), lineterminator="\n")
            w.writeheader()
            w.writerows(t)
        text = buf.getvalue()
    if args.output:
        Path(args.output).write_text(text)
    else:
        sys.stdout.write(text)


# -- verify -------------------------------------------------------------------

VERIFY_COLUMNS = (
    "network", "layer", "scheme", "mode", "status", "lhs", "rhs", "locus",
    "bits_output_fmap", "bits_reduced_fc", "bits_reduced_fic",
    "bits_filter_checksum", "bits_input_checksum", "seed",
)


def _float_operands(shape, mode: str, seed: int) -> tuple[Tensor4D, Tensor4D]:
    rng = np.random.default_rng(seed)
    if mode == "ones":
        return (Tensor4D(np.ones(shape.input_dims, np.float32)),
                Tensor4D(np.ones(shape.filter_dims, np.float32)))
    if mode == "random":
        # integer-valued, small enough that float32 accumulation is exact
        return (Tensor4D(rng.integers(-8, 9, shape.input_dims).astype(np.float32)),
                Tensor4D(rng.integers(-8, 9, shape.filter_dims).astype(np.float32)))
    if mode == "normal":
        return (Tensor4D(rng.standard_normal(shape.input_dims).astype(np.float32)),
                Tensor4D(rng.standard_normal(shape.filter_dims).astype(np.float32)))
    raise UsageError(f"mode {mode!r} is not available in float mode")


def cmd_verify(args) -> int:
    cfg = resolve_config(args.config)
    spec = cfg.layer(args.layer)
    shape = cap_spatial(spec.shape, args.max_hw)
    scheme = Scheme(args.scheme)
    plan = abed.plan_precision(shape)

    if args.float:
        if scheme is not Scheme.FIC:
            raise UsageError("--float is implemented for the fic scheme")
        inp, filters = _float_operands(shape, args.mode, args.seed)
        reduced, expected = abed.fic_float_values(inp, filters, shape, conv_float(inp, filters, shape))
        outcome = abed.float_verify(reduced, expected, args.tau)
    else:
        if args.load_input or args.load_filters:
            if not (args.load_input and args.load_filters):
                raise UsageError("--load-input and --load-filters go together")
            inp, filters = tensor.load(args.load_input), tensor.load(args.load_filters)
            shape.check_input(inp)
            shape.check_filters(filters)
        else:
            inp, filters = make_operands(shape, args.mode, args.seed)
        if args.dump:
            out_dir = Path(args.dump)
            out_dir.mkdir(parents=True, exist_ok=True)
            tensor.save(inp, out_dir / "input.abed")
            tensor.save(filters, out_dir / "filters.abed")
        if args.force_reduction_bits is not None:
            if scheme is not Scheme.FIC:
                raise UsageError("--force-reduction-bits applies to the fic reduction")
            acc = {32: ElemKind.I32, 64: ElemKind.I64}.get(args.force_reduction_bits)
            if acc is None:
                raise UsageError("--force-reduction-bits must be 32 or 64")
            bundle = abed.prepare(scheme, inp, filters, shape)
            outcome = abed.fic_verify(conv_direct(inp, filters, shape), bundle.expected, acc)
        else:
            outcome = abed.verify_layer(scheme, inp, filters, shape)

    row = {
        "network": cfg.name, "layer": spec.id, "scheme": scheme.value,
        "mode": ("float-" if args.float else "") + args.mode,
        "status": outcome.status.value,
        "lhs": outcome.lhs, "rhs": outcome.rhs,
        "locus": "" if outcome.locus is None else "/".join(map(str, outcome.locus)),
        "bits_output_fmap": plan.bits_output_fmap,
        "bits_reduced_fc": plan.bits_reduced_fc,
        "bits_reduced_fic": plan.bits_reduced_fic,
        "bits_filter_checksum": plan.bits_filter_checksum,
        "bits_input_checksum": plan.bits_input_checksum,
        "seed": args.seed,
    }
    _emit(args, [row], VERIFY_COLUMNS, {"seed": args.seed})
    return EXIT_OK if outcome.ok else EXIT_MISMATCH


# -- inject -------------------------------------------------------------------


def cmd_inject(args) -> int:
    if args.trials < 1:
        raise UsageError("--trials must be at least 1")
    cfg = resolve_config(args.config)
    spec = cfg.layer(args.layer)
    shape = cap_spatial(spec.shape, args.max_hw)
    scheme = Scheme(args.scheme)
    activation = spec.activation
    params = EpilogParams.uniform(shape.k, args.scale, activation=activation)
    inp, filters = make_operands(shape, args.mode, args.seed)
    layer = LayerUnderTest(shape, inp, filters, scheme, params)
    targets = [InjectionTarget(t) for t in args.target]
    rows = []
    for target in targets:
        config = CampaignConfig(shape, scheme, target, args.trials, args.seed, args.mode, params)
        report = faults.run_campaign(config, jobs=args.jobs, layer=layer)
        rows.append(report.row())
    _emit(args, rows, faults.REPORT_COLUMNS,
          {"seed": args.seed, "network": cfg.name, "layer": spec.id, "mode": args.mode})
    return EXIT_OK


# -- cost ---------------------------------------------------------------------


def cmd_cost(args) -> int:
    cfg = load_config(args.config) if args.config else builtin_config(args.network, args.image)
    scheme = None if args.scheme == "baseline" else Scheme(args.scheme)
    option = ImplOption(args.option)
    unpruned = None
    if args.pruned:
        unpruned = aggregate_network(cfg, None, ImplOption.FR)
        cfg = apply_pruning(cfg, load_pruned(args.pruned))
    report = aggregate_network(cfg, scheme, option, planes=args.planes, pad_to_8=args.pad_to_8)
    rows = report.rows()
    extra = {"network": report.network, "op_overhead_pct": 100 * report.op_overhead,
             "byte_overhead_pct": 100 * report.byte_overhead}
    if unpruned is not None:
        op_ov = report.ops.total / unpruned.baseline_ops.total - 1.0
        byte_ov = report.total_bytes / unpruned.baseline_bytes - 1.0
        row = dict(rows[-1], layer="total_vs_unpruned",
                   op_overhead_pct=round(100 * op_ov, 6), byte_overhead_pct=round(100 * byte_ov, 6))
        rows.append(row)
        extra["op_overhead_vs_unpruned_pct"] = 100 * op_ov
    _emit(args, rows, CSV_COLUMNS, extra)
    return EXIT_OK


# -- abft ---------------------------------------------------------------------

ABFT_COLUMNS = (
    "m", "n", "k", "trials", "fault_free", "detected", "detection_rate",
    "copy_elements", "copy_bytes", "copy_byte_share", "seed",
)
TASK_COLUMNS = ("task", "name", "ops", "elements_read", "elements_written", "bytes_read", "bytes_written")


def cmd_abft(args) -> int:
    m, n, k = args.m, args.n, args.k
    if min(m, n, k) < 1 or args.trials < 0:
        raise UsageError("dimensions must be positive and --trials non-negative")
    rng = np.random.default_rng(args.seed)
    if args.identity:
        if not m == n == k:
            raise UsageError("--identity needs m == n == k")
        a = b = Matrix(np.eye(m, dtype=np.int8))
    else:
        a = Matrix(rng.integers(-128, 128, (m, k), dtype=np.int8))
        b = Matrix(rng.integers(-128, 128, (k, n), dtype=np.int8))
    clean = abft_gemm(a, b, single_pass=args.single_pass)
    acc_bits = clean.c.kind.bits
    detected = 0
    for i in range(args.trials):
        trng = np.random.default_rng(faults.trial_seed(args.seed, i))
        corrupt = (int(trng.integers(m)), int(trng.integers(n)), int(trng.integers(acc_bits)))
        if not abft_gemm(a, b, corrupt=corrupt, single_pass=args.single_pass).outcome.ok:
            detected += 1
    elements, copy_bytes, share = copy_share(clean.costs)
    row = {
        "m": m, "n": n, "k": k, "trials": args.trials,
        "fault_free": clean.outcome.status.value,
        "detected": detected,
        "detection_rate": round(detected / args.trials, 6) if args.trials else "",
        "copy_elements": elements, "copy_bytes": copy_bytes,
        "copy_byte_share": round(share, 6), "seed": args.seed,
    }
    tasks = [{c: getattr(t, c) for c in TASK_COLUMNS} for t in clean.costs]
    _emit(args, [row], ABFT_COLUMNS, {"seed": args.seed}, tables={"tasks": (TASK_COLUMNS, tasks)})
    return EXIT_OK if clean.outcome.ok else EXIT_MISMATCH


# -- parser -------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="convabed", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--json", action="store_true", help="emit one JSON document instead of CSV")
        p.add_argument("--output", help="write the report here instead of stdout")

    schemes = [s.value for s in Scheme]

    p = sub.add_parser("verify", help="run one scheme fault-free on one layer")
    p.add_argument("--config", required=True, help="builtin name (e.g. resnet18-224) or config file")
    p.add_argument("--layer", required=True)
    p.add_argument("--scheme", choices=schemes, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mode", default="random",
                   help="operands: random, ones, extreme, extreme-mixed (float: random, ones, normal)")
    p.add_argument("--max-hw", type=int, help="cap H and W for functional runs")
    p.add_argument("--float", action="store_true", help="float32 operands with a threshold check")
    p.add_argument("--tau", type=float, default=0.0)
    p.add_argument("--force-reduction-bits", type=int, help="override the fic reduction width")
    p.add_argument("--load-input")
    p.add_argument("--load-filters")
    p.add_argument("--dump", help="directory to write the operand tensors to")
    common(p)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("inject", help="single bit-flip injection campaign")
    p.add_argument("--config", default="resnet18-224")
    p.add_argument("--layer", default="layer1.0.conv1")
    p.add_argument("--scheme", choices=schemes, required=True)
    p.add_argument("--target", choices=[t.value for t in InjectionTarget], nargs="+", required=True)
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--mode", choices=["ones", "random"], default="ones")
    p.add_argument("--scale", type=float, default=faults.DEFAULT_SCALE)
    p.add_argument("--max-hw", type=int)
    p.add_argument("--jobs", type=int, default=1)
    common(p)
    p.set_defaults(func=cmd_inject)

    p = sub.add_parser("cost", help="analytic op and byte counts")
    p.add_argument("--network", choices=sorted(NETWORKS), default="resnet18")
    p.add_argument("--image", choices=sorted(IMAGE_SIZES), default="224")
    p.add_argument("--config", help="config document instead of a builtin network")
    p.add_argument("--scheme", choices=schemes + ["baseline"], required=True)
    p.add_argument("--option", choices=[o.value for o in ImplOption], default="fr")
    p.add_argument("--pruned", help="per-layer K overrides")
    p.add_argument("--planes", type=int, default=4)
    p.add_argument("--pad-to-8", action="store_true")
    common(p)
    p.set_defaults(func=cmd_cost)

    p = sub.add_parser("abft", help="row/column checksum GEMM comparison")
    p.add_argument("--m", type=int, default=64)
    p.add_argument("--n", type=int, default=64)
    p.add_argument("--k", type=int, default=64)
    p.add_argument("--trials", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--identity", action="store_true")
    p.add_argument("--single-pass", action="store_true")
    common(p)
    p.set_defaults(func=cmd_abft)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, KeyError, ValueError, TypeError, PrecisionError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
