"""Single bit-flip fault injection and campaign aggregation.

A trial corrupts one bit of either an operand (as the convolution reads it)
or of ConvOut (after the convolution, before verification and epilog).
Checksums come from the trusted operands, as they would when produced offline
or by the previous layer. Trials are classified against a golden run that
uses the same code path.
"""

from __future__ import annotations

import enum
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import abed
from .abed import Scheme, VerifyOutcome
from .convolution import EpilogParams, conv_direct, epilog
from .tensor import LayerShape, Tensor4D

log = logging.getLogger(__name__)

DEFAULT_SCALE = 0.125


class InjectionTarget(enum.Enum):
    INPUT = "input"
    FILTER = "filter"
    CONVOUT = "convout"


class Classification(enum.Enum):
    DETECTED = "detected"
    DETECTED_BENIGN = "detected_benign"
    SDC = "sdc"
    MASKED = "masked"


def flip_bit(t: Tensor4D, flat_index: int, bit: int) -> Tensor4D:
    if not 0 <= flat_index < t.size:
        raise IndexError(f"flat index {flat_index} outside {t.size} elements")
    if not 0 <= bit < t.kind.bits:
        raise ValueError(f"bit {bit} outside a {t.kind.bits}-bit element")
    raw = t.array.copy().reshape(-1)
    bits = raw.view(np.dtype(f"u{t.kind.dtype.itemsize}"))
    bits[flat_index] ^= bits.dtype.type(1 << bit)
    return Tensor4D(raw.reshape(t.dims), t.kind)


@dataclass(frozen=True)
class TrialOutcome:
    classification: Classification
    target: InjectionTarget
    flat_index: int
    bit: int
    final_output_differs: bool
    verify: VerifyOutcome


def trial_seed(root_seed: int, index: int) -> int:
    """Seed of trial ``index``: a SeedSequence child keyed by the trial index."""
    seq = np.random.SeedSequence(root_seed, spawn_key=(index,))
    return int(seq.generate_state(1, np.uint64)[0])


def make_operands(shape: LayerShape, mode: str = "ones", seed: int = 0) -> tuple[Tensor4D, Tensor4D]:
    if mode == "ones":
        return (
            Tensor4D(np.ones(shape.input_dims, np.int8)),
            Tensor4D(np.ones(shape.filter_dims, np.int8)),
        )
    if mode == "random":
        rng = np.random.default_rng(seed)
        return (
            Tensor4D(rng.integers(-128, 128, shape.input_dims, dtype=np.int8)),
            Tensor4D(rng.integers(-128, 128, shape.filter_dims, dtype=np.int8)),
        )
    if mode == "extreme":
        # every product is +16384, the largest an int8 multiply can produce
        return (
            Tensor4D(np.full(shape.input_dims, -128, np.int8)),
            Tensor4D(np.full(shape.filter_dims, -128, np.int8)),
        )
    if mode == "extreme-mixed":
        rng = np.random.default_rng(seed)
        return (
            Tensor4D(rng.choice(np.array([-128, 127], np.int8), shape.input_dims)),
            Tensor4D(rng.choice(np.array([-128, 127], np.int8), shape.filter_dims)),
        )
    raise ValueError(f"unknown operand mode {mode!r}")


class LayerUnderTest:
    """Golden state of one layer and scheme, shared read-only across trials."""

    def __init__(
        self,
        shape: LayerShape,
        inp: Tensor4D,
        filters: Tensor4D,
        scheme: Scheme,
        params: Optional[EpilogParams] = None,
    ):
        self.shape = shape
        self.inp = inp
        self.filters = filters
        self.scheme = scheme
        self.params = params or EpilogParams.uniform(shape.k, DEFAULT_SCALE)
        self.bundle = abed.prepare(scheme, inp, filters, shape)
        self.golden_convout = conv_direct(inp, filters, shape)
        self.golden_output = epilog(self.golden_convout, self.params)
        self._golden_redundant = abed.redundant_output(self.bundle, inp, filters)
        golden_check = abed.check(self.bundle, self.golden_convout, self._golden_redundant)
        if not golden_check.ok:
            raise RuntimeError(f"fault-free {scheme.value} check failed: {golden_check}")

    def target_tensor(self, target: InjectionTarget) -> Tensor4D:
        return {
            InjectionTarget.INPUT: self.inp,
            InjectionTarget.FILTER: self.filters,
            InjectionTarget.CONVOUT: self.golden_convout,
        }[target]

    def inject(self, target: InjectionTarget, flat_index: int, bit: int) -> TrialOutcome:
        inp, filters = self.inp, self.filters
        if target is InjectionTarget.INPUT:
            inp = flip_bit(inp, flat_index, bit)
        elif target is InjectionTarget.FILTER:
            filters = flip_bit(filters, flat_index, bit)

        if target is InjectionTarget.CONVOUT:
            convout = flip_bit(self.golden_convout, flat_index, bit)
            redundant = self._golden_redundant
        else:
            convout = conv_direct(inp, filters, self.shape)
            redundant = abed.redundant_output(self.bundle, inp, filters)

        verdict = abed.check(self.bundle, convout, redundant)
        differs = epilog(convout, self.params) != self.golden_output
        if verdict.ok:
            cls = Classification.SDC if differs else Classification.MASKED
        else:
            cls = Classification.DETECTED if differs else Classification.DETECTED_BENIGN
        if cls is Classification.SDC and self.scheme is Scheme.FIC:
            log.warning("undetected FIC corruption: %s index %d bit %d", target.value, flat_index, bit)
        return TrialOutcome(cls, target, flat_index, bit, differs, verdict)

    def trial(self, target: InjectionTarget, seed: int) -> TrialOutcome:
        rng = np.random.default_rng(seed)
        t = self.target_tensor(target)
        flat_index = int(rng.integers(t.size))
        bit = int(rng.integers(t.kind.bits))
        return self.inject(target, flat_index, bit)


def run_trial(
    shape: LayerShape,
    inp: Tensor4D,
    filters: Tensor4D,
    scheme: Scheme,
    target: InjectionTarget,
    params: Optional[EpilogParams],
    seed: int,
) -> TrialOutcome:
    return LayerUnderTest(shape, inp, filters, scheme, params).trial(target, seed)


@dataclass(frozen=True)
class CampaignConfig:
    shape: LayerShape
    scheme: Scheme
    target: InjectionTarget
    trials: int
    seed: int
    mode: str = "ones"
    params: Optional[EpilogParams] = None


REPORT_COLUMNS = (
    "scheme", "target", "trials", "detected", "detected_benign",
    "sdc", "masked", "detection_rate", "sdc_rate", "seed",
)


@dataclass
class CampaignReport:
    scheme: Scheme
    target: InjectionTarget
    trials: int
    seed: int
    counts: dict[Classification, int]
    outcomes: list[TrialOutcome] = field(default_factory=list, repr=False)

    @property
    def detected(self) -> int:
        return self.counts[Classification.DETECTED]

    @property
    def detected_benign(self) -> int:
        return self.counts[Classification.DETECTED_BENIGN]

    @property
    def sdc(self) -> int:
        return self.counts[Classification.SDC]

    @property
    def masked(self) -> int:
        return self.counts[Classification.MASKED]

    @property
    def detection_rate(self) -> float:
        return (self.detected + self.detected_benign) / self.trials

    @property
    def sdc_rate(self) -> float:
        return self.sdc / self.trials

    def row(self) -> dict:
        return {
            "scheme": self.scheme.value,
            "target": self.target.value,
            "trials": self.trials,
            "detected": self.detected,
            "detected_benign": self.detected_benign,
            "sdc": self.sdc,
            "masked": self.masked,
            "detection_rate": round(self.detection_rate, 6),
            "sdc_rate": round(self.sdc_rate, 6),
            "seed": self.seed,
        }


def run_campaign(config: CampaignConfig, jobs: int = 1, layer: LayerUnderTest | None = None) -> CampaignReport:
    if config.trials < 1:
        raise ValueError("a campaign needs at least one trial")
    if layer is None:
        inp, filters = make_operands(config.shape, config.mode, config.seed)
        layer = LayerUnderTest(config.shape, inp, filters, config.scheme, config.params)
    seeds = [trial_seed(config.seed, i) for i in range(config.trials)]
    if jobs > 1:
        with ThreadPoolExecutor(jobs) as pool:
            outcomes = list(pool.map(lambda s: layer.trial(config.target, s), seeds))
    else:
        outcomes = [layer.trial(config.target, s) for s in seeds]
    counts = {c: 0 for c in Classification}
    for o in outcomes:
        counts[o.classification] += 1
    return CampaignReport(config.scheme, config.target, config.trials, config.seed, counts, outcomes)
