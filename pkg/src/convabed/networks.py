"""Network configurations: per-layer convolution shapes with chaining checks.

Builtin tables are rebuilt from the public VGG16, ResNet18 and ResNet50
architectures (torchvision variants, stride on the 3x3 conv for ResNet50),
batch size 1. Spatial extents follow floor division with same-padding, so odd
sizes at 1080x1920 are reproducible even where other tables round differently.

Document format::

    {"name": str, "exclude_first_layer": bool,
     "layers": [{"id", "n", "c", "h", "w", "k", "r", "s", "stride_h", "stride_w",
                 "pad_h", "pad_w", "activation", "source"?, "pool"?}]}

``source`` names the layer producing this layer's input (default: the previous
entry); ``pool`` is an optional ``{"kernel", "stride", "pad"}`` pooling window
applied in between.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Optional

from .convolution import Activation
from .tensor import LayerShape

IMAGE_SIZES = {"224": (224, 224), "1080p": (1080, 1920)}


@dataclass(frozen=True)
class Pool:
    kernel: int
    stride: int
    pad: int = 0

    def out(self, x: int) -> int:
        return (x + 2 * self.pad - self.kernel) // self.stride + 1


@dataclass(frozen=True)
class LayerSpec:
    id: str
    shape: LayerShape
    activation: Activation = Activation.RELU
    source: Optional[str] = None
    pool: Optional[Pool] = None


@dataclass
class NetworkConfig:
    name: str
    layers: list[LayerSpec]
    exclude_first_layer: bool = False
    _index: dict = field(default_factory=dict, init=False, repr=False)

    def __post_init__(self):
        if not self.layers:
            raise ValueError("a network needs at least one layer")
        self._index = {}
        for spec in self.layers:
            if spec.id in self._index:
                raise ValueError(f"duplicate layer id {spec.id!r}")
            self._index[spec.id] = spec

    def layer(self, layer_id: str) -> LayerSpec:
        try:
            return self._index[layer_id]
        except KeyError:
            raise KeyError(f"no layer {layer_id!r} in {self.name}") from None

    def producer(self, i: int) -> Optional[LayerSpec]:
        spec = self.layers[i]
        if spec.source is not None:
            return self.layer(spec.source)
        return self.layers[i - 1] if i > 0 else None

    def consumers(self, layer_id: str) -> list[LayerSpec]:
        return [
            s for i, s in enumerate(self.layers)
            if (p := self.producer(i)) is not None and p.id == layer_id
        ]

    def validate(self) -> None:
        """Every layer's input extents must equal its producer's (pooled) output."""
        for i, spec in enumerate(self.layers):
            prod = self.producer(i)
            if prod is None:
                continue
            ps = prod.shape
            p, q = ps.p, ps.q
            if spec.pool is not None:
                p, q = spec.pool.out(p), spec.pool.out(q)
            want = (ps.n, ps.k, p, q)
            got = (spec.shape.n, spec.shape.c, spec.shape.h, spec.shape.w)
            if want != got:
                raise ValueError(
                    f"{self.name}: layer {spec.id} expects input {got}, {prod.id} provides {want}"
                )

    def included(self) -> list[LayerSpec]:
        return self.layers[1:] if self.exclude_first_layer else list(self.layers)


# -- document I/O -----------------------------------------------------------------


def _shape_from(d: dict) -> LayerShape:
    return LayerShape(
        n=int(d.get("n", 1)), c=int(d["c"]), h=int(d["h"]), w=int(d["w"]),
        k=int(d["k"]), r=int(d["r"]), s=int(d["s"]),
        stride_h=int(d.get("stride_h", 1)), stride_w=int(d.get("stride_w", 1)),
        pad_h=int(d.get("pad_h", 0)), pad_w=int(d.get("pad_w", 0)),
    )


def config_from_dict(doc: dict) -> NetworkConfig:
    layers = []
    for d in doc["layers"]:
        pool = Pool(**d["pool"]) if d.get("pool") else None
        layers.append(LayerSpec(
            id=str(d["id"]),
            shape=_shape_from(d),
            activation=Activation(d.get("activation", "relu")),
            source=d.get("source"),
            pool=pool,
        ))
    cfg = NetworkConfig(doc["name"], layers, bool(doc.get("exclude_first_layer", False)))
    cfg.validate()
    return cfg


def config_to_dict(cfg: NetworkConfig) -> dict:
    layers = []
    for spec in cfg.layers:
        s = spec.shape
        d = {
            "id": spec.id, "n": s.n, "c": s.c, "h": s.h, "w": s.w, "k": s.k, "r": s.r, "s": s.s,
            "stride_h": s.stride_h, "stride_w": s.stride_w, "pad_h": s.pad_h, "pad_w": s.pad_w,
            "activation": spec.activation.value,
        }
        if spec.source is not None:
            d["source"] = spec.source
        if spec.pool is not None:
            d["pool"] = {"kernel": spec.pool.kernel, "stride": spec.pool.stride, "pad": spec.pool.pad}
        layers.append(d)
    return {"name": cfg.name, "exclude_first_layer": cfg.exclude_first_layer, "layers": layers}


def load_config(path) -> NetworkConfig:
    with open(path) as fh:
        return config_from_dict(json.load(fh))


def apply_pruning(cfg: NetworkConfig, k_overrides: dict[str, int], name: Optional[str] = None) -> NetworkConfig:
    """Replace per-layer filter counts and shrink the channel count of direct consumers."""
    for lid in k_overrides:
        cfg.layer(lid)
    new_k = {spec.id: int(k_overrides.get(spec.id, spec.shape.k)) for spec in cfg.layers}
    layers = []
    for i, spec in enumerate(cfg.layers):
        changes = {"k": new_k[spec.id]}
        prod = cfg.producer(i)
        if prod is not None:
            changes["c"] = new_k[prod.id]
        layers.append(replace(spec, shape=spec.shape.replace(**changes)))
    out = NetworkConfig(name or f"{cfg.name}-pruned", layers, cfg.exclude_first_layer)
    out.validate()
    return out


def load_pruned(path) -> dict[str, int]:
    """Per-layer K overrides: either ``{"layers": [{"id", "k"}, ...]}`` or ``{id: k}``."""
    with open(path) as fh:
        doc = json.load(fh)
    if isinstance(doc, dict) and "layers" in doc:
        return {str(d["id"]): int(d["k"]) for d in doc["layers"] if "k" in d}
    return {str(k): int(v) for k, v in doc.items()}


# -- builtin architectures -----------------------------------------------------------


class _Builder:
    def __init__(self, name: str, h: int, w: int):
        self.name = name
        self.layers: list[LayerSpec] = []
        self.c, self.h, self.w = 3, h, w

    def conv(self, lid, k, r, stride=1, pad=None, source=None, pool=None, c=None, h=None, w=None):
        pad = r // 2 if pad is None else pad
        shape = LayerShape(
            n=1, c=self.c if c is None else c, h=self.h if h is None else h,
            w=self.w if w is None else w, k=k, r=r, s=r,
            stride_h=stride, stride_w=stride, pad_h=pad, pad_w=pad,
        )
        self.layers.append(LayerSpec(lid, shape, Activation.RELU, source, pool))
        self.c, self.h, self.w = k, shape.p, shape.q
        return shape

    def pool(self, p: Pool) -> Pool:
        self.h, self.w = p.out(self.h), p.out(self.w)
        return p

    def build(self) -> NetworkConfig:
        cfg = NetworkConfig(self.name, self.layers, exclude_first_layer=True)
        cfg.validate()
        return cfg


def vgg16(h: int, w: int, name: str = "vgg16") -> NetworkConfig:
    b = _Builder(name, h, w)
    stages = [(64, 2), (128, 2), (256, 3), (512, 3), (512, 3)]
    for si, (k, reps) in enumerate(stages, start=1):
        pool = b.pool(Pool(2, 2)) if si > 1 else None
        for j in range(1, reps + 1):
            b.conv(f"conv{si}_{j}", k, 3, pool=pool if j == 1 else None)
    return b.build()


def _resnet_stem(b: _Builder) -> Pool:
    b.conv("conv1", 64, 7, stride=2, pad=3)
    return b.pool(Pool(3, 2, 1))


def resnet18(h: int, w: int, name: str = "resnet18") -> NetworkConfig:
    b = _Builder(name, h, w)
    pending_pool = _resnet_stem(b)
    block_out = "conv1"
    for li, k in enumerate((64, 128, 256, 512), start=1):
        for bi in range(2):
            stride = 2 if (li > 1 and bi == 0) else 1
            prefix = f"layer{li}.{bi}"
            c_in, h_in, w_in = b.c, b.h, b.w
            b.conv(f"{prefix}.conv1", k, 3, stride=stride, pool=pending_pool, source=block_out)
            b.conv(f"{prefix}.conv2", k, 3)
            if stride != 1 or c_in != k:
                b.conv(f"{prefix}.downsample", k, 1, stride=stride, pad=0,
                       source=block_out, pool=pending_pool, c=c_in, h=h_in, w=w_in)
            block_out = b.layers[-1].id
            pending_pool = None
    return b.build()


def resnet50(h: int, w: int, name: str = "resnet50") -> NetworkConfig:
    b = _Builder(name, h, w)
    pending_pool = _resnet_stem(b)
    block_out = "conv1"
    for li, (width, blocks) in enumerate(((64, 3), (128, 4), (256, 6), (512, 3)), start=1):
        for bi in range(blocks):
            stride = 2 if (li > 1 and bi == 0) else 1
            prefix = f"layer{li}.{bi}"
            c_in, h_in, w_in = b.c, b.h, b.w
            b.conv(f"{prefix}.conv1", width, 1, pad=0, pool=pending_pool, source=block_out)
            b.conv(f"{prefix}.conv2", width, 3, stride=stride)
            b.conv(f"{prefix}.conv3", 4 * width, 1, pad=0)
            if bi == 0:
                b.conv(f"{prefix}.downsample", 4 * width, 1, stride=stride, pad=0,
                       source=block_out, pool=pending_pool, c=c_in, h=h_in, w=w_in)
            block_out = b.layers[-1].id
            pending_pool = None
    return b.build()


NETWORKS = {"vgg16": vgg16, "resnet18": resnet18, "resnet50": resnet50}


def builtin_config(network: str, image: str) -> NetworkConfig:
    h, w = IMAGE_SIZES[image]
    return NETWORKS[network](h, w, name=f"{network}-{image}")


def builtin_configs() -> list[NetworkConfig]:
    return [builtin_config(net, img) for net in NETWORKS for img in IMAGE_SIZES]


def resolve_config(ref: str) -> NetworkConfig:
    """A builtin name such as ``resnet18-224`` or a path to a config document."""
    net, _, img = ref.partition("-")
    if net in NETWORKS and img in IMAGE_SIZES:
        return builtin_config(net, img)
    return load_config(ref)


def cap_spatial(shape: LayerShape, max_hw: Optional[int]) -> LayerShape:
    """Shrink H and W to at most ``max_hw`` for functional runs; other extents unchanged."""
    if max_hw is None or (shape.h <= max_hw and shape.w <= max_hw):
        return shape
    return shape.replace(h=min(shape.h, max_hw), w=min(shape.w, max_hw))
