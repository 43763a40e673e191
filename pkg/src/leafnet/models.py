"""Builders for the supported architectures.

All builders return an initialised :class:`~leafnet.layers.Graph` whose
output is a single softmax node.  ``width_multiplier`` shrinks convolution
channel counts (never below one) for desk-scale runs; dense widths are
kept as specified.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from . import augment
from .errors import ShapeError
from .layers import GraphBuilder

MODELS = ("dmcnn", "brassicanet", "beannet", "micro_dsnet")

DEFAULT_SCALES = {
    "dmcnn": [(224, 224), (256, 256), (128, 128)],
    "brassicanet": [(128, 128)],
    "beannet": [(128, 128)],
    "micro_dsnet": [(64, 64)],
}
DEFAULT_DROPOUT = {"dmcnn": 0.5, "brassicanet": 0.5, "beannet": 0.3, "micro_dsnet": 0.0}

# trunk stages: (kernel, channels at width 1)
DMCNN_STAGES = ((7, 32), (5, 64), (3, 128), (3, 256))
DMCNN_GAP_UNITS = 128
DMCNN_GAP_DROPOUT = 0.25
DMCNN_HEAD = (256, 128)

BRASSICA_CONVS = ((5, 64), (3, 256), (3, 256), (3, 256))
BRASSICA_HEAD_CONV = (3, 128)
BRASSICA_DENSE = (512, 512)

BEAN_CONVS = 5
BEAN_FILTERS = 10
BEAN_DENSE = 64


@dataclass
class ModelSpec:
    name: str = "dmcnn"
    num_classes: int = 10
    input_scales: list = field(default=None)
    width_multiplier: float = 1.0
    dropout: float = None
    in_channels: int = 3
    seed: int = 0

    def __post_init__(self):
        if self.name not in MODELS:
            raise ValueError(f"unknown model {self.name!r}; choose from {', '.join(MODELS)}")
        if self.input_scales is None:
            self.input_scales = list(DEFAULT_SCALES[self.name])
        self.input_scales = [tuple(int(v) for v in s) for s in self.input_scales]
        if self.dropout is None:
            self.dropout = DEFAULT_DROPOUT[self.name]
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if not 0 < self.width_multiplier <= 1:
            raise ValueError("width_multiplier must be in (0, 1]")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must be in [0, 1)")
        if not self.input_scales:
            raise ValueError("at least one input scale is required")

    def channels(self, c):
        return max(1, int(round(c * self.width_multiplier)))

    def to_dict(self):
        d = asdict(self)
        d["input_scales"] = [list(s) for s in self.input_scales]
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def _require_extent(spec, scale, depth):
    need = 2 ** depth
    if min(scale) < need:
        raise ShapeError(f"{spec.name}: input scale {scale[0]}x{scale[1]} too small, "
                         f"needs at least {need}x{need} for {depth} pooling stages")


def input_id(scale):
    return f"input_{scale[0]}x{scale[1]}"


def build_dmcnn(spec, initialize=True):
    b = GraphBuilder("dmcnn")
    fused = []
    for i, scale in enumerate(spec.input_scales):
        _require_extent(spec, scale, len(DMCNN_STAGES) + 1)
        x = b.input((spec.in_channels, *scale), name=input_id(scale))
        taps = []
        for st, (k, ch) in enumerate(DMCNN_STAGES, start=1):
            x = b.conv2d(x, spec.channels(ch), k, padding="same", name=f"s{i}_conv{st}")
            x = b.batchnorm(x, name=f"s{i}_bn{st}")
            x = b.relu(x, name=f"s{i}_relu{st}")
            x = b.maxpool2d(x, 2, name=f"s{i}_pool{st}")
            taps.append(x)
        g = b.global_avg_pool(taps[0], name=f"s{i}_b1_gap")
        g = b.dense(g, DMCNN_GAP_UNITS, name=f"s{i}_b1_dense")
        g = b.relu(g, name=f"s{i}_b1_relu")
        branches = [b.dropout(g, DMCNN_GAP_DROPOUT, name=f"s{i}_b1_dropout")]
        for j, tap in enumerate(taps[1:], start=2):
            p = b.maxpool2d(tap, 2, name=f"s{i}_b{j}_pool")
            branches.append(b.flatten(p, name=f"s{i}_b{j}_flatten"))
        h = b.concat(branches, name=f"s{i}_concat")
        for d, units in enumerate(DMCNN_HEAD, start=1):
            h = b.dense(h, units, name=f"s{i}_fc{d}")
            h = b.batchnorm(h, name=f"s{i}_fc{d}_bn")
            h = b.relu(h, name=f"s{i}_fc{d}_relu")
        h = b.dropout(h, spec.dropout, name=f"s{i}_dropout1")
        h = b.dropout(h, spec.dropout, name=f"s{i}_dropout2")
        fused.append(h)
    z = fused[0] if len(fused) == 1 else b.concat(fused, name="scale_concat")
    z = b.dense(z, spec.num_classes, name="classifier")
    out = b.softmax(z, name="softmax")
    return b.build(out, seed=spec.seed, initialize=initialize)


def build_brassicanet(spec, initialize=True):
    if spec.input_scales != [(128, 128)]:
        raise ShapeError(f"brassicanet takes a single 128x128 input, got {spec.input_scales}")
    b = GraphBuilder("brassicanet")
    x = b.input((spec.in_channels, 128, 128), name=input_id((128, 128)))
    for i, (k, ch) in enumerate(BRASSICA_CONVS, start=1):
        x = b.conv2d(x, spec.channels(ch), k, padding="same", name=f"conv{i}")
        x = b.relu(x, name=f"relu{i}")
        x = b.maxpool2d(x, 2, name=f"pool{i}")
    k, ch = BRASSICA_HEAD_CONV
    x = b.conv2d(x, spec.channels(ch), k, padding="same", name="conv5")
    x = b.relu(x, name="relu5")
    x = b.flatten(x, name="flatten")
    for i, units in enumerate(BRASSICA_DENSE, start=1):
        x = b.dense(x, units, name=f"fc{i}")
        x = b.relu(x, name=f"fc{i}_relu")
    x = b.dropout(x, spec.dropout, name="dropout")
    x = b.dense(x, spec.num_classes, name="classifier")
    out = b.softmax(x, name="softmax")
    return b.build(out, seed=spec.seed, initialize=initialize)


def build_beannet(spec, initialize=True):
    if len(spec.input_scales) != 1:
        raise ShapeError("beannet takes a single input scale")
    scale = spec.input_scales[0]
    _require_extent(spec, scale, BEAN_CONVS)
    b = GraphBuilder("beannet")
    x = b.input((spec.in_channels, *scale), name=input_id(scale))
    for i in range(1, BEAN_CONVS + 1):
        x = b.conv2d(x, spec.channels(BEAN_FILTERS), 3, padding="same", name=f"conv{i}")
        x = b.relu(x, name=f"relu{i}")
        x = b.maxpool2d(x, 2, name=f"pool{i}")
    x = b.flatten(x, name="flatten")
    x = b.dense(x, BEAN_DENSE, name="fc1")
    x = b.relu(x, name="fc1_relu")
    x = b.dropout(x, spec.dropout, name="dropout")
    x = b.dense(x, spec.num_classes, name="classifier")
    out = b.softmax(x, name="softmax")
    return b.build(out, seed=spec.seed, initialize=initialize)


def build_micro_dsnet(spec, initialize=True):
    if len(spec.input_scales) != 1:
        raise ShapeError("micro_dsnet takes a single input scale")
    scale = spec.input_scales[0]
    _require_extent(spec, scale, 3)
    b = GraphBuilder("micro_dsnet")
    x = b.input((spec.in_channels, *scale), name=input_id(scale))
    ch = spec.channels(8)
    x = b.conv2d(x, ch, 3, padding="same", name="stem")
    for i in range(1, 4):
        ch *= 2
        x = b.depthwise_sep_conv(x, ch, 3, padding="same", name=f"ds{i}")
        x = b.batchnorm(x, name=f"ds{i}_bn")
        x = b.relu(x, name=f"ds{i}_relu")
        x = b.maxpool2d(x, 2, name=f"ds{i}_pool")
    x = b.global_avg_pool(x, name="gap")
    if spec.dropout:
        x = b.dropout(x, spec.dropout, name="dropout")
    x = b.dense(x, spec.num_classes, name="classifier")
    out = b.softmax(x, name="softmax")
    return b.build(out, seed=spec.seed, initialize=initialize)


BUILDERS = {
    "dmcnn": build_dmcnn,
    "brassicanet": build_brassicanet,
    "beannet": build_beannet,
    "micro_dsnet": build_micro_dsnet,
}


def build_model(spec, initialize=True):
    return BUILDERS[spec.name](spec, initialize=initialize)


def build_manifest(graph, spec):
    m = graph.manifest()
    m["spec"] = spec.to_dict()
    m["conv_layers"] = [
        {"id": n["id"], "filters": n["hyper"]["out_channels"], "kernel": n["hyper"]["kernel"][0]}
        for n in m["nodes"] if n["kind"] in ("conv2d", "depthwise_sep_conv")
    ]
    if spec.name == "dmcnn":
        m["dmcnn"] = {
            "trunk_kernels": [k for k, _ in DMCNN_STAGES],
            "trunk_channels": [spec.channels(c) for _, c in DMCNN_STAGES],
            "gap_branch_units": DMCNN_GAP_UNITS,
            "gap_branch_dropout": DMCNN_GAP_DROPOUT,
            "branch_pool": {"window": 2, "stride": 2},
            "head_dense": list(DMCNN_HEAD),
            "head_dropout": [spec.dropout, spec.dropout],
            "fusion": "concat per-scale head vectors, shared dense + softmax",
        }
    return m


def prepare_inputs(graph, images):
    """Resize a list of (C, H, W) images to every input scale of ``graph``."""
    feeds = {}
    for node in graph.input_nodes:
        c, h, w = node.hyper["shape"]
        feeds[node.id] = np.stack([
            img if img.shape[1:] == (h, w) else augment.resize(img, (h, w)) for img in images
        ])
    return feeds
