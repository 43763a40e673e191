"""Branching computation graph with hand-written backward passes."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import GraphError, ShapeError
from . import ops

KINDS = (
    "input", "conv2d", "depthwise_sep_conv", "maxpool2d", "global_avg_pool",
    "batchnorm2d", "dense", "relu", "softmax", "dropout", "flatten", "concat",
)


@dataclass
class LayerNode:
    id: str
    kind: str
    inputs: list = field(default_factory=list)
    hyper: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)
    # non-learnable tensors (batch-norm running statistics)
    state: dict = field(default_factory=dict)

    def validate(self):
        if self.kind not in KINDS:
            raise GraphError(f"{self.id}: unknown layer kind {self.kind!r}")
        if self.kind == "input":
            if self.inputs:
                raise GraphError(f"{self.id}: input nodes take no upstream nodes")
        elif self.kind == "concat":
            if len(self.inputs) < 2:
                raise GraphError(f"{self.id}: concat needs at least two inputs")
        elif len(self.inputs) != 1:
            raise GraphError(f"{self.id}: {self.kind} takes exactly one input, got {len(self.inputs)}")
        if self.kind == "dropout" and not 0.0 <= self.hyper["p"] < 1.0:
            raise GraphError(f"{self.id}: dropout rate must be in [0, 1)")
        if self.kind == "batchnorm2d" and not self.hyper["eps"] > 0:
            raise GraphError(f"{self.id}: batch-norm epsilon must be positive")


def param_shapes(node):
    h = node.hyper
    if node.kind == "conv2d":
        return {"W": (h["out_channels"], h["in_channels"], *h["kernel"]), "b": (h["out_channels"],)}
    if node.kind == "depthwise_sep_conv":
        return {
            "depthwise": (h["in_channels"], *h["kernel"]),
            "pointwise": (h["out_channels"], h["in_channels"]),
            "b": (h["out_channels"],),
        }
    if node.kind == "dense":
        return {"W": (h["in_features"], h["out_features"]), "b": (h["out_features"],)}
    if node.kind == "batchnorm2d":
        return {"gamma": (h["channels"],), "beta": (h["channels"],)}
    return {}


def buffer_shapes(node):
    if node.kind == "batchnorm2d":
        c = node.hyper["channels"]
        return {"running_mean": (c,), "running_var": (c,), "recorded": (1,)}
    return {}


def output_shape(node, in_shapes):
    """Per-sample output shape (batch axis excluded)."""
    h = node.hyper
    k = node.kind
    if k == "input":
        return tuple(h["shape"])
    x = in_shapes[0]
    if k in ("conv2d", "depthwise_sep_conv"):
        if len(x) != 3 or x[0] != h["in_channels"]:
            raise ShapeError(f"{node.id}: expects ({h['in_channels']}, H, W) input, got {x}")
        kh, kw = h["kernel"]
        s = h["stride"]
        ph, pw = ops.resolve_padding(h["padding"], x[1], x[2], kh, kw, s)
        return (h["out_channels"], ops.conv_output_size(x[1], kh, s, *ph), ops.conv_output_size(x[2], kw, s, *pw))
    if k == "maxpool2d":
        (kh, kw), (sh, sw) = h["window"], h["stride"]
        if len(x) != 3 or kh > x[1] or kw > x[2]:
            raise ShapeError(f"{node.id}: pool window {h['window']} does not fit input {x}")
        return (x[0], (x[1] - kh) // sh + 1, (x[2] - kw) // sw + 1)
    if k == "global_avg_pool":
        if len(x) != 3 or x[1] * x[2] == 0:
            raise ShapeError(f"{node.id}: global average pool needs a non-empty spatial map, got {x}")
        return (x[0],)
    if k == "batchnorm2d":
        if x[0] != h["channels"]:
            raise ShapeError(f"{node.id}: expects {h['channels']} channels, got {x}")
        return x
    if k == "dense":
        if len(x) != 1 or x[0] != h["in_features"]:
            raise ShapeError(f"{node.id}: expects ({h['in_features']},) input, got {x}")
        return (h["out_features"],)
    if k == "flatten":
        return (int(np.prod(x)),)
    if k == "concat":
        first = in_shapes[0]
        for s in in_shapes[1:]:
            if len(s) != len(first) or s[1:] != first[1:]:
                raise ShapeError(f"{node.id}: cannot concatenate {first} and {s}")
        return (sum(s[0] for s in in_shapes), *first[1:])
    if k == "softmax" and len(x) != 1:
        raise ShapeError(f"{node.id}: softmax expects (K,) input, got {x}")
    return x


class Graph:
    """Directed acyclic network stored in topological order.

    ``forward`` takes a mapping from input-node id to a batch array and caches
    what ``backward`` needs.  ``backward`` takes the gradient of the loss with
    respect to the output (or, with ``from_logits=True``, with respect to the
    input of the final softmax node) and returns gradients for every
    learnable tensor keyed ``"<node id>.<param>"``.  Gradients of every node's
    output are kept in ``activation_grads`` after the call.
    """

    def __init__(self, nodes, output, name="graph", seed=0):
        self.nodes = list(nodes)
        self.output = output
        self.name = name
        self.mode = "infer"
        self._index = {}
        for node in self.nodes:
            node.validate()
            if node.id in self._index:
                raise GraphError(f"duplicate node id {node.id!r}")
            for up in node.inputs:
                if up not in self._index:
                    raise GraphError(f"{node.id}: upstream {up!r} is not defined earlier (cycle or unknown node)")
            self._index[node.id] = node
        if output not in self._index:
            raise GraphError(f"output node {output!r} not in graph")
        softmaxes = [n.id for n in self.nodes if n.kind == "softmax"]
        if softmaxes and softmaxes != [output]:
            raise GraphError(f"classification graphs need exactly one softmax node, as output; found {softmaxes}")
        self.shapes = self._infer_shapes()
        self.rng = np.random.default_rng(seed)
        self._cache = None
        self.activations = {}
        self.activation_grads = {}

    # -- structure -------------------------------------------------------

    def node(self, node_id):
        try:
            return self._index[node_id]
        except KeyError:
            raise GraphError(f"no node {node_id!r}") from None

    @property
    def input_nodes(self):
        return [n for n in self.nodes if n.kind == "input"]

    def consumers(self, node_id):
        return [n for n in self.nodes if node_id in n.inputs]

    def _infer_shapes(self):
        shapes = {}
        for node in self.nodes:
            shapes[node.id] = output_shape(node, [shapes[u] for u in node.inputs])
        return shapes

    def initialize(self, seed=0):
        """Glorot-uniform weights, zero biases, unit/zero batch-norm affine."""
        rng = np.random.default_rng(seed)
        for node in self.nodes:
            shapes = param_shapes(node)
            h = node.hyper
            if node.kind == "conv2d":
                f, c, kh, kw = shapes["W"]
                a = ops.glorot_limit(c * kh * kw, f * kh * kw)
                node.params = {"W": rng.uniform(-a, a, shapes["W"]), "b": np.zeros(shapes["b"])}
            elif node.kind == "depthwise_sep_conv":
                c, kh, kw = shapes["depthwise"]
                f = h["out_channels"]
                a_d = ops.glorot_limit(kh * kw, kh * kw)
                a_p = ops.glorot_limit(c, f)
                node.params = {
                    "depthwise": rng.uniform(-a_d, a_d, shapes["depthwise"]),
                    "pointwise": rng.uniform(-a_p, a_p, shapes["pointwise"]),
                    "b": np.zeros(shapes["b"]),
                }
            elif node.kind == "dense":
                a = ops.glorot_limit(h["in_features"], h["out_features"])
                node.params = {"W": rng.uniform(-a, a, shapes["W"]), "b": np.zeros(shapes["b"])}
            elif node.kind == "batchnorm2d":
                c = h["channels"]
                node.params = {"gamma": np.ones(c), "beta": np.zeros(c)}
                node.state = {"running_mean": np.zeros(c), "running_var": np.ones(c), "recorded": np.zeros(1)}
        return self

    def parameters(self):
        return {f"{n.id}.{k}": v for n in self.nodes for k, v in n.params.items()}

    def buffers(self):
        return {f"{n.id}.{k}": v for n in self.nodes for k, v in n.state.items()}

    def state_dict(self):
        return {**self.parameters(), **self.buffers()}

    def load_state_dict(self, tensors):
        for n in self.nodes:
            for store, expected in ((n.params, param_shapes(n)), (n.state, buffer_shapes(n))):
                for k, want in expected.items():
                    key = f"{n.id}.{k}"
                    if key not in tensors:
                        raise GraphError(f"missing tensor {key!r}")
                    value = np.asarray(tensors[key], dtype=np.float64)
                    if value.shape != tuple(want):
                        raise ShapeError(f"tensor {key!r} has shape {value.shape}, expected {tuple(want)}")
                    store[k] = value.copy()

    def expected_shapes(self):
        """Shapes of every tensor ``state_dict`` would hold, without touching data."""
        out = {}
        for n in self.nodes:
            for k, s in {**param_shapes(n), **buffer_shapes(n)}.items():
                out[f"{n.id}.{k}"] = tuple(s)
        return out

    def param_count(self):
        return int(sum(int(np.prod(s)) for n in self.nodes for s in param_shapes(n).values()))

    def manifest(self):
        nodes = []
        for n in self.nodes:
            pcount = sum(int(np.prod(s)) for s in param_shapes(n).values())
            nodes.append({
                "id": n.id,
                "kind": n.kind,
                "inputs": list(n.inputs),
                "hyper": _jsonable(n.hyper),
                "output_shape": list(self.shapes[n.id]),
                "params": pcount,
            })
        return {
            "name": self.name,
            "inputs": {n.id: list(n.hyper["shape"]) for n in self.input_nodes},
            "output": self.output,
            "output_shape": list(self.shapes[self.output]),
            "layer_count": len(self.nodes),
            "param_count": self.param_count(),
            "nodes": nodes,
        }

    # -- execution -------------------------------------------------------

    def forward(self, inputs, mode=None):
        mode = mode or self.mode
        if mode not in ("train", "infer"):
            raise ValueError(f"mode must be 'train' or 'infer', got {mode!r}")
        if not isinstance(inputs, dict):
            if len(self.input_nodes) != 1:
                raise GraphError("graph has several inputs; pass a dict keyed by input id")
            inputs = {self.input_nodes[0].id: inputs}
        train = mode == "train"
        acts = {}
        cache = {}
        for node in self.nodes:
            k, h, p = node.kind, node.hyper, node.params
            if k == "input":
                if node.id not in inputs:
                    raise GraphError(f"missing input {node.id!r}")
                x = np.asarray(inputs[node.id], dtype=np.float64)
                if x.shape[1:] != tuple(h["shape"]):
                    raise ShapeError(f"input {node.id!r}: expected (N, {', '.join(map(str, h['shape']))}), got {x.shape}")
                acts[node.id] = x
                continue
            xs = [acts[u] for u in node.inputs]
            x = xs[0]
            if k == "conv2d":
                y, cache[node.id] = ops.conv2d_forward(x, p["W"], p["b"], h["stride"], h["padding"])
            elif k == "depthwise_sep_conv":
                y, cache[node.id] = ops.depthwise_sep_conv_forward(
                    x, p["depthwise"], p["pointwise"], p["b"], h["stride"], h["padding"])
            elif k == "maxpool2d":
                y, cache[node.id] = ops.maxpool2d_forward(x, h["window"], h["stride"])
            elif k == "global_avg_pool":
                y, cache[node.id] = ops.global_avg_pool_forward(x)
            elif k == "batchnorm2d":
                st = node.state
                if not train and not st["recorded"][0]:
                    raise GraphError(f"{node.id}: inference before any batch statistics were recorded")
                y, cache[node.id] = ops.batchnorm_forward(
                    x, p["gamma"], p["beta"], st["running_mean"], st["running_var"], train,
                    h["momentum"], h["eps"])
                if train:
                    st["recorded"][0] = 1.0
            elif k == "dense":
                y, cache[node.id] = ops.dense_forward(x, p["W"], p["b"])
            elif k == "relu":
                y, cache[node.id] = ops.relu_forward(x)
            elif k == "softmax":
                y = ops.softmax(x)
                cache[node.id] = y
            elif k == "dropout":
                y, cache[node.id] = ops.dropout_forward(x, h["p"], train, self.rng)
            elif k == "flatten":
                y = x.reshape(x.shape[0], -1)
                cache[node.id] = x.shape
            elif k == "concat":
                y, cache[node.id] = ops.concat_forward(xs, axis=1)
            acts[node.id] = y
        self.activations = acts
        self._cache = cache
        return acts[self.output]

    def logits(self):
        """Input of the softmax output node from the last forward pass."""
        out = self.node(self.output)
        if out.kind != "softmax":
            raise GraphError("graph output is not a softmax node")
        return self.activations[out.inputs[0]]

    def backward(self, grad, from_logits=False):
        if self._cache is None:
            raise GraphError("backward called before forward")
        out = self.node(self.output)
        upstream = {}
        if from_logits:
            if out.kind != "softmax":
                raise GraphError("from_logits requires a softmax output node")
            upstream[out.inputs[0]] = np.asarray(grad, dtype=np.float64)
            upstream[out.id] = np.zeros_like(self.activations[out.id])
        else:
            upstream[out.id] = np.asarray(grad, dtype=np.float64)
        grads = {}

        def push(node_id, g):
            if node_id in upstream:
                upstream[node_id] = upstream[node_id] + g
            else:
                upstream[node_id] = g

        for node in reversed(self.nodes):
            if node.id not in upstream:
                continue
            if from_logits and node.id == out.id:
                continue
            g = upstream[node.id]
            k, c = node.kind, self._cache.get(node.id)
            if k == "input":
                continue
            if k == "conv2d":
                dx, grads[f"{node.id}.W"], grads[f"{node.id}.b"] = ops.conv2d_backward(g, c)
            elif k == "depthwise_sep_conv":
                dx, dd, dp, db = ops.depthwise_sep_conv_backward(g, c)
                grads[f"{node.id}.depthwise"], grads[f"{node.id}.pointwise"], grads[f"{node.id}.b"] = dd, dp, db
            elif k == "maxpool2d":
                dx = ops.maxpool2d_backward(g, c)
            elif k == "global_avg_pool":
                dx = ops.global_avg_pool_backward(g, c)
            elif k == "batchnorm2d":
                dx, grads[f"{node.id}.gamma"], grads[f"{node.id}.beta"] = ops.batchnorm_backward(g, c)
            elif k == "dense":
                dx, grads[f"{node.id}.W"], grads[f"{node.id}.b"] = ops.dense_backward(g, c, node.params["W"])
            elif k == "relu":
                dx = ops.relu_backward(g, c)
            elif k == "softmax":
                dx = ops.softmax_backward(g, c)
            elif k == "dropout":
                dx = ops.dropout_backward(g, c)
            elif k == "flatten":
                dx = g.reshape(c)
            elif k == "concat":
                for up, part in zip(node.inputs, ops.concat_backward(g, c, axis=1)):
                    push(up, part)
                continue
            push(node.inputs[0], dx)
        self.activation_grads = upstream
        for node in self.nodes:
            for name, value in node.params.items():
                grads.setdefault(f"{node.id}.{name}", np.zeros_like(value))
        return grads


class GraphBuilder:
    """Incremental graph construction with shape tracking.

    Every method appends one node and returns its id.
    """

    def __init__(self, name="graph"):
        self.name = name
        self.nodes = []
        self.shapes = {}
        self._counts = {}

    def _add(self, kind, inputs, hyper, name=None):
        if name is None:
            self._counts[kind] = self._counts.get(kind, 0) + 1
            name = f"{kind}_{self._counts[kind]}"
        node = LayerNode(name, kind, list(inputs), dict(hyper))
        node.validate()
        if name in self.shapes:
            raise GraphError(f"duplicate node id {name!r}")
        self.shapes[name] = output_shape(node, [self.shapes[u] for u in inputs])
        self.nodes.append(node)
        return name

    def shape(self, node_id):
        return self.shapes[node_id]

    def input(self, shape, name="input"):
        return self._add("input", [], {"shape": tuple(shape)}, name)

    def conv2d(self, x, filters, kernel, stride=1, padding="same", name=None):
        kernel = (kernel, kernel) if np.isscalar(kernel) else tuple(kernel)
        hyper = {"in_channels": self.shapes[x][0], "out_channels": int(filters), "kernel": kernel,
                 "stride": int(stride), "padding": padding}
        return self._add("conv2d", [x], hyper, name)

    def depthwise_sep_conv(self, x, filters, kernel, stride=1, padding="same", name=None):
        kernel = (kernel, kernel) if np.isscalar(kernel) else tuple(kernel)
        hyper = {"in_channels": self.shapes[x][0], "out_channels": int(filters), "kernel": kernel,
                 "stride": int(stride), "padding": padding}
        return self._add("depthwise_sep_conv", [x], hyper, name)

    def maxpool2d(self, x, window=2, stride=None, name=None):
        window = (window, window) if np.isscalar(window) else tuple(window)
        stride = window if stride is None else ((stride, stride) if np.isscalar(stride) else tuple(stride))
        return self._add("maxpool2d", [x], {"window": window, "stride": stride}, name)

    def global_avg_pool(self, x, name=None):
        return self._add("global_avg_pool", [x], {}, name)

    def batchnorm(self, x, momentum=0.1, eps=1e-5, name=None):
        return self._add("batchnorm2d", [x], {"channels": self.shapes[x][0], "momentum": momentum, "eps": eps}, name)

    def dense(self, x, units, name=None):
        return self._add("dense", [x], {"in_features": self.shapes[x][0], "out_features": int(units)}, name)

    def relu(self, x, name=None):
        return self._add("relu", [x], {}, name)

    def softmax(self, x, name=None):
        return self._add("softmax", [x], {}, name)

    def dropout(self, x, p, name=None):
        return self._add("dropout", [x], {"p": float(p)}, name)

    def flatten(self, x, name=None):
        return self._add("flatten", [x], {}, name)

    def concat(self, xs, name=None):
        return self._add("concat", list(xs), {"axis": 1}, name)

    def build(self, output, seed=0, initialize=True):
        graph = Graph(self.nodes, output, name=self.name, seed=seed)
        if initialize:
            graph.initialize(seed)
        return graph


def _jsonable(value):
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.generic):
        return value.item()
    return value
