"""Grad-CAM saliency maps."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GraphError, LeafnetError
from .models import prepare_inputs

_CONV_KINDS = ("conv2d", "depthwise_sep_conv")
_PASS_THROUGH = ("batchnorm2d", "relu")


@dataclass
class Heatmap:
    values: np.ndarray
    target_class: int
    layer: str
    probability: float = None
    # gradients are taken of the pre-softmax score
    differentiated: str = "logit"


def gradcam_map(feature_maps, gradients):
    """Weight each map by its spatially averaged gradient, sum, ReLU, max-normalise."""
    feature_maps = np.asarray(feature_maps, dtype=np.float64)
    gradients = np.asarray(gradients, dtype=np.float64)
    if feature_maps.ndim != 3 or feature_maps.shape[1] * feature_maps.shape[2] == 0:
        raise LeafnetError(f"Grad-CAM needs (C, H, W) feature maps, got {feature_maps.shape}")
    alpha = gradients.mean(axis=(1, 2))
    cam = np.maximum(np.tensordot(alpha, feature_maps, axes=1), 0.0)
    peak = cam.max()
    return cam / peak if peak > 0 else cam


def default_tap(graph):
    """Last convolution, followed through any batch-norm/ReLU it feeds exclusively."""
    convs = [n for n in graph.nodes if n.kind in _CONV_KINDS]
    if not convs:
        raise GraphError("graph has no convolutional layer to tap")
    tap = convs[-1].id
    while True:
        users = graph.consumers(tap)
        if len(users) == 1 and users[0].kind in _PASS_THROUGH:
            tap = users[0].id
        else:
            return tap


def gradcam(graph, image, target_class=None, layer=None):
    """Heat map for one (C, H, W) image; the graph runs in inference mode."""
    layer = layer or default_tap(graph)
    if len(graph.shapes[graph.node(layer).id]) != 3:
        raise LeafnetError(f"layer {layer!r} has no spatial extent")
    probs = graph.forward(prepare_inputs(graph, [image]), mode="infer")[0]
    k = int(np.argmax(probs)) if target_class is None else int(target_class)
    num_classes = probs.shape[0]
    if not 0 <= k < num_classes:
        raise LeafnetError(f"class {k} out of range for {num_classes} classes")
    seed = np.zeros((1, num_classes))
    seed[0, k] = 1.0
    graph.backward(seed, from_logits=True)
    maps = graph.activations[layer][0]
    grads = graph.activation_grads.get(layer)
    if grads is None:
        grads = np.zeros((1, *maps.shape))
    return Heatmap(gradcam_map(maps, grads[0]), k, layer, float(probs[k]))
