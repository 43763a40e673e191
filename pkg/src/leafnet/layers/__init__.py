from .graph import KINDS, Graph, GraphBuilder, LayerNode, buffer_shapes, output_shape, param_shapes
from .ops import (
    batchnorm_backward,
    batchnorm_forward,
    concat_backward,
    concat_forward,
    conv2d_backward,
    conv2d_forward,
    cross_entropy_loss,
    dense_backward,
    dense_forward,
    depthwise_sep_conv_backward,
    depthwise_sep_conv_forward,
    dropout_backward,
    dropout_forward,
    global_avg_pool_backward,
    global_avg_pool_forward,
    maxpool2d_backward,
    maxpool2d_forward,
    relu_backward,
    relu_forward,
    softmax,
    softmax_backward,
)

__all__ = [
    "KINDS", "Graph", "GraphBuilder", "LayerNode", "buffer_shapes", "output_shape", "param_shapes",
    "batchnorm_backward", "batchnorm_forward", "concat_backward", "concat_forward",
    "conv2d_backward", "conv2d_forward", "cross_entropy_loss", "dense_backward",
    "dense_forward", "depthwise_sep_conv_backward", "depthwise_sep_conv_forward",
    "dropout_backward", "dropout_forward", "global_avg_pool_backward",
    "global_avg_pool_forward", "maxpool2d_backward", "maxpool2d_forward",
    "relu_backward", "relu_forward", "softmax", "softmax_backward",
]
