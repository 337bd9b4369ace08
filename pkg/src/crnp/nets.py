"""Small trainable building blocks: dense and (depthwise) conv layers/stacks.

Weight draws use fan-in scaled uniform init with the gain of the activation in
use; every layer takes its own Rng so construction order elsewhere never
perturbs a layer's draw.
"""

from __future__ import annotations

import numpy as np

from .tensor import Rng, Tensor, conv2d, kaiming_uniform, leaky_relu, matmul, parameter

LEAKY_SLOPE = 0.25  # negative slope used by every activation in this package


class DenseLayer:
    def __init__(self, in_dim: int, out_dim: int, rng: Rng, slope: float = LEAKY_SLOPE):
        self.w = parameter(kaiming_uniform(rng, (in_dim, out_dim), fan_in=in_dim, slope=slope))
        self.b = parameter(np.zeros(out_dim))

    def __call__(self, x: Tensor) -> Tensor:
        return matmul(x, self.w) + self.b

    def parameters(self) -> list[Tensor]:
        return [self.w, self.b]


class Conv2dLayer:
    def __init__(self, in_ch: int, out_ch: int, kernel: int, rng: Rng,
                 stride: int = 1, padding: int | None = None, slope: float = LEAKY_SLOPE):
        self.stride = stride
        self.padding = kernel // 2 if padding is None else padding
        fan_in = in_ch * kernel * kernel
        self.w = parameter(kaiming_uniform(rng, (out_ch, in_ch, kernel, kernel), fan_in, slope))
        self.b = parameter(np.zeros(out_ch))

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.w, self.b, stride=self.stride, padding=self.padding)

    def parameters(self) -> list[Tensor]:
        return [self.w, self.b]


class DepthwiseConv2dLayer:
    """One kernel per channel; channel count is preserved."""

    def __init__(self, channels: int, kernel: int, rng: Rng,
                 stride: int = 1, padding: int | None = None, slope: float = LEAKY_SLOPE):
        self.stride = stride
        self.padding = kernel // 2 if padding is None else padding
        fan_in = kernel * kernel
        self.w = parameter(kaiming_uniform(rng, (channels, kernel, kernel), fan_in, slope))
        self.b = parameter(np.zeros(channels))

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.w, self.b, stride=self.stride, padding=self.padding, depthwise=True)

    def parameters(self) -> list[Tensor]:
        return [self.w, self.b]


class Stack:
    """Layers with a LeakyReLU between every two of them (none after the last)."""

    def __init__(self, layers: list, slope: float = LEAKY_SLOPE):
        self.layers = layers
        self.slope = slope

    def __call__(self, x: Tensor) -> Tensor:
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = leaky_relu(x, self.slope)
        return x

    def parameters(self) -> list[Tensor]:
        return [p for layer in self.layers for p in layer.parameters()]

    def param_count(self) -> int:
        return sum(p.size for p in self.parameters())

    def weight_arrays(self) -> list[np.ndarray]:
        return [p.data for p in self.parameters()]


def dense_stack(in_dim: int, out_dim: int, n_hidden: int, hidden_dim: int, rng: Rng) -> Stack:
    dims = [in_dim] + [hidden_dim] * n_hidden + [out_dim]
    layers = [DenseLayer(dims[i], dims[i + 1], rng.child(f"dense{i}")) for i in range(len(dims) - 1)]
    return Stack(layers)


def depthwise_stack(channels: int, out_channels: int, n_hidden: int, kernel: int, rng: Rng) -> Stack:
    """n_hidden depthwise layers plus an output layer.

    The output layer stays depthwise when channel counts match; otherwise it
    is a 1x1 pointwise conv so the stack can change channel count.
    """
    layers: list = [
        DepthwiseConv2dLayer(channels, kernel, rng.child(f"dw{i}")) for i in range(n_hidden)
    ]
    if out_channels == channels:
        layers.append(DepthwiseConv2dLayer(channels, kernel, rng.child("dw_out")))
    else:
        layers.append(Conv2dLayer(channels, out_channels, 1, rng.child("pw_out"), padding=0))
    return Stack(layers)


def pointwise_stack(channels: int, out_channels: int, n_hidden: int, hidden: int, rng: Rng) -> Stack:
    """All-1x1 conv stack: a dense net applied independently at every spatial
    position, with full channel mixing (the dense-for-depthwise option on
    feature maps)."""
    dims = [channels] + [hidden] * n_hidden + [out_channels]
    layers = [Conv2dLayer(dims[i], dims[i + 1], 1, rng.child(f"pw{i}"), padding=0)
              for i in range(len(dims) - 1)]
    return Stack(layers)
