"""Composite layers: plain conv, weight generator, dynamic conv, residual dense block.

Every block owns its parameter tensors (leaves with requires_grad set),
exposes them through `params()` as (dotted-name, tensor) pairs in a fixed
order, and reports how many of its convolutions count toward the model's
layer audit via `layer_count()`.

Initialization: convolutions feeding a ReLU draw weights from
N(0, 2/fan_in); the rest use N(0, 1/fan_in). Biases start at zero. A
`zero_init` escape hatch exists for the reconstruction conv, which wants
to start as an exact no-op.
"""

import numpy as np

from . import engine
from .engine import Tensor


def conv_weight(rng, cout, cin, k, dtype, relu_gain=True, zero_init=False):
    if zero_init:
        return Tensor(np.zeros((cout, cin, k, k)), dtype=dtype, requires_grad=True)
    fan_in = cin * k * k
    std = np.sqrt((2.0 if relu_gain else 1.0) / fan_in)
    data = rng.normal(0.0, std, size=(cout, cin, k, k))
    return Tensor(data, dtype=dtype, requires_grad=True)


class Conv2dLayer:
    """Stride-1 same-padding convolution with bias."""

    def __init__(self, rng, cin, cout, kernel_size, dtype=np.float32,
                 relu_gain=True, zero_init=False):
        self.kernel_size = kernel_size
        self.w = conv_weight(rng, cout, cin, kernel_size, dtype, relu_gain, zero_init)
        self.b = Tensor(np.zeros(cout), dtype=dtype, requires_grad=True)

    def forward(self, x: Tensor) -> Tensor:
        return engine.conv2d(x, self.w, self.b)

    __call__ = forward

    def params(self):
        return [("w", self.w), ("b", self.b)]


class WeightGenerator:
    """Per-sample attention over K parallel kernels.

    Pipeline: global average pool -> 1x1 conv (Cin -> K) -> ReLU ->
    1x1 conv (K -> K) -> softmax. The 1x1 convs act on (N, C, 1, 1)
    views of the pooled features, so they are dense layers in effect.
    """

    def __init__(self, rng, cin, k_kernels, dtype=np.float32):
        self.cin = cin
        self.k_kernels = k_kernels
        self.conv1 = Conv2dLayer(rng, cin, k_kernels, 1, dtype, relu_gain=True)
        self.conv2 = Conv2dLayer(rng, k_kernels, k_kernels, 1, dtype, relu_gain=False)

    def logits(self, x: Tensor) -> Tensor:
        """Pre-softmax attention scores, shape (N, K)."""
        pooled = engine.global_avg_pool(x)  # (N, C)
        n, c = pooled.shape
        h = engine.reshape(pooled, (n, c, 1, 1))
        h = engine.relu(self.conv1(h))
        h = self.conv2(h)
        return engine.reshape(h, (n, self.k_kernels))

    def forward(self, x: Tensor) -> Tensor:
        return engine.softmax(self.logits(x))

    __call__ = forward

    def params(self):
        return ([("conv1." + n, p) for n, p in self.conv1.params()]
                + [("conv2." + n, p) for n, p in self.conv2.params()])

    def layer_count(self):
        return 2


class DynamicConv:
    """Convolution whose kernel is an attention-weighted mix of K kernels.

    For each sample the weight generator produces a simplex vector w; the
    applied kernel is sum_i w_i * K_i (same for the bias), and the input
    is convolved with its own aggregated kernel. Gradients flow into the
    kernels, the biases and the generator.
    """

    def __init__(self, rng, cin, cout, kernel_size, k_kernels=4, dtype=np.float32,
                 temperature=1.0):
        if temperature <= 0:
            raise ValueError(f"temperature must be positive, got {temperature}")
        self.kernel_size = kernel_size
        self.k_kernels = k_kernels
        self.temperature = float(temperature)
        self.wg = WeightGenerator(rng, cin, k_kernels, dtype)
        fan_in = cin * kernel_size * kernel_size
        std = np.sqrt(2.0 / fan_in)
        stack = rng.normal(0.0, std, size=(k_kernels, cout, cin, kernel_size, kernel_size))
        self.kernels = Tensor(stack, dtype=dtype, requires_grad=True)
        self.biases = Tensor(np.zeros((k_kernels, cout)), dtype=dtype, requires_grad=True)

    def attention(self, x: Tensor) -> Tensor:
        z = self.wg.logits(x)
        if self.temperature != 1.0:
            z = engine.scale(z, 1.0 / self.temperature)
        return engine.softmax(z)

    def forward(self, x: Tensor) -> Tensor:
        att = self.attention(x)              # (N, K)
        w = engine.attention_combine(att, self.kernels)  # (N, Cout, Cin, k, k)
        b = engine.attention_combine(att, self.biases)   # (N, Cout)
        return engine.batch_conv2d(x, w, b)

    __call__ = forward

    def params(self):
        return ([("wg." + n, p) for n, p in self.wg.params()]
                + [("kernels", self.kernels), ("biases", self.biases)])

    def layer_count(self):
        # the aggregated convolution plus the 2-layer generator
        return 1 + self.wg.layer_count()


class ResidualDenseBlock:
    """Three densely connected Conv+ReLU stages, a 1x1 fusion, a local skip.

    Each stage sees the concatenation of the block input and every
    earlier stage's output and emits `growth` channels; the fusion conv
    maps the full concatenation back to the input width. With all-zero
    parameters the block is the identity.
    """

    def __init__(self, rng, channels, growth, kernel_size, dtype=np.float32):
        self.channels = channels
        self.growth = growth
        self.conv1 = Conv2dLayer(rng, channels, growth, kernel_size, dtype)
        self.conv2 = Conv2dLayer(rng, channels + growth, growth, kernel_size, dtype)
        self.conv3 = Conv2dLayer(rng, channels + 2 * growth, growth, kernel_size, dtype)
        self.fuse = Conv2dLayer(rng, channels + 3 * growth, channels, 1, dtype,
                                relu_gain=False)

    def forward(self, x: Tensor) -> Tensor:
        x1 = engine.relu(self.conv1(x))
        x2 = engine.relu(self.conv2(engine.concat_channels([x, x1])))
        x3 = engine.relu(self.conv3(engine.concat_channels([x, x1, x2])))
        fused = self.fuse(engine.concat_channels([x, x1, x2, x3]))
        return engine.add(x, fused)

    __call__ = forward

    def params(self):
        out = []
        for label, layer in (("conv1", self.conv1), ("conv2", self.conv2),
                             ("conv3", self.conv3), ("fuse", self.fuse)):
            out.extend((label + "." + n, p) for n, p in layer.params())
        return out

    def layer_count(self):
        return 4
