"""The full denoiser: dynamic-conv stage, two wavelet stages, reconstruction.

Stage one (DCB) runs conv -> dynamic conv -> ReLU -> conv -> ReLU. Stages
two and three are wavelet enhancement passes: analysis transform, a
residual dense block over the four subband groups, synthesis transform.
The reconstruction stage stacks two RDB+ReLU steps, fuses their outputs
with the stage input, refines with a conv+ReLU, and predicts a noise map
that is subtracted from the network input.

The audit below counts 23 convolutional layers at the reference width of
64 channels: 5 in the first stage (the generator's two 1x1 layers, the
aggregated convolution, and the two plain convs), 4 per wavelet stage,
and 10 in reconstruction.
"""

import numpy as np
from dataclasses import dataclass, asdict

from . import engine, wavelet
from .engine import Tensor, DTYPES
from .blocks import Conv2dLayer, DynamicConv, ResidualDenseBlock


@dataclass
class ModelConfig:
    in_channels: int = 1
    base_channels: int = 64
    kernel_size: int = 5
    dyn_kernels: int = 4
    fe_growth: int | None = None  # defaults to base_channels
    precision: int = 32
    seed: int = 0
    temperature: float = 1.0
    dcb_additive_fusion: bool = False

    def __post_init__(self):
        if self.in_channels not in (1, 3):
            raise ValueError(f"in_channels must be 1 or 3, got {self.in_channels}")
        if self.base_channels < 4 or self.base_channels % 4 != 0:
            raise ValueError(
                f"base_channels must be a multiple of 4 and at least 4, got {self.base_channels}")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError(f"kernel_size must be odd, got {self.kernel_size}")
        if self.dyn_kernels < 1:
            raise ValueError(f"dyn_kernels must be positive, got {self.dyn_kernels}")
        if self.precision not in DTYPES:
            raise ValueError(f"precision must be 32 or 64, got {self.precision}")
        if self.fe_growth is None:
            self.fe_growth = self.base_channels
        if self.fe_growth < 1:
            raise ValueError(f"fe_growth must be positive, got {self.fe_growth}")
        if self.temperature <= 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")

    def to_dict(self) -> dict:
        return asdict(self)

    _BOOL_WORDS = {"true": True, "1": True, "yes": True,
                   "false": False, "0": False, "no": False}

    @classmethod
    def from_mapping(cls, mapping: dict) -> "ModelConfig":
        """Build a config from string-or-typed values, e.g. a parsed config file."""
        kwargs = {}
        fields = cls.__dataclass_fields__
        for key, raw in mapping.items():
            if key not in fields:
                raise ValueError(f"unknown model config key: {key}")
            if key == "temperature":
                kwargs[key] = float(raw)
            elif key == "dcb_additive_fusion":
                if isinstance(raw, str):
                    word = raw.strip().lower()
                    if word not in cls._BOOL_WORDS:
                        raise ValueError(f"dcb_additive_fusion: expected true/false, got {raw!r}")
                    kwargs[key] = cls._BOOL_WORDS[word]
                else:
                    kwargs[key] = bool(raw)
            else:
                kwargs[key] = int(raw)
        return cls(**kwargs)


def parse_config_text(text: str) -> dict:
    """Parse KEY=value lines into a string dict; '#' starts a comment."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        body = line.split("#", 1)[0].strip()
        if not body:
            continue
        if "=" not in body:
            raise ValueError(f"line {lineno}: expected KEY=value, got {line.strip()!r}")
        key, value = body.split("=", 1)
        out[key.strip()] = value.strip()
    return out


class MwdcnnModel:
    """Three-stage residual denoiser over NCHW tensors."""

    def __init__(self, config: ModelConfig):
        self.config = config
        dt = DTYPES[config.precision]
        rng = np.random.default_rng(config.seed)
        cin, c, k = config.in_channels, config.base_channels, config.kernel_size
        g = config.fe_growth

        # stage 1: dynamic convolution block
        self.conv_in = Conv2dLayer(rng, cin, c, k, dt, relu_gain=False)
        self.dc = DynamicConv(rng, c, c, k, config.dyn_kernels, dt, config.temperature)
        self.conv_dcb = Conv2dLayer(rng, c, c, k, dt)

        # stage 2: two wavelet enhancement passes, untied parameters,
        # each enhancing the 4C subband stack at half resolution
        self.fe1 = ResidualDenseBlock(rng, 4 * c, g, k, dt)
        self.fe2 = ResidualDenseBlock(rng, 4 * c, g, k, dt)

        # stage 3: reconstruction; the last conv starts at zero so a fresh
        # model is the identity denoiser
        self.rdb1 = ResidualDenseBlock(rng, c, c, k, dt)
        self.rdb2 = ResidualDenseBlock(rng, c, c, k, dt)
        self.refine = Conv2dLayer(rng, c, c, k, dt)
        self.noise_map = Conv2dLayer(rng, c, cin, k, dt, relu_gain=False, zero_init=True)

    # -- stage forwards -----------------------------------------------------

    def dcb_forward(self, x: Tensor) -> Tensor:
        if x.data.ndim != 4 or x.shape[1] != self.config.in_channels:
            raise ValueError(
                f"expected N x {self.config.in_channels} x H x W input, got shape {x.shape}")
        y0 = self.conv_in(x)
        y = self.dc(y0)
        if self.config.dcb_additive_fusion:
            y = engine.add(y, y0)
        y = engine.relu(y)
        return engine.relu(self.conv_dcb(y))

    def web_forward(self, stage: int, x: Tensor) -> Tensor:
        fe = {1: self.fe1, 2: self.fe2}[stage]
        return wavelet.idwt2d(fe(wavelet.dwt2d(x)))

    def rb_forward(self, web_out: Tensor, noisy: Tensor) -> Tensor:
        s1 = engine.relu(self.rdb1(web_out))
        s2 = engine.relu(self.rdb2(s1))
        fused = engine.add_n([web_out, s1, s2])
        refined = engine.relu(self.refine(fused))
        noise = self.noise_map(refined)
        if noise.shape != noisy.shape:
            raise ValueError(f"noise map shape {noise.shape} vs input {noisy.shape}")
        return engine.sub(noisy, noise)

    def forward(self, noisy: Tensor) -> Tensor:
        if noisy.data.ndim != 4:
            raise ValueError(f"expected NCHW input, got shape {noisy.shape}")
        h, w = noisy.shape[2], noisy.shape[3]
        if h % 2 or w % 2:
            raise ValueError(f"spatial size must be even, got {h}x{w}; pad the input upstream")
        if h < 8 or w < 8:
            raise ValueError(f"input must be at least 8x8, got {h}x{w}")
        d = self.dcb_forward(noisy)
        e1 = self.web_forward(1, d)
        e2 = self.web_forward(2, e1)
        return self.rb_forward(e2, noisy)

    __call__ = forward

    # -- parameter access ----------------------------------------------------

    def dcb_params(self):
        out = [("conv_in." + n, p) for n, p in self.conv_in.params()]
        out += [("dc." + n, p) for n, p in self.dc.params()]
        out += [("conv_out." + n, p) for n, p in self.conv_dcb.params()]
        return out

    def web_params(self, stage: int):
        fe = {1: self.fe1, 2: self.fe2}[stage]
        return [("fe." + n, p) for n, p in fe.params()]

    def rb_params(self):
        out = []
        for label, part in (("rdb1", self.rdb1), ("rdb2", self.rdb2),
                            ("refine", self.refine), ("noise_map", self.noise_map)):
            out.extend((label + "." + n, p) for n, p in part.params())
        return out

    def params(self):
        """All parameter tensors as (dotted-name, tensor), in a fixed order."""
        out = [("dcb." + n, p) for n, p in self.dcb_params()]
        out += [("web1." + n, p) for n, p in self.web_params(1)]
        out += [("web2." + n, p) for n, p in self.web_params(2)]
        out += [("rb." + n, p) for n, p in self.rb_params()]
        return out

    def num_params(self) -> int:
        return sum(int(p.data.size) for _, p in self.params())

    def layer_count(self) -> int:
        """Count of convolutional layers, the architecture audit figure."""
        dcb = 1 + self.dc.layer_count() + 1
        webs = self.fe1.layer_count() + self.fe2.layer_count()
        rb = self.rdb1.layer_count() + self.rdb2.layer_count() + 2
        return dcb + webs + rb


# ---------------------------------------------------------------------------
# analytic parameter / FLOP accounting
# ---------------------------------------------------------------------------

def conv_cost(cin, cout, k, h, w):
    """(params, MACs) of one biased convolution at spatial size h x w."""
    return cout * cin * k * k + cout, cout * cin * k * k * h * w


def dynamic_conv_cost(cin, cout, k, k_kernels, h, w):
    """(params, MACs) of a dynamic convolution: K kernel sets, the
    2-layer generator, per-sample kernel aggregation, one aggregated conv."""
    kp, km = conv_cost(cin, cout, k, h, w)
    g1p, _ = conv_cost(cin, k_kernels, 1, 1, 1)
    g2p, _ = conv_cost(k_kernels, k_kernels, 1, 1, 1)
    params = k_kernels * kp + g1p + g2p
    macs = km                                  # the aggregated convolution
    macs += cin * h * w                        # global average pool
    macs += k_kernels * cin + k_kernels * k_kernels  # generator dense steps
    macs += k_kernels * (cout * cin * k * k + cout)  # kernel/bias aggregation
    return params, macs


def stack_cost(layers, hw):
    """Total (params, flops) of a described layer stack at one input size.

    Each descriptor is ("conv", cin, cout, k) or
    ("dyn_conv", cin, cout, k, K). FLOPs are multiply-accumulates times
    two; activation functions are free.
    """
    h, w = hw
    params = 0
    macs = 0
    for desc in layers:
        kind = desc[0]
        if kind == "conv":
            _, cin, cout, k = desc
            p, m = conv_cost(cin, cout, k, h, w)
        elif kind == "dyn_conv":
            _, cin, cout, k, kk = desc
            p, m = dynamic_conv_cost(cin, cout, k, kk, h, w)
        else:
            raise ValueError(f"unknown layer kind: {kind!r}")
        params += p
        macs += m
    return params, 2 * macs


def _rdb_layers(channels, growth, k):
    return [("conv", channels, growth, k),
            ("conv", channels + growth, growth, k),
            ("conv", channels + 2 * growth, growth, k),
            ("conv", channels + 3 * growth, channels, 1)]


def count_params_flops(config: ModelConfig, hw=(48, 48)):
    """Analytic (params, flops) of the full model for an even input size.

    Convolutional work only; the wavelet transforms and elementwise steps
    are a rounding error next to the conv GEMMs.
    """
    cin, c, k = config.in_channels, config.base_channels, config.kernel_size
    g = config.fe_growth
    h, w = hw
    full = (h, w)
    half = (h // 2, w // 2)

    params, flops = stack_cost([("conv", cin, c, k),
                                ("dyn_conv", c, c, k, config.dyn_kernels),
                                ("conv", c, c, k)], full)
    for _ in range(2):
        p, f = stack_cost(_rdb_layers(4 * c, g, k), half)
        params, flops = params + p, flops + f
    p, f = stack_cost(_rdb_layers(c, c, k) + _rdb_layers(c, c, k)
                      + [("conv", c, c, k), ("conv", c, cin, k)], full)
    return params + p, flops + f
