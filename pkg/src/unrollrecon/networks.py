"""Encoder-decoder networks on 2-channel (real, imaginary) images.

Three kinds share one two-level U-shaped layout (two stride-2 stages,
transposed-conv upsamplers, skips at full and half resolution):

``edsr-prox``
    residual blocks without normalization at every stage plus a global
    input-to-output skip; the output conv starts at zero so the network is
    the identity at initialization.
``unet-denoiser``
    plain conv-ReLU-conv-ReLU stages, no global skip.
``resunet-dip``
    residual-block stages, no global skip.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .tensor import ParamStore, ShapeError, Tensor, add, concat, conv2d, conv_transpose2d, relu, scale

KINDS = ("edsr-prox", "unet-denoiser", "resunet-dip")


@dataclass
class NetConfig:
    base_channels: int = 32
    residual_blocks_per_stage: int = 2
    downsampling_stages: int = 2
    in_channels: int = 2
    out_channels: int = 2
    weight_init_seed: int = 0
    res_scale: float = 0.1

    def __post_init__(self):
        if self.in_channels != 2 or self.out_channels != 2:
            raise ValueError("networks map 2 channels (real, imag) to 2 channels")
        if self.downsampling_stages != 2:
            raise ValueError("the layout has exactly two downsampling stages")


class Network:
    """Parameters plus the forward recipe for one of :data:`KINDS`."""

    def __init__(self, kind, config=None, dtype=np.float32):
        if kind not in KINDS:
            raise ValueError(f"unknown network kind {kind!r}; choose from {KINDS}")
        self.kind = kind
        self.config = config or NetConfig()
        self.params = ParamStore()
        self._rng = np.random.default_rng(self.config.weight_init_seed)
        self._dtype = dtype
        self._build()
        del self._rng

    # -- construction -------------------------------------------------------

    def _conv(self, name, cin, cout, k=3, zero=False):
        std = 0.0 if zero else math.sqrt(2.0 / (cin * k * k))
        self.params.add(f"{name}.w", self._rng.standard_normal((cout, cin, k, k)) * std, self._dtype)
        self.params.add(f"{name}.b", np.zeros(cout), self._dtype)

    def _convT(self, name, cin, cout):
        std = math.sqrt(2.0 / cin)
        self.params.add(f"{name}.w", self._rng.standard_normal((cin, cout, 2, 2)) * std, self._dtype)
        self.params.add(f"{name}.b", np.zeros(cout), self._dtype)

    def _stage(self, name, cin, cout):
        """Feature stage; residual kinds need ``cin == cout``."""
        nb = self.config.residual_blocks_per_stage
        if self.kind == "unet-denoiser":
            self._conv(f"{name}.c1", cin, cout)
            self._conv(f"{name}.c2", cout, cout)
        else:
            for j in range(nb):
                self._conv(f"{name}.r{j}.c1", cout, cout)
                self._conv(f"{name}.r{j}.c2", cout, cout)

    def _build(self):
        c = self.config.base_channels
        unet = self.kind == "unet-denoiser"
        if not unet:
            self._conv("stem", 2, c)
        self._stage("enc1", 2 if unet else c, c)
        self._conv("down1", c, 2 * c)
        self._stage("enc2", 2 * c, 2 * c)
        self._conv("down2", 2 * c, 4 * c)
        self._stage("mid", 4 * c, 4 * c)
        self._convT("up2", 4 * c, 2 * c)
        if unet:
            self._stage("dec2", 4 * c, 2 * c)
        else:
            self._conv("fuse2", 4 * c, 2 * c)
            self._stage("dec2", 2 * c, 2 * c)
        self._convT("up1", 2 * c, c)
        if unet:
            self._stage("dec1", 2 * c, c)
        else:
            self._conv("fuse1", 2 * c, c)
            self._stage("dec1", c, c)
        self._conv("out", c, 2, k=1 if unet else 3, zero=self.kind == "edsr-prox")

    # -- forward ------------------------------------------------------------

    def _apply_conv(self, name, x, stride=1):
        w = self.params[f"{name}.w"]
        k = w.shape[-1]
        return conv2d(x, w, self.params[f"{name}.b"], stride=stride, pad=k // 2)

    def _apply_convT(self, name, x):
        return conv_transpose2d(x, self.params[f"{name}.w"], stride=2, bias=self.params[f"{name}.b"])

    def _apply_stage(self, name, x):
        if self.kind == "unet-denoiser":
            x = relu(self._apply_conv(f"{name}.c1", x))
            return relu(self._apply_conv(f"{name}.c2", x))
        for j in range(self.config.residual_blocks_per_stage):
            h = relu(self._apply_conv(f"{name}.r{j}.c1", x))
            h = self._apply_conv(f"{name}.r{j}.c2", h)
            x = add(x, scale(h, self.config.res_scale))
        return x

    def forward(self, x):
        """Map a ``[B, 2, H, W]`` tensor to a tensor of the same shape."""
        if x.ndim != 4 or x.shape[1] != 2:
            raise ShapeError(f"expected [B, 2, H, W], got {x.shape}")
        if x.shape[2] % 4 or x.shape[3] % 4:
            raise ShapeError(f"height/width {x.shape[2:]} must be divisible by 4")
        unet = self.kind == "unet-denoiser"
        h = x if unet else self._apply_conv("stem", x)
        s1 = self._apply_stage("enc1", h)
        h = relu(self._apply_conv("down1", s1, stride=2))
        s2 = self._apply_stage("enc2", h)
        h = relu(self._apply_conv("down2", s2, stride=2))
        h = self._apply_stage("mid", h)
        h = relu(self._apply_convT("up2", h))
        h = concat([h, s2])
        if not unet:
            h = self._apply_conv("fuse2", h)
        h = self._apply_stage("dec2", h)
        h = relu(self._apply_convT("up1", h))
        h = concat([h, s1])
        if not unet:
            h = self._apply_conv("fuse1", h)
        h = self._apply_stage("dec1", h)
        out = self._apply_conv("out", h)
        if self.kind == "edsr-prox":
            out = add(out, x)
        return out

    __call__ = forward

    def num_params(self):
        return self.params.num_values()

    def meta(self):
        return {"kind": self.kind, "config": asdict(self.config)}


def build_network(kind, config=None, dtype=np.float32):
    return Network(kind, config, dtype)


def expected_param_count(kind, base_channels, blocks):
    """Layer-by-layer parameter arithmetic, independent of the builder."""

    def conv(cin, cout, k=3):
        return cout * cin * k * k + cout

    def convT(cin, cout):
        return cin * cout * 4 + cout

    c = base_channels
    if kind == "unet-denoiser":
        return (
            conv(2, c) + conv(c, c)
            + conv(c, 2 * c)
            + conv(2 * c, 2 * c) * 2
            + conv(2 * c, 4 * c)
            + conv(4 * c, 4 * c) * 2
            + convT(4 * c, 2 * c) + conv(4 * c, 2 * c) + conv(2 * c, 2 * c)
            + convT(2 * c, c) + conv(2 * c, c) + conv(c, c)
            + conv(c, 2, k=1)
        )
    res = lambda ch: 2 * blocks * conv(ch, ch)  # noqa: E731
    return (
        conv(2, c) + res(c)
        + conv(c, 2 * c) + res(2 * c)
        + conv(2 * c, 4 * c) + res(4 * c)
        + convT(4 * c, 2 * c) + conv(4 * c, 2 * c) + res(2 * c)
        + convT(2 * c, c) + conv(2 * c, c) + res(c)
        + conv(c, 2)
    )


def to_tensor(z, dtype=np.float32, requires_grad=False):
    """Complex ``[B, H, W]`` (or ``[H, W]``) to a ``[B, 2, H, W]`` tensor."""
    z = np.asarray(z)
    if z.ndim == 2:
        z = z[None]
    return Tensor(np.stack([z.real, z.imag], axis=1).astype(dtype), requires_grad=requires_grad)


def to_complex(t):
    a = t.data if isinstance(t, Tensor) else np.asarray(t)
    return a[:, 0] + 1j * a[:, 1]
