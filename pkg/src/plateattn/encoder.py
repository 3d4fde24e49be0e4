"""Separable-convolution image encoder.

Entry flow: three stages of two separable convs plus a max-pool (2x2, 2x2,
then 2x1), downsampling height x8 and width x4 while ramping channels
3 -> C/8 -> C/4 -> C/2, then a pointwise lift to C. Middle flow: stacked
identity-residual blocks of separable convs at constant width. Exit flow:
one residual block whose output is the attention context map M, then two
more separable convs, masked global average pooling, and an affine+relu
producing the holistic feature vector F.

Variable-width batches are right-padded with zeros; a validity mask is
re-applied after every layer so padded columns stay exactly zero and a
padded image encodes identically to the unpadded one.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from . import autograd as ag
from .autograd import ContractViolation, Tensor
from .optim import ParamStore, fan_in_uniform

ALLOWED_LAYERS = (15, 20, 25, 30, 35, 40)
ALLOWED_CHANNELS = (128, 256, 512, 1024)

HEIGHT_STRIDE = 8
WIDTH_STRIDE = 4


class ConfigurationError(ValueError):
    pass


@dataclass
class EncoderConfig:
    total_layers: int = 30
    channels: int = 512
    input_height: int = 48
    input_width: int = 160
    feature_dim: int = 512  # dimension of the holistic vector F
    allow_custom: bool = False  # lift the ablation-axis restriction (tests)

    def validate(self):
        if not self.allow_custom:
            if self.total_layers not in ALLOWED_LAYERS:
                raise ConfigurationError(
                    f"total_layers must be one of {ALLOWED_LAYERS}, got {self.total_layers}"
                )
            if self.channels not in ALLOWED_CHANNELS:
                raise ConfigurationError(
                    f"channels must be one of {ALLOWED_CHANNELS}, got {self.channels}"
                )
        if self.input_height % HEIGHT_STRIDE != 0 or self.input_height < HEIGHT_STRIDE:
            raise ConfigurationError(
                f"input_height must be a positive multiple of {HEIGHT_STRIDE}"
            )
        if self.total_layers < 13:
            raise ConfigurationError("need at least 13 layers (entry + exit + one block)")

    def to_json(self) -> dict:
        return {
            "total_layers": self.total_layers,
            "channels": self.channels,
            "input_height": self.input_height,
            "input_width": self.input_width,
            "feature_dim": self.feature_dim,
            "channel_ramp": list(self.entry_ramp()),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "EncoderConfig":
        return cls(
            total_layers=obj["total_layers"],
            channels=obj["channels"],
            input_height=obj["input_height"],
            input_width=obj.get("input_width", 160),
            feature_dim=obj.get("feature_dim", 512),
            allow_custom=True,
        )

    def entry_ramp(self):
        c = self.channels
        return max(c // 8, 2), max(c // 4, 2), max(c // 2, 2)

    def middle_block_sizes(self) -> List[int]:
        # entry = 7 conv layers (6 separable + pointwise lift);
        # exit = 3 (residual M block) + 2 = 5. Remainder goes to middle blocks
        # of up to 3 layers each.
        m = self.total_layers - 12
        sizes = [3] * (m // 3)
        if m % 3:
            sizes.append(m % 3)
        return sizes


@dataclass
class EncoderOutput:
    M: Tensor  # (N, C, H', W') attention context map
    F: Tensor  # (N, feature_dim) holistic vector
    valid_width: np.ndarray  # (N,) non-padding columns of M
    position_mask: np.ndarray  # (N, H', W') boolean validity


class SeparableConv:
    """Depthwise + pointwise conv with bias, 'same' padding at stride 1."""

    def __init__(self, store: ParamStore, name: str, c_in: int, c_out: int,
                 k: int = 3, rng: Optional[np.random.Generator] = None):
        self.k = k
        self.dw = store.add(f"{name}.dw", fan_in_uniform(rng, (c_in, k, k), k * k))
        self.pw = store.add(f"{name}.pw", fan_in_uniform(rng, (c_out, c_in), c_in))
        self.bias = store.add(f"{name}.bias", np.zeros(c_out))

    def __call__(self, x: Tensor, stride: int = 1) -> Tensor:
        pad = (self.k - 1) // 2
        y = ag.separable_conv2d(x, self.dw, self.pw, stride=stride, padding=pad)
        return ag.add(y, _bias4(self.bias))


def _bias4(b: Tensor) -> Tensor:
    return ag.reshape(b, (1, b.shape[0], 1, 1))


class PointwiseConv:
    def __init__(self, store: ParamStore, name: str, c_in: int, c_out: int,
                 rng: np.random.Generator):
        self.pw = store.add(f"{name}.pw", fan_in_uniform(rng, (c_out, c_in), c_in))
        self.bias = store.add(f"{name}.bias", np.zeros(c_out))

    def __call__(self, x: Tensor) -> Tensor:
        return ag.add(ag.pointwise_conv2d(x, self.pw), _bias4(self.bias))


class ResSeparableBlock:
    """n separable convs with an identity shortcut; zero weights -> identity."""

    def __init__(self, store: ParamStore, name: str, channels: int, n_layers: int,
                 rng: np.random.Generator):
        self.convs = [
            SeparableConv(store, f"{name}.conv{i}", channels, channels, rng=rng)
            for i in range(n_layers)
        ]

    def __call__(self, x: Tensor, mask: Optional[np.ndarray]) -> Tensor:
        y = x
        for i, conv in enumerate(self.convs):
            if i > 0:
                y = ag.relu(y)
            y = conv(y)
            y = _apply_mask(y, mask)
        return ag.add(x, y)


def _apply_mask(x: Tensor, mask: Optional[np.ndarray]) -> Tensor:
    """Zero padded columns; mask is (N, 1, 1, W) float or None."""
    if mask is None:
        return x
    return ag.mul(x, mask)


class Encoder:
    def __init__(self, config: EncoderConfig, rng: np.random.Generator):
        config.validate()
        self.config = config
        self.store = ParamStore("encoder")
        c = config.channels
        r1, r2, r3 = config.entry_ramp()
        s = self.store
        self.entry = [
            SeparableConv(s, "entry1a", 3, r1, rng=rng),
            SeparableConv(s, "entry1b", r1, r1, rng=rng),
            SeparableConv(s, "entry2a", r1, r2, rng=rng),
            SeparableConv(s, "entry2b", r2, r2, rng=rng),
            SeparableConv(s, "entry3a", r2, r3, rng=rng),
            SeparableConv(s, "entry3b", r3, r3, rng=rng),
        ]
        self.lift = PointwiseConv(s, "lift", r3, c, rng)
        self.middle = [
            ResSeparableBlock(s, f"middle{i}", c, n, rng)
            for i, n in enumerate(config.middle_block_sizes())
        ]
        self.exit_block = ResSeparableBlock(s, "exit0", c, 3, rng)
        self.exit_convs = [
            SeparableConv(s, "exit1", c, c, rng=rng),
            SeparableConv(s, "exit2", c, c, rng=rng),
        ]
        self.f_proj_w = s.add(
            "f_proj.weight", fan_in_uniform(rng, (config.feature_dim, c), c)
        )
        self.f_proj_b = s.add("f_proj.bias", np.zeros(config.feature_dim))

    def parameter_count(self) -> int:
        return self.store.count()

    @property
    def out_channels(self) -> int:
        return self.config.channels

    def encode(self, image: Tensor, valid_widths: Optional[Sequence[int]] = None) -> EncoderOutput:
        x = image
        if x.data.ndim == 3:
            x = ag.reshape(x, (1,) + x.shape)
        if x.data.ndim != 4 or x.shape[1] != 3:
            raise ContractViolation(f"expected (N, 3, H, W) image, got {x.shape}")
        N, _, H, W = x.shape
        if H != self.config.input_height:
            raise ContractViolation(
                f"image height {H} != configured input height {self.config.input_height}"
            )
        if W < WIDTH_STRIDE:
            raise ContractViolation(f"image width {W} below minimum {WIDTH_STRIDE}")
        if valid_widths is None:
            vw = np.full(N, W, dtype=np.int64)
        else:
            vw = np.asarray(valid_widths, dtype=np.int64)
            if vw.shape != (N,) or (vw < WIDTH_STRIDE).any() or (vw > W).any():
                raise ContractViolation("valid_widths must be in [4, W] per batch item")

        def make_mask(width, valid):
            if (valid == width).all():
                return None
            m = (np.arange(width)[None, :] < valid[:, None]).astype(x.data.dtype)
            return m[:, None, None, :]

        mask = make_mask(W, vw)

        def conv_pair(x, a, b, mask):
            x = _apply_mask(ag.relu(a(x)), mask)
            x = _apply_mask(ag.relu(b(x)), mask)
            return x

        # entry flow
        x = conv_pair(x, self.entry[0], self.entry[1], mask)
        x = ag.max_pool2d(x, 2, 2)
        vw = vw // 2
        mask = make_mask(x.shape[3], vw)
        x = _apply_mask(x, mask)
        x = conv_pair(x, self.entry[2], self.entry[3], mask)
        x = ag.max_pool2d(x, 2, 2)
        vw = vw // 2
        mask = make_mask(x.shape[3], vw)
        x = _apply_mask(x, mask)
        x = conv_pair(x, self.entry[4], self.entry[5], mask)
        x = ag.max_pool2d(x, (2, 1), (2, 1))
        x = _apply_mask(x, mask)
        x = _apply_mask(ag.relu(self.lift(x)), mask)

        # middle flow
        for block in self.middle:
            x = block(x, mask)

        # exit flow: M tap after the first exit block
        M = self.exit_block(x, mask)
        y = M
        for conv in self.exit_convs:
            y = _apply_mask(ag.relu(conv(y)), mask)

        # masked global average, then affine + relu to the holistic vector
        Hp, Wp = y.shape[2], y.shape[3]
        pooled = ag.tsum(y, axis=3)  # (N, C, H')
        pooled = ag.tsum(pooled, axis=2)  # (N, C)
        counts = (Hp * vw).astype(y.data.dtype)
        pooled = ag.mul(pooled, (1.0 / counts)[:, None])
        F = ag.relu(ag.affine(pooled, self.f_proj_w, self.f_proj_b))

        pos_mask = np.broadcast_to(
            (np.arange(Wp)[None, :] < vw[:, None])[:, None, :], (N, Hp, Wp)
        ).copy()
        return EncoderOutput(M=M, F=F, valid_width=vw.copy(), position_mask=pos_mask)


def build_encoder(config: EncoderConfig, rng: np.random.Generator) -> Encoder:
    return Encoder(config, rng)


def output_widths(input_width: int) -> int:
    """Width of M for a given valid input width (per-layer floor arithmetic)."""
    return (input_width // 2) // 2
