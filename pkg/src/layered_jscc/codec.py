"""Convolutional encoder/decoder builders and latent <-> symbol mapping.

Networks use torch's NCHW layout: the encoder maps ``[B, 3, H, W]`` images in
[0, 1] to ``[B, c, H/4, W/4]`` features, the decoder maps ``[B, d, H/4, W/4]``
back to ``[B, 3, H, W]`` through a sigmoid.
"""

from __future__ import annotations

import hashlib
import json
from contextlib import contextmanager
from dataclasses import asdict, dataclass
from fractions import Fraction
from typing import Sequence

import torch
from torch import nn

from .channel import LayerPlan, PlanError, complex_to_real, power_normalize, real_to_complex

KERNEL = 5
HIDDEN = (16, 32, 32, 32)
STRIDES = (2, 2, 1, 1, 1)


@dataclass(frozen=True)
class ConvBlock:
    kernel: int
    depth: int
    stride: int
    activation: str  # "prelu" | "linear" | "sigmoid"
    transposed: bool = False


@dataclass(frozen=True)
class NetworkSpec:
    in_depth: int
    blocks: tuple[ConvBlock, ...]

    @property
    def out_depth(self) -> int:
        return self.blocks[-1].depth

    @property
    def scale(self) -> int:
        s = 1
        for b in self.blocks:
            s *= b.stride
        return s

    def to_dict(self) -> dict:
        return {"in_depth": self.in_depth, "blocks": [asdict(b) for b in self.blocks]}

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


def encoder_spec(c: int, in_depth: int = 3) -> NetworkSpec:
    if c < 2 or c % 2:
        raise ValueError(f"encoder depth c must be an even integer >= 2, got {c}")
    depths = HIDDEN + (c,)
    acts = ("prelu",) * 4 + ("linear",)
    return NetworkSpec(in_depth, tuple(ConvBlock(KERNEL, d, s, a)
                                       for d, s, a in zip(depths, STRIDES, acts)))


def decoder_spec(in_depth: int, out_depth: int = 3) -> NetworkSpec:
    if in_depth < 2:
        raise ValueError(f"decoder input depth must be >= 2, got {in_depth}")
    depths = tuple(reversed(HIDDEN)) + (out_depth,)
    acts = ("prelu",) * 4 + ("sigmoid",)
    return NetworkSpec(in_depth, tuple(ConvBlock(KERNEL, d, s, a, transposed=True)
                                       for d, s, a in zip(depths, reversed(STRIDES), acts)))


def _build(spec: NetworkSpec) -> nn.Sequential:
    layers: list[nn.Module] = []
    depth = spec.in_depth
    for b in spec.blocks:
        pad = b.kernel // 2
        if b.transposed:
            layers.append(nn.ConvTranspose2d(depth, b.depth, b.kernel, b.stride, pad,
                                             output_padding=b.stride - 1))
        else:
            layers.append(nn.Conv2d(depth, b.depth, b.kernel, b.stride, pad))
        if b.activation == "prelu":
            layers.append(nn.PReLU(b.depth))
        elif b.activation == "sigmoid":
            layers.append(nn.Sigmoid())
        depth = b.depth
    return nn.Sequential(*layers)


class Encoder(nn.Module):
    def __init__(self, c: int, in_depth: int = 3):
        super().__init__()
        self.spec = encoder_spec(c, in_depth)
        self.net = _build(self.spec)

    @property
    def c(self) -> int:
        return self.spec.out_depth

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.shape[-1] % 4 or x.shape[-2] % 4:
            raise PlanError(f"input size {tuple(x.shape[-2:])} is not a multiple of 4")
        return self.net(x)


class Decoder(nn.Module):
    def __init__(self, in_depth: int, out_depth: int = 3):
        super().__init__()
        self.spec = decoder_spec(in_depth, out_depth)
        self.net = _build(self.spec)

    @property
    def in_depth(self) -> int:
        return self.spec.in_depth

    def forward(self, y: torch.Tensor) -> torch.Tensor:
        if y.shape[1] != self.in_depth:
            raise PlanError(f"decoder expects depth {self.in_depth}, got {y.shape[1]}")
        return self.net(y)


def build_encoder(c: int, in_depth: int = 3) -> Encoder:
    return Encoder(c, in_depth)


def build_decoder(in_depth: int, out_depth: int = 3) -> Decoder:
    return Decoder(in_depth, out_depth)


@contextmanager
def seeded(seed: int):
    """Deterministic parameter initialization without touching the global RNG."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        yield


def num_params(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def bandwidth_ratio(c: int) -> Fraction:
    """Total bandwidth ratio ``k/n = (H/4 * W/4 * c) / (H * W * 3) = c/48``."""
    if c <= 0:
        raise ValueError(f"c must be positive, got {c}")
    return Fraction(c, 48)


def plan_for(x: torch.Tensor, plan: LayerPlan) -> LayerPlan:
    h, w = x.shape[-2:]
    return plan if (plan.height, plan.width) == (h, w) else plan.resized(h, w)


def encode(encoder: Encoder, x: torch.Tensor, plan: LayerPlan, power: float = 1.0) -> list[torch.Tensor]:
    """Encode a normalized batch into per-layer power-normalized complex symbols."""
    if encoder.c != plan.c:
        raise PlanError(f"plan depth {plan.c} does not match encoder depth {encoder.c}")
    return features_to_symbols(encoder(x), plan.depths, power)


def features_to_symbols(features: torch.Tensor, depths: Sequence[int],
                        power: float = 1.0) -> list[torch.Tensor]:
    if sum(depths) != features.shape[1]:
        raise PlanError(f"layer depths {tuple(depths)} do not sum to feature depth {features.shape[1]}")
    out = []
    for block in torch.split(features, list(depths), dim=1):
        z = real_to_complex(block).flatten(1)
        out.append(power_normalize(z, power))
    return out


def symbols_to_features(layers: Sequence[torch.Tensor], depths: Sequence[int],
                        hw: tuple[int, int]) -> torch.Tensor:
    """Rebuild the decoder input map from (possibly noisy) per-layer symbols."""
    h, w = hw
    maps = []
    for z, d in zip(layers, depths):
        if z.shape[-1] != d // 2 * h * w:
            raise PlanError(f"layer of {z.shape[-1]} symbols does not match depth {d} at {h}x{w}")
        maps.append(complex_to_real(z.reshape(z.shape[0], d // 2, h, w)))
    return torch.cat(maps, dim=1)
