"""Noisy channel models, power normalization and layer bookkeeping.

Channel symbols are complex torch tensors of shape ``[batch, k_i]``, one per
layer. The networks themselves stay real-valued; ``real_to_complex`` pairs
consecutive feature maps into the real and imaginary parts of one complex map.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from fractions import Fraction
from typing import Sequence

import numpy as np
import torch

CHANNEL_KINDS = ("awgn", "rayleigh_slow")


class PlanError(ValueError):
    """A layer plan is inconsistent with the tensors it is applied to."""


class DegenerateInputError(ValueError):
    """Power normalization of an all-zero vector."""


def snr_to_noise_power(snr_db: float, power: float = 1.0) -> float:
    """Noise power σ² with ``10 log10(P / σ²) = snr_db``; +inf dB gives 0."""
    if power <= 0:
        raise ValueError(f"signal power must be positive, got {power}")
    if math.isinf(snr_db) and snr_db > 0:
        return 0.0
    return power * 10.0 ** (-snr_db / 10.0)


@dataclass(frozen=True)
class ChannelConfig:
    kind: str = "awgn"
    snr_db: float = 10.0
    fading_variance: float = 1.0
    power: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in CHANNEL_KINDS:
            raise ValueError(f"unknown channel kind {self.kind!r}; expected one of {CHANNEL_KINDS}")
        if self.fading_variance <= 0:
            raise ValueError("fading_variance must be positive")

    @property
    def noise_power(self) -> float:
        return snr_to_noise_power(self.snr_db, self.power)

    def with_snr(self, snr_db: float) -> "ChannelConfig":
        return ChannelConfig(self.kind, float(snr_db), self.fading_variance, self.power, self.seed)

    def to_dict(self) -> dict:
        d = asdict(self)
        if math.isinf(self.snr_db):
            d["snr_db"] = "inf"
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ChannelConfig":
        d = dict(d)
        if "snr_db" in d:
            d["snr_db"] = float(d["snr_db"])
        return cls(**d)


@dataclass(frozen=True)
class LayerPlan:
    """Per-layer encoder depths for a ``H/4 x W/4`` latent.

    Layer ``i`` owns ``depths[i]`` real feature maps, i.e. ``depths[i] / 2``
    complex maps, so it carries ``depths[i] / 2 * H/4 * W/4`` complex symbols.
    Bandwidth ratios are reported as ``depth / 48`` (real latent values over
    real pixel values), which is the convention behind the quoted 1/12 and 1/3
    ratios.
    """

    depths: tuple[int, ...]
    height: int = 32
    width: int = 32

    def __post_init__(self):
        object.__setattr__(self, "depths", tuple(int(d) for d in self.depths))
        if not self.depths:
            raise PlanError("a plan needs at least one layer")
        for d in self.depths:
            if d < 2 or d % 2:
                raise PlanError(f"layer depths must be even and >= 2, got {self.depths}")
        if self.height % 4 or self.width % 4:
            raise PlanError(f"image size {self.height}x{self.width} is not a multiple of 4")

    @classmethod
    def uniform(cls, total_depth: int, num_layers: int, height: int = 32,
                width: int = 32) -> "LayerPlan":
        if num_layers < 1 or total_depth % num_layers:
            raise PlanError(f"depth {total_depth} does not split into {num_layers} equal layers")
        return cls((total_depth // num_layers,) * num_layers, height, width)

    @property
    def num_layers(self) -> int:
        return len(self.depths)

    @property
    def c(self) -> int:
        return sum(self.depths)

    @property
    def n(self) -> int:
        return self.height * self.width * 3

    @property
    def latent_hw(self) -> tuple[int, int]:
        return self.height // 4, self.width // 4

    @property
    def symbols(self) -> tuple[int, ...]:
        h, w = self.latent_hw
        return tuple(d // 2 * h * w for d in self.depths)

    @property
    def k(self) -> int:
        return sum(self.symbols)

    @property
    def bandwidth_ratios(self) -> tuple[Fraction, ...]:
        return tuple(Fraction(d, 48) for d in self.depths)

    @property
    def bandwidth_ratio(self) -> Fraction:
        return Fraction(self.c, 48)

    @property
    def channel_uses(self) -> tuple[int, ...]:
        """Reported channel uses per layer, ``n * k_i/n``."""
        return tuple(int(r * self.n) for r in self.bandwidth_ratios)

    def depth_offsets(self) -> tuple[int, ...]:
        return tuple(int(v) for v in np.cumsum((0,) + self.depths))

    def resized(self, height: int, width: int) -> "LayerPlan":
        return LayerPlan(self.depths, height, width)

    def to_dict(self) -> dict:
        return {"depths": list(self.depths), "height": self.height, "width": self.width}

    @classmethod
    def from_dict(cls, d: dict) -> "LayerPlan":
        return cls(tuple(d["depths"]), d.get("height", 32), d.get("width", 32))


def make_generator(*keys: int) -> torch.Generator:
    """Independent torch generator derived from integer keys."""
    state = np.random.SeedSequence([int(k) & 0xFFFFFFFF for k in keys]).generate_state(2, np.uint32)
    g = torch.Generator()
    g.manual_seed(int(state[0]) << 32 | int(state[1]))
    return g


def real_to_complex(features: torch.Tensor) -> torch.Tensor:
    """``[B, c, h, w]`` real -> ``[B, c/2, h, w]`` complex (channel 2m real, 2m+1 imag)."""
    b, c, h, w = features.shape
    if c % 2:
        raise PlanError(f"feature depth {c} is odd; cannot pair into complex maps")
    pairs = features.reshape(b, c // 2, 2, h, w)
    return torch.complex(pairs[:, :, 0], pairs[:, :, 1])


def complex_to_real(z: torch.Tensor) -> torch.Tensor:
    """Inverse of :func:`real_to_complex`."""
    b, m, h, w = z.shape
    return torch.stack((z.real, z.imag), dim=2).reshape(b, 2 * m, h, w)


def power_normalize(raw, power: float = 1.0) -> torch.Tensor:
    """Scale each row to average symbol power ``power``.

    ``raw`` is either a complex ``[..., k]`` tensor or a real ``[..., 2k]``
    tensor holding interleaved real/imaginary parts. Returns complex symbols
    ``z = sqrt(k P) z~ / ||z~||``.
    """
    raw = torch.as_tensor(raw)
    if not raw.is_complex():
        if raw.shape[-1] % 2:
            raise PlanError(f"real input length {raw.shape[-1]} is odd")
        pairs = (raw if raw.is_floating_point() else raw.to(torch.float32)).reshape(*raw.shape[:-1], -1, 2)
        raw = torch.complex(pairs[..., 0], pairs[..., 1])
    k = raw.shape[-1]
    norm = torch.linalg.vector_norm(raw, dim=-1, keepdim=True)
    if bool((norm == 0).any()):
        raise DegenerateInputError("cannot power-normalize an all-zero symbol vector")
    return raw * (math.sqrt(k * power) / norm)


def average_power(z: torch.Tensor) -> torch.Tensor:
    return (z.real ** 2 + z.imag ** 2).mean(dim=-1)


def complex_gaussian(shape, variance: float, generator: torch.Generator | None) -> torch.Tensor:
    """Circularly symmetric CN(0, variance) samples; variance/2 per real part."""
    std = math.sqrt(variance / 2.0)
    parts = torch.randn(*shape, 2, generator=generator) * std
    return torch.complex(parts[..., 0], parts[..., 1])


def awgn(z: torch.Tensor, cfg: ChannelConfig | float, generator: torch.Generator | None = None) -> torch.Tensor:
    """``z + n`` with ``n ~ CN(0, σ² I)``; ``cfg`` may be a config or σ² directly."""
    sigma2 = cfg.noise_power if isinstance(cfg, ChannelConfig) else float(cfg)
    if sigma2 == 0:
        return z
    return z + complex_gaussian(z.shape, sigma2, generator)


def rayleigh_slow(z: torch.Tensor, cfg: ChannelConfig, generator: torch.Generator | None = None) -> torch.Tensor:
    """``h z + n``: one ``h ~ CN(0, H_c)`` per row, held for the whole layer."""
    h = complex_gaussian((*z.shape[:-1], 1), cfg.fading_variance, generator)
    return awgn(h * z, cfg, generator)


def apply_channel(layers: Sequence[torch.Tensor], cfg: ChannelConfig,
                  generator: torch.Generator | None = None) -> list[torch.Tensor]:
    """Pass every layer through its own independent channel realization."""
    transfer = awgn if cfg.kind == "awgn" else rayleigh_slow
    return [transfer(z, cfg, generator) for z in layers]


def split_layers(z: torch.Tensor, sizes: Sequence[int] | LayerPlan) -> list[torch.Tensor]:
    """Contiguous partition of ``[B, k]`` symbols into per-layer blocks."""
    if isinstance(sizes, LayerPlan):
        sizes = sizes.symbols
    sizes = [int(s) for s in sizes]
    if sum(sizes) != z.shape[-1]:
        raise PlanError(f"plan sizes {sizes} sum to {sum(sizes)}, symbols have length {z.shape[-1]}")
    if any(s <= 0 for s in sizes):
        raise PlanError(f"layer sizes must be positive, got {sizes}")
    return list(torch.split(z, sizes, dim=-1))


def concat_layers(parts: Sequence[torch.Tensor]) -> torch.Tensor:
    return torch.cat(list(parts), dim=-1)
