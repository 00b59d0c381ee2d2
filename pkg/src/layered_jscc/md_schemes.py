"""Multiple descriptions: one decoder per received subset, or one masked decoder."""

from __future__ import annotations

from typing import Sequence

import torch
from torch import nn

from .base import SchemeModel, mse_loss, weighted_loss
from .channel import ChannelConfig, LayerPlan, PlanError, apply_channel, concat_layers, split_layers
from .codec import Decoder, Encoder, encode, plan_for, seeded, symbols_to_features
from .subsets import SubsetId, all_subsets, parse_subset, subset_index

MAX_MD_LAYERS = 4
MD_MODES = ("uniform", "alpha1", "alpha2")


def md_weights(num_layers: int, mode: str = "uniform", alpha: float | None = None) -> dict[int, float]:
    """Per-subset loss weights keyed by bitmask; zero-weight subsets are included."""
    if mode not in MD_MODES:
        raise ValueError(f"unknown MD loss mode {mode!r}; expected one of {MD_MODES}")
    full = 2 ** num_layers - 1
    masks = range(1, full + 1)
    if mode == "uniform":
        return {b: 1.0 / full for b in masks}
    if alpha is None or not 0.0 <= alpha <= 1.0:
        raise ValueError(f"{mode} needs a weight in [0, 1], got {alpha}")
    if mode == "alpha1":
        singles = {1 << i for i in range(num_layers)}
        w = {b: 0.0 for b in masks}
        for b in singles:
            w[b] = (1.0 - alpha) / num_layers
        # with L=1 the full set is the singleton
        w[full] = alpha if num_layers > 1 else 1.0
        return w
    if num_layers != 2:
        raise ValueError(f"alpha2 weighting is defined for two layers only, got L={num_layers}")
    return {0b11: 1.0 - alpha, 0b01: 1.0 - alpha, 0b10: alpha}


def md_loss(x: torch.Tensor, reconstructions: dict[int, torch.Tensor], num_layers: int,
            mode: str = "uniform", alpha: float | None = None) -> torch.Tensor:
    """Weighted subset MSE. ``reconstructions`` must cover every weighted subset."""
    weights = md_weights(num_layers, mode, alpha)
    missing = [b for b, w in weights.items() if w and b not in reconstructions]
    if missing:
        raise ValueError(f"no reconstruction for weighted subsets {missing}")
    keys = [b for b in sorted(weights) if weights[b]]
    return weighted_loss([mse_loss(x, reconstructions[b]) for b in keys], [weights[b] for b in keys])


def md_positional_mask(z_hat: torch.Tensor, subset: SubsetId, plan: LayerPlan) -> torch.Tensor:
    """Zero the symbols of every layer outside ``subset``; positions stay fixed."""
    if subset.num_layers != plan.num_layers:
        raise ValueError(f"subset for L={subset.num_layers} used with an L={plan.num_layers} plan")
    if z_hat.shape[-1] != plan.k:
        raise PlanError(f"symbol length {z_hat.shape[-1]} does not match plan k={plan.k}")
    keep = torch.cat([torch.full((k,), bool(subset.bitmask >> i & 1))
                      for i, k in enumerate(plan.symbols)])
    return torch.where(keep, z_hat, torch.zeros((), dtype=z_hat.dtype))


def sample_subset(num_layers: int, generator: torch.Generator) -> SubsetId:
    return SubsetId(int(torch.randint(1, 2 ** num_layers, (1,), generator=generator)), num_layers)


def _resolve(subsets, num_layers) -> list[SubsetId]:
    out = []
    for s in subsets:
        s = parse_subset(s, num_layers)
        if s.num_layers != num_layers:
            raise ValueError(f"subset {s} is for L={s.num_layers}, model has L={num_layers}")
        out.append(s)
    return out


class MDMultiDecoder(SchemeModel):
    """One encoder and a decoder for every nonempty subset of layers.

    ``train_subsets="singletons_and_full"`` restricts the uniform objective to
    single layers plus the full set; the remaining decoders are still built.
    """

    scheme = "md_multi"

    def __init__(self, plan: LayerPlan, mode: str = "uniform", alpha: float | None = None,
                 seed: int = 0, train_subsets: str = "all", allow_large: bool = False):
        super().__init__(plan)
        L = plan.num_layers
        if L > MAX_MD_LAYERS and not allow_large:
            raise ValueError(f"{2 ** L - 1} subset decoders requested; pass allow_large=True for L > {MAX_MD_LAYERS}")
        if train_subsets not in ("all", "singletons_and_full"):
            raise ValueError(f"unknown train_subsets {train_subsets!r}")
        self.mode, self.alpha, self.train_subsets = mode, alpha, train_subsets
        self.weights = self._weights()
        with seeded(seed):
            self.encoder = Encoder(plan.c)
            self.decoders = nn.ModuleDict(
                {str(s.bitmask): Decoder(sum(plan.depths[i - 1] for i in s.members))
                 for s in all_subsets(L)})

    def _weights(self) -> dict[int, float]:
        L = self.num_layers
        if self.train_subsets == "all" or L <= 2:
            return md_weights(L, self.mode, self.alpha)
        if self.mode != "uniform":
            return md_weights(L, self.mode, self.alpha)
        chosen = [1 << i for i in range(L)] + [2 ** L - 1]
        return {b: (1.0 / len(chosen) if b in chosen else 0.0) for b in range(1, 2 ** L)}

    def architecture(self) -> dict:
        return {**super().architecture(), "mode": self.mode, "alpha": self.alpha,
                "train_subsets": self.train_subsets}

    def conditions(self) -> list[SubsetId]:
        return all_subsets(self.num_layers)

    def decode(self, z_hat: Sequence[torch.Tensor], subset: SubsetId, plan: LayerPlan) -> torch.Tensor:
        members = sorted(subset.members)
        feats = symbols_to_features([z_hat[i - 1] for i in members],
                                    [plan.depths[i - 1] for i in members], plan.latent_hw)
        return self.decoders[str(subset.bitmask)](feats)

    def reconstruct(self, x, channel: ChannelConfig, generator, subsets=None):
        plan = plan_for(x, self.plan)
        subsets = self.conditions() if subsets is None else _resolve(subsets, self.num_layers)
        z_hat = apply_channel(encode(self.encoder, x, plan, channel.power), channel, generator)
        return {s.bitmask: self.decode(z_hat, s, plan) for s in subsets}

    def forward(self, x, channel, generator=None, subsets=None):
        return self.reconstruct(x, channel, generator, subsets)

    def loss(self, x, channel, generator):
        active = [SubsetId(b, self.num_layers) for b, w in self.weights.items() if w]
        recons = self.reconstruct(x, channel, generator, active)
        keys = sorted(recons)
        return weighted_loss([mse_loss(x, recons[b]) for b in keys], [self.weights[b] for b in keys])


class MDSingleDecoder(SchemeModel):
    """One full-bandwidth decoder; missing layers are zeroed in place."""

    scheme = "md_single"

    def __init__(self, plan: LayerPlan, seed: int = 0):
        super().__init__(plan)
        with seeded(seed):
            self.encoder = Encoder(plan.c)
            self.decoder = Decoder(plan.c)

    def conditions(self) -> list[SubsetId]:
        return all_subsets(self.num_layers)

    def transmit(self, x, channel, generator) -> torch.Tensor:
        plan = plan_for(x, self.plan)
        return concat_layers(apply_channel(encode(self.encoder, x, plan, channel.power), channel, generator))

    def decode(self, z_hat: torch.Tensor, subset: SubsetId, plan: LayerPlan) -> torch.Tensor:
        masked = md_positional_mask(z_hat, subset, plan)
        return self.decoder(symbols_to_features(split_layers(masked, plan), plan.depths, plan.latent_hw))

    def reconstruct(self, x, channel, generator, subsets=None):
        plan = plan_for(x, self.plan)
        subsets = self.conditions() if subsets is None else _resolve(subsets, self.num_layers)
        z_hat = self.transmit(x, channel, generator)
        return {s.bitmask: self.decode(z_hat, s, plan) for s in subsets}

    def forward(self, x, channel, generator=None, subset: SubsetId | None = None):
        subset = subset or SubsetId(2 ** self.num_layers - 1, self.num_layers)
        return self.reconstruct(x, channel, generator, [subset])[subset.bitmask]

    def loss(self, x, channel, generator):
        subset = sample_subset(self.num_layers, generator)
        return mse_loss(x, self(x, channel, generator, subset))


__all__ = [
    "MDMultiDecoder", "MDSingleDecoder", "md_loss", "md_weights", "md_positional_mask",
    "sample_subset", "subset_index", "MAX_MD_LAYERS",
]
