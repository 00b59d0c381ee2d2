"""Successive refinement: multi-decoder, single masked decoder, residual stack."""

from __future__ import annotations

from typing import Sequence

import torch
from torch import nn

from .base import SchemeModel, mse_loss, weighted_loss
from .channel import ChannelConfig, LayerPlan, PlanError, apply_channel, concat_layers, split_layers
from .codec import Decoder, Encoder, encode, plan_for, seeded, symbols_to_features
from .subsets import SubsetId, prefix


def check_weights(weights: Sequence[float], num_layers: int, tol: float = 1e-9) -> tuple[float, ...]:
    weights = tuple(float(w) for w in weights)
    if len(weights) != num_layers:
        raise ValueError(f"expected {num_layers} layer weights, got {len(weights)}")
    if any(w < 0 for w in weights):
        raise ValueError(f"layer weights must be non-negative, got {weights}")
    if abs(sum(weights) - 1.0) > tol:
        raise ValueError(f"layer weights must sum to 1, got {sum(weights)}")
    return weights


def sr_loss(x: torch.Tensor, reconstructions: Sequence[torch.Tensor],
            weights: Sequence[float] | None = None) -> torch.Tensor:
    """``sum_j λ_j MSE_j``; uniform weights give the plain average over layers."""
    n = len(reconstructions)
    weights = check_weights(weights, n) if weights is not None else (1.0 / n,) * n
    return weighted_loss([mse_loss(x, r) for r in reconstructions], weights)


def mask_trailing(z_hat: torch.Tensor, keep_layers: int, plan: LayerPlan) -> torch.Tensor:
    """Zero every symbol after the first ``keep_layers`` layers of ``[B, k]``."""
    if not 1 <= keep_layers <= plan.num_layers:
        raise ValueError(f"keep_layers must be in [1, {plan.num_layers}], got {keep_layers}")
    keep = sum(plan.symbols[:keep_layers])
    if z_hat.shape[-1] != plan.k:
        raise PlanError(f"symbol length {z_hat.shape[-1]} does not match plan k={plan.k}")
    mask = torch.zeros(z_hat.shape[-1], dtype=torch.bool)
    mask[:keep] = True
    return torch.where(mask, z_hat, torch.zeros((), dtype=z_hat.dtype))


def sample_keep_layers(num_layers: int, generator: torch.Generator) -> int:
    return int(torch.randint(1, num_layers + 1, (1,), generator=generator))


class SRMultiDecoder(SchemeModel):
    """One encoder, decoder ``i`` reading the noisy outputs of layers ``1..i``."""

    scheme = "sr_multi"

    def __init__(self, plan: LayerPlan, weights: Sequence[float] | None = None, seed: int = 0):
        super().__init__(plan)
        L = plan.num_layers
        self.weights = check_weights(weights, L) if weights is not None else (1.0 / L,) * L
        offsets = plan.depth_offsets()
        with seeded(seed):
            self.encoder = Encoder(plan.c)
            self.decoders = nn.ModuleList(Decoder(offsets[i + 1]) for i in range(L))

    def conditions(self) -> list[SubsetId]:
        return [prefix(i, self.num_layers) for i in range(1, self.num_layers + 1)]

    def forward(self, x, channel: ChannelConfig, generator=None) -> list[torch.Tensor]:
        plan = plan_for(x, self.plan)
        z_hat = apply_channel(encode(self.encoder, x, plan, channel.power), channel, generator)
        feats = symbols_to_features(z_hat, plan.depths, plan.latent_hw)
        offsets = plan.depth_offsets()
        return [dec(feats[:, :offsets[i + 1]]) for i, dec in enumerate(self.decoders)]

    def reconstruct(self, x, channel, generator, subsets=None):
        recons = self(x, channel, generator)
        out = {prefix(i + 1, self.num_layers).bitmask: r for i, r in enumerate(recons)}
        if subsets is not None:
            out = {s.bitmask: out[s.bitmask] for s in subsets}
        return out

    def loss(self, x, channel, generator):
        return sr_loss(x, self(x, channel, generator), self.weights)

    def architecture(self) -> dict:
        return {**super().architecture(), "weights": list(self.weights)}


class SRSingleDecoder(SchemeModel):
    """One full-bandwidth decoder; missing trailing layers arrive as zeros."""

    scheme = "sr_single"

    def __init__(self, plan: LayerPlan, seed: int = 0):
        super().__init__(plan)
        with seeded(seed):
            self.encoder = Encoder(plan.c)
            self.decoder = Decoder(plan.c)

    def conditions(self) -> list[SubsetId]:
        return [prefix(i, self.num_layers) for i in range(1, self.num_layers + 1)]

    def transmit(self, x, channel, generator) -> torch.Tensor:
        plan = plan_for(x, self.plan)
        return concat_layers(apply_channel(encode(self.encoder, x, plan, channel.power), channel, generator))

    def decode(self, z_hat: torch.Tensor, keep_layers: int, plan: LayerPlan) -> torch.Tensor:
        masked = mask_trailing(z_hat, keep_layers, plan)
        feats = symbols_to_features(split_layers(masked, plan), plan.depths, plan.latent_hw)
        return self.decoder(feats)

    def forward(self, x, channel, generator=None, keep_layers: int | None = None):
        plan = plan_for(x, self.plan)
        return self.decode(self.transmit(x, channel, generator), keep_layers or self.num_layers, plan)

    def reconstruct(self, x, channel, generator, subsets=None):
        plan = plan_for(x, self.plan)
        z_hat = self.transmit(x, channel, generator)
        subsets = subsets or self.conditions()
        out = {}
        for s in subsets:
            keep = s.size
            if s.bitmask != 2 ** keep - 1:
                raise ValueError(f"{s} is not a successive-refinement prefix")
            out[s.bitmask] = self.decode(z_hat, keep, plan)
        return out

    def loss(self, x, channel, generator):
        keep = sample_keep_layers(self.num_layers, generator)
        return mse_loss(x, self(x, channel, generator, keep))


class Mixer(nn.Module):
    """Two convolution blocks merging the previous reconstruction and a residual estimate."""

    def __init__(self, hidden: int = 32, kernel: int = 3):
        super().__init__()
        self.net = nn.Sequential(
            nn.Conv2d(6, hidden, kernel, padding=kernel // 2), nn.PReLU(hidden),
            nn.Conv2d(hidden, 3, kernel, padding=kernel // 2), nn.Sigmoid(),
        )

    def forward(self, previous: torch.Tensor, residual: torch.Tensor) -> torch.Tensor:
        return self.net(torch.cat((previous, residual), dim=1))


class ResidualLayer(nn.Module):
    def __init__(self, index: int, plan: LayerPlan):
        super().__init__()
        self.index = index
        depth_in = plan.depth_offsets()[index]
        self.encoder = Encoder(plan.depths[index - 1], in_depth=3 if index == 1 else 6)
        self.decoder = Decoder(depth_in)
        self.mixer = Mixer() if index > 1 else None


class SequencingError(RuntimeError):
    """Residual layers trained or used out of order."""


class ResidualStack(SchemeModel):
    """Greedily trained encoder/decoder pairs transmitting estimated residuals.

    Layer 1 is a plain single-layer link. Layer ``j > 1`` encodes the image
    together with ``x - x'_{j-1}``, where ``x'_{j-1}`` is the transmitter's
    Monte Carlo estimate of the receiver output from ``m`` simulated channel
    realizations; its decoder reads all channel outputs ``1..j`` and a mixer
    merges the result with the previous reconstruction.
    """

    scheme = "sr_residual"

    def __init__(self, plan: LayerPlan, m: int = 10, seed: int = 0):
        super().__init__(plan)
        if m < 1:
            raise ValueError(f"m must be >= 1, got {m}")
        self.m = m
        self.seed = seed
        self.layers = nn.ModuleList()
        for j in range(1, plan.num_layers + 1):
            with seeded(seed if j == 1 else seed * 1000 + j):
                self.layers.append(ResidualLayer(j, plan))
        self.register_buffer("trained", torch.zeros(plan.num_layers, dtype=torch.bool))
        self.active_layer = 1

    def architecture(self) -> dict:
        return {**super().architecture(), "m": self.m}

    def conditions(self) -> list[SubsetId]:
        n = int(self.trained.sum()) or self.num_layers
        return [prefix(i, self.num_layers) for i in range(1, n + 1)]

    # transmitter side
    def _encode_layer(self, j: int, x, plan, estimate, power) -> torch.Tensor:
        layer = self.layers[j - 1]
        inp = x if j == 1 else torch.cat((x, x - estimate), dim=1)
        return encode(layer.encoder, inp, LayerPlan((plan.depths[j - 1],), plan.height, plan.width), power)[0]

    def transmit(self, x, channel, upto: int, estimator: torch.Generator | None = None) -> list[torch.Tensor]:
        """Channel inputs ``z_1..z_upto``; residual inputs use simulated estimates."""
        plan = plan_for(x, self.plan)
        zs: list[torch.Tensor] = []
        estimate = None
        for j in range(1, upto + 1):
            zs.append(self._encode_layer(j, x, plan, estimate, channel.power))
            if j < upto:
                with torch.no_grad():
                    estimate = self._simulate(zs, channel, estimator, plan.latent_hw)
        return zs

    def _simulate(self, zs, channel, generator, hw) -> torch.Tensor:
        # a noiseless AWGN link is deterministic; one pass is the exact mean
        runs = 1 if channel.kind == "awgn" and channel.noise_power == 0 else self.m
        total = None
        for _ in range(runs):
            x_tilde = self.receive(apply_channel([z.detach() for z in zs], channel, generator), hw)[-1]
            total = x_tilde if total is None else total + x_tilde
        return total / runs

    # receiver side
    def receive(self, z_hat: Sequence[torch.Tensor], hw: tuple[int, int] | None = None) -> list[torch.Tensor]:
        depths = self.plan.depths
        hw = hw or self.plan.latent_hw
        recons: list[torch.Tensor] = []
        for j, layer in enumerate(self.layers[:len(z_hat)], start=1):
            feats = symbols_to_features(z_hat[:j], depths[:j], hw)
            out = layer.decoder(feats)
            recons.append(out if j == 1 else layer.mixer(recons[-1], out))
        return recons

    def forward(self, x, channel, generator=None, upto: int | None = None,
                estimator: torch.Generator | None = None) -> list[torch.Tensor]:
        upto = upto or self.num_layers
        zs = self.transmit(x, channel, upto, estimator if estimator is not None else generator)
        return self.receive(apply_channel(zs, channel, generator), plan_for(x, self.plan).latent_hw)

    def reconstruct(self, x, channel, generator, subsets=None):
        subsets = subsets or self.conditions()
        upto = max(s.size for s in subsets)
        recons = self(x, channel, generator, upto)
        return {s.bitmask: recons[s.size - 1] for s in subsets}

    def loss(self, x, channel, generator):
        j = self.active_layer
        return mse_loss(x, self(x, channel, generator, upto=j)[-1])

    def begin_layer(self, j: int) -> None:
        """Freeze layers ``< j`` and make layer ``j`` the only trainable one."""
        if not 1 <= j <= self.num_layers:
            raise SequencingError(f"layer index {j} outside [1, {self.num_layers}]")
        if j > 1 and not bool(self.trained[: j - 1].all()):
            raise SequencingError(f"layers 1..{j - 1} must be trained before layer {j}")
        self.active_layer = j
        for i, layer in enumerate(self.layers, start=1):
            layer.requires_grad_(i == j)

    def finish_layer(self, j: int) -> None:
        self.trained[j - 1] = True
        self.layers[j - 1].requires_grad_(False)


def estimate_receiver_output(stack: ResidualStack, x: torch.Tensor, channel: ChannelConfig,
                             upto: int, m: int | None = None,
                             generator: torch.Generator | None = None) -> torch.Tensor:
    """Average of ``m`` simulated receiver reconstructions from layers ``1..upto``."""
    if upto < 1:
        raise ValueError("the estimate needs at least one transmitted layer")
    m = stack.m if m is None else m
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    saved, stack.m = stack.m, m
    try:
        with torch.no_grad():
            zs = stack.transmit(x, channel, upto, generator)
            return stack._simulate(zs, channel, generator, plan_for(x, stack.plan).latent_hw)
    finally:
        stack.m = saved
