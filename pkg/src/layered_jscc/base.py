"""Interface shared by every transmission scheme."""

from __future__ import annotations

import hashlib
import json
from typing import Sequence

import torch
from torch import nn

from .channel import ChannelConfig, LayerPlan
from .subsets import SubsetId


class SchemeModel(nn.Module):
    """One encoder/decoder arrangement with its training objective.

    Subclasses implement :meth:`reconstruct`, :meth:`loss` and
    :meth:`conditions`; reconstructions are keyed by subset bitmask.
    """

    scheme: str = ""

    def __init__(self, plan: LayerPlan):
        super().__init__()
        self.plan = plan

    @property
    def num_layers(self) -> int:
        return self.plan.num_layers

    def conditions(self) -> list[SubsetId]:
        raise NotImplementedError

    def reconstruct(self, x: torch.Tensor, channel: ChannelConfig, generator: torch.Generator,
                    subsets: Sequence[SubsetId] | None = None) -> dict[int, torch.Tensor]:
        raise NotImplementedError

    def loss(self, x: torch.Tensor, channel: ChannelConfig, generator: torch.Generator) -> torch.Tensor:
        raise NotImplementedError

    def trainable_parameters(self) -> list[nn.Parameter]:
        return [p for p in self.parameters() if p.requires_grad]

    def architecture(self) -> dict:
        """JSON-serializable description used for checkpoint compatibility."""
        return {"scheme": self.scheme, "depths": list(self.plan.depths)}

    def architecture_hash(self) -> str:
        blob = json.dumps(self.architecture(), sort_keys=True).encode()
        shapes = [(name, tuple(t.shape)) for name, t in self.state_dict().items()]
        blob += json.dumps(shapes).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def mse_loss(x: torch.Tensor, x_hat: torch.Tensor) -> torch.Tensor:
    return torch.mean((x - x_hat) ** 2)


def weighted_loss(distortions: Sequence, weights: Sequence[float]):
    """``sum_j w_j d_j`` over matching sequences (tensors or floats)."""
    if len(distortions) != len(weights):
        raise ValueError(f"{len(distortions)} distortions but {len(weights)} weights")
    total = 0.0
    for d, w in zip(distortions, weights):
        if w:
            total = total + w * d
    return total
