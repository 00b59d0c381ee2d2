"""Scheme registry: build models by name or from a stored architecture record."""

from __future__ import annotations

from .base import SchemeModel
from .channel import LayerPlan
from .md_schemes import MDMultiDecoder, MDSingleDecoder
from .sr_schemes import ResidualStack, SRMultiDecoder, SRSingleDecoder

SCHEMES = {
    "sr_multi": SRMultiDecoder,
    "sr_single": SRSingleDecoder,
    "sr_residual": ResidualStack,
    "md_multi": MDMultiDecoder,
    "md_single": MDSingleDecoder,
}


def build_model(scheme: str, plan: LayerPlan, seed: int = 0, **options) -> SchemeModel:
    """Instantiate a scheme; ``options`` are scheme-specific (weights, mode, alpha, m, ...)."""
    try:
        cls = SCHEMES[scheme]
    except KeyError:
        raise ValueError(f"unknown scheme {scheme!r}; choose from {sorted(SCHEMES)}") from None
    options = {k: v for k, v in options.items() if v is not None}
    return cls(plan, seed=seed, **options)


def from_architecture(arch: dict, seed: int = 0) -> SchemeModel:
    """Rebuild an (untrained) model from :meth:`SchemeModel.architecture` output."""
    arch = dict(arch)
    scheme = arch.pop("scheme")
    plan = LayerPlan(tuple(arch.pop("depths")), arch.pop("height", 32), arch.pop("width", 32))
    if scheme == "sr_multi":
        return SRMultiDecoder(plan, weights=arch.get("weights"), seed=seed)
    if scheme == "sr_residual":
        return ResidualStack(plan, m=arch.get("m", 10), seed=seed)
    if scheme == "md_multi":
        return MDMultiDecoder(plan, mode=arch.get("mode", "uniform"), alpha=arch.get("alpha"),
                              train_subsets=arch.get("train_subsets", "all"), seed=seed,
                              allow_large=True)
    return build_model(scheme, plan, seed=seed)
