"""Experiment configuration: YAML documents mapped onto typed sections.

Every key of every section is also a command-line flag ``--section.key``;
the mapping is generated from the dataclasses below, so the two cannot drift.
"""

from __future__ import annotations

import argparse
import re
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

import yaml

from .channel import ChannelConfig, LayerPlan
from .training import TrainConfig

SCHEMA_VERSION = 1
DEFAULT_TEST_SNRS = list(range(0, 20))
DEFAULT_TRAIN_SNRS = [0, 5, 10, 15, 19]


class _Loader(yaml.SafeLoader):
    """Safe loader that also reads ``1e-4`` as a float (plain YAML 1.1 wants ``1.0e-4``)."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"^[-+]?[0-9][0-9_]*(?:\.[0-9_]*)?[eE][-+]?[0-9]+$"),
    list("-+0123456789"))


class ConfigError(ValueError):
    pass


@dataclass
class SchemeSection:
    name: str = "sr_multi"
    weights: list | None = None        # successive refinement layer weights
    mode: str = "uniform"              # multiple-description loss: uniform | alpha1 | alpha2
    alpha: float | None = None
    m: int = 10                        # residual scheme: receiver-estimate realizations
    train_subsets: str = "all"         # md_multi: all | singletons_and_full
    seed: int = 0

    def options(self) -> dict:
        if self.name == "sr_multi":
            return {"weights": self.weights}
        if self.name == "md_multi":
            return {"mode": self.mode, "alpha": self.alpha, "train_subsets": self.train_subsets}
        if self.name == "sr_residual":
            return {"m": self.m}
        return {}


@dataclass
class PlanSection:
    depths: list = field(default_factory=lambda: [4, 4])
    height: int = 32
    width: int = 32

    def build(self) -> LayerPlan:
        return LayerPlan(tuple(self.depths), self.height, self.width)


@dataclass
class ChannelSection:
    kind: str = "awgn"
    snr_db: float = 10.0
    fading_variance: float = 1.0
    power: float = 1.0

    def build(self) -> ChannelConfig:
        return ChannelConfig(self.kind, float(self.snr_db), fading_variance=self.fading_variance,
                             power=self.power)


@dataclass
class TrainingSection(TrainConfig):
    pass


@dataclass
class EvaluationSection:
    snrs: list = field(default_factory=lambda: list(DEFAULT_TEST_SNRS))
    realizations: int = 10
    seed: int = 0
    subsets: list | None = None
    n_images: int = 0          # 0 evaluates the whole test split
    batch_size: int = 500


@dataclass
class BaselineSection:
    codec: str = "jpeg2000_layered"
    snrs: list = field(default_factory=lambda: [1, 10, 19])
    channel_uses: list | None = None    # defaults to the plan's per-layer channel uses
    n_images: int = 100


@dataclass
class SweepSection:
    kind: str = "mismatch"   # mismatch | layer_count | tradeoff_lambda | tradeoff_alpha1 | tradeoff_alpha2
    train_snrs: list = field(default_factory=lambda: list(DEFAULT_TRAIN_SNRS))
    test_snrs: list = field(default_factory=lambda: list(DEFAULT_TEST_SNRS))
    layer_counts: list = field(default_factory=lambda: [1, 2, 3, 4])
    total_c: int = 8
    grid: list = field(default_factory=lambda: [0.01, 0.25, 0.5, 0.75, 0.99])
    checkpoints: dict = field(default_factory=dict)
    train_missing: bool = False


@dataclass
class DataSection:
    root: str | None = None
    download: bool = False


@dataclass
class ExperimentConfig:
    schema_version: int = SCHEMA_VERSION
    scheme: SchemeSection = field(default_factory=SchemeSection)
    plan: PlanSection = field(default_factory=PlanSection)
    channel: ChannelSection = field(default_factory=ChannelSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    evaluation: EvaluationSection = field(default_factory=EvaluationSection)
    baseline: BaselineSection = field(default_factory=BaselineSection)
    sweep: SweepSection = field(default_factory=SweepSection)
    data: DataSection = field(default_factory=DataSection)

    def to_dict(self) -> dict:
        return asdict(self)


SECTIONS = {f.name: f.default_factory for f in fields(ExperimentConfig) if f.name != "schema_version"}


def _key_lines(text: str) -> dict[tuple[str, ...], int]:
    """Source line (1-based) of every mapping key, keyed by its path."""
    out: dict[tuple[str, ...], int] = {}
    root = yaml.compose(text)

    def walk(node, path):
        if isinstance(node, yaml.MappingNode):
            for k, v in node.value:
                key = path + (str(k.value),)
                out[key] = k.start_mark.line + 1
                walk(v, key)

    if root is not None:
        walk(root, ())
    return out


def from_dict(raw: dict | None, lines: dict | None = None, source: str = "<config>") -> ExperimentConfig:
    raw = dict(raw or {})
    lines = lines or {}

    def where(*path):
        line = lines.get(tuple(path))
        return f"{source}:{line}" if line else source

    version = raw.pop("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"{where('schema_version')}: unsupported schema_version {version}")
    cfg = ExperimentConfig()
    for name, body in raw.items():
        if name not in SECTIONS:
            raise ConfigError(f"{where(name)}: unknown section {name!r}; "
                              f"expected one of {sorted(SECTIONS)}")
        if body is None:
            continue
        if not isinstance(body, dict):
            raise ConfigError(f"{where(name)}: section {name!r} must be a mapping")
        section = getattr(cfg, name)
        known = {f.name for f in fields(section)}
        for key, value in body.items():
            if key not in known:
                raise ConfigError(f"{where(name, key)}: unknown key {name}.{key}")
            setattr(section, key, value)
        try:
            section.__post_init__() if hasattr(section, "__post_init__") else None
        except ValueError as e:
            raise ConfigError(f"{where(name)}: {e}") from e
    return cfg


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    text = path.read_text()
    try:
        raw = yaml.load(text, Loader=_Loader)
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: {e}") from e
    if raw is not None and not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return from_dict(raw, _key_lines(text), str(path))


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)


# command-line flags

def add_config_flags(parser: argparse.ArgumentParser) -> None:
    """Add ``--section.key`` for every config key (values parsed as YAML)."""
    for section, factory in SECTIONS.items():
        group = parser.add_argument_group(f"{section} config")
        for f in fields(factory()):
            default = getattr(factory(), f.name)
            group.add_argument(f"--{section}.{f.name}", dest=f"cfg__{section}__{f.name}",
                               metavar="VALUE", default=None,
                               help=f"override {section}.{f.name} (default: {default!r})")


def apply_overrides(cfg: ExperimentConfig, args: argparse.Namespace) -> ExperimentConfig:
    raw = cfg.to_dict()
    changed = False
    for dest, value in vars(args).items():
        if not dest.startswith("cfg__") or value is None:
            continue
        _, section, key = dest.split("__", 2)
        raw[section][key] = _parse_value(value)
        changed = True
    return from_dict(raw) if changed else cfg


def _parse_value(text: str) -> Any:
    if text.strip().lower() in ("inf", "+inf"):
        return float("inf")
    return yaml.load(text, Loader=_Loader)
