"""Test-set evaluation and the sweep runners behind the result tables.

PSNR is computed per (image, channel realization) on rounded pixels, capped
at 100 dB, and then averaged. Every CSV written here says so in its first line.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np
import torch

from .base import SchemeModel
from .channel import ChannelConfig, LayerPlan, PlanError, make_generator
from .data import batch_iterator
from .metrics import batch_psnr, cap_psnr
from .subsets import SubsetId, parse_subset
from .training import to_input

RESULT_FIELDS = ("scheme", "L", "c", "train_snr", "test_snr", "subset", "mean_psnr", "std_psnr",
                 "n_images", "R", "seed")
CSV_CONVENTION = "# psnr: per image-realization on round-half-up pixels, capped at 100 dB, then averaged"


@dataclass
class EvalRow:
    scheme: str
    L: int
    c: int
    train_snr: float | None
    test_snr: float
    subset: str
    mean_psnr: float
    std_psnr: float
    n_images: int
    R: int
    seed: int
    extra: dict = field(default_factory=dict)

    @property
    def stderr(self) -> float:
        return self.std_psnr / math.sqrt(self.n_images * self.R)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.update(d.pop("extra"))
        return d


def snr_key(snr_db: float) -> int:
    """Integer seed component for an SNR value; +inf gets its own key."""
    if math.isinf(snr_db):
        return 0x7FFF_0000 if snr_db > 0 else 0x7FFF_0001
    return int(round(snr_db * 1000)) & 0xFFFFFFFF


class Accumulator:
    """Streaming mean/variance (Chan et al. pairwise merge)."""

    def __init__(self):
        self.n, self.mean, self.m2 = 0, 0.0, 0.0

    def add(self, values: np.ndarray) -> None:
        values = np.asarray(values, dtype=np.float64)
        nb = values.size
        if nb == 0:
            return
        mb = float(values.mean())
        m2b = float(((values - mb) ** 2).sum())
        n = self.n + nb
        delta = mb - self.mean
        self.mean += delta * nb / n
        self.m2 += m2b + delta ** 2 * self.n * nb / n
        self.n = n

    @property
    def std(self) -> float:
        return math.sqrt(self.m2 / (self.n - 1)) if self.n > 1 else 0.0


@torch.no_grad()
def evaluate(model: SchemeModel, images: np.ndarray, snrs: Iterable[float],
             subsets: Sequence | None = None, R: int = 10, seed: int = 0,
             channel_kind: str = "awgn", fading_variance: float = 1.0,
             train_snr: float | None = None, batch_size: int = 500,
             trained: bool = True, extra: dict | None = None) -> list[EvalRow]:
    """Mean/std PSNR per (test SNR, subset) over ``len(images) * R`` samples.

    Channel draws for realization ``r`` of batch ``b`` at SNR ``s`` come from
    the substream ``(seed, s, r, b)``, so results do not depend on which other
    SNRs or models are evaluated in the same call.
    """
    if R < 1:
        raise ValueError(f"R must be >= 1, got {R}")
    if not trained:
        warnings.warn(f"evaluating an untrained {model.scheme} model", stacklevel=2)
    images = np.asarray(images)
    L = model.num_layers
    conds = model.conditions() if subsets is None else [parse_subset(s, L) for s in subsets]
    model.eval()
    rows = []
    for snr in snrs:
        channel = ChannelConfig(channel_kind, float(snr), fading_variance=fading_variance)
        acc = {s.bitmask: Accumulator() for s in conds}
        for r in range(R):
            for b, batch in enumerate(batch_iterator(images, min(batch_size, len(images)))):
                g = make_generator(seed, snr_key(float(snr)), r, b)
                x = to_input(batch)
                recons = model.reconstruct(x, channel, g, conds)
                pix = torch.from_numpy(batch).permute(0, 3, 1, 2)
                for s in conds:
                    acc[s.bitmask].add(cap_psnr(batch_psnr(pix, recons[s.bitmask])))
        for s in conds:
            a = acc[s.bitmask]
            rows.append(EvalRow(model.scheme, L, model.plan.c, train_snr, float(snr), s.binary(),
                                a.mean, a.std, len(images), R, seed, dict(extra or {})))
    return rows


def row_lookup(rows: Sequence[EvalRow]) -> dict[tuple, EvalRow]:
    return {(r.train_snr, r.test_snr, r.subset): r for r in rows}


def snr_mismatch_sweep(models: dict[float, SchemeModel], images: np.ndarray,
                       test_snrs: Sequence[float], channel_kind: str = "awgn", R: int = 10,
                       seed: int = 0, **kw) -> tuple[list[EvalRow], list[EvalRow]]:
    """Every model at every test SNR, plus the best-model envelope per cell."""
    if not models:
        raise ValueError("snr_mismatch_sweep needs at least one model")
    grid: list[EvalRow] = []
    for train_snr, model in sorted(models.items()):
        grid += evaluate(model, images, test_snrs, R=R, seed=seed, channel_kind=channel_kind,
                         train_snr=train_snr, **kw)
    best: dict[tuple, EvalRow] = {}
    for row in grid:
        key = (row.test_snr, row.subset)
        if key not in best or row.mean_psnr > best[key].mean_psnr:
            best[key] = row
    envelope = [EvalRow(**{**asdict(r), "extra": {"envelope_of": r.train_snr}}) for r in
                (best[k] for k in sorted(best))]
    return grid, envelope


def check_divisible(total_c: int, layer_counts: Sequence[int]) -> None:
    for L in layer_counts:
        if total_c % L or (total_c // L) % 2:
            raise PlanError(f"total depth {total_c} cannot be split into {L} layers of even depth")


def layer_count_sweep(get_model: Callable[[int], SchemeModel], total_c: int,
                      layer_counts: Sequence[int], images: np.ndarray, snr: float,
                      R: int = 10, seed: int = 0, **kw) -> list[EvalRow]:
    """PSNR after each prefix of layers for one model per layer count.

    ``get_model(L)`` trains or loads the ``L``-layer model; rows carry the
    cumulative bandwidth ratio in ``extra``.
    """
    check_divisible(total_c, layer_counts)
    rows = []
    for L in layer_counts:
        model = get_model(L)
        if model.plan.depths != LayerPlan.uniform(total_c, L).depths:
            raise PlanError(f"model for L={L} has depths {model.plan.depths}")
        for row in evaluate(model, images, [snr], R=R, seed=seed, train_snr=snr, **kw):
            prefix_len = parse_subset(row.subset, L).size
            row.extra["cum_ratio"] = sum(model.plan.depths[:prefix_len]) / 48
            rows.append(row)
    return rows


def write_results_csv(rows: Sequence[EvalRow | dict], path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    dicts = [r.to_dict() if isinstance(r, EvalRow) else dict(r) for r in rows]
    extras: list[str] = []
    for d in dicts:
        extras += [k for k in d if k not in RESULT_FIELDS and k not in extras]
    with open(path, "w", newline="") as f:
        f.write(CSV_CONVENTION + "\n")
        w = csv.DictWriter(f, fieldnames=list(RESULT_FIELDS) + extras, lineterminator="\n")
        w.writeheader()
        for d in dicts:
            w.writerow({k: _fmt(v) for k, v in d.items()})
    return path


def _fmt(v):
    if isinstance(v, float):
        return repr(round(v, 6)) if math.isfinite(v) else str(v)
    return "" if v is None else v


def read_results_csv(path) -> list[dict]:
    with open(path, newline="") as f:
        lines = [ln for ln in f if not ln.startswith("#")]
    out = []
    for d in csv.DictReader(lines):
        for k, v in list(d.items()):
            if k in ("subset", "scheme"):
                continue
            try:
                d[k] = int(v) if k in ("L", "c", "n_images", "R", "seed") else (float(v) if v != "" else None)
            except ValueError:
                pass
        out.append(d)
    return out


def subset_label(subset: SubsetId | str) -> str:
    return subset.binary() if isinstance(subset, SubsetId) else str(subset)
