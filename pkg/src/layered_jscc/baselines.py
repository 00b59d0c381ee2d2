"""Separation baselines: ideal-capacity bit budgets with layered image codecs,
and the repetition-code transmission of one single-layer codeword."""

from __future__ import annotations

import io
import math
import shutil
import subprocess
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from PIL import Image, ImageFile

from .base import SchemeModel
from .channel import ChannelConfig, LayerPlan, apply_channel
from .codec import encode, plan_for, symbols_to_features
from .metrics import psnr


class FeatureUnavailable(RuntimeError):
    """An optional external codec is not installed."""


class CodecError(RuntimeError):
    pass


# capacity model

def awgn_capacity(snr_db: float) -> float:
    """Bits per complex channel use, ``log2(1 + SNR)``."""
    if snr_db == -math.inf:
        return 0.0
    return math.log2(1.0 + 10.0 ** (snr_db / 10.0))


@dataclass(frozen=True)
class BitBudget:
    bits: tuple[int, ...]
    snr_db: float
    channel_uses: tuple[int, ...]

    @property
    def cumulative(self) -> tuple[int, ...]:
        return tuple(int(x) for x in np.cumsum(self.bits))


def bit_budget(plan: LayerPlan | Sequence[int], snr_db: float) -> BitBudget:
    """``b_i = floor(k_i * C(snr))`` per layer.

    A plan is converted to channel uses with :attr:`LayerPlan.channel_uses`;
    a plain sequence is taken as the uses directly.
    """
    uses = tuple(plan.channel_uses) if isinstance(plan, LayerPlan) else tuple(int(k) for k in plan)
    if any(k < 0 for k in uses):
        raise ValueError(f"channel uses must be non-negative, got {uses}")
    cap = awgn_capacity(snr_db)
    return BitBudget(tuple(int(math.floor(k * cap)) for k in uses), snr_db, uses)


# JPEG2000 quality layers

SOT, SOD, PLT, EOC = 0xFF90, 0xFF93, 0xFF58, 0xFFD9
NUM_RESOLUTIONS = 3


@dataclass
class Codestream:
    data: bytes
    num_layers: int
    packets_per_layer: int
    layer_bytes: tuple[int, ...]      # packet bytes per quality layer
    header_bytes: int

    @property
    def cumulative_bits(self) -> tuple[int, ...]:
        return tuple(int(x) * 8 for x in np.cumsum(self.layer_bytes))


def _u16(b: bytes, i: int) -> int:
    return b[i] << 8 | b[i + 1]


def parse_codestream(data: bytes, num_components: int = 3,
                     num_resolutions: int = NUM_RESOLUTIONS) -> tuple[list[int], int]:
    """Packet lengths (from PLT markers) and the count of non-packet bytes.

    Assumes a single tile with one precinct per resolution, which holds for
    the default precinct size on images up to 32k pixels a side.
    """
    if _u16(data, 0) != 0xFF4F:
        raise CodecError("not a raw JPEG2000 codestream")
    i = data.find(bytes([0xFF, 0x90]))
    if i < 0:
        raise CodecError("codestream has no tile")
    packets: list[int] = []
    payload = 0
    while i < len(data) - 1:
        marker = _u16(data, i)
        if marker == EOC:
            break
        if marker != SOT:
            raise CodecError(f"unexpected marker {marker:#06x} at {i}")
        psot = int.from_bytes(data[i + 6:i + 10], "big")
        end = i + psot if psot else len(data) - 2
        j = i + 2 + _u16(data, i + 2)
        while _u16(data, j) != SOD:
            if _u16(data, j) == PLT:
                packets += _read_plt(data[j + 5:j + 2 + _u16(data, j + 2)])
            j += 2 + _u16(data, j + 2)
        payload += end - (j + 2)
        i = end
    if sum(packets) != payload:
        raise CodecError(f"PLT lengths {sum(packets)} disagree with tile data {payload}")
    return packets, len(data) - payload


def _read_plt(seg: bytes) -> list[int]:
    out, v = [], 0
    for byte in seg:
        v = (v << 7) | (byte & 0x7F)
        if not byte & 0x80:
            out.append(v)
            v = 0
    return out


def jpeg2000_encode(image: np.ndarray, target_bytes: Sequence[float]) -> Codestream:
    """Layered codestream with quality layers sized for cumulative ``target_bytes``.

    Targets are handed to OpenJPEG as compression ratios; ``inf`` asks for
    everything the irreversible transform can give.
    """
    raw = image.size
    rates = [0 if math.isinf(t) else raw / max(float(t), 1e-3) for t in target_bytes]
    buf = io.BytesIO()
    Image.fromarray(image).save(buf, "JPEG2000", no_jp2=True, irreversible=True,
                                quality_mode="rates", quality_layers=rates,
                                num_resolutions=NUM_RESOLUTIONS, progression="LRCP", plt=True)
    data = buf.getvalue()
    comps = 1 if image.ndim == 2 else image.shape[2]
    packets, header = parse_codestream(data, comps)
    per_layer = comps * NUM_RESOLUTIONS
    if len(packets) != per_layer * len(rates):
        raise CodecError(f"expected {per_layer * len(rates)} packets, found {len(packets)}")
    layer_bytes = tuple(sum(packets[k * per_layer:(k + 1) * per_layer]) for k in range(len(rates)))
    return Codestream(data, len(rates), per_layer, layer_bytes, header)


def jpeg2000_decode(stream: Codestream | bytes, layers: int | None = None) -> np.ndarray:
    """Decode the first ``layers`` quality layers (all when omitted)."""
    data = stream.data if isinstance(stream, Codestream) else stream
    img = Image.open(io.BytesIO(data))
    if layers:
        t = img.tile[0]
        img.tile = [ImageFile._Tile(t[0], t[1], t[2], (t[3][0], 0, int(layers), t[3][3], t[3][4]))]
    img.load()
    return np.asarray(img)


def _fit_layer(image, fixed: list[float], budget_bits: float, lo_bytes: float) -> tuple[float, Codestream]:
    """Largest target for the next layer whose cumulative payload fits the budget."""
    if math.isinf(budget_bits):
        return math.inf, jpeg2000_encode(image, fixed + [math.inf])
    lo, hi = lo_bytes, max(lo_bytes, budget_bits / 8 * 4)
    best = None
    for _ in range(24):
        mid = 0.5 * (lo + hi)
        cs = jpeg2000_encode(image, fixed + [mid])
        if cs.cumulative_bits[-1] <= budget_bits:
            best, lo = (mid, cs), mid
        else:
            hi = mid
        if hi - lo < 0.25:
            break
    if best is None:
        cs = jpeg2000_encode(image, fixed + [lo_bytes])
        if cs.cumulative_bits[-1] <= budget_bits:
            best = (lo_bytes, cs)
    if best is None:
        raise CodecError("no layer size fits the budget")
    return best


@dataclass
class PrefixResult:
    budget_bits: int | float
    payload_bits: int
    psnr: float
    saturated: bool
    layers_decoded: int


@dataclass
class DigitalResult:
    codec: str
    prefixes: list[PrefixResult]
    min_payload_bits: int
    header_bytes: int = 0
    notes: dict = field(default_factory=dict)

    @property
    def saturated(self) -> list[bool]:
        return [p.saturated for p in self.prefixes]


def minimum_payload(image: np.ndarray) -> tuple[int, float]:
    """Smallest JPEG2000 payload (bits) the encoder produces and its PSNR."""
    cs = jpeg2000_encode(image, [1.0])
    return cs.cumulative_bits[0], psnr(image, jpeg2000_decode(cs, 1))


def jpeg2000_layered(image: np.ndarray, budgets: BitBudget | Sequence[float]) -> DigitalResult:
    """One nested codestream; each prefix decodes the most layers that fit its budget.

    Layers are added greedily, one per cumulative budget. On thumbnails a
    quality layer costs at least a packet header per resolution and
    component, so a small budget increment may not buy a new layer; that
    prefix then decodes the same layers as the one before. Adding a layer can
    also shift the encoder's allocation of earlier ones, which is why the
    prefix-to-layer assignment is read off the final stream.

    Prefixes whose budget is below the codec's smallest payload are
    saturated: nothing is sent and the minimum-quality PSNR is reported,
    which gives the flat low-SNR regions of the digital curves.
    """
    cum = list(budgets.cumulative) if isinstance(budgets, BitBudget) else list(np.cumsum(budgets))
    min_bits, min_psnr = minimum_payload(image)
    targets: list[float] = []
    stream = None
    for b in cum:
        if b < min_bits:
            continue
        try:
            target, cs = _fit_layer(image, targets, b, targets[-1] if targets else 1.0)
        except CodecError:
            continue
        targets.append(target)
        stream = cs
    decoded: dict[int, float] = {}
    prefixes: list[PrefixResult] = []
    for b in cum:
        layers = 0 if stream is None else sum(1 for c in stream.cumulative_bits if c <= b)
        if layers == 0:
            prefixes.append(PrefixResult(b, 0, min_psnr, True, 0))
            continue
        if layers not in decoded:
            decoded[layers] = psnr(image, jpeg2000_decode(stream, layers))
        prefixes.append(PrefixResult(b, stream.cumulative_bits[layers - 1], decoded[layers], False, layers))
    for p in prefixes:
        if p.payload_bits > p.budget_bits:
            raise CodecError(f"payload {p.payload_bits} exceeds budget {p.budget_bits}")
    return DigitalResult("jpeg2000_layered", prefixes, min_bits, stream.header_bytes if stream else 0)


# BPG (external binaries)

def read_ue7(data: bytes, pos: int) -> tuple[int, int]:
    v = 0
    for _ in range(5):
        byte = data[pos]
        pos += 1
        v = (v << 7) | (byte & 0x7F)
        if not byte & 0x80:
            return v, pos
    raise CodecError("ue7 value longer than 32 bits")


def parse_bpg_header(data: bytes) -> dict:
    """Split a BPG file into header and picture payload sizes."""
    if data[:4] != b"BPG\xfb":
        raise CodecError("not a BPG file")
    flags = data[5]
    pos = 6
    width, pos = read_ue7(data, pos)
    height, pos = read_ue7(data, pos)
    length, pos = read_ue7(data, pos)
    if flags & 0x08:
        ext_len, pos = read_ue7(data, pos)
        pos += ext_len
    payload = length if length else len(data) - pos
    return {"width": width, "height": height, "header_bytes": pos, "payload_bytes": payload}


def bpg_tools(encoder: str = "bpgenc", decoder: str = "bpgdec") -> tuple[str, str]:
    enc, dec = shutil.which(encoder), shutil.which(decoder)
    if not enc or not dec:
        raise FeatureUnavailable(f"BPG baseline needs {encoder!r} and {decoder!r} on PATH")
    return enc, dec


def _bpg_roundtrip(image: np.ndarray, q: int, tools) -> tuple[int, np.ndarray]:
    enc, dec = tools
    with tempfile.TemporaryDirectory() as tmp:
        src, bpg, out = Path(tmp, "in.png"), Path(tmp, "x.bpg"), Path(tmp, "out.png")
        Image.fromarray(image).save(src)
        subprocess.run([enc, "-q", str(q), "-o", str(bpg), str(src)], check=True, capture_output=True)
        subprocess.run([dec, "-o", str(out), str(bpg)], check=True, capture_output=True)
        payload = parse_bpg_header(bpg.read_bytes())["payload_bytes"] * 8
        return payload, np.asarray(Image.open(out).convert("RGB"))


def bpg_independent(image: np.ndarray, budgets: BitBudget | Sequence[float],
                    tools: tuple[str, str] | None = None) -> DigitalResult:
    """Independent BPG encodings, each the best quality within its cumulative budget."""
    tools = tools or bpg_tools()
    cum = list(budgets.cumulative) if isinstance(budgets, BitBudget) else list(np.cumsum(budgets))
    cache: dict[int, tuple[int, np.ndarray]] = {}

    def at(q):
        if q not in cache:
            cache[q] = _bpg_roundtrip(image, q, tools)
        return cache[q]

    min_bits, worst = at(51)
    prefixes = []
    for b in cum:
        if min_bits > b:
            prefixes.append(PrefixResult(b, 0, psnr(image, worst), True, 0))
            continue
        lo, hi = 0, 51   # payload decreases with q; find the smallest q that fits
        while lo < hi:
            mid = (lo + hi) // 2
            if at(mid)[0] <= b:
                hi = mid
            else:
                lo = mid + 1
        bits, rec = at(lo)
        prefixes.append(PrefixResult(b, bits, psnr(image, rec), False, 1))
    return DigitalResult("bpg_independent", prefixes, min_bits)


CODECS = {"jpeg2000_layered": jpeg2000_layered, "bpg_independent": bpg_independent}


def digital_baseline(images: np.ndarray, codec: str, budgets: BitBudget | Sequence[float]) -> dict:
    """Run a codec over a stack of images and aggregate per-prefix results."""
    try:
        fn = CODECS[codec]
    except KeyError:
        raise ValueError(f"unknown codec {codec!r}; choose from {sorted(CODECS)}") from None
    results, errors = [], []
    for idx, img in enumerate(np.asarray(images)):
        try:
            results.append(fn(img, budgets))
        except FeatureUnavailable:
            raise
        except (CodecError, subprocess.CalledProcessError, OSError) as e:
            errors.append((idx, str(e)))
    n_prefix = len(results[0].prefixes) if results else 0
    summary = []
    for i in range(n_prefix):
        ps = [r.prefixes[i] for r in results]
        summary.append({
            "prefix": i + 1,
            "budget_bits": ps[0].budget_bits,
            "mean_psnr": float(np.mean([p.psnr for p in ps])),
            "mean_payload_bits": float(np.mean([p.payload_bits for p in ps])),
            "max_payload_bits": max(p.payload_bits for p in ps),
            "saturated_fraction": float(np.mean([p.saturated for p in ps])),
        })
    return {"codec": codec, "results": results, "summary": summary,
            "n_images": len(results), "skipped": len(errors), "errors": errors}


# repetition code

def repeat_channel(z: torch.Tensor, channel: ChannelConfig, copies: int,
                   generator: torch.Generator | None = None) -> torch.Tensor:
    """Mean of ``copies`` independent channel outputs for the same codeword."""
    if copies < 1:
        raise ValueError(f"copies must be >= 1, got {copies}")
    outs = apply_channel([z] * copies, channel, generator)
    return torch.stack(outs).mean(dim=0)


@torch.no_grad()
def repetition_baseline(model: SchemeModel, x: torch.Tensor, channel: ChannelConfig, copies: int,
                        generator: torch.Generator | None = None) -> torch.Tensor:
    """Send one single-layer codeword ``copies`` times and decode the average."""
    if model.num_layers != 1:
        raise ValueError("the repetition baseline needs a single-layer model")
    plan = plan_for(x, model.plan)
    (z,) = encode(model.encoder, x, plan, channel.power)
    z_bar = repeat_channel(z, channel, copies, generator)
    feats = symbols_to_features([z_bar], plan.depths, plan.latent_hw)
    decoder = model.decoders[0] if hasattr(model, "decoders") else model.decoder
    return decoder(feats)
