"""Training loop, checkpoints and run manifests."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import platform
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable

import numpy as np
import torch

from .base import SchemeModel
from .channel import ChannelConfig, make_generator
from .data import Dataset, batch_iterator, normalize, train_val_split
from .schemes import from_architecture
from .sr_schemes import ResidualStack

log = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1
VAL_KEY = 0x7FFF_FFFF
LOSS_LOG_FIELDS = ("epoch", "train_loss", "val_loss", "wall_time")


class CheckpointError(RuntimeError):
    pass


class DivergenceError(RuntimeError):
    def __init__(self, msg: str, manifest: dict | None = None):
        super().__init__(msg)
        self.manifest = manifest


@dataclass
class TrainConfig:
    epochs: int = 20
    batch_size: int = 64
    lr: float = 1e-4
    seed: int = 0
    val_fraction: float = 0.02
    patience: int = 0          # 0 disables early stopping
    grad_clip: float = 0.0     # 0 disables clipping
    max_batches: int = 0       # 0 means full epochs; used for smoke runs
    lr_drop_epoch: int = 0     # from this epoch on the step size is lr * lr_drop; 0 keeps lr fixed
    lr_drop: float = 0.1

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.lr < 0 or self.lr_drop_epoch < 0:
            raise ValueError(f"invalid training config {self}")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError(f"val_fraction must be in [0, 1), got {self.val_fraction}")

    def to_dict(self) -> dict:
        return asdict(self)

    def lr_at(self, epoch: int) -> float:
        if self.lr_drop_epoch and epoch >= self.lr_drop_epoch:
            return self.lr * self.lr_drop
        return self.lr


def to_input(batch: np.ndarray) -> torch.Tensor:
    """uint8 ``[B, H, W, 3]`` -> float ``[B, 3, H, W]`` in [0, 1]."""
    return torch.from_numpy(normalize(batch)).permute(0, 3, 1, 2).contiguous()


def batch_generator(seed: int, stage: int, epoch: int, batch: int) -> torch.Generator:
    return make_generator(seed, stage, epoch, batch)


def parameter_digest(module: torch.nn.Module) -> str:
    h = hashlib.sha256()
    for name, t in module.state_dict().items():
        h.update(name.encode())
        h.update(t.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


def source_digest() -> str:
    h = hashlib.sha256()
    for p in sorted(Path(__file__).parent.glob("*.py")):
        h.update(p.name.encode())
        h.update(p.read_bytes())
    return h.hexdigest()[:16]


# checkpoints

def _sidecar(path: Path) -> Path:
    return path.with_suffix(".json")


def save_checkpoint(path, model: SchemeModel, optimizer: torch.optim.Optimizer | None = None,
                    **meta) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.BytesIO()
    torch.save({"model": model.state_dict(),
                "optimizer": optimizer.state_dict() if optimizer is not None else None}, buf)
    blob = buf.getvalue()
    tmp = path.with_suffix(".pt.tmp")
    tmp.write_bytes(blob)
    tmp.replace(path)
    sidecar = {
        "version": CHECKPOINT_VERSION,
        "architecture": model.architecture(),
        "architecture_hash": model.architecture_hash(),
        "sha256": hashlib.sha256(blob).hexdigest(),
        **meta,
    }
    _sidecar(path).write_text(json.dumps(sidecar, indent=2, sort_keys=True, default=str))
    return path


def read_checkpoint_meta(path) -> dict:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint {path} does not exist")
    if not _sidecar(path).exists():
        raise CheckpointError(f"checkpoint {path} has no sidecar {_sidecar(path).name}")
    return json.loads(_sidecar(path).read_text())


def load_checkpoint(path, model: SchemeModel | None = None,
                    optimizer: torch.optim.Optimizer | None = None) -> SchemeModel:
    """Load parameters into ``model`` (built from the sidecar when omitted)."""
    path = Path(path)
    meta = read_checkpoint_meta(path)
    if meta.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {meta.get('version')}")
    blob = path.read_bytes()
    if hashlib.sha256(blob).hexdigest() != meta["sha256"]:
        raise CheckpointError(f"checkpoint {path} is corrupt (sha256 mismatch)")
    if model is None:
        model = from_architecture(meta["architecture"])
    if model.architecture_hash() != meta["architecture_hash"]:
        raise CheckpointError(
            f"architecture mismatch: checkpoint {meta['architecture']} vs model {model.architecture()}")
    try:
        state = torch.load(io.BytesIO(blob), weights_only=True)
    except Exception as e:  # noqa: BLE001 - surface as a checkpoint problem
        raise CheckpointError(f"cannot decode checkpoint {path}: {e}") from e
    model.load_state_dict(state["model"])
    if optimizer is not None and state.get("optimizer") is not None:
        optimizer.load_state_dict(state["optimizer"])
    return model


# loop

def _loss_log_path(run_dir: Path, stage: int) -> Path:
    return run_dir / ("loss_log.csv" if stage == 0 else f"loss_log_stage{stage}.csv")


def _write_loss_log(path: Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=LOSS_LOG_FIELDS)
        w.writeheader()
        for r in rows:
            w.writerow({k: r[k] for k in LOSS_LOG_FIELDS})


def write_json(path: Path, obj: dict) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(obj, indent=2, sort_keys=True, default=str))
    tmp.replace(path)


@torch.no_grad()
def validation_loss(model: SchemeModel, images: np.ndarray, channel: ChannelConfig,
                    seed: int, stage: int, batch_size: int) -> float:
    if len(images) == 0:
        return float("nan")
    model.eval()
    total, count = 0.0, 0
    for i, batch in enumerate(batch_iterator(images, min(batch_size, len(images)))):
        g = batch_generator(seed, stage, VAL_KEY, i)
        total += float(model.loss(to_input(batch), channel, g)) * len(batch)
        count += len(batch)
    return total / count


def train(model: SchemeModel, dataset: Dataset, channel: ChannelConfig, cfg: TrainConfig,
          run_dir=None, stage: int = 0, resume: bool = False, config_snapshot: dict | None = None,
          on_epoch: Callable[[dict], None] | None = None) -> dict:
    """Minimize the scheme loss with Adam; returns the manifest dictionary.

    Batch order depends on ``(seed, epoch)`` and every channel draw on
    ``(seed, stage, epoch, batch)``, so identical inputs give identical runs.
    """
    torch.manual_seed(cfg.seed)
    run_dir = Path(run_dir) if run_dir is not None else None
    if run_dir:
        run_dir.mkdir(parents=True, exist_ok=True)
    train_set, val_set = (train_val_split(dataset, cfg.val_fraction, cfg.seed)
                          if cfg.val_fraction > 0 else (dataset, dataset.subset([])))
    params = model.trainable_parameters()
    if not params:
        raise ValueError("model has no trainable parameters")
    opt = torch.optim.Adam(params, lr=cfg.lr)

    manifest = {
        "version": CHECKPOINT_VERSION,
        "config": config_snapshot or {},
        "train": cfg.to_dict(),
        "channel": channel.to_dict(),
        "architecture": model.architecture(),
        "source_hash": source_digest(),
        "dataset": {"name": dataset.name, "split": dataset.split, "n": len(dataset),
                    "checksum": dataset.checksum()},
        "platform": {"python": platform.python_version(), "torch": torch.__version__},
        "stage": stage,
        "epochs": [],
        "status": "running",
        "started": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    ckpt_dir = run_dir / "checkpoints" if run_dir else None
    suffix = "" if stage == 0 else f"_stage{stage}"
    last_path = ckpt_dir / f"last{suffix}.pt" if ckpt_dir else None
    start_epoch = 1
    if resume and last_path is not None and last_path.exists():
        load_checkpoint(last_path, model, opt)
        meta = read_checkpoint_meta(last_path)
        start_epoch = int(meta["epoch"]) + 1
        manifest["epochs"] = list(meta.get("history", []))
        log.info("resuming at epoch %d from %s", start_epoch, last_path)

    best_val, best_state, stale = math.inf, None, 0
    for row in manifest["epochs"]:
        if row["val_loss"] < best_val:
            best_val = row["val_loss"]
    t0 = time.perf_counter()
    for epoch in range(start_epoch, cfg.epochs + 1):
        model.train()
        for group in opt.param_groups:
            group["lr"] = cfg.lr_at(epoch)
        total, count = 0.0, 0
        batches = batch_iterator(train_set, cfg.batch_size, shuffle=True,
                                 seed=hash_key(cfg.seed, epoch), drop_last=True)
        for b, batch in enumerate(batches):
            if cfg.max_batches and b >= cfg.max_batches:
                break
            g = batch_generator(cfg.seed, stage, epoch, b)
            loss = model.loss(to_input(batch), channel, g)
            if not torch.isfinite(loss):
                manifest["status"] = "diverged"
                manifest["diagnostic"] = {"epoch": epoch, "batch": b, "loss": loss.item()}
                if run_dir:
                    write_json(run_dir / "manifest.json", manifest)
                raise DivergenceError(f"non-finite loss at epoch {epoch}, batch {b}", manifest)
            opt.zero_grad(set_to_none=True)
            loss.backward()
            if cfg.grad_clip:
                norm = torch.nn.utils.clip_grad_norm_(params, cfg.grad_clip)
                if norm > cfg.grad_clip:
                    log.warning("gradient norm %.3g clipped at epoch %d batch %d", float(norm), epoch, b)
            opt.step()
            total += loss.item() * len(batch)
            count += len(batch)
        val = validation_loss(model, val_set.images, channel, cfg.seed, stage, cfg.batch_size)
        row = {"epoch": epoch, "train_loss": total / max(count, 1), "val_loss": val,
               "wall_time": round(time.perf_counter() - t0, 3)}
        manifest["epochs"].append(row)
        log.info("epoch %d train %.6f val %.6f", epoch, row["train_loss"], val)
        if on_epoch:
            on_epoch(row)
        if run_dir:
            _write_loss_log(_loss_log_path(run_dir, stage), manifest["epochs"])
            save_checkpoint(last_path, model, opt, epoch=epoch, history=manifest["epochs"])
        if cfg.patience:
            if val < best_val:
                best_val, stale = val, 0
                best_state = {k: v.clone() for k, v in model.state_dict().items()}
            else:
                stale += 1
                if stale >= cfg.patience:
                    log.info("early stop at epoch %d", epoch)
                    manifest["early_stopped"] = epoch
                    break
    if best_state is not None:
        model.load_state_dict(best_state)
    model.eval()
    manifest["status"] = "finished"
    manifest["finished"] = time.strftime("%Y-%m-%dT%H:%M:%S")
    if run_dir:
        final = save_checkpoint(ckpt_dir / f"final{suffix}.pt", model,
                                epoch=len(manifest["epochs"]), history=manifest["epochs"])
        manifest["checkpoint"] = str(final.relative_to(run_dir))
        write_json(run_dir / ("manifest.json" if stage == 0 else f"manifest_stage{stage}.json"), manifest)
    return manifest


def hash_key(*keys: int) -> int:
    return int(np.random.SeedSequence([int(k) & 0xFFFFFFFF for k in keys]).generate_state(1)[0])


def train_residual_layer(stack: ResidualStack, j: int, dataset: Dataset, channel: ChannelConfig,
                         cfg: TrainConfig, run_dir=None, **kw) -> dict:
    """Train layer ``j`` of a residual stack with every earlier layer frozen.

    Layer 1 runs on stage 0 with the same keys as a one-layer model, so it
    reproduces single-layer training exactly.
    """
    stack.begin_layer(j)
    frozen = [parameter_digest(layer) for layer in stack.layers[: j - 1]]
    manifest = train(stack, dataset, channel, cfg, run_dir, stage=j - 1, **kw)
    after = [parameter_digest(layer) for layer in stack.layers[: j - 1]]
    if frozen != after:
        raise RuntimeError(f"frozen layers changed while training layer {j}")
    stack.finish_layer(j)
    manifest["frozen_digests"] = frozen
    return manifest
