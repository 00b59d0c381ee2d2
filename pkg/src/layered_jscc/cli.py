"""Command-line entry point: ``layered-jscc {train,evaluate,transmit,sweep,baseline,plot}``."""

from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import os
import sys
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import torch

from . import plots
from .baselines import FeatureUnavailable, bit_budget, digital_baseline
from .channel import ChannelConfig, make_generator
from .config import (ConfigError, ExperimentConfig, add_config_flags, apply_overrides, dump_config,
                     load_config)
from .data import DATA_ROOT_ENV, load_cifar10, load_image, pad_to_multiple, save_image
from .evaluation import (evaluate, layer_count_sweep, snr_mismatch_sweep, write_results_csv)
from .metrics import psnr
from .schemes import build_model
from .subsets import parse_subset
from .training import (CheckpointError, load_checkpoint, read_checkpoint_meta, save_checkpoint,
                       to_input, train, train_residual_layer, write_json)

log = logging.getLogger("layered_jscc")


class LockError(RuntimeError):
    pass


@contextmanager
def run_lock(run_dir: Path):
    """Refuse concurrent writers to one run directory."""
    run_dir.mkdir(parents=True, exist_ok=True)
    lock = run_dir / ".lock"
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise LockError(f"{run_dir} is locked by another process ({lock})") from None
    os.write(fd, str(os.getpid()).encode())
    os.close(fd)
    try:
        yield
    finally:
        lock.unlink(missing_ok=True)


def parse_snrs(text) -> list[float]:
    """``"0:19"`` (inclusive, step 1), ``"0:19:2"``, ``"1,5,10"`` or a list."""
    if isinstance(text, (list, tuple)):
        return [float(x) for x in text]
    text = str(text).strip().strip("[]")
    if ":" in text:
        parts = [float(p) for p in text.split(":")]
        lo, hi = parts[0], parts[1]
        step = parts[2] if len(parts) > 2 else 1.0
        if step <= 0:
            raise ValueError(f"SNR range step must be positive: {text!r}")
        n = int(np.floor((hi - lo) / step + 1e-9))
        return [lo + i * step for i in range(n + 1)]
    return [float(p) for p in text.split(",") if p.strip()]


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if getattr(args, "config", None) else ExperimentConfig()
    return apply_overrides(cfg, args)


def _data_root(cfg: ExperimentConfig):
    return cfg.data.root or os.environ.get(DATA_ROOT_ENV)


def _test_images(cfg: ExperimentConfig) -> np.ndarray:
    images = load_cifar10(_data_root(cfg), "test", download=cfg.data.download).images
    return images[:cfg.evaluation.n_images] if cfg.evaluation.n_images else images


def train_from_config(cfg: ExperimentConfig, run_dir: Path, resume: bool = False):
    plan = cfg.plan.build()
    model = build_model(cfg.scheme.name, plan, seed=cfg.scheme.seed, **cfg.scheme.options())
    dataset = load_cifar10(_data_root(cfg), "train", download=cfg.data.download)
    channel = cfg.channel.build()
    snapshot = cfg.to_dict()
    if cfg.scheme.name == "sr_residual":
        manifests = [train_residual_layer(model, j, dataset, channel, cfg.training, run_dir,
                                          resume=resume, config_snapshot=snapshot)
                     for j in range(1, model.num_layers + 1)]
        manifest = manifests[0]
        manifest["stages"] = manifests[1:]
    else:
        manifest = train(model, dataset, channel, cfg.training, run_dir, resume=resume,
                         config_snapshot=snapshot)
    final = save_checkpoint(run_dir / "checkpoints" / "model.pt", model, config=snapshot)
    manifest["checkpoint"] = str(final.relative_to(run_dir))
    write_json(run_dir / "manifest.json", manifest)
    (run_dir / "config.yaml").write_text(dump_config(cfg))
    return model, run_dir / "manifest.json"


# subcommands

def cmd_train(args) -> int:
    cfg = _config(args)
    run_dir = Path(args.run_dir)
    with run_lock(run_dir):
        _, manifest = train_from_config(cfg, run_dir, resume=args.resume)
    print(manifest)
    return 0


def _load(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint {path} not found")
    meta = read_checkpoint_meta(path)
    return load_checkpoint(path), meta


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    model, meta = _load(args.checkpoint)
    snrs = parse_snrs(cfg.evaluation.snrs)
    subsets = [parse_subset(s, model.num_layers) for s in cfg.evaluation.subsets] \
        if cfg.evaluation.subsets else None
    train_snr = (meta.get("config") or {}).get("channel", {}).get("snr_db")
    rows = evaluate(model, _test_images(cfg), snrs, subsets, R=cfg.evaluation.realizations,
                    seed=cfg.evaluation.seed, channel_kind=cfg.channel.kind,
                    fading_variance=cfg.channel.fading_variance, train_snr=train_snr,
                    batch_size=cfg.evaluation.batch_size)
    run_dir = Path(args.run_dir)
    with run_lock(run_dir):
        out = write_results_csv(rows, run_dir / "results.csv")
        plots.psnr_vs_snr(out, run_dir / "plots" / "psnr_vs_snr.png")
    print(out)
    return 0


def cmd_transmit(args) -> int:
    model, _ = _load(args.checkpoint)
    image = load_image(args.image)
    padded, (h, w) = pad_to_multiple(image, 4)
    x = to_input(padded[None])
    channel = ChannelConfig(args.channel_kind, float(args.snr))
    subsets = [parse_subset(list(range(1, k + 1)), model.num_layers) for k in args.keep or []]
    subsets += [parse_subset(s, model.num_layers) for s in args.subset or []]
    if not subsets:
        subsets = [parse_subset(list(range(1, model.num_layers + 1)), model.num_layers)]
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with torch.no_grad():
        recons = model.reconstruct(x, channel, make_generator(args.seed), subsets)
    report = {}
    for s in subsets:
        rec = recons[s.bitmask][0].permute(1, 2, 0).numpy()
        pix = np.floor(np.clip(rec, 0, 1) * 255 + 0.5).astype(np.uint8)[:h, :w]
        path = out_dir / f"{Path(args.image).stem}_{s.binary()}.png"
        save_image(path, pix)
        report[s.binary()] = {"file": str(path), "psnr": psnr(image, pix)}
        print(f"{s.binary()}  {report[s.binary()]['psnr']:.2f} dB  {path}")
    (out_dir / "transmit.json").write_text(json.dumps(report, indent=2, sort_keys=True))
    return 0


def _sweep_model(cfg: ExperimentConfig, key, run_dir: Path, **changes):
    """Load the checkpoint listed for ``key`` or train it when allowed."""
    for k, path in (cfg.sweep.checkpoints or {}).items():
        if str(k) == str(key) or (_as_float(k) is not None and _as_float(k) == _as_float(key)):
            return load_checkpoint(path)
    if not cfg.sweep.train_missing:
        raise FileNotFoundError(f"no checkpoint for sweep point {key!r}; list it under "
                                f"sweep.checkpoints or set sweep.train_missing")
    sub = copy.deepcopy(cfg)
    for path, value in changes.items():
        section, name = path.split(".")
        setattr(getattr(sub, section), name, value)
    model, _ = train_from_config(sub, run_dir / "models" / str(key))
    return model


def _as_float(v):
    try:
        return float(v)
    except (TypeError, ValueError):
        return None


def cmd_sweep(args) -> int:
    cfg = _config(args)
    kind = args.kind or cfg.sweep.kind
    run_dir = Path(args.run_dir)
    ev = cfg.evaluation
    with run_lock(run_dir):
        images = _test_images(cfg)
        common = dict(R=ev.realizations, seed=ev.seed, batch_size=ev.batch_size)
        if kind == "mismatch":
            models = {float(s): _sweep_model(cfg, s, run_dir, **{"channel.snr_db": float(s)})
                      for s in cfg.sweep.train_snrs}
            rows, envelope = snr_mismatch_sweep(models, images, parse_snrs(cfg.sweep.test_snrs),
                                                cfg.channel.kind, **common)
            write_results_csv(envelope, run_dir / "envelope.csv")
            out = write_results_csv(rows, run_dir / "results.csv")
            plots.psnr_vs_snr(out, run_dir / "plots" / "mismatch.png")
        elif kind == "layer_count":
            c = cfg.sweep.total_c
            rows = layer_count_sweep(
                lambda L: _sweep_model(cfg, L, run_dir, **{"plan.depths": [c // L] * L}),
                c, cfg.sweep.layer_counts, images, cfg.channel.snr_db,
                channel_kind=cfg.channel.kind, **common)
            out = write_results_csv(rows, run_dir / "results.csv")
            plots.psnr_vs_ratio(out, run_dir / "plots" / "layer_count.png")
        elif kind in ("tradeoff_lambda", "tradeoff_alpha1", "tradeoff_alpha2"):
            rows = []
            for w in cfg.sweep.grid:
                w = float(w)
                if kind == "tradeoff_lambda":
                    changes = {"scheme.name": "sr_multi", "scheme.weights": [w, 1.0 - w]}
                else:
                    changes = {"scheme.name": "md_multi", "scheme.mode": kind.split("_")[1],
                               "scheme.alpha": w}
                model = _sweep_model(cfg, w, run_dir, **changes)
                rows += evaluate(model, images, [cfg.channel.snr_db], channel_kind=cfg.channel.kind,
                                 train_snr=cfg.channel.snr_db, extra={"weight": w}, **common)
            out = write_results_csv(rows, run_dir / "results.csv")
            full = format(2 ** len(cfg.plan.depths) - 1, f"0{len(cfg.plan.depths)}b")
            base = format(1, f"0{len(cfg.plan.depths)}b")
            plots.tradeoff(out, run_dir / "plots" / f"{kind}.png", base, full)
        else:
            raise ConfigError(f"unknown sweep kind {kind!r}")
        write_json(run_dir / "manifest.json", {"command": "sweep", "kind": kind,
                                               "config": cfg.to_dict(), "results": "results.csv"})
    print(out)
    return 0


def cmd_baseline(args) -> int:
    cfg = _config(args)
    b = cfg.baseline
    uses = b.channel_uses or list(cfg.plan.build().channel_uses)
    images = load_cifar10(_data_root(cfg), "test", download=cfg.data.download).images[:b.n_images]
    run_dir = Path(args.run_dir)
    rows = []
    for snr in parse_snrs(b.snrs):
        budget = bit_budget(uses, snr)
        try:
            res = digital_baseline(images, b.codec, budget)
        except FeatureUnavailable as e:
            print(f"error: {e}", file=sys.stderr)
            return 3
        for s in res["summary"]:
            rows.append({"codec": b.codec, "snr_db": snr, **s, "n_images": res["n_images"],
                         "skipped": res["skipped"]})
    with run_lock(run_dir):
        out = run_dir / "results.csv"
        with open(out, "w", newline="") as f:
            f.write("# payload excludes codestream headers; saturated prefixes report the codec floor\n")
            w = csv.DictWriter(f, fieldnames=list(rows[0]), lineterminator="\n")
            w.writeheader()
            w.writerows(rows)
        plots.baseline_curve(out, run_dir / "plots" / "baseline.png")
    print(out)
    return 0


def cmd_plot(args) -> int:
    fn = {"snr": plots.psnr_vs_snr, "ratio": plots.psnr_vs_ratio,
          "baseline": plots.baseline_curve}[args.kind]
    print(fn(args.csv, args.out))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="layered-jscc", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("--config", help="YAML experiment config")
        add_config_flags(sp)
        return sp

    t = with_config(sub.add_parser("train", help="train a scheme and write a run directory"))
    t.add_argument("--run-dir", required=True)
    t.add_argument("--resume", action="store_true", help="continue from checkpoints/last.pt")
    t.set_defaults(fn=cmd_train)

    e = with_config(sub.add_parser("evaluate", help="PSNR table over test SNRs and subsets"))
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--run-dir", required=True)
    e.add_argument("--snrs", dest="cfg__evaluation__snrs", metavar="SNRS",
                   help="alias of --evaluation.snrs, e.g. 0:19 or 1,5,10")
    e.add_argument("--realizations", dest="cfg__evaluation__realizations", metavar="R",
                   help="alias of --evaluation.realizations (default 10)")
    e.add_argument("--subsets", dest="cfg__evaluation__subsets", metavar="LIST",
                   help='alias of --evaluation.subsets, e.g. ["01","11"]')
    e.set_defaults(fn=cmd_evaluate)

    x = sub.add_parser("transmit", help="send one image and save the reconstructions")
    x.add_argument("image")
    x.add_argument("--checkpoint", required=True)
    x.add_argument("--snr", type=float, default=10.0)
    x.add_argument("--channel-kind", default="awgn", choices=("awgn", "rayleigh_slow"))
    x.add_argument("--keep", action="append", type=int,
                   help="number of leading layers received; repeatable")
    x.add_argument("--subset", action="append",
                   help="received subset as a bitmask (101) or list ([1,3]); repeatable")
    x.add_argument("--seed", type=int, default=0)
    x.add_argument("--out-dir", required=True)
    x.set_defaults(fn=cmd_transmit)

    s = with_config(sub.add_parser("sweep", help="mismatch, layer-count and trade-off sweeps"))
    s.add_argument("--kind", choices=("mismatch", "layer_count", "tradeoff_lambda",
                                      "tradeoff_alpha1", "tradeoff_alpha2"))
    s.add_argument("--run-dir", required=True)
    s.set_defaults(fn=cmd_sweep)

    b = with_config(sub.add_parser("baseline", help="digital separation baseline"))
    b.add_argument("--run-dir", required=True)
    b.set_defaults(fn=cmd_baseline)

    pl = sub.add_parser("plot", help="render a figure from a results CSV")
    pl.add_argument("csv")
    pl.add_argument("--kind", choices=("snr", "ratio", "baseline"), default="snr")
    pl.add_argument("--out", required=True)
    pl.set_defaults(fn=cmd_plot)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        return args.fn(args)
    except (ConfigError, FileNotFoundError, CheckpointError, LockError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
