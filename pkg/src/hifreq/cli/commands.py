"""Command-line entry points.

Commands: gen, train, finetune, infer, eval, render-preview.
Exit codes: 0 ok, 1 usage error, 2 I/O error, 3 data/contract violation.
Every command is reproducible from (config, seed) alone.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from .. import evaluation, unet
from ..core import DepthMap, HifreqError, Rng
from ..training import SceneDataset, TrainRecord, finetune, infer, train
from . import config as cfgmod
from . import dataset as dsmod
from .imageio import save_loss_plot, write_pfm, write_png_colormap, write_png_gray

logger = logging.getLogger("hifreq")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _build_parser() -> _Parser:
    p = _Parser(prog="hifreq", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", help="YAML experiment config")
        sp.add_argument("--preset", choices=["desk", "paper"], default="desk")
        sp.add_argument("--seed", type=int, help="override config seed")
        sp.add_argument("--out", help="output directory (default from config)")

    g = sub.add_parser("gen", help="render a synthetic dataset")
    common(g)
    g.add_argument("--count", type=int, default=600)
    g.add_argument("--pseudo-real", action="store_true",
                   help="use the shifted target domain variant")

    t = sub.add_parser("train", help="train from scratch on a dataset")
    common(t)
    t.add_argument("--manifest", required=True)
    t.add_argument("--epochs", type=int)

    f = sub.add_parser("finetune", help="continue training from a checkpoint")
    common(f)
    f.add_argument("--manifest", required=True)
    f.add_argument("--checkpoint", required=True, help="base model weights")
    f.add_argument("--epochs", type=int)

    i = sub.add_parser("infer", help="predict dense depth for every scene")
    common(i)
    i.add_argument("--manifest", required=True)
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--split", choices=["train", "val"], default=None)

    e = sub.add_parser("eval", help="patch-normalized RMSE report")
    common(e)
    e.add_argument("--manifest", required=True)
    e.add_argument("--checkpoint", action="append", default=[],
                   help="model checkpoint (repeatable)")
    e.add_argument("--split", choices=["train", "val"], default="val")
    e.add_argument("--oracle", action="store_true",
                   help="include a perfect oracle that predicts ground truth")
    e.add_argument("--error-maps", action="store_true")

    r = sub.add_parser("render-preview", help="render one scene to PNG previews")
    common(r)
    r.add_argument("--index", type=int, default=0)
    return p


def _load_config(args) -> cfgmod.ExperimentConfig:
    if args.config:
        cfg = cfgmod.load_yaml(args.config)
    else:
        cfg = cfgmod.preset(args.preset)
    if args.seed is not None:
        cfg.seed = args.seed
    if args.out is not None:
        cfg.out_dir = args.out
    if getattr(args, "epochs", None) is not None:
        cfg.train.epochs = args.epochs
    return cfg


def _out_dir(cfg) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_gen(args) -> int:
    cfg = _load_config(args)
    if args.pseudo_real:
        cfg = cfgmod.pseudo_real_variant(cfg)
    out = _out_dir(cfg)
    manifest, skipped = dsmod.generate_dataset(cfg, args.count, out)
    cfgmod.save_yaml(cfg, out / "config.yaml")
    print(f"wrote {manifest} ({args.count - skipped} scenes, {skipped} skipped)")
    return 0


def cmd_train(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(cfg)
    data = dsmod.load_dataset(args.manifest)
    model = unet.build_unet(cfg.train.in_channels, cfg.train.base_width,
                            cfg.train.levels, rng=Rng(cfg.seed).spawn(7))
    ckpt = out / "model.unw"
    record = train(model, data, cfg.train, checkpoint_out=ckpt)
    record.save_csv(out / "train_log.csv")
    save_loss_plot(record.train_losses, record.val_losses, out / "loss_curve.png")
    print(f"best epoch {record.best_epoch}, val loss {record.val_losses[record.best_epoch]:.6g}")
    print(f"checkpoint: {ckpt}")
    return 0


def cmd_finetune(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(cfg)
    data = dsmod.load_dataset(args.manifest)
    ft_cfg = cfg.train
    ft_cfg.epochs = args.epochs if args.epochs is not None else 50
    ft_cfg.lr = min(ft_cfg.lr, 1e-4)
    ckpt = out / "model_finetuned.unw"
    record = finetune(args.checkpoint, data, ft_cfg, checkpoint_out=ckpt)
    record.save_csv(out / "finetune_log.csv")
    save_loss_plot(record.train_losses, record.val_losses, out / "finetune_curve.png")
    print(f"best epoch {record.best_epoch}")
    print(f"checkpoint: {ckpt}")
    return 0


def cmd_infer(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(cfg)
    model = unet.model_from_checkpoint(args.checkpoint)
    data = dsmod.load_dataset(args.manifest, split=args.split)
    for sample in data.samples:
        pred = infer(model, sample, cfg.train.shading_norm)
        write_pfm(out / f"{sample.scene_id}_pred.pfm", pred.depth * pred.mask)
    print(f"wrote {len(data.samples)} predictions to {out}")
    return 0


def cmd_eval(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(cfg)
    data = dsmod.load_dataset(args.manifest, split=args.split)
    if not data.samples:
        raise evaluation.EmptyDataset(f"no scenes with split={args.split}")
    models = []
    for path in args.checkpoint:
        model = unet.model_from_checkpoint(path)
        name = Path(path).stem
        models.append((name, lambda s, m=model: infer(m, s, cfg.train.shading_norm)))
    if args.oracle:
        models.append(("oracle", lambda s: s.gt.copy()))
    report = evaluation.compare(models, data.samples, patch=cfg.eval.patch)
    report.save_csv(out / "eval_report.csv")
    for name, agg in report.aggregates.items():
        print(f"{name:>12s}  rmse_raw={agg['rmse_raw']:.4f}  rmse_norm={agg['rmse_norm']:.4f}")
    if args.error_maps:
        for (name, predictor), sample in (
                (m, s) for m in [("lowfreq", evaluation.lowfreq_baseline)] + models
                for s in data.samples):
            err = evaluation.error_map(predictor(sample), sample.gt)
            write_png_colormap(out / f"{sample.scene_id}_{name}_err.png",
                               err, vmax=cfg.eval.error_scale_mm)
    print(f"report: {out / 'eval_report.csv'}")
    return 0


def cmd_render_preview(args) -> int:
    cfg = _load_config(args)
    out = _out_dir(cfg)
    sample = dsmod.render_scene_sample(cfg, args.index)
    sid = sample.scene_id
    write_pfm(out / f"{sid}_shading.pfm", sample.shading)
    write_png_gray(out / f"{sid}_shading.png", sample.shading)
    write_png_gray(out / f"{sid}_pattern.png", sample.pattern)
    gt = sample.gt
    lo, hi = float(gt.depth[gt.valid].min()), float(gt.depth[gt.valid].max())
    write_png_gray(out / f"{sid}_depth.png", gt.depth, vmin=lo, vmax=max(hi, lo + 1e-6))
    err = evaluation.error_map(sample.lowfreq, gt)
    write_png_colormap(out / f"{sid}_lowfreq_err.png", err, vmax=cfg.eval.error_scale_mm)
    print(f"previews for {sid} in {out}")
    return 0


_DISPATCH = {
    "gen": cmd_gen,
    "train": cmd_train,
    "finetune": cmd_finetune,
    "infer": cmd_infer,
    "eval": cmd_eval,
    "render-preview": cmd_render_preview,
}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        return _DISPATCH[args.command](args)
    except OSError as err:
        print(f"I/O error: {err}", file=sys.stderr)
        return 2
    except HifreqError as err:
        print(f"error: {type(err).__name__}: {err}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
