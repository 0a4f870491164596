"""Dataset assembly, the Adam training loop with best-validation checkpoint
selection, fine-tuning, and full-resolution inference.

Input encoding per sample (or per patch):
  channel 0: shading scaled to max 1
  channel 1: low-frequency depth, standardized over its valid mask
  channel 2: pattern image scaled to max 1
The regression target is the raw depth residual (ground truth minus
low-frequency) divided by the same standard deviation used for channel 1,
so the network always works in the normalized depth scale of its own
input window; inference multiplies the prediction back by the sample's
sigma before adding it to the low-frequency depth.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from . import unet
from .core import DepthMap, HifreqError, Rng
from .synth import SceneSpec
from .unet import UNetModel, masked_mse, unet_backward, unet_forward


class DegenerateImage(HifreqError):
    pass


class PatchTooLarge(HifreqError):
    pass


class EmptyDataset(HifreqError):
    pass


@dataclass
class Sample:
    shading: np.ndarray   # (H, W)
    lowfreq: DepthMap
    pattern: np.ndarray   # (H, W)
    gt: DepthMap
    scene: SceneSpec | None = None
    scene_id: str = ""

    def validate(self) -> "Sample":
        shp = self.gt.depth.shape
        if (self.shading.shape != shp or self.pattern.shape != shp
                or self.lowfreq.depth.shape != shp):
            raise HifreqError("sample field shapes differ")
        if not np.array_equal(self.gt.mask, self.lowfreq.mask):
            raise HifreqError("gt and low-frequency masks differ")
        return self


@dataclass
class ModelInput:
    x: np.ndarray     # (3, H, W)
    y: np.ndarray     # (1, H, W), raw residual in mm
    mask: np.ndarray  # (1, H, W)
    mu: float
    sigma: float


def make_input(s: Sample, shading_norm: str = "max") -> ModelInput:
    """Normalize a sample into network input channels and the residual target."""
    s.validate()
    max_sh = float(np.max(s.shading))
    if max_sh <= 0:
        raise DegenerateImage("shading image is all zero")
    valid = s.lowfreq.valid
    if not np.any(valid):
        raise DegenerateImage("empty valid mask")
    vals = s.lowfreq.depth[valid]
    mu = float(np.mean(vals))
    sigma = float(np.std(vals))
    if sigma == 0:
        raise DegenerateImage("low-frequency depth is constant (sigma == 0)")

    if shading_norm == "max":
        ch0 = s.shading / max_sh
    elif shading_norm == "meanvar":
        sh_vals = s.shading[valid]
        sd = float(np.std(sh_vals))
        if sd == 0:
            raise DegenerateImage("shading is constant under meanvar normalization")
        ch0 = (s.shading - float(np.mean(sh_vals))) / sd
    else:
        raise HifreqError(f"unknown shading_norm {shading_norm!r}")

    mask = s.lowfreq.mask
    ch1 = (s.lowfreq.depth - mu) / sigma * mask
    max_p = float(np.max(s.pattern))
    ch2 = s.pattern / max_p if max_p > 0 else np.zeros_like(s.pattern)
    x = np.stack([ch0, ch1, ch2])
    y = ((s.gt.depth - s.lowfreq.depth) * mask)[None]
    return ModelInput(x, y, mask[None], mu, sigma)


def extract_patches(sample: Sample, patch: int, rng: Rng | None = None) -> list:
    """Non-overlapping tiling; patches with < 50% valid coverage are dropped.

    When the image size is not a multiple of `patch`, the tiling origin is
    jittered within the slack using `rng` (deterministically zero without one).
    """
    H, W = sample.gt.depth.shape
    if patch > H or patch > W:
        raise PatchTooLarge(f"patch {patch} exceeds image {H}x{W}")
    slack_r, slack_c = H % patch, W % patch
    off_r = int(rng.integers(0, slack_r + 1)) if (rng and slack_r) else 0
    off_c = int(rng.integers(0, slack_c + 1)) if (rng and slack_c) else 0
    out = []
    for r in range(off_r, H - patch + 1, patch):
        for c in range(off_c, W - patch + 1, patch):
            sl = (slice(r, r + patch), slice(c, c + patch))
            if np.mean(sample.gt.mask[sl]) < 0.5:
                continue
            out.append(Sample(
                shading=sample.shading[sl].copy(),
                lowfreq=DepthMap(sample.lowfreq.depth[sl].copy(), sample.lowfreq.mask[sl].copy()),
                pattern=sample.pattern[sl].copy(),
                gt=DepthMap(sample.gt.depth[sl].copy(), sample.gt.mask[sl].copy()),
                scene=sample.scene,
                scene_id=f"{sample.scene_id}+r{r}c{c}",
            ))
    return out


def augment_luminance(x: np.ndarray, rng: Rng, lum_range: tuple = (0.5, 1.5)) -> np.ndarray:
    """Scale the shading and pattern channels by one shared random factor."""
    lo, hi = lum_range
    if lo > hi:
        raise HifreqError(f"bad luminance range {lum_range}")
    s = float(rng.uniform(lo, hi))
    out = x.copy()
    out[0] *= s
    out[2] *= s
    return out


@dataclass
class TrainConfig:
    epochs: int = 400
    lr: float = 1e-3
    batch: int = 8
    patch: int = 120
    val_fraction: float = 0.30
    lum_range: tuple = (0.5, 1.5)
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    in_channels: int = 3
    base_width: int = 32
    levels: int = 3
    shading_norm: str = "max"

    def validate(self) -> "TrainConfig":
        div = 1 << self.levels
        if self.patch % div:
            raise HifreqError(f"patch {self.patch} not divisible by {div}")
        if not (0.0 < self.val_fraction < 1.0):
            raise HifreqError("val_fraction must be in (0, 1)")
        return self


@dataclass
class TrainRecord:
    train_losses: list
    val_losses: list
    best_epoch: int
    checkpoint: str | None = None

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf)
        w.writerow(["epoch", "train_loss", "val_loss"])
        for i, (t, v) in enumerate(zip(self.train_losses, self.val_losses)):
            w.writerow([i, repr(t), repr(v)])
        return buf.getvalue()

    def save_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            f.write(self.to_csv())


@dataclass
class SceneDataset:
    """Scenes plus an optional predefined train/val split ("train"/"val")."""

    samples: list
    split: list | None = None


@dataclass
class _PatchExample:
    x: np.ndarray
    y: np.ndarray
    mask: np.ndarray


class Adam:
    def __init__(self, params, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params  # list of (name, array) sharing model storage
        self.lr = lr
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {n: np.zeros_like(a) for n, a in params}
        self.v = {n: np.zeros_like(a) for n, a in params}
        self.t = 0

    def step(self, grads: dict) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        corr1 = 1.0 - b1 ** self.t
        corr2 = 1.0 - b2 ** self.t
        for name, arr in self.params:
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= b1
            m += (1 - b1) * g
            v *= b2
            v += (1 - b2) * g * g
            mhat = m / corr1
            vhat = v / corr2
            arr -= (self.lr * mhat / (np.sqrt(vhat) + self.eps)).astype(arr.dtype)


def _split_dataset(dataset: SceneDataset, cfg: TrainConfig):
    if dataset.split is not None:
        if len(dataset.split) != len(dataset.samples):
            raise HifreqError("split labels do not match dataset length")
        train = [s for s, lab in zip(dataset.samples, dataset.split) if lab == "train"]
        val = [s for s, lab in zip(dataset.samples, dataset.split) if lab == "val"]
        return train, val
    n = len(dataset.samples)
    perm = Rng(cfg.seed).spawn(500).permutation(n)
    n_val = int(round(n * cfg.val_fraction))
    val_idx = set(int(i) for i in perm[:n_val])
    train = [s for i, s in enumerate(dataset.samples) if i not in val_idx]
    val = [s for i, s in enumerate(dataset.samples) if i in val_idx]
    return train, val


def _build_examples(samples, cfg: TrainConfig, rng: Rng, dtype) -> list:
    out = []
    for s in samples:
        for p in extract_patches(s, cfg.patch, rng):
            try:
                mi = make_input(p, cfg.shading_norm)
            except DegenerateImage:
                continue
            out.append(_PatchExample(
                x=mi.x.astype(dtype),
                y=(mi.y / mi.sigma).astype(dtype),
                mask=mi.mask.astype(dtype),
            ))
    return out


def _epoch_loss(model, examples, batch):
    total, wsum = 0.0, 0.0
    for lo in range(0, len(examples), batch):
        ex = examples[lo:lo + batch]
        x = np.stack([e.x for e in ex])
        y = np.stack([e.y for e in ex])
        m = np.stack([e.mask for e in ex])
        pred = unet_forward(model, x)
        loss = masked_mse(pred, y, m)
        w = float(np.sum(m, dtype=np.float64))
        total += loss.value * w
        wsum += w
    return total / wsum


def train(model: UNetModel, dataset: SceneDataset, cfg: TrainConfig,
          checkpoint_out=None) -> TrainRecord:
    """Adam over shuffled patches; keeps the weights of the best-validation
    epoch (first occurrence on ties) and leaves `model` holding them."""
    cfg.validate()
    dtype = model.dtype
    build_rng = Rng(cfg.seed).spawn(1)
    train_scenes, val_scenes = _split_dataset(dataset, cfg)
    train_ex = _build_examples(train_scenes, cfg, build_rng, dtype)
    val_ex = _build_examples(val_scenes, cfg, build_rng, dtype)
    if not train_ex:
        raise EmptyDataset("no training patches after filtering")

    opt = Adam(model.params(), cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)
    train_losses, val_losses = [], []
    best_val = np.inf
    best_epoch = -1
    best_params = {n: a.copy() for n, a in model.params()}

    for epoch in range(cfg.epochs):
        order = Rng(cfg.seed).spawn(10_000 + epoch).permutation(len(train_ex))
        aug_rng = Rng(cfg.seed).spawn(50_000 + epoch)
        total, wsum = 0.0, 0.0
        for lo in range(0, len(order), cfg.batch):
            ex = [train_ex[i] for i in order[lo:lo + cfg.batch]]
            x = np.stack([augment_luminance(e.x, aug_rng, cfg.lum_range) for e in ex])
            y = np.stack([e.y for e in ex])
            m = np.stack([e.mask for e in ex])
            pred, cache = unet_forward(model, x, want_cache=True)
            loss = masked_mse(pred, y, m)
            grads = unet_backward(model, cache, loss.grad)
            opt.step(grads)
            w = float(np.sum(m, dtype=np.float64))
            total += loss.value * w
            wsum += w
        train_losses.append(total / wsum)
        val = _epoch_loss(model, val_ex, cfg.batch) if val_ex else train_losses[-1]
        val_losses.append(val)
        if val < best_val:
            best_val = val
            best_epoch = epoch
            best_params = {n: a.copy() for n, a in model.params()}

    for name, arr in model.params():
        arr[...] = best_params[name]
    path = None
    if checkpoint_out is not None:
        unet.save_checkpoint(model, checkpoint_out)
        path = str(checkpoint_out)
    return TrainRecord(train_losses, val_losses, best_epoch, path)


def finetune(checkpoint, target_dataset: SceneDataset, cfg: TrainConfig,
             checkpoint_out=None) -> TrainRecord:
    """Continue training from a checkpoint with all layers trainable."""
    cfg.validate()
    model = unet.model_from_checkpoint(checkpoint)
    if (model.in_channels, model.base_width, model.levels) != \
            (cfg.in_channels, cfg.base_width, cfg.levels):
        raise unet.ArchMismatch(
            f"checkpoint arch ({model.in_channels}, {model.base_width}, {model.levels}) "
            f"!= config ({cfg.in_channels}, {cfg.base_width}, {cfg.levels})")
    return train(model, target_dataset, cfg, checkpoint_out=checkpoint_out)


def infer(model: UNetModel, sample: Sample, shading_norm: str = "max") -> DepthMap:
    """Low-frequency depth plus the predicted residual, rescaled by the
    sample's own normalization sigma. Mask is copied from the input."""
    mi = make_input(sample, shading_norm)
    H, W = mi.x.shape[1:]
    x = mi.x[None].astype(model.dtype)
    out = unet_forward(model, x)[0, 0].astype(np.float64)
    mask = sample.lowfreq.mask
    depth = (sample.lowfreq.depth + mi.sigma * out) * mask
    return DepthMap(depth, mask.copy())
