"""Evaluation protocol: RMSE after sliding-window mean/std matching.

Shading only constrains shape up to scale and convexity, so raw depth
RMSE punishes reconstructions that are locally correct but globally
rescaled or flipped.  patch_normalize() therefore adjusts, at every
pixel, the local mean and standard deviation of the prediction inside a
49x49 window to match ground truth before the error is computed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import DepthMap, EmptyMask, HifreqError


class BadPatch(HifreqError):
    pass


class EmptyDataset(HifreqError):
    pass


MIN_COVERAGE = 0.25   # windows with less valid fraction are excluded from RMSE
SIGMA_EPS = 1e-9      # mm, guards division by a flat-window sigma


def _window_sums(a: np.ndarray, patch: int) -> np.ndarray:
    """Sum of `a` over a patch x patch window centered at each pixel,
    with zeros outside the image (clipped integral image)."""
    H, W = a.shape
    P = np.zeros((H + 1, W + 1), dtype=np.float64)
    np.cumsum(np.cumsum(a, axis=0), axis=1, out=P[1:, 1:])
    r = patch // 2
    rows = np.arange(H)
    cols = np.arange(W)
    r0 = np.clip(rows - r, 0, H)
    r1 = np.clip(rows + r + 1, 0, H)
    c0 = np.clip(cols - r, 0, W)
    c1 = np.clip(cols + r + 1, 0, W)
    return (P[np.ix_(r1, c1)] - P[np.ix_(r0, c1)]
            - P[np.ix_(r1, c0)] + P[np.ix_(r0, c0)])


def _masked_window_stats(values: np.ndarray, mask: np.ndarray, patch: int):
    """Per-pixel (mean, std, count) over masked pixels in the window.

    Values are pre-shifted by their global masked mean so the integral
    images stay small and the variance difference does not cancel badly.
    """
    cnt = _window_sums(mask, patch)
    safe = np.maximum(cnt, 1.0)
    offset = float(np.sum(values * mask, dtype=np.float64) / max(1.0, mask.sum()))
    v = (values - offset) * mask
    s1 = _window_sums(v, patch)
    s2 = _window_sums(v * v, patch)
    mean_sh = s1 / safe
    var = s2 / safe - mean_sh ** 2
    std = np.sqrt(np.maximum(var, 0.0))
    return mean_sh + offset, std, cnt


def patch_normalize(pred: DepthMap, gt: DepthMap, patch: int = 49) -> DepthMap:
    """Match the prediction's local mean/std to ground truth's, per pixel.

    output = pred * (sigma_g / max(sigma_o, eps)) + (mu_g - mu_o * ratio),
    with the statistics taken over the masked pixels of the window
    centered at each output pixel.  The output mask drops pixels whose
    window holds under 25% valid coverage.
    """
    if patch % 2 == 0:
        raise BadPatch(f"patch must be odd, got {patch}")
    H, W = gt.depth.shape
    if patch > min(H, W):
        raise BadPatch(f"patch {patch} larger than image {H}x{W}")
    if pred.depth.shape != gt.depth.shape or not np.array_equal(pred.mask, gt.mask):
        raise HifreqError("pred and gt must share shape and mask")

    mask = gt.mask
    mu_o, sd_o, cnt = _masked_window_stats(pred.depth, mask, patch)
    mu_g, sd_g, _ = _masked_window_stats(gt.depth, mask, patch)
    ratio = sd_g / np.maximum(sd_o, SIGMA_EPS)
    out = pred.depth * ratio + (mu_g - mu_o * ratio)
    out_mask = mask * (cnt >= MIN_COVERAGE * patch * patch)
    return DepthMap(out * out_mask, out_mask)


def rmse(pred: np.ndarray, gt: np.ndarray, mask: np.ndarray) -> float:
    """sqrt(mean of squared error over mask == 1), in mm."""
    msum = float(np.sum(mask, dtype=np.float64))
    if msum == 0:
        raise EmptyMask("rmse over an empty mask")
    d = (np.asarray(pred, dtype=np.float64) - np.asarray(gt, dtype=np.float64)) * mask
    return float(np.sqrt(np.sum(d * d, dtype=np.float64) / msum))


def rmse_maps(pred: DepthMap, gt: DepthMap) -> float:
    """RMSE over the intersection of both masks."""
    return rmse(pred.depth, gt.depth, pred.mask * gt.mask)


def error_map(pred: DepthMap, gt: DepthMap) -> np.ndarray:
    """Per-pixel absolute error on the common mask, zero elsewhere."""
    if pred.depth.shape != gt.depth.shape:
        raise HifreqError("error_map needs equal shapes")
    m = pred.mask * gt.mask
    return np.abs(pred.depth - gt.depth) * m


@dataclass
class EvalReport:
    rows: list = field(default_factory=list)   # dicts: scene_id, model_name, rmse_raw, rmse_norm
    aggregates: dict = field(default_factory=dict)  # model_name -> {rmse_raw, rmse_norm}
    patch: int = 49

    def to_csv(self) -> str:
        lines = ["scene_id,model_name,rmse_raw,rmse_norm"]
        for r in self.rows:
            lines.append(f"{r['scene_id']},{r['model_name']},{r['rmse_raw']!r},{r['rmse_norm']!r}")
        return "\n".join(lines) + "\n"

    def save_csv(self, path) -> None:
        with open(path, "w") as f:
            f.write(self.to_csv())


def lowfreq_baseline(sample) -> DepthMap:
    return sample.lowfreq.copy()


def compare(models: list, dataset: list, patch: int = 49,
            baseline=lowfreq_baseline) -> EvalReport:
    """Evaluate predictors and the low-frequency baseline on every sample.

    `models` is a list of (name, predictor) where predictor(sample) returns
    a DepthMap on the sample's mask.  The baseline row is always included.
    """
    if not dataset:
        raise EmptyDataset("no samples to evaluate")
    report = EvalReport(patch=patch)
    named = [("lowfreq", baseline)] + list(models)
    sums: dict = {name: [0.0, 0.0] for name, _ in named}
    for sample in dataset:
        for name, predictor in named:
            pred = predictor(sample)
            raw = rmse_maps(pred, sample.gt)
            norm = rmse_maps(patch_normalize(pred, sample.gt, patch), sample.gt)
            report.rows.append({"scene_id": sample.scene_id, "model_name": name,
                                "rmse_raw": raw, "rmse_norm": norm})
            sums[name][0] += raw
            sums[name][1] += norm
    n = len(dataset)
    for name, _ in named:
        report.aggregates[name] = {"rmse_raw": sums[name][0] / n,
                                   "rmse_norm": sums[name][1] / n}
    return report
