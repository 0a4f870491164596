"""Dataset generation and manifest handling.

A dataset directory holds one PFM quadruple per scene (shading, pattern,
low-frequency depth, ground-truth depth; invalid depth pixels store 0)
plus manifest.jsonl with one JSON object per scene:

    {"scene_id", "seed", "shading", "depth", "pattern", "gt", "split"}

Paths are relative to the manifest so directories stay relocatable.
Scene seeds derive from (dataset seed, scene index), so any scene is
reproducible in isolation.
"""

from __future__ import annotations

import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from ..core import DepthMap, HifreqError, Rng
from ..raster import render_scene
from ..sparsedepth import rbf_eval, rbf_fit, sample_sparse
from ..synth import sample_scene
from ..training import Sample, SceneDataset
from .config import ExperimentConfig
from .imageio import read_pfm, write_pfm

logger = logging.getLogger("hifreq")

MANIFEST_NAME = "manifest.jsonl"


def scene_seed(master_seed: int, index: int) -> int:
    ss = np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(index),))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def worker_count(requested: int | None = None) -> int:
    env = os.environ.get("HIFREQ_THREADS")
    if env:
        return max(1, int(env))
    if requested:
        return max(1, requested)
    return max(1, min(8, os.cpu_count() or 1))


def albedo_texture(rng: Rng, shape: tuple, strength: float) -> np.ndarray:
    """Smooth multiplicative field in [1 - strength, 1]: two random
    low-frequency cosines, normalized."""
    H, W = shape
    yy, xx = np.meshgrid(np.arange(H) / H, np.arange(W) / W, indexing="ij")
    t = np.zeros(shape)
    for _ in range(2):
        fx, fy = rng.uniform(0.5, 2.0, size=2)
        phase = rng.uniform(0.0, 2 * math.pi)
        t += np.cos(2 * math.pi * (fx * xx + fy * yy) + phase)
    t = (t - t.min()) / max(t.max() - t.min(), 1e-12)  # 0..1
    return 1.0 - strength * (1.0 - t)


def render_scene_sample(cfg: ExperimentConfig, index: int) -> Sample:
    """Generate one complete scene: render, sparse-sample, RBF-densify."""
    seed = scene_seed(cfg.seed, index)
    rng = Rng(seed)
    spec = sample_scene(rng.spawn(0), cfg.synth)
    cam = cfg.camera.build()
    proj = cfg.projector.build()
    out = render_scene(spec, cam, proj, cfg.render)

    shading, pattern = out.shading, out.pattern
    mask = out.depth.mask
    if cfg.domain.albedo_texture > 0:
        tex = albedo_texture(rng.spawn(1), shading.shape, cfg.domain.albedo_texture)
        shading = shading * tex
        pattern = pattern * tex
    if cfg.domain.shading_noise_sigma > 0:
        noise = rng.spawn(2).normal(0.0, cfg.domain.shading_noise_sigma, shading.shape)
        shading = np.clip(shading + noise * mask, 0.0, 1.0)

    # threshold on the normalized pattern so sampling does not depend on albedo
    pmax = float(pattern.max())
    if pmax <= 0:
        raise HifreqError("pattern not visible in the camera image")
    sparse = sample_sparse(out.depth, pattern / pmax, cfg.sparse.stride,
                           cfg.sparse.noise_sigma, rng.spawn(3))
    model = rbf_fit(sparse, cfg.sparse.smoothing, cfg.sparse.max_centers, rng.spawn(4))
    lowfreq = rbf_eval(model, mask)
    return Sample(shading=shading, lowfreq=lowfreq, pattern=pattern,
                  gt=out.depth, scene=spec, scene_id=f"scene_{index:04d}").validate()


def _gen_one(args) -> tuple:
    cfg, index, out_dir = args
    try:
        sample = render_scene_sample(cfg, index)
    except HifreqError as err:
        return index, None, f"{type(err).__name__}: {err}"
    sid = sample.scene_id
    files = {
        "shading": f"{sid}_shading.pfm",
        "pattern": f"{sid}_pattern.pfm",
        "depth": f"{sid}_lowfreq.pfm",
        "gt": f"{sid}_gt.pfm",
    }
    out_dir = Path(out_dir)
    write_pfm(out_dir / files["shading"], sample.shading)
    write_pfm(out_dir / files["pattern"], sample.pattern)
    write_pfm(out_dir / files["depth"], sample.lowfreq.depth * sample.lowfreq.mask)
    write_pfm(out_dir / files["gt"], sample.gt.depth * sample.gt.mask)
    entry = {"scene_id": sid, "seed": scene_seed(cfg.seed, index), **files}
    return index, entry, None


def generate_dataset(cfg: ExperimentConfig, count: int, out_dir,
                     val_fraction: float | None = None, workers: int | None = None):
    """Render `count` scenes into out_dir and write the manifest.

    Returns (manifest_path, n_skipped).  Raises if more than 1% of scenes
    fail.  Split labels come from a seed-derived permutation over the
    requested indices, so they do not shift when a scene fails.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    if val_fraction is None:
        val_fraction = cfg.train.val_fraction
    n_val = int(round(count * val_fraction))
    perm = Rng(cfg.seed).spawn(9999).permutation(count)
    split = {int(i): ("val" if k < n_val else "train") for k, i in enumerate(perm)}

    jobs = [(cfg, i, str(out_dir)) for i in range(count)]
    nworkers = worker_count(workers)
    if nworkers > 1 and count > 1:
        with ProcessPoolExecutor(max_workers=nworkers) as pool:
            results = list(pool.map(_gen_one, jobs, chunksize=1))
    else:
        results = [_gen_one(j) for j in jobs]

    entries, skipped = [], []
    for index, entry, err in sorted(results):
        if entry is None:
            skipped.append((index, err))
            logger.warning("scene %d skipped: %s", index, err)
            continue
        entry["split"] = split[index]
        entries.append(entry)

    manifest = out_dir / MANIFEST_NAME
    with open(manifest, "w") as f:
        for e in entries:
            f.write(json.dumps(e, sort_keys=True) + "\n")
    if len(skipped) > max(0.01 * count, 0):
        raise HifreqError(f"{len(skipped)}/{count} scenes failed; see log")
    return manifest, len(skipped)


def load_manifest(manifest_path) -> list:
    manifest_path = Path(manifest_path)
    entries = []
    with open(manifest_path) as f:
        for line in f:
            if line.strip():
                entries.append(json.loads(line))
    for e in entries:
        for key in ("shading", "pattern", "depth", "gt"):
            e[key] = str(manifest_path.parent / e[key])
    return entries


def load_sample(entry: dict) -> Sample:
    shading = read_pfm(entry["shading"]).astype(np.float64)
    pattern = read_pfm(entry["pattern"]).astype(np.float64)
    low = read_pfm(entry["depth"]).astype(np.float64)
    gt = read_pfm(entry["gt"]).astype(np.float64)
    mask = (gt > 0).astype(np.float64)
    return Sample(shading=shading, lowfreq=DepthMap(low, mask.copy()),
                  pattern=pattern, gt=DepthMap(gt, mask),
                  scene=None, scene_id=entry["scene_id"])


def load_dataset(manifest_path, split: str | None = None) -> SceneDataset:
    """Load all scenes (optionally a single split) into memory."""
    entries = load_manifest(manifest_path)
    if split is not None:
        entries = [e for e in entries if e["split"] == split]
        return SceneDataset([load_sample(e) for e in entries],
                            split=[split] * len(entries))
    return SceneDataset([load_sample(e) for e in entries],
                        split=[e["split"] for e in entries])
