"""Float image persistence (PFM) and 8-bit PNG previews."""

from __future__ import annotations

import numpy as np
from PIL import Image

from ..core import HifreqError


def write_pfm(path, img: np.ndarray) -> None:
    """Grayscale PFM, little-endian (scale -1.0), rows stored bottom-up."""
    img = np.asarray(img)
    if img.ndim != 2:
        raise HifreqError("write_pfm expects a 2-D image")
    h, w = img.shape
    data = np.flipud(img).astype("<f4")
    with open(path, "wb") as f:
        f.write(b"Pf\n")
        f.write(f"{w} {h}\n".encode("ascii"))
        f.write(b"-1.0\n")
        f.write(data.tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as f:
        if f.readline().strip() != b"Pf":
            raise HifreqError(f"{path}: not a grayscale PFM")
        w, h = (int(t) for t in f.readline().split())
        scale = float(f.readline())
        dt = "<f4" if scale < 0 else ">f4"
        data = np.frombuffer(f.read(4 * w * h), dtype=dt).reshape(h, w)
        return np.flipud(data).astype(np.float32)


def quantize(img: np.ndarray, vmin: float, vmax: float) -> np.ndarray:
    """Clip to [vmin, vmax] and round to uint8 levels."""
    if vmax <= vmin:
        raise HifreqError("vmax must exceed vmin")
    t = np.clip((np.asarray(img, dtype=np.float64) - vmin) / (vmax - vmin), 0.0, 1.0)
    return np.round(t * 255.0).astype(np.uint8)


def write_png_gray(path, img: np.ndarray, vmin: float = 0.0, vmax: float = 1.0) -> None:
    Image.fromarray(quantize(img, vmin, vmax), mode="L").save(path)


def read_png(path) -> np.ndarray:
    return np.asarray(Image.open(path))


def write_png_colormap(path, img: np.ndarray, vmax: float, vmin: float = 0.0,
                       cmap: str = "viridis") -> None:
    """Fixed-scale colormapped preview (vmin..vmax in the image's units)."""
    import matplotlib
    lut = matplotlib.colormaps[cmap](np.linspace(0, 1, 256))[:, :3]
    q = quantize(img, vmin, vmax)
    rgb = (lut[q] * 255).astype(np.uint8)
    Image.fromarray(rgb, mode="RGB").save(path)


def save_loss_plot(train_losses, val_losses, path) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(train_losses, label="train")
    ax.plot(val_losses, label="validation")
    ax.set_xlabel("epoch")
    ax.set_ylabel("masked MSE (normalized)")
    ax.set_yscale("log")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)
