"""Residual depth regressor: conv primitives with exact backprop and the
3-level U-Net they assemble into.

All primitives are plain numpy (im2col + one large GEMM per convolution)
and operate in the dtype of their inputs; float64 is used for gradient
checking, float32 for training.  Explicit sums (bias gradients, losses)
accumulate in float64 regardless of storage dtype.

Public operations take (B, C, H, W) tensors.  Internally the network runs
channels-last, which keeps the im2col gathers and GEMM operands
contiguous; the public entry points convert layout at the boundary.

Architecture, fixed up to `base_width`/`levels`:
  encoder stage  l: conv3x3 -> relu -> conv3x3 -> relu -> (skip) -> maxpool 2x2
  bottleneck:       conv3x3 -> relu -> conv3x3 -> relu
  decoder stage  l: upconv 2x2 stride 2 -> concat skip -> conv3x3 -> relu
                    -> conv3x3 -> relu
  head:             conv1x1 to one channel, no activation
Channel widths double per level (base 32 -> 32/64/128, bottleneck 256).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .core import EmptyMask, HifreqError, Rng


class ShapeMismatch(HifreqError):
    pass


class OddSize(HifreqError):
    pass


class BadSize(HifreqError):
    pass


class ArchMismatch(HifreqError):
    pass


# ---------------------------------------------------------------------------
# layers

@dataclass
class ConvLayer:
    """Same-padded stride-1 cross-correlation, odd square kernels."""

    kernels: np.ndarray  # (Cout, Cin, k, k)
    bias: np.ndarray     # (Cout,)

    @property
    def ksize(self) -> int:
        return self.kernels.shape[2]


@dataclass
class UpconvLayer:
    """2x2 stride-2 transposed convolution (exact 2x upsampling, no overlap)."""

    kernels: np.ndarray  # (Cin, Cout, 2, 2)
    bias: np.ndarray     # (Cout,)


def _to_nhwc(x: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(x.transpose(0, 2, 3, 1))


def _to_nchw(x: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(x.transpose(0, 3, 1, 2))


# --- channels-last internals ------------------------------------------------
#
# 3x3 convolutions run as 9 shifted GEMMs on contiguous views of the padded
# input (one zero row appended so the most-shifted view stays in bounds);
# wrapped-in garbage positions are cropped from the output and masked by
# zeros in the gradient, so no patch matrix is ever materialized.

def _pad_flat(x: np.ndarray, p: int) -> np.ndarray:
    """Zero-pad spatially by p plus one spare row; return (B, rows*Wp, C)."""
    B, H, W, C = x.shape
    Hp, Wp = H + 2 * p + 1, W + 2 * p
    xp = np.zeros((B, Hp, Wp, C), dtype=x.dtype)
    xp[:, p:p + H, p:p + W, :] = x
    return xp.reshape(B, Hp * Wp, C)


def _conv_fwd(x: np.ndarray, layer: ConvLayer) -> np.ndarray:
    B, H, W, C = x.shape
    cout, cin, k, _ = layer.kernels.shape
    if cin != C:
        raise ShapeMismatch(f"conv expects {cin} input channels, got {C}")
    kern = layer.kernels.astype(x.dtype)
    if k == 1:
        y = (x.reshape(B * H * W, C) @ kern[:, :, 0, 0].T).reshape(B, H, W, cout)
        y += layer.bias.astype(x.dtype)
        return y
    p = k // 2
    Wp = W + 2 * p
    m = H * Wp
    xf = _pad_flat(x, p)
    y = np.empty((B, H, W, cout), dtype=x.dtype)
    y[:] = layer.bias.astype(x.dtype)
    scratch = np.empty((B, m, cout), dtype=x.dtype)
    for r in range(k):
        for q in range(k):
            off = r * Wp + q
            kt = np.ascontiguousarray(kern[:, :, r, q].T)
            np.matmul(xf[:, off:off + m, :], kt, out=scratch)
            y += scratch.reshape(B, H, Wp, cout)[:, :, :W, :]
    return y


def _conv_bwd(x: np.ndarray, layer: ConvLayer, dy: np.ndarray) -> dict:
    B, H, W, C = x.shape
    cout, cin, k, _ = layer.kernels.shape
    if dy.shape != (B, H, W, cout):
        raise ShapeMismatch(f"dy shape {dy.shape} inconsistent with conv output")
    kern = layer.kernels.astype(x.dtype)
    db = np.sum(dy, axis=(0, 1, 2), dtype=np.float64).astype(x.dtype)
    if k == 1:
        dyr = dy.reshape(B * H * W, cout)
        dk = (dyr.T @ x.reshape(B * H * W, C))[:, :, None, None]
        dx = (dyr @ kern[:, :, 0, 0]).reshape(B, H, W, C)
        return {"dx": dx, "dk": dk.astype(x.dtype), "db": db}
    p = k // 2
    Wp = W + 2 * p
    m = H * Wp
    xf = _pad_flat(x, p)
    # dy padded with zero columns so wrapped positions contribute nothing
    dye = np.zeros((B, H, Wp, cout), dtype=x.dtype)
    dye[:, :, :W, :] = dy
    dye = dye.reshape(B, m, cout)
    dk = np.empty((cout, cin, k, k), dtype=x.dtype)
    dxf = np.zeros_like(xf)
    scratch = np.empty((B, m, C), dtype=x.dtype)
    for r in range(k):
        for q in range(k):
            off = r * Wp + q
            chunk = xf[:, off:off + m, :]
            dk[:, :, r, q] = np.matmul(chunk.transpose(0, 2, 1), dye).sum(axis=0).T
            np.matmul(dye, np.ascontiguousarray(kern[:, :, r, q]), out=scratch)
            dxf[:, off:off + m, :] += scratch
    Hp = H + 2 * p + 1
    dx = dxf.reshape(B, Hp, Wp, C)[:, p:p + H, p:p + W, :]
    return {"dx": np.ascontiguousarray(dx), "dk": dk, "db": db}


def _pool_fwd(x: np.ndarray):
    B, H, W, C = x.shape
    if H % 2 or W % 2:
        raise OddSize(f"maxpool needs even H, W; got {H}x{W}")
    xr = x.reshape(B, H // 2, 2, W // 2, 2, C).transpose(0, 1, 3, 2, 4, 5)
    xr = np.ascontiguousarray(xr).reshape(B, H // 2, W // 2, 4, C)
    idx = np.argmax(xr, axis=3)
    y = np.take_along_axis(xr, idx[:, :, :, None, :], axis=3)[:, :, :, 0, :]
    return y, idx


def _pool_bwd(idx: np.ndarray, dy: np.ndarray) -> np.ndarray:
    B, Hh, Wh, C = dy.shape
    dxr = np.zeros((B, Hh, Wh, 4, C), dtype=dy.dtype)
    np.put_along_axis(dxr, idx[:, :, :, None, :], dy[:, :, :, None, :], axis=3)
    dx = dxr.reshape(B, Hh, Wh, 2, 2, C).transpose(0, 1, 3, 2, 4, 5)
    return np.ascontiguousarray(dx).reshape(B, Hh * 2, Wh * 2, C)


def _upmat(layer: UpconvLayer, dtype) -> np.ndarray:
    cin, cout = layer.kernels.shape[:2]
    return np.ascontiguousarray(
        layer.kernels.transpose(0, 2, 3, 1).reshape(cin, 4 * cout)).astype(dtype)


def _upconv_fwd(x: np.ndarray, layer: UpconvLayer) -> np.ndarray:
    B, H, W, C = x.shape
    cin, cout = layer.kernels.shape[:2]
    if cin != C:
        raise ShapeMismatch(f"upconv expects {cin} input channels, got {C}")
    y4 = (x.reshape(B * H * W, C) @ _upmat(layer, x.dtype)).reshape(B, H, W, 2, 2, cout)
    y = np.ascontiguousarray(y4.transpose(0, 1, 3, 2, 4, 5)).reshape(B, 2 * H, 2 * W, cout)
    y += layer.bias.astype(x.dtype)
    return y


def _upconv_bwd(x: np.ndarray, layer: UpconvLayer, dy: np.ndarray) -> dict:
    B, H, W, C = x.shape
    cin, cout = layer.kernels.shape[:2]
    if dy.shape != (B, 2 * H, 2 * W, cout):
        raise ShapeMismatch(f"dy shape {dy.shape} inconsistent with upconv output")
    dyr = dy.reshape(B, H, 2, W, 2, cout).transpose(0, 1, 3, 2, 4, 5)
    dyr = np.ascontiguousarray(dyr).reshape(B * H * W, 4 * cout)
    dx = (dyr @ _upmat(layer, x.dtype).T).reshape(B, H, W, C)
    dk = (x.reshape(B * H * W, C).T @ dyr).reshape(cin, 2, 2, cout).transpose(0, 3, 1, 2)
    db = np.sum(dy, axis=(0, 1, 2), dtype=np.float64).astype(x.dtype)
    return {"dx": dx, "dk": np.ascontiguousarray(dk).astype(x.dtype), "db": db}


# --- public primitives (B, C, H, W) ------------------------------------------

def conv2d_fwd(x: np.ndarray, layer: ConvLayer) -> np.ndarray:
    """Zero-padded same-size cross-correlation plus bias."""
    return _to_nchw(_conv_fwd(_to_nhwc(x), layer))


def conv2d_bwd(x: np.ndarray, layer: ConvLayer, dy: np.ndarray) -> dict:
    """Exact gradients of conv2d_fwd: {'dx', 'dk', 'db'}."""
    if dy.ndim != 4:
        raise ShapeMismatch("dy must be (B, C, H, W)")
    g = _conv_bwd(_to_nhwc(x), layer, _to_nhwc(dy))
    g["dx"] = _to_nchw(g["dx"])
    return g


def maxpool2_fwd(x: np.ndarray):
    """2x2 stride-2 max pool; returns (y, argmax) with first-index tie rule."""
    y, idx = _pool_fwd(_to_nhwc(x))
    return _to_nchw(y), np.ascontiguousarray(idx.transpose(0, 3, 1, 2))


def maxpool2_bwd(idx: np.ndarray, dy: np.ndarray) -> np.ndarray:
    """Route gradients to the recorded argmax positions."""
    dx = _pool_bwd(np.ascontiguousarray(idx.transpose(0, 2, 3, 1)), _to_nhwc(dy))
    return _to_nchw(dx)


def upconv2_fwd(x: np.ndarray, layer: UpconvLayer) -> np.ndarray:
    return _to_nchw(_upconv_fwd(_to_nhwc(x), layer))


def upconv2_bwd(x: np.ndarray, layer: UpconvLayer, dy: np.ndarray) -> dict:
    g = _upconv_bwd(_to_nhwc(x), layer, _to_nhwc(dy))
    g["dx"] = _to_nchw(g["dx"])
    return g


def relu_fwd(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_bwd(x: np.ndarray, dy: np.ndarray) -> np.ndarray:
    return dy * (x > 0)


def concat_fwd(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Join along the channel axis of (B, C, H, W) tensors."""
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ShapeMismatch(f"cannot concat {a.shape} with {b.shape}")
    return np.concatenate([a, b], axis=1)


def concat_bwd(dy: np.ndarray, ca: int):
    return dy[:, :ca], dy[:, ca:]


# ---------------------------------------------------------------------------
# loss

@dataclass
class LossValue:
    value: float
    grad: np.ndarray


def masked_mse(pred: np.ndarray, target: np.ndarray, mask: np.ndarray) -> LossValue:
    """Mean squared error over mask==1 pixels; grad is zero off-mask."""
    if pred.shape != target.shape or pred.shape != mask.shape:
        raise ShapeMismatch(f"pred {pred.shape} / target {target.shape} / mask {mask.shape}")
    msum = float(np.sum(mask, dtype=np.float64))
    if msum == 0:
        raise EmptyMask("loss mask is empty")
    diff = (pred - target) * mask
    value = float(np.sum(diff.astype(np.float64) ** 2) / msum)
    grad = (2.0 / msum) * diff
    return LossValue(value, grad.astype(pred.dtype))


# ---------------------------------------------------------------------------
# model

@dataclass
class UNetModel:
    in_channels: int
    base_width: int
    levels: int
    enc: list          # per level: (ConvLayer, ConvLayer)
    bottleneck: tuple  # (ConvLayer, ConvLayer)
    ups: list          # deepest first: UpconvLayer
    dec: list          # deepest first: (ConvLayer, ConvLayer)
    head: ConvLayer

    @property
    def dtype(self):
        return self.enc[0][0].kernels.dtype

    def widths(self) -> list:
        return [self.base_width * (1 << l) for l in range(self.levels)]

    def params(self):
        """(name, array) pairs in the fixed manifest order."""
        out = []
        for l, (c1, c2) in enumerate(self.enc):
            out += [(f"enc{l}.conv0.kernels", c1.kernels), (f"enc{l}.conv0.bias", c1.bias),
                    (f"enc{l}.conv1.kernels", c2.kernels), (f"enc{l}.conv1.bias", c2.bias)]
        b1, b2 = self.bottleneck
        out += [("bottleneck.conv0.kernels", b1.kernels), ("bottleneck.conv0.bias", b1.bias),
                ("bottleneck.conv1.kernels", b2.kernels), ("bottleneck.conv1.bias", b2.bias)]
        for i, (up, (d1, d2)) in enumerate(zip(self.ups, self.dec)):
            l = self.levels - 1 - i
            out += [(f"up{l}.kernels", up.kernels), (f"up{l}.bias", up.bias),
                    (f"dec{l}.conv0.kernels", d1.kernels), (f"dec{l}.conv0.bias", d1.bias),
                    (f"dec{l}.conv1.kernels", d2.kernels), (f"dec{l}.conv1.bias", d2.bias)]
        out += [("head.kernels", self.head.kernels), ("head.bias", self.head.bias)]
        return out

    def param_count(self) -> int:
        return sum(int(a.size) for _, a in self.params())

    def set_param(self, name: str, value: np.ndarray) -> None:
        for pname, arr in self.params():
            if pname == name:
                if arr.shape != value.shape:
                    raise ArchMismatch(f"{name}: shape {value.shape} != {arr.shape}")
                arr[...] = value
                return
        raise ArchMismatch(f"unknown parameter {name}")


def _he_uniform(rng: Rng, shape, fan_in: int, dtype) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def build_unet(in_channels: int = 3, base_width: int = 32, levels: int = 3,
               rng: Rng | None = None, dtype=np.float32) -> UNetModel:
    """He-uniform kernels, zero biases. rng=None gives all-zero weights."""

    def conv(cin, cout, k=3):
        if rng is None:
            kern = np.zeros((cout, cin, k, k), dtype=dtype)
        else:
            kern = _he_uniform(rng, (cout, cin, k, k), cin * k * k, dtype)
        return ConvLayer(kern, np.zeros(cout, dtype=dtype))

    def upconv(cin, cout):
        if rng is None:
            kern = np.zeros((cin, cout, 2, 2), dtype=dtype)
        else:
            # stride 2 with 2x2 kernels: each output pixel sums cin taps
            kern = _he_uniform(rng, (cin, cout, 2, 2), cin, dtype)
        return UpconvLayer(kern, np.zeros(cout, dtype=dtype))

    widths = [base_width * (1 << l) for l in range(levels)]
    wb = base_width * (1 << levels)
    enc = []
    cin = in_channels
    for w in widths:
        enc.append((conv(cin, w), conv(w, w)))
        cin = w
    bott = (conv(widths[-1], wb), conv(wb, wb))
    ups, dec = [], []
    deeper = wb
    for w in reversed(widths):
        ups.append(upconv(deeper, w))
        dec.append((conv(2 * w, w), conv(w, w)))
        deeper = w
    head = conv(base_width, 1, k=1)
    return UNetModel(in_channels, base_width, levels, enc, bott, ups, dec, head)


def expected_param_count(in_channels: int = 3, base_width: int = 32, levels: int = 3) -> int:
    """Closed-form parameter count of build_unet's architecture."""
    def conv(cin, cout, k=3):
        return cout * cin * k * k + cout

    widths = [base_width * (1 << l) for l in range(levels)]
    wb = base_width * (1 << levels)
    total = 0
    cin = in_channels
    for w in widths:
        total += conv(cin, w) + conv(w, w)
        cin = w
    total += conv(widths[-1], wb) + conv(wb, wb)
    deeper = wb
    for w in reversed(widths):
        total += deeper * w * 4 + w          # upconv
        total += conv(2 * w, w) + conv(w, w)
        deeper = w
    total += conv(base_width, 1, k=1)
    return total


@dataclass
class ForwardCache:
    """Channels-last intermediates needed for the backward pass."""

    enc_pre: list = field(default_factory=list)   # per level: (in, z1, r1, z2)
    skips: list = field(default_factory=list)
    pool_idx: list = field(default_factory=list)
    bott_in: np.ndarray | None = None
    bott_pre: tuple | None = None
    dec_pre: list = field(default_factory=list)   # per stage: (up_in, cat, z1, r1, z2)
    head_in: np.ndarray | None = None


def unet_forward(model: UNetModel, x: np.ndarray, want_cache: bool = False):
    """Full forward pass. H and W must be divisible by 2**levels."""
    if x.ndim != 4 or x.shape[1] != model.in_channels:
        raise ShapeMismatch(f"expected (B, {model.in_channels}, H, W), got {x.shape}")
    div = 1 << model.levels
    B, _, H, W = x.shape
    if H % div or W % div or H < div or W < div:
        raise BadSize(f"H and W must be multiples of {div}, got {H}x{W}")

    c = ForwardCache()
    a = _to_nhwc(x)
    for (c1, c2) in model.enc:
        z1 = _conv_fwd(a, c1)
        r1 = relu_fwd(z1)
        z2 = _conv_fwd(r1, c2)
        s = relu_fwd(z2)
        c.enc_pre.append((a, z1, r1, z2))
        c.skips.append(s)
        a, idx = _pool_fwd(s)
        c.pool_idx.append(idx)

    c.bott_in = a
    b1, b2 = model.bottleneck
    z1 = _conv_fwd(a, b1)
    r1 = relu_fwd(z1)
    z2 = _conv_fwd(r1, b2)
    t = relu_fwd(z2)
    c.bott_pre = (z1, r1, z2)

    for i, (up, (d1, d2)) in enumerate(zip(model.ups, model.dec)):
        skip = c.skips[model.levels - 1 - i]
        u = _upconv_fwd(t, up)
        cat = np.concatenate([u, skip], axis=-1)
        z1 = _conv_fwd(cat, d1)
        r1 = relu_fwd(z1)
        z2 = _conv_fwd(r1, d2)
        c.dec_pre.append((t, cat, z1, r1, z2))
        t = relu_fwd(z2)

    c.head_in = t
    y = _to_nchw(_conv_fwd(t, model.head))
    return (y, c) if want_cache else y


def unet_backward(model: UNetModel, cache: ForwardCache, dy: np.ndarray) -> dict:
    """Gradients of a scalar loss w.r.t. every parameter, keyed by name."""
    grads = {}
    g = _conv_bwd(cache.head_in, model.head, _to_nhwc(dy))
    grads["head.kernels"], grads["head.bias"] = g["dk"], g["db"]
    dt = g["dx"]

    dskip = [None] * model.levels
    for i in reversed(range(len(model.ups))):
        l = model.levels - 1 - i
        up, (d1, d2) = model.ups[i], model.dec[i]
        up_in, cat, z1, r1, z2 = cache.dec_pre[i]
        dz2 = relu_bwd(z2, dt)
        g = _conv_bwd(r1, d2, dz2)
        grads[f"dec{l}.conv1.kernels"], grads[f"dec{l}.conv1.bias"] = g["dk"], g["db"]
        dz1 = relu_bwd(z1, g["dx"])
        g = _conv_bwd(cat, d1, dz1)
        grads[f"dec{l}.conv0.kernels"], grads[f"dec{l}.conv0.bias"] = g["dk"], g["db"]
        cu = up.kernels.shape[1]
        du, ds = g["dx"][..., :cu], g["dx"][..., cu:]
        dskip[l] = ds
        g = _upconv_bwd(up_in, up, np.ascontiguousarray(du))
        grads[f"up{l}.kernels"], grads[f"up{l}.bias"] = g["dk"], g["db"]
        dt = g["dx"]

    b1, b2 = model.bottleneck
    z1, r1, z2 = cache.bott_pre
    dz2 = relu_bwd(z2, dt)
    g = _conv_bwd(r1, b2, dz2)
    grads["bottleneck.conv1.kernels"], grads["bottleneck.conv1.bias"] = g["dk"], g["db"]
    dz1 = relu_bwd(z1, g["dx"])
    g = _conv_bwd(cache.bott_in, b1, dz1)
    grads["bottleneck.conv0.kernels"], grads["bottleneck.conv0.bias"] = g["dk"], g["db"]
    da = g["dx"]

    for l in reversed(range(model.levels)):
        c1, c2 = model.enc[l]
        a, z1, r1, z2 = cache.enc_pre[l]
        ds = _pool_bwd(cache.pool_idx[l], da) + dskip[l]
        dz2 = relu_bwd(z2, ds)
        g = _conv_bwd(r1, c2, dz2)
        grads[f"enc{l}.conv1.kernels"], grads[f"enc{l}.conv1.bias"] = g["dk"], g["db"]
        dz1 = relu_bwd(z1, g["dx"])
        g = _conv_bwd(a, c1, dz1)
        grads[f"enc{l}.conv0.kernels"], grads[f"enc{l}.conv0.bias"] = g["dk"], g["db"]
        da = g["dx"]
    return grads


# ---------------------------------------------------------------------------
# checkpoints
#
# Binary layout: magic "UNW1", then one record per parameter in manifest
# order: uint32 name length, utf-8 name, uint32 rank, uint32 dims,
# float32 little-endian data.

MAGIC = b"UNW1"


def save_checkpoint(model: UNetModel, path) -> None:
    with open(path, "wb") as f:
        f.write(MAGIC)
        for name, arr in model.params():
            nb = name.encode("utf-8")
            f.write(struct.pack("<I", len(nb)))
            f.write(nb)
            f.write(struct.pack("<I", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())


def read_checkpoint(path) -> dict:
    """Parse a checkpoint into an ordered {name: float32 array} dict."""
    with open(path, "rb") as f:
        if f.read(4) != MAGIC:
            raise ArchMismatch(f"{path}: bad checkpoint magic")
        out = {}
        while True:
            hdr = f.read(4)
            if not hdr:
                break
            (nlen,) = struct.unpack("<I", hdr)
            name = f.read(nlen).decode("utf-8")
            (rank,) = struct.unpack("<I", f.read(4))
            dims = struct.unpack(f"<{rank}I", f.read(4 * rank))
            n = int(np.prod(dims)) if rank else 1
            data = np.frombuffer(f.read(4 * n), dtype="<f4").reshape(dims)
            out[name] = data.astype(np.float32)
        return out


def load_into(model: UNetModel, params: dict) -> UNetModel:
    """Copy checkpoint parameters into an existing model (shape-checked)."""
    own = dict(model.params())
    if set(own) != set(params):
        missing = set(own) ^ set(params)
        raise ArchMismatch(f"checkpoint parameter set differs: {sorted(missing)[:4]}")
    for name, arr in model.params():
        src = params[name]
        if src.shape != arr.shape:
            raise ArchMismatch(f"{name}: checkpoint {src.shape} vs model {arr.shape}")
        arr[...] = src.astype(arr.dtype)
    return model


def model_from_checkpoint(path, dtype=np.float32) -> UNetModel:
    """Rebuild the architecture implied by a checkpoint and load it."""
    params = read_checkpoint(path)
    try:
        k0 = params["enc0.conv0.kernels"]
    except KeyError:
        raise ArchMismatch("checkpoint lacks enc0.conv0.kernels") from None
    base, in_ch = int(k0.shape[0]), int(k0.shape[1])
    levels = len({n.split(".")[0] for n in params if n.startswith("enc")})
    model = build_unet(in_ch, base, levels, rng=None, dtype=dtype)
    return load_into(model, params)
