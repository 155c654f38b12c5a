"""Spatial-spectral transformer for hyperspectral denoising.

Features are channel-last ``N x H x W x C`` tensors. One transformer layer
(SSTL) is::

    z' = SSMA(LN(z)) + z
    z  = MLP(LN(z')) + z'

where SSMA runs windowed spatial attention (NLSA, with a learned relative
position bias and an optional half-window cyclic shift) followed by global
spectral attention (GSA, a ``d x d`` channel-mixing matrix per head, linear
in the pixel count). Residual blocks (RSSB) stack ``sstl`` layers and end in
a 3x3 convolution with a block skip; the full network adds a head conv, two
tail convs with a shallow-feature skip and a global residual onto the input.
"""

import functools
import math
from collections import OrderedDict
from dataclasses import dataclass, fields

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ContractError, ParameterError, ShapeError
from .optim import xavier_init
from .rng import stream

ATTENTION_ORDERS = {
    "nlsa-gsa": ("nlsa", "gsa"),
    "gsa-nlsa": ("gsa", "nlsa"),
    "nlsa": ("nlsa",),
    "gsa": ("gsa",),
    "nlsa-nlsa": ("nlsa", "nlsa"),
    "gsa-gsa": ("gsa", "gsa"),
}
_ORDER_ALIASES = {"nlsa-only": "nlsa", "gsa-only": "gsa", "nlsa->gsa": "nlsa-gsa", "gsa->nlsa": "gsa-nlsa"}

MASK_VALUE = -100.0


@dataclass
class SstConfig:
    bands: int = 31
    channels: int = 96
    rssb: int = 4
    sstl: int = 6
    heads: int = 6
    window: int = 8
    mlp_ratio: float = 4.0
    attention_order: str = "nlsa-gsa"
    shift_mask: bool = True
    ln_eps: float = 1e-5
    # subtracted from the input before the head conv; the global skip keeps the raw input
    input_offset: float = 0.5

    def __post_init__(self):
        order = str(self.attention_order).lower().replace("→", "->").replace("_", "-")
        order = _ORDER_ALIASES.get(order, order)
        if order not in ATTENTION_ORDERS:
            raise ParameterError(f"unknown attention_order {self.attention_order!r}; choose from {sorted(ATTENTION_ORDERS)}")
        self.attention_order = order
        for name in ("bands", "channels", "rssb", "sstl", "heads", "window"):
            if int(getattr(self, name)) < 1:
                raise ParameterError(f"SstConfig.{name} must be >= 1, got {getattr(self, name)}")
            setattr(self, name, int(getattr(self, name)))
        if self.channels % self.heads:
            raise ParameterError(f"channels ({self.channels}) must be divisible by heads ({self.heads})")
        if self.mlp_ratio <= 0:
            raise ParameterError(f"mlp_ratio must be positive, got {self.mlp_ratio}")

    @property
    def stages(self):
        return ATTENTION_ORDERS[self.attention_order]

    @property
    def hidden(self):
        return int(round(self.mlp_ratio * self.channels))

    @property
    def head_dim(self):
        return self.channels // self.heads

    @classmethod
    def full_scale(cls, bands=31):
        return cls(bands=bands, channels=96, rssb=4, sstl=6, heads=6, window=8)

    @classmethod
    def desk(cls, bands=8):
        return cls(bands=bands, channels=16, rssb=1, sstl=2, heads=2, window=4)

    def to_text(self):
        out = []
        for f in fields(self):
            v = getattr(self, f.name)
            out.append(f"{f.name} = {str(v).lower() if isinstance(v, bool) else v}")
        return "\n".join(out) + "\n"

    @classmethod
    def from_text(cls, text):
        kv = {}
        for ln in text.splitlines():
            ln = ln.split("#", 1)[0].strip()
            if ln:
                if "=" not in ln:
                    raise ConfigError(f"config line without '=': {ln!r}")
                k, v = (s.strip() for s in ln.split("=", 1))
                kv[k] = v
        return cls.from_mapping(kv)

    @classmethod
    def from_mapping(cls, kv):
        types = {f.name: f.type for f in fields(cls)}
        args = {}
        for k, v in kv.items():
            if k not in types:
                raise ConfigError(f"unknown SstConfig key {k!r}")
            t = types[k]
            try:
                if t in (bool, "bool"):
                    args[k] = v if isinstance(v, bool) else str(v).lower() in ("1", "true", "yes")
                elif t in (int, "int"):
                    args[k] = int(v)
                elif t in (float, "float"):
                    args[k] = float(v)
                else:
                    args[k] = str(v)
            except ValueError:
                raise ConfigError(f"bad value for {k}: {v!r}") from None
        return cls(**args)


# ---------------------------------------------------------------------------
# window geometry


def _batched(x):
    return (x, False) if x.ndim == 4 else (x.reshape((1,) + x.shape), True)


def window_partition(x, window):
    """Split ``[N x] H x W x C`` into non-overlapping ``M x M`` windows.

    Returns ``(N*I) x M^2 x C`` with windows in row-major order and tokens
    row-major inside each window.
    """
    x = ad.as_tensor(x)
    x4, _ = _batched(x)
    n, h, w, c = x4.shape
    m = window
    if h % m or w % m:
        raise ContractError(f"window_partition: {h}x{w} is not divisible by window {m}; pad first")
    t = x4.reshape(n, h // m, m, w // m, m, c).transpose(0, 1, 3, 2, 4, 5)
    return t.reshape(n * (h // m) * (w // m), m * m, c)


def window_reverse(windows, height, width, window, batched=False):
    """Inverse of :func:`window_partition`.

    Returns ``H x W x C`` (exactly one image's worth of windows required)
    or, with ``batched=True``, ``N x H x W x C``.
    """
    windows = ad.as_tensor(windows)
    m = window
    if height % m or width % m:
        raise ContractError(f"window_reverse: {height}x{width} is not divisible by window {m}")
    per_image = (height // m) * (width // m)
    count, tokens, c = windows.shape
    if tokens != m * m or count % per_image or (not batched and count != per_image):
        raise ShapeError(f"window_reverse: {count} windows of {tokens} tokens do not tile {height}x{width} with M={m}")
    n = count // per_image
    t = windows.reshape(n, height // m, width // m, m, m, c).transpose(0, 1, 3, 2, 4, 5)
    t = t.reshape(n, height, width, c)
    return t if batched else t.reshape(height, width, c)


def cyclic_shift(x, dy, dx):
    """Toroidal roll of the spatial axes; ``cyclic_shift(-dy, -dx)`` undoes it."""
    x = ad.as_tensor(x)
    return ad.roll(x, (dy, dx), (x.ndim - 3, x.ndim - 2))


@functools.lru_cache(maxsize=None)
def relative_position_index(window):
    """``M^2 x M^2`` map from token pairs to entries of a ``(2M-1)^2`` table."""
    m = window
    coords = np.stack(np.meshgrid(np.arange(m), np.arange(m), indexing="ij")).reshape(2, -1)
    rel = coords[:, :, None] - coords[:, None, :] + (m - 1)
    idx = rel[0] * (2 * m - 1) + rel[1]
    idx.setflags(write=False)
    return idx


@functools.lru_cache(maxsize=None)
def shift_attention_mask(height, width, window, shift):
    """Additive mask (``I x M^2 x M^2``) blocking pairs that were not neighbours before the roll."""
    m = window
    region = np.zeros((height, width))
    cuts = ((0, height - m), (height - m, height - shift), (height - shift, height))
    cuts_w = ((0, width - m), (width - m, width - shift), (width - shift, width))
    label = 0
    for r0, r1 in cuts:
        for c0, c1 in cuts_w:
            region[r0:r1, c0:c1] = label
            label += 1
    win = region.reshape(height // m, m, width // m, m).transpose(0, 2, 1, 3).reshape(-1, m * m)
    mask = np.where(win[:, :, None] != win[:, None, :], MASK_VALUE, 0.0)
    mask.setflags(write=False)
    return mask


# ---------------------------------------------------------------------------
# attention


def _split_heads(x, heads):
    # (B, T, C) -> (B, heads, T, d)
    b, t, c = x.shape
    return x.reshape(b, t, heads, c // heads).transpose(0, 2, 1, 3)


def nlsa_forward(tokens, p, heads, mask=None, return_attention=False):
    """Multi-head attention among the ``M^2`` tokens of each window.

    ``tokens`` is ``(I, M^2, C)`` (or ``M^2 x C`` for one window). ``p`` holds
    ``wq, wk, wv, proj_w, proj_b`` and ``bias_table`` of shape
    ``heads x (2M-1)^2``. ``mask`` is an additive ``(nW, M^2, M^2)`` array
    applied cyclically over the window axis.
    """
    tokens = ad.as_tensor(tokens)
    single = tokens.ndim == 2
    if single:
        tokens = tokens.reshape((1,) + tokens.shape)
    nwin, t, c = tokens.shape
    if c % heads:
        raise ShapeError(f"nlsa: channels {c} not divisible by heads {heads}")
    m = math.isqrt(t)
    d = c // heads
    q = _split_heads(tokens @ p["wq"], heads)
    k = _split_heads(tokens @ p["wk"], heads)
    v = _split_heads(tokens @ p["wv"], heads)
    logits = (q @ k.swapaxes(-1, -2)) * (1.0 / math.sqrt(d))
    if "bias_table" in p:
        bias = p["bias_table"][:, relative_position_index(m)]
        logits = logits + bias
    if mask is not None:
        mask = np.asarray(mask)
        if mask.ndim != 3 or mask.shape[1:] != (t, t) or nwin % mask.shape[0]:
            raise ShapeError(f"nlsa: mask shape {mask.shape} does not fit {nwin} windows of {t} tokens")
        per = mask.shape[0]
        logits = logits.reshape(nwin // per, per, heads, t, t) + Tensor(mask[None, :, None].astype(tokens.dtype))
        logits = logits.reshape(nwin, heads, t, t)
    attn = ad.softmax(logits, axis=-1)
    out = (attn @ v).transpose(0, 2, 1, 3).reshape(nwin, t, c)
    out = out @ p["proj_w"] + p["proj_b"]
    if single:
        out = out.reshape(t, c)
    return (out, attn) if return_attention else out


def gsa_forward(features, p, heads, return_attention=False):
    """Channel attention over the whole image.

    Per head ``j`` the ``d x d`` matrix ``A_j = softmax(Q_j K_j^T / sqrt(d))``
    (rows over channels, ``Q_j, K_j`` of shape ``d x HW``) mixes the value
    channels: ``head_j = A_j V_j``. Cost is ``O(C^2 HW / heads)``.
    """
    x = ad.as_tensor(features)
    x4, squeeze = _batched(x)
    n, h, w, c = x4.shape
    d = c // heads
    flat = x4.reshape(n, h * w, c)

    def proj(wt):
        # (N, HW, C) -> (N, heads, d, HW)
        return (flat @ wt).reshape(n, h * w, heads, d).transpose(0, 2, 3, 1)

    q, k, v = proj(p["wq"]), proj(p["wk"]), proj(p["wv"])
    attn = ad.softmax((q @ k.swapaxes(-1, -2)) * (1.0 / math.sqrt(d)), axis=-1)
    out = (attn @ v).transpose(0, 3, 1, 2).reshape(n, h * w, c)
    out = (out @ p["proj_w"] + p["proj_b"]).reshape(n, h, w, c)
    if squeeze:
        out = out.reshape(h, w, c)
    return (out, attn) if return_attention else out


def _nlsa_stage(x4, p, cfg, shifted):
    n, h, w, c = x4.shape
    m = cfg.window
    s = m // 2 if shifted else 0
    mask = None
    if s:
        x4 = cyclic_shift(x4, -s, -s)
        if cfg.shift_mask:
            mask = shift_attention_mask(h, w, m, s)
    out = nlsa_forward(window_partition(x4, m), p, cfg.heads, mask=mask)
    out = window_reverse(out, h, w, m, batched=True)
    if s:
        out = cyclic_shift(out, s, s)
    return out


def ssma_forward(features, stage_params, cfg, shifted):
    """Run the configured attention stages in order (default NLSA then GSA)."""
    x = ad.as_tensor(features)
    x4, squeeze = _batched(x)
    for kind, p in zip(cfg.stages, stage_params):
        if kind == "nlsa":
            x4 = _nlsa_stage(x4, p, cfg, shifted)
        else:
            x4 = gsa_forward(x4, p, cfg.heads)
    return x4.reshape(x4.shape[1:]) if squeeze else x4


def sstl_forward(z, p, cfg, shifted):
    """Pre-norm SSMA and MLP, each with a residual connection."""
    z = ad.as_tensor(z)
    y = ad.layer_norm(z, p["norm1.g"], p["norm1.b"], cfg.ln_eps)
    z = ssma_forward(y, p["stages"], cfg, shifted) + z
    y = ad.layer_norm(z, p["norm2.g"], p["norm2.b"], cfg.ln_eps)
    y = ad.gelu(y @ p["fc1_w"] + p["fc1_b"]) @ p["fc2_w"] + p["fc2_b"]
    return y + z


def is_shifted(layer_index):
    """Even layers use plain windows, odd layers shifted ones."""
    return layer_index % 2 == 1


def rssb_forward(f, p, cfg):
    """``sstl`` layers with alternating shifts, a 3x3 conv, and the block skip."""
    f = ad.as_tensor(f)
    z = f
    for i, layer in enumerate(p["layers"]):
        z = sstl_forward(z, layer, cfg, is_shifted(i))
    return ad.conv2d_3x3(z, p["conv.w"], p["conv.b"]) + f


# ---------------------------------------------------------------------------
# model


def _param_shapes(cfg):
    c, b, hid = cfg.channels, cfg.bands, cfg.hidden
    tbl = (cfg.heads, (2 * cfg.window - 1) ** 2)
    shapes = OrderedDict()
    shapes["head.w"] = (3, 3, b, c)
    shapes["head.b"] = (c,)
    for t in range(cfg.rssb):
        for l in range(cfg.sstl):
            pre = f"rssb{t}.sstl{l}."
            shapes[pre + "norm1.g"] = (c,)
            shapes[pre + "norm1.b"] = (c,)
            for k, kind in enumerate(cfg.stages):
                sp = f"{pre}stage{k}_{kind}."
                for wn in ("wq", "wk", "wv", "proj_w"):
                    shapes[sp + wn] = (c, c)
                shapes[sp + "proj_b"] = (c,)
                if kind == "nlsa":
                    shapes[sp + "bias_table"] = tbl
            shapes[pre + "norm2.g"] = (c,)
            shapes[pre + "norm2.b"] = (c,)
            shapes[pre + "fc1_w"] = (c, hid)
            shapes[pre + "fc1_b"] = (hid,)
            shapes[pre + "fc2_w"] = (hid, c)
            shapes[pre + "fc2_b"] = (c,)
        shapes[f"rssb{t}.conv.w"] = (3, 3, c, c)
        shapes[f"rssb{t}.conv.b"] = (c,)
    shapes["tail1.w"] = (3, 3, c, c)
    shapes["tail1.b"] = (c,)
    shapes["tail2.w"] = (3, 3, c, b)
    shapes["tail2.b"] = (b,)
    return shapes


def _init_value(name, shape, seed, dtype):
    leaf = name.rsplit(".", 1)[-1]
    if leaf == "g":
        return Tensor(np.ones(shape, dtype=dtype), requires_grad=True, name=name)
    # the last conv starts at zero so an untrained network is the identity map
    if len(shape) >= 2 and leaf != "bias_table" and name != "tail2.w":
        sub = int(stream(seed, name).integers(2**62))
        t = xavier_init(shape, sub, dtype=dtype)
        t.name = name
        return t
    return Tensor(np.zeros(shape, dtype=dtype), requires_grad=True, name=name)


class SstModel:
    """Parameters of the full network as named leaf tensors."""

    def __init__(self, config, seed=0, dtype=np.float32, params=None):
        self.config = config
        self.dtype = np.dtype(dtype)
        shapes = _param_shapes(config)
        if params is None:
            params = OrderedDict((n, _init_value(n, s, seed, self.dtype)) for n, s in shapes.items())
        else:
            missing = set(shapes) - set(params)
            extra = set(params) - set(shapes)
            if missing or extra:
                raise ShapeError(f"parameter set mismatch: missing {sorted(missing)[:5]}, unexpected {sorted(extra)[:5]}")
            for n, s in shapes.items():
                if tuple(params[n].shape) != s:
                    raise ShapeError(f"parameter {n}: expected {s}, got {params[n].shape}")
        self.params = OrderedDict((n, params[n]) for n in shapes)

    # -- containers -----------------------------------------------------------
    def parameters(self):
        return list(self.params.values())

    def named_parameters(self):
        return list(self.params.items())

    def num_params(self):
        return sum(p.size for p in self.params.values())

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def astype(self, dtype):
        params = OrderedDict(
            (n, Tensor(p.data.astype(dtype), requires_grad=True, name=n)) for n, p in self.params.items()
        )
        return SstModel(self.config, dtype=dtype, params=params)

    def layer_params(self, t, l):
        pre = f"rssb{t}.sstl{l}."
        own = {n[len(pre):]: v for n, v in self.params.items() if n.startswith(pre)}
        out = {n: v for n, v in own.items() if not n.startswith("stage")}
        out["stages"] = []
        for k, kind in enumerate(self.config.stages):
            sp = f"stage{k}_{kind}."
            out["stages"].append({n[len(sp):]: v for n, v in own.items() if n.startswith(sp)})
        return out

    def block_params(self, t):
        return {
            "layers": [self.layer_params(t, l) for l in range(self.config.sstl)],
            "conv.w": self.params[f"rssb{t}.conv.w"],
            "conv.b": self.params[f"rssb{t}.conv.b"],
        }

    def zero_output_projections(self):
        """Zero every attention/MLP output projection and every conv after the head."""
        for n, p in self.params.items():
            leaf = n.rsplit(".", 1)[-1]
            if leaf in ("proj_w", "proj_b", "fc2_w", "fc2_b") or ".conv." in n or n.startswith("tail"):
                p.data[...] = 0
        return self

    def __call__(self, y):
        return sst_forward(self, y)


def sst_forward(model, y):
    """Denoise ``[N x] H x W x B``; spatial sizes not divisible by M are reflect-padded."""
    cfg = model.config
    y = ad.as_tensor(y, dtype=model.dtype)
    y4, squeeze = _batched(y)
    if y4.shape[-1] != cfg.bands:
        raise ShapeError(f"input has {y4.shape[-1]} bands, model expects {cfg.bands}")
    n, h, w, _ = y4.shape
    m = cfg.window
    ph, pw = (-h) % m, (-w) % m
    x = ad.pad_reflect(y4, ph, pw)
    p = model.params
    if cfg.input_offset:
        x = x - cfg.input_offset
    f0 = ad.conv2d_3x3(x, p["head.w"], p["head.b"])
    f = f0
    for t in range(cfg.rssb):
        f = rssb_forward(f, model.block_params(t), cfg)
    r = ad.conv2d_3x3(f + f0, p["tail1.w"], p["tail1.b"])
    r = ad.conv2d_3x3(r, p["tail2.w"], p["tail2.b"])
    if ph or pw:
        r = r[:, :h, :w, :]
    out = y4 + r
    return out.reshape(out.shape[1:]) if squeeze else out


# ---------------------------------------------------------------------------
# accounting


def count_params(cfg):
    """Closed-form number of scalar parameters."""
    c, b, hid = cfg.channels, cfg.bands, cfg.hidden
    per_stage = {"nlsa": 4 * c * c + c + cfg.heads * (2 * cfg.window - 1) ** 2, "gsa": 4 * c * c + c}
    layer = 4 * c + sum(per_stage[k] for k in cfg.stages) + 2 * c * hid + hid + c
    block = cfg.sstl * layer + 9 * c * c + c
    return (9 * b * c + c) + cfg.rssb * block + (9 * c * c + c) + (9 * c * b + b)


def flops_breakdown(cfg, height, width):
    """Multiply-accumulate counts by component for one ``H x W`` image.

    Only products in linear maps, convolutions and attention contractions are
    counted; normalisation, softmax, activations and additions are not.
    """
    m = cfg.window
    if height % m or width % m:
        raise ContractError(f"count_flops: {height}x{width} is not divisible by window {m}")
    p = height * width
    c, b, hid = cfg.channels, cfg.bands, cfg.hidden
    layers = cfg.rssb * cfg.sstl
    n_nlsa = sum(1 for k in cfg.stages if k == "nlsa")
    n_gsa = sum(1 for k in cfg.stages if k == "gsa")
    out = {
        "nlsa_core": layers * n_nlsa * 2 * m * m * c * p,
        "gsa_core": layers * n_gsa * 2 * (c * c // cfg.heads) * p,
        "attention_proj": layers * (n_nlsa + n_gsa) * 4 * c * c * p,
        "mlp": layers * 2 * c * hid * p,
        "conv": (9 * b * c + cfg.rssb * 9 * c * c + 9 * c * c + 9 * c * b) * p,
    }
    out["ssma_core"] = out["nlsa_core"] + out["gsa_core"]
    return out


def count_flops(cfg, height, width):
    """Total multiply-accumulates for a forward pass over ``H x W``."""
    bd = flops_breakdown(cfg, height, width)
    return bd["ssma_core"] + bd["attention_proj"] + bd["mlp"] + bd["conv"]
