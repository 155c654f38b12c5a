"""Finite-difference verification of every differentiable component.

Each check builds a small double-precision problem, reduces the op's output
to a scalar with fixed random weights, and reports the worst relative gap
between the analytic gradient and a central difference, over the inputs and
(a sample of) the parameters.
"""

from collections import OrderedDict

import numpy as np

from . import autodiff as ad
from . import sst
from .rng import stream

THRESHOLD = 1e-4


def _rand(rng, *shape, scale=1.0):
    return ad.Tensor(rng.normal(size=shape) * scale, requires_grad=True)


def _probe(out, rng):
    w = ad.Tensor(rng.normal(size=out.shape))
    return (out * w).sum()


def _worst(fn, leaves, eps, rng, max_coords):
    worst = 0.0
    for leaf in leaves:
        coords = None
        if max_coords and leaf.size > max_coords:
            coords = sorted(rng.choice(leaf.size, size=max_coords, replace=False).tolist())
        worst = max(worst, ad.grad_check(fn, leaf, eps, coords))
    return worst


def _elementwise_checks(rng, eps, mc):
    checks = OrderedDict()

    a, b = _rand(rng, 3, 4, 5), _rand(rng, 5, 2)
    probe = ad.Tensor(rng.normal(size=(3, 4, 2)))
    checks["matmul"] = _worst(lambda _: (ad.matmul(a, b) * probe).sum(), [a, b], eps, rng, mc)

    x = _rand(rng, 4, 6, scale=2.0)
    probe = ad.Tensor(rng.normal(size=(4, 6)))
    checks["softmax"] = _worst(lambda _: (ad.softmax(x, axis=-1) * probe).sum(), [x], eps, rng, mc)

    x, g, be = _rand(rng, 3, 5, 8), _rand(rng, 8), _rand(rng, 8)
    probe = ad.Tensor(rng.normal(size=(3, 5, 8)))
    checks["layer_norm"] = _worst(lambda _: (ad.layer_norm(x, g, be, 1e-5) * probe).sum(), [x, g, be], eps, rng, mc)

    x, w, bias = _rand(rng, 2, 5, 6, 3), _rand(rng, 3, 3, 3, 4), _rand(rng, 4)
    probe = ad.Tensor(rng.normal(size=(2, 5, 6, 4)))
    checks["conv2d_3x3"] = _worst(lambda _: (ad.conv2d_3x3(x, w, bias) * probe).sum(), [x, w, bias], eps, rng, mc)

    x = _rand(rng, 5, 7, scale=2.0)
    probe = ad.Tensor(rng.normal(size=(5, 7)))
    checks["gelu"] = _worst(lambda _: (ad.gelu(x) * probe).sum(), [x], eps, rng, mc)

    a, b = _rand(rng, 3, 1, 4), _rand(rng, 5, 1)
    probe = ad.Tensor(rng.normal(size=(3, 5, 4)))
    checks["broadcast_arith"] = _worst(lambda _: (((a + b) * a - b / (a * a + 2.0)) * probe).sum(), [a, b], eps, rng, mc)

    x = _rand(rng, 2, 4, 6, 3)
    probe = ad.Tensor(rng.normal(size=(2, 4, 6, 3)))
    checks["cyclic_shift"] = _worst(lambda _: (sst.cyclic_shift(x, 1, -2) * probe).sum(), [x], eps, rng, mc)

    x = _rand(rng, 1, 5, 6, 2)
    probe = ad.Tensor(rng.normal(size=(1, 8, 8, 2)))
    checks["pad_reflect"] = _worst(lambda _: (ad.pad_reflect(x, 3, 2) * probe).sum(), [x], eps, rng, mc)

    x = _rand(rng, 2, 8, 8, 3)
    probe = ad.Tensor(rng.normal(size=(2, 8, 8, 3)))
    checks["window_partition_reverse"] = _worst(
        lambda _: (sst.window_reverse(sst.window_partition(x, 4) * 1.5, 8, 8, 4, batched=True) * probe).sum(),
        [x], eps, rng, mc,
    )
    return checks


def _model_checks(cfg, height, width, rng, eps, mc):
    checks = OrderedDict()
    model = sst.SstModel(cfg, seed=int(rng.integers(2**31)), dtype=np.float64)
    # non-zero biases, tables and tail so every parameter influences the output
    for name, p in model.params.items():
        if p.ndim == 1 or name.endswith("bias_table") or name == "tail2.w":
            p.data[...] = rng.normal(size=p.shape) * 0.1 + (1.0 if name.endswith(".g") else 0.0)
    c = cfg.channels
    layer = model.layer_params(0, 0)
    feats = _rand(rng, 1, height, width, c)

    nlsa_p = layer["stages"][cfg.stages.index("nlsa")] if "nlsa" in cfg.stages else None
    gsa_p = layer["stages"][cfg.stages.index("gsa")] if "gsa" in cfg.stages else None
    if nlsa_p is not None:
        tokens = _rand(rng, 3, cfg.window**2, c)
        mask = sst.shift_attention_mask(height, width, cfg.window, cfg.window // 2)[:3]
        probe = ad.Tensor(rng.normal(size=tokens.shape))
        fn = lambda _: (sst.nlsa_forward(tokens, nlsa_p, cfg.heads, mask=mask) * probe).sum()
        checks["nlsa"] = _worst(fn, [tokens] + list(nlsa_p.values()), eps, rng, mc)
    if gsa_p is not None:
        probe = ad.Tensor(rng.normal(size=feats.shape))
        fn = lambda _: (sst.gsa_forward(feats, gsa_p, cfg.heads) * probe).sum()
        checks["gsa"] = _worst(fn, [feats] + list(gsa_p.values()), eps, rng, mc)

    probe = ad.Tensor(rng.normal(size=feats.shape))
    leaves = [feats] + [v for k, v in layer.items() if k != "stages"] + [v for s in layer["stages"] for v in s.values()]
    for shifted in (False, True):
        fn = lambda _, s=shifted: (sst.sstl_forward(feats, layer, cfg, s) * probe).sum()
        checks[f"sstl_{'shifted' if shifted else 'plain'}"] = _worst(fn, leaves, eps, rng, mc)

    block = model.block_params(0)
    fn = lambda _: (sst.rssb_forward(feats, block, cfg) * probe).sum()
    checks["rssb"] = _worst(fn, [feats, block["conv.w"], block["conv.b"]], eps, rng, mc)

    y = _rand(rng, height, width, cfg.bands, scale=0.5)
    probe = ad.Tensor(rng.normal(size=y.shape))
    fn = lambda _: (sst.sst_forward(model, y) * probe).sum()
    checks["sst_end_to_end"] = _worst(fn, [y] + model.parameters(), eps, rng, mc)
    return checks


def run_gradcheck(cfg=None, height=8, width=8, eps=1e-5, seed=0, max_coords=6):
    """Return an ordered mapping ``component -> max relative error``.

    The default configuration is the desk model (C=16, T=1, L=2, M=4, N=2)
    on an ``8 x 8 x 4`` input.
    """
    if cfg is None:
        cfg = sst.SstConfig.desk(bands=4)
    rng = stream(seed, "gradcheck")
    checks = _elementwise_checks(rng, eps, max_coords)
    checks.update(_model_checks(cfg, height, width, rng, eps, max_coords))
    return checks


def format_report(checks, threshold=THRESHOLD):
    width = max(len(k) for k in checks)
    lines = [f"{'component':<{width}}  {'max_rel_err':>12}  status"]
    for name, err in checks.items():
        lines.append(f"{name:<{width}}  {err:12.3e}  {'PASS' if err < threshold else 'FAIL'}")
    ok = all(e < threshold for e in checks.values())
    lines.append(f"overall: {'PASS' if ok else 'FAIL'} (threshold {threshold:g})")
    return "\n".join(lines) + "\n", ok
