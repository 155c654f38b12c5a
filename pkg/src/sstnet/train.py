"""Training loop and tiled inference."""

import logging
import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .checkpoint import save_checkpoint
from .errors import DataError, NumericalError, ParameterError, ShapeError
from .hsi import HsiCube, center_crop, extract_patches, normalize
from .metrics import psnr
from .noise import NoiseSpec, add_gaussian_iid, apply_noise
from .optim import AdamState, adam_step, step_lr
from .rng import stream
from .sst import SstModel

logger = logging.getLogger(__name__)

LOSSES = {"mse": ad.mse_loss, "l1": ad.l1_loss}


@dataclass
class TrainConfig:
    batch: int = 8
    epochs: int = 100
    lr: float = 1e-4
    lr_drop_epoch: int = 60
    lr_divisor: float = 10.0
    seed: int = 0
    loss: str = "mse"
    patch: int = 64
    scales: tuple = (1.0, 0.5, 0.25)
    strides: tuple = (64, 32, 32)
    crop: int = 0
    max_steps: int = 0

    def __post_init__(self):
        if self.loss not in LOSSES:
            raise ParameterError(f"unknown loss {self.loss!r}; choose from {sorted(LOSSES)}")
        if self.batch < 1 or self.epochs < 1 or self.patch < 1:
            raise ParameterError("batch, epochs and patch must be >= 1")
        if not self.lr > 0:
            raise ParameterError(f"learning rate must be positive, got {self.lr}")
        self.scales = tuple(float(s) for s in self.scales)
        self.strides = tuple(int(s) for s in self.strides)

    def lr_at(self, epoch):
        return step_lr(epoch, self.lr, self.lr_drop_epoch, self.lr_divisor)


def corrupt(clean, spec, seed):
    """Noisy copy of one clean patch.

    A ``gaussian_iid`` spec with a sigma range is the blind regime: sigma
    is drawn uniformly from the range for this patch, then applied to every
    band.
    """
    cube = HsiCube(clean)
    if spec.kind == "gaussian_iid" and isinstance(spec.sigma, tuple):
        sigma = float(stream(seed, "blind").uniform(*spec.sigma))
        return add_gaussian_iid(cube, sigma, seed, spec.clip)[0].data
    s = NoiseSpec(spec.kind, spec.sigma, spec.affected_band_fraction, dict(spec.kind_params), seed, spec.clip)
    return apply_noise(cube, s)[0].data


def build_patches(cubes, cfg):
    """Normalise, optionally centre-crop, and pool the multi-scale patches of every cube."""
    arrays = []
    for i, cube in enumerate(cubes):
        if cube.value_range != (0.0, 1.0):
            cube = normalize(cube)
        if cfg.crop and cube.height >= cfg.crop and cube.width >= cfg.crop:
            cube = center_crop(cube, cfg.crop, cfg.crop)
        ps = extract_patches(cube, cfg.patch, cfg.scales, cfg.strides, source_id=str(i))
        if len(ps):
            arrays.append(ps.stack())
    if not arrays:
        raise DataError("training set produced no patches (cubes smaller than the patch size?)")
    return np.concatenate(arrays)


def evaluate(model, pairs):
    """Mean PSNR of ``model`` outputs over ``(clean, noisy)`` array pairs."""
    if not pairs:
        return math.nan
    vals = []
    with ad.no_grad():
        for clean, noisy in pairs:
            out = model(noisy).data
            vals.append(min(psnr(clean, out), 100.0))
    return float(np.mean(vals))


def make_val_pairs(cubes, spec, seed):
    pairs = []
    for i, cube in enumerate(cubes):
        if cube.value_range != (0.0, 1.0):
            cube = normalize(cube)
        pairs.append((cube.data, corrupt(cube.data, spec, int(stream(seed, "val", i).integers(2**62)))))
    return pairs


def train(cubes, model_cfg, train_cfg, noise_spec, val_cubes=(), checkpoint_path=None, callback=None):
    """Fit an SST on clean ``cubes`` with noise synthesised afresh every step.

    Returns ``(model, history)``; ``history`` has one dict per epoch with
    ``epoch, lr, loss, val_psnr, steps``.
    """
    patches = build_patches(cubes, train_cfg)
    n = len(patches)
    if patches.shape[-1] != model_cfg.bands:
        raise DataError(f"training cubes have {patches.shape[-1]} bands, config expects {model_cfg.bands}")
    seed = train_cfg.seed
    model = SstModel(model_cfg, seed=seed)
    params = model.parameters()
    state = AdamState.for_params(params, learning_rate=train_cfg.lr)
    loss_fn = LOSSES[train_cfg.loss]
    val_pairs = make_val_pairs(list(val_cubes), noise_spec, seed)
    history = []
    steps = 0
    for epoch in range(1, train_cfg.epochs + 1):
        state.learning_rate = train_cfg.lr_at(epoch)
        order = stream(seed, "shuffle", epoch).permutation(n)
        losses = []
        for start in range(0, n, train_cfg.batch):
            idx = order[start:start + train_cfg.batch]
            clean = patches[idx]
            noisy = np.stack([
                corrupt(clean[j], noise_spec, int(stream(seed, "noise", epoch, start, j).integers(2**62)))
                for j in range(len(idx))
            ])
            model.zero_grad()
            loss = loss_fn(model(noisy), ad.Tensor(clean))
            value = float(loss.data)
            if not math.isfinite(value):
                raise NumericalError(f"non-finite loss {value} at epoch {epoch}, step {steps + 1}")
            loss.backward()
            adam_step(params, [p.grad for p in params], state)
            losses.append(value)
            steps += 1
            if train_cfg.max_steps and steps >= train_cfg.max_steps:
                break
        rec = {
            "epoch": epoch,
            "lr": state.learning_rate,
            "loss": float(np.mean(losses)),
            "val_psnr": evaluate(model, val_pairs),
            "steps": steps,
        }
        history.append(rec)
        logger.info("epoch %d lr %.3g loss %.6f val_psnr %.3f", epoch, rec["lr"], rec["loss"], rec["val_psnr"])
        if checkpoint_path is not None:
            save_checkpoint(model, checkpoint_path, metadata=f"epoch = {epoch}\nsteps = {steps}\nseed = {seed}\n")
        if callback is not None:
            callback(rec)
        if train_cfg.max_steps and steps >= train_cfg.max_steps:
            break
    return model, history


def tile_starts(size, tile, overlap):
    """Tile origins along one axis; the last tile is flush with the far edge."""
    if size <= tile:
        return [0]
    stride = tile - overlap
    if stride < 1:
        raise ParameterError(f"overlap {overlap} must be smaller than tile {tile}")
    starts = list(range(0, size - tile + 1, stride))
    if starts[-1] != size - tile:
        starts.append(size - tile)
    return starts


def denoise(model, data, tile=64, overlap=16):
    """Denoise an ``H x W x B`` array, averaging overlapping tiles.

    ``tile=0`` runs the network on the whole cube at once.
    """
    data = np.asarray(data, dtype=model.dtype)
    if data.shape[-1] != model.config.bands:
        raise ShapeError(f"input has {data.shape[-1]} bands, checkpoint expects {model.config.bands}")
    h, w, _ = data.shape
    with ad.no_grad():
        if not tile or (h <= tile and w <= tile):
            return model(data).data
        acc = np.zeros(data.shape, dtype=np.float64)
        count = np.zeros((h, w, 1), dtype=np.float64)
        th, tw = min(tile, h), min(tile, w)
        for y in tile_starts(h, tile, overlap):
            for x in tile_starts(w, tile, overlap):
                acc[y:y + th, x:x + tw] += model(data[y:y + th, x:x + tw]).data
                count[y:y + th, x:x + tw] += 1.0
    return (acc / count).astype(model.dtype)
