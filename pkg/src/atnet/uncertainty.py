"""Distortion prior: variance of Monte-Carlo-dropout restorations.

The degraded image is pushed through the prior network S times with
independently seeded dropout masks; the per-pixel population variance of
those outputs is the prior that conditions the restoration network.  High
variance marks regions the prior network cannot restore confidently.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .image import Image, image_to_nchw, save_image
from .model import ForwardMode, NetworkSpec, forward
from .rng import SeededRng, derive_seed

REDUCTIONS = ("per_channel", "channel_mean")


@dataclass(frozen=True, eq=False)
class McSampleSet:
    """S same-shaped restoration samples plus the seeds that produced them."""

    samples: tuple
    seeds: tuple = ()

    def __post_init__(self):
        samples = tuple(np.asarray(s, dtype=np.float64) for s in self.samples)
        if len(samples) < 2:
            raise ValueError(f"need at least 2 samples for a variance, got {len(samples)}")
        shape = samples[0].shape
        for s in samples:
            if s.shape != shape:
                raise ValueError(f"sample shape mismatch: {s.shape} vs {shape}")
        object.__setattr__(self, "samples", samples)

    @property
    def s_count(self) -> int:
        return len(self.samples)


@dataclass(frozen=True, eq=False)
class UncertaintyMap:
    """Non-negative per-pixel variance map (H, W, C), C = 1 for channel_mean."""

    data: np.ndarray
    reduction: str = "per_channel"

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 3:
            raise ValueError(f"uncertainty map must be HxWxC, got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("uncertainty map contains non-finite values")
        if float(data.min()) < 0.0:
            raise ValueError("uncertainty map contains negative values")
        if self.reduction not in REDUCTIONS:
            raise ValueError(f"unknown reduction {self.reduction!r}")
        object.__setattr__(self, "data", data)

    @property
    def channels(self) -> int:
        return self.data.shape[2]


def mc_forward_samples(spec: NetworkSpec, params: dict, y: Image, s_count: int,
                       rng: SeededRng) -> McSampleSet:
    """S dropout-active forward passes; pass i uses seed hash(rng.seed, i)."""
    if s_count < 2:
        raise ValueError(f"need S >= 2, got {s_count}")
    x = image_to_nchw(y)
    samples = []
    seeds = []
    for i in range(s_count):
        seed = derive_seed(rng.seed, i)
        out = forward(spec, params, x, ForwardMode.EVAL_MC_DROPOUT, SeededRng(seed))
        samples.append(out[0].transpose(1, 2, 0))
        seeds.append(seed)
    return McSampleSet(tuple(samples), tuple(seeds))


def variance_map(samples: McSampleSet, reduction: str = "per_channel") -> UncertaintyMap:
    """Population variance per pixel/channel: mean(p_i^2) - mean(p_i)^2.

    Computed on samples shifted by sample 0 (variance is shift-invariant),
    which removes the catastrophic cancellation of the raw moment formula:
    identical sample sets yield an exactly zero map.
    """
    if reduction not in REDUCTIONS:
        raise ValueError(f"unknown reduction {reduction!r}")
    stack = np.stack(samples.samples) - samples.samples[0]
    var = np.mean(stack * stack, axis=0) - np.mean(stack, axis=0) ** 2
    var = np.maximum(var, 0.0)  # guard fp cancellation
    if reduction == "channel_mean":
        var = var.mean(axis=2, keepdims=True)
    return UncertaintyMap(var, reduction)


def estimate_prior(spec: NetworkSpec, params: dict, y: Image, s_count: int,
                   rng: SeededRng, reduction: str = "per_channel"):
    """MC sampling plus variance; also returns the sample mean as an Image."""
    samples = mc_forward_samples(spec, params, y, s_count, rng)
    prior = variance_map(samples, reduction)
    mean_pred = Image(np.clip(np.mean(np.stack(samples.samples), axis=0), 0.0, 1.0))
    return prior, mean_pred


def prior_to_nchw(prior: UncertaintyMap) -> np.ndarray:
    return np.ascontiguousarray(prior.data.transpose(2, 0, 1))[None, :, :, :]


def save_uncertainty(prior: UncertaintyMap, out_prefix) -> tuple:
    """Persist as float32 .npy plus a min-max normalized grayscale preview."""
    out_prefix = Path(out_prefix)
    out_prefix.parent.mkdir(parents=True, exist_ok=True)
    npy_path = out_prefix.with_suffix(".npy")
    np.save(npy_path, prior.data.astype(np.float32))
    gray = prior.data.mean(axis=2)
    lo, hi = float(gray.min()), float(gray.max())
    norm = (gray - lo) / (hi - lo) if hi > lo else np.zeros_like(gray)
    png_path = out_prefix.parent / (out_prefix.name + "_preview.png")
    save_image(Image(norm[:, :, None]), png_path)
    return npy_path, png_path
