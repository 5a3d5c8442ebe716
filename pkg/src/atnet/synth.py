"""Synthetic turbulence degradation: y = warp(blur(x)) + noise.

The geometric distortion is a sum of localized random warps (random center,
direction, magnitude, and Gaussian spatial falloff), the blur is an
isotropic Gaussian PSF with replicate-padded correlation, and the noise is
i.i.d. additive Gaussian.  Dataset generation derives one RNG stream per
(image, pair) from the config seed, so output bytes are a pure function of
the configuration regardless of execution order or worker count.
"""

import json
import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import backend
from .image import Image, load_image, save_image
from .rng import SeededRng, derive_seed
from .util import ordered_parallel_map

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")
MANIFEST_NAME = "manifest.jsonl"


@dataclass(frozen=True, eq=False)
class DeformationField:
    """Per-pixel displacement in pixels; out(p) samples in(p + d(p))."""

    dx: np.ndarray
    dy: np.ndarray

    def __post_init__(self):
        dx = np.asarray(self.dx, dtype=np.float64)
        dy = np.asarray(self.dy, dtype=np.float64)
        if dx.shape != dy.shape or dx.ndim != 2:
            raise ValueError(f"dx/dy must be matching 2-D arrays, got {dx.shape} and {dy.shape}")
        object.__setattr__(self, "dx", dx)
        object.__setattr__(self, "dy", dy)

    @property
    def shape(self):
        return self.dx.shape

    def max_magnitude(self) -> float:
        return float(np.hypot(self.dx, self.dy).max())

    def negated(self) -> "DeformationField":
        return DeformationField(-self.dx, -self.dy)

    @classmethod
    def zero(cls, h: int, w: int) -> "DeformationField":
        return cls(np.zeros((h, w)), np.zeros((h, w)))


@dataclass(frozen=True, eq=False)
class PsfKernel:
    """Normalized odd-sized blur kernel; sigma records the Gaussian width."""

    weights: np.ndarray
    sigma: float = 0.0

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise ValueError(f"kernel must be square, got shape {w.shape}")
        if w.shape[0] % 2 == 0:
            raise ValueError(f"kernel size must be odd, got {w.shape[0]}")
        if np.any(w < 0.0):
            raise ValueError("kernel weights must be non-negative")
        if abs(float(w.sum()) - 1.0) > 1e-9:
            raise ValueError(f"kernel must sum to 1, got {float(w.sum())}")
        object.__setattr__(self, "weights", w)

    @property
    def size(self) -> int:
        return self.weights.shape[0]


@dataclass(frozen=True)
class DegradationConfig:
    n_warp_centers: int = 32
    warp_strength: tuple = (0.5, 4.0)  # px
    warp_falloff_sigma: tuple = (8.0, 24.0)  # px
    psf_sigma: tuple = (0.5, 3.0)  # px
    noise_sigma: float = 0.01  # std of additive Gaussian, [0,1] units
    blur_first: bool = True  # blur then warp; False swaps for ablation
    seed: int = 0

    def validate(self):
        for name in ("warp_strength", "warp_falloff_sigma", "psf_sigma"):
            lo, hi = getattr(self, name)
            if lo < 0 or lo > hi:
                raise ValueError(f"{name} range must satisfy 0 <= lo <= hi, got ({lo}, {hi})")
        if self.noise_sigma < 0:
            raise ValueError(f"noise_sigma must be >= 0, got {self.noise_sigma}")
        if self.n_warp_centers < 0:
            raise ValueError(f"n_warp_centers must be >= 0, got {self.n_warp_centers}")
        return self


def make_gaussian_psf(sigma: float, size: int) -> PsfKernel:
    """Isotropic Gaussian kernel on a centered grid; sigma = 0 gives a delta."""
    if size % 2 == 0 or size < 1:
        raise ValueError(f"kernel size must be odd and >= 1, got {size}")
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    half = size // 2
    if sigma == 0.0:
        w = np.zeros((size, size))
        w[half, half] = 1.0
        return PsfKernel(w, sigma=0.0)
    r = np.arange(size, dtype=np.float64) - half
    g = np.exp(-(r * r) / (2.0 * sigma * sigma))
    w = np.outer(g, g)
    return PsfKernel(w / w.sum(), sigma=float(sigma))


def psf_size_for_sigma(sigma: float, max_size: int | None = None) -> int:
    """Kernel size 2*ceil(3*sigma) + 1, optionally capped (kept odd)."""
    size = 2 * int(math.ceil(3.0 * sigma)) + 1
    if max_size is not None and size > max_size:
        size = max_size if max_size % 2 else max_size - 1
    return max(size, 1)


def sample_deformation_field(cfg: DegradationConfig, h: int, w: int,
                             rng: SeededRng) -> DeformationField:
    """Sum of localized random warps, clamped to the strength upper bound.

    Per center the draws are, in order: center x, center y, direction angle,
    magnitude, falloff sigma.
    """
    cfg.validate()
    if h < 8 or w < 8:
        raise ValueError(f"field must be at least 8x8, got {h}x{w}")
    dx = np.zeros((h, w))
    dy = np.zeros((h, w))
    jj, ii = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    s_lo, s_hi = cfg.warp_strength
    f_lo, f_hi = cfg.warp_falloff_sigma
    for _ in range(cfg.n_warp_centers):
        cx = rng.uniform(0.0, w - 1.0)
        cy = rng.uniform(0.0, h - 1.0)
        theta = rng.uniform(0.0, 2.0 * math.pi)
        mag = rng.uniform(s_lo, s_hi)
        falloff = rng.uniform(f_lo, f_hi)
        d2 = (jj - cx) ** 2 + (ii - cy) ** 2
        if falloff > 0.0:
            envelope = np.exp(-d2 / (2.0 * falloff * falloff))
        else:
            envelope = (d2 == 0.0).astype(np.float64)
        dx += mag * math.cos(theta) * envelope
        dy += mag * math.sin(theta) * envelope
    norm = np.hypot(dx, dy)
    over = norm > s_hi
    if np.any(over):
        scale = np.where(over, s_hi / np.where(norm > 0.0, norm, 1.0), 1.0)
        dx = dx * scale
        dy = dy * scale
    return DeformationField(dx, dy)


def warp_image(img: Image, field: DeformationField) -> Image:
    """Bilinear backward warp; border-clamped sampling, output in [0, 1]."""
    if field.shape != (img.height, img.width):
        raise ValueError(f"field shape {field.shape} != image {img.height}x{img.width}")
    out = backend.warp_bilinear(img.data, field.dx, field.dy)
    return Image(np.clip(out, 0.0, 1.0))


def convolve2d(img: Image, kernel: PsfKernel) -> Image:
    """Per-channel correlation with edge-replicate padding, same shape."""
    if kernel.size > min(img.height, img.width):
        raise ValueError(
            f"kernel size {kernel.size} exceeds image {img.height}x{img.width}"
        )
    out = backend.correlate2d(img.data, kernel.weights)
    return Image(np.clip(out, 0.0, 1.0))


def degrade(x: Image, cfg: DegradationConfig, rng: SeededRng):
    """Apply the full degradation; returns (y, field, psf).

    Draw order: PSF sigma, then the deformation field, then pixel noise.
    A fully neutral config (zero strength, zero PSF sigma, zero noise)
    reproduces the input bit-exactly.
    """
    cfg.validate()
    p_lo, p_hi = cfg.psf_sigma
    sigma = float(rng.uniform(p_lo, p_hi))
    size = psf_size_for_sigma(sigma, max_size=min(x.height, x.width))
    psf = make_gaussian_psf(sigma, size)
    field = sample_deformation_field(cfg, x.height, x.width, rng)

    if cfg.blur_first:
        stage = warp_image(convolve2d(x, psf), field)
    else:
        stage = convolve2d(warp_image(x, field), psf)
    data = stage.data
    if cfg.noise_sigma > 0.0:
        data = data + rng.normal(0.0, cfg.noise_sigma, data.shape)
    return Image(np.clip(data, 0.0, 1.0)), field, psf


def list_clean_images(clean_dir) -> list:
    clean_dir = Path(clean_dir)
    if not clean_dir.is_dir():
        raise FileNotFoundError(f"no such directory: {clean_dir}")
    paths = sorted(
        p for p in clean_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES
    )
    if not paths:
        raise ValueError(f"no loadable images in {clean_dir}")
    return paths


def generate_dataset(clean_dir, out_dir, cfg: DegradationConfig,
                     pairs_per_image: int = 1, threads: int = 1) -> Path:
    """Write degraded pairs plus a manifest; returns the manifest path.

    Each pair's stream seed is hash(cfg.seed, image index, pair index), so
    regeneration is byte-identical and independent of worker count.
    Manifest records are JSON lines {clean, degraded, seed, psf_sigma} with
    paths relative to the manifest location.
    """
    cfg.validate()
    if pairs_per_image < 1:
        raise ValueError(f"pairs_per_image must be >= 1, got {pairs_per_image}")
    out_dir = Path(out_dir)
    clean_paths = list_clean_images(clean_dir)
    deg_dir = out_dir / "degraded"
    deg_dir.mkdir(parents=True, exist_ok=True)

    jobs = [
        (img_idx, clean_path, pair_idx)
        for img_idx, clean_path in enumerate(clean_paths)
        for pair_idx in range(pairs_per_image)
    ]

    def run_job(job):
        img_idx, clean_path, pair_idx = job
        x = load_image(clean_path)
        seed = derive_seed(cfg.seed, img_idx, pair_idx)
        y, _, psf = degrade(x, cfg, SeededRng(seed))
        name = f"{img_idx:04d}_{pair_idx:03d}.png"
        save_image(y, deg_dir / name)
        return {
            "clean": Path(os.path.relpath(clean_path, out_dir)).as_posix(),
            "degraded": f"degraded/{name}",
            "seed": seed,
            "psf_sigma": psf.sigma,
        }

    records = ordered_parallel_map(run_job, jobs, threads)
    manifest_path = out_dir / MANIFEST_NAME
    with open(manifest_path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
    return manifest_path


def load_manifest(manifest_path) -> list:
    """Read manifest records; clean/degraded paths resolved to absolute."""
    manifest_path = Path(manifest_path)
    if not manifest_path.exists():
        raise FileNotFoundError(f"no such manifest: {manifest_path}")
    base = manifest_path.parent
    records = []
    with open(manifest_path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            rec["clean"] = str((base / rec["clean"]).resolve())
            rec["degraded"] = str((base / rec["degraded"]).resolve())
            records.append(rec)
    if not records:
        raise ValueError(f"manifest {manifest_path} has no records")
    return records
