"""Batch evaluation: restoration quality tables and top-K identification.

The quality table reports PSNR/SSIM plus a deep-feature distance for every
manifest pair, for both the restored output and the raw degraded input
(the baseline row).  Identification ranks gallery embeddings by cosine
similarity; the embedding provider is pluggable since production face
embedders are external assets.
"""

import hashlib
import json
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .checkpoint import load_checkpoint
from .features import ConvFeatureDescriptor, FeatureExtractor
from .image import Image, image_to_nchw, load_image, nchw_to_image
from .metrics import psnr, ssim
from .model import ForwardMode, forward
from .rng import SeededRng, derive_seed
from .synth import IMAGE_SUFFIXES, load_manifest
from .uncertainty import estimate_prior, prior_to_nchw
from .util import ordered_parallel_map

UNIT_NORM_TOL = 1e-6


def d_vgg(a: Image, b: Image, extractor: FeatureExtractor) -> float:
    """Mean squared distance between deep features of two images."""
    fa = extractor.features(image_to_nchw(a))
    fb = extractor.features(image_to_nchw(b))
    return float(np.mean((fa - fb) ** 2))


@dataclass
class MetricRow:
    id: str
    psnr: float
    ssim: float
    d_vgg: float


def _aggregate(rows) -> dict:
    if not rows:
        return {}
    finite = [r.psnr for r in rows if math.isfinite(r.psnr)]
    return {
        "psnr_mean": float(np.mean(finite)) if finite else "inf",
        "psnr_inf_count": sum(1 for r in rows if math.isinf(r.psnr)),
        "ssim_mean": float(np.mean([r.ssim for r in rows])),
        "d_vgg_mean": float(np.mean([r.d_vgg for r in rows])),
    }


@dataclass
class MetricsReport:
    rows_restored: list
    rows_degraded: list
    config: dict
    identification: dict | None = None

    def aggregates(self) -> dict:
        return {
            "restored": _aggregate(self.rows_restored),
            "degraded": _aggregate(self.rows_degraded),
        }

    def to_json_text(self) -> str:
        def row(r):
            return {
                "id": r.id,
                "psnr": "inf" if math.isinf(r.psnr) else r.psnr,
                "ssim": r.ssim,
                "d_vgg": r.d_vgg,
            }

        doc = {
            "config": self.config,
            "rows": {
                "restored": [row(r) for r in self.rows_restored],
                "degraded": [row(r) for r in self.rows_degraded],
            },
            "aggregates": self.aggregates(),
        }
        if self.identification is not None:
            doc["identification"] = {str(k): v for k, v in self.identification.items()}
        return json.dumps(doc, sort_keys=True, indent=2) + "\n"

    def to_table_text(self) -> str:
        def fmt(v, width=10, digits=4):
            if isinstance(v, str) or math.isinf(v):
                return f"{'inf':>{width}}"
            return f"{v:>{width}.{digits}f}"

        lines = []
        for title, rows in (("degraded", self.rows_degraded), ("restored", self.rows_restored)):
            if not rows:
                continue
            lines.append(f"[{title}]")
            lines.append(f"{'id':<24}{'psnr':>10}{'ssim':>10}{'d_vgg':>14}")
            for r in rows:
                lines.append(f"{r.id:<24}{fmt(r.psnr)}{fmt(r.ssim)}{fmt(r.d_vgg, 14, 8)}")
            agg = _aggregate(rows)
            lines.append(
                f"{'mean':<24}{fmt(agg['psnr_mean'])}{fmt(agg['ssim_mean'])}"
                f"{fmt(agg['d_vgg_mean'], 14, 8)}"
                + (f"  (+{agg['psnr_inf_count']} inf)" if agg["psnr_inf_count"] else "")
            )
            lines.append("")
        if self.identification is not None:
            lines.append("[identification]")
            for k in sorted(self.identification):
                lines.append(f"top-{k:<3} {self.identification[k] * 100.0:6.2f}%")
            lines.append("")
        return "\n".join(lines)


def _file_digest(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]


def evaluate_restoration(manifest_path, atnet1_ckpt, atnet_ckpt, s_count: int, seed: int,
                         extractor: FeatureExtractor, threads: int = 1) -> MetricsReport:
    """Restore every manifest pair and score it against the clean image.

    Pure function of (manifest, checkpoints, S, seed, extractor): the prior
    for row k uses stream hash(seed, k) and inference is deterministic.
    """
    records = load_manifest(manifest_path)
    ck1 = load_checkpoint(atnet1_ckpt)
    ck = load_checkpoint(atnet_ckpt)
    reduction = ck.meta.get("prior_reduction", "per_channel")

    def run_row(item):
        idx, rec = item
        y = load_image(rec["degraded"])
        x = load_image(rec["clean"])
        rng = SeededRng(derive_seed(seed, idx))
        prior, _ = estimate_prior(ck1.spec, ck1.params, y, s_count, rng, reduction)
        net_in = np.concatenate([image_to_nchw(y), prior_to_nchw(prior)], axis=1)
        restored = nchw_to_image(forward(ck.spec, ck.params, net_in,
                                         ForwardMode.EVAL_DETERMINISTIC))
        row_id = Path(rec["degraded"]).stem
        return (
            MetricRow(row_id, psnr(restored, x), ssim(restored, x), d_vgg(restored, x, extractor)),
            MetricRow(row_id, psnr(y, x), ssim(y, x), d_vgg(y, x, extractor)),
        )

    results = ordered_parallel_map(run_row, list(enumerate(records)), threads)
    config = {
        "manifest": str(manifest_path),
        "atnet1_ckpt": {"path": str(atnet1_ckpt), "sha256_16": _file_digest(atnet1_ckpt)},
        "atnet_ckpt": {"path": str(atnet_ckpt), "sha256_16": _file_digest(atnet_ckpt)},
        "S": s_count,
        "seed": seed,
        "reduction": reduction,
        "extractor": extractor.name,
    }
    return MetricsReport(
        rows_restored=[r[0] for r in results],
        rows_degraded=[r[1] for r in results],
        config=config,
    )


class EmbeddingProvider(ABC):
    """Maps an image to a deterministic unit-norm embedding vector."""

    name: str = "embedding-provider"

    @abstractmethod
    def embed(self, img: Image) -> np.ndarray: ...


class DescriptorEmbeddingProvider(EmbeddingProvider):
    """Global-mean-pooled descriptor features, L2-normalized."""

    def __init__(self, descriptor: ConvFeatureDescriptor):
        self.descriptor = descriptor
        self.name = f"descriptor-embedding({descriptor.name})"

    @classmethod
    def seeded(cls, seed: int = 0, tap: str = "pool5"):
        return cls(ConvFeatureDescriptor.seeded(seed=seed, tap=tap))

    @classmethod
    def load(cls, path, tap: str = "pool5"):
        return cls(ConvFeatureDescriptor.load(path, tap=tap))

    def embed(self, img: Image) -> np.ndarray:
        fmap = self.descriptor.features(image_to_nchw(img.to_rgb()))
        vec = fmap.mean(axis=(0, 2, 3))
        norm = float(np.linalg.norm(vec))
        if norm < 1e-12:
            raise ValueError("degenerate embedding (zero feature vector)")
        return vec / norm


@dataclass
class Gallery:
    """Identity-labelled embedding vectors in insertion order."""

    labels: list = field(default_factory=list)
    embeddings: np.ndarray | None = None

    def add(self, label: str, vec: np.ndarray):
        vec = np.asarray(vec, dtype=np.float64)
        self.labels.append(label)
        self.embeddings = (
            vec[None, :]
            if self.embeddings is None
            else np.vstack([self.embeddings, vec[None, :]])
        )

    def __len__(self):
        return len(self.labels)

    @classmethod
    def from_dir(cls, path, provider: EmbeddingProvider) -> "Gallery":
        """Directory layout: one subdirectory per identity, images inside."""
        path = Path(path)
        if not path.is_dir():
            raise FileNotFoundError(f"no such gallery directory: {path}")
        gallery = cls()
        for ident_dir in sorted(p for p in path.iterdir() if p.is_dir()):
            images = sorted(p for p in ident_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
            if not images:
                raise ValueError(f"identity {ident_dir.name!r} has no images")
            for img_path in images:
                gallery.add(ident_dir.name, provider.embed(load_image(img_path)))
        if not len(gallery):
            raise ValueError(f"gallery directory {path} holds no identities")
        return gallery


def load_probes(path) -> list:
    """Probe directory with the same identity-subdirectory layout."""
    path = Path(path)
    if not path.is_dir():
        raise FileNotFoundError(f"no such probe directory: {path}")
    probes = []
    for ident_dir in sorted(p for p in path.iterdir() if p.is_dir()):
        for img_path in sorted(
            p for p in ident_dir.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES
        ):
            probes.append((load_image(img_path), ident_dir.name))
    if not probes:
        raise ValueError(f"probe directory {path} holds no images")
    return probes


def topk_identification(probes, gallery: Gallery, provider: EmbeddingProvider,
                        k_list=(1, 3, 5)) -> dict:
    """Fraction of probes whose identity appears among the K most similar
    gallery embeddings (cosine similarity; ties broken by insertion order)."""
    if not len(gallery):
        raise ValueError("gallery is empty")
    known = set(gallery.labels)
    labels = np.asarray(gallery.labels)
    hits = {k: 0 for k in k_list}
    for img, label in probes:
        if label not in known:
            raise ValueError(f"probe label {label!r} not present in gallery")
        vec = provider.embed(img)
        norm = float(np.linalg.norm(vec))
        if abs(norm - 1.0) > UNIT_NORM_TOL:
            raise ValueError(f"provider returned non-unit embedding (norm {norm})")
        sims = gallery.embeddings @ vec
        order = np.argsort(-sims, kind="stable")
        for k in k_list:
            if label in labels[order[:k]]:
                hits[k] += 1
    return {k: hits[k] / len(probes) for k in k_list}
