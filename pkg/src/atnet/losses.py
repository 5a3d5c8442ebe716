"""Training loss: mean L1 plus weighted perceptual feature distance.

Both terms are mean-reduced so the perceptual weight keeps its meaning
across resolutions and batch sizes.
"""

from dataclasses import dataclass

import numpy as np

from .features import FeatureExtractor


@dataclass
class LossConfig:
    lambda_p: float = 0.002
    extractor: FeatureExtractor | None = None

    def validate(self):
        if self.lambda_p < 0:
            raise ValueError(f"lambda_p must be >= 0, got {self.lambda_p}")
        if self.lambda_p > 0 and self.extractor is None:
            raise ValueError("lambda_p > 0 requires a feature extractor")
        return self


def _check_shapes(pred, target):
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {target.shape}")


def l1_loss(pred: np.ndarray, target: np.ndarray) -> float:
    """Mean absolute difference over all elements."""
    _check_shapes(pred, target)
    return float(np.mean(np.abs(pred - target)))


def l1_loss_and_grad(pred, target):
    _check_shapes(pred, target)
    diff = pred - target
    value = float(np.mean(np.abs(diff)))
    grad = np.sign(diff) / diff.size
    return value, grad


def perceptual_loss(pred, target, extractor: FeatureExtractor) -> float:
    """Mean squared distance between extractor features."""
    _check_shapes(pred, target)
    fp = extractor.features(pred)
    ft = extractor.features(target)
    return float(np.mean((fp - ft) ** 2))


def perceptual_loss_and_grad(pred, target, extractor: FeatureExtractor):
    _check_shapes(pred, target)
    fp, vjp = extractor.features_with_vjp(pred)
    ft = extractor.features(target)
    diff = fp - ft
    value = float(np.mean(diff * diff))
    grad = vjp(2.0 * diff / diff.size)
    return value, grad


def total_loss(pred, target, cfg: LossConfig) -> float:
    """l1 + lambda_p * perceptual; reduces to plain l1 when lambda_p = 0."""
    cfg.validate()
    value = l1_loss(pred, target)
    if cfg.lambda_p > 0:
        value += cfg.lambda_p * perceptual_loss(pred, target, cfg.extractor)
    return value


def total_loss_and_grad(pred, target, cfg: LossConfig):
    """Returns (total, grad_wrt_pred, {"l1": ..., "lp": ...})."""
    cfg.validate()
    l1, g = l1_loss_and_grad(pred, target)
    lp = 0.0
    if cfg.lambda_p > 0:
        lp, gp = perceptual_loss_and_grad(pred, target, cfg.extractor)
        g = g + cfg.lambda_p * gp
    return l1 + cfg.lambda_p * lp, g, {"l1": l1, "lp": lp}
