"""Feature extractors for the perceptual loss and feature-distance metric.

Production use expects an externally supplied pretrained face-descriptor
network converted to the container format below; the repo cannot ship such
weights.  The built-in seeded descriptor has the same structure (3x3 conv,
relu, 2x average pool per stage, tap points pool1..pool5) with fixed random
weights, which keeps the loss and metric machinery fully testable.
Extractors are deterministic: identical inputs give identical features.
"""

import math
from abc import ABC, abstractmethod

import numpy as np

from . import layers
from .checkpoint import CheckpointError, read_container, write_container
from .rng import SeededRng

DEFAULT_STAGES = ((3, 8), (8, 16), (16, 24), (24, 32), (32, 32))


class FeatureExtractor(ABC):
    """Maps an (N, C, H, W) batch to a feature map, with a VJP for training."""

    name: str = "feature-extractor"

    @abstractmethod
    def features(self, x: np.ndarray) -> np.ndarray: ...

    @abstractmethod
    def features_with_vjp(self, x: np.ndarray): ...


class IdentityFeatures(FeatureExtractor):
    """Features are the pixels themselves; used by tests as a plug-in oracle."""

    name = "identity"

    def features(self, x):
        return np.asarray(x, dtype=np.float64)

    def features_with_vjp(self, x):
        return np.asarray(x, dtype=np.float64), lambda g: g


def _pool_floor(x):
    # 2x average pooling; odd trailing row/column dropped
    n, c, h, w = x.shape
    h2, w2 = h // 2, w // 2
    if h2 < 1 or w2 < 1:
        raise ValueError(f"feature map {h}x{w} too small to pool; input too small for tap")
    return x[:, :, : 2 * h2, : 2 * w2].reshape(n, c, h2, 2, w2, 2).mean(axis=(3, 5))


def _pool_floor_vjp(gy, in_hw):
    h, w = in_hw
    n, c, h2, w2 = gy.shape
    gx = np.zeros((n, c, h, w), dtype=np.float64)
    gx[:, :, : 2 * h2, : 2 * w2] = np.repeat(np.repeat(gy, 2, axis=2), 2, axis=3) * 0.25
    return gx


class ConvFeatureDescriptor(FeatureExtractor):
    """Fixed convolutional descriptor with pool1..poolN tap points."""

    def __init__(self, weights: dict, stages=DEFAULT_STAGES, tap: str = "pool3",
                 name: str = "conv-descriptor"):
        self.stages = tuple((int(a), int(b)) for a, b in stages)
        self.tap_index = self._tap_to_index(tap)
        self.tap = tap
        self.weights = weights
        self.name = f"{name}/{tap}"

    def _tap_to_index(self, tap: str) -> int:
        if not tap.startswith("pool"):
            raise ValueError(f"unknown tap point {tap!r}")
        idx = int(tap[4:])
        if not 1 <= idx <= len(self.stages):
            raise ValueError(f"tap {tap!r} outside pool1..pool{len(self.stages)}")
        return idx

    @classmethod
    def seeded(cls, seed: int = 0, tap: str = "pool3", stages=DEFAULT_STAGES):
        """Deterministic random-weight descriptor (the shipped test double)."""
        rng = SeededRng(seed)
        weights = {}
        for si, (cin, cout) in enumerate(stages):
            bound = 1.0 / math.sqrt(cin * 9)
            weights[f"s{si}.w"] = rng.uniform(-bound, bound, (cout, cin, 3, 3)).astype(np.float32)
            weights[f"s{si}.b"] = rng.uniform(-bound, bound, (cout,)).astype(np.float32)
        return cls(weights, stages, tap, name=f"seeded-conv-descriptor(seed={seed})")

    @classmethod
    def load(cls, path, tap: str = "pool3"):
        header, arrays = read_container(path)
        if header.get("kind") != "feature_descriptor":
            raise CheckpointError(f"{path} is not a feature descriptor file")
        stages = tuple(tuple(s) for s in header["stages"])
        return cls(arrays, stages, tap, name=header.get("name", "conv-descriptor"))

    def save(self, path):
        header = {
            "kind": "feature_descriptor",
            "stages": [list(s) for s in self.stages],
            "name": self.name.rsplit("/", 1)[0],
        }
        write_container(path, header, self.weights)

    def _stage_params(self, si):
        return (
            np.asarray(self.weights[f"s{si}.w"], dtype=np.float64),
            np.asarray(self.weights[f"s{si}.b"], dtype=np.float64),
        )

    def features(self, x):
        cur = np.ascontiguousarray(x, dtype=np.float64)
        for si in range(self.tap_index):
            w, b = self._stage_params(si)
            cur = _pool_floor(layers.relu(layers.conv2d(cur, w, b)))
        return cur

    def features_with_vjp(self, x):
        cur = np.ascontiguousarray(x, dtype=np.float64)
        tape = []
        for si in range(self.tap_index):
            w, b = self._stage_params(si)
            xin = cur
            a = layers.conv2d(xin, w, b)
            r = layers.relu(a)
            tape.append((xin, w, r, r.shape[2:]))
            cur = _pool_floor(r)

        def vjp(g):
            for xin, w, r, in_hw in reversed(tape):
                g = _pool_floor_vjp(g, in_hw)
                g = layers.relu_vjp(g, r)
                g, _, _ = layers.conv2d_vjp(xin, w, g)
            return g

        return cur, vjp


def load_feature_extractor(weights_path: str = "", seed: int = 0,
                           tap: str = "pool3") -> FeatureExtractor:
    """Weights file if given, otherwise the seeded built-in descriptor."""
    if weights_path:
        return ConvFeatureDescriptor.load(weights_path, tap=tap)
    return ConvFeatureDescriptor.seeded(seed=seed, tap=tap)
