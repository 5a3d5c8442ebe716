import numpy as np
import pytest

from atnet.features import ConvFeatureDescriptor, IdentityFeatures
from atnet.losses import (
    LossConfig,
    l1_loss,
    perceptual_loss,
    total_loss,
    total_loss_and_grad,
)
from atnet.optim import AdamConfig, AdamState, adam_step
from atnet.rng import SeededRng


class TestL1:
    def test_zero_for_equal(self):
        x = SeededRng(0).uniform(0, 1, (2, 3, 8, 8))
        assert l1_loss(x, x.copy()) == 0.0

    def test_constant_offset(self):
        x = SeededRng(1).uniform(0, 0.8, (2, 3, 8, 8))
        assert abs(l1_loss(x + 0.2, x) - 0.2) < 1e-12

    def test_matches_elementwise_oracle(self):
        a = SeededRng(2).uniform(0, 1, (2, 3, 4, 4))
        b = SeededRng(3).uniform(0, 1, (2, 3, 4, 4))
        ref = sum(abs(float(x) - float(y)) for x, y in zip(a.reshape(-1), b.reshape(-1)))
        assert abs(l1_loss(a, b) - ref / a.size) < 1e-12

    def test_shape_mismatch(self):
        with pytest.raises(ValueError, match="shape"):
            l1_loss(np.zeros((1, 3, 8, 8)), np.zeros((1, 3, 8, 9)))


class TestPerceptual:
    def test_zero_for_equal(self):
        ext = ConvFeatureDescriptor.seeded(0, tap="pool2")
        x = SeededRng(4).uniform(0, 1, (1, 3, 16, 16))
        assert perceptual_loss(x, x.copy(), ext) == 0.0

    def test_symmetric(self):
        ext = ConvFeatureDescriptor.seeded(0, tap="pool2")
        a = SeededRng(5).uniform(0, 1, (1, 3, 16, 16))
        b = SeededRng(6).uniform(0, 1, (1, 3, 16, 16))
        assert perceptual_loss(a, b, ext) == perceptual_loss(b, a, ext)

    def test_identity_extractor_equals_mse(self):
        a = SeededRng(7).uniform(0, 1, (2, 3, 8, 8))
        b = SeededRng(8).uniform(0, 1, (2, 3, 8, 8))
        lp = perceptual_loss(a, b, IdentityFeatures())
        assert abs(lp - float(np.mean((a - b) ** 2))) < 1e-12


class TestTotalLoss:
    def test_lambda_zero_reduces_to_l1(self):
        a = SeededRng(9).uniform(0, 1, (1, 3, 8, 8))
        b = SeededRng(10).uniform(0, 1, (1, 3, 8, 8))
        cfg = LossConfig(lambda_p=0.0, extractor=None)
        assert total_loss(a, b, cfg) == l1_loss(a, b)

    def test_zero_iff_equal(self):
        cfg = LossConfig(lambda_p=0.002, extractor=ConvFeatureDescriptor.seeded(0, tap="pool2"))
        x = SeededRng(11).uniform(0, 1, (1, 3, 16, 16))
        assert total_loss(x, x.copy(), cfg) == 0.0
        y = x.copy()
        y[0, 0, 0, 0] += 0.25
        assert total_loss(y, x, cfg) > 0.0

    def test_default_weight(self):
        assert LossConfig().lambda_p == 0.002

    def test_gradient_matches_finite_differences(self):
        cfg = LossConfig(lambda_p=0.002, extractor=ConvFeatureDescriptor.seeded(1, tap="pool2"))
        pred = SeededRng(12).uniform(0.1, 0.9, (1, 3, 8, 8))
        target = SeededRng(13).uniform(0.1, 0.9, (1, 3, 8, 8))
        _, grad, aux = total_loss_and_grad(pred, target, cfg)
        assert aux["l1"] > 0 and aux["lp"] > 0
        h = 1e-6
        flat, gflat = pred.reshape(-1), grad.reshape(-1)
        for i in range(0, flat.size, 5):
            orig = flat[i]
            flat[i] = orig + h
            lp_val = total_loss(pred, target, cfg)
            flat[i] = orig - h
            lm_val = total_loss(pred, target, cfg)
            flat[i] = orig
            fd = (lp_val - lm_val) / (2 * h)
            assert abs(fd - gflat[i]) <= 1e-3 * max(abs(fd), abs(gflat[i]), 1e-3)

    def test_grad_consistency_between_paths(self):
        # value from total_loss equals value from total_loss_and_grad
        cfg = LossConfig(lambda_p=0.002, extractor=ConvFeatureDescriptor.seeded(2, tap="pool2"))
        a = SeededRng(14).uniform(0, 1, (1, 3, 16, 16))
        b = SeededRng(15).uniform(0, 1, (1, 3, 16, 16))
        v1 = total_loss(a, b, cfg)
        v2, _, _ = total_loss_and_grad(a, b, cfg)
        assert abs(v1 - v2) < 1e-15

    def test_negative_lambda_rejected(self):
        with pytest.raises(ValueError, match="lambda_p"):
            LossConfig(lambda_p=-0.1).validate()


class TestAdam:
    def test_zero_gradient_keeps_parameters(self):
        params = {"w": np.full((4,), 0.5, dtype=np.float32)}
        state = AdamState(params)
        ok = adam_step(params, {"w": np.zeros(4)}, state, AdamConfig())
        assert ok
        assert state.t == 1
        assert np.all(params["w"] == np.float32(0.5))

    def test_first_step_magnitude(self):
        params = {"w": np.zeros(1, dtype=np.float32)}
        state = AdamState(params)
        adam_step(params, {"w": np.ones(1)}, state, AdamConfig(lr=1e-3))
        assert abs(float(params["w"][0]) + 1e-3) < 1e-6

    def test_non_finite_gradient_rejected(self):
        params = {"w": np.full((2,), 0.25, dtype=np.float32)}
        state = AdamState(params)
        ok = adam_step(params, {"w": np.array([1.0, np.nan])}, state, AdamConfig())
        assert not ok
        assert state.t == 0
        assert state.rejected == 1
        assert np.all(params["w"] == np.float32(0.25))

    def test_deterministic_trajectory(self):
        def run():
            rng = SeededRng(3)
            params = {"w": rng.uniform(-1, 1, (8,)).astype(np.float32)}
            state = AdamState(params)
            grng = SeededRng(4)
            for _ in range(10):
                adam_step(params, {"w": grng.normal(0, 1, (8,))}, state, AdamConfig())
            return params["w"]

        assert np.array_equal(run(), run())

    def test_moment_shapes_mirror_parameters(self):
        params = {"a": np.zeros((2, 3), dtype=np.float32), "b": np.zeros(5, dtype=np.float32)}
        state = AdamState(params)
        assert state.m["a"].shape == (2, 3)
        assert state.v["b"].shape == (5,)
