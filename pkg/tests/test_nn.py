import numpy as np
import pytest

from asnpp.nn import (
    Adam,
    BatchNorm2d,
    Conv2d,
    ModelWeights,
    Parameter,
    ReLU,
    ResidualBlock,
    SGD,
    Tensor,
    TrainConfig,
    concat_channels,
    grad_check,
    load_weights,
    mse_loss,
    nchw_to_nhwc,
    nhwc_to_nchw,
    save_weights,
)


def naive_conv(x, w, b):
    """Direct O(n^2 k^2) same-padded convolution, NHWC."""
    n, h, ww, cin = x.shape
    k, _, _, cout = w.shape
    p = k // 2
    y = np.zeros((n, h, ww, cout))
    for ni in range(n):
        for yy in range(h):
            for xx in range(ww):
                for f in range(cout):
                    acc = b[f]
                    for ki in range(k):
                        for kj in range(k):
                            yi, xi = yy + ki - p, xx + kj - p
                            if 0 <= yi < h and 0 <= xi < ww:
                                acc += x[ni, yi, xi, :] @ w[ki, kj, :, f]
                    y[ni, yy, xx, f] = acc
    return y


class TestTensor:
    def test_requires_rank_4(self):
        with pytest.raises(ValueError):
            Tensor(np.zeros((2, 3, 4)))

    def test_grad_shape_checked(self):
        with pytest.raises(ValueError):
            Tensor(np.zeros((1, 1, 2, 2)), grad=np.zeros((1, 1, 2, 3)))

    def test_layout_roundtrip(self):
        x = np.random.default_rng(0).random((2, 3, 4, 5)).astype(np.float32)
        assert np.array_equal(nhwc_to_nchw(nchw_to_nhwc(x)), x)


class TestConv:
    def test_identity_kernel(self):
        rng = np.random.default_rng(1)
        conv = Conv2d(1, 1, 3, rng)
        conv.w.data[...] = 0.0
        conv.w.data[1, 1, 0, 0] = 1.0
        conv.b.data[...] = 0.0
        x = rng.random((1, 3, 3, 1), dtype=np.float32)
        assert np.array_equal(conv.forward(x), x)

    def test_zero_weights_give_bias(self):
        rng = np.random.default_rng(2)
        conv = Conv2d(2, 3, 3, rng)
        conv.w.data[...] = 0.0
        conv.b.data[...] = np.array([1.0, -2.0, 0.5])
        y = conv.forward(rng.random((1, 4, 4, 2), dtype=np.float32))
        assert np.allclose(y, [1.0, -2.0, 0.5])

    def test_matches_naive_oracle(self):
        rng = np.random.default_rng(3)
        conv = Conv2d(3, 4, 3, rng)
        x = rng.random((2, 8, 8, 3), dtype=np.float32)
        ref = naive_conv(
            x.astype(np.float64),
            conv.w.data.astype(np.float64),
            conv.b.data.astype(np.float64),
        )
        assert np.abs(conv.forward(x) - ref).max() < 1e-5

    def test_preserves_spatial_dims(self):
        rng = np.random.default_rng(4)
        for k in (1, 3, 5, 7):
            conv = Conv2d(2, 2, k, rng)
            y = conv.forward(rng.random((1, 6, 9, 2), dtype=np.float32))
            assert y.shape == (1, 6, 9, 2)

    def test_rejects_even_kernel_and_bad_channels(self):
        rng = np.random.default_rng(5)
        with pytest.raises(ValueError):
            Conv2d(1, 1, 4, rng)
        conv = Conv2d(2, 1, 3, rng)
        with pytest.raises(ValueError):
            conv.forward(np.zeros((1, 4, 4, 3), np.float32))


class TestBatchNorm:
    def test_normalizes_in_train_mode(self):
        rng = np.random.default_rng(6)
        bn = BatchNorm2d(3)
        x = rng.normal(5.0, 3.0, (4, 8, 8, 3)).astype(np.float32)
        y = bn.forward(x, training=True).reshape(-1, 3)
        assert np.abs(y.mean(axis=0)).max() < 1e-3
        assert np.abs(y.var(axis=0) - 1.0).max() < 1e-3

    def test_zero_gamma_gives_beta(self):
        bn = BatchNorm2d(2)
        bn.gamma.data[...] = 0.0
        bn.beta.data[...] = np.array([3.0, -1.0])
        y = bn.forward(np.random.default_rng(7).random((2, 4, 4, 2)).astype(np.float32), True)
        assert np.allclose(y, [3.0, -1.0])

    def test_infer_before_train_uses_initial_stats(self):
        bn = BatchNorm2d(1)
        x = np.full((1, 2, 2, 1), 2.0, np.float32)
        y = bn.forward(x, training=False)
        assert np.allclose(y, 2.0, atol=1e-4)  # (x-0)/sqrt(1+eps)

    def test_running_stats_update(self):
        bn = BatchNorm2d(1, momentum=0.9)
        x = np.full((1, 4, 4, 1), 10.0, np.float32)
        bn.forward(x, training=True)
        assert bn.running_mean[0] == pytest.approx(1.0)  # 0.9*0 + 0.1*10


class TestElementwise:
    def test_relu_values(self):
        r = ReLU()
        x = np.array([[-1.0, 0.0], [2.0, -3.0]], np.float32).reshape(1, 2, 2, 1)
        assert list(r.forward(x).reshape(-1)) == [0.0, 0.0, 2.0, 0.0]

    def test_relu_subgradient_zero_at_zero(self):
        r = ReLU()
        x = np.zeros((1, 1, 1, 1), np.float32)
        r.forward(x, training=True)
        assert r.backward(np.ones_like(x))[0, 0, 0, 0] == 0.0

    def test_add_is_sum(self):
        from asnpp.nn import add

        x = np.random.default_rng(8).random((1, 2, 2, 3)).astype(np.float32)
        assert np.array_equal(add(x, np.zeros_like(x)), x)
        with pytest.raises(ValueError):
            add(x, np.zeros((1, 2, 2, 2), np.float32))

    def test_concat_channel_counts(self):
        a = np.zeros((1, 8, 8, 64), np.float32)
        b = np.ones((1, 8, 8, 64), np.float32)
        c = concat_channels(a, b)
        assert c.shape == (1, 8, 8, 128)
        assert np.all(c[..., :64] == 0) and np.all(c[..., 64:] == 1)
        with pytest.raises(ValueError):
            concat_channels(a, np.zeros((1, 4, 8, 64), np.float32))


class TestMseLoss:
    def test_zero_when_equal(self):
        x = np.random.default_rng(9).random((2, 1, 4, 4)).astype(np.float32)
        loss, grad = mse_loss(x, x.copy())
        assert loss == 0.0 and np.all(grad == 0)

    def test_constant_offset(self):
        pred = np.full((3, 1, 2, 2), 5.0, np.float32)
        target = np.full((3, 1, 2, 2), 3.0, np.float32)
        loss, grad = mse_loss(pred, target)
        assert loss == pytest.approx(4.0)
        assert np.allclose(grad, 2 * 2.0 / pred.size)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(10)
        pred = rng.random((1, 1, 3, 3)).astype(np.float64)
        target = rng.random((1, 1, 3, 3)).astype(np.float64)
        _, grad = mse_loss(pred, target)
        h = 1e-6
        for idx in np.ndindex(pred.shape):
            p = pred.copy()
            p[idx] += h
            hi, _ = mse_loss(p, target)
            p[idx] -= 2 * h
            lo, _ = mse_loss(p, target)
            assert grad[idx] == pytest.approx((hi - lo) / (2 * h), rel=1e-3)


class TestOptimizers:
    def test_zero_grad_no_change(self):
        p = Parameter(np.array([1.0, 2.0], np.float32))
        p.grad = np.zeros(2, np.float32)
        for opt in (SGD([p], lr=1.0), Adam([p], lr=1.0)):
            opt.step()
            assert np.array_equal(p.data, [1.0, 2.0])

    def test_sgd_scalar_step(self):
        p = Parameter(np.array([3.0], np.float32))
        p.grad = np.array([1.0], np.float32)
        SGD([p], lr=1.0).step()
        assert p.data[0] == 2.0

    def test_adam_first_step_is_signed_lr(self):
        # bias correction makes the first update lr * g / (|g| + eps)
        for g in (0.5, -2.0, 1e-3):
            p = Parameter(np.array([1.0], np.float32))
            p.grad = np.array([g], np.float32)
            Adam([p], lr=0.01).step()
            assert p.data[0] == pytest.approx(1.0 - 0.01 * np.sign(g), abs=1e-5)

    def test_trainconfig_validation(self):
        with pytest.raises(ValueError):
            TrainConfig(lr_decay_epoch=50, end_epoch=40)
        with pytest.raises(ValueError):
            TrainConfig(batch_size=0)
        cfg = TrainConfig(lr=1e-3, lr_decay_epoch=2, end_epoch=4)
        assert cfg.lr_at_epoch(1) == pytest.approx(1e-3)
        assert cfg.lr_at_epoch(2) == pytest.approx(1e-4)
        assert TrainConfig(lr_decay_epoch=None, end_epoch=1).lr_at_epoch(0) == 1e-4


class TestGradCheck:
    def test_conv3(self):
        rng = np.random.default_rng(11)
        rep = grad_check(Conv2d(1, 2, 3, rng), rng.random((1, 5, 5, 1)).astype(np.float32))
        assert rep.passed, rep

    def test_conv5(self):
        rng = np.random.default_rng(12)
        rep = grad_check(Conv2d(1, 3, 5, rng), rng.random((1, 6, 6, 1)).astype(np.float32))
        assert rep.passed, rep

    def test_batchnorm(self):
        rng = np.random.default_rng(13)
        rep = grad_check(BatchNorm2d(3), rng.random((2, 4, 4, 3)).astype(np.float32))
        assert rep.passed, rep

    def test_residual_block(self):
        rng = np.random.default_rng(14)
        rep = grad_check(ResidualBlock(4, rng), rng.random((1, 5, 5, 4)).astype(np.float32))
        assert rep.passed, rep

    def test_corrupted_backward_fails(self):
        class BadConv(Conv2d):
            def backward(self, dy, need_dx=True):
                dx = super().backward(dy, need_dx)
                self.w.grad = -self.w.grad
                return dx

        rng = np.random.default_rng(15)
        rep = grad_check(BadConv(1, 2, 3, rng), rng.random((1, 4, 4, 1)).astype(np.float32))
        assert not rep.passed

    def test_parameter_cap(self):
        rng = np.random.default_rng(16)
        layer = Conv2d(64, 64, 3, rng)  # ~37k parameters
        with pytest.raises(ValueError, match="cap"):
            grad_check(layer, rng.random((1, 4, 4, 64)).astype(np.float32))


class TestSerialization:
    def test_roundtrip_bit_exact(self, tmp_path):
        rng = np.random.default_rng(17)
        weights = ModelWeights(
            descriptor='{"arch":"demo"}',
            tensors={
                "a.w": rng.normal(size=(3, 3, 2, 4)).astype(np.float32),
                "a.b": rng.normal(size=(4,)).astype(np.float32),
                "bn.running_var": rng.random(4).astype(np.float32),
            },
        )
        path = tmp_path / "m.asnm"
        save_weights(path, weights)
        back = load_weights(path)
        assert back.descriptor == weights.descriptor
        assert list(back.tensors) == list(weights.tensors)
        for k in weights.tensors:
            assert back.tensors[k].dtype == np.float32
            assert np.array_equal(back.tensors[k], weights.tensors[k])
        # and the file itself is stable
        save_weights(tmp_path / "m2.asnm", back)
        assert (tmp_path / "m.asnm").read_bytes() == (tmp_path / "m2.asnm").read_bytes()

    def test_rejects_bad_magic(self, tmp_path):
        path = tmp_path / "x.asnm"
        path.write_bytes(b"WHAT" + bytes(16))
        with pytest.raises(ValueError):
            load_weights(path)
