import struct

import numpy as np
import pytest

from ftn import checkpoint, ops
from ftn.gradcheck import grad_check
from ftn.losses import cross_entropy
from ftn.nn import Conv2d, Linear, Module, Param
from ftn.optim import adam_step
from ftn.tensor import (NonFiniteError, ShapeError, Tensor, add, debug_mode, matmul, mul, no_grad,
                        relu, scale, softmax, sum_)

from conftest import p64


def conv_loop(x, w, b, stride, pad):
    B, C, H, W = x.shape
    O, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    Ho = (H + 2 * pad - kh) // stride + 1
    Wo = (W + 2 * pad - kw) // stride + 1
    out = np.zeros((B, O, Ho, Wo))
    for n in range(B):
        for o in range(O):
            for y in range(Ho):
                for xx in range(Wo):
                    acc = b[o]
                    for c in range(C):
                        for i in range(kh):
                            for j in range(kw):
                                acc += xp[n, c, y * stride + i, xx * stride + j] * w[o, c, i, j]
                    out[n, o, y, xx] = acc
    return out


class TestTensor:
    def test_rejects_nonfinite(self):
        with pytest.raises(NonFiniteError):
            Tensor([1.0, np.nan])
        with pytest.raises(NonFiniteError):
            Tensor([np.inf])

    def test_precision_selectable(self):
        assert Tensor([1.0]).dtype == np.float32
        assert Tensor([1.0], dtype=np.float64).dtype == np.float64
        with pytest.raises(TypeError):
            Tensor([1], dtype=np.int32)

    def test_debug_flags_nonfinite_after_op(self):
        a = Tensor([1e30], dtype=np.float32)
        with np.errstate(over="ignore"):
            with debug_mode():
                with pytest.raises(NonFiniteError):
                    mul(a, a)
            # release mode lets it through
            assert not np.isfinite(mul(a, a).data).all()

    def test_grad_shape_matches(self, rng):
        x = p64(rng.standard_normal((2, 3)))
        sum_(mul(x, x)).backward()
        assert x.grad.shape == x.shape

    def test_no_grad_records_nothing(self):
        x = p64([1.0, 2.0])
        with no_grad():
            y = mul(x, x)
        assert not y.requires_grad

    def test_shared_subexpression_accumulates(self):
        x = p64([3.0])
        y = mul(x, x)
        add(y, y).backward()
        assert x.grad[0] == pytest.approx(12.0)


class TestConv:
    def test_identity_1x1(self, rng):
        x = Tensor(rng.standard_normal((2, 3, 4, 5)), dtype=np.float64)
        w = Tensor(np.eye(3).reshape(3, 3, 1, 1), dtype=np.float64)
        out = ops.conv2d(x, w, Tensor(np.zeros(3), dtype=np.float64))
        np.testing.assert_array_equal(out.data, x.data)

    def test_shape(self, rng):
        x = Tensor(rng.standard_normal((1, 3, 8, 8)))
        w = Tensor(rng.standard_normal((5, 3, 3, 3)))
        assert ops.conv2d(x, w, stride=1, pad=1).shape == (1, 5, 8, 8)

    @pytest.mark.parametrize("stride,pad,k", [(1, 1, 3), (2, 1, 3), (1, 0, 3), (1, 2, 5), (2, 0, 1)])
    def test_matches_loop_oracle(self, rng, stride, pad, k):
        x = rng.standard_normal((1, 2, 4, 4))
        w = rng.standard_normal((3, 2, k, k))
        b = rng.standard_normal(3)
        out = ops.conv2d(Tensor(x, dtype=np.float64), Tensor(w, dtype=np.float64), Tensor(b, dtype=np.float64),
                         stride=stride, pad=pad)
        np.testing.assert_allclose(out.data, conv_loop(x, w, b, stride, pad), rtol=1e-12, atol=1e-12)

    def test_shape_errors(self, rng):
        x = Tensor(rng.standard_normal((1, 3, 4, 4)))
        with pytest.raises(ShapeError, match="channel mismatch"):
            ops.conv2d(x, Tensor(rng.standard_normal((2, 4, 3, 3))))
        with pytest.raises(ShapeError, match="larger than padded"):
            ops.conv2d(x, Tensor(rng.standard_normal((2, 3, 7, 7))))
        with pytest.raises(ShapeError):
            ops.conv2d(x, Tensor(rng.standard_normal((2, 3, 3, 3))), stride=0)

    @pytest.mark.parametrize("stride,pad,k", [(1, 1, 3), (2, 1, 3), (1, 0, 1), (1, 2, 5)])
    def test_gradients(self, rng, stride, pad, k):
        x = p64(rng.standard_normal((2, 2, 5, 5)))
        w = p64(rng.standard_normal((3, 2, k, k)))
        b = p64(rng.standard_normal(3))
        proj = rng.standard_normal(ops.conv2d(x, w, b, stride, pad).shape)
        f = lambda: sum_(mul(ops.conv2d(x, w, b, stride, pad), Tensor(proj, dtype=np.float64)))
        assert grad_check(f, [x, w, b]) <= 1e-4


class TestBatchNorm:
    def _params(self, c):
        return p64(np.ones(c)), p64(np.zeros(c)), np.zeros(c), np.ones(c)

    def test_normalizes(self, rng):
        g, b, rm, rv = self._params(3)
        x = Tensor(rng.standard_normal((4, 3, 5, 5)) * 3 + 2, dtype=np.float64)
        out = ops.batch_norm2d(x, g, b, rm, rv, training=True).data
        np.testing.assert_allclose(out.mean(axis=(0, 2, 3)), 0, atol=1e-5)
        np.testing.assert_allclose(out.var(axis=(0, 2, 3)), 1, atol=1e-5)

    def test_running_stats_momentum(self, rng):
        g, b, rm, rv = self._params(2)
        x = rng.standard_normal((3, 2, 2, 2)) + 5
        ops.batch_norm2d(Tensor(x, dtype=np.float64), g, b, rm, rv, training=True)
        np.testing.assert_allclose(rm, 0.1 * x.mean(axis=(0, 2, 3)))
        np.testing.assert_allclose(rv, 0.9 + 0.1 * x.var(axis=(0, 2, 3), ddof=1))

    def test_eval_uses_running_stats(self, rng):
        g, b, _, _ = self._params(2)
        rm, rv = np.array([1.0, -1.0]), np.array([4.0, 9.0])
        x = rng.standard_normal((1, 2, 3, 3))
        out = ops.batch_norm2d(Tensor(x, dtype=np.float64), g, b, rm, rv, training=False, eps=0.0).data
        np.testing.assert_allclose(out[:, 0], (x[:, 0] - 1) / 2)
        np.testing.assert_allclose(out[:, 1], (x[:, 1] + 1) / 3)

    def test_constant_channel_gives_beta(self):
        g = p64([2.0])
        b = p64([0.7])
        out = ops.batch_norm2d(Tensor(np.full((2, 1, 3, 3), 4.0), dtype=np.float64), g, b,
                               np.zeros(1), np.ones(1), training=True)
        np.testing.assert_allclose(out.data, 0.7)

    def test_too_few_values(self):
        g, b, rm, rv = self._params(1)
        with pytest.raises(ValueError, match="at least 2"):
            ops.batch_norm2d(Tensor(np.ones((1, 1, 1, 1))), g, b, rm, rv, training=True)

    def test_gradients(self, rng):
        g, b = p64(rng.uniform(0.5, 2, 3)), p64(rng.standard_normal(3))
        x = p64(rng.standard_normal((2, 3, 3, 2)))
        proj = Tensor(rng.standard_normal((2, 3, 3, 2)), dtype=np.float64)
        f = lambda: sum_(mul(ops.batch_norm2d(x, g, b, np.zeros(3), np.ones(3), True), proj))
        assert grad_check(f, [x, g, b]) <= 1e-4


class TestElementwise:
    def test_softmax_constant_row(self):
        out = softmax(Tensor(np.full((2, 5), 3.0), dtype=np.float64), axis=1)
        np.testing.assert_allclose(out.data, 0.2)

    def test_softmax_shift_invariant(self, rng):
        x = rng.standard_normal((3, 4))
        a = softmax(Tensor(x, dtype=np.float64)).data
        b = softmax(Tensor(x + 17.3, dtype=np.float64)).data
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)

    def test_softmax_axis_error(self):
        with pytest.raises(ShapeError):
            softmax(Tensor(np.ones((2, 2))), axis=2)

    def test_matmul_hand_expansion(self):
        a = np.array([[1.0, 2, 3], [4, 5, 6]])
        b = np.array([[7.0, 8], [9, 10], [11, 12]])
        expected = np.zeros((2, 2))
        for i in range(2):
            for j in range(2):
                for k in range(3):
                    expected[i, j] += a[i, k] * b[k, j]
        out = matmul(Tensor(a, dtype=np.float64), Tensor(b, dtype=np.float64))
        np.testing.assert_array_equal(out.data, expected)
        np.testing.assert_array_equal(expected, [[58, 64], [139, 154]])

    def test_matmul_mismatch(self):
        with pytest.raises(ShapeError):
            matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))

    def test_elementwise_gradients(self, rng):
        a = p64(rng.standard_normal((3, 4)))
        b = p64(rng.standard_normal((4,)))
        c = p64(rng.standard_normal((4, 2)))
        proj = Tensor(rng.standard_normal((3, 4)), dtype=np.float64)

        def f():
            s = softmax(add(mul(a, b), scale(relu(a), 0.5)), axis=1)
            return add(sum_(mul(s, proj)), sum_(matmul(a, c)))

        assert grad_check(f, [a, b, c]) <= 1e-4


class TestPooling:
    def test_channel_max_pool_identity(self, rng):
        x = Tensor(rng.standard_normal((1, 3, 2, 2)))
        np.testing.assert_array_equal(ops.channel_max_pool(x, 1).data, x.data)

    def test_channel_max_pool_planes(self):
        x = np.zeros((1, 4, 3, 3))
        x[:, :2] = 1
        x[:, 2:] = 5
        out = ops.channel_max_pool(Tensor(x), 2).data
        np.testing.assert_array_equal(out[0, 0], 1)
        np.testing.assert_array_equal(out[0, 1], 5)

    def test_channel_max_pool_loop_oracle(self, rng):
        x = rng.standard_normal((1, 8, 2, 2))
        out = ops.channel_max_pool(Tensor(x, dtype=np.float64), 2).data
        for d in range(4):
            for h in range(2):
                for w in range(2):
                    assert out[0, d, h, w] == max(x[0, 2 * d, h, w], x[0, 2 * d + 1, h, w])

    def test_channel_max_pool_gradient(self, rng):
        x = p64(rng.permutation(32).reshape(1, 8, 2, 2) * 0.1)  # distinct values, no ties
        proj = Tensor(rng.standard_normal((1, 4, 2, 2)), dtype=np.float64)
        assert grad_check(lambda: sum_(mul(ops.channel_max_pool(x, 2), proj)), [x]) <= 1e-4

    def test_channel_max_pool_tie_goes_first(self):
        x = p64(np.ones((1, 2, 1, 1)))
        sum_(ops.channel_max_pool(x, 2)).backward()
        np.testing.assert_array_equal(x.grad.reshape(-1), [1.0, 0.0])

    def test_channel_max_pool_divisibility(self):
        with pytest.raises(ShapeError):
            ops.channel_max_pool(Tensor(np.ones((1, 3, 2, 2))), 2)

    def test_global_pools(self):
        x = Tensor(np.array([1.0, 2, 3, 4]).reshape(1, 1, 2, 2), dtype=np.float64)
        assert ops.global_avg_pool(x).data[0, 0] == 2.5
        assert ops.global_max_pool(x).data[0, 0] == 4
        c = Tensor(np.full((2, 3, 4, 4), 1.5))
        np.testing.assert_array_equal(ops.global_avg_pool(c).data, 1.5)
        np.testing.assert_array_equal(ops.global_max_pool(c).data, 1.5)

    def test_global_pools_loop_oracle(self, rng):
        x = rng.standard_normal((2, 3, 4, 5))
        gap = ops.global_avg_pool(Tensor(x, dtype=np.float64)).data
        gmp = ops.global_max_pool(Tensor(x, dtype=np.float64)).data
        for b in range(2):
            for c in range(3):
                vals = [x[b, c, i, j] for i in range(4) for j in range(5)]
                assert gap[b, c] == pytest.approx(sum(vals) / 20, abs=1e-15)
                assert gmp[b, c] == max(vals)

    def test_global_pool_gradients(self, rng):
        x = p64(rng.permutation(48).reshape(2, 3, 4, 2) * 0.3)
        proj = Tensor(rng.standard_normal((2, 3)), dtype=np.float64)
        f = lambda: sum_(mul(add(ops.global_avg_pool(x), ops.global_max_pool(x)), proj))
        assert grad_check(f, [x]) <= 1e-4


class TestPixelShuffle:
    def test_identity(self, rng):
        x = Tensor(rng.standard_normal((1, 4, 3, 3)))
        np.testing.assert_array_equal(ops.pixel_shuffle(x, 1).data, x.data)

    def test_shape(self):
        assert ops.pixel_shuffle(Tensor(np.zeros((1, 256, 4, 4))), 2).shape == (1, 64, 8, 8)

    def test_block_layout(self):
        out = ops.pixel_shuffle(Tensor(np.array([1.0, 2, 3, 4]).reshape(1, 4, 1, 1)), 2).data
        np.testing.assert_array_equal(out[0, 0], [[1, 2], [3, 4]])

    def test_index_formula(self, rng):
        x = rng.standard_normal((2, 18, 2, 3))
        r = 3
        out = ops.pixel_shuffle(Tensor(x, dtype=np.float64), r).data
        for b in range(2):
            for c in range(2):
                for h in range(6):
                    for w in range(9):
                        assert out[b, c, h, w] == x[b, c * r * r + (h % r) * r + (w % r), h // r, w // r]

    def test_roundtrip(self, rng):
        x = Tensor(rng.standard_normal((2, 3, 8, 6)))
        np.testing.assert_array_equal(ops.pixel_shuffle(ops.pixel_unshuffle(x, 2), 2).data, x.data)

    def test_divisibility(self):
        with pytest.raises(ShapeError):
            ops.pixel_shuffle(Tensor(np.zeros((1, 6, 2, 2))), 2)

    def test_gradient(self, rng):
        x = p64(rng.standard_normal((1, 8, 2, 2)))
        proj = Tensor(rng.standard_normal((1, 2, 4, 4)), dtype=np.float64)
        assert grad_check(lambda: sum_(mul(ops.pixel_shuffle(x, 2), proj)), [x]) <= 1e-4


class TestGradCheck:
    def test_quadratic(self, rng):
        t = p64(rng.standard_normal(6))
        assert grad_check(lambda: sum_(mul(t, t)), [t]) <= 1e-9

    def test_linear_cross_entropy(self, rng):
        lin = Linear(4, 3, rng, dtype=np.float64)
        x = Tensor(rng.standard_normal((5, 4)), dtype=np.float64)
        labels = rng.integers(0, 3, 5)
        assert grad_check(lambda: cross_entropy(lin(x), labels), lin.parameters()) <= 1e-5

    def test_frozen_param_excluded(self, rng):
        a, b = p64([1.0, 2.0]), p64([3.0])
        b.requires_grad = False
        calls = []

        def f():
            calls.append(1)
            return sum_(mul(a, b))

        grad_check(f, [a, b])
        assert len(calls) == 1 + 2 * 2  # one backprop pass, two evaluations per coordinate of ``a`` only

    def test_rejects_nonscalar(self):
        a = p64([1.0, 2.0])
        with pytest.raises(ShapeError):
            grad_check(lambda: mul(a, a), [a])

    def test_requires_64bit(self):
        a = Param(np.ones(2, dtype=np.float32))
        with pytest.raises(TypeError):
            grad_check(lambda: sum_(a), [a])

    def test_eps_range(self):
        a = p64([1.0])
        with pytest.raises(ValueError):
            grad_check(lambda: sum_(a), [a], eps=1e-2)

    def test_subsampling_is_seeded(self, rng):
        t = p64(rng.standard_normal(50))
        f = lambda: sum_(mul(mul(t, t), t))
        assert grad_check(f, [t], max_coords=5, seed=3) == grad_check(f, [t], max_coords=5, seed=3)


class TestAdam:
    def test_zero_gradient(self):
        p = p64([1.0, -2.0])
        p.grad = np.zeros(2)
        adam_step([p], lr=0.1)
        np.testing.assert_array_equal(p.data, [1.0, -2.0])
        assert p.adam_step == 1
        assert p.grad is None

    def test_first_step_is_signed_lr(self):
        p = p64([0.0, 0.0, 0.0])
        p.grad = np.array([3.0, -0.02, 1e3])
        adam_step([p], lr=0.01)
        np.testing.assert_allclose(p.data, [-0.01, 0.01, -0.01], rtol=1e-5)

    def test_missing_gradient(self):
        with pytest.raises(ValueError, match="no gradient"):
            adam_step([p64([1.0])], lr=0.1)

    def test_converges_on_quadratic(self):
        theta = p64([0.0])
        for _ in range(50):
            loss = sum_(mul(add(theta, -3.0), add(theta, -3.0)))
            loss.backward()
            adam_step([theta], lr=0.1)
        # scalar Adam recurrence reference
        x, m, v = 0.0, 0.0, 0.0
        for t in range(1, 51):
            g = 2 * (x - 3)
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            x -= 0.1 * (m / (1 - 0.9**t)) / (np.sqrt(v / (1 - 0.999**t)) + 1e-8)
        assert abs(theta.data[0] - 3) < 3
        assert theta.data[0] == pytest.approx(x, rel=1e-12)


class TestPurity:
    def test_forward_bitwise_repeatable(self, rng):
        conv = Conv2d(3, 4, 3, rng, dtype=np.float64)
        x = Tensor(rng.standard_normal((2, 3, 6, 6)), dtype=np.float64)
        a = softmax(relu(conv(x)), axis=1).data
        b = softmax(relu(conv(x)), axis=1).data
        assert a.tobytes() == b.tobytes()


class TestCheckpoint:
    def test_byte_layout(self):
        blob = checkpoint.encode({"w": np.array([[1.0, 2.0]], dtype=np.float32)})
        expected = (b"FTN1" + struct.pack("<I", 1) + struct.pack("<I", 1) + b"w"
                    + struct.pack("<I", 2) + struct.pack("<II", 1, 2) + struct.pack("<ff", 1.0, 2.0))
        assert blob == expected

    def test_roundtrip_module(self, rng, tmp_path):
        class Tiny(Module):
            def __init__(self):
                super().__init__()
                self.conv = Conv2d(2, 3, 3, rng)
                self.lin = Linear(3, 2, rng)

        a, b = Tiny(), Tiny()
        a.assign_names()
        checkpoint.save(a, tmp_path / "a.ftn")
        checkpoint.load(b, tmp_path / "a.ftn")
        for (na, pa), (nb, pb) in zip(a.named_parameters(), b.named_parameters()):
            assert na == nb
            np.testing.assert_array_equal(pa.data, pb.data)

    def test_bad_magic(self):
        with pytest.raises(ValueError, match="magic"):
            checkpoint.decode(b"XXXX\x00\x00\x00\x00")

    def test_unicode_names(self):
        out = checkpoint.decode(checkpoint.encode({"γ.φ": np.zeros(3, np.float32)}))
        assert list(out) == ["γ.φ"]
