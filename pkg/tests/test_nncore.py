"""Forward oracles and finite-difference gradient checks for the autodiff core."""

import numpy as np
import pytest
from scipy.special import erf

from mgtext import nncore as nc
from mgtext.errors import ConfigError, LabelError, ShapeError


def randt(rng, *shape, grad=True):
    return nc.Tensor(rng.normal(size=shape), requires_grad=grad)


class TestMatmul:
    def test_identity(self):
        b = np.arange(12.0).reshape(3, 4)
        out = nc.matmul(nc.Tensor(np.eye(3)), nc.Tensor(b))
        np.testing.assert_array_equal(out.data, b)

    def test_hand_example(self):
        a = nc.Tensor([[1.0, 2.0], [3.0, 4.0]])
        b = nc.Tensor([[0.0], [1.0]])
        np.testing.assert_array_equal(nc.matmul(a, b).data, [[2.0], [4.0]])

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            nc.matmul(nc.Tensor(np.zeros((2, 3))), nc.Tensor(np.zeros((4, 2))))

    def test_grad_of_sum_is_broadcast_row_sums(self):
        # d/dA sum(A@B) puts B's row sums in every row of dA
        rng = np.random.default_rng(7)
        a = randt(rng, 4, 3)
        b = randt(rng, 3, 5, grad=False)
        nc.tsum(nc.matmul(a, b)).backward()
        expected = np.broadcast_to(b.data.sum(axis=1), (4, 3))
        np.testing.assert_allclose(a.grad, expected, rtol=1e-12)

    @pytest.mark.parametrize("seed", range(20))
    def test_fd(self, seed):
        rng = np.random.default_rng(seed)
        a = randt(rng, 3, 4)
        b = randt(rng, 4, 2)
        nc.gradcheck(lambda: nc.tsum(nc.mul(nc.matmul(a, b), rng_fixed_weights(a, b))), [a, b])

    def test_fd_batched(self):
        rng = np.random.default_rng(123)
        a = randt(rng, 2, 3, 4)
        b = randt(rng, 4, 5)
        w = rng.normal(size=(2, 3, 5))
        nc.gradcheck(lambda: nc.tsum(nc.mul(nc.matmul(a, b), w)), [a, b])


def rng_fixed_weights(a, b):
    # deterministic non-uniform weighting so FD exercises every output entry
    m, n = a.shape[0], b.shape[-1]
    return np.arange(1.0, m * n + 1.0).reshape(m, n)


class TestSoftmax:
    def test_uniform(self):
        out = nc.softmax(nc.Tensor([0.0, 0.0, 0.0]), axis=-1)
        np.testing.assert_allclose(out.data, [1 / 3] * 3, atol=1e-12)

    def test_large_logits_no_overflow(self):
        out = nc.softmax(nc.Tensor([1000.0, 0.0]), axis=-1)
        assert np.all(np.isfinite(out.data))
        np.testing.assert_allclose(out.data, [1.0, 0.0], atol=1e-12)

    def test_shift_invariance(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(5, 7))
        s1 = nc.softmax(nc.Tensor(x), axis=-1).data
        s2 = nc.softmax(nc.Tensor(x + 13.7), axis=-1).data
        np.testing.assert_allclose(s1, s2, atol=1e-12)

    @pytest.mark.parametrize("seed", range(10))
    def test_rows_sum_to_one(self, seed):
        rng = np.random.default_rng(seed)
        s = nc.softmax(nc.Tensor(rng.normal(size=(6, 9)) * 5), axis=-1).data
        np.testing.assert_allclose(s.sum(axis=-1), 1.0, atol=1e-6)

    @pytest.mark.parametrize("seed", range(10))
    def test_fd(self, seed):
        rng = np.random.default_rng(seed)
        x = randt(rng, 4, 5)
        w = rng.normal(size=(4, 5))
        nc.gradcheck(lambda: nc.tsum(nc.mul(nc.softmax(x, axis=-1), w)), [x], tol=1e-4)


class TestLayerNorm:
    def test_constant_row_is_zeroed(self):
        d = 6
        g, b = nc.Tensor(np.ones(d)), nc.Tensor(np.zeros(d))
        out = nc.layer_norm(nc.Tensor(np.full((2, d), 3.3)), g, b)
        np.testing.assert_allclose(out.data, 0.0, atol=1e-6)

    def test_two_point_row(self):
        g, b = nc.Tensor(np.ones(2)), nc.Tensor(np.zeros(2))
        out = nc.layer_norm(nc.Tensor([[1.0, 3.0]]), g, b, eps=1e-12)
        np.testing.assert_allclose(out.data, [[-1.0, 1.0]], atol=1e-6)

    def test_row_statistics(self):
        rng = np.random.default_rng(11)
        d = 32
        x = nc.Tensor(rng.normal(size=(10, d)) * 4 + 2)
        out = nc.layer_norm(x, nc.Tensor(np.ones(d)), nc.Tensor(np.zeros(d))).data
        np.testing.assert_allclose(out.mean(axis=-1), 0.0, atol=1e-5)
        np.testing.assert_allclose(out.var(axis=-1), 1.0, atol=1e-4)

    @pytest.mark.parametrize("seed", range(10))
    def test_fd(self, seed):
        rng = np.random.default_rng(seed)
        x = randt(rng, 3, 8)
        g = nc.Tensor(rng.normal(size=8) + 1.0, requires_grad=True)
        b = randt(rng, 8)
        w = rng.normal(size=(3, 8))
        nc.gradcheck(lambda: nc.tsum(nc.mul(nc.layer_norm(x, g, b), w)), [x, g, b], tol=1e-4)


class TestGelu:
    def test_zero(self):
        assert nc.gelu(nc.Tensor(np.array([0.0]))).data[0] == 0.0

    def test_asymptotes(self):
        out = nc.gelu(nc.Tensor(np.array([30.0, -30.0]))).data
        np.testing.assert_allclose(out[0], 30.0, atol=1e-9)
        np.testing.assert_allclose(out[1], 0.0, atol=1e-9)

    def test_at_one_matches_erf_oracle(self):
        phi1 = 0.5 * (1.0 + erf(1.0 / np.sqrt(2.0)))
        out = float(nc.gelu(nc.Tensor(np.array([1.0]))).data[0])
        assert abs(out - phi1) < 1e-12
        assert abs(out - 0.8413) < 1e-4

    def test_monotone_nonnegative(self):
        x = np.linspace(0.0, 8.0, 200)
        y = nc.gelu(nc.Tensor(x)).data
        assert np.all(np.diff(y) > 0)

    @pytest.mark.parametrize("seed", range(10))
    def test_fd(self, seed):
        rng = np.random.default_rng(seed)
        x = randt(rng, 7)
        w = rng.normal(size=7)
        nc.gradcheck(lambda: nc.tsum(nc.mul(nc.gelu(x), w)), [x], tol=1e-4)


class TestCrossEntropy:
    def test_uniform_logits(self):
        logits = nc.Tensor(np.zeros((4, 38)))
        targets = np.array([0, 5, 20, 37])
        loss = nc.cross_entropy(logits, targets)
        np.testing.assert_allclose(float(loss.data), np.log(38.0), atol=1e-9)

    def test_confident_logits_drive_loss_to_zero(self):
        targets = np.array([1, 2])
        losses = []
        for mag in (2.0, 5.0, 10.0, 20.0):
            logits = np.zeros((2, 4))
            logits[np.arange(2), targets] = mag
            losses.append(float(nc.cross_entropy(nc.Tensor(logits), targets).data))
        assert losses == sorted(losses, reverse=True)
        assert losses[-1] < 1e-6

    def test_out_of_range_target(self):
        with pytest.raises(LabelError):
            nc.cross_entropy(nc.Tensor(np.zeros((2, 3))), np.array([0, 3]))

    @pytest.mark.parametrize("seed", range(10))
    def test_fd(self, seed):
        rng = np.random.default_rng(seed)
        logits = randt(rng, 3, 5)
        targets = rng.integers(0, 5, size=3)
        nc.gradcheck(lambda: nc.cross_entropy(logits, targets), [logits], tol=1e-4)

    def test_fd_batched(self):
        rng = np.random.default_rng(99)
        logits = randt(rng, 2, 3, 5)
        targets = rng.integers(0, 5, size=(2, 3))
        nc.gradcheck(lambda: nc.cross_entropy(logits, targets), [logits], tol=1e-4)


def make_attention(rng, d, heads, zero=False, dtype=np.float64):
    def w(shape):
        data = np.zeros(shape, dtype) if zero else rng.normal(size=shape).astype(dtype) * 0.3
        return nc.Tensor(data, requires_grad=True)

    return nc.AttentionParams(
        heads=heads,
        wq=w((d, d)), bq=w((d,)),
        wk=w((d, d)), bk=w((d,)),
        wv=w((d, d)), bv=w((d,)),
        wo=w((d, d)), bo=w((d,)),
    )


class TestMultiHeadSelfAttention:
    def test_zero_projections_give_zero_output(self):
        rng = np.random.default_rng(0)
        params = make_attention(rng, 8, 2, zero=True)
        x = nc.Tensor(rng.normal(size=(5, 8)))
        out = nc.multi_head_self_attention(x, params)
        np.testing.assert_array_equal(out.data, 0.0)

    def test_single_token_attends_to_itself(self):
        rng = np.random.default_rng(1)
        params = make_attention(rng, 6, 3)
        x = nc.Tensor(rng.normal(size=(1, 6)))
        _, weights = nc.multi_head_self_attention(x, params, return_weights=True)
        np.testing.assert_array_equal(weights, 1.0)

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(2)
        d = 12
        params = make_attention(rng, d, 3)
        x = rng.normal(size=(4, d))
        perm = np.array([2, 0, 3, 1])
        out = nc.multi_head_self_attention(nc.Tensor(x), params).data
        out_p = nc.multi_head_self_attention(nc.Tensor(x[perm]), params).data
        np.testing.assert_allclose(out_p, out[perm], atol=1e-10)

    def test_indivisible_heads_rejected(self):
        rng = np.random.default_rng(3)
        params = make_attention(rng, 6, 4)
        with pytest.raises(ConfigError):
            nc.multi_head_self_attention(nc.Tensor(rng.normal(size=(2, 6))), params)

    def test_batched_matches_per_sample(self):
        rng = np.random.default_rng(4)
        d = 8
        params = make_attention(rng, d, 2)
        xs = rng.normal(size=(3, 5, d))
        batched = nc.multi_head_self_attention(nc.Tensor(xs), params).data
        for i in range(3):
            single = nc.multi_head_self_attention(nc.Tensor(xs[i]), params).data
            np.testing.assert_allclose(batched[i], single, atol=1e-12)

    @pytest.mark.parametrize("seed", range(5))
    def test_fd(self, seed):
        rng = np.random.default_rng(seed)
        d = 6
        params = make_attention(rng, d, 2)
        x = randt(rng, 4, d)
        wrt = [x] + [t for _, t in params.named("attn")]
        w = rng.normal(size=(4, d))

        def loss():
            return nc.tsum(nc.mul(nc.multi_head_self_attention(x, params), w))

        nc.gradcheck(loss, wrt, tol=1e-3)


class TestPlumbing:
    def test_concat_and_reshape_fd(self):
        rng = np.random.default_rng(5)
        a = randt(rng, 2, 3)
        b = randt(rng, 1, 3)
        w = rng.normal(size=(3, 3))

        def loss():
            return nc.tsum(nc.mul(nc.concat([a, b], axis=0), w))

        nc.gradcheck(loss, [a, b])

    def test_transpose_fd(self):
        rng = np.random.default_rng(6)
        x = randt(rng, 2, 3, 4)
        w = rng.normal(size=(4, 3, 2))
        nc.gradcheck(lambda: nc.tsum(nc.mul(nc.transpose(x, (2, 1, 0)), w)), [x])

    def test_mean(self):
        rng = np.random.default_rng(8)
        x = randt(rng, 3, 3)
        nc.gradcheck(lambda: nc.tmean(nc.mul(x, x)), [x])

    def test_no_grad_skips_graph(self):
        x = nc.Tensor(np.ones((2, 2)), requires_grad=True)
        with nc.no_grad():
            y = nc.matmul(x, x)
        assert y._backward is None and y._parents == ()

    def test_determinism(self):
        rng = np.random.default_rng(9)
        x = rng.normal(size=(4, 4)).astype(np.float32)
        a = nc.softmax(nc.Tensor(x), axis=-1).data
        b = nc.softmax(nc.Tensor(x.copy()), axis=-1).data
        assert a.tobytes() == b.tobytes()

    def test_paramset_ordering_and_duplicates(self):
        t = nc.Tensor(np.zeros(2), requires_grad=True)
        ps = nc.ParamSet({"b.x": t, "a.y": t})
        assert ps.names() == ["a.y", "b.x"]
        with pytest.raises(ConfigError):
            nc.ParamSet([("a", t), ("a", t)])

    def test_trunc_normal_bounds_and_determinism(self):
        rng1 = nc.seeded_rng(42, "w")
        rng2 = nc.seeded_rng(42, "w")
        a = nc.trunc_normal(rng1, (1000,), std=0.02)
        b = nc.trunc_normal(rng2, (1000,), std=0.02)
        assert a.tobytes() == b.tobytes()
        assert np.all(np.abs(a) <= 0.04 + 1e-7)
        assert a.dtype == np.float32
