import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gradcheck import check, numeric_grad, rel_err
from metasaea.tensor import (Adam, AttnBlock, EmptyPopulationError, ShapeError, Tensor, attention,
                             clip_grad_norm, concat, gelu, huber, layernorm, load_params, matmul,
                             no_grad, relu, save_params, softmax, take_rows)


def param(x):
    return Tensor(np.asarray(x, dtype=float), requires_grad=True)


class TestMatmul:
    def test_identity(self):
        out = matmul(Tensor([[1, 0], [0, 1]]), Tensor([[2, 3], [4, 5]]))
        np.testing.assert_array_equal(out.data, [[2, 3], [4, 5]])

    def test_row_times_column(self):
        assert matmul(Tensor([[1, 2]]), Tensor([[3], [4]])).data.tolist() == [[11.0]]

    def test_sum_gradient_is_ones_times_bt(self, rng):
        A, B = param(rng.normal(size=(3, 4))), param(rng.normal(size=(4, 2)))
        (A @ B).sum().backward()
        np.testing.assert_allclose(A.grad, np.ones((3, 2)) @ B.data.T, rtol=0, atol=1e-12)
        num = numeric_grad(lambda: (A @ B).sum().item(), A)
        assert rel_err(A.grad, num) <= 1e-6

    def test_batched_broadcast(self, rng):
        A, B = param(rng.normal(size=(2, 3, 4))), param(rng.normal(size=(4, 5)))
        check(lambda: ((A @ B) ** 2).sum(), [A, B])
        C = param(rng.normal(size=(2, 4, 5)))
        check(lambda: ((A @ C) ** 2).sum(), [A, C])

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
            matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


class TestLayerNorm:
    def test_constant_input(self):
        out = layernorm(Tensor([1.0, 1.0, 1.0]), Tensor(np.ones(3)), Tensor(np.zeros(3)))
        np.testing.assert_allclose(out.data, 0.0, atol=1e-12)

    def test_two_values(self):
        out = layernorm(Tensor([0.0, 2.0]), Tensor(np.ones(2)), Tensor(np.zeros(2)))
        np.testing.assert_allclose(out.data, [-1.0, 1.0], atol=1e-3)

    def test_width_one_returns_shift(self):
        out = layernorm(Tensor([[3.0]]), Tensor([2.0]), Tensor([0.7]))
        np.testing.assert_allclose(out.data, [[0.7]])

    def test_gradient(self, rng):
        x = param(rng.normal(size=(3, 5)))
        g, b = param(rng.normal(size=5)), param(rng.normal(size=5))
        w = rng.normal(size=(3, 5))
        assert check(lambda: (layernorm(x, g, b) * w).sum(), [x, g, b], tol=1e-5) <= 1e-5


class TestBackward:
    def test_sum(self):
        x = param(np.arange(5.0))
        x.sum().backward()
        np.testing.assert_array_equal(x.grad, np.ones(5))

    def test_square(self):
        x = param([1.0, 2.0])
        (x * x).sum().backward()
        np.testing.assert_array_equal(x.grad, [2.0, 4.0])

    def test_non_scalar_loss_rejected(self):
        x = param([1.0, 2.0])
        with pytest.raises(ValueError, match="scalar"):
            (x * 2).backward()

    def test_tape_is_consumed(self):
        x = param([1.0, 2.0])
        y = (x * x).sum()
        y.backward()
        assert y._parents == ()

    def test_every_reachable_leaf_gets_grad(self, rng):
        a, b, c = (param(rng.normal(size=3)) for _ in range(3))
        ((a * b).sum() + (b * c).sum()).backward()
        assert all(t.grad is not None for t in (a, b, c))

    def test_composite_attention_layernorm(self, rng):
        blk = AttnBlock.init(4, rng)
        x = param(rng.normal(size=(2, 3, 4)))
        g, s = param(rng.normal(size=4)), param(rng.normal(size=4))
        w = rng.normal(size=(2, 3, 4))
        loss = lambda: (layernorm(attention(x, blk), g, s) * w).sum()
        assert check(loss, [x, g, s] + list(blk.params.values())) <= 1e-4


class TestElementwiseGrads:
    @pytest.mark.parametrize("op", [gelu, relu, lambda t: t * t, lambda t: t / 3.0,
                                    lambda t: softmax(t, axis=-1), lambda t: t.mean(axis=0),
                                    lambda t: t.transpose(1, 0), lambda t: t.reshape(-1),
                                    lambda t: concat([t, t * 2], axis=0),
                                    lambda t: take_rows(t, [2, 0, 0])])
    def test_op_matches_finite_differences(self, op, rng):
        x = param(rng.normal(size=(3, 4)) + 0.05)
        w = rng.normal(size=op(Tensor(x.data)).shape)
        check(lambda: (op(x) * w).sum(), [x])

    def test_huber_both_regimes(self, rng):
        x = param(np.array([0.2, -0.3, 3.0, -4.0]))
        check(lambda: huber(x, np.zeros(4), 1.0), [x])

    def test_masked_softmax(self, rng):
        x = param(rng.normal(size=(2, 4)))
        mask = np.array([[True, True, False, True], [True, False, False, False]])
        out = softmax(x, mask=mask)
        assert np.all(out.data[~mask] == 0)
        w = rng.normal(size=(2, 4))
        check(lambda: (softmax(x, mask=mask) * w).sum(), [x])


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 6), st.integers(1, 9), st.floats(-50, 50))
def test_softmax_rows_sum_to_one(rows, cols, shift):
    x = np.random.default_rng(rows * 10 + cols).normal(size=(rows, cols)) * 10 + shift
    out = softmax(Tensor(x), axis=-1).data
    np.testing.assert_allclose(out.sum(axis=-1), 1.0, atol=1e-12)


class TestAttention:
    def test_single_token_weights(self, rng):
        blk = AttnBlock.init(4, rng)
        _, w = attention(Tensor(rng.normal(size=(2, 1, 4))), blk, return_weights=True)
        np.testing.assert_array_equal(w, np.ones((2, 1, 1)))

    def test_permutation_equivariance(self, rng):
        blk = AttnBlock.init(8, rng)
        x = rng.normal(size=(2, 6, 8))
        perm = rng.permutation(6)
        a = attention(Tensor(x), blk).data
        b = attention(Tensor(x[:, perm]), blk).data
        assert np.max(np.abs(a[:, perm] - b)) <= 1e-9

    @pytest.mark.parametrize("shape", [(1, 3, 4), (2, 7, 16)])
    def test_shape(self, shape, rng):
        blk = AttnBlock.init(shape[-1], rng)
        assert attention(Tensor(rng.normal(size=shape)), blk).shape == shape

    def test_empty_population(self, rng):
        with pytest.raises(EmptyPopulationError):
            attention(Tensor(np.zeros((1, 0, 4))), AttnBlock.init(4, rng))

    def test_padding_mask_hides_padded_tokens(self, rng):
        blk = AttnBlock.init(4, rng)
        x = rng.normal(size=(1, 3, 4))
        padded = np.concatenate([x, rng.normal(size=(1, 2, 4)) * 100], axis=1)
        mask = np.array([[True, True, True, False, False]])
        a = attention(Tensor(x), blk).data
        b = attention(Tensor(padded), blk, mask).data[:, :3]
        np.testing.assert_allclose(a, b, atol=1e-12)

    @pytest.mark.parametrize("h", [1, 4, 16])
    def test_param_count_is_function_of_h(self, h, rng):
        blk = AttnBlock.init(h, rng)
        assert sum(p.size for p in blk.params.values()) == AttnBlock.param_count(h)
        for key in ("wq", "wk", "wv", "wo"):
            assert blk[key].shape == (h, h)

    def test_deterministic_forward(self):
        outs = []
        for _ in range(2):
            r = np.random.default_rng(7)
            blk = AttnBlock.init(4, r)
            outs.append(attention(Tensor(r.normal(size=(1, 5, 4))), blk).data)
        assert np.array_equal(outs[0], outs[1])


class TestAdam:
    def test_zero_gradient_leaves_params(self, rng):
        p = param(rng.normal(size=4))
        before = p.data.copy()
        opt = Adam([p], lr=0.1)
        p.grad = np.zeros(4)
        opt.step()
        np.testing.assert_array_equal(p.data, before)

    def test_descends_quadratic(self):
        p = param([3.0, -2.0])
        opt = Adam([p], lr=0.1)
        for _ in range(300):
            opt.zero_grad()
            (p * p).sum().backward()
            opt.step()
        assert np.all(np.abs(p.data) < 0.05)

    def test_clip(self):
        p = param([0.0, 0.0])
        p.grad = np.array([30.0, 40.0])
        assert clip_grad_norm([p], 10.0) == pytest.approx(50.0)
        np.testing.assert_allclose(np.linalg.norm(p.grad), 10.0)


def test_no_grad_skips_tape():
    x = param([1.0, 2.0])
    with no_grad():
        y = (x * x).sum()
    assert not y.requires_grad and y._parents == ()


def test_checkpoint_round_trip(tmp_path, rng):
    blk = AttnBlock.init(4, rng)
    x = Tensor(rng.normal(size=(1, 3, 4)))
    path = tmp_path / "ckpt.json"
    save_params(path, blk.params, 4)
    doc = json.loads(path.read_text())
    assert doc["h"] == 4 and doc["format_version"] == 1
    assert doc["params"]["wq"]["shape"] == [4, 4]
    h, params, _ = load_params(path)
    again = attention(x, AttnBlock(h, params)).data
    assert np.max(np.abs(again - attention(x, blk).data)) <= 1e-12
