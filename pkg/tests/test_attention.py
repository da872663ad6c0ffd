"""Attention: projections against direct matrix products, RoPE isometry and
relative-shift invariance, masked attention against a brute-force oracle."""

import numpy as np
import pytest

from twinflow.attention import (
    AttentionMask,
    ProjectionWeights,
    RotaryTable,
    attend,
    cross_attend,
    qkv_project,
    rope_apply,
)
from twinflow.errors import ConfigError, ContractError, ShapeError
from twinflow.tensor import Tape, Tensor, backward, mul, tensor_sum

from util import brute_force_attention, fd_gradient, rel_err


def random_weights(d, rng):
    return ProjectionWeights.init(d, rng)


class TestQkvProject:
    def test_identity_weights(self, rng):
        d = 4
        x = rng.normal(size=(3, d))
        eye = ProjectionWeights(*[Tensor(np.eye(d)) for _ in range(4)])
        q, k, v = qkv_project(Tensor(x), eye)
        for out in (q, k, v):
            np.testing.assert_array_equal(out.data, x)

    def test_zero_input(self, rng):
        w = random_weights(4, rng)
        q, k, v = qkv_project(Tensor(np.zeros((2, 4))), w)
        for out in (q, k, v):
            np.testing.assert_array_equal(out.data, np.zeros((2, 4)))

    def test_matches_direct_products(self, rng):
        d = 4
        x = rng.normal(size=(3, d))
        w = random_weights(d, rng)
        q, k, v = qkv_project(Tensor(x), w)
        np.testing.assert_array_equal(q.data, x @ w.w_q.data)
        np.testing.assert_array_equal(k.data, x @ w.w_k.data)
        np.testing.assert_array_equal(v.data, x @ w.w_v.data)

    def test_width_mismatch(self, rng):
        with pytest.raises(ShapeError):
            qkv_project(Tensor(np.zeros((3, 6))), random_weights(4, rng))


class TestRope:
    def test_position_zero_is_identity(self, rng):
        d = 8
        table = RotaryTable(d, 32)
        x = rng.normal(size=(3, d))
        out = rope_apply(Tensor(x), [0, 0, 0], table)
        np.testing.assert_allclose(out.data, x, rtol=0, atol=1e-15)

    def test_norm_preserved(self, rng):
        d = 8
        table = RotaryTable(d, 32)
        x = rng.normal(size=(5, d))
        out = rope_apply(Tensor(x), [3, 7, 11, 0, 31], table)
        np.testing.assert_allclose(np.linalg.norm(out.data, axis=1),
                                   np.linalg.norm(x, axis=1), rtol=1e-12)

    def test_relative_shift_invariance(self, rng):
        """<rope(q,m), rope(k,n)> depends only on m - n."""
        d = 16
        table = RotaryTable(d, 128)
        q = rng.normal(size=(1, d))
        k = rng.normal(size=(1, d))
        m, n = 12, 5
        base = (rope_apply(Tensor(q), [m], table).data
                @ rope_apply(Tensor(k), [n], table).data.T)[0, 0]
        for s in range(-5, 17):
            if m + s < 0 or n + s < 0:
                continue
            shifted = (rope_apply(Tensor(q), [m + s], table).data
                       @ rope_apply(Tensor(k), [n + s], table).data.T)[0, 0]
            assert abs(shifted - base) < 1e-10, f"shift {s}"

    def test_odd_width_rejected(self):
        with pytest.raises(ConfigError):
            RotaryTable(7, 16)

    def test_position_bounds(self, rng):
        table = RotaryTable(4, 8)
        with pytest.raises(ContractError):
            rope_apply(Tensor(rng.normal(size=(1, 4))), [8], table)

    def test_gradient(self, rng):
        d = 6
        table = RotaryTable(d, 16)
        x_val = rng.normal(size=(3, d))
        r = rng.normal(size=(3, d))
        x = Tensor(x_val, grad_required=True)
        with Tape():
            grads = backward(tensor_sum(mul(rope_apply(x, [1, 4, 9], table), Tensor(r))))

        def loss_fn():
            return float(np.sum(rope_apply(Tensor(x_val), [1, 4, 9], table).data * r))

        assert rel_err(grads[x], fd_gradient(loss_fn, x_val)) < 1e-6


class TestAttend:
    def test_single_key_returns_value(self, rng):
        q = rng.normal(size=(4, 6))
        k = rng.normal(size=(1, 6))
        v = rng.normal(size=(1, 6))
        out = attend(Tensor(q), Tensor(k), Tensor(v))
        for i in range(4):
            np.testing.assert_allclose(out.data[i], v[0], rtol=0, atol=0)

    def test_all_true_mask_equals_no_mask(self, rng):
        q, k, v = (rng.normal(size=(3, 4)) for _ in range(3))
        plain = attend(Tensor(q), Tensor(k), Tensor(v))
        masked = attend(Tensor(q), Tensor(k), Tensor(v),
                        AttentionMask(np.ones((3, 3), dtype=bool)))
        assert plain.data.tobytes() == masked.data.tobytes()

    def test_matches_brute_force(self, rng):
        q = rng.normal(size=(2, 5))
        k = rng.normal(size=(3, 5))
        v = rng.normal(size=(3, 5))
        out = attend(Tensor(q), Tensor(k), Tensor(v))
        np.testing.assert_allclose(out.data, brute_force_attention(q, k, v),
                                   rtol=1e-12, atol=1e-12)

    def test_masked_matches_brute_force(self, rng):
        q = rng.normal(size=(4, 5))
        k = rng.normal(size=(6, 5))
        v = rng.normal(size=(6, 5))
        allowed = rng.random((4, 6)) > 0.4
        allowed[:, 0] = True  # no fully blocked row
        out = attend(Tensor(q), Tensor(k), Tensor(v), AttentionMask(allowed))
        np.testing.assert_allclose(out.data, brute_force_attention(q, k, v, allowed),
                                   rtol=1e-12, atol=1e-12)

    def test_masked_weights_exactly_zero(self, rng):
        from twinflow.tensor import softmax_lastdim

        q = rng.normal(size=(2, 4))
        k = rng.normal(size=(3, 4))
        allowed = np.array([[True, False, True], [True, True, False]])
        scores = (1.0 / 2.0) * (q @ k.T) + AttentionMask(allowed).additive()
        w = softmax_lastdim(Tensor(scores)).data
        assert w[0, 1] == 0.0 and w[1, 2] == 0.0

    def test_output_in_convex_hull_of_values(self, rng):
        q = rng.normal(size=(3, 4))
        k = rng.normal(size=(5, 4))
        v = rng.normal(size=(5, 4))
        out = attend(Tensor(q), Tensor(k), Tensor(v)).data
        lo, hi = v.min(axis=0), v.max(axis=0)
        assert (out >= lo - 1e-12).all() and (out <= hi + 1e-12).all()

    def test_fully_blocked_row_rejected(self):
        with pytest.raises(ContractError):
            AttentionMask(np.array([[True, True], [False, False]]))


class TestCrossAttend:
    def test_single_kv_token(self, rng):
        d = 4
        w = random_weights(d, rng)
        x_q = rng.normal(size=(3, d))
        x_kv = rng.normal(size=(1, d))
        out = cross_attend(Tensor(x_q), Tensor(x_kv), w)
        expected = x_kv @ w.w_v.data
        for i in range(3):
            np.testing.assert_allclose(out.data[i], expected[0], rtol=0, atol=0)

    def test_equals_self_attention_when_streams_match(self, rng):
        d = 4
        w = random_weights(d, rng)
        x = rng.normal(size=(3, d))
        cross = cross_attend(Tensor(x), Tensor(x), w)
        q, k, v = qkv_project(Tensor(x), w)
        self_attn = attend(q, k, v)
        assert cross.data.tobytes() == self_attn.data.tobytes()

    def test_matches_brute_force(self, rng):
        d = 5
        w = random_weights(d, rng)
        x_q = rng.normal(size=(2, d))
        x_kv = rng.normal(size=(4, d))
        out = cross_attend(Tensor(x_q), Tensor(x_kv), w)
        expected = brute_force_attention(x_q @ w.w_q.data, x_kv @ w.w_k.data,
                                         x_kv @ w.w_v.data)
        np.testing.assert_allclose(out.data, expected, rtol=1e-12, atol=1e-12)

    def test_width_mismatch(self, rng):
        with pytest.raises(ShapeError):
            cross_attend(Tensor(np.zeros((2, 6))), Tensor(np.zeros((2, 4))),
                         random_weights(4, rng))
