import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra import numpy as hnp

from torquefusion import fusion as fu
from torquefusion.fusion import DecisionWeights, Embedding, FusionError

finite = st.floats(-1e6, 1e6, allow_subnormal=False)
maps = hnp.arrays(np.float64, hnp.array_shapes(min_dims=3, max_dims=3, max_side=4), elements=finite)


def triple_loop_bmm(F, G):
    c, h, w = F.shape
    A = np.eye(w) + G
    out = np.zeros_like(F)
    for i in range(c):
        for r in range(h):
            for j in range(w):
                s = 0.0
                for k in range(w):
                    s += F[i, r, k] * A[k, j]
                out[i, r, j] = s
    return out


class TestProjection:
    def test_identity_broadcast(self):
        e = np.array([1.0, -2.0, 3.5, 0.25])
        out = fu.project_embedding(e, np.eye(4), shape=(4, 2, 2))
        for r in range(2):
            for c in range(2):
                np.testing.assert_array_equal(out[:, r, c], e)

    def test_zero_weights(self):
        out = fu.project_embedding(np.ones(3), np.zeros((5, 3)), shape=(5, 1, 2))
        assert np.all(out == 0.0)

    def test_matmul_oracle(self):
        rng = np.random.default_rng(0)
        W, b, e = rng.normal(size=(4, 6)), rng.normal(size=4), rng.normal(size=6)
        ref = np.array([sum(W[i, j] * e[j] for j in range(6)) + b[i] for i in range(4)])
        np.testing.assert_allclose(fu.project_embedding(Embedding(e, "force"), W, b), ref, rtol=0, atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(FusionError, match="shape mismatch"):
            fu.project_embedding(np.ones(3), np.ones((2, 4)))
        with pytest.raises(FusionError, match="shape mismatch"):
            fu.project_embedding(np.ones(3), np.ones((2, 3)), shape=(3, 1, 1))


class TestAddition:
    @settings(max_examples=100, deadline=None)
    @given(maps)
    def test_zero_identity(self, F):
        np.testing.assert_array_equal(fu.fuse_addition(F, np.zeros_like(F)), F)

    @settings(max_examples=100, deadline=None)
    @given(maps, st.data())
    def test_commutative(self, F, data):
        P = data.draw(hnp.arrays(np.float64, F.shape, elements=finite))
        np.testing.assert_array_equal(fu.fuse_addition(F, P), fu.fuse_addition(P, F))

    def test_arithmetic(self):
        np.testing.assert_array_equal(fu.fuse_addition(np.full((1, 2, 2), 0.2), np.full((1, 2, 2), 0.3)),
                                      np.full((1, 2, 2), 0.2 + 0.3))

    def test_shape_mismatch(self):
        with pytest.raises(FusionError, match="shape mismatch"):
            fu.fuse_addition(np.ones((1, 2, 2)), np.ones((1, 2, 3)))


class TestElementwise:
    @settings(max_examples=100, deadline=None)
    @given(maps)
    def test_identity_and_annihilator(self, F):
        np.testing.assert_array_equal(fu.fuse_elementwise(F, np.ones_like(F)), F)
        assert np.all(fu.fuse_elementwise(F, np.zeros_like(F)) == 0.0)

    def test_arithmetic(self):
        out = fu.fuse_elementwise(np.array([[[2.0, 3.0]]]), np.array([[[0.5, 2.0]]]))
        np.testing.assert_array_equal(out, [[[1.0, 6.0]]])


class TestConcat:
    @settings(max_examples=100, deadline=None)
    @given(maps, st.data())
    def test_block_identity(self, F, data):
        P = data.draw(hnp.arrays(np.float64, F.shape, elements=finite))
        c = F.shape[0]
        I, Z = np.eye(c), np.zeros((c, c))
        np.testing.assert_array_equal(fu.fuse_concat(F, P, np.hstack([I, Z])), F)
        np.testing.assert_array_equal(fu.fuse_concat(F, P, np.hstack([Z, I])), P)

    def test_two_channel_site(self):
        rng = np.random.default_rng(1)
        F, P = rng.normal(size=(2, 1, 1)), rng.normal(size=(2, 1, 1))
        W, b = rng.normal(size=(2, 4)), rng.normal(size=2)
        v = np.array([F[0, 0, 0], F[1, 0, 0], P[0, 0, 0], P[1, 0, 0]])
        ref = np.array([W[0] @ v + b[0], W[1] @ v + b[1]])
        np.testing.assert_allclose(fu.fuse_concat(F, P, W, b)[:, 0, 0], ref, rtol=0, atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(FusionError):
            fu.fuse_concat(np.ones((2, 1, 1)), np.ones((2, 1, 2)), np.ones((2, 4)))
        with pytest.raises(FusionError):
            fu.fuse_concat(np.ones((2, 1, 1)), np.ones((2, 1, 1)), np.ones((2, 3)))


class TestSpatialTransform:
    def test_zero_generator(self):
        assert np.all(fu.make_spatial_transform(np.ones(4), np.zeros((9, 4)), None, 3) == 0.0)

    def test_identity_slice(self):
        e = np.arange(9.0)
        np.testing.assert_array_equal(fu.make_spatial_transform(e, np.eye(9), None, 3), e.reshape(3, 3))

    def test_affine_then_reshape(self):
        rng = np.random.default_rng(2)
        e, W, b = rng.normal(size=5), rng.normal(size=(4, 5)), rng.normal(size=4)
        flat = [sum(W[i, j] * e[j] for j in range(5)) + b[i] for i in range(4)]
        ref = np.array([[flat[0], flat[1]], [flat[2], flat[3]]])
        np.testing.assert_allclose(fu.make_spatial_transform(e, W, b, 2), ref, rtol=0, atol=1e-12)

    def test_width_mismatch(self):
        with pytest.raises(FusionError, match="width mismatch"):
            fu.make_spatial_transform(np.ones(4), np.zeros((4, 4)), None, 3)


class TestBMM:
    @settings(max_examples=100, deadline=None)
    @given(maps)
    def test_zero_transform(self, F):
        np.testing.assert_array_equal(fu.fuse_bmm(F, np.zeros((F.shape[2],) * 2)), F)

    def test_column_swap(self):
        F = np.random.default_rng(3).normal(size=(3, 4, 2))
        G = np.array([[0.0, 1.0], [1.0, 0.0]]) - np.eye(2)
        out = fu.fuse_bmm(F, G)
        np.testing.assert_array_equal(out[..., 0], F[..., 1])
        np.testing.assert_array_equal(out[..., 1], F[..., 0])

    def test_triple_loop_oracle(self):
        rng = np.random.default_rng(4)
        for _ in range(100):
            F, G = rng.normal(size=(2, 2, 3)), rng.normal(size=(3, 3))
            assert np.abs(fu.fuse_bmm(F, G) - triple_loop_bmm(F, G)).max() <= 1e-12

    def test_linearity(self):
        rng = np.random.default_rng(5)
        F1, F2, G = rng.normal(size=(2, 3, 4)), rng.normal(size=(2, 3, 4)), rng.normal(size=(4, 4))
        a, b = 1.7, -0.3
        np.testing.assert_allclose(fu.fuse_bmm(a * F1 + b * F2, G),
                                   a * fu.fuse_bmm(F1, G) + b * fu.fuse_bmm(F2, G), rtol=0, atol=1e-10)

    def test_width_mismatch(self):
        with pytest.raises(FusionError, match="width mismatch"):
            fu.fuse_bmm(np.ones((1, 2, 3)), np.zeros((2, 2)))


class TestGated:
    def test_zero_gate_is_average(self):
        rng = np.random.default_rng(6)
        F, P, e = rng.normal(size=(2, 2, 2)), rng.normal(size=(2, 2, 2)), rng.normal(size=3)
        assert fu.gate_value(F, e, np.zeros(5), 0.0) == 0.5
        np.testing.assert_array_equal(fu.fuse_gated(F, e, np.zeros(5), 0.0, P), 0.5 * F + 0.5 * P)

    @settings(max_examples=100, deadline=None)
    @given(maps, st.floats(-50, 50))
    def test_equal_inputs(self, F, bias):
        e = np.linspace(-1, 1, 3)
        w = np.linspace(0.5, -0.5, F.shape[0] + 3)
        np.testing.assert_array_equal(fu.fuse_gated(F, e, w, bias, F.copy()), F)

    def test_strong_bias(self):
        rng = np.random.default_rng(7)
        F, P = rng.normal(size=(2, 1, 3)), rng.normal(size=(2, 1, 3))
        a = 1.0 / (1.0 + np.exp(-10.0))
        np.testing.assert_allclose(fu.fuse_gated(F, np.ones(2), np.zeros(4), 10.0, P), a * F + (1 - a) * P,
                                   rtol=0, atol=1e-15)

    @settings(max_examples=100, deadline=None)
    @given(maps, st.data())
    def test_range(self, F, data):
        P = data.draw(hnp.arrays(np.float64, F.shape, elements=finite))
        w = data.draw(hnp.arrays(np.float64, F.shape[0] + 2, elements=st.floats(-10, 10)))
        e = np.array([0.3, -0.7])
        alpha = fu.gate_value(F, e, w, 0.0)
        out = fu.fuse_gated(F, e, w, 0.0, P)
        assert np.all(out >= np.minimum(F, P)) and np.all(out <= np.maximum(F, P))
        if abs(np.dot(w, np.concatenate([F.mean(axis=(1, 2)), e]))) < 30:
            assert 0.0 < alpha < 1.0

    def test_gate_width_mismatch(self):
        with pytest.raises(FusionError, match="shape mismatch"):
            fu.gate_value(np.ones((2, 1, 1)), np.ones(3), np.ones(4))


class TestTokens:
    def test_lengths_and_tags(self):
        rng = np.random.default_rng(8)
        vis, text, force = rng.normal(size=(4, 5)), rng.normal(size=(7, 5)), rng.normal(size=(1, 5))
        out = fu.fuse_tokens(vis, text, force)
        assert out.tokens.shape == (12, 5)
        assert out.tags == ("vision",) * 4 + ("text",) * 7 + ("force",)

    def test_only_force(self):
        tok = Embedding(np.array([1.0, 2.0]), "force")
        out = fu.fuse_tokens([], [], [tok])
        np.testing.assert_array_equal(out.tokens, [[1.0, 2.0]])
        assert out.tags == ("force",)

    def test_split_roundtrip(self):
        rng = np.random.default_rng(9)
        vis, text, force = rng.normal(size=(2, 3)), rng.normal(size=(3, 3)), rng.normal(size=(2, 3))
        v, t, f = fu.fuse_tokens(vis, text, force).split()
        np.testing.assert_array_equal(v, vis)
        np.testing.assert_array_equal(t, text)
        np.testing.assert_array_equal(f, force)

    def test_width_mismatch(self):
        with pytest.raises(FusionError, match="width mismatch"):
            fu.fuse_tokens([np.ones(3)], [np.ones(2)], [])

    def test_unknown_modality(self):
        with pytest.raises(FusionError):
            Embedding(np.ones(2), "audio")


class TestDecision:
    def test_mean_fusion(self):
        fused, arg = fu.fuse_decision([0.8, 0.2], [0.4, 0.6], DecisionWeights(0.5, 0.5))
        np.testing.assert_array_equal(fused, [0.5 * 0.8 + 0.5 * 0.4, 0.5 * 0.2 + 0.5 * 0.6])
        np.testing.assert_allclose(fused, [0.6, 0.4], rtol=0, atol=2e-16)
        assert arg == 0

    def test_degenerate_weights(self):
        pa = np.array([0.1, 0.7, 0.2])
        fused, _ = fu.fuse_decision(pa, [0.5, 0.25, 0.25], DecisionWeights(1.0, 0.0))
        np.testing.assert_array_equal(fused, pa)

    def test_simplex(self):
        rng = np.random.default_rng(10)
        for _ in range(50):
            pa, pb = rng.dirichlet(np.ones(4)), rng.dirichlet(np.ones(4))
            w = rng.uniform()
            fused, _ = fu.fuse_decision(pa, pb, DecisionWeights(w, 1 - w))
            assert fused.sum() == pytest.approx(1.0, abs=1e-15)

    def test_argmax_scale_invariance(self):
        rng = np.random.default_rng(11)
        for _ in range(100):
            pa, pb = rng.normal(size=(2, 6))
            wa, wb, c = rng.uniform(0.1, 2, 3)
            _, a1 = fu.fuse_decision(pa, pb, DecisionWeights(wa, wb))
            _, a2 = fu.fuse_decision(pa, pb, DecisionWeights(c * wa, c * wb))
            assert a1 == a2

    def test_batched(self):
        fused, arg = fu.fuse_decision(np.eye(3), np.eye(3)[::-1] * 0.5)
        np.testing.assert_array_equal(arg, [0, 1, 2])

    def test_length_mismatch(self):
        with pytest.raises(FusionError, match="length mismatch"):
            fu.fuse_decision([0.5, 0.5], [1.0])
