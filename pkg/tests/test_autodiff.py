"""Unit tests for the autodiff core: forward values, backward gradients,
the optimizer, and checkpoint round-trips."""

import math

import numpy as np
import pytest

from relmatch import params as P
from relmatch import tensor as T
from relmatch.tensor import Tape, Tensor

from gradcheck import check_gradients


class TestMatmul:
    def test_identity(self):
        eye = Tensor(np.eye(2))
        out = T.matmul(eye, Tensor(np.eye(2)))
        np.testing.assert_array_equal(out.data, np.eye(2))

    def test_hand_case(self):
        out = T.matmul(Tensor([[1.0, 2.0], [3.0, 4.0]]), Tensor([[1.0], [1.0]]))
        np.testing.assert_array_equal(out.data, [[3.0], [7.0]])

    def test_shape_mismatch_names_both_shapes(self):
        with pytest.raises(T.ShapeError, match=r"\(3, 4\).*\(3, 2\)"):
            T.matmul(Tensor(np.zeros((3, 4))), Tensor(np.zeros((3, 2))))

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(1)
        a = Tensor(rng.normal(size=(3, 4)), name="a")
        b = Tensor(rng.normal(size=(4, 2)), name="b")
        c = rng.normal(size=(3, 2))
        check_gradients(lambda: T.tsum(T.mul(T.matmul(a, b), Tensor(c))),
                        [a, b], rel_tol=1e-6)


class TestSoftmax:
    def test_symmetry(self):
        out = T.softmax(Tensor([0.0, 0.0, 0.0]))
        np.testing.assert_allclose(out.data, [1 / 3] * 3, atol=1e-12)

    def test_analytic(self):
        out = T.softmax(Tensor([math.log(2.0), 0.0]))
        np.testing.assert_allclose(out.data, [2 / 3, 1 / 3], atol=1e-12)

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(2)
        out = T.softmax(Tensor(rng.normal(size=(6, 5))), axis=-1)
        np.testing.assert_allclose(out.data.sum(axis=-1), 1.0, atol=1e-9)

    def test_masked_positions_are_zero(self):
        mask = np.array([[1, 1, 0], [1, 0, 0]])
        out = T.softmax(Tensor(np.ones((2, 3))), axis=-1, mask=mask)
        assert out.data[0, 2] == 0.0
        assert out.data[1, 1] == 0.0 and out.data[1, 2] == 0.0
        np.testing.assert_allclose(out.data.sum(axis=-1), 1.0, atol=1e-9)

    def test_all_masked_row_raises(self):
        with pytest.raises(ValueError, match="entirely masked"):
            T.softmax(Tensor(np.ones((1, 3))), mask=np.zeros((1, 3)))

    def test_jacobian_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        x = Tensor(rng.normal(size=5), name="x")
        c = rng.normal(size=5)
        check_gradients(lambda: T.tsum(T.mul(T.softmax(x), Tensor(c))),
                        [x], rel_tol=1e-6)


class TestLayernorm:
    def test_constant_row_maps_to_zero(self):
        g, b = Tensor(np.ones(4)), Tensor(np.zeros(4))
        out = T.layernorm(Tensor(np.full((2, 4), 3.0)), g, b)
        np.testing.assert_allclose(out.data, 0.0, atol=1e-9)

    def test_two_point_row(self):
        g, b = Tensor(np.ones(2)), Tensor(np.zeros(2))
        out = T.layernorm(Tensor([[1.0, 3.0]]), g, b, eps=1e-12)
        np.testing.assert_allclose(out.data, [[-1.0, 1.0]], atol=1e-5)

    def test_epsilon_must_be_positive(self):
        g, b = Tensor(np.ones(2)), Tensor(np.zeros(2))
        with pytest.raises(ValueError):
            T.layernorm(Tensor([[1.0, 2.0]]), g, b, eps=0.0)

    def test_gradient(self):
        rng = np.random.default_rng(4)
        x = Tensor(rng.normal(size=(3, 6)), name="x")
        g = Tensor(rng.normal(size=6), name="g")
        b = Tensor(rng.normal(size=6), name="b")
        c = rng.normal(size=(3, 6))
        check_gradients(lambda: T.tsum(T.mul(T.layernorm(x, g, b), Tensor(c))),
                        [x, g, b], rel_tol=1e-5)


class TestElementwiseOps:
    @pytest.mark.parametrize("op", [T.add, T.sub, T.mul])
    def test_binary_gradients(self, op):
        rng = np.random.default_rng(5)
        a = Tensor(rng.normal(size=(2, 3)), name="a")
        b = Tensor(rng.normal(size=(2, 3)), name="b")
        c = rng.normal(size=(2, 3))
        check_gradients(lambda: T.tsum(T.mul(op(a, b), Tensor(c))), [a, b])

    @pytest.mark.parametrize("op", [T.relu, T.gelu])
    def test_unary_gradients(self, op):
        rng = np.random.default_rng(6)
        # keep away from the relu kink
        x = Tensor(rng.normal(size=(2, 5)) + np.sign(rng.normal(size=(2, 5))) * 0.2,
                   name="x")
        c = rng.normal(size=(2, 5))
        check_gradients(lambda: T.tsum(T.mul(op(x), Tensor(c))), [x])

    def test_concat_roundtrip_and_gradient(self):
        rng = np.random.default_rng(7)
        a = Tensor(rng.normal(size=(2, 3)), name="a")
        b = Tensor(rng.normal(size=(2, 2)), name="b")
        out = T.concat([a, b], axis=-1)
        np.testing.assert_array_equal(out.data[:, :3], a.data)
        np.testing.assert_array_equal(out.data[:, 3:], b.data)
        c = rng.normal(size=(2, 5))
        check_gradients(lambda: T.tsum(T.mul(T.concat([a, b], axis=-1), Tensor(c))),
                        [a, b])

    def test_embedding_gradient(self):
        rng = np.random.default_rng(8)
        table = Tensor(rng.normal(size=(7, 4)), name="emb")
        ids = np.array([[0, 3, 3], [6, 1, 0]])
        c = rng.normal(size=(2, 3, 4))
        check_gradients(lambda: T.tsum(T.mul(T.embedding(table, ids), Tensor(c))),
                        [table])

    def test_embedding_out_of_range(self):
        with pytest.raises(IndexError):
            T.embedding(Tensor(np.zeros((3, 2))), np.array([3]))

    def test_bmm_gradient(self):
        rng = np.random.default_rng(9)
        a = Tensor(rng.normal(size=(2, 3, 4)), name="a")
        b = Tensor(rng.normal(size=(2, 4, 2)), name="b")
        c = rng.normal(size=(2, 3, 2))
        check_gradients(lambda: T.tsum(T.mul(T.bmm(a, b), Tensor(c))), [a, b])

    def test_mean_rows_masked(self):
        x = Tensor(np.arange(12.0).reshape(1, 4, 3), name="x")
        mask = np.array([[1, 1, 0, 0]])
        out = T.mean_rows(x, mask)
        np.testing.assert_allclose(out.data, [[1.5, 2.5, 3.5]])


class TestCosineAndLosses:
    def test_cosine_self_is_one(self):
        rng = np.random.default_rng(10)
        v = Tensor(rng.normal(size=8))
        assert T.cosine_similarity(v, v).item() == pytest.approx(1.0)

    def test_cosine_opposite_is_minus_one(self):
        v = Tensor(np.array([1.0, -2.0, 0.5]))
        w = Tensor(-v.data)
        assert T.cosine_similarity(v, w).item() == pytest.approx(-1.0)

    def test_cosine_zero_vector_raises(self):
        with pytest.raises(ValueError, match="zero vector"):
            T.cosine_similarity(Tensor(np.zeros(3)), Tensor(np.ones(3)))

    def test_cosine_gradient(self):
        rng = np.random.default_rng(11)
        u = Tensor(rng.normal(size=6), name="u")
        v = Tensor(rng.normal(size=6), name="v")
        check_gradients(lambda: T.cosine_similarity(u, v), [u, v])

    def test_uniform_cross_entropy_is_log_k(self):
        logits = Tensor(np.zeros((1, 4)))
        assert T.cross_entropy(logits, [2]).item() == pytest.approx(math.log(4),
                                                                    abs=1e-9)

    def test_cross_entropy_gradient(self):
        rng = np.random.default_rng(12)
        logits = Tensor(rng.normal(size=(3, 5)), name="logits")
        labels = np.array([0, 4, 2])
        check_gradients(lambda: T.cross_entropy(logits, labels), [logits])

    def test_cross_entropy_label_out_of_range(self):
        with pytest.raises(IndexError):
            T.cross_entropy(Tensor(np.zeros((1, 3))), [3])

    def test_normalize_rows_gradient(self):
        rng = np.random.default_rng(13)
        x = Tensor(rng.normal(size=(3, 4)), name="x")
        c = rng.normal(size=(3, 4))
        check_gradients(lambda: T.tsum(T.mul(T.normalize_rows(x), Tensor(c))), [x])

    def test_normalize_zero_row_raises(self):
        with pytest.raises(ValueError):
            T.normalize_rows(Tensor(np.zeros((1, 3))))


class TestDropout:
    def test_identity_at_inference(self):
        x = Tensor(np.ones((4, 4)))
        out = T.dropout(x, 0.5, np.random.default_rng(0), train=False)
        assert out is x

    def test_seeded_mask_is_reproducible(self):
        x = Tensor(np.ones((8, 8)))
        a = T.dropout(x, 0.5, np.random.default_rng(42), train=True)
        b = T.dropout(x, 0.5, np.random.default_rng(42), train=True)
        np.testing.assert_array_equal(a.data, b.data)


class TestTape:
    def test_backward_visits_in_reverse_and_accumulates(self):
        a = Tensor(np.array([2.0]), name="a")
        with Tape() as tape:
            # f = (a + a) * a  ->  df/da = 4a
            out = T.mul(T.add(a, a), a)
            loss = T.tsum(out)
            tape.backward(loss)
        np.testing.assert_allclose(a.grad, [8.0])

    def test_backward_deterministic(self):
        rng = np.random.default_rng(14)
        data = rng.normal(size=(4, 4))
        grads = []
        for _ in range(2):
            x = Tensor(data.copy())
            with Tape() as tape:
                loss = T.tsum(T.gelu(T.matmul(x, x)))
                tape.backward(loss)
            grads.append(x.grad.copy())
        np.testing.assert_array_equal(grads[0], grads[1])

    def test_non_scalar_loss_rejected(self):
        x = Tensor(np.ones((2, 2)))
        with Tape() as tape:
            y = T.add(x, x)
        with pytest.raises(T.ShapeError):
            tape.backward(y)


class TestAdamW:
    def test_descent_direction(self):
        w = Tensor(np.array([1.0]))
        opt = P.AdamW({"w": w}, lr=0.1, weight_decay=0.0)
        with Tape() as tape:
            loss = T.tsum(T.mul(w, w))
            tape.backward(loss)
        opt.step()
        assert 0.0 < w.data[0] < 1.0

    def test_zero_grad_zero_decay_keeps_params(self):
        w = Tensor(np.array([1.5, -2.0]))
        opt = P.AdamW({"w": w}, lr=0.1, weight_decay=0.0)
        w.grad = np.zeros(2)
        opt.step()
        np.testing.assert_array_equal(w.data, [1.5, -2.0])

    def test_converges_to_quadratic_minimizer(self):
        target = np.array([0.3, -1.2, 2.0])
        w = Tensor(np.zeros(3))
        opt = P.AdamW({"w": w}, lr=0.05, weight_decay=0.0)
        for _ in range(200):
            with Tape() as tape:
                diff = T.sub(w, Tensor(target))
                loss = T.tsum(T.mul(diff, diff))
                opt.zero_grad()
                tape.backward(loss)
            opt.step()
        np.testing.assert_allclose(w.data, target, atol=1e-3)

    def test_missing_gradient_names_parameter(self):
        w = Tensor(np.zeros(2))
        opt = P.AdamW({"weights.alpha": w}, lr=0.1)
        with pytest.raises(ValueError, match="weights.alpha"):
            opt.step()


class TestCheckpoint:
    def test_bit_exact_roundtrip(self, tmp_path):
        rng = np.random.default_rng(15)
        params = {"a.w": Tensor(rng.normal(size=(3, 4))),
                  "b": Tensor(rng.normal(size=7)),
                  "scalar": Tensor(np.asarray(3.14))}
        path = tmp_path / "model.ckpt"
        P.save_params(path, params)
        loaded = P.load_params(path)
        assert sorted(loaded) == sorted(params)
        for k in params:
            np.testing.assert_array_equal(loaded[k].data, params[k].data)
        # serialized form is itself stable
        assert P.serialize_params(loaded) == P.serialize_params(params)

    def test_fingerprint_tracks_values(self):
        a = {"w": Tensor(np.ones(3))}
        b = {"w": Tensor(np.ones(3))}
        assert P.fingerprint(a) == P.fingerprint(b)
        b["w"].data[0] = 2.0
        assert P.fingerprint(a) != P.fingerprint(b)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"nope")
        with pytest.raises(ValueError, match="magic"):
            P.load_params(path)


class TestFiniteness:
    def test_check_finite_raises_on_nan(self):
        t = Tensor(np.array([1.0, np.nan]))
        with pytest.raises(FloatingPointError):
            T.check_finite(t)
