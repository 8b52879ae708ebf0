import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from slicekit import tensor as T
from slicekit.errors import ShapeError, TapeStateError


def finite_diff(f, x: T.Tensor, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar-valued forward map w.r.t. x.data."""
    g = np.zeros_like(x.data)
    flat = x.data.ravel()
    gflat = g.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f()
        flat[i] = orig - h
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return g


def rel_err(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(np.abs(b).max(), 1e-8)
    return float(np.abs(a - b).max() / denom)


def check_grad(build_loss, params: list[T.Tensor], tol: float = 1e-4) -> None:
    """Analytic gradients from one tape vs central differences, rel err < tol."""
    with T.Tape() as tape:
        loss = build_loss()
    tape.backward(loss)
    analytic = [p.grad.copy() for p in params]
    for p, ga in zip(params, analytic):
        gf = finite_diff(lambda: build_loss().item(), p)
        assert rel_err(ga, gf) < tol, f"gradient mismatch for shape {p.shape}"


class TestMatmul:
    def test_identity(self):
        a = T.Tensor([[1.0, 2.0], [3.0, 4.0]])
        eye = T.Tensor(np.eye(2))
        assert np.array_equal(T.matmul(eye, a).data, a.data)

    def test_hand_product(self):
        a = T.Tensor([[1.0, 2.0], [3.0, 4.0]])
        b = T.Tensor([[0.0], [1.0]])
        assert np.array_equal(T.matmul(a, b).data, [[2.0], [4.0]])

    def test_shape_mismatch_names_both_shapes(self):
        a = T.Tensor(np.zeros((2, 3)))
        b = T.Tensor(np.zeros((2, 3)))
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
            T.matmul(a, b)

    def test_grad_matches_finite_differences(self):
        rng = np.random.default_rng(0)
        a = T.Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        b = T.Tensor(rng.normal(size=(4, 2)), requires_grad=True)
        c = rng.normal(size=(3, 2))
        check_grad(lambda: T.sum_all(T.mul(T.matmul(a, b), T.Tensor(c))), [a, b], tol=1e-6)

    def test_batched_grad(self):
        rng = np.random.default_rng(1)
        a = T.Tensor(rng.normal(size=(2, 3, 4)), requires_grad=True)
        b = T.Tensor(rng.normal(size=(2, 4, 5)), requires_grad=True)
        w = T.Tensor(rng.normal(size=(2, 3, 5)))
        check_grad(lambda: T.sum_all(T.mul(T.matmul(a, b), w)), [a, b], tol=1e-6)

    def test_weight_broadcast_grad(self):
        rng = np.random.default_rng(2)
        a = T.Tensor(rng.normal(size=(2, 3, 4)), requires_grad=True)
        w = T.Tensor(rng.normal(size=(4, 5)), requires_grad=True)
        c = T.Tensor(rng.normal(size=(2, 3, 5)))
        check_grad(lambda: T.sum_all(T.mul(T.matmul(a, w), c)), [a, w], tol=1e-6)


class TestSoftmax:
    def test_symmetric(self):
        y = T.softmax(T.Tensor([0.0, 0.0]))
        assert np.allclose(y.data, [0.5, 0.5])

    def test_masked_token_goes_to_zero(self):
        y = T.softmax(T.Tensor([-np.inf, 0.0]))
        assert np.array_equal(y.data, [0.0, 1.0])

    def test_additive_mask_value_matches_minus_inf(self):
        y = T.softmax(T.Tensor([T.MASK_VALUE, 0.0]))
        assert np.array_equal(y.data, [0.0, 1.0])

    def test_jacobian_vs_finite_differences(self):
        rng = np.random.default_rng(3)
        x = T.Tensor(rng.normal(size=7), requires_grad=True)
        u = T.Tensor(rng.normal(size=7))
        check_grad(lambda: T.sum_all(T.mul(T.softmax(x), u)), [x])

    @given(st.lists(st.floats(-30, 30), min_size=1, max_size=12))
    @settings(max_examples=60, deadline=None)
    def test_simplex_property(self, vals):
        y = T.softmax(T.Tensor(vals)).data
        assert (y >= 0).all()
        assert abs(y.sum() - 1.0) <= 1e-9


class TestSigmoid:
    def test_zero(self):
        assert T.sigmoid(T.Tensor(0.0)).item() == 0.5

    def test_large_negative_saturates_without_overflow(self):
        y = T.sigmoid(T.Tensor([-1e4])).data
        assert y[0] == pytest.approx(0.0, abs=1e-300)
        assert np.isfinite(y).all()

    def test_grad_at_random_points(self):
        rng = np.random.default_rng(4)
        x = T.Tensor(rng.normal(size=5), requires_grad=True)
        u = T.Tensor(rng.normal(size=5))
        check_grad(lambda: T.sum_all(T.mul(T.sigmoid(x), u)), [x])


class TestScatterAdd:
    def test_duplicates_sum(self):
        base = T.Tensor(np.zeros(4))
        out = T.scatter_add(base, [2, 2], T.Tensor([0.3, 0.2]))
        assert np.allclose(out.data, [0, 0, 0.5, 0])

    def test_empty_positions_leave_base_unchanged(self):
        base = T.Tensor([1.0, 2.0])
        out = T.scatter_add(base, [], T.Tensor(np.zeros(0)))
        assert np.array_equal(out.data, base.data)

    def test_out_of_range_index(self):
        with pytest.raises(IndexError):
            T.scatter_add(T.Tensor(np.zeros(3)), [3], T.Tensor([1.0]))

    def test_grad_flows_to_weights(self):
        rng = np.random.default_rng(5)
        w = T.Tensor(rng.normal(size=3), requires_grad=True)
        base = T.Tensor(rng.normal(size=5), requires_grad=True)
        u = T.Tensor(rng.normal(size=5))
        check_grad(lambda: T.sum_all(T.mul(T.scatter_add(base, [1, 1, 4], w), u)), [w, base])

    def test_batched_scatter_grad(self):
        rng = np.random.default_rng(6)
        w = T.Tensor(rng.uniform(0.1, 1.0, size=(2, 3, 4)), requires_grad=True)
        idx = rng.integers(0, 6, size=(2, 1, 4))
        u = T.Tensor(rng.normal(size=(2, 3, 6)))
        check_grad(lambda: T.sum_all(T.mul(T.scatter_add_last(w, idx, 6), u)), [w])


class TestCrossEntropy:
    def test_one_hot_is_zero(self):
        assert T.cross_entropy(T.Tensor([0.0, 1.0, 0.0]), 1).item() == 0.0

    def test_uniform_is_log4(self):
        p = T.Tensor([0.25] * 4)
        for t in range(4):
            assert T.cross_entropy(p, t).item() == pytest.approx(np.log(4))

    def test_target_out_of_range(self):
        with pytest.raises(IndexError):
            T.cross_entropy(T.Tensor([0.5, 0.5]), 2)

    def test_not_a_distribution(self):
        with pytest.raises(ValueError, match="sums to"):
            T.cross_entropy(T.Tensor([0.9, 0.9]), 0)

    def test_batch_mean_matches_elementwise_loop(self):
        rng = np.random.default_rng(7)
        raw = rng.uniform(0.1, 1.0, size=(6, 5))
        p = raw / raw.sum(axis=1, keepdims=True)
        targets = rng.integers(0, 5, size=6)
        weights = np.ones(6)
        batched = T.cross_entropy_rows(T.Tensor(p), targets, weights).item()
        loop = np.mean([T.cross_entropy(T.Tensor(p[i]), int(targets[i])).item() for i in range(6)])
        assert batched == pytest.approx(loop, rel=1e-12)

    def test_clamp_keeps_loss_finite(self):
        out = T.cross_entropy(T.Tensor([1.0, 0.0]), 1)
        assert out.item() == pytest.approx(-np.log(T.LOG_CLAMP))


class TestBackward:
    def test_sum_gives_all_ones(self):
        x = T.Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
        with T.Tape() as tape:
            loss = T.sum_all(x)
        tape.backward(loss)
        assert np.array_equal(x.grad, np.ones((2, 3)))

    def test_composed_chain_vs_finite_differences(self):
        rng = np.random.default_rng(8)
        w = T.Tensor(rng.normal(size=(4, 5), scale=0.5), requires_grad=True)
        x = T.Tensor(rng.normal(size=(1, 4)))

        def build():
            logits = T.matmul(x, w)
            p = T.softmax(logits, axis=-1)
            return T.cross_entropy(T.reshape(p, (5,)), 2)

        check_grad(build, [w], tol=1e-4)

    def test_disconnected_tensor_receives_zero_grad(self):
        x = T.Tensor([1.0, 2.0], requires_grad=True)
        y = T.Tensor([3.0], requires_grad=True)
        with T.Tape() as tape:
            loss = T.sum_all(T.mul(y, y))
        tape.backward(loss)
        assert np.array_equal(x.grad, np.zeros(2))

    def test_double_backward_raises_state_error(self):
        x = T.Tensor([1.0], requires_grad=True)
        with T.Tape() as tape:
            loss = T.sum_all(x)
        tape.backward(loss)
        with pytest.raises(TapeStateError):
            tape.backward(loss)

    def test_backward_needs_scalar(self):
        x = T.Tensor([1.0, 2.0], requires_grad=True)
        with T.Tape() as tape:
            y = T.mul(x, x)
        with pytest.raises(ShapeError):
            tape.backward(y)

    def test_deterministic_bit_identical(self):
        rng = np.random.default_rng(9)
        a_data = rng.normal(size=(3, 3))
        b_data = rng.normal(size=(3, 3))

        def run():
            a = T.Tensor(a_data.copy(), requires_grad=True)
            b = T.Tensor(b_data.copy(), requires_grad=True)
            with T.Tape() as tape:
                loss = T.sum_all(T.softmax(T.matmul(a, b)))
            tape.backward(loss)
            return a.grad.copy(), b.grad.copy()

        ga1, gb1 = run()
        ga2, gb2 = run()
        assert np.array_equal(ga1, ga2)
        assert np.array_equal(gb1, gb2)


class TestCompositeOps:
    def test_layer_norm_grad(self):
        rng = np.random.default_rng(10)
        x = T.Tensor(rng.normal(size=(3, 6)), requires_grad=True)
        g = T.Tensor(rng.normal(size=6), requires_grad=True)
        b = T.Tensor(rng.normal(size=6), requires_grad=True)
        u = T.Tensor(rng.normal(size=(3, 6)))
        check_grad(lambda: T.sum_all(T.mul(T.layer_norm(x, g, b), u)), [x, g, b])

    def test_gather_rows_grad(self):
        rng = np.random.default_rng(11)
        table = T.Tensor(rng.normal(size=(5, 3)), requires_grad=True)
        ids = np.array([[0, 2], [2, 4]])
        u = T.Tensor(rng.normal(size=(2, 2, 3)))
        check_grad(lambda: T.sum_all(T.mul(T.gather_rows(table, ids), u)), [table])

    def test_scale_rows_grad(self):
        rng = np.random.default_rng(12)
        a = T.Tensor(rng.normal(size=(2, 4)), requires_grad=True)
        s = T.Tensor(rng.uniform(0.5, 1.5, size=(2, 1)), requires_grad=True)
        u = T.Tensor(rng.normal(size=(2, 4)))
        check_grad(lambda: T.sum_all(T.mul(T.scale_rows(a, s), u)), [a, s])

    def test_concat_pad_transpose_grads(self):
        rng = np.random.default_rng(13)
        a = T.Tensor(rng.normal(size=(2, 3)), requires_grad=True)
        b = T.Tensor(rng.normal(size=(2, 2)), requires_grad=True)
        u = T.Tensor(rng.normal(size=(7, 2)))

        def build():
            cat = T.concat_last(a, b)
            padded = T.pad_last(cat, 7)
            return T.sum_all(T.mul(T.transpose(padded, (1, 0)), u))

        check_grad(build, [a, b])


class TestAdamW:
    def make_param(self, val):
        return {"w": T.Tensor(np.array(val), requires_grad=True)}

    def test_zero_grad_zero_decay_leaves_params(self):
        params = self.make_param([1.0, -2.0])
        grads = {"w": np.zeros(2)}
        T.adamw_step(params, grads, lr=0.1, state=T.AdamState(), weight_decay=0.0)
        assert np.array_equal(params["w"].data, [1.0, -2.0])

    def test_one_step_descends_quadratic(self):
        params = self.make_param([1.0])
        f0 = params["w"].data[0] ** 2
        grads = {"w": 2 * params["w"].data}
        T.adamw_step(params, grads, lr=0.05, state=T.AdamState(), weight_decay=0.0)
        assert params["w"].data[0] ** 2 < f0

    def test_warmup_is_linear(self):
        assert T.warmup_lr(1e-3, 500, 1000) == pytest.approx(5e-4)
        assert T.warmup_lr(1e-3, 1000, 1000) == pytest.approx(1e-3)
        assert T.warmup_lr(1e-3, 5000, 1000) == pytest.approx(1e-3)

    def test_decoupled_decay_shrinks_without_grad_direction(self):
        params = self.make_param([10.0])
        grads = {"w": np.zeros(1)}
        T.adamw_step(params, grads, lr=0.1, state=T.AdamState(), weight_decay=0.5)
        assert params["w"].data[0] == pytest.approx(10.0 - 0.1 * 0.5 * 10.0)

    def test_clip_grad_norm(self):
        p = {"w": T.Tensor(np.zeros(4), requires_grad=True)}
        p["w"].accumulate_grad(np.array([3.0, 4.0, 0.0, 0.0]))
        norm = T.clip_grad_norm(p, 1.0)
        assert norm == pytest.approx(5.0)
        assert np.linalg.norm(p["w"].grad) == pytest.approx(1.0)
