"""Tests for the reverse-mode autodiff engine.

Gradient correctness is established op by op against central finite
differences, then the tape mechanics (eager evaluation, replay under new
bindings, fan-out accumulation, error propagation) and the parameter store
are exercised directly.
"""

import numpy as np
import pytest

import hopfolio.autodiff as ad
from hopfolio.autodiff import ParamStore, Tape
from hopfolio.errors import NonFiniteError, ShapeError


def _weighted_sum(x, w):
    """Scalar root with a non-uniform gradient signal."""
    return (x * x.tape.constant(w)).sum()


def _op_graph(kind, rng):
    """Build a small graph whose root depends on ``kind`` through params."""
    tape = Tape()
    if kind in ("add", "sub", "mul", "div"):
        a = tape.param("a", rng.normal(size=(2, 3)))
        b = tape.param("b", rng.normal(size=3) + (3.0 if kind == "div" else 0.0))
        out = {"add": a + b, "sub": a - b, "mul": a * b, "div": a / b}[kind]
        root = _weighted_sum(out, rng.normal(size=(2, 3)))
    elif kind == "scale":
        a = tape.param("a", rng.normal(size=(2, 3)))
        root = _weighted_sum(a * 2.5, rng.normal(size=(2, 3)))
    elif kind == "shift":
        a = tape.param("a", rng.normal(size=(2, 3)))
        root = _weighted_sum(a + 1.25, rng.normal(size=(2, 3)))
    elif kind == "matmul":
        a = tape.param("a", rng.normal(size=(2, 3)))
        b = tape.param("b", rng.normal(size=(3, 4)))
        root = _weighted_sum(a @ b, rng.normal(size=(2, 4)))
    elif kind == "transpose":
        a = tape.param("a", rng.normal(size=(2, 3)))
        root = _weighted_sum(a.transpose((1, 0)), rng.normal(size=(3, 2)))
    elif kind == "reshape":
        a = tape.param("a", rng.normal(size=(2, 6)))
        root = _weighted_sum(a.reshape((3, 4)), rng.normal(size=(3, 4)))
    elif kind == "broadcast":
        a = tape.param("a", rng.normal(size=(1, 3)))
        root = _weighted_sum(a.broadcast_to((4, 3)), rng.normal(size=(4, 3)))
    elif kind == "concat":
        a = tape.param("a", rng.normal(size=(2, 3)))
        b = tape.param("b", rng.normal(size=(2, 2)))
        root = _weighted_sum(ad.concat([a, b], axis=1), rng.normal(size=(2, 5)))
    elif kind == "slice":
        a = tape.param("a", rng.normal(size=(4, 5)))
        root = _weighted_sum(a[1:3, ::2], rng.normal(size=(2, 3)))
    elif kind in ("exp", "sin", "sigmoid", "tanh", "gelu", "softmax"):
        a = tape.param("a", rng.normal(size=(3, 4)))
        fn = getattr(ad, kind)
        root = _weighted_sum(fn(a), rng.normal(size=(3, 4)))
    elif kind == "log":
        a = tape.param("a", rng.uniform(0.5, 2.0, size=(3, 4)))
        root = _weighted_sum(ad.log(a), rng.normal(size=(3, 4)))
    elif kind == "logsumexp":
        a = tape.param("a", rng.normal(size=(3, 4)))
        root = _weighted_sum(ad.logsumexp(a), rng.normal(size=3))
    elif kind == "layer_norm":
        a = tape.param("a", rng.normal(size=(3, 5)))
        root = _weighted_sum(ad.layer_norm(a), rng.normal(size=(3, 5)))
    elif kind == "sum":
        a = tape.param("a", rng.normal(size=(3, 4)))
        root = _weighted_sum(a.sum(axis=1), rng.normal(size=3))
    elif kind == "mean":
        a = tape.param("a", rng.normal(size=(3, 4)))
        root = _weighted_sum(a.mean(axis=0), rng.normal(size=4))
    elif kind == "std":
        a = tape.param("a", rng.normal(size=(3, 4)))
        root = a.std()
    elif kind == "amax":
        a = tape.param("a", rng.normal(size=(3, 4)))
        root = a.max()
    else:
        raise AssertionError(f"no graph builder for op {kind!r}")
    return tape, root


class TestOpGradients:
    def test_every_op_has_a_builder(self):
        rng = np.random.default_rng(42)
        for kind in ad.op_kinds():
            tape, root = _op_graph(kind, rng)
            assert root.value.size == 1

    def test_gradients_match_finite_differences(self):
        """Central-difference agreement for every supported op."""
        rng = np.random.default_rng(42)
        for kind in ad.op_kinds():
            tape, root = _op_graph(kind, rng)
            worst = tape.finite_diff_check(root)
            assert worst < 1e-6, f"op {kind!r}: worst rel err {worst:.3e}"

    def test_composite_graph_gradient(self):
        # several ops chained: softmax head over an affine projection
        rng = np.random.default_rng(7)
        tape = Tape()
        x = tape.input("x", rng.normal(size=(4, 3)))
        w = tape.param("w", rng.normal(size=(3, 5)))
        b = tape.param("b", rng.normal(size=5))
        probs = ad.softmax(ad.tanh(x @ w + b))
        root = _weighted_sum(probs, rng.normal(size=(4, 5)))
        assert tape.finite_diff_check(root) < 1e-6

    def test_slice_backward_zero_fills(self):
        tape = Tape()
        a = tape.param("a", np.arange(12.0).reshape(3, 4))
        root = a[1].sum()
        grads = tape.backward(root)
        expect = np.zeros((3, 4))
        expect[1] = 1.0
        np.testing.assert_array_equal(grads["a"], expect)

    def test_softmax_rows_are_distributions(self):
        rng = np.random.default_rng(42)
        tape = Tape()
        a = tape.input("a", rng.normal(size=(6, 9)) * 4.0)
        p = ad.softmax(a).value
        assert np.all(p >= 0.0)
        np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-12)

    def test_layer_norm_standardizes_rows(self):
        """Rows come out mean ~0 with variance ~1 (up to the epsilon)."""
        rng = np.random.default_rng(42)
        tape = Tape()
        a = tape.input("a", rng.normal(0.0, 50.0, size=(6, 64)))
        y = ad.layer_norm(a).value
        assert np.abs(y.mean(axis=-1)).max() < 1e-10
        np.testing.assert_allclose(y.var(axis=-1), 1.0, atol=1e-8)

    def test_reduction_values_match_numpy(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(4, 5))
        tape = Tape()
        v = tape.input("x", x)
        np.testing.assert_allclose(v.sum().value, x.sum())
        np.testing.assert_allclose(v.sum(axis=0).value, x.sum(axis=0))
        np.testing.assert_allclose(v.mean(axis=1).value, x.mean(axis=1))
        np.testing.assert_allclose(v.std().value, x.std(ddof=1))
        np.testing.assert_allclose(v.std(ddof=0).value, x.std(ddof=0))
        np.testing.assert_allclose(v.max().value, x.max())


class TestTapeSemantics:
    def test_values_are_eager(self):
        tape = Tape()
        a = tape.input("a", [1.0, 2.0])
        b = a * 3.0
        np.testing.assert_array_equal(b.value, [3.0, 6.0])

    def test_forward_replays_under_new_bindings(self):
        tape = Tape()
        x = tape.input("x", [[1.0, 2.0]])
        w = tape.param("w", [[1.0], [1.0]])
        root = (x @ w).sum()
        assert root.value.item() == 3.0
        out = tape.forward({"x": np.array([[5.0, 7.0]])}, root=root)
        assert out.item() == 12.0
        # the graph state reflects the rebinding
        grads = tape.backward(root)
        np.testing.assert_array_equal(grads["w"], [[5.0], [7.0]])

    def test_fanout_accumulates_by_summation(self):
        # y = sum(x*x + x) so dy/dx = 2x + 1
        tape = Tape()
        x = tape.param("x", [1.5, -2.0, 0.25])
        root = (x * x + x).sum()
        grads = tape.backward(root)
        np.testing.assert_allclose(grads["x"], [4.0, -3.0, 1.5], atol=1e-12)

    def test_unreached_param_gets_zero_gradient(self):
        tape = Tape()
        x = tape.param("x", [1.0, 2.0])
        unused = tape.param("unused", np.ones((2, 2)))
        root = x.sum()
        grads = tape.backward(root)
        np.testing.assert_array_equal(grads["unused"], np.zeros((2, 2)))

    def test_inputs_carry_no_gradient_entry(self):
        tape = Tape()
        x = tape.input("x", [1.0, 2.0])
        w = tape.param("w", [3.0, 4.0])
        grads = tape.backward((x * w).sum())
        assert set(grads) == {"w"}

    def test_backward_requires_scalar_root(self):
        tape = Tape()
        x = tape.param("x", np.ones((2, 2)))
        with pytest.raises(ShapeError, match="scalar root"):
            tape.backward(x + 1.0)

    def test_nonfinite_intermediate_names_the_op(self):
        tape = Tape()
        x = tape.input("x", [1.0, 2.0])
        with np.errstate(over="ignore"):
            with pytest.raises(NonFiniteError, match="exp"):
                ad.exp(x + 1000.0)

    def test_shape_mismatch_names_the_op(self):
        tape = Tape()
        a = tape.input("a", np.ones((2, 3)))
        b = tape.input("b", np.ones((2, 3)))
        with pytest.raises(ShapeError, match="matmul"):
            a @ b

    def test_variables_cannot_cross_tapes(self):
        t1, t2 = Tape(), Tape()
        a = t1.input("a", [1.0])
        b = t2.input("b", [1.0])
        with pytest.raises(ShapeError, match="different tapes"):
            a + b

    def test_duplicate_leaf_name_rejected(self):
        tape = Tape()
        tape.input("x", [1.0])
        with pytest.raises(ValueError, match="duplicate leaf"):
            tape.param("x", [2.0])

    def test_rebinding_unknown_or_misshaped_leaf(self):
        tape = Tape()
        x = tape.input("x", np.ones(3))
        root = x.sum()
        with pytest.raises(KeyError):
            tape.forward({"y": np.ones(3)}, root=root)
        with pytest.raises(ShapeError, match="shape"):
            tape.forward({"x": np.ones(4)}, root=root)

    def test_finite_diff_check_eps_domain(self):
        tape = Tape()
        x = tape.param("x", [1.0])
        root = x.sum()
        with pytest.raises(ValueError, match="eps"):
            tape.finite_diff_check(root, eps=1e-8)
        with pytest.raises(ValueError, match="eps"):
            tape.finite_diff_check(root, eps=1e-2)

    def test_finite_diff_check_restores_values(self):
        rng = np.random.default_rng(5)
        tape = Tape()
        x = tape.param("x", rng.normal(size=(2, 3)))
        before = x.value.copy()
        tape.finite_diff_check((x * x).sum())
        np.testing.assert_array_equal(x.value, before)


class TestParamStore:
    def test_add_and_lookup(self):
        store = ParamStore()
        store.add("w", [[1.0, 2.0]])
        assert "w" in store
        assert store.names() == ("w",)
        np.testing.assert_array_equal(store["w"], [[1.0, 2.0]])

    def test_duplicate_name_rejected(self):
        store = ParamStore()
        store.add("w", [1.0])
        with pytest.raises(ValueError, match="duplicate"):
            store.add("w", [2.0])

    def test_update_preserves_shape(self):
        store = ParamStore()
        store.add("w", np.zeros((2, 2)))
        store["w"] = np.ones((2, 2))
        with pytest.raises(ShapeError):
            store["w"] = np.ones(3)
        with pytest.raises(KeyError):
            store["v"] = np.ones(3)

    def test_copy_is_independent(self):
        store = ParamStore()
        store.add("w", np.zeros(2))
        dup = store.copy()
        dup["w"] = np.ones(2)
        np.testing.assert_array_equal(store["w"], np.zeros(2))

    def test_insertion_order_is_stable(self):
        store = ParamStore()
        for name in ("c", "a", "b"):
            store.add(name, [0.0])
        assert store.names() == ("c", "a", "b")

    def test_json_round_trip(self):
        rng = np.random.default_rng(11)
        store = ParamStore()
        store.add("w", rng.normal(size=(2, 3)))
        store.add("b", rng.normal(size=3))
        text = store.to_json()
        back = ParamStore.from_json(text)
        assert back.names() == store.names()
        for name in store:
            np.testing.assert_array_equal(back[name], store[name])
        # serialization itself is deterministic
        assert back.to_json() == text

    def test_save_and_load(self, tmp_path):
        store = ParamStore()
        store.add("w", np.arange(6.0).reshape(2, 3))
        path = tmp_path / "params.json"
        store.save(path)
        back = ParamStore.load(path)
        np.testing.assert_array_equal(back["w"], store["w"])

    def test_bind_registers_params_on_tape(self):
        store = ParamStore()
        store.add("w", np.ones(3))
        tape = Tape()
        pv = store.bind(tape)
        grads = tape.backward((pv["w"] * 2.0).sum())
        np.testing.assert_array_equal(grads["w"], np.full(3, 2.0))
