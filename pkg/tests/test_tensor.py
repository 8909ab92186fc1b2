"""
Created on 2026-10-18

@author: wf
"""

import threading

import numpy as np

from pidm import tensor as T
from pidm.basetest import Basetest
from pidm.tensor import (
    DTypeError,
    Graph,
    MaskError,
    NonDeterministicError,
    NonFiniteError,
    ShapeError,
    Tensor,
    backward,
    gradcheck,
    no_grad,
)


def numeric_grad(fn, array: np.ndarray, eps: float = 1e-5) -> np.ndarray:
    """
    central differences of the scalar fn() with respect to array, perturbed in place
    """
    grad = np.zeros_like(array)
    for index in np.ndindex(array.shape):
        original = array[index]
        array[index] = original + eps
        plus = fn()
        array[index] = original - eps
        minus = fn()
        array[index] = original
        grad[index] = (plus - minus) / (2 * eps)
    return grad


class TestTensor(Basetest):
    """
    test the reverse-mode autodiff substrate
    """

    def check_op(self, build, shapes, low=-2.0, high=2.0, seeds=20, keep_away=None):
        """
        compare backward against central differences for the op built from
        parameters of the given shapes over several seeds
        """
        for seed in range(seeds):
            rng = self.rng(seed)
            params = {}
            for i, shape in enumerate(shapes):
                values = rng.uniform(low, high, size=shape)
                if keep_away is not None:
                    values = np.where(np.abs(values) < keep_away, keep_away + np.abs(values), values)
                params[f"p{i}"] = Tensor.parameter(values, f"p{i}", dtype="f64")
            out_shape = build(*params.values()).shape
            weights = Tensor(rng.uniform(0.5, 1.5, size=out_shape), dtype="f64")

            def loss():
                return (build(*params.values()) * weights).sum()

            grads = backward(loss(), params)
            with no_grad():
                for name, param in params.items():
                    expected = numeric_grad(lambda: loss().item(), param.data)
                    self.assertAllClose(grads[name], expected, rtol=1e-6, atol=1e-8, msg=f"seed {seed} {name}")

    def test_softmax_uniform(self):
        out = T.softmax(Tensor([0.0, 0.0, 0.0], dtype="f64"))
        self.assertAllClose(out.data, [1 / 3, 1 / 3, 1 / 3])

    def test_smooth_l1_quadratic_branch(self):
        out = T.smooth_l1(Tensor([0.5], dtype="f64"))
        self.assertAllClose(out.data, [0.125])

    def test_bce_half(self):
        out = T.bce(Tensor([0.5], dtype="f64"), Tensor([1.0], dtype="f64"))
        self.assertAllClose(out.data, [0.693147], rtol=1e-6)

    def test_linear_gradient(self):
        w = Tensor.parameter([0.3, -0.7], "w", dtype="f64")
        x = Tensor([1.0, 2.0], dtype="f64")
        grads = backward((w * x).sum(), {"w": w})
        self.assertAllClose(grads["w"], [1.0, 2.0])

    def test_square_gradient(self):
        w = Tensor.parameter([3.0], "w", dtype="f64")
        grads = backward((w * w).sum(), {"w": w})
        self.assertAllClose(grads["w"], [6.0])

    def test_unreachable_parameter_gets_zeros(self):
        w = Tensor.parameter([1.0, 2.0], "w", dtype="f64")
        unused = Tensor.parameter([[1.0]], "unused", dtype="f64")
        grads = backward((w * w).sum(), {"w": w, "unused": unused})
        self.assertArrayEqual(grads["unused"], np.zeros((1, 1)))

    def test_backward_needs_scalar(self):
        w = Tensor.parameter([1.0, 2.0], "w", dtype="f64")
        with self.assertRaises(ShapeError):
            backward(w * w, {"w": w})

    def test_elementwise_gradients(self):
        self.check_op(lambda a, b: a + b, [(3, 4), (4,)])
        self.check_op(lambda a, b: a - b, [(2, 3), (2, 1)])
        self.check_op(lambda a, b: a * b, [(3, 4), (3, 4)])
        self.check_op(lambda a, b: a / b, [(3,), (3,)], low=0.5, high=2.0)
        self.check_op(lambda a: -a, [(2, 2)])
        self.check_op(T.exp, [(5,)], low=-1.0, high=1.0)
        self.check_op(T.log, [(5,)], low=0.2, high=3.0)

    def test_activation_gradients(self):
        self.check_op(T.relu, [(6,)], keep_away=0.05)
        self.check_op(T.gelu, [(6,)])
        self.check_op(T.tanh, [(6,)])
        self.check_op(T.sigmoid, [(6,)])
        self.check_op(T.softmax, [(2, 5)])

    def test_structural_gradients(self):
        self.check_op(lambda a, b: a @ b, [(2, 3, 4), (4, 5)])
        self.check_op(lambda a: a.transpose(1, 0, 2), [(2, 3, 4)])
        self.check_op(lambda a: a.reshape(6, 2), [(3, 4)])
        self.check_op(lambda a, b: T.concat([a, b], axis=1), [(2, 3), (2, 2)])
        self.check_op(lambda a: a[:, 1:3], [(3, 4)])
        self.check_op(lambda a: a.sum(axis=1), [(3, 4)])
        self.check_op(lambda a: a.mean(axis=0, keepdims=True), [(3, 4)])
        self.check_op(lambda table: T.embedding(table, np.array([[1, 1, 0], [2, 0, 1]])), [(3, 4)])

    def test_normalization_and_losses(self):
        self.check_op(lambda x, s, b: T.layer_norm(x, s, b), [(3, 8), (8,), (8,)])
        self.check_op(T.smooth_l1, [(8,)], low=-3.0, high=3.0, keep_away=0.05)
        self.check_op(lambda p, y: T.bce(p, y), [(6,), (6,)], low=0.1, high=0.9)

    def test_masked_fill_softmax(self):
        mask = np.array([[True, False, True], [False, False, True]])

        def build(a):
            return T.softmax(T.masked_fill(a, ~mask))

        self.check_op(build, [(2, 3)])
        out = build(Tensor(np.zeros((2, 3)), dtype="f64"))
        self.assertAllClose(out.data, [[0.5, 0.0, 0.5], [0.0, 0.0, 1.0]])

    def test_fully_masked_row(self):
        row = T.masked_fill(Tensor(np.zeros((1, 3)), dtype="f64"), np.ones((1, 3), dtype=bool))
        with self.assertRaises(MaskError):
            T.softmax(row)

    def test_non_finite_output(self):
        with self.assertRaises(NonFiniteError):
            T.log(Tensor([0.0], dtype="f64"))

    def test_mixed_dtypes(self):
        with self.assertRaises(DTypeError):
            Tensor([1.0], dtype="f32") + Tensor([1.0], dtype="f64")

    def test_shape_mismatch(self):
        with self.assertRaises(ShapeError):
            Tensor(np.zeros((2, 3))) + Tensor(np.zeros((4,)))
        with self.assertRaises(ShapeError):
            Tensor(np.zeros((2, 3))) @ Tensor(np.zeros((2, 3)))

    def test_graph_is_topological(self):
        a = Tensor.parameter([1.0, 2.0], "a", dtype="f64")
        b = Tensor.parameter([0.5, 0.5], "b", dtype="f64")
        loss = (T.tanh(a * b) + a).sum()
        records = Graph.trace(loss).records
        seen = set()
        for record in records:
            for input_id in record.input_ids:
                self.assertIn(input_id, seen)
            seen.add(record.output_id)
        self.assertEqual(records[-1].output_id, loss.node_id)

    def test_no_grad_builds_no_graph(self):
        a = Tensor.parameter([1.0], "a", dtype="f64")
        with no_grad():
            out = a * a
        self.assertFalse(out.requires_grad)
        self.assertIsNone(out.node_id)

    def test_no_grad_is_thread_local(self):
        a = Tensor.parameter([1.0], "a", dtype="f64")
        results = {}

        def worker():
            results["worker"] = (a * a).requires_grad

        with no_grad():
            thread = threading.Thread(target=worker)
            thread.start()
            thread.join()
        self.assertTrue(results["worker"])

    def test_gradcheck_quadratic(self):
        w = Tensor.parameter([0.3, -1.2, 2.0], "w", dtype="f64")
        error = gradcheck(lambda: (w * w * 0.5).sum(), {"w": w})
        self.assertLessEqual(error, 1e-9)

    def test_gradcheck_two_layer_net(self):
        rng = self.rng(3)
        params = {
            "w1": Tensor.parameter(rng.normal(size=(4, 5)), "w1", dtype="f64"),
            "b1": Tensor.parameter(rng.normal(size=(5,)), "b1", dtype="f64"),
            "w2": Tensor.parameter(rng.normal(size=(5, 2)), "w2", dtype="f64"),
        }
        x = Tensor(rng.normal(size=(3, 4)), dtype="f64")

        def loss():
            hidden = T.tanh(x @ params["w1"] + params["b1"])
            return T.smooth_l1(hidden @ params["w2"]).mean()

        self.assertLessEqual(gradcheck(loss, params), 1e-7)

    def test_gradcheck_empty(self):
        self.assertEqual(gradcheck(lambda: Tensor(0.0, dtype="f64"), {}), 0.0)

    def test_gradcheck_rejects(self):
        w = Tensor.parameter([1.0], "w", dtype="f64")
        with self.assertRaises(ValueError):
            gradcheck(lambda: (w * w).sum(), {"w": w}, eps=1e-2)
        w32 = Tensor.parameter([1.0], "w", dtype="f32")
        with self.assertRaises(DTypeError):
            gradcheck(lambda: (w32 * w32).sum(), {"w": w32})
        calls = []

        def drifting():
            calls.append(1)
            return (w * len(calls)).sum()

        with self.assertRaises(NonDeterministicError):
            gradcheck(drifting, {"w": w})
