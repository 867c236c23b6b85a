import numpy as np
import pytest

from dgflow import autodiff as ad

from conftest import rel_error


def check_grad(build, params, tol=1e-5, step=1e-4):
    loss = build()
    ad.backward(loss)
    analytic = [p.grad.copy() if p.grad is not None else np.zeros_like(p.value) for p in params]
    for p in params:
        p.grad = None
    numeric = ad.finite_difference(build, params, step=step)
    for a, g in zip(analytic, numeric):
        assert rel_error(a, g) < tol, (a, g)


class TestBasicOps:
    def test_relu_grad_positive(self):
        x = ad.parameter(np.array([1.5, 2.0]))
        ad.backward(ad.tsum(ad.relu(x)))
        assert np.allclose(x.grad, [1.0, 1.0])

    def test_tanh_grad_at_zero(self):
        x = ad.parameter(np.array([0.0]))
        ad.backward(ad.tsum(ad.tanh(x)))
        assert np.allclose(x.grad, [1.0])

    def test_linear_layer_vs_finite_difference(self, rng):
        w = ad.parameter(rng.normal(size=(3, 3)))
        b = ad.parameter(rng.normal(size=3))
        x = ad.constant(rng.normal(size=(4, 3)))
        v = ad.constant(rng.normal(size=(4, 3)))
        check_grad(lambda: ad.tsum((ad.matmul(x, w) + b) * v), [w, b])

    def test_softmax_sums_to_one(self, rng):
        x = ad.constant(rng.normal(size=(5, 7)) * 3)
        s = ad.softmax(x, axis=-1)
        assert np.allclose(s.value.sum(axis=-1), 1.0, atol=1e-12)

    def test_consumed_trace_errors(self):
        x = ad.parameter(np.ones(3))
        loss = ad.tsum(x * x)
        ad.backward(loss)
        with pytest.raises(ad.AutodiffError, match="consumed"):
            ad.backward(loss)

    def test_scalar_root_required(self):
        x = ad.parameter(np.ones(3))
        with pytest.raises(ad.AutodiffError, match="scalar"):
            ad.backward(x * x)

    def test_finite_guard(self):
        x = ad.constant(np.array([1.0, 0.0]))
        with pytest.raises(ad.AutodiffError, match="non-finite"):
            ad.log(x - 1.0)

    def test_no_grad_suppresses_tape(self):
        x = ad.parameter(np.ones(3))
        with ad.no_grad():
            y = ad.tsum(x * 2.0)
        assert not y.requires_grad

    def test_three_axis_limit(self):
        with pytest.raises(ad.AutodiffError, match="3 axes"):
            ad.constant(np.zeros((2, 2, 2, 2)))


LAYER_CASES = []
for seed in range(20):
    LAYER_CASES.append(("linear", seed))
    LAYER_CASES.append(("relu", seed))
    LAYER_CASES.append(("tanh", seed))
    LAYER_CASES.append(("softmax", seed))
    LAYER_CASES.append(("einsum", seed))
    LAYER_CASES.append(("batched_matmul", seed))
    LAYER_CASES.append(("concat_gather", seed))
    LAYER_CASES.append(("minimum_clip", seed))


@pytest.mark.parametrize("kind,seed", LAYER_CASES)
def test_op_gradients_match_finite_differences(kind, seed):
    rng = np.random.default_rng(seed)
    # keep inputs away from relu/minimum kinks so central differences are valid
    if kind == "linear":
        w = ad.parameter(rng.normal(size=(4, 5)))
        x = ad.constant(rng.normal(size=(3, 4)))
        v = ad.constant(rng.normal(size=(3, 5)))
        check_grad(lambda: ad.tsum(ad.matmul(x, w) * v), [w])
    elif kind == "relu":
        raw = rng.normal(size=(6,))
        raw[np.abs(raw) < 0.05] += 0.2
        x = ad.parameter(raw)
        v = ad.constant(rng.normal(size=6))
        check_grad(lambda: ad.tsum(ad.relu(x) * v), [x])
    elif kind == "tanh":
        x = ad.parameter(rng.normal(size=(2, 3)))
        v = ad.constant(rng.normal(size=(2, 3)))
        check_grad(lambda: ad.tsum(ad.tanh(x) * v), [x])
    elif kind == "softmax":
        x = ad.parameter(rng.normal(size=(3, 4)))
        v = ad.constant(rng.normal(size=(3, 4)))
        check_grad(lambda: ad.tsum(ad.log_softmax(x) * v), [x])
        check_grad(lambda: ad.tsum(ad.softmax(x) * v), [x])
    elif kind == "einsum":
        w = ad.parameter(rng.normal(size=(2, 4, 3)))
        x = ad.constant(rng.normal(size=(5, 4)))
        v = ad.constant(rng.normal(size=(2, 5, 3)))
        check_grad(lambda: ad.tsum(ad.einsum("mf,dfh->dmh", x, w) * v), [w])
    elif kind == "batched_matmul":
        a = ad.parameter(rng.normal(size=(3, 2, 4)))
        b = ad.parameter(rng.normal(size=(4, 2)))
        v = ad.constant(rng.normal(size=(3, 2, 2)))
        check_grad(lambda: ad.tsum(ad.matmul(a, b) * v), [a, b])
    elif kind == "concat_gather":
        x = ad.parameter(rng.normal(size=(4, 3, 2)))
        y = ad.parameter(rng.normal(size=(4, 2)))
        idx = rng.integers(0, 3, size=4)
        v = ad.constant(rng.normal(size=(4, 4)))
        check_grad(lambda: ad.tsum(ad.concat([ad.gather_rows(x, idx), y], axis=-1) * v), [x, y])
    elif kind == "minimum_clip":
        raw = rng.normal(size=(6,))
        raw[np.abs(raw - 0.5) < 0.05] += 0.2  # keep away from clip boundary ties
        x = ad.parameter(raw)
        v = ad.constant(rng.normal(size=6))
        check_grad(lambda: ad.tsum(ad.minimum(x * x, ad.clip(x, -0.5, 0.5)) * v), [x])


def test_straight_through_routes_gradients():
    soft = ad.parameter(np.array([[0.2, 0.8]]))
    hard = np.array([[0.0, 1.0]])
    out = ad.straight_through(hard, soft)
    assert np.array_equal(out.value, hard)
    ad.backward(ad.tsum(out * ad.constant(np.array([[3.0, 5.0]]))))
    assert np.allclose(soft.grad, [[3.0, 5.0]])


def test_grad_accumulates_across_uses():
    x = ad.parameter(np.array([2.0]))
    y = x * x + x * 3.0
    ad.backward(ad.tsum(y))
    assert np.allclose(x.grad, [2 * 2.0 + 3.0])
