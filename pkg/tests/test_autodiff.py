import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.special import ndtr

from cgvlm import autodiff as ad
from cgvlm.autodiff import Tensor
from cgvlm.errors import EmptyLossError, GradientContractError, ShapeError
from cgvlm.gradcheck import check_gradients

from gradcases import op_cases

finite = st.floats(-30, 30, allow_nan=False, allow_infinity=False)


def test_matmul_identity_and_hand_values(rng):
    x = rng.normal(size=(3, 4))
    assert np.array_equal((Tensor(np.eye(3)) @ Tensor(x)).data, x)
    out = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]])) @ Tensor(np.array([[1.0], [1.0]]))
    assert np.array_equal(out.data, [[3.0], [7.0]])


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 2\)"):
        Tensor(np.ones((2, 3))) @ Tensor(np.ones((4, 2)))


def test_matmul_gradient_finite_differences(rng):
    a = Tensor(rng.normal(size=(4, 5)), requires_grad=True)
    b = Tensor(rng.normal(size=(5, 2)), requires_grad=True)
    w = rng.normal(size=(4, 2))
    assert check_gradients(lambda: ((a @ b) * w).sum(), [a, b]) < 1e-6


def test_gelu_values_and_gradient(rng):
    assert ad.gelu(Tensor(np.zeros(3))).data.tolist() == [0.0, 0.0, 0.0]
    x = rng.normal(size=50) * 3
    assert np.allclose(ad.gelu(Tensor(x)).data - x * ndtr(x), 0.0, atol=1e-15)
    t = Tensor(rng.normal(size=9), requires_grad=True)
    w = rng.normal(size=9)
    assert check_gradients(lambda: (ad.gelu(t) * w).sum(), [t]) < 1e-6


def test_softmax_uniform_shift_and_rows(rng):
    assert np.allclose(ad.softmax(Tensor(np.zeros(3))).data, 1 / 3, atol=1e-15)
    x = rng.normal(size=(3, 7))
    p = ad.softmax(Tensor(x), axis=1).data
    assert np.abs(p.sum(axis=1) - 1).max() <= 1e-12
    assert np.abs(ad.softmax(Tensor(x + 123.4), axis=1).data - p).max() <= 1e-12


def test_softmax_mask_zeroes_disallowed_entries():
    x = Tensor(np.array([[1.0, 2.0, 3.0]]))
    p = ad.softmax(x, mask=np.array([[True, True, False]])).data
    assert p[0, 2] == 0.0
    assert np.allclose(p[0, :2], np.exp([1, 2]) / np.exp([1, 2]).sum())


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, (4, 6), elements=finite), finite)
def test_softmax_properties(x, c):
    p = ad.softmax(Tensor(x), axis=-1).data
    assert np.all(np.isfinite(p))
    assert np.abs(p.sum(axis=-1) - 1).max() <= 1e-12
    assert np.abs(ad.softmax(Tensor(x + c), axis=-1).data - p).max() <= 1e-12


def test_cross_entropy_uniform_and_margin():
    logits = Tensor(np.zeros((4, 8)))
    assert ad.cross_entropy(logits, np.array([0, 3, 5, 7])).item() == pytest.approx(math.log(8), abs=1e-15)
    losses = []
    for margin in (1.0, 5.0, 10.0):
        lg = np.zeros((3, 5))
        lg[np.arange(3), [1, 2, 4]] = margin
        losses.append(ad.cross_entropy(Tensor(lg), np.array([1, 2, 4])).item())
    assert losses[0] > losses[1] > losses[2] > 0


def test_cross_entropy_loop_oracle(rng):
    logits = rng.normal(size=(5, 11))
    targets = rng.integers(0, 11, size=5)
    mask = np.array([True, False, True, True, False])
    total = 0.0
    for t in range(5):
        if not mask[t]:
            continue
        mx = max(logits[t])
        z = sum(math.exp(v - mx) for v in logits[t])
        total += -(logits[t, targets[t]] - mx - math.log(z))
    oracle = total / mask.sum()
    assert abs(ad.cross_entropy(Tensor(logits), targets, mask).item() - oracle) <= 1e-12


def test_cross_entropy_errors():
    logits = Tensor(np.zeros((2, 4)))
    with pytest.raises(IndexError):
        ad.cross_entropy(logits, np.array([0, 4]))
    with pytest.raises(EmptyLossError):
        ad.cross_entropy(logits, np.array([0, 1]), np.zeros(2, bool))
    # masked positions may hold out-of-vocabulary padding ids
    ad.cross_entropy(logits, np.array([0, 99]), np.array([True, False]))


def test_backward_simple_gradients(rng):
    x = Tensor(rng.normal(size=5), requires_grad=True)
    ad.backward(x.sum())
    assert np.array_equal(x.grad, np.ones(5))
    y = Tensor(rng.normal(size=5), requires_grad=True)
    ad.backward((y * y).sum())
    assert np.allclose(y.grad, 2 * y.data, atol=0)


def test_backward_contract_errors(rng):
    x = Tensor(rng.normal(size=3), requires_grad=True)
    with pytest.raises(GradientContractError):
        ad.backward(x * 2.0)
    root = (x * x).sum()
    ad.backward(root)
    with pytest.raises(GradientContractError):
        ad.backward(root)
    with pytest.raises(GradientContractError):
        ad.backward(Tensor(np.array(1.0)))


def test_gradients_accumulate_until_zeroed(rng):
    x = Tensor(rng.normal(size=4), requires_grad=True)
    ad.backward(x.sum())
    ad.backward(x.sum())
    assert np.array_equal(x.grad, np.full(4, 2.0))
    x.zero_grad()
    assert x.grad is None


def test_non_grad_leaves_stay_empty(rng):
    a = Tensor(rng.normal(size=(2, 3)), requires_grad=True)
    b = Tensor(rng.normal(size=(3, 2)))
    ad.backward((a @ b).sum())
    assert b.grad is None and a.grad is not None


def test_no_grad_records_nothing(rng):
    a = Tensor(rng.normal(size=3), requires_grad=True)
    with ad.no_grad():
        out = (a * a).sum()
    assert not out.requires_grad and out._parents == ()


def test_shared_subexpression_gradient(rng):
    x = Tensor(rng.normal(size=3), requires_grad=True)
    y = x * 3.0
    ad.backward((y * y + y).sum())
    assert np.allclose(x.grad, 18 * x.data + 3, atol=1e-12)


def test_forward_is_deterministic(rng):
    cases_a = op_cases(np.random.default_rng(7))
    cases_b = op_cases(np.random.default_rng(7))
    for (name, fa, _), (_, fb, _) in zip(cases_a, cases_b):
        assert fa().data.tobytes() == fb().data.tobytes(), name


@pytest.mark.parametrize("name", [c[0] for c in op_cases(np.random.default_rng(0))])
def test_op_gradients(name):
    rng = np.random.default_rng(2024)
    for _ in range(5):
        case = {c[0]: c for c in op_cases(rng)}[name]
        assert check_gradients(case[1], case[2]) < 1e-6


def test_sort_rows_canonical_order(rng):
    x = rng.normal(size=(5, 3))
    perm = rng.permutation(5)
    assert ad.sort_rows(Tensor(x)).data.tobytes() == ad.sort_rows(Tensor(x[perm])).data.tobytes()


def test_embedding_out_of_range():
    with pytest.raises(IndexError):
        ad.embedding(Tensor(np.zeros((4, 2))), np.array([0, 4]))
