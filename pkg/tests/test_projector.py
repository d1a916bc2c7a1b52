import numpy as np
import pytest

from cgvlm.autodiff import Tensor
from cgvlm.errors import ShapeError
from cgvlm.gradcheck import check_gradients
from cgvlm.projector import init_projector, project


def test_identity_linear_is_passthrough(rng):
    p = init_projector("linear", 6, 6, seed=0)
    p.w.data = np.eye(6)
    p.b.data = np.zeros(6)
    v = rng.normal(size=(4, 6))
    assert np.array_equal(project(Tensor(v), p).data, v)


@pytest.mark.parametrize("variant", ["linear", "mlp2-gelu"])
def test_row_independence(variant, rng):
    p = init_projector(variant, 32, 16, seed=1)
    v = rng.normal(size=(5, 32))
    full = project(Tensor(v), p).data
    for i in range(5):
        assert project(Tensor(v[i:i + 1]), p).data.tobytes() == full[i:i + 1].tobytes()


@pytest.mark.parametrize("variant", ["linear", "mlp2-gelu"])
def test_projector_gradients(variant, rng):
    p = init_projector(variant, 32, 32, seed=2)
    v = Tensor(rng.normal(size=(4, 32)), requires_grad=True)
    w = rng.normal(size=(4, 32))
    assert check_gradients(lambda: (project(v, p) * w).sum(), p.parameters() + [v]) < 1e-5


def test_seeding():
    a, b, c = (init_projector("mlp2-gelu", 32, 32, seed=s) for s in (4, 4, 5))
    assert all(x.data.tobytes() == y.data.tobytes() for x, y in zip(a.parameters(), b.parameters()))
    assert any(x.data.tobytes() != y.data.tobytes() for x, y in zip(a.parameters(), c.parameters()))


@pytest.mark.parametrize("variant", ["linear", "mlp2-gelu"])
def test_init_output_variance(variant):
    rng = np.random.default_rng(0)
    p = init_projector(variant, 32, 32, seed=3)
    var = project(Tensor(rng.normal(size=(1000, 32))), p).data.var()
    assert 0.25 <= var <= 4.0


def test_width_mismatch():
    p = init_projector("linear", 8, 4, seed=0)
    with pytest.raises(ShapeError):
        project(Tensor(np.zeros((2, 9))), p)


def test_unknown_variant():
    with pytest.raises(ValueError):
        init_projector("conv", 8, 8)
