"""A short walk through the tape: forward, backward, and a finite-difference check."""
import numpy as np

from cgvlm import autodiff as ad
from cgvlm.autodiff import Tensor
from cgvlm.gradcheck import check_gradients, numerical_grad

rng = np.random.default_rng(0)

# a two-layer toy: y = sum(gelu(x @ w1) @ w2)
x = Tensor(rng.normal(size=(4, 3)))
w1 = Tensor(rng.normal(size=(3, 5)), requires_grad=True)
w2 = Tensor(rng.normal(size=(5, 1)), requires_grad=True)


def f():
    return ad.matmul(ad.gelu(ad.matmul(x, w1)), w2).sum()


y = f()
ad.backward(y)
print("y =", y.item())
print("dy/dw2 (tape)      :", w2.grad.ravel())
print("dy/dw2 (central fd):", numerical_grad(f, w2).ravel())

# the graph is released after backward; rebuild it for the packaged check
print("max relative error over w1, w2:", check_gradients(f, [w1, w2]))

# softmax rows sum to one even for large logits
logits = Tensor(np.array([[1000.0, 1001.0, 999.0]]))
print("softmax of large logits:", ad.softmax(logits).data)
