# %% [markdown]
# Autodiff and Adam
#
# Every model parameter is a `Tensor`.  Operations record their inputs and a
# backward rule; `backward()` walks the graph once in reverse topological order.

# %%
import numpy as np

from pnfrec import tensor as T
from pnfrec.optim import Adam
from pnfrec.tensor import Tensor

x = Tensor(np.array([[1.0, 2.0], [3.0, 4.0]]), requires_grad=True)
w = Tensor(np.array([[1.0], [-0.25]]), requires_grad=True)
y = T.sum(T.relu(T.matmul(x, w)))
y.backward()
print("y =", y.item())
print("dy/dw =", w.grad.ravel())  # only rows where x @ w > 0 contribute

# %% [markdown]
# A finite-difference check on a softmax-weighted sum.

# %%
rng = np.random.default_rng(0)
a = rng.standard_normal((3, 5))
proj = rng.standard_normal((3, 5))


def f(arr):
    return float((T.softmax_rows(Tensor(arr)).data * proj).sum())


leaf = Tensor(a.copy(), requires_grad=True)
T.sum(T.mul(T.softmax_rows(leaf), Tensor(proj))).backward()
h = 1e-6
num = np.zeros_like(a)
for i in np.ndindex(a.shape):
    up, down = a.copy(), a.copy()
    up[i] += h
    down[i] -= h
    num[i] = (f(up) - f(down)) / (2 * h)
print("max |autodiff - numeric| =", np.abs(leaf.grad - num).max())

# %% [markdown]
# Adam minimising a quadratic bowl.  The first step moves every coordinate by
# about `lr` regardless of the gradient scale.

# %%
p = Tensor(np.array([3.0, -20.0]), requires_grad=True)
opt = Adam({"p": p}, lr=0.5)
for step in range(100):
    opt.zero_grad()
    T.sum(T.mul(p, p)).backward()
    opt.step()
    if step in (0, 9, 99):
        print(f"step {step + 1:>3}: p = {p.data.round(4)}")
