import numpy as np
import pytest

from pnfrec.tensor import Tensor


def numeric_grad(f, arrays, which, h=1e-6):
    """Central differences of scalar ``f(*arrays)`` w.r.t. ``arrays[which]``."""
    x = arrays[which]
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        up = f(*arrays)
        x[i] = old - h
        down = f(*arrays)
        x[i] = old
        grad[i] = (up - down) / (2 * h)
    return grad


def rel_error(a, b):
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return np.linalg.norm(a - b) / denom


def check_op_gradients(op, arrays, seed=0, tol=1e-5):
    """Compare autodiff and finite-difference gradients of ``sum(op(...) * w)``.

    ``w`` is a fixed random projection so every output element matters.
    Returns the worst relative error across inputs.
    """
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    out_shape = op(*[Tensor(a) for a in arrays]).shape
    w = np.random.default_rng(seed + 1000).standard_normal(out_shape)

    def scalar(*arrs):
        return float((op(*[Tensor(a) for a in arrs]).data * w).sum())

    leaves = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = op(*leaves)
    out.backward(w)
    worst = 0.0
    for j, leaf in enumerate(leaves):
        num = numeric_grad(scalar, arrays, j)
        ana = leaf.grad if leaf.grad is not None else np.zeros_like(num)
        worst = max(worst, rel_error(ana, num))
    assert worst < tol, f"gradient mismatch: relative error {worst:.3e}"
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    """Repeat the acceptance verdict lines at the end of the run."""
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(getattr(mod, "emit", None), "lines", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
