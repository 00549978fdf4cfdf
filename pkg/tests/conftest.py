import numpy as np
import pytest

from noisyalign.numerics import Tensor


def numeric_grad(fn, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central differences of scalar ``fn(ndarray)`` with respect to every entry of ``x``."""
    x = np.array(x, dtype=np.float64)
    out = np.zeros_like(x)
    flat, g = x.reshape(-1), out.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + h
        up = fn(x)
        flat[i] = keep - h
        down = fn(x)
        flat[i] = keep
        g[i] = (up - down) / (2 * h)
    return out


def analytic_grad(op, *arrays, weights=None):
    """Gradients of ``sum(weights * op(*tensors))`` for every input."""
    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    out = op(*tensors)
    w = np.ones(out.shape) if weights is None else weights
    (out * Tensor(w)).sum().backward()
    return [t.grad for t in tensors]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import sys

    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "LINES", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
