import numpy as np
import pytest

from cffm.tensor import Parameter, backward

ACCEPTANCE_LINES = []


def central_difference(fn, arr, eps=1e-5):
    """d fn() / d arr by central differences; ``arr`` is perturbed in place."""
    g = np.zeros_like(arr)
    flat, gf = arr.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        up = float(fn())
        flat[i] = old - eps
        down = float(fn())
        flat[i] = old
        gf[i] = (up - down) / (2 * eps)
    return g


def assert_grads_match(loss_fn, params, rtol=1e-4):
    """Analytic grads of ``loss_fn`` against central differences, norm-relative."""
    for p in params:
        p.zero_grad()
    backward(loss_fn())
    for p in params:
        num = central_difference(lambda: loss_fn().item(), p.data)
        denom = max(np.linalg.norm(num), np.linalg.norm(p.grad), 1e-3)
        err = np.linalg.norm(num - p.grad) / denom
        assert err <= rtol, f"{p.name}: relative error {err:.2e}"


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def param(rng):
    def make(shape, name="p", std=1.0):
        return Parameter(rng.standard_normal(shape) * std, name)
    return make


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
