import numpy as np
import pytest

from smalltarget.tensor import Parameter, backward, precision


def fd_grad(loss_fn, params, eps=1e-6):
    """Central-difference gradient of a scalar loss w.r.t. every entry of params."""
    out = []
    for p in params:
        g = np.zeros_like(p.data)
        for idx in np.ndindex(p.shape):
            old = p.data[idx]
            p.data[idx] = old + eps
            up = loss_fn().item()
            p.data[idx] = old - eps
            down = loss_fn().item()
            p.data[idx] = old
            g[idx] = (up - down) / (2 * eps)
        out.append(g)
    return out


def analytic_grad(loss_fn, params):
    for p in params:
        p.grad = np.zeros_like(p.data)
    backward(loss_fn())
    return [p.grad.copy() for p in params]


def max_rel(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-6)))


@pytest.fixture
def f64():
    with precision(np.float64):
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def param(rng, *shape):
    return Parameter(rng.standard_normal(shape))
