"""Shared test helpers: finite-difference oracles and series builders."""

import numpy as np
import pytest

from stationcast.autodiff import Tensor


def finite_diff(fn, arrays, h=1e-5):
    """Central-difference gradients of scalar ``fn(*arrays)`` per array."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        flat = a.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = fn(*arrays)
            flat[i] = orig - h
            fm = fn(*arrays)
            flat[i] = orig
            gflat[i] = (fp - fm) / (2.0 * h)
        grads.append(g)
    return grads


def check_grads(build, arrays, rtol=1e-6, h=1e-5):
    """Compare backward() against central differences.

    ``build`` maps Tensors to a scalar Tensor; relative error uses a
    max(1, |grad|) denominator.
    """
    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    loss = build(*tensors)
    loss.backward()

    def fn(*arrs):
        return build(*[Tensor(x.copy()) for x in arrs]).item()

    fd = finite_diff(fn, [a.copy() for a in arrays], h=h)
    worst = 0.0
    for t, g in zip(tensors, fd):
        assert t.grad is not None, "gradient was not populated"
        rel = np.abs(t.grad - g) / np.maximum(1.0, np.abs(t.grad))
        worst = max(worst, float(rel.max()))
    assert worst < rtol, f"worst relative gradient error {worst:.3e} >= {rtol}"
    return worst


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(1234))
