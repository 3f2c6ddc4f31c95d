"""Shared helpers: small random nets, simplex samplers, and the
finite-difference oracle used throughout the gradient tests."""

import numpy as np
import pytest

from cloneguard.nets import Classifier


def small_net(seed, dims=(3, 6, 4), activation="tanh"):
    """A classifier tiny enough for exhaustive finite differencing."""
    return Classifier(list(dims), activation, seed=seed)


def rand_simplex(rng, batch, k):
    """Rows of a Dirichlet(1) draw: uniform over the probability simplex."""
    return rng.dirichlet(np.ones(k), size=batch)


def fd_grad(f, flat0, eps=1e-4):
    """Central finite differences of a scalar function of a flat vector."""
    out = np.zeros_like(flat0)
    for i in range(flat0.size):
        hi = flat0.copy()
        lo = flat0.copy()
        hi[i] += eps
        lo[i] -= eps
        out[i] = (f(hi) - f(lo)) / (2.0 * eps)
    return out


def max_rel_err(analytic, reference):
    """Max absolute deviation scaled by the reference's largest component."""
    scale = max(float(np.max(np.abs(reference))), 1e-12)
    return float(np.max(np.abs(analytic - reference))) / scale


def param_scalar_fn(model, loss_fn):
    """Wrap a loss over ``model`` as a scalar function of its flat params."""
    def f(flat):
        saved = model.params.flatten()
        model.params.assign_flat(flat)
        try:
            return float(loss_fn().data)
        finally:
            model.params.assign_flat(saved)
    return f


@pytest.fixture
def rng():
    return np.random.default_rng(0)
