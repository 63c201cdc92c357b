import numpy as np
import pytest

from app.graph import from_ising, greedy_strong_independent_set, lattice2d, split_independent_set
from app.mrf import CovariateSpec, ModelSpec, simulate_dataset, sparse_theta
from app.utils import make_rng


@pytest.fixture
def make_instance():
    """Factory for simulated lattice instances: returns (graph, dataset, theta, split)."""

    def _make(rows=10, cols=10, d=10, s=3, beta=0.2, value=1.0, rho=0.2, sweeps=200, seed=0):
        rng = make_rng(seed)
        h = from_ising(lattice2d(rows, cols), beta, 0.25)
        model = ModelSpec(h, sparse_theta(d, s, value))
        data = simulate_dataset(model, CovariateSpec(d=d, rho=rho), sweeps, rng)
        split = split_independent_set(greedy_strong_independent_set(h), rng)
        return h, data, model.theta, split

    return _make


@pytest.fixture
def rng():
    return make_rng(12345)


@pytest.fixture
def signs():
    def _signs(n, rng):
        return np.where(rng.random(n) < 0.5, 1.0, -1.0)

    return _signs
