"""Shared fixtures and the --runslow switch."""
from typing import Callable, Dict, Sequence

import numpy as np
import pytest

from app.tensor import Tensor, backward, elementwise, reduce_sum


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run slow acceptance tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running acceptance test (needs --runslow)")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def projected_loss(output: Tensor, projection: np.ndarray) -> Tensor:
    """sum(output * projection): a scalar whose gradient wrt output is `projection`."""
    return reduce_sum(elementwise(output, Tensor(projection), "mul"))


@pytest.fixture
def grad_check() -> Callable[..., float]:
    """Largest relative error between backward() gradients and central differences.

    `forward` maps the list of leaf tensors to an output tensor; the output is
    projected onto a fixed random direction to get a scalar.
    """

    def _check(forward: Callable[[Sequence[Tensor]], Tensor], leaves: Sequence[Tensor],
               eps: float = 1e-6, seed: int = 0, samples: int = 0) -> float:
        local = np.random.default_rng(seed)
        projection = np.asarray(local.standard_normal(forward(leaves).shape))
        loss = projected_loss(forward(leaves), projection)
        backward(loss)
        analytic: Dict[int, np.ndarray] = {i: leaf.grad.copy() for i, leaf in enumerate(leaves)}

        worst = 0.0
        for i, leaf in enumerate(leaves):
            flat = leaf.data.reshape(-1)
            positions = range(flat.size)
            if samples and flat.size > samples:
                positions = local.choice(flat.size, size=samples, replace=False)
            numeric = np.zeros(len(positions))
            for k, pos in enumerate(positions):
                original = flat[pos]
                flat[pos] = original + eps
                plus = projected_loss(forward(leaves), projection).item()
                flat[pos] = original - eps
                minus = projected_loss(forward(leaves), projection).item()
                flat[pos] = original
                numeric[k] = (plus - minus) / (2 * eps)
            exact = analytic[i].reshape(-1)[list(positions)]
            scale = max(np.abs(exact).max(), np.abs(numeric).max(), 1e-8)
            worst = max(worst, float(np.abs(exact - numeric).max() / scale))
        return worst

    return _check
