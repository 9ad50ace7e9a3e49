import numpy as np
import pytest

from sketchcl.dataio import write_idx


def finite_diff_jacobian(fun, theta, eps=1e-6):
    """Central differences of a vector-valued ``fun`` at ``theta``."""
    theta = np.asarray(theta, dtype=float)
    f0 = np.asarray(fun(theta)).ravel()
    J = np.empty((f0.size, theta.size))
    for j in range(theta.size):
        e = np.zeros_like(theta)
        e[j] = eps
        J[:, j] = (np.asarray(fun(theta + e)).ravel() - np.asarray(fun(theta - e)).ravel()) / (2 * eps)
    return J


def make_fake_mnist(directory, n_train=600, n_test=200, side=8, seed=0, gz=True):
    """Small IDX files whose classes are noisy copies of ten random prototypes."""
    rng = np.random.default_rng(seed)
    protos = rng.integers(0, 256, (10, side, side))
    suffix = ".gz" if gz else ""
    for split, n in (("train", n_train), ("t10k", n_test)):
        labels = np.arange(n) % 10
        images = np.clip(protos[labels] + rng.normal(0, 40, (n, side, side)), 0, 255).astype(np.uint8)
        write_idx(directory / f"{split}-images-idx3-ubyte{suffix}", images)
        write_idx(directory / f"{split}-labels-idx1-ubyte{suffix}", labels)
    return directory


@pytest.fixture(scope="session")
def fake_mnist(tmp_path_factory):
    return make_fake_mnist(tmp_path_factory.mktemp("mnist"))


def pytest_terminal_summary(terminalreporter):
    import sys
    lines = getattr(sys.modules.get("test_acceptance"), "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
