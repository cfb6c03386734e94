import numpy as np
import pytest
import torch


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _seed_torch():
    torch.manual_seed(0)


def t64(a):
    return torch.as_tensor(np.asarray(a), dtype=torch.float64)


def naive_dft(z: np.ndarray) -> np.ndarray:
    """Textbook double loop over (s, t), one channel column at a time."""
    T = z.shape[0]
    out = np.zeros(z.shape, dtype=complex)
    for s in range(T):
        for t in range(T):
            out[s] += z[t] * np.exp(-2j * np.pi * s * t / T)
    return out


def naive_circular_convolution(k: np.ndarray, z: np.ndarray) -> np.ndarray:
    T = z.shape[0]
    out = np.zeros_like(z)
    for t in range(T):
        for tau in range(T):
            out[t] += k[tau] * z[(t - tau) % T]
    return out


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
