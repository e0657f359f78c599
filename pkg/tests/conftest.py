import numpy as np
import pytest

from cgfb import GhmmParams, benchmark_model


def random_spd(rng: np.random.Generator, d: int, spread: float = 1.0) -> np.ndarray:
    """Well-conditioned random SPD matrix."""
    w = rng.normal(size=(d, d)) * spread
    return w @ w.T + (0.2 + rng.uniform()) * spread * np.eye(d)


def random_model(rng: np.random.Generator, d_x: int | None = None,
                 d_o: int | None = None) -> GhmmParams:
    """Random stable model with moderate conditioning."""
    d_x = int(rng.integers(1, 4)) if d_x is None else d_x
    d_o = int(rng.integers(1, 3)) if d_o is None else d_o
    A = rng.normal(size=(d_x, d_x))
    radius = np.abs(np.linalg.eigvals(A)).max()
    A *= (0.6 + 0.35 * rng.uniform()) / max(radius, 1e-9)
    return GhmmParams(
        A=A,
        Q=random_spd(rng, d_x, 0.7),
        C=rng.normal(size=(d_o, d_x)),
        R=random_spd(rng, d_o, 0.7),
        pi=rng.normal(size=d_x),
        Pi=random_spd(rng, d_x),
    )


@pytest.fixture
def bench() -> GhmmParams:
    return benchmark_model()


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240817)
