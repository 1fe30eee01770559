import numpy as np
import pytest

from advmem.numcore import RngStream
from advmem.model import init_encoder, init_head, init_projections
from advmem.membank import MemoryBank


@pytest.fixture
def rng():
    return RngStream(2024)


def random_prob_vector(rng: RngStream, n: int) -> np.ndarray:
    u = rng.uniform(n) + 1e-3
    return u / u.sum()


def small_instance(seed: int, d_x=5, d_z=4, d_h=3, n_classes=3, n_mem=5, hidden=(6,)):
    """Random small model + bank + instance, the standard gradient-check size."""
    rng = RngStream(seed)
    enc = init_encoder([d_x, *hidden, d_z], rng)
    head = init_head(n_classes, 2 * d_z, rng)
    proj = init_projections(d_h, d_z, rng)
    feats = rng.normal(n_mem * d_z).reshape(n_mem, d_z)
    labels = np.stack([random_prob_vector(rng, n_classes) for _ in range(n_mem)])
    bank = MemoryBank(features=feats, labels=labels)
    x = rng.normal(d_x)
    y = np.zeros(n_classes)
    y[rng.index_below(n_classes)] = 1.0
    return enc, head, proj, bank, x, y
