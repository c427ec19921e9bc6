import numpy as np
import pytest

from hmrf_fdr.lattice import build_lattice


@pytest.fixture
def box221():
    return build_lattice((2, 2, 1), np.ones((2, 2, 1), dtype=bool))


@pytest.fixture
def box223():
    return build_lattice((2, 2, 3), np.ones((2, 2, 3), dtype=bool))


def full_box(nx, ny, nz, labels=None):
    return build_lattice((nx, ny, nz), np.ones((nx, ny, nz), dtype=bool), labels)


def random_masked_lattice(rng, dims=(3, 3, 2), p_keep=0.7):
    """Random connected-or-not masked lattice with at least one voxel."""
    while True:
        mask = rng.random(dims) < p_keep
        if mask.any():
            return build_lattice(dims, mask)
