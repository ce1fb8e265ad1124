import pathlib

import numpy as np
import pytest

from stcos import geom

TEST_DIR = "testdata"


@pytest.fixture
def testdata_dir():
    return pathlib.Path(__file__).parent / TEST_DIR


def _square(id, x0, y0, size):
    return geom.AreaUnit.from_rings(
        id,
        [[(x0, y0), (x0 + size, y0), (x0 + size, y0 + size), (x0, y0 + size), (x0, y0)]],
    )


@pytest.fixture
def make_grid():
    """Returns a factory for an n x n grid of square cells, row-major from the origin."""

    def factory(n, size=1.0, label="grid", x0=0.0, y0=0.0):
        return geom.Domain(
            [
                _square(f"{label}{i * n + j}", x0 + j * size, y0 + i * size, size)
                for i in range(n)
                for j in range(n)
            ],
            label=label,
        )

    return factory


@pytest.fixture
def rng():
    return np.random.default_rng(20240101)
