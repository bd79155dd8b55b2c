import numpy as np
import pytest

from crbc import (ensure_odd_boundary, refine_uniform, regular_polygon_corners,
                  triangulate_polygon_fan, triangulate_unit_square)


@pytest.fixture(scope="session")
def square4():
    return triangulate_unit_square(4)


@pytest.fixture(scope="session")
def square4_odd():
    return ensure_odd_boundary(triangulate_unit_square(4))


@pytest.fixture(scope="session")
def pentagon():
    return triangulate_polygon_fan(regular_polygon_corners(5))


@pytest.fixture(scope="session")
def pentagon_fine():
    mesh = triangulate_polygon_fan(regular_polygon_corners(5))
    return ensure_odd_boundary(refine_uniform(refine_uniform(mesh)))


@pytest.fixture(scope="session")
def small_odd_meshes():
    """A spread of valid odd-boundary meshes used by cross-cutting tests."""
    return [
        triangulate_polygon_fan(np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])),
        triangulate_polygon_fan(regular_polygon_corners(5)),
        triangulate_polygon_fan(regular_polygon_corners(7)),
        ensure_odd_boundary(triangulate_unit_square(1)),
        ensure_odd_boundary(triangulate_unit_square(2)),
    ]
