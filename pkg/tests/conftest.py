# ABOUTME: Shared pytest fixtures for the cellgnn test suite.
# ABOUTME: Provides the default catalog, reference corners, oracle constants, and small oracle libraries.

import pytest

from cellgnn.libgen import OracleSource, build_library
from cellgnn.netlist import build_default_catalog
from cellgnn.oracle import SurrogateParams, default_params
from cellgnn.technology import Corner, Technology, system_eval_corner


@pytest.fixture(scope="session")
def catalog():
    """The 33-cell silicon45 catalog."""
    return build_default_catalog(Technology.SILICON45)


@pytest.fixture(scope="session")
def params() -> SurrogateParams:
    return default_params(Technology.SILICON45)


@pytest.fixture
def room_corner() -> Corner:
    """Silicon corner at 300 K so the temperature factor is exactly one."""
    return Corner(Technology.SILICON45, 1.0, 0.3, 26.85)


@pytest.fixture(scope="session")
def eval_corner() -> Corner:
    return system_eval_corner(Technology.SILICON45)


@pytest.fixture(scope="session")
def small_library(catalog, eval_corner):
    """Oracle library of the whole catalog on a 3x3 grid."""
    slews = [5.0, 100.0, 400.0]
    loads = [0.25, 4.0, 25.0]
    return build_library(OracleSource(), catalog, eval_corner, slews, loads, name="small")
