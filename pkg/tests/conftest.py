import pytest

from mfelab.operators import assemble
from mfelab.surface import build_flat_torus, build_unit_volume_sphere


@pytest.fixture(scope="session")
def ico():
    return build_unit_volume_sphere(0)


@pytest.fixture(scope="session")
def sphere3():
    return build_unit_volume_sphere(3)


@pytest.fixture(scope="session")
def sphere4():
    return build_unit_volume_sphere(4)


@pytest.fixture(scope="session")
def ops3(sphere3):
    return assemble(sphere3)


@pytest.fixture(scope="session")
def ops4(sphere4):
    return assemble(sphere4)


@pytest.fixture(scope="session")
def torus16():
    return build_flat_torus(16, 16)


@pytest.fixture(scope="session")
def torus_ops16(torus16):
    return assemble(torus16)


@pytest.fixture(scope="session")
def torus_ops32():
    return assemble(build_flat_torus(32, 32))
