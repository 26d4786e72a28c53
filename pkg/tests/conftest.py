import numpy as np
import pytest

from poroplate.geometry import CellGeometry, build_cell_mesh, build_micro_mesh
from poroplate.material import BiotParams, HookeTensor, LoadSpec, Poly2T, isotropic


@pytest.fixture(scope="session")
def default_geom():
    return CellGeometry()


@pytest.fixture(scope="session")
def two_phase_hooke():
    return HookeTensor(fiber=isotropic(10.0, 0.3), gel=isotropic(1.0, 0.35))


@pytest.fixture(scope="session")
def homogeneous_hooke():
    return HookeTensor(fiber=isotropic(1.0, 0.3), gel=isotropic(1.0, 0.3))


@pytest.fixture(scope="session")
def biot():
    return BiotParams(c=1.0, alpha=1.0, K=np.eye(3))


@pytest.fixture(scope="session")
def cell_mesh4(default_geom):
    return build_cell_mesh(default_geom, 4)


@pytest.fixture(scope="session")
def micro_mesh4(default_geom):
    return build_micro_mesh(default_geom, 0.25, ((0.0, 1.0), (0.0, 1.0)), 4)


@pytest.fixture(scope="session")
def ramp_loads():
    return LoadSpec(f1=Poly2T([(0.5, 0, 0, 1)]), f3=Poly2T([(1.0, 0, 0, 1)]),
                    h=Poly2T([(1.0, 0, 0, 1)]))
