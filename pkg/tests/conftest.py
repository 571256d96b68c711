import numpy as np
import pytest

from nhdms import _backend
from nhdms.mesh import ArrayGeometry, Sphere, mesh_array
from nhdms.model import nondimensionalize, preset_materials

BACKENDS = ["numpy"] + (["numba"] if _backend.HAVE_NUMBA else [])

# (criterion, passed, detail) lines printed at the end of the session
ACCEPTANCE_LINES = []


@pytest.fixture(params=BACKENDS)
def backend(request):
    old = _backend.active_backend()
    _backend.set_backend(request.param)
    yield request.param
    _backend.set_backend(old)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def mats51():
    return nondimensionalize(preset_materials("case_5_1"))


@pytest.fixture(scope="session")
def mini_geom():
    """2x2x2 spheres of radius 2 nm, 1 nm gaps, 2.5 nm vacuum padding."""
    return ArrayGeometry(inclusion=Sphere((0.5, 0.5, 0.5), 0.4), counts=(2, 2, 2), eta=5.0, padding=2.5)


@pytest.fixture(scope="session")
def mini_mesh(mini_geom):
    return mesh_array(mini_geom, 6)


@pytest.fixture(scope="session")
def small_geom():
    """Cheap 2x1x1 array for pipeline tests."""
    return ArrayGeometry(inclusion=Sphere((0.5, 0.5, 0.5), 0.4), counts=(2, 1, 1), eta=4.0, padding=1.0)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n, ok, detail in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
