import meshio
import numpy as np
import pytest

from nhdms.io import read_dofs, read_vtk, write_dofs, write_vtk
from nhdms.mesh import build_box_mesh


@pytest.fixture
def cube():
    m = build_box_mesh([0, 0, 0], [1, 1, 1], 1)
    return m.with_tags(np.arange(6) % 3)


def test_vtk_round_trip_with_meshio(tmp_path, cube, rng):
    e = rng.normal(size=(6, 3)) + 1j * rng.normal(size=(6, 3))
    s = rng.normal(size=6)
    path = write_vtk(tmp_path / "c.vtk", cube, {"E": e}, {"s": s})
    got = meshio.read(path)
    assert np.allclose(got.points, cube.points)
    assert np.array_equal(got.cells_dict["tetra"], cube.tets)
    assert np.allclose(got.cell_data["REAL_E"][0], e.real, rtol=1e-9)
    assert np.allclose(got.cell_data["IMAG_E"][0], e.imag, rtol=1e-9)
    assert np.array_equal(got.cell_data["region"][0].ravel(), cube.region)
    own = read_vtk(path)
    assert np.array_equal(own["tets"], cube.tets)
    assert np.allclose(own["cell_data"]["s"], s, rtol=1e-9)
    assert np.all(own["cell_types"] == 10)


def test_vtk_rejects_wrong_shape(tmp_path, cube):
    with pytest.raises(ValueError):
        write_vtk(tmp_path / "c.vtk", cube, {"E": np.zeros((5, 3))})
    with pytest.raises(OSError, match="cannot write"):
        write_vtk(tmp_path / "missing" / "c.vtk", cube)


@pytest.mark.parametrize("dtype", [float, complex])
def test_dof_round_trip(tmp_path, rng, dtype):
    x = rng.normal(size=17).astype(dtype)
    if dtype is complex:
        x += 1j * rng.normal(size=17)
    write_dofs(tmp_path / "x.dof", x, "edge", "abc", {"omega": 0.75})
    header, y = read_dofs(tmp_path / "x.dof")
    assert np.array_equal(x, y)
    assert header["kind"] == "edge" and header["mesh_hash"] == "abc" and header["omega"] == 0.75
    assert header["complex"] == (dtype is complex)


def test_dof_container_validation(tmp_path):
    (tmp_path / "bad.dof").write_bytes(b"garbage")
    with pytest.raises(ValueError):
        read_dofs(tmp_path / "bad.dof")
    with pytest.raises(ValueError):
        write_dofs(tmp_path / "x.dof", np.zeros((2, 2)), "edge", "h")
    write_dofs(tmp_path / "t.dof", np.zeros(4), "face", "h")
    raw = (tmp_path / "t.dof").read_bytes()
    (tmp_path / "t.dof").write_bytes(raw[:-8])
    with pytest.raises(ValueError, match="expected 4"):
        read_dofs(tmp_path / "t.dof")
