import numpy as np
import pytest

from nhdms.analysis import edge_field, l2_norm
from nhdms.homog import HomogenizedTensors
from nhdms.macro import (IncidentWave, edge_midpoints, solve_extended, solve_homogenized_coupled,
                         solve_homogenized_maxwell, solve_original)
from nhdms.mesh import build_box_mesh, mesh_array
from nhdms.model import METAL, VACUUM, MaterialSet, build_coefficient_field, nondimensionalize


def _interp(mesh, wave, k):
    e = mesh.edges
    a, b = mesh.points[e[:, 0]], mesh.points[e[:, 1]]
    # the tangential integral of the plane wave along a straight edge is exact
    t = b - a
    d = np.asarray(wave.direction)
    s = k * (t @ d)
    mid = wave.field(0.5 * (a + b), k) @ np.asarray(wave.polarization)
    fac = np.where(np.abs(s) > 1e-12, np.sinc(s / (2 * np.pi)), 1.0)
    return mid * fac * (t @ np.asarray(wave.polarization))


@pytest.fixture(scope="module")
def literal():
    return nondimensionalize(MaterialSet(), wave_factor=1.0)


def _vacuum(res):
    m = build_box_mesh([0, 0, 0], [1, 1, 1], res)
    return m.with_tags(np.full(m.n_tets, VACUUM))


def test_vacuum_box_reproduces_incident_wave(literal):
    wave = IncidentWave(2.0)
    errs = []
    for res in (4, 8):
        m = _vacuum(res)
        sol = solve_original(m, build_coefficient_field(m, literal), wave, literal)
        ref = _interp(m, wave, literal.wavenumber(wave.omega))
        errs.append(l2_norm(edge_field(m, sol.E - ref)) / l2_norm(edge_field(m, ref)))
        assert sol.J is not None and not sol.J.any()
        assert sol.stats["residual"] < 1e-12
    assert errs[1] < 0.1
    assert errs[1] < errs[0]


def test_solution_is_linear_in_amplitude(literal):
    m = _vacuum(3)
    coeffs = build_coefficient_field(m, literal)
    a = solve_original(m, coeffs, IncidentWave(1.5), literal)
    b = solve_original(m, coeffs, IncidentWave(1.5, amplitude=np.exp(0.7j)), literal)
    assert np.allclose(b.E, np.exp(0.7j) * a.E, rtol=1e-10, atol=1e-13)


def test_incident_wave_validation():
    with pytest.raises(ValueError):
        IncidentWave(1.0, direction=(0, 2, 0))
    with pytest.raises(ValueError):
        IncidentWave(1.0, direction=(0, 1, 0), polarization=(0, 1, 0))
    w = IncidentWave(1.0)
    x = np.zeros((1, 3))
    assert np.allclose(w.curl(x, 1.0), [[0, 0, -1j]])


def test_original_current_lives_in_metal(small_geom, mats51):
    m = mesh_array(small_geom, 4)
    wave = IncidentWave(0.75)
    sol = solve_original(m, build_coefficient_field(m, mats51), wave, mats51)
    metal_faces = np.unique(m.tet_faces[m.region == METAL])
    off = np.setdiff1d(np.arange(m.n_faces), metal_faces)
    assert np.abs(sol.J).max() > 0
    assert not sol.J[off].any()
    # no normal current through the metal boundary
    rim = np.setdiff1d(metal_faces, m.interior_faces(m.region == METAL))
    assert rim.size and not sol.J[rim].any()
    assert sol.stats["dofs"] == m.n_edges + sol.stats["dofs_J"]


def test_extension_needs_positive_parameter(small_geom, mats51):
    m = mesh_array(small_geom, 4)
    with pytest.raises(ValueError):
        solve_extended(m, build_coefficient_field(m, mats51), IncidentWave(0.75), mats51)
    with pytest.raises(ValueError):
        solve_extended(m, build_coefficient_field(m, mats51, lam=0.0), IncidentWave(0.75), mats51)


def test_homogenized_identity_tensors_match_vacuum(literal):
    m = build_box_mesh([0, 0, 0], [1, 1, 1], 3)
    m = m.with_tags(np.where(m.barycenters[:, 0] < 0.5, 1, VACUUM))
    t = HomogenizedTensors(mu_hat=np.eye(3), eps_hat=np.eye(3))
    wave = IncidentWave(1.0)
    a = solve_homogenized_maxwell(m, t, wave, literal)
    vac = m.with_tags(np.full(m.n_tets, VACUUM))
    b = solve_original(vac, build_coefficient_field(vac, literal), wave, literal)
    assert np.allclose(a.E, b.E, atol=1e-12)
    with pytest.raises(ValueError):
        solve_homogenized_coupled(m, t, wave, literal)


def test_edge_midpoints_shape():
    m = build_box_mesh([0, 0, 0], [1, 1, 1], 1)
    assert edge_midpoints(m).shape == (m.n_edges, 3)
