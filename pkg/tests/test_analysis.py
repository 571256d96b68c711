import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nhdms.analysis import (AffineField, cost_report, curl_norm, div_norm, edge_field,
                            extension_error, face_field, fit_slope, l2_norm, matrix_norm_hcurl_t,
                            norm_hcurl_t, trace_norm, transfer, write_csv, zero_field)
from nhdms.macro import FieldSolution
from nhdms.mesh import build_box_mesh

CUBE = build_box_mesh([0, 0, 0], [1, 1, 1], 2)


def _linear(mesh, a, b):
    """Field ``a + b @ x`` in affine form."""
    nt = mesh.n_tets
    value = a + mesh.barycenters @ np.asarray(b).T
    return AffineField(mesh, value.astype(complex), np.broadcast_to(b, (nt, 3, 3)).astype(complex))


def test_norms_of_polynomial_fields():
    assert l2_norm(_linear(CUBE, np.array([1.0, 2.0, 2.0]), np.zeros((3, 3)))) == pytest.approx(3.0)
    # F = x: |F|^2 integrates to 1, curl vanishes, div = 3
    f = _linear(CUBE, np.zeros(3), np.eye(3))
    assert l2_norm(f) == pytest.approx(1.0, rel=1e-13)
    assert curl_norm(f) < 1e-14 and div_norm(f) == pytest.approx(3.0)
    # F = (-y, x, 0): curl = (0, 0, 2)
    rot = _linear(CUBE, np.zeros(3), np.array([[0, -1, 0], [1, 0, 0], [0, 0, 0]]))
    assert curl_norm(rot) == pytest.approx(2.0)
    # tangential trace of e1 has unit length on four faces
    assert trace_norm(_linear(CUBE, np.array([1.0, 0, 0]), np.zeros((3, 3)))) == pytest.approx(2.0)


def test_trace_norm_of_linear_field():
    # F = (0, 0, x) on the face x = 1 is tangential with |F| = 1; on x = 0 it vanishes;
    # on y faces it is tangential with int x^2 = 1/3; on z faces it is normal
    f = _linear(CUBE, np.zeros(3), np.array([[0, 0, 0], [0, 0, 0], [1, 0, 0]]))
    assert trace_norm(f) == pytest.approx(np.sqrt(1 + 2 / 3), rel=1e-13)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.complex_numbers(max_magnitude=10, allow_nan=False,
                                                         allow_infinity=False))
def test_norm_axioms(seed, c):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=CUBE.n_edges) + 1j * rng.normal(size=CUBE.n_edges)
    y = rng.normal(size=CUBE.n_edges)
    fx, fy = edge_field(CUBE, x), edge_field(CUBE, y)
    for norm in (l2_norm, curl_norm, trace_norm):
        assert norm(fx + fy) <= norm(fx) + norm(fy) + 1e-12
        assert norm(c * fx) == pytest.approx(abs(c) * norm(fx), rel=1e-10, abs=1e-12)


def test_affine_norm_matches_matrix_norm(rng):
    x = rng.normal(size=CUBE.n_edges) + 1j * rng.normal(size=CUBE.n_edges)
    assert norm_hcurl_t(CUBE, x) == pytest.approx(matrix_norm_hcurl_t(CUBE, x), rel=1e-12)


def test_face_field_norm_matches_mass(rng):
    from nhdms.fem.assembly import face_mass_matrix
    x = rng.normal(size=CUBE.n_faces)
    assert l2_norm(face_field(CUBE, x)) ** 2 == pytest.approx(x @ face_mass_matrix(CUBE) @ x, rel=1e-12)


def test_transfer_to_nested_mesh_is_exact(rng):
    fine = build_box_mesh([0, 0, 0], [1, 1, 1], 4)
    x = rng.normal(size=CUBE.n_edges)
    coarse = edge_field(CUBE, x)
    moved = transfer(coarse, fine)
    assert l2_norm(moved) == pytest.approx(l2_norm(coarse), rel=1e-12)
    assert curl_norm(moved) == pytest.approx(curl_norm(coarse), rel=1e-12)
    assert l2_norm(zero_field(fine)) == 0.0


def test_fit_slope():
    lams = np.array([10.0, 100.0, 1000.0, 10000.0])
    assert fit_slope(lams, 3.0 / lams) == pytest.approx(-1.0)
    errs = np.array([5.0, 2.0, 0.1, 0.01])
    assert fit_slope(lams, errs) == pytest.approx(-1.0)
    assert fit_slope(lams, errs, top_decade=False) == pytest.approx(np.polyfit([1, 2, 3, 4], np.log10(errs), 1)[0])
    with pytest.raises(ValueError):
        fit_slope(lams[:2], errs[:2])
    with pytest.raises(ValueError):
        fit_slope(lams, -errs)


def test_extension_error_vanishes_for_identical_fields(rng):
    e = rng.normal(size=CUBE.n_edges) + 0j
    j = rng.normal(size=CUBE.n_faces) + 0j
    a = FieldSolution(CUBE, e, j, np.ones(CUBE.n_tets, bool))
    assert extension_error(a, a) == 0.0
    b = FieldSolution(CUBE, e, 2 * j, np.ones(CUBE.n_tets, bool))
    assert extension_error(a, b) > 0


def test_cost_report(tmp_path):
    rep = cost_report({"cell": {"wall_time": 1.0, "dofs": 10}, "local": {"wall_time": 2.0}})
    assert rep["multiscale_total"] == 3.0 and "ratio" not in rep
    rep = cost_report({"cell": {"wall_time": 1.0}, "reference": {"wall_time": 4.0, "elements": 7}})
    assert rep["ratio"] == 0.25 and rep["stages"]["reference"]["elements"] == 7
    write_csv(tmp_path / "r.csv", [{"a": 1}, {"a": 2, "b": 3}])
    assert (tmp_path / "r.csv").read_text().splitlines() == ["a,b", "1,", "2,3"]
