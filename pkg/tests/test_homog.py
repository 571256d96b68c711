import numpy as np
import pytest

from nhdms.homog import (HomogenizedTensors, alpha_of, cell_average, homogenize, solve_cells,
                         solve_curl_cell)
from nhdms.mesh import ArrayGeometry, Sphere, build_box_mesh, build_periodic_pairs, cell_mesh
from nhdms.model import HOST, METAL

SPHERE = ArrayGeometry(inclusion=Sphere((0.5, 0.5, 0.5), 0.4), eta=5.0)


def _laminate(res, a, b):
    m = build_box_mesh([0, 0, 0], [1, 1, 1], res)
    metal = m.barycenters[:, 0] < 0.5
    return m.with_tags(np.where(metal, METAL, HOST)), np.where(metal, a, b)


def test_homogeneous_cell_is_exact(mats51):
    m = build_box_mesh([0, 0, 0], [1, 1, 1], 3)
    coef = np.full(m.n_tets, 2.5)
    cells = solve_cells(m, coef, coef, gstar=np.full(m.n_tets, 1.0 + 0.2j))
    assert np.abs(cells.grad_theta_mu).max() < 1e-12
    assert np.abs(cells.curl_Theta).max() < 1e-12


@pytest.mark.parametrize("res", [4, 8])
def test_laminate_bounds_are_attained(res):
    m, coef = _laminate(res, 1.0, 9.0)
    cells = solve_cells(m, coef, coef)
    hat = cell_average(m, coef[:, None, None] * (np.eye(3) + cells.grad_theta_eps))
    assert np.allclose(hat, np.diag([1.8, 5.0, 5.0]), atol=1e-10)


def test_laminate_curl_cell_is_dual_to_scalar():
    # I + curl Theta is divergence free: its normal part is continuous across
    # the layers (arithmetic mean) and the tangential part of g (I + curl
    # Theta) is continuous (harmonic mean)
    m, coef = _laminate(4, 1.0, 9.0)
    maps = build_periodic_pairs(m)
    g = coef * (1 + 0.5j)
    _, curl, diag = solve_curl_cell(m, maps, g)
    hat = cell_average(m, g[:, None, None] * (np.eye(3) + curl))
    assert np.allclose(hat, np.diag([5.0, 1.8, 1.8]) * (1 + 0.5j), atol=1e-10)
    assert diag["divergence_residual"] < 1e-12


def test_sphere_cell_within_voigt_reuss(mats51):
    cells, t = homogenize(SPHERE, mats51, 6)
    eps = np.where(cells.mesh.region == METAL, mats51.eps_metal, mats51.eps_host)
    lo = 1.0 / cell_average(cells.mesh, 1.0 / eps)
    hi = cell_average(cells.mesh, eps)
    ev = np.linalg.eigvalsh(t.eps_hat)
    assert lo <= ev.min() and ev.max() <= hi
    assert np.allclose(t.eps_hat, t.eps_hat.T, atol=1e-12)
    # the triangulation is invariant under axis permutations
    assert np.ptp(np.diag(t.eps_hat)) < 1e-10
    assert np.allclose(t.mu_hat, np.eye(3), atol=1e-14)


def _p1_oracle(mesh, coef):
    """Dense periodic P1 corrector solve written independently of the package."""
    maps = build_periodic_pairs(mesh)
    master = maps.node_master
    reps, dof = np.unique(master, return_inverse=True)
    n = reps.size
    kmat = np.zeros((n, n))
    loads = np.zeros((n, 3))
    hat = np.zeros((3, 3))
    grads_all = []
    for t, tet in enumerate(mesh.tets):
        p = mesh.points[tet]
        g = np.linalg.inv(np.column_stack([np.ones(4), p]))[1:].T
        vol = abs(np.linalg.det(p[1:] - p[0])) / 6
        idx = dof[tet]
        kmat[np.ix_(idx, idx)] += coef[t] * vol * g @ g.T
        np.add.at(loads, idx, -coef[t] * vol * g)
        grads_all.append((g, vol, idx))
    # zero mean through a bordered system
    big = np.zeros((n + 1, n + 1))
    big[:n, :n] = kmat
    big[:n, n] = big[n, :n] = 1.0
    theta = np.linalg.solve(big, np.vstack([loads, np.zeros((1, 3))]))[:n]
    for t, (g, vol, idx) in enumerate(grads_all):
        hat += coef[t] * vol * (np.eye(3) + g.T @ theta[idx])
    return hat / sum(v for _, v, _ in grads_all)


def test_scalar_cell_against_dense_oracle():
    m = cell_mesh(SPHERE, 3)
    coef = np.where(m.region == METAL, 9.5, 3.9)
    cells = solve_cells(m, np.ones(m.n_tets), coef)
    hat = cell_average(m, coef[:, None, None] * (np.eye(3) + cells.grad_theta_eps))
    assert np.allclose(hat, _p1_oracle(m, coef), rtol=1e-12, atol=1e-12)


def test_curl_correctors_are_periodic_and_divergence_free(mats51):
    cells, t = homogenize(SPHERE, mats51, 4, omega=0.75, lam=1000 * mats51.gamma)
    em = cells.maps.edge_master
    assert np.array_equal(cells.Theta_gamma[:, em], cells.Theta_gamma)
    assert cells.diagnostics["curl"]["divergence_residual"] < 1e-10
    assert t.alpha > 0


def test_alpha_increases_with_extension(mats51):
    alphas = [homogenize(SPHERE, mats51, 4, omega=0.75, lam=r * mats51.gamma)[1].alpha
              for r in (10, 100, 1000)]
    assert alphas[0] < alphas[1] < alphas[2]


def test_alpha_of_simple_tensor():
    a, raw = alpha_of(np.diag([1 + 2j, 1 + 3j, 1 + 5j]))
    assert (a, raw) == (2.0, 2.0)


def test_json_round_trip(tmp_path, mats51):
    _, t = homogenize(SPHERE, mats51, 3, omega=0.48, lam=10 * mats51.gamma)
    t.to_json(tmp_path / "t.json")
    u = HomogenizedTensors.from_json(tmp_path / "t.json")
    assert np.array_equal(u.eps_hat, t.eps_hat)
    assert np.array_equal(u.gamma_star_hat, t.gamma_star_hat)
    assert u.beta_star_hat == t.beta_star_hat and u.alpha == t.alpha


def test_gamma_cell_needs_positive_extension(mats51):
    with pytest.raises(ValueError):
        homogenize(SPHERE, mats51, 3, omega=0.5, lam=0.0)
