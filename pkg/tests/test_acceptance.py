"""Acceptance criteria 1-9, one test each.

Every test records a ``criterion n: PASS/FAIL`` line (printed in the
terminal summary) before asserting, so failures still report their numbers.
"""

import time

import numpy as np
import pytest
import scipy.sparse as sp
from conftest import ACCEPTANCE_LINES

from nhdms import linsolve
from nhdms.analysis import (alpha_study, edge_field, extension_convergence_study, norm_hcurl_t,
                            transfer)
from nhdms.fem import assembly as A
from nhdms.homog import cell_average, homogenize, solve_cells
from nhdms.macro import IncidentWave, edge_midpoints, face_centroids, solve_original
from nhdms.mesh import ArrayGeometry, Sphere, build_box_mesh, extract_particle_submesh, mesh_array
from nhdms.model import (METAL, VACUUM, MaterialSet, build_coefficient_field, nondimensionalize,
                         preset_materials)
from nhdms.multiscale import assemble_local, local_particle_solve_all, modified_multiscale, multiscale_errors

pytestmark = pytest.mark.slow

OMEGA = 0.75
LAMS_OVER_GAMMA = (10.0, 100.0, 1000.0, 10000.0)
SPHERE = ArrayGeometry(inclusion=Sphere((0.5, 0.5, 0.5), 0.4), eta=5.0)


def report(n, ok, detail):
    ACCEPTANCE_LINES.append((n, bool(ok), detail))
    print(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
    return ok


@pytest.fixture(scope="session")
def reference(mini_mesh, mats51):
    """Direct solve of the mini silica-host array, shared by criteria 4, 7 and 9."""
    return solve_original(mini_mesh, build_coefficient_field(mini_mesh, mats51), IncidentWave(OMEGA), mats51)


def test_criterion_1_homogeneous_cell():
    t0 = time.perf_counter()
    mats = nondimensionalize(preset_materials("case_5_1", eps_host=9.5, mu_metal=2.0, mu_host=2.0))
    worst = 0.0
    for res in (2, 5, 8):
        _, t = homogenize(SPHERE, mats, res)
        worst = max(worst, np.abs(t.mu_hat - 2.0 * np.eye(3)).max(), np.abs(t.eps_hat - 9.5 * np.eye(3)).max())
    dt = time.perf_counter() - t0
    ok = worst <= 1e-10 and dt < 10
    assert report(1, ok, f"max deviation {worst:.2e} over resolutions 2, 5, 8; {dt:.1f} s")


def _laminate_error(res, ea, eb):
    m = build_box_mesh([0, 0, 0], [1, 1, 1], res)
    coef = np.where(m.barycenters[:, 0] < 0.5, ea, eb)
    cells = solve_cells(m, np.ones(m.n_tets), coef)
    hat = cell_average(m, coef[:, None, None] * (np.eye(3) + cells.grad_theta_eps))
    harm, arith = 2 * ea * eb / (ea + eb), 0.5 * (ea + eb)
    return max(abs(hat[0, 0] - harm) / harm, abs(hat[1, 1] - arith) / arith,
               abs(hat[2, 2] - arith) / arith), hat


def test_criterion_2_laminate():
    t0 = time.perf_counter()
    ea, eb = 3.9, 9.5
    e8, _ = _laminate_error(8, ea, eb)
    e16, hat = _laminate_error(16, ea, eb)
    dt = time.perf_counter() - t0
    # the interface is a grid plane, so both errors sit at rounding level;
    # refinement may not increase them beyond that level
    ok = e16 <= 0.02 and e16 <= e8 + 1e-12 and dt < 120
    assert report(2, ok, f"eps11 {hat[0, 0]:.6f} eps22 {hat[1, 1]:.6f}; rel err 8^3 {e8:.1e}, "
                         f"16^3 {e16:.1e}; {dt:.1f} s")


def test_criterion_3_voigt_reuss(mats51):
    t0 = time.perf_counter()
    cells, t = homogenize(SPHERE, mats51, 8)
    eps = np.where(cells.mesh.region == METAL, mats51.eps_metal, mats51.eps_host)
    lo, hi = 1.0 / cell_average(cells.mesh, 1.0 / eps), cell_average(cells.mesh, eps)
    ev = np.linalg.eigvalsh(0.5 * (t.eps_hat + t.eps_hat.T))
    dt = time.perf_counter() - t0
    ok = ev.min() >= lo - 1e-9 and ev.max() <= hi + 1e-9 and dt < 120
    assert report(3, ok, f"eigenvalues {ev.min():.5f}..{ev.max():.5f} in [{lo:.5f}, {hi:.5f}]; {dt:.1f} s")


def test_criterion_4_extension_convergence(mini_mesh, mats51, reference):
    t0 = time.perf_counter()
    lams = [r * mats51.gamma for r in LAMS_OVER_GAMMA]
    rows, slope = extension_convergence_study(mini_mesh, mats51, IncidentWave(OMEGA), lams, reference)
    dt = time.perf_counter() - t0
    errs = [r["err"] for r in rows]
    dofs = max(r["dofs"] for r in rows)
    decreasing = all(b < a for a, b in zip(errs, errs[1:]))
    ok = decreasing and slope <= -0.5 and dofs <= 80000 and dt < 1800
    assert report(4, ok, f"err {', '.join(f'{e:.4g}' for e in errs)}; slope {slope:.3f}; "
                         f"{dofs} DOFs; {dt:.0f} s")


def test_criterion_5_alpha_growth(mini_geom, mats51):
    t0 = time.perf_counter()
    lams = [r * mats51.gamma for r in LAMS_OVER_GAMMA]
    mesh = mesh_array(mini_geom, 6, inclusions=False)
    rows = alpha_study(mini_geom, mats51, IncidentWave(OMEGA), lams, 6, mesh)
    dt = time.perf_counter() - t0
    alpha = [r["alpha"] for r in rows]
    ja = [r["J0_l2_alpha"] for r in rows]
    ed = [r["E_diff_hcurl"] for r in rows]
    ratio = max(ja) / min(ja)
    ok = (all(b > a for a, b in zip(alpha, alpha[1:])) and ratio <= 10
          and all(b < a for a, b in zip(ed, ed[1:])) and dt < 1200)
    assert report(5, ok, f"alpha {', '.join(f'{a:.4g}' for a in alpha)}; |J0|*alpha max/min {ratio:.2f}; "
                         f"|E0~ - E0| {', '.join(f'{e:.3g}' for e in ed)}; {dt:.0f} s")


def _plane_wave_field(mesh, mats):
    wave = IncidentWave(OMEGA)
    k = mats.wavenumber(OMEGA)
    e = mesh.edges
    x = wave.field(edge_midpoints(mesh), k) @ np.asarray(wave.polarization)
    dofs = x * ((mesh.points[e[:, 1]] - mesh.points[e[:, 0]]) @ np.asarray(wave.polarization))
    return edge_field(mesh, dofs)


def test_criterion_6_lu_reuse(mini_geom, mats51):
    t_all = time.perf_counter()
    mesh = mesh_array(mini_geom, 12, region_only=True)
    data = _plane_wave_field(mesh, mats51)
    # equal matrices, checked entrywise
    probs = [assemble_local(extract_particle_submesh(mesh, k, mini_geom), mats51, OMEGA)
             for k in range(mini_geom.n_particles)]
    reduced = [p.reduced for p in probs]
    fps = {linsolve.fingerprint(r) for r in reduced}
    equal = all((r != reduced[0]).nnz == 0 for r in reduced[1:])
    # one factorization and eight solves
    cache = linsolve.FactorizationCache()
    t0 = time.perf_counter()
    sols, stats = local_particle_solve_all(data, mini_geom, mats51, OMEGA, cache)
    t_reuse = time.perf_counter() - t0
    # eight independent factorize + solve on the same systems
    sub0 = sols[0].sub
    coords = np.vstack([edge_midpoints(sub0.mesh), face_centroids(sub0.mesh)])[probs[0].free]
    t0 = time.perf_counter()
    for p, s in zip(probs, sols):
        x0 = np.zeros(p.n_edges, complex)
        x0[s.sub.boundary_edges] = s.E[s.sub.boundary_edges]
        x = linsolve.factorize(p.reduced, coords).solve(p.lift(x0))
    t_indep = time.perf_counter() - t0
    assert np.allclose(x, np.concatenate([s.E_tilde, s.J])[p.free], atol=1e-10 * np.abs(x).max())
    factor = t_indep / t_reuse
    dt = time.perf_counter() - t_all
    ok = (len(fps) == 1 and equal and stats["factorizations_local"] == 1 and stats["local_solves"] == 8
          and stats["local_dofs"] >= 5000 and factor > 1.5 and dt < 600)
    assert report(6, ok, f"{stats['local_dofs']} local DOFs; {len(fps)} fingerprint; "
                         f"{stats['factorizations_local']} factorization; reuse {t_reuse:.2f} s vs "
                         f"independent {t_indep:.2f} s (x{factor:.1f}); {dt:.0f} s")


def test_criterion_7_modified_improvement(mini_geom, mini_mesh, mats51, reference):
    t0 = time.perf_counter()
    res = modified_multiscale(mini_geom, mats51, IncidentWave(OMEGA), 6, coarsen=1, mesh=mini_mesh)
    err = multiscale_errors(reference, res)
    dt = time.perf_counter() - t0
    ok = err["err_EM"] <= err["err_E0_eta"] and np.isfinite(err["err_JM"]) and err["err_JM"] < 0.5 \
        and dt < 1800
    assert report(7, ok, f"E0 {err['err_E0']:.5f} E0_eta {err['err_E0_eta']:.7f} "
                         f"EM {err['err_EM']:.7f} JM {err['err_JM']:.4f}; {dt:.0f} s")


def test_criterion_8_de_rham_and_solver_hygiene(mini_mesh, mats51):
    t0 = time.perf_counter()
    coeffs = build_coefficient_field(mini_mesh, mats51)
    kk = A.curlcurl_matrix(mini_mesh, 1.0 / coeffs.mu)
    g = A.gradient_matrix(mini_mesh)
    phi = np.random.default_rng(7).normal(size=mini_mesh.n_vertices)
    annih = np.linalg.norm(kk @ (g @ phi)) / (sp.linalg.norm(kk) * np.linalg.norm(g @ phi))
    # self-convergence on a smooth problem: plane wave in a vacuum box
    mats = nondimensionalize(MaterialSet(), wave_factor=1.0)
    wave = IncidentWave(2.0)
    fields = []
    for r in (4, 8, 16):
        m = build_box_mesh([0, 0, 0], [1, 1, 1], r)
        m = m.with_tags(np.full(m.n_tets, VACUUM))
        fields.append(edge_field(m, solve_original(m, build_coefficient_field(m, mats), wave, mats).E))
    d = [norm_hcurl_t(transfer(a, b.mesh) - b) for a, b in zip(fields, fields[1:])]
    ratio = d[0] / d[1]
    worst = linsolve.RESIDUALS.worst
    dt = time.perf_counter() - t0
    ok = annih <= 1e-11 and worst <= 1e-10 and 1.6 <= ratio <= 2.6 and dt < 900
    assert report(8, ok, f"|K G phi| rel {annih:.1e}; worst residual {worst:.1e} over "
                         f"{linsolve.RESIDUALS.count} solves; convergence ratio {ratio:.3f}; {dt:.0f} s")


def test_criterion_9_cost_ordering(mini_geom, mini_mesh, mats51, reference):
    res = modified_multiscale(mini_geom, mats51, IncidentWave(OMEGA), 6, coarsen=3, mesh=mini_mesh)
    st = res.stats
    total = st["cell"]["wall_time"] + st["homogenized"]["wall_time"] + st["local"]["wall_time"]
    ref = reference.stats["wall_time"]
    err = multiscale_errors(reference, res)
    ok = total < ref
    assert report(9, ok, f"cell {st['cell']['wall_time']:.2f} + homogenized {st['homogenized']['wall_time']:.2f} "
                         f"+ local {st['local']['wall_time']:.2f} = {total:.2f} s vs reference {ref:.2f} s "
                         f"({reference.stats['dofs']} DOFs); err_EM {err['err_EM']:.3f}")
