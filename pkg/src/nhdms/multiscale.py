"""Multiscale reconstruction of the fields of a periodic array.

Two routes are provided.

* ``original``: solve the coupled homogenized system for the mean field and
  mean current, then apply the cell correctors to both.
* ``modified``: solve homogenized Maxwell for the mean field only, apply the
  scalar corrector, and recover the current by solving the coupled local
  problem on every particle with the corrected field as tangential
  boundary data. Particles are translates of one another on the lattice,
  so all local matrices coincide and one factorization serves them all.

The coarse (homogenized) mesh is a nested Kuhn mesh of the fine one, which
makes the transfer between them exact.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import linsolve
from .analysis import AffineField, edge_field, face_field, norm_hcurl_t, norm_hdiv, relative, transfer
from .fem import assembly as A
from .homog import CellSolution, HomogenizedTensors, cell_coefficients, homogenized_tensors, solve_cells
from .macro import (FieldSolution, IncidentWave, edge_midpoints, face_centroids,
                    solve_homogenized_coupled, solve_homogenized_maxwell)
from .mesh import ArrayGeometry, ParticleSubmesh, TetMesh, cell_mesh, extract_particle_submesh, mesh_array
from .model import METAL, ScaledMaterials

EYE = np.eye(3)


def cell_tet_map(mesh: TetMesh, geom: ArrayGeometry, cell_resolution: int) -> np.ndarray:
    """Cell-mesh tet matching every tet of ``mesh`` (-1 outside the array).

    Both meshes are Kuhn meshes, so a tet is identified by its grid cube and
    its permutation; the cube is reduced modulo the cell resolution.

    Raises:
        ValueError: If the mesh grid is not aligned with the cell lattice.
    """
    g = mesh.grid
    if g is None:
        raise ValueError("corrector lookup needs a structured mesh")
    h = geom.cell_size / cell_resolution
    if not np.allclose(g.spacing, h, rtol=1e-12, atol=0):
        raise ValueError("mesh spacing does not match the cell resolution")
    lo, _ = geom.omega_s
    start = (lo - g.origin) / h
    if not np.allclose(start, np.round(start), atol=1e-9):
        raise ValueError("array region does not start on a grid node")
    cube = g.index[mesh.tets[:, 0]] - np.round(start).astype(np.int64)
    perm = np.arange(mesh.n_tets) % 6
    n = np.asarray(geom.counts) * cell_resolution
    inside = np.all((cube >= 0) & (cube < n), axis=1)
    c = cube % cell_resolution
    r = cell_resolution
    flat = c[:, 0] + r * (c[:, 1] + r * c[:, 2])
    return np.where(inside, 6 * flat + perm, -1)


def corrector_matrices(mesh: TetMesh, geom: ArrayGeometry, grad_theta: np.ndarray,
                       cell_resolution: int) -> np.ndarray:
    """Per-tet ``I + grad theta`` on the array region and ``I`` elsewhere."""
    idx = cell_tet_map(mesh, geom, cell_resolution)
    out = np.broadcast_to(EYE, (mesh.n_tets, 3, 3)).astype(np.result_type(grad_theta, float))
    inside = idx >= 0
    out[inside] += grad_theta[idx[inside]]
    return out


def apply_corrector(field_: AffineField, mats: np.ndarray) -> AffineField:
    """Left-multiply a field by per-tet corrector matrices."""
    return field_.transform(mats)


def edge_interpolant(f: AffineField, edges=None) -> np.ndarray:
    """Edge DOFs ``int_e f . t`` averaged over the tets sharing each edge.

    On each tet the field is affine, so the midpoint rule is exact.
    """
    mesh = f.mesh
    te = mesh.tet_edges
    ends = mesh.points[mesh.edges[te]]  # (nt, 6, 2, 3)
    mid = ends.mean(axis=2)
    tang = ends[:, :, 1] - ends[:, :, 0]
    d = mid - mesh.barycenters[:, None]
    val = f.value[:, None] + np.einsum("tij,tej->tei", f.grad, d)
    dof = np.einsum("tei,tei->te", val, tang)
    sums = np.bincount(te.ravel(), weights=dof.real.ravel(), minlength=mesh.n_edges).astype(complex)
    if np.iscomplexobj(dof):
        sums += 1j * np.bincount(te.ravel(), weights=dof.imag.ravel(), minlength=mesh.n_edges)
    counts = np.bincount(te.ravel(), minlength=mesh.n_edges)
    out = sums / np.maximum(counts, 1)
    return out if edges is None else out[np.asarray(edges)]


@dataclass
class LocalProblem:
    """Assembled coupled system of one particle.

    Attributes:
        matrix: Full matrix on all local edges followed by all local faces.
        free: Indices of the unknowns left after the essential conditions.
        n_edges: Number of local edges (E block size).
    """

    matrix: sp.csr_matrix
    free: np.ndarray
    n_edges: int

    @property
    def reduced(self) -> sp.csr_matrix:
        return self.matrix[self.free][:, self.free].tocsr()

    def lift(self, boundary_values: np.ndarray) -> np.ndarray:
        """Right-hand side ``-A[free, :n_edges] @ x0`` of the tangential data."""
        return -(self.matrix[self.free][:, : self.n_edges] @ boundary_values)


def assemble_local(sub: ParticleSubmesh, mats: ScaledMaterials, omega: float) -> LocalProblem:
    """Coupled E-J system on one particle with no radiation terms.

    Boundary edges carry the prescribed tangential field and boundary faces
    a zero normal current, so both are removed from the free set.
    """
    m = sub.mesh
    k = mats.wavenumber(omega)
    ee = (A.curlcurl_matrix(m, 1.0 / mats.mu_metal) - k ** 2 * A.edge_mass_matrix(m, mats.eps_metal))
    c = A.edge_face_matrix(m, 1.0)
    jj = (A.divdiv_matrix(m, mats.beta2)
          - A.face_mass_matrix(m, omega * (omega + 1j * mats.gamma)))
    mat = sp.bmat([[ee, -1j * mats.wave_factor * k * c],
                   [1j * omega * mats.omega_p ** 2 * c.T, jj]], format="csr")
    ne = m.n_edges
    fixed = np.concatenate([sub.boundary_edges, ne + sub.boundary_faces])
    free = np.setdiff1d(np.arange(mat.shape[0]), fixed)
    return LocalProblem(matrix=mat, free=free, n_edges=ne)


@dataclass
class LocalSolution:
    """Fields of one particle's local problem (local numbering)."""

    sub: ParticleSubmesh
    E: np.ndarray
    J: np.ndarray
    E_tilde: np.ndarray


def local_particle_solve_all(e0_eta: AffineField, geom: ArrayGeometry, mats: ScaledMaterials,
                             omega: float,
                             cache: linsolve.FactorizationCache | None = None) -> tuple[list, dict]:
    """Solve the local coupled problem of every particle.

    The tangential data is the edge interpolant of the corrected field
    restricted to the particle, i.e. its trace from inside the metal.

    Args:
        e0_eta: Corrected homogenized field on the tagged fine mesh.
        geom: Array description.
        mats: Scaled materials.
        omega: Scaled frequency.
        cache: Factorization cache; a fresh one is made when None.

    Returns:
        ``(solutions, stats)``; ``stats`` counts factorizations, solves and
        cache hits and holds the local system size.

    Raises:
        linsolve.CacheMissError: If some particle's matrix differs from the
            first one's.
    """
    cache = linsolve.FactorizationCache() if cache is None else cache
    t0 = time.perf_counter()
    n_fact0, hits0 = cache.factorizations, cache.hits
    subs, rhs, problems, facts = [], [], [], []
    fps = set()
    mesh = e0_eta.mesh
    for kp in range(geom.n_particles):
        sub = extract_particle_submesh(mesh, kp, geom)
        prob = assemble_local(sub, mats, omega)
        red = prob.reduced
        if kp == 0:
            coords = np.vstack([edge_midpoints(sub.mesh), face_centroids(sub.mesh)])[prob.free]
            fact = cache.get_or_factorize(red, coords=coords)
        else:
            fact = cache.get_or_factorize(red, require_hit=True)
        fps.add(fact.fingerprint)
        # affine pieces are stored about barycenters, so the local shift drops out
        inner = AffineField(sub.mesh, e0_eta.value[sub.tets], e0_eta.grad[sub.tets])
        x0 = np.zeros(prob.n_edges, complex)
        be = sub.boundary_edges
        x0[be] = edge_interpolant(inner, be)
        subs.append((sub, x0))
        rhs.append(prob.lift(x0))
        problems.append(prob)
        facts.append(fact)
    if len(fps) != 1:
        raise RuntimeError("local matrices of different particles do not coincide")
    xs = linsolve.solve_many(facts[0], rhs)
    out = []
    for (sub, x0), prob, x in zip(subs, problems, xs):
        full = np.zeros(prob.matrix.shape[0], complex)
        full[prob.free] = x
        e_t = full[: prob.n_edges]
        out.append(LocalSolution(sub=sub, E=x0 + e_t, J=full[prob.n_edges:], E_tilde=e_t))
    stats = {
        "factorizations_local": cache.factorizations - n_fact0,
        "local_solves": len(xs),
        "cache_hits": cache.hits - hits0,
        "local_dofs": int(facts[0].dim),
        "local_elements": int(subs[0][0].mesh.n_tets),
        "fingerprint": next(iter(fps))[2],
        "wall_time": time.perf_counter() - t0,
    }
    return out, stats


def stitch_solution(mesh: TetMesh, outer: AffineField, outer_edges: np.ndarray,
                    locals_: list) -> tuple[AffineField, np.ndarray, np.ndarray]:
    """Assemble global fields from the outer field and the local solutions.

    Returns:
        ``(E, E_edges, J)``: the per-tet field (outer field off the
        particles, local fields on them), a conforming edge-DOF version
        (outer interpolant off the particles) and global face DOFs of the
        current.
    """
    value = outer.value.astype(complex)
    grad = outer.grad.astype(complex)
    e_dofs = np.asarray(outer_edges, complex).copy()
    j = np.zeros(mesh.n_faces, complex)
    for loc in locals_:
        sub = loc.sub
        f = edge_field(sub.mesh, loc.E)
        value[sub.tets] = f.value
        grad[sub.tets] = f.grad
        e_dofs[sub.edges] = loc.E
        j[sub.faces] = loc.J
    return AffineField(mesh, value, grad), e_dofs, j


@dataclass
class MultiscaleResult:
    """Fields and bookkeeping of one multiscale run.

    Attributes:
        route: ``"original"`` or ``"modified"``.
        mesh: Fine mesh the reconstructed fields live on.
        coarse: Homogenized solution on the coarse mesh.
        tensors: Effective tensors used.
        E0: Homogenized field on the fine mesh.
        E0_eta: Corrected homogenized field.
        E0_eta_edges: Edge interpolant of ``E0_eta``.
        EM: Reconstructed field (equal to ``E0_eta`` for the original route).
        EM_edges: Conforming edge DOFs of ``EM``.
        J: Reconstructed current (per-tet affine field, zero off the metal).
        J_faces: Face DOFs of the current when it is a face-element field.
        stats: Stage timings, sizes and cache counts.
    """

    route: str
    mesh: TetMesh
    coarse: FieldSolution
    tensors: HomogenizedTensors
    E0: AffineField
    E0_eta: AffineField
    E0_eta_edges: np.ndarray
    EM: AffineField
    EM_edges: np.ndarray
    J: AffineField
    J_faces: np.ndarray | None = None
    cells: CellSolution | None = None
    stats: dict = field(default_factory=dict)


def _coarse_mesh(geom: ArrayGeometry, fine_resolution: int, coarsen: int) -> TetMesh:
    if coarsen < 1 or fine_resolution % coarsen:
        raise ValueError("the coarsening factor must divide the fine cell resolution")
    return mesh_array(geom, fine_resolution // coarsen, inclusions=False)


def _cells(geom, mats, resolution, omega=None, lam=None):
    t0 = time.perf_counter()
    cm = cell_mesh(geom, resolution)
    coef = cell_coefficients(cm, mats, omega, lam)
    cells = solve_cells(cm, coef["mu"], coef["eps"], coef.get("gstar"))
    tensors = homogenized_tensors(cells, coef["mu"], coef["eps"], coef.get("gstar"),
                                  coef.get("bstar"), lam=lam)
    return cells, tensors, {"elements": int(cm.n_tets), "dofs": int(cm.n_vertices),
                            "wall_time": time.perf_counter() - t0}


def modified_multiscale(geom: ArrayGeometry, mats: ScaledMaterials, wave: IncidentWave,
                        cell_resolution: int, coarsen: int = 2, mesh: TetMesh | None = None,
                        cache: linsolve.FactorizationCache | None = None) -> MultiscaleResult:
    """Homogenized Maxwell, scalar correction and per-particle local solves.

    Args:
        geom: Array description.
        mats: Scaled materials.
        wave: Incident wave.
        cell_resolution: Grid cells per periodicity cell on the fine mesh;
            the cell problems use the same resolution.
        coarsen: Ratio of fine to homogenized mesh resolution.
        mesh: Fine tagged mesh (built when None).
        cache: Factorization cache for the local problems.
    """
    t_all = time.perf_counter()
    cells, tensors, st_cell = _cells(geom, mats, cell_resolution)

    t0 = time.perf_counter()
    coarse_mesh = _coarse_mesh(geom, cell_resolution, coarsen)
    coarse = solve_homogenized_maxwell(coarse_mesh, tensors, wave, mats)
    st_hom = dict(coarse.stats, wall_time=time.perf_counter() - t0)

    t0 = time.perf_counter()
    fine = mesh_array(geom, cell_resolution) if mesh is None else mesh
    e0 = transfer(edge_field(coarse_mesh, coarse.E), fine)
    corr = corrector_matrices(fine, geom, cells.grad_theta_eps, cell_resolution)
    e0_eta = apply_corrector(e0, corr)
    e0_eta_edges = edge_interpolant(e0_eta)
    locals_, st_loc = local_particle_solve_all(e0_eta, geom, mats, wave.omega, cache)
    em, em_edges, j_faces = stitch_solution(fine, e0_eta, e0_eta_edges, locals_)
    st_loc["wall_time"] = time.perf_counter() - t0
    st_loc["elements"] = int(st_loc["local_elements"] * geom.n_particles)
    st_loc["dofs"] = int(st_loc["local_dofs"] * geom.n_particles)

    stats = {"cell": st_cell, "homogenized": st_hom, "local": st_loc,
             "wall_time": time.perf_counter() - t_all}
    return MultiscaleResult(route="modified", mesh=fine, coarse=coarse, tensors=tensors, E0=e0,
                            E0_eta=e0_eta, E0_eta_edges=e0_eta_edges, EM=em, EM_edges=em_edges,
                            J=face_field(fine, j_faces), J_faces=j_faces, cells=cells, stats=stats)


def original_multiscale(geom: ArrayGeometry, mats: ScaledMaterials, wave: IncidentWave,
                        cell_resolution: int, lam: float, coarsen: int = 2,
                        mesh: TetMesh | None = None) -> MultiscaleResult:
    """Coupled homogenized solve followed by corrector reconstruction.

    The current is reconstructed as ``(I + curl Theta) J0`` and then
    restricted to the metal, where the physical current lives.
    """
    t_all = time.perf_counter()
    cells, tensors, st_cell = _cells(geom, mats, cell_resolution, wave.omega, lam)

    t0 = time.perf_counter()
    coarse_mesh = _coarse_mesh(geom, cell_resolution, coarsen)
    coarse = solve_homogenized_coupled(coarse_mesh, tensors, wave, mats)
    st_hom = dict(coarse.stats, wall_time=time.perf_counter() - t0)

    t0 = time.perf_counter()
    fine = mesh_array(geom, cell_resolution) if mesh is None else mesh
    e0 = transfer(edge_field(coarse_mesh, coarse.E), fine)
    e0_eta = apply_corrector(e0, corrector_matrices(fine, geom, cells.grad_theta_eps,
                                                    cell_resolution))
    e0_eta_edges = edge_interpolant(e0_eta)
    j0 = transfer(face_field(coarse_mesh, coarse.J), fine)
    j_eta = apply_corrector(j0, corrector_matrices(fine, geom, cells.curl_Theta, cell_resolution))
    zero = AffineField(fine, np.zeros_like(j_eta.value), np.zeros_like(j_eta.grad))
    j_eta = j_eta.where(fine.region == METAL, zero)
    st_rec = {"wall_time": time.perf_counter() - t0, "elements": int(fine.n_tets), "dofs": 0}

    stats = {"cell": st_cell, "homogenized": st_hom, "reconstruction": st_rec,
             "wall_time": time.perf_counter() - t_all}
    return MultiscaleResult(route="original", mesh=fine, coarse=coarse, tensors=tensors, E0=e0,
                            E0_eta=e0_eta, E0_eta_edges=e0_eta_edges, EM=e0_eta,
                            EM_edges=e0_eta_edges, J=j_eta, cells=cells, stats=stats)


def multiscale_errors(reference: FieldSolution, result: MultiscaleResult) -> dict:
    """Relative errors of the multiscale fields against a direct solve.

    Fields are compared in ``|.|_{H_T(curl)}`` over the box and currents in
    ``|.|_{H(div)}`` over the metal.
    """
    if reference.mesh.fingerprint() != result.mesh.fingerprint():
        raise ValueError("reference and multiscale fields live on different meshes")
    e_ref = edge_field(reference.mesh, reference.E)
    j_ref = face_field(reference.mesh, reference.J)
    metal = reference.mesh.region == METAL
    den_e = norm_hcurl_t(e_ref)
    den_j = norm_hdiv(j_ref, tets=metal)
    return {
        "err_E0": relative(norm_hcurl_t(result.E0 - e_ref), den_e),
        "err_E0_eta": relative(norm_hcurl_t(result.E0_eta - e_ref), den_e),
        "err_EM": relative(norm_hcurl_t(result.EM - e_ref), den_e),
        "err_JM": relative(norm_hdiv(result.J - j_ref, tets=metal), den_j),
    }
