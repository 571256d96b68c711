"""Global frequency-domain solvers on the truncated box.

The electric field uses lowest-order edge elements on the whole box with a
first-order impedance condition on its boundary. The polarization current
uses face elements on the tets of its domain, with zero normal component
on the domain boundary (faces on that boundary carry no unknown).

In scaled units with free-space wavenumber ``k = kappa * w`` the systems
read, for all test functions ``u`` (edges) and ``v`` (faces)::

    (nu curl E, curl u) - k^2 (eps E, u) - i k <E_T, u_T> - i kappa k (J, u) = <g, u_T>
    (b div J, div v) - (G J, v) + i w wp^2 (E, v) = 0

with ``b = beta^2`` and ``G = w (w + i gamma)`` for the physical current,
and ``b = wp^2 beta*`` and ``G = wp^2 gamma*`` (tensor) for the
homogenized one.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import linsolve
from .fem import assembly as A
from .model import HOST, METAL, VACUUM, CoefficientField, ScaledMaterials


@dataclass(frozen=True)
class IncidentWave:
    """Plane wave ``amplitude * polarization * exp(i k direction . x)``."""

    omega: float
    direction: tuple = (0.0, 1.0, 0.0)
    polarization: tuple = (1.0, 0.0, 0.0)
    amplitude: complex = 1.0

    def __post_init__(self):
        d = np.asarray(self.direction, float)
        p = np.asarray(self.polarization, float)
        if abs(np.linalg.norm(d) - 1) > 1e-14 or abs(np.linalg.norm(p) - 1) > 1e-14:
            raise ValueError("direction and polarization must be unit vectors")
        if abs(d @ p) > 1e-14:
            raise ValueError("polarization must be orthogonal to the direction")

    def _phase(self, x, k):
        return self.amplitude * np.exp(1j * k * (np.asarray(x) @ np.asarray(self.direction)))

    def field(self, x, k):
        return self._phase(x, k)[:, None] * np.asarray(self.polarization)

    def curl(self, x, k):
        dxp = np.cross(self.direction, self.polarization)
        return 1j * k * self._phase(x, k)[:, None] * dxp

    def boundary_data(self, k):
        """``g(x, n) = curl E x n - i k (n x E) x n`` for the incident field."""
        def g(x, n):
            e = self.field(x, k)
            return np.cross(self.curl(x, k), n) - 1j * k * np.cross(np.cross(n, e), n)
        return g


def incident_boundary_data(wave: IncidentWave, mesh, mats: ScaledMaterials) -> np.ndarray:
    """Boundary load ``<g, w_e>`` of the incident wave on the box boundary."""
    return A.boundary_load(mesh, wave.boundary_data(mats.wavenumber(wave.omega)))


@dataclass
class FieldSolution:
    """Discrete fields of one solve.

    Attributes:
        mesh: Mesh the coefficients refer to.
        E: Edge coefficients of the electric field.
        J: Face coefficients of the current (zero off its domain), or None.
        j_tets: Tets of the current's domain, or None.
        kind: Which system produced the solution.
        omega: Scaled frequency.
        lam: Extension parameter when relevant.
        stats: DOF counts, timings and residuals.
    """

    mesh: object
    E: np.ndarray
    J: np.ndarray | None = None
    j_tets: np.ndarray | None = None
    kind: str = ""
    omega: float = 0.0
    lam: float | None = None
    stats: dict = field(default_factory=dict)


def edge_midpoints(mesh, edges=None):
    e = mesh.edges if edges is None else mesh.edges[edges]
    return mesh.points[e].mean(axis=1)


def face_centroids(mesh, faces=None):
    f = mesh.faces if faces is None else mesh.faces[faces]
    return mesh.points[f].mean(axis=1)


def _maxwell_block(mesh, nu, eps, k):
    kk = A.curlcurl_matrix(mesh, nu)
    mm = A.edge_mass_matrix(mesh, eps)
    bb = A.impedance_matrix(mesh)
    return (kk - k ** 2 * mm - 1j * k * bb).tocsr()


def solve_coupled(mesh, nu, eps, wave: IncidentWave, mats: ScaledMaterials,
                  j_tets=None, j_div=None, j_mass=None, kind="coupled", lam=None,
                  load=None) -> FieldSolution:
    """Assemble and solve the monolithic E-J system.

    Args:
        mesh: Tagged mesh.
        nu: Per-tet inverse permeability (scalar or tensor).
        eps: Per-tet permittivity (scalar or tensor).
        wave: Incident wave.
        mats: Scaled materials.
        j_tets: Boolean mask of the current's domain, or None for pure Maxwell.
        j_div: Per-tet ``b`` of the div-div term.
        j_mass: Per-tet ``G`` of the current mass term (scalar or tensor).
        kind: Label stored on the solution.
        lam: Extension parameter stored on the solution.
        load: Precomputed boundary load (defaults to the incident wave's).
    """
    t0 = time.perf_counter()
    w = wave.omega
    k = mats.wavenumber(w)
    a_ee = _maxwell_block(mesh, nu, eps, k)
    rhs_e = incident_boundary_data(wave, mesh, mats) if load is None else load
    jf = np.zeros(0, dtype=np.int64)
    if j_tets is not None and np.any(j_tets):
        jf = mesh.interior_faces(j_tets)
    if jf.size:
        c = A.edge_face_matrix(mesh, 1.0, j_tets)[:, jf]
        a_jj = (A.divdiv_matrix(mesh, j_div, j_tets) - A.face_mass_matrix(mesh, j_mass, j_tets))
        a_jj = a_jj.tocsr()[jf][:, jf]
        mat = sp.bmat([[a_ee, -1j * mats.wave_factor * k * c],
                       [1j * w * mats.omega_p ** 2 * c.T, a_jj]], format="csr")
        rhs = np.concatenate([rhs_e, np.zeros(jf.size, complex)])
    else:
        mat, rhs = a_ee, rhs_e.astype(complex)
    coords = np.vstack([edge_midpoints(mesh), face_centroids(mesh, jf)])
    t_asm = time.perf_counter() - t0
    fact = linsolve.factorize(mat, coords)
    x = fact.solve(rhs)
    e = x[: mesh.n_edges]
    j = None
    if j_tets is not None:
        j = np.zeros(mesh.n_faces, complex)
        j[jf] = x[mesh.n_edges:]
    stats = {
        "elements": int(mesh.n_tets),
        "dofs": int(mat.shape[0]),
        "dofs_E": int(mesh.n_edges),
        "dofs_J": int(jf.size),
        "assembly_time": t_asm,
        "factor_time": fact.factor_time,
        "solve_time": fact.solve_time,
        "wall_time": time.perf_counter() - t0,
        "residual": linsolve.relative_residual(mat, x, rhs),
    }
    return FieldSolution(mesh=mesh, E=e, J=j, j_tets=None if j_tets is None else np.asarray(j_tets, bool),
                         kind=kind, omega=w, lam=lam, stats=stats)


def solve_original(mesh, coeffs: CoefficientField, wave: IncidentWave,
                   mats: ScaledMaterials) -> FieldSolution:
    """Coupled system with the current confined to the metal."""
    metal = coeffs.region == METAL
    return solve_coupled(mesh, 1.0 / coeffs.mu, coeffs.eps, wave, mats, j_tets=metal,
                         j_div=coeffs.beta2, j_mass=wave.omega * (wave.omega + 1j * coeffs.gamma),
                         kind="original")


def solve_extended(mesh, coeffs: CoefficientField, wave: IncidentWave,
                   mats: ScaledMaterials) -> FieldSolution:
    """Coupled system with the current extended into the host."""
    if coeffs.lam is None or not coeffs.lam > 0:
        raise ValueError("the extended system needs a positive extension parameter")
    inside = np.isin(coeffs.region, (HOST, METAL))
    return solve_coupled(mesh, 1.0 / coeffs.mu, coeffs.eps, wave, mats, j_tets=inside,
                         j_div=coeffs.beta2, j_mass=wave.omega * (wave.omega + 1j * coeffs.gamma),
                         kind="extended", lam=coeffs.lam)


def _effective(region, inside_value):
    nt = region.size
    out = np.broadcast_to(np.eye(3), (nt, 3, 3)).astype(np.result_type(inside_value, float))
    out[region != VACUUM] = inside_value
    return out


def solve_homogenized_maxwell(mesh, tensors, wave: IncidentWave,
                              mats: ScaledMaterials) -> FieldSolution:
    """Maxwell with the effective tensors inside the array region, vacuum outside."""
    nu = _effective(mesh.region, np.linalg.inv(tensors.mu_hat))
    eps = _effective(mesh.region, tensors.eps_hat)
    return solve_coupled(mesh, nu, eps, wave, mats, kind="homogenized-maxwell")


def solve_homogenized_coupled(mesh, tensors, wave: IncidentWave,
                              mats: ScaledMaterials) -> FieldSolution:
    """Effective coupled system with the mean current on the array region."""
    if tensors.gamma_star_hat is None:
        raise ValueError("the coupled homogenized system needs gamma* and beta* tensors")
    nu = _effective(mesh.region, np.linalg.inv(tensors.mu_hat))
    eps = _effective(mesh.region, tensors.eps_hat)
    inside = mesh.region != VACUUM
    wp2 = mats.omega_p ** 2
    return solve_coupled(mesh, nu, eps, wave, mats, j_tets=inside,
                         j_div=np.where(inside, wp2 * tensors.beta_star_hat, 0.0),
                         j_mass=wp2 * np.asarray(tensors.gamma_star_hat),
                         kind="homogenized-coupled", lam=tensors.lam)
