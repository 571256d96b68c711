"""Periodic cell problems and homogenized coefficients.

All cell problems live on a mesh of the reference cell ``Y`` in ``y``
coordinates with periodic identification of opposite faces.

* Scalar cells: find periodic P1 ``theta_i`` with zero mean such that
  ``(a grad theta_i, grad q) = -(a e_i, grad q)``.
* Curl cells: find periodic edge fields ``Theta_i`` with
  ``(g curl Theta_i, curl u) = -(g e_i, curl u)`` and
  ``(Theta_i, grad q) = 0``. The divergence constraint is imposed with a
  periodic P1 multiplier (itself fixed by a zero-mean condition) and the
  three constant fields, which are curl-free and discretely divergence-free
  on the torus, are removed by requiring ``Theta_i`` to have zero mean.

Effective tensors are cell averages of ``a (I + grad theta)`` and
``g (I + curl Theta)``; the nonlocal coefficient homogenizes to the
harmonic mean.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import linsolve
from .fem import assembly as A
from .fem import constraints as C
from .mesh import ArrayGeometry, DofMaps, TetMesh, build_periodic_pairs, cell_mesh
from .model import METAL, ScaledMaterials

EYE = np.eye(3)


@dataclass
class CellSolution:
    """Cell correctors on one cell mesh.

    ``grad_theta_*[t, :, i]`` is the (constant) gradient of ``theta_i`` on
    tet ``t``, so ``I + grad_theta[t]`` is the corrector matrix. The same
    layout holds for ``curl_Theta``.
    """

    mesh: TetMesh
    maps: DofMaps
    theta_mu: np.ndarray | None = None
    theta_eps: np.ndarray | None = None
    grad_theta_mu: np.ndarray | None = None
    grad_theta_eps: np.ndarray | None = None
    Theta_gamma: np.ndarray | None = None
    curl_Theta: np.ndarray | None = None
    diagnostics: dict = field(default_factory=dict)


@dataclass
class HomogenizedTensors:
    """Effective coefficients of the periodic structure.

    Attributes:
        mu_hat: Effective permeability (3, 3).
        eps_hat: Effective permittivity (3, 3).
        gamma_star_hat: Effective inverse current susceptibility (3, 3), complex.
        beta_star_hat: Harmonic mean of the nonlocality coefficient.
        alpha: Smallest eigenvalue of the symmetric part of ``Im gamma_star_hat``.
        alpha_raw: Smallest real part of the eigenvalues of ``Im gamma_star_hat``.
        lam: Extension parameter the current coefficients were built with.
    """

    mu_hat: np.ndarray
    eps_hat: np.ndarray
    gamma_star_hat: np.ndarray | None = None
    beta_star_hat: complex | None = None
    alpha: float | None = None
    alpha_raw: float | None = None
    lam: float | None = None

    def to_dict(self) -> dict:
        def enc(a):
            if a is None:
                return None
            a = np.asarray(a, dtype=complex)
            return np.stack([a.real, a.imag], axis=-1).tolist()
        return {"mu_hat": enc(self.mu_hat), "eps_hat": enc(self.eps_hat),
                "gamma_star_hat": enc(self.gamma_star_hat),
                "beta_star_hat": enc(self.beta_star_hat), "alpha": self.alpha,
                "alpha_raw": self.alpha_raw, "lam": self.lam}

    @classmethod
    def from_dict(cls, d: dict) -> "HomogenizedTensors":
        def dec(a, real=False):
            if a is None:
                return None
            a = np.asarray(a, float)
            z = a[..., 0] + 1j * a[..., 1]
            return z.real if real else z
        beta = dec(d.get("beta_star_hat"))
        return cls(mu_hat=dec(d["mu_hat"], True), eps_hat=dec(d["eps_hat"], True),
                   gamma_star_hat=dec(d.get("gamma_star_hat")),
                   beta_star_hat=None if beta is None else complex(beta),
                   alpha=d.get("alpha"), alpha_raw=d.get("alpha_raw"), lam=d.get("lam"))

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, path) -> "HomogenizedTensors":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _coords_nodes(mesh, reps):
    return mesh.points[reps]


def solve_scalar_cell(mesh: TetMesh, maps: DofMaps, coef, directions=(0, 1, 2)):
    """Periodic zero-mean correctors for a scalar coefficient.

    Args:
        mesh: Cell mesh.
        maps: Periodic identification of ``mesh``.
        coef: Element values of the coefficient (nt,).
        directions: Which unit vectors ``e_i`` to solve for.

    Returns:
        ``(theta, grad)`` with nodal values (len(directions), nv) and per-tet
        gradients (nt, 3, len(directions)).
    """
    coef = np.asarray(coef, float)
    if coef.shape != (mesh.n_tets,):
        raise ValueError("cell coefficient must have one value per tet")
    stiff = A.node_stiffness_matrix(mesh, coef)
    loads = np.stack([-A.node_load(mesh, coef[:, None] * EYE[i]) for i in directions], axis=1)
    weights = np.asarray(A.node_mass_matrix(mesh).sum(axis=1)).ravel()
    system = C.SparseSystem.from_matrix(stiff, loads)
    system = C.apply_periodic(system, maps.node_master)
    system = C.apply_zero_mean(system, weights)
    _, reps = C.fold_matrix(maps.node_master)
    coords = np.vstack([_coords_nodes(mesh, reps), np.full((1, 3), np.nan)])
    sol = linsolve.factorize(system.matrix, coords).solve(system.rhs)
    theta = system.expand(sol).T
    grads = A.element_data(mesh).grads
    return theta, _nodal_gradients(grads, theta, mesh.tets)


def _nodal_gradients(grads, theta, tets):
    """Per-tet gradients of P1 fields: (nt, 3, nfields)."""
    vals = theta[:, tets]  # (nf, nt, 4)
    return np.einsum("tkd,ftk->tdf", grads, vals)


def solve_curl_cell(mesh: TetMesh, maps: DofMaps, gstar, directions=(0, 1, 2)):
    """Periodic divergence-free correctors of the curl-curl cell problem.

    Args:
        mesh: Cell mesh.
        maps: Periodic identification of ``mesh``.
        gstar: Complex element values of the coefficient (nt,).
        directions: Which unit vectors ``e_i`` to solve for.

    Returns:
        ``(Theta, curl, diagnostics)``: edge coefficients (len(directions), ne),
        per-tet curls (nt, 3, len(directions)) and residual information.
    """
    gstar = np.asarray(gstar, complex)
    if gstar.shape != (mesh.n_tets,):
        raise ValueError("cell coefficient must have one value per tet")
    pe, e_reps = C.fold_matrix(maps.edge_master)
    pn, n_reps = C.fold_matrix(maps.node_master)
    kk = (pe.T @ A.curlcurl_matrix(mesh, gstar) @ pe).tocsr()
    gc = (pe.T @ A.edge_node_matrix(mesh) @ pn).tocsr()
    ones = np.ones((mesh.n_tets, 1))
    mean_e = np.stack([pe.T @ A.edge_load(mesh, ones * EYE[d]) for d in range(3)], axis=1)
    w_n = pn.T @ np.asarray(A.node_mass_matrix(mesh).sum(axis=1)).ravel()
    ne = kk.shape[0]
    w_col = sp.csr_matrix(w_n[:, None])
    m_col = sp.csr_matrix(mean_e)
    mat = sp.bmat([[kk, gc, None, m_col],
                   [gc.T, None, w_col, None],
                   [None, w_col.T, None, None],
                   [m_col.T, None, None, None]], format="csr")
    rhs = np.zeros((mat.shape[0], len(directions)), complex)
    for j, i in enumerate(directions):
        rhs[:ne, j] = pe.T @ -A.edge_curl_load(mesh, gstar[:, None] * EYE[i])
    pts = mesh.points
    coords = np.vstack([pts[mesh.edges[e_reps]].mean(axis=1), pts[n_reps],
                        np.full((4, 3), np.nan)])
    sol = linsolve.factorize(mat, coords).solve(rhs)
    theta = (pe @ sol[:ne]).T
    curls = A.element_data(mesh).curls
    curl = np.einsum("tid,fti->tdf", curls, theta[:, mesh.tet_edges])
    div_res = np.linalg.norm(gc.T @ sol[:ne], axis=0)
    scale = np.linalg.norm(gc.data) * np.linalg.norm(sol[:ne], axis=0)
    diag = {"divergence_residual": float(np.max(div_res / np.maximum(scale, 1e-300))),
            "dofs": int(mat.shape[0])}
    return theta, curl, diag


def cell_average(mesh: TetMesh, values) -> np.ndarray:
    """Volume average over the cell of per-tet values (leading axis = tets)."""
    vol = A.element_data(mesh).vol
    return np.tensordot(vol, values, axes=(0, 0)) / vol.sum()


def homogenized_tensors(cells: CellSolution, mu, eps, gstar=None, bstar=None,
                        lam=None) -> HomogenizedTensors:
    """Effective tensors from solved cell problems.

    Args:
        cells: Cell solution with the scalar correctors (and the curl
            correctors when ``gstar`` is given).
        mu: Cell permeability per tet.
        eps: Cell permittivity per tet.
        gstar: Complex per-tet ``gamma*`` or None.
        bstar: Per-tet ``beta*`` or None.
        lam: Extension parameter recorded on the result.

    Raises:
        ValueError: If coefficient arrays do not match the cell mesh.
    """
    nt = cells.mesh.n_tets
    for arr in (mu, eps, gstar, bstar):
        if arr is not None and np.shape(arr) != (nt,):
            raise ValueError("coefficients do not match the cell mesh")
    mu_hat = cell_average(cells.mesh, np.asarray(mu)[:, None, None] * (EYE + cells.grad_theta_mu))
    eps_hat = cell_average(cells.mesh, np.asarray(eps)[:, None, None] * (EYE + cells.grad_theta_eps))
    out = HomogenizedTensors(mu_hat=mu_hat, eps_hat=eps_hat, lam=lam)
    if gstar is not None:
        if cells.curl_Theta is None:
            raise ValueError("curl cell problems were not solved")
        g = cell_average(cells.mesh, np.asarray(gstar)[:, None, None] * (EYE + cells.curl_Theta))
        out.gamma_star_hat = g
        out.alpha, out.alpha_raw = alpha_of(g)
    if bstar is not None:
        out.beta_star_hat = complex(1.0 / cell_average(cells.mesh, 1.0 / np.asarray(bstar, float)))
    return out


def alpha_of(gamma_star_hat) -> tuple[float, float]:
    """Smallest eigenvalue of ``sym(Im G)`` and smallest real eigenvalue part of ``Im G``."""
    im = np.asarray(gamma_star_hat).imag
    sym = 0.5 * (im + im.T)
    return float(np.linalg.eigvalsh(sym)[0]), float(np.min(np.linalg.eigvals(im).real))


def cell_coefficients(mesh: TetMesh, mats: ScaledMaterials, omega=None, lam=None) -> dict:
    """Cell values of mu, eps and (when ``omega`` is given) gamma*, beta*."""
    metal = mesh.region == METAL
    out = {
        "mu": np.where(metal, mats.mu_metal, mats.mu_host),
        "eps": np.where(metal, mats.eps_metal, mats.eps_host),
    }
    if omega is not None:
        if lam is None or not lam > 0:
            raise ValueError("gamma* and beta* on the cell need a positive extension parameter")
        gamma = np.where(metal, mats.gamma, lam)
        beta2 = np.where(metal, mats.beta2, lam)
        out["gstar"] = mats.gamma_star(omega, gamma)
        out["bstar"] = mats.beta_star(beta2)
    return out


def solve_cells(mesh: TetMesh, mu, eps, gstar=None, maps: DofMaps | None = None) -> CellSolution:
    """Solve all scalar (and optionally curl) cell problems on one mesh."""
    maps = build_periodic_pairs(mesh) if maps is None else maps
    cells = CellSolution(mesh=mesh, maps=maps)
    mu = np.asarray(mu, float)
    eps = np.asarray(eps, float)
    if np.ptp(mu) == 0:
        cells.theta_mu = np.zeros((3, mesh.n_vertices))
        cells.grad_theta_mu = np.zeros((mesh.n_tets, 3, 3))
    else:
        cells.theta_mu, cells.grad_theta_mu = solve_scalar_cell(mesh, maps, mu)
    if np.array_equal(eps, mu):
        cells.theta_eps, cells.grad_theta_eps = cells.theta_mu, cells.grad_theta_mu
    else:
        cells.theta_eps, cells.grad_theta_eps = solve_scalar_cell(mesh, maps, eps)
    if gstar is not None:
        cells.Theta_gamma, cells.curl_Theta, cells.diagnostics["curl"] = \
            solve_curl_cell(mesh, maps, gstar)
    return cells


def homogenize(geom: ArrayGeometry, mats: ScaledMaterials, resolution: int,
               omega=None, lam=None) -> tuple[CellSolution, HomogenizedTensors]:
    """Mesh the reference cell, solve its cell problems and average.

    With ``omega`` and ``lam`` the curl cell problems for the extended
    current coefficients are solved as well.
    """
    mesh = cell_mesh(geom, resolution)
    coef = cell_coefficients(mesh, mats, omega, lam)
    cells = solve_cells(mesh, coef["mu"], coef["eps"], coef.get("gstar"))
    tensors = homogenized_tensors(cells, coef["mu"], coef["eps"], coef.get("gstar"),
                                  coef.get("bstar"), lam=lam)
    return cells, tensors
