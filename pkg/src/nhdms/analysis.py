"""Error norms, convergence studies and cost tables.

Fields are compared in a common broken representation: on every tet a field
is affine, ``F(x) = value + grad @ (x - barycenter)``. Whitney 1- and
2-forms, their corrected versions and fields transferred from a nested
coarser mesh all fit this form, so L2, curl, divergence and boundary-trace
norms of differences are computed exactly.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .fem import assembly as A
from .homog import homogenize
from .macro import solve_extended, solve_homogenized_coupled, solve_homogenized_maxwell, solve_original
from .model import build_coefficient_field

ERROR_COLUMNS = ("err_E0", "err_E0_eta", "err_EM", "err_JM")


@dataclass
class AffineField:
    """Per-tet affine vector field on a mesh.

    Attributes:
        mesh: Mesh the tets refer to.
        value: Value at each tet barycenter, (nt, 3).
        grad: Jacobian ``grad[t, i, j] = d F_i / d x_j``, (nt, 3, 3).
    """

    mesh: object
    value: np.ndarray
    grad: np.ndarray

    def __add__(self, other):
        return AffineField(self.mesh, self.value + other.value, self.grad + other.grad)

    def __sub__(self, other):
        return AffineField(self.mesh, self.value - other.value, self.grad - other.grad)

    def __mul__(self, c):
        return AffineField(self.mesh, c * self.value, c * self.grad)

    __rmul__ = __mul__

    def where(self, mask, other):
        """Take ``self`` on masked tets and ``other`` elsewhere."""
        m = np.asarray(mask, bool)
        return AffineField(self.mesh, np.where(m[:, None], self.value, other.value),
                           np.where(m[:, None, None], self.grad, other.grad))

    def transform(self, mats):
        """Left-multiply by per-tet constant matrices (nt, 3, 3)."""
        return AffineField(self.mesh, np.einsum("tij,tj->ti", mats, self.value),
                           np.einsum("tij,tjk->tik", mats, self.grad))

    def evaluate(self, tets, x):
        x = np.asarray(x)
        d = x - self.mesh.barycenters[tets]
        return self.value[tets] + np.einsum("tij,tj->ti", self.grad[tets], d)

    @property
    def curl(self) -> np.ndarray:
        g = self.grad
        return np.stack([g[:, 2, 1] - g[:, 1, 2], g[:, 0, 2] - g[:, 2, 0],
                         g[:, 1, 0] - g[:, 0, 1]], axis=1)

    @property
    def div(self) -> np.ndarray:
        return np.trace(self.grad, axis1=1, axis2=2)


def zero_field(mesh) -> AffineField:
    return AffineField(mesh, np.zeros((mesh.n_tets, 3), complex), np.zeros((mesh.n_tets, 3, 3), complex))


def _basis_field(mesh, coeffs, table, dofs):
    coeffs = np.asarray(coeffs)
    d = A.element_data(mesh)
    c = coeffs[dofs]  # (nt, nb)
    u = table(d)  # (nt, nb, 4, 3)
    value = np.einsum("tb,tbkd->td", c, u) / 4.0
    grad = np.einsum("tb,tbki,tkj->tij", c, u, d.grads)
    return AffineField(mesh, value, grad)


def edge_field(mesh, coeffs) -> AffineField:
    """Affine form of an edge-element field."""
    return _basis_field(mesh, coeffs, lambda d: d.w1, mesh.tet_edges)


def face_field(mesh, coeffs) -> AffineField:
    """Affine form of a face-element field."""
    return _basis_field(mesh, coeffs, lambda d: d.w2, mesh.tet_faces)


def transfer(coarse: AffineField, fine_mesh) -> AffineField:
    """Represent a field from a coarser nested mesh on ``fine_mesh``.

    Each fine tet must lie inside one coarse tet, which holds for Kuhn
    meshes of the same box whose resolutions are integer multiples.
    """
    owner = coarse.mesh.locate(fine_mesh.barycenters)
    value = coarse.evaluate(owner, fine_mesh.barycenters)
    return AffineField(fine_mesh, value, coarse.grad[owner].copy())


def _second_moments(mesh):
    """``int (x - xc)(x - xc)^T`` over every tet."""
    cached = mesh.__dict__.get("_second_moments")
    if cached is None:
        p = mesh.points[mesh.tets] - mesh.barycenters[:, None]
        cached = np.einsum("tki,tkj->tij", p, p) * (mesh.volumes / 20.0)[:, None, None]
        mesh.__dict__["_second_moments"] = cached
    return cached


def _mask(mesh, tets):
    if tets is None:
        return np.ones(mesh.n_tets, bool)
    tets = np.asarray(tets)
    if tets.dtype == bool:
        return tets
    m = np.zeros(mesh.n_tets, bool)
    m[tets] = True
    return m


def l2_norm(f: AffineField, tets=None) -> float:
    m = _mask(f.mesh, tets)
    vol = f.mesh.volumes[m]
    s = _second_moments(f.mesh)[m]
    g = f.grad[m]
    quad = np.einsum("tij,tjk,tik->t", g, s, g.conj()).real
    return float(np.sqrt(max(np.sum(vol * np.sum(np.abs(f.value[m]) ** 2, axis=1)) + quad.sum(), 0.0)))


def curl_norm(f: AffineField, tets=None) -> float:
    m = _mask(f.mesh, tets)
    return float(np.sqrt(np.sum(f.mesh.volumes[m] * np.sum(np.abs(f.curl[m]) ** 2, axis=1))))


def div_norm(f: AffineField, tets=None) -> float:
    m = _mask(f.mesh, tets)
    return float(np.sqrt(np.sum(f.mesh.volumes[m] * np.abs(f.div[m]) ** 2)))


def trace_norm(f: AffineField, faces=None) -> float:
    """L2 norm of the tangential trace over boundary faces (default: mesh boundary)."""
    mesh = f.mesh
    faces = mesh.boundary_faces() if faces is None else np.asarray(faces)
    owner = mesh.face_tets[faces, 0]
    n = mesh.face_normals(faces)
    proj = np.eye(3) - n[:, :, None] * n[:, None, :]
    tri = mesh.points[mesh.faces[faces]]
    xc = tri.mean(axis=1)
    area = mesh.face_areas(faces)
    d = tri - xc[:, None]
    s = np.einsum("fki,fkj->fij", d, d) * (area / 12.0)[:, None, None]
    val = proj @ f.evaluate(owner, xc)[:, :, None]
    pg = np.einsum("fij,fjk->fik", proj, f.grad[owner])
    quad = np.einsum("fij,fjk,fik->f", pg, s, pg.conj()).real
    return float(np.sqrt(np.sum(area * np.sum(np.abs(val[:, :, 0]) ** 2, axis=1)) + quad.sum()))


def norm_hcurl(f: AffineField, tets=None) -> float:
    """``|u| + |curl u|`` (sum of the two L2 terms)."""
    return l2_norm(f, tets) + curl_norm(f, tets)


def norm_hcurl_t(f, coeffs=None) -> float:
    """``|u| + |curl u| + |u_T|_boundary`` over the whole mesh.

    Accepts an :class:`AffineField` or a mesh plus edge coefficients.
    """
    if coeffs is not None:
        f = edge_field(f, coeffs)
    return l2_norm(f) + curl_norm(f) + trace_norm(f)


def norm_hdiv(f, coeffs=None, tets=None) -> float:
    """``|u| + |div u|`` over the selected tets.

    Accepts an :class:`AffineField` or a mesh plus face coefficients.
    """
    if coeffs is not None:
        f = face_field(f, coeffs)
    return l2_norm(f, tets) + div_norm(f, tets)


def matrix_norm_hcurl_t(mesh, coeffs) -> float:
    """Same norm as :func:`norm_hcurl_t` computed from assembled matrices."""
    x = np.asarray(coeffs)
    m = A.edge_mass_matrix(mesh)
    k = A.curlcurl_matrix(mesh)
    b = A.impedance_matrix(mesh)
    q = [np.sqrt(max(np.vdot(x, mat @ x).real, 0.0)) for mat in (m, k, b)]
    return float(sum(q))


def relative(num: float, den: float) -> float:
    return float(num / den) if den > 0 else float("inf")


@dataclass
class ErrorReport:
    """Relative errors of the multiscale fields against a reference solve."""

    omega: float
    err_E0: float
    err_E0_eta: float
    err_EM: float
    err_JM: float
    lam: float | None = None
    resolution: int | None = None
    timings: dict = field(default_factory=dict)

    def row(self) -> dict:
        out = {"omega": self.omega, "lambda": self.lam, "resolution": self.resolution}
        out.update({k: getattr(self, k) for k in ERROR_COLUMNS})
        out.update(self.timings)
        return out


def fit_slope(lams, errs, top_decade: bool = True) -> float:
    """Least-squares slope of ``log err`` against ``log lam``.

    With ``top_decade`` only the points within one decade of the largest
    ``lam`` enter the fit (at least two points are always used).

    Raises:
        ValueError: With fewer than three points or nonpositive values.
    """
    lams = np.asarray(lams, float)
    errs = np.asarray(errs, float)
    if lams.size < 3:
        raise ValueError("a convergence study needs at least three points")
    if np.any(lams <= 0) or np.any(errs <= 0):
        raise ValueError("slopes need positive values")
    order = np.argsort(lams, kind="stable")
    x, y = np.log10(lams[order]), np.log10(errs[order])
    if top_decade:
        keep = x >= x[-1] - 1.0 - 1e-12
        if keep.sum() < 2:
            keep[-2:] = True
        x, y = x[keep], y[keep]
    if np.ptp(x) == 0:
        raise ValueError("slopes need distinct parameter values")
    return float(np.polyfit(x, y, 1)[0])


def extension_error(reference, extended) -> float:
    """``|E - E_lam|_{H_T(curl)} + |J - J_lam|_{H(div, array)}``.

    The reference current vanishes off the metal, which makes the
    difference a face-element field on the whole array region.
    """
    mesh = reference.mesh
    e = norm_hcurl_t(mesh, reference.E - extended.E)
    j = norm_hdiv(mesh, reference.J - extended.J, tets=extended.j_tets)
    return e + j


def extension_convergence_study(mesh, mats, wave, lams, reference=None) -> tuple[list, float]:
    """Distance between the original and extended solutions over a sweep of ``lam``.

    Args:
        mesh: Tagged mesh shared by both solvers.
        mats: Scaled materials.
        wave: Incident wave.
        lams: Extension parameters (scaled), at least three.
        reference: Original solution on ``mesh`` (solved when None).

    Returns:
        ``(rows, slope)`` with one row per ``lam`` and the fitted log-log
        slope over the top decade.
    """
    lams = [float(v) for v in lams]
    if len(lams) < 3:
        raise ValueError("a convergence study needs at least three points")
    if reference is None:
        reference = solve_original(mesh, build_coefficient_field(mesh, mats), wave, mats)
    rows = []
    for lam in lams:
        ext = solve_extended(mesh, build_coefficient_field(mesh, mats, lam=lam), wave, mats)
        rows.append({"omega": wave.omega, "lambda": lam, "lambda_over_gamma": lam / mats.gamma,
                     "err": extension_error(reference, ext),
                     "dofs": ext.stats["dofs"], "wall_time": ext.stats["wall_time"]})
    return rows, fit_slope(lams, [r["err"] for r in rows])


def alpha_study(geom, mats, wave, lams, cell_resolution, mesh) -> list:
    """Effective damping and the size of the homogenized current versus ``lam``.

    For every ``lam`` the cell problems give ``alpha``; the coupled
    homogenized system on ``mesh`` gives the mean current and field, which
    are compared with the pure homogenized Maxwell field.
    """
    rows = []
    e0 = None
    region = mesh.region != 0
    for lam in lams:
        _, tensors = homogenize(geom, mats, cell_resolution, wave.omega, lam)
        if e0 is None:
            e0 = solve_homogenized_maxwell(mesh, tensors, wave, mats)
        cp = solve_homogenized_coupled(mesh, tensors, wave, mats)
        j_l2 = l2_norm(face_field(mesh, cp.J), region)
        rows.append({"omega": wave.omega, "lambda": float(lam), "lambda_over_gamma": lam / mats.gamma,
                     "alpha": tensors.alpha, "alpha_raw": tensors.alpha_raw, "J0_l2": j_l2,
                     "J0_l2_alpha": j_l2 * tensors.alpha,
                     "E_diff_hcurl": norm_hcurl(edge_field(mesh, cp.E - e0.E))})
    return rows


def cost_report(stages: dict, reference_key: str = "reference") -> dict:
    """Tabulate stage costs and the multiscale-to-reference time ratio.

    Args:
        stages: Mapping stage name -> dict with ``elements``, ``dofs``,
            ``wall_time``.
        reference_key: Stage holding the direct solve (may be absent).
    """
    rows = {k: {"elements": int(v.get("elements", 0)), "dofs": int(v.get("dofs", 0)),
                "wall_time": float(v.get("wall_time", 0.0))} for k, v in stages.items()}
    multiscale = sum(r["wall_time"] for k, r in rows.items() if k != reference_key)
    out = {"stages": rows, "multiscale_total": multiscale}
    if reference_key in rows:
        ref = rows[reference_key]["wall_time"]
        out["reference_total"] = ref
        out["ratio"] = multiscale / ref if ref > 0 else float("inf")
    return out


def write_csv(path, rows) -> None:
    rows = list(rows)
    keys = []
    for r in rows:
        keys += [k for k in r if k not in keys]
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=keys)
        w.writeheader()
        for r in rows:
            w.writerow(r)
