"""Element matrices of lowest-order Whitney forms on affine tetrahedra.

Local bases are stored in barycentric form: a basis function ``w`` is kept
as a (4, 3) array ``U`` with ``w(x) = sum_k lambda_k(x) U[k]``. For the edge
``(a, b)`` the Whitney 1-form ``lambda_a grad lambda_b - lambda_b grad
lambda_a`` has ``U[a] = g_b`` and ``U[b] = -g_a``; the face ``(a, b, c)``
2-form has ``U[a] = 2 g_b x g_c`` and cyclic. Products then integrate
exactly with the barycentric mass matrix ``|T| (1 + delta_kl) / 20``.

Each heavy kernel has a vectorised numpy implementation and a per-tet numba
loop; :mod:`nhdms._backend` picks one.
"""

import numpy as np

from .. import _backend
from .._backend import njit
from ..mesh import LOCAL_EDGES, LOCAL_FACES

MREF = (np.ones((4, 4)) + np.eye(4)) / 20.0
MREF_TRI = (np.ones((3, 3)) + np.eye(3)) / 12.0
TRI_EDGES = np.array([[0, 1], [0, 2], [1, 2]])


class DegenerateElementError(ValueError):
    pass


# ---------------------------------------------------------------- geometry

def _geometry_numpy(points, tets):
    p = points[tets]
    d = p[:, 1:] - p[:, :1]
    det = np.linalg.det(d)
    grads = np.empty((tets.shape[0], 4, 3))
    grads[:, 1:] = np.linalg.inv(d).transpose(0, 2, 1)
    grads[:, 0] = -grads[:, 1:].sum(axis=1)
    return np.abs(det) / 6.0, grads


@njit(cache=True)
def _geometry_numba(points, tets):
    nt = tets.shape[0]
    vol = np.empty(nt)
    grads = np.empty((nt, 4, 3))
    d = np.empty((3, 3))
    for t in range(nt):
        p0 = tets[t, 0]
        for i in range(3):
            for j in range(3):
                d[i, j] = points[tets[t, i + 1], j] - points[p0, j]
        c00 = d[1, 1] * d[2, 2] - d[1, 2] * d[2, 1]
        c01 = d[1, 2] * d[2, 0] - d[1, 0] * d[2, 2]
        c02 = d[1, 0] * d[2, 1] - d[1, 1] * d[2, 0]
        det = d[0, 0] * c00 + d[0, 1] * c01 + d[0, 2] * c02
        # rows of inv(d).T are the cofactor rows divided by det
        grads[t, 1, 0] = c00 / det
        grads[t, 1, 1] = c01 / det
        grads[t, 1, 2] = c02 / det
        grads[t, 2, 0] = (d[0, 2] * d[2, 1] - d[0, 1] * d[2, 2]) / det
        grads[t, 2, 1] = (d[0, 0] * d[2, 2] - d[0, 2] * d[2, 0]) / det
        grads[t, 2, 2] = (d[0, 1] * d[2, 0] - d[0, 0] * d[2, 1]) / det
        grads[t, 3, 0] = (d[0, 1] * d[1, 2] - d[0, 2] * d[1, 1]) / det
        grads[t, 3, 1] = (d[0, 2] * d[1, 0] - d[0, 0] * d[1, 2]) / det
        grads[t, 3, 2] = (d[0, 0] * d[1, 1] - d[0, 1] * d[1, 0]) / det
        for j in range(3):
            grads[t, 0, j] = -(grads[t, 1, j] + grads[t, 2, j] + grads[t, 3, j])
        vol[t] = abs(det) / 6.0
    return vol, grads


def tet_geometry(points, tets):
    """Volumes (nt,) and barycentric gradients (nt, 4, 3).

    Raises:
        DegenerateElementError: If a tet has (near) zero volume.
    """
    points = np.ascontiguousarray(points, dtype=float)
    tets = np.ascontiguousarray(tets, dtype=np.int64)
    p = points[tets]
    d = p[:, 1:] - p[:, :1]
    scale = np.max(np.abs(d), axis=(1, 2)) ** 3
    bad = ~(np.abs(np.linalg.det(d)) > 1e-12 * scale)
    if bad.any():
        raise DegenerateElementError(f"degenerate tet {int(np.flatnonzero(bad)[0])}")
    if _backend.active_backend() == "numba":
        return _geometry_numba(points, tets)
    return _geometry_numpy(points, tets)


# ------------------------------------------------------------ basis tables

def whitney1(grads):
    """Barycentric representation of the six edge functions, (nt, 6, 4, 3)."""
    u = np.zeros(grads.shape[:1] + (6, 4, 3))
    for e, (a, b) in enumerate(LOCAL_EDGES):
        u[:, e, a] = grads[:, b]
        u[:, e, b] = -grads[:, a]
    return u


def whitney2(grads):
    """Barycentric representation of the four face functions, (nt, 4, 4, 3)."""
    u = np.zeros(grads.shape[:1] + (4, 4, 3))
    for f, (a, b, c) in enumerate(LOCAL_FACES):
        u[:, f, a] = 2 * np.cross(grads[:, b], grads[:, c])
        u[:, f, b] = 2 * np.cross(grads[:, c], grads[:, a])
        u[:, f, c] = 2 * np.cross(grads[:, a], grads[:, b])
    return u


def edge_curls(grads):
    """Constant curls of the edge functions, (nt, 6, 3)."""
    a, b = LOCAL_EDGES.T
    return 2 * np.cross(grads[:, a], grads[:, b])


def face_divs(grads):
    """Constant divergences of the face functions, (nt, 4)."""
    a, b, c = LOCAL_FACES.T
    return 6 * np.einsum("tfd,tfd->tf", grads[:, a], np.cross(grads[:, b], grads[:, c]))


def _as_tensor(coef, nt):
    """Return (kind, array) with kind 'scalar' -> (nt,) or 'tensor' -> (nt, 3, 3)."""
    c = np.asarray(coef)
    if c.ndim == 0:
        return "scalar", np.full(nt, c[()])
    if c.shape == (nt,):
        return "scalar", c
    if c.shape == (3, 3):
        return "tensor", np.broadcast_to(c, (nt, 3, 3))
    if c.shape == (nt, 3, 3):
        return "tensor", c
    raise ValueError(f"coefficient of shape {c.shape} does not match {nt} elements")


# ------------------------------------------------------------ mass kernels

def _mass_numpy(vol, a, b, kind, coef):
    if kind == "tensor":
        a = np.einsum("takd,tde->take", a, coef)
    m = np.einsum("takd,kl,tbld->tab", a, MREF, b, optimize=True) * vol[:, None, None]
    if kind == "scalar":
        m = m * coef[:, None, None]
    return m


@njit(cache=True)
def _mass_scalar_numba(vol, a, b, coef, out):
    nt, na = a.shape[0], a.shape[1]
    nb = b.shape[1]
    for t in range(nt):
        s = vol[t] * coef[t] / 20.0
        for i in range(na):
            for j in range(nb):
                acc = 0.0
                tot_a0 = a[t, i, 0, 0] + a[t, i, 1, 0] + a[t, i, 2, 0] + a[t, i, 3, 0]
                tot_a1 = a[t, i, 0, 1] + a[t, i, 1, 1] + a[t, i, 2, 1] + a[t, i, 3, 1]
                tot_a2 = a[t, i, 0, 2] + a[t, i, 1, 2] + a[t, i, 2, 2] + a[t, i, 3, 2]
                tot_b0 = b[t, j, 0, 0] + b[t, j, 1, 0] + b[t, j, 2, 0] + b[t, j, 3, 0]
                tot_b1 = b[t, j, 0, 1] + b[t, j, 1, 1] + b[t, j, 2, 1] + b[t, j, 3, 1]
                tot_b2 = b[t, j, 0, 2] + b[t, j, 1, 2] + b[t, j, 2, 2] + b[t, j, 3, 2]
                # (1 + delta_kl) = all-ones part plus the diagonal
                acc = tot_a0 * tot_b0 + tot_a1 * tot_b1 + tot_a2 * tot_b2
                for k in range(4):
                    acc += a[t, i, k, 0] * b[t, j, k, 0] + a[t, i, k, 1] * b[t, j, k, 1] \
                        + a[t, i, k, 2] * b[t, j, k, 2]
                out[t, i, j] = s * acc
    return out


@njit(cache=True)
def _mass_tensor_numba(vol, a, b, coef, out):
    nt, na = a.shape[0], a.shape[1]
    nb = b.shape[1]
    ca = np.empty((4, 3), dtype=out.dtype)
    for t in range(nt):
        s = vol[t] / 20.0
        for i in range(na):
            for k in range(4):
                for e in range(3):
                    ca[k, e] = a[t, i, k, 0] * coef[t, 0, e] + a[t, i, k, 1] * coef[t, 1, e] \
                        + a[t, i, k, 2] * coef[t, 2, e]
            ta0 = ca[0, 0] + ca[1, 0] + ca[2, 0] + ca[3, 0]
            ta1 = ca[0, 1] + ca[1, 1] + ca[2, 1] + ca[3, 1]
            ta2 = ca[0, 2] + ca[1, 2] + ca[2, 2] + ca[3, 2]
            for j in range(nb):
                tb0 = b[t, j, 0, 0] + b[t, j, 1, 0] + b[t, j, 2, 0] + b[t, j, 3, 0]
                tb1 = b[t, j, 0, 1] + b[t, j, 1, 1] + b[t, j, 2, 1] + b[t, j, 3, 1]
                tb2 = b[t, j, 0, 2] + b[t, j, 1, 2] + b[t, j, 2, 2] + b[t, j, 3, 2]
                acc = ta0 * tb0 + ta1 * tb1 + ta2 * tb2
                for k in range(4):
                    acc += ca[k, 0] * b[t, j, k, 0] + ca[k, 1] * b[t, j, k, 1] \
                        + ca[k, 2] * b[t, j, k, 2]
                out[t, i, j] = s * acc
    return out


def mass(vol, a, b, coef=1.0):
    """Weighted L2 products of two barycentric bases.

    Args:
        vol: Tet volumes (nt,).
        a: First basis (nt, na, 4, 3).
        b: Second basis (nt, nb, 4, 3).
        coef: Scalar, per-tet scalar (nt,), or tensor (3, 3) / (nt, 3, 3).

    Returns:
        ``int (C a_i) . b_j`` for every tet, shape (nt, na, nb).
    """
    nt = vol.shape[0]
    kind, c = _as_tensor(coef, nt)
    if _backend.active_backend() == "numpy":
        return _mass_numpy(vol, a, b, kind, c)
    dtype = np.result_type(c.dtype, np.float64)
    out = np.empty((nt, a.shape[1], b.shape[1]), dtype=dtype)
    a = np.ascontiguousarray(a, dtype=float)
    b = np.ascontiguousarray(b, dtype=float)
    c = np.ascontiguousarray(c, dtype=dtype)
    if kind == "scalar":
        return _mass_scalar_numba(vol, a, b, c, out)
    return _mass_tensor_numba(vol, a, b, c, out)


# ------------------------------------------------------- derivative kernels

@njit(cache=True)
def _curlcurl_numba(vol, curls, coef, out):
    nt = curls.shape[0]
    for t in range(nt):
        for i in range(6):
            c0 = curls[t, i, 0] * coef[t, 0, 0] + curls[t, i, 1] * coef[t, 1, 0] + curls[t, i, 2] * coef[t, 2, 0]
            c1 = curls[t, i, 0] * coef[t, 0, 1] + curls[t, i, 1] * coef[t, 1, 1] + curls[t, i, 2] * coef[t, 2, 1]
            c2 = curls[t, i, 0] * coef[t, 0, 2] + curls[t, i, 1] * coef[t, 1, 2] + curls[t, i, 2] * coef[t, 2, 2]
            for j in range(6):
                out[t, i, j] = vol[t] * (c0 * curls[t, j, 0] + c1 * curls[t, j, 1] + c2 * curls[t, j, 2])
    return out


def curlcurl(vol, curls, coef=1.0):
    """``int (C curl w_i) . curl w_j`` per tet, shape (nt, 6, 6)."""
    nt = vol.shape[0]
    kind, c = _as_tensor(coef, nt)
    if kind == "scalar":
        return np.einsum("tid,tjd->tij", curls, curls) * (vol * c)[:, None, None]
    if _backend.active_backend() == "numpy":
        return np.einsum("tid,tde,tje->tij", curls, c, curls) * vol[:, None, None]
    dtype = np.result_type(c.dtype, np.float64)
    out = np.empty((nt, 6, 6), dtype=dtype)
    return _curlcurl_numba(vol, np.ascontiguousarray(curls), np.ascontiguousarray(c, dtype=dtype), out)


def divdiv(vol, divs, coef=1.0):
    """``int c div phi_i div phi_j`` per tet, shape (nt, 4, 4)."""
    kind, c = _as_tensor(coef, vol.shape[0])
    if kind != "scalar":
        raise ValueError("div-div coefficient must be scalar")
    return divs[:, :, None] * divs[:, None, :] * (vol * c)[:, None, None]


def p1_stiffness(vol, grads, coef=1.0):
    """``int (C grad l_i) . grad l_j`` per tet, shape (nt, 4, 4)."""
    kind, c = _as_tensor(coef, vol.shape[0])
    if kind == "scalar":
        return np.einsum("tid,tjd->tij", grads, grads) * (vol * c)[:, None, None]
    return np.einsum("tid,tde,tje->tij", grads, c, grads) * vol[:, None, None]


def p1_mass(vol, coef=1.0):
    kind, c = _as_tensor(coef, vol.shape[0])
    if kind != "scalar":
        raise ValueError("nodal mass coefficient must be scalar")
    return MREF[None] * (vol * c)[:, None, None]


def edge_gradient_coupling(vol, u, grads):
    """``int w_e . grad l_n`` per tet, shape (nt, 6, 4)."""
    return np.einsum("tekd,tnd->ten", u, grads) * (vol / 4.0)[:, None, None]


def p1_load(vol, grads, vec):
    """``int v . grad l_n`` for a per-tet constant vector ``v`` (nt, 3)."""
    return np.einsum("td,tnd->tn", vec, grads) * vol[:, None]


def whitney_load(vol, u, vec):
    """``int v . w_i`` for a per-tet constant vector ``v`` (nt, 3)."""
    return np.einsum("tikd,td->ti", u, vec) * (vol / 4.0)[:, None]


def curl_load(vol, curls, vec):
    """``int v . curl w_i`` for a per-tet constant vector ``v`` (nt, 3)."""
    return np.einsum("tid,td->ti", curls, vec) * vol[:, None]


# ---------------------------------------------------------------- surfaces

def triangle_geometry(tri):
    """Areas (nf,) and in-plane barycentric gradients (nf, 3, 3) of triangles."""
    e = np.stack([tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]], axis=2)  # (nf, 3, 2)
    g = np.einsum("fdi,fdj->fij", e, e)
    area = 0.5 * np.sqrt(np.linalg.det(g))
    grads = np.empty((tri.shape[0], 3, 3))
    grads[:, 1:] = np.einsum("fdi,fij->fjd", e, np.linalg.inv(g))
    grads[:, 0] = -grads[:, 1] - grads[:, 2]
    return area, grads


def triangle_whitney1(grads):
    u = np.zeros(grads.shape[:1] + (3, 3, 3))
    for e, (a, b) in enumerate(TRI_EDGES):
        u[:, e, a] = grads[:, b]
        u[:, e, b] = -grads[:, a]
    return u


def tangential_mass(area, u):
    """``int w_i . w_j`` over each triangle with surface Whitney functions."""
    return np.einsum("fikd,kl,fjld->fij", u, MREF_TRI, u, optimize=True) * area[:, None, None]


# degree-4 six-point rule on the reference triangle (barycentric points)
_A, _B = 0.445948490915965, 0.091576213509771
TRI_QUAD_POINTS = np.array([
    [1 - 2 * _A, _A, _A], [_A, 1 - 2 * _A, _A], [_A, _A, 1 - 2 * _A],
    [1 - 2 * _B, _B, _B], [_B, 1 - 2 * _B, _B], [_B, _B, 1 - 2 * _B],
])
TRI_QUAD_WEIGHTS = np.array([0.223381589678011] * 3 + [0.109951743655322] * 3)
