"""Global sparse assembly of the bilinear forms used by every solver.

All matrices are assembled over the full entity numbering of a mesh
(vertices, edges or faces); restricting to a subdomain only limits which
tets contribute. Unknown subsets are selected afterwards with
:mod:`nhdms.fem.constraints`.
"""

from __future__ import annotations

from types import SimpleNamespace

import numpy as np
import scipy.sparse as sp

from . import kernels as K


def element_data(mesh) -> SimpleNamespace:
    """Per-tet geometry and basis tables, cached on the mesh."""
    cached = mesh.__dict__.get("_fem_data")
    if cached is not None:
        return cached
    vol, grads = K.tet_geometry(mesh.points, mesh.tets)
    data = SimpleNamespace(vol=vol, grads=grads, w1=K.whitney1(grads), w2=K.whitney2(grads),
                           curls=K.edge_curls(grads), divs=K.face_divs(grads))
    mesh.__dict__["_fem_data"] = data
    return data


def _select(tets, nt):
    if tets is None:
        return np.arange(nt)
    tets = np.asarray(tets)
    return np.flatnonzero(tets) if tets.dtype == bool else tets


def _coef(coef, sel, nt):
    c = np.asarray(coef)
    if c.ndim == 0 or c.shape == (3, 3):
        return c
    if c.shape[0] != nt:
        raise ValueError(f"coefficient has {c.shape[0]} entries for {nt} elements")
    return c[sel]


def assemble_blocks(rows, cols, blocks, shape) -> sp.csr_matrix:
    """Sum element blocks ``blocks[t, i, j]`` into ``(rows[t, i], cols[t, j])``."""
    nt, na, nb = blocks.shape
    r = np.broadcast_to(rows[:, :, None], (nt, na, nb)).ravel()
    c = np.broadcast_to(cols[:, None, :], (nt, na, nb)).ravel()
    return sp.coo_matrix((blocks.ravel(), (r, c)), shape=shape).tocsr()


def assemble_vector(rows, values, n) -> np.ndarray:
    """Sum element vectors into a global one."""
    rows, values = rows.ravel(), values.ravel()
    if np.iscomplexobj(values):
        return (np.bincount(rows, values.real, minlength=n)
                + 1j * np.bincount(rows, values.imag, minlength=n))
    return np.bincount(rows, values, minlength=n)


def curlcurl_matrix(mesh, coef=1.0, tets=None):
    """``(C curl u, curl v)`` on edge functions."""
    d, sel = element_data(mesh), _select(tets, mesh.n_tets)
    blocks = K.curlcurl(d.vol[sel], d.curls[sel], _coef(coef, sel, mesh.n_tets))
    te = mesh.tet_edges[sel]
    return assemble_blocks(te, te, blocks, (mesh.n_edges, mesh.n_edges))


def edge_mass_matrix(mesh, coef=1.0, tets=None):
    """``(C u, v)`` on edge functions."""
    d, sel = element_data(mesh), _select(tets, mesh.n_tets)
    blocks = K.mass(d.vol[sel], d.w1[sel], d.w1[sel], _coef(coef, sel, mesh.n_tets))
    te = mesh.tet_edges[sel]
    return assemble_blocks(te, te, blocks, (mesh.n_edges, mesh.n_edges))


def face_mass_matrix(mesh, coef=1.0, tets=None):
    """``(C u, v)`` on face functions."""
    d, sel = element_data(mesh), _select(tets, mesh.n_tets)
    blocks = K.mass(d.vol[sel], d.w2[sel], d.w2[sel], _coef(coef, sel, mesh.n_tets))
    tf = mesh.tet_faces[sel]
    return assemble_blocks(tf, tf, blocks, (mesh.n_faces, mesh.n_faces))


def divdiv_matrix(mesh, coef=1.0, tets=None):
    """``(c div u, div v)`` on face functions."""
    d, sel = element_data(mesh), _select(tets, mesh.n_tets)
    blocks = K.divdiv(d.vol[sel], d.divs[sel], _coef(coef, sel, mesh.n_tets))
    tf = mesh.tet_faces[sel]
    return assemble_blocks(tf, tf, blocks, (mesh.n_faces, mesh.n_faces))


def edge_face_matrix(mesh, coef=1.0, tets=None):
    """``(c w_e, phi_f)``: rows are edges, columns faces."""
    d, sel = element_data(mesh), _select(tets, mesh.n_tets)
    blocks = K.mass(d.vol[sel], d.w1[sel], d.w2[sel], _coef(coef, sel, mesh.n_tets))
    return assemble_blocks(mesh.tet_edges[sel], mesh.tet_faces[sel], blocks,
                           (mesh.n_edges, mesh.n_faces))


def node_stiffness_matrix(mesh, coef=1.0, tets=None):
    d, sel = element_data(mesh), _select(tets, mesh.n_tets)
    blocks = K.p1_stiffness(d.vol[sel], d.grads[sel], _coef(coef, sel, mesh.n_tets))
    t = mesh.tets[sel]
    return assemble_blocks(t, t, blocks, (mesh.n_vertices, mesh.n_vertices))


def node_mass_matrix(mesh, coef=1.0, tets=None):
    d, sel = element_data(mesh), _select(tets, mesh.n_tets)
    blocks = K.p1_mass(d.vol[sel], _coef(coef, sel, mesh.n_tets))
    t = mesh.tets[sel]
    return assemble_blocks(t, t, blocks, (mesh.n_vertices, mesh.n_vertices))


def edge_node_matrix(mesh, tets=None):
    """``(w_e, grad l_n)``: rows are edges, columns vertices."""
    d, sel = element_data(mesh), _select(tets, mesh.n_tets)
    blocks = K.edge_gradient_coupling(d.vol[sel], d.w1[sel], d.grads[sel])
    return assemble_blocks(mesh.tet_edges[sel], mesh.tets[sel], blocks,
                           (mesh.n_edges, mesh.n_vertices))


def gradient_matrix(mesh) -> sp.csr_matrix:
    """Discrete gradient: edge coefficients of the gradient of a nodal field."""
    e = mesh.edges
    n = e.shape[0]
    rows = np.repeat(np.arange(n), 2)
    cols = e.ravel()
    vals = np.tile([-1.0, 1.0], n)
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, mesh.n_vertices))


def node_load(mesh, vec, tets=None):
    """``(v, grad l_n)`` for a per-tet constant vector field ``v``."""
    d, sel = element_data(mesh), _select(tets, mesh.n_tets)
    vals = K.p1_load(d.vol[sel], d.grads[sel], np.asarray(vec)[sel])
    return assemble_vector(mesh.tets[sel], vals, mesh.n_vertices)


def edge_load(mesh, vec, tets=None):
    """``(v, w_e)`` for a per-tet constant vector field ``v``."""
    d, sel = element_data(mesh), _select(tets, mesh.n_tets)
    vals = K.whitney_load(d.vol[sel], d.w1[sel], np.asarray(vec)[sel])
    return assemble_vector(mesh.tet_edges[sel], vals, mesh.n_edges)


def edge_curl_load(mesh, vec, tets=None):
    """``(v, curl w_e)`` for a per-tet constant vector field ``v``."""
    d, sel = element_data(mesh), _select(tets, mesh.n_tets)
    vals = K.curl_load(d.vol[sel], d.curls[sel], np.asarray(vec)[sel])
    return assemble_vector(mesh.tet_edges[sel], vals, mesh.n_edges)


def _triangles(mesh, faces):
    faces = np.asarray(faces)
    tri = mesh.points[mesh.faces[faces]]
    area, grads = K.triangle_geometry(tri)
    return faces, tri, area, grads


def impedance_matrix(mesh, faces=None):
    """``<u_T, v_T>`` over the given boundary faces (default: all of them)."""
    faces = mesh.boundary_faces() if faces is None else faces
    faces, _, area, grads = _triangles(mesh, faces)
    blocks = K.tangential_mass(area, K.triangle_whitney1(grads))
    fe = mesh.face_edges[faces]
    return assemble_blocks(fe, fe, blocks, (mesh.n_edges, mesh.n_edges))


def boundary_load(mesh, func, faces=None):
    """``<g, w_e>`` over boundary faces with a degree-4 triangle rule.

    Args:
        mesh: Mesh.
        func: Callable ``g(x, n)`` returning (m, 3) values at points ``x``
            with outward unit normals ``n``.
        faces: Boundary faces (default: the whole mesh boundary).
    """
    faces = mesh.boundary_faces() if faces is None else faces
    faces, tri, area, grads = _triangles(mesh, faces)
    normals = mesh.face_normals(faces)
    nq = K.TRI_QUAD_WEIGHTS.size
    lam = K.TRI_QUAD_POINTS  # (nq, 3)
    x = np.einsum("qk,fkd->fqd", lam, tri)
    g = np.asarray(func(x.reshape(-1, 3), np.repeat(normals, nq, axis=0))).reshape(-1, nq, 3)
    vals = np.zeros((faces.size, 3), dtype=np.result_type(g.dtype, np.float64))
    for e, (a, b) in enumerate(K.TRI_EDGES):
        w = lam[None, :, a, None] * grads[:, None, b] - lam[None, :, b, None] * grads[:, None, a]
        vals[:, e] = np.einsum("q,fqd,fqd->f", K.TRI_QUAD_WEIGHTS, g, w) * area
    return assemble_vector(mesh.face_edges[faces], vals, mesh.n_edges)


_FORMS = {
    "curlcurl": curlcurl_matrix,
    "mass_edge": edge_mass_matrix,
    "mass_face": face_mass_matrix,
    "divdiv": divdiv_matrix,
    "coupling_edge_face": edge_face_matrix,
    "stiffness_node": node_stiffness_matrix,
    "mass_node": node_mass_matrix,
}


def assemble_form(mesh, form: str, coef=1.0, tets=None, faces=None, func=None):
    """Assemble one named form.

    ``form`` is one of ``curlcurl``, ``mass_edge``, ``mass_face``,
    ``divdiv``, ``coupling_edge_face``, ``stiffness_node``, ``mass_node``,
    ``impedance_boundary`` or ``load_from_field`` (which needs ``func``).
    """
    if form in _FORMS:
        return _FORMS[form](mesh, coef, tets)
    if form == "impedance_boundary":
        return impedance_matrix(mesh, faces)
    if form == "load_from_field":
        if func is None:
            raise ValueError("load_from_field needs a field callable")
        return boundary_load(mesh, func, faces)
    raise ValueError(f"unknown form {form!r}")
