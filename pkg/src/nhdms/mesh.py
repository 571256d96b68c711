"""Structured tetrahedral meshes of boxes, region tagging and periodic maps.

Every hexahedral grid cell is split into six Kuhn tetrahedra that share the
main diagonal. Vertices are numbered lexicographically with the x index
running fastest, and tetrahedron ``6 * cube + p`` is the simplex of cube
``cube`` selected by axis permutation ``p``. Every tet lists its vertices
in ascending id order. That fixes the orientation of every local edge and
face to the global low-to-high convention, so Whitney bases never need sign
corrections; volumes are taken as absolute determinants.
"""

from __future__ import annotations

import hashlib
import itertools
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .model import HOST, METAL, VACUUM

PERMUTATIONS = np.array(list(itertools.permutations(range(3))), dtype=np.int64)
LOCAL_EDGES = np.array([[0, 1], [0, 2], [0, 3], [1, 2], [1, 3], [2, 3]])
LOCAL_FACES = np.array([[1, 2, 3], [0, 2, 3], [0, 1, 3], [0, 1, 2]])
# local edge numbers of the three edges of each local face, in the order
# (a, b), (a, c), (b, c) of the sorted face vertices
FACE_EDGES = np.array([[3, 4, 5], [1, 2, 5], [0, 2, 4], [0, 1, 3]])

_PERM_CODE = np.full(27, -1, dtype=np.int64)
for _p, (_a, _b, _c) in enumerate(PERMUTATIONS):
    _PERM_CODE[9 * _a + 3 * _b + _c] = _p


@dataclass(frozen=True)
class StructuredGrid:
    """Integer lattice behind a box mesh.

    Attributes:
        origin: Coordinates of vertex index (0, 0, 0).
        spacing: Grid step per axis.
        shape: Number of cells per axis.
        index: Integer lattice index of every vertex, shape (nv, 3).
    """

    origin: np.ndarray
    spacing: np.ndarray
    shape: tuple
    index: np.ndarray


@dataclass(frozen=True)
class Sphere:
    """Closed ball in reference-cell coordinates."""

    center: tuple
    radius: float

    def contains(self, y: np.ndarray) -> np.ndarray:
        d2 = np.sum((y - np.asarray(self.center)) ** 2, axis=-1)
        return d2 <= self.radius ** 2 * (1 + 1e-12)

    def clearance(self, lengths) -> float:
        c = np.asarray(self.center, float)
        return float(min(np.min(c), np.min(np.asarray(lengths) - c)) - self.radius)

    def volume(self) -> float:
        return 4.0 / 3.0 * np.pi * self.radius ** 3


@dataclass(frozen=True)
class Box:
    """Closed axis-aligned box in reference-cell coordinates."""

    lo: tuple
    hi: tuple

    def contains(self, y: np.ndarray) -> np.ndarray:
        tol = 1e-12 * max(1.0, float(np.max(np.abs(self.hi))))
        return np.all((y >= np.asarray(self.lo) - tol) & (y <= np.asarray(self.hi) + tol), axis=-1)

    def clearance(self, lengths) -> float:
        lo, hi = np.asarray(self.lo, float), np.asarray(self.hi, float)
        return float(min(np.min(lo), np.min(np.asarray(lengths) - hi)))

    def volume(self) -> float:
        return float(np.prod(np.asarray(self.hi) - np.asarray(self.lo)))


@dataclass(frozen=True)
class ArrayGeometry:
    """Periodic array of identical inclusions inside a padded box.

    The reference cell ``Y = (0, l1) x (0, l2) x (0, l3)`` holds one
    inclusion. The array region ``omega_s`` is ``counts`` copies of the cell
    scaled by ``eta`` with its lower corner at the origin, and the truncated
    domain ``omega`` adds a vacuum layer of thickness ``padding``.
    """

    inclusion: Sphere | Box
    counts: tuple = (1, 1, 1)
    eta: float = 1.0
    cell_lengths: tuple = (1.0, 1.0, 1.0)
    padding: float = 0.0

    def __post_init__(self):
        if min(self.counts) < 1:
            raise ValueError("array counts must be positive")
        if self.eta <= 0 or min(self.cell_lengths) <= 0 or self.padding < 0:
            raise ValueError("lengths must be positive")
        if not self.inclusion.clearance(self.cell_lengths) > 0:
            raise ValueError("inclusion must lie strictly inside the reference cell")

    @property
    def cell_size(self) -> np.ndarray:
        """Physical edge lengths of one periodicity cell."""
        return self.eta * np.asarray(self.cell_lengths, float)

    @property
    def n_particles(self) -> int:
        return int(np.prod(self.counts))

    @property
    def omega_s(self) -> tuple:
        return np.zeros(3), self.cell_size * np.asarray(self.counts)

    @property
    def omega(self) -> tuple:
        lo, hi = self.omega_s
        return lo - self.padding, hi + self.padding

    def particle_cell(self, k: int) -> np.ndarray:
        n1, n2, _ = self.counts
        return np.array([k % n1, (k // n1) % n2, k // (n1 * n2)])


class TetMesh:
    """Conforming tetrahedral mesh with lazily built topology.

    Args:
        points: Vertex coordinates, shape (nv, 3).
        tets: Vertex ids per tet in ascending order, shape (nt, 4).
        grid: Lattice description when the mesh comes from a box.
        region: Optional per-tet region tag.
        particle: Optional per-tet particle index (-1 outside particles).
    """

    def __init__(self, points, tets, grid: StructuredGrid | None = None,
                 region=None, particle=None):
        self.points = np.ascontiguousarray(points, dtype=float)
        self.tets = np.ascontiguousarray(tets, dtype=np.int64)
        if self.tets.ndim != 2 or self.tets.shape[1] != 4:
            raise ValueError("tets must have shape (nt, 4)")
        if np.any(np.diff(self.tets, axis=1) <= 0):
            raise ValueError("tet vertex ids must be strictly ascending")
        self.grid = grid
        self.region = None if region is None else np.asarray(region, dtype=np.int8)
        self.particle = None if particle is None else np.asarray(particle, dtype=np.int64)

    def with_tags(self, region, particle=None) -> "TetMesh":
        """Copy sharing geometry and already computed topology."""
        other = TetMesh.__new__(TetMesh)
        other.__dict__.update(self.__dict__)
        other.region = np.asarray(region, dtype=np.int8)
        other.particle = None if particle is None else np.asarray(particle, dtype=np.int64)
        return other

    @property
    def n_vertices(self) -> int:
        return self.points.shape[0]

    @property
    def n_tets(self) -> int:
        return self.tets.shape[0]

    @property
    def n_edges(self) -> int:
        return self.edges.shape[0]

    @property
    def n_faces(self) -> int:
        return self.faces.shape[0]

    def _edge_keys(self, pairs):
        return pairs[..., 0] * self.n_vertices + pairs[..., 1]

    def _face_keys(self, triples):
        nv = self.n_vertices
        return (triples[..., 0] * nv + triples[..., 1]) * nv + triples[..., 2]

    @cached_property
    def _edge_topology(self):
        keys = self._edge_keys(self.tets[:, LOCAL_EDGES])
        uniq, inv = np.unique(keys.ravel(), return_inverse=True)
        edges = np.stack([uniq // self.n_vertices, uniq % self.n_vertices], axis=1)
        return uniq, edges, inv.reshape(-1, 6)

    @cached_property
    def _face_topology(self):
        keys = self._face_keys(self.tets[:, LOCAL_FACES])
        uniq, inv = np.unique(keys.ravel(), return_inverse=True)
        nv = self.n_vertices
        faces = np.stack([uniq // (nv * nv), (uniq // nv) % nv, uniq % nv], axis=1)
        return uniq, faces, inv.reshape(-1, 4)

    @property
    def edges(self) -> np.ndarray:
        """Unique edges as sorted vertex pairs, shape (ne, 2)."""
        return self._edge_topology[1]

    @property
    def tet_edges(self) -> np.ndarray:
        """Global edge id of each local edge, shape (nt, 6)."""
        return self._edge_topology[2]

    @property
    def faces(self) -> np.ndarray:
        """Unique faces as sorted vertex triples, shape (nf, 3)."""
        return self._face_topology[1]

    @property
    def tet_faces(self) -> np.ndarray:
        """Global face id of local face ``i`` (opposite vertex ``i``)."""
        return self._face_topology[2]

    def edge_ids(self, pairs) -> np.ndarray:
        """Global ids of edges given as vertex pairs (any order)."""
        pairs = np.sort(np.asarray(pairs, dtype=np.int64), axis=-1)
        return _lookup(self._edge_topology[0], self._edge_keys(pairs), "edge")

    def face_ids(self, triples) -> np.ndarray:
        triples = np.sort(np.asarray(triples, dtype=np.int64), axis=-1)
        return _lookup(self._face_topology[0], self._face_keys(triples), "face")

    @cached_property
    def face_edges(self) -> np.ndarray:
        """Edges (a, b), (a, c), (b, c) of every sorted face (a, b, c)."""
        f = self.faces
        return self.edge_ids(np.stack([f[:, [0, 1]], f[:, [0, 2]], f[:, [1, 2]]], axis=1))

    @cached_property
    def face_tets(self) -> np.ndarray:
        """Adjacent tets of every face, shape (nf, 2), -1 where absent."""
        flat = self.tet_faces.ravel()
        order = np.argsort(flat, kind="stable")
        counts = np.bincount(flat, minlength=self.n_faces)
        if counts.max() > 2:
            raise ValueError("non-manifold mesh: a face has more than two tets")
        start = np.concatenate([[0], np.cumsum(counts)[:-1]])
        out = np.full((self.n_faces, 2), -1, dtype=np.int64)
        tet_of = order // 4
        out[:, 0] = tet_of[start]
        two = counts == 2
        out[two, 1] = tet_of[start[two] + 1]
        return out

    @cached_property
    def volumes(self) -> np.ndarray:
        p = self.points[self.tets]
        d = p[:, 1:] - p[:, :1]
        return np.abs(np.linalg.det(d)) / 6.0

    @cached_property
    def barycenters(self) -> np.ndarray:
        return self.points[self.tets].mean(axis=1)

    def boundary_faces(self, mask=None) -> np.ndarray:
        """Faces on the boundary of the union of the tets selected by ``mask``.

        Without a mask this is the boundary of the whole mesh.
        """
        ft = self.face_tets
        if mask is None:
            return np.flatnonzero(ft[:, 1] < 0)
        mask = np.asarray(mask, bool)
        inside = np.where(ft >= 0, mask[np.maximum(ft, 0)], False)
        return np.flatnonzero(inside.sum(axis=1) == 1)

    def interior_faces(self, mask) -> np.ndarray:
        """Faces with two adjacent tets, both selected by ``mask``."""
        ft = self.face_tets
        mask = np.asarray(mask, bool)
        both = (ft[:, 1] >= 0) & mask[ft[:, 0]] & mask[np.maximum(ft[:, 1], 0)]
        return np.flatnonzero(both)

    def edges_of_faces(self, faces) -> np.ndarray:
        return np.unique(self.face_edges[faces])

    def vertices_of_faces(self, faces) -> np.ndarray:
        return np.unique(self.faces[faces])

    def edges_in(self, mask) -> np.ndarray:
        """Edges touched by the selected tets."""
        return np.unique(self.tet_edges[np.asarray(mask, bool)])

    def face_normals(self, faces) -> np.ndarray:
        """Unit normals of the given boundary faces pointing out of their tet."""
        faces = np.asarray(faces)
        tri = self.points[self.faces[faces]]
        n = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
        n /= np.linalg.norm(n, axis=1)[:, None]
        owner = self.face_tets[faces, 0]
        inner = self.barycenters[owner]
        flip = np.einsum("fd,fd->f", n, tri[:, 0] - inner) < 0
        n[flip] *= -1
        return n

    def face_areas(self, faces=None) -> np.ndarray:
        tri = self.points[self.faces if faces is None else self.faces[faces]]
        return 0.5 * np.linalg.norm(np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0]), axis=1)

    def locate(self, x) -> np.ndarray:
        """Tet containing each point (structured meshes only).

        Points on shared faces resolve to one of the candidate tets; points
        outside the box are clamped to the nearest boundary cube.
        """
        if self.grid is None:
            raise ValueError("point location needs a structured mesh")
        g = self.grid
        f = (np.asarray(x, float) - g.origin) / g.spacing
        shape = np.asarray(g.shape)
        cube = np.clip(np.floor(f).astype(np.int64), 0, shape - 1)
        u = f - cube
        perm = np.argsort(-u, axis=1, kind="stable")
        code = 9 * perm[:, 0] + 3 * perm[:, 1] + perm[:, 2]
        cube_id = cube[:, 0] + shape[0] * (cube[:, 1] + shape[1] * cube[:, 2])
        return 6 * cube_id + _PERM_CODE[code]

    def fingerprint(self) -> str:
        """Hash of connectivity and coordinates."""
        h = hashlib.sha256()
        h.update(self.tets.tobytes())
        h.update(self.points.tobytes())
        if self.region is not None:
            h.update(self.region.tobytes())
        return h.hexdigest()[:16]


def _lookup(sorted_keys, keys, what):
    keys = np.asarray(keys)
    pos = np.searchsorted(sorted_keys, keys)
    pos = np.minimum(pos, sorted_keys.size - 1)
    if not np.all(sorted_keys[pos] == keys):
        raise KeyError(f"{what} not present in mesh")
    return pos


def build_box_mesh(lo, hi, resolution) -> TetMesh:
    """Kuhn-subdivided tetrahedral mesh of the box ``[lo, hi]``.

    Args:
        lo: Lower corner (3,).
        hi: Upper corner (3,).
        resolution: Hexahedral cells per axis (3,) or a single int.

    Returns:
        Mesh with ``6 * prod(resolution)`` tets.
    """
    lo = np.asarray(lo, float)
    hi = np.asarray(hi, float)
    res = np.broadcast_to(np.asarray(resolution, dtype=np.int64), (3,)).copy()
    if np.any(res < 1):
        raise ValueError("resolution must be at least 1 per axis")
    if not np.all(hi > lo):
        raise ValueError("box extents must be positive")
    n1, n2, n3 = res
    m1, m2 = n1 + 1, n2 + 1
    k, j, i = np.meshgrid(np.arange(n3 + 1), np.arange(n2 + 1), np.arange(n1 + 1), indexing="ij")
    index = np.stack([i.ravel(), j.ravel(), k.ravel()], axis=1)
    spacing = (hi - lo) / res
    points = lo + index * spacing

    ck, cj, ci = np.meshgrid(np.arange(n3), np.arange(n2), np.arange(n1), indexing="ij")
    base = (ci + m1 * (cj + m2 * ck)).ravel()
    step = np.array([1, m1, m1 * m2])
    diag = step.sum()
    tets = np.empty((base.size, 6, 4), dtype=np.int64)
    for p, (a, b, _) in enumerate(PERMUTATIONS):
        tets[:, p, 0] = base
        tets[:, p, 1] = base + step[a]
        tets[:, p, 2] = base + step[a] + step[b]
        tets[:, p, 3] = base + diag
    grid = StructuredGrid(origin=lo, spacing=spacing, shape=tuple(int(r) for r in res), index=index)
    return TetMesh(points, tets.reshape(-1, 4), grid=grid)


def _commensurate(length, h, what):
    n = length / h
    m = int(round(n))
    if abs(n - m) > 1e-9 * max(1.0, n):
        raise ValueError(f"{what} ({length}) is not a multiple of the grid step {h}")
    return m


def mesh_array(geom: ArrayGeometry, cell_resolution: int, region_only: bool = False,
               inclusions: bool = True) -> TetMesh:
    """Tagged mesh of the padded array domain.

    Args:
        geom: Array description.
        cell_resolution: Grid cells per periodicity cell edge.
        region_only: Mesh only the array region, ignoring the padding.
        inclusions: Tag metal inclusions (otherwise only the array region).

    Returns:
        Tagged mesh whose grid is aligned with the periodicity lattice.
    """
    h = geom.cell_size / cell_resolution
    if region_only:
        pad = np.zeros(3, dtype=np.int64)
    else:
        pad = np.array([_commensurate(geom.padding, hd, "padding") for hd in h])
    lo = -pad * h
    res = np.asarray(geom.counts) * cell_resolution + 2 * pad
    mesh = build_box_mesh(lo, lo + res * h, res)
    return tag_subdomains(mesh, geom, inclusions)


def tag_subdomains(mesh: TetMesh, geom: ArrayGeometry, inclusions: bool = True) -> TetMesh:
    """Tag every tet as vacuum, host or metal by its barycenter.

    With ``inclusions=False`` only the array region is marked (as host),
    which is all a homogenized solve needs.

    Raises:
        ValueError: If some particle contains no tet.
    """
    x = mesh.barycenters
    lo, hi = geom.omega_s
    size = geom.cell_size
    tol = 1e-12 * float(np.max(hi))
    in_s = np.all((x >= lo - tol) & (x <= hi + tol), axis=1)
    cell = np.clip(np.floor((x - lo) / size).astype(np.int64), 0, np.asarray(geom.counts) - 1)
    y = (x - lo - cell * size) / geom.eta
    region = np.full(mesh.n_tets, VACUUM, dtype=np.int8)
    region[in_s] = HOST
    if not inclusions:
        return mesh.with_tags(region, np.full(mesh.n_tets, -1, dtype=np.int64))
    metal = in_s & geom.inclusion.contains(y)
    region[metal] = METAL
    n1, n2, _ = geom.counts
    particle = np.full(mesh.n_tets, -1, dtype=np.int64)
    particle[metal] = (cell[:, 0] + n1 * (cell[:, 1] + n2 * cell[:, 2]))[metal]
    counts = np.bincount(particle[metal], minlength=geom.n_particles)
    if np.any(counts == 0):
        raise ValueError(f"particles {np.flatnonzero(counts == 0).tolist()} are not resolved "
                         "by any element; refine the mesh")
    return mesh.with_tags(region, particle)


def cell_mesh(geom: ArrayGeometry, resolution: int, reference: bool = True) -> TetMesh:
    """Tagged mesh of one periodicity cell.

    With ``reference`` the mesh lives on ``Y`` itself, otherwise on the
    physical cell ``eta * Y``. Either way the tet numbering matches the
    per-cell numbering of :func:`mesh_array` at the same resolution.
    """
    lengths = np.asarray(geom.cell_lengths, float)
    scale = 1.0 if reference else geom.eta
    mesh = build_box_mesh(np.zeros(3), scale * lengths, resolution)
    y = mesh.barycenters / scale
    metal = geom.inclusion.contains(y)
    region = np.where(metal, METAL, HOST).astype(np.int8)
    if not metal.any():
        raise ValueError("inclusion not resolved by the cell mesh")
    return mesh.with_tags(region, np.where(metal, 0, -1))


@dataclass(frozen=True)
class DofMaps:
    """Periodic identification of nodes, edges and faces of a cell mesh.

    Each ``*_master`` array maps an entity to its representative on the
    minimum-coordinate faces (representatives map to themselves).
    Orientations agree because translations preserve the vertex order.
    """

    node_master: np.ndarray
    edge_master: np.ndarray
    face_master: np.ndarray

    def master(self, kind: str) -> np.ndarray:
        return {"node": self.node_master, "edge": self.edge_master, "face": self.face_master}[kind]

    def n_free(self, kind: str) -> int:
        return int(np.unique(self.master(kind)).size)


def build_periodic_pairs(mesh: TetMesh) -> DofMaps:
    """Identify entities on opposite faces of a box mesh.

    An entity is shifted by one period along every axis on which all of
    its vertices sit on the maximum face. A single pass resolves corner
    and edge chains because the shifted entity lies on the minimum face
    of each shifted axis.
    """
    if mesh.grid is None:
        raise ValueError("periodic maps need a structured mesh")
    g = mesh.grid
    shape = np.asarray(g.shape)
    idx = g.index
    stride = np.array([1, shape[0] + 1, (shape[0] + 1) * (shape[1] + 1)])

    def shifted(entities):
        vi = idx[entities]  # (m, k, 3)
        on_max = np.all(vi == shape, axis=1)  # (m, 3)
        vi = vi - on_max[:, None, :] * shape
        if np.any(vi < 0):
            raise ValueError("non-matching periodic boundary")
        return vi @ stride

    node_master = shifted(np.arange(mesh.n_vertices)[:, None])[:, 0]
    try:
        edge_master = mesh.edge_ids(shifted(mesh.edges))
        face_master = mesh.face_ids(shifted(mesh.faces))
    except KeyError as exc:
        raise ValueError("non-matching periodic boundary discretization") from exc
    return DofMaps(node_master=node_master, edge_master=edge_master, face_master=face_master)


@dataclass(frozen=True)
class ParticleSubmesh:
    """Mesh of one particle with its embedding into the parent mesh.

    Attributes:
        mesh: Local mesh; coordinates are lattice offsets from the lower
            corner of the particle's periodicity cell.
        k: Particle index.
        tets: Parent tet id of every local tet.
        vertices: Parent vertex id of every local vertex.
        edges: Parent edge id of every local edge.
        faces: Parent face id of every local face.
        shift: Parent coordinates of the local origin.
    """

    mesh: TetMesh
    k: int
    tets: np.ndarray
    vertices: np.ndarray
    edges: np.ndarray
    faces: np.ndarray
    shift: np.ndarray

    @cached_property
    def boundary_faces(self) -> np.ndarray:
        return self.mesh.boundary_faces()

    @cached_property
    def boundary_edges(self) -> np.ndarray:
        return self.mesh.edges_of_faces(self.boundary_faces)


def extract_particle_submesh(mesh: TetMesh, k: int, geom: ArrayGeometry) -> ParticleSubmesh:
    """Cut out the tets of particle ``k``.

    Local vertex, tet, edge and face numbering follows the parent order,
    which is translation invariant on the lattice, so every particle yields
    the same local connectivity and bitwise identical coordinates.
    """
    if mesh.particle is None or mesh.grid is None:
        raise ValueError("extraction needs a tagged structured mesh")
    tets = np.flatnonzero(mesh.particle == k)
    if tets.size == 0:
        raise ValueError(f"particle {k} has no elements")
    verts, local = np.unique(mesh.tets[tets], return_inverse=True)
    g = mesh.grid
    lo, _ = geom.omega_s
    corner = lo + geom.particle_cell(k) * geom.cell_size
    corner_idx = np.round((corner - g.origin) / g.spacing).astype(np.int64)
    lidx = g.index[verts] - corner_idx
    points = lidx * g.spacing
    sub_grid = StructuredGrid(origin=np.zeros(3), spacing=g.spacing, shape=g.shape, index=lidx)
    sub = TetMesh(points, local.reshape(-1, 4), grid=None,
                  region=np.full(tets.size, METAL), particle=np.zeros(tets.size, dtype=np.int64))
    sub.lattice = sub_grid
    edges = mesh.edge_ids(verts[sub.edges])
    faces = mesh.face_ids(verts[sub.faces])
    return ParticleSubmesh(mesh=sub, k=k, tets=tets, vertices=verts, edges=edges,
                           faces=faces, shift=g.origin + corner_idx * g.spacing)
