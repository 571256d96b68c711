"""File output: VTK legacy meshes and fields, binary DOF vectors.

The DOF container is a small self-describing format::

    b"NHDMSDOF" | uint64 header length (LE) | JSON header | float64 LE data

Complex vectors are stored as interleaved (real, imag) pairs.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

MAGIC = b"NHDMSDOF"
VTK_TETRA = 10


def _fmt(values) -> str:
    return "\n".join(" ".join(f"{v:.9e}" for v in row) for row in np.atleast_2d(values))


def write_vtk(path, mesh, cell_vectors: dict | None = None, cell_scalars: dict | None = None,
              title: str = "nhdms") -> Path:
    """Write a VTK legacy ASCII 3.0 unstructured grid.

    Complex vector fields are split into ``REAL_<name>`` and ``IMAG_<name>``
    arrays. The region tag is always written when the mesh carries one.

    Args:
        path: Output file.
        mesh: Tetrahedral mesh.
        cell_vectors: Name -> per-tet vectors (nt, 3), real or complex.
        cell_scalars: Name -> per-tet scalars (nt,).
        title: Header line.

    Raises:
        ValueError: If an array does not have one entry per tet.
        OSError: On write failure, with the path in the message.
    """
    path = Path(path)
    nt = mesh.n_tets
    vectors = {}
    for name, v in (cell_vectors or {}).items():
        v = np.asarray(v)
        if v.shape != (nt, 3):
            raise ValueError(f"cell vector {name!r} has shape {v.shape}, expected ({nt}, 3)")
        if np.iscomplexobj(v):
            vectors[f"REAL_{name}"] = v.real
            vectors[f"IMAG_{name}"] = v.imag
        else:
            vectors[name] = v
    scalars = {}
    if mesh.region is not None:
        scalars["region"] = np.asarray(mesh.region)
    for name, s in (cell_scalars or {}).items():
        s = np.asarray(s)
        if s.shape != (nt,):
            raise ValueError(f"cell scalar {name!r} has shape {s.shape}, expected ({nt},)")
        scalars[name] = s

    lines = ["# vtk DataFile Version 3.0", title[:255], "ASCII", "DATASET UNSTRUCTURED_GRID",
             f"POINTS {mesh.n_vertices} double", _fmt(mesh.points),
             f"CELLS {nt} {5 * nt}"]
    lines += [f"4 {a} {b} {c} {d}" for a, b, c, d in mesh.tets]
    lines += [f"CELL_TYPES {nt}", "\n".join([str(VTK_TETRA)] * nt)]
    if scalars or vectors:
        lines.append(f"CELL_DATA {nt}")
    for name, s in scalars.items():
        if np.issubdtype(s.dtype, np.integer):
            lines += [f"SCALARS {name} int 1", "LOOKUP_TABLE default", "\n".join(map(str, s.tolist()))]
        else:
            lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default", _fmt(s[:, None])]
    for name, v in vectors.items():
        lines += [f"VECTORS {name} double", _fmt(v)]
    try:
        path.write_text("\n".join(lines) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path


def read_vtk(path) -> dict:
    """Parse a file written by :func:`write_vtk`.

    Returns:
        Dict with ``points``, ``tets``, ``cell_types`` and ``cell_data``.
    """
    tokens = Path(path).read_text().split("\n")
    if not tokens[0].startswith("# vtk DataFile Version"):
        raise ValueError(f"{path} is not a VTK legacy file")
    words = " ".join(tokens[4:]).split()
    out = {"cell_data": {}}
    i, n_cells = 0, 0
    while i < len(words):
        key = words[i]
        if key == "POINTS":
            n = int(words[i + 1])
            out["points"] = np.array(words[i + 3: i + 3 + 3 * n], float).reshape(n, 3)
            i += 3 + 3 * n
        elif key == "CELLS":
            n_cells, size = int(words[i + 1]), int(words[i + 2])
            conn = np.array(words[i + 3: i + 3 + size], np.int64).reshape(n_cells, 5)
            out["tets"] = conn[:, 1:]
            i += 3 + size
        elif key == "CELL_TYPES":
            n = int(words[i + 1])
            out["cell_types"] = np.array(words[i + 2: i + 2 + n], np.int64)
            i += 2 + n
        elif key == "CELL_DATA":
            i += 2
        elif key == "SCALARS":
            name, dtype = words[i + 1], words[i + 2]
            data = words[i + 6: i + 6 + n_cells]
            out["cell_data"][name] = np.array(data, np.int64 if dtype == "int" else float)
            i += 6 + n_cells
        elif key == "VECTORS":
            name = words[i + 1]
            out["cell_data"][name] = np.array(words[i + 3: i + 3 + 3 * n_cells], float).reshape(-1, 3)
            i += 3 + 3 * n_cells
        else:
            raise ValueError(f"unexpected token {key!r} in {path}")
    return out


def write_dofs(path, values, kind: str, mesh_hash: str, extra: dict | None = None) -> Path:
    """Write a DOF vector with a JSON header.

    Args:
        path: Output file.
        values: Real or complex vector.
        kind: DOF kind (``edge``, ``face``, ``node``).
        mesh_hash: Fingerprint of the mesh the DOFs refer to.
        extra: Further header entries.
    """
    path = Path(path)
    values = np.asarray(values)
    if values.ndim != 1:
        raise ValueError("DOF vectors must be one-dimensional")
    header = {"dimension": int(values.size), "kind": kind, "mesh_hash": mesh_hash,
              "complex": bool(np.iscomplexobj(values)), "byte_order": "little",
              "dtype": "float64"}
    header.update(extra or {})
    hb = json.dumps(header, sort_keys=True).encode()
    if np.iscomplexobj(values):
        data = np.column_stack([values.real, values.imag]).astype("<f8")
    else:
        data = values.astype("<f8")
    try:
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<Q", len(hb)))
            fh.write(hb)
            fh.write(data.tobytes())
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc
    return path


def read_dofs(path) -> tuple[dict, np.ndarray]:
    """Read a container written by :func:`write_dofs`."""
    raw = Path(path).read_bytes()
    if raw[:8] != MAGIC:
        raise ValueError(f"{path} is not a DOF container")
    (n,) = struct.unpack("<Q", raw[8:16])
    header = json.loads(raw[16:16 + n])
    data = np.frombuffer(raw[16 + n:], dtype="<f8")
    count = header["dimension"] * (2 if header["complex"] else 1)
    if data.size != count:
        raise ValueError(f"{path}: expected {count} values, found {data.size}")
    if header["complex"]:
        data = data[0::2] + 1j * data[1::2]
    return header, data.copy()
