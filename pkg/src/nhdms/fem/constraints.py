"""Constraint handling: periodic folding, essential elimination, zero mean.

A :class:`SparseSystem` keeps the reduced matrix together with the affine
map ``x_full = T @ x_reduced + offset`` back to the original unknowns, so
constraints compose in any order (zero-mean last, since it appends a
multiplier).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import scipy.sparse as sp


@dataclass(frozen=True)
class SparseSystem:
    """Linear system with the map back to the unconstrained unknowns.

    Attributes:
        matrix: Reduced square matrix.
        rhs: Reduced right-hand side, shape (n,) or (n, k).
        transform: Sparse map from reduced to full unknowns.
        offset: Full-length vector added after the transform.
        n_extra: Number of trailing Lagrange multipliers in the reduced vector.
    """

    matrix: sp.csr_matrix
    rhs: np.ndarray
    transform: sp.csr_matrix
    offset: np.ndarray
    n_extra: int = 0

    @classmethod
    def from_matrix(cls, matrix, rhs) -> "SparseSystem":
        matrix = sp.csr_matrix(matrix)
        n = matrix.shape[0]
        if matrix.shape != (n, n):
            raise ValueError("system matrix must be square")
        rhs = np.asarray(rhs)
        if rhs.shape[0] != n:
            raise ValueError("right-hand side does not match the matrix")
        return cls(matrix, rhs, sp.identity(n, format="csr"), np.zeros(n))

    @property
    def n_free(self) -> int:
        return self.matrix.shape[0] - self.n_extra

    def expand(self, x: np.ndarray) -> np.ndarray:
        """Full unknowns from a reduced solution (multipliers dropped)."""
        x = np.asarray(x)[: self.n_free]
        out = self.transform @ x
        off = self.offset if x.ndim == 1 else self.offset[:, None]
        return out + off

    def multipliers(self, x: np.ndarray) -> np.ndarray:
        return np.asarray(x)[self.n_free:]


def fold_matrix(master: np.ndarray) -> tuple[sp.csr_matrix, np.ndarray]:
    """0/1 matrix mapping representatives to all entities.

    Returns:
        ``(P, reps)`` with ``P[i, j] = 1`` iff ``master[i] == reps[j]``.
    """
    master = np.asarray(master)
    if np.any(master[master] != master):
        raise ValueError("periodic map is not idempotent")
    reps, col = np.unique(master, return_inverse=True)
    n = master.size
    p = sp.csr_matrix((np.ones(n), (np.arange(n), col)), shape=(n, reps.size))
    return p, reps


def apply_periodic(system: SparseSystem, master) -> SparseSystem:
    if system.n_extra:
        raise ValueError("apply periodic constraints before zero-mean")
    p, _ = fold_matrix(master)
    if p.shape[0] != system.matrix.shape[0]:
        raise ValueError("periodic map does not match the system size")
    pt = p.T.tocsr()
    return replace(system, matrix=(pt @ system.matrix @ p).tocsr(), rhs=pt @ system.rhs,
                   transform=(system.transform @ p).tocsr())


def apply_essential(system: SparseSystem, fixed, values=None) -> SparseSystem:
    """Eliminate ``fixed`` unknowns with prescribed ``values`` (default 0).

    Raises:
        ValueError: If one unknown is fixed twice with different values.
    """
    if system.n_extra:
        raise ValueError("apply essential constraints before zero-mean")
    n = system.matrix.shape[0]
    fixed = np.asarray(fixed, dtype=np.int64)
    vals = np.zeros(fixed.size) if values is None else np.asarray(values)
    if vals.shape[0] != fixed.size:
        raise ValueError("one value per fixed unknown is required")
    order = np.argsort(fixed, kind="stable")
    fixed, vals = fixed[order], vals[order]
    dup = np.flatnonzero(np.diff(fixed) == 0)
    if np.any(vals[dup] != vals[dup + 1]):
        raise ValueError(f"conflicting constraints on unknown {int(fixed[dup[0]])}")
    keep = np.ones(fixed.size, bool)
    keep[dup + 1] = False
    fixed, vals = fixed[keep], vals[keep]
    free = np.setdiff1d(np.arange(n), fixed)
    a = system.matrix
    rhs = system.rhs[free]
    if np.any(vals != 0):
        lift = a[free][:, fixed] @ vals
        rhs = rhs - (lift if rhs.ndim == 1 else lift[:, None])
    offset = system.offset + system.transform[:, fixed] @ vals
    return replace(system, matrix=a[free][:, free].tocsr(), rhs=rhs,
                   transform=system.transform[:, free].tocsr(), offset=offset)


def apply_zero_mean(system: SparseSystem, weights) -> SparseSystem:
    """Append a multiplier enforcing ``weights . x_full = 0``.

    ``weights`` are given on the full unknowns and pulled back through the
    current transform.
    """
    w = system.transform.T @ np.asarray(weights, float)
    n = system.matrix.shape[0]
    col = sp.csr_matrix(np.concatenate([w, np.zeros(n - w.size)])[:, None])
    mat = sp.bmat([[system.matrix, col], [col.T, None]], format="csr")
    rhs = system.rhs
    pad = np.zeros((1,) + rhs.shape[1:], dtype=rhs.dtype)
    return replace(system, matrix=mat, rhs=np.concatenate([rhs, pad]), n_extra=system.n_extra + 1)


def apply_constraints(system: SparseSystem, kind: str, **kwargs) -> SparseSystem:
    """Apply one constraint kind.

    Kinds and keyword arguments:
        ``periodic``: ``master`` map from :class:`nhdms.mesh.DofMaps`.
        ``essential-zero-tangential`` / ``essential-zero-normal``: ``fixed``
        edge or face ids, optional ``values``.
        ``zero-mean``: ``weights`` on the full unknowns.
    """
    if kind == "periodic":
        return apply_periodic(system, kwargs["master"])
    if kind in ("essential-zero-tangential", "essential-zero-normal", "essential"):
        return apply_essential(system, kwargs["fixed"], kwargs.get("values"))
    if kind == "zero-mean":
        return apply_zero_mean(system, kwargs["weights"])
    raise ValueError(f"unknown constraint kind {kind!r}")


def restrict(matrix, rows, cols) -> sp.csr_matrix:
    """Submatrix ``matrix[rows][:, cols]`` in CSR form."""
    return sp.csr_matrix(matrix)[rows][:, cols].tocsr()
