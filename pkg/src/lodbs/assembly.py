"""Finite element matrices and vectors.

Bulk: bilinear Q1 elements on the uniform grid, integrated with the tensor
2x2 Gauss rule.  Boundary: P1 elements on a 1D boundary mesh.  All sparse
matrices are CSR with sorted, duplicate-free indices.  Dirichlet dofs are
removed by restricting to the free nodes.
"""

from __future__ import annotations

import math
from typing import Callable, Optional, Union

import numpy as np
import scipy.io
import scipy.sparse as sp

from .coefficients import Coefficient, integrate_coefficient
from .mesh import BoundaryMesh, BulkMesh, MeshError

Field = Union[float, Callable]

_G2 = 0.5 + 0.5 * np.array([-1.0, 1.0]) / math.sqrt(3.0)
_W2 = np.array([0.5, 0.5])


def _csr(rows, cols, vals, shape) -> sp.csr_matrix:
    A = sp.csr_matrix((vals, (rows, cols)), shape=shape)
    A.sum_duplicates()
    A.sort_indices()
    return A


def restrict(A: sp.spmatrix, rows: np.ndarray, cols: Optional[np.ndarray] = None) -> sp.csr_matrix:
    cols = rows if cols is None else cols
    A = sp.csr_matrix(A)[rows][:, cols]
    A.sort_indices()
    return A


def _q1_shape(x, y):
    """Q1 shape functions and gradients on the reference square, ccw order."""
    N = np.array([(1 - x) * (1 - y), x * (1 - y), x * y, (1 - x) * y])
    dN = np.array([[-(1 - y), -(1 - x)], [1 - y, -x], [y, x], [-y, 1 - x]])
    return N, dN


def q1_local_matrices(h: float) -> tuple[np.ndarray, np.ndarray]:
    """Element mass and stiffness (unit diffusion) of a square of side ``h``."""
    Me = np.zeros((4, 4))
    Ke = np.zeros((4, 4))
    for xi, wx in zip(_G2, _W2):
        for eta, wy in zip(_G2, _W2):
            N, dN = _q1_shape(xi, eta)
            w = wx * wy
            Me += w * h * h * np.outer(N, N)
            Ke += w * dN @ dN.T
    return Me, Ke


def _scatter_bulk(mesh: BulkMesh, local: np.ndarray) -> sp.csr_matrix:
    cells = mesh.cells
    rows = np.repeat(cells, 4, axis=1).ravel()
    cols = np.tile(cells, (1, 4)).ravel()
    vals = np.tile(local.ravel(), mesh.n_cells)
    n = mesh.n_nodes
    return _csr(rows, cols, vals, (n, n))


def assemble_bulk_matrices(mesh: BulkMesh, kappa: float = 1.0,
                           eliminate: bool = True) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """Bulk mass and ``kappa``-weighted stiffness matrices."""
    if not kappa > 0:
        raise ValueError("kappa must be positive")
    Me, Ke = q1_local_matrices(mesh.h)
    M = _scatter_bulk(mesh, Me)
    K = _scatter_bulk(mesh, kappa * Ke)
    if eliminate:
        free = mesh.free_nodes
        M, K = restrict(M, free), restrict(K, free)
    return M, K


def boundary_element_matrices(bm: BoundaryMesh, c: Optional[Coefficient] = None,
                              alpha: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Per-segment 2x2 mass and stiffness blocks, shape (n_segments, 2, 2).

    The stiffness block of segment ``e`` is ``int_e a ds / l**2`` times the
    1D Laplacian stencil, plus ``alpha`` times the mass block.
    """
    s0, s1 = bm.segment_bounds()
    ell = s1 - s0
    mass = (ell / 6.0)[:, None, None] * np.array([[2.0, 1.0], [1.0, 2.0]])
    if c is None:
        ia = ell
    else:
        ia = integrate_coefficient(c, s0, s1)
    stiff = (ia / ell**2)[:, None, None] * np.array([[1.0, -1.0], [-1.0, 1.0]])
    if alpha:
        stiff = stiff + alpha * mass
    return mass, stiff


def scatter_boundary(bm: BoundaryMesh, blocks: np.ndarray,
                     elements: Optional[np.ndarray] = None) -> sp.csr_matrix:
    """Sum 2x2 segment blocks into an all-nodes matrix."""
    seg = bm.segments if elements is None else bm.segments[elements]
    blk = blocks if elements is None else blocks[elements]
    rows = np.repeat(seg, 2, axis=1).ravel()
    cols = np.tile(seg, (1, 2)).ravel()
    n = bm.n_nodes
    return _csr(rows, cols, blk.ravel(), (n, n))


def assemble_boundary_matrices(bm: BoundaryMesh, c: Optional[Coefficient] = None,
                               with_alpha_shift: bool = False,
                               eliminate: bool = True) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """Boundary mass and coefficient stiffness; ``c=None`` means ``a = 1``.

    With ``with_alpha_shift`` the stiffness is ``A + alpha M`` where ``alpha``
    is the lower bound of ``c``.
    """
    alpha = 0.0
    if with_alpha_shift:
        alpha = 1.0 if c is None else c.lower_bound
    mass, stiff = boundary_element_matrices(bm, c, alpha)
    M = scatter_boundary(bm, mass)
    A = scatter_boundary(bm, stiff)
    if eliminate:
        free = bm.free_nodes
        M, A = restrict(M, free), restrict(A, free)
    return M, A


def _check_pair(mesh: BulkMesh, bm: BoundaryMesh):
    if bm.bulk_nodes is None or bm.bulk_n != mesh.n:
        raise MeshError("boundary mesh is not the restriction of this bulk mesh")


def trace_matrix(mesh: BulkMesh, bm: BoundaryMesh) -> sp.csr_matrix:
    """Maps free bulk dofs to free boundary dofs by taking nodal traces."""
    _check_pair(mesh, bm)
    bfree = bm.free_nodes
    bulk_index = -np.ones(mesh.n_nodes, dtype=int)
    bulk_index[mesh.free_nodes] = np.arange(mesh.free_nodes.size)
    cols = bulk_index[bm.bulk_nodes[bfree]]
    if np.any(cols < 0):
        raise MeshError("free boundary node sits on a Dirichlet bulk node")
    return _csr(np.arange(bfree.size), cols, np.ones(bfree.size),
                (bfree.size, mesh.free_nodes.size))


def prolong_boundary(coarse: BoundaryMesh, fine: BoundaryMesh,
                     free_only: bool = False) -> sp.csr_matrix:
    """Linear interpolation from a boundary mesh to a dyadic refinement."""
    r = fine.refinement_ratio(coarse)
    j = np.arange(fine.n_nodes)
    e = np.minimum(j // r, coarse.n_segments - 1)
    t = (j - e * r) / r
    a, b = coarse.segments[e, 0], coarse.segments[e, 1]
    rows = np.concatenate([j, j])
    cols = np.concatenate([a, b])
    vals = np.concatenate([1.0 - t, t])
    keep = vals != 0.0
    P = _csr(rows[keep], cols[keep], vals[keep], (fine.n_nodes, coarse.n_nodes))
    if free_only:
        P = restrict(P, fine.free_nodes, coarse.free_nodes)
    return P


def _prolong_1d(nc: int, nf: int) -> sp.csr_matrix:
    r, rem = divmod(nf, nc)
    if rem or r < 1:
        raise MeshError(f"{nf} cells do not refine {nc} cells")
    j = np.arange(nf + 1)
    e = np.minimum(j // r, nc - 1)
    t = (j - e * r) / r
    rows = np.concatenate([j, j])
    cols = np.concatenate([e, e + 1])
    vals = np.concatenate([1.0 - t, t])
    keep = vals != 0.0
    return _csr(rows[keep], cols[keep], vals[keep], (nf + 1, nc + 1))


def prolong_bulk(coarse: BulkMesh, fine: BulkMesh, free_only: bool = True) -> sp.csr_matrix:
    """Q1 embedding of a coarse grid into a nested fine grid."""
    P1 = _prolong_1d(coarse.n, fine.n)
    P = sp.kron(P1, P1, format="csr")  # y-index outer, x-index inner
    P.sort_indices()
    if free_only:
        P = restrict(P, fine.free_nodes, coarse.free_nodes)
    return P


def assemble_constraint(mesh: BulkMesh, bm_coarse: BoundaryMesh,
                        q_mesh: Optional[BoundaryMesh] = None,
                        split: bool = False):
    """Constraint matrix ``[B_u | B_p]`` for ``int (q - v|_Gamma) mu``.

    Multipliers live on the free nodes of ``bm_coarse`` (the bulk trace
    space); ``q_mesh`` is the boundary space of ``p`` (a dyadic refinement
    of ``bm_coarse``, default ``bm_coarse`` itself).
    """
    _check_pair(mesh, bm_coarse)
    MH, _ = assemble_boundary_matrices(bm_coarse)
    Bu = -(MH @ trace_matrix(mesh, bm_coarse))
    if q_mesh is None or q_mesh is bm_coarse:
        Bp = MH.copy()
    else:
        P = prolong_boundary(bm_coarse, q_mesh, free_only=True)
        MQ, _ = assemble_boundary_matrices(q_mesh)
        Bp = sp.csr_matrix(P.T @ MQ)
    Bu, Bp = sp.csr_matrix(Bu), sp.csr_matrix(Bp)
    Bu.sort_indices()
    Bp.sort_indices()
    if split:
        return Bu, Bp
    B = sp.hstack([Bu, Bp], format="csr")
    B.sort_indices()
    return B


def _as_field(f: Field, nargs: int) -> Callable:
    if callable(f):
        return f
    value = float(f)
    if nargs == 3:
        return lambda x, y, t: np.full(np.shape(x), value)
    return lambda s, t: np.full(np.shape(s), value)


def assemble_bulk_load(mesh: BulkMesh, f: Field, t: float, eliminate: bool = True) -> np.ndarray:
    """``(f(t), phi_i)`` with ``f(x, y, t)``, tensor 2x2 Gauss per cell."""
    f = _as_field(f, 3)
    h = mesh.h
    origin = mesh.node_coords[mesh.cells[:, 0]]
    b = np.zeros(mesh.n_nodes)
    for xi, wx in zip(_G2, _W2):
        for eta, wy in zip(_G2, _W2):
            N, _ = _q1_shape(xi, eta)
            fx = np.broadcast_to(f(origin[:, 0] + h * xi, origin[:, 1] + h * eta, t),
                                 (mesh.n_cells,))
            np.add.at(b, mesh.cells, (wx * wy * h * h) * fx[:, None] * N[None, :])
    return b[mesh.free_nodes] if eliminate else b


def assemble_boundary_load(bm: BoundaryMesh, g: Field, t: float, eliminate: bool = True) -> np.ndarray:
    """``(g(t), phi_i)_Gamma`` with ``g(s, t)``, 2-point Gauss per segment."""
    g = _as_field(g, 2)
    s0, s1 = bm.segment_bounds()
    ell = s1 - s0
    b = np.zeros(bm.n_nodes)
    for xi, w in zip(_G2, _W2):
        gs = np.broadcast_to(g(s0 + ell * xi, t), s0.shape)
        np.add.at(b, bm.segments[:, 0], w * ell * gs * (1.0 - xi))
        np.add.at(b, bm.segments[:, 1], w * ell * gs * xi)
    return b[bm.free_nodes] if eliminate else b


def assemble_loads(mesh: BulkMesh, bm: BoundaryMesh, f: Field, g: Field, t: float,
                   eliminate: bool = True) -> tuple[np.ndarray, np.ndarray]:
    return (assemble_bulk_load(mesh, f, t, eliminate),
            assemble_boundary_load(bm, g, t, eliminate))


def assemble_trace_coupled(mesh: BulkMesh, bm: BoundaryMesh, c: Optional[Coefficient],
                           kappa: float = 1.0) -> tuple[sp.csr_matrix, sp.csr_matrix]:
    """Single-field matrices ``m(u,v) = (u,v)_Omega + (u,v)_Gamma`` and
    ``a(u,v) = kappa (grad u, grad v)_Omega + (a grad u, grad v)_Gamma``,
    scattered directly into bulk node numbering."""
    _check_pair(mesh, bm)
    Me, Ke = q1_local_matrices(mesh.h)
    mass, stiff = boundary_element_matrices(bm, c)
    seg = bm.bulk_nodes[bm.segments]
    rows = np.repeat(seg, 2, axis=1).ravel()
    cols = np.tile(seg, (1, 2)).ravel()
    n = mesh.n_nodes
    M = _scatter_bulk(mesh, Me) + _csr(rows, cols, mass.ravel(), (n, n))
    A = _scatter_bulk(mesh, kappa * Ke) + _csr(rows, cols, stiff.ravel(), (n, n))
    free = mesh.free_nodes
    return restrict(M, free), restrict(A, free)


def write_matrix_market(path, A: sp.spmatrix, comment: str = "") -> None:
    scipy.io.mmwrite(str(path), sp.coo_matrix(A), comment=comment)
