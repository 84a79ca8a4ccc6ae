"""Localized orthogonal decomposition on a 1D boundary mesh.

A coarse boundary mesh and a dyadic refinement of it are given.  The fine
space splits into the coarse P1 space and the kernel ``W_h`` of a
quasi-interpolation; corrector problems on element patches map coarse hats
into ``W_h`` and the multiscale basis is ``prolong(hat) - corrector``.

All vectors and matrices are indexed by the free (non-Dirichlet) nodes of
the respective mesh.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import assemble_boundary_matrices, boundary_element_matrices, prolong_boundary, scatter_boundary
from .coefficients import Coefficient
from .mesh import BoundaryMesh, MeshError, element_patch

CLEMENT = "clement"
NODAL = "nodal"
L2 = "l2"
FORM_PLAIN = "a"        # coefficient form
FORM_SHIFTED = "a+alpha"  # coefficient form plus alpha times the mass


class CorrectorError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class InterpolationOperator:
    """Linear map from fine free dofs to coarse free dofs.

    ``apply(v) = normalize(weights @ v)``; the normalization is a diagonal
    scaling (Clement), nothing (nodal) or a coarse mass solve (L2).
    """

    kind: str
    weights: sp.csr_matrix
    scale: Optional[np.ndarray] = None
    coarse_mass: Optional[sp.csc_matrix] = None
    _lu: object = field(default=None, repr=False)

    @property
    def shape(self):
        return self.weights.shape

    def apply(self, v):
        y = self.weights @ v
        if self.kind == CLEMENT:
            y = self.scale[:, None] * y if np.ndim(y) == 2 else self.scale * y
        elif self.kind == L2:
            y = self._lu.solve(np.asarray(y))
        return y

    __call__ = apply

    def matrix(self) -> np.ndarray:
        return np.asarray(self.apply(np.eye(self.shape[1])))


def _fine_mass(fine: BoundaryMesh):
    M, _ = assemble_boundary_matrices(fine)
    return M


def build_interpolation(fine: BoundaryMesh, coarse: BoundaryMesh, kind: str = CLEMENT,
                        free_only: bool = True) -> InterpolationOperator:
    """Clement-type quasi-interpolation or nodal interpolation.

    With ``free_only=False`` the operator acts on all nodes (useful to see
    constant preservation on meshes with Dirichlet endpoints).
    """
    r = fine.refinement_ratio(coarse)
    if kind == CLEMENT:
        P = prolong_boundary(coarse, fine)
        M = scatter_boundary(fine, boundary_element_matrices(fine)[0])
        W = sp.csr_matrix(P.T @ M)
        denom = np.asarray(W.sum(axis=1)).ravel()  # (1, phi_z)
        if free_only:
            W = W[coarse.free_nodes][:, fine.free_nodes]
            denom = denom[coarse.free_nodes]
        W.sort_indices()
        return InterpolationOperator(CLEMENT, W, scale=1.0 / denom)
    if kind == NODAL:
        cnodes = coarse.free_nodes if free_only else np.arange(coarse.n_nodes)
        fnodes = cnodes * r
        if free_only:
            index = -np.ones(fine.n_nodes, dtype=int)
            index[fine.free_nodes] = np.arange(fine.free_nodes.size)
            cols = index[fnodes]
            ncols = fine.free_nodes.size
        else:
            cols, ncols = fnodes, fine.n_nodes
        S = sp.csr_matrix((np.ones(cnodes.size), (np.arange(cnodes.size), cols)),
                          shape=(cnodes.size, ncols))
        return InterpolationOperator(NODAL, S)
    raise ValueError(f"unknown interpolation kind {kind!r}")


def build_l2_projection(fine: BoundaryMesh, coarse: BoundaryMesh) -> InterpolationOperator:
    """``Pi_H = (coarse mass)^-1 P^T (fine mass)`` on free dofs."""
    P = prolong_boundary(coarse, fine, free_only=True)
    W = sp.csr_matrix(P.T @ _fine_mass(fine))
    W.sort_indices()
    Mc, _ = assemble_boundary_matrices(coarse)
    Mc = sp.csc_matrix(Mc)
    return InterpolationOperator(L2, W, coarse_mass=Mc, _lu=spla.splu(Mc))


def kernel_constraint(fine: BoundaryMesh, coarse: BoundaryMesh, kind: str) -> sp.csr_matrix:
    """Rows whose joint kernel is ``W_h``: ``P^T M_fine`` (Clement) or nodal sampling."""
    if kind == CLEMENT:
        return build_interpolation(fine, coarse, CLEMENT).weights
    return build_interpolation(fine, coarse, NODAL).weights


@dataclass(frozen=True, eq=False)
class CorrectorBasis:
    """Correctors ``G_m phi_z`` for every free coarse hat ``phi_z``.

    ``correctors`` is (fine free dofs) x (coarse free dofs); ``supports[z]``
    lists the coarse elements of the union of patches that contributed to
    column ``z``.  ``m=None`` means global (unlocalized) correctors.
    """

    fine: BoundaryMesh
    coarse: BoundaryMesh
    coefficient: Optional[Coefficient]
    m: Optional[int]
    form: str
    kind: str
    correctors: sp.csc_matrix
    supports: list
    prolongation: sp.csr_matrix


def _free_index(bm: BoundaryMesh) -> np.ndarray:
    index = -np.ones(bm.n_nodes, dtype=int)
    index[bm.free_nodes] = np.arange(bm.free_nodes.size)
    return index


def _independent_rows(C: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Indices of a maximal linearly independent subset of the rows of ``C``."""
    if C.shape[0] == 0:
        return np.zeros(0, dtype=int)
    norms = np.abs(C).max(axis=1)
    nz = np.flatnonzero(norms > 0)
    if nz.size == 0:
        return nz
    _, R, piv = la.qr(C[nz].T, mode="economic", pivoting=True)
    d = np.abs(np.diag(R))
    rank = int(np.sum(d > tol * d[0]))
    return np.sort(nz[piv[:rank]])


def fine_element_blocks(fine: BoundaryMesh, c: Optional[Coefficient], form: str) -> np.ndarray:
    alpha = 0.0
    if form == FORM_SHIFTED:
        alpha = 1.0 if c is None else c.lower_bound
    elif form != FORM_PLAIN:
        raise ValueError(f"unknown bilinear form {form!r}")
    return boundary_element_matrices(fine, c, alpha)[1]


def compute_correctors(fine: BoundaryMesh, coarse: BoundaryMesh, c: Optional[Coefficient],
                       m: Optional[int], form: str = FORM_SHIFTED,
                       kind: str = CLEMENT) -> CorrectorBasis:
    """Element correctors on ``m``-layer patches, summed per coarse hat.

    For each coarse element ``T`` the patch problem
    ``a_U(x, w) = a_T(phi_z, w)`` for ``w`` in the fine dofs interior to
    ``U_m(T)`` with the kernel constraint is solved as a sparse saddle
    system; dependent constraint rows are dropped first.
    """
    r = fine.refinement_ratio(coarse)
    if m is not None and m < 0:
        raise MeshError("patch layers must be non-negative")
    layers = coarse.n_segments if m is None else int(m)
    blocks = fine_element_blocks(fine, c, form)
    fidx = _free_index(fine)
    cidx = _free_index(coarse)
    nf, nc = fine.free_nodes.size, coarse.free_nodes.size
    P = prolong_boundary(coarse, fine, free_only=True)
    C = sp.csr_matrix(kernel_constraint(fine, coarse, kind))

    cols, rows, vals = [], [], []
    supports = [set() for _ in range(nc)]
    cache = {}
    for T in range(coarse.n_segments):
        patch = element_patch(coarse, T, layers)
        zs = cidx[coarse.segments[T]]
        zs = zs[zs >= 0]
        if zs.size == 0:
            continue
        key = tuple(patch)
        if key not in cache:
            cache[key] = _patch_solver(fine, coarse, patch, r, blocks, fidx, cidx, C)
        solve, dofs = cache[key]
        if dofs.size == 0:
            continue
        fine_T = np.arange(T * r, (T + 1) * r)
        A_T = scatter_boundary(fine, blocks, fine_T)[fine.free_nodes][:, fine.free_nodes]
        rhs = (A_T @ P[:, zs]).toarray()[dofs]
        x = solve(rhs)
        for k, z in enumerate(zs):
            rows.append(dofs)
            cols.append(np.full(dofs.size, z))
            vals.append(x[:, k])
            supports[z].update(patch.tolist())
    if rows:
        G = sp.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(nf, nc))
    else:
        G = sp.csc_matrix((nf, nc))
    G.sum_duplicates()
    G.sort_indices()
    return CorrectorBasis(fine=fine, coarse=coarse, coefficient=c, m=m, form=form, kind=kind,
                          correctors=G, supports=[np.array(sorted(s), dtype=int) for s in supports],
                          prolongation=P)


def _patch_solver(fine, coarse, patch, r, blocks, fidx, cidx, C):
    fine_elems = (patch[:, None] * r + np.arange(r)[None, :]).ravel()
    seg = fine.segments[fine_elems]
    nodes, counts = np.unique(seg, return_counts=True)
    whole_loop = fine.closed and fine_elems.size == fine.n_segments
    interior = nodes if whole_loop else nodes[counts == 2]
    dofs = fidx[interior]
    dofs = dofs[dofs >= 0]
    if dofs.size == 0:
        return None, dofs
    A = scatter_boundary(fine, blocks, fine_elems)[fine.free_nodes][:, fine.free_nodes]
    A_U = sp.csc_matrix(A[dofs][:, dofs])
    cnodes = np.unique(coarse.segments[patch])
    crows = cidx[cnodes]
    crows = crows[crows >= 0]
    C_U = C[crows][:, dofs].toarray()
    keep = _independent_rows(C_U)
    C_U = sp.csc_matrix(C_U[keep])
    k = C_U.shape[0]
    S = sp.bmat([[A_U, C_U.T], [C_U, None]], format="csc") if k else A_U
    try:
        lu = spla.splu(S)
    except RuntimeError as exc:
        raise CorrectorError(f"singular corrector system on patch {patch.tolist()}") from exc

    def solve(rhs):
        b = np.zeros((S.shape[0], rhs.shape[1]))
        b[:dofs.size] = rhs
        x = lu.solve(b)
        if not np.all(np.isfinite(x)):
            raise CorrectorError(f"singular corrector system on patch {patch.tolist()}")
        return x[:dofs.size]

    return solve, dofs


@dataclass(frozen=True, eq=False)
class LodSpace:
    """Multiscale boundary space; column ``z`` of ``basis`` is
    ``prolong(phi_z) - G_m phi_z`` on the fine mesh."""

    basis: sp.csc_matrix
    prolongation: sp.csr_matrix
    fine: BoundaryMesh
    coarse: BoundaryMesh
    coefficient: Optional[Coefficient]
    kind: str
    correctors: Optional[CorrectorBasis] = None

    def coarse_part(self, fine_vector):
        """Coarse coordinates of a fine function in the space (the map that
        inverts ``basis``): Clement uses the L2 projection, nodal sampling."""
        if self.kind == CLEMENT:
            return build_l2_projection(self.fine, self.coarse).apply(fine_vector)
        return build_interpolation(self.fine, self.coarse, NODAL).apply(fine_vector)


def lod_basis_matrix(cb: CorrectorBasis) -> LodSpace:
    B = sp.csc_matrix(cb.prolongation) - cb.correctors
    B.eliminate_zeros()
    B.sort_indices()
    return LodSpace(basis=B, prolongation=cb.prolongation, fine=cb.fine, coarse=cb.coarse,
                    coefficient=cb.coefficient, kind=cb.kind, correctors=cb)


def lod_boundary_matrices(ls: LodSpace, M_fine, A_fine) -> tuple[np.ndarray, np.ndarray]:
    """Petrov-Galerkin matrices: coarse hats tested against LOD trial functions."""
    PT = sp.csr_matrix(ls.prolongation.T)
    Mt = sp.csr_matrix(PT @ M_fine @ ls.basis)
    At = sp.csr_matrix(PT @ A_fine @ ls.basis)
    Mt.sort_indices()
    At.sort_indices()
    return Mt, At


def h1_gram(bm: BoundaryMesh) -> sp.csr_matrix:
    M, A = assemble_boundary_matrices(bm)
    return sp.csr_matrix(M + A)


def corrector_decay_profile(fine: BoundaryMesh, coarse: BoundaryMesh, c: Optional[Coefficient],
                            form: str = FORM_SHIFTED, kind: str = CLEMENT,
                            m_max: Optional[int] = None) -> list[tuple[int, float]]:
    """``max_z ||(G - G_m) phi_z||_H1 / ||phi_z||_H1`` for ``m = 0..m_max``."""
    G = compute_correctors(fine, coarse, c, None, form, kind)
    X = h1_gram(fine)
    hats = G.prolongation
    hat_norm = np.sqrt(np.asarray((hats.multiply(X @ hats)).sum(axis=0)).ravel())
    if m_max is None:
        m_max = coarse.n_segments
    out = []
    for m in range(m_max + 1):
        Gm = compute_correctors(fine, coarse, c, m, form, kind)
        D = (G.correctors - Gm.correctors).tocsc()
        err = np.sqrt(np.maximum(np.asarray(D.multiply(X @ D).sum(axis=0)).ravel(), 0.0))
        out.append((m, float(np.max(err / hat_norm))))
    return out
