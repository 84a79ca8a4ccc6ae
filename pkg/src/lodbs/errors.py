"""Reference solutions, error norms, observed orders, the coupled Ritz
projection and discrete inf-sup estimates."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import (assemble_boundary_matrices, assemble_bulk_matrices, assemble_constraint,
                       prolong_boundary, prolong_bulk)
from .coefficients import Coefficient
from .lod import LodSpace, build_l2_projection, lod_boundary_matrices
from .mesh import BoundaryMesh, BulkMesh, MeshError, build_bulk_mesh, refine_boundary, restrict_to_boundary
from .pdae_solver import (ELIMINATED, PGLOD, STANDARD, PdaeSystem, ProblemData, Trajectory,
                          assemble_system, implicit_euler)

REPORT_COLUMNS = ["H_Omega", "H_Gamma", "m", "err_u_L2", "err_p_L2", "err_u_H1", "err_p_H1",
                  "err_p_full_H1"]


class ReferenceBudgetError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class ReferenceSolution:
    mesh: BulkMesh
    boundary_mesh: BoundaryMesh
    system: PdaeSystem
    trajectory: Trajectory
    mass: sp.csr_matrix
    stiffness: sp.csr_matrix
    boundary_mass: sp.csr_matrix
    boundary_stiffness: sp.csr_matrix

    @property
    def u_final(self) -> np.ndarray:
        return self.trajectory.u[-1]

    @property
    def p_final(self) -> np.ndarray:
        return self.trajectory.p[-1]


def estimate_reference_memory(n_ref: int, boundary_levels: int = 0) -> float:
    """Rough peak memory (bytes) of the sparse LU of the reference system.

    Calibrated on the COLAMD-ordered LU of the 2D Q1 system: about
    ``0.6 n (log2 n)^2`` factor entries at 12 bytes each.
    """
    n = (n_ref + 1) ** 2 + 4 * n_ref * (2 ** boundary_levels)
    return 12.0 * 0.6 * n * math.log2(n) ** 2 + 200.0 * n


def compute_reference(problem: ProblemData, n_ref: int, boundary_levels: int = 0,
                      memory_budget: float = 4e9) -> ReferenceSolution:
    """Standard FEM on an ``n_ref`` grid (optionally with a refined boundary
    mesh for ``p``), same time grid as the compared runs."""
    if n_ref < 1 or n_ref & (n_ref - 1):
        raise ValueError("n_ref must be a power of two")
    need = estimate_reference_memory(n_ref, boundary_levels)
    if need > memory_budget:
        raise ReferenceBudgetError(f"reference with n_ref={n_ref} needs about {need / 1e9:.1f} GB, "
                              f"budget is {memory_budget / 1e9:.1f} GB")
    mesh = build_bulk_mesh(n_ref, problem.gamma_dyn)
    bm = restrict_to_boundary(mesh)
    if boundary_levels:
        q = refine_boundary(bm, boundary_levels)
        sys = assemble_system(mesh, problem.coefficient, problem.kappa, STANDARD, q_mesh=q)
    else:
        sys = assemble_system(mesh, problem.coefficient, problem.kappa, STANDARD,
                              formulation=ELIMINATED)
    traj = implicit_euler(sys, problem.tau, problem.T_end, problem.u0, problem.f, problem.g)
    M, K1 = assemble_bulk_matrices(mesh, 1.0)
    Mg, Ag = assemble_boundary_matrices(sys.q_mesh)
    return ReferenceSolution(mesh, sys.q_mesh, sys, traj, M, K1, Mg, Ag)


def _norm(e: np.ndarray, G) -> float:
    return float(math.sqrt(max(e @ (G @ e), 0.0)))


def _to_reference_boundary(bm: BoundaryMesh, ref_bm: BoundaryMesh) -> sp.csr_matrix:
    try:
        return prolong_boundary(bm, ref_bm, free_only=True)
    except MeshError as exc:
        raise MeshError(f"boundary mesh is not nested in the reference: {exc}") from exc


def error_norms(traj: Trajectory, sys: PdaeSystem, ref: ReferenceSolution,
                step: int = -1) -> dict:
    """Errors against the reference at a time step (default: final time).

    ``err_p_L2`` and ``err_p_H1`` compare against the L2 projection of the
    discrete boundary value onto its coarse mesh (``p`` itself for
    standard FEM), ``err_p_full_H1`` against the full LOD function.
    ``err_p_L2_coarse`` measures ``Pi (p_ref - p)`` only, which drops the
    unresolved oscillation of the reference; it is not a report column.
    """
    if traj.times.size != ref.trajectory.times.size or not np.allclose(traj.times, ref.trajectory.times):
        raise ValueError("trajectory and reference use different time grids")
    if ref.mesh.n % sys.mesh.n:
        raise MeshError("bulk mesh is not nested in the reference mesh")
    Pu = prolong_bulk(sys.mesh, ref.mesh)
    eu = ref.trajectory.u[step] - Pu @ traj.u[step]
    Xg = ref.boundary_mass + ref.boundary_stiffness
    p_ref = ref.trajectory.p[step]
    if sys.variant == PGLOD:
        coarse = sys.lod.coarse
        Pc = _to_reference_boundary(coarse, ref.boundary_mesh)
        full = _to_reference_boundary(sys.lod.fine, ref.boundary_mesh) @ (sys.lod.basis @ traj.p[step])
        Pi = build_l2_projection(ref.boundary_mesh, coarse)
        p_h = Pi.apply(full)
        ep = p_ref - Pc @ p_h
        ep_full = p_ref - full
        H_gamma = coarse.h
        cb = sys.lod.correctors
        m = None if cb is None else cb.m
    else:
        Pc = _to_reference_boundary(sys.q_mesh, ref.boundary_mesh)
        Pi = build_l2_projection(ref.boundary_mesh, sys.q_mesh)
        p_h = traj.p[step]
        ep = p_ref - Pc @ p_h
        ep_full = ep
        H_gamma = sys.q_mesh.h
        m = None
    # error of the boundary value seen on its own mesh (no fine-scale part)
    ec = Pc @ (Pi.apply(p_ref) - p_h)
    return {
        "H_Omega": sys.mesh.h,
        "H_Gamma": H_gamma,
        "m": m,
        "err_u_L2": _norm(eu, ref.mass),
        "err_p_L2": _norm(ep, ref.boundary_mass),
        "err_u_H1": _norm(eu, ref.mass + ref.stiffness),
        "err_p_H1": _norm(ep, Xg),
        "err_p_full_H1": _norm(ep_full, Xg),
        "err_p_L2_coarse": _norm(ec, ref.boundary_mass),
    }


def observed_orders(errors: Sequence[float], H: Optional[Sequence[float]] = None) -> np.ndarray:
    """Orders between consecutive rows, ``log(e_k/e_{k+1}) / log(H_k/H_{k+1})``
    (``log2`` ratios for halved ``H``); NaN where an error is zero."""
    e = np.asarray(errors, dtype=float)
    h = 2.0 ** -np.arange(e.size) if H is None else np.asarray(H, dtype=float)
    out = np.full(max(e.size - 1, 0), np.nan)
    for k in range(e.size - 1):
        if e[k] > 0 and e[k + 1] > 0:
            out[k] = math.log(e[k] / e[k + 1]) / math.log(h[k] / h[k + 1])
    return out


def order_over_last(errors: Sequence[float], H: Optional[Sequence[float]] = None,
                    k: int = 3) -> float:
    """Average order over the last ``k`` refinements."""
    e = np.asarray(errors, dtype=float)
    if e.size < k + 1:
        raise ValueError(f"need at least {k + 1} rows")
    h = 2.0 ** -np.arange(e.size) if H is None else np.asarray(H, dtype=float)
    if e[-1] <= 0 or e[-k - 1] <= 0:
        return float("nan")
    return math.log(e[-k - 1] / e[-1]) / math.log(h[-k - 1] / h[-1])


def fitted_order(errors: Sequence[float], H: Optional[Sequence[float]] = None,
                 k: Optional[int] = None) -> float:
    """Least-squares slope of ``log e`` against ``log H`` over the last ``k`` rows."""
    e = np.asarray(errors, dtype=float)
    h = 2.0 ** -np.arange(e.size) if H is None else np.asarray(H, dtype=float)
    if k is not None:
        e, h = e[-k:], h[-k:]
    if e.size < 2 or np.any(e <= 0):
        return float("nan")
    return float(np.polyfit(np.log(h), np.log(e), 1)[0])


@dataclass(frozen=True, eq=False)
class RitzProjection:
    u: np.ndarray           # coarse bulk values
    p: np.ndarray           # LOD coordinates
    multiplier: np.ndarray
    p_fine: np.ndarray      # LOD function on the fine boundary mesh


def ritz_projection(u_fine: np.ndarray, p_fine: np.ndarray, fine_mesh: BulkMesh,
                    coarse_mesh: BulkMesh, ls: LodSpace, c: Optional[Coefficient],
                    kappa: float = 0.1) -> RitzProjection:
    """Stationary Petrov-Galerkin projection with the shifted boundary form.

    Finds ``(R_u, R_p, R_lam)`` with
    ``K(R_u, w) - (R_lam, w)_Gamma = K(u, w)``,
    ``a~(R_p, r) + (R_lam, r)_Gamma = a~(p, r)`` for coarse ``w``, ``r`` and
    ``(Pi R_p - R_u|_Gamma, mu)_Gamma = 0``.
    """
    bm = restrict_to_boundary(coarse_mesh)
    if ls.coarse.n_segments != bm.n_segments:
        raise MeshError("LOD space does not live on the trace of the coarse mesh")
    _, K_f = assemble_bulk_matrices(fine_mesh, kappa)
    _, K_H = assemble_bulk_matrices(coarse_mesh, kappa)
    Pb = prolong_bulk(coarse_mesh, fine_mesh)
    Mf, At_f = assemble_boundary_matrices(ls.fine, c, with_alpha_shift=True)
    _, At = lod_boundary_matrices(ls, Mf, At_f)
    B_u, B_p = assemble_constraint(coarse_mesh, bm, split=True)
    A = sp.bmat([[K_H, None], [None, At]], format="csc")
    B = sp.hstack([B_u, B_p], format="csc")
    S = sp.bmat([[A, B.T], [B, None]], format="csc")
    rhs = np.concatenate([Pb.T @ (K_f @ u_fine), ls.prolongation.T @ (At_f @ p_fine),
                          np.zeros(B.shape[0])])
    try:
        x = spla.splu(S).solve(rhs)
    except RuntimeError as exc:
        raise RuntimeError(f"singular Ritz system: {exc}") from exc
    nu, npp = K_H.shape[0], At.shape[0]
    c_ = x[nu:nu + npp]
    return RitzProjection(u=x[:nu], p=c_, multiplier=x[nu + npp:], p_fine=ls.basis @ c_)


@dataclass(frozen=True)
class InfSupResult:
    beta: float
    degenerate: bool
    n_multipliers: int


def h_minus_half_gram(bm: BoundaryMesh) -> np.ndarray:
    """Discrete ``H^{-1/2}`` Gram matrix on P1 multipliers: ``M Phi diag((1+lam)^{-1/2}) Phi^T M``
    from the (Laplacian, mass) eigenpairs with ``Phi^T M Phi = I``."""
    M, A = assemble_boundary_matrices(bm)
    Md, Ad = M.toarray(), A.toarray()
    lam, Phi = la.eigh(Ad, Md)
    lam = np.maximum(lam, 0.0)
    W = Md @ Phi
    return (W * (1.0 + lam) ** -0.5) @ W.T


def infsup_constant(mesh: BulkMesh, q_mesh: Optional[BoundaryMesh] = "trace",
                    bulk_trace: bool = True) -> InfSupResult:
    """Smallest generalized singular value of the constraint.

    Trial norm: ``H1(Omega) x H1(Gamma)``; multiplier norm: discrete
    ``H^{-1/2}(Gamma)``.  ``q_mesh="trace"`` uses the bulk trace mesh for
    ``p``; ``None`` drops ``p``; ``bulk_trace=False`` drops the coupling
    to ``u``.  A vanishing constraint is reported as ``beta = 0``.
    """
    bm = restrict_to_boundary(mesh)
    if isinstance(q_mesh, str):
        q_mesh = bm
    M_u, K_u = assemble_bulk_matrices(mesh, 1.0)
    blocks, grams = [], []
    if bulk_trace:
        B_u, _ = assemble_constraint(mesh, bm, split=True)
        blocks.append(B_u)
        grams.append(M_u + K_u)
    if q_mesh is not None:
        _, B_p = assemble_constraint(mesh, bm, q_mesh, split=True)
        Mq, Aq = assemble_boundary_matrices(q_mesh)
        blocks.append(B_p)
        grams.append(Mq + Aq)
    nm = bm.free_nodes.size
    if not blocks or all(b.nnz == 0 for b in blocks):
        return InfSupResult(0.0, True, nm)
    B = sp.hstack(blocks, format="csc")
    X = sp.block_diag(grams, format="csc")
    XinvBt = spla.splu(X).solve(B.T.toarray())
    S = B @ XinvBt
    S = 0.5 * (S + S.T)
    Y = h_minus_half_gram(bm)
    vals = la.eigh(S, Y, eigvals_only=True, subset_by_index=[0, 0])
    beta = math.sqrt(max(vals[0], 0.0))
    return InfSupResult(beta, beta <= 1e-12, nm)
