"""Bulk-surface saddle point system and implicit Euler time stepping.

Unknowns are the free bulk values ``u``, the boundary coordinates ``p``
and a multiplier on the free nodes of the bulk trace mesh.  The constraint
row is ``int_Gamma (p - u|_Gamma) mu = 0`` (for the LOD variant ``p`` is
replaced by its coarse coordinates).  Each step solves

    [[M_u + tau K,           0, B_u^T],   [u^{n+1}]   [M_u u^n + tau b_u]
     [          0, M_p + tau A, B_p^T], . [p^{n+1}] = [M_p p^n + tau b_p]
     [        B_u,         B_p,     0 ]]  [tau lam ]   [        0        ]

so the multiplier is recovered as the last block divided by ``tau``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .assembly import (assemble_boundary_load, assemble_boundary_matrices, assemble_bulk_load,
                       assemble_bulk_matrices, assemble_constraint, trace_matrix)
from .coefficients import Coefficient
from .lod import LodSpace, lod_boundary_matrices
from .mesh import BoundaryMesh, BulkMesh, restrict_to_boundary

STANDARD = "standard-fem"
PGLOD = "pglod"
SADDLE = "saddle"
ELIMINATED = "eliminated"


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class PdaeSystem:
    variant: str
    formulation: str
    mesh: BulkMesh
    trace_mesh: BoundaryMesh
    q_mesh: BoundaryMesh
    coefficient: Optional[Coefficient]
    kappa: float
    M_u: sp.csr_matrix
    K: sp.csr_matrix
    M_p: sp.csr_matrix
    A_p: sp.csr_matrix
    B_u: sp.csr_matrix
    B_p: sp.csr_matrix
    trace: sp.csr_matrix
    lod: Optional[LodSpace] = None

    @property
    def n_u(self) -> int:
        return self.M_u.shape[0]

    @property
    def n_p(self) -> int:
        return self.M_p.shape[0]

    @property
    def n_mult(self) -> int:
        return self.B_u.shape[0]

    @property
    def p_equals_trace(self) -> bool:
        """Whether the p coordinates coincide with the nodal trace of u."""
        return self.variant == PGLOD or self.q_mesh is self.trace_mesh

    def constraint(self) -> sp.csr_matrix:
        return sp.hstack([self.B_u, self.B_p], format="csr")

    def saddle_matrix(self, tau: float) -> sp.csc_matrix:
        return sp.bmat([[self.M_u + tau * self.K, None, self.B_u.T],
                        [None, self.M_p + tau * self.A_p, self.B_p.T],
                        [self.B_u, self.B_p, None]], format="csc")

    def eliminated_matrices(self) -> tuple[sp.csr_matrix, sp.csr_matrix]:
        if not self.p_equals_trace:
            raise SolverError("elimination needs p coordinates equal to the bulk trace")
        T = self.trace
        M = sp.csr_matrix(self.M_u + T.T @ self.M_p @ T)
        S = sp.csr_matrix(self.K + T.T @ self.A_p @ T)
        return M, S

    def loads(self, f, g, t: float) -> tuple[np.ndarray, np.ndarray]:
        return (assemble_bulk_load(self.mesh, f, t),
                assemble_boundary_load(self.q_mesh, g, t))

    def boundary_function(self, p: np.ndarray) -> np.ndarray:
        """Fine boundary representation of ``p`` (LOD basis or the Q mesh itself)."""
        if self.lod is not None:
            return self.lod.basis @ p
        return p


def assemble_system(mesh: BulkMesh, c: Optional[Coefficient], kappa: float = 0.1,
                    variant: str = STANDARD, lod: Optional[LodSpace] = None,
                    q_mesh: Optional[BoundaryMesh] = None,
                    formulation: str = SADDLE) -> PdaeSystem:
    """Block matrices of the semi-discrete problem.

    ``standard-fem`` uses P1 on ``q_mesh`` (default: the bulk trace mesh)
    for ``p``.  ``pglod`` uses the LOD trial space against coarse hats;
    its coarse mesh must be the bulk trace mesh.
    """
    bm = restrict_to_boundary(mesh)
    M_u, K = assemble_bulk_matrices(mesh, kappa)
    T = trace_matrix(mesh, bm)
    if variant == STANDARD:
        q = bm if q_mesh is None else q_mesh
        M_p, A_p = assemble_boundary_matrices(q, c)
        B_u, B_p = assemble_constraint(mesh, bm, q, split=True)
    elif variant == PGLOD:
        if lod is None:
            raise ValueError("the pglod variant needs an LOD space")
        if lod.coarse.n_segments != bm.n_segments or lod.coarse.topology != bm.topology:
            raise ValueError("LOD coarse mesh does not match the bulk trace mesh")
        q = bm
        Mf, Af = assemble_boundary_matrices(lod.fine, c)
        M_p, A_p = lod_boundary_matrices(lod, Mf, Af)
        B_u, B_p = assemble_constraint(mesh, bm, split=True)
    else:
        raise ValueError(f"unknown variant {variant!r}")
    if formulation not in (SADDLE, ELIMINATED):
        raise ValueError(f"unknown formulation {formulation!r}")
    sys = PdaeSystem(variant=variant, formulation=formulation, mesh=mesh, trace_mesh=bm,
                     q_mesh=q, coefficient=c, kappa=kappa, M_u=M_u, K=K,
                     M_p=sp.csr_matrix(M_p), A_p=sp.csr_matrix(A_p), B_u=B_u, B_p=B_p,
                     trace=T, lod=lod if variant == PGLOD else None)
    if formulation == ELIMINATED and not sys.p_equals_trace:
        raise ValueError("eliminated formulation needs p on the bulk trace mesh")
    return sys


def factorize_saddle(A: sp.spmatrix, B: Optional[sp.spmatrix] = None) -> Callable:
    """LU of ``[[A, B^T], [B, 0]]``; returns a solve function."""
    if B is None or B.shape[0] == 0:
        S = sp.csc_matrix(A)
    else:
        S = sp.bmat([[A, B.T], [B, None]], format="csc")
    try:
        lu = spla.splu(S)
    except RuntimeError as exc:
        nA = A.shape[0]
        nB = 0 if B is None else B.shape[0]
        raise SolverError(f"singular saddle matrix ({nA} primal, {nB} multiplier rows): {exc}") from exc
    return lu.solve


def solve_saddle(A: sp.spmatrix, B: Optional[sp.spmatrix], rhs: np.ndarray,
                 rtol: float = 1e-10) -> np.ndarray:
    """Solve ``[[A, B^T], [B, 0]] x = rhs`` and check the relative residual."""
    solve = factorize_saddle(A, B)
    x = solve(np.asarray(rhs, dtype=float))
    S = A if B is None or B.shape[0] == 0 else sp.bmat([[A, B.T], [B, None]])
    res = np.linalg.norm(S @ x - rhs)
    scale = max(np.linalg.norm(rhs), 1e-300)
    if not np.all(np.isfinite(x)) or res > rtol * scale:
        raise SolverError(f"saddle solve residual {res:.3e} exceeds {rtol:g} relative")
    return x


@dataclass(frozen=True, eq=False)
class Trajectory:
    times: np.ndarray
    u: np.ndarray
    p: np.ndarray
    multipliers: Optional[np.ndarray]
    variant: str
    formulation: str
    tau: float
    constraint_residual: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def n_steps(self) -> int:
        return self.times.size - 1


def interpolate_bulk(mesh: BulkMesh, u0) -> np.ndarray:
    xy = mesh.node_coords[mesh.free_nodes]
    if callable(u0):
        return np.asarray(u0(xy[:, 0], xy[:, 1]), dtype=float) * np.ones(xy.shape[0])
    return np.full(xy.shape[0], float(u0))


def interpolate_boundary(bm: BoundaryMesh, u0) -> np.ndarray:
    xy = bm.coordinates()[bm.free_nodes]
    if callable(u0):
        return np.asarray(u0(xy[:, 0], xy[:, 1]), dtype=float) * np.ones(xy.shape[0])
    return np.full(xy.shape[0], float(u0))


def initial_state(sys: PdaeSystem, u0) -> tuple[np.ndarray, np.ndarray]:
    """Nodal interpolant of ``u0`` and the matching boundary value.

    If the p coordinates are the bulk trace (standard on the trace mesh,
    LOD coordinates) ``p0`` is the trace of the interpolant; on a refined Q
    mesh ``u0`` is interpolated there directly.
    """
    u = interpolate_bulk(sys.mesh, u0)
    if sys.p_equals_trace:
        return u, sys.trace @ u
    return u, interpolate_boundary(sys.q_mesh, u0)


def _n_steps(tau: float, T_end: float) -> int:
    if not tau > 0:
        raise ValueError("time step must be positive")
    n = int(round(T_end / tau))
    if n < 1 or abs(n * tau - T_end) > 1e-9 * max(1.0, T_end):
        raise ValueError(f"tau={tau} does not divide T_end={T_end}")
    return n


def implicit_euler(sys: PdaeSystem, tau: float, T_end: float, u0, f=0.0, g=0.0,
                   p0: Optional[np.ndarray] = None) -> Trajectory:
    """Implicit Euler with one factorization reused for every step."""
    N = _n_steps(tau, T_end)
    u, p = initial_state(sys, u0)
    if p0 is not None:
        p = np.asarray(p0, dtype=float)
    nu, npp, nm = sys.n_u, sys.n_p, sys.n_mult
    times = tau * np.arange(N + 1)
    U = np.zeros((N + 1, nu))
    Pv = np.zeros((N + 1, npp))
    U[0], Pv[0] = u, p
    B = sys.constraint()
    res = np.zeros(N + 1)
    res[0] = np.abs(B @ np.concatenate([u, p])).max(initial=0.0)

    if sys.formulation == ELIMINATED:
        M, S = sys.eliminated_matrices()
        solve = factorize_saddle(M + tau * S)
        for n in range(N):
            bu, bp = sys.loads(f, g, times[n + 1])
            u = solve(M @ u + tau * (bu + sys.trace.T @ bp))
            if not np.all(np.isfinite(u)):
                raise SolverError(f"non-finite solution at step {n + 1}")
            U[n + 1], Pv[n + 1] = u, sys.trace @ u
        return Trajectory(times, U, Pv, None, sys.variant, ELIMINATED, tau, res * 0)

    Lam = np.zeros((N, nm))
    S = sys.saddle_matrix(tau)
    try:
        lu = spla.splu(S)
    except RuntimeError as exc:
        raise SolverError(f"singular saddle matrix at step 1: {exc}") from exc
    for n in range(N):
        bu, bp = sys.loads(f, g, times[n + 1])
        rhs = np.concatenate([sys.M_u @ U[n] + tau * bu, sys.M_p @ Pv[n] + tau * bp, np.zeros(nm)])
        x = lu.solve(rhs)
        if not np.all(np.isfinite(x)):
            raise SolverError(f"non-finite solution at step {n + 1}")
        U[n + 1], Pv[n + 1], Lam[n] = x[:nu], x[nu:nu + npp], x[nu + npp:] / tau
        res[n + 1] = np.abs(B @ x[:nu + npp]).max(initial=0.0)
    return Trajectory(times, U, Pv, Lam, sys.variant, SADDLE, tau, res)


def lagrange_multiplier_report(traj: Trajectory, sys: PdaeSystem) -> np.ndarray:
    """``||lambda||_{L2(Gamma)}`` at ``t_1 .. t_N`` (multipliers already divided by tau)."""
    if traj.multipliers is None:
        raise SolverError("multipliers are not available for the eliminated formulation")
    MH, _ = assemble_boundary_matrices(sys.trace_mesh)
    L = traj.multipliers
    return np.sqrt(np.maximum(np.einsum("ij,ij->i", L, (MH @ L.T).T), 0.0))


def write_trajectory_csv(path, traj: Trajectory, sys: PdaeSystem) -> None:
    """One row per step: time, L2 norm of u, L2 norm of the constrained
    boundary value and the constraint residual."""
    MH, _ = assemble_boundary_matrices(sys.q_mesh)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "norm_u", "norm_p", "constraint_residual"])
        for k, t in enumerate(traj.times):
            u, p = traj.u[k], traj.p[k]
            w.writerow([f"{t:.6g}", f"{np.sqrt(u @ (sys.M_u @ u)):.12e}",
                        f"{np.sqrt(p @ (MH @ p)):.12e}", f"{traj.constraint_residual[k]:.3e}"])


@dataclass(frozen=True, eq=False)
class ProblemData:
    """Data of one parabolic problem: ``u0(x, y)``, ``f(x, y, t)``, ``g(s, t)``
    (numbers are accepted for constants)."""

    gamma_dyn: str
    coefficient: Optional[Coefficient]
    u0: object
    f: object = 0.0
    g: object = 0.0
    kappa: float = 0.1
    tau: float = 0.01
    T_end: float = 0.1
