import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from lodbs.coefficients import make_constant_coefficient, make_random_coefficient, make_smooth_coefficient
from lodbs.lod import CLEMENT, FORM_PLAIN, FORM_SHIFTED, NODAL, compute_correctors, lod_basis_matrix
from lodbs.mesh import GAMMA_BOTTOM, GAMMA_FULL, build_bulk_mesh, refine_boundary, restrict_to_boundary
from lodbs.pdae_solver import (ELIMINATED, PGLOD, SADDLE, STANDARD, SolverError, assemble_system,
                               implicit_euler, lagrange_multiplier_report, solve_saddle,
                               write_trajectory_csv)


def u0(x, y):
    return np.sin(np.pi * x) * np.cos(2.5 * np.pi * y + 1.0)


def _lod(mesh, c, levels=3, m=1, kind=NODAL, form=FORM_PLAIN):
    coarse = restrict_to_boundary(mesh)
    fine = refine_boundary(coarse, levels)
    return lod_basis_matrix(compute_correctors(fine, coarse, c, m, form, kind))


def _energy(traj, sys, k):
    u, p = traj.u[k], traj.p[k]
    return u @ (sys.M_u @ u) + p @ (sys.M_p @ p)


@pytest.mark.parametrize("formulation", [SADDLE, ELIMINATED])
def test_zero_data_gives_zero_trajectory(formulation):
    sys = assemble_system(build_bulk_mesh(4), make_smooth_coefficient(0.125), formulation=formulation)
    traj = implicit_euler(sys, 0.01, 0.05, 0.0)
    assert traj.n_steps == 5
    assert not traj.u.any() and not traj.p.any()


@pytest.mark.parametrize("gamma", [GAMMA_FULL, GAMMA_BOTTOM])
def test_energy_decays_without_sources(gamma):
    sys = assemble_system(build_bulk_mesh(8, gamma), make_smooth_coefficient(0.125))
    traj = implicit_euler(sys, 0.01, 0.1, u0)
    E = [_energy(traj, sys, k) for k in range(traj.times.size)]
    assert all(b < a for a, b in zip(E, E[1:]))


def test_trace_identities():
    mesh = build_bulk_mesh(4)
    sys = assemble_system(mesh, None)
    assert sys.p_equals_trace
    assert abs(sys.B_u + sys.B_p @ sys.trace).max() < 1e-14
    q = refine_boundary(restrict_to_boundary(mesh), 1)
    assert not assemble_system(mesh, None, q_mesh=q).p_equals_trace


@pytest.mark.parametrize("gamma", [GAMMA_FULL, GAMMA_BOTTOM])
def test_constraint_holds_every_step(gamma):
    mesh = build_bulk_mesh(8, gamma)
    q = refine_boundary(restrict_to_boundary(mesh), 2)
    sys = assemble_system(mesh, make_smooth_coefficient(2.0**-4), q_mesh=q)
    traj = implicit_euler(sys, 0.01, 0.1, u0, 1.0, lambda s, t: np.full(np.shape(s), t))
    assert traj.constraint_residual[1:].max() < 1e-13


@pytest.mark.parametrize("variant", [STANDARD, PGLOD])
@pytest.mark.parametrize("gamma", [GAMMA_FULL, GAMMA_BOTTOM])
def test_saddle_matches_eliminated(variant, gamma):
    mesh = build_bulk_mesh(8, gamma)
    c = make_random_coefficient(2.0**-6, 4, 4.0 if gamma == GAMMA_FULL else 1.0,
                                periodic=gamma == GAMMA_FULL)
    lod = _lod(mesh, c) if variant == PGLOD else None
    g = lambda s, t: np.full(np.shape(s), t)  # noqa: E731
    runs = [implicit_euler(assemble_system(mesh, c, 0.1, variant, lod, formulation=f),
                           0.01, 0.1, u0, 1.0, g) for f in (SADDLE, ELIMINATED)]
    assert np.abs(runs[0].u - runs[1].u).max() < 1e-12
    assert np.abs(runs[0].p - runs[1].p).max() < 1e-12
    assert runs[1].multipliers is None


def test_pglod_without_correction_equals_standard():
    # constant coefficient and nodal interpolation: the correctors vanish
    mesh = build_bulk_mesh(8)
    c = make_constant_coefficient(0.7)
    lod = _lod(mesh, c, levels=3, m=None)
    a = implicit_euler(assemble_system(mesh, c, 0.1, PGLOD, lod), 0.01, 0.1, u0, 1.0)
    b = implicit_euler(assemble_system(mesh, c, 0.1, STANDARD), 0.01, 0.1, u0, 1.0)
    assert np.abs(a.u - b.u).max() < 1e-12
    assert np.abs(a.p - b.p).max() < 1e-12


def test_block_symmetry():
    mesh = build_bulk_mesh(8)
    c = make_smooth_coefficient(2.0**-5)
    std = assemble_system(mesh, c)
    assert abs(std.saddle_matrix(0.01) - std.saddle_matrix(0.01).T).max() < 1e-14
    # a periodic coefficient aligned with the coarse mesh would make every
    # patch alike and the PG matrix symmetric by translation invariance
    r = make_random_coefficient(2.0**-6, 9, 4.0)
    pg = assemble_system(mesh, r, 0.1, PGLOD, _lod(mesh, r, kind=CLEMENT, form=FORM_SHIFTED))
    # Petrov-Galerkin blocks are generally not symmetric, the bulk ones are
    assert abs(pg.M_u - pg.M_u.T).max() < 1e-14 and abs(pg.K - pg.K.T).max() < 1e-14
    assert abs(pg.A_p - pg.A_p.T).max() > 1e-8


def test_solve_saddle_identity_and_random_spd():
    x = solve_saddle(sp.eye(3, format="csc"), None, np.array([1.0, 2.0, 3.0]))
    assert np.array_equal(x, [1.0, 2.0, 3.0])
    rng = np.random.default_rng(0)
    X = rng.standard_normal((50, 50))
    A = sp.csc_matrix(X @ X.T + 50 * np.eye(50))
    B = sp.csr_matrix(rng.standard_normal((5, 50)))
    rhs = rng.standard_normal(55)
    sol = solve_saddle(A, B, rhs)
    S = np.block([[A.toarray(), B.T.toarray()], [B.toarray(), np.zeros((5, 5))]])
    assert np.allclose(S @ sol, rhs, atol=1e-11)


def test_solve_saddle_rejects_singular():
    A = sp.csc_matrix(np.diag([1.0, 0.0]))
    with pytest.raises(SolverError):
        solve_saddle(A, None, np.ones(2))


def test_constant_state_has_zero_multiplier():
    mesh = build_bulk_mesh(8)
    sys = assemble_system(mesh, make_smooth_coefficient(2.0**-5))
    traj = implicit_euler(sys, 0.01, 0.1, 1.0)
    assert np.abs(traj.u - 1.0).max() < 1e-12 and np.abs(traj.p - 1.0).max() < 1e-12
    assert lagrange_multiplier_report(traj, sys).max() < 1e-10


def test_multiplier_closes_boundary_equation():
    # first step of the boundary row: M_p (p1 - p0) / tau + A_p p1 + B_p^T lam = 0
    mesh = build_bulk_mesh(8)
    sys = assemble_system(mesh, None)
    traj = implicit_euler(sys, 0.01, 0.05, u0)
    p1, p0 = traj.p[1], traj.p[0]
    lam = traj.multipliers[0]
    lhs = sys.M_p @ (p1 - p0) / 0.01 + sys.A_p @ p1 + sys.B_p.T @ lam
    assert np.abs(lhs).max() < 1e-10


def test_multiplier_norms_converge():
    norms = []
    for n in (8, 16, 32):
        sys = assemble_system(build_bulk_mesh(n), make_smooth_coefficient(0.25))
        traj = implicit_euler(sys, 0.01, 0.1, u0, 1.0)
        norms.append(lagrange_multiplier_report(traj, sys)[-1])
    assert abs(norms[2] - norms[1]) < abs(norms[1] - norms[0])


def test_eliminated_has_no_multiplier_report():
    sys = assemble_system(build_bulk_mesh(4), None, formulation=ELIMINATED)
    with pytest.raises(SolverError):
        lagrange_multiplier_report(implicit_euler(sys, 0.01, 0.02, u0), sys)


def test_pglod_requires_matching_space():
    mesh = build_bulk_mesh(4)
    with pytest.raises(ValueError):
        assemble_system(mesh, None, 0.1, PGLOD)
    with pytest.raises(ValueError):
        assemble_system(mesh, None, 0.1, PGLOD, _lod(build_bulk_mesh(8), None))
    with pytest.raises(ValueError):
        assemble_system(mesh, None, q_mesh=refine_boundary(restrict_to_boundary(mesh), 1),
                        formulation=ELIMINATED)


@pytest.mark.parametrize("tau,T", [(0.0, 0.1), (0.03, 0.1)])
def test_time_grid_validation(tau, T):
    with pytest.raises(ValueError):
        implicit_euler(assemble_system(build_bulk_mesh(2), None), tau, T, 0.0)


def test_trajectory_csv(tmp_path):
    sys = assemble_system(build_bulk_mesh(4), None)
    traj = implicit_euler(sys, 0.01, 0.03, u0)
    path = tmp_path / "traj.csv"
    write_trajectory_csv(path, traj, sys)
    lines = path.read_text().splitlines()
    assert lines[0] == "t,norm_u,norm_p,constraint_residual" and len(lines) == 5


@given(a=st.floats(-2, 2), b=st.floats(-2, 2))
@settings(max_examples=10, deadline=None)
def test_solution_is_linear_in_initial_data(a, b):
    sys = assemble_system(build_bulk_mesh(4), make_smooth_coefficient(0.125))
    v = lambda x, y: np.cos(np.pi * x) * y  # noqa: E731
    ta = implicit_euler(sys, 0.01, 0.03, u0)
    tb = implicit_euler(sys, 0.01, 0.03, v)
    tc = implicit_euler(sys, 0.01, 0.03, lambda x, y: a * u0(x, y) + b * v(x, y))
    assert np.abs(tc.u - (a * ta.u + b * tb.u)).max() < 1e-12
