"""Condensed solver, uncondensed reference solver, and their equivalence."""

import numpy as np
import pytest

from brinkhdg.fespace import Spaces, normal_trace_jumps
from brinkhdg.forms import element_blocks
from brinkhdg.hybrid import (build_local_solvers, compare_fields,
                             evaluate_fields, mass_balance_residual,
                             pressure_integral, solve_direct, solve_hybrid,
                             write_solution_text)
from brinkhdg.linalg import SingularMatrixError
from brinkhdg.mesh import QUAD, TRIANGLE, build_structured_mesh
from brinkhdg.verify import error_norms, make_case


def zero_vec(x):
    return np.zeros((x.shape[0], 2))


def zero_scalar(x):
    return np.zeros(x.shape[0])


def solve_case(kind, n, k, case, fine_degree=None):
    spaces = Spaces(build_structured_mesh(n, kind), k, fine_degree=fine_degree)
    fields = solve_hybrid(spaces, case.nu, case.gamma,
                          case.body_force, case.mass_source)
    return spaces, fields


def test_local_energy_symmetric_psd():
    for kind in (QUAD, TRIANGLE):
        spaces = Spaces(build_structured_mesh(2, kind), 1)
        for solver in build_local_solvers(spaces, 1.0, 1.0):
            e = solver.energy
            assert np.abs(e - e.T).max() < 1e-11
            evals = np.linalg.eigvalsh(0.5 * (e + e.T))
            assert evals[0] > -1e-10 * max(evals[-1], 1.0)


def test_local_solver_counts_match_classes():
    spaces = Spaces(build_structured_mesh(4, QUAD), 1)
    solvers = build_local_solvers(spaces, 1.0, 1.0)
    assert len(solvers) == len(spaces.class_rep)


def test_zero_data_gives_zero_solution():
    for kind in (QUAD, TRIANGLE):
        spaces = Spaces(build_structured_mesh(2, kind), 1)
        fields = solve_hybrid(spaces, 1.0, 1.0, zero_vec, zero_scalar)
        for arr in (fields.l, fields.u, fields.p, fields.uhat_t,
                    fields.uhat_n, fields.pbar, fields.ustar):
            assert np.abs(arr).max() < 1e-12


def test_hybrid_matches_direct():
    case = make_case(1)
    for kind in (QUAD, TRIANGLE):
        spaces, fields = solve_case(kind, 2, 1, case)
        direct = solve_direct(spaces, case.nu, case.gamma,
                              case.body_force, case.mass_source)
        diffs = compare_fields(spaces, fields, direct)
        assert max(diffs.values()) < 1e-10, diffs


def test_hybrid_matches_direct_anisotropic_gamma():
    gamma = np.array([[2.0, 0.4], [0.4, 1.0]])
    spaces = Spaces(build_structured_mesh(2, QUAD), 1)
    case = make_case(1)
    a = solve_hybrid(spaces, 0.5, gamma, case.body_force, case.mass_source)
    b = solve_direct(spaces, 0.5, gamma, case.body_force, case.mass_source)
    assert max(compare_fields(spaces, a, b).values()) < 1e-10


def test_solution_is_hdiv_conforming():
    case = make_case(1)
    for kind in (QUAD, TRIANGLE):
        spaces, fields = solve_case(kind, 4, 1, case)
        jump, boundary = normal_trace_jumps(spaces, fields.u)
        assert jump < 1e-11
        assert boundary < 1e-11


def test_elementwise_mass_balance():
    case = make_case(1)
    spaces, fields = solve_case(QUAD, 4, 1, case)
    assert mass_balance_residual(spaces, fields, case.mass_source) < 1e-12


def test_pressure_mean_zero():
    case = make_case(1)
    for kind in (QUAD, TRIANGLE):
        spaces, fields = solve_case(kind, 4, 1, case)
        assert abs(pressure_integral(spaces, fields)) < 1e-12


def test_normal_trace_equals_facet_unknown():
    # the recovered velocity satisfies tr_n(u^h) = uhat_n on interior facets
    case = make_case(1)
    spaces, fields = solve_case(QUAD, 2, 1, case)
    mesh = spaces.mesh
    kk = spaces.family.n_facet
    for f in mesh.interior_facets:
        c = int(mesh.facet_cells[f, 0])
        tab = spaces.tab(c)
        lf = spaces.local_facet(c, f)
        ft = tab.facets[lf]
        vn = np.einsum("m,mcq,c->q", fields.u[c], ft.v, ft.normal)
        mom = np.einsum("jq,q,q->j", ft.phi, vn, ft.w) / ft.h
        rank = mesh.interior_index[f]
        assert np.abs(mom - fields.uhat_n[rank * kk:(rank + 1) * kk]).max() < 1e-11


def test_cell_pressure_average_consistent():
    case = make_case(1)
    spaces, fields = solve_case(QUAD, 2, 1, case)
    for c in range(spaces.mesh.num_cells):
        tab = spaces.tab(c)
        area = tab.wdet.sum()
        mean = np.einsum("i,iq,q->", fields.p[c], tab.q_vals, tab.wdet) / area
        assert abs(mean - fields.pbar[c]) < 1e-12


def test_dof_count_report():
    spaces = Spaces(build_structured_mesh(2, QUAD), 1)
    case = make_case(1)
    fields = solve_hybrid(spaces, case.nu, case.gamma,
                          case.body_force, case.mass_source)
    # 4 interior facets, 2 moments each, two trace families, plus 4 cells
    assert fields.n_global == 2 * 8 + 4
    # local block per cell: gradient rows + velocity + mean-free pressure
    # + facet multiplier
    fam = spaces.family
    per_cell = 2 * fam.n_g + fam.n_v + (fam.n_q - 1) + 4 * fam.n_facet
    assert fields.n_local == 4 * per_cell


def test_reference_table_value():
    # 256-cell squares, degree 1: velocity error 4.211e-03
    case = make_case(1)
    spaces, fields = solve_case(QUAD, 16, 1, case)
    report = error_norms(spaces, fields, case)
    assert report.err_u == pytest.approx(4.211e-03, rel=0.05)


def test_degenerate_coefficients_detected():
    spaces = Spaces(build_structured_mesh(2, QUAD), 1)
    tab = spaces.tab(0)
    blocks = element_blocks(tab, 0.0, 0.0)  # no viscosity, no resistance
    from brinkhdg.hybrid import LocalSolver
    with pytest.raises(SingularMatrixError):
        LocalSolver(blocks, spaces.family)


def test_point_evaluation_matches_projection_error():
    case = make_case(1)
    spaces, fields = solve_case(QUAD, 8, 2, case)
    pts = np.array([[0.31, 0.41], [0.77, 0.12], [0.5, 0.99]])
    out = evaluate_fields(spaces, fields, pts)
    exact = case.velocity(pts)
    # discretization error at k=2 on h=1/8 is far below 1e-2 pointwise
    assert np.abs(out["u"] - exact).max() < 1e-2
    assert np.abs(out["p"] - case.pressure(pts)).max() < 1e-1
    assert np.abs(out["ustar"] - exact).max() < 1e-3
    assert out["l"].shape == (3, 2, 2)


def test_solution_dump_reproducible(tmp_path):
    case = make_case(1)
    spaces, fields = solve_case(TRIANGLE, 2, 1, case)
    pa = tmp_path / "a.txt"
    pb = tmp_path / "b.txt"
    write_solution_text(pa, spaces, fields)
    fields2 = solve_hybrid(spaces, case.nu, case.gamma,
                           case.body_force, case.mass_source)
    write_solution_text(pb, spaces, fields2)
    assert pa.read_text() == pb.read_text()
    assert pa.read_text().startswith("cell_kind triangle k 1 cells 8\n")
