import itertools

import numpy as np
import pytest

from tetdtn import fem
from tetdtn import fixtures as fx
from tetdtn import geometry as g
from tetdtn import meshing as mg
from tetdtn.partition import ValueSet


def test_quadrature_exactness():
    for n in (2, 3):
        lam, w = fem.tet_quadrature(n)
        deg = 2 * n - 1
        for e in itertools.product(range(deg + 1), repeat=4):
            if sum(e) > deg:
                continue
            approx = float(np.sum(w * np.prod(lam ** np.array(e), axis=1)))
            exact = fem.simplex_monomial_integral(e) / fem.simplex_monomial_integral((0, 0, 0, 0))
            assert approx == pytest.approx(exact, abs=1e-14)
    lam, w = fem.tri_quadrature(3)
    for e in itertools.product(range(6), repeat=3):
        if sum(e) > 5:
            continue
        approx = float(np.sum(w * np.prod(lam ** np.array(e), axis=1)))
        exact = fem.simplex_monomial_integral(e) / fem.simplex_monomial_integral((0, 0, 0))
        assert approx == pytest.approx(exact, abs=1e-14)


def test_p1_mass_matrix_closed_form():
    assert np.allclose(20.0 * fem._MASS_TET[1], np.eye(4) + 1.0)


def test_admissibility_examples():
    vs = ValueSet((1.0, 0.5))
    bound = np.pi / np.sqrt(2.0)
    ok = fem.check_admissibility(fem.FrequencySpec(1.0, 0.5, bound - 1e-9, 1.0), vs)
    assert ok.admissible
    bad = fem.check_admissibility(fem.FrequencySpec(1.0, 0.5, bound + 1e-3, 1.0), vs)
    assert not bad.admissible
    assert bad.margin("omega1-bound") < 0.0
    # first ball eigenvalue scaling under the augmented radius
    r = 1.0
    lam_r = fem.LAMBDA1_UNIT_BALL / r ** 2
    r_t = 2.0 * r / np.sqrt(3.0)
    lam_rt = fem.LAMBDA1_UNIT_BALL / r_t ** 2
    assert lam_rt == pytest.approx(0.75 * lam_r, rel=1e-14)
    aug = fem.check_admissibility(fem.FrequencySpec(1.0, 0.5, bound - 1e-9, 1.0),
                                  vs, augmented=True)
    assert aug.admissible


def test_affine_reproduction(two_tet_field):
    mesh = mg.build_mesh(two_tet_field.partition, levels=2)
    fs = fem.FrequencySpec(1.0, 0.5, 2.0, 0.8)
    for order in (1, 2):
        space = fem.FemSpace(mesh, order)
        coords = space.dof_coords()
        bd = space.boundary_dofs()
        a, b = 0.3, np.array([1.0, -2.0, 0.5])
        sol = fem.solve_dirichlet(space, np.zeros(mesh.n_elems), fs,
                                  a + coords[bd] @ b)
        assert np.abs(sol.values - (a + coords @ b)).max() < 1e-12


def test_zero_trace(two_tet_field):
    mesh = mg.build_mesh(two_tet_field.partition, levels=2)
    space = fem.FemSpace(mesh, 1)
    qe = fem.element_potentials(mesh, two_tet_field)
    fs = fem.FrequencySpec(2.0, 1.0, 2.5, 0.8)
    sol = fem.solve_dirichlet(space, qe, fs, np.zeros(len(space.boundary_dofs())))
    assert np.abs(sol.values).max() == 0.0


def test_manufactured_convergence(two_tet_field):
    kappa, omega = 2.0, 1.5
    fq = kappa ** 2 / omega ** 2
    fs = fem.FrequencySpec(omega, 1.0, 2.0, 0.8)
    errs = []
    for lv in (2, 3, 4):
        mesh = mg.build_mesh(two_tet_field.partition, levels=lv)
        space = fem.FemSpace(mesh, 1)
        coords = space.dof_coords()
        bd = space.boundary_dofs()
        sol = fem.solve_dirichlet(space, np.full(mesh.n_elems, fq), fs,
                                  np.sin(kappa * coords[bd, 0]))
        errs.append(fem.l2_error(space, sol.values,
                                 lambda x: np.sin(kappa * x[:, 0])))
    slope = np.polyfit(np.log([1, 2, 4]), np.log(errs), 1)[0]
    assert -slope >= 1.9


def test_energy_identity(octa8_field, octa8_mesh, octa8_freq):
    space = fem.FemSpace(octa8_mesh, 1)
    qe = fem.element_potentials(octa8_mesh, octa8_field,
                                q0_tilde=octa8_field.vs.Q0)
    solver = fem.DirichletSolver(space, qe, octa8_freq.omega)
    rng = np.random.default_rng(3)
    tr = rng.normal(size=len(space.boundary_dofs()))
    u = solver.solve(tr)
    energy = u @ (solver.K @ u)
    pairing = solver.pairing(u, tr)
    assert abs(energy - pairing) <= 1e-9 * abs(energy)


def test_below_eigenvalue_positivity(two_tet_field):
    import scipy.linalg as sla
    mesh = mg.build_mesh(two_tet_field.partition, levels=2)
    space = fem.FemSpace(mesh, 1)
    qe = fem.element_potentials(mesh, two_tet_field)
    fs = fem.FrequencySpec(2.0, 1.0, 2.5, 0.8)
    assert fem.check_admissibility(fs, two_tet_field.vs).admissible
    solver = fem.DirichletSolver(space, qe, fs.omega)
    assert sla.eigvalsh(solver.K_II.toarray()).min() > 0.0


def _interp_p1(mesh_c, values, points):
    out = np.empty(len(points))
    remaining = np.arange(len(points))
    for ei in range(mesh_c.n_elems):
        if not len(remaining):
            break
        tet = g.Tetrahedron(mesh_c.nodes[mesh_c.elems[ei]])
        lam = g.barycentric(tet, points[remaining])
        inside = np.all(lam >= -1e-9, axis=1)
        if inside.any():
            idx = remaining[inside]
            out[idx] = lam[inside] @ values[mesh_c.elems[ei]]
            remaining = remaining[~inside]
    assert not len(remaining)
    return out


def test_galerkin_residual_decreases(two_tet_field):
    # residual of the prolonged coarse solution against the fine test
    # space shrinks under refinement
    fs = fem.FrequencySpec(2.0, 1.0, 2.5, 0.8)
    res_norms = []
    for lv in (1, 2):
        mesh_c = mg.build_mesh(two_tet_field.partition, levels=lv)
        mesh_f = mg.build_mesh(two_tet_field.partition, levels=lv + 1)
        sp_c = fem.FemSpace(mesh_c, 1)
        sp_f = fem.FemSpace(mesh_f, 1)
        qe_c = fem.element_potentials(mesh_c, two_tet_field)
        qe_f = fem.element_potentials(mesh_f, two_tet_field)
        coords_c = sp_c.dof_coords()
        bd_c = sp_c.boundary_dofs()
        u_c = fem.solve_dirichlet(sp_c, qe_c, fs,
                                  coords_c[bd_c, 0] ** 2 - coords_c[bd_c, 1]).values
        solver_f = fem.DirichletSolver(sp_f, qe_f, fs.omega)
        u_pro = _interp_p1(mesh_c, u_c, sp_f.dof_coords())
        resid = (solver_f.K @ u_pro)[solver_f.interior]
        res_norms.append(np.linalg.norm(resid))
    assert res_norms[1] < res_norms[0]
