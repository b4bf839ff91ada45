import numpy as np
import pytest

from tetdtn import dtn, fem
from tetdtn import fixtures as fx
from tetdtn import meshing as mg
from tetdtn import reconstruction as rc
from tetdtn.partition import Deformation


@pytest.fixture(scope="module")
def problem():
    f = fx.octahedron_center()
    fs = fem.FrequencySpec(2.5, 1.0, 3.0, 0.75)
    aug = mg.AugmentedDomain(R=0.75, q0_tilde=f.vs.Q0)
    mesh = mg.build_mesh(f.partition, levels=2, augmented=aug)
    space = fem.FemSpace(mesh, 2)
    gram = dtn.boundary_gram(space)
    qe = fem.element_potentials(mesh, f, q0_tilde=f.vs.Q0)
    self_dtn = dtn.assemble_dtn(space, qe, fs)
    return f, fs, mesh, gram, self_dtn


def _offset_target(f, fs, mesh, direction, magnitude):
    d_true = fx.center_deformation(f, direction=direction, magnitude=magnitude)
    mesh_true = mg.displace_mesh(mesh, f.partition, d_true, 1.0)
    qe = fem.element_potentials(mesh_true, f, q0_tilde=f.vs.Q0)
    target = dtn.assemble_dtn(fem.FemSpace(mesh_true, 2), qe, fs)
    return d_true, target


def test_misfit_zero_at_truth(problem):
    f, fs, mesh, gram, self_dtn = problem
    assert rc.misfit(f, self_dtn, gram, fs, mesh) <= 1e-24


def test_misfit_quadratic_scaling(problem):
    f, fs, mesh, gram, self_dtn = problem
    _, target = _offset_target(f, fs, mesh, (0.3, 0.8, -0.1), 0.03)
    m1 = rc.misfit(f, target, gram, fs, mesh)
    scaled = dtn.DtnMatrix(
        matrix=self_dtn.matrix + 3.0 * (target.matrix - self_dtn.matrix),
        bdofs=target.bdofs, space=target.space, omega=target.omega)
    m3 = rc.misfit(f, scaled, gram, fs, mesh)
    assert m3 == pytest.approx(9.0 * m1, rel=1e-10)


def test_misfit_line_scan_decreases(problem):
    f, fs, mesh, gram, _ = problem
    d_true, target = _offset_target(f, fs, mesh, (0.5, -0.7, 0.4), 0.04)
    ev = rc.MisfitEvaluator(f, fs, mesh, target, budget=25, order=2)
    values = [ev.misfit(s * d_true.displacements) for s in (0.0, 0.5, 1.0)]
    assert values[0] > values[1] > values[2]
    assert values[2] <= 1e-24


def test_gradient_matches_finite_differences_two_tet():
    f = fx.two_tet()
    fs = fem.FrequencySpec(2.0, 1.0, 2.6, 0.8)
    aug = mg.AugmentedDomain(R=0.8, q0_tilde=f.vs.Q0)
    mesh = mg.build_mesh(f.partition, levels=2, augmented=aug)
    raw = np.zeros((f.partition.n_vertices, 3))
    raw[1] = (0.0, 0.0, 0.02)
    d_true = Deformation(raw, boundary_preserving=False)
    mesh_true = mg.displace_mesh(mesh, f.partition, d_true, 1.0)
    qe = fem.element_potentials(mesh_true, f, q0_tilde=f.vs.Q0)
    target = dtn.assemble_dtn(fem.FemSpace(mesh_true, 2), qe, fs)
    ev = rc.MisfitEvaluator(f, fs, mesh, target, budget=20, order=2)
    zero = np.zeros_like(raw)
    grad = ev.gradient(zero, constrain=False)
    from tetdtn.stability import partition_d1
    h = 1e-3 * partition_d1(f.partition)
    rng = np.random.default_rng(2)
    for _ in range(3):
        v, a = rng.integers(0, f.partition.n_vertices), rng.integers(0, 3)
        dd = zero.copy()
        dd[v, a] = h
        up = ev.misfit(dd)
        dd[v, a] = -h
        dn = ev.misfit(dd)
        fd = (up - dn) / (2 * h)
        assert grad[v, a] == pytest.approx(fd, rel=0.05)


def test_gradient_equivariant_under_relabeling(problem):
    f, fs, mesh, gram, _ = problem
    _, target = _offset_target(f, fs, mesh, (0.6, 0.1, -0.5), 0.03)
    g1 = rc.misfit_gradient(f, target, gram, fs, mesh)
    # relabel the tetrahedra; vertices keep their global ids
    from tetdtn.partition import Partition, PiecewiseField
    p = f.partition
    perm = np.arange(p.n_tets)[::-1]
    p2 = Partition(p.vertices.copy(), p.tets[perm].copy(), p.r1, p.N0)
    f2 = PiecewiseField(p2, f.labels[perm].copy(), f.vs)
    aug = mg.AugmentedDomain(R=fs.R, q0_tilde=f.vs.Q0)
    mesh2 = mg.build_mesh(p2, levels=2, augmented=aug)
    space2 = fem.FemSpace(mesh2, 2)
    gram2 = dtn.boundary_gram(space2)
    # target on the relabeled mesh: same geometry, same dof layout order
    d_true = fx.center_deformation(f2, direction=(0.6, 0.1, -0.5),
                                   magnitude=0.03)
    mesh2_true = mg.displace_mesh(mesh2, p2, d_true, 1.0)
    qe2 = fem.element_potentials(mesh2_true, f2, q0_tilde=f.vs.Q0)
    target2 = dtn.assemble_dtn(fem.FemSpace(mesh2_true, 2), qe2, fs)
    g2 = rc.misfit_gradient(f2, target2, gram2, fs, mesh2)
    assert np.allclose(g1, g2, rtol=1e-8, atol=1e-18)


def test_landweber_terminates_at_truth(problem):
    f, fs, mesh, gram, self_dtn = problem
    cfg = rc.ReconstructionConfig(max_iters=5, tol=1e-20, levels=2, order=2)
    final, log = rc.landweber_run(f, self_dtn, cfg, fs, mesh=mesh, truth=f)
    assert len(log.rows) == 1
    assert log.rows[0].misfit <= 1e-20
    assert np.array_equal(final.partition.vertices, f.partition.vertices)


def test_landweber_backtracking_safeguard(problem):
    f, fs, mesh, gram, _ = problem
    d_true, target = _offset_target(f, fs, mesh, (0.2, -0.9, 0.3), 0.04)
    truth = rc._final_field(f, d_true.displacements)
    cfg = rc.ReconstructionConfig(step_size=1e6, max_iters=3, tol=1e-22,
                                  levels=2, order=2)
    final, log = rc.landweber_run(f, target, cfg, fs, mesh=mesh, truth=truth)
    rejected = [r for r in log.rows if not r.accepted]
    assert rejected, "the huge step must engage backtracking"
    floor = 0.5 * f.partition.r1
    for r in log.rows:
        if r.accepted:
            assert r.min_insphere >= floor - 1e-12
    acc = log.accepted_misfits()
    assert all(b <= a for a, b in zip(acc, acc[1:]))


def test_landweber_seeded_convergence(problem):
    f, fs, mesh, gram, _ = problem
    for seed in (0, 1):
        rng = np.random.default_rng(seed)
        d_true, target = _offset_target(f, fs, mesh, rng.normal(size=3), 0.04)
        truth = rc._final_field(f, d_true.displacements)
        cfg = rc.ReconstructionConfig(step_size=1.0, max_iters=25,
                                      tol=1e-18, levels=2, order=2)
        final, log = rc.landweber_run(f, target, cfg, fs, mesh=mesh, truth=truth)
        acc = [r for r in log.rows if r.accepted]
        assert acc[-1].misfit <= 0.1 * acc[0].misfit
        assert acc[-1].d_T <= 0.5 * acc[0].d_T
