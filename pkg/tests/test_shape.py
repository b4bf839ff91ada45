import numpy as np
import pytest

from tetdtn import fem
from tetdtn import fixtures as fx
from tetdtn import meshing as mg
from tetdtn import shape
from tetdtn.errors import NonPreservingDeformation, ZeroDeformation
from tetdtn.partition import Deformation, PiecewiseField


@pytest.fixture(scope="module")
def setup():
    f = fx.octahedron_center()
    fs = fem.FrequencySpec(2.5, 1.0, 3.0, 0.75)
    aug = mg.AugmentedDomain(R=0.75, q0_tilde=f.vs.Q0)
    mesh = mg.build_mesh(f.partition, levels=2, augmented=aug)
    space = fem.FemSpace(mesh, 1)
    bc = space.dof_coords()[space.boundary_dofs()]
    phi = bc[:, 0] + 0.5
    psi = bc[:, 1] * bc[:, 2] + 0.3
    return f, fs, mesh, phi, psi


def test_gateaux_zero_deformation(setup):
    f, fs, mesh, phi, psi = setup
    d0 = Deformation(np.zeros((f.partition.n_vertices, 3)))
    res = shape.gateaux_derivative(f, d0, 0.0, phi, psi, fs, mesh)
    assert res.value == 0.0 and res.volume == 0.0


def test_gateaux_linearity(setup):
    f, fs, mesh, phi, psi = setup
    d = fx.center_deformation(f, direction=(0.8, 0.4, -0.2), magnitude=0.06)
    v1 = shape.gateaux_derivative(f, d, 0.0, phi, psi, fs, mesh).value
    v2 = shape.gateaux_derivative(f, d.scaled(-3.0), 0.0, phi, psi, fs, mesh).value
    assert v2 == pytest.approx(-3.0 * v1, rel=1e-12)


def test_gateaux_divergence_agreement(setup):
    f, fs, mesh, phi, psi = setup
    d = fx.center_deformation(f, direction=(0.3, -0.9, 0.5), magnitude=0.05)
    res = shape.gateaux_derivative(f, d, 0.0, phi, psi, fs, mesh)
    assert res.divergence_defect < 1e-10
    # boundary-preserving: jump form equals the raw per-tet sum
    assert res.value == pytest.approx(res.raw_facet, rel=1e-10)


def test_finite_difference_agreement(setup):
    f, fs, mesh, phi, psi = setup
    d = fx.center_deformation(f, direction=(0.8, 0.4, -0.2), magnitude=0.06)
    deriv = shape.gateaux_derivative(f, d, 0.0, phi, psi, fs, mesh, order=1).value
    r = shape.finite_difference_R(f, d, 0.0, 1e-3, phi, psi, fs, mesh, order=1)
    assert r == pytest.approx(deriv, rel=0.2)  # order-1 space, coarse mesh


def test_finite_difference_zero_and_antisymmetry(setup):
    f, fs, mesh, phi, psi = setup
    d0 = Deformation(np.zeros((f.partition.n_vertices, 3)))
    for h in (1e-1, 1e-2):
        assert shape.finite_difference_R(f, d0, 0.0, h, phi, psi, fs, mesh) == 0.0
    d = fx.center_deformation(f, direction=(0.5, 0.2, 0.1), magnitude=0.05)
    h = 0.25
    fwd = shape.finite_difference_R(f, d, 0.0, h, phi, psi, fs, mesh)
    bwd = shape.finite_difference_R(f, d, h, -h, phi, psi, fs, mesh)
    assert fwd == pytest.approx(bwd, rel=1e-10)


def test_facet_form_equivalence(setup):
    f, fs, mesh, phi, psi = setup
    d = fx.center_deformation(f, direction=(0.7, 0.1, -0.6), magnitude=0.05)
    tet_sum, facet_sum = shape.facet_form_equivalence(f, d, phi, psi, fs, mesh)
    assert facet_sum == pytest.approx(tet_sum, rel=1e-10)
    raw = np.zeros((f.partition.n_vertices, 3))
    raw[1] = (0.0, 0.0, 0.05)  # boundary vertex moved off its planes
    with pytest.raises(NonPreservingDeformation):
        shape.facet_form_equivalence(
            f, Deformation(raw, boundary_preserving=False), phi, psi, fs, mesh)


def test_facet_form_zero_jump(setup):
    # equal adjacent values (diagnostic, inadmissible field): the
    # internal regrouping vanishes
    f, fs, mesh, phi, psi = setup
    same = PiecewiseField(f.partition, np.zeros_like(f.labels), f.vs)
    d = fx.center_deformation(f, direction=(0.2, 0.4, 0.9), magnitude=0.05)
    tet_sum, facet_sum = shape.facet_form_equivalence(same, d, phi, psi, fs, mesh)
    assert facet_sum == pytest.approx(0.0, abs=1e-14)
    assert tet_sum == pytest.approx(0.0, abs=1e-12)


def test_facet_measure_structure(setup):
    f, fs, mesh, phi, psi = setup
    d = fx.center_deformation(f, direction=(0.4, -0.5, 0.3), magnitude=0.07)
    fm = shape.facet_measure(f, d)
    n_boundary = sum(fm.boundary_flags)
    assert n_boundary == 8          # the octahedron faces
    assert len(fm.triangles) - n_boundary == 12  # internal facets
    for fv, bdry, jump in zip(fm.densities, fm.boundary_flags, fm.jumps):
        if bdry:
            assert not np.any(fv)
        else:
            assert abs(jump) >= f.vs.c0 - 1e-15


def test_facet_measure_ft(setup):
    f, fs, mesh, phi, psi = setup
    d = fx.center_deformation(f, direction=(0.4, -0.5, 0.3), magnitude=0.07)
    fm = shape.facet_measure(f, d)
    assert shape.facet_measure_ft(fm, np.zeros(3)) == pytest.approx(fm.total(), abs=1e-14)
    zero = Deformation(np.zeros((f.partition.n_vertices, 3)))
    with pytest.raises(ZeroDeformation):
        shape.facet_measure(f, zero)
    fm_raw = shape.facet_measure(f, d, normalized=False)
    fm2 = shape.facet_measure(f, d.scaled(2.0), normalized=False)
    rng = np.random.default_rng(4)
    for _ in range(3):
        xi = rng.normal(size=3) * 2
        # linear in the deformation
        assert shape.facet_measure_ft(fm2, xi) == pytest.approx(
            2.0 * shape.facet_measure_ft(fm_raw, xi), rel=1e-12)
    # quadrature oracle on one internal facet
    from tetdtn.cgo import triangle_ft_affine
    idx = fm.boundary_flags.index(False)
    tri, fv = fm.triangles[idx], fm.densities[idx]
    lam, w = fem.tri_quadrature(16)
    area = 0.5 * np.linalg.norm(np.cross(tri[1] - tri[0], tri[2] - tri[0]))
    xi = np.array([1.3, -0.4, 2.2])
    quad = area * np.sum(w * (lam @ fv) * np.exp(1j * ((lam @ tri) @ xi)))
    assert abs(triangle_ft_affine(tri, fv, xi[None, :])[0] - quad) < 1e-8


def test_derivative_norm_probe(setup):
    f, fs, mesh, phi, psi = setup
    d = fx.center_deformation(f, direction=(0.6, 0.3, 0.4), magnitude=0.05)
    rep = shape.derivative_norm_probe(f, d, fs, mesh, budget=15)
    assert rep.m0 > 0.0
    flip = shape.derivative_norm_probe(f, d.scaled(-1.0), fs, mesh, budget=15)
    assert flip.m0 == pytest.approx(rep.m0, rel=1e-10)
    zero = Deformation(np.zeros((f.partition.n_vertices, 3)))
    with pytest.raises(ZeroDeformation):
        shape.derivative_norm_probe(f, zero, fs, mesh)


def test_second_step_scaling_rows(setup):
    f, fs, mesh, phi, psi = setup
    d = fx.center_deformation(f, direction=(0.2, 0.9, -0.4), magnitude=0.12)
    rows, slope = shape.second_step_scaling(f, d, fs, mesh,
                                            s_grid=[0.0, 0.25, 0.5, 1.0],
                                            budget=10)
    assert rows[0] == (0.0, 0.0, 0.0)
    sups = [r[2] for r in rows[1:]]
    # continuity: no jumps beyond 10x between neighbors
    for a, b in zip(sups, sups[1:]):
        assert b < 10 * max(a, 1e-300)
    assert slope > 1.0
