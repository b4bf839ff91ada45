import numpy as np
import pytest

from tetdtn import fem
from tetdtn import fixtures as fx
from tetdtn import geometry as g
from tetdtn import meshing as mg
from tetdtn import stability as st
from tetdtn.errors import AmbiguousMatch, InconsistentCorrespondence, RegularityLost
from tetdtn.partition import Partition, PiecewiseField, deform


def test_threshold_arithmetic():
    c0, c1, r1 = 0.31, 0.73, 0.21
    assert st.erosion_depth(np.sqrt(c0 ** 2 * c1), c0, c1) == pytest.approx(1.0)
    assert st.admissible_l2_threshold(r1, c0, c1) ** 2 == pytest.approx(r1 ** 3 * c0 ** 2 * c1)


def test_match_identity(octa8_field):
    res = st.match_partitions(octa8_field, octa8_field, octa8_field.vs)
    assert res.matched
    assert np.array_equal(res.permutation, np.arange(8))
    assert res.pair_hausdorff.max() == 0.0


def test_match_reversed_order(octa8_field):
    p = octa8_field.partition
    rev = np.arange(p.n_tets)[::-1]
    p_rev = Partition(p.vertices.copy(), p.tets[rev].copy(), p.r1, p.N0)
    f_rev = PiecewiseField(p_rev, octa8_field.labels[rev].copy(), octa8_field.vs)
    res = st.match_partitions(octa8_field, f_rev, octa8_field.vs)
    assert res.matched
    assert np.array_equal(res.permutation, rev)


_jitter_instance = fx.matched_jitter_instance


def test_match_jittered_and_roundtrip():
    for seed, n in enumerate((4, 5, 6, 8, 10, 12)):
        f0, f1, expected = _jitter_instance(n, seed)
        res = st.match_partitions(f0, f1, f0.vs, seed=seed)
        assert res.matched, (n, res.unmatched_reason)
        assert np.array_equal(res.permutation, expected)
        d = st.vertex_correspondence(res, f0, f1)
        p_rt = deform(f0.partition, d, 1.0, floor=0.0)
        for j in range(f0.partition.n_tets):
            k = res.permutation[j]
            a = np.sort(p_rt.vertices[p_rt.tets[j]], axis=0)
            b = np.sort(f1.partition.vertices[f1.partition.tets[k]], axis=0)
            assert np.abs(a - b).max() < 1e-12


def test_match_symmetry_inverse_permutation():
    f0, f1, expected = _jitter_instance(8, 3)
    fwd = st.match_partitions(f0, f1, f0.vs, seed=3)
    bwd = st.match_partitions(f1, f0, f0.vs, seed=3)
    assert fwd.matched and bwd.matched
    inv = np.argsort(fwd.permutation)
    assert np.array_equal(bwd.permutation, inv)


def test_match_mismatch_volume_bound():
    f0, f1, _ = _jitter_instance(8, 5)
    res = st.match_partitions(f0, f1, f0.vs, seed=5)
    assert res.matched
    q0 = f0.tet_values()
    q1 = f1.tet_values()
    total = 0.0
    for j in range(f0.partition.n_tets):
        for k in range(f1.partition.n_tets):
            if q0[j] != q1[k]:
                total += g.intersection_volume(f0.partition.tetrahedron(j),
                                               f1.partition.tetrahedron(k))
    assert total <= res.eps ** 2 / f0.vs.c0 ** 2 * (1 + 1e-9)


def test_match_rejects_distant_fields():
    f0 = fx.octahedron_center()
    vs3 = fx.shifted_pair_values()
    fa = PiecewiseField(f0.partition, f0.labels, vs3)
    fb = PiecewiseField(f0.partition, f0.labels + 2, vs3)
    res = st.match_partitions(fa, fb, vs3)
    assert not res.matched
    assert res.unmatched_reason == "l2-distance-above-threshold"


def test_match_ambiguous_rotation():
    # quarter-turn of the 4-tet octahedron: every tetrahedron straddles
    # its two same-value images equally
    f0 = fx.octahedron_diagonal()
    p = f0.partition
    rot = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    p1 = Partition(p.vertices @ rot.T, p.tets.copy(), p.r1, p.N0)
    f1 = PiecewiseField(p1, f0.labels.copy(), f0.vs)
    big_c1 = 1e6  # force the gate open so the ambiguity is reached
    with pytest.raises(AmbiguousMatch):
        st.match_partitions(f0, f1, f0.vs, c1=big_c1)


def test_vertex_correspondence_zero(octa8_field):
    res = st.match_partitions(octa8_field, octa8_field, octa8_field.vs)
    d = st.vertex_correspondence(res, octa8_field, octa8_field)
    assert not np.any(d.displacements)


def test_vertex_correspondence_single_vertex(octa8_field):
    w = np.array([0.01, -0.02, 0.015])
    p = octa8_field.partition
    disp = np.zeros((p.n_vertices, 3))
    disp[0] = w
    p1 = Partition(p.vertices + disp, p.tets.copy(), p.r1, p.N0)
    f1 = PiecewiseField(p1, octa8_field.labels.copy(), octa8_field.vs)
    res = st.match_partitions(octa8_field, f1, octa8_field.vs)
    d = st.vertex_correspondence(res, octa8_field, f1)
    assert np.allclose(d.displacements[0], w, atol=1e-15)
    assert not np.any(d.displacements[1:])


def test_vertex_correspondence_rejects_large_displacements():
    # a displacement beyond a quarter of the minimal vertex separation
    # breaks the uniqueness of the pairing and must be refused
    f = fx.two_tet()
    p = f.partition
    stretch = p.vertices.copy()
    stretch[1] += np.array([0.35, 0.0, 0.0])
    with pytest.raises(InconsistentCorrespondence):
        p2 = Partition(stretch, p.tets.copy(), p.r1, p.N0)
        f2 = PiecewiseField(p2, f.labels.copy(), f.vs)
        res2 = st.match_partitions(f, f2, f.vs, c1=1e6)
        st.vertex_correspondence(res2, f, f2)


def test_lipschitz_sweep_rows(octa8_field, octa8_mesh, octa8_freq):
    d = fx.center_deformation(octa8_field, direction=(0.7, 0.5, -0.3),
                              magnitude=0.08)
    rows = st.lipschitz_sweep(octa8_field, d, octa8_freq,
                              [0.0, 0.5, 1.0], octa8_mesh)
    assert rows[0].t == 0.0 and rows[0].d_T == 0.0 and rows[0].dtn_norm == 0.0
    assert np.isnan(rows[0].ratio)
    for r in rows[1:]:
        assert r.d_T > 0 and r.dtn_norm > 0 and np.isfinite(r.ratio)
    # local linearity: ratios at t and t/2 within a factor 2
    assert 0.5 <= rows[1].ratio / rows[2].ratio <= 2.0


def test_lipschitz_sweep_propagates_regularity_loss(octa8_field, octa8_mesh,
                                                    octa8_freq):
    d = fx.center_deformation(octa8_field, direction=(1, 0, 0), magnitude=60.0)
    with pytest.raises(RegularityLost):
        st.lipschitz_sweep(octa8_field, d, octa8_freq, [0.0, 1.0], octa8_mesh)
