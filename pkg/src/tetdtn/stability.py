"""Partition matching from the exact L2 distance of two fields, vertex
correspondence, and the stability sweep harness relating DtN norms to
the summed Hausdorff distance of a deformation family."""

from dataclasses import dataclass, field

import numpy as np

from . import fem, geometry
from .dtn import assemble_dtn_from_solver, boundary_gram, star_norm
from .errors import AmbiguousMatch, InconsistentCorrespondence
from .meshing import displace_mesh
from .partition import Deformation, exact_l2_distance, is_boundary_preserving

EROSION_SAMPLES = 512
TIE_TOL = 1e-12


def erosion_depth(eps, c0, c1):
    """Depth below which intersections with mismatched values cannot
    reach: (eps^2 / (c0^2 C1))^(1/3)."""
    return (eps ** 2 / (c0 ** 2 * c1)) ** (1.0 / 3.0)


def admissible_l2_threshold(r1, c0, c1):
    """Largest L2 distance the matching procedure accepts:
    sqrt(r1^3 c0^2 C1)."""
    return float(np.sqrt(r1 ** 3 * c0 ** 2 * c1))


def measured_c1(p, seed=0, n_centers=24, n_ball=2000):
    """Smallest observed small-ball volume ratio over the tetrahedra of
    a partition (empirical stand-in for the a-priori constant)."""
    return min(geometry.measured_ball_intersection_constant(
        p.tetrahedron(j), p.r1, n_centers=n_centers, n_ball=n_ball,
        seed=seed + j) for j in range(p.n_tets))


@dataclass
class MatchResult:
    n0: int
    n1: int
    permutation: np.ndarray | None
    unmatched_reason: str | None
    pair_hausdorff: np.ndarray | None
    blocks0: dict
    blocks1: dict
    eps: float
    delta: float
    eps_threshold: float
    c1: float

    @property
    def matched(self):
        return self.permutation is not None


def _blocks(f):
    out = {}
    for j, v in enumerate(f.tet_values()):
        out.setdefault(float(v), []).append(j)
    return out


def match_partitions(f0, f1, vs, c1=None, seed=0, samples=EROSION_SAMPLES):
    """Match the tetrahedra of two fields through their intersection
    volumes, following the eroded-inclusion argument.

    Returns a MatchResult; a failed match is a result (with the violated
    condition recorded), while a genuinely ambiguous same-value
    candidate pair raises AmbiguousMatch.
    """
    p0, p1 = f0.partition, f1.partition
    if c1 is None:
        c1 = min(measured_c1(p0, seed=seed), measured_c1(p1, seed=seed + 1000))
    eps = exact_l2_distance(f0, f1)
    r1 = min(p0.r1, p1.r1)
    eps1 = admissible_l2_threshold(r1, vs.c0, c1)
    blocks0, blocks1 = _blocks(f0), _blocks(f1)
    base = dict(n0=p0.n_tets, n1=p1.n_tets, blocks0=blocks0, blocks1=blocks1,
                eps=eps, c1=c1, eps_threshold=eps1, pair_hausdorff=None)
    if eps > eps1:
        return MatchResult(permutation=None, delta=float("nan"),
                           unmatched_reason="l2-distance-above-threshold", **base)
    delta = erosion_depth(eps, vs.c0, c1)
    base["eps"] = eps

    q0 = f0.tet_values()
    q1 = f1.tet_values()
    tets0 = p0.tetrahedra()
    tets1 = p1.tetrahedra()
    ivol = np.empty((p0.n_tets, p1.n_tets))
    for j in range(p0.n_tets):
        for k in range(p1.n_tets):
            ivol[j, k] = geometry.intersection_volume(tets0[j], tets1[k])

    # mismatched-value intersections must stay below eps^2 / c0^2
    bound = eps ** 2 / vs.c0 ** 2
    scale = max(p0.total_volume(), 1.0)
    for j in range(p0.n_tets):
        for k in range(p1.n_tets):
            if q0[j] != q1[k] and ivol[j, k] > bound * (1 + 1e-9) + 1e-15 * scale:
                return MatchResult(permutation=None, delta=delta,
                                   unmatched_reason="mismatch-volume-bound", **base)

    perm = np.full(p0.n_tets, -1, dtype=int)
    for j in range(p0.n_tets):
        cands = blocks1.get(float(q0[j]), [])
        if not cands:
            return MatchResult(permutation=None, delta=delta,
                               unmatched_reason="no-same-value-candidate", **base)
        vols = np.array([ivol[j, k] for k in cands])
        order = np.argsort(vols)[::-1]
        if len(cands) > 1 and abs(vols[order[0]] - vols[order[1]]) <= TIE_TOL * scale:
            raise AmbiguousMatch(
                f"tetrahedron {j}: two same-value candidates with equal "
                f"intersection volume {vols[order[0]]:.3e}")
        best = cands[int(order[0])]
        eroded = geometry.eroded_tetrahedron(tets0[j], delta)
        if eroded is None:
            return MatchResult(permutation=None, delta=delta,
                               unmatched_reason="erosion-empty", **base)
        pts = geometry.halton_interior(eroded, samples)
        hit = [k for k in cands if geometry.contains(tets1[k], pts).any()]
        if len(hit) > 1:
            raise AmbiguousMatch(
                f"tetrahedron {j}: eroded core meets candidates {hit}")
        if not geometry.contains(tets1[best], pts).all():
            return MatchResult(permutation=None, delta=delta,
                               unmatched_reason="eroded-inclusion", **base)
        perm[j] = best
    if len(set(perm.tolist())) != p0.n_tets or p0.n_tets != p1.n_tets:
        return MatchResult(permutation=None, delta=delta,
                           unmatched_reason="not-a-bijection", **base)
    dh = np.array([geometry.hausdorff(tets0[j], tets1[perm[j]])
                   for j in range(p0.n_tets)])
    base["pair_hausdorff"] = dh
    return MatchResult(permutation=perm, delta=delta, unmatched_reason=None,
                       **base)


def partition_d1(p):
    return min(geometry.regularity_constants(p.tetrahedron(j))[0]
               for j in range(p.n_tets))


def vertex_correspondence(match, f0, f1):
    """Per-vertex pairing of two matched partitions, returned as the
    Deformation sending partition 0 onto partition 1.

    Shared vertices must receive one displacement; each per-tetrahedron
    vertex pairing must move vertices by less than a quarter of the
    minimal vertex separation, which makes the pairing unique.
    """
    if not match.matched:
        raise InconsistentCorrespondence("cannot pair an unmatched result")
    p0, p1 = f0.partition, f1.partition
    d1 = min(partition_d1(p0), partition_d1(p1))
    disp = np.full((p0.n_vertices, 3), np.nan)
    for j in range(p0.n_tets):
        k = int(match.permutation[j])
        dist, perm = geometry.vertex_permutation_distance(
            p0.tetrahedron(j), p1.tetrahedron(k))
        if dist >= d1 / 4.0:
            raise InconsistentCorrespondence(
                f"pair ({j}, {k}): vertex displacement {dist:.3e} is not "
                f"below d1/4 = {d1 / 4.0:.3e}")
        for i in range(4):
            g0 = p0.tets[j][i]
            target = p1.vertices[p1.tets[k][perm[i]]]
            v = target - p0.vertices[g0]
            if np.isnan(disp[g0, 0]):
                disp[g0] = v
            elif np.linalg.norm(disp[g0] - v) > 1e-12 * max(p0.diameter, 1.0):
                raise InconsistentCorrespondence(
                    f"vertex {g0} receives conflicting displacements")
    disp[np.isnan(disp[:, 0])] = 0.0
    d = Deformation(disp, boundary_preserving=True)
    d.boundary_preserving = is_boundary_preserving(p0, d)
    return d


@dataclass
class SweepRow:
    t: float
    d_T: float
    dtn_norm: float
    ratio: float
    mesh_h: float
    n_dofs: int
    seed: int


def lipschitz_sweep(f0, d, fs, t_grid, mesh, order=1, q0_tilde=None, seed=0,
                    threads=1):
    """DtN difference norm against summed Hausdorff distance along the
    deformation family; pure harness, asserts nothing.

    mesh is the augmented mesh of the undeformed partition; every t uses
    its displaced copy so the outer boundary dofs stay identical.  The
    per-t solves are independent and run on `threads` workers.
    """
    from .partition import deform

    p = f0.partition
    if q0_tilde is None:
        q0_tilde = f0.vs.Q0
    space0 = fem.FemSpace(mesh, order)
    gram = boundary_gram(space0)
    tets0 = p.tetrahedra()

    def dtn_at(t):
        mesh_t = displace_mesh(mesh, p, d, t) if t != 0.0 else mesh
        space = fem.FemSpace(mesh_t, order)
        qe = fem.element_potentials(mesh_t, f0, q0_tilde=q0_tilde)
        solver = fem.DirichletSolver(space, qe, fs.omega)
        return assemble_dtn_from_solver(solver), space.n_dofs, mesh_t.h_max()

    dtn0, n_dofs, h0 = dtn_at(0.0)

    def row_at(t):
        if t == 0.0:
            return SweepRow(0.0, 0.0, 0.0, float("nan"), h0, n_dofs, seed)
        dtn_t, nd, h = dtn_at(float(t))
        p_t = deform(p, d, float(t), floor=0.0)
        d_t = sum(geometry.hausdorff(tets0[j], p_t.tetrahedron(j))
                  for j in range(p.n_tets))
        norm = star_norm(dtn_t.matrix - dtn0.matrix, gram).value
        ratio = norm / d_t if d_t > 0 else float("nan")
        return SweepRow(float(t), d_t, norm, ratio, h, nd, seed)

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(row_at, t_grid))
    return [row_at(t) for t in t_grid]
