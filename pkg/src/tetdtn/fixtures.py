"""Reference partitions, fields and deformations.

All fixtures are centered at the origin and star-shaped with respect to
it, which the augmented-domain mesher requires.  Adjacency graphs of all
two-value fixtures are bipartite so that adjacent tetrahedra can carry
distinct values.
"""

import numpy as np

from .partition import (Deformation, Partition, PiecewiseField, ValueSet,
                        project_boundary_tangent)

SQ3 = np.sqrt(3.0)


def two_values():
    return ValueSet((0.05, 0.14))


def three_values():
    return ValueSet((0.05, 0.14, 0.26))


def shifted_pair_values(shift=0.35):
    """Four values arranged as two pairs offset by a constant shift, so a
    globally shifted relabeling produces a difference proportional to the
    domain indicator."""
    return ValueSet((0.05, 0.14, 0.05 + shift, 0.14 + shift))


def _declared_r1(p, slack=0.999):
    return slack * float(p.insphere_radii().min())


def _finish(vertices, tets, labels, vs, n0_margin=4):
    p = Partition(np.asarray(vertices, dtype=float), np.asarray(tets, dtype=int),
                  r1=1.0, N0=len(tets) + n0_margin)
    p.r1 = _declared_r1(p)
    return PiecewiseField(p, np.asarray(labels, dtype=int), vs)


def two_tet(rho=0.55, h=0.65, vs=None):
    """Triangular bipyramid: two tetrahedra sharing one facet.

    Boundary-rigid: every vertex lies on at least three independent
    boundary planes, so only diagnostic (non-preserving) deformations
    move it.
    """
    vs = vs or two_values()
    verts = [
        (0.0, 0.0, h),
        (rho, 0.0, 0.0),
        (-rho / 2, rho * SQ3 / 2, 0.0),
        (-rho / 2, -rho * SQ3 / 2, 0.0),
        (0.0, 0.0, -h),
    ]
    tets = [(0, 1, 2, 3), (4, 1, 2, 3)]
    return _finish(verts, tets, [0, 1], vs)


def octahedron_diagonal(s=0.6, vs=None):
    """Octahedron split into 4 tetrahedra around the vertical diagonal;
    adjacency is a 4-cycle, so two values suffice."""
    vs = vs or two_values()
    verts = [
        (0.0, 0.0, s), (0.0, 0.0, -s),
        (s, 0.0, 0.0), (0.0, s, 0.0), (-s, 0.0, 0.0), (0.0, -s, 0.0),
    ]
    eq = [2, 3, 4, 5]
    tets = [(0, 1, eq[i], eq[(i + 1) % 4]) for i in range(4)]
    return _finish(verts, tets, [0, 1, 0, 1], vs)


def octahedron_center(s=0.7, vs=None):
    """Octahedron split into 8 tetrahedra meeting at the center vertex.

    The center (global vertex 0) is the only vertex free to move under
    boundary-preserving deformations; the face-adjacency graph is the
    cube graph, hence bipartite.
    """
    vs = vs or two_values()
    verts = [(0.0, 0.0, 0.0)]
    axis = {}
    for k in range(3):
        for sign in (1, -1):
            v = [0.0, 0.0, 0.0]
            v[k] = sign * s
            axis[(k, sign)] = len(verts)
            verts.append(tuple(v))
    tets, labels = [], []
    for sx in (1, -1):
        for sy in (1, -1):
            for sz in (1, -1):
                tets.append((0, axis[(0, sx)], axis[(1, sy)], axis[(2, sz)]))
                labels.append(0 if sx * sy * sz > 0 else 1)
    return _finish(verts, tets, labels, vs)


def cube_five(center=(0.0, 0.0, 0.0), half=0.6, parity=0, vs=None, labels=(0, 1)):
    """Cube split into a central tetrahedron plus four corner tetrahedra.

    The adjacency graph is the star K_{1,4}.  parity flips which corner
    parity class forms the central tetrahedron (needed to make stacked
    cubes conforming).
    """
    vs = vs or two_values()
    c = np.asarray(center, dtype=float)
    corners = {}
    verts = []
    for sx in (-1, 1):
        for sy in (-1, 1):
            for sz in (-1, 1):
                corners[(sx, sy, sz)] = len(verts)
                verts.append(tuple(c + half * np.array([sx, sy, sz])))

    def par(sgn):
        return (sgn[0] * sgn[1] * sgn[2] > 0) == (parity == 0)

    central = [s for s in corners if par(s)]
    tets = [tuple(corners[s] for s in central)]
    labs = [labels[0]]
    for s in corners:
        if par(s):
            continue
        nb = [corners[tuple(-v if i == k else v for i, v in enumerate(s))]
              for k in range(3)]
        tets.append((corners[s], nb[0], nb[1], nb[2]))
        labs.append(labels[1])
    return _finish(verts, tets, labs, vs)


def kuhn_cube(half=0.6, vs=None):
    """Cube split into the six Kuhn simplices around the main diagonal;
    adjacency is a 6-cycle, labels alternate with permutation parity."""
    vs = vs or two_values()
    from itertools import permutations as perms
    lo = -half * np.ones(3)
    verts, vid = [], {}

    def node(x):
        key = tuple(round(float(v), 12) for v in x)
        if key not in vid:
            vid[key] = len(verts)
            verts.append(key)
        return vid[key]

    tets, labels = [], []
    for sigma in perms(range(3)):
        pts = [lo.copy()]
        for k in sigma:
            nxt = pts[-1].copy()
            nxt[k] += 2 * half
            pts.append(nxt)
        tets.append(tuple(node(x) for x in pts))
        inv = sum(1 for i in range(3) for j in range(i + 1, 3)
                  if sigma[i] > sigma[j])
        labels.append(inv % 2)
    return _finish(verts, tets, labels, vs)


def stacked_cubes(half=0.55, vs=None):
    """Two conforming five-tet cubes stacked along z (10 tetrahedra).

    The four corners of the internal interface can slide along the
    vertical box edges under boundary-preserving deformations.
    """
    vs = vs or two_values()
    bottom = cube_five(center=(0, 0, -half), half=half, parity=0, vs=vs,
                       labels=(0, 1))
    top = cube_five(center=(0, 0, half), half=half, parity=1, vs=vs,
                    labels=(1, 0))
    tet_arrays = [bottom.partition.vertices[t] for t in bottom.partition.tets]
    tet_arrays += [top.partition.vertices[t] for t in top.partition.tets]
    p = Partition.from_tetrahedra(tet_arrays, r1=1.0, N0=14)
    p.r1 = _declared_r1(p)
    labels = list(bottom.labels) + list(top.labels)
    return PiecewiseField(p, np.asarray(labels), vs)


def hex_bipyramid(r=0.75, c=0.8, vs=None):
    """Hexagonal bipyramid split into 12 tetrahedra around the center;
    the center vertex is interior."""
    vs = vs or two_values()
    verts = [(0.0, 0.0, 0.0), (0.0, 0.0, c), (0.0, 0.0, -c)]
    for i in range(6):
        th = i * np.pi / 3
        verts.append((r * np.cos(th), r * np.sin(th), 0.0))
    tets, labels = [], []
    for i in range(6):
        e0, e1 = 3 + i, 3 + (i + 1) % 6
        tets.append((0, 1, e0, e1))
        labels.append(i % 2)
        tets.append((0, 2, e0, e1))
        labels.append((i + 1) % 2)
    return _finish(verts, tets, labels, vs)


DESIGNS = {
    4: octahedron_diagonal,
    5: cube_five,
    6: kuhn_cube,
    8: octahedron_center,
    10: stacked_cubes,
    12: hex_bipyramid,
}


def reference_field(vs=None):
    """The standard fixture: octahedron split at the center, two values."""
    return octahedron_center(vs=vs)


def center_deformation(f, direction=None, magnitude=0.05, seed=None):
    """Boundary-preserving deformation moving the center vertex of the
    octahedron_center fixture (global vertex 0)."""
    p = f.partition
    disp = np.zeros((p.n_vertices, 3))
    if direction is None:
        rng = np.random.default_rng(0 if seed is None else seed)
        direction = rng.normal(size=3)
    direction = np.asarray(direction, dtype=float)
    disp[0] = magnitude * direction / np.linalg.norm(direction)
    return Deformation(disp, boundary_preserving=True)


def random_rotation(rng):
    a = rng.normal(size=(3, 3))
    q, r = np.linalg.qr(a)
    q *= np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def rotated_field(f, rot, scale=1.0):
    p = f.partition
    out = Partition(scale * (p.vertices @ rot.T), p.tets.copy(),
                    scale * p.r1, p.N0)
    return PiecewiseField(out, f.labels.copy(), f.vs)


def tangential_jitter(f, magnitude, seed):
    """Random per-vertex jitter projected onto the boundary-preserving
    subspace; exact on interior vertices, tangential on boundary ones."""
    p = f.partition
    rng = np.random.default_rng(seed)
    raw = rng.normal(size=(p.n_vertices, 3))
    norms = np.linalg.norm(raw, axis=1, keepdims=True)
    raw = magnitude * raw / np.maximum(norms, 1e-300)
    return project_boundary_tangent(p, raw)


def seeded_regular_partition(n_tets, seed, vs=None):
    """A randomly rotated and scaled copy of one of the catalog designs."""
    if n_tets not in DESIGNS:
        raise ValueError(f"no design with {n_tets} tetrahedra; have {sorted(DESIGNS)}")
    rng = np.random.default_rng(seed)
    f = DESIGNS[n_tets](vs=vs)
    rot = random_rotation(rng)
    scale = 0.85 + 0.3 * rng.random()
    return rotated_field(f, rot, scale)


def matched_jitter_instance(n_tets, seed, cap_fraction=0.05):
    """Seeded instance for the matching suite: a regular partition, a
    shuffled jittered copy whose ground-truth permutation is known, and
    the permutation itself.

    The jitter magnitude is the largest multiple of r1 not exceeding
    cap_fraction that keeps the L2 distance safely inside the matcher's
    admissibility threshold (the threshold uses the measured small-ball
    constant, which makes it conservative).
    """
    from .partition import Partition, PiecewiseField, deform, exact_l2_distance
    from .stability import admissible_l2_threshold, measured_c1

    f = seeded_regular_partition(n_tets, seed)
    p = f.partition
    c1 = measured_c1(p, seed=seed)
    eps1 = admissible_l2_threshold(p.r1, f.vs.c0, c1)
    probe_frac = 0.01
    probe = tangential_jitter(f, probe_frac * p.r1, seed + 100)
    mag = 0.0
    if not probe.is_zero:
        p1p = deform(p, probe, 1.0, floor=0.0)
        f1p = PiecewiseField(Partition(p1p.vertices, p1p.tets, p.r1, p.N0),
                             f.labels.copy(), f.vs)
        eps_probe = exact_l2_distance(f, f1p)
        if eps_probe > 0:
            mag = min(cap_fraction, probe_frac * 0.3 * eps1 / eps_probe) * p.r1
    jit = tangential_jitter(f, mag, seed + 100) if mag > 0 else probe
    p1 = deform(p, jit, 1.0, floor=0.0)
    rng = np.random.default_rng(seed)
    shuffle = rng.permutation(p.n_tets)
    p1s = Partition(p1.vertices.copy(), p1.tets[shuffle].copy(), p.r1, p.N0)
    f1 = PiecewiseField(p1s, f.labels[shuffle].copy(), f.vs)
    expected = np.array([int(np.where(shuffle == j)[0][0])
                         for j in range(p.n_tets)])
    return f, f1, expected
