"""Exact computational geometry for tetrahedra.

Volumes, inspheres, point distances, Hausdorff metrics, vertex
permutation distances and convex tetrahedron-tetrahedron intersection
volumes via half-space clipping.  All functions are pure; inputs are
never mutated.
"""

from dataclasses import dataclass
from itertools import permutations

import numpy as np

from .errors import DegenerateTetrahedron

# Indices of the four triangular facets; facet k is opposite vertex k.
FACET_INDICES = ((1, 2, 3), (0, 3, 2), (0, 1, 3), (0, 2, 1))

# Points closer than PLANE_TOL * (bounding box diameter) to a clipping
# plane are treated as lying on the plane, to avoid sliver faces.
PLANE_TOL = 1e-12


def _as_verts(t):
    v = np.asarray(t.verts if isinstance(t, Tetrahedron) else t, dtype=float)
    if v.shape != (4, 3):
        raise ValueError(f"expected 4 vertices in R^3, got shape {v.shape}")
    return v


def signed_volume(verts):
    v = np.asarray(verts, dtype=float)
    return float(np.linalg.det(v[1:] - v[0])) / 6.0


@dataclass(frozen=True)
class Tetrahedron:
    """Closed tetrahedron, stored in positive orientation.

    A degenerate (flat) vertex set is accepted; operations that need a
    nonzero volume raise DegenerateTetrahedron instead.
    """

    verts: np.ndarray

    def __init__(self, verts):
        v = np.array(verts, dtype=float)
        if v.shape != (4, 3):
            raise ValueError(f"expected 4 vertices in R^3, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("vertex coordinates must be finite")
        if signed_volume(v) < 0.0:
            v = v[[0, 1, 3, 2]]
        v.setflags(write=False)
        object.__setattr__(self, "verts", v)

    def facet(self, k):
        return self.verts[list(FACET_INDICES[k])]

    @property
    def centroid(self):
        return self.verts.mean(axis=0)

    @property
    def diameter(self):
        d = self.verts[:, None, :] - self.verts[None, :, :]
        return float(np.sqrt((d * d).sum(axis=2)).max())


def volume(t):
    """Volume |det([v1-v0, v2-v0, v3-v0])| / 6; degenerate input gives 0."""
    return abs(signed_volume(_as_verts(t)))


def facet_areas(t):
    v = _as_verts(t)
    areas = np.empty(4)
    for k, idx in enumerate(FACET_INDICES):
        a, b, c = v[list(idx)]
        areas[k] = 0.5 * np.linalg.norm(np.cross(b - a, c - a))
    return areas


def insphere_radius(t):
    """r = 3 * volume / (sum of facet areas)."""
    vol = volume(t)
    if vol <= 0.0:
        raise DegenerateTetrahedron("flat tetrahedron has no insphere")
    return 3.0 * vol / facet_areas(t).sum()


def incenter(t):
    """Insphere center: facet-area weighted combination of vertices."""
    v = _as_verts(t)
    if volume(t) <= 0.0:
        raise DegenerateTetrahedron("flat tetrahedron has no incenter")
    # weight of vertex i is the area of the opposite facet
    w = facet_areas(t)
    return (w[:, None] * v).sum(axis=0) / w.sum()


def circumradius(t):
    v = _as_verts(t)
    if volume(t) <= 0.0:
        raise DegenerateTetrahedron("flat tetrahedron has no circumsphere")
    a = v[1:] - v[0]
    rhs = 0.5 * (a * a).sum(axis=1)
    center = v[0] + np.linalg.solve(a, rhs)
    return float(np.linalg.norm(center - v[0]))


def regularity_constants(t):
    """(d1, alpha1): min pairwise vertex distance, min facet angle [rad]."""
    v = _as_verts(t)
    if volume(t) <= 0.0:
        raise DegenerateTetrahedron("regularity constants need nonzero volume")
    diff = v[:, None, :] - v[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=2))
    d1 = float(dist[np.triu_indices(4, 1)].min())
    alpha1 = np.inf
    for idx in FACET_INDICES:
        tri = v[list(idx)]
        for i in range(3):
            p, q, r = tri[i], tri[(i + 1) % 3], tri[(i + 2) % 3]
            u, w = q - p, r - p
            c = np.dot(u, w) / (np.linalg.norm(u) * np.linalg.norm(w))
            alpha1 = min(alpha1, float(np.arccos(np.clip(c, -1.0, 1.0))))
    return d1, alpha1


def barycentric(t, points):
    """Barycentric coordinates of points (n,3) wrt t; shape (n,4)."""
    v = _as_verts(t)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    a = (v[1:] - v[0]).T
    lam = np.linalg.solve(a, (pts - v[0]).T).T
    lam0 = 1.0 - lam.sum(axis=1, keepdims=True)
    return np.hstack([lam0, lam])


def contains(t, points, tol=1e-12):
    """Boolean mask: which points lie in the closed tetrahedron."""
    v = _as_verts(t)
    scale = max(np.abs(v).max(), 1.0)
    lam = barycentric(t, points)
    return np.all(lam >= -tol * scale, axis=1)


def _triangle_closest_distance(p, tri):
    """Distance from point p to a closed triangle (Ericson's regions)."""
    a, b, c = tri
    ab, ac, ap = b - a, c - a, p - a
    d1, d2 = np.dot(ab, ap), np.dot(ac, ap)
    if d1 <= 0 and d2 <= 0:
        return np.linalg.norm(p - a)
    bp = p - b
    d3, d4 = np.dot(ab, bp), np.dot(ac, bp)
    if d3 >= 0 and d4 <= d3:
        return np.linalg.norm(p - b)
    vc = d1 * d4 - d3 * d2
    if vc <= 0 and d1 >= 0 and d3 <= 0:
        u = d1 / (d1 - d3)
        return np.linalg.norm(p - (a + u * ab))
    cp = p - c
    d5, d6 = np.dot(ab, cp), np.dot(ac, cp)
    if d6 >= 0 and d5 <= d6:
        return np.linalg.norm(p - c)
    vb = d5 * d2 - d1 * d6
    if vb <= 0 and d2 >= 0 and d6 <= 0:
        w = d2 / (d2 - d6)
        return np.linalg.norm(p - (a + w * ac))
    va = d3 * d6 - d5 * d4
    if va <= 0 and (d4 - d3) >= 0 and (d5 - d6) >= 0:
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        return np.linalg.norm(p - (b + w * (c - b)))
    denom = 1.0 / (va + vb + vc)
    u, w = vb * denom, vc * denom
    return np.linalg.norm(p - (a + u * ab + w * ac))


def boundary_distance(p, t):
    """Distance from p to the boundary surface of t (always >= 0)."""
    p = np.asarray(p, dtype=float)
    return min(_triangle_closest_distance(p, t.facet(k) if isinstance(t, Tetrahedron)
               else _as_verts(t)[list(FACET_INDICES[k])]) for k in range(4))


def point_distance(p, t):
    """Euclidean distance from p to the closed set t (0 inside)."""
    p = np.asarray(p, dtype=float)
    if contains(t, p[None, :])[0]:
        return 0.0
    return boundary_distance(p, t)


def signed_point_distance(p, t):
    """Distance to t, negated inside: -d(p, boundary) for interior p."""
    p = np.asarray(p, dtype=float)
    d = boundary_distance(p, t)
    return -d if contains(t, p[None, :])[0] else d


def directed_hausdorff(t0, t1):
    """sup_{x in t0} d(x, t1); attained at vertices of t0 by convexity."""
    v0 = _as_verts(t0)
    return max(point_distance(v0[i], t1) for i in range(4))


def hausdorff(t0, t1):
    """Exact Hausdorff distance between two closed tetrahedra."""
    return max(directed_hausdorff(t0, t1), directed_hausdorff(t1, t0))


def vertex_permutation_distance(t0, t1):
    """min over vertex pairings of the max vertex-pair distance.

    Returns (dist, perm) where perm maps vertex i of t0 to vertex
    perm[i] of t1.  Always an upper bound for hausdorff(t0, t1).
    """
    v0, v1 = _as_verts(t0), _as_verts(t1)
    diff = v0[:, None, :] - v1[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=2))
    best, best_perm = np.inf, None
    for perm in permutations(range(4)):
        d = max(dist[i, perm[i]] for i in range(4))
        if d < best:
            best, best_perm = d, perm
    return float(best), best_perm


@dataclass
class ConvexPolytope:
    """Convex polytope as a vertex array plus outward-oriented face loops."""

    vertices: np.ndarray
    faces: list

    @property
    def empty(self):
        return len(self.faces) == 0 or len(self.vertices) < 4


def tetra_to_polytope(t):
    v = _as_verts(t)
    return ConvexPolytope(v.copy(), [list(f) for f in FACET_INDICES])


def facet_planes(t):
    """Outward (normal, offset) pairs: interior is n.x <= d."""
    v = _as_verts(t)
    planes = []
    for k, idx in enumerate(FACET_INDICES):
        a, b, c = v[list(idx)]
        n = np.cross(b - a, c - a)
        nn = np.linalg.norm(n)
        if nn == 0.0:
            raise DegenerateTetrahedron("facet with zero area")
        n = n / nn
        d = float(np.dot(n, a))
        if np.dot(n, v[k]) > d:  # make the opposite vertex interior
            n, d = -n, -d
        planes.append((n, d))
    return planes


def clip_polytope(poly, normal, offset, tol):
    """Clip a convex polytope by the half-space normal.x <= offset."""
    if poly.empty:
        return poly
    verts = poly.vertices
    dist = verts @ normal - offset
    if np.all(dist <= tol):
        return poly
    if np.all(dist >= -tol):
        return ConvexPolytope(np.empty((0, 3)), [])

    new_verts = []
    old_to_new = {}
    cut_points = {}

    def keep_vertex(i):
        if i not in old_to_new:
            old_to_new[i] = len(new_verts)
            new_verts.append(verts[i])
        return old_to_new[i]

    def cut_edge(i, j):
        key = (i, j) if i < j else (j, i)
        if key not in cut_points:
            a, b = verts[i], verts[j]
            s = dist[i] / (dist[i] - dist[j])
            cut_points[key] = len(new_verts)
            new_verts.append(a + s * (b - a))
        return cut_points[key]

    inside = dist <= tol
    on_plane = np.abs(dist) <= tol
    new_faces = []
    rim = set()
    for face in poly.faces:
        out_loop = []
        n = len(face)
        for e in range(n):
            i, j = face[e], face[(e + 1) % n]
            if inside[i]:
                out_loop.append(keep_vertex(i))
                if not inside[j] and not on_plane[i]:
                    out_loop.append(cut_edge(i, j))
            elif inside[j] and not on_plane[j]:
                out_loop.append(cut_edge(i, j))
        # de-duplicate consecutive repeats caused by on-plane vertices
        dedup = []
        for idx in out_loop:
            if not dedup or (dedup[-1] != idx and not (len(dedup) > 1 and idx == dedup[0])):
                dedup.append(idx)
        if len(dedup) >= 3:
            new_faces.append(dedup)
        # collect rim points (on the clipping plane) for the closing face
        for idx in dedup:
            pt_dist = np.dot(new_verts[idx], normal) - offset
            if abs(pt_dist) <= tol:
                rim.add(idx)
    if len(rim) >= 3:
        pts = np.array([new_verts[i] for i in rim])
        center = pts.mean(axis=0)
        # orthonormal in-plane basis for angular sorting
        ref = pts[0] - center
        nref = np.linalg.norm(ref)
        if nref > 0:
            e1 = ref / nref
            e2 = np.cross(normal, e1)
            ang = np.arctan2((pts - center) @ e2, (pts - center) @ e1)
            order = np.argsort(ang)
            loop = [list(rim)[k] for k in order]
            # orient the closing face outward, i.e. along +normal
            if len(loop) >= 3:
                a, b, c = (new_verts[loop[0]], new_verts[loop[1]], new_verts[loop[2]])
                if np.dot(np.cross(b - a, c - a), normal) < 0:
                    loop = loop[::-1]
                new_faces.append(loop)
    if not new_faces or len(new_verts) < 4:
        return ConvexPolytope(np.empty((0, 3)), [])
    return ConvexPolytope(np.array(new_verts), new_faces)


def polytope_volume(poly):
    """Volume by fan decomposition from the vertex centroid."""
    if poly.empty:
        return 0.0
    center = poly.vertices.mean(axis=0)
    vol = 0.0
    for face in poly.faces:
        a = poly.vertices[face[0]]
        for i in range(1, len(face) - 1):
            b = poly.vertices[face[i]]
            c = poly.vertices[face[i + 1]]
            vol += abs(np.linalg.det(np.array([a - center, b - center, c - center]))) / 6.0
    return vol


def intersection_volume(t0, t1):
    """Exact volume of t0 intersected with t1, by clipping t0 with the
    facet planes of t1."""
    v0, v1 = _as_verts(t0), _as_verts(t1)
    lo = np.minimum(v0.min(axis=0), v1.min(axis=0))
    hi = np.maximum(v0.max(axis=0), v1.max(axis=0))
    if np.any(v0.max(axis=0) < v1.min(axis=0)) or np.any(v1.max(axis=0) < v0.min(axis=0)):
        return 0.0
    tol = PLANE_TOL * float(np.linalg.norm(hi - lo))
    if volume(t0) == 0.0 or volume(t1) == 0.0:
        return 0.0
    poly = tetra_to_polytope(t0)
    for normal, offset in facet_planes(t1):
        poly = clip_polytope(poly, normal, offset, tol)
        if poly.empty:
            return 0.0
    return polytope_volume(poly)


def eroded_tetrahedron(t, depth):
    """The set of points of t at boundary distance > depth.

    For a tetrahedron this is an exact homothety about the incenter with
    ratio (rho - depth) / rho, rho the insphere radius.  Empty for
    depth >= rho (returns None).
    """
    rho = insphere_radius(t)
    if depth >= rho:
        return None
    c = incenter(t)
    ratio = (rho - depth) / rho
    return Tetrahedron(c + ratio * (_as_verts(t) - c))


def sample_interior(t, n, rng):
    """n uniform interior points via the folded-barycentric map."""
    u = rng.random((n, 3))
    # Rocchini-Cignoni fold of the unit cube onto the simplex
    s, t_, w = u[:, 0], u[:, 1], u[:, 2]
    flip = s + t_ > 1.0
    s[flip], t_[flip] = 1.0 - s[flip], 1.0 - t_[flip]
    over = s + t_ + w > 1.0
    deep = over & (t_ + w > 1.0)
    shallow = over & ~deep
    t2, w2 = t_.copy(), w.copy()
    t2[deep], w2[deep] = 1.0 - w[deep], 1.0 - s[deep] - t_[deep]
    s2 = s.copy()
    s2[shallow], w2[shallow] = 1.0 - t_[shallow] - w[shallow], s[shallow] + t_[shallow] + w[shallow] - 1.0
    lam = np.column_stack([1.0 - s2 - t2 - w2, s2, t2, w2])
    return lam @ _as_verts(t)


def halton_interior(t, n, skip=20):
    """Deterministic low-discrepancy interior points (Halton in the cube,
    folded onto the simplex)."""
    def van_der_corput(n_pts, base):
        out = np.zeros(n_pts)
        for i in range(n_pts):
            f, x, k = 1.0, 0.0, i + skip + 1
            while k > 0:
                f /= base
                x += f * (k % base)
                k //= base
            out[i] = x
        return out

    u = np.column_stack([van_der_corput(n, b) for b in (2, 3, 5)])
    s, t_, w = u[:, 0].copy(), u[:, 1].copy(), u[:, 2].copy()
    flip = s + t_ > 1.0
    s[flip], t_[flip] = 1.0 - s[flip], 1.0 - t_[flip]
    over = s + t_ + w > 1.0
    deep = over & (t_ + w > 1.0)
    shallow = over & ~deep
    t2, w2 = t_.copy(), w.copy()
    t2[deep], w2[deep] = 1.0 - w[deep], 1.0 - s[deep] - t_[deep]
    s2 = s.copy()
    s2[shallow], w2[shallow] = 1.0 - t_[shallow] - w[shallow], s[shallow] + t_[shallow] + w[shallow] - 1.0
    lam = np.column_stack([1.0 - s2 - t2 - w2, s2, t2, w2])
    return lam @ _as_verts(t)


def measured_ball_intersection_constant(t, r1, n_centers=40, n_radii=4,
                                        n_ball=4000, seed=0):
    """Monte Carlo diagnostic for the small-ball volume bound.

    Samples centers P in t and radii r <= r1, estimates the volume of
    B_r(P) intersected with t by
    rejection sampling and returns the observed minimum of that volume
    divided by r^3.  This is a measured constant, not an a-priori one.
    """
    rng = np.random.default_rng(seed)
    centers = sample_interior(t, n_centers, rng)
    # include the vertices: the flattest corners dominate the minimum
    centers = np.vstack([centers, _as_verts(t)])
    best = np.inf
    for p in centers:
        for r in np.linspace(r1 / n_radii, r1, n_radii):
            u = rng.normal(size=(n_ball, 3))
            u /= np.linalg.norm(u, axis=1, keepdims=True)
            rad = r * rng.random(n_ball) ** (1.0 / 3.0)
            pts = p + rad[:, None] * u
            frac = contains(t, pts).mean()
            vol = frac * 4.0 / 3.0 * np.pi * r**3
            best = min(best, vol / r**3)
    return float(best)
