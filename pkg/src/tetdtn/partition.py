"""Regular tetrahedral partitions, piecewise-constant fields and the
one-parameter deformation family with its per-tetrahedron affine flows.

A partition stores a global vertex table so that vertices shared among
tetrahedra are identified once; deformations are specified per global
vertex, which keeps deformed partitions conforming.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from . import geometry
from .errors import (DegenerateTetrahedron, DomainMismatch, RegularityLost,
                     ZeroDeformation)

# Vertices closer than VERTEX_TOL * diameter are identified as one
# global vertex.
VERTEX_TOL = 1e-9

# Default insphere floor for deformed partitions, as a fraction of the
# declared r1 (keeps descent iterates admissible with some slack).
DEFAULT_FLOOR_FRACTION = 0.5


@dataclass(frozen=True)
class ValueSet:
    """Finite set of admissible potential values q = c^-2.

    Q0 is the largest magnitude, c0 the smallest pairwise gap.
    """

    values: tuple
    Q0: float = field(init=False)
    c0: float = field(init=False)

    def __post_init__(self):
        vals = tuple(float(v) for v in self.values)
        if len(vals) < 2:
            raise ValueError("a value set needs at least two values")
        gaps = [abs(a - b) for i, a in enumerate(vals) for b in vals[i + 1:]]
        c0 = min(gaps)
        if c0 <= 0.0:
            raise ValueError("value set entries must be pairwise distinct")
        object.__setattr__(self, "values", vals)
        object.__setattr__(self, "Q0", max(abs(v) for v in vals))
        object.__setattr__(self, "c0", c0)


class Partition:
    """Tetrahedral partition with shared global vertices.

    Parameters
    ----------
    vertices : (V, 3) array of global vertex positions
    tets : (N, 4) int array of vertex indices
    r1 : declared insphere lower bound
    N0 : declared cap on the number of tetrahedra
    """

    def __init__(self, vertices, tets, r1, N0):
        self.vertices = np.array(vertices, dtype=float)
        tets = np.array(tets, dtype=int)
        if tets.ndim != 2 or tets.shape[1] != 4:
            raise ValueError("tets must be an (N, 4) index array")
        # canonical positive orientation, preserving global vertex ids
        for row in tets:
            if geometry.signed_volume(self.vertices[row]) < 0.0:
                row[2], row[3] = row[3], row[2]
        self.tets = tets
        self.r1 = float(r1)
        self.N0 = int(N0)
        self._facet_table = None

    @classmethod
    def from_tetrahedra(cls, tet_vertex_arrays, r1, N0):
        """Build the global vertex table from per-tet 4x3 vertex arrays,
        identifying vertices within VERTEX_TOL * diameter."""
        all_pts = np.vstack([np.asarray(a, dtype=float) for a in tet_vertex_arrays])
        diam = np.linalg.norm(all_pts.max(axis=0) - all_pts.min(axis=0))
        tol = VERTEX_TOL * max(diam, 1.0)
        verts = []
        tets = []
        for arr in tet_vertex_arrays:
            idx = []
            for p in np.asarray(arr, dtype=float):
                found = None
                for i, q in enumerate(verts):
                    if np.linalg.norm(p - q) <= tol:
                        found = i
                        break
                if found is None:
                    verts.append(p.copy())
                    found = len(verts) - 1
                idx.append(found)
            tets.append(idx)
        return cls(np.array(verts), np.array(tets), r1, N0)

    @property
    def n_tets(self):
        return len(self.tets)

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def diameter(self):
        return float(np.linalg.norm(self.vertices.max(axis=0) - self.vertices.min(axis=0)))

    def tetrahedron(self, j):
        return geometry.Tetrahedron(self.vertices[self.tets[j]])

    def tetrahedra(self):
        return [self.tetrahedron(j) for j in range(self.n_tets)]

    def volumes(self):
        return np.array([geometry.volume(self.tetrahedron(j)) for j in range(self.n_tets)])

    def total_volume(self):
        return float(self.volumes().sum())

    def insphere_radii(self):
        return np.array([geometry.insphere_radius(self.tetrahedron(j))
                         for j in range(self.n_tets)])

    def _facets(self):
        """Map sorted vertex triple -> list of (tet index, local facet)."""
        if self._facet_table is None:
            table = {}
            for j, tet in enumerate(self.tets):
                for k, idx in enumerate(geometry.FACET_INDICES):
                    key = tuple(sorted(tet[list(idx)]))
                    table.setdefault(key, []).append((j, k))
            self._facet_table = table
        return self._facet_table

    def adjacency(self):
        """Pairs (i, j), i < j, of tetrahedra sharing a common facet."""
        pairs = set()
        for key, owners in self._facets().items():
            if len(owners) == 2:
                a, b = owners[0][0], owners[1][0]
                pairs.add((min(a, b), max(a, b)))
        return sorted(pairs)

    def boundary_facets(self):
        """Facets owned by exactly one tetrahedron (they triangulate
        the domain boundary)."""
        out = []
        for key, owners in self._facets().items():
            if len(owners) == 1:
                out.append((key, owners[0]))
        return out

    def boundary_vertex_normals(self):
        """For each vertex: list of unit normals of the boundary facets
        containing it (empty list for interior vertices)."""
        normals = [[] for _ in range(self.n_vertices)]
        for key, (j, k) in self.boundary_facets():
            tri = self.vertices[list(key)]
            n = np.cross(tri[1] - tri[0], tri[2] - tri[0])
            n /= np.linalg.norm(n)
            for v in key:
                if not any(abs(abs(np.dot(n, m)) - 1.0) < 1e-12 for m in normals[v]):
                    normals[v].append(n)
        return normals

    def tangent_projectors(self):
        """Per-vertex projector onto the subspace of displacements that
        keep the vertex inside all of its boundary facet planes."""
        projectors = []
        for nlist in self.boundary_vertex_normals():
            if not nlist:
                projectors.append(np.eye(3))
                continue
            a = np.array(nlist)
            # null space of the normal constraints
            _, s, vt = np.linalg.svd(a)
            rank = int((s > 1e-10 * s[0]).sum()) if len(s) else 0
            basis = vt[rank:]
            projectors.append(basis.T @ basis if len(basis) else np.zeros((3, 3)))
        return projectors


@dataclass
class PiecewiseField:
    """Piecewise-constant potential on a partition: one label per tet,
    indexing into the value set."""

    partition: Partition
    labels: np.ndarray
    vs: ValueSet

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=int)
        if len(self.labels) != self.partition.n_tets:
            raise ValueError("one label per tetrahedron required")

    def tet_values(self):
        return np.array([self.vs.values[l] for l in self.labels])


@dataclass
class Deformation:
    """Per-global-vertex displacement vectors generating the family
    P(t) = P(0) + t v for t in [0, 1]."""

    displacements: np.ndarray
    boundary_preserving: bool = True

    def __post_init__(self):
        self.displacements = np.asarray(self.displacements, dtype=float)
        if self.displacements.ndim != 2 or self.displacements.shape[1] != 3:
            raise ValueError("displacements must be (V, 3)")

    @property
    def is_zero(self):
        return not np.any(self.displacements)

    def scaled(self, s):
        return Deformation(s * self.displacements, self.boundary_preserving)


def project_boundary_tangent(p, raw_displacements):
    """Project raw per-vertex displacements onto the boundary-preserving
    subspace of the partition (identity on interior vertices)."""
    raw = np.asarray(raw_displacements, dtype=float)
    out = np.empty_like(raw)
    for i, proj in enumerate(p.tangent_projectors()):
        out[i] = proj @ raw[i]
    return Deformation(out, boundary_preserving=True)


def is_boundary_preserving(p, d, tol=1e-10):
    """True if displacements of boundary vertices are tangent to all of
    their boundary facet planes."""
    scale = max(1.0, float(np.abs(d.displacements).max()))
    for i, nlist in enumerate(p.boundary_vertex_normals()):
        for n in nlist:
            if abs(np.dot(n, d.displacements[i])) > tol * scale:
                return False
    return True


def _facet_probe_barycentrics(n=5):
    """Strictly interior barycentric samples of a triangle."""
    pts = []
    for a in range(1, n):
        for b in range(1, n - a):
            c = n - a - b
            pts.append((a / n, b / n, c / n))
    return np.array(pts)


def _distance_to_simplex(pt, simplex_pts):
    """Distance from a point to the convex hull of up to 3 points."""
    if simplex_pts is None or len(simplex_pts) == 0:
        return np.inf
    if len(simplex_pts) == 1:
        return float(np.linalg.norm(pt - simplex_pts[0]))
    if len(simplex_pts) == 2:
        a, b = simplex_pts
        ab = b - a
        s = np.clip(np.dot(pt - a, ab) / np.dot(ab, ab), 0.0, 1.0)
        return float(np.linalg.norm(pt - (a + s * ab)))
    return geometry._triangle_closest_distance(pt, simplex_pts[:3])


@dataclass
class Violation:
    rule: str
    indices: tuple
    detail: str


@dataclass
class ValidationReport:
    violations: list

    @property
    def ok(self):
        return not self.violations

    def rules(self):
        return sorted({v.rule for v in self.violations})


def validate(p, f, vs):
    """Check every partition/field invariant; violations are data.

    Rules reported: 'degenerate-tet', 'insphere-floor', 'tet-count-cap',
    'overlap', 'nonconforming-contact', 'value-not-in-set',
    'adjacent-equal-values'.
    """
    violations = []
    vols = []
    for j in range(p.n_tets):
        t = p.tetrahedron(j)
        v = geometry.volume(t)
        vols.append(v)
        if v <= 0.0:
            violations.append(Violation("degenerate-tet", (j,), "zero volume"))
            continue
        r = geometry.insphere_radius(t)
        if r < p.r1:
            violations.append(Violation(
                "insphere-floor", (j,), f"insphere {r:.3e} < r1 {p.r1:.3e}"))
    if p.n_tets > p.N0:
        violations.append(Violation(
            "tet-count-cap", (), f"N = {p.n_tets} > N0 = {p.N0}"))

    total = sum(vols)
    tol_vol = 1e-10 * max(total, 1.0)
    tets = [p.tetrahedron(j) for j in range(p.n_tets)]
    for i in range(p.n_tets):
        for j in range(i + 1, p.n_tets):
            iv = geometry.intersection_volume(tets[i], tets[j])
            if iv > tol_vol:
                violations.append(Violation(
                    "overlap", (i, j), f"interior overlap volume {iv:.3e}"))

    # conforming contact: points of tet i touching tet j must lie on the
    # simplex spanned by their shared global vertices (catches hanging
    # nodes and coplanar facet overlaps such as crossing diagonals)
    tol_dist = 1e-9 * max(p.diameter, 1.0)
    probe = _facet_probe_barycentrics()
    for i in range(p.n_tets):
        for j in range(p.n_tets):
            if i == j:
                continue
            shared = sorted(set(p.tets[i]) & set(p.tets[j]))
            shared_pts = p.vertices[shared] if shared else None
            for vi in p.tets[i]:
                if vi in shared:
                    continue
                if geometry.point_distance(p.vertices[vi], tets[j]) <= tol_dist:
                    violations.append(Violation(
                        "nonconforming-contact", (i, j, int(vi)),
                        "vertex touches a non-incident tetrahedron"))
            for k, idx in enumerate(geometry.FACET_INDICES):
                fverts = tuple(p.tets[i][list(idx)])
                if set(fverts) <= set(shared):
                    continue  # the shared facet itself is conforming
                tri = p.vertices[list(fverts)]
                pts = probe @ tri
                inside = geometry.contains(tets[j], pts, tol=1e-9)
                for pt in pts[inside]:
                    if _distance_to_simplex(pt, shared_pts) > tol_dist:
                        violations.append(Violation(
                            "nonconforming-contact", (i, j),
                            "facet interior overlaps a non-incident tetrahedron"))
                        break

    if f is not None:
        vals = np.asarray(vs.values)
        for j, lab in enumerate(f.labels):
            if lab < 0 or lab >= len(vals):
                violations.append(Violation(
                    "value-not-in-set", (j,), f"label {lab} out of range"))
        for (i, j) in p.adjacency():
            if f.labels[i] == f.labels[j]:
                violations.append(Violation(
                    "adjacent-equal-values", (i, j),
                    f"adjacent tetrahedra share value index {int(f.labels[i])}"))
    return ValidationReport(violations)


def deform(p, d, t, floor=None):
    """Partition at parameter t of the family P + t v.

    Raises RegularityLost if any insphere radius drops below the floor
    (default DEFAULT_FLOOR_FRACTION * r1) or an element inverts.
    """
    if d.displacements.shape[0] != p.n_vertices:
        raise ValueError("deformation size does not match the vertex table")
    if t == 0.0:
        return Partition(p.vertices.copy(), p.tets.copy(), p.r1, p.N0)
    if floor is None:
        floor = DEFAULT_FLOOR_FRACTION * p.r1
    new_vertices = p.vertices + t * d.displacements
    out = Partition.__new__(Partition)
    out.vertices = new_vertices
    out.tets = p.tets.copy()
    out.r1 = p.r1
    out.N0 = p.N0
    out._facet_table = None
    for j in range(out.n_tets):
        verts = new_vertices[out.tets[j]]
        if geometry.signed_volume(verts) <= 0.0:
            raise RegularityLost(f"tetrahedron {j} inverted at t = {t}")
        r = geometry.insphere_radius(geometry.Tetrahedron(verts))
        if r < floor:
            raise RegularityLost(
                f"insphere {r:.3e} of tetrahedron {j} below floor {floor:.3e} at t = {t}")
    return out


@dataclass
class AffineMap:
    """Affine displacement field Phi(x) = B x + c of one tetrahedron,
    with the induced flow F_tau(x) = x + tau Phi(x)."""

    B: np.ndarray
    c: np.ndarray

    def phi(self, x):
        x = np.asarray(x, dtype=float)
        return x @ self.B.T + self.c if x.ndim == 2 else self.B @ x + self.c

    def flow(self, x, tau):
        return np.asarray(x, dtype=float) + tau * self.phi(x)

    @property
    def div(self):
        return float(np.trace(self.B))

    def jacobian(self, tau):
        return np.eye(3) + tau * self.B

    def det_jacobian(self, tau):
        return float(np.linalg.det(self.jacobian(tau)))


def affine_flow(p, d, j, t0):
    """The unique affine Phi with Phi(P_i + t0 v_i) = v_i on tet j."""
    idx = p.tets[j]
    pts = p.vertices[idx] + t0 * d.displacements[idx]
    if abs(geometry.signed_volume(pts)) < 1e-300:
        raise DegenerateTetrahedron(f"tetrahedron {j} degenerate at t0 = {t0}")
    m = np.hstack([pts, np.ones((4, 1))])
    sol = np.linalg.solve(m, d.displacements[idx])  # (4, 3): rows of [B^T; c]
    return AffineMap(B=sol[:3].T.copy(), c=sol[3].copy())


def deformation_size(p, d):
    """(V_j per tet, d_T, normalized displacements).

    V_j sums |v| over the four vertices of tet j (shared vertices are
    counted in every incident tetrahedron); d_T sums the endpoint
    Hausdorff distances; the normalized displacements divide by the
    total sum of the V_j.
    """
    if d.is_zero:
        raise ZeroDeformation("cannot normalize a zero deformation")
    norms = np.linalg.norm(d.displacements, axis=1)
    v_per_tet = np.array([norms[p.tets[j]].sum() for j in range(p.n_tets)])
    p1 = deform(p, d, 1.0, floor=0.0)
    d_t = sum(geometry.hausdorff(p.tetrahedron(j), p1.tetrahedron(j))
              for j in range(p.n_tets))
    v_tilde = d.displacements / v_per_tet.sum()
    return v_per_tet, float(d_t), v_tilde


def exact_l2_distance(f0, f1, check_domain=True):
    """L2 norm of q0 - q1 via pairwise tetrahedron intersection volumes."""
    p0, p1 = f0.partition, f1.partition
    if check_domain:
        v0, v1 = p0.total_volume(), p1.total_volume()
        if abs(v0 - v1) > 1e-8 * max(v0, v1):
            raise DomainMismatch(f"total volumes differ: {v0} vs {v1}")
    q0 = f0.tet_values()
    q1 = f1.tet_values()
    acc = 0.0
    tets0 = p0.tetrahedra()
    tets1 = p1.tetrahedra()
    for j, tj in enumerate(tets0):
        for k, tk in enumerate(tets1):
            gap = q0[j] - q1[k]
            if gap == 0.0:
                continue
            iv = geometry.intersection_volume(tj, tk)
            if iv > 0.0:
                acc += gap * gap * iv
    return float(np.sqrt(acc))


def field_to_dict(f, d=None):
    out = {
        "vertices": [list(map(float, v)) for v in f.partition.vertices],
        "tets": [list(map(int, t)) for t in f.partition.tets],
        "labels": [int(l) for l in f.labels],
        "values": [float(v) for v in f.vs.values],
        "r1": float(f.partition.r1),
        "N0": int(f.partition.N0),
    }
    if d is not None:
        out["displacements"] = [list(map(float, v)) for v in d.displacements]
        out["boundary_preserving"] = bool(d.boundary_preserving)
    return out


def field_from_dict(data):
    p = Partition(np.array(data["vertices"], dtype=float),
                  np.array(data["tets"], dtype=int),
                  data["r1"], data["N0"])
    vs = ValueSet(tuple(data["values"]))
    f = PiecewiseField(p, np.array(data["labels"], dtype=int), vs)
    d = None
    if "displacements" in data:
        d = Deformation(np.array(data["displacements"], dtype=float),
                        bool(data.get("boundary_preserving", True)))
    return f, d


def save_field(path, f, d=None):
    with open(path, "w") as fh:
        json.dump(field_to_dict(f, d), fh, indent=1)


def load_field(path):
    with open(path) as fh:
        return field_from_dict(json.load(fh))
