"""Conforming tetrahedral meshes over a partition, and the augmented
ball domain obtained by extending the partition boundary radially to an
inscribed polyhedral sphere.

Refinement is uniform red refinement of the partition tetrahedra, so
every element lies inside exactly one partition tetrahedron and all
partition facets are unions of element facets.  The extension region is
meshed by radial prism layers between the partition boundary and the
sphere of radius R_tilde; prisms are split into tetrahedra with the
smallest-global-index diagonal rule, which keeps the split conforming
across neighboring prisms.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from . import geometry
from .errors import MeshFailure, RegularityLost

DEFAULT_ELEMENT_BUDGET = 400_000
MAX_LEVELS = 7

# corner children of red refinement; m(a,b) denotes the midpoint node
_CORNER_CHILDREN = ((0, (0, 1), (0, 2), (0, 3)),
                    (1, (0, 1), (1, 2), (1, 3)),
                    (2, (0, 2), (1, 2), (2, 3)),
                    (3, (0, 3), (1, 3), (2, 3)))

_OCT_DIAGONALS = (
    ((0, 1), (2, 3), ((0, 2), (1, 2), (1, 3), (0, 3))),
    ((0, 2), (1, 3), ((0, 1), (1, 2), (2, 3), (0, 3))),
    ((0, 3), (1, 2), ((0, 1), (1, 3), (2, 3), (0, 2))),
)


@dataclass
class AugmentedDomain:
    """Ball domain of radius R_tilde = 2 R / sqrt(3) onto which fields
    are extended with the constant value q0_tilde."""

    R: float
    q0_tilde: float
    layers: int | None = None

    @property
    def r_tilde(self):
        return 2.0 * self.R / np.sqrt(3.0)


@dataclass
class Mesh:
    nodes: np.ndarray       # (n, 3)
    elems: np.ndarray       # (m, 4) node ids
    owner: np.ndarray       # (m,) partition tet id; -1 for extension elements
    node_owner: np.ndarray  # (n,) partition tet containing the node; -1 ext
    node_bary: np.ndarray   # (n, 4) barycentric wrt the owner tet
    ext_base: np.ndarray    # (n,) omega boundary node a layer node sits above
    ext_frac: np.ndarray    # (n,) radial fraction, 0 on omega, 1 on the sphere
    levels: int
    layers: int = 0
    r_tilde: float | None = None
    _faces: dict = field(default=None, repr=False)

    @property
    def n_nodes(self):
        return len(self.nodes)

    @property
    def n_elems(self):
        return len(self.elems)

    @property
    def is_augmented(self):
        return self.r_tilde is not None

    def h_max(self):
        e = self.nodes[self.elems]
        edges = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]
        return max(float(np.linalg.norm(e[:, i] - e[:, j], axis=1).max())
                   for i, j in edges)

    def faces(self):
        """Sorted node triple -> list of (element, local facet)."""
        if self._faces is None:
            table = {}
            for ei, elem in enumerate(self.elems):
                for k, idx in enumerate(geometry.FACET_INDICES):
                    key = tuple(sorted(elem[list(idx)]))
                    table.setdefault(key, []).append((ei, k))
            self._faces = table
        return self._faces

    def boundary_faces(self):
        """Oriented outward boundary triangles as (elem, lface, nodes)."""
        out = []
        for key, owners in self.faces().items():
            if len(owners) == 1:
                ei, k = owners[0]
                nodes = self.elems[ei][list(geometry.FACET_INDICES[k])]
                out.append((ei, k, tuple(int(v) for v in nodes)))
        return sorted(out)

    def boundary_nodes(self):
        seen = set()
        for _, _, tri in self.boundary_faces():
            seen.update(tri)
        return np.array(sorted(seen), dtype=int)

    def interface_facets(self):
        """Element facets between different owner regions.

        Yields (elem, lface, owner_plus, owner_minus) where the facet's
        outward normal from `elem` points into the owner_minus region;
        owner -1 is the extension region, -2 the mesh exterior.  Facets
        interior to one partition tetrahedron are skipped; internal
        interfaces appear once for each side.
        """
        out = []
        for key, owners in self.faces().items():
            if len(owners) == 1:
                ei, k = owners[0]
                out.append((ei, k, int(self.owner[ei]), -2))
            else:
                (e0, k0), (e1, k1) = owners
                o0, o1 = int(self.owner[e0]), int(self.owner[e1])
                if o0 == o1:
                    continue
                out.append((e0, k0, o0, o1))
                out.append((e1, k1, o1, o0))
        return out

    def signed_volumes(self):
        v = self.nodes[self.elems]
        a = v[:, 1:] - v[:, :1]
        return np.linalg.det(a) / 6.0


def _red_refine(nodes, elems, owner):
    """One level of red refinement; returns (nodes, elems, owner)."""
    nodes = list(nodes)
    midpoint = {}

    def mid(a, b):
        key = (a, b) if a < b else (b, a)
        if key not in midpoint:
            midpoint[key] = len(nodes)
            nodes.append(0.5 * (nodes[a] + nodes[b]))
        return midpoint[key]

    new_elems, new_owner = [], []
    for ei, elem in enumerate(elems):
        ids = {}
        for pair in ((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)):
            ids[pair] = mid(elem[pair[0]], elem[pair[1]])
        for corner, *mids in _CORNER_CHILDREN:
            new_elems.append((elem[corner], ids[mids[0]], ids[mids[1]], ids[mids[2]]))
            new_owner.append(owner[ei])
        # split the interior octahedron along its shortest diagonal
        best = None
        pts = {p: nodes[ids[p]] for p in ids}
        for d0, d1, ring in _OCT_DIAGONALS:
            length = np.linalg.norm(pts[d0] - pts[d1])
            if best is None or length < best[0]:
                best = (length, d0, d1, ring)
        _, d0, d1, ring = best
        for r in range(4):
            a, b = ring[r], ring[(r + 1) % 4]
            new_elems.append((ids[d0], ids[d1], ids[a], ids[b]))
            new_owner.append(owner[ei])
    return nodes, new_elems, new_owner


def _orient_positive(nodes, elems):
    elems = np.array(elems, dtype=int)
    v = np.asarray(nodes)[elems]
    det = np.linalg.det(v[:, 1:] - v[:, :1])
    flip = det < 0
    elems[flip, 2], elems[flip, 3] = elems[flip, 3].copy(), elems[flip, 2].copy()
    return elems


def levels_for_target(p, target_h):
    h0 = max(geometry.Tetrahedron(p.vertices[t]).diameter for t in p.tets)
    lv = 0
    while h0 / (2 ** lv) > target_h and lv < MAX_LEVELS:
        lv += 1
    return lv


def _split_prism(bot, top):
    """Split a prism (bottom triangle ids, top triangle ids) into three
    tetrahedra using the smallest-global-index diagonal rule."""
    v = list(bot) + list(top)
    # rotate/flip so the smallest id sits at bottom position 0
    pos = int(np.argmin(v))
    if pos >= 3:  # flip bottom and top, reversing orientation
        v = [v[3], v[5], v[4], v[0], v[2], v[1]]
        pos = int(np.argmin(v[:3]))
    for _ in range(pos):
        v = [v[1], v[2], v[0], v[4], v[5], v[3]]
    # quad (1,2,5,4): diagonal through the smaller of min(v1,v5), min(v2,v4)
    if min(v[1], v[5]) < min(v[2], v[4]):
        return [(v[0], v[1], v[2], v[5]), (v[0], v[1], v[5], v[4]),
                (v[0], v[4], v[5], v[3])]
    return [(v[0], v[1], v[2], v[4]), (v[0], v[4], v[2], v[5]),
            (v[0], v[4], v[5], v[3])]


def build_mesh(p, target_h=None, levels=None, augmented=None,
               element_budget=DEFAULT_ELEMENT_BUDGET):
    """Conforming mesh of the partition, optionally extended to the
    augmented polyhedral ball.

    Exactly one of target_h / levels selects the refinement depth.  The
    augmented extension requires the partition to be star-shaped with
    respect to the origin and contained in the open ball of radius
    R_tilde.
    """
    if levels is None:
        if target_h is None:
            raise ValueError("give target_h or levels")
        levels = levels_for_target(p, target_h)
        if max(geometry.Tetrahedron(p.vertices[t]).diameter for t in p.tets) \
                / (2 ** levels) > target_h:
            raise MeshFailure(f"cannot reach target_h = {target_h} within "
                              f"{MAX_LEVELS} refinement levels")
    nodes = [v.copy() for v in p.vertices]
    elems = [tuple(t) for t in p.tets]
    owner = list(range(p.n_tets))
    for _ in range(levels):
        if len(elems) * 8 > element_budget:
            raise MeshFailure(f"element budget {element_budget} exceeded")
        nodes, elems, owner = _red_refine(nodes, elems, owner)

    n_omega_nodes = len(nodes)
    layers = 0
    r_tilde = None
    ext_records = []  # (node id, base id, frac)
    if augmented is not None:
        r_tilde = augmented.r_tilde
        # boundary triangulation of the omega mesh, oriented outward
        table = {}
        for ei, elem in enumerate(elems):
            for k, idx in enumerate(geometry.FACET_INDICES):
                key = tuple(sorted(elem[i] for i in idx))
                table.setdefault(key, []).append((ei, k))
        bfaces = []
        for key, occ in table.items():
            if len(occ) == 1:
                ei, k = occ[0]
                bfaces.append(tuple(elems[ei][i] for i in geometry.FACET_INDICES[k]))
        bnodes = sorted({v for tri in bfaces for v in tri})
        radii = np.array([np.linalg.norm(nodes[v]) for v in bnodes])
        if radii.min() <= 1e-12:
            raise MeshFailure("origin lies on the partition boundary")
        if radii.max() >= r_tilde * (1.0 - 1e-9):
            raise MeshFailure("partition is not strictly inside the augmented ball")
        gap = r_tilde - radii
        h_eff = max(geometry.Tetrahedron(p.vertices[t]).diameter
                    for t in p.tets) / (2 ** levels)
        layers = augmented.layers or max(1, min(8, int(np.ceil(gap.max() / h_eff))))
        if len(bfaces) * 3 * layers + len(elems) > element_budget:
            raise MeshFailure(f"element budget {element_budget} exceeded by extension")
        layer_id = {}
        for v in bnodes:
            x = nodes[v]
            proj = x * (r_tilde / np.linalg.norm(x))
            for l in range(1, layers + 1):
                frac = l / layers
                layer_id[(v, l)] = len(nodes)
                nodes.append(x + frac * (proj - x))
                ext_records.append((layer_id[(v, l)], v, frac))

        def lid(v, l):
            return v if l == 0 else layer_id[(v, l)]

        for tri in bfaces:
            for l in range(layers):
                bot = tuple(lid(v, l) for v in tri)
                top = tuple(lid(v, l + 1) for v in tri)
                for tet in _split_prism(bot, top):
                    elems.append(tet)
                    owner.append(-1)

    nodes = np.array(nodes)
    elems = _orient_positive(nodes, elems)
    owner = np.array(owner, dtype=int)

    node_owner = np.full(len(nodes), -1, dtype=int)
    node_bary = np.zeros((len(nodes), 4))
    first_elem = {}
    for ei, elem in enumerate(elems):
        if owner[ei] < 0:
            continue
        for v in elem:
            if v not in first_elem:
                first_elem[v] = owner[ei]
    for v, oj in first_elem.items():
        node_owner[v] = oj
    for oj in range(p.n_tets):
        ids = [v for v, o in first_elem.items() if o == oj]
        if ids:
            lam = geometry.barycentric(p.tetrahedron(oj), nodes[ids])
            node_bary[ids] = lam
    ext_base = np.full(len(nodes), -1, dtype=int)
    ext_frac = np.zeros(len(nodes))
    for nid, base, frac in ext_records:
        ext_base[nid] = base
        ext_frac[nid] = frac

    mesh = Mesh(nodes=nodes, elems=elems, owner=owner, node_owner=node_owner,
                node_bary=node_bary, ext_base=ext_base, ext_frac=ext_frac,
                levels=levels, layers=layers, r_tilde=r_tilde)
    if np.any(mesh.signed_volumes() <= 0.0):
        raise MeshFailure("mesh contains a non-positive element")
    return mesh


def displace_mesh(mesh, p, d, t):
    """Mesh with identical connectivity whose nodes follow the partition
    deformation at parameter t (piecewise-affine over the owner tets;
    extension layers follow their base node scaled by 1 - frac)."""
    new_nodes = mesh.nodes.copy()
    verts_t = p.vertices + t * d.displacements
    omega = mesh.node_owner >= 0
    for oj in np.unique(mesh.node_owner[omega]):
        sel = mesh.node_owner == oj
        new_nodes[sel] = mesh.node_bary[sel] @ verts_t[p.tets[oj]]
    delta = new_nodes - mesh.nodes
    ext = mesh.ext_base >= 0
    new_nodes[ext] = mesh.nodes[ext] + \
        (1.0 - mesh.ext_frac[ext])[:, None] * delta[mesh.ext_base[ext]]
    out = Mesh(nodes=new_nodes, elems=mesh.elems, owner=mesh.owner,
               node_owner=mesh.node_owner, node_bary=mesh.node_bary,
               ext_base=mesh.ext_base, ext_frac=mesh.ext_frac,
               levels=mesh.levels, layers=mesh.layers, r_tilde=mesh.r_tilde,
               _faces=mesh._faces)
    if np.any(out.signed_volumes() <= 0.0):
        raise RegularityLost(f"mesh element inverted at t = {t}")
    return out


def mesh_to_dict(mesh):
    return {
        "nodes": [list(map(float, v)) for v in mesh.nodes],
        "tets": [list(map(int, e)) for e in mesh.elems],
        "owner": [int(o) for o in mesh.owner],
        "node_owner": [int(o) for o in mesh.node_owner],
        "node_bary": [list(map(float, b)) for b in mesh.node_bary],
        "ext_base": [int(b) for b in mesh.ext_base],
        "ext_frac": [float(f) for f in mesh.ext_frac],
        "levels": int(mesh.levels),
        "layers": int(mesh.layers),
        "r_tilde": None if mesh.r_tilde is None else float(mesh.r_tilde),
    }


def mesh_from_dict(data):
    return Mesh(nodes=np.array(data["nodes"], dtype=float),
                elems=np.array(data["tets"], dtype=int),
                owner=np.array(data["owner"], dtype=int),
                node_owner=np.array(data["node_owner"], dtype=int),
                node_bary=np.array(data["node_bary"], dtype=float),
                ext_base=np.array(data["ext_base"], dtype=int),
                ext_frac=np.array(data["ext_frac"], dtype=float),
                levels=int(data["levels"]), layers=int(data["layers"]),
                r_tilde=data["r_tilde"])


def save_mesh(path, mesh):
    with open(path, "w") as fh:
        json.dump(mesh_to_dict(mesh), fh)


def load_mesh(path):
    with open(path) as fh:
        return mesh_from_dict(json.load(fh))


def outer_surface_angular_radius(mesh):
    """Largest angular circumradius (radians, seen from the origin) of
    the outer boundary triangles of an augmented mesh.

    Every point of the inscribed polyhedral sphere then lies within
    (1 - cos theta) * r_tilde of the true sphere.
    """
    if not mesh.is_augmented:
        raise ValueError("angular radius is defined for augmented meshes only")
    worst = 0.0
    for _, _, tri in mesh.boundary_faces():
        pts = mesh.nodes[list(tri)]
        units = pts / np.linalg.norm(pts, axis=1, keepdims=True)
        center = units.mean(axis=0)
        center /= np.linalg.norm(center)
        cosang = np.clip(units @ center, -1.0, 1.0)
        worst = max(worst, float(np.arccos(cosang).max()))
    return worst
