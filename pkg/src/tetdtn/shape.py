"""Gateaux derivative of the DtN pairing under partition deformation,
finite-difference validation, the facet measure and the derivative-norm
probes.

The derivative is assembled as facet-surface integrals of u v (Phi . nu)
with jump coefficients: across an internal facet the jump is q+ - q-,
and on a facet of the partition boundary the exterior value is the
extension constant q0~.  For boundary-preserving deformations this
coincides with the per-tetrahedron sum weighted by q_j; for diagnostic
deformations that move the partition boundary it remains the exact
derivative of the extended-potential family.
"""

from dataclasses import dataclass

import numpy as np

from . import fem, geometry
from .cgo import triangle_ft_affine
from .dtn import ALESSANDRINI_SIGN, boundary_gram
from .errors import NonPreservingDeformation, ZeroDeformation
from .meshing import displace_mesh
from .partition import (affine_flow, deform, deformation_size,
                        is_boundary_preserving)

# The derivative of t -> <Lambda_t phi, psi> equals ALESSANDRINI_SIGN
# times the facet integrals of u v (Phi . nu) with jump coefficients;
# the orientation is inherited from the frozen pairing orientation and
# is what the finite differences of the discrete pairing converge to.
DERIVATIVE_SIGN = ALESSANDRINI_SIGN

FACET_QUAD_N = 3   # degree-5 triangle rule: exact for P2 x P2 x affine
VOLUME_QUAD_N = 3  # degree-5 tet rule: exact for div(u v Phi), P2


class FacetAssembler:
    """Quadrature tables over the element facets that make up the
    partition interfaces (and the partition boundary) of a mesh.

    Each entry is one element facet seen from its owning partition
    tetrahedron, with outward normal; internal interfaces contribute one
    entry per side.
    """

    def __init__(self, mesh, space, quad_n=FACET_QUAD_N):
        self.mesh = mesh
        self.space = space
        lam_tri, w_tri = fem.tri_quadrature(quad_n)
        self.nq = len(w_tri)
        entries = [e for e in mesh.interface_facets() if e[2] >= 0]
        self.owner_plus = np.array([e[2] for e in entries], dtype=int)
        self.owner_minus = np.array([e[3] for e in entries], dtype=int)
        ne = len(entries)
        nd = space.element_dofs.shape[1]
        self.basis = np.empty((ne, self.nq, nd))
        self.dofs = np.empty((ne, nd), dtype=int)
        self.points = np.empty((ne, self.nq, 3))
        self.weights = np.empty((ne, self.nq))
        self.normals = np.empty((ne, 3))
        for row, (ei, lface, _, _) in enumerate(entries):
            fv = geometry.FACET_INDICES[lface]
            tri = mesh.nodes[mesh.elems[ei][list(fv)]]
            n = np.cross(tri[1] - tri[0], tri[2] - tri[0])
            area = 0.5 * np.linalg.norm(n)
            self.normals[row] = n / (2.0 * area)
            self.weights[row] = area * w_tri
            tet_bary = np.zeros((self.nq, 4))
            for c in range(3):
                tet_bary[:, fv[c]] = lam_tri[:, c]
            self.basis[row] = fem.basis_values(space.order, tet_bary)
            self.dofs[row] = space.element_dofs[ei]
            self.points[row] = lam_tri @ tri

    def facet_values(self, u):
        """Solution values at the facet quadrature points; u may carry
        extra probe columns."""
        coeffs = np.asarray(u)[self.dofs]            # (ne, nd[, k])
        return np.einsum("eqd,ed...->eq...", self.basis, coeffs)

    def coefficients(self, q_values, mode, q0_tilde):
        """Per-entry jump coefficient; entries excluded by the mode get
        coefficient 0."""
        qp = q_values[self.owner_plus]
        if mode == "raw":
            return qp
        if mode == "offset":
            return qp - q0_tilde
        if mode == "internal":
            coeff = np.zeros(len(qp))
            sel = (self.owner_minus >= 0) & (self.owner_plus < self.owner_minus)
            coeff[sel] = qp[sel] - q_values[self.owner_minus[sel]]
            return coeff
        raise ValueError(f"unknown mode {mode!r}")

    def phi_dot_nu(self, p, d, t0):
        """(Phi_j(x) . nu) at the quadrature points, owner-side flows."""
        out = np.empty((len(self.owner_plus), self.nq))
        flows = {}
        for row, j in enumerate(self.owner_plus):
            if j not in flows:
                flows[j] = affine_flow(p, d, j, t0)
            out[row] = flows[j].phi(self.points[row]) @ self.normals[row]
        return out

    def assemble(self, u, v, p, d, t0, q_values, mode, q0_tilde, omega):
        """omega^2 * sum of coeff * int u v (Phi . nu) over the entries."""
        w = self.coefficients(q_values, mode, q0_tilde)[:, None] \
            * self.weights * self.phi_dot_nu(p, d, t0)
        uu = self.facet_values(u)
        vv = self.facet_values(v)
        if uu.ndim == 2:
            return omega ** 2 * float(np.sum(w * uu * vv))
        return omega ** 2 * np.einsum("eq,eqr,eqs->rs", w, uu, vv)

    def quadratic_weights(self, p, d, t0, q_values, mode, q0_tilde):
        """Flattened quadrature weights for bilinear assembly."""
        return self.coefficients(q_values, mode, q0_tilde)[:, None] \
            * self.weights * self.phi_dot_nu(p, d, t0)


def _volume_form(mesh, space, u, v, p, d, t0, q_values, mode, q0_tilde, omega,
                 quad_n=VOLUME_QUAD_N):
    """omega^2 * sum_j coeff_j * int_Tj div(u v Phi_j) dx."""
    lam, wq = fem.tet_quadrature(quad_n)
    vol, grads = fem.element_geometry(mesh)
    phi_b = fem.basis_values(space.order, lam)                 # (nq, nd)
    dphi = fem.basis_lambda_gradients(space.order, lam)        # (nq, nd, 4)
    total = 0.0
    omega_elems = np.where(mesh.owner >= 0)[0]
    flows = {}
    for ei in omega_elems:
        j = int(mesh.owner[ei])
        if j not in flows:
            flows[j] = affine_flow(p, d, j, t0)
        if mode == "offset":
            coeff = q_values[j] - q0_tilde
        elif mode == "raw":
            coeff = q_values[j]
        else:
            raise ValueError("volume form supports raw and offset modes")
        fl = flows[j]
        dofs = space.element_dofs[ei]
        uu = phi_b @ u[dofs]
        vv = phi_b @ v[dofs]
        gphys = np.einsum("qdk,kx->qdx", dphi, grads[ei])      # (nq, nd, 3)
        gu = np.einsum("qdx,d->qx", gphys, u[dofs])
        gv = np.einsum("qdx,d->qx", gphys, v[dofs])
        pts = lam @ mesh.nodes[mesh.elems[ei]]
        phi_vals = fl.phi(pts)
        div_uv_phi = ((gu * vv[:, None] + gv * uu[:, None]) * phi_vals).sum(axis=1) \
            + uu * vv * fl.div
        total += coeff * vol[ei] * float(np.dot(wq, div_uv_phi))
    return omega ** 2 * total


def _pairing(space, qe, omega, phi, psi):
    """F = <Lambda phi, psi> on the given space."""
    solver = fem.DirichletSolver(space, qe, omega)
    u = solver.solve(phi)
    return float(psi @ solver.neumann(u))


def _solve_pair(mesh, space, f, fs, phi, psi, q0_tilde):
    qe = fem.element_potentials(mesh, f, q0_tilde=q0_tilde)
    solver = fem.DirichletSolver(space, qe, fs.omega)
    return solver.solve(phi), solver.solve(psi)


@dataclass
class GateauxResult:
    value: float          # facet form with jump coefficients (FD-exact)
    raw_facet: float      # per-tetrahedron facet sum with raw q_j
    volume: float         # volume (divergence) form with raw q_j

    @property
    def divergence_defect(self):
        scale = max(abs(self.raw_facet), abs(self.volume), 1e-300)
        return abs(self.raw_facet - self.volume) / scale


def gateaux_derivative(f, d, t0, phi, psi, fs, mesh, order=1, q0_tilde=None):
    """Derivative of t -> <Lambda_t phi, psi> at t0, assembled as facet
    integrals of u v (Phi . nu); also returns the volume form and checks
    the divergence-theorem agreement.

    mesh is the augmented mesh of the undeformed partition; solutions
    are computed on its displaced copy at t0.
    """
    p = f.partition
    if q0_tilde is None:
        q0_tilde = f.vs.Q0
    mesh_t = displace_mesh(mesh, p, d, t0) if t0 != 0.0 else mesh
    space = fem.FemSpace(mesh_t, order)
    u, v = _solve_pair(mesh_t, space, f, fs, phi, psi, q0_tilde)
    q_values = f.tet_values()
    asm = FacetAssembler(mesh_t, space)
    sgn = DERIVATIVE_SIGN
    value = sgn * asm.assemble(u, v, p, d, t0, q_values, "offset", q0_tilde, fs.omega)
    raw = sgn * asm.assemble(u, v, p, d, t0, q_values, "raw", q0_tilde, fs.omega)
    volume = sgn * _volume_form(mesh_t, space, u, v, p, d, t0, q_values, "raw",
                                q0_tilde, fs.omega)
    result = GateauxResult(value=value, raw_facet=raw, volume=volume)
    scale = max(abs(raw), abs(volume), 1e-12 * max(abs(value), 1.0))
    if abs(raw - volume) > 1e-8 * scale:
        raise AssertionError(
            f"divergence-theorem defect {result.divergence_defect:.2e}")
    return result


def finite_difference_R(f, d, t0, h, phi, psi, fs, mesh, order=1, q0_tilde=None):
    """Difference quotient (F(t0 + h) - F(t0)) / h on displaced copies
    of one mesh (identical connectivity, no remeshing noise)."""
    if not (0.0 <= t0 <= 1.0 and 0.0 <= t0 + h <= 1.0):
        raise ValueError("t0 and t0 + h must lie in [0, 1]")
    p = f.partition
    if q0_tilde is None:
        q0_tilde = f.vs.Q0
    values = []
    for t in (t0, t0 + h):
        mesh_t = displace_mesh(mesh, p, d, t) if t != 0.0 else mesh
        space = fem.FemSpace(mesh_t, order)
        qe = fem.element_potentials(mesh_t, f, q0_tilde=q0_tilde)
        values.append(_pairing(space, qe, fs.omega, phi, psi))
    return (values[1] - values[0]) / h


def facet_form_equivalence(f, d, phi, psi, fs, mesh, order=1, q0_tilde=None):
    """(tet_sum, facet_sum) of the derivative at t0 = 0: the
    per-tetrahedron boundary sum with raw q_j against the internal-facet
    jump regrouping.  Requires a boundary-preserving deformation."""
    p = f.partition
    if not is_boundary_preserving(p, d):
        raise NonPreservingDeformation(
            "facet regrouping drops boundary facets, which only vanish for "
            "boundary-preserving deformations")
    if q0_tilde is None:
        q0_tilde = f.vs.Q0
    space = fem.FemSpace(mesh, order)
    u, v = _solve_pair(mesh, space, f, fs, phi, psi, q0_tilde)
    q_values = f.tet_values()
    asm = FacetAssembler(mesh, space)
    tet_sum = DERIVATIVE_SIGN * asm.assemble(u, v, p, d, 0.0, q_values, "raw",
                                             q0_tilde, fs.omega)
    facet_sum = DERIVATIVE_SIGN * asm.assemble(u, v, p, d, 0.0, q_values,
                                               "internal", q0_tilde, fs.omega)
    return tet_sum, facet_sum


# ---------------------------------------------------------------------------
# facet measure

@dataclass
class FacetMeasure:
    """Facet-supported affine densities f_k = (q+ - q-) (Phi~ . nu) on
    the internal facets; facets on the partition boundary carry zero."""

    triangles: list      # (3, 3) vertex arrays
    normals: list
    jumps: list
    densities: list      # vertex values of f_k, zeros on boundary facets
    boundary_flags: list

    def total(self):
        """Integral of the measure (its Fourier transform at xi = 0)."""
        acc = 0.0
        for tri, fv in zip(self.triangles, self.densities):
            area = 0.5 * np.linalg.norm(np.cross(tri[1] - tri[0], tri[2] - tri[0]))
            acc += area * np.mean(fv)
        return acc


def facet_measure(f, d, normalized=True):
    """Facet measure of a deformation at t = 0; densities use the
    normalized flows when normalized is True."""
    p = f.partition
    q_values = f.tet_values()
    scale = 1.0
    if normalized:
        v_per_tet, _, _ = deformation_size(p, d)
        scale = 1.0 / v_per_tet.sum()
    triangles, normals, jumps, densities, bflags = [], [], [], [], []
    for key, owners in sorted(p._facets().items()):
        tri = p.vertices[list(key)]
        if len(owners) == 1:
            triangles.append(tri)
            normals.append(np.zeros(3))
            jumps.append(0.0)
            densities.append(np.zeros(3))
            bflags.append(True)
            continue
        (j0, _), (j1, _) = owners
        jp, jm = min(j0, j1), max(j0, j1)
        n = np.cross(tri[1] - tri[0], tri[2] - tri[0])
        n /= np.linalg.norm(n)
        centroid_plus = p.vertices[p.tets[jp]].mean(axis=0)
        if np.dot(n, tri.mean(axis=0) - centroid_plus) < 0:
            n = -n  # outward from the plus side
        flow = affine_flow(p, d, jp, 0.0)
        jump = q_values[jp] - q_values[jm]
        fv = jump * scale * (flow.phi(tri) @ n)
        triangles.append(tri)
        normals.append(n)
        jumps.append(jump)
        densities.append(fv)
        bflags.append(False)
    return FacetMeasure(triangles=triangles, normals=normals, jumps=jumps,
                        densities=densities, boundary_flags=bflags)


def facet_measure_ft(fm, xi):
    """Fourier transform of the facet measure at frequencies xi."""
    xi = np.asarray(xi, dtype=float)
    single = xi.ndim == 1
    grid = np.atleast_2d(xi)
    out = np.zeros(len(grid), dtype=complex)
    for tri, fv, bdry in zip(fm.triangles, fm.densities, fm.boundary_flags):
        if bdry or not np.any(fv):
            continue
        out += triangle_ft_affine(tri, fv, grid)
    return out[0] if single else out


# ---------------------------------------------------------------------------
# derivative-norm probes

@dataclass
class ProbeReport:
    m0: float
    phi0: np.ndarray
    psi0: np.ndarray
    matrix: np.ndarray   # bilinear form on the whitened probe subspace
    n_probes: int


def _probe_basis(gram, budget):
    lam = gram.lam[:budget]
    y = gram.Y[:, :budget]
    whiten = (1.0 + lam) ** (-0.25)
    return y, whiten


def derivative_norm_probe(f, d, fs, mesh, order=1, budget=25, q0_tilde=None):
    """Norm of the normalized derivative bilinear form on the span of
    the lowest boundary-pencil eigenvectors.

    The deformation is normalized so the displacement magnitudes sum to
    one; returns the norm and the maximizing H^{1/2}-unit trace pair.
    """
    p = f.partition
    if d.is_zero:
        raise ZeroDeformation("derivative-norm probe needs a nonzero deformation")
    v_per_tet, _, _ = deformation_size(p, d)
    if q0_tilde is None:
        q0_tilde = f.vs.Q0
    space = fem.FemSpace(mesh, order)
    gram = boundary_gram(space)
    budget = min(budget, len(gram.lam))
    y, whiten = _probe_basis(gram, budget)
    qe = fem.element_potentials(mesh, f, q0_tilde=q0_tilde)
    solver = fem.DirichletSolver(space, qe, fs.omega)
    u = solver.solve(y)
    asm = FacetAssembler(mesh, space)
    q_values = f.tet_values()
    # the bilinear operator uses the normalized flows and no omega^2
    w = asm.quadratic_weights(p, d, 0.0, q_values, "internal", q0_tilde)
    w = w / v_per_tet.sum()
    uu = asm.facet_values(u)     # (ne, nq, budget)
    g_mat = np.einsum("eq,eqr,eqs->rs", w, uu, uu)
    core = whiten[:, None] * g_mat * whiten[None, :]
    uvec, sig, vt = np.linalg.svd(core)
    phi0 = y @ (whiten * vt[0])
    psi0 = y @ (whiten * uvec[:, 0])
    return ProbeReport(m0=float(sig[0]), phi0=phi0, psi0=psi0, matrix=core,
                       n_probes=budget)


def second_step_scaling(f, d, fs, mesh, s_grid, order=1, budget=25,
                        q0_tilde=None):
    """Probe-subspace norm of F'(1) - F'(0) against d_T over scaled
    copies of one deformation; returns rows (s, d_T, sup_diff) and the
    fitted log-log slope over the nonzero scales."""
    p = f.partition
    if q0_tilde is None:
        q0_tilde = f.vs.Q0
    space0 = fem.FemSpace(mesh, order)
    gram = boundary_gram(space0)
    budget = min(budget, len(gram.lam))
    y, whiten = _probe_basis(gram, budget)
    q_values = f.tet_values()

    def derivative_matrix(ds, t0):
        mesh_t = displace_mesh(mesh, p, ds, t0) if t0 != 0.0 else mesh
        space = fem.FemSpace(mesh_t, order)
        qe = fem.element_potentials(mesh_t, f, q0_tilde=q0_tilde)
        solver = fem.DirichletSolver(space, qe, fs.omega)
        u = solver.solve(y)
        asm = FacetAssembler(mesh_t, space)
        return DERIVATIVE_SIGN * asm.assemble(u, u, p, ds, t0, q_values,
                                              "offset", q0_tilde, fs.omega)

    rows = []
    for s in s_grid:
        if s == 0.0:
            rows.append((0.0, 0.0, 0.0))
            continue
        ds = d.scaled(s)
        _, d_t, _ = deformation_size(p, ds)
        g0 = derivative_matrix(ds, 0.0)
        g1 = derivative_matrix(ds, 1.0)
        core = whiten[:, None] * (g1 - g0) * whiten[None, :]
        sup = float(np.linalg.svd(core, compute_uv=False)[0])
        rows.append((float(s), d_t, sup))
    pts = [(dt, sup) for _, dt, sup in rows if dt > 0 and sup > 0]
    slope = float("nan")
    if len(pts) >= 2:
        lx = np.log([q[0] for q in pts])
        ly = np.log([q[1] for q in pts])
        slope = float(np.polyfit(lx, ly, 1)[0])
    return rows, slope
