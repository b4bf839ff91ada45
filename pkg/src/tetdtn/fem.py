"""P1/P2 tetrahedral finite elements for the Helmholtz Dirichlet
problem with piecewise-constant potential.

Element mass and stiffness matrices are integrated exactly through
barycentric monomial formulas, so the only quadrature error in the
package enters through non-polynomial integrands (boundary data,
manufactured solutions, exponential probes).
"""

from dataclasses import dataclass
from math import factorial

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.special import roots_jacobi, roots_legendre

from .errors import SingularSystem

# First Dirichlet eigenvalue of -Laplace on the unit ball is pi^2
# (attained by sin(pi r) / r), so lambda_1(B_R) = pi^2 / R^2.
LAMBDA1_UNIT_BALL = np.pi ** 2

SOLVER_TOL = 1e-10


# ---------------------------------------------------------------------------
# frequency admissibility

@dataclass(frozen=True)
class FrequencySpec:
    """Working frequency omega inside the admissible band [omega0, omega1],
    for a domain contained in the ball of radius R."""

    omega: float
    omega0: float
    omega1: float
    R: float


@dataclass
class AdmissibilityReport:
    admissible: bool
    checks: list  # (name, satisfied, margin); margin > 0 means slack

    def margin(self, name):
        for n, _, m in self.checks:
            if n == name:
                return m
        raise KeyError(name)


def check_admissibility(fs, vs, augmented=False):
    """Verify the frequency band against the value set.

    The plain check requires omega1^2 Q0 <= lambda_1(B_R) / 2; the
    augmented check additionally requires omega^2 max|q~| to stay below
    (2/3) lambda_1(B_Rt) with Rt = 2R/sqrt(3), which equals the plain
    bound since lambda_1(B_Rt) = (3/4) lambda_1(B_R).
    """
    checks = []
    lam1 = LAMBDA1_UNIT_BALL / fs.R ** 2
    checks.append(("band-order", 0.0 < fs.omega0 <= fs.omega <= fs.omega1,
                   min(fs.omega - fs.omega0, fs.omega1 - fs.omega)))
    bound = np.sqrt(lam1 / (2.0 * vs.Q0))
    checks.append(("omega1-bound", fs.omega1 <= bound, bound - fs.omega1))
    if augmented:
        r_tilde = 2.0 * fs.R / np.sqrt(3.0)
        lam1_t = LAMBDA1_UNIT_BALL / r_tilde ** 2
        q_max = vs.Q0  # extension value q0~ = Q0 never exceeds Q0
        lhs = fs.omega ** 2 * q_max
        rhs = 2.0 / 3.0 * lam1_t
        checks.append(("augmented-coercivity", lhs <= rhs, rhs - lhs))
    return AdmissibilityReport(all(ok for _, ok, _ in checks), checks)


# ---------------------------------------------------------------------------
# barycentric polynomial machinery

def simplex_monomial_integral(expo):
    """Integral of prod(lambda_i^e_i) over an n-simplex, per unit measure.

    Formula: n! * prod(e_i!) / (sum(e_i) + n)! for n = len(expo) - 1.
    """
    n = len(expo) - 1
    num = factorial(n)
    for e in expo:
        num *= factorial(e)
    return num / factorial(sum(expo) + n)


class _Poly:
    """Sparse barycentric polynomial: dict exponent-tuple -> coefficient."""

    def __init__(self, terms=None):
        self.terms = dict(terms or {})

    def __mul__(self, other):
        out = {}
        for ea, ca in self.terms.items():
            for eb, cb in other.terms.items():
                key = tuple(a + b for a, b in zip(ea, eb))
                out[key] = out.get(key, 0.0) + ca * cb
        return _Poly(out)

    def diff(self, k):
        out = {}
        for e, c in self.terms.items():
            if e[k] > 0:
                key = tuple(v - 1 if i == k else v for i, v in enumerate(e))
                out[key] = out.get(key, 0.0) + c * e[k]
        return _Poly(out)

    def integral(self):
        return sum(c * simplex_monomial_integral(e) for e, c in self.terms.items())


def _unit(e, n):
    return tuple(1 if i == e else 0 for i in range(n))


def _p1_basis(n_coords):
    return [_Poly({_unit(i, n_coords): 1.0}) for i in range(n_coords)]


def _p2_basis(n_coords):
    """Vertex functions lambda_i (2 lambda_i - 1), then edge functions
    4 lambda_i lambda_j in lexicographic edge order."""
    basis = []
    for i in range(n_coords):
        basis.append(_Poly({tuple(2 if k == i else 0 for k in range(n_coords)): 2.0,
                            _unit(i, n_coords): -1.0}))
    for i in range(n_coords):
        for j in range(i + 1, n_coords):
            e = tuple(1 if k in (i, j) else 0 for k in range(n_coords))
            basis.append(_Poly({e: 4.0}))
    return basis


def _exact_tensors(n_coords, order):
    basis = _p1_basis(n_coords) if order == 1 else _p2_basis(n_coords)
    nb = len(basis)
    mass = np.empty((nb, nb))
    stiff = np.empty((nb, nb, n_coords, n_coords))
    d = [[b.diff(k) for k in range(n_coords)] for b in basis]
    for i in range(nb):
        for j in range(nb):
            mass[i, j] = (basis[i] * basis[j]).integral()
            for k in range(n_coords):
                for l in range(n_coords):
                    stiff[i, j, k, l] = (d[i][k] * d[j][l]).integral()
    return mass, stiff


TET_EDGES = ((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3))
TRI_EDGES = ((0, 1), (0, 2), (1, 2))

_MASS_TET = {1: None, 2: None}
_STIFF_TET = {1: None, 2: None}
_MASS_TRI = {1: None, 2: None}
_STIFF_TRI = {1: None, 2: None}
for _o in (1, 2):
    _MASS_TET[_o], _STIFF_TET[_o] = _exact_tensors(4, _o)
    _MASS_TRI[_o], _STIFF_TRI[_o] = _exact_tensors(3, _o)


def basis_values(order, lam):
    """Values of the local basis at barycentric points lam (..., nc)."""
    lam = np.asarray(lam, dtype=float)
    nc = lam.shape[-1]
    if order == 1:
        return lam
    edges = TET_EDGES if nc == 4 else TRI_EDGES
    vertex = lam * (2.0 * lam - 1.0)
    edge = np.stack([4.0 * lam[..., i] * lam[..., j] for i, j in edges], axis=-1)
    return np.concatenate([vertex, edge], axis=-1)


def basis_lambda_gradients(order, lam):
    """d(basis)/d(lambda_k) at barycentric points; shape (..., nb, nc)."""
    lam = np.asarray(lam, dtype=float)
    nc = lam.shape[-1]
    if order == 1:
        shape = lam.shape[:-1] + (nc, nc)
        out = np.zeros(shape)
        out[...] = np.eye(nc)
        return out
    edges = TET_EDGES if nc == 4 else TRI_EDGES
    nb = nc + len(edges)
    out = np.zeros(lam.shape[:-1] + (nb, nc))
    for i in range(nc):
        out[..., i, i] = 4.0 * lam[..., i] - 1.0
    for e, (i, j) in enumerate(edges):
        out[..., nc + e, i] = 4.0 * lam[..., j]
        out[..., nc + e, j] = 4.0 * lam[..., i]
    return out


# ---------------------------------------------------------------------------
# conical-product quadrature (exact to degree 2n - 1 on the simplex)

def _gauss_jacobi01(n, alpha):
    if alpha == 0:
        x, w = roots_legendre(n)
    else:
        x, w = roots_jacobi(n, alpha, 0.0)
    return (x + 1.0) / 2.0, w / 2.0 ** (alpha + 1)


def tet_quadrature(n):
    """Barycentric points (n^3, 4) and weights summing to 1."""
    x1, w1 = _gauss_jacobi01(n, 2)
    x2, w2 = _gauss_jacobi01(n, 1)
    x3, w3 = _gauss_jacobi01(n, 0)
    pts, wts = [], []
    for a, wa in zip(x1, w1):
        for b, wb in zip(x2, w2):
            for c, wc in zip(x3, w3):
                u1 = a
                u2 = b * (1 - a)
                u3 = c * (1 - a) * (1 - b)
                pts.append((1 - u1 - u2 - u3, u1, u2, u3))
                wts.append(wa * wb * wc)
    wts = np.array(wts)
    return np.array(pts), wts / wts.sum()


def tri_quadrature(n):
    """Barycentric points (n^2, 3) and weights summing to 1."""
    x1, w1 = _gauss_jacobi01(n, 1)
    x2, w2 = _gauss_jacobi01(n, 0)
    pts, wts = [], []
    for a, wa in zip(x1, w1):
        for b, wb in zip(x2, w2):
            u1 = a
            u2 = b * (1 - a)
            pts.append((1 - u1 - u2, u1, u2))
            wts.append(wa * wb)
    wts = np.array(wts)
    return np.array(pts), wts / wts.sum()


# ---------------------------------------------------------------------------
# dof management

class FemSpace:
    """Scalar H1-conforming space of order 1 or 2 on a mesh.

    Dof numbering depends only on the mesh connectivity, so spaces built
    on displaced copies of one mesh share dof ids.
    """

    def __init__(self, mesh, order=1):
        if order not in (1, 2):
            raise ValueError("order must be 1 or 2")
        self.mesh = mesh
        self.order = order
        self.n_vertex_dofs = mesh.n_nodes
        if order == 1:
            self.edge_id = None
            self.n_dofs = mesh.n_nodes
            self.element_dofs = mesh.elems.copy()
        else:
            pairs = set()
            for elem in mesh.elems:
                for i, j in TET_EDGES:
                    a, b = elem[i], elem[j]
                    pairs.add((a, b) if a < b else (b, a))
            self.edge_id = {e: mesh.n_nodes + k for k, e in enumerate(sorted(pairs))}
            self.n_dofs = mesh.n_nodes + len(pairs)
            ed = np.empty((mesh.n_elems, 10), dtype=int)
            ed[:, :4] = mesh.elems
            for r, elem in enumerate(mesh.elems):
                for c, (i, j) in enumerate(TET_EDGES):
                    a, b = elem[i], elem[j]
                    ed[r, 4 + c] = self.edge_id[(a, b) if a < b else (b, a)]
            self.element_dofs = ed
        self._bdofs = None

    def dof_coords(self):
        coords = np.empty((self.n_dofs, 3))
        coords[:self.n_vertex_dofs] = self.mesh.nodes
        if self.order == 2:
            for (a, b), did in self.edge_id.items():
                coords[did] = 0.5 * (self.mesh.nodes[a] + self.mesh.nodes[b])
        return coords

    def boundary_dofs(self):
        """Sorted dof ids on the mesh boundary."""
        if self._bdofs is None:
            dofs = set()
            for _, _, tri in self.mesh.boundary_faces():
                dofs.update(tri)
                if self.order == 2:
                    for i, j in ((0, 1), (0, 2), (1, 2)):
                        a, b = tri[i], tri[j]
                        dofs.add(self.edge_id[(a, b) if a < b else (b, a)])
            self._bdofs = np.array(sorted(dofs), dtype=int)
        return self._bdofs

    def face_dofs(self, elem, lface):
        """Local-facet dofs of an element facet with its barycentric
        embedding: returns (dof ids, rows of tet-barycentric coords of
        the facet's local nodes)."""
        from .geometry import FACET_INDICES
        tet_dofs = self.element_dofs[elem]
        fverts = list(FACET_INDICES[lface])
        ids = [tet_dofs[v] for v in fverts]
        if self.order == 2:
            for i, j in TRI_EDGES:
                a, b = sorted((fverts[i], fverts[j]))
                ids.append(tet_dofs[4 + TET_EDGES.index((a, b))])
        return np.array(ids, dtype=int)


def element_geometry(mesh):
    """(volumes, grad_lambda) with grad_lambda of shape (m, 4, 3)."""
    v = mesh.nodes[mesh.elems]
    b = np.transpose(v[:, 1:] - v[:, :1], (0, 2, 1))  # columns v_k - v_0
    det = np.linalg.det(b)
    vol = det / 6.0
    binv = np.linalg.inv(b)
    grads = np.empty((mesh.n_elems, 4, 3))
    grads[:, 1:, :] = binv
    grads[:, 0, :] = -binv.sum(axis=1)
    return vol, grads


def stiffness_matrix(space):
    mesh = space.mesh
    vol, grads = element_geometry(mesh)
    g = np.einsum("mkx,mlx->mkl", grads, grads)
    c = _STIFF_TET[space.order]
    local = np.einsum("ijkl,mkl->mij", c, g) * vol[:, None, None]
    return _assemble(space, local)


def mass_matrix(space, qe=None):
    mesh = space.mesh
    vol, _ = element_geometry(mesh)
    w = vol if qe is None else vol * np.asarray(qe)
    local = _MASS_TET[space.order][None, :, :] * w[:, None, None]
    return _assemble(space, local)


def _assemble(space, local):
    ed = space.element_dofs
    nb = ed.shape[1]
    rows = np.repeat(ed, nb, axis=1).ravel()
    cols = np.tile(ed, (1, nb)).ravel()
    mat = sp.coo_matrix((local.ravel(), (rows, cols)),
                        shape=(space.n_dofs, space.n_dofs))
    return mat.tocsr()


def element_potentials(mesh, f=None, q0_tilde=None):
    """Per-element potential values: the owner tetrahedron's value, or
    q0_tilde on the extension region."""
    qe = np.empty(mesh.n_elems)
    values = f.tet_values() if f is not None else None
    for i, o in enumerate(mesh.owner):
        if o >= 0:
            if values is None:
                raise ValueError("field required for elements owned by the partition")
            qe[i] = values[o]
        else:
            if q0_tilde is None:
                raise ValueError("q0_tilde required for extension elements")
            qe[i] = q0_tilde
    return qe


@dataclass
class FemSolution:
    """Nodal coefficients of a discrete Helmholtz solution."""

    values: np.ndarray
    space: FemSpace
    omega: float
    qe: np.ndarray

    def boundary_values(self):
        return self.values[self.space.boundary_dofs()]


class DirichletSolver:
    """Factorized interior operator for repeated Dirichlet solves with a
    fixed potential and frequency."""

    def __init__(self, space, qe, omega):
        self.space = space
        self.qe = np.asarray(qe, dtype=float)
        self.omega = float(omega)
        self.K = stiffness_matrix(space) - omega ** 2 * mass_matrix(space, qe)
        bdofs = space.boundary_dofs()
        mask = np.ones(space.n_dofs, dtype=bool)
        mask[bdofs] = False
        self.interior = np.where(mask)[0]
        self.bdofs = bdofs
        kcsc = self.K.tocsc()
        self.K_II = kcsc[self.interior][:, self.interior]
        self.K_IB = kcsc[self.interior][:, bdofs]
        if len(self.interior):
            self._k_scale = max(1.0, float(np.abs(self.K_II.data).max()))
            try:
                self.lu = spla.splu(self.K_II.tocsc())
            except RuntimeError as exc:
                raise SingularSystem(str(exc)) from exc
        else:
            self._k_scale = 1.0
            self.lu = None

    def solve(self, trace):
        """Solution with Dirichlet data `trace` on the boundary dofs
        (ordered as space.boundary_dofs()); complex traces are solved as
        two real systems against the shared factorization."""
        trace = np.asarray(trace)
        if np.iscomplexobj(trace):
            return self.solve(trace.real).astype(complex) + 1j * self.solve(trace.imag)
        out_shape = (self.space.n_dofs,) + trace.shape[1:]
        u = np.zeros(out_shape)
        u[self.bdofs] = trace
        if self.lu is None:
            return u
        rhs = -(self.K_IB @ trace)
        u_i = self.lu.solve(rhs)
        resid = self.K_II @ u_i - rhs
        scale = max(np.abs(rhs).max(initial=0.0), np.abs(u_i).max(initial=0.0), 1e-300)
        if np.abs(resid).max(initial=0.0) > 1e-8 * scale * self._k_scale:
            raise SingularSystem("interior solve did not reach tolerance")
        u[self.interior] = u_i
        return u

    def neumann(self, u):
        """Boundary dual coefficients of the weak normal derivative."""
        return (self.K @ u)[self.bdofs]

    def pairing(self, u, psi_trace):
        """<Lambda(u|_b), psi> without assembling the operator."""
        return psi_trace @ self.neumann(u)

    def solution(self, trace):
        return FemSolution(self.solve(trace), self.space, self.omega, self.qe)


def solve_dirichlet(space, qe, fs, trace):
    """One-shot Dirichlet solve; see DirichletSolver for repeated use."""
    return DirichletSolver(space, qe, fs.omega).solution(trace)


def l2_error(space, u, exact, quad_n=4):
    """L2 distance between a discrete solution vector and a callable."""
    mesh = space.mesh
    lam, w = tet_quadrature(quad_n)
    vol, _ = element_geometry(mesh)
    phi = basis_values(space.order, lam)          # (nq, nb)
    coeffs = u[space.element_dofs]                # (m, nb)
    uh = coeffs @ phi.T                           # (m, nq)
    pts = np.einsum("qk,mkx->mqx", lam, mesh.nodes[mesh.elems])
    ue = exact(pts.reshape(-1, 3)).reshape(uh.shape)
    err2 = np.einsum("mq,q,m->", (uh - ue) ** 2, w, vol)
    return float(np.sqrt(err2))
