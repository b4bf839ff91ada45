"""Discrete Dirichlet-to-Neumann operators, fractional boundary norms
and the Alessandrini pairing.

The H^{1/2} norm on the discrete boundary is realized spectrally: with
M_b the boundary mass matrix and S_b the boundary Laplace-Beltrami
stiffness, the pencil S_b y = lambda M_b y yields an M_b-orthonormal
basis Y, and the fractional Gram is G_s = M_b Y diag((1+lambda)^s) Y^T M_b.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from . import fem
from .errors import EigFailure, MeshMismatch

# Orientation of the discrete Alessandrini identity, frozen once against
# a dense-algebra oracle on a tiny mesh (see tests): with the weak
# normal derivative <Lambda phi, psi> = int grad u . grad w - w^2 q u w,
# the pairing <(Lambda_0 - Lambda_1) phi, psi> equals
# ALESSANDRINI_SIGN * w^2 * int (q0 - q1) u0 u1.
ALESSANDRINI_SIGN = -1.0

_CHUNK = 256


@dataclass
class DtnMatrix:
    """Dense DtN operator on the boundary dofs of a space."""

    matrix: np.ndarray
    bdofs: np.ndarray
    space: object
    omega: float

    def compatible(self, other):
        return (self.matrix.shape == other.matrix.shape
                and np.array_equal(self.bdofs, other.bdofs))


def assemble_dtn(space, qe, fs):
    """Schur complement of stiffness - omega^2 mass with respect to the
    interior dofs, acting on boundary trace coefficient vectors."""
    solver = fem.DirichletSolver(space, qe, fs.omega)
    return assemble_dtn_from_solver(solver)


def assemble_dtn_from_solver(solver):
    nb = len(solver.bdofs)
    mat = np.empty((nb, nb))
    eye = np.eye(nb)
    for lo in range(0, nb, _CHUNK):
        hi = min(lo + _CHUNK, nb)
        u = solver.solve(eye[:, lo:hi])
        mat[:, lo:hi] = (solver.K @ u)[solver.bdofs]
    asym = np.abs(mat - mat.T).max()
    scale = max(np.abs(mat).max(), 1e-300)
    if asym > 1e-9 * scale:
        raise MeshMismatch(f"DtN symmetry defect {asym / scale:.2e}")
    return DtnMatrix(matrix=mat, bdofs=solver.bdofs.copy(),
                     space=solver.space, omega=solver.omega)


def _surface_matrices(space):
    """Dense boundary mass and Laplace-Beltrami stiffness on the
    boundary triangulation, indexed by space.boundary_dofs()."""
    mesh = space.mesh
    bdofs = space.boundary_dofs()
    index = {d: i for i, d in enumerate(bdofs)}
    nb = len(bdofs)
    m_mat = np.zeros((nb, nb))
    s_mat = np.zeros((nb, nb))
    mass_hat = fem._MASS_TRI[space.order]
    stiff_hat = fem._STIFF_TRI[space.order]
    for elem, lface, tri in mesh.boundary_faces():
        a, b, c = mesh.nodes[list(tri)]
        e1, e2 = b - a, c - a
        gram = np.array([[e1 @ e1, e1 @ e2], [e1 @ e2, e2 @ e2]])
        area = 0.5 * np.sqrt(max(np.linalg.det(gram), 0.0))
        ginv = np.linalg.inv(gram)
        grads = np.empty((3, 3))
        g_s = ginv @ np.vstack([e1, e2])       # rows: grad s, grad t
        grads[1], grads[2] = g_s[0], g_s[1]
        grads[0] = -grads[1] - grads[2]
        gkl = grads @ grads.T
        dofs = [index[tri[0]], index[tri[1]], index[tri[2]]]
        if space.order == 2:
            for i, j in ((0, 1), (0, 2), (1, 2)):
                x, y = sorted((tri[i], tri[j]))
                dofs.append(index[space.edge_id[(x, y)]])
        loc_m = area * mass_hat
        loc_s = area * np.einsum("ijkl,kl->ij", stiff_hat, gkl)
        ix = np.asarray(dofs)
        m_mat[np.ix_(ix, ix)] += loc_m
        s_mat[np.ix_(ix, ix)] += loc_s
    return m_mat, s_mat, bdofs


@dataclass
class BoundaryGram:
    """Spectral realization of the fractional Sobolev norms on the
    boundary dofs."""

    M: np.ndarray
    S: np.ndarray
    lam: np.ndarray
    Y: np.ndarray       # M-orthonormal pencil eigenvectors, columns
    bdofs: np.ndarray

    def gram(self, s):
        d = (1.0 + self.lam) ** s
        my = self.M @ self.Y
        return my @ (d[:, None] * my.T)

    @property
    def G_half(self):
        return self.gram(0.5)

    @property
    def G_mhalf(self):
        return self.gram(-0.5)

    def norm(self, x, s=0.5):
        c = self.Y.T @ (self.M @ np.asarray(x))
        return float(np.sqrt(np.sum((1.0 + self.lam) ** s * np.abs(c) ** 2)))

    def whitener(self):
        """W with columns spanning the trace space such that
        ||W a||_{H^1/2} = |a|; W = Y diag((1+lam)^(-1/4))."""
        return self.Y * (1.0 + self.lam) ** (-0.25)


def boundary_gram(space):
    m_mat, s_mat, bdofs = _surface_matrices(space)
    try:
        lam, y = sla.eigh(s_mat, m_mat)
    except (sla.LinAlgError, ValueError) as exc:
        raise EigFailure(str(exc)) from exc
    if lam.min() < -1e-8 * max(abs(lam.max()), 1.0):
        raise EigFailure(f"boundary pencil indefinite: min eig {lam.min():.2e}")
    lam = np.clip(lam, 0.0, None)
    return BoundaryGram(M=m_mat, S=s_mat, lam=lam, Y=y, bdofs=bdofs)


@dataclass
class StarNorm:
    value: float
    phi: np.ndarray
    psi: np.ndarray


def star_norm(t_mat, gram):
    """Operator norm of a boundary operator between the discrete H^{1/2}
    space and its dual; returns the maximizing trace pair as well."""
    mat = t_mat.matrix if isinstance(t_mat, DtnMatrix) else np.asarray(t_mat)
    if mat.shape[0] != len(gram.lam):
        raise MeshMismatch("operator and Gram live on different boundary dofs")
    w = gram.whitener()
    core = w.T @ mat @ w
    u, sig, vt = np.linalg.svd(core)
    return StarNorm(value=float(sig[0]), phi=w @ vt[0], psi=w @ u[:, 0])


def alessandrini(dtn0, dtn1, u0, u1, f0, f1, fs):
    """Both sides of the discrete Alessandrini identity.

    lhs integrates w^2 (q0 - q1) u0 u1 exactly through the mass
    matrices; rhs pairs the DtN difference with the boundary traces of
    u0 and u1, oriented by ALESSANDRINI_SIGN.  Returns (lhs, rhs,
    relative residual).
    """
    if not dtn0.compatible(dtn1):
        raise MeshMismatch("DtN operators on different boundary discretizations")
    if u0.space is not u1.space or u0.space is not dtn0.space:
        if u0.space.mesh.n_nodes != u1.space.mesh.n_nodes:
            raise MeshMismatch("solutions on different meshes")
    qe0 = u0.qe
    qe1 = u1.qe
    space = u0.space
    m_diff = fem.mass_matrix(space, qe0 - qe1)
    lhs = fs.omega ** 2 * np.dot(u0.values, m_diff @ u1.values)
    phi = u0.boundary_values()
    psi = u1.boundary_values()
    rhs = ALESSANDRINI_SIGN * (psi @ ((dtn0.matrix - dtn1.matrix) @ phi))
    scale = max(abs(lhs), abs(rhs), 1e-300)
    return float(lhs), float(rhs), float(abs(lhs - rhs) / scale)


@dataclass
class AugmentedComparison:
    norm_plain: float
    norm_tilde: float
    ratio: float


def augmented_comparison(f0, f1, fs, levels=2, order=1, layers=None):
    """Empirical ratio between the DtN difference norms measured on the
    augmented ball boundary and on the partition boundary."""
    from .meshing import AugmentedDomain, build_mesh

    q0t = max(f0.vs.Q0, f1.vs.Q0)
    norms = []
    for augmented in (False, True):
        aug = AugmentedDomain(R=fs.R, q0_tilde=q0t, layers=layers) if augmented else None
        mesh = build_mesh(f0.partition, levels=levels, augmented=aug)
        space = fem.FemSpace(mesh, order)
        gram = boundary_gram(space)
        mats = []
        for f in (f0, f1):
            qe = fem.element_potentials(mesh, f, q0_tilde=q0t if augmented else None)
            mats.append(assemble_dtn(space, qe, fs).matrix)
        norms.append(star_norm(mats[1] - mats[0], gram).value)
    plain, tilde = norms
    ratio = tilde / plain if plain > 0 else float("nan")
    return AugmentedComparison(norm_plain=plain, norm_tilde=tilde, ratio=ratio)
