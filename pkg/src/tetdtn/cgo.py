"""Complex geometrical optics probe vectors, their boundary traces, and
Fourier-side estimation of potential differences through the
Alessandrini pairing.

The probe vectors come in pairs zeta_0, zeta_1 with zeta_0 + zeta_1 =
xi, zeta_k . zeta_k = 0 (bilinear dot) and |zeta_k| = max(mu,
|xi|/sqrt(2)); these three identities are the normative contract and
are enforced to 1e-12.  Fourier transforms of tetrahedron indicators
and of facet-supported affine densities are evaluated in closed form as
divided differences of the exponential over the vertex phases, with a
matrix-exponential (series) fallback near the removable singularities
where vertex phases collide.
"""

from dataclasses import dataclass

import numpy as np

from . import fem, geometry
from .dtn import ALESSANDRINI_SIGN
from .errors import GridTooCoarse

# below this pairwise vertex-phase gap the vertex-sum formula loses
# accuracy and the series (matrix exponential) evaluator takes over
PHASE_GAP_TOL = 5e-2


# ---------------------------------------------------------------------------
# probe vectors

@dataclass(frozen=True)
class CgoSpec:
    xi: np.ndarray
    mu: float
    eta1: np.ndarray
    eta2: np.ndarray
    zeta0: np.ndarray
    zeta1: np.ndarray


def _orthonormal_pair(xi):
    """Unit vectors eta1, eta2 with {xi, eta1, eta2} orthogonal."""
    n = np.linalg.norm(xi)
    if n == 0.0:
        return np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0])
    u = xi / n
    k = int(np.argmin(np.abs(u)))
    e = np.zeros(3)
    e[k] = 1.0
    eta1 = np.cross(u, e)
    eta1 /= np.linalg.norm(eta1)
    eta2 = np.cross(u, eta1)
    eta2 /= np.linalg.norm(eta2)
    return eta1, eta2


def build_zeta(xi, mu, eta=None):
    """Probe pair for spatial frequency xi and size parameter mu > 0.

    Both branch formulas share the structure zeta_k = xi/2 +- w with a
    null correction w built from eta1, eta2; the branch switches at
    |xi| = sqrt(2) mu.  Signs are arranged so that the three contract
    identities hold exactly.
    """
    xi = np.asarray(xi, dtype=float)
    if mu <= 0.0:
        raise ValueError("mu must be positive")
    eta1, eta2 = eta if eta is not None else _orthonormal_pair(xi)
    r = np.linalg.norm(xi) / (mu * np.sqrt(2.0))
    scale = mu / np.sqrt(2.0)
    if r < 1.0:
        w = scale * (np.sqrt(1.0 - r * r) * eta1 + 1j * eta2)
    else:
        w = 1j * scale * (np.sqrt(r * r - 1.0) * eta1 + eta2)
    zeta1 = xi / 2.0 + w
    zeta0 = xi / 2.0 - w
    return CgoSpec(xi=xi, mu=float(mu), eta1=eta1, eta2=eta2,
                   zeta0=zeta0, zeta1=zeta1)


def spec_residuals(spec):
    """The three contract identities as residual magnitudes."""
    target = max(spec.mu, np.linalg.norm(spec.xi) / np.sqrt(2.0))
    out = []
    out.append(np.abs(spec.zeta0 + spec.zeta1 - spec.xi).max())
    for z in (spec.zeta0, spec.zeta1):
        out.append(abs(np.dot(z, z)))                       # bilinear, no conjugation
        out.append(abs(np.linalg.norm(z) - target))         # Hermitian norm
    return np.array(out)


def cgo_trace(spec, k, points):
    """Nodal values of exp(i x . zeta_k) at the given coordinates."""
    zeta = spec.zeta0 if k == 0 else spec.zeta1
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    return np.exp(1j * (pts @ zeta))


def trace_growth_bound(spec, R):
    """Pointwise bound exp(2 R (mu + |xi|)) for the trace modulus."""
    return float(np.exp(2.0 * R * (spec.mu + np.linalg.norm(spec.xi))))


# ---------------------------------------------------------------------------
# divided differences of the exponential

def _expm_batch4(a):
    """exp of a batch of 4x4 complex matrices by scaling and squaring
    with an order-18 Taylor kernel."""
    a = np.asarray(a, dtype=complex)
    norm = np.abs(a).sum(axis=-1).max(axis=-1)   # max row sum per matrix
    s = int(max(0, np.ceil(np.log2(max(norm.max(initial=0.0), 1e-300) / 0.5))))
    b = a / (2.0 ** s)
    out = np.zeros_like(b)
    out[...] = np.eye(4)
    term = np.zeros_like(b)
    term[...] = np.eye(4)
    for k in range(1, 19):
        term = term @ b / k
        out += term
    for _ in range(s):
        out = out @ out
    return out


def dd_exp_i(nodes):
    """Third divided difference of t -> exp(i t) over 4 (possibly
    coincident) real nodes; batched input (..., 4)."""
    nodes = np.atleast_2d(np.asarray(nodes, dtype=float))
    shift = nodes.mean(axis=-1, keepdims=True)
    j = np.zeros(nodes.shape[:-1] + (4, 4), dtype=complex)
    idx = np.arange(4)
    j[..., idx, idx] = 1j * (nodes - shift)
    j[..., idx[:-1], idx[:-1] + 1] = 1j
    e = _expm_batch4(j)
    return np.exp(1j * shift[..., 0]) * e[..., 0, 3]


def tetra_ft(verts, xi):
    """Fourier transform of the indicator of a tetrahedron, vectorized
    over frequencies xi (n, 3); convention f^(xi) = int f exp(i x.xi)."""
    verts = geometry._as_verts(verts)
    vol = geometry.volume(verts)
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    a = xi @ verts.T                       # (n, 4) vertex phases
    gaps = np.stack([np.abs(a[:, i] - a[:, j])
                     for i, j in ((0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3))],
                    axis=1)
    safe = gaps.min(axis=1) >= PHASE_GAP_TOL
    out = np.empty(len(xi), dtype=complex)
    if np.any(safe):
        asafe = a[safe]
        acc = np.zeros(safe.sum(), dtype=complex)
        for jv in range(4):
            denom = np.ones(safe.sum())
            for kv in range(4):
                if kv != jv:
                    denom = denom * (asafe[:, jv] - asafe[:, kv])
            acc += np.exp(1j * asafe[:, jv]) / denom
        out[safe] = acc
    if np.any(~safe):
        out[~safe] = dd_exp_i(a[~safe])
    return 6.0 * vol * 1j * out


def triangle_ft_affine(verts, fvals, xi):
    """Fourier transform of an affine density on a triangle in R^3,
    vectorized over xi (n, 3); density given by vertex values."""
    verts = np.asarray(verts, dtype=float)
    fvals = np.asarray(fvals, dtype=float)
    area = 0.5 * np.linalg.norm(np.cross(verts[1] - verts[0], verts[2] - verts[0]))
    xi = np.atleast_2d(np.asarray(xi, dtype=float))
    a = xi @ verts.T                       # (n, 3)
    out = np.zeros(len(xi), dtype=complex)
    for jv in range(3):
        nodes = np.concatenate([a, a[:, jv:jv + 1]], axis=1)
        out += fvals[jv] * 1j * dd_exp_i(nodes)
    return 2.0 * area * out


def exact_qdiff_ft(f0, f1, xi):
    """Exact Fourier transform of q0 - q1 (piecewise constant)."""
    xi = np.asarray(xi, dtype=float)
    single = xi.ndim == 1
    grid = np.atleast_2d(xi)
    out = np.zeros(len(grid), dtype=complex)
    for f, sign in ((f0, 1.0), (f1, -1.0)):
        values = f.tet_values()
        for j in range(f.partition.n_tets):
            out += sign * values[j] * tetra_ft(f.partition.vertices[f.partition.tets[j]], grid)
    return out[0] if single else out


# ---------------------------------------------------------------------------
# Alessandrini estimate of the Fourier transform

@dataclass
class FourierSample:
    xi: np.ndarray
    mu: float
    estimate: complex
    oracle: complex

    @property
    def deviation(self):
        return abs(self.estimate - self.oracle)


class FourierEstimator:
    """Shared factorizations for sweeping Fourier estimates over many
    probe specs on a fixed field pair."""

    def __init__(self, f0, f1, fs, mesh, order=1):
        self.f0, self.f1, self.fs = f0, f1, fs
        self.space = fem.FemSpace(mesh, order)
        qe0 = fem.element_potentials(mesh, f0)
        qe1 = fem.element_potentials(mesh, f1)
        self.s0 = fem.DirichletSolver(self.space, qe0, fs.omega)
        self.s1 = fem.DirichletSolver(self.space, qe1, fs.omega)
        self.bcoords = self.space.dof_coords()[self.space.boundary_dofs()]

    def estimate(self, spec):
        phi = cgo_trace(spec, 0, self.bcoords)
        psi = cgo_trace(spec, 1, self.bcoords)
        u0 = self.s0.solve(phi)
        u1 = self.s1.solve(psi)
        pairing = psi @ self.s0.neumann(u0) - phi @ self.s1.neumann(u1)
        est = ALESSANDRINI_SIGN * pairing / self.fs.omega ** 2
        oracle = exact_qdiff_ft(self.f0, self.f1, spec.xi)
        return FourierSample(xi=spec.xi.copy(), mu=spec.mu,
                             estimate=complex(est), oracle=complex(oracle))


def fourier_estimate(f0, f1, fs, mesh, spec, order=1):
    return FourierEstimator(f0, f1, fs, mesh, order).estimate(spec)


# ---------------------------------------------------------------------------
# frequency splitting

def ball_grid(rho, spacing):
    """Regular cubic grid covering the closed ball |xi| <= rho."""
    n = int(np.floor(rho / spacing))
    axis = spacing * np.arange(-n, n + 1)
    gx, gy, gz = np.meshgrid(axis, axis, axis, indexing="ij")
    pts = np.column_stack([gx.ravel(), gy.ravel(), gz.ravel()])
    return pts[np.linalg.norm(pts, axis=1) <= rho]


@dataclass
class FrequencySplit:
    low: float
    high_bound: float
    low_oracle: float


def frequency_split_norm(samples, rho, exact_l2):
    """Low-frequency energy of the estimated transform and the exact
    Plancherel tail bound above rho.

    samples must form a regular grid; the quadrature is the cell sum
    over grid points inside the ball, scaled by (2 pi)^-3.
    """
    xis = np.array([s.xi for s in samples])
    est = np.array([s.estimate for s in samples])
    orc = np.array([s.oracle for s in samples])
    ux = np.unique(np.round(xis[:, 0], 12))
    if len(ux) < 2:
        raise GridTooCoarse("grid has fewer than two planes per axis")
    spacing = float(np.diff(ux).min())
    if spacing > rho / 8.0:
        raise GridTooCoarse(f"spacing {spacing} exceeds rho/8 = {rho / 8.0}")
    inside = np.linalg.norm(xis, axis=1) <= rho
    cell = spacing ** 3 / (2.0 * np.pi) ** 3
    low = float(np.sum(np.abs(est[inside]) ** 2) * cell)
    low_oracle = float(np.sum(np.abs(orc[inside]) ** 2) * cell)
    high_bound = max(exact_l2 ** 2 - low_oracle, 0.0)
    return FrequencySplit(low=low, high_bound=high_bound, low_oracle=low_oracle)
