"""Landweber-style recovery of partition vertex positions from DtN
data: probe-restricted whitened misfit, its shape gradient through the
facet form, and a backtracking descent loop with regularity safeguards.

Labels are fixed inputs; only vertex positions move, tangentially on
the domain boundary."""

from dataclasses import dataclass, field

import numpy as np

from . import fem, geometry
from .dtn import boundary_gram
from .errors import MeshMismatch, Stalled
from .meshing import build_mesh, displace_mesh, AugmentedDomain
from .partition import Deformation, deform
from .shape import DERIVATIVE_SIGN, FacetAssembler

ARMIJO_C = 1e-4
BACKTRACK_SHRINK = 0.5
MAX_BACKTRACKS = 30


@dataclass
class ReconstructionConfig:
    step_size: float = 1.0   # fraction of the Cauchy-like step m / |g|^2
    max_iters: int = 40
    floor: float | None = None          # insphere floor; default 0.5 r1
    probe_budget: int = 25
    tol: float = 1e-14                  # absolute misfit tolerance
    seed: int = 0
    levels: int = 2
    order: int = 2
    layers: int | None = None
    remesh_every: int | None = None     # needs a truth field to re-baseline


@dataclass
class IterateRow:
    iteration: int
    misfit: float
    star_norm: float
    d_T: float
    min_insphere: float
    step: float
    accepted: bool


@dataclass
class IterateLog:
    rows: list = field(default_factory=list)

    def accepted_misfits(self):
        return [r.misfit for r in self.rows if r.accepted]


class MisfitEvaluator:
    """Probe-restricted whitened Frobenius misfit of the DtN mismatch,
    with its per-vertex shape gradient."""

    def __init__(self, f, fs, mesh, target_dtn, budget=25, q0_tilde=None,
                 order=2):
        self.f = f
        self.fs = fs
        self.mesh0 = mesh
        self.q0_tilde = f.vs.Q0 if q0_tilde is None else q0_tilde
        self.space = fem.FemSpace(mesh, order)
        self.order = order
        gram = boundary_gram(self.space)
        if len(gram.bdofs) != len(target_dtn.bdofs) or \
                not np.array_equal(gram.bdofs, target_dtn.bdofs):
            raise MeshMismatch("target DtN lives on different boundary dofs")
        budget = min(budget, len(gram.lam))
        self.probes = gram.Y[:, :budget]
        self.whiten = (1.0 + gram.lam[:budget]) ** (-0.25)
        self.target = self.probes.T @ target_dtn.matrix @ self.probes
        self.projectors = f.partition.tangent_projectors()

    def _state(self, disp):
        d = Deformation(disp, boundary_preserving=True)
        mesh_t = displace_mesh(self.mesh0, self.f.partition, d, 1.0)
        space = fem.FemSpace(mesh_t, self.order)
        qe = fem.element_potentials(mesh_t, self.f, q0_tilde=self.q0_tilde)
        solver = fem.DirichletSolver(space, qe, self.fs.omega)
        u = solver.solve(self.probes)
        a_trial = self.probes.T @ (solver.K @ u)[solver.bdofs]
        core = self.whiten[:, None] * (a_trial - self.target) * self.whiten[None, :]
        return mesh_t, space, u, core

    def misfit(self, disp):
        _, _, _, core = self._state(disp)
        return 0.5 * float(np.sum(core * core))

    def misfit_and_norm(self, disp):
        _, _, _, core = self._state(disp)
        return 0.5 * float(np.sum(core * core)), \
            float(np.linalg.svd(core, compute_uv=False)[0])

    def gradient(self, disp, constrain=True):
        """Per-vertex misfit gradient via the facet form: one solve per
        probe trace, then quadrature-point accumulation."""
        p = self.f.partition
        mesh_t, space, u, core = self._state(disp)
        b = self.whiten[:, None] * core * self.whiten[None, :]
        asm = FacetAssembler(mesh_t, space)
        uu = asm.facet_values(u)                      # (ne, nq, budget)
        s_q = np.einsum("eqr,rs,eqs->eq", uu, b, uu)
        q_values = self.f.tet_values()
        coeff = asm.coefficients(q_values, "offset", self.q0_tilde)
        w = coeff[:, None] * asm.weights * s_q        # (ne, nq)
        verts_t = p.vertices + disp
        grad = np.zeros((p.n_vertices, 3))
        for row in range(len(asm.owner_plus)):
            j = int(asm.owner_plus[row])
            tet = geometry.Tetrahedron(verts_t[p.tets[j]])
            lam = geometry.barycentric(tet, asm.points[row])   # (nq, 4)
            contrib = np.einsum("q,qk,x->kx", w[row], lam, asm.normals[row])
            grad[p.tets[j]] += contrib
        grad *= DERIVATIVE_SIGN * self.fs.omega ** 2
        if constrain:
            for i, proj in enumerate(self.projectors):
                grad[i] = proj @ grad[i]
        return grad


def misfit(trial, target_dtn, gram, fs, mesh, budget=25, order=2):
    """One-shot misfit of a trial field against a target DtN operator
    assembled on a compatible mesh."""
    ev = MisfitEvaluator(trial, fs, mesh, target_dtn, budget=budget, order=order)
    return ev.misfit(np.zeros((trial.partition.n_vertices, 3)))


def misfit_gradient(trial, target_dtn, gram, fs, mesh, budget=25,
                    constrain=True, order=2):
    ev = MisfitEvaluator(trial, fs, mesh, target_dtn, budget=budget, order=order)
    return ev.gradient(np.zeros((trial.partition.n_vertices, 3)),
                       constrain=constrain)


def landweber_run(initial, target_dtn, cfg, fs, mesh=None, truth=None):
    """Descent on vertex positions with Armijo backtracking and an
    insphere floor; returns (final field, IterateLog).

    truth, when given, is the ground-truth field used for the d_T
    column and for re-baselining after optional remeshes.
    """
    p = initial.partition
    floor = cfg.floor if cfg.floor is not None else 0.5 * p.r1
    if mesh is None:
        aug = AugmentedDomain(R=fs.R, q0_tilde=initial.vs.Q0, layers=cfg.layers)
        mesh = build_mesh(p, levels=cfg.levels, augmented=aug)
    ev = MisfitEvaluator(initial, fs, mesh, target_dtn,
                         budget=cfg.probe_budget, order=cfg.order)
    disp = np.zeros((p.n_vertices, 3))
    log = IterateLog()

    def d_t_to_truth(dd):
        if truth is None:
            return float("nan")
        p_t = deform(p, Deformation(dd), 1.0, floor=0.0)
        return sum(geometry.hausdorff(p_t.tetrahedron(j),
                                      truth.partition.tetrahedron(j))
                   for j in range(p.n_tets))

    def min_insphere(dd):
        p_t = deform(p, Deformation(dd), 1.0, floor=0.0)
        return float(p_t.insphere_radii().min())

    m, sn = ev.misfit_and_norm(disp)
    log.rows.append(IterateRow(0, m, sn, d_t_to_truth(disp),
                               min_insphere(disp), 0.0, True))
    if m <= cfg.tol:
        return _final_field(initial, disp), log

    for it in range(1, cfg.max_iters + 1):
        g = ev.gradient(disp)
        gnorm2 = float(np.sum(g * g))
        if gnorm2 == 0.0:
            break
        # scale-free initial step: cfg.step_size of one Cauchy-like step
        step = cfg.step_size * m / gnorm2
        accepted = False
        for _ in range(MAX_BACKTRACKS):
            cand = disp - step * g
            try:
                deform(p, Deformation(cand), 1.0, floor=floor)
                m_new, sn_new = ev.misfit_and_norm(cand)
            except Exception:
                log.rows.append(IterateRow(it, m, sn, d_t_to_truth(disp),
                                           min_insphere(disp), step, False))
                step *= BACKTRACK_SHRINK
                continue
            if m_new <= m - ARMIJO_C * step * gnorm2:
                disp, m, sn = cand, m_new, sn_new
                accepted = True
                log.rows.append(IterateRow(it, m, sn, d_t_to_truth(disp),
                                           min_insphere(disp), step, True))
                break
            log.rows.append(IterateRow(it, m_new, sn_new, d_t_to_truth(cand),
                                       min_insphere(disp), step, False))
            step *= BACKTRACK_SHRINK
        if not accepted:
            exc = Stalled(f"backtracking failed {MAX_BACKTRACKS} times at "
                          f"iteration {it}")
            exc.log = log
            raise exc
        if m <= cfg.tol:
            break
        if cfg.remesh_every and truth is not None and it % cfg.remesh_every == 0:
            p_cur = deform(p, Deformation(disp), 1.0, floor=0.0)
            # re-baseline on a fresh mesh of the current partition
            from .dtn import assemble_dtn
            aug = AugmentedDomain(R=fs.R, q0_tilde=initial.vs.Q0,
                                  layers=cfg.layers)
            mesh = build_mesh(p_cur, levels=cfg.levels, augmented=aug)
            space = fem.FemSpace(mesh, cfg.order)
            qe_truth = _truth_on_mesh(mesh, truth, initial.vs.Q0, p_cur)
            target = assemble_dtn(space, qe_truth, fs)
            cur_field = _final_field(initial, disp)
            ev = MisfitEvaluator(cur_field, fs, mesh, target,
                                 budget=cfg.probe_budget, order=cfg.order)
            p = p_cur
            disp = np.zeros((p.n_vertices, 3))
            m, sn = ev.misfit_and_norm(disp)
    return _final_field(initial, disp), log


def _final_field(initial, disp):
    from .partition import Partition, PiecewiseField
    p = initial.partition
    p_new = Partition(p.vertices + disp, p.tets.copy(), p.r1, p.N0)
    return PiecewiseField(p_new, initial.labels.copy(), initial.vs)


def _truth_on_mesh(mesh, truth, q0_tilde, p_cur):
    """Element potentials of the truth field sampled at element
    centroids of a mesh built over another partition."""
    qe = np.full(mesh.n_elems, q0_tilde)
    centroids = mesh.nodes[mesh.elems].mean(axis=1)
    values = truth.tet_values()
    for j in range(truth.partition.n_tets):
        inside = geometry.contains(truth.partition.tetrahedron(j), centroids)
        qe[inside & (mesh.owner >= 0)] = values[j]
    return qe
