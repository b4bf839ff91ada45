"""Deterministic command-line harness: JSON configs in, CSV/JSON out.

Subcommands: validate, sweep, derivative, match, fourier, reconstruct.
Exit codes: 0 success, 1 domain violation (invalid partition / unmatched
/ failed run), 2 usage error (bad arguments, missing files).
Identical config and seed produce byte-identical outputs.
"""

import argparse
import hashlib
import json
import os
import sys
import numpy as np

from . import __version__, fem
from .cgo import FourierEstimator, build_zeta
from .dtn import assemble_dtn, boundary_gram
from .errors import TetDtnError
from .meshing import AugmentedDomain, build_mesh, displace_mesh
from .partition import Deformation, load_field, validate
from .reconstruction import ReconstructionConfig, landweber_run
from .shape import finite_difference_R, gateaux_derivative
from .stability import lipschitz_sweep, match_partitions, measured_c1


class UsageError(Exception):
    pass


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def write_csv(path, meta, columns, rows):
    with open(path, "w") as fh:
        for k in sorted(meta):
            fh.write(f"# {k}={meta[k]}\n")
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def config_hash(cfg):
    canon = json.dumps(cfg, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:12]


def _load_config(path):
    if not os.path.exists(path):
        raise UsageError(f"config file not found: {path}")
    with open(path) as fh:
        return json.load(fh)


def _load_field_checked(cfg, key):
    path = cfg.get(key)
    if path is None:
        raise UsageError(f"config key '{key}' is required")
    if not os.path.exists(path):
        raise UsageError(f"{key} file not found: {path}")
    return load_field(path)


def _freq(cfg):
    return fem.FrequencySpec(omega=cfg["omega"], omega0=cfg.get("omega0", cfg["omega"] / 2),
                             omega1=cfg.get("omega1", cfg["omega"]), R=cfg["R"])


def _meta(cfg, seed):
    return {"config_sha256": config_hash(cfg), "seed": seed,
            "tetdtn_version": __version__}


def _traces(space, cfg):
    kind = cfg.get("traces", "smooth")
    bc = space.dof_coords()[space.boundary_dofs()]
    if kind == "smooth":
        return bc[:, 0] + 0.5, bc[:, 1] * bc[:, 2] + 0.3
    if isinstance(kind, dict) and "probe" in kind:
        g = boundary_gram(space)
        i, j = kind["probe"]
        return g.Y[:, i], g.Y[:, j]
    raise UsageError(f"unknown trace spec {kind!r}")


def cmd_validate(cfg, out_dir, seed):
    f, _ = _load_field_checked(cfg, "field")
    report = validate(f.partition, f, f.vs)
    c1 = measured_c1(f.partition, seed=seed)
    payload = {
        "admissible": report.ok,
        "violations": [{"rule": v.rule, "indices": list(v.indices),
                        "detail": v.detail} for v in report.violations],
        "measured_small_ball_constant": c1,
        "n_tets": f.partition.n_tets,
        "config_sha256": config_hash(cfg),
        "seed": seed,
    }
    path = os.path.join(out_dir, "validate.json")
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
    print(("admissible" if report.ok else
           "inadmissible: " + ",".join(report.rules())))
    print(f"report written to {path}")
    return 0 if report.ok else 1


def cmd_sweep(cfg, out_dir, seed, threads=1):
    f, d = _load_field_checked(cfg, "field")
    if d is None:
        raise UsageError("field file must carry displacements for a sweep")
    fs = _freq(cfg)
    aug = AugmentedDomain(R=fs.R, q0_tilde=f.vs.Q0, layers=cfg.get("layers"))
    mesh = build_mesh(f.partition, levels=cfg.get("levels", 2), augmented=aug)
    rows = lipschitz_sweep(f, d, fs, cfg["t_grid"], mesh,
                           order=cfg.get("order", 1), seed=seed,
                           threads=threads)
    write_csv(os.path.join(out_dir, "sweep.csv"), _meta(cfg, seed),
              ["t", "d_T", "dtn_norm", "ratio", "mesh_h", "n_dofs", "seed"],
              [(r.t, r.d_T, r.dtn_norm, r.ratio, r.mesh_h, r.n_dofs, r.seed)
               for r in rows])
    return 0


def cmd_derivative(cfg, out_dir, seed):
    f, d = _load_field_checked(cfg, "field")
    if d is None:
        raise UsageError("field file must carry displacements")
    fs = _freq(cfg)
    aug = AugmentedDomain(R=fs.R, q0_tilde=f.vs.Q0, layers=cfg.get("layers"))
    mesh = build_mesh(f.partition, levels=cfg.get("levels", 2), augmented=aug)
    order = cfg.get("order", 2)
    space = fem.FemSpace(mesh, order)
    phi, psi = _traces(space, cfg)
    t0 = cfg.get("t0", 0.0)
    res = gateaux_derivative(f, d, t0, phi, psi, fs, mesh, order=order)
    rows = []
    for h in cfg.get("h_values", [1e-2, 1e-3]):
        r = finite_difference_R(f, d, t0, h, phi, psi, fs, mesh, order=order)
        rows.append((t0, h, res.value, r, abs(r - res.value)))
    write_csv(os.path.join(out_dir, "derivative.csv"), _meta(cfg, seed),
              ["t0", "h", "derivative", "fd_value", "abs_error"], rows)
    return 0


def cmd_match(cfg, out_dir, seed):
    f0, _ = _load_field_checked(cfg, "field0")
    f1, _ = _load_field_checked(cfg, "field1")
    res = match_partitions(f0, f1, f0.vs, seed=seed)
    payload = {
        "matched": res.matched,
        "permutation": None if not res.matched else [int(k) for k in res.permutation],
        "unmatched_reason": res.unmatched_reason,
        "eps": res.eps, "eps_threshold": res.eps_threshold,
        "delta": None if res.delta != res.delta else res.delta,
        "measured_small_ball_constant": res.c1,
        "config_sha256": config_hash(cfg), "seed": seed,
    }
    with open(os.path.join(out_dir, "match.json"), "w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
    rows = []
    if res.matched:
        for j, k in enumerate(res.permutation):
            rows.append((j, int(k), res.pair_hausdorff[j]))
    write_csv(os.path.join(out_dir, "match.csv"), _meta(cfg, seed),
              ["j", "k", "hausdorff"], rows)
    return 0 if res.matched else 1


def cmd_fourier(cfg, out_dir, seed):
    f0, _ = _load_field_checked(cfg, "field0")
    f1, _ = _load_field_checked(cfg, "field1")
    fs = _freq(cfg)
    mesh = build_mesh(f0.partition, levels=cfg.get("levels", 2))
    est = FourierEstimator(f0, f1, fs, mesh, order=cfg.get("order", 2))
    rows = []
    for xi in cfg["xi_list"]:
        for mu in cfg["mu_values"]:
            s = est.estimate(build_zeta(np.array(xi, dtype=float), mu))
            rows.append((xi[0], xi[1], xi[2], mu,
                         s.estimate.real, s.estimate.imag,
                         s.oracle.real, s.oracle.imag, s.deviation))
    write_csv(os.path.join(out_dir, "fourier.csv"), _meta(cfg, seed),
              ["xi_x", "xi_y", "xi_z", "mu", "re_est", "im_est",
               "re_oracle", "im_oracle", "deviation"], rows)
    return 0


def cmd_reconstruct(cfg, out_dir, seed):
    f, _ = _load_field_checked(cfg, "field")
    truth, _ = _load_field_checked(cfg, "truth")
    if not np.array_equal(truth.partition.tets, f.partition.tets):
        raise UsageError("truth and initial fields must share connectivity")
    fs = _freq(cfg)
    rcfg = ReconstructionConfig(
        step_size=cfg.get("step_size", 1.0),
        max_iters=cfg.get("max_iters", 40),
        probe_budget=cfg.get("probe_budget", 25),
        tol=cfg.get("tol", 1e-16),
        seed=seed,
        levels=cfg.get("levels", 2),
        order=cfg.get("order", 2),
        layers=cfg.get("layers"),
    )
    aug = AugmentedDomain(R=fs.R, q0_tilde=f.vs.Q0, layers=rcfg.layers)
    mesh = build_mesh(f.partition, levels=rcfg.levels, augmented=aug)
    d_true = Deformation(truth.partition.vertices - f.partition.vertices)
    mesh_true = displace_mesh(mesh, f.partition, d_true, 1.0)
    space_t = fem.FemSpace(mesh_true, rcfg.order)
    qe_t = fem.element_potentials(mesh_true, truth, q0_tilde=truth.vs.Q0)
    target = assemble_dtn(space_t, qe_t, fs)
    final, log = landweber_run(f, target, rcfg, fs, mesh=mesh, truth=truth)
    write_csv(os.path.join(out_dir, "iterates.csv"), _meta(cfg, seed),
              ["iter", "misfit", "star_norm", "d_T", "min_insphere", "step",
               "accepted"],
              [(r.iteration, r.misfit, r.star_norm, r.d_T, r.min_insphere,
                r.step, int(r.accepted)) for r in log.rows])
    accepted = log.accepted_misfits()
    ok = accepted[-1] <= 0.5 * accepted[0] or accepted[-1] <= rcfg.tol
    return 0 if ok else 1


COMMANDS = {
    "validate": cmd_validate,
    "sweep": cmd_sweep,
    "derivative": cmd_derivative,
    "match": cmd_match,
    "fourier": cmd_fourier,
    "reconstruct": cmd_reconstruct,
}


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="tetdtn",
        description="Numerical experiments for recovering tetrahedral "
                    "interfaces from Dirichlet-to-Neumann boundary data.")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="JSON config path")
    parser.add_argument("--out", default=".", help="output directory")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the config seed")
    parser.add_argument("--threads", type=int, default=1,
                        help="worker threads for sweep parallelism")
    args = parser.parse_args(argv)
    try:
        cfg = _load_config(args.config)
        if args.threads < 1:
            raise UsageError("--threads must be positive")
        os.makedirs(args.out, exist_ok=True)
        seed = args.seed if args.seed is not None else cfg.get("seed", 0)
        if args.command == "sweep":
            return cmd_sweep(cfg, args.out, seed, threads=args.threads)
        return COMMANDS[args.command](cfg, args.out, seed)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (KeyError,) as exc:
        print(f"usage error: missing config key {exc}", file=sys.stderr)
        return 2
    except TetDtnError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
