"""Command-line entry point: ``earm solve|adapt|recover|mesh-info``.

Exit status: 0 on success, 2 for usage and input errors, 1 for numerical
failures, 3 when ``recover`` detects a conservation or conformity violation.
"""
from __future__ import annotations

import argparse
import logging
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import estimator as est
from . import flux as fx
from .amr import CSV_HEADER, adapt_loop, resolve_problem
from .config import ConfigError, RunConfig, load_config, merge
from .mesh import MeshError, read_mesh, refine_uniform, write_mesh
from .problems import facet_weights, quasi_monotone_vertices
from .solvers import DgParameters, SolverError, solve_problem
from .spaces import LagrangeSpace

log = logging.getLogger("earm")

EXIT_OK, EXIT_FAIL, EXIT_USAGE, EXIT_VIOLATION = 0, 1, 2, 3
CONSERVATION_TOL = 1e-9
CONFORMITY_TOL = 1e-10


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------


def _theta(text: str) -> float:
    v = float(text)
    if not 0 < v < 1:
        raise argparse.ArgumentTypeError(f"theta must lie in (0, 1), got {text}")
    return v


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", metavar="FILE", help="flat key = value file; flags override it")
    p.add_argument("--problem", help="kellogg, lshape, manufactured:<d> or checkerboard:<R>")
    p.add_argument("--degree", type=int, help="polynomial degree k (1, 2 or 3)")
    p.add_argument("--discretization", choices=("cg", "dg"))
    p.add_argument("--dg-gamma", type=float, help="DG penalty parameter (default 10 k^2)")
    p.add_argument("--dg-delta", type=int, choices=(-1, 0, 1), help="DG symmetry parameter")
    p.add_argument("--uniform-refines", type=int, metavar="N", help="uniform refinements of the initial mesh")
    p.add_argument("--out", metavar="DIR", help="output directory")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="earm", description="Equilibrated flux recovery and adaptive FEM in 2D.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve on a fixed mesh and export the solution")
    _common(p)
    p.add_argument("--mesh", metavar="FILE", help="mesh file instead of the problem's initial mesh")

    p = sub.add_parser("adapt", help="run the adaptive loop")
    _common(p)
    p.add_argument("--recovery-degree", type=int, help="recovery degree s (default k-1)")
    p.add_argument("--theta", type=_theta, help="Doerfler bulk parameter in (0, 1)")
    p.add_argument("--tol", type=float, help="relative energy error target")
    p.add_argument("--max-cells", type=int)
    p.add_argument("--max-iters", type=int)
    p.add_argument("--no-timing", action="store_true", help="leave wall_time_s empty (bit-identical CSV)")

    p = sub.add_parser("recover", help="recover the equilibrated flux of a stored solution")
    _common(p)
    p.add_argument("--solution", required=True, metavar="FILE", help="solution file written by 'solve'")
    p.add_argument("--mesh", metavar="FILE", help="mesh file (default: mesh.txt next to the solution)")
    p.add_argument("--recovery-degree", type=int, help="recovery degree s")

    p = sub.add_parser("mesh-info", help="print mesh statistics")
    _common(p)
    p.add_argument("--mesh", metavar="FILE", help="mesh file instead of the problem's initial mesh")
    return ap


def _run_config(args) -> RunConfig:
    file_vals = load_config(args.config) if args.config else {}
    flags = dict(problem=args.problem, degree=args.degree, discretization=args.discretization,
                 dg_gamma=args.dg_gamma, dg_delta=args.dg_delta, uniform_refines=args.uniform_refines,
                 out=args.out)
    for name in ("recovery_degree", "theta", "tol", "max_cells", "max_iters"):
        flags[name] = getattr(args, name, None)
    if getattr(args, "no_timing", False):
        flags["timing"] = False
    return merge(file_vals, flags)


def _out_dir(cfg: RunConfig) -> Path | None:
    if cfg.out is None:
        return None
    d = Path(cfg.out)
    try:
        d.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError(f"cannot create output directory {d}: {exc.strerror}") from None
    return d


def _problem(cfg: RunConfig):
    try:
        return resolve_problem(cfg.amr_config())
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _mesh(cfg: RunConfig, prob, mesh_file: str | None):
    mesh = read_mesh(mesh_file) if mesh_file else prob.initial_mesh(cfg.initial_refinement)
    return refine_uniform(mesh, cfg.uniform_refines) if cfg.uniform_refines else mesh


def _write_elementwise(path: Path, values) -> None:
    lines = ["element_id,value"] + [f"{i},{float(v)!r}" for i, v in enumerate(values)]
    path.write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# solution files
# ---------------------------------------------------------------------------


def write_solution(path: Path, u, problem: str, discretization: str, params: DgParameters) -> None:
    head = [f"# problem {problem}", f"# discretization {discretization}", f"# degree {u.space.degree}",
            f"# gamma {params.gamma!r}", f"# delta {params.delta}", f"# ndofs {u.space.ndofs}"]
    path.write_text("\n".join(head + [repr(float(v)) for v in u.values]) + "\n")


def read_solution(path: Path) -> tuple[dict, np.ndarray]:
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read solution file {path}: {exc.strerror}") from None
    meta, vals = {}, []
    for i, line in enumerate(lines, 1):
        if line.startswith("#"):
            parts = line[1:].split()
            if len(parts) != 2:
                raise UsageError(f"{path}:{i}: malformed header line")
            meta[parts[0]] = parts[1]
        elif line.strip():
            try:
                vals.append(float(line))
            except ValueError:
                raise UsageError(f"{path}:{i}: not a number") from None
    missing = {"problem", "discretization", "degree", "gamma", "delta", "ndofs"} - set(meta)
    if missing:
        raise UsageError(f"{path}: missing header fields {sorted(missing)}")
    if len(vals) != int(meta["ndofs"]):
        raise UsageError(f"{path}: header announces {meta['ndofs']} values, found {len(vals)}")
    return meta, np.array(vals)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_solve(args, out=None) -> int:
    out = out or sys.stdout
    cfg = _run_config(args)
    prob = _problem(cfg)
    mesh = _mesh(cfg, prob, args.mesh)
    params = cfg.amr_config().dg_params
    t0 = time.perf_counter()
    u, _ = solve_problem(prob, mesh, cfg.degree, cfg.discretization, params, cfg.solver_tol, cfg.solver_backend)
    coeff = prob.coefficient(mesh)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        err = est.energy_error(u, prob, coeff)
        norm = est.exact_energy(prob, mesh)
    summary = dict(problem=prob.name, discretization=cfg.discretization, degree=cfg.degree,
                   num_cells=mesh.num_elements, num_dofs=u.space.ndofs, energy_error=err,
                   relative_error=err / norm if err is not None and norm else None,
                   solver_residual=u.residual, wall_time_s=time.perf_counter() - t0)
    text = "\n".join(f"{k} {'' if v is None else v}" for k, v in summary.items())
    print(text, file=out)
    d = _out_dir(cfg)
    if d is not None:
        write_mesh(mesh, d / "mesh.txt")
        write_solution(d / "solution.txt", u, cfg.problem, cfg.discretization, params)
        (d / "summary.txt").write_text(text + "\n")
    return EXIT_OK


def cmd_adapt(args, out=None) -> int:
    out = out or sys.stdout
    cfg = _run_config(args)
    acfg = cfg.amr_config()
    prob = _problem(cfg)
    mesh = _mesh(cfg, prob, None)
    d = _out_dir(cfg)
    csv = None
    if d is not None:
        csv = (d / "history.csv").open("w")
        csv.write(CSV_HEADER + "\n")
        csv.flush()

    def row(r):
        # one complete row per write so an abort never leaves a partial line
        if csv is not None:
            csv.write(r.csv_row() + "\n")
            csv.flush()
        print(r.csv_row(), file=out)

    print(CSV_HEADER, file=out)
    try:
        res = adapt_loop(acfg, prob, mesh, callback=row)
    finally:
        if csv is not None:
            csv.close()
    h = res.history
    print(f"# status {h.status}", file=out)
    if d is not None:
        write_mesh(res.mesh, d / "mesh.txt")
        _write_elementwise(d / "indicators.csv", res.eta_K)
        write_solution(d / "solution.txt", res.solution, cfg.problem, cfg.discretization, acfg.dg_params)
        (d / "status.txt").write_text(h.status + "\n")
    return EXIT_OK


def cmd_recover(args, out=None) -> int:
    out = out or sys.stdout
    meta, vals = read_solution(Path(args.solution))
    mesh_file = args.mesh or str(Path(args.solution).with_name("mesh.txt"))
    mesh = read_mesh(mesh_file)
    # the problem and discretization of the stored solution win over the config
    args.problem = args.problem or meta["problem"]
    args.discretization = args.discretization or meta["discretization"]
    args.degree = args.degree or int(meta["degree"])
    if args.dg_gamma is None:
        args.dg_gamma = float(meta["gamma"])
    if args.dg_delta is None:
        args.dg_delta = int(meta["delta"])
    cfg = _run_config(args)
    if cfg.discretization != meta["discretization"] or cfg.degree != int(meta["degree"]):
        raise UsageError("discretization and degree must match the stored solution")
    prob = _problem(cfg)
    space = LagrangeSpace(mesh, cfg.degree, cfg.discretization)
    if space.ndofs != len(vals):
        raise UsageError(f"solution has {len(vals)} values but the mesh carries {space.ndofs} dofs")
    u = space.function(vals)
    params = cfg.amr_config().dg_params
    coeff = prob.coefficient(mesh)
    rec = fx.recover(u, prob, cfg.recovery_degree, cfg.recovery_mode or cfg.discretization,
                     cfg.averaging_degree, params=params, coeff=coeff, weights=facet_weights(mesh, coeff))
    rep = rec.report
    absres, scaled = fx.conservation_residuals(rec, prob)
    ok = rep["max_conservation"] <= CONSERVATION_TOL and rep["conformity"] <= CONFORMITY_TOL
    lines = [f"recovery_degree {rec.s}", f"mode {rec.mode}",
             f"max_conservation {rep['max_conservation']!r}",
             f"max_conservation_abs {rep['max_conservation_abs']!r}",
             f"conformity {rep['conformity']!r}", f"neumann {rep['neumann']!r}",
             f"status {'ok' if ok else 'VIOLATION'}"]
    print("\n".join(lines), file=out)
    d = _out_dir(cfg)
    if d is not None:
        sh = rec.sigma_hat
        q = sh.values[sh.space.facet_dofs()]
        head = "facet_id," + ",".join(f"moment_{j}" for j in range(q.shape[1]))
        body = [f"{f}," + ",".join(repr(float(v)) for v in q[f]) for f in range(len(q))]
        (d / "facet_flux.csv").write_text("\n".join([head] + body) + "\n")
        _write_elementwise(d / "conservation.csv", scaled)
        (d / "recover_report.txt").write_text("\n".join(lines) + "\n")
    return EXIT_OK if ok else EXIT_VIOLATION


def cmd_mesh_info(args, out=None) -> int:
    out = out or sys.stdout
    cfg = _run_config(args)
    prob = _problem(cfg) if (args.mesh is None or args.problem) else None
    mesh = _mesh(cfg, prob, args.mesh)
    bc = np.bincount(mesh.facet_class, minlength=3)
    info = dict(num_vertices=mesh.num_vertices, num_cells=mesh.num_elements, num_facets=mesh.num_facets,
                interior_facets=int(bc[0]), dirichlet_facets=int(bc[1]), neumann_facets=int(bc[2]),
                h_min=float(mesh.h.min()), h_max=float(mesh.h.max()), min_angle_deg=float(np.degrees(mesh.min_angle())),
                regions=" ".join(str(r) for r in np.unique(mesh.region)))
    if prob is not None:
        qm = quasi_monotone_vertices(mesh, prob.coefficient(mesh))
        info["non_quasi_monotone_vertices"] = int((~qm).sum())
    print("\n".join(f"{k} {v}" for k, v in info.items()), file=out)
    d = _out_dir(cfg)
    if d is not None:
        write_mesh(mesh, d / "mesh.txt")
    return EXIT_OK


COMMANDS = {"solve": cmd_solve, "adapt": cmd_adapt, "recover": cmd_recover, "mesh-info": cmd_mesh_info}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return COMMANDS[args.command](args)
    except (UsageError, ConfigError, MeshError) as exc:
        print(f"earm: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SolverError, fx.ConstrainedSpaceError, fx.ConservationError, ValueError) as exc:
        print(f"earm: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except OSError as exc:
        print(f"earm: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
