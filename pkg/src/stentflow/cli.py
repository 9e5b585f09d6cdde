"""Command-line interface: files in, files out.

Subcommands: ``mesh`` | ``cell`` | ``solve`` | ``homog`` | ``converge``.
Every output file starts with a provenance line (version + config hash).
Exit codes: 0 success, 1 numerical failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import __version__
from .config import RunConfig, load_config
from .errors import (
    ConfigError,
    NonIntegerReciprocal,
    ObstacleTouchesCell,
    StentflowError,
)
from .geometry import build_macro_geometry, build_strip_mesh, triangulate
from .meshio import save_mesh, write_vtk

TOL_TABLE = {
    "beta2_section_max": 1e-6,
    "ups2_section_max": 1e-6,
    "pi_section_max_rel": 1e-6,
    "varpi_section_max_rel": 1e-6,
    "beta1_jump_identity_rel": 0.01,
    "ups1_bottom_energy_rel": 0.01,
    "ups_jump_vs_beta_bottom_rel": 0.01,
    "chi_energy_vs_eta_jump_rel": 0.01,
    "chi2_farfield_dev": 1e-6,
    "mu_jump_identity_rel": 0.02,
    "varkappa1_jump_identity_rel": 0.02,
    "varkappa_farfield_variance": 1e-6,
}


def _ensure_outdir(cfg: RunConfig) -> str:
    out = cfg["output.dir"]
    os.makedirs(out, exist_ok=True)
    return out


def _fmt_cell(v):
    return v if isinstance(v, str) else repr(float(v))


def _write_csv(path, header_cols, rows, provenance):
    lines = [f"# {provenance}", ",".join(header_cols)]
    for row in rows:
        lines.append(",".join(_fmt_cell(row[c]) for c in header_cols))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def cmd_mesh(cfg: RunConfig, args) -> int:
    out = _ensure_outdir(cfg)
    prov = cfg.provenance()
    geo = build_macro_geometry(cfg.eps, cfg.case, cfg.obstacle())
    macro = triangulate(geo, cfg["mesh.h"], cfg.refine_spec())
    save_mesh(macro, os.path.join(out, f"macro_eps{cfg.eps:g}.mesh"),
              header_lines=[prov])
    strip = build_strip_mesh(cfg.obstacle(), L=cfg["strip.L"], h=cfg["strip.h"],
                             refine_spec=cfg.refine_spec())
    save_mesh(strip, os.path.join(out, "strip.mesh"), header_lines=[prov])
    if args.vtk:
        write_vtk(macro, os.path.join(out, f"macro_eps{cfg.eps:g}.vtk"),
                  title=prov)
        write_vtk(strip, os.path.join(out, "strip.vtk"), title=prov)
    print(f"wrote macro ({macro.n_triangles} tris) and strip "
          f"({strip.n_triangles} tris) meshes to {out}")
    return 0


def cmd_cell(cfg: RunConfig, args) -> int:
    from .cell import identity_report, solve_all, solve_chi, write_constants
    from .fem import band_integral

    out = _ensure_outdir(cfg)
    prov = cfg.provenance()
    obstacle = None if args.no_obstacle else cfg.obstacle()
    strip = build_strip_mesh(obstacle, L=cfg["strip.L"], h=cfg["strip.h"],
                             refine_spec=cfg.refine_spec())
    if obstacle is None:
        # unobstructed strip: only the through-flow problem is well posed
        chi = solve_chi(strip, cfg.solver())
        space = chi.solution.space
        L = cfg["strip.L"]
        jump = (band_integral(space, chi.solution.p, L - 2, L - 1, average=True)
                - band_integral(space, chi.solution.p, -L + 1, -L + 2, average=True))
        path = os.path.join(out, "constants.txt")
        with open(path, "w") as fh:
            fh.write(f"# {prov}\neta_jump={float(jump)!r}\n")
        print(f"no obstacle: eta_jump={jump:.3e} (expected 0)")
        return 0 if abs(jump) < 1e-8 else 1
    sols, constants = solve_all(strip, cfg.solver(),
                                with_varkappa=not args.skip_varkappa,
                                threads=cfg["threads"])
    if args.vtk:
        n_vert = strip.n_vertices
        data = {}
        for name, cell in sols.items():
            space = cell.solution.space
            data[f"{name}_velocity"] = np.stack(
                [cell.solution.u[:n_vert],
                 cell.solution.u[space.n_vnode:space.n_vnode + n_vert]], axis=1)
            data[f"{name}_pressure"] = cell.solution.p
        write_vtk(strip, os.path.join(out, "cell_fields.vtk"),
                  point_data=data, title=prov)
    write_constants(constants, os.path.join(out, "constants.txt"),
                    header_lines=[prov])
    rows = [{"name": k, "value": v} for k, v in constants.as_dict().items()]
    _write_csv(os.path.join(out, "constants.csv"), ["name", "value"], rows, prov)
    report = identity_report(sols["beta"], sols["upsilon"], sols["chi"],
                             sols.get("varkappa"), constants)
    failures = []
    with open(os.path.join(out, "identity_report.txt"), "w") as fh:
        fh.write(f"# {prov}\n")
        for key, val in report.items():
            tol = TOL_TABLE.get(key)
            ok = tol is None or val <= tol
            if not ok:
                failures.append(key)
            fh.write(f"{key}={val!r} tol={tol!r} {'ok' if ok else 'FAIL'}\n")
    for k, v in constants.as_dict().items():
        print(f"{k} = {v:.8g}")
    if failures:
        print(f"identity checks FAILED: {', '.join(failures)}", file=sys.stderr)
        return 1
    print(f"all identity checks passed; outputs in {out}")
    return 0


def cmd_solve(cfg: RunConfig, args) -> int:
    from .analysis import boundary_fluxes, flowrate_direct, solve_direct

    out = _ensure_outdir(cfg)
    prov = cfg.provenance()
    geo = build_macro_geometry(cfg.eps, cfg.case, cfg.obstacle())
    mesh = triangulate(geo, cfg["mesh.h"], cfg.refine_spec())
    sol = solve_direct(mesh, cfg.flow(), cfg.solver())
    if not sol.diagnostics.get("converged", False):
        print("solver did not converge", file=sys.stderr)
        return 1
    fluxes = boundary_fluxes(sol)
    q0 = flowrate_direct(sol)
    rows = [{"name": k, "value": v} for k, v in fluxes.items()]
    rows.append({"name": "Q_GAMMA0", "value": q0})
    _write_csv(os.path.join(out, f"fluxes_eps{cfg.eps:g}.csv"),
               ["name", "value"], rows, prov)
    n_vert = mesh.n_vertices
    write_vtk(mesh, os.path.join(out, f"solution_eps{cfg.eps:g}.vtk"),
              point_data={
                  "velocity": np.stack([sol.u[:n_vert],
                                        sol.u[sol.space.n_vnode:sol.space.n_vnode
                                              + n_vert]], axis=1),
                  "pressure": sol.p,
              }, title=prov)
    imbalance = sum(fluxes.values())
    print(f"flow rate through the interface: {q0:.6g}; "
          f"flux imbalance {imbalance:.2e}")
    return 0


def cmd_homog(cfg: RunConfig, args) -> int:
    from .cell import read_constants, solve_all
    from .homogenized import (
        first_order_meshes,
        flowrate_first_order,
        flowrate_formula,
        implicit_interface_report,
        solve_first_order,
        zero_order,
    )

    out = _ensure_outdir(cfg)
    prov = cfg.provenance()
    if args.constants:
        constants = read_constants(args.constants)
    else:
        strip = build_strip_mesh(cfg.obstacle(), L=cfg["strip.L"],
                                 h=cfg["strip.h"], refine_spec=cfg.refine_spec())
        _, constants = solve_all(strip, cfg.solver(), with_varkappa=False,
                                 threads=cfg["threads"])
    flow = cfg.flow()
    zero = zero_order(flow, constants)
    if flow.case == "aneurysm":
        print(f"lower-channel zero-order pressure: {zero.p_lower:g}")
    if cfg.eps == 0.0:
        print("eps = 0: zero-order model only; nothing further to solve")
        return 0
    mesh_up, mesh_lo = first_order_meshes(cfg["first_order.h"],
                                          cfg.refine_spec(), case=flow.case)
    first = solve_first_order(mesh_up, mesh_lo, zero, constants,
                              config=cfg.solver())
    rows = implicit_interface_report(zero, first, constants, cfg.eps)
    _write_csv(os.path.join(out, f"interface_eps{cfg.eps:g}.csv"),
               ["x1", "u_t_plus", "u_t_minus", "u_n", "p_jump",
                "slip_residual", "normal_residual"], rows, prov)
    if flow.case == "collateral":
        qf = flowrate_formula(zero, constants, cfg.eps)
        q1 = flowrate_first_order(first, cfg.eps)
        _write_csv(os.path.join(out, f"flowrate_eps{cfg.eps:g}.csv"),
                   ["name", "value"],
                   [{"name": "Q_formula", "value": qf},
                    {"name": "Q_first_order_trace", "value": q1}], prov)
        print(f"flow-rate law: Q = {qf:.6g} (trace integral {q1:.6g})")
    return 0


def cmd_converge(cfg: RunConfig, args) -> int:
    from .analysis import StudyConfig, check_slope_bands, convergence_study

    out = _ensure_outdir(cfg)
    prov = cfg.provenance()
    eps_list = cfg.eps_list
    if len(eps_list) < 3:
        print("need >= 3 eps values in eps_list", file=sys.stderr)
        return 2
    study = StudyConfig(
        flow=cfg.flow(), obstacle=cfg.obstacle(), h_macro=cfg["mesh.h"],
        h_first_order=cfg["first_order.h"], strip_L=cfg["strip.L"],
        strip_h=cfg["strip.h"], refine=cfg.refine_spec(), solver=cfg.solver(),
    )
    if args.dry_run:
        print(f"plan: eps={eps_list}, macro h={study.h_macro}, "
              f"strip h={study.strip_h} L={study.strip_L}, "
              f"first-order h={study.h_first_order}")
        return 0

    def progress(rep):
        if rep.error:
            print(f"eps={rep.eps}: {rep.error}", file=sys.stderr)
        else:
            print(f"eps={rep.eps}: vel errors {rep.l2_vel_zero:.4e} / "
                  f"{rep.l2_vel_first:.4e}, pressure {rep.hm1_p_zero:.4e} / "
                  f"{rep.hm1_p_first:.4e}")

    reports, fits, first, constants = convergence_study(
        eps_list, study, progress=progress, with_profiles=True)
    cols = ["eps", "l2_vel_zero", "l2_vel_first", "hm1_p_zero", "hm1_p_first",
            "q_direct", "q_formula", "q_first_order"]
    rows = [{c: getattr(r, c) for c in cols} for r in reports if r.error is None]
    _write_csv(os.path.join(out, "errors.csv"), cols, rows, prov)
    with open(os.path.join(out, "slopes.txt"), "w") as fh:
        fh.write(f"# {prov}\n")
        for key, fit in fits.items():
            fh.write(f"{key}.slope={fit.slope!r}\n")
            fh.write(f"{key}.intercept={fit.intercept!r}\n")
    for key, fit in fits.items():
        print(f"{key}: slope {fit.slope:.3f}")
    for rep in reports:
        profile_rows = rep.meta.get("profiles")
        if profile_rows:
            _write_csv(os.path.join(out, f"profiles_eps{rep.eps:g}.csv"),
                       ["x1", "u1_direct_at_eps", "u1_avg_at_eps",
                        "u2_direct_at_0", "u2_avg_at_0"], profile_rows, prov)

    problems = check_slope_bands(reports, fits)
    if problems:
        for p in problems:
            print(f"ACCEPTANCE BAND VIOLATION: {p}", file=sys.stderr)
        return 1
    print(f"all slope bands satisfied; outputs in {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="stentflow",
        description="Multi-scale Stokes solver for sieve-obstructed channels",
    )
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="key=value config file")
        p.add_argument("--threads", type=int, default=None,
                       help="worker threads for independent solves")

    p = sub.add_parser("mesh", help="write macro and strip meshes")
    common(p)
    p.add_argument("--vtk", action="store_true", help="also write VTK files")
    p.set_defaults(func=cmd_mesh)

    p = sub.add_parser("cell", help="solve the boundary-layer problems")
    common(p)
    p.add_argument("--skip-varkappa", action="store_true",
                   help="skip the second-order corrector")
    p.add_argument("--no-obstacle", action="store_true",
                   help="unobstructed strip: through-flow problem only")
    p.add_argument("--vtk", action="store_true",
                   help="export the cell fields to VTK")
    p.set_defaults(func=cmd_cell)

    p = sub.add_parser("solve", help="direct solve of the rough problem")
    common(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("homog", help="zero/first-order homogenized model")
    common(p)
    p.add_argument("--constants", default=None,
                   help="constants file from a previous cell run")
    p.set_defaults(func=cmd_homog)

    p = sub.add_parser("converge", help="convergence study over eps_list")
    common(p)
    p.add_argument("--dry-run", action="store_true", help="print the plan only")
    p.set_defaults(func=cmd_converge)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.threads is not None:
            cfg.values["threads"] = args.threads
        return args.func(cfg, args)
    except (ConfigError, NonIntegerReciprocal, ObstacleTouchesCell,
            ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except StentflowError as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
