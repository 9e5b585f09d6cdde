"""Error norms, flow-rate measurements, and the convergence study.

The direct rough solve is compared against the zero-order and first-order
averaged approximations: velocity in L2 over both channels (direct field
extended by zero inside the obstacles), pressure in the weak norm obtained
by a Poisson solve of the pressure mismatch with homogeneous Dirichlet data
on the channel boundaries, the obstacle circles and the two interface lines.
Least-squares slopes on log-log data condense the study.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .cell import CellConstants
from .fem import (
    BC,
    PointLocator,
    PressureField,
    VelocityField,
    assemble_stokes,
    build_space,
    edge_flux,
    eval_on_quadrature,
    integrate_field,
)
from .geometry import (
    BoundaryTag as T,
    Mesh,
    ObstacleSpec,
    RefineSpec,
    build_macro_geometry,
    triangulate,
)
from .homogenized import (
    FlowData,
    averaged_approximation,
    first_order_meshes,
    flowrate_first_order,
    flowrate_formula,
    solve_first_order,
    zero_order,
)
from .solvers import SolverConfig, StokesSolution, solve_poisson, solve_stokes

MACRO_BC = {
    "collateral": {
        T.GAMMA_IN: ("pressure", "p_in"),
        T.GAMMA_OUT1: ("pressure", "p_out1"),
        T.GAMMA_OUT2: ("pressure", "p_out2"),
        T.GAMMA1: ("wall", None),
        T.GAMMA2: ("wall", None),
        T.GAMMA_EPS: ("wall", None),
    },
    "aneurysm": {
        T.GAMMA_IN: ("pressure", "p_in"),
        T.GAMMA_OUT1: ("pressure", "p_out1"),
        T.GAMMA1: ("wall", None),
        T.GAMMA2: ("wall", None),
        T.GAMMA_EPS: ("wall", None),
    },
}


def macro_bc_spec(mesh: Mesh, flow: FlowData):
    """Boundary conditions of the direct rough problem for this mesh."""
    table = MACRO_BC[flow.case]
    spec = {}
    for tag in set(mesh.boundary_tags):
        kind, key = table[tag]
        if kind == "wall":
            spec[tag] = BC.dirichlet((0.0, 0.0))
        else:
            spec[tag] = BC.pressure(getattr(flow, key))
    return spec


def solve_direct(mesh: Mesh, flow: FlowData,
                 config: SolverConfig | None = None) -> StokesSolution:
    """Direct Stokes solve of the rough problem on a macro (or no-stent) mesh."""
    space = build_space(mesh, macro_bc_spec(mesh, flow))
    return solve_stokes(assemble_stokes(space), config)


# ----------------------------------------------------------------------------
# error norms
# ----------------------------------------------------------------------------


def _disk_quadrature(cx, cy, r, n_r=4, n_t=16):
    """Tensor Gauss(r) x trapezoid(theta) rule on a disk: points, weights."""
    xg, wg = np.polynomial.legendre.leggauss(n_r)
    rr = 0.5 * r * (xg + 1.0)
    wr = 0.5 * r * wg * rr
    th = 2.0 * np.pi * np.arange(n_t) / n_t
    wt = np.full(n_t, 2.0 * np.pi / n_t)
    R, TH = np.meshgrid(rr, th, indexing="ij")
    W = np.outer(wr, wt)
    pts = np.stack([cx + R * np.cos(TH), cy + R * np.sin(TH)], axis=-1)
    return pts.reshape(-1, 2), W.ravel()


def l2_velocity_error(direct: StokesSolution, approx_velocity, mesh: Mesh = None,
                      include_holes=True) -> float:
    """L2 distance between the direct velocity and an approximation.

    Integrates over the perforated mesh plus, with ``include_holes``, the
    obstacle disks where the direct field is extended by zero (so the
    approximation's own values are charged there).
    """
    mesh = direct.space.mesh if mesh is None else mesh
    fields = eval_on_quadrature(direct.space, u=direct.u)
    pts = fields["pts"].reshape(-1, 2)
    ref = np.asarray(approx_velocity(pts)).reshape(fields["u"].shape)
    total = float(np.sum(fields["w"][:, :, None] * (fields["u"] - ref) ** 2))
    if include_holes:
        for cx, cy, r in mesh.holes:
            hp, hw = _disk_quadrature(cx, cy, r)
            vals = np.asarray(approx_velocity(hp))
            total += float(np.sum(hw[:, None] * vals**2))
    return float(np.sqrt(total))


def _hm1_dirichlet_nodes(mesh: Mesh, eps: float):
    """Vertices clamped in the pressure-mismatch Poisson solve.

    The outer boundary, the obstacle circles, and the interior lines x2 = 0
    and x2 = eps (boundaries of the three stacked subdomains); the thin
    lateral edges of the layer keep natural conditions.
    """
    nodes = set()
    for (a, b), tag in zip(mesh.boundary_edges, mesh.boundary_tags):
        ya, yb = mesh.vertices[a, 1], mesh.vertices[b, 1]
        if tag in (T.GAMMA_IN, T.GAMMA_OUT1, T.GAMMA2):
            for v, y in ((a, ya), (b, yb)):
                if y <= 1e-12 or y >= eps - 1e-12:
                    nodes.add(int(v))
        else:
            nodes.add(int(a))
            nodes.add(int(b))
    on_line = np.nonzero(
        (np.abs(mesh.vertices[:, 1]) < 1e-12)
        | (np.abs(mesh.vertices[:, 1] - eps) < 1e-12)
    )[0]
    nodes.update(int(v) for v in on_line)
    return np.array(sorted(nodes), dtype=np.int64)


def hm1_pressure_error(direct: StokesSolution, approx_pressure,
                       mesh: Mesh = None, eps: float = None) -> float:
    """Weak-norm pressure error: gradient norm of -Lap(q) = p_direct - p_approx.

    The Poisson solve runs on the direct mesh with homogeneous Dirichlet
    data as in :func:`_hm1_dirichlet_nodes`; ``eps`` defaults to the layer
    height recorded on the mesh.
    """
    mesh = direct.space.mesh if mesh is None else mesh
    if eps is None:
        eps = mesh.meta["eps"]
    locator = PointLocator(mesh)
    p_direct = PressureField(direct.space, direct.p, locator)

    def rhs(pts):
        return p_direct(pts) - np.asarray(approx_pressure(pts))

    nodes = _hm1_dirichlet_nodes(mesh, eps)
    _, grad_norm = solve_poisson(mesh, rhs, extra_dirichlet_nodes=nodes)
    return grad_norm


def flowrate_direct(direct: StokesSolution) -> float:
    """Line integral of the direct velocity's normal trace over the interface
    (normal pointing into the lower channel)."""
    mesh = direct.space.mesh
    edges = mesh.edges_with_tag(T.GAMMA0)
    return edge_flux(direct.space, direct.u, edges, normal=(0.0, -1.0))


def boundary_fluxes(direct: StokesSolution) -> dict:
    """Outward fluxes through every tagged outer boundary."""
    mesh = direct.space.mesh
    out = {}
    for tag in (T.GAMMA_IN, T.GAMMA_OUT1, T.GAMMA_OUT2, T.GAMMA1, T.GAMMA2,
                T.GAMMA_EPS):
        edges = mesh.edges_with_tag(tag)
        if len(edges):
            out[tag.value] = edge_flux(direct.space, direct.u, edges)
    return out


def mean_pressure_lower(direct: StokesSolution) -> float:
    """Mean direct pressure over the lower channel."""
    space = direct.space

    def region(c):
        return c[:, 1] < 0.0

    val = integrate_field(space, direct.p, region=region)
    return val / 1.0  # the lower channel has unit area


def interface_normal_samples(direct: StokesSolution, xs=(0.25, 0.75)) -> list:
    """u . n at sample points of the interface (n pointing downward)."""
    vel = VelocityField(direct.space, direct.u)
    pts = np.stack([np.asarray(xs), np.zeros(len(xs))], axis=1)
    return list(-vel(pts)[:, 1])


# ----------------------------------------------------------------------------
# profiles
# ----------------------------------------------------------------------------


def velocity_profiles(direct: StokesSolution, avg, eps, n=201):
    """Horizontal-velocity profile just above the layer and the normal
    velocity on the interface, for the direct and averaged fields."""
    x = np.linspace(0.0, 1.0, n)
    vel = VelocityField(direct.space, direct.u)
    top = np.stack([x, np.full(n, eps)], axis=1)
    mid = np.stack([x, np.zeros(n)], axis=1)
    rows = []
    u_top = vel(top)
    u_mid = vel(mid)
    a_top = avg.velocity(top)
    a_mid = avg.velocity(mid)
    for i in range(n):
        rows.append({
            "x1": float(x[i]),
            "u1_direct_at_eps": float(u_top[i, 0]),
            "u1_avg_at_eps": float(a_top[i, 0]),
            "u2_direct_at_0": float(u_mid[i, 1]),
            "u2_avg_at_0": float(a_mid[i, 1]),
        })
    return rows


# ----------------------------------------------------------------------------
# convergence study
# ----------------------------------------------------------------------------


@dataclass
class ErrorReport:
    """Per-eps record of the study."""

    eps: float
    l2_vel_zero: float = np.nan
    l2_vel_first: float = np.nan
    hm1_p_zero: float = np.nan
    hm1_p_first: float = np.nan
    q_direct: float = np.nan
    q_formula: float = np.nan
    q_first_order: float = np.nan
    meta: dict = field(default_factory=dict)
    error: str | None = None


@dataclass
class SlopeFit:
    """Least-squares exponent of error ~ C * eps^slope."""

    slope: float
    intercept: float
    residual: float


def fit_slope(eps_vals, errors) -> SlopeFit:
    """Log-log least squares; requires >= 3 points; eps = 1 is excluded."""
    eps_vals = np.asarray(eps_vals, dtype=float)
    errors = np.asarray(errors, dtype=float)
    keep = eps_vals < 1.0
    eps_vals, errors = eps_vals[keep], errors[keep]
    if len(eps_vals) < 3:
        raise ValueError("slope fit needs at least 3 data points")
    lx, ly = np.log(eps_vals), np.log(errors)
    coef, res = np.polyfit(lx, ly, 1, full=True)[:2]
    residual = float(res[0]) if len(res) else 0.0
    return SlopeFit(slope=float(coef[0]), intercept=float(coef[1]),
                    residual=residual)


@dataclass
class StudyConfig:
    """Inputs of the convergence study."""

    flow: FlowData = field(default_factory=FlowData)
    obstacle: ObstacleSpec = field(default_factory=ObstacleSpec)
    h_macro: float = 0.1
    h_first_order: float = 0.05
    strip_L: float = 10.0
    strip_h: float = 1.0 / 48.0
    refine: RefineSpec = field(default_factory=RefineSpec)
    solver: SolverConfig = field(default_factory=SolverConfig)


def convergence_study(eps_list, study: StudyConfig | None = None,
                      constants: CellConstants | None = None,
                      first_order=None, progress=None, with_profiles=False):
    """Run the full study over descending eps values.

    Cell constants are computed once (or passed in); the first-order
    corrector is eps-independent and solved once.  Per eps: mesh, direct
    solve, both error norms against the zero- and first-order models, and
    the three flow rates.  A failure records its message and the study
    continues.  Returns (reports, slope fits).
    """
    study = study or StudyConfig()
    eps_list = list(eps_list)
    if len(eps_list) < 3:
        raise ValueError("need at least 3 eps values")
    if constants is None:
        from .cell import solve_all
        from .geometry import build_strip_mesh

        strip = build_strip_mesh(study.obstacle, L=study.strip_L,
                                 h=study.strip_h, refine_spec=study.refine)
        _, constants = solve_all(strip, study.solver, with_varkappa=False)
    zero = zero_order(study.flow, constants)
    if first_order is None:
        mesh_up, mesh_lo = first_order_meshes(study.h_first_order, study.refine,
                                              case=study.flow.case)
        first_order = solve_first_order(mesh_up, mesh_lo, zero, constants,
                                        config=study.solver)

    reports = []
    for eps in eps_list:
        rep = ErrorReport(eps=float(eps))
        reports.append(rep)
        t0 = time.time()
        try:
            geo = build_macro_geometry(eps, study.flow.case, study.obstacle)
            mesh = triangulate(geo, study.h_macro, study.refine)
            direct = solve_direct(mesh, study.flow, study.solver)
            avg = averaged_approximation(zero, first_order, eps)
            rep.l2_vel_zero = l2_velocity_error(direct, zero.velocity, mesh)
            rep.l2_vel_first = l2_velocity_error(direct, avg.velocity, mesh)
            rep.hm1_p_zero = hm1_pressure_error(direct, zero.pressure, mesh, eps)
            rep.hm1_p_first = hm1_pressure_error(direct, avg.pressure, mesh, eps)
            rep.q_direct = flowrate_direct(direct)
            if study.flow.case == "collateral":
                rep.q_formula = flowrate_formula(zero, constants, eps)
                rep.q_first_order = flowrate_first_order(first_order, eps)
            rep.meta = {
                "n_triangles": mesh.n_triangles,
                "n_vel_dofs": direct.space.n_vel,
                "solver": dict(direct.diagnostics),
                "runtime_s": round(time.time() - t0, 2),
            }
            if with_profiles:
                rep.meta["profiles"] = velocity_profiles(direct, avg, eps)
        except Exception as exc:               # keep going with the other eps
            rep.error = f"{type(exc).__name__}: {exc}"
        if progress:
            progress(rep)

    good = [r for r in reports if r.error is None]
    fits = {}
    if len(good) >= 3:
        evals = [r.eps for r in good]
        fits = {
            "l2_vel_zero": fit_slope(evals, [r.l2_vel_zero for r in good]),
            "l2_vel_first": fit_slope(evals, [r.l2_vel_first for r in good]),
            "hm1_p_zero": fit_slope(evals, [r.hm1_p_zero for r in good]),
            "hm1_p_first": fit_slope(evals, [r.hm1_p_first for r in good]),
        }
    return reports, fits, first_order, constants


SLOPE_BANDS = {
    "l2_vel_zero": (0.7, 1.1),
    "l2_vel_first": (1.2, None),
    "hm1_p_zero": (0.9, None),
    "hm1_p_first": (1.2, None),
}


def check_slope_bands(reports, fits) -> list[str]:
    """Violations of the acceptance bands; empty list means all pass."""
    problems = []
    for key, (lo, hi) in SLOPE_BANDS.items():
        if key not in fits:
            problems.append(f"{key}: no fit available")
            continue
        s = fits[key].slope
        if lo is not None and s < lo:
            problems.append(f"{key}: slope {s:.3f} below {lo}")
        if hi is not None and s > hi:
            problems.append(f"{key}: slope {s:.3f} above {hi}")
    for r in reports:
        if r.error:
            problems.append(f"eps={r.eps}: {r.error}")
            continue
        if not (r.l2_vel_first < r.l2_vel_zero):
            problems.append(f"eps={r.eps}: first-order velocity error not smaller")
        if not (r.hm1_p_first < r.hm1_p_zero):
            problems.append(f"eps={r.eps}: first-order pressure error not smaller")
    return problems
