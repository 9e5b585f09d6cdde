"""Boundary-layer problems on the truncated periodic strip.

Four Stokes solves on ]0,1[ x ]-L,L[ minus the obstacle, periodic in the
horizontal direction, each correcting one defect of the macroscopic
approximation at the interface:

* ``beta``: lifts the no-slip error on the obstacles (velocity -y2*e1 on P),
* ``upsilon``: unit tangential line load on the interface line (shear jump),
* ``chi``: unit transversal through-flow (chi_2 -> -1 far away), whose
  far-field pressure jump is the interface resistivity,
* ``varkappa``: second-order corrector driven by the chi fields.

Far-field constants are band means near the truncation ends; pressures are
normalized to zero mean over the upper band.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import MeshMismatch
from .fem import (
    BC,
    Sources,
    assemble_stokes,
    band_integral,
    build_space,
    eval_on_quadrature,
    gradient_energy,
    section_average as _section_average,
)
from .geometry import BoundaryTag as T, Mesh
from .solvers import SolverConfig, StokesSolution, solve_stokes


@dataclass
class CellSolution:
    """One boundary-layer solve plus its pressure normalization record."""

    which: str
    solution: StokesSolution
    mesh: Mesh
    normalization: dict


@dataclass
class CellConstants:
    """Homogenized scalars extracted from the cell solves.

    ``beta1_plus/minus`` and ``ups1_plus/minus`` are far-field horizontal
    velocity constants, ``eta_jump`` the far-field pressure jump of the
    through-flow corrector (top minus bottom).  Gradient energies are the
    stiffness quadratic forms entering the averaged identities;
    ``obstacle_area`` is the analytic disk area.
    """

    beta1_plus: float
    beta1_minus: float
    ups1_plus: float
    ups1_minus: float
    eta_jump: float
    chi_grad_energy: float
    beta_grad_energy: float
    ups_grad_energy: float
    obstacle_area: float
    varkappa1_jump: float | None = None
    mu_jump: float | None = None

    def as_dict(self):
        d = {
            "beta1_plus": self.beta1_plus,
            "beta1_minus": self.beta1_minus,
            "ups1_plus": self.ups1_plus,
            "ups1_minus": self.ups1_minus,
            "eta_jump": self.eta_jump,
            "chi_grad_energy": self.chi_grad_energy,
            "beta_grad_energy": self.beta_grad_energy,
            "ups_grad_energy": self.ups_grad_energy,
            "obstacle_area": self.obstacle_area,
        }
        if self.varkappa1_jump is not None:
            d["varkappa1_jump"] = self.varkappa1_jump
            d["mu_jump"] = self.mu_jump
        return d


def _strip_bc(top_bottom_value, obstacle_value):
    """Common strip boundary conditions.

    Vertical component fixed at y2 = +-L (horizontal natural), periodic
    sides, Dirichlet on the obstacle circle.
    """
    bc = {
        T.STRIP_TOP: BC.normal(top_bottom_value),
        T.STRIP_BOTTOM: BC.normal(top_bottom_value),
        T.STRIP_LEFT: BC.periodic(T.STRIP_RIGHT),
        T.STRIP_RIGHT: BC.periodic(T.STRIP_LEFT),
    }
    if obstacle_value is not None:
        bc[T.GAMMA_EPS] = BC.dirichlet(obstacle_value)
    return bc


def _strip_L(mesh: Mesh) -> float:
    return float(mesh.meta.get("L", mesh.vertices[:, 1].max()))


def _top_band(mesh):
    L = _strip_L(mesh)
    return L - 2.0, L - 1.0


def _bottom_band(mesh):
    L = _strip_L(mesh)
    return -L + 1.0, -L + 2.0


def _require_obstacle(mesh, which):
    if len(mesh.holes) == 0:
        raise ValueError(
            f"the {which} problem is under-determined without an obstacle"
        )


def _normalize_pressure(space, sol: StokesSolution, mesh) -> dict:
    y0, y1 = _top_band(mesh)
    shift = band_integral(space, sol.p, y0, y1, average=True)
    sol.p = sol.p - shift
    return {"band": (y0, y1), "shift": float(shift)}


def _solve(which, mesh, bc, sources, config) -> CellSolution:
    space = build_space(mesh, bc)
    if len(mesh.holes) == 0:
        # no obstacle: the constant horizontal velocity is a genuine kernel
        # mode; pin one DOF to select the symmetric representative
        space.fixed_dofs = np.append(space.fixed_dofs, 0)
        space.fixed_vals = np.append(space.fixed_vals, 0.0)
    system = assemble_stokes(space, sources)
    sol = solve_stokes(system, config)
    norm = _normalize_pressure(space, sol, mesh)
    return CellSolution(which=which, solution=sol, mesh=mesh, normalization=norm)


def solve_beta(strip_mesh: Mesh, config: SolverConfig | None = None) -> CellSolution:
    """No-slip corrector: velocity equals -y2*e1 on the obstacle boundary."""
    _require_obstacle(strip_mesh, "beta")
    bc = _strip_bc(0.0, lambda x, y: (-y, 0.0))
    return _solve("beta", strip_mesh, bc, None, config)


def solve_upsilon(strip_mesh: Mesh, config: SolverConfig | None = None) -> CellSolution:
    """Shear-jump corrector: unit horizontal line load on the interface line."""
    _require_obstacle(strip_mesh, "upsilon")
    bc = _strip_bc(0.0, (0.0, 0.0))
    return _solve("upsilon", strip_mesh, bc, Sources(line=(T.SIGMA, 1.0)), config)


def solve_chi(strip_mesh: Mesh, config: SolverConfig | None = None) -> CellSolution:
    """Through-flow corrector: vertical velocity -1 at the truncation ends."""
    bc = _strip_bc(-1.0, (0.0, 0.0) if len(strip_mesh.holes) else None)
    return _solve("chi", strip_mesh, bc, None, config)


def solve_varkappa(strip_mesh: Mesh, chi: CellSolution,
                   config: SolverConfig | None = None) -> CellSolution:
    """Second-order corrector sourced by the through-flow fields.

    The body force is -2 * (d(chi)/dy1 - (eta - far-field eta) e1), assembled
    from the discrete chi solution on the same mesh.
    """
    if chi.mesh is not strip_mesh:
        raise MeshMismatch("varkappa must be solved on the chi mesh")
    space = chi.solution.space
    eta_plus = band_integral(space, chi.solution.p, *_top_band(strip_mesh),
                             average=True)
    eta_minus = band_integral(space, chi.solution.p, *_bottom_band(strip_mesh),
                              average=True)

    from .fem import PointLocator, PressureField, velocity_gradient_at

    locator = PointLocator(strip_mesh)
    p_field = PressureField(space, chi.solution.p, locator)

    def body_force(pts):
        grad = velocity_gradient_at(space, chi.solution.u, pts, locator)
        eta = p_field(pts)
        eta_bar = np.where(pts[:, 1] > 0.0, eta_plus, eta_minus)
        f = -2.0 * grad[:, :, 0]
        f[:, 0] += 2.0 * (eta - eta_bar)
        return f

    bc = _strip_bc(1.0, (0.0, 0.0) if len(strip_mesh.holes) else None)
    return _solve("varkappa", strip_mesh, bc, Sources(volume=body_force), config)


def section_average(cell: CellSolution, component, y2) -> float:
    """Horizontal average of one field of a cell solution at height y2.

    ``component`` is 0/1 for the velocity components or ``"p"`` for the
    pressure.
    """
    space = cell.solution.space
    if component == "p":
        return _section_average(space, cell.solution.p, y2)
    return _section_average(space, cell.solution.u, y2, component=component)


def _band_mean_u(cell: CellSolution, band, component=0):
    return band_integral(cell.solution.space, cell.solution.u, band[0], band[1],
                         component=component, average=True)


def _band_mean_p(cell: CellSolution, band):
    return band_integral(cell.solution.space, cell.solution.p, band[0], band[1],
                         average=True)


def extract_constants(beta: CellSolution, upsilon: CellSolution,
                      chi: CellSolution,
                      varkappa: CellSolution | None = None) -> CellConstants:
    """Far-field constants and gradient energies from the cell solves.

    Far-field values are means over the bands [L-2, L-1] and [-L+1, -L+2];
    the obstacle area is analytic (pi r^2).
    """
    mesh = beta.mesh
    if upsilon.mesh is not mesh or chi.mesh is not mesh:
        raise MeshMismatch("cell solutions live on different strip meshes")
    _require_obstacle(mesh, "constants extraction")
    top, bot = _top_band(mesh), _bottom_band(mesh)
    r = mesh.holes[0, 2]
    consts = dict(
        beta1_plus=_band_mean_u(beta, top),
        beta1_minus=_band_mean_u(beta, bot),
        ups1_plus=_band_mean_u(upsilon, top),
        ups1_minus=_band_mean_u(upsilon, bot),
        eta_jump=_band_mean_p(chi, top) - _band_mean_p(chi, bot),
        chi_grad_energy=gradient_energy(chi.solution.space, chi.solution.u),
        beta_grad_energy=gradient_energy(beta.solution.space, beta.solution.u),
        ups_grad_energy=gradient_energy(upsilon.solution.space,
                                        upsilon.solution.u),
        obstacle_area=float(np.pi * r * r),
    )
    if varkappa is not None:
        consts["varkappa1_jump"] = (_band_mean_u(varkappa, top)
                                    - _band_mean_u(varkappa, bot))
        consts["mu_jump"] = (_band_mean_p(varkappa, top)
                             - _band_mean_p(varkappa, bot))
    return CellConstants(**consts)


def chi_cross_integral(chi: CellSolution) -> float:
    """The volume integral of chi_1 * (eta - far-field eta) over the strip."""
    space = chi.solution.space
    mesh = chi.mesh
    eta_plus = band_integral(space, chi.solution.p, *_top_band(mesh), average=True)
    eta_minus = band_integral(space, chi.solution.p, *_bottom_band(mesh),
                              average=True)
    fields = eval_on_quadrature(space, u=chi.solution.u, p=chi.solution.p)
    eta_bar = np.where(fields["pts"][:, :, 1] > 0.0, eta_plus, eta_minus)
    integrand = fields["u"][:, :, 0] * (fields["p"] - eta_bar)
    return float(np.sum(fields["w"] * integrand))


def varkappa1_cross_integral(chi: CellSolution, beta: CellSolution) -> float:
    """-2 int (sigma_{chi, eta - etabar} . e1, beta + y2 e1) over the strip."""
    space = chi.solution.space
    mesh = chi.mesh
    eta_plus = band_integral(space, chi.solution.p, *_top_band(mesh), average=True)
    eta_minus = band_integral(space, chi.solution.p, *_bottom_band(mesh),
                              average=True)
    fields = eval_on_quadrature(space, u=chi.solution.u, p=chi.solution.p,
                                grad=True)
    bf = eval_on_quadrature(beta.solution.space, u=beta.solution.u)
    eta_bar = np.where(fields["pts"][:, :, 1] > 0.0, eta_plus, eta_minus)
    sig1 = fields["gradu"][:, :, :, 0].copy()          # d(chi)/dy1
    sig1[:, :, 0] -= fields["p"] - eta_bar
    test = bf["u"].copy()
    test[:, :, 0] += fields["pts"][:, :, 1]            # beta + y2 e1
    integrand = np.einsum("mqc,mqc->mq", sig1, test)
    return -2.0 * float(np.sum(fields["w"] * integrand))


def identity_report(beta, upsilon, chi, varkappa=None,
                    constants: CellConstants | None = None,
                    sections=(-5.0, -2.5, -1.0, 1.0, 2.5, 5.0)) -> dict:
    """Residuals of the averaged identities the cell solutions must satisfy.

    Keys map to scalar residuals (absolute or relative as noted); the caller
    decides pass/fail thresholds.
    """
    from .fem import l2_norm_diff

    c = constants or extract_constants(beta, upsilon, chi, varkappa)
    rep = {}
    rep["beta2_section_max"] = max(
        abs(section_average(beta, 1, y)) for y in sections
    )
    rep["ups2_section_max"] = max(
        abs(section_average(upsilon, 1, y)) for y in sections
    )
    pi_norm = l2_norm_diff(beta.solution.space, beta.solution.p, None)
    varpi_norm = l2_norm_diff(upsilon.solution.space, upsilon.solution.p, None)
    rep["pi_section_max_rel"] = max(
        abs(section_average(beta, "p", y)) for y in sections
    ) / max(pi_norm, 1e-30)
    rep["varpi_section_max_rel"] = max(
        abs(section_average(upsilon, "p", y)) for y in sections
    ) / max(varpi_norm, 1e-30)

    jump = c.beta1_plus - c.beta1_minus
    target = -(c.obstacle_area + c.beta_grad_energy)
    rep["beta1_jump_identity_rel"] = abs(jump - target) / abs(target)

    rep["ups1_bottom_energy_rel"] = (
        abs(c.ups1_minus - c.ups_grad_energy) / abs(c.ups_grad_energy)
    )
    rep["ups_jump_vs_beta_bottom_rel"] = (
        abs((c.ups1_plus - c.ups1_minus) - c.beta1_minus) / abs(c.beta1_minus)
    )
    rep["chi_energy_vs_eta_jump_rel"] = (
        abs(c.chi_grad_energy - c.eta_jump) / abs(c.eta_jump)
    )

    # far-field flatness of the through-flow corrector (should be -e2)
    top = _top_band(chi.mesh)
    ys = np.linspace(top[0], top[1], 5)
    chi2 = [section_average(chi, 1, y) for y in ys]
    rep["chi2_farfield_dev"] = float(max(abs(v + 1.0) for v in chi2))

    if varkappa is not None:
        # verified orientation: the far-field pressure jump of the
        # second-order corrector is minus the through-flow jump, shifted by
        # the cross integral
        mu_target = -c.eta_jump - 2.0 * chi_cross_integral(chi)
        rep["mu_jump_identity_rel"] = abs(c.mu_jump - mu_target) / abs(mu_target)
        k_target = varkappa1_cross_integral(chi, beta)
        denom = max(abs(k_target), 1e-12)
        rep["varkappa1_jump_identity_rel"] = (
            abs(c.varkappa1_jump - k_target) / denom
        )
        vtop = _top_band(varkappa.mesh)
        ys = np.linspace(vtop[0], vtop[1], 5)
        k1 = [section_average(varkappa, 0, y) for y in ys]
        rep["varkappa_farfield_variance"] = float(np.var(k1))
    return rep


def solve_all(strip_mesh: Mesh, config: SolverConfig | None = None,
              with_varkappa=True, threads=1):
    """Run the cell solves (optionally the second-order one) and extract.

    The three independent solves may run concurrently when ``threads`` > 1;
    results are deterministic either way.  Returns (solutions dict,
    constants).
    """
    jobs = {
        "beta": lambda: solve_beta(strip_mesh, config),
        "upsilon": lambda: solve_upsilon(strip_mesh, config),
        "chi": lambda: solve_chi(strip_mesh, config),
    }
    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as ex:
            futures = {k: ex.submit(fn) for k, fn in jobs.items()}
            sols = {k: f.result() for k, f in futures.items()}
    else:
        sols = {k: fn() for k, fn in jobs.items()}
    if with_varkappa:
        sols["varkappa"] = solve_varkappa(strip_mesh, sols["chi"], config)
    constants = extract_constants(sols["beta"], sols["upsilon"], sols["chi"],
                                  sols.get("varkappa"))
    return sols, constants


def write_constants(constants: CellConstants, path, header_lines=()):
    """Flat key=value dump of the homogenized constants."""
    lines = [f"# {h}" for h in header_lines]
    lines += [f"{k}={float(v)!r}" for k, v in constants.as_dict().items()]
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_constants(path) -> CellConstants:
    vals = {}
    with open(path) as fh:
        for ln in fh:
            ln = ln.strip()
            if not ln or ln.startswith("#"):
                continue
            k, v = ln.split("=", 1)
            vals[k] = float(v)
    return CellConstants(**vals)
