"""Zero-order closed form, first-order interface corrector, averaged model.

The zero-order solution is a Poiseuille profile in the upper channel and a
constant-pressure rest state below.  The first-order corrector solves two
independent Stokes problems on the unit square above and the unit-depth
channel below, with explicit Dirichlet data on the interface built from the
homogenized constants.  Their combination u0 + eps*u1 is the averaged
first-order approximation, which carries the explicit transmural flow-rate
law.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .cell import CellConstants
from .errors import CompatibilityFailure
from .fem import (
    BC,
    PointLocator,
    PressureField,
    VelocityField,
    assemble_stokes,
    build_space,
    edge_flux,
    velocity_gradient_at,
)
from .geometry import BoundaryTag as T, Mesh, RefineSpec, rectangle_mesh
from .solvers import SolverConfig, StokesSolution, solve_stokes


@dataclass(frozen=True)
class FlowData:
    """Prescribed boundary pressures; p_out2 is ignored in the aneurysm case."""

    p_in: float = 2.0
    p_out1: float = 0.0
    p_out2: float = -1.0
    case: str = "collateral"

    def __post_init__(self):
        for v in (self.p_in, self.p_out1, self.p_out2):
            if not math.isfinite(v):
                raise ValueError("flow data must be finite")
        if self.case not in ("collateral", "aneurysm"):
            raise ValueError(f"unknown case {self.case!r}")


@dataclass
class ZeroOrder:
    """Closed-form leading-order solution.

    Velocity is a Poiseuille profile in the upper channel and zero below;
    pressure is linear in x1 above and the constant ``p_lower`` below.  The
    wall shear at the interface, (p_in - p_out1)/2, drives the first-order
    interface data.
    """

    flow: FlowData
    shear: float = field(init=False)
    p_lower: float = field(init=False)

    def __post_init__(self):
        f = self.flow
        self.shear = 0.5 * (f.p_in - f.p_out1)
        if f.case == "collateral":
            self.p_lower = f.p_out2
        else:
            # mean of the upper pressure trace: the only constant compatible
            # with mass conservation in the closed sac
            self.p_lower = f.p_out1 + 0.5 * (f.p_in - f.p_out1)

    def velocity(self, pts):
        pts = np.atleast_2d(pts)
        x2 = pts[:, 1]
        u1 = np.where((x2 >= 0.0) & (x2 <= 1.0),
                      self.shear * (1.0 - x2) * x2, 0.0)
        return np.stack([u1, np.zeros_like(u1)], axis=1)

    def pressure(self, pts):
        pts = np.atleast_2d(pts)
        f = self.flow
        upper = f.p_in * (1.0 - pts[:, 0]) + f.p_out1 * pts[:, 0]
        return np.where(pts[:, 1] >= 0.0, upper, self.p_lower)

    def pressure_jump(self, x1):
        """[p0](x1): upper trace minus the lower constant, on the interface."""
        f = self.flow
        return f.p_in * (1.0 - np.asarray(x1)) + f.p_out1 * np.asarray(x1) - self.p_lower


def zero_order(flow: FlowData, constants: CellConstants | None = None) -> ZeroOrder:
    """Closed-form zero order.

    The leading order does not depend on the homogenized constants;
    ``constants`` is accepted so all model stages share one call shape.
    """
    return ZeroOrder(flow=flow)


def interface_dirichlet(zero: ZeroOrder, constants: CellConstants, side: str):
    """First-order Dirichlet trace on the interface, as a callable of x1.

    The horizontal part is the interface shear times the slip constants of
    the requested side; the vertical part is -[p0](x1)/[eta-bar] on both
    sides (the through-flow corrector's far field is the downward unit).
    """
    if side == "plus":
        slip = constants.beta1_plus + constants.ups1_plus
    elif side == "minus":
        slip = constants.beta1_minus + constants.ups1_minus
    else:
        raise ValueError("side must be 'plus' or 'minus'")
    shear = zero.shear

    def trace(x1):
        x1 = np.asarray(x1, dtype=float)
        u1 = np.full_like(x1, shear * slip)
        u2 = -zero.pressure_jump(x1) / constants.eta_jump
        return np.stack([u1, u2], axis=-1)

    return trace


@dataclass
class FirstOrderSolution:
    """The two interface-corrector solves and their shared Dirichlet data."""

    upper: StokesSolution
    lower: StokesSolution
    mesh_upper: Mesh
    mesh_lower: Mesh
    trace_plus: object
    trace_minus: object
    eps_hint: float | None = None


def first_order_meshes(h=0.05, refine_spec: RefineSpec | None = None,
                       case="collateral"):
    """Default macroscopic corrector meshes, graded toward the interface."""
    upper = rectangle_mesh(
        0.0, 1.0, 0.0, 1.0, h,
        tags=(T.GAMMA_IN, T.GAMMA_OUT1, T.GAMMA0, T.GAMMA1),
        grade_to_y=0.0, refine_spec=refine_spec,
    )
    bottom = T.GAMMA_OUT2 if case == "collateral" else T.GAMMA2
    lower = rectangle_mesh(
        0.0, 1.0, -1.0, 0.0, h,
        tags=(T.GAMMA2, T.GAMMA2, bottom, T.GAMMA0),
        grade_to_y=0.0, refine_spec=refine_spec,
    )
    return upper, lower


def solve_first_order(mesh_upper: Mesh, mesh_lower: Mesh, zero: ZeroOrder,
                      constants: CellConstants, case=None,
                      config: SolverConfig | None = None) -> FirstOrderSolution:
    """Solve the two macroscopic corrector problems.

    Walls carry homogeneous Dirichlet data, pressure-driven sides carry zero
    tangential velocity with zero natural pressure, and the interface side of
    each mesh carries the explicit homogenized trace.  In the aneurysm case
    the lower problem is fully Dirichlet: the data must satisfy the
    divergence-free compatibility (zero net interface flux), the pressure is
    determined up to a constant, and its mean over the sac is set to zero.
    """
    case = case or zero.flow.case
    tr_plus = interface_dirichlet(zero, constants, "plus")
    tr_minus = interface_dirichlet(zero, constants, "minus")

    bc_upper = {
        T.GAMMA_IN: BC.pressure(0.0),
        T.GAMMA_OUT1: BC.pressure(0.0),
        T.GAMMA1: BC.dirichlet((0.0, 0.0)),
        T.GAMMA0: BC.dirichlet(lambda x, y: tuple(tr_plus(x))),
    }
    if case == "collateral":
        bc_lower = {
            T.GAMMA2: BC.dirichlet((0.0, 0.0)),
            T.GAMMA_OUT2: BC.pressure(0.0),
            T.GAMMA0: BC.dirichlet(lambda x, y: tuple(tr_minus(x))),
        }
    else:
        # closed sac: check compatibility of the Dirichlet data first
        flux = _trace_flux(tr_minus)
        if abs(flux) > 1e-10:
            raise CompatibilityFailure(
                f"net interface flux {flux:.3e}: lower pressure constant was "
                "not chosen as the interface mean"
            )
        bc_lower = {
            T.GAMMA2: BC.dirichlet((0.0, 0.0)),
            T.GAMMA0: BC.dirichlet(lambda x, y: tuple(tr_minus(x))),
        }

    space_u = build_space(mesh_upper, bc_upper)
    sol_u = solve_stokes(assemble_stokes(space_u), config)
    space_l = build_space(mesh_lower, bc_lower)
    sol_l = solve_stokes(assemble_stokes(space_l), config)
    if case == "aneurysm":
        from .fem import integrate_field

        area = float(np.sum(mesh_lower.signed_areas()))
        mean_p = integrate_field(space_l, sol_l.p) / area
        sol_l.p = sol_l.p - mean_p
    return FirstOrderSolution(
        upper=sol_u, lower=sol_l, mesh_upper=mesh_upper, mesh_lower=mesh_lower,
        trace_plus=tr_plus, trace_minus=tr_minus,
    )


def _trace_flux(trace, n=64):
    """Integral of the vertical trace component over the interface (exact
    Gauss on an affine integrand, but evaluated generically)."""
    from .fem import EDGE_QP, EDGE_QW

    total = 0.0
    xs = np.linspace(0.0, 1.0, n + 1)
    for a, b in zip(xs[:-1], xs[1:]):
        xq = a + EDGE_QP * (b - a)
        vals = trace(xq)[:, 1]
        total += (b - a) * float(EDGE_QW @ vals)
    return total


@dataclass
class AveragedApproximation:
    """Pointwise evaluators of u0 + eps*u1 and p0 + eps*p1 on both channels."""

    zero: ZeroOrder
    first: FirstOrderSolution
    eps: float

    def __post_init__(self):
        self._loc_u = PointLocator(self.first.mesh_upper)
        self._loc_l = PointLocator(self.first.mesh_lower)
        su, sl = self.first.upper.space, self.first.lower.space
        self._vel_u = VelocityField(su, self.first.upper.u, self._loc_u)
        self._vel_l = VelocityField(sl, self.first.lower.u, self._loc_l)
        self._pr_u = PressureField(su, self.first.upper.p, self._loc_u)
        self._pr_l = PressureField(sl, self.first.lower.p, self._loc_l)

    def _split(self, pts):
        pts = np.atleast_2d(pts)
        return pts, pts[:, 1] >= 0.0

    def velocity(self, pts):
        pts, upper = self._split(pts)
        out = self.zero.velocity(pts)
        if self.eps != 0.0:
            if upper.any():
                out[upper] += self.eps * self._vel_u(pts[upper])
            if (~upper).any():
                out[~upper] += self.eps * self._vel_l(pts[~upper])
        return out

    def pressure(self, pts):
        pts, upper = self._split(pts)
        out = self.zero.pressure(pts)
        if self.eps != 0.0:
            if upper.any():
                out[upper] += self.eps * self._pr_u(pts[upper])
            if (~upper).any():
                out[~upper] += self.eps * self._pr_l(pts[~upper])
        return out


def averaged_approximation(zero: ZeroOrder, first: FirstOrderSolution,
                           eps) -> AveragedApproximation:
    """The averaged first-order model u0 + eps*u1, p0 + eps*p1."""
    return AveragedApproximation(zero=zero, first=first, eps=float(eps))


def flowrate_formula(zero: ZeroOrder, constants: CellConstants, eps) -> float:
    """Explicit transmural flow rate through the interface.

    Q = (eps/[eta-bar]) * integral of [p0] over the interface; positive means
    flow from the upper into the lower channel.
    """
    if zero.flow.case != "collateral":
        raise ValueError("the flow-rate law applies to the collateral case")
    f = zero.flow
    mean_jump = f.p_out1 + 0.5 * (f.p_in - f.p_out1) - f.p_out2
    return eps / constants.eta_jump * mean_jump


def flowrate_first_order(first: FirstOrderSolution, eps) -> float:
    """Interface flux of the averaged approximation (n pointing downward)."""
    space = first.lower.space
    edges = first.mesh_lower.edges_with_tag(T.GAMMA0)
    return eps * edge_flux(space, first.lower.u, edges, normal=(0.0, -1.0))


def implicit_interface_report(zero: ZeroOrder, first: FirstOrderSolution,
                              constants: CellConstants, eps, x_samples=None):
    """Residuals of the derived implicit interface conditions, sampled on x1.

    Per sample: the slip-ratio mismatch between the one-sided tangential
    traces (zero by construction of the interface data) and the
    normal-velocity residual u.n + (eps/[eta-bar]) ([sigma].n, n), with the
    one-sided stresses taken from each side's own mesh at the interface.
    Diagnostic only: the implicit problem is never solved here.
    """
    if x_samples is None:
        x_samples = np.linspace(0.05, 0.95, 19)
    x = np.asarray(x_samples, dtype=float)
    su, sl = first.upper.space, first.lower.space
    pts0 = np.stack([x, np.zeros_like(x)], axis=1)

    vel_up = VelocityField(su, first.upper.u)
    vel_lo = VelocityField(sl, first.lower.u)
    tr_up = vel_up(pts0)
    tr_lo = vel_lo(pts0)
    ut_plus = eps * tr_up[:, 0]          # averaged tangential trace (u0 = 0 here)
    ut_minus = eps * tr_lo[:, 0]
    un = -eps * tr_up[:, 1]              # normal points into the lower channel

    slip_plus = constants.beta1_plus + constants.ups1_plus
    slip_minus = constants.beta1_minus + constants.ups1_minus
    slip_residual = ut_plus / slip_plus - ut_minus / slip_minus

    # one-sided sigma.n.n = du2/dx2 - p of the averaged fields at y = 0+-
    g_up = velocity_gradient_at(su, first.upper.u, pts0)[:, 1, 1]
    g_lo = velocity_gradient_at(sl, first.lower.u, pts0)[:, 1, 1]
    p_up = zero.pressure(pts0) + eps * PressureField(su, first.upper.p)(pts0)
    p_lo = zero.p_lower + eps * PressureField(sl, first.lower.p)(pts0)
    jump_signn = (eps * g_up - p_up) - (eps * g_lo - p_lo)
    # u.n = -u2; the condition reads -u2 = -(eps/[eta]) [sigma]nn
    normal_residual = un - (-(eps / constants.eta_jump) * jump_signn)

    rows = []
    for i, xi in enumerate(x):
        rows.append({
            "x1": float(xi),
            "u_t_plus": float(ut_plus[i]),
            "u_t_minus": float(ut_minus[i]),
            "u_n": float(un[i]),
            "p_jump": float(zero.pressure_jump(xi)),
            "slip_residual": float(slip_residual[i]),
            "normal_residual": float(normal_residual[i]),
        })
    return rows
