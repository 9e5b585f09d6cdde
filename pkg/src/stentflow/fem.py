"""Taylor-Hood finite elements: spaces, assembly, constraints, norms.

Velocity is continuous piecewise-quadratic (nodes at vertices and edge
midpoints, two components in component-major blocks), pressure continuous
piecewise-linear on the same triangulation.  The momentum weak form uses the
gradient (non-symmetric) tensor grad(u) - p I, so the natural condition on a
pressure-driven side is exactly p = h whenever the normal velocity has zero
normal derivative there.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from .errors import (
    ConflictingConstraints,
    PointLocationFailure,
    UnassembledTag,
)
from .geometry import BoundaryTag, Mesh, cross2

# ----------------------------------------------------------------------------
# quadrature (order-4 six-point triangle rule, 3-point Gauss on edges)
# ----------------------------------------------------------------------------

_A1 = 0.445948490915965
_A2 = 0.091576213509771
TRI_QP = np.array(
    [
        [1 - 2 * _A1, _A1, _A1],
        [_A1, 1 - 2 * _A1, _A1],
        [_A1, _A1, 1 - 2 * _A1],
        [1 - 2 * _A2, _A2, _A2],
        [_A2, 1 - 2 * _A2, _A2],
        [_A2, _A2, 1 - 2 * _A2],
    ]
)
TRI_QW = np.array([0.223381589678011] * 3 + [0.109951743655322] * 3)

_G = np.sqrt(3.0 / 5.0)
EDGE_QP = np.array([0.5 * (1 - _G), 0.5, 0.5 * (1 + _G)])
EDGE_QW = np.array([5.0 / 18.0, 8.0 / 18.0, 5.0 / 18.0])

# local edge k connects vertices _EDGE_VERTS[k]
_EDGE_VERTS = ((1, 2), (2, 0), (0, 1))


def p2_basis(lam: np.ndarray) -> np.ndarray:
    """P2 shape functions at barycentric points lam (..., 3) -> (..., 6)."""
    lam = np.asarray(lam)
    v = lam * (2 * lam - 1)
    e = np.stack(
        [4 * lam[..., a] * lam[..., b] for a, b in _EDGE_VERTS], axis=-1
    )
    return np.concatenate([v, e], axis=-1)


def _p2_grad_coeff(lam: np.ndarray) -> np.ndarray:
    """Coefficients C with grad(phi_i) = sum_j C[i, j] grad(lam_j)."""
    C = np.zeros(lam.shape[:-1] + (6, 3))
    for i in range(3):
        C[..., i, i] = 4 * lam[..., i] - 1
    for k, (a, b) in enumerate(_EDGE_VERTS):
        C[..., 3 + k, a] = 4 * lam[..., b]
        C[..., 3 + k, b] = 4 * lam[..., a]
    return C


_TRI_C = _p2_grad_coeff(TRI_QP)        # (q, 6, 3)
_TRI_P2 = p2_basis(TRI_QP)             # (q, 6)
_TRI_P1 = TRI_QP                       # (q, 3)


def p2_edge_trace(t: np.ndarray) -> np.ndarray:
    """Trace shape functions on an edge (a, b, midpoint) at parameters t."""
    t = np.asarray(t)
    return np.stack([(1 - t) * (1 - 2 * t), t * (2 * t - 1), 4 * t * (1 - t)], axis=-1)


# ----------------------------------------------------------------------------
# boundary conditions
# ----------------------------------------------------------------------------


@dataclass(frozen=True)
class BC:
    """One boundary condition; build via the class-method constructors."""

    kind: str
    value: object = None
    partner: BoundaryTag | None = None

    @classmethod
    def dirichlet(cls, value=(0.0, 0.0)):
        """Fix both velocity components (value: pair or callable(x, y))."""
        return cls("dirichlet", value)

    @classmethod
    def pressure(cls, h=0.0):
        """Zero tangential velocity; natural pressure datum h."""
        return cls("pressure", h)

    @classmethod
    def normal(cls, value=0.0):
        """Fix the boundary-normal velocity component, tangential natural."""
        return cls("normal", value)

    @classmethod
    def periodic(cls, partner: BoundaryTag):
        return cls("periodic", None, partner)

    @classmethod
    def natural(cls):
        return cls("natural")


@dataclass
class FESpace:
    """Velocity/pressure DOF layout plus constraint bookkeeping.

    Velocity nodes are the mesh vertices followed by edge midpoints; DOF of
    component c at node n is ``c * n_vnode + n``.  Pressure DOFs are the
    vertices.
    """

    mesh: Mesh
    bc_spec: dict
    edges: np.ndarray = field(init=False)
    tri_edges: np.ndarray = field(init=False)
    node_xy: np.ndarray = field(init=False)
    fixed_dofs: np.ndarray = field(init=False)
    fixed_vals: np.ndarray = field(init=False)
    vel_pairs: np.ndarray = field(init=False)   # (k, 2) slave, master (node ids)
    p_pairs: np.ndarray = field(init=False)
    pressure_kernel: bool = field(init=False)

    @property
    def n_vnode(self):
        return self.mesh.n_vertices + len(self.edges)

    @property
    def n_vel(self):
        return 2 * self.n_vnode

    @property
    def n_p(self):
        return self.mesh.n_vertices

    def vdof(self, comp, nodes):
        return comp * self.n_vnode + np.asarray(nodes)

    def edge_index(self):
        """Map from sorted vertex pair to midpoint-node index offset."""
        return {tuple(e): i for i, e in enumerate(map(tuple, self.edges))}


def _build_edges(tris):
    e = np.concatenate([tris[:, [1, 2]], tris[:, [2, 0]], tris[:, [0, 1]]])
    e = np.sort(e, axis=1)
    uniq, inv = np.unique(e, axis=0, return_inverse=True)
    tri_edges = inv.reshape(3, -1).T
    return uniq, tri_edges


def build_space(mesh: Mesh, bc_spec: dict) -> FESpace:
    """Create the Taylor-Hood space and populate its constraint sets.

    ``bc_spec`` maps each boundary tag of the mesh to a :class:`BC`.  On
    axis-aligned sides ``pressure`` fixes the boundary-parallel component and
    ``normal`` the perpendicular one.  Full Dirichlet wins at corners where
    it meets a component constraint; two component constraints may coexist
    unless they disagree on the same component.
    """
    space = FESpace.__new__(FESpace)
    space.mesh = mesh
    space.bc_spec = dict(bc_spec)
    space.edges, space.tri_edges = _build_edges(mesh.triangles.astype(np.int64))
    mids = 0.5 * (mesh.vertices[space.edges[:, 0]] + mesh.vertices[space.edges[:, 1]])
    space.node_xy = np.concatenate([mesh.vertices, mids], axis=0)

    eidx = space.edge_index()
    n_vert = mesh.n_vertices

    # per velocity DOF: (priority, value).  Full Dirichlet (2) wins over
    # component constraints (1); interface Dirichlet (3) wins at the corner
    # vertices where the interface data meets a wall, so each macroscopic
    # solve keeps its own one-sided interface trace there.
    best: dict[int, tuple[int, float]] = {}

    def impose(dof, value, priority):
        dof = int(dof)
        cur = best.get(dof)
        if cur is None or priority > cur[0]:
            best[dof] = (priority, value)
        elif priority == cur[0] and abs(cur[1] - value) > 1e-12:
            raise ConflictingConstraints(
                f"velocity DOF {dof}: {cur[1]} vs {value}"
            )

    def edge_nodes(a, b):
        mid = eidx[tuple(sorted((int(a), int(b))))] + n_vert
        return int(a), int(b), mid

    periodic_tags = []
    for tag in set(mesh.boundary_tags):
        if tag not in bc_spec:
            continue
        bc = bc_spec[tag]
        if bc.kind == "periodic":
            periodic_tags.append((tag, bc.partner))

    for (a, b), tag in zip(mesh.boundary_edges, mesh.boundary_tags):
        bc = bc_spec.get(tag)
        if bc is None:
            continue
        nodes = edge_nodes(a, b)
        dx, dy = (mesh.vertices[b] - mesh.vertices[a])
        horizontal = abs(dy) <= abs(dx)
        if bc.kind == "dirichlet":
            prio = 3 if tag is BoundaryTag.GAMMA0 else 2
            for nd in nodes:
                x, y = space.node_xy[nd]
                val = bc.value(x, y) if callable(bc.value) else bc.value
                impose(nd, float(val[0]), prio)
                impose(space.n_vnode + nd, float(val[1]), prio)
        elif bc.kind == "pressure":
            comp = 0 if horizontal else 1       # boundary-parallel component
            for nd in nodes:
                impose(comp * space.n_vnode + nd, 0.0, 1)
        elif bc.kind == "normal":
            comp = 1 if horizontal else 0       # boundary-normal component
            for nd in nodes:
                x, y = space.node_xy[nd]
                val = bc.value(x, y) if callable(bc.value) else bc.value
                impose(comp * space.n_vnode + nd, float(val), 1)
        elif bc.kind in ("natural", "periodic"):
            pass
        else:
            raise ValueError(f"unknown bc kind {bc.kind!r}")

    # periodic identification: match boundary nodes of the two tags by the
    # coordinate along the boundary
    vel_pairs = []
    p_pairs = []
    for tag, partner in periodic_tags:
        if bc_spec.get(partner) is not None and bc_spec[partner].kind == "periodic":
            if tag.value < partner.value:
                continue  # handle each pair once, slave = lexicographically larger
        slave_nodes = _tag_nodes(mesh, space, tag)
        master_nodes = _tag_nodes(mesh, space, partner)
        if len(slave_nodes) != len(master_nodes):
            raise ConflictingConstraints(
                f"periodic tags {tag}/{partner}: node counts differ"
            )
        s_xy = space.node_xy[slave_nodes]
        m_xy = space.node_xy[master_nodes]
        axis = 1 if np.ptp(s_xy[:, 1]) > np.ptp(s_xy[:, 0]) else 0
        s_order = np.argsort(s_xy[:, axis])
        m_order = np.argsort(m_xy[:, axis])
        if np.max(np.abs(np.sort(s_xy[:, axis]) - np.sort(m_xy[:, axis]))) > 1e-12:
            raise ConflictingConstraints(
                f"periodic tags {tag}/{partner}: traces do not match"
            )
        for s, m in zip(slave_nodes[s_order], master_nodes[m_order]):
            p_pairs_ok = s < n_vert
            for comp in range(2):
                sd, md = comp * space.n_vnode + s, comp * space.n_vnode + m
                if sd in best or md in best:
                    # fixed wins; make sure both sides carry the constraint
                    if sd in best and md not in best:
                        best[md] = best[sd]
                    elif md in best and sd not in best:
                        best[sd] = best[md]
                    continue
                vel_pairs.append((sd, md))
            if p_pairs_ok:
                p_pairs.append((s, m))

    fixed = np.array(sorted(best), dtype=np.int64)
    space.fixed_dofs = fixed
    space.fixed_vals = np.array([best[d][1] for d in fixed])
    space.vel_pairs = np.array(vel_pairs, dtype=np.int64).reshape(-1, 2)
    space.p_pairs = np.array(p_pairs, dtype=np.int64).reshape(-1, 2)
    space.pressure_kernel = not any(
        bc.kind == "pressure" for bc in bc_spec.values()
    )
    return space


def _tag_nodes(mesh, space, tag):
    """All P2 node ids (vertices + midpoints) on edges carrying ``tag``."""
    eidx = space.edge_index()
    nodes = set()
    for (a, b), t in zip(mesh.boundary_edges, mesh.boundary_tags):
        if t is tag:
            nodes.add(int(a))
            nodes.add(int(b))
            nodes.add(eidx[tuple(sorted((int(a), int(b))))] + mesh.n_vertices)
    return np.array(sorted(nodes), dtype=np.int64)


# ----------------------------------------------------------------------------
# assembly
# ----------------------------------------------------------------------------


@dataclass
class Sources:
    """Right-hand-side data for the Stokes assembly.

    ``volume``: callable(points (n,2)) -> (n,2) body force, or None.
    ``line``: (tag, coefficient) tangential line load c * e1 along the tagged
    mesh line.  Natural pressure data comes from the space's ``pressure`` BCs.
    """

    volume: object = None
    line: tuple | None = None


@dataclass
class StokesSystem:
    space: FESpace
    A: sp.csr_matrix
    B: sp.csr_matrix
    Mp: sp.csr_matrix
    f: np.ndarray
    g: np.ndarray
    pressure_kernel: bool

    def reduced(self):
        return apply_constraints(self)


def _geometry_tables(mesh):
    p = mesh.vertices[mesh.triangles]
    v0, v1, v2 = p[:, 0], p[:, 1], p[:, 2]
    area2 = cross2(v1 - v0, v2 - v0)
    # grad lam_i = perpendicular of the opposite edge / (2 area)
    g0 = np.stack([v1[:, 1] - v2[:, 1], v2[:, 0] - v1[:, 0]], axis=1)
    g1 = np.stack([v2[:, 1] - v0[:, 1], v0[:, 0] - v2[:, 0]], axis=1)
    g2 = np.stack([v0[:, 1] - v1[:, 1], v1[:, 0] - v0[:, 0]], axis=1)
    gradlam = np.stack([g0, g1, g2], axis=1) / area2[:, None, None]
    return p, 0.5 * area2, gradlam


def assemble_stokes(space: FESpace, sources: Sources | None = None) -> StokesSystem:
    """Assemble the saddle-point system in the gradient (non-symmetric) form.

    A holds the vector Laplacian (component-block diagonal), B the pressure
    test of -div u, f the natural-pressure boundary terms plus optional line
    and volume loads, g the (zero) divergence data.  Every boundary tag of
    the mesh must be covered by the space's bc_spec.
    """
    mesh = space.mesh
    for tag in set(mesh.boundary_tags):
        if tag not in space.bc_spec:
            raise UnassembledTag(f"no boundary condition for tag {tag}")
    sources = sources or Sources()

    tris = mesh.triangles.astype(np.int64)
    n_vert = mesh.n_vertices
    nodes = np.concatenate([tris, space.tri_edges + n_vert], axis=1)  # (M, 6)
    _, area, gradlam = _geometry_tables(mesh)
    M = len(tris)

    K = np.zeros((M, 6, 6))
    Bx = np.zeros((M, 3, 6))
    By = np.zeros((M, 3, 6))
    for q in range(len(TRI_QW)):
        dphi = np.einsum("ij,mjd->mid", _TRI_C[q], gradlam)   # (M, 6, 2)
        w = TRI_QW[q] * area
        K += w[:, None, None] * np.einsum("mid,mjd->mij", dphi, dphi)
        lam = _TRI_P1[q]
        Bx -= w[:, None, None] * lam[None, :, None] * dphi[:, None, :, 0]
        By -= w[:, None, None] * lam[None, :, None] * dphi[:, None, :, 1]

    rows = np.repeat(nodes, 6, axis=1).ravel()
    cols = np.tile(nodes, (1, 6)).ravel()
    n_vnode = space.n_vnode
    Ksp = sp.coo_matrix((K.ravel(), (rows, cols)), shape=(n_vnode, n_vnode)).tocsr()
    A = sp.block_diag([Ksp, Ksp], format="csr")

    prow = np.repeat(tris, 6, axis=1).ravel()
    pcol = np.tile(nodes, (1, 3)).ravel()
    Bxs = sp.coo_matrix((Bx.ravel(), (prow, pcol)), shape=(n_vert, n_vnode))
    Bys = sp.coo_matrix((By.ravel(), (prow, pcol)), shape=(n_vert, n_vnode))
    B = sp.hstack([Bxs, Bys], format="csr")

    # P1 pressure mass matrix (Schur preconditioner)
    Mp_el = np.zeros((M, 3, 3))
    for q in range(len(TRI_QW)):
        lam = _TRI_P1[q]
        Mp_el += TRI_QW[q] * area[:, None, None] * np.outer(lam, lam)[None]
    Mp = sp.coo_matrix(
        (Mp_el.ravel(), (np.repeat(tris, 3, axis=1).ravel(),
                         np.tile(tris, (1, 3)).ravel())),
        shape=(n_vert, n_vert),
    ).tocsr()

    f = np.zeros(space.n_vel)
    g = np.zeros(n_vert)

    # natural pressure data: f -= int_Gamma h (v . n)
    eidx = space.edge_index()
    for (a, b), tag in zip(mesh.boundary_edges, mesh.boundary_tags):
        bc = space.bc_spec.get(tag)
        if bc is None or bc.kind != "pressure":
            continue
        pa, pb = mesh.vertices[a], mesh.vertices[b]
        d = pb - pa
        length = float(np.hypot(*d))
        nrm = np.array([d[1], -d[0]]) / length   # outward (domain on the left)
        mid = eidx[tuple(sorted((int(a), int(b))))] + n_vert
        tr = p2_edge_trace(EDGE_QP)              # (q, 3)
        pts = pa[None, :] + EDGE_QP[:, None] * d[None, :]
        h = (np.array([bc.value(x, y) for x, y in pts])
             if callable(bc.value) else np.full(len(pts), float(bc.value)))
        load = length * np.einsum("q,q,qi->i", EDGE_QW, h, tr)
        for comp in range(2):
            if abs(nrm[comp]) < 1e-14:
                continue
            for loc, nd in enumerate((int(a), int(b), mid)):
                f[comp * n_vnode + nd] -= nrm[comp] * load[loc]

    # line source c * e1 along a tagged mesh line
    if sources.line is not None:
        tag, coeff = sources.line
        for (a, b) in space.mesh.edges_with_tag(tag):
            pa, pb = mesh.vertices[a], mesh.vertices[b]
            length = float(np.hypot(*(pb - pa)))
            mid = eidx[tuple(sorted((int(a), int(b))))] + n_vert
            tr = p2_edge_trace(EDGE_QP)
            load = coeff * length * np.einsum("q,qi->i", EDGE_QW, tr)
            for loc, nd in enumerate((int(a), int(b), mid)):
                f[nd] += load[loc]             # component 0

    # volumetric body force
    if sources.volume is not None:
        p = mesh.vertices[tris]
        fe = np.zeros((M, 2, 6))
        for q in range(len(TRI_QW)):
            pts = np.einsum("j,mjd->md", TRI_QP[q], p)
            fv = np.asarray(sources.volume(pts))
            w = TRI_QW[q] * area
            fe += w[:, None, None] * fv[:, :, None] * _TRI_P2[q][None, None, :]
        for comp in range(2):
            np.add.at(f, comp * n_vnode + nodes, fe[:, comp, :])

    return StokesSystem(
        space=space, A=A, B=B, Mp=Mp, f=f, g=g,
        pressure_kernel=space.pressure_kernel,
    )


# ----------------------------------------------------------------------------
# constraint reduction
# ----------------------------------------------------------------------------


@dataclass
class ReducedSystem:
    """Constrained saddle-point system plus recovery operators."""

    system: StokesSystem
    A: sp.csr_matrix
    B: sp.csr_matrix
    Mp: sp.csr_matrix
    f: np.ndarray
    g: np.ndarray
    Tu: sp.csr_matrix
    Tp: sp.csr_matrix
    u_fix: np.ndarray
    pressure_kernel: bool

    def expand(self, u_r, p_r):
        return self.Tu @ u_r + self.u_fix, self.Tp @ p_r


def _prolongation(n, fixed, pairs):
    """Maps reduced DOFs to full: identity on free DOFs, copy to slaves."""
    target = np.arange(n, dtype=np.int64)
    for s, m in pairs:
        target[s] = m
    is_fixed = np.zeros(n, dtype=bool)
    is_fixed[fixed] = True
    is_slave = np.zeros(n, dtype=bool)
    if len(pairs):
        is_slave[pairs[:, 0]] = True
    free = ~(is_fixed | is_slave)
    col_of = -np.ones(n, dtype=np.int64)
    col_of[free] = np.arange(free.sum())
    rows, cols = [], []
    for d in range(n):
        t = target[d]
        if is_fixed[t] or (is_slave[d] and is_fixed[t]):
            continue
        if col_of[t] >= 0:
            rows.append(d)
            cols.append(col_of[t])
    data = np.ones(len(rows))
    return sp.csr_matrix((data, (rows, cols)), shape=(n, free.sum()))


def apply_constraints(system: StokesSystem) -> ReducedSystem:
    """Eliminate Dirichlet DOFs and fold periodic slaves into masters.

    The reduced velocity operator stays symmetric; the right-hand side gets
    the usual Dirichlet correction; pressure periodicity is folded the same
    way.  ``expand`` recovers full-length vectors with constrained DOFs set
    to their imposed values.
    """
    space = system.space
    Tu = _prolongation(space.n_vel, space.fixed_dofs, space.vel_pairs)
    Tp = _prolongation(space.n_p, np.empty(0, dtype=np.int64), space.p_pairs)
    u_fix = np.zeros(space.n_vel)
    u_fix[space.fixed_dofs] = space.fixed_vals
    A_r = (Tu.T @ system.A @ Tu).tocsr()
    B_r = (Tp.T @ system.B @ Tu).tocsr()
    Mp_r = (Tp.T @ system.Mp @ Tp).tocsr()
    f_r = Tu.T @ (system.f - system.A @ u_fix)
    g_r = Tp.T @ (system.g - system.B @ u_fix)
    return ReducedSystem(
        system=system, A=A_r, B=B_r, Mp=Mp_r, f=f_r, g=g_r,
        Tu=Tu, Tp=Tp, u_fix=u_fix, pressure_kernel=system.pressure_kernel,
    )


def export_matrix(mat, path):
    """MatrixMarket coordinate text dump (debugging aid)."""
    from scipy.io import mmwrite

    mmwrite(path, sp.coo_matrix(mat))


# ----------------------------------------------------------------------------
# field evaluation and norms
# ----------------------------------------------------------------------------


class PointLocator:
    """Locates points in a triangulation via a centroid kd-tree."""

    def __init__(self, mesh: Mesh, n_candidates=24):
        self.mesh = mesh
        p = mesh.vertices[mesh.triangles]
        self.tree = cKDTree(p.mean(axis=1))
        self.k = min(n_candidates, mesh.n_triangles)
        _, _, self.gradlam = _geometry_tables(mesh)
        self.v0 = p[:, 0]

    def _bary(self, t, pts):
        d = pts - self.v0[t]
        l1 = np.einsum("md,md->m", self.gradlam[t, 1], d)
        l2 = np.einsum("md,md->m", self.gradlam[t, 2], d)
        return np.stack([1.0 - l1 - l2, l1, l2], axis=1)

    def locate(self, pts, tol=1e-10):
        """Return (triangle index, barycentric coords) for each point."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        _, cand = self.tree.query(pts, k=self.k)
        cand = np.asarray(cand).reshape(len(pts), -1)
        tri = -np.ones(len(pts), dtype=np.int64)
        lam = np.zeros((len(pts), 3))
        remaining = np.arange(len(pts))
        for j in range(cand.shape[1]):
            if not len(remaining):
                break
            t = cand[remaining, j]
            lm = self._bary(t, pts[remaining])
            ok = np.all(lm >= -tol, axis=1)
            hit = remaining[ok]
            tri[hit] = t[ok]
            lam[hit] = lm[ok]
            remaining = remaining[~ok]
        for i in remaining:   # rare: exhaustive scan before giving up
            lm = self._bary(np.arange(self.mesh.n_triangles), pts[i][None].repeat(
                self.mesh.n_triangles, axis=0))
            ok = np.nonzero(np.all(lm >= -tol, axis=1))[0]
            if len(ok):
                tri[i] = ok[0]
                lam[i] = lm[ok[0]]
            else:
                raise PointLocationFailure(f"point outside mesh: {pts[i]}")
        return tri, lam


class VelocityField:
    """Pointwise evaluator of a discrete P2 velocity field."""

    def __init__(self, space: FESpace, u: np.ndarray, locator=None):
        self.space = space
        self.u = u
        self.locator = locator or PointLocator(space.mesh)
        tris = space.mesh.triangles.astype(np.int64)
        self.nodes = np.concatenate(
            [tris, space.tri_edges + space.mesh.n_vertices], axis=1
        )

    def __call__(self, pts):
        tri, lam = self.locator.locate(pts)
        phi = p2_basis(lam)                      # (n, 6)
        nd = self.nodes[tri]                     # (n, 6)
        ux = np.einsum("ni,ni->n", phi, self.u[nd])
        uy = np.einsum("ni,ni->n", phi, self.u[self.space.n_vnode + nd])
        return np.stack([ux, uy], axis=1)


class PressureField:
    """Pointwise evaluator of a discrete P1 pressure field."""

    def __init__(self, space: FESpace, p: np.ndarray, locator=None):
        self.space = space
        self.p = p
        self.locator = locator or PointLocator(space.mesh)

    def __call__(self, pts):
        tri, lam = self.locator.locate(pts)
        nd = self.space.mesh.triangles[tri]
        return np.einsum("ni,ni->n", lam, self.p[nd])


def quad_points(mesh: Mesh, tri_sel=None):
    """Physical quadrature points and weights: (M, q, 2), (M, q)."""
    tris = mesh.triangles if tri_sel is None else mesh.triangles[tri_sel]
    p = mesh.vertices[tris]
    area = 0.5 * cross2(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    pts = np.einsum("qj,mjd->mqd", TRI_QP, p)
    w = TRI_QW[None, :] * area[:, None]
    return pts, w


def l2_norm_diff(space: FESpace, u, field_b, region=None, component=None):
    """L2 norm of (discrete field - reference) over a region of the mesh.

    ``u`` is a velocity coefficient vector (length n_vel) or pressure vector
    (length n_p).  ``field_b`` is a callable(points) returning matching
    values (or None for a plain norm).  ``region`` selects triangles by a
    centroid predicate.
    """
    mesh = space.mesh
    tris = mesh.triangles.astype(np.int64)
    sel = None
    if region is not None:
        cent = mesh.vertices[tris].mean(axis=1)
        sel = region(cent)
    pts, w = quad_points(mesh, sel)
    tsel = tris if sel is None else tris[sel]
    esel = space.tri_edges if sel is None else space.tri_edges[sel]
    nodes6 = np.concatenate([tsel, esel + mesh.n_vertices], axis=1)
    M, q = w.shape

    if len(u) == space.n_vel:
        vals = np.empty((M, q, 2))
        for comp in range(2):
            coeff = u[comp * space.n_vnode + nodes6]          # (M, 6)
            vals[:, :, comp] = np.einsum("qi,mi->mq", _TRI_P2, coeff)
        ref = (np.zeros((M * q, 2)) if field_b is None
               else np.asarray(field_b(pts.reshape(-1, 2))))
        diff = vals - ref.reshape(M, q, 2)
        if component is not None:
            diff = diff[:, :, component : component + 1]
        return float(np.sqrt(np.sum(w[:, :, None] * diff**2)))
    if len(u) == space.n_p:
        coeff = u[tsel]
        vals = np.einsum("qi,mi->mq", _TRI_P1, coeff)
        ref = (np.zeros(M * q) if field_b is None
               else np.asarray(field_b(pts.reshape(-1, 2))))
        diff = vals - ref.reshape(M, q)
        return float(np.sqrt(np.sum(w * diff**2)))
    raise ValueError("coefficient vector length matches neither space")


def integrate_field(space: FESpace, u, region=None, component=0, power=1):
    """Integral of a component of a discrete field over a triangle subset."""
    mesh = space.mesh
    tris = mesh.triangles.astype(np.int64)
    sel = None
    if region is not None:
        cent = mesh.vertices[tris].mean(axis=1)
        sel = region(cent)
    pts, w = quad_points(mesh, sel)
    tsel = tris if sel is None else tris[sel]
    if len(u) == space.n_p:
        vals = np.einsum("qi,mi->mq", _TRI_P1, u[tsel])
    else:
        esel = space.tri_edges if sel is None else space.tri_edges[sel]
        nodes6 = np.concatenate([tsel, esel + mesh.n_vertices], axis=1)
        vals = np.einsum("qi,mi->mq", _TRI_P2, u[component * space.n_vnode + nodes6])
    return float(np.sum(w * vals**power))


# ----------------------------------------------------------------------------
# line integrals: fluxes, section averages, band means
# ----------------------------------------------------------------------------


def edge_flux(space: FESpace, u, edges, normal=None):
    """Line integral of u . n over the given edges.

    With ``normal=None`` the edge-orientation outward normal is used
    (boundary edges keep the domain on their left); otherwise the fixed
    vector ``normal`` applies to every edge.
    """
    mesh = space.mesh
    eidx = space.edge_index()
    total = 0.0
    tr = p2_edge_trace(EDGE_QP)
    for a, b in edges:
        pa, pb = mesh.vertices[a], mesh.vertices[b]
        d = pb - pa
        length = float(np.hypot(*d))
        nrm = (np.array([d[1], -d[0]]) / length) if normal is None else np.asarray(normal)
        mid = eidx[tuple(sorted((int(a), int(b))))] + mesh.n_vertices
        nds = np.array([a, b, mid], dtype=np.int64)
        un = nrm[0] * u[nds] + nrm[1] * u[space.n_vnode + nds]
        total += length * float(np.einsum("q,qi,i->", EDGE_QW, tr, un))
    return total


def _clip_below(poly, axis, value):
    """Keep the part of a polygon with coordinate <= value (S-H clipping)."""
    out = []
    n = len(poly)
    for i in range(n):
        cur, nxt = poly[i], poly[(i + 1) % n]
        c_in, n_in = cur[axis] <= value, nxt[axis] <= value
        if c_in:
            out.append(cur)
        if c_in != n_in:
            t = (value - cur[axis]) / (nxt[axis] - cur[axis])
            out.append(cur + t * (nxt - cur))
    return out


def band_integral(space: FESpace, u, y0, y1, component=0, average=False):
    """Integral (or mean) of a field component over the band y0 <= y <= y1.

    Triangles are clipped against the band, so the band boundaries need not
    be mesh lines.  Works for velocity (length n_vel) and pressure (length
    n_p) coefficient vectors.
    """
    mesh = space.mesh
    tris = mesh.triangles.astype(np.int64)
    p = mesh.vertices[tris]
    ymin = p[:, :, 1].min(axis=1)
    ymax = p[:, :, 1].max(axis=1)
    sel = np.nonzero((ymax > y0 + 1e-14) & (ymin < y1 - 1e-14))[0]
    is_p = len(u) == space.n_p
    _, _, gradlam = _geometry_tables(mesh)
    total = 0.0
    area_tot = 0.0
    for t in sel:
        poly = [p[t, k] for k in range(3)]
        poly = _clip_below(poly, 1, y1)
        if len(poly) < 3:
            continue
        poly = [-np.asarray(q) for q in poly]
        poly = _clip_below(poly, 1, -y0)
        poly = [-q for q in poly]
        if len(poly) < 3:
            continue
        poly = np.asarray(poly)
        v0 = mesh.vertices[tris[t, 0]]
        if is_p:
            nds = tris[t]
            coeff = u[nds]
        else:
            nds = np.concatenate([tris[t], space.tri_edges[t] + mesh.n_vertices])
            coeff = u[component * space.n_vnode + nds]
        for k in range(1, len(poly) - 1):
            sub = np.stack([poly[0], poly[k], poly[k + 1]])
            a2 = cross2(sub[1] - sub[0], sub[2] - sub[0])
            if abs(a2) < 1e-16:
                continue
            qpts = TRI_QP @ sub
            d = qpts - v0
            l1 = d @ gradlam[t, 1]
            l2 = d @ gradlam[t, 2]
            lam = np.stack([1 - l1 - l2, l1, l2], axis=1)
            vals = (lam @ coeff) if is_p else (p2_basis(lam) @ coeff)
            total += 0.5 * abs(a2) * float(TRI_QW @ vals)
            area_tot += 0.5 * abs(a2)
    if average:
        return float(total / area_tot) if area_tot else 0.0
    return float(total)


def section_average(space: FESpace, u, y2, component=0):
    """Horizontal average: integral of the field over the line y = y2.

    Each triangle crossed by the line contributes a Gauss-integrated
    segment.  A triangle with a whole edge on the line contributes only if
    it lies above the line, so shared mesh-line edges count once.  The
    domain width is 1, hence the line integral equals the average.
    """
    mesh = space.mesh
    tris = mesh.triangles.astype(np.int64)
    p = mesh.vertices[tris]
    ymin = p[:, :, 1].min(axis=1)
    ymax = p[:, :, 1].max(axis=1)
    tol = 1e-13
    sel = np.nonzero((ymin <= y2 + tol) & (ymax >= y2 - tol))[0]
    _, _, gradlam = _geometry_tables(mesh)
    is_p = len(u) == space.n_p
    total = 0.0
    for t in sel:
        yv = p[t, :, 1]
        on = np.abs(yv - y2) < tol
        if on.sum() >= 2:
            if yv.sum() - 3 * y2 < tol:   # triangle below the line: skip
                continue
            xs = p[t, on, 0]
            x0, x1 = xs.min(), xs.max()
        else:
            pts = []
            for k in range(3):
                a, b = p[t, k], p[t, (k + 1) % 3]
                ya, yb = a[1], b[1]
                if (ya - y2) * (yb - y2) < 0:
                    s = (y2 - ya) / (yb - ya)
                    pts.append(a[0] + s * (b[0] - a[0]))
            pts.extend(p[t, on, 0])
            if len(pts) < 2:
                continue
            x0, x1 = min(pts), max(pts)
        if x1 - x0 < 1e-14:
            continue
        xq = x0 + EDGE_QP * (x1 - x0)
        qpts = np.stack([xq, np.full(3, y2)], axis=1)
        d = qpts - mesh.vertices[tris[t, 0]]
        l1 = d @ gradlam[t, 1]
        l2 = d @ gradlam[t, 2]
        lam = np.stack([1 - l1 - l2, l1, l2], axis=1)
        if is_p:
            vals = lam @ u[tris[t]]
        else:
            nds = np.concatenate([tris[t], space.tri_edges[t] + mesh.n_vertices])
            vals = p2_basis(lam) @ u[component * space.n_vnode + nds]
        total += (x1 - x0) * float(EDGE_QW @ vals)
    return total


def energy_norm_sq(system: StokesSystem, u):
    """Gradient energy u^T A u of a full-length velocity vector."""
    return float(u @ (system.A @ u))


def scalar_p2_stiffness(space: FESpace) -> sp.csr_matrix:
    """Stiffness matrix of one scalar P2 component (grad-grad form)."""
    mesh = space.mesh
    tris = mesh.triangles.astype(np.int64)
    nodes = np.concatenate([tris, space.tri_edges + mesh.n_vertices], axis=1)
    _, area, gradlam = _geometry_tables(mesh)
    M = len(tris)
    K = np.zeros((M, 6, 6))
    for q in range(len(TRI_QW)):
        dphi = np.einsum("ij,mjd->mid", _TRI_C[q], gradlam)
        K += (TRI_QW[q] * area)[:, None, None] * np.einsum(
            "mid,mjd->mij", dphi, dphi
        )
    rows = np.repeat(nodes, 6, axis=1).ravel()
    cols = np.tile(nodes, (1, 6)).ravel()
    n = space.n_vnode
    return sp.coo_matrix((K.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def gradient_energy(space: FESpace, u) -> float:
    """Squared L2 norm of the velocity gradient, by stiffness quadratic form."""
    K = scalar_p2_stiffness(space)
    ux, uy = u[: space.n_vnode], u[space.n_vnode :]
    return float(ux @ (K @ ux) + uy @ (K @ uy))


def eval_on_quadrature(space: FESpace, u=None, p=None, grad=False, tri_sel=None):
    """Discrete fields at the volume quadrature points, element by element.

    Returns a dict with physical points ``pts`` (M, q, 2), weights ``w``
    (M, q), and any of ``u`` (M, q, 2), ``gradu`` (M, q, 2, 2) laid out as
    gradu[..., i, j] = d u_i / d x_j, and ``p`` (M, q).
    """
    mesh = space.mesh
    tris = mesh.triangles.astype(np.int64)
    sel = slice(None) if tri_sel is None else tri_sel
    tsel = tris[sel]
    esel = space.tri_edges[sel]
    p_geom = mesh.vertices[tsel]
    area = 0.5 * cross2(p_geom[:, 1] - p_geom[:, 0], p_geom[:, 2] - p_geom[:, 0])
    _, _, gradlam_all = _geometry_tables(mesh)
    gradlam = gradlam_all[sel]
    out = {
        "pts": np.einsum("qj,mjd->mqd", TRI_QP, p_geom),
        "w": TRI_QW[None, :] * area[:, None],
    }
    nodes6 = np.concatenate([tsel, esel + mesh.n_vertices], axis=1)
    if u is not None:
        coeffs = np.stack([u[c * space.n_vnode + nodes6] for c in range(2)])
        out["u"] = np.einsum("qi,cmi->mqc", _TRI_P2, coeffs)
        if grad:
            dphi = np.einsum("qij,mjd->mqid", _TRI_C, gradlam)
            out["gradu"] = np.einsum("mqid,cmi->mqcd", dphi, coeffs)
    if p is not None:
        out["p"] = np.einsum("qi,mi->mq", _TRI_P1, p[tsel])
    return out


def velocity_gradient_at(space: FESpace, u, pts, locator=None):
    """Velocity gradient at arbitrary points: (n, 2, 2) with [i, j] = du_i/dx_j."""
    locator = locator or PointLocator(space.mesh)
    tri, lam = locator.locate(pts)
    mesh = space.mesh
    tris = mesh.triangles.astype(np.int64)
    _, _, gradlam = _geometry_tables(mesh)
    C = _p2_grad_coeff(lam)                       # (n, 6, 3)
    dphi = np.einsum("nij,njd->nid", C, gradlam[tri])
    nodes6 = np.concatenate([tris[tri], space.tri_edges[tri] + mesh.n_vertices],
                            axis=1)
    coeffs = np.stack([u[c * space.n_vnode + nodes6] for c in range(2)])
    return np.einsum("nid,cni->ncd", dphi, coeffs)
