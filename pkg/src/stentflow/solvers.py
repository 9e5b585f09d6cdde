"""Saddle-point solvers and the scalar Poisson solver.

The default Stokes path is conjugate gradients on the pressure Schur
complement (Uzawa), preconditioned by the pressure mass matrix, with the
velocity block solved by a reusable sparse factorization.  A direct sparse
factorization of the whole saddle point is the cross-validation fallback.
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import NonConvergence, SingularSystem
from .fem import (
    FESpace,
    ReducedSystem,
    StokesSystem,
    _geometry_tables,
    TRI_QP,
    TRI_QW,
)
from .geometry import Mesh


@dataclass(frozen=True)
class SolverConfig:
    """Iterative-solver parameters.

    ``method`` is ``uzawa_cg`` or ``direct``.  ``inner_solver`` picks how the
    velocity block is inverted inside Uzawa iterations: ``factorize`` (exact
    sparse LU, reused) or ``ilu_cg`` (CG preconditioned by an incomplete LU,
    stopping at ``inner_tol``).
    """

    method: str = "uzawa_cg"
    inner_tol: float = 1e-12
    outer_tol: float = 1e-10
    max_outer: int = 500
    max_inner: int = 2000
    schur_preconditioner: str = "pressure_mass"
    inner_solver: str = "factorize"

    def __post_init__(self):
        if not (0 < self.inner_tol < 1 and 0 < self.outer_tol < 1):
            raise ValueError("tolerances must lie in (0, 1)")
        if self.max_outer < 1 or self.max_inner < 1:
            raise ValueError("iteration caps must be >= 1")


@dataclass
class StokesSolution:
    """Full-length velocity/pressure coefficients plus solver diagnostics."""

    space: FESpace
    u: np.ndarray
    p: np.ndarray
    diagnostics: dict = field(default_factory=dict)


def _inner_solver(A, config: SolverConfig):
    A = A.tocsc()
    if config.inner_solver == "factorize":
        lu = spla.splu(A)
        return lu.solve
    if config.inner_solver == "ilu_cg":
        ilu = spla.spilu(A, drop_tol=1e-5, fill_factor=20)
        M = spla.LinearOperator(A.shape, ilu.solve)

        def solve(b):
            x, info = spla.cg(A, b, rtol=config.inner_tol, atol=0.0,
                              maxiter=config.max_inner, M=M)
            if info > 0:
                raise NonConvergence(f"inner CG stalled after {info} iterations")
            return x

        return solve
    raise ValueError(f"unknown inner solver {config.inner_solver!r}")


def _uzawa_cg(red: ReducedSystem, config: SolverConfig):
    A, B, Mp = red.A, red.B, red.Mp
    f, g = red.f, red.g
    n_p = B.shape[0]
    Ainv = _inner_solver(A, config)

    if config.schur_preconditioner == "pressure_mass":
        Mp_lu = spla.splu(Mp.tocsc())
        precond = Mp_lu.solve
    else:
        precond = lambda r: r  # noqa: E731

    kernel = red.pressure_kernel

    def project(q):
        if kernel:
            q = q - q.mean()
        return q

    p = np.zeros(n_p)
    u = Ainv(f)
    r = project(B @ u - g)
    z = project(precond(r))
    d = z.copy()
    rz = float(r @ z)
    fnorm = max(float(np.linalg.norm(f)), 1e-300)
    gnorm = max(float(np.linalg.norm(g)), 1.0)
    iters = 0
    converged = False
    for iters in range(1, config.max_outer + 1):
        w = Ainv(B.T @ d)
        Sd = project(B @ w)
        dSd = float(d @ Sd)
        if dSd <= 0.0:
            if abs(dSd) < 1e-300:
                converged = np.linalg.norm(r) <= config.outer_tol * gnorm
                break
            raise SingularSystem("indefinite Schur complement in Uzawa CG")
        alpha = rz / dSd
        p += alpha * d
        u -= alpha * w
        r = r - alpha * Sd
        if np.linalg.norm(r) <= config.outer_tol * gnorm:
            converged = True
            break
        z = project(precond(r))
        rz_new = float(r @ z)
        d = z + (rz_new / rz) * d
        rz = rz_new
    # tighten the momentum equation with one final velocity solve
    u = Ainv(f - B.T @ p)
    mom = float(np.linalg.norm(A @ u + B.T @ p - f)) / fnorm
    div = float(np.linalg.norm(B @ u - g)) / gnorm
    return u, p, {
        "method": "uzawa_cg",
        "iterations": iters,
        "momentum_residual": mom,
        "divergence_residual": div,
        "converged": bool(converged and div <= 10 * config.outer_tol),
    }


def _direct(red: ReducedSystem, config: SolverConfig):
    A, B = red.A, red.B
    n_u, n_p = A.shape[0], B.shape[0]
    K = sp.bmat([[A, B.T], [B, None]], format="csr")
    rhs = np.concatenate([red.f, red.g])
    if red.pressure_kernel and n_p:
        # pin one pressure DOF to remove the constant kernel
        pin = n_u
        K = K.tolil()
        K.rows[pin] = [pin]
        K.data[pin] = [1.0]
        K = K.tocsr()
        K = K.T.tolil()
        K.rows[pin] = [pin]
        K.data[pin] = [1.0]
        K = K.T.tocsr()
        rhs[pin] = 0.0
    lu = spla.splu(K.tocsc())
    x = lu.solve(rhs)
    u, p = x[:n_u], x[n_u:]
    fnorm = max(float(np.linalg.norm(red.f)), 1e-300)
    gnorm = max(float(np.linalg.norm(red.g)), 1.0)
    mom = float(np.linalg.norm(A @ u + B.T @ p - red.f)) / fnorm
    div = float(np.linalg.norm(B @ u - red.g)) / gnorm
    return u, p, {
        "method": "direct",
        "iterations": 1,
        "momentum_residual": mom,
        "divergence_residual": div,
        "converged": True,
    }


def solve_stokes(system, config: SolverConfig | None = None,
                 quiet=False) -> StokesSolution:
    """Solve a (possibly unreduced) Stokes system.

    Accepts a :class:`StokesSystem` or an already-reduced system.  With the
    pressure-kernel flag set, the returned pressure has zero mean in the
    reduced coefficient sense; callers re-normalize over their region of
    interest.  Non-convergence is reported through ``diagnostics`` on the
    best iterate, not raised.
    """
    config = config or SolverConfig()
    red = system.reduced() if isinstance(system, StokesSystem) else system
    if config.method == "uzawa_cg":
        u_r, p_r, diag = _uzawa_cg(red, config)
    elif config.method == "direct":
        u_r, p_r, diag = _direct(red, config)
    else:
        raise ValueError(f"unknown method {config.method!r}")
    u, p = red.expand(u_r, p_r)
    if not quiet:
        print(
            "stentflow solve: method={method} iters={iterations} "
            "mom={momentum_residual:.2e} div={divergence_residual:.2e} "
            "converged={converged}".format(**diag),
            file=sys.stderr,
        )
    return StokesSolution(space=red.system.space, u=u, p=p, diagnostics=diag)


# ----------------------------------------------------------------------------
# scalar Poisson solve (used for manufactured tests and the H^-1 norm)
# ----------------------------------------------------------------------------


def _p1_stiffness_load(mesh: Mesh, rhs):
    tris = mesh.triangles.astype(np.int64)
    _, area, gradlam = _geometry_tables(mesh)
    K_el = area[:, None, None] * np.einsum("mid,mjd->mij", gradlam, gradlam)
    rows = np.repeat(tris, 3, axis=1).ravel()
    cols = np.tile(tris, (1, 3)).ravel()
    n = mesh.n_vertices
    K = sp.coo_matrix((K_el.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    b = np.zeros(n)
    if rhs is not None:
        p = mesh.vertices[tris]
        for q in range(len(TRI_QW)):
            pts = np.einsum("j,mjd->md", TRI_QP[q], p)
            fv = np.asarray(rhs(pts))
            w = TRI_QW[q] * area
            np.add.at(b, tris, (w * fv)[:, None] * TRI_QP[q][None, :])
    return K, b


def _p2_stiffness_load(mesh: Mesh, rhs):
    from .fem import _TRI_C, _TRI_P2, _build_edges

    tris = mesh.triangles.astype(np.int64)
    edges, tri_edges = _build_edges(tris)
    nodes = np.concatenate([tris, tri_edges + mesh.n_vertices], axis=1)
    _, area, gradlam = _geometry_tables(mesh)
    M = len(tris)
    K_el = np.zeros((M, 6, 6))
    for q in range(len(TRI_QW)):
        dphi = np.einsum("ij,mjd->mid", _TRI_C[q], gradlam)
        K_el += (TRI_QW[q] * area)[:, None, None] * np.einsum(
            "mid,mjd->mij", dphi, dphi)
    n = mesh.n_vertices + len(edges)
    K = sp.coo_matrix(
        (K_el.ravel(), (np.repeat(nodes, 6, axis=1).ravel(),
                        np.tile(nodes, (1, 6)).ravel())), shape=(n, n)
    ).tocsr()
    b = np.zeros(n)
    if rhs is not None:
        p = mesh.vertices[tris]
        for q in range(len(TRI_QW)):
            pts = np.einsum("j,mjd->md", TRI_QP[q], p)
            fv = np.asarray(rhs(pts))
            w = TRI_QW[q] * area
            np.add.at(b, nodes, (w * fv)[:, None] * _TRI_P2[q][None, :])
    return K, b, edges


def solve_poisson(mesh: Mesh, rhs, dirichlet_tags=(), extra_dirichlet_nodes=(),
                  degree=1):
    """Galerkin solve of -Laplace(q) = rhs with homogeneous Dirichlet data.

    ``rhs`` is callable(points (n, 2)) -> (n,).  Dirichlet vertices come from
    the tagged boundary edges plus ``extra_dirichlet_nodes`` (vertex ids).
    ``degree`` selects P1 (default) or P2 elements; with P2 the midpoints of
    tagged edges and of edges between two constrained vertices are clamped
    as well.  Returns (nodal coefficients, gradient L2 norm).
    """
    fixed = set(int(v) for v in extra_dirichlet_nodes)
    for tag in dirichlet_tags:
        for a, bb in mesh.edges_with_tag(tag):
            fixed.add(int(a))
            fixed.add(int(bb))
    if degree == 1:
        K, b = _p1_stiffness_load(mesh, rhs)
        n = mesh.n_vertices
    elif degree == 2:
        K, b, edges = _p2_stiffness_load(mesh, rhs)
        n = K.shape[0]
        tagged = set()
        for tag in dirichlet_tags:
            for a, bb in mesh.edges_with_tag(tag):
                tagged.add(tuple(sorted((int(a), int(bb)))))
        for k, (a, bb) in enumerate(map(tuple, edges)):
            if (a, bb) in tagged or (a in fixed and bb in fixed):
                fixed.add(mesh.n_vertices + k)
    else:
        raise ValueError("degree must be 1 or 2")
    fixed = np.array(sorted(fixed), dtype=np.int64)
    free = np.setdiff1d(np.arange(n), fixed)
    q = np.zeros(n)
    if len(free):
        K_ff = K[free][:, free].tocsc()
        q[free] = spla.splu(K_ff).solve(b[free])
    grad_norm = float(np.sqrt(max(q @ (K @ q), 0.0)))
    return q, grad_norm
