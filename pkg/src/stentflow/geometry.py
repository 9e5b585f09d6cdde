"""Domain construction and triangulation.

Two families of domains are meshed here:

* the macroscopic channel pair: an upper channel joined to a lower channel
  (collateral branch or closed sac) through a thin layer containing a row of
  m = 1/eps scaled obstacle disks,
* the truncated periodic strip used for the microscopic boundary-layer
  problems, holding a single obstacle.

Meshes are assembled from horizontal bands on shared x-grids: uniform bands
of right triangles, 2:1 transition bands that coarsen the grid isotropically,
and Delaunay-stitched blocks around obstacle disks (polar point rings glued
to the surrounding lattice).  All constructions are deterministic: identical
inputs produce identical meshes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.spatial import Delaunay

from .errors import (
    MeshQualityFailure,
    NonIntegerReciprocal,
    ObstacleTouchesCell,
    PeriodicMismatch,
)

GEOM_TOL = 1e-12


def cross2(a, b):
    """z-component of the cross product of stacked 2D vectors."""
    return a[..., 0] * b[..., 1] - a[..., 1] * b[..., 0]


class BoundaryTag(Enum):
    """Labels attached to boundary edges and interior interface edges."""

    GAMMA_IN = "GAMMA_IN"          # inflow {0} x ]0,1[
    GAMMA_OUT1 = "GAMMA_OUT1"      # upper outflow {1} x ]0,1[
    GAMMA_OUT2 = "GAMMA_OUT2"      # lower outflow ]0,1[ x {-1}
    GAMMA1 = "GAMMA1"              # top wall ]0,1[ x {1}
    GAMMA2 = "GAMMA2"              # lower lateral walls (and closed bottom)
    GAMMA_EPS = "GAMMA_EPS"        # obstacle circles
    GAMMA0 = "GAMMA0"              # fictitious interface ]0,1[ x {0}
    STRIP_LEFT = "STRIP_LEFT"
    STRIP_RIGHT = "STRIP_RIGHT"
    STRIP_TOP = "STRIP_TOP"
    STRIP_BOTTOM = "STRIP_BOTTOM"
    SIGMA = "SIGMA"                # strip interface ]0,1[ x {0}


@dataclass(frozen=True)
class ObstacleSpec:
    """A single solid obstacle in the unit periodicity cell.

    Only disks are supported; ``shape`` is kept for future extension.
    ``center`` is expressed in unit-cell coordinates, ``radius`` is
    dimensionless.
    """

    center: tuple[float, float] = (0.5, 0.25)
    radius: float = 3.0 / 16.0
    shape: str = "disk"

    def __post_init__(self):
        if self.shape != "disk":
            raise NotImplementedError(f"unsupported obstacle shape {self.shape!r}")
        if self.radius <= 0:
            raise ValueError("obstacle radius must be positive")

    def cell_margin(self) -> float:
        """Distance from the disk to the boundary of the unit cell ]0,1[^2."""
        cx, cy = self.center
        return min(cx, cy, 1.0 - cx, 1.0 - cy) - self.radius

    def validate_in_unit_cell(self):
        if self.cell_margin() <= GEOM_TOL:
            raise ObstacleTouchesCell(
                f"obstacle (center={self.center}, r={self.radius}) touches the "
                "unit cell boundary"
            )


@dataclass(frozen=True)
class RefineSpec:
    """Grading parameters for :func:`triangulate`.

    ``obstacle_factor`` scales the target element size inside and within one
    eps of the obstacle layer; ``min_circle_segments`` bounds the polygonal
    resolution of each obstacle circle from below; meshes whose minimum angle
    falls under ``min_angle_deg`` are rejected.
    """

    obstacle_factor: float = 0.5
    min_circle_segments: int = 16
    min_angle_deg: float = 20.0


@dataclass(frozen=True)
class MacroGeometry:
    """The channel pair with an eps-periodic row of obstacles in the layer.

    The upper channel is ]0,1[ x ]eps,1[, the layer ]0,1[ x ]0,eps[ carries
    m = 1/eps scaled obstacle copies, the lower channel is ]0,1[ x ]-1,0[.
    ``case`` is ``"collateral"`` (open bottom) or ``"aneurysm"`` (closed).
    """

    eps: float
    case: str
    obstacle: ObstacleSpec
    m: int = field(init=False)

    def __post_init__(self):
        if not (math.isfinite(self.eps) and 0.0 < self.eps <= 1.0):
            raise NonIntegerReciprocal(f"eps = {self.eps} must lie in (0, 1]")
        m = 1.0 / self.eps
        if abs(m - round(m)) > 1e-12 * max(1.0, m):
            raise NonIntegerReciprocal(f"1/eps = {m} is not an integer")
        object.__setattr__(self, "m", int(round(m)))
        if self.case not in ("collateral", "aneurysm"):
            raise ValueError(f"unknown case {self.case!r}")
        self.obstacle.validate_in_unit_cell()

    def hole_centers(self) -> np.ndarray:
        """Centers of the m scaled obstacle copies, shape (m, 2)."""
        cx, cy = self.obstacle.center
        i = np.arange(self.m)
        return np.column_stack([self.eps * (i + cx), np.full(self.m, self.eps * cy)])

    def hole_radius(self) -> float:
        return self.eps * self.obstacle.radius


@dataclass(frozen=True)
class Rectangle:
    """A plain rectangular domain with per-side boundary tags."""

    x0: float
    x1: float
    y0: float
    y1: float
    tag_left: BoundaryTag
    tag_right: BoundaryTag
    tag_bottom: BoundaryTag
    tag_top: BoundaryTag


@dataclass
class Mesh:
    """Conforming triangulation with tagged boundary and interface edges.

    ``triangles`` are counter-clockwise.  Boundary edges keep the orientation
    of the triangle they came from (domain to the left).  ``interface_edges``
    lists interior edges lying on the fictitious interface x2 = 0 of either
    domain family.  ``holes`` records (cx, cy, r) for every obstacle disk
    removed from the domain.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    boundary_tags: np.ndarray
    interface_edges: np.ndarray
    interface_tags: np.ndarray
    holes: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_triangles(self) -> int:
        return len(self.triangles)

    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        return 0.5 * cross2(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])

    def min_angle_deg(self) -> float:
        return _min_angle(self.vertices, self.triangles)

    def edges_with_tag(self, tag: BoundaryTag) -> np.ndarray:
        """All edges (boundary or interface) carrying ``tag``, shape (k, 2)."""
        parts = []
        if len(self.boundary_edges):
            parts.append(self.boundary_edges[self.boundary_tags == tag])
        if len(self.interface_edges):
            parts.append(self.interface_edges[self.interface_tags == tag])
        parts = [p for p in parts if len(p)]
        if not parts:
            return np.empty((0, 2), dtype=np.int32)
        return np.concatenate(parts, axis=0)


def _min_angle(verts, tris) -> float:
    p = verts[tris]
    worst = 180.0
    for k in range(3):
        a = p[:, (k + 1) % 3] - p[:, k]
        b = p[:, (k + 2) % 3] - p[:, k]
        cosang = np.einsum("ij,ij->i", a, b) / (
            np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1)
        )
        worst = min(worst, float(np.degrees(np.arccos(np.clip(cosang, -1.0, 1.0))).min()))
    return worst


# ----------------------------------------------------------------------------
# band-stack builder
# ----------------------------------------------------------------------------


class _Builder:
    """Accumulates vertices/triangles while stacking horizontal bands."""

    def __init__(self):
        self.verts: list[np.ndarray] = []
        self.tris: list[tuple[int, int, int]] = []
        self.circle_edges: list[tuple[int, int]] = []
        self.n = 0

    def add_points(self, pts: np.ndarray) -> np.ndarray:
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        ids = np.arange(self.n, self.n + len(pts), dtype=np.int64)
        self.verts.append(pts)
        self.n += len(pts)
        return ids

    def add_row(self, x: np.ndarray, y: float) -> np.ndarray:
        return self.add_points(np.column_stack([x, np.full(len(x), float(y))]))

    def quad_rows(self, bottom: np.ndarray, top: np.ndarray):
        """Triangulate the strip between two rows sharing one x-grid.

        Diagonals point toward the middle of the row, so the band is mirror
        symmetric; symmetric domains then get parity-exact meshes.
        """
        n = len(bottom) - 1
        for i in range(n):
            a, b = bottom[i], bottom[i + 1]
            c, d = top[i], top[i + 1]
            if 2 * i < n:
                self.tris.append((a, b, d))
                self.tris.append((a, d, c))
            else:
                self.tris.append((a, b, c))
                self.tris.append((b, d, c))

    def transition_rows(self, fine, coarse, fine_on_bottom):
        """2:1 band between a fine row (2k+1 points) and a coarse row (k+1).

        The three-triangle pattern is mirrored on the right half, keeping the
        band symmetric.
        """
        k = len(coarse) - 1
        assert len(fine) == 2 * k + 1
        for i in range(k):
            f0, f1, f2 = fine[2 * i], fine[2 * i + 1], fine[2 * i + 2]
            c0, c1 = coarse[i], coarse[i + 1]
            if 2 * i < k:
                tris = [(f0, f1, c0), (f1, c1, c0), (f1, f2, c1)]
            else:
                tris = [(f1, f0, c0), (f1, c0, c1), (f2, f1, c1)]
            if not fine_on_bottom:
                tris = [(a, c, b) for (a, b, c) in tris]
            self.tris.extend(tris)

    def finish(self):
        verts = np.concatenate(self.verts, axis=0)
        tris = np.asarray(self.tris, dtype=np.int64)
        p = verts[tris]
        area2 = cross2(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
        flip = area2 < 0
        tris[flip] = tris[flip][:, [0, 2, 1]]
        return verts, tris


def _halvings(x: np.ndarray, h_max: float) -> list[np.ndarray]:
    """Successively halved x-grids, stopping at spacing h_max or odd cells."""
    grids = [np.asarray(x)]
    while True:
        cur = grids[-1]
        ncell = len(cur) - 1
        if ncell % 2 or ncell <= 2:
            break
        if (cur[2] - cur[0]) > h_max * (1 + 1e-9):
            break
        grids.append(cur[::2])
    return grids


def _uniform_fill(b, row, x, y, y_end, dy_target, upward=True):
    """Stack uniform rows from y to exactly y_end; returns (row, y_end)."""
    sgn = 1.0 if upward else -1.0
    remaining = sgn * (y_end - y)
    if remaining <= GEOM_TOL:
        return row, y
    nrows = max(1, int(round(remaining / dy_target)))
    for yy in np.linspace(y, y_end, nrows + 1)[1:]:
        new = b.add_row(x, yy)
        if upward:
            b.quad_rows(row, new)
        else:
            b.quad_rows(new, row)
        row = new
    return row, y_end


def _coarsen_away(b, row, x, y, y_end, h_max, upward):
    """Coarsen by 2:1 steps then run uniformly to y_end (frontier is fine)."""
    grids = _halvings(x, h_max)
    sgn = 1.0 if upward else -1.0
    cur_x = x
    level = 0
    while level + 1 < len(grids):
        coarse = grids[level + 1]
        dy = 0.5 * (coarse[1] - coarse[0])
        y_next = y + sgn * dy
        if sgn * (y_end - y_next) < dy:
            break
        new = b.add_row(coarse, y_next)
        b.transition_rows(row, new, fine_on_bottom=upward)
        row, cur_x, y = new, coarse, y_next
        level += 1
    row, y = _uniform_fill(b, row, cur_x, y, y_end, cur_x[1] - cur_x[0], upward)
    return row, cur_x, y


def _graded_channel(b, row, x, y0, y_fine_end, y_end, h_fine, h_max, upward):
    """Fill a channel away from the interface in two grading phases.

    Spacing is capped at ``h_fine`` until ``y_fine_end`` and at ``h_max``
    beyond it; 2:1 transition bands carry the grid between caps.
    """
    row, cur_x, y = _coarsen_away(b, row, x, y0, y_fine_end, h_fine, upward)
    _coarsen_away(b, row, cur_x, y, y_end, h_max, upward)


# ----------------------------------------------------------------------------
# obstacle block: lattice + polar rings, Delaunay-stitched
# ----------------------------------------------------------------------------


def _circle_points(center, radius, n_c):
    th = -0.5 * np.pi + 2.0 * np.pi * np.arange(n_c) / n_c
    return np.column_stack(
        [center[0] + radius * np.cos(th), center[1] + radius * np.sin(th)]
    )


def _disk_block(b, x, y_rows, disk, n_c, existing):
    """Mesh one rectangular block containing a disk hole.

    ``existing`` maps lattice indices (i, j) to global vertex ids that were
    created by neighbouring bands/blocks (shared rows and columns).  Lattice
    points too close to the disk are dropped and replaced by a polar ring on
    the circle; the block is then triangulated by Delaunay.  Lattice lines
    and ring chords carry empty-circumcircle clearances, so they are kept as
    mesh edges.  Returns the map (i, j) -> global id of all lattice points.
    """
    cx, cy, r = disk
    s = x[1] - x[0]
    clear = r + 0.75 * s
    ring1 = _circle_points((cx, cy), r, n_c)

    local_pts = []
    local_gid = []
    lattice_of_local = []
    for j, yv in enumerate(y_rows):
        for i, xv in enumerate(x):
            boundary = i in (0, len(x) - 1) or j in (0, len(y_rows) - 1)
            if not boundary and math.hypot(xv - cx, yv - cy) < clear:
                continue
            local_pts.append((xv, yv))
            local_gid.append(existing.get((i, j), -1))
            lattice_of_local.append((i, j))
    n_lat = len(local_pts)
    for p in ring1:
        local_pts.append((p[0], p[1]))
        local_gid.append(-1)
    local_pts = np.asarray(local_pts, dtype=float)
    local_gid = np.asarray(local_gid, dtype=np.int64)

    new_mask = local_gid < 0
    local_gid[new_mask] = b.add_points(local_pts[new_mask])

    simplices = _triangulate_block(local_pts, (cx, cy, r), x)
    cent = local_pts[simplices].mean(axis=1)
    keep = np.hypot(cent[:, 0] - cx, cent[:, 1] - cy) > r
    for t in simplices[keep]:
        b.tris.append((local_gid[t[0]], local_gid[t[1]], local_gid[t[2]]))

    ring_ids = local_gid[n_lat : n_lat + n_c]
    for k in range(n_c):
        b.circle_edges.append((ring_ids[k], ring_ids[(k + 1) % n_c]))

    return {lat: local_gid[k] for k, lat in enumerate(lattice_of_local)}


def _triangulate_block(pts, disk, x):
    """Delaunay triangulation of a disk block, mirror-symmetric when possible.

    If the point set is symmetric about the disk's vertical axis, the left
    half is triangulated and reflected, so symmetric problems see parity-
    exact meshes; otherwise a plain Delaunay is used.
    """
    cx = disk[0]
    tol = 1e-9
    mirror = np.full(len(pts), -1, dtype=np.int64)
    key = {}
    for i, (px, py) in enumerate(pts):
        key[(round(px / tol), round(py / tol))] = i

    def find(px, py):
        kx, ky = round(px / tol), round(py / tol)
        for dx in (0, -1, 1):
            for dy in (0, -1, 1):
                j = key.get((kx + dx, ky + dy))
                if j is not None and abs(pts[j, 0] - px) < tol \
                        and abs(pts[j, 1] - py) < tol:
                    return j
        return None

    symmetric = abs((x[0] + x[-1]) * 0.5 - cx) < tol
    if symmetric:
        for i, (px, py) in enumerate(pts):
            j = find(2 * cx - px, py)
            if j is None:
                symmetric = False
                break
            mirror[i] = j
    if not symmetric:
        return Delaunay(pts).simplices
    left = np.nonzero(pts[:, 0] <= cx + tol)[0]
    tri_left = left[Delaunay(pts[left]).simplices]
    on_axis = np.abs(pts[:, 0] - cx) < tol
    keep = ~np.all(on_axis[tri_left], axis=1)
    tri_left = tri_left[keep]
    tri_right = mirror[tri_left]
    return np.concatenate([tri_left, tri_right], axis=0)


def _block_band(b, x, y_rows, disks, n_c, bottom_row):
    """A full-width band of obstacle blocks, one disk per block.

    ``disks`` lists ((cx, cy, r), i0, i1) with i0/i1 the first/last lattice
    column of each block.  Shared columns between neighbouring blocks and
    the shared bottom row are stitched through the lattice map.  Returns the
    top frontier row ids.
    """
    n_rows = len(y_rows) - 1
    top = np.empty(len(x), dtype=np.int64)
    prev_right: dict[int, np.int64] = {}
    for disk, i0, i1 in disks:
        existing = {(i - i0, 0): bottom_row[i] for i in range(i0, i1 + 1)}
        for j, gid in prev_right.items():
            existing[(0, j)] = gid
        lat = _disk_block(b, x[i0 : i1 + 1], y_rows, disk, n_c, existing)
        prev_right = {j: lat[(i1 - i0, j)] for j in range(n_rows + 1)
                      if (i1 - i0, j) in lat}
        for (i, j), gid in lat.items():
            if j == n_rows:
                top[i0 + i] = gid
    return top


# ----------------------------------------------------------------------------
# edge extraction and tagging
# ----------------------------------------------------------------------------


def _boundary_edge_set(tris: np.ndarray) -> np.ndarray:
    """Edges belonging to exactly one triangle, oriented as in the triangle."""
    e = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
    key = np.sort(e, axis=1)
    _, inv, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    return e[counts[inv] == 1]


def _on_line(pts, axis, value, tol=1e-12):
    return np.abs(pts[:, axis] - value) < tol


def _interior_line_edges(verts, tris, axis, value):
    """Interior edges both of whose endpoints lie on an axis-aligned line."""
    e = np.concatenate([tris[:, [0, 1]], tris[:, [1, 2]], tris[:, [2, 0]]])
    key = np.sort(e, axis=1)
    uniq, counts = np.unique(key, axis=0, return_counts=True)
    interior = uniq[counts == 2]
    on = _on_line(verts, axis, value)
    return interior[on[interior[:, 0]] & on[interior[:, 1]]]


def _check_quality(verts, tris, min_angle_deg, context):
    p = verts[tris]
    area2 = cross2(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
    if np.any(area2 <= 0):
        raise MeshQualityFailure(f"{context}: non-positive triangle area")
    worst = _min_angle(verts, tris)
    if worst < min_angle_deg:
        raise MeshQualityFailure(
            f"{context}: min angle {worst:.2f} deg below threshold {min_angle_deg}"
        )


# ----------------------------------------------------------------------------
# public operations
# ----------------------------------------------------------------------------


def build_macro_geometry(eps, case, obstacle=None) -> MacroGeometry:
    """Validated macroscopic geometry for the channel pair.

    ``eps`` must be the reciprocal of an integer m >= 1; the obstacle must sit
    strictly inside the open unit cell.  The collateral case exposes the
    bottom side as an outflow, the aneurysm case closes it as a wall.
    """
    if obstacle is None:
        obstacle = ObstacleSpec()
    return MacroGeometry(eps=float(eps), case=case, obstacle=obstacle)


def _n_circle(radius, spacing, min_segments):
    n = max(int(min_segments), int(round(2.0 * np.pi * radius / spacing)))
    return n + (-n) % 4  # multiple of 4 keeps the sampling mirror-symmetric


def triangulate(geometry, h_target, refine_spec: RefineSpec | None = None) -> Mesh:
    """Triangulate a macroscopic geometry or a plain rectangle.

    For :class:`MacroGeometry` the obstacle layer is meshed at lattice spacing
    eps/n_cell <= h_target * obstacle_factor, stays fine within one eps of the
    layer, and coarsens away from it; x2 = 0 and x2 = eps are mesh lines.  For
    :class:`Rectangle` a structured grid at spacing <= h_target is built.
    """
    if h_target is None or h_target <= 0:
        raise ValueError("h_target must be positive")
    spec = refine_spec or RefineSpec()
    if isinstance(geometry, Rectangle):
        return _rect_mesh(geometry, h_target, spec)
    if isinstance(geometry, MacroGeometry):
        return _macro_mesh(geometry, h_target, spec)
    raise TypeError(f"cannot triangulate {type(geometry).__name__}")


def _rect_mesh(rect: Rectangle, h, spec: RefineSpec, grade_to_y=None) -> Mesh:
    wx = rect.x1 - rect.x0
    wy = rect.y1 - rect.y0
    b = _Builder()
    if grade_to_y is None:
        nx = max(1, int(math.ceil(wx / h - GEOM_TOL)))
        ny = max(1, int(math.ceil(wy / h - GEOM_TOL)))
        x = np.linspace(rect.x0, rect.x1, nx + 1)
        row = b.add_row(x, rect.y0)
        _uniform_fill(b, row, x, rect.y0, rect.y1, wy / ny, upward=True)
    else:
        s0 = h * spec.obstacle_factor
        nx = int(math.ceil(wx / s0))
        nx += nx % 2
        x = np.linspace(rect.x0, rect.x1, nx + 1)
        s0 = wx / nx
        if abs(grade_to_y - rect.y0) < GEOM_TOL:
            fine_top = min(rect.y1, rect.y0 + 4 * s0)
            row = b.add_row(x, rect.y0)
            row, _ = _uniform_fill(b, row, x, rect.y0, fine_top, s0, upward=True)
            _coarsen_away(b, row, x, fine_top, rect.y1, h, upward=True)
        elif abs(grade_to_y - rect.y1) < GEOM_TOL:
            fine_bot = max(rect.y0, rect.y1 - 4 * s0)
            row = b.add_row(x, rect.y1)
            row, _ = _uniform_fill(b, row, x, rect.y1, fine_bot, s0, upward=False)
            _coarsen_away(b, row, x, fine_bot, rect.y0, h, upward=False)
        else:
            raise ValueError("grade_to_y must be one of the rectangle's y sides")
    verts, tris = b.finish()
    _check_quality(verts, tris, spec.min_angle_deg, "rectangle mesh")

    bed = _boundary_edge_set(tris)
    mids = 0.5 * (verts[bed[:, 0]] + verts[bed[:, 1]])
    tags = np.empty(len(bed), dtype=object)
    tags[_on_line(mids, 0, rect.x0)] = rect.tag_left
    tags[_on_line(mids, 0, rect.x1)] = rect.tag_right
    tags[_on_line(mids, 1, rect.y0)] = rect.tag_bottom
    tags[_on_line(mids, 1, rect.y1)] = rect.tag_top
    if any(t is None for t in tags):
        raise MeshQualityFailure("untagged boundary edge on rectangle")
    return Mesh(
        vertices=verts,
        triangles=tris.astype(np.int32),
        boundary_edges=bed.astype(np.int32),
        boundary_tags=tags,
        interface_edges=np.empty((0, 2), dtype=np.int32),
        interface_tags=np.empty(0, dtype=object),
        holes=np.empty((0, 3)),
        meta={"kind": "rectangle", "h": h},
    )


def rectangle_mesh(x0, x1, y0, y1, h, tags=None, grade_to_y=None,
                   refine_spec: RefineSpec | None = None) -> Mesh:
    """Tagged rectangle mesh, optionally graded toward one horizontal side.

    ``tags`` is (left, right, bottom, top); defaults to the upper-channel
    tags (inflow / outflow / interface / top wall).
    """
    if tags is None:
        tags = (BoundaryTag.GAMMA_IN, BoundaryTag.GAMMA_OUT1,
                BoundaryTag.GAMMA0, BoundaryTag.GAMMA1)
    rect = Rectangle(x0, x1, y0, y1, tags[0], tags[1], tags[2], tags[3])
    return _rect_mesh(rect, h, refine_spec or RefineSpec(), grade_to_y=grade_to_y)


def _cell_divisions(obstacle: ObstacleSpec, eps, h, spec: RefineSpec) -> int:
    """Lattice divisions per periodicity cell.

    Fine enough that (i) elements in the layer are below
    h * obstacle_factor, (ii) the gap between the disk and the cell
    boundary holds the Delaunay clearance, (iii) the circle polygon
    resolves min_circle_segments chords.
    """
    n_h = eps / (h * spec.obstacle_factor)
    n_geom = 1.3 / obstacle.cell_margin()
    n_circ = spec.min_circle_segments / (2.0 * np.pi * obstacle.radius)
    n = max(4.0, n_h, n_geom, n_circ)
    n = int(math.ceil(n - GEOM_TOL))
    return n + n % 2


def _macro_mesh(geo: MacroGeometry, h, spec: RefineSpec) -> Mesh:
    eps, m = geo.eps, geo.m
    n_cell = _cell_divisions(geo.obstacle, eps, h, spec)
    n_c = _n_circle(geo.obstacle.radius, 1.0 / n_cell, spec.min_circle_segments)
    s = eps / n_cell
    nx = m * n_cell
    x = np.linspace(0.0, 1.0, nx + 1)

    b = _Builder()
    gamma0_row = b.add_row(x, 0.0)

    # obstacle layer [0, eps]
    y_rows = np.linspace(0.0, eps, n_cell + 1)
    centers = geo.hole_centers()
    r_hole = geo.hole_radius()
    disks = [((centers[i, 0], centers[i, 1], r_hole), i * n_cell, (i + 1) * n_cell)
             for i in range(m)]
    row = _block_band(b, x, y_rows, disks, n_c, gamma0_row)

    # upper channel: spacing capped at h*factor within one eps of the layer
    h_fine = h * spec.obstacle_factor
    _graded_channel(b, row, x, eps, min(1.0, 2 * eps), 1.0, h_fine, h, upward=True)
    # lower channel, grown downward from the interface row
    _graded_channel(b, gamma0_row, x, 0.0, -min(1.0, eps), -1.0, h_fine, h,
                    upward=False)

    verts, tris = b.finish()
    _check_quality(verts, tris, spec.min_angle_deg, f"macro mesh eps=1/{m}")

    bed = _boundary_edge_set(tris)
    mids = 0.5 * (verts[bed[:, 0]] + verts[bed[:, 1]])
    tags = np.empty(len(bed), dtype=object)
    on_left = _on_line(mids, 0, 0.0)
    on_right = _on_line(mids, 0, 1.0)
    upper = mids[:, 1] > 0.0
    tags[on_left & upper] = BoundaryTag.GAMMA_IN
    tags[on_left & ~upper] = BoundaryTag.GAMMA2
    tags[on_right & upper] = BoundaryTag.GAMMA_OUT1
    tags[on_right & ~upper] = BoundaryTag.GAMMA2
    tags[_on_line(mids, 1, 1.0)] = BoundaryTag.GAMMA1
    bottom_tag = (BoundaryTag.GAMMA_OUT2 if geo.case == "collateral"
                  else BoundaryTag.GAMMA2)
    tags[_on_line(mids, 1, -1.0)] = bottom_tag
    untagged = np.array([t is None for t in tags])
    circ_keys = {tuple(sorted(e)) for e in b.circle_edges}
    bed_keys = {tuple(sorted(e)) for e in bed[untagged]}
    if circ_keys != bed_keys:
        raise MeshQualityFailure("obstacle boundary edges do not close the circles")
    tags[untagged] = BoundaryTag.GAMMA_EPS

    ife = _interior_line_edges(verts, tris, 1, 0.0)
    itags = np.full(len(ife), BoundaryTag.GAMMA0, dtype=object)
    holes = np.column_stack([centers, np.full(m, r_hole)])
    return Mesh(
        vertices=verts,
        triangles=tris.astype(np.int32),
        boundary_edges=bed.astype(np.int32),
        boundary_tags=tags,
        interface_edges=ife.astype(np.int32),
        interface_tags=itags,
        holes=holes,
        meta={"kind": "macro", "eps": eps, "case": geo.case,
              "n_cell": n_cell, "h": h},
    )


def no_stent_mesh(case="aneurysm", h=0.1,
                  refine_spec: RefineSpec | None = None) -> Mesh:
    """The channel pair without any obstacles (reference configuration).

    Same outer tagging as the macro mesh, x2 = 0 kept as an interface mesh
    line, grading toward the interface.
    """
    spec = refine_spec or RefineSpec()
    s = h * spec.obstacle_factor
    nx = int(math.ceil(1.0 / s))
    nx += nx % 2
    x = np.linspace(0.0, 1.0, nx + 1)
    s = 1.0 / nx
    b = _Builder()
    gamma0_row = b.add_row(x, 0.0)
    row, _ = _uniform_fill(b, gamma0_row, x, 0.0, 4 * s, s, upward=True)
    _coarsen_away(b, row, x, 4 * s, 1.0, h, upward=True)
    row, _ = _uniform_fill(b, gamma0_row, x, 0.0, -4 * s, s, upward=False)
    _coarsen_away(b, row, x, -4 * s, -1.0, h, upward=False)
    verts, tris = b.finish()
    _check_quality(verts, tris, spec.min_angle_deg, "no-stent mesh")

    bed = _boundary_edge_set(tris)
    mids = 0.5 * (verts[bed[:, 0]] + verts[bed[:, 1]])
    tags = np.empty(len(bed), dtype=object)
    on_left = _on_line(mids, 0, 0.0)
    on_right = _on_line(mids, 0, 1.0)
    upper = mids[:, 1] > 0.0
    tags[on_left & upper] = BoundaryTag.GAMMA_IN
    tags[on_left & ~upper] = BoundaryTag.GAMMA2
    tags[on_right & upper] = BoundaryTag.GAMMA_OUT1
    tags[on_right & ~upper] = BoundaryTag.GAMMA2
    tags[_on_line(mids, 1, 1.0)] = BoundaryTag.GAMMA1
    tags[_on_line(mids, 1, -1.0)] = (
        BoundaryTag.GAMMA_OUT2 if case == "collateral" else BoundaryTag.GAMMA2
    )
    if any(t is None for t in tags):
        raise MeshQualityFailure("untagged boundary edge on no-stent mesh")
    ife = _interior_line_edges(verts, tris, 1, 0.0)
    return Mesh(
        vertices=verts,
        triangles=tris.astype(np.int32),
        boundary_edges=bed.astype(np.int32),
        boundary_tags=tags,
        interface_edges=ife.astype(np.int32),
        interface_tags=np.full(len(ife), BoundaryTag.GAMMA0, dtype=object),
        holes=np.empty((0, 3)),
        meta={"kind": "no_stent", "case": case, "h": h},
    )


def build_strip_mesh(obstacle: ObstacleSpec | None, L=10.0, h=1.0 / 48.0,
                     refine_spec: RefineSpec | None = None) -> Mesh:
    """Mesh the truncated periodic strip ]0,1[ x ]-L,L[ minus the obstacle.

    The left/right boundary vertex sets are exact y-translates of each other
    (periodic identification); y2 = 0 is a mesh line carrying the SIGMA tag;
    the lattice spacing equals ``h`` near the obstacle and coarsens away.
    ``obstacle=None`` meshes the unobstructed strip.
    """
    if L < 2:
        raise ValueError("strip half-length L must be >= 2")
    if h is None or h <= 0:
        raise ValueError("h must be positive")
    spec = refine_spec or RefineSpec()
    n = max(8, int(round(1.0 / h)))
    n += n % 2
    s = 1.0 / n
    x = np.linspace(0.0, 1.0, n + 1)
    L = float(L)

    if obstacle is not None:
        cx, cy = obstacle.center
        r = obstacle.radius
        margins = [cx - r, 1.0 - cx - r]
        if abs(cy) <= r:           # disk crosses the interface line
            pass
        else:
            margins.append(abs(cy) - r)
        n_geom = int(math.ceil(1.3 / min(margins)))
        if n < n_geom:
            n = n_geom + n_geom % 2
            s = 1.0 / n
            x = np.linspace(0.0, 1.0, n + 1)
        if min(cx - r, 1.0 - cx - r) <= 2 * s:
            raise ObstacleTouchesCell("obstacle too close to the periodic sides")
        if not (-L + 2 < cy - r and cy + r < L - 2):
            raise ObstacleTouchesCell("obstacle must lie well inside the strip")
        lo_row = min(0, math.floor((cy - r) / s) - 2)
        hi_row = max(0, math.ceil((cy + r) / s) + 2)
    else:
        lo_row, hi_row = 0, 0
    block_lo, block_hi = lo_row * s, hi_row * s

    b = _Builder()
    bottom_row = b.add_row(x, block_lo)
    if obstacle is not None:
        y_rows = np.arange(lo_row, hi_row + 1) * s
        n_c = _n_circle(r, s, spec.min_circle_segments)
        row = _block_band(b, x, y_rows, [((cx, cy, r), 0, n)], n_c, bottom_row)
    else:
        row = bottom_row

    # fine window of one unit above/below the block, then coarsen to the far field
    fine_hi = block_hi + 1.0
    row, _ = _uniform_fill(b, row, x, block_hi, fine_hi, s, upward=True)
    _coarsen_away(b, row, x, fine_hi, L, 0.25, upward=True)
    fine_lo = block_lo - 1.0
    row, _ = _uniform_fill(b, bottom_row, x, block_lo, fine_lo, s, upward=False)
    _coarsen_away(b, row, x, fine_lo, -L, 0.25, upward=False)

    verts, tris = b.finish()
    _check_quality(verts, tris, spec.min_angle_deg, "strip mesh")

    bed = _boundary_edge_set(tris)
    mids = 0.5 * (verts[bed[:, 0]] + verts[bed[:, 1]])
    tags = np.empty(len(bed), dtype=object)
    tags[_on_line(mids, 0, 0.0)] = BoundaryTag.STRIP_LEFT
    tags[_on_line(mids, 0, 1.0)] = BoundaryTag.STRIP_RIGHT
    tags[_on_line(mids, 1, -L)] = BoundaryTag.STRIP_BOTTOM
    tags[_on_line(mids, 1, L)] = BoundaryTag.STRIP_TOP
    untagged = np.array([t is None for t in tags])
    if obstacle is not None:
        tags[untagged] = BoundaryTag.GAMMA_EPS
    elif untagged.any():
        raise MeshQualityFailure("untagged boundary edge on strip")

    yl = np.sort(verts[_on_line(verts, 0, 0.0)][:, 1])
    yr = np.sort(verts[_on_line(verts, 0, 1.0)][:, 1])
    if len(yl) != len(yr) or (len(yl) and np.max(np.abs(yl - yr)) > 1e-12):
        raise PeriodicMismatch("left/right strip traces differ")

    ife = _interior_line_edges(verts, tris, 1, 0.0)
    itags = np.full(len(ife), BoundaryTag.SIGMA, dtype=object)
    holes = (np.array([[obstacle.center[0], obstacle.center[1], obstacle.radius]])
             if obstacle is not None else np.empty((0, 3)))
    return Mesh(
        vertices=verts,
        triangles=tris.astype(np.int32),
        boundary_edges=bed.astype(np.int32),
        boundary_tags=tags,
        interface_edges=ife.astype(np.int32),
        interface_tags=itags,
        holes=holes,
        meta={"kind": "strip", "L": L, "h": h},
    )
