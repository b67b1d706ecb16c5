"""Structured 2D quadrilateral grids with bilinear elements.

Two dof layouts are supported:

* ``"discontinuous"``: 4 dofs per cell (broken bilinear space used by the
  sweep-based transport solvers),
* ``"continuous"``: one dof per grid node (conforming bilinear space used by
  the even-parity solver).

Interior faces are stored once each with a fixed orientation: the unit normal
points from the lower-index ("minus") cell to the higher-index ("plus") cell,
i.e. in +x for vertical faces and +y for horizontal faces.  Boundary faces
carry the outward normal.  Materials are painted onto cells by cell-center
containment, later shapes overriding earlier ones.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, ContractViolation

DISCONTINUOUS = "discontinuous"
CONTINUOUS = "continuous"

# Local dof/node numbering on the reference cell [0,1]^2:
#   2 --- 3
#   |     |
#   0 --- 1
# Edge dof pairs are listed in the direction of increasing edge coordinate so
# that the two sides of a shared face pair up entry by entry.
EDGE_LOCALS = {
    "left": (0, 2),
    "right": (1, 3),
    "bottom": (0, 1),
    "top": (2, 3),
}

WALL_NORMALS = {
    "left": (-1.0, 0.0),
    "right": (1.0, 0.0),
    "bottom": (0.0, -1.0),
    "top": (0.0, 1.0),
}


@dataclass(frozen=True)
class Rect:
    """Axis-aligned rectangle painting ``material`` onto cells whose center it contains."""

    x0: float
    y0: float
    x1: float
    y1: float
    material: int

    def contains(self, x, y):
        return (self.x0 <= x) & (x <= self.x1) & (self.y0 <= y) & (y <= self.y1)


@dataclass(frozen=True)
class Disc:
    """Disc shape; containment is strict (points on the circle are outside)."""

    cx: float
    cy: float
    radius: float
    material: int

    def contains(self, x, y):
        return (x - self.cx) ** 2 + (y - self.cy) ** 2 < self.radius**2


@dataclass(frozen=True, eq=False)
class Grid:
    nx: int
    ny: int
    x0: float
    y0: float
    dx: float
    dy: float
    flavor: str
    # interior faces
    iface_minus: np.ndarray = field(repr=False)
    iface_plus: np.ndarray = field(repr=False)
    iface_normal: np.ndarray = field(repr=False)
    iface_length: np.ndarray = field(repr=False)
    iface_vertical: np.ndarray = field(repr=False)
    # boundary faces
    bface_cell: np.ndarray = field(repr=False)
    bface_normal: np.ndarray = field(repr=False)
    bface_length: np.ndarray = field(repr=False)
    bface_wall: np.ndarray = field(repr=False)
    cell_centers: np.ndarray = field(repr=False)
    cell_dofs: np.ndarray = field(repr=False)

    @property
    def n_cells(self):
        return self.nx * self.ny

    @property
    def n_dofs(self):
        if self.flavor == DISCONTINUOUS:
            return 4 * self.nx * self.ny
        return (self.nx + 1) * (self.ny + 1)

    @property
    def cell_area(self):
        return self.dx * self.dy

    @property
    def extent(self):
        return (self.x0, self.y0, self.nx * self.dx, self.ny * self.dy)

    def cell_id(self, i, j):
        return j * self.nx + i

    def boundary_dofs(self):
        """Sorted unique dof ids lying on the domain boundary."""
        cells = self.bface_cell
        walls = self.bface_wall
        out = []
        for c, w in zip(cells, walls):
            out.extend(self.cell_dofs[c, list(EDGE_LOCALS[w])])
        return np.unique(np.asarray(out, dtype=int))


def build_grid(nx, ny, extent=(0.0, 0.0, 1.0, 1.0), flavor=DISCONTINUOUS):
    """Build a uniform nx-by-ny grid over the rectangle ``extent = (x0, y0, lx, ly)``."""
    if nx < 1 or ny < 1:
        raise ConfigurationError(f"grid needs at least one cell per direction, got {nx}x{ny}")
    if flavor not in (DISCONTINUOUS, CONTINUOUS):
        raise ConfigurationError(f"unknown dof flavor {flavor!r}")
    x0, y0, lx, ly = (float(v) for v in extent)
    if lx <= 0 or ly <= 0:
        raise ConfigurationError(f"domain extent must be positive, got lx={lx}, ly={ly}")
    dx, dy = lx / nx, ly / ny

    n_cells = nx * ny
    ii, jj = np.meshgrid(np.arange(nx), np.arange(ny))
    ii, jj = ii.ravel(), jj.ravel()  # cell id = j*nx + i
    centers = np.column_stack([x0 + (ii + 0.5) * dx, y0 + (jj + 0.5) * dy])

    # interior faces: vertical ones first (normal +x), then horizontal (+y)
    minus, plus, normal, length, vertical = [], [], [], [], []
    for j in range(ny):
        for i in range(nx - 1):
            minus.append(j * nx + i)
            plus.append(j * nx + i + 1)
            normal.append((1.0, 0.0))
            length.append(dy)
            vertical.append(True)
    for j in range(ny - 1):
        for i in range(nx):
            minus.append(j * nx + i)
            plus.append((j + 1) * nx + i)
            normal.append((0.0, 1.0))
            length.append(dx)
            vertical.append(False)

    bcell, bnormal, blength, bwall = [], [], [], []
    for j in range(ny):
        bcell.append(j * nx + 0)
        bwall.append("left")
        bcell.append(j * nx + nx - 1)
        bwall.append("right")
        blength.extend([dy, dy])
    for i in range(nx):
        bcell.append(0 * nx + i)
        bwall.append("bottom")
        bcell.append((ny - 1) * nx + i)
        bwall.append("top")
        blength.extend([dx, dx])
    bnormal = [WALL_NORMALS[w] for w in bwall]

    if flavor == DISCONTINUOUS:
        cell_dofs = 4 * np.arange(n_cells)[:, None] + np.arange(4)[None, :]
    else:
        node = lambda i, j: j * (nx + 1) + i
        cell_dofs = np.column_stack(
            [node(ii, jj), node(ii + 1, jj), node(ii, jj + 1), node(ii + 1, jj + 1)]
        )

    def arr(x, dtype=float):
        a = np.asarray(x, dtype=dtype)
        a.setflags(write=False)
        return a

    return Grid(
        nx=nx,
        ny=ny,
        x0=x0,
        y0=y0,
        dx=dx,
        dy=dy,
        flavor=flavor,
        iface_minus=arr(minus, int),
        iface_plus=arr(plus, int),
        iface_normal=arr(normal),
        iface_length=arr(length),
        iface_vertical=arr(vertical, bool),
        bface_cell=arr(bcell, int),
        bface_normal=arr(bnormal),
        bface_length=arr(blength),
        bface_wall=np.asarray(bwall, dtype=object),
        cell_centers=arr(centers),
        cell_dofs=arr(cell_dofs, int),
    )


@dataclass(frozen=True, eq=False)
class MaterialMap:
    """Per-cell material index into a separately-kept material table."""

    ids: np.ndarray
    n_materials: int

    def __post_init__(self):
        ids = np.asarray(self.ids, dtype=int)
        if ids.min() < 0 or ids.max() >= self.n_materials:
            raise ContractViolation(
                f"material ids must lie in [0, {self.n_materials}), "
                f"got range [{ids.min()}, {ids.max()}]"
            )


def assign_materials(grid, shapes, background, n_materials):
    """Paint material ids onto cells by cell-center containment.

    Later shapes override earlier ones.  Cells not covered by any shape get
    ``background``.
    """
    if not 0 <= background < n_materials:
        raise ConfigurationError(f"background material {background} outside [0, {n_materials})")
    ids = np.full(grid.n_cells, background, dtype=int)
    cx = grid.cell_centers[:, 0]
    cy = grid.cell_centers[:, 1]
    for shape in shapes:
        if not 0 <= shape.material < n_materials:
            raise ConfigurationError(
                f"shape material {shape.material} outside [0, {n_materials})"
            )
        inside = shape.contains(cx, cy)
        ids[inside] = shape.material
    ids.setflags(write=False)
    return MaterialMap(ids=ids, n_materials=n_materials)


def dof_coordinates(grid):
    """Physical coordinates of every dof: cell corners for the discontinuous
    layout (repeated at shared corners), grid nodes for the continuous one."""
    if grid.flavor == DISCONTINUOUS:
        coords = np.empty((grid.n_dofs, 2))
        offsets = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])
        for c in range(grid.n_cells):
            i, j = c % grid.nx, c // grid.nx
            corner = np.array([grid.x0 + i * grid.dx, grid.y0 + j * grid.dy])
            coords[grid.cell_dofs[c]] = corner + offsets * [grid.dx, grid.dy]
        return coords
    xs = grid.x0 + grid.dx * np.arange(grid.nx + 1)
    ys = grid.y0 + grid.dy * np.arange(grid.ny + 1)
    gx, gy = np.meshgrid(xs, ys)
    return np.column_stack([gx.ravel(), gy.ravel()])


def _gauss_1d(n):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w  # mapped to [0, 1]


def _shape_values(xi, eta):
    return np.array(
        [(1 - xi) * (1 - eta), xi * (1 - eta), (1 - xi) * eta, xi * eta]
    )


def _shape_grads(xi, eta):
    dxi = np.array([-(1 - eta), (1 - eta), -eta, eta])
    deta = np.array([-(1 - xi), -xi, (1 - xi), xi])
    return dxi, deta


def q1_reference():
    """Reference-cell integrals of the bilinear basis on [0,1]^2.

    Returns a dict with
      ``mass``:  4x4, integral N_i N_j
      ``grad``:  2 matrices, grad[a][i,j] = integral (d_a N_i) N_j
      ``stiff``: 2x2 nested, stiff[a][b][i,j] = integral (d_a N_i)(d_b N_j)
      ``edge``:  2x2 1D mass on a unit edge, integral l_i l_j
      ``edge_first``: 2-vector, integral of l_i over a unit edge

    Everything is unscaled; callers multiply by the appropriate dx/dy powers.
    """
    pts, wts = _gauss_1d(3)
    mass = np.zeros((4, 4))
    grad = [np.zeros((4, 4)) for _ in range(2)]
    stiff = [[np.zeros((4, 4)) for _ in range(2)] for _ in range(2)]
    for xi, wx in zip(pts, wts):
        for eta, wy in zip(pts, wts):
            n = _shape_values(xi, eta)
            g = _shape_grads(xi, eta)
            w = wx * wy
            mass += w * np.outer(n, n)
            for a in range(2):
                grad[a] += w * np.outer(g[a], n)
                for b in range(2):
                    stiff[a][b] += w * np.outer(g[a], g[b])
    edge = np.array([[2.0, 1.0], [1.0, 2.0]]) / 6.0
    edge_first = np.array([0.5, 0.5])
    return {"mass": mass, "grad": grad, "stiff": stiff, "edge": edge, "edge_first": edge_first}
