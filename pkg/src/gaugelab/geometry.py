"""Single-chart surfaces with boundary: grids, metrics, boundary data, curves.

Two charts are supported.  The rectangle is ``[0,1]^2`` with spacing
``1/(n-1)``.  The annulus is ``[0,1] x S^1``, periodic in ``x^2`` with spacing
``2 pi / n2``; its boundary is the two circles ``x^1 = 0`` and ``x^1 = 1``.
Fields are numpy arrays with leading shape ``(n1, n2)`` and node index
``i * n2 + j`` (row-major in ``x^1``).
"""

from __future__ import annotations

import ast
import math
import operator
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

__all__ = [
    "GeometryError",
    "ChartGrid",
    "MetricField",
    "BoundaryRegion",
    "Curve",
    "build_grid",
    "metric_geometry",
    "metric_preset",
    "boundary_normal",
    "trace_curve",
    "pad_grid",
    "region_all",
    "region_sides",
    "region_where",
    "collar_normal_form",
    "parse_scalar_expr",
]


class GeometryError(ValueError):
    """Invalid grid, metric, region or curve."""


# outward side labels: (normal axis, outward sign)
SIDES = {"x1-": (0, -1), "x1+": (0, +1), "x2-": (1, -1), "x2+": (1, +1)}


@dataclass(frozen=True)
class ChartGrid:
    """Node grid of a rectangle or annulus chart.

    Attributes
    ----------
    topology : {"rectangle", "annulus"}
    n1, n2 : int
        Node counts in ``x^1`` and ``x^2``.
    h1, h2 : float
        Spacings.
    periodic : bool
        True in ``x^2`` for the annulus.
    boundary_nodes : ndarray of int
        Boundary node indices, counterclockwise.
    boundary_sides : tuple of str
        Outward side label of each boundary node (``"x1-"``, ``"x2+"``, ...).
    origin : tuple of float
        Coordinates of node ``(0, 0)``; nonzero only for padded grids.
    """

    topology: str
    n1: int
    n2: int
    h1: float
    h2: float
    periodic: bool
    boundary_nodes: np.ndarray = field(repr=False)
    boundary_sides: Tuple[str, ...] = field(repr=False)
    origin: Tuple[float, float] = (0.0, 0.0)

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.n1, self.n2)

    @property
    def n_nodes(self) -> int:
        return self.n1 * self.n2

    @property
    def n_boundary(self) -> int:
        return len(self.boundary_nodes)

    def coords(self) -> Tuple[np.ndarray, np.ndarray]:
        """Chart coordinates ``(X1, X2)`` of all nodes, each of shape (n1, n2)."""
        x1 = self.origin[0] + np.arange(self.n1) * self.h1
        x2 = self.origin[1] + np.arange(self.n2) * self.h2
        return np.meshgrid(x1, x2, indexing="ij")

    def node_ij(self, node: int) -> Tuple[int, int]:
        return divmod(int(node), self.n2)

    def node_index(self, i: int, j: int) -> int:
        return i * self.n2 + j

    def boundary_mask(self) -> np.ndarray:
        mask = np.zeros(self.n_nodes, dtype=bool)
        mask[self.boundary_nodes] = True
        return mask.reshape(self.shape)

    def interior_nodes(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary_mask().ravel())

    def side_of(self, node: int) -> str:
        pos = np.flatnonzero(self.boundary_nodes == node)
        if pos.size == 0:
            raise GeometryError(f"node {node} is not a boundary node")
        return self.boundary_sides[int(pos[0])]

    def boundary_coords(self) -> np.ndarray:
        X1, X2 = self.coords()
        return np.stack([X1.ravel()[self.boundary_nodes], X2.ravel()[self.boundary_nodes]], axis=1)

    def contains(self, point: Sequence[float], tol: float = 1e-12) -> bool:
        x1, x2 = point
        lo1, hi1 = self.origin[0], self.origin[0] + (self.n1 - 1) * self.h1
        if not (lo1 - tol <= x1 <= hi1 + tol):
            return False
        if self.topology == "annulus":
            return True
        lo2, hi2 = self.origin[1], self.origin[1] + (self.n2 - 1) * self.h2
        return lo2 - tol <= x2 <= hi2 + tol

    def fractional_index(self, point: Sequence[float]) -> Tuple[float, float]:
        """Grid coordinates ``(i, j)`` of a chart point (``j`` reduced mod ``n2`` on the annulus)."""
        s1 = (point[0] - self.origin[0]) / self.h1
        if self.periodic:
            return s1, (point[1] % (2 * math.pi)) / self.h2
        return s1, (point[1] - self.origin[1]) / self.h2


def build_grid(topology: str, n1: int, n2: int) -> ChartGrid:
    """Build a rectangle or annulus grid.

    Examples
    --------
    >>> build_grid("rectangle", 4, 4).n_boundary
    12
    >>> build_grid("annulus", 4, 8).n_boundary
    16
    """
    if topology not in ("rectangle", "annulus"):
        raise GeometryError(f"unknown topology {topology!r}")
    if n1 < 3 or n2 < 3:
        raise GeometryError(f"grid size too small: ({n1}, {n2}); both counts must be >= 3")
    if topology == "rectangle":
        return _make_grid(topology, n1, n2, 1.0 / (n1 - 1), 1.0 / (n2 - 1), (0.0, 0.0))
    return _make_grid(topology, n1, n2, 1.0 / (n1 - 1), 2 * math.pi / n2, (0.0, 0.0))


def _make_grid(topology: str, n1: int, n2: int, h1: float, h2: float, origin) -> ChartGrid:
    idx = lambda i, j: i * n2 + j  # noqa: E731
    nodes: List[int] = []
    sides: List[str] = []
    if topology == "rectangle":
        for i in range(0, n1 - 1):
            nodes.append(idx(i, 0)), sides.append("x2-")
        for j in range(0, n2 - 1):
            nodes.append(idx(n1 - 1, j)), sides.append("x1+")
        for i in range(n1 - 1, 0, -1):
            nodes.append(idx(i, n2 - 1)), sides.append("x2+")
        for j in range(n2 - 1, 0, -1):
            nodes.append(idx(0, j)), sides.append("x1-")
    else:
        for j in range(n2):
            nodes.append(idx(n1 - 1, j)), sides.append("x1+")
        for j in range(n2 - 1, -1, -1):
            nodes.append(idx(0, j)), sides.append("x1-")
    periodic = topology == "annulus"
    return ChartGrid(
        topology, n1, n2, h1, h2, periodic, np.asarray(nodes, dtype=np.int64), tuple(sides), tuple(map(float, origin))
    )


def pad_grid(grid: ChartGrid, side: str, cells: int) -> Tuple[ChartGrid, Tuple[slice, slice]]:
    """Grid extended outward across ``side`` by ``cells`` cells, same spacing.

    Returns the new grid and the index window of the original nodes in it.
    """
    if side not in SIDES or (grid.periodic and side.startswith("x2")):
        raise GeometryError(f"no boundary side {side!r} on the {grid.topology}")
    if cells < 1:
        raise GeometryError("pad must be at least one cell")
    axis, sign = SIDES[side]
    n = [grid.n1, grid.n2]
    o = list(grid.origin)
    h = (grid.h1, grid.h2)
    n[axis] += cells
    win = [slice(0, grid.n1), slice(0, grid.n2)]
    if sign < 0:
        o[axis] -= cells * h[axis]
        win[axis] = slice(cells, cells + (grid.n1, grid.n2)[axis])
    return _make_grid(grid.topology, n[0], n[1], grid.h1, grid.h2, tuple(o)), tuple(win)


# ---------------------------------------------------------------------------
# metrics


@dataclass(frozen=True)
class MetricField:
    """Per-node SPD metric with cached inverse and density.

    Attributes
    ----------
    g : ndarray, shape (n1, n2, 2, 2)
    g_inv : ndarray, shape (n1, n2, 2, 2)
    sqrt_det : ndarray, shape (n1, n2)
    """

    g: np.ndarray = field(repr=False)
    g_inv: np.ndarray = field(repr=False)
    sqrt_det: np.ndarray = field(repr=False)

    @property
    def is_diagonal(self) -> bool:
        return bool(np.all(self.g[..., 0, 1] == 0) and np.all(self.g[..., 1, 0] == 0))


def metric_geometry(grid: ChartGrid, raw: np.ndarray) -> MetricField:
    """Validate metric samples and cache ``g^{ij}`` and ``sqrt|det g|``.

    Parameters
    ----------
    raw : array_like, shape (n1, n2, 2, 2) or (2, 2)
        A single 2x2 matrix is broadcast to every node.
    """
    g = np.asarray(raw, dtype=float)
    if g.shape == (2, 2):
        g = np.broadcast_to(g, grid.shape + (2, 2)).copy()
    if g.shape != grid.shape + (2, 2):
        raise GeometryError(f"metric samples have shape {g.shape}, expected {grid.shape + (2, 2)}")
    asym = np.abs(g[..., 0, 1] - g[..., 1, 0])
    if np.any(asym > 1e-14 * (1 + np.abs(g[..., 0, 1]))):
        node = int(np.argmax(asym.ravel()))
        raise GeometryError(f"metric sample at node {node} is not symmetric")
    det = g[..., 0, 0] * g[..., 1, 1] - g[..., 0, 1] ** 2
    bad = (g[..., 0, 0] <= 0) | (det <= 0)
    if np.any(bad):
        node = int(np.flatnonzero(bad.ravel())[0])
        raise GeometryError(f"metric is not positive definite at node {node} (grid position {grid.node_ij(node)})")
    inv = np.empty_like(g)
    inv[..., 0, 0] = g[..., 1, 1] / det
    inv[..., 1, 1] = g[..., 0, 0] / det
    inv[..., 0, 1] = inv[..., 1, 0] = -g[..., 0, 1] / det
    return MetricField(g=g, g_inv=inv, sqrt_det=np.sqrt(det))


_BINOPS = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul, ast.Div: operator.truediv}
_FUNCS = {"sin": np.sin, "cos": np.cos, "exp": np.exp}
_CONSTS = {"pi": math.pi, "e": math.e}


def parse_scalar_expr(expr: str) -> Callable[[np.ndarray, np.ndarray], np.ndarray]:
    """Compile a closed-form scalar in ``x1, x2``.

    The grammar has numbers, ``pi``, ``e``, the variables, ``+ - * /`` and
    unary minus, parentheses, and the functions ``sin``, ``cos``, ``exp``.
    ``×`` and ``−`` are accepted as aliases.
    """
    src = expr.replace("×", "*").replace("−", "-").strip()
    if not src:
        raise GeometryError("empty expression")
    try:
        tree = ast.parse(src, mode="eval")
    except SyntaxError as exc:
        raise GeometryError(f"cannot parse expression {expr!r}: {exc.msg}") from None

    def check(node):
        if isinstance(node, ast.Expression):
            return check(node.body)
        if isinstance(node, ast.BinOp) and type(node.op) in _BINOPS:
            return check(node.left) and check(node.right)
        if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
            return check(node.operand)
        if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) and node.func.id in _FUNCS:
            return len(node.args) == 1 and not node.keywords and check(node.args[0])
        if isinstance(node, ast.Name) and (node.id in ("x1", "x2") or node.id in _CONSTS):
            return True
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) and not isinstance(node.value, bool):
            return True
        raise GeometryError(f"expression {expr!r} uses an unsupported construct: {ast.dump(node)[:60]}")

    check(tree)

    def evaluate(node, x1, x2):
        if isinstance(node, ast.Expression):
            return evaluate(node.body, x1, x2)
        if isinstance(node, ast.BinOp):
            return _BINOPS[type(node.op)](evaluate(node.left, x1, x2), evaluate(node.right, x1, x2))
        if isinstance(node, ast.UnaryOp):
            v = evaluate(node.operand, x1, x2)
            return -v if isinstance(node.op, ast.USub) else v
        if isinstance(node, ast.Call):
            return _FUNCS[node.func.id](evaluate(node.args[0], x1, x2))
        if isinstance(node, ast.Name):
            if node.id == "x1":
                return x1
            if node.id == "x2":
                return x2
            return _CONSTS[node.id]
        return float(node.value)

    def f(x1, x2):
        out = evaluate(tree, np.asarray(x1, dtype=float), np.asarray(x2, dtype=float))
        return np.broadcast_to(np.asarray(out, dtype=float), np.broadcast(x1, x2).shape).copy()

    return f


def metric_preset(grid: ChartGrid, spec: str) -> MetricField:
    """Metric from a preset name: ``flat``, ``diag(a,b)``, ``conformal:expr``.

    ``conformal:expr`` is ``expr(x1, x2) * identity``.
    """
    spec = spec.strip()
    if spec == "flat":
        return metric_geometry(grid, np.eye(2))
    if spec.startswith("diag(") and spec.endswith(")"):
        try:
            a, b = (float(t) for t in spec[5:-1].split(","))
        except ValueError:
            raise GeometryError(f"bad diag preset {spec!r}") from None
        return metric_geometry(grid, np.diag([a, b]))
    if spec.startswith("conformal:"):
        f = parse_scalar_expr(spec[len("conformal:") :])
        X1, X2 = grid.coords()
        c = f(X1, X2)
        g = np.zeros(grid.shape + (2, 2))
        g[..., 0, 0] = c
        g[..., 1, 1] = c
        return metric_geometry(grid, g)
    raise GeometryError(f"unknown metric preset {spec!r}")


def collar_normal_form(grid: ChartGrid, metric: MetricField, cells: int = 4, tol: float = 1e-12) -> bool:
    """True if ``g_{1n} = 0`` and ``g_{nn} = 1`` within ``cells`` of every boundary side."""
    g = metric.g
    ok = True
    n1, n2 = grid.shape
    c = min(cells, n1 - 1)
    for sl, axis in ((np.s_[:c + 1, :], 0), (np.s_[n1 - 1 - c :, :], 0)):
        ok &= bool(np.all(np.abs(g[sl][..., 0, 1]) <= tol) and np.all(np.abs(g[sl][..., axis, axis] - 1) <= tol))
    if grid.topology == "rectangle":
        c2 = min(cells, n2 - 1)
        for sl in (np.s_[:, : c2 + 1], np.s_[:, n2 - 1 - c2 :]):
            ok &= bool(np.all(np.abs(g[sl][..., 0, 1]) <= tol) and np.all(np.abs(g[sl][..., 1, 1] - 1) <= tol))
    return ok


def boundary_normal(grid: ChartGrid, metric: MetricField, node: int) -> np.ndarray:
    """Outward g-unit conormal covector at a boundary node.

    For the side ``x^k = const`` this is ``s dx^k / |dx^k|_g`` with ``s`` the
    outward sign, so ``g^{ij} nu_i nu_j = 1``.
    """
    node = int(node)
    if not grid.boundary_mask().ravel()[node]:
        raise GeometryError(f"node {node} is interior; boundary normal undefined")
    axis, sign = SIDES[grid.side_of(node)]
    i, j = grid.node_ij(node)
    gkk = metric.g_inv[i, j, axis, axis]
    nu = np.zeros(2)
    nu[axis] = sign / math.sqrt(gkk)
    return nu


# ---------------------------------------------------------------------------
# boundary regions


@dataclass(frozen=True)
class BoundaryRegion:
    """Subset Gamma of the boundary, as a mask over ``grid.boundary_nodes``."""

    grid: ChartGrid = field(repr=False)
    mask: np.ndarray

    def __post_init__(self):
        if self.mask.shape != (self.grid.n_boundary,):
            raise GeometryError("region mask does not match the boundary node list")

    @property
    def nodes(self) -> np.ndarray:
        return self.grid.boundary_nodes[self.mask]

    @property
    def positions(self) -> np.ndarray:
        """Positions of the region within the boundary node list."""
        return np.flatnonzero(self.mask)

    def size(self) -> int:
        return int(self.mask.sum())

    def require_nonempty(self) -> "BoundaryRegion":
        if not self.mask.any():
            raise GeometryError("measurement region is empty")
        return self

    def components(self) -> List[np.ndarray]:
        """Connected runs along each boundary cycle, as position arrays."""
        out = []
        for cyc in _boundary_cycles(self.grid):
            m = self.mask[cyc]
            if m.all():
                out.append(cyc.copy())
                continue
            if not m.any():
                continue
            start = int(np.flatnonzero(~m)[0])
            run: List[int] = []
            for k in range(1, len(cyc) + 1):
                pos = (start + k) % len(cyc)
                if m[pos]:
                    run.append(int(cyc[pos]))
                elif run:
                    out.append(np.asarray(run))
                    run = []
            if run:
                out.append(np.asarray(run))
        return out


def _boundary_cycles(grid: ChartGrid) -> List[np.ndarray]:
    nb = grid.n_boundary
    if grid.topology == "rectangle":
        return [np.arange(nb)]
    return [np.arange(grid.n2), np.arange(grid.n2, nb)]


def region_all(grid: ChartGrid) -> BoundaryRegion:
    return BoundaryRegion(grid, np.ones(grid.n_boundary, dtype=bool))


def region_sides(grid: ChartGrid, sides: Sequence[str]) -> BoundaryRegion:
    """All boundary nodes whose side label is in ``sides``.

    Corner nodes carry the label of the side that precedes them
    counterclockwise, so a full edge ``x1-`` of an n x n rectangle is
    ``region_where`` with ``x1 == 0`` rather than the label alone.
    """
    mask = np.array([s in sides for s in grid.boundary_sides])
    return BoundaryRegion(grid, mask)


def region_where(grid: ChartGrid, pred: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> BoundaryRegion:
    """Boundary nodes whose coordinates satisfy ``pred(x1, x2)``."""
    bc = grid.boundary_coords()
    return BoundaryRegion(grid, np.asarray(pred(bc[:, 0], bc[:, 1]), dtype=bool))


# ---------------------------------------------------------------------------
# curves


@dataclass(frozen=True)
class Curve:
    """Piecewise-linear curve in chart coordinates.

    Attributes
    ----------
    points : ndarray, shape (N, 2)
        For the annulus, ``x^2`` is unwrapped (not reduced mod 2 pi).
    params : ndarray, shape (N,)
        Uniform parameter values in ``[0, 1]``.
    closed : bool
    anchor : int or None
        Boundary node at the start point, if it is one.
    """

    points: np.ndarray
    params: np.ndarray
    closed: bool
    anchor: Optional[int] = None

    def winding_number(self) -> int:
        """Turns around the annulus (0 on the rectangle)."""
        return int(round((self.points[-1, 1] - self.points[0, 1]) / (2 * math.pi)))

    def reversed(self) -> "Curve":
        return Curve(self.points[::-1].copy(), self.params.copy(), self.closed, None)


def trace_curve(
    grid: ChartGrid,
    waypoints: Sequence[Sequence[float]],
    samples_per_segment: Optional[int] = None,
) -> Curve:
    """Resample a polyline through ``waypoints`` uniformly in each segment.

    With ``samples_per_segment=None`` the count is the smallest keeping
    consecutive points within one cell.  A curve is closed when its first and
    last waypoints coincide (on the annulus, modulo ``2 pi`` in ``x^2``).
    """
    wp = np.asarray(waypoints, dtype=float)
    if wp.ndim != 2 or wp.shape[1] != 2 or len(wp) < 2:
        raise GeometryError("need at least two 2-D waypoints")
    for p in wp:
        if not grid.contains(p):
            raise GeometryError(f"waypoint {tuple(p)} lies outside the chart")
    pts = [wp[0]]
    for a, b in zip(wp[:-1], wp[1:]):
        seg = b - a
        if samples_per_segment is None:
            cells = max(abs(seg[0]) / grid.h1, abs(seg[1]) / grid.h2)
            k = max(1, int(math.ceil(cells - 1e-12)))
        else:
            k = int(samples_per_segment)
            if k < 1:
                raise GeometryError("samples_per_segment must be >= 1")
        t = np.arange(1, k + 1) / k
        pts.extend(a + t[:, None] * seg)
    P = np.asarray(pts)
    steps = np.abs(np.diff(P, axis=0))
    if np.any(steps[:, 0] > grid.h1 * (1 + 1e-9)) or np.any(steps[:, 1] > grid.h2 * (1 + 1e-9)):
        raise GeometryError("consecutive curve points are more than one cell apart; increase samples_per_segment")
    d = wp[-1] - wp[0]
    if grid.topology == "annulus":
        closed = abs(d[0]) < 1e-12 and abs(math.remainder(d[1], 2 * math.pi)) < 1e-12
    else:
        closed = bool(np.all(np.abs(d) < 1e-12))
    anchor = None
    i0, j0 = grid.fractional_index(P[0])
    if abs(i0 - round(i0)) < 1e-9 and abs(j0 - round(j0)) < 1e-9:
        node = grid.node_index(int(round(i0)), int(round(j0)) % grid.n2)
        if grid.boundary_mask().ravel()[node]:
            anchor = node
    params = np.linspace(0.0, 1.0, len(P))
    return Curve(points=P, params=params, closed=closed, anchor=anchor)
