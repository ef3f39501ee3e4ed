"""Discrete connection Laplacian, Dirichlet solves, normal derivatives, DN matrices.

The operator is ``L = d_A^* d_A + Q`` with ``d_A`` the staggered (link)
covariant derivative and ``d_A^*`` its edge-to-node divergence, i.e. row for
row the composition ``codifferential(covariant_derivative(u, staggered=True))``
from :mod:`gaugelab.bundle_calculus`.  Degrees of freedom are ordered node
major, fibre minor: ``dof = node * m + a``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .bundle_calculus import (
    ConnectionField,
    FieldError,
    PotentialField,
    SectionField,
    _edge_weights,
    edge_links,
)
from .geometry import SIDES, BoundaryRegion, ChartGrid, GeometryError, MetricField, region_all

__all__ = [
    "SolverError",
    "SingularSystemError",
    "DiscreteOperator",
    "DirichletSolution",
    "DNMatrix",
    "assemble",
    "solve_dirichlet",
    "normal_derivative",
    "dn_matrix",
    "dn_discrepancy",
    "boundary_pairing",
]


class SolverError(RuntimeError):
    """Numerical failure in the elliptic solver."""


class SingularSystemError(SolverError):
    """The interior Dirichlet system is singular."""


@dataclass(eq=False)
class DiscreteOperator:
    """Interior rows of ``d_A^* d_A + Q`` on a grid.

    Attributes
    ----------
    L : scipy.sparse.csr_matrix, shape (m*N_int, m*N_total)
        Interior rows; columns cover every node.
    L_II, L_IB : sparse blocks
        Columns restricted to interior and boundary dofs.
    weights : ndarray, shape (m*N_int,)
        ``sqrt|g| h1 h2`` per interior dof; ``diag(weights) L_II`` is
        Hermitian for unitary A and Hermitian Q.
    """

    grid: ChartGrid
    metric: MetricField
    conn: ConnectionField
    potential: PotentialField
    L: sp.csr_matrix = field(repr=False)
    interior: np.ndarray = field(repr=False)
    boundary: np.ndarray = field(repr=False)
    weights: np.ndarray = field(repr=False)
    _lu: Optional[object] = field(default=None, repr=False)

    @property
    def m(self) -> int:
        return self.conn.m

    def dofs(self, nodes: np.ndarray) -> np.ndarray:
        m = self.m
        return (np.asarray(nodes)[:, None] * m + np.arange(m)[None, :]).ravel()

    @property
    def L_II(self) -> sp.csc_matrix:
        return self.L[:, self.dofs(self.interior)].tocsc()

    @property
    def L_IB(self) -> sp.csr_matrix:
        return self.L[:, self.dofs(self.boundary)].tocsr()

    def apply(self, u: SectionField) -> np.ndarray:
        """``L u`` at interior nodes, shape (N_int, m, k)."""
        v = self.L @ u.flat()
        return v.reshape(len(self.interior), self.m, -1)

    def hermitian_form(self) -> sp.csc_matrix:
        return (sp.diags(self.weights) @ self.L_II).tocsc()

    def factorization(self):
        """Sparse LU of the interior block (built once)."""
        if self._lu is None:
            A = self.L_II
            try:
                lu = spla.splu(A, permc_spec="COLAMD")
            except RuntimeError as exc:
                raise SingularSystemError(f"interior Dirichlet system is singular: {exc}") from None
            diag = np.abs(lu.U.diagonal())
            if diag.min() <= 1e-13 * diag.max():
                raise SingularSystemError(
                    f"interior Dirichlet system is numerically singular (pivot ratio {diag.min() / diag.max():.2e})"
                )
            self._lu = lu
        return self._lu


def assemble(
    grid: ChartGrid,
    metric: MetricField,
    conn: ConnectionField,
    potential: Optional[PotentialField] = None,
) -> DiscreteOperator:
    """Assemble ``d_A^* d_A + Q`` as a sparse complex block matrix.

    For ``A = 0``, ``Q = 0`` and the flat metric this is the 5-point stencil
    ``(4 u_i - sum u_nb) / h^2``, i.e. ``-Delta``.

    Raises
    ------
    FieldError
        If connection and potential ranks differ.
    GeometryError
        If the metric is not diagonal.
    """
    m = conn.m
    if potential is None:
        potential = PotentialField.zero(grid, m)
    if potential.m != m:
        raise FieldError(f"rank mismatch: connection has m={m}, potential has m={potential.m}")
    if conn.shape != grid.shape or potential.Q.shape[:2] != grid.shape:
        raise FieldError("field shapes do not match the grid")
    n1, n2 = grid.shape
    U1, U2, V1, V2 = edge_links(grid, conn)
    e1, e2 = _edge_weights(grid, metric)
    sg = metric.sqrt_det
    interior = grid.interior_nodes()
    boundary = grid.boundary_nodes
    row_of = -np.ones(grid.n_nodes, dtype=np.int64)
    row_of[interior] = np.arange(len(interior))
    I, J = np.divmod(interior, n2)
    eye = np.eye(m)

    rows, cols, vals = [], [], []

    def add(node_rows, node_cols, blocks):
        # blocks: (N, m, m); block (a, b) couples row dof a to column dof b
        r = node_rows[:, None, None] * m + np.arange(m)[None, :, None]
        c = node_cols[:, None, None] * m + np.arange(m)[None, None, :]
        r, c = np.broadcast_to(r, blocks.shape), np.broadcast_to(c, blocks.shape)
        rows.append(r.ravel())
        cols.append(c.ravel())
        vals.append(blocks.ravel())

    rid = row_of[interior]
    scale = 1.0 / sg[I, J]
    # x1 neighbours: edge (i, j) -> (i+1, j) has weight e1[i, j], link U1[i, j]
    wp, wm = e1[I, J], e1[I - 1, J]
    hh = grid.h1 ** 2
    add(rid, interior + n2, -(scale * wp / hh)[:, None, None] * U1[I, J])
    add(rid, interior - n2, -(scale * wm / hh)[:, None, None] * V1[I - 1, J])
    diag = ((scale * (wp + wm) / hh)[:, None, None]) * eye
    # x2 neighbours
    hh = grid.h2 ** 2
    if grid.periodic:
        Jp, Jm = (J + 1) % n2, (J - 1) % n2
        wp, wm = e2[I, J], e2[I, Jm]
        Up, Vm = U2[I, J], V2[I, Jm]
    else:
        Jp, Jm = J + 1, J - 1
        wp, wm = e2[I, J], e2[I, Jm]
        Up, Vm = U2[I, J], V2[I, Jm]
    add(rid, I * n2 + Jp, -(scale * wp / hh)[:, None, None] * Up)
    add(rid, I * n2 + Jm, -(scale * wm / hh)[:, None, None] * Vm)
    diag = diag + ((scale * (wp + wm) / hh)[:, None, None]) * eye
    add(rid, interior, diag + potential.Q[I, J])

    L = sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(m * len(interior), m * grid.n_nodes),
    ).tocsr()
    L.sum_duplicates()
    weights = np.repeat(sg[I, J] * grid.h1 * grid.h2, m)
    return DiscreteOperator(grid, metric, conn, potential, L, interior, boundary, weights)


@dataclass(eq=False)
class DirichletSolution:
    """Solution of ``L u = 0`` with ``u = f`` on the boundary."""

    op: DiscreteOperator = field(repr=False)
    u: SectionField = field(repr=False)
    residual: float
    boundary_data: np.ndarray = field(repr=False)


def _boundary_array(op: DiscreteOperator, f) -> np.ndarray:
    f = np.asarray(f, dtype=complex)
    nb, m = op.grid.n_boundary, op.m
    if f.ndim == 1 and f.shape[0] == nb and m == 1:
        f = f[:, None, None]
    elif f.ndim == 2 and f.shape == (nb, m):
        f = f[..., None]
    if f.ndim != 3 or f.shape[:2] != (nb, m):
        raise FieldError(f"boundary data must have shape ({nb}, {m}[, k]), got {f.shape}")
    return f


def solve_dirichlet(op: DiscreteOperator, f) -> DirichletSolution:
    """Solve the Dirichlet problem with boundary values ``f``.

    Parameters
    ----------
    f : array_like, shape (N_bnd, m) or (N_bnd, m, k)
        Values at ``grid.boundary_nodes`` in boundary order.

    Raises
    ------
    SingularSystemError
        If the interior system is singular or the solve is inaccurate.
    """
    f = _boundary_array(op, f)
    nb, m, k = f.shape
    fb = f.reshape(nb * m, k)
    lu = op.factorization()
    rhs = -(op.L_IB @ fb)
    uI = lu.solve(np.ascontiguousarray(rhs))
    if not np.all(np.isfinite(uI)):
        raise SingularSystemError("non-finite Dirichlet solution")
    res = op.L_II @ uI - rhs
    rnorm = float(np.linalg.norm(res))
    scale = float(np.linalg.norm(fb)) or 1.0
    hscale = max(1.0, float(abs(op.L_II).max()))
    if rnorm > 1e-10 * scale * hscale:
        raise SingularSystemError(f"Dirichlet residual {rnorm:.2e} exceeds tolerance")
    full = np.zeros((op.grid.n_nodes * m, k), dtype=complex)
    full[op.dofs(op.interior)] = uI
    full[op.dofs(op.boundary)] = fb
    u = SectionField(full.reshape(op.grid.n1, op.grid.n2, m, k))
    return DirichletSolution(op, u, rnorm / scale, f)


def _normal_stencil(grid: ChartGrid, metric: MetricField, conn: ConnectionField) -> sp.csr_matrix:
    """Sparse map from all dofs to ``d_A u(nu)`` at boundary dofs."""
    m = conn.m
    n2 = grid.n2
    rows, cols, vals = [], [], []
    eye = np.eye(m)
    for pos, (node, side) in enumerate(zip(grid.boundary_nodes, grid.boundary_sides)):
        axis, sign = SIDES[side]
        i, j = divmod(int(node), n2)
        h = grid.h1 if axis == 0 else grid.h2
        gkk = metric.g_inv[i, j, axis, axis]
        if metric.g_inv[i, j, 0, 1] != 0:
            raise GeometryError("normal derivative requires a diagonal metric at the boundary")
        nu_up = gkk * sign / np.sqrt(gkk)  # nu^k = g^{kk} nu_k
        step = -sign  # inward
        nbrs = []
        for d in range(3):
            if axis == 0:
                nbrs.append((i + step * d) * n2 + j)
            else:
                jj = j + step * d
                nbrs.append(i * n2 + (jj % n2 if grid.periodic else jj))
        # derivative along +axis from the one-sided inward stencil
        coef = np.array([-3.0, 4.0, -1.0]) / (2 * h) * step
        blocks = [coef[0] * eye + conn.A[axis, i, j], coef[1] * eye, coef[2] * eye]
        for nb, blk in zip(nbrs, blocks):
            r = pos * m + np.arange(m)[:, None]
            c = nb * m + np.arange(m)[None, :]
            rows.append(np.broadcast_to(r, (m, m)).ravel())
            cols.append(np.broadcast_to(c, (m, m)).ravel())
            vals.append((nu_up * blk).ravel())
    return sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(grid.n_boundary * m, grid.n_nodes * m),
    ).tocsr()


def normal_derivative(sol: DirichletSolution) -> np.ndarray:
    """``d_A u(nu)`` at boundary nodes, shape (N_bnd, m, k).

    Second-order one-sided difference along the inward grid line plus
    ``A(nu) u``, contracted with the outward unit normal.
    """
    op = sol.op
    N = _normal_stencil(op.grid, op.metric, op.conn)
    out = N @ sol.u.flat()
    return out.reshape(op.grid.n_boundary, op.m, -1)


@dataclass(eq=False)
class DNMatrix:
    """Dense DN matrix on the dofs of a boundary region.

    Rows and columns are ordered by boundary position then fibre index.
    """

    matrix: np.ndarray = field(repr=False)
    region: BoundaryRegion = field(repr=False)
    m: int
    scenario_hash: str = ""

    @property
    def shape(self):
        return self.matrix.shape

    @property
    def nodes(self) -> np.ndarray:
        return self.region.nodes

    def to_csv(self, path: str) -> None:
        """Write interleaved real/imag CSV plus a JSON sidecar ``path + '.json'``."""
        M = self.matrix
        inter = np.empty((M.shape[0], 2 * M.shape[1]))
        inter[:, 0::2] = M.real
        inter[:, 1::2] = M.imag
        np.savetxt(path, inter, delimiter=",", fmt="%.17g")
        side = {
            "kind": "dn-matrix",
            "schema": 1,
            "shape": list(M.shape),
            "m": self.m,
            "gamma_nodes": [int(n) for n in self.nodes],
            "scenario_hash": self.scenario_hash,
            "layout": "row-major; columns interleave real,imag; dof = region position * m + fibre index",
        }
        with open(path + ".json", "w") as fh:
            json.dump(side, fh, indent=2, sort_keys=True)

    @staticmethod
    def read_csv(path: str):
        """Return (matrix, sidecar dict)."""
        with open(path + ".json") as fh:
            side = json.load(fh)
        raw = np.loadtxt(path, delimiter=",", ndmin=2)
        M = raw[:, 0::2] + 1j * raw[:, 1::2]
        if list(M.shape) != side["shape"]:
            raise ValueError("DN matrix CSV does not match its sidecar shape")
        return M, side


def dn_matrix(op: DiscreteOperator, region: Optional[BoundaryRegion] = None, scenario_hash: str = "") -> DNMatrix:
    """DN matrix restricted to Gamma (rows and columns).

    Column ``j`` is the normal derivative of the Dirichlet solution for the
    nodal indicator boundary data ``e_j`` (per node, per fibre coordinate).
    """
    grid, m = op.grid, op.m
    region = region_all(grid) if region is None else region
    region.require_nonempty()
    pos = region.positions
    bd = op.dofs(op.boundary)
    col_dofs = (pos[:, None] * m + np.arange(m)[None, :]).ravel()
    lu = op.factorization()
    rhs = -(op.L_IB[:, col_dofs]).toarray()
    uI = lu.solve(np.ascontiguousarray(rhs))
    if not np.all(np.isfinite(uI)):
        raise SingularSystemError("non-finite DN column")
    N = _normal_stencil(grid, op.metric, op.conn)
    Nr = N[col_dofs]
    Lam = Nr[:, op.dofs(op.interior)] @ uI + Nr[:, bd[col_dofs]].toarray()
    return DNMatrix(np.asarray(Lam), region, m, scenario_hash)


def dn_discrepancy(a: DNMatrix, b: DNMatrix) -> float:
    """``||a - b||_2 / ||a||_2``.

    Raises
    ------
    ValueError
        If shapes or Gamma differ.
    """
    if a.shape != b.shape or not np.array_equal(a.nodes, b.nodes):
        raise ValueError(f"DN matrices have different shapes or regions: {a.shape} vs {b.shape}")
    na = np.linalg.norm(a.matrix, 2)
    if na == 0:
        return float(np.linalg.norm(b.matrix, 2))
    return float(np.linalg.norm(a.matrix - b.matrix, 2) / na)


def boundary_pairing(grid: ChartGrid, f: np.ndarray, g: np.ndarray) -> complex:
    """``sum_b conj(g_b) . f_b`` over flattened boundary dofs (unweighted)."""
    return complex(np.vdot(np.ravel(g), np.ravel(f)))
