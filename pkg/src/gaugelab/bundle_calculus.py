"""Matrix-valued field calculus on the trivial bundle ``M x C^m``.

Fields carry a leading grid shape ``(n1, n2)``.  A connection is stored twice:

* node samples ``A[k, i, j]`` of the components ``A_k`` (shape ``(2, n1, n2, m, m)``),
  used by the pointwise formulas (curvature, pullback, transport);
* edge links ``U_e`` with ``U_e ~ I + h A`` the transport from the head of an
  edge back to its tail, used by the staggered covariant derivative and the
  connection Laplacian.

Links are derived from the node samples by integrating the transport ODE
along each edge, unless they were produced by a gauge action, which acts on
them exactly: ``U' = F_tail^{-1} U F_head``.  This makes the discrete
Laplacian, hence the discrete DN map, exactly gauge covariant while the node
formulas stay second-order accurate.

Derivatives are centred second-order differences, one-sided second-order on
non-periodic boundaries.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np
import scipy.linalg

from .geometry import ChartGrid, Curve, GeometryError, MetricField

__all__ = [
    "FieldError",
    "SingularGaugeError",
    "ConnectionField",
    "PotentialField",
    "GaugeField",
    "TwoFormField",
    "SectionField",
    "OneFormField",
    "TransportMatrix",
    "partial",
    "edge_links",
    "curvature",
    "gauge_pullback",
    "covariant_derivative",
    "codifferential",
    "ym_residual",
    "cell_curvature",
    "cell_average",
    "temporal_gauge",
    "parallel_transport",
    "interpolate",
    "skew_part",
    "connection_preset",
    "zero_connection",
    "random_unitary_gauge",
    "bump",
]


class FieldError(ValueError):
    """Shape or flag inconsistency in a field."""


class SingularGaugeError(ArithmeticError):
    """Gauge not invertible at some node."""


def _herm(a: np.ndarray) -> np.ndarray:
    return np.conj(np.swapaxes(a, -1, -2))


def skew_part(a: np.ndarray) -> np.ndarray:
    """Projection onto skew-Hermitian matrices."""
    return 0.5 * (a - _herm(a))


# ---------------------------------------------------------------------------
# field types


@dataclass(frozen=True, eq=False)
class ConnectionField:
    """Connection ``A = A_1 dx^1 + A_2 dx^2`` on the trivial rank-m bundle.

    Attributes
    ----------
    A : ndarray, shape (2, n1, n2, m, m), complex
    unitary : bool
        Components are skew-Hermitian.
    links : tuple of (U1, U2, U1inv, U2inv) or None
        Optional edge links; derived from ``A`` on demand when absent.
    """

    A: np.ndarray = field(repr=False)
    unitary: bool = True
    links: Optional[Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]] = field(default=None, repr=False)
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        A = np.asarray(self.A, dtype=complex)
        if A.ndim != 5 or A.shape[0] != 2 or A.shape[-1] != A.shape[-2] or A.shape[-1] < 1:
            raise FieldError(f"connection array must have shape (2, n1, n2, m, m), got {A.shape}")
        object.__setattr__(self, "A", A)
        if self.unitary:
            dev = np.abs(A + _herm(A)).max()
            if dev > 1e-12 * np.abs(A).max() + 1e-14:
                raise FieldError(f"unitary connection has non-skew-Hermitian components (deviation {dev:.2e})")

    @property
    def m(self) -> int:
        return self.A.shape[-1]

    @property
    def shape(self) -> Tuple[int, int]:
        return self.A.shape[1:3]


@dataclass(frozen=True, eq=False)
class PotentialField:
    """Per-node m x m potential ``Q``."""

    Q: np.ndarray = field(repr=False)
    hermitian: bool = True

    def __post_init__(self):
        Q = np.asarray(self.Q, dtype=complex)
        if Q.ndim != 4 or Q.shape[-1] != Q.shape[-2]:
            raise FieldError(f"potential array must have shape (n1, n2, m, m), got {Q.shape}")
        object.__setattr__(self, "Q", Q)
        if self.hermitian and np.abs(Q - _herm(Q)).max() > 1e-12 * (1 + np.abs(Q).max()):
            raise FieldError("hermitian potential is not Hermitian")

    @property
    def m(self) -> int:
        return self.Q.shape[-1]

    @classmethod
    def zero(cls, grid: ChartGrid, m: int) -> "PotentialField":
        return cls(np.zeros(grid.shape + (m, m), dtype=complex))


@dataclass(frozen=True, eq=False)
class GaugeField:
    """Per-node m x m automorphism ``F``."""

    F: np.ndarray = field(repr=False)
    unitary: bool = False

    def __post_init__(self):
        F = np.asarray(self.F, dtype=complex)
        if F.ndim != 4 or F.shape[-1] != F.shape[-2]:
            raise FieldError(f"gauge array must have shape (n1, n2, m, m), got {F.shape}")
        object.__setattr__(self, "F", F)
        if self.unitary:
            eye = np.eye(F.shape[-1])
            if np.abs(_herm(F) @ F - eye).max() > 1e-10:
                raise FieldError("unitary gauge is not unitary within 1e-10")

    @property
    def m(self) -> int:
        return self.F.shape[-1]

    def det(self) -> np.ndarray:
        return np.linalg.det(self.F)

    @property
    def margin(self) -> float:
        """Invertibility margin ``min |det F|`` (recomputed on each call)."""
        return float(np.abs(self.det()).min())

    def inverse(self) -> np.ndarray:
        return np.linalg.inv(self.F)

    @classmethod
    def identity(cls, grid: ChartGrid, m: int) -> "GaugeField":
        return cls(np.broadcast_to(np.eye(m, dtype=complex), grid.shape + (m, m)).copy(), unitary=True)


@dataclass(frozen=True, eq=False)
class TwoFormField:
    """Coefficient ``F_12`` of ``dx^1 ^ dx^2``, shape (n1, n2, m, m)."""

    F12: np.ndarray = field(repr=False)


@dataclass(frozen=True, eq=False)
class SectionField:
    """Sections stored as (n1, n2, m, k): k stacked length-m sections."""

    u: np.ndarray = field(repr=False)

    def __post_init__(self):
        u = np.asarray(self.u, dtype=complex)
        if u.ndim == 3:
            u = u[..., None]
        if u.ndim != 4:
            raise FieldError(f"section array must have shape (n1, n2, m[, k]), got {u.shape}")
        object.__setattr__(self, "u", u)

    @property
    def m(self) -> int:
        return self.u.shape[2]

    @property
    def k(self) -> int:
        return self.u.shape[3]

    def flat(self) -> np.ndarray:
        """Node-major dof vector(s) of shape (n1*n2*m, k)."""
        n1, n2, m, k = self.u.shape
        return self.u.reshape(n1 * n2 * m, k)


@dataclass(frozen=True, eq=False)
class OneFormField:
    """Bundle-valued one-form ``(alpha_1, alpha_2)``.

    With ``staggered=False`` both components live on nodes.  With
    ``staggered=True`` component ``k`` lives on the edges in direction ``k``
    and is expressed in the fibre over the tail node; edge arrays have shape
    ``(n1-1, n2, ...)`` and ``(n1, n2 or n2-1, ...)``.
    """

    c1: np.ndarray = field(repr=False)
    c2: np.ndarray = field(repr=False)
    staggered: bool = False

    def components(self) -> Tuple[np.ndarray, np.ndarray]:
        return self.c1, self.c2


@dataclass(frozen=True, eq=False)
class TransportMatrix:
    """Parallel transport from ``start`` to ``end`` along a curve."""

    P: np.ndarray
    start: Tuple[float, float]
    end: Tuple[float, float]

    @property
    def m(self) -> int:
        return self.P.shape[0]

    def unitarity_defect(self) -> float:
        return float(np.linalg.norm(self.P.conj().T @ self.P - np.eye(self.m), 2))


# ---------------------------------------------------------------------------
# differences


def partial(grid: ChartGrid, f: np.ndarray, axis: int) -> np.ndarray:
    """Second-order difference of ``f`` along grid axis 0 (x^1) or 1 (x^2)."""
    h = grid.h1 if axis == 0 else grid.h2
    f = np.asarray(f)
    if axis == 1 and grid.periodic:
        return (np.roll(f, -1, axis=1) - np.roll(f, 1, axis=1)) / (2 * h)
    out = np.empty(np.broadcast_shapes(f.shape), dtype=np.result_type(f, float))
    sl = lambda a, b: tuple([slice(None)] * axis + [slice(a, b)])  # noqa: E731
    out[sl(1, -1)] = (f[sl(2, None)] - f[sl(None, -2)]) / (2 * h)
    out[sl(0, 1)] = (-3 * f[sl(0, 1)] + 4 * f[sl(1, 2)] - f[sl(2, 3)]) / (2 * h)
    out[sl(-1, None)] = (3 * f[sl(-1, None)] - 4 * f[sl(-2, -1)] + f[sl(-3, -2)]) / (2 * h)
    return out


def _check_grid(grid: ChartGrid, shape) -> None:
    if tuple(shape[:2]) != grid.shape:
        raise FieldError(f"field grid shape {tuple(shape[:2])} does not match grid {grid.shape}")


# ---------------------------------------------------------------------------
# edge links


def _rk4_link(Aa: np.ndarray, Ab: np.ndarray, h: float, substeps: int) -> np.ndarray:
    """Solve dP/ds = -h A(s) P on [0,1], A linear from Aa to Ab (batched)."""
    m = Aa.shape[-1]
    P = np.broadcast_to(np.eye(m, dtype=complex), Aa.shape).copy()
    ds = 1.0 / substeps
    A_at = lambda s: (1 - s) * Aa + s * Ab  # noqa: E731
    for n in range(substeps):
        s0 = n * ds
        M0, Mh, M1 = -h * A_at(s0), -h * A_at(s0 + ds / 2), -h * A_at(s0 + ds)
        k1 = M0 @ P
        k2 = Mh @ (P + 0.5 * ds * k1)
        k3 = Mh @ (P + 0.5 * ds * k2)
        k4 = M1 @ (P + ds * k3)
        P = P + ds / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return P


def _polar_unitary(P: np.ndarray) -> np.ndarray:
    u, _, vh = np.linalg.svd(P)
    return u @ vh


def edge_links(grid: ChartGrid, conn: ConnectionField, substeps: int = 4):
    """Edge links ``(U1, U2, U1inv, U2inv)``.

    ``U1[i, j]`` maps the fibre at node ``(i+1, j)`` to ``(i, j)``;
    ``U2[i, j]`` maps ``(i, j+1)`` (cyclically on the annulus) to ``(i, j)``.
    For unitary connections the links are projected onto U(m) and the
    inverses are adjoints.
    """
    _check_grid(grid, conn.shape)
    if conn.links is not None:
        return conn.links
    key = (grid.topology, grid.n1, grid.n2, substeps)
    if key in conn._cache:
        return conn._cache[key]
    A1, A2 = conn.A[0], conn.A[1]
    # head -> tail transport P solves dP/ds = +h A(head -> tail) P ; inverse is tail -> head
    fwd1 = _rk4_link(A1[:-1], A1[1:], grid.h1, substeps)
    if grid.periodic:
        A2b = np.roll(A2, -1, axis=1)
        fwd2 = _rk4_link(A2, A2b, grid.h2, substeps)
    else:
        fwd2 = _rk4_link(A2[:, :-1], A2[:, 1:], grid.h2, substeps)
    # fwd: tail -> head transport; U = head -> tail = fwd^{-1}
    if conn.unitary:
        fwd1, fwd2 = _polar_unitary(fwd1), _polar_unitary(fwd2)
        out = (_herm(fwd1), _herm(fwd2), fwd1, fwd2)
    else:
        out = (np.linalg.inv(fwd1), np.linalg.inv(fwd2), fwd1, fwd2)
    conn._cache[key] = out
    return out


# ---------------------------------------------------------------------------
# curvature and gauge action


def curvature(grid: ChartGrid, conn: ConnectionField) -> TwoFormField:
    """``F_12 = d_1 A_2 - d_2 A_1 + [A_1, A_2]``."""
    _check_grid(grid, conn.shape)
    A1, A2 = conn.A
    F = partial(grid, A2, 0) - partial(grid, A1, 1) + A1 @ A2 - A2 @ A1
    return TwoFormField(F)


def gauge_pullback(grid: ChartGrid, gauge: GaugeField, conn: ConnectionField) -> ConnectionField:
    """``F^*A = F^{-1} dF + F^{-1} A F`` on nodes; links act exactly.

    Raises
    ------
    SingularGaugeError
        If ``det F`` vanishes at some node.
    """
    _check_grid(grid, gauge.F.shape)
    if gauge.m != conn.m:
        raise FieldError(f"gauge rank {gauge.m} does not match connection rank {conn.m}")
    d = np.abs(gauge.det())
    node = int(np.argmin(d.ravel()))
    if not np.isfinite(d).all() or d.ravel()[node] <= 1e-300 or np.linalg.cond(gauge.F.reshape(-1, gauge.m, gauge.m)).max() > 1e14:
        raise SingularGaugeError(f"gauge is singular; minimal |det F| = {d.ravel()[node]:.3e} at node {node}")
    F = gauge.F
    Finv = np.linalg.inv(F)
    A1 = Finv @ partial(grid, F, 0) + Finv @ conn.A[0] @ F
    A2 = Finv @ partial(grid, F, 1) + Finv @ conn.A[1] @ F
    unitary = bool(gauge.unitary and conn.unitary)
    A = np.stack([A1, A2])
    if unitary:
        A = skew_part(A)
    U1, U2, V1, V2 = edge_links(grid, conn)
    if grid.periodic:
        F2h, F2hinv = np.roll(F, -1, axis=1), np.roll(Finv, -1, axis=1)
        F2t, F2tinv = F, Finv
    else:
        F2h, F2hinv, F2t, F2tinv = F[:, 1:], Finv[:, 1:], F[:, :-1], Finv[:, :-1]
    links = (
        Finv[:-1] @ U1 @ F[1:],
        F2tinv @ U2 @ F2h,
        Finv[1:] @ V1 @ F[:-1],
        F2hinv @ V2 @ F2t,
    )
    return ConnectionField(A, unitary=unitary, links=links)


# ---------------------------------------------------------------------------
# covariant derivative and codifferential


def covariant_derivative(
    grid: ChartGrid, conn: ConnectionField, u: SectionField, staggered: bool = False
) -> OneFormField:
    """Components of ``d_A u``.

    ``staggered=False`` gives ``d_i u + A_i u`` on nodes via centred
    differences.  ``staggered=True`` gives the edge values
    ``(U_e u_head - u_tail) / h`` used by the connection Laplacian.
    """
    U = u.u
    _check_grid(grid, U.shape)
    if not staggered:
        return OneFormField(partial(grid, U, 0) + conn.A[0] @ U, partial(grid, U, 1) + conn.A[1] @ U)
    U1, U2, _, _ = edge_links(grid, conn)
    c1 = (U1 @ U[1:] - U[:-1]) / grid.h1
    if grid.periodic:
        c2 = (U2 @ np.roll(U, -1, axis=1) - U) / grid.h2
    else:
        c2 = (U2 @ U[:, 1:] - U[:, :-1]) / grid.h2
    return OneFormField(c1, c2, staggered=True)


def _edge_weights(grid: ChartGrid, metric: MetricField) -> Tuple[np.ndarray, np.ndarray]:
    """``sqrt|g| g^{kk}`` averaged onto the edges in direction k."""
    if not metric.is_diagonal:
        raise GeometryError("staggered operators require a diagonal metric")
    w1 = metric.sqrt_det * metric.g_inv[..., 0, 0]
    w2 = metric.sqrt_det * metric.g_inv[..., 1, 1]
    e1 = 0.5 * (w1[:-1] + w1[1:])
    e2 = 0.5 * (w2 + np.roll(w2, -1, axis=1)) if grid.periodic else 0.5 * (w2[:, :-1] + w2[:, 1:])
    return e1, e2


def codifferential(grid: ChartGrid, metric: MetricField, conn: ConnectionField, alpha: OneFormField) -> np.ndarray:
    """``d_A^* alpha = d^* alpha - g^{nl} A_n alpha_l`` in divergence form.

    ``d^* alpha = -(1/sqrt|g|) d_n(sqrt|g| g^{nl} alpha_l)``.  For a
    staggered one-form the divergence is taken edge-to-node with links, and
    only interior node values are meaningful (missing boundary fluxes count
    as zero).  Returns an array shaped like a section or matrix field.
    """
    sg = metric.sqrt_det
    gi = metric.g_inv
    a1, a2 = alpha.components()
    extra = (slice(None), slice(None)) + (None,) * (a1.ndim - 2)
    if not alpha.staggered:
        flux1 = (sg * gi[..., 0, 0])[extra] * a1 + (sg * gi[..., 0, 1])[extra] * a2
        flux2 = (sg * gi[..., 1, 0])[extra] * a1 + (sg * gi[..., 1, 1])[extra] * a2
        div = partial(grid, flux1, 0) + partial(grid, flux2, 1)
        out = -div / sg[extra]
        for nu in range(2):
            for lam in range(2):
                coef = gi[..., nu, lam][extra]
                if np.any(coef != 0):
                    out = out - coef * (conn.A[nu] @ (a1 if lam == 0 else a2))
        return out
    e1, e2 = _edge_weights(grid, metric)
    _, _, V1, V2 = edge_links(grid, conn)
    ex = lambda w: w[(slice(None), slice(None)) + (None,) * (a1.ndim - 2)]  # noqa: E731
    P1 = ex(e1) * a1
    P2 = ex(e2) * a2
    shape = (grid.n1, grid.n2) + a1.shape[2:]
    acc = np.zeros(shape, dtype=complex)
    acc[:-1] -= P1 / grid.h1
    acc[1:] += (V1 @ P1) / grid.h1
    if grid.periodic:
        acc -= P2 / grid.h2
        acc += np.roll(V2 @ P2, 1, axis=1) / grid.h2
    else:
        acc[:, :-1] -= P2 / grid.h2
        acc[:, 1:] += (V2 @ P2) / grid.h2
    return acc / ex(sg)


def _avg2(grid: ChartGrid, f: np.ndarray) -> np.ndarray:
    return 0.5 * (f + np.roll(f, -1, axis=1)) if grid.periodic else 0.5 * (f[:, 1:] + f[:, :-1])


def _avg2_T(grid: ChartGrid, c: np.ndarray) -> np.ndarray:
    if grid.periodic:
        return 0.5 * (c + np.roll(c, 1, axis=1))
    out = np.zeros((c.shape[0], c.shape[1] + 1) + c.shape[2:], dtype=c.dtype)
    out[:, :-1] += 0.5 * c
    out[:, 1:] += 0.5 * c
    return out


def _diff2(grid: ChartGrid, f: np.ndarray) -> np.ndarray:
    return (np.roll(f, -1, axis=1) - f) if grid.periodic else (f[:, 1:] - f[:, :-1])


def _diff2_T(grid: ChartGrid, c: np.ndarray) -> np.ndarray:
    if grid.periodic:
        return np.roll(c, 1, axis=1) - c
    out = np.zeros((c.shape[0], c.shape[1] + 1) + c.shape[2:], dtype=c.dtype)
    out[:, :-1] -= c
    out[:, 1:] += c
    return out


def _avg1(f):
    return 0.5 * (f[1:] + f[:-1])


def _avg1_T(c):
    out = np.zeros((c.shape[0] + 1,) + c.shape[1:], dtype=c.dtype)
    out[:-1] += 0.5 * c
    out[1:] += 0.5 * c
    return out


def _diff1_T(c):
    out = np.zeros((c.shape[0] + 1,) + c.shape[1:], dtype=c.dtype)
    out[:-1] -= c
    out[1:] += c
    return out


def cell_average(grid: ChartGrid, f: np.ndarray) -> np.ndarray:
    """Average of a node field over the four corners of each cell."""
    return _avg1(_avg2(grid, f))


def cell_curvature(grid: ChartGrid, conn: ConnectionField) -> np.ndarray:
    """Box-scheme curvature at cell centres, shape (n1-1, n_cells2, m, m).

    ``F_c = d_1 A_2 - d_2 A_1 + [A_1, A_2]`` with differences across the cell
    (averaged over its two edges) and corner-averaged ``A``.  This is the
    curvature entering the Yang-Mills energy.
    """
    A1, A2 = conn.A
    d1A2 = (_avg2(grid, A2)[1:] - _avg2(grid, A2)[:-1]) / grid.h1
    d2A1 = _avg1(_diff2(grid, A1)) / grid.h2
    B1, B2 = cell_average(grid, A1), cell_average(grid, A2)
    return d1A2 - d2A1 + B1 @ B2 - B2 @ B1


def _cell_metric_factor(grid: ChartGrid, metric: MetricField) -> np.ndarray:
    return cell_average(grid, metric.sqrt_det * np.linalg.det(metric.g_inv))


def _ym_plain_gradient(grid: ChartGrid, metric: MetricField, conn: ConnectionField):
    """Node arrays ``(P1, P2)`` with ``dE = Re sum_nodes tr(P_k^H dA_k)``."""
    F = cell_curvature(grid, conn)
    c = _cell_metric_factor(grid, metric)
    G = 2 * grid.h1 * grid.h2 * c[..., None, None] * F
    A1, A2 = conn.A
    B1, B2 = cell_average(grid, A1), cell_average(grid, A2)
    avgT = lambda X: _avg2_T(grid, _avg1_T(X))  # noqa: E731
    P2 = _avg2_T(grid, _diff1_T(G)) / grid.h1 + avgT(_herm(B1) @ G - G @ _herm(B1))
    P1 = -_diff2_T(grid, _avg1_T(G)) / grid.h2 + avgT(G @ _herm(B2) - _herm(B2) @ G)
    return P1, P2


def _node_weights(grid: ChartGrid) -> np.ndarray:
    w1 = np.ones(grid.n1)
    w1[[0, -1]] = 0.5
    w2 = np.ones(grid.n2)
    if not grid.periodic:
        w2[[0, -1]] = 0.5
    return np.outer(w1, w2) * grid.h1 * grid.h2


def ym_residual(grid: ChartGrid, metric: MetricField, conn: ConnectionField) -> OneFormField:
    """``D_A^* F_A`` as a node one-form (matrix valued).

    The divergence runs from the cell-centred curvature of
    :func:`cell_curvature` to the nodes, i.e. it is the exact
    Euler-Lagrange expression of the discrete energy: with node weights
    ``w h1 h2 sqrt|g|`` (``w`` the trapezoid weights) the energy gradient in
    the metric pairing is ``2 R``.  Boundary-node values use the cells
    available there; only interior values carry meaning.
    """
    P1, P2 = _ym_plain_gradient(grid, metric, conn)
    if conn.unitary:
        P1, P2 = skew_part(P1), skew_part(P2)
    omega = (_node_weights(grid) * metric.sqrt_det)[..., None, None]
    g = metric.g[..., None, None, :, :]
    R1 = (g[..., 0, 0] * P1 + g[..., 0, 1] * P2) / (2 * omega)
    R2 = (g[..., 1, 0] * P1 + g[..., 1, 1] * P2) / (2 * omega)
    return OneFormField(R1, R2)


# ---------------------------------------------------------------------------
# temporal gauge


def _quintic_ramp(s: np.ndarray) -> np.ndarray:
    """C^2 ramp from 0 at s<=0 to 1 at s>=1."""
    s = np.clip(s, 0.0, 1.0)
    return s ** 3 * (10 - 15 * s + 6 * s ** 2)


def temporal_gauge(
    grid: ChartGrid, conn: ConnectionField, depth: int, sides: Optional[Sequence[str]] = None
) -> GaugeField:
    """Gauge with ``F = Id`` on the chosen sides and vanishing normal component in a collar.

    Along each inward normal grid line ``dF/dt + A_t F = 0`` is integrated
    with the RK4 edge transports (the links), so the pulled-back normal links
    are exactly ``Id`` for ``depth - 1`` cells.  Over the last collar cell
    ``F`` is blended to ``Id`` by ``F exp(-r log F_d)`` with a quintic ramp
    ``r``; ``F = Id`` beyond.  Defaults: both circles on the annulus, the
    ``x1-`` side on the rectangle (collars of adjacent sides would overlap at
    corners).
    """
    n1, n2 = grid.shape
    if depth < 1 or depth > min(n1, n2) / 2:
        raise FieldError(f"collar depth {depth} must be in [1, min(n1, n2)/2]")
    if sides is None:
        sides = ("x1-", "x1+") if grid.topology == "annulus" else ("x1-",)
    m = conn.m
    U1, U2, V1, V2 = edge_links(grid, conn)
    F = np.broadcast_to(np.eye(m, dtype=complex), grid.shape + (m, m)).copy()
    for side in sides:
        if side not in ("x1-", "x1+", "x2-", "x2+") or (grid.periodic and side.startswith("x2")):
            raise FieldError(f"no boundary side {side!r} on the {grid.topology}")
        # steps[s] maps the fibre at inward distance s to distance s+1
        if side == "x1-":
            steps = V1[:depth]
        elif side == "x1+":
            steps = U1[::-1][:depth]
        elif side == "x2-":
            steps = np.swapaxes(V2, 0, 1)[:depth]
        else:
            steps = np.swapaxes(U2, 0, 1)[::-1][:depth]
        L = steps.shape[1]
        line = [np.broadcast_to(np.eye(m, dtype=complex), (L, m, m)).copy()]
        for s in range(depth):
            line.append(steps[s] @ line[-1])
        Fl = np.stack(line)
        logd = np.stack([scipy.linalg.logm(Fl[-1, l]) for l in range(L)])
        r = _quintic_ramp(np.arange(depth + 1) - (depth - 1.0))
        for s in range(depth + 1):
            if r[s] > 0:
                Fl[s] = Fl[s] @ np.stack([scipy.linalg.expm(-r[s] * logd[l]) for l in range(L)])
        if conn.unitary:
            Fl = _polar_unitary(Fl)
        if side == "x1-":
            F[: depth + 1] = Fl @ F[: depth + 1]
        elif side == "x1+":
            F[n1 - 1 - depth :] = Fl[::-1] @ F[n1 - 1 - depth :]
        elif side == "x2-":
            F[:, : depth + 1] = np.swapaxes(Fl, 0, 1) @ F[:, : depth + 1]
        else:
            F[:, n2 - 1 - depth :] = np.swapaxes(Fl[::-1], 0, 1) @ F[:, n2 - 1 - depth :]
    return GaugeField(F, unitary=conn.unitary)


# ---------------------------------------------------------------------------
# parallel transport


def interpolate(grid: ChartGrid, f: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Bilinear interpolation of a node field at chart points (N, 2)."""
    pts = np.asarray(pts, dtype=float)
    s1 = (pts[:, 0] - grid.origin[0]) / grid.h1
    i0 = np.clip(np.floor(s1).astype(int), 0, grid.n1 - 2)
    t1 = s1 - i0
    if grid.periodic:
        s2 = np.mod(pts[:, 1], 2 * np.pi) / grid.h2
        j0 = np.floor(s2).astype(int) % grid.n2
        t2 = s2 - np.floor(s2)
        j1 = (j0 + 1) % grid.n2
    else:
        s2 = (pts[:, 1] - grid.origin[1]) / grid.h2
        j0 = np.clip(np.floor(s2).astype(int), 0, grid.n2 - 2)
        t2 = s2 - j0
        j1 = j0 + 1
    ex = (slice(None),) + (None,) * (f.ndim - 2)
    t1, t2 = t1[ex], t2[ex]
    return (
        (1 - t1) * (1 - t2) * f[i0, j0]
        + t1 * (1 - t2) * f[i0 + 1, j0]
        + (1 - t1) * t2 * f[i0, j1]
        + t1 * t2 * f[i0 + 1, j1]
    )


def _lattice_path(grid: ChartGrid, pts: np.ndarray, tol: float = 1e-9):
    """Node index pairs of a curve whose points are nodes joined by grid edges, else None."""
    idx = []
    for p in pts:
        s1, s2 = grid.fractional_index(p)
        i, j = round(s1), round(s2)
        if abs(s1 - i) > tol or abs(s2 - j) > tol or not 0 <= i < grid.n1:
            return None
        idx.append((int(i), int(j) % grid.n2 if grid.periodic else int(j)))
    for (i0, j0), (i1, j1) in zip(idx[:-1], idx[1:]):
        dj = j1 - j0
        if grid.periodic:
            dj = (dj + grid.n2 // 2) % grid.n2 - grid.n2 // 2
        if abs(i1 - i0) + abs(dj) > 1:
            return None
    return idx


def parallel_transport(
    grid: ChartGrid, conn: ConnectionField, curve: Curve, substeps: int = 1, method: str = "ode"
) -> TransportMatrix:
    """Solve ``dP/dt + A(gamma') P = 0``, ``P(0) = Id`` along a curve.

    ``method="ode"``: one RK4 step per curve segment (times ``substeps``)
    with the connection bilinearly interpolated, each step projected back onto
    U(m) (polar factor) for unitary connections.  ``method="links"``: product
    of edge links along a curve made of grid edges, so that a gauge action
    ``U' = F_tail^{-1} U F_head`` gives ``P' = F(end)^{-1} P F(start)``
    exactly.  ``method="auto"`` uses links when the curve allows it.
    Composition follows the ODE: ``P(gamma1 . gamma2) = P(gamma2) P(gamma1)``.
    """
    if method not in ("ode", "links", "auto"):
        raise FieldError(f"unknown transport method {method!r}")
    pts = curve.points
    if method != "ode":
        path = _lattice_path(grid, pts)
        if path is None and method == "links":
            raise FieldError("curve is not a path of grid edges; use method='ode'")
        if path is not None:
            U1, U2, V1, V2 = edge_links(grid, conn)
            P = np.eye(conn.m, dtype=complex)
            for (i0, j0), (i1, j1) in zip(path[:-1], path[1:]):
                if i1 == i0 + 1:
                    T = V1[i0, j0]
                elif i1 == i0 - 1:
                    T = U1[i1, j0]
                elif j1 == j0 and i1 == i0:
                    continue
                elif j1 == (j0 + 1) % grid.n2 if grid.periodic else j1 == j0 + 1:
                    T = V2[i0, j0]
                else:
                    T = U2[i0, j1]
                P = T @ P
            return TransportMatrix(P, tuple(pts[0]), tuple(pts[-1]))
    m = conn.m
    # time-stepping points: segment endpoints and midpoints (substeps per segment)
    q = [pts[0]]
    for a, b in zip(pts[:-1], pts[1:]):
        for s in range(1, 2 * substeps + 1):
            q.append(a + (b - a) * s / (2 * substeps))
    q = np.asarray(q)
    Aq = np.stack([interpolate(grid, conn.A[0], q), interpolate(grid, conn.A[1], q)])
    P = np.eye(m, dtype=complex)
    nseg = len(pts) - 1
    for s in range(nseg):
        a, b = pts[s], pts[s + 1]
        vel = (b - a) / substeps  # d gamma / d tau over a unit sub-step
        for k in range(substeps):
            base = 2 * (s * substeps + k)
            M = [-(vel[0] * Aq[0, base + r] + vel[1] * Aq[1, base + r]) for r in range(3)]
            k1 = M[0] @ P
            k2 = M[1] @ (P + 0.5 * k1)
            k3 = M[1] @ (P + 0.5 * k2)
            k4 = M[2] @ (P + k3)
            P = P + (k1 + 2 * k2 + 2 * k3 + k4) / 6
            if conn.unitary:
                # RK4 drifts off U(m) at O(step^5); the polar factor removes the drift
                P = _polar_unitary(P)
    return TransportMatrix(P, tuple(pts[0]), tuple(pts[-1]))


# ---------------------------------------------------------------------------
# presets and generators


def zero_connection(grid: ChartGrid, m: int) -> ConnectionField:
    return ConnectionField(np.zeros((2,) + grid.shape + (m, m), dtype=complex))


def bump(grid: ChartGrid, center=(0.5, 0.5), radius: float = 0.3) -> np.ndarray:
    """Smooth compactly supported bump ``exp(1 - 1/(1 - r^2))`` in chart units."""
    X1, X2 = grid.coords()
    d2 = X2 - center[1]
    if grid.periodic:
        d2 = np.angle(np.exp(1j * d2)) / (2 * np.pi)
    r2 = ((X1 - center[0]) ** 2 + d2 ** 2) / radius ** 2
    out = np.zeros(grid.shape)
    inside = r2 < 1
    out[inside] = np.exp(1 - 1 / (1 - r2[inside]))
    return out


def _random_hermitian(rng: np.random.Generator, m: int) -> np.ndarray:
    X = rng.normal(size=(m, m)) + 1j * rng.normal(size=(m, m))
    return 0.5 * (X + X.conj().T)


def random_unitary_gauge(
    grid: ChartGrid, m: int, seed: int, amplitude: float = 1.0, center=(0.5, 0.5), radius: float = 0.3, modes: int = 2
) -> GaugeField:
    """Unitary ``H = exp(i Phi)`` with Phi a smooth Hermitian field supported in a disc.

    ``H = Id`` outside the disc (in particular on and near the boundary when
    the disc is interior).
    """
    rng = np.random.default_rng(seed)
    X1, X2 = grid.coords()
    b = bump(grid, center, radius)
    Phi = np.zeros(grid.shape + (m, m), dtype=complex)
    for k1 in range(modes):
        for k2 in range(modes):
            H = _random_hermitian(rng, m)
            ph = rng.uniform(0, 2 * np.pi)
            wave = np.cos(np.pi * (k1 * X1 + k2 * X2) + ph)
            Phi += (amplitude / modes) * (b * wave)[..., None, None] * H
    w, V = np.linalg.eigh(Phi)
    F = V @ (np.exp(1j * w)[..., None] * _herm(V))
    return GaugeField(F, unitary=True)


def _random_smooth_connection(grid: ChartGrid, m: int, seed: int, amplitude: float, modes: int = 3) -> np.ndarray:
    rng = np.random.default_rng(seed)
    X1, X2 = grid.coords()
    A = np.zeros((2,) + grid.shape + (m, m), dtype=complex)
    for comp in range(2):
        for k1 in range(modes):
            for k2 in range(modes):
                H = _random_hermitian(rng, m)
                ph = rng.uniform(0, 2 * np.pi)
                if grid.periodic:
                    wave = np.cos(np.pi * k1 * X1 + k2 * X2 + ph)
                else:
                    wave = np.cos(np.pi * (k1 * X1 + k2 * X2) + ph)
                A[comp] += (amplitude / (1 + k1 * k1 + k2 * k2)) * 1j * wave[..., None, None] * H
    return A


def connection_preset(grid: ChartGrid, m: int, spec: str) -> ConnectionField:
    """Connection from a preset name.

    ``zero``; ``flat-annulus:alpha`` (``i alpha diag(1..m) dx^2``);
    ``constant-curvature:c`` (``A = (0, i c x^1) Id``, so ``F_12 = i c``);
    ``random-smooth:seed,amplitude`` (band-limited skew-Hermitian field);
    ``constant:a1,a2`` (``A = (i a1, i a2) Id``, flat).
    """
    spec = spec.strip()
    shape = (2,) + grid.shape + (m, m)
    if spec == "zero":
        return zero_connection(grid, m)
    name, _, arg = spec.partition(":")
    try:
        if name == "flat-annulus":
            alpha = float(arg)
            A = np.zeros(shape, dtype=complex)
            A[1] = 1j * alpha * np.diag(np.arange(1, m + 1)).astype(complex)
            return ConnectionField(A)
        if name == "constant-curvature":
            c = float(arg)
            X1, _ = grid.coords()
            A = np.zeros(shape, dtype=complex)
            A[1] = (1j * c * X1)[..., None, None] * np.eye(m)
            return ConnectionField(A)
        if name == "constant":
            a1, a2 = (float(t) for t in arg.split(","))
            A = np.zeros(shape, dtype=complex)
            A[0] = 1j * a1 * np.eye(m)
            A[1] = 1j * a2 * np.eye(m)
            return ConnectionField(A)
        if name == "random-smooth":
            s, amp = arg.split(",")
            return ConnectionField(_random_smooth_connection(grid, m, int(s), float(amp)))
    except ValueError as exc:
        raise FieldError(f"bad connection preset {spec!r}: {exc}") from None
    raise FieldError(f"unknown connection preset {spec!r}")
